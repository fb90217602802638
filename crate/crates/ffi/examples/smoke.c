#include <stdio.h>
#include "sdid.h"

int main(void) {
    SdidModel *m = NULL;
    if (sdid_model_new_desk(0, &m) != SDID_STATUS_OK) {
        fprintf(stderr, "%s\n", sdid_last_error());
        return 1;
    }
    SdidModelInfo info;
    sdid_model_info(m, &info);
    float in[32 * 32], out[32 * 32];
    for (int i = 0; i < 32 * 32; i++) in[i] = (float)(i % 7) / 7.0f;
    SdidStatus s = sdid_denoise(m, in, 1, 32, 32, 1, out);
    if (s != SDID_STATUS_OK) {
        fprintf(stderr, "denoise: %s\n", sdid_last_error());
        sdid_model_free(m);
        return 1;
    }
    printf("sdid %s, %zu params, out[0]=%f\n", sdid_version(), info.param_count, out[0]);
    s = sdid_denoise(m, in, 1, 24, 24, 1, out);
    printf("24x24 -> status %d: %s\n", s, sdid_last_error());
    sdid_model_free(m);
    return 0;
}
