use std::ffi::{CStr, CString};
use std::ptr;

use sdid_ffi::*;

fn desk(seed: u64) -> *mut SdidModel {
    let mut m = ptr::null_mut();
    assert_eq!(unsafe { sdid_model_new_desk(seed, &mut m) }, SdidStatus::Ok);
    assert!(!m.is_null());
    m
}

fn last_error() -> String {
    let p = sdid_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn image(side: usize) -> Vec<f32> {
    (0..side * side)
        .map(|i| ((i * 37) % 101) as f32 / 100.0)
        .collect()
}

#[test]
fn info_matches_the_desk_preset() {
    let m = desk(0);
    let mut info = SdidModelInfo::default();
    assert_eq!(unsafe { sdid_model_info(m, &mut info) }, SdidStatus::Ok);
    assert_eq!(
        info,
        SdidModelInfo {
            in_channels: 1,
            size_multiple: 16,
            style_dim: 64,
            param_count: 664_417,
        }
    );
    assert!(sdid_last_error().is_null());
    unsafe { sdid_model_free(m) };
}

#[test]
fn denoise_is_deterministic_per_seed() {
    let m = desk(1);
    let x = image(32);
    let run = |seed| {
        let mut out = vec![0f32; x.len()];
        let s = unsafe { sdid_denoise(m, x.as_ptr(), 1, 32, 32, seed, out.as_mut_ptr()) };
        assert_eq!(s, SdidStatus::Ok);
        out
    };
    let a = run(5);
    assert_eq!(a, run(5));
    assert!(a.iter().all(|v| v.is_finite()));
    unsafe { sdid_model_free(m) };
}

#[test]
fn explicit_style_roundtrip() {
    let m = desk(2);
    let x = image(16);
    let mut style = vec![0f32; 64];
    let s = unsafe { sdid_extract_style(m, x.as_ptr(), 1, 16, 16, style.as_mut_ptr(), 64) };
    assert_eq!(s, SdidStatus::Ok);
    let mut a = vec![0f32; x.len()];
    let mut b = vec![0f32; x.len()];
    unsafe {
        assert_eq!(
            sdid_denoise_with_style(m, x.as_ptr(), 1, 16, 16, style.as_ptr(), 64, a.as_mut_ptr()),
            SdidStatus::Ok
        );
        assert_eq!(
            sdid_denoise_with_style(m, x.as_ptr(), 1, 16, 16, style.as_ptr(), 64, b.as_mut_ptr()),
            SdidStatus::Ok
        );
        assert_eq!(
            sdid_extract_style(m, x.as_ptr(), 1, 16, 16, style.as_mut_ptr(), 63),
            SdidStatus::Dimension
        );
        sdid_model_free(m);
    }
    assert_eq!(a, b);
}

#[test]
fn autoencode_keeps_the_shape() {
    let m = desk(3);
    let x = image(16);
    let mut out = vec![f32::NAN; x.len()];
    let s = unsafe { sdid_autoencode(m, x.as_ptr(), 1, 16, 16, out.as_mut_ptr()) };
    assert_eq!(s, SdidStatus::Ok);
    assert!(out.iter().all(|v| v.is_finite()));
    unsafe { sdid_model_free(m) };
}

#[test]
fn bad_geometry_and_nulls_are_reported() {
    let m = desk(4);
    let x = image(24);
    let mut out = vec![0f32; x.len()];
    unsafe {
        assert_eq!(
            sdid_denoise(m, x.as_ptr(), 1, 24, 24, 0, out.as_mut_ptr()),
            SdidStatus::Dimension
        );
        assert!(last_error().contains("multiple of 16"));
        assert_eq!(
            sdid_denoise(m, x.as_ptr(), 3, 8, 8, 0, out.as_mut_ptr()),
            SdidStatus::Dimension
        );
        assert_eq!(
            sdid_denoise(ptr::null(), x.as_ptr(), 1, 16, 16, 0, out.as_mut_ptr()),
            SdidStatus::NullPointer
        );
        assert_eq!(
            sdid_denoise(m, ptr::null(), 1, 16, 16, 0, out.as_mut_ptr()),
            SdidStatus::NullPointer
        );
        assert_eq!(
            sdid_denoise(m, x.as_ptr(), 1, 16, 16, 0, ptr::null_mut()),
            SdidStatus::NullPointer
        );
        assert_eq!(sdid_model_info(m, ptr::null_mut()), SdidStatus::NullPointer);
        sdid_model_free(m);
        sdid_model_free(ptr::null_mut());
    }
}

#[test]
fn loading_a_missing_checkpoint_fails_cleanly() {
    let path = CString::new("/nonexistent/model.sdid").unwrap();
    let mut m = ptr::null_mut();
    let s = unsafe { sdid_model_load(path.as_ptr(), &mut m) };
    assert_eq!(s, SdidStatus::Io);
    assert!(m.is_null());
    assert!(last_error().contains("model.sdid"));
    assert_eq!(
        unsafe { sdid_model_load(ptr::null(), &mut m) },
        SdidStatus::NullPointer
    );
}

#[test]
fn psnr_of_a_constant_offset() {
    let a = vec![0f32; 64];
    let b = vec![0.1f32; 64];
    let mut p = 0.0;
    assert_eq!(
        unsafe { sdid_psnr(a.as_ptr(), b.as_ptr(), 64, 1.0, &mut p) },
        SdidStatus::Ok
    );
    // 0.1 in f32 is not exact; compare against the f32 value's own PSNR
    let mse = (0.1f32 as f64).powi(2);
    assert!((p - 10.0 * (1.0 / mse).log10()).abs() < 1e-9, "{p}");
}

#[test]
fn version_matches_the_crate() {
    let v = unsafe { CStr::from_ptr(sdid_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn header_declares_the_api() {
    let h =
        std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/sdid.h")).unwrap();
    for name in [
        "sdid_model_load",
        "sdid_model_free",
        "sdid_denoise",
        "sdid_denoise_with_style",
        "sdid_extract_style",
        "sdid_last_error",
        "SDID_STATUS_DIMENSION",
        "typedef struct SdidModel SdidModel",
    ] {
        assert!(h.contains(name), "{name} missing from header");
    }
}
