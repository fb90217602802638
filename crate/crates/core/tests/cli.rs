use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::OnceLock;

use sdid::ndgrad::Tensor;
use sdid::synthdata::{read_archive, write_pnm};

const TINY: &str = "\
base_channels = 8
sc_blocks = 2
style_dim = 16
gen_input_dim = 8
gap_dim = 32
batch = 2
crop = 16
steps = 2
val_interval = 2
val_samples = 2
train_count = 6
val_count = 12
image_size = 32
";

fn sdid(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_sdid"))
        .current_dir(dir)
        .env("SDID_THREADS", "1")
        .args(args)
        .output()
        .expect("spawn sdid")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

/// Directory holding `tiny.cfg`, `data.sdat` and a two-step run in `run/`.
fn fixture() -> &'static Path {
    static DIR: OnceLock<tempfile::TempDir> = OnceLock::new();
    DIR.get_or_init(|| {
        let d = tempfile::tempdir().unwrap();
        std::fs::write(d.path().join("tiny.cfg"), TINY).unwrap();
        let o = sdid(
            d.path(),
            &["--config", "tiny.cfg", "--out", "data.sdat", "make-data"],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        let o = sdid(
            d.path(),
            &[
                "--config",
                "tiny.cfg",
                "--out",
                "run",
                "train",
                "--data",
                "data.sdat",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        d
    })
    .path()
}

fn ckpt() -> String {
    fixture().join("run/last.sdid").display().to_string()
}

fn gray(side: usize, seed: u64) -> Tensor<f32> {
    let n = side * side;
    let v = (0..n)
        .map(|i| ((i as u64 * 2654435761 + seed) % 256) as f32 / 255.0)
        .collect();
    Tensor::new(&[1, side, side], v).unwrap()
}

fn tmp_image(dir: &Path, name: &str, side: usize) -> PathBuf {
    let p = dir.join(name);
    write_pnm(&p, &gray(side, 7)).unwrap();
    p
}

#[test]
fn make_data_is_deterministic() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.cfg"), TINY).unwrap();
    for out in ["a.sdat", "b.sdat"] {
        let o = sdid(
            d.path(),
            &["--config", "tiny.cfg", "--out", out, "make-data"],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
        assert!(
            stdout(&o).contains("wrote 6 training samples"),
            "{}",
            stdout(&o)
        );
    }
    let read = |n: &str| std::fs::read(d.path().join(n)).unwrap();
    assert_eq!(read("a.sdat"), read("b.sdat"));
    assert_eq!(read("a.val.sdat"), read("b.val.sdat"));
    assert_eq!(
        read_archive(&d.path().join("a.val.sdat")).unwrap().len(),
        12
    );

    let o = sdid(
        d.path(),
        &[
            "--config",
            "tiny.cfg",
            "--seed",
            "9",
            "--out",
            "c.sdat",
            "make-data",
        ],
    );
    assert_eq!(code(&o), 0);
    assert_ne!(read("a.sdat"), read("c.sdat"));
}

#[test]
fn unknown_config_key_is_a_usage_error() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("bad.cfg"), "steps = 2\nwidth_mult = 3\n").unwrap();
    let o = sdid(d.path(), &["--config", "bad.cfg", "make-data"]);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("width_mult"), "{}", stderr(&o));
}

#[test]
fn usage_errors_exit_two() {
    let d = tempfile::tempdir().unwrap();
    assert_eq!(code(&sdid(d.path(), &["frobnicate"])), 2);
    assert_eq!(
        code(&sdid(d.path(), &["--config", "missing.cfg", "make-data"])),
        2
    );
    let o = sdid(
        d.path(),
        &[
            "denoise",
            "--ckpt",
            "nope.sdid",
            "--in",
            "x.pgm",
            "--out",
            "y.pgm",
        ],
    );
    assert_eq!(code(&o), 2);
    assert_eq!(code(&sdid(d.path(), &["--help"])), 0);
}

#[test]
fn unwritable_output_exits_two() {
    let d = tempfile::tempdir().unwrap();
    std::fs::write(d.path().join("tiny.cfg"), TINY).unwrap();
    std::fs::write(d.path().join("file"), "").unwrap();
    let o = sdid(
        d.path(),
        &[
            "--config",
            "tiny.cfg",
            "--out",
            "file/sub/data.sdat",
            "make-data",
        ],
    );
    assert_eq!(code(&o), 2, "{}", stderr(&o));
}

#[test]
fn training_writes_run_outputs() {
    let run = fixture().join("run");
    for f in ["last.sdid", "metrics.csv", "config.txt"] {
        assert!(run.join(f).exists(), "{f}");
    }
    let csv = std::fs::read_to_string(run.join("metrics.csv")).unwrap();
    assert_eq!(csv.lines().count(), 2);
    let cfg = std::fs::read_to_string(run.join("config.txt")).unwrap();
    assert!(cfg.contains("steps = 2") && cfg.contains("base_channels = 8"));
}

#[test]
fn zero_steps_writes_initial_checkpoint() {
    let d = fixture();
    let o = sdid(
        d,
        &[
            "--config",
            "tiny.cfg",
            "--out",
            "run0",
            "train",
            "--data",
            "data.sdat",
            "--steps",
            "0",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(d.join("run0/last.sdid").exists());
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let d = fixture();
    let o = sdid(
        d,
        &[
            "--out",
            "resumed",
            "train",
            "--resume",
            &ckpt(),
            "--data",
            "data.sdat",
            "--steps",
            "3",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.join("resumed/metrics.csv")).unwrap();
    let steps: Vec<&str> = csv
        .lines()
        .skip(1)
        .map(|l| l.split(',').next().unwrap())
        .collect();
    assert_eq!(steps, ["3"]);
}

#[test]
fn diverging_training_exits_three() {
    let d = fixture();
    std::fs::write(
        d.join("hot.cfg"),
        format!("{TINY}lr_main = 1e30\nclip = 0\nsteps = 20\n"),
    )
    .unwrap();
    let o = sdid(
        d,
        &[
            "--config",
            "hot.cfg",
            "--out",
            "hot",
            "train",
            "--data",
            "data.sdat",
        ],
    );
    assert_eq!(code(&o), 3, "{}\n{}", stdout(&o), stderr(&o));
    assert!(
        stderr(&o).contains("last good checkpoint"),
        "{}",
        stderr(&o)
    );
}

#[test]
fn denoise_is_deterministic_and_needs_divisible_sizes() {
    let d = tempfile::tempdir().unwrap();
    let input = tmp_image(d.path(), "in.pgm", 32);
    let run = |out: &str| {
        sdid(
            d.path(),
            &[
                "--out",
                out,
                "denoise",
                "--ckpt",
                &ckpt(),
                "--in",
                input.to_str().unwrap(),
            ],
        )
    };
    assert_eq!(code(&run("a.pgm")), 0);
    assert_eq!(code(&run("b.pgm")), 0);
    let read = |n: &str| std::fs::read(d.path().join(n)).unwrap();
    assert_eq!(read("a.pgm"), read("b.pgm"));

    let odd = tmp_image(d.path(), "odd.pgm", 20);
    let args = [
        "--out",
        "c.pgm",
        "denoise",
        "--ckpt",
        &ckpt(),
        "--in",
        odd.to_str().unwrap(),
    ];
    let o = sdid(d.path(), &args);
    assert_eq!(code(&o), 2);
    assert!(stderr(&o).contains("--pad"), "{}", stderr(&o));
    let mut padded = args.to_vec();
    padded.push("--pad");
    assert_eq!(code(&sdid(d.path(), &padded)), 0);
    let out = sdid::synthdata::read_pnm(&d.path().join("c.pgm")).unwrap();
    assert_eq!(out.shape(), &[1, 20, 20]);
}

#[test]
fn denoise_from_clean_reports_psnr() {
    let d = tempfile::tempdir().unwrap();
    let x = tmp_image(d.path(), "x.pgm", 32);
    let y = d.path().join("y.pgm");
    write_pnm(&y, &gray(32, 11)).unwrap();
    let o = sdid(
        d.path(),
        &[
            "--out",
            "z.pgm",
            "denoise",
            "--ckpt",
            &ckpt(),
            "--in",
            x.to_str().unwrap(),
            "--style",
            "from-clean",
            y.to_str().unwrap(),
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    assert!(stdout(&o).contains("PSNR input"), "{}", stdout(&o));
    let o = sdid(
        d.path(),
        &[
            "--out",
            "z.pgm",
            "denoise",
            "--ckpt",
            &ckpt(),
            "--in",
            x.to_str().unwrap(),
            "--style",
            "bogus",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn mix_writes_one_row_per_lambda() {
    let d = tempfile::tempdir().unwrap();
    let x = tmp_image(d.path(), "x.pgm", 32);
    let y = d.path().join("y.pgm");
    write_pnm(&y, &gray(32, 3)).unwrap();
    let o = sdid(
        d.path(),
        &[
            "--out",
            "mix",
            "mix",
            "--ckpt",
            &ckpt(),
            "--pair",
            x.to_str().unwrap(),
            y.to_str().unwrap(),
            "--lambdas",
            "0,0.5,1",
        ],
    );
    assert_eq!(code(&o), 0, "{}", stderr(&o));
    let csv = std::fs::read_to_string(d.path().join("mix/mix_sweep.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    assert!(d.path().join("mix/mix_2.pgm").exists());
    assert!(stdout(&o).contains("spearman"));
}

#[test]
fn analyze_is_deterministic() {
    let d = fixture();
    let val = d.join("data.val.sdat").display().to_string();
    for out in ["an1", "an2"] {
        let o = sdid(
            d,
            &[
                "--out",
                out,
                "analyze",
                "--ckpt",
                &ckpt(),
                "--data",
                &val,
                "--count",
                "10",
            ],
        );
        assert_eq!(code(&o), 0, "{}", stderr(&o));
    }
    for f in ["style_proj.csv", "feat_stats.csv", "report.txt"] {
        let a = std::fs::read(d.join("an1").join(f)).unwrap();
        assert_eq!(a, std::fs::read(d.join("an2").join(f)).unwrap(), "{f}");
    }
    let report = std::fs::read_to_string(d.join("an1/report.txt")).unwrap();
    for class in ["noise_free", "noise", "sampled"] {
        assert!(report.contains(class), "{report}");
    }
    let o = sdid(
        d,
        &[
            "--out",
            "an3",
            "analyze",
            "--ckpt",
            &ckpt(),
            "--data",
            &val,
            "--count",
            "13",
        ],
    );
    assert_eq!(code(&o), 2);
}

#[test]
fn verify_props_passes() {
    let d = tempfile::tempdir().unwrap();
    let o = sdid(d.path(), &["verify", "--suite", "props"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("window_partition_roundtrip"));
}

#[test]
fn verify_catches_a_corrupted_backward_pass() {
    let d = tempfile::tempdir().unwrap();
    let o = sdid(
        d.path(),
        &["verify", "--suite", "grad", "--corrupt-backward", "1.01"],
    );
    assert_eq!(code(&o), 3, "{}", stdout(&o));
    assert!(stdout(&o).contains("FAIL"));
}
