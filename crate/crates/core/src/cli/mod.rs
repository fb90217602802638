//! Command-line surface: dataset builds, training, inference, analysis and
//! verification.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical failure.

mod config;
pub mod verify;

pub use config::{RunConfig, KEYS};

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::analysis::{
    denoise_with_style, extract_style, mix_sweep, psnr, sample_styles, spearman, style_analysis,
    write_feat_csv, write_mix_csv, write_proj_csv, StyleAnalysis,
};
use crate::error::{Error, Result};
use crate::ndgrad::{Rng, Tensor};
use crate::objective::{init_state, restore_state, train, TrainOutput};
use crate::sdidnet::{Checkpoint, Model, StyleKind};
use crate::synthdata::{
    build_dataset, read_archive, read_pnm, write_archive, write_pnm, TrainSample,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 2;
pub const EXIT_NUMERICAL: i32 = 3;

/// Environment variable capping kernel threads.
pub const THREADS_ENV: &str = "SDID_THREADS";

#[derive(Parser, Debug)]
#[command(name = "sdid", version, about = "Style-conditioned image denoiser")]
pub struct Cli {
    /// Flat key = value config file; desk defaults otherwise.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Output file or directory, depending on the command.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a training archive and its validation sibling.
    MakeData,
    /// Train, or resume training, writing checkpoints and metrics.
    Train(TrainArgs),
    /// Denoise one PGM/PPM image.
    Denoise(DenoiseArgs),
    /// Denoise with styles mixed between a noisy and a clean image.
    Mix(MixArgs),
    /// Style-space projection, separation report and feature statistics.
    Analyze(AnalyzeArgs),
    /// Gradient and property suites.
    Verify(VerifyArgs),
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training archive; overrides the config `data` key.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Overrides the config `steps` key.
    #[arg(long)]
    pub steps: Option<u64>,
    /// Continue from a checkpoint written by a previous run.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct DenoiseArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    #[arg(long = "in")]
    pub input: PathBuf,
    /// `sampled` (default) or `from-clean <path>`.
    #[arg(long, num_args = 1..=2, value_names = ["MODE", "PATH"])]
    pub style: Vec<String>,
    /// Clean image for reporting PSNR.
    #[arg(long)]
    pub reference: Option<PathBuf>,
    /// Reflect-pad sizes that are not a multiple of the network's stride, then crop back.
    #[arg(long)]
    pub pad: bool,
}

#[derive(Args, Debug)]
pub struct MixArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Noisy image, then its clean counterpart.
    #[arg(long, num_args = 2, value_names = ["NOISY", "CLEAN"])]
    pub pair: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
    pub lambdas: Vec<f64>,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub ckpt: PathBuf,
    /// Archive of paired images, usually the validation archive.
    #[arg(long)]
    pub data: PathBuf,
    /// Images analyzed per class.
    #[arg(long, default_value_t = 64)]
    pub count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
pub enum Suite {
    Grad,
    Props,
    All,
}

#[derive(Args, Debug)]
pub struct VerifyArgs {
    #[arg(long, value_enum, default_value_t = Suite::All)]
    pub suite: Suite,
    /// Scale analytic gradients by this factor; the suite must then fail.
    #[arg(long, hide = true)]
    pub corrupt_backward: Option<f64>,
}

/// Exit code for an error.
pub fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Numerical(_) => EXIT_NUMERICAL,
        _ => EXIT_USAGE,
    }
}

/// Parse arguments, run the command and return the process exit code.
pub fn run<I, S>(args: I) -> i32
where
    I: IntoIterator<Item = S>,
    S: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    match configure_threads().and_then(|_| dispatch(&cli)) {
        Ok(()) => EXIT_OK,
        Err(e) => {
            eprintln!("error: {e}");
            exit_code(&e)
        }
    }
}

fn configure_threads() -> Result<()> {
    let Ok(v) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = v.trim().parse().ok().filter(|n| *n > 0).ok_or_else(|| {
        Error::Config(format!(
            "{THREADS_ENV} must be a positive integer, got {v:?}"
        ))
    })?;
    // a pool may already exist when called twice in one process
    let _ = rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global();
    Ok(())
}

/// Config file (or desk defaults) with the global overrides applied.
pub fn load_config(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = match &cli.config {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| Error::io(p, e))?;
            RunConfig::parse(&text)?
        }
        None => RunConfig::desk(),
    };
    apply_overrides(&mut cfg, cli);
    Ok(cfg)
}

fn apply_overrides(cfg: &mut RunConfig, cli: &Cli) {
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    if let Some(o) = &cli.out {
        cfg.out = o.clone();
    }
}

fn dispatch(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::MakeData => {
            let mut cfg = load_config(cli)?;
            if let Some(o) = &cli.out {
                cfg.data = o.clone();
            }
            let (n_train, n_val) = make_data(&cfg)?;
            println!(
                "wrote {n_train} training samples to {} and {n_val} validation samples to {}",
                cfg.data.display(),
                val_path(&cfg.data).display()
            );
            Ok(())
        }
        Command::Train(a) => cmd_train(cli, a),
        Command::Denoise(a) => cmd_denoise(cli, a),
        Command::Mix(a) => cmd_mix(cli, a),
        Command::Analyze(a) => cmd_analyze(cli, a),
        Command::Verify(a) => cmd_verify(a),
    }
}

/// The validation archive stored next to a training archive.
pub fn val_path(train: &Path) -> PathBuf {
    train.with_extension("val.sdat")
}

/// Write the training archive at `cfg.data` and validation at [`val_path`].
pub fn make_data(cfg: &RunConfig) -> Result<(usize, usize)> {
    cfg.validate()?;
    let (train, val) = build_dataset(&cfg.data_config(), cfg.seed)?;
    if let Some(dir) = cfg.data.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    write_archive(&cfg.data, &train)?;
    write_archive(&val_path(&cfg.data), &val)?;
    Ok((train.len(), val.len()))
}

/// Training and validation samples of an archive pair, checked against the model.
pub fn load_data(cfg: &RunConfig) -> Result<(Vec<TrainSample>, Vec<TrainSample>)> {
    let train = read_archive(&cfg.data)?;
    let val = read_archive(&val_path(&cfg.data))?;
    for s in train.iter().chain(&val).take(1) {
        let shape = s.clean.shape();
        if shape[0] != cfg.model.in_channels {
            return Err(Error::Config(format!(
                "archive has {} channels, model expects {}",
                shape[0], cfg.model.in_channels
            )));
        }
        if shape[1] < cfg.crop || shape[2] < cfg.crop {
            return Err(Error::Config(format!(
                "archive images {}x{} smaller than crop {}",
                shape[1], shape[2], cfg.crop
            )));
        }
    }
    if train.is_empty() {
        return Err(Error::Config("training archive is empty".into()));
    }
    Ok((train, val))
}

fn cmd_train(cli: &Cli, a: &TrainArgs) -> Result<()> {
    let (mut cfg, resume) = match &a.resume {
        Some(p) => {
            let ck = Checkpoint::load(p)?;
            let mut cfg = RunConfig::parse(ck.config()?)?;
            apply_overrides(&mut cfg, cli);
            (cfg, Some(ck))
        }
        None => (load_config(cli)?, None),
    };
    if let Some(d) = &a.data {
        cfg.data = d.clone();
    }
    if let Some(s) = a.steps {
        cfg.steps = s;
    }
    cfg.validate()?;
    let (data, val) = load_data(&cfg)?;
    let model = Model::<f32>::new(&cfg.model, cfg.seed)?;
    let mut state = match &resume {
        Some(ck) => restore_state(model, ck)?,
        None => init_state(model),
    };
    let text = cfg.render();
    std::fs::create_dir_all(&cfg.out).map_err(|e| Error::io(&cfg.out, e))?;
    let cfg_path = cfg.out.join("config.txt");
    std::fs::write(&cfg_path, &text).map_err(|e| Error::io(&cfg_path, e))?;
    let out = TrainOutput {
        dir: &cfg.out,
        config_text: &text,
    };
    let rows = train(
        &mut state,
        &cfg.train_config(),
        &data,
        &val,
        Some(&out),
        &mut |row, _| println!("{}", row.to_csv()),
    )?;
    if let Some(p) = rows.iter().rev().find_map(|r| r.psnr_val) {
        println!("final validation PSNR {p:.3} dB");
    }
    println!("checkpoint {}", out.last().display());
    Ok(())
}

/// Model and run config stored in a checkpoint.
pub fn load_model(path: &Path) -> Result<(Model<f32>, RunConfig)> {
    let ck = Checkpoint::load(path)?;
    let cfg = RunConfig::parse(ck.config()?)?;
    let mut model = Model::<f32>::new(&cfg.model, 0)?;
    model.load_params(&ck)?;
    Ok((model, cfg))
}

fn reflect(i: isize, n: usize) -> usize {
    if n == 1 {
        return 0;
    }
    let period = 2 * (n as isize - 1);
    let m = i.rem_euclid(period);
    (if m < n as isize { m } else { period - m }) as usize
}

/// Reflect-pad a `[C,H,W]` image on the bottom and right to multiples of `m`.
pub fn reflect_pad(img: &Tensor<f32>, m: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 {
        return Err(Error::dim(format!("image must be [C,H,W], got {s:?}")));
    }
    let (c, h, w) = (s[0], s[1], s[2]);
    let (hp, wp) = (h.div_ceil(m) * m, w.div_ceil(m) * m);
    let mut data = Vec::with_capacity(c * hp * wp);
    for ch in 0..c {
        for i in 0..hp {
            let si = reflect(i as isize, h);
            for j in 0..wp {
                data.push(img.data()[(ch * h + si) * w + reflect(j as isize, w)]);
            }
        }
    }
    Tensor::new(&[c, hp, wp], data)
}

/// Top-left `h×w` of a `[C,H,W]` image.
pub fn crop_to(img: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let s = img.shape();
    if s.len() != 3 || h > s[1] || w > s[2] {
        return Err(Error::dim(format!("cannot crop {s:?} to {h}x{w}")));
    }
    let mut data = Vec::with_capacity(s[0] * h * w);
    for ch in 0..s[0] {
        for i in 0..h {
            let o = (ch * s[1] + i) * s[2];
            data.extend_from_slice(&img.data()[o..o + w]);
        }
    }
    Tensor::new(&[s[0], h, w], data)
}

fn read_for(model: &Model<f32>, path: &Path, pad: bool) -> Result<Tensor<f32>> {
    let img = read_pnm(path)?;
    let s = img.shape();
    if s[0] != model.cfg().in_channels {
        return Err(Error::Config(format!(
            "{} has {} channels, model expects {}",
            path.display(),
            s[0],
            model.cfg().in_channels
        )));
    }
    let m = model.cfg().size_multiple();
    if s[1] % m == 0 && s[2] % m == 0 {
        return Ok(img);
    }
    if !pad {
        return Err(Error::Invalid(format!(
            "{} is {}x{}, not a multiple of {m}; pass --pad to reflect-pad",
            path.display(),
            s[1],
            s[2]
        )));
    }
    reflect_pad(&img, m)
}

fn cmd_denoise(cli: &Cli, a: &DenoiseArgs) -> Result<()> {
    let out = cli
        .out
        .clone()
        .ok_or_else(|| Error::Config("denoise needs --out".into()))?;
    let (model, cfg) = load_model(&a.ckpt)?;
    let seed = cli.seed.unwrap_or(cfg.seed);
    let raw = read_pnm(&a.input)?;
    let (h, w) = (raw.shape()[1], raw.shape()[2]);
    let x = read_for(&model, &a.input, a.pad)?;
    let (style, clean_path) = match a.style.first().map(String::as_str) {
        None | Some("sampled") if a.style.len() <= 1 => (
            sample_styles(&model, 1, &mut Rng::new(seed))?.remove(0),
            None,
        ),
        Some("from-clean") if a.style.len() == 2 => {
            let p = PathBuf::from(&a.style[1]);
            let clean = read_for(&model, &p, a.pad)?;
            (
                extract_style(&model, &clean, StyleKind::NoiseFree)?,
                Some(p),
            )
        }
        _ => {
            return Err(Error::Config(format!(
                "--style expects `sampled` or `from-clean <path>`, got {:?}",
                a.style
            )))
        }
    };
    let y = crop_to(&denoise_with_style(&model, &x, &style)?, h, w)?;
    write_pnm(&out, &y)?;
    println!("wrote {}", out.display());
    if let Some(r) = a.reference.clone().or(clean_path) {
        let reference = read_pnm(&r)?;
        println!(
            "PSNR input {:.3} dB, output {:.3} dB",
            psnr(&raw, &reference, 1.0)?,
            psnr(&y, &reference, 1.0)?
        );
    }
    Ok(())
}

fn cmd_mix(cli: &Cli, a: &MixArgs) -> Result<()> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("mix"));
    let (model, _) = load_model(&a.ckpt)?;
    let x = read_for(&model, &a.pair[0], false)?;
    let y = read_for(&model, &a.pair[1], false)?;
    let (rows, images) = mix_sweep(&model, &x, &y, &a.lambdas)?;
    std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    write_mix_csv(&dir.join("mix_sweep.csv"), &rows)?;
    let ext = if model.cfg().in_channels == 1 {
        "pgm"
    } else {
        "ppm"
    };
    for (i, img) in images.iter().enumerate() {
        write_pnm(&dir.join(format!("mix_{i}.{ext}")), img)?;
    }
    for r in &rows {
        println!(
            "lambda {:.3} cos_sq {:.4} psnr {:.3} ssim {:.4}",
            r.lambda, r.cos_sq, r.psnr, r.ssim
        );
    }
    if rows.len() >= 2 {
        let l: Vec<f64> = rows.iter().map(|r| r.lambda).collect();
        let p: Vec<f64> = rows.iter().map(|r| r.psnr).collect();
        match spearman(&l, &p) {
            Ok(rho) => println!("spearman(lambda, psnr) = {rho:.3}"),
            Err(e) => println!("spearman(lambda, psnr) undefined: {e}"),
        }
    }
    Ok(())
}

/// Run [`style_analysis`] on the first `count` samples and write the report files.
pub fn analyze_to(
    model: &Model<f32>,
    samples: &[TrainSample],
    count: usize,
    seed: u64,
    dir: &Path,
) -> Result<StyleAnalysis> {
    if samples.len() < count {
        return Err(Error::Config(format!(
            "archive has {} samples, {count} requested",
            samples.len()
        )));
    }
    let noisy: Vec<_> = samples[..count].iter().map(|s| s.noisy.clone()).collect();
    let clean: Vec<_> = samples[..count].iter().map(|s| s.clean.clone()).collect();
    let an = style_analysis(model, &noisy, &clean, seed)?;
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_proj_csv(&dir.join("style_proj.csv"), &an.projection)?;
    write_feat_csv(&dir.join("feat_stats.csv"), &an.diffs)?;
    let report = dir.join("report.txt");
    std::fs::write(&report, an.render()).map_err(|e| Error::io(&report, e))?;
    Ok(an)
}

fn cmd_analyze(cli: &Cli, a: &AnalyzeArgs) -> Result<()> {
    let dir = cli.out.clone().unwrap_or_else(|| PathBuf::from("analysis"));
    let (model, cfg) = load_model(&a.ckpt)?;
    let samples = read_archive(&a.data)?;
    let an = analyze_to(
        &model,
        &samples,
        a.count,
        cli.seed.unwrap_or(cfg.seed),
        &dir,
    )?;
    print!("{}", an.render());
    Ok(())
}

fn cmd_verify(a: &VerifyArgs) -> Result<()> {
    let mut lines = Vec::new();
    let mut show = |l: &verify::CheckLine| println!("{}", l.render());
    let t = std::time::Instant::now();
    if matches!(a.suite, Suite::Grad | Suite::All) {
        lines.extend(verify::grad_suite(a.corrupt_backward, &mut show)?);
    }
    if matches!(a.suite, Suite::Props | Suite::All) {
        lines.extend(verify::props_suite(&mut show)?);
    }
    let worst = lines
        .iter()
        .filter_map(|l| l.max_rel_err)
        .fold(0.0, f64::max);
    println!(
        "{}/{} passed, max relative gradient error {worst:.3e}, {:.1}s",
        lines.iter().filter(|l| l.pass).count(),
        lines.len(),
        t.elapsed().as_secs_f64()
    );
    verify::require_all(&lines)
}
