//! Finite-difference verification of analytic gradients.

use super::{Dd, Rng, Scalar, Tape, Tensor, Var};
use crate::error::Result;

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Coordinates probed per tensor; smaller tensors are checked exhaustively.
pub const MAX_COORDS_PER_TENSOR: usize = 64;

#[derive(Clone, Debug, PartialEq)]
pub struct GradReport {
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub pass: bool,
    /// `(tensor, flat index)` of the worst coordinate.
    pub worst: Option<(usize, usize)>,
    /// Coordinates re-differenced in double-double arithmetic.
    pub refined: usize,
    /// Coordinates within a step of a kink (relu, |·|), judged by one-sided
    /// differences instead.
    pub kinks: usize,
}

/// Numerical derivative of one coordinate.
#[derive(Clone, Copy, Debug)]
struct Probe {
    numeric: f64,
    refined: bool,
    kink: bool,
}

impl Probe {
    fn plain(numeric: f64) -> Self {
        Probe {
            numeric,
            refined: false,
            kink: false,
        }
    }
}

/// Which coordinates get a finite-difference probe.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Coords {
    /// Up to `n` per tensor, all of them for smaller tensors.
    PerTensor(usize),
    /// `n` in total, drawn uniformly over the concatenated parameters, plus
    /// one per tensor so none is skipped.
    Pooled(usize),
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub tol: f64,
    pub step: f64,
    pub coords: Coords,
    pub seed: u64,
    /// Multiplies the analytic gradient inside the backward pass (negative control).
    pub corrupt_backward: Option<f64>,
}

impl GradCheckOptions {
    pub fn with_tol(tol: f64) -> Self {
        GradCheckOptions {
            tol,
            step: FD_STEP,
            coords: Coords::PerTensor(MAX_COORDS_PER_TENSOR),
            seed: 0,
            corrupt_backward: None,
        }
    }
}

pub fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / 1e-8f64.max(analytic.abs()).max(numeric.abs())
}

/// A scalar function of parameters that can be evaluated at any precision.
pub trait Objective {
    fn eval<'t, T: Scalar>(&self, tape: &'t Tape<T>, params: &[Var<'t, T>]) -> Result<Var<'t, T>>;
}

/// Compare the tape's gradients of scalar `f` with central differences.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], tol: f64) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    grad_check_with(f, params, &GradCheckOptions::with_tol(tol))
}

pub fn grad_check_with<F>(
    f: F,
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradReport>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let analytic = analytic_grads(&f, params, opts)?;
    let mut work = params.to_vec();
    probe_coords(params, &analytic, opts, |t, i, delta| {
        let orig = work[t].data()[i];
        work[t].data_mut()[i] = orig + delta;
        let tape = Tape::new();
        let vars: Vec<_> = work.iter().map(|p| tape.constant(p.clone())).collect();
        let v = f(&tape, &vars).map(|l| l.item());
        work[t].data_mut()[i] = orig;
        v
    })
}

/// Like [`grad_check_with`] for an [`Objective`], with an escalating oracle.
///
/// Each coordinate is first differenced in `f64`. One that does not agree to
/// a tenth of the tolerance is differenced again, with the same step, in
/// double-double arithmetic, where round-off stays far below the tolerance
/// even for gradients many orders smaller than the objective. If that still
/// disagrees, second-order one-sided differences are taken on both sides; when
/// they disagree with each other the step straddles a kink, and the analytic
/// value (a one-sided derivative there) is compared with the nearer side.
/// The analytic gradient is always the `f64` one.
pub fn grad_check_precise<O: Objective>(
    obj: &O,
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<GradReport> {
    let analytic = analytic_grads(&|tape, vars| obj.eval(tape, vars), params, opts)?;
    let h = opts.step;
    let tol = opts.tol;
    let mut plain = params.to_vec();
    let mut wide: Vec<Tensor<Dd>> = params.iter().map(|p| p.cast()).collect();
    let mut diff = |t: usize, i: usize| -> Result<Probe> {
        let a = analytic[t].data()[i];
        let orig = plain[t].data()[i];
        let mut at = |delta: f64| -> Result<f64> {
            plain[t].data_mut()[i] = orig + delta;
            let tape = Tape::new();
            let vars: Vec<_> = plain.iter().map(|p| tape.constant(p.clone())).collect();
            let v = obj.eval(&tape, &vars).map(|l| l.item());
            plain[t].data_mut()[i] = orig;
            v
        };
        let numeric = (at(h)? - at(-h)?) / (2.0 * h);
        if rel_err(a, numeric) <= 0.1 * tol {
            return Ok(Probe::plain(numeric));
        }
        let orig = wide[t].data()[i];
        let mut at = |steps: f64| -> Result<Dd> {
            wide[t].data_mut()[i] = orig + Dd::from_f64(steps * h);
            let tape = Tape::new();
            let vars: Vec<_> = wide.iter().map(|p| tape.constant(p.clone())).collect();
            let v = obj.eval(&tape, &vars).map(|l| l.item());
            wide[t].data_mut()[i] = orig;
            v
        };
        let two_h = Dd::from_f64(2.0 * h);
        let (fp, fm) = (at(1.0)?, at(-1.0)?);
        let central = ((fp - fm) / two_h).to_f64();
        if rel_err(a, central) <= tol {
            return Ok(Probe {
                numeric: central,
                refined: true,
                kink: false,
            });
        }
        let (f0, fp2, fm2) = (at(0.0)?, at(2.0)?, at(-2.0)?);
        let three = Dd::from_f64(3.0);
        let four = Dd::from_f64(4.0);
        let right = ((four * fp - three * f0 - fp2) / two_h).to_f64();
        let left = ((three * f0 - four * fm + fm2) / two_h).to_f64();
        if rel_err(right, left) <= tol {
            return Ok(Probe {
                numeric: central,
                refined: true,
                kink: false,
            });
        }
        let side = if rel_err(a, right) <= rel_err(a, left) {
            right
        } else {
            left
        };
        Ok(Probe {
            numeric: side,
            refined: true,
            kink: true,
        })
    };
    probe_numeric(params, &analytic, opts, &mut diff)
}

fn analytic_grads<F>(
    f: &F,
    params: &[Tensor<f64>],
    opts: &GradCheckOptions,
) -> Result<Vec<Tensor<f64>>>
where
    F: for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>>,
{
    let tape = Tape::new();
    if let Some(k) = opts.corrupt_backward {
        tape.corrupt_backward(k);
    }
    let vars: Vec<_> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&tape, &vars)?;
    tape.backward(loss)?;
    Ok(vars
        .iter()
        .zip(params)
        .map(|(v, p)| tape.grad(*v).unwrap_or_else(|| Tensor::zeros(p.shape())))
        .collect())
}

/// Central differences from an evaluator of `f` with coordinate `(t,i)` shifted by `delta`.
fn probe_coords(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
    mut eval: impl FnMut(usize, usize, f64) -> Result<f64>,
) -> Result<GradReport> {
    let h = opts.step;
    let mut diff = |t: usize, i: usize| -> Result<Probe> {
        Ok(Probe::plain((eval(t, i, h)? - eval(t, i, -h)?) / (2.0 * h)))
    };
    probe_numeric(params, analytic, opts, &mut diff)
}

fn select(params: &[Tensor<f64>], opts: &GradCheckOptions) -> Vec<(usize, usize)> {
    let mut rng = Rng::new(opts.seed);
    match opts.coords {
        Coords::PerTensor(k) => params
            .iter()
            .enumerate()
            .flat_map(|(t, p)| {
                let n = p.len();
                let idx: Vec<usize> = if n <= k {
                    (0..n).collect()
                } else {
                    (0..k).map(|_| rng.below(n)).collect()
                };
                idx.into_iter().map(move |i| (t, i))
            })
            .collect(),
        Coords::Pooled(k) => {
            let mut out: Vec<(usize, usize)> = params
                .iter()
                .enumerate()
                .filter(|(_, p)| !p.is_empty())
                .map(|(t, p)| (t, rng.below(p.len())))
                .collect();
            let total: usize = params.iter().map(|p| p.len()).sum();
            for _ in 0..k.min(total) {
                let mut flat = rng.below(total);
                let t = params
                    .iter()
                    .position(|p| {
                        if flat < p.len() {
                            true
                        } else {
                            flat -= p.len();
                            false
                        }
                    })
                    .expect("flat index inside total");
                out.push((t, flat));
            }
            out
        }
    }
}

fn probe_numeric(
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    opts: &GradCheckOptions,
    diff: &mut dyn FnMut(usize, usize) -> Result<Probe>,
) -> Result<GradReport> {
    let mut report = GradReport {
        max_rel_err: 0.0,
        coords_checked: 0,
        pass: true,
        worst: None,
        refined: 0,
        kinks: 0,
    };
    for (t, i) in select(params, opts) {
        let p = diff(t, i)?;
        let e = rel_err(analytic[t].data()[i], p.numeric);
        if e > report.max_rel_err || report.worst.is_none() {
            report.max_rel_err = report.max_rel_err.max(e);
            report.worst = Some((t, i));
        }
        report.coords_checked += 1;
        report.refined += p.refined as usize;
        report.kinks += p.kink as usize;
    }
    report.pass = report.max_rel_err <= opts.tol;
    Ok(report)
}
