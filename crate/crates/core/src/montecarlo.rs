//! Monte-Carlo error functionals of coupled ensembles and their small-time
//! Taylor coefficients.
//!
//! For a companion `Y` of `X` the series are the unnormalised expectations
//! over the event `{t ≤ τ}`:
//!
//! ```text
//! strong   E[|Y_t − X_t|²; t ≤ τ]
//! weak     |E[Y_t − X_t; t ≤ τ]|²
//! proj_ms  E[|Y_t − π(X_t)|²; t ≤ τ]
//! ```
//!
//! Paths are split into contiguous batches; a fitted coefficient's standard
//! error is the spread of the same fit over batch-level series.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::manifold::Manifold;
use crate::sde::{Coefficients, Reflected};
use crate::simulate::{run_ensemble, PathEnsemble, SimConfig, SimError};

pub const DEFAULT_BATCHES: usize = 20;
/// Normal quantile for two-sided 95% intervals.
pub const Z95: f64 = 1.96;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum McError {
    #[error("companion index {0} out of range")]
    Companion(usize),
    #[error("no surviving paths at any positive time")]
    Empty,
    #[error("fit needs at least 5 points in [0, {t_fit}], found {found}")]
    TooFewPoints { t_fit: f64, found: usize },
    #[error("ill-conditioned fit")]
    IllConditioned,
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// One error functional over time with its standard errors and batch-level
/// replicates.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub values: Vec<f64>,
    pub se: Vec<f64>,
    /// `batches[b][k]`: the functional on batch `b` at record `k`.
    pub batches: Vec<Vec<f64>>,
}

impl Series {
    fn truncate(&mut self, len: usize) {
        self.values.truncate(len);
        self.se.truncate(len);
        for b in &mut self.batches {
            b.truncate(len);
        }
    }

    /// Pointwise `a·self + b·other` for independent series.
    pub fn combine(&self, a: f64, other: &Series, b: f64) -> Series {
        let n = self.values.len().min(other.values.len());
        Series {
            values: (0..n)
                .map(|k| a * self.values[k] + b * other.values[k])
                .collect(),
            se: (0..n)
                .map(|k| ((a * self.se[k]).powi(2) + (b * other.se[k]).powi(2)).sqrt())
                .collect(),
            batches: self
                .batches
                .iter()
                .zip(&other.batches)
                .map(|(x, y)| (0..n).map(|k| a * x[k] + b * y[k]).collect())
                .collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErrorSeries {
    pub times: Vec<f64>,
    pub strong: Series,
    pub weak: Series,
    pub proj_ms: Series,
    /// Paths inside their stopping time at each record.
    pub n_eff: Vec<usize>,
    pub strong_conditional: Vec<f64>,
    pub weak_conditional: Vec<f64>,
    pub proj_ms_conditional: Vec<f64>,
}

#[derive(Default, Clone)]
struct Accum {
    n: usize,
    alive: usize,
    strong: f64,
    strong_sq: f64,
    proj: f64,
    proj_sq: f64,
    diff: Vec<f64>,
    diff_outer: Vec<f64>,
}

impl Accum {
    fn new(d: usize) -> Self {
        Self {
            diff: vec![0.0; d],
            diff_outer: vec![0.0; d * d],
            ..Self::default()
        }
    }

    fn add(&mut self, alive: bool, y: &[f64], x: &[f64], pi: &[f64]) {
        self.n += 1;
        if !alive {
            return;
        }
        self.alive += 1;
        let d = x.len();
        let mut s = 0.0;
        let mut q = 0.0;
        for c in 0..d {
            let e = y[c] - x[c];
            s += e * e;
            q += (y[c] - pi[c]).powi(2);
            self.diff[c] += e;
            for c2 in 0..d {
                self.diff_outer[c * d + c2] += e * (y[c2] - x[c2]);
            }
        }
        self.strong += s;
        self.strong_sq += s * s;
        self.proj += q;
        self.proj_sq += q * q;
    }

    fn mean_diff(&self) -> DVector<f64> {
        DVector::from_iterator(self.diff.len(), self.diff.iter().map(|v| v / self.n as f64))
    }
}

fn mean_se(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - nf * mean * mean) / (nf - 1.0)).max(0.0);
    (mean, (var / nf).sqrt())
}

fn batch_bounds(n_paths: usize, n_batches: usize) -> Vec<usize> {
    let b = n_batches.min(n_paths).max(1);
    (0..=b).map(|i| i * n_paths / b).collect()
}

/// Error series of companion `i` against the original.
pub fn error_series(ens: &PathEnsemble, man: &Manifold, i: usize) -> Result<ErrorSeries, McError> {
    error_series_batched(ens, man, i, DEFAULT_BATCHES)
}

pub fn error_series_batched(
    ens: &PathEnsemble,
    man: &Manifold,
    i: usize,
    n_batches: usize,
) -> Result<ErrorSeries, McError> {
    if i >= ens.n_companions() {
        return Err(McError::Companion(i));
    }
    let d = ens.dim;
    let bounds = batch_bounds(ens.n_paths(), n_batches);
    let nb = bounds.len() - 1;
    let mut out = ErrorSeries {
        times: Vec::new(),
        strong: empty_series(nb),
        weak: empty_series(nb),
        proj_ms: empty_series(nb),
        n_eff: Vec::new(),
        strong_conditional: Vec::new(),
        weak_conditional: Vec::new(),
        proj_ms_conditional: Vec::new(),
    };
    let mut pi_buf = vec![0.0; d];
    for k in 0..ens.n_records() {
        let mut total = Accum::new(d);
        let mut per_batch: Vec<Accum> = vec![Accum::new(d); nb];
        for b in 0..nb {
            for p in bounds[b]..bounds[b + 1] {
                let alive = ens.alive(p, i, k);
                let x = ens.x(p, k);
                let y = ens.y(p, i, k);
                let pi: &[f64] = match ens.pi_x(p, k) {
                    Some(v) => v,
                    None => {
                        if alive {
                            let px = man
                                .metric_project(&DVector::from_column_slice(x))
                                .map(|v| v.as_slice().to_vec())
                                .unwrap_or_else(|_| vec![f64::NAN; d]);
                            pi_buf.copy_from_slice(&px);
                        }
                        &pi_buf
                    }
                };
                total.add(alive, y, x, pi);
                per_batch[b].add(alive, y, x, pi);
            }
        }
        if total.alive == 0 && k > 0 {
            break;
        }
        let n = total.n;
        let (strong, strong_se) = mean_se(total.strong, total.strong_sq, n);
        let (proj, proj_se) = mean_se(total.proj, total.proj_sq, n);
        let m = total.mean_diff();
        // Delta method: Var|m|² ≈ 4 mᵀ Cov m / n.
        let nf = n as f64;
        let second = DMatrix::from_row_slice(d, d, &total.diff_outer) / nf;
        let cov = (second - &m * m.transpose()) * (nf / (nf - 1.0).max(1.0));
        let weak = m.norm_squared();
        let weak_se = (4.0 * m.dot(&(&cov * &m)).max(0.0) / nf).sqrt();
        out.times.push(ens.times[k]);
        out.strong.values.push(strong);
        out.strong.se.push(strong_se);
        out.proj_ms.values.push(proj);
        out.proj_ms.se.push(proj_se);
        out.weak.values.push(weak);
        out.weak.se.push(weak_se);
        out.n_eff.push(total.alive);
        let alive = total.alive.max(1) as f64;
        out.strong_conditional.push(total.strong / alive);
        out.proj_ms_conditional.push(total.proj / alive);
        out.weak_conditional
            .push((total.mean_diff() * (nf / alive)).norm_squared());
        for (b, acc) in per_batch.iter().enumerate() {
            let bn = acc.n as f64;
            out.strong.batches[b].push(acc.strong / bn);
            out.proj_ms.batches[b].push(acc.proj / bn);
            out.weak.batches[b].push(weak + 2.0 * m.dot(&(acc.mean_diff() - &m)));
        }
    }
    if out.times.len() < 2 {
        return Err(McError::Empty);
    }
    let len = out.times.len();
    for s in [&mut out.strong, &mut out.weak, &mut out.proj_ms] {
        s.truncate(len);
    }
    Ok(out)
}

fn empty_series(nb: usize) -> Series {
    Series {
        values: Vec::new(),
        se: Vec::new(),
        batches: vec![Vec::new(); nb],
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FitModel {
    /// `a₁ t + a₂ t²`, reporting `a₁`.
    A1Linear,
    /// `c₁ t + c₂ t²`.
    C1Linear,
    /// `b₂ t²`.
    B2Quadratic,
    /// `c₂ t²` when `c₁` is consistent with zero, else `c₁ t + c₂ t²`.
    C2AfterC1,
}

impl FitModel {
    pub fn name(&self) -> &'static str {
        match self {
            FitModel::A1Linear => "a1_linear",
            FitModel::C1Linear => "c1_linear",
            FitModel::B2Quadratic => "b2_quadratic",
            FitModel::C2AfterC1 => "c2_after_c1",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        [
            FitModel::A1Linear,
            FitModel::C1Linear,
            FitModel::B2Quadratic,
            FitModel::C2AfterC1,
        ]
        .into_iter()
        .find(|m| m.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Coefficient {
    pub name: &'static str,
    pub estimate: f64,
    /// Standard error from the batch spread.
    pub se: f64,
    /// `1.96 · se`.
    pub half_width: f64,
    /// Half-width from the textbook least-squares covariance; diagnostic.
    pub ols_half_width: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaylorFit {
    pub model: FitModel,
    pub t_fit: f64,
    pub n_points: usize,
    pub coefficients: Vec<Coefficient>,
    /// Weighted RMS of the residuals in units of the pointwise SE.
    pub residual_rms: f64,
}

impl TaylorFit {
    pub fn get(&self, name: &str) -> Option<&Coefficient> {
        self.coefficients.iter().find(|c| c.name == name)
    }
}

struct Design {
    powers: Vec<i32>,
    names: Vec<&'static str>,
}

/// Weighted least squares through the origin of `values` on `t^powers`.
fn wls(
    t: &[f64],
    values: &[f64],
    w: &[f64],
    powers: &[i32],
) -> Result<(DVector<f64>, DMatrix<f64>), McError> {
    let p = powers.len();
    let mut xtx: DMatrix<f64> = DMatrix::zeros(p, p);
    let mut xty: DVector<f64> = DVector::zeros(p);
    for k in 0..t.len() {
        for a in 0..p {
            let xa = t[k].powi(powers[a]);
            xty[a] += w[k] * xa * values[k];
            for b in 0..p {
                xtx[(a, b)] += w[k] * xa * t[k].powi(powers[b]);
            }
        }
    }
    let inv = xtx.try_inverse().ok_or(McError::IllConditioned)?;
    if inv.iter().any(|v| !v.is_finite()) {
        return Err(McError::IllConditioned);
    }
    Ok((&inv * xty, inv))
}

pub fn fit_taylor(
    times: &[f64],
    series: &Series,
    t_fit: f64,
    model: FitModel,
) -> Result<TaylorFit, McError> {
    if model == FitModel::C2AfterC1 {
        let first = fit_taylor(times, series, t_fit, FitModel::C1Linear)?;
        let c1 = first.get("c1").expect("c1 fitted");
        if c1.estimate.abs() <= 3.0 * c1.half_width {
            let mut fit = fit_design(
                times,
                series,
                t_fit,
                &Design {
                    powers: vec![2],
                    names: vec!["c2"],
                },
            )?;
            fit.model = model;
            return Ok(fit);
        }
        return Ok(TaylorFit { model, ..first });
    }
    let design = match model {
        FitModel::A1Linear => Design {
            powers: vec![1, 2],
            names: vec!["a1", "a2"],
        },
        FitModel::C1Linear | FitModel::C2AfterC1 => Design {
            powers: vec![1, 2],
            names: vec!["c1", "c2"],
        },
        FitModel::B2Quadratic => Design {
            powers: vec![2],
            names: vec!["b2"],
        },
    };
    let mut fit = fit_design(times, series, t_fit, &design)?;
    fit.model = model;
    Ok(fit)
}

fn fit_design(
    times: &[f64],
    series: &Series,
    t_fit: f64,
    design: &Design,
) -> Result<TaylorFit, McError> {
    let idx: Vec<usize> = (0..series.values.len().min(times.len()))
        .filter(|&k| times[k] > 0.0 && times[k] <= t_fit * (1.0 + 1e-9))
        .collect();
    if idx.len() < 5 {
        return Err(McError::TooFewPoints {
            t_fit,
            found: idx.len(),
        });
    }
    let t: Vec<f64> = idx.iter().map(|&k| times[k]).collect();
    let y: Vec<f64> = idx.iter().map(|&k| series.values[k]).collect();
    let var: Vec<f64> = idx.iter().map(|&k| series.se[k].powi(2)).collect();
    let mean_var = var.iter().sum::<f64>() / var.len() as f64;
    // relative weights; equal when there is no noise at all
    let w: Vec<f64> = if mean_var > 0.0 {
        var.iter()
            .map(|v| mean_var / (v + 1e-6 * mean_var))
            .collect()
    } else {
        vec![1.0; var.len()]
    };
    let (beta, inv) = wls(&t, &y, &w, &design.powers)?;

    let p = design.powers.len();
    let mut rss = 0.0;
    for k in 0..t.len() {
        let fitted: f64 = (0..p).map(|a| beta[a] * t[k].powi(design.powers[a])).sum();
        rss += w[k] * (y[k] - fitted).powi(2);
    }
    let dof = (t.len() - p).max(1) as f64;
    let sigma2 = rss / dof;

    let nb = series.batches.len();
    let batch_betas: Vec<DVector<f64>> = series
        .batches
        .iter()
        .map(|b: &Vec<f64>| {
            let yb: Vec<f64> = idx.iter().map(|&k| b[k]).collect();
            wls(&t, &yb, &w, &design.powers).map(|r| r.0)
        })
        .collect::<Result<_, _>>()?;

    let coefficients = (0..p)
        .map(|a| {
            let se = if nb >= 2 {
                let mean = batch_betas.iter().map(|b| b[a]).sum::<f64>() / nb as f64;
                let var = batch_betas
                    .iter()
                    .map(|b| (b[a] - mean).powi(2))
                    .sum::<f64>()
                    / (nb as f64 - 1.0);
                (var / nb as f64).sqrt()
            } else {
                0.0
            };
            Coefficient {
                name: design.names[a],
                estimate: beta[a],
                se,
                half_width: Z95 * se,
                ols_half_width: Z95 * (sigma2 * inv[(a, a)]).max(0.0).sqrt(),
            }
        })
        .collect();
    Ok(TaylorFit {
        model: FitModel::C1Linear,
        t_fit,
        n_points: t.len(),
        coefficients,
        residual_rms: sigma2.sqrt(),
    })
}

/// Index of the first record at or after `t`.
pub fn record_at(times: &[f64], t: f64) -> Option<usize> {
    times.iter().position(|&s| s >= t - 1e-12)
}

/// Salt of the independent driver used for the reflected half.
pub const REFLECTED_SALT: u64 = 0x0052_4546_4c45_4354;

/// Ensemble of the reflected system `(Ξ, Υ)`: every field reversed, driven by
/// the stream family `cfg.salt ^ REFLECTED_SALT`.
pub fn reflected_ensemble(
    original: &dyn Coefficients,
    candidates: &[&dyn Coefficients],
    man: &Manifold,
    y0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<PathEnsemble, McError> {
    let reflected_original = Reflected::new(original);
    let reflected: Vec<Reflected<'_, dyn Coefficients>> =
        candidates.iter().map(|c| Reflected::new(*c)).collect();
    let refs: Vec<&dyn Coefficients> = reflected.iter().map(|r| r as &dyn Coefficients).collect();
    let back_cfg = SimConfig {
        salt: cfg.salt ^ REFLECTED_SALT,
        ..cfg.clone()
    };
    Ok(run_ensemble(
        &reflected_original,
        &refs,
        man,
        y0,
        &back_cfg,
    )?)
}

/// `½ proj_ms` of the forward pair plus `½ proj_ms` of the reflected pair for
/// companion `i`, on their common time grid.
pub fn symmetric_series(
    forward: &PathEnsemble,
    backward: &PathEnsemble,
    man: &Manifold,
    i: usize,
) -> Result<(Vec<f64>, Series), McError> {
    let f = error_series(forward, man, i)?;
    let b = error_series(backward, man, i)?;
    let n = f.times.len().min(b.times.len());
    Ok((
        f.times[..n].to_vec(),
        f.proj_ms.combine(0.5, &b.proj_ms, 0.5),
    ))
}

/// Time-symmetric error
/// `½E[|Y_t − π(X_t)|²; t ≤ τ] + ½E[|Υ_t − π(Ξ_t)|²; t ≤ τ']` per candidate,
/// with `(Ξ, Υ)` the reflected system driven by an independent stream.
pub fn symmetric_error(
    original: &dyn Coefficients,
    candidates: &[&dyn Coefficients],
    man: &Manifold,
    y0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<(Vec<f64>, Vec<Series>), McError> {
    let forward = run_ensemble(original, candidates, man, y0, cfg)?;
    let backward = reflected_ensemble(original, candidates, man, y0, cfg)?;
    let mut out = Vec::with_capacity(candidates.len());
    let mut times = Vec::new();
    for i in 0..candidates.len() {
        let (t, s) = symmetric_series(&forward, &backward, man, i)?;
        if t.len() < times.len() || times.is_empty() {
            times = t;
        }
        out.push(s);
    }
    let n = times.len();
    for s in &mut out {
        s.truncate(n);
    }
    Ok((times, out))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sde::{Form, SdeSpec};

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    #[test]
    fn identical_companion_has_zero_error() {
        let s = SdeSpec::parse(Form::Ito, &["x2", "x1"], 1, &["0", "0"], None).unwrap();
        let circle = Manifold::circle();
        let cfg = SimConfig {
            dt: 0.01,
            t_max: 0.1,
            n_paths: 200,
            seed: 3,
            ..SimConfig::default()
        };
        let ens = run_ensemble(&s, &[&s], &circle, &v(&[0.6, 0.8]), &cfg).unwrap();
        let es = error_series(&ens, &circle, 0).unwrap();
        assert!(es.strong.values.iter().all(|v| *v == 0.0));
        assert!(es.weak.values.iter().all(|v| *v == 0.0));
        assert_eq!(es.proj_ms.values[0], 0.0);
        assert!(es.n_eff.windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn exact_polynomial_fits() {
        let times: Vec<f64> = (0..=50).map(|k| k as f64 * 1e-3).collect();
        let f = |t: f64| 0.75 * t + 2.0 * t * t;
        let series = Series {
            values: times.iter().map(|&t| f(t)).collect(),
            se: times.iter().map(|&t| 0.01 * t).collect(),
            batches: vec![times.iter().map(|&t| f(t)).collect(); 4],
        };
        let fit = fit_taylor(&times, &series, 0.05, FitModel::A1Linear).unwrap();
        assert!((fit.get("a1").unwrap().estimate - 0.75).abs() < 1e-10);
        assert!((fit.get("a2").unwrap().estimate - 2.0).abs() < 1e-7);
        assert_eq!(fit.get("a1").unwrap().half_width, 0.0);
        assert_eq!(fit.n_points, 50);
    }

    #[test]
    fn zero_noise_fits_are_zero() {
        let times: Vec<f64> = (0..=20).map(|k| k as f64 * 0.01).collect();
        let zero = Series {
            values: vec![0.0; 21],
            se: vec![0.0; 21],
            batches: vec![vec![0.0; 21]; 3],
        };
        for model in [
            FitModel::A1Linear,
            FitModel::C1Linear,
            FitModel::B2Quadratic,
            FitModel::C2AfterC1,
        ] {
            let fit = fit_taylor(&times, &zero, 0.2, model).unwrap();
            assert!(fit.coefficients.iter().all(|c| c.estimate == 0.0));
        }
    }

    #[test]
    fn fit_needs_enough_points() {
        let times = vec![0.0, 0.1, 0.2];
        let s = Series {
            values: vec![0.0; 3],
            se: vec![0.0; 3],
            batches: vec![],
        };
        assert!(matches!(
            fit_taylor(&times, &s, 0.2, FitModel::C1Linear),
            Err(McError::TooFewPoints { .. })
        ));
    }

    #[test]
    fn symmetric_error_of_tangent_sde_vanishes() {
        let line = Manifold::affine(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), v(&[0.0])).unwrap();
        let s = SdeSpec::parse(
            Form::Stratonovich,
            &["1 + x1^2", "0"],
            1,
            &["x1", "0"],
            None,
        )
        .unwrap();
        let cfg = SimConfig {
            dt: 0.01,
            t_max: 0.1,
            n_paths: 50,
            seed: 1,
            ..SimConfig::default()
        };
        let (_, series) = symmetric_error(&s, &[&s], &line, &v(&[0.2, 0.0]), &cfg).unwrap();
        assert!(series[0].values.iter().all(|v| v.abs() < 1e-24));
    }
}
