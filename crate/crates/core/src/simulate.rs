//! Coupled pathwise integration of an ambient SDE and its companions.
//!
//! Every path owns one Gaussian stream; the original `X` and all companions
//! `Y_i` consume the same increments. Each integration step draws
//! `substeps × n` normals in `(substep, driver)` order and sums them, so runs
//! at `dt` and `dt/2^k` with `substeps` scaled by `2^k` share one Brownian
//! path.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use thiserror::Error;

use crate::manifold::Manifold;
use crate::rng::{NormalStream, StreamKey};
use crate::sde::{Coefficients, Form, SdeError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SimError {
    #[error("invalid simulation config: {0}")]
    Config(String),
    #[error("initial condition is not on the manifold (|F| = {residual:e})")]
    InitialCondition { residual: f64 },
    #[error("companion dimensions do not match the original SDE")]
    Dimension,
    #[error(transparent)]
    Sde(#[from] SdeError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Scheme {
    /// Heun for Stratonovich-native fields, Euler–Maruyama otherwise.
    Auto,
    EulerMaruyama,
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Retraction {
    None,
    /// Metric projection of companion states after every step.
    MetricProject,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Selects an independent family of streams for the same seed.
    pub salt: u64,
    /// Exit radius of the joint state; `None` disables stopping.
    pub stop_radius: Option<f64>,
    pub retraction: Retraction,
    pub scheme: Scheme,
    /// Fine normals summed per step.
    pub substeps: usize,
    /// Store every k-th step.
    pub record_every: usize,
    /// Store `π(X_t)` alongside `X_t`.
    pub record_projection: bool,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: 1e-3,
            t_max: 0.1,
            n_paths: 1000,
            seed: 0,
            salt: 0,
            stop_radius: None,
            retraction: Retraction::None,
            scheme: Scheme::Auto,
            substeps: 1,
            record_every: 1,
            record_projection: true,
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::Config(m.to_string()));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt must be positive");
        }
        if self.t_max < self.dt || !self.t_max.is_finite() {
            return bad("t_max must be at least dt");
        }
        if self.n_paths == 0 {
            return bad("n_paths must be at least 1");
        }
        if matches!(self.stop_radius, Some(r) if r.is_nan() || r <= 0.0) {
            return bad("stop radius must be positive");
        }
        if self.substeps == 0 || self.record_every == 0 {
            return bad("substeps and record_every must be at least 1");
        }
        Ok(())
    }

    pub fn n_steps(&self) -> usize {
        (self.t_max / self.dt).round() as usize
    }

    pub fn n_records(&self) -> usize {
        self.n_steps() / self.record_every + 1
    }

    pub fn key(&self) -> StreamKey {
        StreamKey::new(self.seed).with_salt(self.salt)
    }
}

/// `x + σ dW + μ dt` with Itô coefficients at `(x, t)`.
pub fn step_em<C: Coefficients + ?Sized>(
    x: &DVector<f64>,
    coeffs: &C,
    t: f64,
    dw: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, SdeError> {
    let c = coeffs.coefficients(x, t, Form::Ito)?;
    Ok(x + c.sigma * dw + c.drift * dt)
}

/// Heun predictor-corrector on the Stratonovich coefficients.
pub fn step_heun<C: Coefficients + ?Sized>(
    x: &DVector<f64>,
    coeffs: &C,
    t: f64,
    dw: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, SdeError> {
    let c0 = coeffs.coefficients(x, t, Form::Stratonovich)?;
    let pred = x + &c0.sigma * dw + &c0.drift * dt;
    let c1 = coeffs.coefficients(&pred, t + dt, Form::Stratonovich)?;
    Ok(x + (c0.sigma + c1.sigma) * dw * 0.5 + (c0.drift + c1.drift) * (0.5 * dt))
}

fn step<C: Coefficients + ?Sized>(
    scheme: Scheme,
    x: &DVector<f64>,
    coeffs: &C,
    t: f64,
    dw: &DVector<f64>,
    dt: f64,
) -> Result<DVector<f64>, SdeError> {
    let heun = match scheme {
        Scheme::Auto => coeffs.native_form() == Form::Stratonovich,
        Scheme::EulerMaruyama => false,
        Scheme::Heun => true,
    };
    let next = if heun {
        step_heun(x, coeffs, t, dw, dt)?
    } else {
        step_em(x, coeffs, t, dw, dt)?
    };
    if next.iter().all(|v| v.is_finite()) {
        Ok(next)
    } else {
        Err(crate::expr::ExprError::Domain("non-finite state").into())
    }
}

/// Correlated Brownian increments of one path, `dW = L dZ`.
pub struct Increments {
    stream: NormalStream,
    drivers: usize,
    substeps: usize,
    scale: f64,
    chol: Option<DMatrix<f64>>,
}

impl Increments {
    pub fn new(cfg: &SimConfig, drivers: usize, chol: Option<&DMatrix<f64>>, path: u64) -> Self {
        Self {
            stream: cfg.key().stream(path),
            drivers,
            substeps: cfg.substeps,
            scale: (cfg.dt / cfg.substeps as f64).sqrt(),
            chol: chol.cloned(),
        }
    }

    pub fn next_increment(&mut self) -> DVector<f64> {
        let mut z = DVector::zeros(self.drivers);
        for _ in 0..self.substeps {
            for g in 0..self.drivers {
                z[g] += self.stream.next_normal();
            }
        }
        z *= self.scale;
        match &self.chol {
            Some(l) => l * z,
            None => z,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopKind {
    /// Left the stopping ball; the exit step itself still counts.
    Exit,
    /// Non-finite state or coefficient failure; the failing step is excluded.
    Failure,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Stop {
    pub step: usize,
    pub kind: StopKind,
}

impl Stop {
    fn alive_at(stop: Option<Stop>, step: usize) -> bool {
        match stop {
            None => true,
            Some(s) => step < s.step || (step == s.step && s.kind == StopKind::Exit),
        }
    }
}

/// One coupled path. States are stored flat, record-major.
#[derive(Debug, Clone, PartialEq)]
pub struct PathRecord {
    pub x: Vec<f64>,
    pub pi_x: Option<Vec<f64>>,
    pub ys: Vec<Vec<f64>>,
    /// Stop of `X` alone: its exit when there are no companions, or a failure.
    pub x_stop: Option<Stop>,
    /// Stop of each joint pair `(X, Y_i)`.
    pub stops: Vec<Option<Stop>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PathEnsemble {
    pub dim: usize,
    pub times: Vec<f64>,
    pub record_every: usize,
    pub y0: DVector<f64>,
    pub paths: Vec<PathRecord>,
}

impl PathEnsemble {
    pub fn n_paths(&self) -> usize {
        self.paths.len()
    }

    pub fn n_records(&self) -> usize {
        self.times.len()
    }

    pub fn n_companions(&self) -> usize {
        self.paths.first().map_or(0, |p| p.ys.len())
    }

    fn slot(&self, k: usize) -> std::ops::Range<usize> {
        k * self.dim..(k + 1) * self.dim
    }

    pub fn x(&self, p: usize, k: usize) -> &[f64] {
        &self.paths[p].x[self.slot(k)]
    }

    pub fn y(&self, p: usize, i: usize, k: usize) -> &[f64] {
        &self.paths[p].ys[i][self.slot(k)]
    }

    pub fn pi_x(&self, p: usize, k: usize) -> Option<&[f64]> {
        self.paths[p].pi_x.as_ref().map(|v| &v[self.slot(k)])
    }

    /// Whether pair `i` is inside its stopping time at record `k`.
    pub fn alive(&self, p: usize, i: usize, k: usize) -> bool {
        let step = k * self.record_every;
        let path = &self.paths[p];
        Stop::alive_at(path.x_stop, step) && Stop::alive_at(path.stops[i], step)
    }

    pub fn alive_x(&self, p: usize, k: usize) -> bool {
        Stop::alive_at(self.paths[p].x_stop, k * self.record_every)
    }
}

fn joint_exit(x: &DVector<f64>, y: Option<&DVector<f64>>, y0: &DVector<f64>, r: f64) -> bool {
    let mut dist2 = (x - y0).norm_squared();
    if let Some(y) = y {
        dist2 += (y - y0).norm_squared();
    }
    dist2 >= r * r
}

/// Simulates `n_paths` coupled paths of `original` and `companions` from `y0`.
pub fn run_ensemble(
    original: &dyn Coefficients,
    companions: &[&dyn Coefficients],
    man: &Manifold,
    y0: &DVector<f64>,
    cfg: &SimConfig,
) -> Result<PathEnsemble, SimError> {
    cfg.validate()?;
    let d = original.dim();
    let n = original.drivers();
    if y0.len() != d || companions.iter().any(|c| c.dim() != d || c.drivers() != n) {
        return Err(SimError::Dimension);
    }
    let residual = man.residual(y0).map_err(SdeError::from)?;
    if residual > man.tolerances().on_manifold {
        return Err(SimError::InitialCondition { residual });
    }
    let chol = original.correlation().map(|c| c.cholesky().clone());
    let n_steps = cfg.n_steps();
    let n_rec = cfg.n_records();
    let times = (0..n_rec)
        .map(|k| (k * cfg.record_every) as f64 * cfg.dt)
        .collect();

    let simulate = |p: usize| -> PathRecord {
        let mut inc = Increments::new(cfg, n, chol.as_ref(), p as u64);
        let mut x = y0.clone();
        let mut ys: Vec<DVector<f64>> = vec![y0.clone(); companions.len()];
        let mut rec = PathRecord {
            x: Vec::with_capacity(n_rec * d),
            pi_x: cfg.record_projection.then(|| Vec::with_capacity(n_rec * d)),
            ys: vec![Vec::with_capacity(n_rec * d); companions.len()],
            x_stop: None,
            stops: vec![None; companions.len()],
        };
        let mut pi = y0.clone();
        let store =
            |rec: &mut PathRecord, x: &DVector<f64>, pi: &DVector<f64>, ys: &[DVector<f64>]| {
                rec.x.extend_from_slice(x.as_slice());
                if let Some(v) = rec.pi_x.as_mut() {
                    v.extend_from_slice(pi.as_slice());
                }
                for (buf, y) in rec.ys.iter_mut().zip(ys) {
                    buf.extend_from_slice(y.as_slice());
                }
            };
        store(&mut rec, &x, &pi, &ys);
        for s in 0..n_steps {
            let t = s as f64 * cfg.dt;
            let dw = inc.next_increment();
            let done = s + 1;
            if rec.x_stop.is_none() {
                match step(cfg.scheme, &x, original, t, &dw, cfg.dt) {
                    Ok(next) => x = next,
                    Err(_) => {
                        rec.x_stop = Some(Stop {
                            step: done,
                            kind: StopKind::Failure,
                        });
                    }
                }
                if rec.x_stop.is_none() && cfg.record_projection {
                    match man.metric_project(&x) {
                        Ok(v) => pi = v,
                        Err(_) => pi.fill(f64::NAN),
                    }
                }
            }
            for (i, c) in companions.iter().enumerate() {
                if rec.stops[i].is_some() {
                    continue;
                }
                if let Some(xs) = rec.x_stop {
                    rec.stops[i] = Some(xs);
                    continue;
                }
                let next = step(cfg.scheme, &ys[i], *c, t, &dw, cfg.dt).and_then(|y| {
                    match cfg.retraction {
                        Retraction::None => Ok(y),
                        Retraction::MetricProject => Ok(man.metric_project(&y)?),
                    }
                });
                match next {
                    Ok(y) => {
                        ys[i] = y;
                        if let Some(r) = cfg.stop_radius {
                            if joint_exit(&x, Some(&ys[i]), y0, r) {
                                rec.stops[i] = Some(Stop {
                                    step: done,
                                    kind: StopKind::Exit,
                                });
                            }
                        }
                    }
                    Err(_) => {
                        rec.stops[i] = Some(Stop {
                            step: done,
                            kind: StopKind::Failure,
                        })
                    }
                }
            }
            if companions.is_empty() && rec.x_stop.is_none() {
                if let Some(r) = cfg.stop_radius {
                    if joint_exit(&x, None, y0, r) {
                        rec.x_stop = Some(Stop {
                            step: done,
                            kind: StopKind::Exit,
                        });
                    }
                }
            }
            if done % cfg.record_every == 0 {
                store(&mut rec, &x, &pi, &ys);
            }
        }
        rec
    };

    let paths = (0..cfg.n_paths).into_par_iter().map(simulate).collect();
    Ok(PathEnsemble {
        dim: d,
        times,
        record_every: cfg.record_every,
        y0: y0.clone(),
        paths,
    })
}

/// `E|F(Y_t)|` over surviving paths for companion `i`, per record.
pub fn drift_off_manifold(ens: &PathEnsemble, man: &Manifold, i: usize) -> Vec<f64> {
    (0..ens.n_records())
        .map(|k| {
            let (mut sum, mut count) = (0.0, 0usize);
            for p in 0..ens.n_paths() {
                if !ens.alive(p, i, k) {
                    continue;
                }
                let y = DVector::from_column_slice(ens.y(p, i, k));
                if let Ok(r) = man.residual(&y) {
                    sum += r;
                    count += 1;
                }
            }
            if count == 0 {
                f64::NAN
            } else {
                sum / count as f64
            }
        })
        .collect()
}
