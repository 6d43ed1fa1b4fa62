//! Monte-Carlo moments against closed forms.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use sde_projection::manifold::Manifold;
use sde_projection::montecarlo::error_series;
use sde_projection::projection::{ProjectedSde, ProjectionKind};
use sde_projection::sde::{Form, SdeSpec};
use sde_projection::simulate::{run_ensemble, Scheme, SimConfig};

fn mean_and_se(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[test]
fn brownian_motion_on_the_circle_decays_like_the_heat_kernel() {
    // Projecting planar Brownian motion gives Brownian motion on S¹:
    // E[x1(t)] = exp(-t/2) from (1, 0).
    let circle = Arc::new(Manifold::circle());
    let bm =
        Arc::new(SdeSpec::parse(Form::Ito, &["1", "0", "0", "1"], 2, &["0", "0"], None).unwrap());
    for kind in ProjectionKind::ALL {
        let proj = ProjectedSde::new(kind, bm.clone(), circle.clone());
        let cfg = SimConfig {
            dt: 1e-3,
            t_max: 0.5,
            n_paths: 2000,
            seed: 17,
            record_every: 500,
            ..SimConfig::default()
        };
        let ens = run_ensemble(
            &proj,
            &[],
            &circle,
            &DVector::from_vec(vec![1.0, 0.0]),
            &cfg,
        )
        .unwrap();
        let last = ens.n_records() - 1;
        let x1: Vec<f64> = (0..ens.n_paths()).map(|p| ens.x(p, last)[0]).collect();
        let (mean, se) = mean_and_se(&x1);
        let exact = (-0.25f64).exp();
        assert!(
            (mean - exact).abs() < 4.0 * se + 5e-3,
            "{kind}: {mean} ± {se} vs {exact}"
        );
    }
}

#[test]
fn geometric_brownian_motion_second_moment() {
    // dX1 = X1 dW on the x-axis: E[X1(t)²] = X1(0)² eᵗ.
    let axis = Manifold::affine(
        DMatrix::from_row_slice(1, 2, &[0.0, 1.0]),
        DVector::zeros(1),
    )
    .unwrap();
    let gbm = SdeSpec::parse(Form::Ito, &["x1", "0"], 1, &["0", "0"], None).unwrap();
    let strat = gbm.to_stratonovich();
    for (sde, scheme) in [(&gbm, Scheme::EulerMaruyama), (&strat, Scheme::Heun)] {
        let cfg = SimConfig {
            dt: 1e-3,
            t_max: 1.0,
            n_paths: 8000,
            seed: 3,
            scheme,
            record_every: 1000,
            ..SimConfig::default()
        };
        let ens = run_ensemble(sde, &[], &axis, &DVector::from_vec(vec![0.5, 0.0]), &cfg).unwrap();
        let sq: Vec<f64> = (0..ens.n_paths()).map(|p| ens.x(p, 1)[0].powi(2)).collect();
        let (mean, se) = mean_and_se(&sq);
        let exact = 0.25 * 1f64.exp();
        assert!(
            (mean - exact).abs() < 4.0 * se,
            "{scheme:?}: {mean} ± {se} vs {exact}"
        );
    }
}

#[test]
fn errors_vanish_for_a_tangent_source() {
    // Every projection of a tangent SDE is the SDE itself, so the coupled
    // companions track the original path; the gap comes only from the Euler
    // path leaving M, where companions are evaluated at its projection.
    let circle = Arc::new(Manifold::circle());
    let rot =
        Arc::new(SdeSpec::parse(Form::Ito, &["-x2", "x1"], 1, &["-x1/2", "-x2/2"], None).unwrap());
    let companions: Vec<ProjectedSde> = ProjectionKind::ALL
        .iter()
        .map(|&k| ProjectedSde::new(k, rot.clone(), circle.clone()))
        .collect();
    let refs: Vec<&dyn sde_projection::sde::Coefficients> = companions
        .iter()
        .map(|c| c as &dyn sde_projection::sde::Coefficients)
        .collect();
    let cfg = SimConfig {
        n_paths: 200,
        seed: 9,
        scheme: Scheme::EulerMaruyama,
        ..SimConfig::default()
    };
    let y0 = DVector::from_vec(vec![0.6, 0.8]);
    let ens = run_ensemble(rot.as_ref(), &refs, &circle, &y0, &cfg).unwrap();
    for i in 0..refs.len() {
        let e = error_series(&ens, &circle, i).unwrap();
        let worst = e.strong.values.iter().copied().fold(0.0, f64::max);
        assert!(
            worst < 10.0 * cfg.dt * cfg.dt,
            "companion {i}: strong error {worst:e}"
        );
    }
}
