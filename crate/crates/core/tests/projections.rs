//! Structural identities of the three projections over randomly drawn
//! polynomial SDEs and sampled points.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;

use sde_projection::manifold::Manifold;
use sde_projection::projection::{
    classify, generator_drift, project_all, Coincidence, ProjectedSde, ProjectionKind,
};
use sde_projection::sde::{Coefficients, Form, SdeSpec};

/// Affine polynomial `c0 + c·x + q x_i x_j` as source text.
fn poly(d: usize, c: &[f64]) -> String {
    let mut s = format!("{:.6}", c[0]);
    for i in 0..d {
        s += &format!(" + ({:.6})*x{}", c[1 + i], i + 1);
    }
    s + &format!(" + ({:.6})*x1*x{}", c[1 + d], d)
}

fn random_sde(d: usize, n: usize, coefs: &[f64], form: Form) -> SdeSpec {
    let width = d + 2;
    let sigma: Vec<String> = (0..d * n).map(|k| poly(d, &coefs[k * width..])).collect();
    let drift: Vec<String> = (0..d)
        .map(|k| poly(d, &coefs[(d * n + k) * width..]))
        .collect();
    SdeSpec::parse(form, &sigma, n, &drift, None).unwrap()
}

fn setting(which: usize) -> (Arc<Manifold>, usize, Option<DVector<f64>>) {
    match which {
        0 => (Arc::new(Manifold::circle()), 2, None),
        1 => (Arc::new(Manifold::sphere(3).unwrap()), 3, None),
        2 => (
            Arc::new(
                Manifold::affine(
                    DMatrix::from_row_slice(1, 3, &[0.0, 1.0, 1.0]),
                    DVector::zeros(1),
                )
                .unwrap(),
            ),
            3,
            None,
        ),
        _ => (Arc::new(Manifold::paraboloid()), 3, Some(DVector::zeros(3))),
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn projections_are_tangent_and_jet_is_the_generator(
        which in 0usize..4,
        n in 1usize..3,
        coefs in proptest::collection::vec(-1.0..1.0f64, 60),
        seed in 0u64..1000,
        strat in any::<bool>(),
    ) {
        let (man, d, anchor) = setting(which);
        let form = if strat { Form::Stratonovich } else { Form::Ito };
        let sde = Arc::new(random_sde(d, n, &coefs, form));
        let triple = project_all(sde.clone(), man.clone());
        for y in man.sample_points(4, seed, anchor.as_ref()).unwrap() {
            for p in triple.iter() {
                for f in [Form::Ito, Form::Stratonovich] {
                    let r = p.tangency_residual(&y, 0.2, f).unwrap().max();
                    prop_assert!(r < 1e-8, "{} {:?}: {r:e}", p.kind(), f);
                }
                // shared diffusion σ̄ = Pσ
                let proj = man.projectors(&y).unwrap();
                let sigma = sde.coefficients(&y, 0.2, Form::Ito).unwrap().sigma;
                let bar = p.coefficients_on(&y, 0.2, Form::Ito).unwrap().sigma;
                prop_assert!((&proj.p * sigma - bar).amax() < 1e-12);
            }
            let jet = triple.ito_jet.coefficients_on(&y, 0.2, Form::Ito).unwrap().drift;
            let gen = generator_drift(&sde, &man, &y, 0.2).unwrap();
            prop_assert!((jet - gen).amax() < 1e-8);
        }
    }

    #[test]
    fn conversion_round_trip_is_exact(
        n in 1usize..3,
        coefs in proptest::collection::vec(-1.0..1.0f64, 60),
        x in proptest::array::uniform3(-2.0..2.0f64),
    ) {
        let sde = random_sde(3, n, &coefs, Form::Ito);
        let back = sde.to_stratonovich().to_ito();
        let x = DVector::from_column_slice(&x);
        let a = sde.coefficients(&x, 0.0, Form::Ito).unwrap();
        let b = back.coefficients(&x, 0.0, Form::Ito).unwrap();
        prop_assert!((a.drift - b.drift).amax() <= 1e-12);
        // the conversion term is ½ Σ (∂σ_γ) σ_γ, by finite differences
        let c = sde.conversion_term(&x, 0.0).unwrap();
        let sigma = sde.sigma_at(&x, 0.0).unwrap();
        let mut fd = DVector::zeros(3);
        for g in 0..n {
            let s = sigma.column(g).into_owned();
            let h = 1e-6;
            let plus = sde.sigma_at(&(&x + &s * h), 0.0).unwrap();
            let minus = sde.sigma_at(&(&x - &s * h), 0.0).unwrap();
            fd += (plus.column(g) - minus.column(g)) / (4.0 * h);
        }
        prop_assert!((c - fd).amax() < 1e-6);
    }
}

#[test]
fn tangent_sources_commute_with_conversion() {
    let circle = Arc::new(Manifold::circle());
    let sde = SdeSpec::parse(
        Form::Ito,
        &["-x2", "x1"],
        1,
        &["-x1/2 + 0.4*x2*x1", "-x2/2 - 0.4*x1*x1"],
        None,
    )
    .unwrap();
    let ito = Arc::new(sde.clone());
    let strat = Arc::new(sde.to_stratonovich());
    for y in circle.sample_points(50, 1, None).unwrap() {
        assert!(sde.tangency_residual(&circle, &y, 0.0).unwrap().max() < 1e-12);
        for kind in ProjectionKind::ALL {
            for form in [Form::Ito, Form::Stratonovich] {
                let a = ProjectedSde::new(kind, ito.clone(), circle.clone())
                    .coefficients_on(&y, 0.0, form)
                    .unwrap();
                let b = ProjectedSde::new(kind, strat.clone(), circle.clone())
                    .coefficients_on(&y, 0.0, form)
                    .unwrap();
                let direct = sde.coefficients(&y, 0.0, form).unwrap();
                assert!((&a.drift - &b.drift).amax() < 1e-10);
                assert!((&a.drift - &direct.drift).amax() < 1e-10);
            }
        }
        assert_eq!(
            classify(&project_all(ito.clone(), circle.clone()), &y, 0.0, 1e-7).unwrap(),
            Coincidence::AllEqual
        );
    }
}

#[test]
fn off_manifold_coefficients_are_constant_along_fibres() {
    let circle = Arc::new(Manifold::circle());
    let sde = Arc::new(SdeSpec::parse(Form::Ito, &["x2^3", "x1"], 1, &["x1", "0"], None).unwrap());
    let triple = project_all(sde, circle);
    let y = DVector::from_vec(vec![0.6, 0.8]);
    for p in triple.iter() {
        let on = p.coefficients(&y, 0.0, Form::Ito).unwrap();
        let off = p.coefficients(&(&y * 1.1), 0.0, Form::Ito).unwrap();
        assert!((on.drift - off.drift).amax() < 1e-12);
        assert!((on.sigma - off.sigma).amax() < 1e-12);
    }
}
