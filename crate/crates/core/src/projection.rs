//! Stratonovich, Itô-vector and Itô-jet projections of an ambient SDE onto `M`.
//!
//! All three projected SDEs share the diffusion `σ̄_γ = Pσ_γ` and the forced
//! orthogonal Itô drift `½ Σ ρ^{αβ} ∂²π(σ̄_α, σ̄_β)`. Their tangential Itô
//! drifts are
//!
//! ```text
//! Stratonovich  Pμ + ½ Σ ρ^{αβ} ( ∂²π(σ̄_α, σ̌_β) − P Jσ_β σ̌_α )
//! Itô-jet       Pμ +   Σ ρ^{αβ}   ∂²π(σ̄_α, σ̌_β)
//! Itô-vector    Pμ
//! ```
//!
//! and their Stratonovich drifts are
//!
//! ```text
//! Stratonovich  Pb
//! Itô-jet       Pb + ½ Σ ρ^{αβ} ( P Jσ_β σ̌_α + ∂²π(σ̄_α, σ̌_β) )
//! Itô-vector    Pb + ½ Σ ρ^{αβ} ( P Jσ_β σ̌_α − ∂²π(σ̄_α, σ̌_β) )
//! ```
//!
//! with `σ̌ = Qσ`. Off `M` every field is evaluated at `π(x)`, which makes the
//! projected coefficients constant along the fibres of `π`.

use std::fmt;
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};

use crate::manifold::{Manifold, PiHessian, Projector};
use crate::sde::{
    forced_normal_drift, rho_entry, tangency_residual, Coefficients, Coeffs, Correlation, Form,
    Result, SdeSpec, TangencyReport,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ProjectionKind {
    Stratonovich,
    ItoVector,
    ItoJet,
}

impl ProjectionKind {
    pub const ALL: [ProjectionKind; 3] = [
        ProjectionKind::Stratonovich,
        ProjectionKind::ItoVector,
        ProjectionKind::ItoJet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            ProjectionKind::Stratonovich => "stratonovich",
            ProjectionKind::ItoVector => "ito-vector",
            ProjectionKind::ItoJet => "ito-jet",
        }
    }
}

impl fmt::Display for ProjectionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Pointwise data shared by the projection formulas at `y ∈ M`.
struct Local {
    proj: Projector,
    hess: PiHessian,
    sigma: DMatrix<f64>,
    sigma_bar: DMatrix<f64>,
    sigma_check: DMatrix<f64>,
}

/// The projection of an ambient SDE, evaluable as a coefficient field.
#[derive(Debug, Clone)]
pub struct ProjectedSde {
    kind: ProjectionKind,
    source: Arc<SdeSpec>,
    man: Arc<Manifold>,
}

/// Itô drift of a projected SDE split into its tangent and normal parts.
#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    pub sigma_bar: DMatrix<f64>,
    pub tangential: DVector<f64>,
    pub normal: DVector<f64>,
}

impl ProjectedSde {
    pub fn new(kind: ProjectionKind, source: Arc<SdeSpec>, man: Arc<Manifold>) -> Self {
        Self { kind, source, man }
    }

    pub fn kind(&self) -> ProjectionKind {
        self.kind
    }

    pub fn source(&self) -> &SdeSpec {
        &self.source
    }

    pub fn manifold(&self) -> &Manifold {
        &self.man
    }

    fn rho(&self) -> Option<&Correlation> {
        Coefficients::correlation(self.source.as_ref())
    }

    fn local(&self, y: &DVector<f64>, sigma: DMatrix<f64>) -> Result<Local> {
        let proj = self.man.projectors_unchecked(y)?;
        let hess = self.man.pi_hessian(y)?;
        let sigma_bar = &proj.p * &sigma;
        let sigma_check = &proj.q * &sigma;
        Ok(Local {
            proj,
            hess,
            sigma,
            sigma_bar,
            sigma_check,
        })
    }

    /// `Σ ρ^{αβ} ∂²π(σ̄_α, σ̌_β)`.
    fn cross_term(&self, l: &Local) -> DVector<f64> {
        let n = l.sigma.ncols();
        let mut out = DVector::zeros(l.sigma.nrows());
        for a in 0..n {
            let sb = l.sigma_bar.column(a).into_owned();
            for b in 0..n {
                let w = rho_entry(self.rho(), a, b);
                if w != 0.0 {
                    out += l.hess.apply(&sb, &l.sigma_check.column(b).into_owned()) * w;
                }
            }
        }
        out
    }

    /// `P Σ ρ^{αβ} Jσ_β σ̌_α`.
    fn derivative_term(&self, l: &Local, y: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let n = l.sigma.ncols();
        let mut out = DVector::zeros(l.sigma.nrows());
        if self.source.has_constant_sigma() {
            return Ok(out);
        }
        let jacs = self.source.sigma_jacobians(y, t)?;
        for (b, jac) in jacs.iter().enumerate() {
            for a in 0..n {
                let w = rho_entry(self.rho(), a, b);
                if w != 0.0 {
                    out += jac * l.sigma_check.column(a) * w;
                }
            }
        }
        Ok(&l.proj.p * out)
    }

    /// Coefficients at a point assumed to lie on `M`.
    pub fn coefficients_on(&self, y: &DVector<f64>, t: f64, form: Form) -> Result<Coeffs> {
        use ProjectionKind::*;
        let src = self.source.coefficients(y, t, form)?;
        let l = self.local(y, src.sigma)?;
        let p_drift = &l.proj.p * &src.drift;
        let drift = match (form, self.kind) {
            (Form::Ito, ItoVector) => p_drift + self.normal_part(&l, y)?,
            (Form::Ito, ItoJet) => p_drift + self.cross_term(&l) + self.normal_part(&l, y)?,
            (Form::Ito, Stratonovich) => {
                p_drift
                    + (self.cross_term(&l) - self.derivative_term(&l, y, t)?) * 0.5
                    + self.normal_part(&l, y)?
            }
            (Form::Stratonovich, Stratonovich) => p_drift,
            (Form::Stratonovich, ItoJet) => {
                p_drift + (self.derivative_term(&l, y, t)? + self.cross_term(&l)) * 0.5
            }
            (Form::Stratonovich, ItoVector) => {
                p_drift + (self.derivative_term(&l, y, t)? - self.cross_term(&l)) * 0.5
            }
        };
        Ok(Coeffs {
            sigma: l.sigma_bar,
            drift,
        })
    }

    fn normal_part(&self, l: &Local, y: &DVector<f64>) -> Result<DVector<f64>> {
        forced_normal_drift(&self.man, y, &l.sigma_bar, self.rho())
    }

    /// `σ̄`, tangential and orthogonal Itô drift at `y ∈ M`.
    pub fn decompose(&self, y: &DVector<f64>, t: f64) -> Result<Decomposition> {
        let c = self.coefficients_on(y, t, Form::Ito)?;
        let proj = self.man.projectors_unchecked(y)?;
        Ok(Decomposition {
            tangential: &proj.p * &c.drift,
            normal: &proj.q * &c.drift,
            sigma_bar: c.sigma,
        })
    }

    pub fn tangency_residual(
        &self,
        y: &DVector<f64>,
        t: f64,
        form: Form,
    ) -> Result<TangencyReport> {
        tangency_residual(self, self.rho(), &self.man, y, t, form)
    }
}

impl Coefficients for ProjectedSde {
    fn dim(&self) -> usize {
        self.source.dim()
    }

    fn drivers(&self) -> usize {
        self.source.drivers()
    }

    fn native_form(&self) -> Form {
        match self.kind {
            ProjectionKind::Stratonovich => Form::Stratonovich,
            _ => Form::Ito,
        }
    }

    fn correlation(&self) -> Option<&Correlation> {
        self.rho()
    }

    fn coefficients(&self, x: &DVector<f64>, t: f64, form: Form) -> Result<Coeffs> {
        let y = self.man.metric_project(x)?;
        self.coefficients_on(&y, t, form)
    }
}

/// The three projections of one SDE.
#[derive(Debug, Clone)]
pub struct ProjectedTriple {
    pub strat: ProjectedSde,
    pub ito_vector: ProjectedSde,
    pub ito_jet: ProjectedSde,
}

impl ProjectedTriple {
    pub fn get(&self, kind: ProjectionKind) -> &ProjectedSde {
        match kind {
            ProjectionKind::Stratonovich => &self.strat,
            ProjectionKind::ItoVector => &self.ito_vector,
            ProjectionKind::ItoJet => &self.ito_jet,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &ProjectedSde> {
        [&self.strat, &self.ito_vector, &self.ito_jet].into_iter()
    }
}

pub fn project_all(source: Arc<SdeSpec>, man: Arc<Manifold>) -> ProjectedTriple {
    let make = |kind| ProjectedSde::new(kind, source.clone(), man.clone());
    ProjectedTriple {
        strat: make(ProjectionKind::Stratonovich),
        ito_vector: make(ProjectionKind::ItoVector),
        ito_jet: make(ProjectionKind::ItoJet),
    }
}

/// Generator of the SDE applied to `π`: `Jπ μ + ½ Σ ρ^{αβ} ∂²π(σ_α, σ_β)`.
pub fn generator_drift(
    source: &SdeSpec,
    man: &Manifold,
    x: &DVector<f64>,
    t: f64,
) -> Result<DVector<f64>> {
    let c = source.coefficients(x, t, Form::Ito)?;
    let jpi = man.pi_jacobian(x)?;
    Ok(jpi * c.drift + forced_normal_drift(man, x, &c.sigma, Coefficients::correlation(source))?)
}

/// Which tangential drifts coincide at a point.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Coincidence {
    AllEqual,
    JetEqVectorNeStrat,
    StratEqJetNeVector,
    StratEqVectorNeJet,
    AllDistinct,
}

impl Coincidence {
    pub fn label(&self) -> &'static str {
        match self {
            Coincidence::AllEqual => "all-equal",
            Coincidence::JetEqVectorNeStrat => "jet=vector!=strat",
            Coincidence::StratEqJetNeVector => "strat=jet!=vector",
            Coincidence::StratEqVectorNeJet => "strat=vector!=jet",
            Coincidence::AllDistinct => "all-distinct",
        }
    }
}

impl fmt::Display for Coincidence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

pub const DEFAULT_CLASSIFY_TOL: f64 = 1e-7;

/// Pairwise comparison of the tangential drifts, each test relative to
/// `1 + max(|a|, |b|)`. Two matching pairs imply the third.
pub fn classify(
    triple: &ProjectedTriple,
    y: &DVector<f64>,
    t: f64,
    tol: f64,
) -> Result<Coincidence> {
    let s = triple.strat.decompose(y, t)?.tangential;
    let v = triple.ito_vector.decompose(y, t)?.tangential;
    let j = triple.ito_jet.decompose(y, t)?.tangential;
    let eq =
        |a: &DVector<f64>, b: &DVector<f64>| (a - b).norm() <= tol * (1.0 + a.norm().max(b.norm()));
    let (sj, sv, jv) = (eq(&s, &j), eq(&s, &v), eq(&j, &v));
    Ok(match (sj, sv, jv) {
        (true, true, _) | (true, _, true) | (_, true, true) => Coincidence::AllEqual,
        (true, false, false) => Coincidence::StratEqJetNeVector,
        (false, true, false) => Coincidence::StratEqVectorNeJet,
        (false, false, true) => Coincidence::JetEqVectorNeStrat,
        (false, false, false) => Coincidence::AllDistinct,
    })
}

/// Maximum deviation of `Jπ(x)σ_γ(x)` and `Jπ(x)b(x)` from their values at
/// `π(x)` over the samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FiberingReport {
    pub sigma_deviation: f64,
    pub drift_deviation: f64,
    pub samples: usize,
}

impl FiberingReport {
    pub fn holds(&self, tol: f64) -> bool {
        self.sigma_deviation <= tol && self.drift_deviation <= tol
    }
}

pub fn fibering_check(
    source: &SdeSpec,
    man: &Manifold,
    samples: &[DVector<f64>],
    t: f64,
) -> Result<FiberingReport> {
    let mut report = FiberingReport {
        sigma_deviation: 0.0,
        drift_deviation: 0.0,
        samples: samples.len(),
    };
    let push = |x: &DVector<f64>| -> Result<(DMatrix<f64>, DVector<f64>)> {
        let c = source.coefficients(x, t, Form::Stratonovich)?;
        let j = man.pi_jacobian(x)?;
        Ok((&j * c.sigma, j * c.drift))
    };
    for x in samples {
        let y = man.metric_project(x)?;
        let (sx, bx) = push(x)?;
        let (sy, by) = push(&y)?;
        report.sigma_deviation = report.sigma_deviation.max((sx - sy).amax());
        report.drift_deviation = report.drift_deviation.max((bx - by).amax());
    }
    Ok(report)
}

/// `|(μ̂ − μ⃗) − 2(μ̃ − μ⃗)|` for the tangential drifts at `y`.
pub fn constant_sigma_relation(triple: &ProjectedTriple, y: &DVector<f64>, t: f64) -> Result<f64> {
    let s = triple.strat.decompose(y, t)?.tangential;
    let v = triple.ito_vector.decompose(y, t)?.tangential;
    let j = triple.ito_jet.decompose(y, t)?.tangential;
    Ok(((&j - &v) - (s - &v) * 2.0).norm())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn y0() -> DVector<f64> {
        v(&[3f64.sqrt() / 2.0, 0.5])
    }

    fn cross(a: i32) -> ProjectedTriple {
        let r = format!("(x1^2 + x2^2)^({a})");
        let s = SdeSpec::parse(
            Form::Ito,
            &[format!("{r}*x2"), format!("{r}*x1")],
            1,
            &["0".to_string(), "0".to_string()],
            None,
        )
        .unwrap();
        project_all(Arc::new(s), Arc::new(Manifold::circle()))
    }

    fn tangential(p: &ProjectedSde, y: &DVector<f64>) -> DVector<f64> {
        p.decompose(y, 0.0).unwrap().tangential
    }

    #[test]
    fn cross_diffusion_a1_drifts() {
        let tr = cross(1);
        let s3 = 3f64.sqrt();
        let y = y0();
        assert!(tangential(&tr.ito_vector, &y).norm() < 1e-14);
        assert!((tangential(&tr.ito_jet, &y) - v(&[s3 / 8.0, -3.0 / 8.0])).norm() < 1e-14);
        assert!((tangential(&tr.strat, &y) - v(&[s3 / 4.0, -0.75])).norm() < 1e-14);
        assert_eq!(
            classify(&tr, &y, 0.0, 1e-7).unwrap(),
            Coincidence::AllDistinct
        );
    }

    #[test]
    fn cross_diffusion_classifications() {
        let y = y0();
        assert_eq!(
            classify(&cross(0), &y, 0.0, 1e-7).unwrap(),
            Coincidence::StratEqJetNeVector
        );
        assert_eq!(
            classify(&cross(-1), &y, 0.0, 1e-7).unwrap(),
            Coincidence::StratEqVectorNeJet
        );
    }

    #[test]
    fn rr2_first_sde() {
        let line = Manifold::affine(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), v(&[0.0])).unwrap();
        let s = SdeSpec::parse(Form::Ito, &["x2", "x1"], 1, &["0", "0"], None).unwrap();
        let tr = project_all(Arc::new(s), Arc::new(line));
        let y = v(&[0.8, 0.0]);
        let strat = tr
            .strat
            .coefficients_on(&y, 0.0, Form::Stratonovich)
            .unwrap();
        assert_eq!(strat.sigma, DMatrix::zeros(2, 1));
        assert!((strat.drift - v(&[-0.4, 0.0])).norm() < 1e-15);
        assert!(tangential(&tr.ito_jet, &y).norm() == 0.0);
        assert!(tangential(&tr.ito_vector, &y).norm() == 0.0);
        assert_eq!(
            classify(&tr, &y, 0.0, 1e-7).unwrap(),
            Coincidence::JetEqVectorNeStrat
        );
    }

    #[test]
    fn constant_sigma_relation_at_east_pole() {
        let s = SdeSpec::parse(Form::Ito, &["1", "1"], 1, &["0", "0"], None).unwrap();
        let tr = project_all(Arc::new(s), Arc::new(Manifold::circle()));
        let y = v(&[1.0, 0.0]);
        assert!(constant_sigma_relation(&tr, &y, 0.0).unwrap() < 1e-15);
        assert_eq!(
            classify(&tr, &y, 0.0, 1e-7).unwrap(),
            Coincidence::AllDistinct
        );
    }

    #[test]
    fn identity_diffusion_is_all_equal() {
        let s = SdeSpec::parse(Form::Ito, &["1", "0", "0", "1"], 2, &["0", "0"], None).unwrap();
        let tr = project_all(Arc::new(s), Arc::new(Manifold::circle()));
        assert_eq!(
            classify(&tr, &y0(), 0.0, 1e-7).unwrap(),
            Coincidence::AllEqual
        );
    }

    #[test]
    fn projections_are_tangent() {
        for a in [-1, 0, 1] {
            let tr = cross(a);
            for p in tr.iter() {
                for form in [Form::Ito, Form::Stratonovich] {
                    assert!(p.tangency_residual(&y0(), 0.0, form).unwrap().max() < 1e-14);
                }
            }
        }
    }

    #[test]
    fn jet_drift_is_the_generator() {
        let tr = cross(1);
        let y = y0();
        let jet = tr.ito_jet.ito_drift(&y, 0.0).unwrap();
        let gen = generator_drift(tr.ito_jet.source(), tr.ito_jet.manifold(), &y, 0.0).unwrap();
        assert!((jet - gen).norm() < 1e-14);
    }

    #[test]
    fn fibering_examples() {
        let circle = Manifold::circle();
        let samples: Vec<_> = [1.1, 0.8, 1.3].iter().map(|l| y0() * *l).collect();
        let a0 = cross(0);
        let rep = fibering_check(a0.strat.source(), &circle, &samples, 0.0).unwrap();
        assert!(rep.holds(1e-14), "{rep:?}");
        let a1 = cross(1);
        let rep = fibering_check(a1.strat.source(), &circle, &samples, 0.0).unwrap();
        assert!(rep.sigma_deviation > 0.1);
    }
}
