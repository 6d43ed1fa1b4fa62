//! Ambient SDE coefficients in Itô or Stratonovich form.
//!
//! An [`SdeSpec`] stores `σ` as a `d×n` matrix of expressions and the drift of
//! its declared form as expressions plus a multiple `κ` of the conversion term
//!
//! ```text
//! C(x,t) = ½ Σ_{αβ} ρ^{αβ} σ^h_α ∂σ_β/∂x^h ,
//! ```
//!
//! evaluated by AD at call time. Converting between forms only shifts `κ`, so
//! round trips are exact and no expression text is ever regenerated.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::manifold::{Manifold, ManifoldError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SdeError {
    #[error(transparent)]
    Expr(#[from] ExprError),
    #[error(transparent)]
    Manifold(#[from] ManifoldError),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("correlation matrix is not symmetric positive definite")]
    Correlation,
}

pub type Result<T> = std::result::Result<T, SdeError>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Form {
    Ito,
    Stratonovich,
}

/// Diffusion matrix (columns `σ_γ`) and a drift in a stated form.
#[derive(Debug, Clone, PartialEq)]
pub struct Coeffs {
    pub sigma: DMatrix<f64>,
    pub drift: DVector<f64>,
}

/// Anything that can be integrated pathwise.
pub trait Coefficients: Send + Sync {
    fn dim(&self) -> usize;
    fn drivers(&self) -> usize;
    /// The form in which the drift is most naturally available; selects the
    /// default integrator.
    fn native_form(&self) -> Form;
    /// Driver correlation; `None` means independent drivers.
    fn correlation(&self) -> Option<&Correlation> {
        None
    }
    /// `σ` and the drift in `form` at `(x, t)`.
    fn coefficients(&self, x: &DVector<f64>, t: f64, form: Form) -> Result<Coeffs>;

    fn diffusion(&self, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        Ok(self.coefficients(x, t, self.native_form())?.sigma)
    }

    fn ito_drift(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(self.coefficients(x, t, Form::Ito)?.drift)
    }

    fn strat_drift(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        Ok(self.coefficients(x, t, Form::Stratonovich)?.drift)
    }
}

/// Validated driver correlation `ρ = L Lᵀ`.
#[derive(Debug, Clone, PartialEq)]
pub struct Correlation {
    rho: DMatrix<f64>,
    chol: DMatrix<f64>,
}

impl Correlation {
    pub fn new(rho: DMatrix<f64>) -> Result<Self> {
        if !rho.is_square() || (&rho - rho.transpose()).amax() > 1e-12 {
            return Err(SdeError::Correlation);
        }
        let chol = rho.clone().cholesky().ok_or(SdeError::Correlation)?.l();
        Ok(Self { rho, chol })
    }

    pub fn rho(&self) -> &DMatrix<f64> {
        &self.rho
    }

    /// Lower-triangular `L` with `ρ = L Lᵀ`.
    pub fn cholesky(&self) -> &DMatrix<f64> {
        &self.chol
    }
}

/// `ρ^{αβ}`, identity when no correlation is set.
pub fn rho_entry(rho: Option<&Correlation>, a: usize, b: usize) -> f64 {
    match rho {
        Some(c) => c.rho[(a, b)],
        None => {
            if a == b {
                1.0
            } else {
                0.0
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SdeSpec {
    d: usize,
    n: usize,
    form: Form,
    /// Row-major `d×n`.
    sigma: Vec<Expr>,
    drift: Vec<Expr>,
    rho: Option<Correlation>,
    /// Multiple of the conversion term added to `drift`.
    kappa: f64,
}

impl SdeSpec {
    pub fn new(
        form: Form,
        sigma: Vec<Expr>,
        n: usize,
        drift: Vec<Expr>,
        rho: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = drift.len();
        if d == 0 || n == 0 || sigma.len() != d * n {
            return Err(SdeError::Dimension(format!(
                "sigma has {} entries, expected {d}x{n}",
                sigma.len()
            )));
        }
        if sigma.iter().chain(&drift).any(|e| e.dim() != d) {
            return Err(SdeError::Dimension(format!(
                "every coefficient must be an expression in dimension {d}"
            )));
        }
        let rho = match rho {
            Some(r) if r.nrows() != n => {
                return Err(SdeError::Dimension(format!(
                    "rho is {}x{}, expected {n}x{n}",
                    r.nrows(),
                    r.ncols()
                )))
            }
            Some(r) => Some(Correlation::new(r)?),
            None => None,
        };
        Ok(Self {
            d,
            n,
            form,
            sigma,
            drift,
            rho,
            kappa: 0.0,
        })
    }

    /// Parses `sigma` (row-major, `d·n` strings) and `drift` (`d` strings).
    pub fn parse<S: AsRef<str>>(
        form: Form,
        sigma: &[S],
        n: usize,
        drift: &[S],
        rho: Option<DMatrix<f64>>,
    ) -> Result<Self> {
        let d = drift.len();
        let parse = |s: &S| Expr::parse(s.as_ref(), d.max(1));
        let sigma = sigma
            .iter()
            .map(parse)
            .collect::<std::result::Result<_, _>>()?;
        let drift = drift
            .iter()
            .map(parse)
            .collect::<std::result::Result<_, _>>()?;
        Self::new(form, sigma, n, drift, rho)
    }

    pub fn form(&self) -> Form {
        self.form
    }

    pub fn sigma_expr(&self, k: usize, gamma: usize) -> &Expr {
        &self.sigma[k * self.n + gamma]
    }

    pub fn drift_exprs(&self) -> &[Expr] {
        &self.drift
    }

    /// True when no `σ` entry depends on the state.
    pub fn has_constant_sigma(&self) -> bool {
        self.sigma.iter().all(Expr::is_state_independent)
    }

    pub fn to_stratonovich(&self) -> Self {
        match self.form {
            Form::Stratonovich => self.clone(),
            Form::Ito => Self {
                form: Form::Stratonovich,
                kappa: self.kappa - 1.0,
                ..self.clone()
            },
        }
    }

    pub fn to_ito(&self) -> Self {
        match self.form {
            Form::Ito => self.clone(),
            Form::Stratonovich => Self {
                form: Form::Ito,
                kappa: self.kappa + 1.0,
                ..self.clone()
            },
        }
    }

    /// Same diffusion, drift replaced by `drift` in `form`.
    pub fn with_drift(&self, form: Form, drift: Vec<Expr>) -> Result<Self> {
        Self::new(
            form,
            self.sigma.clone(),
            self.n,
            drift,
            self.rho.as_ref().map(|c| c.rho.clone()),
        )
    }

    fn check(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.d {
            return Err(SdeError::Dimension(format!(
                "point has {} coordinates, SDE dimension is {}",
                x.len(),
                self.d
            )));
        }
        Ok(())
    }

    pub fn sigma_at(&self, x: &DVector<f64>, t: f64) -> Result<DMatrix<f64>> {
        self.check(x)?;
        let mut s = DMatrix::zeros(self.d, self.n);
        for k in 0..self.d {
            for g in 0..self.n {
                s[(k, g)] = self.sigma_expr(k, g).eval_at(x.as_slice(), t)?;
            }
        }
        Ok(s)
    }

    /// `∂σ^k_γ/∂x^h` as one `d×d` matrix (rows `k`, columns `h`) per driver.
    pub fn sigma_jacobians(&self, x: &DVector<f64>, t: f64) -> Result<Vec<DMatrix<f64>>> {
        self.check(x)?;
        let mut out = vec![DMatrix::zeros(self.d, self.d); self.n];
        for (g, jac) in out.iter_mut().enumerate() {
            for k in 0..self.d {
                let e = self.sigma_expr(k, g);
                if e.is_state_independent() {
                    continue;
                }
                jac.set_row(k, &e.grad_at(x.as_slice(), t)?.transpose());
            }
        }
        Ok(out)
    }

    /// `C = ½ Σ ρ^{αβ} σ^h_α ∂σ_β/∂x^h`, the Itô minus Stratonovich drift.
    pub fn conversion_term(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let sigma = self.sigma_at(x, t)?;
        self.conversion_term_with(&sigma, x, t)
    }

    fn conversion_term_with(
        &self,
        sigma: &DMatrix<f64>,
        x: &DVector<f64>,
        t: f64,
    ) -> Result<DVector<f64>> {
        let mut c = DVector::zeros(self.d);
        if self.has_constant_sigma() {
            return Ok(c);
        }
        let jacs = self.sigma_jacobians(x, t)?;
        for (b, jac) in jacs.iter().enumerate() {
            for a in 0..self.n {
                let w = rho_entry(self.rho.as_ref(), a, b);
                if w != 0.0 {
                    c += jac * sigma.column(a) * (0.5 * w);
                }
            }
        }
        Ok(c)
    }

    fn declared_drift(&self, x: &DVector<f64>, t: f64) -> Result<DVector<f64>> {
        let mut v = DVector::zeros(self.d);
        for (k, e) in self.drift.iter().enumerate() {
            v[k] = e.eval_at(x.as_slice(), t)?;
        }
        Ok(v)
    }

    /// Itô-minus-Stratonovich offset to apply for a requested form.
    fn kappa_for(&self, form: Form) -> f64 {
        match (self.form, form) {
            (Form::Ito, Form::Stratonovich) => self.kappa - 1.0,
            (Form::Stratonovich, Form::Ito) => self.kappa + 1.0,
            _ => self.kappa,
        }
    }
}

impl Coefficients for SdeSpec {
    fn dim(&self) -> usize {
        self.d
    }

    fn drivers(&self) -> usize {
        self.n
    }

    fn native_form(&self) -> Form {
        self.form
    }

    fn correlation(&self) -> Option<&Correlation> {
        self.rho.as_ref()
    }

    fn coefficients(&self, x: &DVector<f64>, t: f64, form: Form) -> Result<Coeffs> {
        let sigma = self.sigma_at(x, t)?;
        let mut drift = self.declared_drift(x, t)?;
        let kappa = self.kappa_for(form);
        if kappa != 0.0 {
            drift += self.conversion_term_with(&sigma, x, t)? * kappa;
        }
        if drift.iter().any(|v| !v.is_finite()) {
            return Err(ExprError::Domain("non-finite drift").into());
        }
        Ok(Coeffs { sigma, drift })
    }
}

/// Time-reflected SDE `dΞ = −σ(Ξ,t)∘dB − b(Ξ,t)dt` of a coefficient field.
pub struct Reflected<'a, C: ?Sized> {
    inner: &'a C,
}

impl<'a, C: Coefficients + ?Sized> Reflected<'a, C> {
    pub fn new(inner: &'a C) -> Self {
        Self { inner }
    }
}

impl<C: Coefficients + ?Sized> Coefficients for Reflected<'_, C> {
    fn dim(&self) -> usize {
        self.inner.dim()
    }

    fn drivers(&self) -> usize {
        self.inner.drivers()
    }

    fn native_form(&self) -> Form {
        self.inner.native_form()
    }

    fn correlation(&self) -> Option<&Correlation> {
        self.inner.correlation()
    }

    fn coefficients(&self, x: &DVector<f64>, t: f64, form: Form) -> Result<Coeffs> {
        // Negating σ leaves the conversion term unchanged, so the reflected
        // Itô drift is μ − 2b.
        let strat = self.inner.coefficients(x, t, Form::Stratonovich)?;
        let drift = match form {
            Form::Stratonovich => -strat.drift,
            Form::Ito => {
                let ito = self.inner.coefficients(x, t, Form::Ito)?;
                ito.drift - strat.drift * 2.0
            }
        };
        Ok(Coeffs {
            sigma: -strat.sigma,
            drift,
        })
    }
}

/// Tangency residuals of an SDE at a point of `M`.
#[derive(Debug, Clone, PartialEq)]
pub struct TangencyReport {
    /// `|Q σ_γ|` per driver.
    pub diffusion: Vec<f64>,
    /// `|Q μ − ½ Σ ρ ∂²π(σ_α, σ_β)|` (Itô) or `|Q b|` (Stratonovich).
    pub drift: f64,
}

impl TangencyReport {
    pub fn max(&self) -> f64 {
        self.diffusion.iter().copied().fold(self.drift, f64::max)
    }
}

/// Orthogonal Itô drift forced by the constraint, `½ Σ ρ^{αβ} ∂²π(σ_α, σ_β)`.
pub fn forced_normal_drift(
    man: &Manifold,
    y: &DVector<f64>,
    sigma: &DMatrix<f64>,
    rho: Option<&Correlation>,
) -> Result<DVector<f64>> {
    let hess = man.pi_hessian(y)?;
    let mut out = DVector::zeros(y.len());
    for a in 0..sigma.ncols() {
        for b in 0..sigma.ncols() {
            let w = rho_entry(rho, a, b);
            if w != 0.0 {
                out += hess.apply(&sigma.column(a).into_owned(), &sigma.column(b).into_owned())
                    * (0.5 * w);
            }
        }
    }
    Ok(out)
}

pub fn tangency_residual<C: Coefficients + ?Sized>(
    sde: &C,
    rho: Option<&Correlation>,
    man: &Manifold,
    y: &DVector<f64>,
    t: f64,
    form: Form,
) -> Result<TangencyReport> {
    let proj = man.projectors(y)?;
    let c = sde.coefficients(y, t, form)?;
    let diffusion = (0..c.sigma.ncols())
        .map(|g| (&proj.q * c.sigma.column(g)).norm())
        .collect();
    let qd = &proj.q * &c.drift;
    let drift = match form {
        Form::Stratonovich => qd.norm(),
        Form::Ito => (qd - forced_normal_drift(man, y, &c.sigma, rho)?).norm(),
    };
    Ok(TangencyReport { diffusion, drift })
}

impl SdeSpec {
    /// Tangency residuals in the declared form.
    pub fn tangency_residual(
        &self,
        man: &Manifold,
        y: &DVector<f64>,
        t: f64,
    ) -> Result<TangencyReport> {
        tangency_residual(self, self.rho.as_ref(), man, y, t, self.form)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn sphere_rotations(drift: [&str; 3]) -> SdeSpec {
        let r2 = "(x1^2 + x2^2 + x3^2)";
        let sigma = [
            format!("-2*x2/{r2}"),
            "0".to_string(),
            format!("2*x1/{r2}"),
            format!("-2*x3/{r2}"),
            "0".to_string(),
            format!("2*x2/{r2}"),
        ];
        let drift: Vec<String> = drift.iter().map(|s| s.to_string()).collect();
        SdeSpec::parse(Form::Ito, &sigma, 2, &drift, None).unwrap()
    }

    #[test]
    fn cross_diffusion_stratonovich_drift() {
        let s = SdeSpec::parse(Form::Ito, &["x2", "x1"], 1, &["0", "0"], None).unwrap();
        let b = s.to_stratonovich();
        for x in [v(&[0.3, -1.2]), v(&[2.0, 5.0])] {
            let got = b.strat_drift(&x, 0.0).unwrap();
            assert!((got - &x * -0.5).norm() < 1e-15);
        }
    }

    #[test]
    fn constant_sigma_forms_agree() {
        let s = SdeSpec::parse(Form::Ito, &["1", "1"], 1, &["x1*x2", "sin(t)"], None).unwrap();
        let x = v(&[0.7, -0.1]);
        assert_eq!(
            s.ito_drift(&x, 0.4).unwrap(),
            s.to_stratonovich().strat_drift(&x, 0.4).unwrap()
        );
    }

    #[test]
    fn round_trip_is_exact() {
        let s = SdeSpec::parse(
            Form::Ito,
            &["x1*x2", "sin(x2)", "exp(x1/3)", "x1"],
            2,
            &["x2", "-x1"],
            Some(DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 1.0])),
        )
        .unwrap();
        let back = s.to_stratonovich().to_ito();
        let x = v(&[0.3, 0.9]);
        let d = (back.ito_drift(&x, 0.0).unwrap() - s.ito_drift(&x, 0.0).unwrap()).norm();
        assert!(d <= 1e-12);
    }

    #[test]
    fn correlation_must_be_positive_definite() {
        let bad = DMatrix::from_row_slice(2, 2, &[1.0, 2.0, 2.0, 1.0]);
        let err = SdeSpec::parse(Form::Ito, &["1", "0", "0", "1"], 2, &["0", "0"], Some(bad));
        assert_eq!(err.unwrap_err(), SdeError::Correlation);
    }

    #[test]
    fn sphere_rotations_tangency() {
        let sphere = Manifold::sphere(3).unwrap();
        let y = v(&[0.0, 1.0, 0.0]);
        let raw = sphere_rotations(["0", "0", "0"])
            .tangency_residual(&sphere, &y, 0.0)
            .unwrap();
        assert!(raw.diffusion.iter().all(|r| *r < 1e-15));
        assert!((raw.drift - 4.0).abs() < 1e-12);
        let fixed = sphere_rotations(["0", "-4", "0"])
            .tangency_residual(&sphere, &y, 0.0)
            .unwrap();
        assert!(fixed.max() < 1e-12);
    }

    #[test]
    fn tangent_sde_on_affine_line() {
        let line = Manifold::affine(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), v(&[0.0])).unwrap();
        let s = SdeSpec::parse(Form::Ito, &["x1^2 + 1", "0"], 1, &["0", "0"], None).unwrap();
        let rep = s.tangency_residual(&line, &v(&[0.4, 0.0]), 0.0).unwrap();
        assert_eq!(rep.max(), 0.0);
    }

    #[test]
    fn reflection_flips_stratonovich_coefficients() {
        let s = SdeSpec::parse(Form::Ito, &["x2", "x1"], 1, &["1", "0"], None).unwrap();
        let r = Reflected::new(&s);
        let x = v(&[0.5, 0.2]);
        let c = r.coefficients(&x, 0.0, Form::Stratonovich).unwrap();
        assert_eq!(c.sigma, -s.diffusion(&x, 0.0).unwrap());
        assert_eq!(c.drift, -s.strat_drift(&x, 0.0).unwrap());
        // Itô drift of the reflection is μ − 2b
        let mu = s.ito_drift(&x, 0.0).unwrap();
        let b = s.strat_drift(&x, 0.0).unwrap();
        assert!((r.ito_drift(&x, 0.0).unwrap() - (mu - b * 2.0)).norm() < 1e-15);
    }
}
