//! Embedded submanifolds `M ⊂ R^d` given by Cartesian equations `F(x) = 0`.
//!
//! Provides the tangential/normal projectors `P`, `Q`, the metric projection
//! `π` onto `M` and its first and second derivatives. Built-in shapes carry
//! closed-form `π`; user-defined manifolds either supply `π` as expressions or
//! fall back to a Newton solve of the Lagrange system
//! `y + JF(y)ᵀλ = x`, `F(y) = 0`.

use nalgebra::{DMatrix, DVector};
use thiserror::Error;

use crate::expr::{Expr, ExprError};
use crate::rng::StreamKey;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ManifoldError {
    #[error("point is not on the manifold (|F| = {residual:e})")]
    NotOnManifold { residual: f64 },
    #[error(
        "constraint Jacobian is rank deficient (min eigenvalue of JF·JFᵀ = {min_eigenvalue:e})"
    )]
    RankDeficient { min_eigenvalue: f64 },
    #[error("point lies on the singular set of the projection")]
    Singular,
    #[error(
        "metric projection did not converge after {iterations} iterations (residual {residual:e})"
    )]
    NewtonFailed { iterations: usize, residual: f64 },
    #[error("point is {distance} from the manifold, outside the tubular radius {radius}")]
    OutsideTube { distance: f64, radius: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error(transparent)]
    Expr(#[from] ExprError),
}

pub type Result<T> = std::result::Result<T, ManifoldError>;

/// Numerical tolerances used by the manifold routines.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tolerances {
    /// `|F(y)|` below which `y` counts as on `M`.
    pub on_manifold: f64,
    pub newton: f64,
    pub max_iter: usize,
    pub fd_step: f64,
    pub structure: f64,
    pub rank: f64,
}

impl Default for Tolerances {
    fn default() -> Self {
        Self {
            on_manifold: 1e-9,
            newton: 1e-12,
            max_iter: 50,
            fd_step: 1e-5,
            structure: 1e-6,
            rank: 1e-10,
        }
    }
}

const MAX_HALVINGS: usize = 30;

#[derive(Debug, Clone)]
pub enum Shape {
    /// Unit circle in R², with the closed-form derivatives written out in 2-D.
    Circle,
    /// Unit sphere `S^{d-1}` in R^d, `π(x) = x/|x|`.
    Sphere,
    /// `{x : A x = c}`.
    Affine { a: DMatrix<f64>, c: DVector<f64> },
    /// Zero set of expressions, optionally with expressions for `π`.
    Implicit {
        equations: Vec<Expr>,
        projection: Option<Vec<Expr>>,
    },
}

#[derive(Debug, Clone)]
pub struct Manifold {
    ambient: usize,
    dim: usize,
    shape: Shape,
    tubular_radius: f64,
    tol: Tolerances,
}

/// Tangential and normal orthogonal projectors at a point.
#[derive(Debug, Clone, PartialEq)]
pub struct Projector {
    pub p: DMatrix<f64>,
    pub q: DMatrix<f64>,
}

/// Frobenius-norm defects of the projector identities.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectorReport {
    pub idempotence: f64,
    pub complement: f64,
    pub cross: f64,
    pub symmetry: f64,
    pub rank_q: usize,
}

impl ProjectorReport {
    pub fn max_defect(&self) -> f64 {
        self.idempotence
            .max(self.complement)
            .max(self.cross)
            .max(self.symmetry)
    }
}

impl Projector {
    pub fn tangent(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.p * v
    }

    pub fn normal(&self, v: &DVector<f64>) -> DVector<f64> {
        &self.q * v
    }

    pub fn report(&self) -> ProjectorReport {
        let d = self.p.nrows();
        let id = DMatrix::<f64>::identity(d, d);
        let idempotence = (&self.p * &self.p - &self.p)
            .norm()
            .max((&self.q * &self.q - &self.q).norm());
        let complement = (&self.p + &self.q - id).norm();
        let cross = (&self.p * &self.q).norm().max((&self.q * &self.p).norm());
        let symmetry = (&self.p - self.p.transpose())
            .norm()
            .max((&self.q - self.q.transpose()).norm());
        let eig = self.q.clone().symmetric_eigenvalues();
        let rank_q = eig.iter().filter(|&&l| l > 0.5).count();
        ProjectorReport {
            idempotence,
            complement,
            cross,
            symmetry,
            rank_q,
        }
    }
}

/// Second derivatives of `π`: one symmetric `d×d` matrix per component.
#[derive(Debug, Clone, PartialEq)]
pub struct PiHessian {
    pub components: Vec<DMatrix<f64>>,
}

impl PiHessian {
    pub fn zeros(d: usize) -> Self {
        Self {
            components: vec![DMatrix::zeros(d, d); d],
        }
    }

    /// `∂²π/∂xⁱ∂xʲ vⁱ wʲ`.
    pub fn apply(&self, v: &DVector<f64>, w: &DVector<f64>) -> DVector<f64> {
        DVector::from_iterator(
            self.components.len(),
            self.components.iter().map(|h| v.dot(&(h * w))),
        )
    }
}

/// Residuals of the three decomposition identities for `∂²π(V, W)` at `y ∈ M`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StructureReport {
    /// `|P ∂²π(V̄, W̄)|`; zero because the term is normal.
    pub tangent_tangent: f64,
    /// `|Q ∂²π(V̄, W̌)|`; zero because the term is tangent.
    pub tangent_normal: f64,
    /// `|∂²π(V̌, W̌)|`.
    pub normal_normal: f64,
}

impl StructureReport {
    pub fn max(&self) -> f64 {
        self.tangent_tangent
            .max(self.tangent_normal)
            .max(self.normal_normal)
    }
}

impl Manifold {
    pub fn circle() -> Self {
        Self {
            ambient: 2,
            dim: 1,
            shape: Shape::Circle,
            tubular_radius: 1.0,
            tol: Tolerances::default(),
        }
    }

    pub fn sphere(ambient: usize) -> Result<Self> {
        if ambient < 2 {
            return Err(ManifoldError::Dimension(
                "sphere needs ambient dimension >= 2".into(),
            ));
        }
        Ok(Self {
            ambient,
            dim: ambient - 1,
            shape: Shape::Sphere,
            tubular_radius: 1.0,
            tol: Tolerances::default(),
        })
    }

    pub fn affine(a: DMatrix<f64>, c: DVector<f64>) -> Result<Self> {
        if a.nrows() != c.len() || a.nrows() == 0 || a.nrows() >= a.ncols() {
            return Err(ManifoldError::Dimension(format!(
                "affine constraint A is {}x{}, c has length {}",
                a.nrows(),
                a.ncols(),
                c.len()
            )));
        }
        let gram = &a * a.transpose();
        let min = gram.symmetric_eigenvalues().min();
        if min <= Tolerances::default().rank {
            return Err(ManifoldError::RankDeficient {
                min_eigenvalue: min,
            });
        }
        Ok(Self {
            ambient: a.ncols(),
            dim: a.ncols() - a.nrows(),
            shape: Shape::Affine { a, c },
            tubular_radius: f64::INFINITY,
            tol: Tolerances::default(),
        })
    }

    /// `x3 = x1² + x2²` in R³, handled by the implicit fallback.
    pub fn paraboloid() -> Self {
        let f = Expr::parse("x3 - x1^2 - x2^2", 3).expect("valid expression");
        Self {
            ambient: 3,
            dim: 2,
            shape: Shape::Implicit {
                equations: vec![f],
                projection: None,
            },
            // focal distance at the vertex is 1/2
            tubular_radius: 0.25,
            tol: Tolerances::default(),
        }
    }

    pub fn implicit(
        equations: Vec<Expr>,
        projection: Option<Vec<Expr>>,
        tubular_radius: f64,
    ) -> Result<Self> {
        let Some(first) = equations.first() else {
            return Err(ManifoldError::Dimension("no equations given".into()));
        };
        let ambient = first.dim();
        if equations.iter().any(|e| e.dim() != ambient) || equations.len() >= ambient {
            return Err(ManifoldError::Dimension(format!(
                "{} equations in ambient dimension {ambient}",
                equations.len()
            )));
        }
        if let Some(pi) = &projection {
            if pi.len() != ambient || pi.iter().any(|e| e.dim() != ambient) {
                return Err(ManifoldError::Dimension(
                    "projection needs one expression per ambient coordinate".into(),
                ));
            }
        }
        Ok(Self {
            ambient,
            dim: ambient - equations.len(),
            shape: Shape::Implicit {
                equations,
                projection,
            },
            tubular_radius,
            tol: Tolerances::default(),
        })
    }

    pub fn with_tubular_radius(mut self, radius: f64) -> Self {
        self.tubular_radius = radius;
        self
    }

    pub fn with_tolerances(mut self, tol: Tolerances) -> Self {
        self.tol = tol;
        self
    }

    pub fn ambient_dim(&self) -> usize {
        self.ambient
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn codim(&self) -> usize {
        self.ambient - self.dim
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn tubular_radius(&self) -> f64 {
        self.tubular_radius
    }

    pub fn tolerances(&self) -> &Tolerances {
        &self.tol
    }

    fn check_len(&self, x: &DVector<f64>) -> Result<()> {
        if x.len() != self.ambient {
            return Err(ManifoldError::Dimension(format!(
                "point has {} coordinates, ambient dimension is {}",
                x.len(),
                self.ambient
            )));
        }
        Ok(())
    }

    /// `F(x)`.
    pub fn constraint(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        Ok(match &self.shape {
            Shape::Circle | Shape::Sphere => DVector::from_element(1, x.norm_squared() - 1.0),
            Shape::Affine { a, c } => a * x - c,
            Shape::Implicit { equations, .. } => {
                let mut f = DVector::zeros(equations.len());
                for (l, e) in equations.iter().enumerate() {
                    f[l] = e.eval_at(x.as_slice(), 0.0)?;
                }
                f
            }
        })
    }

    /// `JF(x)`, a `(d-m)×d` matrix.
    pub fn constraint_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(x)?;
        Ok(match &self.shape {
            Shape::Circle | Shape::Sphere => {
                DMatrix::from_row_slice(1, x.len(), (2.0 * x).as_slice())
            }
            Shape::Affine { a, .. } => a.clone(),
            Shape::Implicit { equations, .. } => {
                let mut j = DMatrix::zeros(equations.len(), self.ambient);
                for (l, e) in equations.iter().enumerate() {
                    j.set_row(l, &e.grad_at(x.as_slice(), 0.0)?.transpose());
                }
                j
            }
        })
    }

    fn constraint_hessians(&self, x: &DVector<f64>) -> Result<Vec<DMatrix<f64>>> {
        let d = self.ambient;
        Ok(match &self.shape {
            Shape::Circle | Shape::Sphere => vec![DMatrix::identity(d, d) * 2.0],
            Shape::Affine { a, .. } => vec![DMatrix::zeros(d, d); a.nrows()],
            Shape::Implicit { equations, .. } => equations
                .iter()
                .map(|e| e.hess_at(x.as_slice(), 0.0))
                .collect::<std::result::Result<_, _>>()?,
        })
    }

    pub fn residual(&self, x: &DVector<f64>) -> Result<f64> {
        Ok(self.constraint(x)?.norm())
    }

    pub fn is_on(&self, x: &DVector<f64>) -> bool {
        self.residual(x)
            .map(|r| r <= self.tol.on_manifold)
            .unwrap_or(false)
    }

    /// `P`, `Q` at a point of `M`.
    pub fn projectors(&self, y: &DVector<f64>) -> Result<Projector> {
        let residual = self.residual(y)?;
        if residual > self.tol.on_manifold {
            return Err(ManifoldError::NotOnManifold { residual });
        }
        self.projectors_unchecked(y)
    }

    /// `Q = JFᵀ(JF JFᵀ)⁻¹JF`, `P = I − Q`, without the on-manifold check.
    pub fn projectors_unchecked(&self, x: &DVector<f64>) -> Result<Projector> {
        let jf = self.constraint_jacobian(x)?;
        let gram = &jf * jf.transpose();
        let min = gram.clone().symmetric_eigenvalues().min();
        if min <= self.tol.rank {
            return Err(ManifoldError::RankDeficient {
                min_eigenvalue: min,
            });
        }
        let chol = gram.cholesky().ok_or(ManifoldError::RankDeficient {
            min_eigenvalue: min,
        })?;
        let q = jf.transpose() * chol.solve(&jf);
        let q = (&q + q.transpose()) * 0.5;
        let p = DMatrix::identity(self.ambient, self.ambient) - &q;
        Ok(Projector { p, q })
    }

    /// `π(x) = argmin{|x − y| : y ∈ M}`.
    pub fn metric_project(&self, x: &DVector<f64>) -> Result<DVector<f64>> {
        self.check_len(x)?;
        match &self.shape {
            Shape::Circle | Shape::Sphere => {
                let r = x.norm();
                if r == 0.0 || !r.is_finite() {
                    return Err(ManifoldError::Singular);
                }
                Ok(x / r)
            }
            Shape::Affine { a, c } => {
                let gram = a * a.transpose();
                let chol = gram.cholesky().ok_or(ManifoldError::Singular)?;
                Ok(x - a.transpose() * chol.solve(&(a * x - c)))
            }
            Shape::Implicit {
                projection: Some(pi),
                ..
            } => {
                let mut y = DVector::zeros(self.ambient);
                for (k, e) in pi.iter().enumerate() {
                    y[k] = e.eval_at(x.as_slice(), 0.0)?;
                }
                Ok(y)
            }
            Shape::Implicit { .. } => Ok(self.newton_project(x)?.0),
        }
    }

    fn lagrange_residual(
        &self,
        x: &DVector<f64>,
        y: &DVector<f64>,
        lambda: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        let d = self.ambient;
        let k = self.codim();
        let jf = self.constraint_jacobian(y)?;
        let f = self.constraint(y)?;
        let mut g = DVector::zeros(d + k);
        g.rows_mut(0, d)
            .copy_from(&(y + jf.transpose() * lambda - x));
        g.rows_mut(d, k).copy_from(&f);
        Ok(g)
    }

    fn lagrange_jacobian(&self, y: &DVector<f64>, lambda: &DVector<f64>) -> Result<DMatrix<f64>> {
        let d = self.ambient;
        let k = self.codim();
        let jf = self.constraint_jacobian(y)?;
        let hf = self.constraint_hessians(y)?;
        let mut top = DMatrix::identity(d, d);
        for (l, h) in hf.iter().enumerate() {
            top += h * lambda[l];
        }
        let mut kmat = DMatrix::zeros(d + k, d + k);
        kmat.view_mut((0, 0), (d, d)).copy_from(&top);
        kmat.view_mut((0, d), (d, k)).copy_from(&jf.transpose());
        kmat.view_mut((d, 0), (k, d)).copy_from(&jf);
        Ok(kmat)
    }

    /// Damped Newton on the Lagrange system, starting from `y = x`, `λ = 0`.
    /// Returns the foot point and the final Lagrange Jacobian.
    fn newton_project(&self, x: &DVector<f64>) -> Result<(DVector<f64>, DMatrix<f64>)> {
        let d = self.ambient;
        let k = self.codim();
        let mut y = x.clone();
        let mut lambda = DVector::zeros(k);
        let mut g = self.lagrange_residual(x, &y, &lambda)?;
        let mut norm = g.norm();
        let mut converged_at = None;
        for iter in 0..self.tol.max_iter {
            let kmat = self.lagrange_jacobian(&y, &lambda)?;
            let step = kmat.lu().solve(&(-&g)).ok_or(ManifoldError::Singular)?;
            let mut scale = 1.0;
            let mut accepted = false;
            for _ in 0..=MAX_HALVINGS {
                let y_try = &y + step.rows(0, d) * scale;
                let l_try = &lambda + step.rows(d, k) * scale;
                if let Ok(g_try) = self.lagrange_residual(x, &y_try, &l_try) {
                    let n_try = g_try.norm();
                    if n_try.is_finite() && n_try <= norm {
                        y = y_try;
                        lambda = l_try;
                        g = g_try;
                        norm = n_try;
                        accepted = true;
                        break;
                    }
                }
                scale *= 0.5;
            }
            if converged_at.is_some() || !accepted {
                // one polishing step past the tolerance, or no further progress
                if norm <= self.tol.newton {
                    break;
                }
                return Err(ManifoldError::NewtonFailed {
                    iterations: iter + 1,
                    residual: norm,
                });
            }
            if norm <= self.tol.newton {
                converged_at = Some(iter);
            }
        }
        if norm > self.tol.newton {
            return Err(ManifoldError::NewtonFailed {
                iterations: self.tol.max_iter,
                residual: norm,
            });
        }
        let distance = (x - &y).norm();
        if distance >= self.tubular_radius {
            return Err(ManifoldError::OutsideTube {
                distance,
                radius: self.tubular_radius,
            });
        }
        let kmat = self.lagrange_jacobian(&y, &lambda)?;
        Ok((y, kmat))
    }

    /// `Jπ(x)`; equals `P(y)` at points of `M`.
    pub fn pi_jacobian(&self, x: &DVector<f64>) -> Result<DMatrix<f64>> {
        self.check_len(x)?;
        let d = self.ambient;
        match &self.shape {
            Shape::Circle => {
                let (u, v) = (x[0], x[1]);
                let r2 = u * u + v * v;
                if r2 == 0.0 {
                    return Err(ManifoldError::Singular);
                }
                let s = r2.powf(-1.5);
                Ok(DMatrix::from_row_slice(
                    2,
                    2,
                    &[v * v * s, -u * v * s, -u * v * s, u * u * s],
                ))
            }
            Shape::Sphere => {
                let r = x.norm();
                if r == 0.0 {
                    return Err(ManifoldError::Singular);
                }
                Ok((DMatrix::identity(d, d) - x * x.transpose() / (r * r)) / r)
            }
            Shape::Affine { .. } => Ok(self.projectors_unchecked(x)?.p),
            Shape::Implicit {
                projection: Some(pi),
                ..
            } => {
                let mut j = DMatrix::zeros(d, d);
                for (k, e) in pi.iter().enumerate() {
                    j.set_row(k, &e.grad_at(x.as_slice(), 0.0)?.transpose());
                }
                Ok(j)
            }
            Shape::Implicit { .. } => {
                // implicit differentiation of the Lagrange system at the solution
                let (_, kmat) = self.newton_project(x)?;
                let mut rhs = DMatrix::zeros(d + self.codim(), d);
                rhs.view_mut((0, 0), (d, d)).fill_with_identity();
                let sol = kmat.lu().solve(&rhs).ok_or(ManifoldError::Singular)?;
                Ok(sol.rows(0, d).into_owned())
            }
        }
    }

    /// `∂²πᵏ/∂xⁱ∂xʲ(x)` for every component `k`.
    pub fn pi_hessian(&self, x: &DVector<f64>) -> Result<PiHessian> {
        self.check_len(x)?;
        let d = self.ambient;
        match &self.shape {
            Shape::Circle => {
                let (u, v) = (x[0], x[1]);
                let r2 = u * u + v * v;
                if r2 == 0.0 {
                    return Err(ManifoldError::Singular);
                }
                let s = r2.powf(-2.5);
                let h1 = DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        -3.0 * u * v * v,
                        2.0 * u * u * v - v * v * v,
                        2.0 * u * u * v - v * v * v,
                        2.0 * u * v * v - u * u * u,
                    ],
                ) * s;
                let h2 = DMatrix::from_row_slice(
                    2,
                    2,
                    &[
                        2.0 * u * u * v - v * v * v,
                        2.0 * u * v * v - u * u * u,
                        2.0 * u * v * v - u * u * u,
                        -3.0 * u * u * v,
                    ],
                ) * s;
                Ok(PiHessian {
                    components: vec![h1, h2],
                })
            }
            Shape::Sphere => {
                let r = x.norm();
                if r == 0.0 {
                    return Err(ManifoldError::Singular);
                }
                let r3 = r * r * r;
                let r5 = r3 * r * r;
                let components = (0..d)
                    .map(|k| {
                        DMatrix::from_fn(d, d, |i, j| {
                            let dki = if k == i { 1.0 } else { 0.0 };
                            let dkj = if k == j { 1.0 } else { 0.0 };
                            let dij = if i == j { 1.0 } else { 0.0 };
                            -(dki * x[j] + dkj * x[i] + dij * x[k]) / r3
                                + 3.0 * x[k] * x[i] * x[j] / r5
                        })
                    })
                    .collect();
                Ok(PiHessian { components })
            }
            Shape::Affine { .. } => Ok(PiHessian::zeros(d)),
            Shape::Implicit {
                projection: Some(pi),
                ..
            } => Ok(PiHessian {
                components: pi
                    .iter()
                    .map(|e| e.hess_at(x.as_slice(), 0.0))
                    .collect::<std::result::Result<_, _>>()?,
            }),
            Shape::Implicit { .. } => {
                let h = self.tol.fd_step;
                let mut components = vec![DMatrix::zeros(d, d); d];
                for j in 0..d {
                    let mut xp = x.clone();
                    let mut xm = x.clone();
                    xp[j] += h;
                    xm[j] -= h;
                    let dj = (self.pi_jacobian(&xp)? - self.pi_jacobian(&xm)?) / (2.0 * h);
                    for (k, comp) in components.iter_mut().enumerate() {
                        for i in 0..d {
                            comp[(i, j)] = dj[(k, i)];
                        }
                    }
                }
                for comp in components.iter_mut() {
                    *comp = (&*comp + comp.transpose()) * 0.5;
                }
                Ok(PiHessian { components })
            }
        }
    }

    /// `∂²π(y)(v, w)`.
    pub fn second_derivative(
        &self,
        x: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<DVector<f64>> {
        Ok(self.pi_hessian(x)?.apply(v, w))
    }

    pub fn hessian_structure_check(
        &self,
        y: &DVector<f64>,
        v: &DVector<f64>,
        w: &DVector<f64>,
    ) -> Result<StructureReport> {
        let proj = self.projectors(y)?;
        let hess = self.pi_hessian(y)?;
        let (vb, vc) = (proj.tangent(v), proj.normal(v));
        let (wb, wc) = (proj.tangent(w), proj.normal(w));
        Ok(StructureReport {
            tangent_tangent: proj.tangent(&hess.apply(&vb, &wb)).norm(),
            tangent_normal: proj.normal(&hess.apply(&vb, &wc)).norm(),
            normal_normal: hess.apply(&vc, &wc).norm(),
        })
    }

    /// Deterministic on-manifold sample points. Implicit manifolds need an
    /// `anchor` on `M`; samples are projections of Gaussian perturbations of it.
    pub fn sample_points(
        &self,
        count: usize,
        seed: u64,
        anchor: Option<&DVector<f64>>,
    ) -> Result<Vec<DVector<f64>>> {
        let d = self.ambient;
        let mut stream = StreamKey::new(seed).with_salt(0x5a4d_504c).stream(0);
        let mut out = Vec::with_capacity(count);
        let spread = match &self.shape {
            Shape::Implicit { .. } => 0.3 * self.tubular_radius.min(1.0),
            _ => 1.0,
        };
        let mut attempts = 0;
        while out.len() < count {
            attempts += 1;
            if attempts > 100 * count + 100 {
                return Err(ManifoldError::Singular);
            }
            let noise = DVector::from_fn(d, |_, _| stream.next_normal());
            let x = match (&self.shape, anchor) {
                (Shape::Circle | Shape::Sphere | Shape::Affine { .. }, _) => noise,
                (Shape::Implicit { .. }, Some(a)) => a + noise * spread,
                (Shape::Implicit { .. }, None) => {
                    return Err(ManifoldError::Dimension(
                        "implicit manifolds need an anchor point for sampling".into(),
                    ))
                }
            };
            if let Ok(y) = self.metric_project(&x) {
                if self.is_on(&y) {
                    out.push(y);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn v(xs: &[f64]) -> DVector<f64> {
        DVector::from_column_slice(xs)
    }

    fn assert_mat(a: &DMatrix<f64>, b: &[f64], tol: f64) {
        let b = DMatrix::from_row_slice(a.nrows(), a.ncols(), b);
        assert!((a - &b).norm() <= tol, "{a} vs {b}");
    }

    #[test]
    fn circle_projectors_at_east_pole() {
        let m = Manifold::circle();
        let pr = m.projectors(&v(&[1.0, 0.0])).unwrap();
        assert_mat(&pr.p, &[0.0, 0.0, 0.0, 1.0], 1e-15);
        assert_mat(&pr.q, &[1.0, 0.0, 0.0, 0.0], 1e-15);
    }

    #[test]
    fn circle_normal_projector_at_thirty_degrees() {
        let m = Manifold::circle();
        let s3 = 3f64.sqrt();
        let pr = m.projectors(&v(&[s3 / 2.0, 0.5])).unwrap();
        assert_mat(&pr.q, &[0.75, s3 / 4.0, s3 / 4.0, 0.25], 1e-14);
    }

    #[test]
    fn affine_line_projector() {
        let m = Manifold::affine(DMatrix::from_row_slice(1, 2, &[0.0, 1.0]), v(&[0.0])).unwrap();
        let pr = m.projectors(&v(&[3.7, 0.0])).unwrap();
        assert_mat(&pr.p, &[1.0, 0.0, 0.0, 0.0], 0.0);
    }

    #[test]
    fn projectors_reject_off_manifold_points() {
        let m = Manifold::circle();
        assert!(matches!(
            m.projectors(&v(&[1.1, 0.0])),
            Err(ManifoldError::NotOnManifold { .. })
        ));
    }

    #[test]
    fn circle_metric_projection() {
        let m = Manifold::circle();
        assert_eq!(m.metric_project(&v(&[2.0, 0.0])).unwrap(), v(&[1.0, 0.0]));
        let y = m.metric_project(&v(&[3.0, 4.0])).unwrap();
        assert!((y - v(&[0.6, 0.8])).norm() < 1e-15);
        assert_eq!(
            m.metric_project(&v(&[0.0, 0.0])),
            Err(ManifoldError::Singular)
        );
    }

    #[test]
    fn circle_implicit_fallback_is_singular_at_origin() {
        let f = Expr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        let m = Manifold::implicit(vec![f], None, 1.0).unwrap();
        assert!(m.metric_project(&v(&[0.0, 0.0])).is_err());
        let y = m.metric_project(&v(&[3.0, 4.0]).scale(0.25)).unwrap();
        assert!((y - v(&[0.6, 0.8])).norm() < 1e-12);
    }

    #[test]
    fn circle_derivatives_at_east_pole() {
        let m = Manifold::circle();
        let y = v(&[1.0, 0.0]);
        assert_mat(&m.pi_jacobian(&y).unwrap(), &[0.0, 0.0, 0.0, 1.0], 0.0);
        let h = m.pi_hessian(&y).unwrap();
        assert_mat(&h.components[0], &[0.0, 0.0, 0.0, -1.0], 0.0);
        assert_mat(&h.components[1], &[0.0, -1.0, -1.0, 0.0], 0.0);
    }

    #[test]
    fn sphere_matches_circle_formulas() {
        let c = Manifold::circle();
        let s = Manifold::sphere(2).unwrap();
        for x in [v(&[0.3, -1.7]), v(&[2.0, 0.5]), v(&[-0.4, 0.1])] {
            assert!((c.pi_jacobian(&x).unwrap() - s.pi_jacobian(&x).unwrap()).norm() < 1e-13);
            let (hc, hs) = (c.pi_hessian(&x).unwrap(), s.pi_hessian(&x).unwrap());
            for k in 0..2 {
                assert!((&hc.components[k] - &hs.components[k]).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn affine_hessian_vanishes() {
        let m =
            Manifold::affine(DMatrix::from_row_slice(1, 3, &[1.0, 1.0, 1.0]), v(&[1.0])).unwrap();
        let h = m.pi_hessian(&v(&[0.2, 5.0, -1.0])).unwrap();
        assert!(h.components.iter().all(|c| c.norm() == 0.0));
    }

    #[test]
    fn structure_examples() {
        let m = Manifold::circle();
        let y = v(&[1.0, 0.0]);
        let t = v(&[0.0, 1.0]);
        assert_eq!(m.second_derivative(&y, &t, &t).unwrap(), v(&[-1.0, 0.0]));
        let n = v(&[1.0, 0.0]);
        assert_eq!(m.second_derivative(&y, &n, &n).unwrap(), v(&[0.0, 0.0]));
        let s = Manifold::sphere(3).unwrap();
        let y = v(&[0.0, 1.0, 0.0]);
        let e1 = v(&[1.0, 0.0, 0.0]);
        assert_eq!(
            s.second_derivative(&y, &e1, &e1).unwrap(),
            v(&[0.0, -1.0, 0.0])
        );
        let r = s
            .hessian_structure_check(&y, &v(&[0.3, 0.7, -0.2]), &v(&[-1.0, 0.4, 0.9]))
            .unwrap();
        assert!(r.max() < 1e-14);
    }

    #[test]
    fn paraboloid_projection_is_orthogonal() {
        let m = Manifold::paraboloid();
        let x = v(&[0.3, -0.2, 0.25]);
        let y = m.metric_project(&x).unwrap();
        assert!(m.residual(&y).unwrap() < 1e-12);
        let pr = m.projectors(&y).unwrap();
        assert!((pr.p * (&x - &y)).norm() < 1e-12);
        // idempotent
        let yy = m.metric_project(&y).unwrap();
        assert!((yy - y).norm() < 1e-12);
    }

    #[test]
    fn fallback_derivatives_match_analytic_circle() {
        let f = Expr::parse("x1^2 + x2^2 - 1", 2).unwrap();
        let implicit = Manifold::implicit(vec![f], None, 0.9).unwrap();
        let circle = Manifold::circle();
        for x in [v(&[0.9, 0.5]), v(&[-0.7, 0.6]), v(&[0.2, -1.3])] {
            let ja = circle.pi_jacobian(&x).unwrap();
            let jf = implicit.pi_jacobian(&x).unwrap();
            assert!((&ja - &jf).norm() <= 1e-10 * ja.norm(), "{ja} {jf}");
            let ha = circle.pi_hessian(&x).unwrap();
            let hf = implicit.pi_hessian(&x).unwrap();
            for k in 0..2 {
                let scale = ha.components[k].norm();
                assert!((&ha.components[k] - &hf.components[k]).norm() <= 1e-5 * scale);
            }
        }
    }

    #[test]
    fn sampled_projectors_satisfy_algebra() {
        let cases = vec![
            Manifold::circle(),
            Manifold::sphere(4).unwrap(),
            Manifold::affine(DMatrix::from_row_slice(1, 3, &[1.0, 2.0, -1.0]), v(&[0.5])).unwrap(),
        ];
        for m in cases {
            for y in m.sample_points(20, 3, None).unwrap() {
                let rep = m.projectors(&y).unwrap().report();
                assert!(rep.max_defect() <= 1e-10);
                assert_eq!(rep.rank_q, m.codim());
            }
        }
        let p = Manifold::paraboloid();
        let anchor = v(&[0.0, 0.0, 0.0]);
        for y in p.sample_points(20, 3, Some(&anchor)).unwrap() {
            let rep = p.projectors(&y).unwrap().report();
            assert!(rep.max_defect() <= 1e-10);
            assert_eq!(rep.rank_q, 1);
        }
    }
}
