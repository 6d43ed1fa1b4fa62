//! JSON run configuration. Every section rejects unknown keys; optional
//! sections fall back to the defaults below.

use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Deserializer, Serialize};

use sde_projection::expr::Expr;
use sde_projection::manifold::Manifold;
use sde_projection::projection::ProjectionKind;
use sde_projection::sde::{Form, SdeSpec};
use sde_projection::simulate::{Retraction, Scheme, SimConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub manifold: ManifoldSection,
    pub sde: SdeSection,
    pub y0: Vec<f64>,
    #[serde(default)]
    pub sim: SimSection,
    #[serde(default)]
    pub output: OutputSection,
    #[serde(default)]
    pub project: ProjectSection,
    #[serde(default)]
    pub errors: ErrorsSection,
    #[serde(default)]
    pub taylor: TaylorSection,
    #[serde(default)]
    pub check: CheckSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum ManifoldSection {
    // Empty braces keep unknown keys rejected on field-less variants.
    Circle {},
    Sphere {
        ambient: usize,
    },
    Affine {
        /// Rows of `A` in `{x : A x = c}`.
        a: Vec<Vec<f64>>,
        c: Vec<f64>,
    },
    Paraboloid {},
    Implicit {
        equations: Vec<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        projection: Option<Vec<String>>,
        tubular_radius: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum FormName {
    Ito,
    Stratonovich,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SdeSection {
    pub form: FormName,
    /// `d` rows of `n` expressions; column `γ` is `σ_γ`.
    pub sigma: Vec<Vec<String>>,
    pub drift: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rho: Option<Vec<Vec<f64>>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SchemeName {
    Auto,
    EulerMaruyama,
    Heun,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RetractionName {
    None,
    MetricProject,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimSection {
    pub dt: f64,
    pub t_max: f64,
    pub n_paths: usize,
    pub seed: u64,
    /// Absent: half the tubular radius. `null`: never stop.
    #[serde(deserialize_with = "present", skip_serializing_if = "Option::is_none")]
    pub stop_radius: Option<Option<f64>>,
    pub retraction: RetractionName,
    pub scheme: SchemeName,
    pub substeps: usize,
    pub record_every: usize,
}

fn present<'de, D: Deserializer<'de>>(d: D) -> Result<Option<Option<f64>>, D::Error> {
    Option::<f64>::deserialize(d).map(Some)
}

impl Default for SimSection {
    fn default() -> Self {
        let d = SimConfig::default();
        Self {
            dt: d.dt,
            t_max: d.t_max,
            n_paths: d.n_paths,
            seed: d.seed,
            stop_radius: None,
            retraction: RetractionName::None,
            scheme: SchemeName::Auto,
            substeps: d.substeps,
            record_every: d.record_every,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    pub dir: String,
    pub plots: bool,
    /// Number of leading paths written to `paths.csv`.
    pub dump_paths: usize,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: "out".into(),
            plots: true,
            dump_paths: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ProjectSection {
    /// Evaluation points; empty means `y0`.
    pub points: Vec<Vec<f64>>,
    pub t: f64,
    pub tolerance: f64,
}

impl Default for ProjectSection {
    fn default() -> Self {
        Self {
            points: Vec::new(),
            t: 0.0,
            tolerance: sde_projection::projection::DEFAULT_CLASSIFY_TOL,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum CompanionName {
    Stratonovich,
    ItoVector,
    ItoJet,
    /// The original SDE itself; its errors vanish identically.
    Original,
}

impl CompanionName {
    pub fn name(self) -> &'static str {
        match self {
            Self::Stratonovich => "stratonovich",
            Self::ItoVector => "ito-vector",
            Self::ItoJet => "ito-jet",
            Self::Original => "original",
        }
    }

    pub fn projection(self) -> Option<ProjectionKind> {
        match self {
            Self::Stratonovich => Some(ProjectionKind::Stratonovich),
            Self::ItoVector => Some(ProjectionKind::ItoVector),
            Self::ItoJet => Some(ProjectionKind::ItoJet),
            Self::Original => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ErrorsSection {
    pub companions: Vec<CompanionName>,
    /// Time at which orderings are summarised.
    pub checkpoint: f64,
    /// Also compute the time-symmetric error.
    pub symmetric: bool,
}

impl Default for ErrorsSection {
    fn default() -> Self {
        Self {
            companions: vec![
                CompanionName::Stratonovich,
                CompanionName::ItoVector,
                CompanionName::ItoJet,
            ],
            checkpoint: 0.1,
            symmetric: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TaylorSection {
    pub t_fit: f64,
}

impl Default for TaylorSection {
    fn default() -> Self {
        Self { t_fit: 0.05 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CheckSection {
    /// Random on-manifold points per check.
    pub samples: usize,
    pub seed: u64,
    pub tolerance: f64,
    /// Expected outcome of the fibering check; `None` only reports it.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub expect_fibering: Option<bool>,
    /// Also require the original SDE to be tangent.
    pub tangent_source: bool,
}

impl Default for CheckSection {
    fn default() -> Self {
        Self {
            samples: 100,
            seed: 7,
            tolerance: 1e-8,
            expect_fibering: None,
            tangent_source: false,
        }
    }
}

/// Core objects built from a validated configuration.
pub struct Run {
    pub config: RunConfig,
    pub manifold: Arc<Manifold>,
    pub sde: Arc<SdeSpec>,
    pub y0: DVector<f64>,
    pub sim: SimConfig,
}

fn invalid(msg: impl Into<String>) -> CliError {
    CliError::Validation(msg.into())
}

fn matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, CliError> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(format!(
            "{what} must be a non-empty rectangular matrix"
        )));
    }
    Ok(DMatrix::from_row_iterator(
        rows.len(),
        ncols,
        rows.iter().flatten().copied(),
    ))
}

impl ManifoldSection {
    pub fn build(&self) -> Result<Manifold, CliError> {
        let man = match self {
            Self::Circle {} => Manifold::circle(),
            Self::Sphere { ambient } => Manifold::sphere(*ambient)?,
            Self::Affine { a, c } => {
                Manifold::affine(matrix(a, "affine A")?, DVector::from_column_slice(c))?
            }
            Self::Paraboloid {} => Manifold::paraboloid(),
            Self::Implicit {
                equations,
                projection,
                tubular_radius,
            } => {
                if !positive(*tubular_radius) {
                    return Err(invalid("tubular_radius must be positive"));
                }
                let parse_all = |list: &[String], d: usize| {
                    list.iter()
                        .map(|s| Expr::parse(s, d))
                        .collect::<Result<Vec<_>, _>>()
                };
                let d = implicit_dim(equations)?;
                let eqs = parse_all(equations, d)?;
                let proj = projection.as_deref().map(|p| parse_all(p, d)).transpose()?;
                Manifold::implicit(eqs, proj, *tubular_radius)?
            }
        };
        Ok(man)
    }
}

/// False for NaN as well as non-positive values.
fn positive(x: f64) -> bool {
    x > 0.0
}

/// Ambient dimension of implicit equations: the largest `xk` index used.
fn implicit_dim(equations: &[String]) -> Result<usize, CliError> {
    let mut d = 0;
    for eq in equations {
        let b = eq.as_bytes();
        for (i, c) in b.iter().enumerate() {
            let starts = *c == b'x' && (i == 0 || !b[i - 1].is_ascii_alphanumeric());
            if !starts {
                continue;
            }
            let digits: String = eq[i + 1..]
                .chars()
                .take_while(char::is_ascii_digit)
                .collect();
            if let Ok(k) = digits.parse::<usize>() {
                d = d.max(k);
            }
        }
    }
    if d == 0 {
        return Err(invalid("implicit equations reference no coordinates"));
    }
    Ok(d)
}

impl SdeSection {
    pub fn build(&self) -> Result<SdeSpec, CliError> {
        let d = self.drift.len();
        if d == 0 || self.sigma.len() != d {
            return Err(invalid(format!(
                "sigma needs one row per drift component ({d})"
            )));
        }
        let n = self.sigma[0].len();
        if n == 0 || self.sigma.iter().any(|r| r.len() != n) {
            return Err(invalid("sigma rows must all have the same non-zero length"));
        }
        let rho = self.rho.as_deref().map(|r| matrix(r, "rho")).transpose()?;
        let form = match self.form {
            FormName::Ito => Form::Ito,
            FormName::Stratonovich => Form::Stratonovich,
        };
        let sigma: Vec<&str> = self.sigma.iter().flatten().map(String::as_str).collect();
        let drift: Vec<&str> = self.drift.iter().map(String::as_str).collect();
        Ok(SdeSpec::parse(form, &sigma, n, &drift, rho)?)
    }
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self, CliError> {
        serde_json::from_str(text).map_err(|e| invalid(format!("config: {e}")))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serialises")
    }

    /// Validates the configuration and builds the core objects.
    pub fn build(self) -> Result<Run, CliError> {
        let manifold = self.manifold.build()?;
        let sde = self.sde.build()?;
        let d = manifold.ambient_dim();
        if sde.drift_exprs().len() != d {
            return Err(invalid(format!(
                "sde has dimension {}, manifold lives in R^{d}",
                sde.drift_exprs().len()
            )));
        }
        if self.y0.len() != d {
            return Err(invalid(format!(
                "y0 has {} entries, expected {d}",
                self.y0.len()
            )));
        }
        let y0 = DVector::from_column_slice(&self.y0);
        let residual = manifold.residual(&y0)?;
        if residual > manifold.tolerances().on_manifold {
            return Err(invalid(format!(
                "y0 is off the manifold (residual {residual:.3e})"
            )));
        }
        for p in &self.project.points {
            if p.len() != d {
                return Err(invalid(format!(
                    "project point has {} entries, expected {d}",
                    p.len()
                )));
            }
        }
        if self.errors.companions.is_empty() {
            return Err(invalid("errors.companions must not be empty"));
        }
        if !positive(self.errors.checkpoint) || !positive(self.taylor.t_fit) {
            return Err(invalid("checkpoint and t_fit must be positive"));
        }
        if self.check.samples == 0 || !positive(self.check.tolerance) {
            return Err(invalid("check needs samples >= 1 and a positive tolerance"));
        }
        let s = &self.sim;
        let stop_radius = match s.stop_radius {
            Some(r) => r,
            None => Some(manifold.tubular_radius() / 2.0).filter(|r| r.is_finite()),
        };
        let sim = SimConfig {
            dt: s.dt,
            t_max: s.t_max,
            n_paths: s.n_paths,
            seed: s.seed,
            stop_radius,
            retraction: match s.retraction {
                RetractionName::None => Retraction::None,
                RetractionName::MetricProject => Retraction::MetricProject,
            },
            scheme: match s.scheme {
                SchemeName::Auto => Scheme::Auto,
                SchemeName::EulerMaruyama => Scheme::EulerMaruyama,
                SchemeName::Heun => Scheme::Heun,
            },
            substeps: s.substeps,
            record_every: s.record_every,
            ..SimConfig::default()
        };
        sim.validate().map_err(|e| invalid(e.to_string()))?;
        Ok(Run {
            config: self,
            manifold: Arc::new(manifold),
            sde: Arc::new(sde),
            y0,
            sim,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = r#"{
        "manifold": {"kind": "circle"},
        "sde": {"form": "ito", "sigma": [["x2"], ["x1"]], "drift": ["0", "0"]},
        "y0": [1, 0]
    }"#;

    #[test]
    fn minimal_config_gets_defaults() {
        let run = RunConfig::from_json(MINIMAL).unwrap().build().unwrap();
        assert_eq!(run.sim.stop_radius, Some(0.5));
        assert_eq!(run.sim.dt, 1e-3);
        assert_eq!(run.config.errors.companions.len(), 3);
    }

    #[test]
    fn null_stop_radius_disables_stopping() {
        let text = MINIMAL.replace(r#""y0""#, r#""sim": {"stop_radius": null}, "y0""#);
        let run = RunConfig::from_json(&text).unwrap().build().unwrap();
        assert_eq!(run.sim.stop_radius, None);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = MINIMAL.replace(r#""y0""#, r#""colour": 1, "y0""#);
        assert!(matches!(
            RunConfig::from_json(&text),
            Err(CliError::Validation(_))
        ));
        let text = MINIMAL.replace(r#""drift""#, r#""drfit": [], "drift""#);
        assert!(RunConfig::from_json(&text).is_err());
        let text = MINIMAL.replace(r#"{"kind": "circle"}"#, r#"{"kind": "circle", "r": 2}"#);
        assert!(RunConfig::from_json(&text).is_err());
    }

    #[test]
    fn off_manifold_start_is_rejected() {
        let text = MINIMAL.replace("[1, 0]", "[1.1, 0]");
        let err = RunConfig::from_json(&text).unwrap().build().err().unwrap();
        assert!(matches!(err, CliError::Validation(_)));
    }

    #[test]
    fn implicit_dimension_from_variables() {
        assert_eq!(implicit_dim(&["x3 - x1^2 - x2^2".into()]).unwrap(), 3);
        assert_eq!(implicit_dim(&["exp(x2) - 1".into()]).unwrap(), 2);
        assert!(implicit_dim(&["t".into()]).is_err());
    }

    #[test]
    fn round_trips_through_json() {
        let cfg = RunConfig::from_json(MINIMAL).unwrap();
        let again = RunConfig::from_json(&cfg.to_json()).unwrap();
        assert_eq!(cfg, again);
    }
}
