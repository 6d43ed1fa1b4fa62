//! The `project`, `errors`, `taylor` and `check` commands.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use nalgebra::{DMatrix, DVector};

use sde_projection::manifold::Manifold;
use sde_projection::montecarlo::{
    error_series, fit_taylor, record_at, reflected_ensemble, symmetric_series, ErrorSeries,
    FitModel, Series, TaylorFit,
};
use sde_projection::projection::{
    classify, constant_sigma_relation, fibering_check, generator_drift, project_all, ProjectedSde,
    ProjectedTriple, ProjectionKind,
};
use sde_projection::sde::{Coefficients, Form, SdeSpec};
use sde_projection::simulate::{run_ensemble, PathEnsemble};

use crate::config::Run;
use crate::error::CliError;
use crate::output;
use crate::plot;

/// Result of a command: text for stdout and the files it wrote.
#[derive(Debug, Default)]
pub struct Report {
    pub text: String,
    pub files: Vec<PathBuf>,
    pub failures: usize,
}

fn fmt_vec(v: &[f64]) -> String {
    let parts: Vec<String> = v.iter().map(|x| format!("{x:+.6}")).collect();
    format!("({})", parts.join(", "))
}

// ---------------------------------------------------------------- project

struct Row {
    name: &'static str,
    sigma: DMatrix<f64>,
    ito: DVector<f64>,
    tangential: DVector<f64>,
    normal: DVector<f64>,
    strat: DVector<f64>,
}

fn source_row(sde: &SdeSpec, man: &Manifold, y: &DVector<f64>, t: f64) -> Result<Row, CliError> {
    let ito = sde.coefficients(y, t, Form::Ito)?;
    let proj = man.projectors(y)?;
    Ok(Row {
        name: "original",
        tangential: proj.tangent(&ito.drift),
        normal: proj.normal(&ito.drift),
        strat: sde.strat_drift(y, t)?,
        sigma: ito.sigma,
        ito: ito.drift,
    })
}

fn projected_row(p: &ProjectedSde, y: &DVector<f64>, t: f64) -> Result<Row, CliError> {
    let dec = p.decompose(y, t)?;
    Ok(Row {
        name: p.kind().name(),
        ito: &dec.tangential + &dec.normal,
        strat: p.coefficients_on(y, t, Form::Stratonovich)?.drift,
        sigma: dec.sigma_bar,
        tangential: dec.tangential,
        normal: dec.normal,
    })
}

pub fn project(run: &Run, out: &Path) -> Result<Report, CliError> {
    let cfg = &run.config.project;
    let triple = project_all(run.sde.clone(), run.manifold.clone());
    let points: Vec<DVector<f64>> = if cfg.points.is_empty() {
        vec![run.y0.clone()]
    } else {
        cfg.points
            .iter()
            .map(|p| DVector::from_column_slice(p))
            .collect()
    };
    let n = triple.strat.drivers();
    let mut header: Vec<String> = [
        "point",
        "projection",
        "coordinate",
        "ito_drift",
        "tangential_drift",
        "normal_drift",
        "strat_drift",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    header.extend((1..=n).map(|g| format!("sigma_{g}")));
    header.push("classification".into());
    let mut csv = output::Table::new(header);
    let mut text = String::new();
    for (pi, y) in points.iter().enumerate() {
        let residual = run.manifold.residual(y)?;
        if residual > run.manifold.tolerances().on_manifold {
            return Err(CliError::Validation(format!(
                "project point {} is off the manifold (residual {residual:.3e})",
                fmt_vec(y.as_slice())
            )));
        }
        let class = classify(&triple, y, cfg.t, cfg.tolerance)?;
        let mut rows = vec![source_row(&run.sde, &run.manifold, y, cfg.t)?];
        for p in triple.iter() {
            rows.push(projected_row(p, y, cfg.t)?);
        }
        let _ = writeln!(text, "point {} at t = {}", fmt_vec(y.as_slice()), cfg.t);
        for r in &rows {
            let sig: Vec<String> = (0..n)
                .map(|g| fmt_vec(r.sigma.column(g).as_slice()))
                .collect();
            let _ = writeln!(
                text,
                "  {:<13} sigma {}\n                tangential {}  normal {}  strat {}",
                r.name,
                sig.join(" "),
                fmt_vec(r.tangential.as_slice()),
                fmt_vec(r.normal.as_slice()),
                fmt_vec(r.strat.as_slice()),
            );
            for k in 0..y.len() {
                let mut cells = vec![
                    pi.to_string(),
                    r.name.to_string(),
                    (k + 1).to_string(),
                    r.ito[k].to_string(),
                    r.tangential[k].to_string(),
                    r.normal[k].to_string(),
                    r.strat[k].to_string(),
                ];
                cells.extend((0..n).map(|g| r.sigma[(k, g)].to_string()));
                cells.push(class.label().to_string());
                csv.push(cells);
            }
        }
        let _ = writeln!(text, "  classification: {class}");
    }
    let path = out.join("project.csv");
    csv.write(&path)?;
    Ok(Report {
        text,
        files: vec![path],
        failures: 0,
    })
}

// ---------------------------------------------------------------- ensembles

struct Simulation {
    names: Vec<&'static str>,
    ensemble: PathEnsemble,
    series: Vec<ErrorSeries>,
    symmetric: Option<(Vec<f64>, Vec<Series>)>,
}

fn companions<'a>(run: &'a Run, triple: &'a ProjectedTriple) -> Vec<&'a dyn Coefficients> {
    run.config
        .errors
        .companions
        .iter()
        .map(|c| match c.projection() {
            Some(kind) => triple.get(kind) as &dyn Coefficients,
            None => run.sde.as_ref() as &dyn Coefficients,
        })
        .collect()
}

fn simulate(run: &Run) -> Result<Simulation, CliError> {
    let triple = project_all(run.sde.clone(), run.manifold.clone());
    let comps = companions(run, &triple);
    let original: &dyn Coefficients = run.sde.as_ref();
    let ensemble = run_ensemble(original, &comps, &run.manifold, &run.y0, &run.sim)?;
    let series = (0..comps.len())
        .map(|i| error_series(&ensemble, &run.manifold, i))
        .collect::<Result<Vec<_>, _>>()?;
    let symmetric = if run.config.errors.symmetric {
        let back = reflected_ensemble(original, &comps, &run.manifold, &run.y0, &run.sim)?;
        let mut times = Vec::new();
        let mut out = Vec::new();
        for i in 0..comps.len() {
            let (t, s) = symmetric_series(&ensemble, &back, &run.manifold, i)?;
            times = t;
            out.push(s);
        }
        Some((times, out))
    } else {
        None
    };
    Ok(Simulation {
        names: run
            .config
            .errors
            .companions
            .iter()
            .map(|c| c.name())
            .collect(),
        ensemble,
        series,
        symmetric,
    })
}

fn value_se(s: &Series, k: usize) -> String {
    format!("{:.4e} ± {:.1e}", s.values[k], s.se[k])
}

fn lowest(
    series: &[ErrorSeries],
    names: &[&str],
    k: usize,
    pick: fn(&ErrorSeries) -> &Series,
) -> String {
    let mut best = 0;
    for i in 1..series.len() {
        if pick(&series[i]).values[k] < pick(&series[best]).values[k] {
            best = i;
        }
    }
    names[best].to_string()
}

pub fn errors(run: &Run, out: &Path, plots: bool) -> Result<Report, CliError> {
    let sim = simulate(run)?;
    let mut files = Vec::new();
    for (name, es) in sim.names.iter().zip(&sim.series) {
        let path = out.join(format!("errors_{name}.csv"));
        output::error_table(es).write(&path)?;
        files.push(path);
    }
    let error_csvs = files.clone();
    if let Some((times, series)) = &sim.symmetric {
        for (name, s) in sim.names.iter().zip(series) {
            let path = out.join(format!("symmetric_{name}.csv"));
            output::symmetric_table(times, s).write(&path)?;
            files.push(path);
        }
    }
    let path = out.join("geometry.csv");
    output::geometry_table(&sim.ensemble, &run.manifold, &sim.names).write(&path)?;
    files.push(path);
    let dump = run.config.output.dump_paths;
    if dump > 0 {
        let path = out.join("paths.csv");
        output::path_table(&sim.ensemble, &sim.names, dump).write(&path)?;
        files.push(path);
    }
    if plots {
        let path = out.join("errors.svg");
        plot::error_panels(&path, &sim.names, &error_csvs)?;
        files.push(path);
    }

    let mut text = String::new();
    let checkpoint = run.config.errors.checkpoint;
    let first = &sim.series[0];
    match record_at(&first.times, checkpoint)
        .filter(|&k| sim.series.iter().all(|s| k < s.times.len()))
    {
        Some(k) => {
            let _ = writeln!(
                text,
                "t = {:.4} ({} paths surviving)",
                first.times[k], first.n_eff[k]
            );
            let _ = writeln!(
                text,
                "  {:<13} {:>22} {:>22} {:>22}",
                "companion", "weak", "proj_ms", "strong"
            );
            for (name, es) in sim.names.iter().zip(&sim.series) {
                let _ = writeln!(
                    text,
                    "  {:<13} {:>22} {:>22} {:>22}",
                    name,
                    value_se(&es.weak, k),
                    value_se(&es.proj_ms, k),
                    value_se(&es.strong, k)
                );
            }
            let _ = writeln!(
                text,
                "  lowest weak: {}; lowest proj_ms: {}",
                lowest(&sim.series, &sim.names, k, |e| &e.weak),
                lowest(&sim.series, &sim.names, k, |e| &e.proj_ms)
            );
        }
        None => {
            let _ = writeln!(
                text,
                "checkpoint t = {checkpoint} is beyond the surviving series"
            );
        }
    }
    Ok(Report {
        text,
        files,
        failures: 0,
    })
}

// ---------------------------------------------------------------- taylor

pub fn taylor(run: &Run, out: &Path) -> Result<Report, CliError> {
    let sim = simulate(run)?;
    let t_fit = run.config.taylor.t_fit;
    let mut fits: Vec<(&str, &str, TaylorFit)> = Vec::new();
    for (name, es) in sim.names.iter().zip(&sim.series) {
        let plan = [
            ("strong", &es.strong, FitModel::A1Linear),
            ("weak", &es.weak, FitModel::B2Quadratic),
            ("proj_ms", &es.proj_ms, FitModel::C1Linear),
            ("proj_ms", &es.proj_ms, FitModel::C2AfterC1),
        ];
        for (series, s, model) in plan {
            fits.push((name, series, fit_taylor(&es.times, s, t_fit, model)?));
        }
    }
    if let Some((times, series)) = &sim.symmetric {
        for (name, s) in sim.names.iter().zip(series) {
            fits.push((
                name,
                "symmetric",
                fit_taylor(times, s, t_fit, FitModel::C2AfterC1)?,
            ));
        }
    }
    let mut table = output::Table::new(
        [
            "companion",
            "series",
            "model",
            "coefficient",
            "estimate",
            "se",
            "half_width",
            "ols_half_width",
            "t_fit",
            "n_points",
            "residual_rms",
        ]
        .iter()
        .map(|s| s.to_string())
        .collect(),
    );
    let mut text = format!("fit window [0, {t_fit}]\n");
    for (name, series, fit) in &fits {
        for c in &fit.coefficients {
            table.push(vec![
                name.to_string(),
                series.to_string(),
                fit.model.name().to_string(),
                c.name.to_string(),
                c.estimate.to_string(),
                c.se.to_string(),
                c.half_width.to_string(),
                c.ols_half_width.to_string(),
                fit.t_fit.to_string(),
                fit.n_points.to_string(),
                fit.residual_rms.to_string(),
            ]);
            let _ = writeln!(
                text,
                "  {:<13} {:<10} {:<12} {:<3} {:+.5e} ± {:.2e}",
                name,
                series,
                fit.model.name(),
                c.name,
                c.estimate,
                c.half_width
            );
        }
    }
    let path = out.join("taylor.csv");
    table.write(&path)?;
    Ok(Report {
        text,
        files: vec![path],
        failures: 0,
    })
}

// ---------------------------------------------------------------- check

struct Checks {
    table: output::Table,
    text: String,
    failures: usize,
}

impl Checks {
    fn new() -> Self {
        Self {
            table: output::Table::new(
                ["check", "value", "tolerance", "status"]
                    .iter()
                    .map(|s| s.to_string())
                    .collect(),
            ),
            text: String::new(),
            failures: 0,
        }
    }

    fn record(&mut self, name: &str, value: f64, tol: f64, pass: bool) {
        let status = if pass { "pass" } else { "FAIL" };
        if !pass {
            self.failures += 1;
        }
        let _ = writeln!(
            self.text,
            "  {status:<4}  {name:<40} {value:.3e}  (tol {tol:.1e})"
        );
        self.table.push(vec![
            name.into(),
            value.to_string(),
            tol.to_string(),
            status.into(),
        ]);
    }

    fn at_most(&mut self, name: &str, value: f64, tol: f64) {
        self.record(name, value, tol, value <= tol);
    }

    fn skip(&mut self, name: &str, why: &str) {
        let _ = writeln!(self.text, "  skip  {name:<40} {why}");
        self.table.push(vec![
            name.into(),
            String::new(),
            String::new(),
            "skip".into(),
        ]);
    }
}

/// Off-manifold samples along the first normal direction at each point.
fn fiber_samples(man: &Manifold, points: &[DVector<f64>]) -> Result<Vec<DVector<f64>>, CliError> {
    let step = 0.2 * man.tubular_radius().min(1.0);
    let mut out = Vec::new();
    for y in points {
        let q = man.projectors(y)?.q;
        let (mut best, mut norm) = (0, 0.0);
        for c in 0..q.ncols() {
            let n = q.column(c).norm();
            if n > norm {
                (best, norm) = (c, n);
            }
        }
        let dir = q.column(best) / norm;
        for s in [-step, step] {
            out.push(y + &dir * s);
        }
    }
    Ok(out)
}

pub fn check(run: &Run, out: &Path) -> Result<Report, CliError> {
    let cfg = &run.config.check;
    let man = run.manifold.as_ref();
    let tol = cfg.tolerance;
    let points = man.sample_points(cfg.samples, cfg.seed, Some(&run.y0))?;
    let triple = project_all(run.sde.clone(), run.manifold.clone());
    let t = 0.0;
    let mut c = Checks::new();
    let _ = writeln!(
        c.text,
        "{} sample points, tolerance {tol:.1e}",
        points.len()
    );

    let mut algebra: f64 = 0.0;
    let mut rank_ok = true;
    let mut structure: f64 = 0.0;
    for y in &points {
        let rep = man.projectors(y)?.report();
        algebra = algebra.max(rep.max_defect());
        rank_ok &= rep.rank_q == man.codim();
        let d = y.len();
        for (i, j) in [(0, 0), (0, d - 1), (d - 1, d - 1)] {
            let e = |k: usize| DVector::from_fn(d, |r, _| if r == k { 1.0 } else { 0.0 });
            structure = structure.max(man.hessian_structure_check(y, &e(i), &e(j))?.max());
        }
    }
    c.at_most("projector algebra (P, Q)", algebra, 1e-10);
    c.record(
        "rank Q = codimension",
        if rank_ok { 0.0 } else { 1.0 },
        0.0,
        rank_ok,
    );
    c.at_most(
        "Hessian of pi block structure",
        structure,
        man.tolerances().structure,
    );

    let mut tangency: f64 = 0.0;
    let mut shared: f64 = 0.0;
    let mut generator: f64 = 0.0;
    let mut round_trip: f64 = 0.0;
    let mut source_tangency: f64 = 0.0;
    let back = match run.sde.form() {
        Form::Ito => run.sde.to_stratonovich().to_ito(),
        Form::Stratonovich => run.sde.to_ito().to_stratonovich(),
    };
    for y in &points {
        let sigmas: Vec<DMatrix<f64>> = triple
            .iter()
            .map(|p| p.diffusion(y, t))
            .collect::<Result<_, _>>()?;
        for s in &sigmas[1..] {
            shared = shared.max((s - &sigmas[0]).amax());
        }
        for p in triple.iter() {
            for form in [Form::Ito, Form::Stratonovich] {
                tangency = tangency.max(p.tangency_residual(y, t, form)?.max());
            }
        }
        let jet = triple.ito_jet.ito_drift(y, t)?;
        generator = generator.max((jet - generator_drift(&run.sde, man, y, t)?).amax());
        let form = run.sde.form();
        let a = run.sde.coefficients(y, t, form)?.drift;
        let b = back.coefficients(y, t, form)?.drift;
        round_trip = round_trip.max((a - b).amax());
        source_tangency = source_tangency.max(run.sde.tangency_residual(man, y, t)?.max());
    }
    c.at_most("tangency of projected SDEs", tangency, tol);
    c.at_most("shared projected diffusion", shared, tol);
    c.at_most("Ito-jet drift = generator of pi", generator, tol);
    c.at_most("Ito/Stratonovich round trip", round_trip, 1e-12);
    if cfg.tangent_source {
        c.at_most("original SDE tangent", source_tangency, tol);
    } else {
        let _ = writeln!(
            c.text,
            "  info  {:<40} {source_tangency:.3e}",
            "original SDE tangency residual"
        );
    }

    if source_tangency <= tol {
        let strat_first = ProjectedSde::new(
            ProjectionKind::Stratonovich,
            std::sync::Arc::new(run.sde.to_stratonovich()),
            run.manifold.clone(),
        );
        let mut prism: f64 = 0.0;
        for y in &points {
            let a = strat_first.ito_drift(y, t)?;
            let b = triple.ito_vector.ito_drift(y, t)?;
            prism = prism.max((a - b).amax());
        }
        c.at_most("project/convert commute (tangent SDE)", prism, tol);
    } else {
        c.skip(
            "project/convert commute (tangent SDE)",
            "original SDE is not tangent",
        );
    }

    if run.sde.has_constant_sigma() {
        let mut rel: f64 = 0.0;
        for y in &points {
            rel = rel.max(constant_sigma_relation(&triple, y, t)?);
        }
        c.at_most("constant-sigma drift relation", rel, tol);
    } else {
        c.skip(
            "constant-sigma drift relation",
            "sigma depends on the state",
        );
    }

    let samples = fiber_samples(man, &points)?;
    let fib = fibering_check(&run.sde, man, &samples, t)?;
    let dev = fib.sigma_deviation.max(fib.drift_deviation);
    let fib_tol = man.tolerances().structure;
    match cfg.expect_fibering {
        Some(expected) => {
            let name = if expected {
                "fibering property holds"
            } else {
                "fibering property fails"
            };
            c.record(name, dev, fib_tol, fib.holds(fib_tol) == expected);
        }
        None => {
            let _ = writeln!(
                c.text,
                "  info  {:<40} {dev:.3e} ({})",
                "fibering deviation",
                if fib.holds(fib_tol) {
                    "holds"
                } else {
                    "does not hold"
                }
            );
        }
    }

    let path = out.join("check.csv");
    c.table.write(&path)?;
    let _ = writeln!(
        c.text,
        "{}",
        if c.failures == 0 {
            "all checks passed".to_string()
        } else {
            format!("{} check(s) failed", c.failures)
        }
    );
    Ok(Report {
        text: c.text,
        files: vec![path],
        failures: c.failures,
    })
}
