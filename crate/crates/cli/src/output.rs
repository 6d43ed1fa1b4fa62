//! CSV tables. Floats are written in shortest round-trip form, so identical
//! runs give byte-identical files.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use nalgebra::DVector;

use sde_projection::manifold::Manifold;
use sde_projection::montecarlo::{ErrorSeries, Series};
use sde_projection::simulate::PathEnsemble;

use crate::error::CliError;

pub const ERROR_HEADER: [&str; 8] = [
    "t",
    "strong",
    "strong_se",
    "weak",
    "weak_se",
    "projms",
    "projms_se",
    "n_eff",
];

pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: Vec<String>) -> Self {
        Self {
            header,
            rows: Vec::new(),
        }
    }

    pub fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let mut w = csv::Writer::from_writer(BufWriter::new(File::create(path)?));
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn header(cols: &[&str]) -> Vec<String> {
    cols.iter().map(|s| s.to_string()).collect()
}

pub fn error_table(es: &ErrorSeries) -> Table {
    let mut t = Table::new(header(&ERROR_HEADER));
    for k in 0..es.times.len() {
        t.push(vec![
            es.times[k].to_string(),
            es.strong.values[k].to_string(),
            es.strong.se[k].to_string(),
            es.weak.values[k].to_string(),
            es.weak.se[k].to_string(),
            es.proj_ms.values[k].to_string(),
            es.proj_ms.se[k].to_string(),
            es.n_eff[k].to_string(),
        ]);
    }
    t
}

pub fn symmetric_table(times: &[f64], s: &Series) -> Table {
    let mut t = Table::new(header(&["t", "symmetric", "symmetric_se"]));
    for (k, time) in times.iter().enumerate() {
        t.push(vec![
            time.to_string(),
            s.values[k].to_string(),
            s.se[k].to_string(),
        ]);
    }
    t
}

/// Distance from `M` via the metric projection; infinite where it fails.
fn distance(man: &Manifold, v: &[f64]) -> f64 {
    let v = DVector::from_column_slice(v);
    man.metric_project(&v)
        .map(|p| (v - p).norm())
        .unwrap_or(f64::INFINITY)
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Per record: mean `|X|` and max distance of `X` from `M`; for each companion
/// mean `|Y|`, max distance of `Y` from `M`, and max `|Y − π(X)|`, all over
/// surviving paths.
pub fn geometry_table(ens: &PathEnsemble, man: &Manifold, names: &[&str]) -> Table {
    let mut cols = vec!["t".to_string(), "x_norm".into(), "x_dist".into()];
    for n in names {
        cols.extend([
            format!("{n}_norm"),
            format!("{n}_dist"),
            format!("{n}_sup_proj"),
        ]);
    }
    let mut t = Table::new(cols);
    for k in 0..ens.n_records() {
        let mut row = vec![ens.times[k].to_string()];
        let (mut sum, mut count, mut far) = (0.0, 0usize, 0.0f64);
        for p in 0..ens.n_paths() {
            if !ens.alive_x(p, k) {
                continue;
            }
            let x = ens.x(p, k);
            sum += norm(x);
            count += 1;
            far = far.max(match ens.pi_x(p, k) {
                Some(pi) => norm(&x.iter().zip(pi).map(|(a, b)| a - b).collect::<Vec<_>>()),
                None => distance(man, x),
            });
        }
        row.push((sum / count as f64).to_string());
        row.push(far.to_string());
        for i in 0..names.len() {
            let (mut sum, mut count, mut far, mut sup) = (0.0, 0usize, 0.0f64, 0.0f64);
            for p in 0..ens.n_paths() {
                if !ens.alive(p, i, k) {
                    continue;
                }
                let y = ens.y(p, i, k);
                sum += norm(y);
                count += 1;
                far = far.max(distance(man, y));
                if let Some(pi) = ens.pi_x(p, k) {
                    sup = sup.max(norm(
                        &y.iter().zip(pi).map(|(a, b)| a - b).collect::<Vec<_>>(),
                    ));
                }
            }
            row.push((sum / count as f64).to_string());
            row.push(far.to_string());
            row.push(sup.to_string());
        }
        t.push(row);
    }
    t
}

/// Raw states of the first `count` paths, one row per path and record.
pub fn path_table(ens: &PathEnsemble, names: &[&str], count: usize) -> Table {
    let d = ens.dim;
    let mut cols = vec!["path".to_string(), "t".into(), "x_alive".into()];
    cols.extend((1..=d).map(|c| format!("x{c}")));
    cols.extend((1..=d).map(|c| format!("pi_x{c}")));
    for n in names {
        cols.push(format!("{n}_alive"));
        cols.extend((1..=d).map(|c| format!("{n}_{c}")));
    }
    let mut t = Table::new(cols);
    for p in 0..count.min(ens.n_paths()) {
        for k in 0..ens.n_records() {
            let mut row = vec![p.to_string(), ens.times[k].to_string()];
            row.push(u8::from(ens.alive_x(p, k)).to_string());
            row.extend(ens.x(p, k).iter().map(f64::to_string));
            match ens.pi_x(p, k) {
                Some(pi) => row.extend(pi.iter().map(f64::to_string)),
                None => row.extend((0..d).map(|_| "NaN".to_string())),
            }
            for i in 0..names.len() {
                row.push(u8::from(ens.alive(p, i, k)).to_string());
                row.extend(ens.y(p, i, k).iter().map(f64::to_string));
            }
            t.push(row);
        }
    }
    t
}

/// Reads one numeric column of a CSV file written by this crate.
pub fn read_column(path: &Path, column: &str) -> Result<Vec<f64>, CliError> {
    let mut r = csv::Reader::from_path(path)?;
    let idx = r
        .headers()?
        .iter()
        .position(|h| h == column)
        .ok_or_else(|| {
            CliError::Validation(format!("{} has no column {column}", path.display()))
        })?;
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(
            rec[idx]
                .parse()
                .map_err(|_| CliError::Numerical(format!("bad number in {column}")))?,
        );
    }
    Ok(out)
}
