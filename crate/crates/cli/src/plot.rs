//! Static SVG charts drawn from the error CSVs.

use std::path::Path;

use plotters::prelude::*;

use crate::error::CliError;
use crate::output::read_column;

const COLOURS: [RGBColor; 4] = [
    RGBColor(0x1f, 0x77, 0xb4),
    RGBColor(0xd6, 0x27, 0x28),
    RGBColor(0x2c, 0xa0, 0x2c),
    RGBColor(0x94, 0x67, 0xbd),
];

const PANELS: [(&str, &str); 3] = [
    ("weak", "weak error"),
    ("projms", "projection mean-square error"),
    ("strong", "strong error"),
];

fn plot_err<E: std::fmt::Debug>(e: E) -> CliError {
    CliError::Numerical(format!("plot: {e:?}"))
}

/// Three stacked panels (weak, projection, strong) with one line per
/// companion CSV.
pub fn error_panels(
    path: &Path,
    names: &[&str],
    csvs: &[impl AsRef<Path>],
) -> Result<(), CliError> {
    let mut data = Vec::new();
    for csv in csvs {
        let t = read_column(csv.as_ref(), "t")?;
        let cols = PANELS
            .iter()
            .map(|(c, _)| read_column(csv.as_ref(), c))
            .collect::<Result<Vec<_>, _>>()?;
        data.push((t, cols));
    }
    let root = SVGBackend::new(path, (720, 960)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let areas = root.split_evenly((PANELS.len(), 1));
    for (p, area) in areas.iter().enumerate() {
        let t_max = data
            .iter()
            .flat_map(|(t, _)| t.last().copied())
            .fold(0.0, f64::max);
        let y_max = data
            .iter()
            .flat_map(|(_, c)| c[p].iter().copied())
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        let mut chart = ChartBuilder::on(area)
            .caption(PANELS[p].1, ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(30)
            .y_label_area_size(70)
            .build_cartesian_2d(0.0..t_max.max(f64::MIN_POSITIVE), 0.0..y_max * 1.05)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .x_desc("t")
            .y_label_formatter(&|v| format!("{v:.1e}"))
            .draw()
            .map_err(plot_err)?;
        for (i, (t, cols)) in data.iter().enumerate() {
            let colour = COLOURS[i % COLOURS.len()];
            chart
                .draw_series(LineSeries::new(
                    t.iter().zip(&cols[p]).map(|(a, b)| (*a, *b)),
                    colour.stroke_width(2),
                ))
                .map_err(plot_err)?
                .label(names[i])
                .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], colour));
        }
        chart
            .configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .position(SeriesLabelPosition::UpperLeft)
            .draw()
            .map_err(plot_err)?;
    }
    root.present().map_err(plot_err)?;
    Ok(())
}
