use std::path::Path;

use plotters::prelude::*;

use super::HarnessError;

/// A named curve of (x, y) points.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

impl Series {
    /// RMSE trace indexed from round 1.
    pub fn from_trace(name: impl Into<String>, trace: &[f64]) -> Series {
        Series {
            name: name.into(),
            points: trace.iter().enumerate().map(|(i, &y)| ((i + 1) as f64, y)).collect(),
        }
    }
}

fn plot_err(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Plot(e.to_string())
}

/// SVG line chart with one legend entry per series.
pub fn plot_rmse(path: &Path, title: &str, series: &[Series]) -> Result<(), HarnessError> {
    let pts = series.iter().flat_map(|s| s.points.iter());
    let (mut x1, mut y0, mut y1) = (1.0f64, f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
        x1 = x1.max(x);
        y0 = y0.min(y);
        y1 = y1.max(y);
    }
    if !y0.is_finite() {
        (y0, y1) = (0.0, 1.0);
    }
    let pad = ((y1 - y0) * 0.05).max(1e-6);

    let root = SVGBackend::new(path, (900, 540)).into_drawing_area();
    root.fill(&WHITE).map_err(plot_err)?;
    let mut chart = ChartBuilder::on(&root)
        .caption(title, ("sans-serif", 22))
        .margin(12)
        .x_label_area_size(40)
        .y_label_area_size(60)
        .build_cartesian_2d(0.0..x1, (y0 - pad)..(y1 + pad))
        .map_err(plot_err)?;
    chart
        .configure_mesh()
        .x_desc("round")
        .y_desc("RMSE (km/h)")
        .draw()
        .map_err(plot_err)?;
    for (i, s) in series.iter().enumerate() {
        let color = Palette99::pick(i).to_rgba();
        chart
            .draw_series(LineSeries::new(s.points.iter().copied(), color.stroke_width(2)))
            .map_err(plot_err)?
            .label(s.name.as_str())
            .legend(move |(x, y)| PathElement::new(vec![(x, y), (x + 20, y)], color.stroke_width(2)));
    }
    chart
        .configure_series_labels()
        .background_style(WHITE.mix(0.85))
        .border_style(BLACK)
        .position(SeriesLabelPosition::UpperRight)
        .draw()
        .map_err(plot_err)?;
    root.present().map_err(plot_err)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_legend_entry_per_series() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.svg");
        let series = vec![
            Series::from_trace("baseline-low", &[3.0, 2.0, 1.5]),
            Series::from_trace("single-low", &[3.0, 2.5, 2.2]),
            Series::from_trace("sybil-low", &[3.0, 2.9, 2.8]),
        ];
        plot_rmse(&path, "rmse", &series).unwrap();
        let svg = std::fs::read_to_string(&path).unwrap();
        for s in &series {
            assert_eq!(svg.matches(&format!(">\n{}\n<", s.name)).count(), 1, "{}", s.name);
        }
    }
}
