use std::path::Path;

use plotters::prelude::*;

use crate::grid::RealField;
use crate::phase_space::{NegativityReport, PhaseSpaceDensity};

type PlotResult = Result<(), String>;

fn range(values: &[f64]) -> (f64, f64) {
    let (lo, hi) = values
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if lo >= hi {
        (lo - 1.0, hi + 1.0)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

pub fn density_overlay(path: &Path, x: &[f64], empirical: &[f64], quantum: &[f64], t: f64) -> PlotResult {
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let (_, top) = range(&[empirical, quantum].concat());
    let mut chart = ChartBuilder::on(&root)
        .caption(format!("ensemble density vs |psi|^2, t = {t:.3}"), ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x[0]..x[x.len() - 1], 0.0..top)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("x")
        .y_desc("density")
        .draw()
        .map_err(|e| e.to_string())?;
    let dx = x[1] - x[0];
    chart
        .draw_series(x.iter().zip(empirical).map(|(&xi, &h)| {
            Rectangle::new([(xi - 0.5 * dx, 0.0), (xi + 0.5 * dx, h)], BLUE.mix(0.3).filled())
        }))
        .map_err(|e| e.to_string())?
        .label("ensemble")
        .legend(|(x, y)| Rectangle::new([(x, y - 5), (x + 15, y + 5)], BLUE.mix(0.3).filled()));
    chart
        .draw_series(LineSeries::new(x.iter().cloned().zip(quantum.iter().cloned()), RED.stroke_width(2)))
        .map_err(|e| e.to_string())?
        .label("|psi|^2")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], RED));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())
}

fn diverging(v: f64, scale: f64) -> RGBColor {
    let t = (v / scale).clamp(-1.0, 1.0);
    let fade = |a: f64| (255.0 * (1.0 - a)) as u8;
    if t >= 0.0 {
        RGBColor(255, fade(t), fade(t))
    } else {
        RGBColor(fade(-t), fade(-t), 255)
    }
}

pub fn wigner_heatmap(
    path: &Path,
    f: &PhaseSpaceDensity,
    xs: &[usize],
    ps: &[usize],
    bounds: (f64, f64, f64, f64),
    neg: &NegativityReport,
) -> PlotResult {
    let root = SVGBackend::new(path, (800, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let (x0, x1, p0, p1) = bounds;
    let mut chart = ChartBuilder::on(&root)
        .caption("Wigner density F(x, p)", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, p0..p1)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .disable_mesh()
        .x_desc("x")
        .y_desc("p")
        .draw()
        .map_err(|e| e.to_string())?;
    let scale = f.values.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(f64::MIN_POSITIVE);
    let hx = xs.get(1).map_or(f.x_grid.dx(), |&i| f.x_grid.x(i) - f.x_grid.x(xs[0]));
    let hp = ps.get(1).map_or(f.dp, |&k| f.p[k] - f.p[ps[0]]);
    chart
        .draw_series(xs.iter().flat_map(|&i| {
            ps.iter().map(move |&k| {
                let (x, p) = (f.x_grid.x(i), f.p[k]);
                Rectangle::new(
                    [(x - 0.5 * hx, p - 0.5 * hp), (x + 0.5 * hx, p + 0.5 * hp)],
                    diverging(f.at(i, k), scale).filled(),
                )
            })
        }))
        .map_err(|e| e.to_string())?;
    let (mx, mp) = neg.location_of_min;
    chart
        .draw_series(std::iter::once(Circle::new((mx, mp), 5, BLACK.stroke_width(2))))
        .map_err(|e| e.to_string())?;
    chart
        .draw_series(std::iter::once(Text::new(
            format!("min {:.3e} at ({mx:.3}, {mp:.3})", neg.min_value),
            (x0 + 0.03 * (x1 - x0), p1 - 0.05 * (p1 - p0)),
            ("sans-serif", 16),
        )))
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())
}

pub fn drift_estimates(path: &Path, x: &[f64], u: &[f64], err: &[f64], analytic: &RealField) -> PlotResult {
    if x.is_empty() {
        return Err("no valid estimator bins to plot".into());
    }
    let root = SVGBackend::new(path, (800, 500)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let (x0, x1) = range(x);
    let curve: Vec<(f64, f64)> = (0..=200)
        .map(|i| {
            let xi = x0 + (x1 - x0) * i as f64 / 200.0;
            (xi, analytic.at(xi))
        })
        .collect();
    let bars: Vec<f64> = u.iter().zip(err).flat_map(|(a, e)| [a - 3.0 * e, a + 3.0 * e]).collect();
    let (y0, y1) = range(&[bars, curve.iter().map(|c| c.1).collect()].concat());
    let mut chart = ChartBuilder::on(&root)
        .caption("osmotic velocity: estimator vs D0 drho/dx / rho", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(x0..x1, y0..y1)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .x_desc("x")
        .y_desc("u")
        .draw()
        .map_err(|e| e.to_string())?;
    chart
        .draw_series(LineSeries::new(curve, RED.stroke_width(2)))
        .map_err(|e| e.to_string())?
        .label("analytic")
        .legend(|(x, y)| PathElement::new(vec![(x, y), (x + 15, y)], RED));
    chart
        .draw_series(x.iter().zip(u).zip(err).map(|((&xi, &ui), &ei)| {
            ErrorBar::new_vertical(xi, ui - 3.0 * ei, ui, ui + 3.0 * ei, BLUE.filled(), 6)
        }))
        .map_err(|e| e.to_string())?
        .label("estimate +- 3 se")
        .legend(|(x, y)| Circle::new((x + 7, y), 3, BLUE.filled()));
    chart
        .configure_series_labels()
        .border_style(BLACK)
        .background_style(WHITE.mix(0.8))
        .draw()
        .map_err(|e| e.to_string())?;
    root.present().map_err(|e| e.to_string())
}

/// Rows are `[n, energy, delta_e, band_lower, band_upper]`.
pub fn band_diagram(path: &Path, rows: &[Vec<f64>], quantum: f64) -> PlotResult {
    let root = SVGBackend::new(path, (600, 700)).into_drawing_area();
    root.fill(&WHITE).map_err(|e| e.to_string())?;
    let top = rows.iter().map(|r| r[4]).fold(0.0, f64::max) + 0.5 * quantum;
    let mut chart = ChartBuilder::on(&root)
        .caption("energy levels with dispersion bands", ("sans-serif", 20))
        .margin(10)
        .x_label_area_size(35)
        .y_label_area_size(50)
        .build_cartesian_2d(-1.0..1.0, 0.0..top)
        .map_err(|e| e.to_string())?;
    chart
        .configure_mesh()
        .disable_x_mesh()
        .y_desc("E")
        .draw()
        .map_err(|e| e.to_string())?;
    let palette = [BLUE, GREEN, MAGENTA, CYAN, RED, BLACK];
    for (i, r) in rows.iter().enumerate() {
        let color = palette[i % palette.len()];
        chart
            .draw_series(std::iter::once(Rectangle::new(
                [(-0.8, r[3]), (0.8, r[4])],
                color.mix(0.15).filled(),
            )))
            .map_err(|e| e.to_string())?;
        chart
            .draw_series(LineSeries::new(vec![(-0.8, r[1]), (0.8, r[1])], color.stroke_width(2)))
            .map_err(|e| e.to_string())?;
        chart
            .draw_series(std::iter::once(Text::new(
                format!("n = {}  dE = {:.3}", r[0], r[2]),
                (0.82, r[1]),
                ("sans-serif", 12),
            )))
            .map_err(|e| e.to_string())?;
    }
    root.present().map_err(|e| e.to_string())
}
