//! Central finite differences on uniform grids.
//!
//! Interior points use the 8th-order stencil; the order drops as the stencil
//! runs out of room near the edges, ending with 2nd-order one-sided formulas
//! on the first and last sample. All variants are exact for quadratics.

/// Half-width of the widest stencil.
pub const STENCIL_RADIUS: usize = 4;

const CENTRAL: [&[f64]; 4] = [
    &[0.5],
    &[2.0 / 3.0, -1.0 / 12.0],
    &[3.0 / 4.0, -3.0 / 20.0, 1.0 / 60.0],
    &[4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0],
];

pub fn derivative_at(f: &[f64], j: usize, dx: f64) -> f64 {
    let n = f.len();
    let r = j.min(n - 1 - j).min(STENCIL_RADIUS);
    if r == 0 {
        return if j == 0 {
            (-3.0 * f[0] + 4.0 * f[1] - f[2]) / (2.0 * dx)
        } else {
            (3.0 * f[n - 1] - 4.0 * f[n - 2] + f[n - 3]) / (2.0 * dx)
        };
    }
    let c = CENTRAL[r - 1];
    c.iter()
        .enumerate()
        .map(|(k, w)| w * (f[j + k + 1] - f[j - k - 1]))
        .sum::<f64>()
        / dx
}

pub fn gradient(f: &[f64], dx: f64) -> Vec<f64> {
    assert!(f.len() >= 3);
    (0..f.len()).map(|j| derivative_at(f, j, dx)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_for_quadratics_everywhere() {
        let dx = 0.1;
        let f: Vec<f64> = (0..20).map(|j| {
            let x = j as f64 * dx - 1.0;
            3.0 * x * x - 2.0 * x + 1.0
        }).collect();
        let g = gradient(&f, dx);
        for (j, d) in g.iter().enumerate() {
            let x = j as f64 * dx - 1.0;
            assert!((d - (6.0 * x - 2.0)).abs() < 1e-11, "j={j}");
        }
    }

    #[test]
    fn interior_order_is_high() {
        let dx = 0.05;
        let f: Vec<f64> = (0..100).map(|j| (j as f64 * dx).sin()).collect();
        let g = gradient(&f, dx);
        for j in 4..96 {
            assert!((g[j] - (j as f64 * dx).cos()).abs() < 1e-11);
        }
    }
}
