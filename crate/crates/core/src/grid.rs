//! Units, grids, potentials and sampled fields shared by every other module.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

use crate::error::{LabError, Result};
use crate::spectral;

/// Density above which a field's edge samples trigger a boundary warning.
pub const EDGE_DENSITY_WARNING: f64 = 1e-8;

/// Potential height used outside the walls of [`Potential::Box`].
pub const BOX_WALL: f64 = 1e10;

/// Physical constants of a run. The diffusion constant is always derived.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimUnits {
    pub hbar: f64,
    pub mass: f64,
}

impl Default for SimUnits {
    fn default() -> Self {
        SimUnits {
            hbar: 1.0,
            mass: 1.0,
        }
    }
}

impl SimUnits {
    pub fn new(hbar: f64, mass: f64) -> Result<Self> {
        let units = SimUnits { hbar, mass };
        units.validate()?;
        Ok(units)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.hbar > 0.0 && self.hbar.is_finite()) {
            return Err(LabError::domain(format!("hbar must be positive, got {}", self.hbar)));
        }
        if !(self.mass > 0.0 && self.mass.is_finite()) {
            return Err(LabError::domain(format!("mass must be positive, got {}", self.mass)));
        }
        Ok(())
    }

    /// Diffusion constant `hbar / 2m`.
    pub fn d0(&self) -> f64 {
        self.hbar / (2.0 * self.mass)
    }
}

/// Uniform grid `x_j = x_min + j*dx`, `j = 0..n`, with `dx = (x_max - x_min) / n`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SpatialGrid {
    x_min: f64,
    x_max: f64,
    n: usize,
}

/// Builds a grid; `n` must be a power of two no smaller than 8.
pub fn make_grid(x_min: f64, x_max: f64, n: usize) -> Result<SpatialGrid> {
    SpatialGrid::new(x_min, x_max, n)
}

impl SpatialGrid {
    pub fn new(x_min: f64, x_max: f64, n: usize) -> Result<Self> {
        if !(x_min.is_finite() && x_max.is_finite()) || x_max <= x_min {
            return Err(LabError::domain(format!(
                "grid bounds must satisfy x_min < x_max, got ({x_min}, {x_max})"
            )));
        }
        if n < 8 || !n.is_power_of_two() {
            return Err(LabError::domain(format!(
                "grid size must be a power of two >= 8, got {n}"
            )));
        }
        Ok(SpatialGrid { x_min, x_max, n })
    }

    pub fn x_min(&self) -> f64 {
        self.x_min
    }

    pub fn x_max(&self) -> f64 {
        self.x_max
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn dx(&self) -> f64 {
        (self.x_max - self.x_min) / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        self.x_min + j as f64 * self.dx()
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Index of the cell `[x_j - dx/2, x_j + dx/2)` containing `x`, if any.
    pub fn cell_of(&self, x: f64) -> Option<usize> {
        let t = ((x - self.x_min) / self.dx() + 0.5).floor();
        if t >= 0.0 && (t as usize) < self.n {
            Some(t as usize)
        } else {
            None
        }
    }

    /// Grid symmetric about zero with `n` points, containing `0` at index `n/2`.
    pub fn centered(half_width: f64, n: usize) -> Result<Self> {
        SpatialGrid::new(-half_width, half_width, n)
    }

    pub(crate) fn same_as(&self, other: &SpatialGrid) -> bool {
        self.n == other.n
            && (self.x_min - other.x_min).abs() <= 1e-12 * (1.0 + self.x_min.abs())
            && (self.x_max - other.x_max).abs() <= 1e-12 * (1.0 + self.x_max.abs())
    }

    pub(crate) fn check_same(&self, other: &SpatialGrid) -> Result<()> {
        if self.same_as(other) {
            Ok(())
        } else {
            Err(LabError::GridMismatch(format!("{self:?} vs {other:?}")))
        }
    }
}

/// External potential `V(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Potential {
    Free,
    /// `m omega^2 x^2 / 2`
    Harmonic { omega: f64 },
    /// Zero on `|x| < width/2`, [`BOX_WALL`] elsewhere.
    Box { width: f64 },
    /// `sum_k c_k x^k`
    Polynomial { coefficients: Vec<f64> },
    /// One sample per grid point; linear interpolation in between.
    Tabulated { samples: Vec<f64> },
}

impl Potential {
    /// `V(x)`. The grid is only consulted by tabulated potentials.
    pub fn value(&self, x: f64, grid: &SpatialGrid, units: &SimUnits) -> f64 {
        match self {
            Potential::Free => 0.0,
            Potential::Harmonic { omega } => 0.5 * units.mass * omega * omega * x * x,
            Potential::Box { width } => {
                if x.abs() < 0.5 * width {
                    0.0
                } else {
                    BOX_WALL
                }
            }
            Potential::Polynomial { coefficients } => {
                coefficients.iter().rev().fold(0.0, |acc, c| acc * x + c)
            }
            Potential::Tabulated { samples } => interpolate_linear(samples, grid, x),
        }
    }

    /// Samples `V` on every grid point.
    pub fn sample(&self, grid: &SpatialGrid, units: &SimUnits) -> Result<Vec<f64>> {
        self.validate(grid)?;
        if let Potential::Tabulated { samples } = self {
            return Ok(samples.clone());
        }
        Ok(grid.points().into_iter().map(|x| self.value(x, grid, units)).collect())
    }

    /// `dV/dx` on the grid: closed form where available, finite differences otherwise.
    pub fn gradient(&self, grid: &SpatialGrid, units: &SimUnits) -> Result<Vec<f64>> {
        self.validate(grid)?;
        Ok(match self {
            Potential::Free => vec![0.0; grid.len()],
            Potential::Harmonic { omega } => grid
                .points()
                .into_iter()
                .map(|x| units.mass * omega * omega * x)
                .collect(),
            Potential::Polynomial { coefficients } => grid
                .points()
                .into_iter()
                .map(|x| {
                    coefficients
                        .iter()
                        .enumerate()
                        .skip(1)
                        .rev()
                        .fold(0.0, |acc, (k, c)| acc * x + k as f64 * c)
                })
                .collect(),
            Potential::Box { .. } | Potential::Tabulated { .. } => {
                crate::diff::gradient(&self.sample(grid, units)?, grid.dx())
            }
        })
    }

    pub fn validate(&self, grid: &SpatialGrid) -> Result<()> {
        match self {
            Potential::Harmonic { omega } if !(*omega > 0.0) => {
                Err(LabError::domain("harmonic frequency must be positive"))
            }
            Potential::Box { width } if !(*width > 0.0) => {
                Err(LabError::domain("box width must be positive"))
            }
            Potential::Tabulated { samples } if samples.len() != grid.len() => {
                Err(LabError::GridMismatch(format!(
                    "tabulated potential has {} samples, grid has {}",
                    samples.len(),
                    grid.len()
                )))
            }
            _ => Ok(()),
        }
    }
}

fn interpolate_linear(values: &[f64], grid: &SpatialGrid, x: f64) -> f64 {
    let t = (x - grid.x_min()) / grid.dx();
    if t <= 0.0 {
        return values[0];
    }
    let last = values.len() - 1;
    if t >= last as f64 {
        return values[last];
    }
    let j = t.floor() as usize;
    let w = t - j as f64;
    values[j] * (1.0 - w) + values[j + 1] * w
}

/// Real samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    pub grid: SpatialGrid,
    pub values: Vec<f64>,
}

impl RealField {
    pub fn new(grid: SpatialGrid, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch(format!(
                "{} samples for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(RealField { grid, values })
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> f64) -> Self {
        let values = grid.points().into_iter().map(f).collect();
        RealField { grid, values }
    }

    /// Rectangle-rule integral `sum f_j dx`.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.dx()
    }

    /// Linear interpolation; constant extrapolation outside the grid.
    pub fn at(&self, x: f64) -> f64 {
        interpolate_linear(&self.values, &self.grid, x)
    }

    pub fn resample(&self, grid: &SpatialGrid) -> RealField {
        RealField::from_fn(*grid, |x| self.at(x))
    }

    /// `sum |a - b| dx` on a shared grid.
    pub fn l1_distance(&self, other: &RealField) -> Result<f64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            * self.grid.dx())
    }
}

/// Complex samples on a grid.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    pub grid: SpatialGrid,
    pub values: Vec<Complex64>,
}

impl ComplexField {
    pub fn new(grid: SpatialGrid, values: Vec<Complex64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(LabError::GridMismatch(format!(
                "{} samples for a grid of {}",
                values.len(),
                grid.len()
            )));
        }
        Ok(ComplexField { grid, values })
    }

    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Self {
        let values = grid.points().into_iter().map(f).collect();
        ComplexField { grid, values }
    }

    /// `sum |psi_j|^2 dx`
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.grid.dx()
    }

    pub fn density(&self) -> RealField {
        RealField {
            grid: self.grid,
            values: self.values.iter().map(|z| z.norm_sqr()).collect(),
        }
    }

    /// `sum conj(self_j) other_j dx`
    pub fn inner(&self, other: &ComplexField) -> Result<Complex64> {
        self.grid.check_same(&other.grid)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| a.conj() * b)
            .sum::<Complex64>()
            * self.grid.dx())
    }

    pub fn conj(&self) -> ComplexField {
        ComplexField {
            grid: self.grid,
            values: self.values.iter().map(|z| z.conj()).collect(),
        }
    }

    pub fn scale(&mut self, s: f64) {
        self.values.iter_mut().for_each(|z| *z *= s);
    }

    /// Largest density among the two samples at each end of the grid.
    pub fn edge_density(&self) -> f64 {
        let n = self.values.len();
        [0, 1, n - 2, n - 1]
            .iter()
            .map(|&j| self.values[j].norm_sqr())
            .fold(0.0, f64::max)
    }

    /// Logs a warning when the field does not decay at the grid edges.
    pub fn warn_if_edges_populated(&self, context: &str) {
        let edge = self.edge_density();
        if edge > EDGE_DENSITY_WARNING {
            log::warn!("{context}: edge density {edge:.3e} exceeds {EDGE_DENSITY_WARNING:.0e}; widen the grid");
        }
    }
}

/// Momentum-space amplitude on the conjugate grid `p_k = k dp`, `k = -n/2 .. n/2 - 1`.
#[derive(Debug, Clone, PartialEq)]
pub struct MomentumField {
    pub p: Vec<f64>,
    pub dp: f64,
    pub values: Vec<Complex64>,
}

impl MomentumField {
    pub fn norm_sqr(&self) -> f64 {
        self.values.iter().map(|z| z.norm_sqr()).sum::<f64>() * self.dp
    }

    pub fn density(&self) -> Vec<f64> {
        self.values.iter().map(|z| z.norm_sqr()).collect()
    }

    /// `(<p>, <p^2> - <p>^2)` of the normalized momentum density.
    pub fn moments(&self) -> (f64, f64) {
        let w: Vec<f64> = self.density();
        let norm: f64 = w.iter().sum::<f64>();
        let mean = w.iter().zip(&self.p).map(|(w, p)| w * p).sum::<f64>() / norm;
        let second = w.iter().zip(&self.p).map(|(w, p)| w * p * p).sum::<f64>() / norm;
        (mean, (second - mean * mean).max(0.0))
    }
}

/// Momentum step of the grid conjugate to `grid`.
pub fn conjugate_dp(grid: &SpatialGrid, units: &SimUnits) -> f64 {
    2.0 * PI * units.hbar / (grid.len() as f64 * grid.dx())
}

/// `psi~(p) = (2 pi hbar)^(-1/2) int psi(x) exp(-i p x / hbar) dx`, by FFT.
pub fn momentum_representation(psi: &ComplexField, units: &SimUnits) -> MomentumField {
    let grid = psi.grid;
    let n = grid.len();
    let dx = grid.dx();
    let dp = conjugate_dp(&grid, units);
    let mut buf = psi.values.clone();
    spectral::fft(&mut buf);
    let scale = dx / (2.0 * PI * units.hbar).sqrt();
    let half = (n / 2) as isize;
    let mut p = Vec::with_capacity(n);
    let mut values = Vec::with_capacity(n);
    for k in -half..half {
        let pk = k as f64 * dp;
        let idx = k.rem_euclid(n as isize) as usize;
        let phase = Complex64::from_polar(1.0, -pk * grid.x_min() / units.hbar);
        p.push(pk);
        values.push(buf[idx] * phase * scale);
    }
    MomentumField { p, dp, values }
}

/// Inverse of [`momentum_representation`] onto `grid`.
pub fn position_representation(
    phi: &MomentumField,
    grid: &SpatialGrid,
    units: &SimUnits,
) -> Result<ComplexField> {
    let n = grid.len();
    if phi.values.len() != n {
        return Err(LabError::GridMismatch(format!(
            "momentum field has {} samples, grid has {n}",
            phi.values.len()
        )));
    }
    let half = (n / 2) as isize;
    let mut buf = vec![Complex64::new(0.0, 0.0); n];
    for (i, k) in (-half..half).enumerate() {
        let pk = k as f64 * phi.dp;
        let idx = k.rem_euclid(n as isize) as usize;
        buf[idx] = phi.values[i] * Complex64::from_polar(1.0, pk * grid.x_min() / units.hbar);
    }
    spectral::ifft_unscaled(&mut buf);
    let scale = phi.dp / (2.0 * PI * units.hbar).sqrt();
    buf.iter_mut().for_each(|z| *z *= scale);
    ComplexField::new(*grid, buf)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn gaussian(grid: SpatialGrid, k0: f64) -> ComplexField {
        ComplexField::from_fn(grid, |x| {
            Complex64::from_polar(PI.powf(-0.25) * (-x * x / 2.0).exp(), k0 * x)
        })
    }

    #[test]
    fn grid_spacing() {
        let g = make_grid(-8.0, 8.0, 256).unwrap();
        assert_eq!(g.dx(), 0.0625);
        assert_eq!(g.x(0), -8.0);
        assert_eq!(g.x(128), 0.0);
    }

    #[test]
    fn grid_rejects_bad_input() {
        assert!(make_grid(-8.0, 8.0, 7).is_err());
        assert!(make_grid(0.0, 0.0, 256).is_err());
        assert!(make_grid(1.0, -1.0, 256).is_err());
        assert!(make_grid(-1.0, 1.0, 4).is_err());
        assert!(make_grid(-1.0, 1.0, 96).is_err());
    }

    #[test]
    fn diffusion_constant_is_derived() {
        let u = SimUnits::new(2.0, 4.0).unwrap();
        assert_eq!(u.d0(), 0.25);
        assert!(SimUnits::new(0.0, 1.0).is_err());
        assert!(SimUnits::new(1.0, -1.0).is_err());
    }

    #[test]
    fn potentials() {
        let g = make_grid(-4.0, 4.0, 64).unwrap();
        let u = SimUnits::new(1.0, 2.0).unwrap();
        assert_eq!(Potential::Harmonic { omega: 3.0 }.value(1.0, &g, &u), 9.0);
        let quartic = Potential::Polynomial {
            coefficients: vec![1.0, 0.0, -1.0, 0.0, 0.5],
        };
        assert_abs_diff_eq!(quartic.value(2.0, &g, &u), 1.0 - 4.0 + 8.0);
        let grad = quartic.gradient(&g, &u).unwrap();
        let x = g.x(40);
        assert_abs_diff_eq!(grad[40], -2.0 * x + 2.0 * x.powi(3), epsilon = 1e-12);
        assert_eq!(Potential::Box { width: 2.0 }.value(0.99, &g, &u), 0.0);
        assert_eq!(Potential::Box { width: 2.0 }.value(1.0, &g, &u), BOX_WALL);
        let tab = Potential::Tabulated {
            samples: vec![1.0; 10],
        };
        assert!(tab.sample(&g, &u).is_err());
    }

    #[test]
    fn gaussian_transforms_to_gaussian() {
        let g = make_grid(-8.0, 8.0, 256).unwrap();
        let units = SimUnits::default();
        let phi = momentum_representation(&gaussian(g, 0.0), &units);
        for (p, z) in phi.p.iter().zip(&phi.values) {
            let expect = PI.powf(-0.25) * (-p * p / 2.0).exp();
            assert_abs_diff_eq!(z.re, expect, epsilon = 1e-12);
            assert_abs_diff_eq!(z.im, 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn modulation_shifts_momentum_peak() {
        let g = make_grid(-16.0, 16.0, 512).unwrap();
        let units = SimUnits::new(0.5, 1.0).unwrap();
        let k0 = 3.0;
        let phi = momentum_representation(&gaussian(g, k0), &units);
        let dens = phi.density();
        let (imax, _) = dens
            .iter()
            .enumerate()
            .fold((0, 0.0), |acc, (i, &d)| if d > acc.1 { (i, d) } else { acc });
        assert!((phi.p[imax] - units.hbar * k0).abs() <= phi.dp);
        let (mean, _) = phi.moments();
        assert_abs_diff_eq!(mean, units.hbar * k0, epsilon = 1e-10);
    }

    #[test]
    fn parseval_and_round_trip() {
        let g = make_grid(-10.0, 6.0, 512).unwrap();
        let units = SimUnits::new(0.7, 1.3).unwrap();
        let psi = ComplexField::from_fn(g, |x| {
            let a = Complex64::from_polar((-(x - 1.0).powi(2)).exp(), 2.0 * x);
            let b = Complex64::new(0.3 * (-(x + 2.0).powi(2) / 2.0).exp(), 0.0);
            a + b
        });
        let mut psi = psi;
        psi.scale(1.0 / psi.norm_sqr().sqrt());
        let phi = momentum_representation(&psi, &units);
        assert_abs_diff_eq!(phi.norm_sqr(), 1.0, epsilon = 1e-12);
        let back = position_representation(&phi, &g, &units).unwrap();
        let err = back
            .values
            .iter()
            .zip(&psi.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-12, "round trip error {err}");
    }
}
