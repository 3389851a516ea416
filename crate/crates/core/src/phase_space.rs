//! Characteristic function, Wigner density and phase-space amplitudes.
//!
//! Offsets `d` live on a centered grid with `d = 0` at index `m/2`. The
//! momentum grids conjugate to it are centered the same way: `p_k = k dp`,
//! `k = -m/2 .. m/2 - 1`, stored at index `k + m/2`. With an offset grid of
//! the same span and size as the position grid the density's momentum grid
//! coincides with the one used by [`momentum_representation`].
//!
//! Half-shifts `psi(x +- d/2)` use periodic Fourier interpolation, so states
//! must decay well inside the position grid.
//!
//! [`momentum_representation`]: crate::grid::momentum_representation

use num_complex::Complex64;
use std::f64::consts::PI;

use crate::diff;
use crate::error::{LabError, Result};
use crate::exec::{self, Execution};
use crate::grid::{Potential, RealField, SimUnits, SpatialGrid};
use crate::schrodinger::WaveFunction;
use crate::spectral::{self, FourierShifter};

/// Tolerance on `|rho(x,-d) - conj rho(x,d)|` relative to `max |rho|`.
pub const HERMITIAN_TOLERANCE: f64 = 1e-10;

/// Convention of [`PhaseSpaceAmplitude`].
pub const AMPLITUDE_CONVENTION: &str =
    "phi(x,p) = (4 pi hbar)^-1 int psi(x + d/2) exp(-i p d / 2 hbar) dd; psi(x + d/2) = int exp(i p d / 2 hbar) phi(x,p) dp; F = 2 int conj(phi(x, 2p - q)) phi(x, q) dq";

/// `rho(x, d) = conj(psi(x - d/2)) psi(x + d/2)`, row-major `[x][d]`.
///
/// The first offset `d = -span/2` has no partner on the grid and is held at
/// zero, as is the matching amplitude sample, so both routes to `F` share the
/// same discrete support.
#[derive(Debug, Clone)]
pub struct CharacteristicFunction {
    pub values: Vec<Complex64>,
    pub x_grid: SpatialGrid,
    pub offset_grid: SpatialGrid,
    pub time: f64,
}

impl CharacteristicFunction {
    pub fn at(&self, i: usize, j: usize) -> Complex64 {
        self.values[i * self.offset_grid.len() + j]
    }

    fn row(&self, i: usize) -> &[Complex64] {
        let m = self.offset_grid.len();
        &self.values[i * m..(i + 1) * m]
    }

    /// `rho(x, 0)`.
    pub fn density(&self) -> RealField {
        let m = self.offset_grid.len();
        RealField {
            grid: self.x_grid,
            values: (0..self.x_grid.len()).map(|i| self.at(i, m / 2).re).collect(),
        }
    }

    /// Largest `|rho(x,-d) - conj rho(x,d)|` over all offset pairs on the grid.
    pub fn hermitian_defect(&self) -> f64 {
        let m = self.offset_grid.len();
        let mut worst = 0.0f64;
        for i in 0..self.x_grid.len() {
            let row = self.row(i);
            for j in 1..m {
                worst = worst.max((row[m - j] - row[j].conj()).norm());
            }
        }
        worst
    }
}

/// `F(x, p)` sampled row-major `[x][p]`.
#[derive(Debug, Clone)]
pub struct PhaseSpaceDensity {
    pub values: Vec<f64>,
    pub x_grid: SpatialGrid,
    pub p: Vec<f64>,
    pub dp: f64,
    pub time: f64,
}

impl PhaseSpaceDensity {
    pub fn at(&self, i: usize, k: usize) -> f64 {
        self.values[i * self.p.len() + k]
    }

    fn row(&self, i: usize) -> &[f64] {
        let m = self.p.len();
        &self.values[i * m..(i + 1) * m]
    }

    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.x_grid.dx() * self.dp
    }

    /// Largest absolute difference, or an error when the grids differ.
    pub fn max_difference(&self, other: &PhaseSpaceDensity) -> Result<f64> {
        self.x_grid.check_same(&other.x_grid)?;
        if self.p.len() != other.p.len() || (self.dp - other.dp).abs() > 1e-12 * self.dp {
            return Err(LabError::GridMismatch("momentum grids differ".into()));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }
}

/// `phi(x, p)` row-major `[x][p]`; see [`AMPLITUDE_CONVENTION`].
#[derive(Debug, Clone)]
pub struct PhaseSpaceAmplitude {
    pub values: Vec<Complex64>,
    pub x_grid: SpatialGrid,
    pub offset_grid: SpatialGrid,
    pub p: Vec<f64>,
    pub dp: f64,
    pub convention: &'static str,
    pub hbar: f64,
    pub time: f64,
}

impl PhaseSpaceAmplitude {
    pub fn at(&self, i: usize, k: usize) -> Complex64 {
        self.values[i * self.p.len() + k]
    }

    fn row(&self, i: usize) -> &[Complex64] {
        let m = self.p.len();
        &self.values[i * m..(i + 1) * m]
    }

    /// `psi(x_i + d_j / 2)` for every offset, by the inverse of the amplitude transform.
    /// The first entry (`d = -span/2`) is zero.
    pub fn shifted_samples(&self, i: usize) -> Vec<Complex64> {
        let m = self.p.len();
        let mut buf = vec![Complex64::new(0.0, 0.0); m];
        for (s, v) in self.row(i).iter().enumerate() {
            let k = s as isize - (m / 2) as isize;
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            buf[k.rem_euclid(m as isize) as usize] = *v * sign;
        }
        spectral::ifft_unscaled(&mut buf);
        buf.into_iter().map(|z| z * self.dp).collect()
    }

    /// `psi(x) = int phi(x, p) dp`.
    pub fn reconstruct(&self) -> Vec<Complex64> {
        (0..self.x_grid.len())
            .map(|i| self.row(i).iter().sum::<Complex64>() * self.dp)
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NegativityReport {
    pub min_value: f64,
    pub negative_mass_fraction: f64,
    pub location_of_min: (f64, f64),
}

/// Offset grid with the span and size of `grid`, centered on zero.
pub fn default_offset_grid(grid: &SpatialGrid) -> SpatialGrid {
    let half = 0.5 * (grid.x_max() - grid.x_min());
    SpatialGrid::centered(half, grid.len()).expect("valid grid yields a valid offset grid")
}

fn check_offsets(x: &SpatialGrid, offsets: &SpatialGrid) -> Result<()> {
    let span = offsets.x_max() - offsets.x_min();
    if span > (x.x_max() - x.x_min()) * (1.0 + 1e-12) {
        return Err(LabError::domain("offset span exceeds the position span"));
    }
    if (offsets.x_min() + offsets.x_max()).abs() > 1e-12 * span {
        return Err(LabError::domain("offset grid must be centered on zero"));
    }
    Ok(())
}

/// `psi(x_i + d_j / 2)` as columns `[j][i]`; zero where `x_i + d_j / 2` leaves the grid.
fn half_shifts(psi: &WaveFunction, offsets: &SpatialGrid, exec: Execution) -> Vec<Vec<Complex64>> {
    let grid = *psi.grid();
    let shifter = FourierShifter::new(&psi.field.values, grid.dx());
    let (lo, hi) = (grid.x_min(), grid.x_min() + grid.len() as f64 * grid.dx());
    exec::map_indexed(exec, offsets.len(), |j| {
        let shift = 0.5 * offsets.x(j);
        let mut col = shifter.shifted(shift);
        for (i, z) in col.iter_mut().enumerate() {
            let x = grid.x(i) + shift;
            if x < lo || x >= hi {
                *z = Complex64::new(0.0, 0.0);
            }
        }
        col
    })
}

/// Centered transform along one row: `out_k = (-1)^k sum_j f_j exp(-2 pi i k j / m)`,
/// `k = -m/2 .. m/2 - 1`, stored at `k + m/2`.
fn centered_dft(row: &[Complex64]) -> Vec<Complex64> {
    let m = row.len();
    let mut buf = row.to_vec();
    spectral::fft(&mut buf);
    let half = m / 2;
    (0..m)
        .map(|s| {
            let k = s as isize - half as isize;
            let sign = if k.rem_euclid(2) == 0 { 1.0 } else { -1.0 };
            buf[k.rem_euclid(m as isize) as usize] * sign
        })
        .collect()
}

pub fn characteristic_function(psi: &WaveFunction, offsets: &SpatialGrid) -> Result<CharacteristicFunction> {
    characteristic_function_with(psi, offsets, Execution::default())
}

pub fn characteristic_function_with(
    psi: &WaveFunction,
    offsets: &SpatialGrid,
    exec: Execution,
) -> Result<CharacteristicFunction> {
    let grid = *psi.grid();
    check_offsets(&grid, offsets)?;
    let m = offsets.len();
    let n = grid.len();
    let cols = half_shifts(psi, offsets, exec);
    let mut values = vec![Complex64::new(0.0, 0.0); n * m];
    for (i, row) in values.chunks_mut(m).enumerate() {
        for j in 1..m {
            // column m - j holds psi(x - d_j / 2)
            row[j] = cols[m - j][i].conj() * cols[j][i];
        }
        row[m / 2] = Complex64::new(row[m / 2].norm(), 0.0);
    }
    Ok(CharacteristicFunction {
        values,
        x_grid: grid,
        offset_grid: *offsets,
        time: psi.time,
    })
}

/// `F(x, p) = (2 pi hbar)^-1 int rho(x, d) exp(-i p d / hbar) dd`.
///
pub fn wigner_from_characteristic(rho: &CharacteristicFunction, units: &SimUnits) -> Result<PhaseSpaceDensity> {
    units.validate()?;
    let m = rho.offset_grid.len();
    let scale = rho.values.iter().fold(0.0f64, |a, z| a.max(z.norm())).max(f64::MIN_POSITIVE);
    let defect = rho.hermitian_defect() / scale;
    if defect > HERMITIAN_TOLERANCE {
        return Err(LabError::NotHermitian(defect));
    }
    let dd = rho.offset_grid.dx();
    let factor = dd / (2.0 * PI * units.hbar);
    let rows = exec::map_indexed(Execution::default(), rho.x_grid.len(), |i| {
        centered_dft(rho.row(i))
    });
    let mut values = Vec::with_capacity(rho.x_grid.len() * m);
    let mut residue = 0.0f64;
    for row in rows {
        for z in row {
            residue = residue.max((z.im * factor).abs());
            values.push(z.re * factor);
        }
    }
    if residue > 1e-10 {
        return Err(LabError::NotHermitian(residue));
    }
    let dp = 2.0 * PI * units.hbar / (m as f64 * dd);
    Ok(PhaseSpaceDensity {
        values,
        x_grid: rho.x_grid,
        p: centered_momenta(m, dp),
        dp,
        time: rho.time,
    })
}

fn centered_momenta(m: usize, dp: f64) -> Vec<f64> {
    (0..m).map(|s| (s as f64 - (m / 2) as f64) * dp).collect()
}

/// `(x-marginal, p-marginal)` by summation over the conjugate variable.
pub fn marginals(f: &PhaseSpaceDensity) -> (RealField, RealField) {
    let n = f.x_grid.len();
    let m = f.p.len();
    let x_marginal = (0..n).map(|i| f.row(i).iter().sum::<f64>() * f.dp).collect();
    let mut p_marginal = vec![0.0; m];
    for i in 0..n {
        for (acc, v) in p_marginal.iter_mut().zip(f.row(i)) {
            *acc += v;
        }
    }
    p_marginal.iter_mut().for_each(|v| *v *= f.x_grid.dx());
    let p_grid = SpatialGrid::new(f.p[0], f.p[0] + m as f64 * f.dp, m).expect("momentum grid is valid");
    (
        RealField {
            grid: f.x_grid,
            values: x_marginal,
        },
        RealField {
            grid: p_grid,
            values: p_marginal,
        },
    )
}

const FIRST_DERIVATIVE: [f64; 4] = [4.0 / 5.0, -1.0 / 5.0, 4.0 / 105.0, -1.0 / 280.0];
const SECOND_DERIVATIVE: [f64; 5] = [-205.0 / 72.0, 8.0 / 5.0, -1.0 / 5.0, 8.0 / 315.0, -1.0 / 560.0];

/// Local momentum moments from the Taylor coefficients of `rho(x, .)` and from `F`.
#[derive(Debug, Clone)]
pub struct MomentCheck {
    pub x: Vec<f64>,
    pub mean_p_taylor: Vec<f64>,
    pub mean_p_wigner: Vec<f64>,
    pub second_p_taylor: Vec<f64>,
    pub second_p_wigner: Vec<f64>,
    /// `x` where `rho(x, 0) > 1e-6`; deviations are taken there.
    pub included: Vec<bool>,
    pub max_mean_deviation: f64,
    pub max_second_deviation: f64,
}

pub fn moment_expansion_check(
    rho: &CharacteristicFunction,
    f: &PhaseSpaceDensity,
    units: &SimUnits,
) -> Result<MomentCheck> {
    units.validate()?;
    rho.x_grid.check_same(&f.x_grid)?;
    let m = rho.offset_grid.len();
    let dd = rho.offset_grid.dx();
    let hbar = units.hbar;
    let total_second = f
        .values
        .chunks(m)
        .flat_map(|row| row.iter().zip(&f.p).map(|(v, p)| v * p * p))
        .sum::<f64>()
        * f.x_grid.dx()
        * f.dp;
    let reach = hbar / total_second.sqrt();
    if reach < 2.0 * dd || m < 10 {
        return Err(LabError::Resolution(format!(
            "offset spacing {dd:.3e} leaves fewer than 5 points within hbar/sqrt(<p^2>) = {reach:.3e}"
        )));
    }
    let c = m / 2;
    let n = rho.x_grid.len();
    let mut out = MomentCheck {
        x: rho.x_grid.points(),
        mean_p_taylor: vec![0.0; n],
        mean_p_wigner: vec![0.0; n],
        second_p_taylor: vec![0.0; n],
        second_p_wigner: vec![0.0; n],
        included: vec![false; n],
        max_mean_deviation: 0.0,
        max_second_deviation: 0.0,
    };
    for i in 0..n {
        let r = rho.row(i);
        let r0 = r[c].re;
        let mut first = Complex64::new(0.0, 0.0);
        let mut second = SECOND_DERIVATIVE[0] * r[c];
        for q in 1..=4 {
            first += FIRST_DERIVATIVE[q - 1] * (r[c + q] - r[c - q]);
            second += SECOND_DERIVATIVE[q] * (r[c + q] + r[c - q]);
        }
        let first = first / dd;
        let second = second / (dd * dd);
        let row = f.row(i);
        let w0: f64 = row.iter().sum();
        let w1: f64 = row.iter().zip(&f.p).map(|(v, p)| v * p).sum();
        let w2: f64 = row.iter().zip(&f.p).map(|(v, p)| v * p * p).sum();
        if r0 > 1e-6 {
            out.included[i] = true;
            out.mean_p_taylor[i] = hbar * first.im / r0;
            out.second_p_taylor[i] = -hbar * hbar * second.re / r0;
            out.mean_p_wigner[i] = w1 / w0;
            out.second_p_wigner[i] = w2 / w0;
            out.max_mean_deviation = out.max_mean_deviation.max((out.mean_p_taylor[i] - out.mean_p_wigner[i]).abs());
            out.max_second_deviation = out
                .max_second_deviation
                .max((out.second_p_taylor[i] - out.second_p_wigner[i]).abs());
        }
    }
    Ok(out)
}

/// Amplitudes on the default offset grid; see [`AMPLITUDE_CONVENTION`].
pub fn phase_space_amplitude(psi: &WaveFunction, units: &SimUnits) -> Result<PhaseSpaceAmplitude> {
    phase_space_amplitude_on(psi, &default_offset_grid(psi.grid()), units)
}

pub fn phase_space_amplitude_on(
    psi: &WaveFunction,
    offsets: &SpatialGrid,
    units: &SimUnits,
) -> Result<PhaseSpaceAmplitude> {
    units.validate()?;
    let grid = *psi.grid();
    check_offsets(&grid, offsets)?;
    let m = offsets.len();
    let dd = offsets.dx();
    let cols = half_shifts(psi, offsets, Execution::default());
    let factor = dd / (4.0 * PI * units.hbar);
    let rows = exec::map_indexed(Execution::default(), grid.len(), |i| {
        let mut samples: Vec<Complex64> = (0..m).map(|j| cols[j][i]).collect();
        samples[0] = Complex64::new(0.0, 0.0);
        centered_dft(&samples)
    });
    let values = rows.into_iter().flatten().map(|z| z * factor).collect();
    let dp = 4.0 * PI * units.hbar / (m as f64 * dd);
    Ok(PhaseSpaceAmplitude {
        values,
        x_grid: grid,
        offset_grid: *offsets,
        p: centered_momenta(m, dp),
        dp,
        convention: AMPLITUDE_CONVENTION,
        hbar: units.hbar,
        time: psi.time,
    })
}

/// `F(x, p) = 2 int conj(phi(x, 2p - q)) phi(x, q) dq` on the grid `dp_F = dp_phi / 2`.
pub fn density_from_amplitudes(phi: &PhaseSpaceAmplitude) -> Result<PhaseSpaceDensity> {
    let m = phi.p.len();
    if phi.values.len() != phi.x_grid.len() * m {
        return Err(LabError::GridMismatch("amplitude table does not match its grids".into()));
    }
    let half = m / 2;
    let rows = exec::map_indexed(Execution::default(), phi.x_grid.len(), |i| {
        let b = phi.row(i);
        let a: Vec<Complex64> = b.iter().map(|z| z.conj()).collect();
        let conv = spectral::circular_convolution(&a, b);
        (0..m).map(|s| 2.0 * phi.dp * conv[(s + half) % m]).collect::<Vec<_>>()
    });
    let mut values = Vec::with_capacity(phi.x_grid.len() * m);
    for row in rows {
        values.extend(row.into_iter().map(|z| z.re));
    }
    let dp = 0.5 * phi.dp;
    Ok(PhaseSpaceDensity {
        values,
        x_grid: phi.x_grid,
        p: centered_momenta(m, dp),
        dp,
        time: phi.time,
    })
}

pub fn negativity_report(f: &PhaseSpaceDensity) -> NegativityReport {
    let m = f.p.len();
    let (mut min_value, mut at) = (f64::INFINITY, 0);
    let (mut neg, mut abs) = (0.0, 0.0);
    for (idx, &v) in f.values.iter().enumerate() {
        if v < min_value {
            min_value = v;
            at = idx;
        }
        if v < 0.0 {
            neg -= v;
        }
        abs += v.abs();
    }
    NegativityReport {
        min_value,
        negative_mass_fraction: if abs > 0.0 { neg / abs } else { 0.0 },
        location_of_min: (f.x_grid.x(at / m), f.p[at % m]),
    }
}

/// L2 norm over `(x, d)` of `-i hbar d_t rho - (hbar^2/m) d_x d_d rho + d V'(x) rho`.
///
/// The time derivative is the difference quotient of two snapshots and the
/// other terms use their average.
pub fn evolution_residual(
    before: &CharacteristicFunction,
    after: &CharacteristicFunction,
    potential: &Potential,
    units: &SimUnits,
) -> Result<f64> {
    before.x_grid.check_same(&after.x_grid)?;
    before.offset_grid.check_same(&after.offset_grid)?;
    let dt = after.time - before.time;
    if !(dt > 0.0) {
        return Err(LabError::domain("snapshots must be in increasing time order"));
    }
    let grid = before.x_grid;
    let offsets = before.offset_grid;
    let (n, m) = (grid.len(), offsets.len());
    let dv = potential.gradient(&grid, units)?;
    let mid: Vec<Complex64> = before.values.iter().zip(&after.values).map(|(a, b)| 0.5 * (a + b)).collect();

    let derivative = |data: &[Complex64], spacing: f64| -> Vec<Complex64> {
        let re: Vec<f64> = data.iter().map(|z| z.re).collect();
        let im: Vec<f64> = data.iter().map(|z| z.im).collect();
        diff::gradient(&re, spacing)
            .into_iter()
            .zip(diff::gradient(&im, spacing))
            .map(|(a, b)| Complex64::new(a, b))
            .collect()
    };
    let mut d_offset = Vec::with_capacity(n * m);
    for row in mid.chunks(m) {
        d_offset.extend(derivative(row, offsets.dx()));
    }
    let mut mixed = vec![Complex64::new(0.0, 0.0); n * m];
    for j in 0..m {
        let col: Vec<Complex64> = (0..n).map(|i| d_offset[i * m + j]).collect();
        for (i, z) in derivative(&col, grid.dx()).into_iter().enumerate() {
            mixed[i * m + j] = z;
        }
    }
    let i_unit = Complex64::new(0.0, 1.0);
    let hbar = units.hbar;
    let mut sum = 0.0;
    for i in 0..n {
        for j in 0..m {
            let idx = i * m + j;
            let drho = (after.values[idx] - before.values[idx]) / dt;
            let r = -i_unit * hbar * drho - hbar * hbar / units.mass * mixed[idx] + offsets.x(j) * dv[i] * mid[idx];
            sum += r.norm_sqr();
        }
    }
    Ok((sum * grid.dx() * offsets.dx()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{make_grid, momentum_representation};
    use crate::schrodinger::{solve_eigenstates, UnitaryPropagator};

    fn grid() -> SpatialGrid {
        make_grid(-10.0, 10.0, 256).unwrap()
    }

    fn ground(g: SpatialGrid) -> WaveFunction {
        WaveFunction::from_fn(g, |x| Complex64::new((-x * x / 2.0).exp() / PI.powf(0.25), 0.0)).unwrap()
    }

    fn first_excited(g: SpatialGrid) -> WaveFunction {
        WaveFunction::from_fn(g, |x| {
            Complex64::new(2f64.sqrt() * x * (-x * x / 2.0).exp() / PI.powf(0.25), 0.0)
        })
        .unwrap()
    }

    fn packet(g: SpatialGrid, k: f64, x0: f64) -> WaveFunction {
        WaveFunction::normalized(
            crate::grid::ComplexField::from_fn(g, |x| {
                Complex64::from_polar((-(x - x0).powi(2) / 2.0).exp(), k * x)
            }),
            0.0,
        )
        .unwrap()
    }

    #[test]
    fn ground_state_characteristic_function() {
        let g = grid();
        let off = default_offset_grid(&g);
        let rho = characteristic_function(&ground(g), &off).unwrap();
        let m = off.len();
        for i in (0..g.len()).step_by(7) {
            for j in (1..m).step_by(5) {
                let (x, d) = (g.x(i), off.x(j));
                let exact = (-x * x - d * d / 4.0).exp() / PI.sqrt();
                assert!((rho.at(i, j) - exact).norm() < 1e-12, "{x} {d}");
            }
        }
        assert!(rho.hermitian_defect() < 1e-12);
        assert!((rho.density().integral() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn plane_phase_characteristic_function() {
        let g = grid();
        let off = default_offset_grid(&g);
        let k = 0.7;
        let rho = characteristic_function(&packet(g, k, 0.0), &off).unwrap();
        let i = g.len() / 2;
        for j in 100..156 {
            let z = rho.at(i, j);
            let expected = Complex64::from_polar(1.0, k * off.x(j));
            assert!((z / z.norm() - expected).norm() < 1e-9);
        }
    }

    #[test]
    fn ground_and_excited_wigner_functions() {
        let g = grid();
        let units = SimUnits::default();
        let off = default_offset_grid(&g);
        let f0 = wigner_from_characteristic(&characteristic_function(&ground(g), &off).unwrap(), &units).unwrap();
        let mut worst = 0.0f64;
        for i in 0..g.len() {
            for (k, p) in f0.p.iter().enumerate() {
                let x = g.x(i);
                worst = worst.max((f0.at(i, k) - (-x * x - p * p).exp() / PI).abs());
            }
        }
        assert!(worst < 1e-10, "{worst}");
        assert!((f0.integral() - 1.0).abs() < 1e-8);
        let r0 = negativity_report(&f0);
        assert!(r0.min_value >= -1e-9);
        assert!(r0.negative_mass_fraction <= 1e-9);

        let f1 = wigner_from_characteristic(&characteristic_function(&first_excited(g), &off).unwrap(), &units).unwrap();
        let c = g.len() / 2;
        assert!((f1.at(c, off.len() / 2) + 1.0 / PI).abs() < 1e-10);
        let r1 = negativity_report(&f1);
        assert!((r1.min_value + 1.0 / PI).abs() < 1e-10);
        assert!(r1.location_of_min.0.abs() < 1e-12 && r1.location_of_min.1.abs() < 1e-12);
        assert!(r1.negative_mass_fraction > 0.05);
    }

    #[test]
    fn marginals_match_position_and_momentum_densities() {
        let g = grid();
        let units = SimUnits::new(0.8, 1.3).unwrap();
        let psi = packet(g, 1.1, 0.5);
        let f = wigner_from_characteristic(&characteristic_function(&psi, &default_offset_grid(&g)).unwrap(), &units)
            .unwrap();
        let (mx, mp) = marginals(&f);
        let rho = psi.density();
        for (a, b) in mx.values.iter().zip(&rho.values) {
            assert!((a - b).abs() < 1e-8);
        }
        let phi = momentum_representation(&psi.field, &units);
        for (a, b) in mp.values.iter().zip(phi.density()) {
            assert!((a - b).abs() < 1e-8);
        }
        assert!((mx.integral() - 1.0).abs() < 1e-8 && (mp.integral() - 1.0).abs() < 1e-8);
        for (a, b) in mp.grid.points().iter().zip(&phi.p) {
            assert!((a - b).abs() < 1e-9);
        }
    }

    #[test]
    fn coherent_state_stays_positive() {
        let g = grid();
        let units = SimUnits::default();
        let f = wigner_from_characteristic(
            &characteristic_function(&packet(g, 1.5, -1.0), &default_offset_grid(&g)).unwrap(),
            &units,
        )
        .unwrap();
        assert!(negativity_report(&f).min_value >= -1e-9);
    }

    #[test]
    fn non_hermitian_input_is_rejected() {
        let g = grid();
        let mut rho = characteristic_function(&ground(g), &default_offset_grid(&g)).unwrap();
        rho.values[10 * 256 + 3] += Complex64::new(0.0, 1e-3);
        assert!(matches!(
            wigner_from_characteristic(&rho, &SimUnits::default()),
            Err(LabError::NotHermitian(_))
        ));
    }

    #[test]
    fn offset_grid_must_fit() {
        let g = grid();
        assert!(characteristic_function(&ground(g), &make_grid(-12.0, 12.0, 256).unwrap()).is_err());
        assert!(characteristic_function(&ground(g), &make_grid(-4.0, 6.0, 256).unwrap()).is_err());
        let narrow = SpatialGrid::centered(5.0, 256).unwrap();
        let rho = characteristic_function(&ground(g), &narrow).unwrap();
        let j = 128 + 40;
        let d = narrow.x(j);
        assert!((rho.at(128, j).re - (-d * d / 4.0).exp() / PI.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn moment_expansion_matches_wigner_integrals() {
        let g = grid();
        let units = SimUnits::default();
        let off = default_offset_grid(&g);
        let psi = ground(g);
        let rho = characteristic_function(&psi, &off).unwrap();
        let f = wigner_from_characteristic(&rho, &units).unwrap();
        let check = moment_expansion_check(&rho, &f, &units).unwrap();
        assert!(check.max_mean_deviation < 1e-6);
        assert!(check.mean_p_taylor.iter().all(|p| p.abs() < 1e-6));
        assert!(check.max_second_deviation < 1e-4, "{}", check.max_second_deviation);

        let k = 0.9;
        let psi = packet(g, k, 0.0);
        let rho = characteristic_function(&psi, &off).unwrap();
        let f = wigner_from_characteristic(&rho, &units).unwrap();
        let check = moment_expansion_check(&rho, &f, &units).unwrap();
        for i in 0..g.len() {
            if check.included[i] {
                assert!((check.mean_p_taylor[i] - k).abs() < 1e-6);
            }
        }

        let coarse = SpatialGrid::centered(10.0, 8).unwrap();
        let narrow = packet(g, 0.0, 0.0);
        let rho = characteristic_function(&narrow, &coarse).unwrap();
        let f = wigner_from_characteristic(&rho, &units).unwrap();
        assert!(matches!(
            moment_expansion_check(&rho, &f, &units),
            Err(LabError::Resolution(_))
        ));
    }

    #[test]
    fn amplitude_round_trip_and_symmetry() {
        let g = grid();
        let units = SimUnits::default();
        let psi = ground(g);
        let phi = phase_space_amplitude(&psi, &units).unwrap();
        assert_eq!(phi.convention, AMPLITUDE_CONVENTION);
        let back = phi.reconstruct();
        for (a, b) in back.iter().zip(&psi.field.values) {
            assert!((a - b).norm() < 1e-8);
        }
        let m = phi.p.len();
        for i in (0..g.len()).step_by(9) {
            for s in 1..m {
                assert!((phi.at(i, m - s) - phi.at(i, s).conj()).norm() < 1e-12);
            }
        }
        let shifted = phi.shifted_samples(g.len() / 2 + 10);
        let off = default_offset_grid(&g);
        for j in (0..m).step_by(11).skip(3).take(18) {
            let x = g.x(g.len() / 2 + 10) + 0.5 * off.x(j);
            assert!((shifted[j].re - (-x * x / 2.0).exp() / PI.powf(0.25)).abs() < 1e-10);
        }
    }

    #[test]
    fn plane_phase_amplitude_peaks_at_shifted_momentum() {
        // the half offset in the kernel maps psi ~ exp(ikx) to p = hbar k
        let g = grid();
        let units = SimUnits::new(0.5, 1.0).unwrap();
        let k = 3.0;
        let phi = phase_space_amplitude(&packet(g, k, 0.0), &units).unwrap();
        let row = phi.row(g.len() / 2);
        let best = (0..row.len()).max_by(|a, b| row[*a].norm().total_cmp(&row[*b].norm())).unwrap();
        assert!((phi.p[best] - units.hbar * k).abs() <= phi.dp);
    }

    #[test]
    fn two_routes_agree() {
        let g = grid();
        let units = SimUnits::default();
        let states = solve_eigenstates(&Potential::Harmonic { omega: 1.0 }, &g, &units, 3).unwrap();
        let coeffs = [Complex64::new(0.6, 0.1), Complex64::new(-0.3, 0.5), Complex64::new(0.2, -0.4)];
        let mix = crate::grid::ComplexField::from_fn(g, |_| Complex64::new(0.0, 0.0));
        let mut mix = mix;
        for (c, s) in coeffs.iter().zip(&states) {
            for (a, b) in mix.values.iter_mut().zip(&s.psi.field.values) {
                *a += c * b;
            }
        }
        let mut tests: Vec<WaveFunction> = states.into_iter().map(|s| s.psi).collect();
        tests.push(WaveFunction::normalized(mix, 0.0).unwrap());
        for psi in &tests {
            let a = wigner_from_characteristic(&characteristic_function(psi, &default_offset_grid(&g)).unwrap(), &units)
                .unwrap();
            let b = density_from_amplitudes(&phase_space_amplitude(psi, &units).unwrap()).unwrap();
            let d = a.max_difference(&b).unwrap();
            assert!(d <= 1e-8, "{d}");
        }
    }

    #[test]
    fn free_evolution_satisfies_characteristic_equation() {
        let g = grid();
        let units = SimUnits::default();
        let off = default_offset_grid(&g);
        let psi = packet(g, 0.5, 0.0);
        let dt = 1e-3;
        let prop = UnitaryPropagator::new(&g, &Potential::Free, &units, dt).unwrap();
        let later = prop.advance(&psi, 1).unwrap();
        let a = characteristic_function(&psi, &off).unwrap();
        let b = characteristic_function(&later, &off).unwrap();
        let r = evolution_residual(&a, &b, &Potential::Free, &units).unwrap();
        assert!(r <= 1e-3, "{r}");

        let h = Potential::Harmonic { omega: 1.0 };
        let prop = UnitaryPropagator::new(&g, &h, &units, dt).unwrap();
        let psi = packet(g, 0.0, 1.0);
        let later = prop.advance(&psi, 1).unwrap();
        let a = characteristic_function(&psi, &off).unwrap();
        let b = characteristic_function(&later, &off).unwrap();
        assert!(evolution_residual(&a, &b, &h, &units).unwrap() <= 1e-3);
        // dropping the potential term leaves a visible residual
        assert!(evolution_residual(&a, &b, &Potential::Free, &units).unwrap() > 1e-2);
    }
}
