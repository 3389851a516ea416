//! Momentum and energy dispersions, the minimum time interval and force balance.

use serde::Serialize;

use crate::diff;
use crate::error::{LabError, Result};
use crate::grid::{momentum_representation, Potential, RealField, SimUnits, SpatialGrid};
use crate::nelson::{DriftSource, TrajectoryBatch};
use crate::phase_space::PhaseSpaceDensity;
use crate::schrodinger::{osmotic_from_density, polar_decompose, solve_eigenstates, PolarFields, WaveFunction};

/// `(<p>, <p^2> - <p>^2)` by quadrature over the full phase-space grid.
pub fn momentum_moments(f: &PhaseSpaceDensity) -> (f64, f64) {
    let m = f.p.len();
    let (mut w0, mut w1, mut w2) = (0.0, 0.0, 0.0);
    for row in f.values.chunks(m) {
        for (v, p) in row.iter().zip(&f.p) {
            w0 += v;
            w1 += v * p;
            w2 += v * p * p;
        }
    }
    let mean = w1 / w0;
    (mean, clamp_variance(w2 / w0 - mean * mean))
}

fn clamp_variance(var: f64) -> f64 {
    if var < 0.0 {
        log::warn!("negative momentum variance {var:.3e} clamped to zero");
        0.0
    } else {
        var
    }
}

/// Mean and variance of momentum from the momentum-space density.
pub fn momentum_moments_of(psi: &WaveFunction, units: &SimUnits) -> (f64, f64) {
    let phi = momentum_representation(&psi.field, units);
    let w = phi.density();
    let norm: f64 = w.iter().sum();
    let mean = w.iter().zip(&phi.p).map(|(w, p)| w * p).sum::<f64>() / norm;
    let second = w.iter().zip(&phi.p).map(|(w, p)| w * p * p).sum::<f64>() / norm;
    (mean, clamp_variance(second - mean * mean))
}

/// `m hbar / var_p`; `None` marks the dispersion-free classical regime.
pub fn min_time_interval(var_p: f64, units: &SimUnits) -> Option<f64> {
    if var_p > 0.0 {
        Some(units.mass * units.hbar / var_p)
    } else {
        None
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DispersionReport {
    pub mean_p: f64,
    pub var_p: f64,
    /// `None` in the classical regime (`var_p = 0`).
    pub delta_t_min: Option<f64>,
    pub delta_ek: f64,
    /// `<V> - V(<x>)`.
    pub delta_v: f64,
    pub delta_e: f64,
    pub product_tk: Option<f64>,
    pub product_te: Option<f64>,
    /// Set when `delta_v < 0`, which the time-energy inequality does not cover.
    pub negative_delta_v: bool,
}

pub fn energy_dispersions(psi: &WaveFunction, potential: &Potential, units: &SimUnits) -> Result<DispersionReport> {
    units.validate()?;
    let grid = *psi.grid();
    let (mean_p, var_p) = momentum_moments_of(psi, units);
    let rho = psi.density();
    let v = potential.sample(&grid, units)?;
    let mean_v = rho.values.iter().zip(&v).map(|(r, v)| r * v).sum::<f64>() * grid.dx();
    let delta_v = mean_v - potential.value(psi.mean_position(), &grid, units);
    let delta_ek = var_p / (2.0 * units.mass);
    let delta_e = delta_ek + delta_v;
    let delta_t_min = min_time_interval(var_p, units);
    if delta_v < 0.0 {
        log::warn!("potential-energy dispersion {delta_v:.3e} is negative");
    }
    Ok(DispersionReport {
        mean_p,
        var_p,
        delta_t_min,
        delta_ek,
        delta_v,
        delta_e,
        product_tk: delta_t_min.map(|t| t * delta_ek),
        product_te: delta_t_min.map(|t| t * delta_e),
        negative_delta_v: delta_v < 0.0,
    })
}

#[derive(Debug, Clone)]
pub struct ForceBalanceReport {
    /// `(var_p / m) drho/dx + rho dV/dx`; zero on masked points.
    pub residual: RealField,
    /// `||residual|| / ||rho dV/dx||`, or relative to `||(var_p/m) drho/dx||` when `dV/dx = 0`.
    pub rel_norm: f64,
    pub stochastic_force: RealField,
    pub var_p: f64,
    pub mean_p: f64,
    /// `|<p>| < 1e-6`.
    pub stationary: bool,
}

/// Force-balance residual with the global momentum variance, and the
/// stochastic force at the minimum time interval.
pub fn force_balance_residual(psi: &WaveFunction, potential: &Potential, units: &SimUnits) -> Result<ForceBalanceReport> {
    units.validate()?;
    let grid = *psi.grid();
    let (mean_p, var_p) = momentum_moments_of(psi, units);
    let stationary = mean_p.abs() < 1e-6;
    if !stationary {
        log::warn!("force balance applied to a moving state (<p> = {mean_p:.3e})");
    }
    let polar = polar_decompose(psi, None)?;
    let rho = psi.density();
    let grad_rho = diff::gradient(&rho.values, grid.dx());
    let grad_v = potential.gradient(&grid, units)?;
    let mut residual = vec![0.0; grid.len()];
    let (mut num, mut ext, mut osm) = (0.0, 0.0, 0.0);
    for j in 0..grid.len() {
        if polar.node_mask[j] {
            continue;
        }
        let a = var_p / units.mass * grad_rho[j];
        let b = rho.values[j] * grad_v[j];
        residual[j] = a + b;
        num += residual[j] * residual[j];
        ext += b * b;
        osm += a * a;
    }
    let denom = if ext > 0.0 { ext } else { osm };
    let rel_norm = if denom > 0.0 { (num / denom).sqrt() } else { 0.0 };
    let delta_t = min_time_interval(var_p, units);
    let stochastic_force = match delta_t {
        Some(dt) => stochastic_force(&polar, units, dt)?,
        None => RealField::new(grid, vec![0.0; grid.len()])?,
    };
    Ok(ForceBalanceReport {
        residual: RealField::new(grid, residual)?,
        rel_norm,
        stochastic_force,
        var_p,
        mean_p,
        stationary,
    })
}

/// `f_s = 2 m u / delta_t` with `u = D0 (drho/dx) / rho`; zero on masked points.
pub fn stochastic_force(polar: &PolarFields, units: &SimUnits, delta_t: f64) -> Result<RealField> {
    if !(delta_t > 0.0) {
        return Err(LabError::domain(format!("delta_t must be positive, got {delta_t}")));
    }
    let u = osmotic_from_density(polar, units);
    let values = u
        .values
        .iter()
        .zip(&polar.node_mask)
        .map(|(u, &masked)| if masked { 0.0 } else { 2.0 * units.mass * u / delta_t })
        .collect();
    RealField::new(u.grid, values)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OscillatorReport {
    pub n: usize,
    pub energy: f64,
    pub exact_energy: f64,
    pub dispersion: DispersionReport,
    pub delta_t_min: f64,
    /// `delta_t_min * omega`.
    pub period_ratio: f64,
    /// `(E_n - hbar omega / 2, E_n + hbar omega / 2)`.
    pub energy_band: (f64, f64),
    /// `delta_t_min * omega < 1`: the minimum interval is shorter than `1/omega`.
    pub short_interval: bool,
}

/// Grid used by [`oscillator_report`] for level `n`: 512 points over
/// `+-(sqrt(2n+1) + 10)` oscillator lengths.
pub fn oscillator_grid(n: usize, omega: f64, units: &SimUnits) -> Result<SpatialGrid> {
    let a = (units.hbar / (units.mass * omega)).sqrt();
    let half = ((2 * n + 1) as f64).sqrt() * a + 10.0 * a;
    SpatialGrid::centered(half, 512)
}

pub fn oscillator_report(n: usize, omega: f64, units: &SimUnits) -> Result<OscillatorReport> {
    units.validate()?;
    if n > 10 {
        return Err(LabError::domain(format!("oscillator level {n} exceeds 10")));
    }
    let potential = Potential::Harmonic { omega };
    let grid = oscillator_grid(n, omega, units)?;
    let states = solve_eigenstates(&potential, &grid, units, n + 1)?;
    let state = &states[n];
    let dispersion = energy_dispersions(&state.psi, &potential, units)?;
    let delta_t_min = dispersion
        .delta_t_min
        .ok_or_else(|| LabError::domain("eigenstate has no momentum dispersion"))?;
    let quantum = units.hbar * omega;
    Ok(OscillatorReport {
        n,
        energy: state.energy,
        exact_energy: (n as f64 + 0.5) * quantum,
        dispersion,
        delta_t_min,
        period_ratio: delta_t_min * omega,
        energy_band: (state.energy - 0.5 * quantum, state.energy + 0.5 * quantum),
        short_interval: delta_t_min * omega < 1.0,
    })
}

/// Variance of the diffusive displacement accumulated over `window` steps.
///
/// For each particle the path is cut into non-overlapping windows and the
/// systematic part `c(x_k) dt` is removed step by step, leaving the random
/// displacement whose dispersion enters `(Delta p)^2 = m^2 (Delta x)^2 / (Delta t)^2`.
/// `first_step` is the global step index of the batch's first column.
pub fn displacement_dispersion(
    batch: &TrajectoryBatch,
    drift: &dyn DriftSource,
    first_step: u64,
    window: usize,
) -> Result<f64> {
    if window == 0 || window >= batch.columns {
        return Err(LabError::domain(format!(
            "window {window} needs 1 <= window < columns ({})",
            batch.columns
        )));
    }
    let per_path = (batch.columns - 1) / window;
    let (mut s1, mut s2, mut count) = (0.0, 0.0, 0usize);
    for i in 0..batch.particles {
        let path = batch.path(i);
        for w in 0..per_path {
            let mut acc = 0.0;
            for k in w * window..(w + 1) * window {
                let c = drift.table(first_step + k as u64).eval(path[k]);
                acc += path[k + 1] - path[k] - c * batch.dt;
            }
            s1 += acc;
            s2 += acc * acc;
            count += 1;
        }
    }
    let mean = s1 / count as f64;
    Ok(s2 / count as f64 - mean * mean)
}
