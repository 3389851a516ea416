//! Coupled systematic/osmotic velocity equations integrated directly.
//!
//! With `nu_minus = 0` and `lambda = +1`:
//!
//! ```text
//! dv/dt = -d/dx [ v^2/2 - u^2/2 - nu u' ] - V'/m
//! du/dt = -d/dx [ v u + nu v' ]
//! ```
//!
//! Time stepping is classical RK4; spatial derivatives use the finite
//! differences of [`crate::diff`], which are exact on the linear velocity
//! profiles of Gaussian packets and need no periodicity. The outer stencil
//! radius on each side is not evolved but extended linearly from the interior.

use num_complex::Complex64;
use serde::Serialize;

use crate::diff;
use crate::error::{LabError, Result};
use crate::grid::{Potential, RealField, SimUnits, SpatialGrid};
use crate::schrodinger::{drift_fields, evolve_unitary, polar_decompose, BranchParameter, VelocityFields, WaveFunction};

/// Relative density below which an interior dip counts as a node.
pub const NODE_DENSITY: f64 = 1e-10;
/// Relative density required on both sides of a dip for it to count as interior.
const NODE_SHOULDER: f64 = 1e-6;
/// Explicit stability bound `dt <= STABILITY * dx^2 / nu`.
pub const STABILITY: f64 = 0.2;
const BLOW_UP: f64 = 1e12;

#[derive(Debug, Clone, PartialEq)]
pub struct HydroState {
    pub v: RealField,
    pub u: RealField,
    pub time: f64,
    pub nu_plus: f64,
    pub nu_minus: f64,
}

impl HydroState {
    /// Fields with `nu_plus = D0`, `nu_minus = 0`.
    pub fn new(v: RealField, u: RealField, time: f64, units: &SimUnits) -> Result<Self> {
        v.grid.check_same(&u.grid)?;
        units.validate()?;
        Ok(HydroState {
            v,
            u,
            time,
            nu_plus: units.d0(),
            nu_minus: 0.0,
        })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.v.grid
    }

    /// Overrides `nu_plus`, e.g. `0` for the classical limit.
    pub fn with_nu_plus(mut self, nu_plus: f64) -> Result<Self> {
        if !(nu_plus >= 0.0 && nu_plus.is_finite()) {
            return Err(LabError::domain(format!("nu_plus must be nonnegative, got {nu_plus}")));
        }
        self.nu_plus = nu_plus;
        Ok(self)
    }

    /// Velocities of a nodeless wavefunction. Points below the node threshold
    /// are filled by linear extrapolation from the adjacent unmasked region.
    pub fn from_wavefunction(psi: &WaveFunction, units: &SimUnits) -> Result<Self> {
        let fields = drift_fields(&polar_decompose(psi, None)?, units);
        let mask = &fields.node_mask;
        let first = mask.iter().position(|&m| !m);
        let last = mask.iter().rposition(|&m| !m);
        let (lo, hi) = match (first, last) {
            (Some(a), Some(b)) if b >= a + 2 => (a, b),
            _ => return Err(LabError::domain("too few resolved points to build velocity fields")),
        };
        if mask[lo..=hi].iter().any(|&m| m) {
            return Err(LabError::NodeFormation(format!(
                "initial state has a node between x = {:.4} and x = {:.4}",
                psi.grid().x(lo),
                psi.grid().x(hi)
            )));
        }
        let fill = |f: &RealField| -> RealField {
            let mut out = f.clone();
            let left = f.values[lo + 1] - f.values[lo];
            let right = f.values[hi] - f.values[hi - 1];
            for j in 0..lo {
                out.values[j] = f.values[lo] - left * (lo - j) as f64;
            }
            for j in hi + 1..f.values.len() {
                out.values[j] = f.values[hi] + right * (j - hi) as f64;
            }
            out
        };
        HydroState::new(fill(&fields.v), fill(&fields.u), psi.time, units)
    }

    /// `rho = exp(int u / nu_plus dx)`, normalized to unit integral.
    pub fn reconstructed_density(&self) -> Result<RealField> {
        if !(self.nu_plus > 0.0) {
            return Err(LabError::domain("density reconstruction needs nu_plus > 0"));
        }
        let dx = self.grid().dx();
        let u = &self.u.values;
        let mut log_rho = vec![0.0; u.len()];
        for j in 1..u.len() {
            log_rho[j] = log_rho[j - 1] + 0.5 * dx * (u[j] + u[j - 1]) / self.nu_plus;
        }
        let peak = log_rho.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut rho = RealField::new(*self.grid(), log_rho.iter().map(|l| (l - peak).exp()).collect())?;
        let total = rho.integral();
        rho.values.iter_mut().for_each(|r| *r /= total);
        Ok(rho)
    }
}

fn rhs(v: &[f64], u: &[f64], nu: f64, force: &[f64], dx: f64) -> (Vec<f64>, Vec<f64>) {
    let du = diff::gradient(u, dx);
    let dv = diff::gradient(v, dx);
    let gv: Vec<f64> = (0..v.len())
        .map(|j| 0.5 * v[j] * v[j] - 0.5 * u[j] * u[j] - nu * du[j])
        .collect();
    let gu: Vec<f64> = (0..v.len()).map(|j| v[j] * u[j] + nu * dv[j]).collect();
    let vt = diff::gradient(&gv, dx)
        .into_iter()
        .zip(force)
        .map(|(g, f)| -g + f)
        .collect();
    let ut = diff::gradient(&gu, dx).into_iter().map(|g| -g).collect();
    (vt, ut)
}

fn axpy(base: &[f64], k: &[f64], h: f64) -> Vec<f64> {
    let mut out: Vec<f64> = base.iter().zip(k).map(|(b, k)| b + h * k).collect();
    extend_linearly(&mut out);
    out
}

/// Overwrites the outer [`diff::STENCIL_RADIUS`] points on each side with the
/// line through the two nearest interior points.
fn extend_linearly(f: &mut [f64]) {
    let r = diff::STENCIL_RADIUS;
    let n = f.len();
    let left = f[r + 1] - f[r];
    let right = f[n - 1 - r] - f[n - 2 - r];
    for j in 0..r {
        f[j] = f[r] - left * (r - j) as f64;
        f[n - 1 - j] = f[n - 1 - r] + right * (r - j) as f64;
    }
}

/// Interior point where the density dips below [`NODE_DENSITY`] between resolved shoulders.
fn find_node(rho: &RealField) -> Option<usize> {
    let peak = rho.values.iter().cloned().fold(0.0, f64::max);
    let resolved: Vec<usize> = (0..rho.values.len())
        .filter(|&j| rho.values[j] > NODE_SHOULDER * peak)
        .collect();
    let (&a, &b) = (resolved.first()?, resolved.last()?);
    (a..=b).find(|&j| rho.values[j] < NODE_DENSITY * peak)
}

/// RK4 integration of the velocity system; only the hyperbolic branch is supported.
pub fn evolve_madelung(
    state: &HydroState,
    potential: &Potential,
    units: &SimUnits,
    dt: f64,
    steps: usize,
    lambda: BranchParameter,
) -> Result<HydroState> {
    units.validate()?;
    if lambda != BranchParameter::Hyperbolic {
        return Err(LabError::domain(
            "the velocity system is integrated on the hyperbolic branch only; use evolve_parabolic for lambda = -1",
        ));
    }
    if state.nu_minus != 0.0 {
        return Err(LabError::domain("nu_minus must be zero"));
    }
    let grid = *state.grid();
    let dx = grid.dx();
    let nu = state.nu_plus;
    if !(dt > 0.0) {
        return Err(LabError::domain(format!("dt must be positive, got {dt}")));
    }
    if nu > 0.0 && dt > STABILITY * dx * dx / nu {
        return Err(LabError::domain(format!(
            "dt = {dt:.3e} exceeds the stability bound {:.3e}",
            STABILITY * dx * dx / nu
        )));
    }
    let force: Vec<f64> = potential
        .gradient(&grid, units)?
        .into_iter()
        .map(|g| -g / units.mass)
        .collect();
    let mut v = state.v.values.clone();
    let mut u = state.u.values.clone();
    extend_linearly(&mut v);
    extend_linearly(&mut u);
    for step in 0..steps {
        let (k1v, k1u) = rhs(&v, &u, nu, &force, dx);
        let (k2v, k2u) = rhs(&axpy(&v, &k1v, 0.5 * dt), &axpy(&u, &k1u, 0.5 * dt), nu, &force, dx);
        let (k3v, k3u) = rhs(&axpy(&v, &k2v, 0.5 * dt), &axpy(&u, &k2u, 0.5 * dt), nu, &force, dx);
        let (k4v, k4u) = rhs(&axpy(&v, &k3v, dt), &axpy(&u, &k3u, dt), nu, &force, dx);
        for j in 0..v.len() {
            v[j] += dt / 6.0 * (k1v[j] + 2.0 * k2v[j] + 2.0 * k3v[j] + k4v[j]);
            u[j] += dt / 6.0 * (k1u[j] + 2.0 * k2u[j] + 2.0 * k3u[j] + k4u[j]);
        }
        extend_linearly(&mut v);
        extend_linearly(&mut u);
        if let Some(j) = (0..v.len()).find(|&j| !(v[j].abs() < BLOW_UP && u[j].abs() < BLOW_UP)) {
            return Err(LabError::Divergence {
                step: step + 1,
                detail: format!("velocity fields blew up at x = {:.4}", grid.x(j)),
            });
        }
        if nu > 0.0 {
            let current = HydroState {
                v: RealField { grid, values: v.clone() },
                u: RealField { grid, values: u.clone() },
                time: state.time,
                nu_plus: nu,
                nu_minus: 0.0,
            };
            if let Some(j) = find_node(&current.reconstructed_density()?) {
                return Err(LabError::NodeFormation(format!(
                    "reconstructed density vanishes at x = {:.4} after step {}",
                    grid.x(j),
                    step + 1
                )));
            }
        }
    }
    Ok(HydroState {
        v: RealField { grid, values: v },
        u: RealField { grid, values: u },
        time: state.time + steps as f64 * dt,
        nu_plus: nu,
        nu_minus: 0.0,
    })
}

/// L2 discrepancies between the velocity system and Schrodinger-derived fields.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HydroComparison {
    pub t_final: f64,
    pub dt: f64,
    pub steps: usize,
    pub v_l2: f64,
    pub u_l2: f64,
    /// Points compared (unmasked in the Schrodinger fields).
    pub points: usize,
}

/// Largest step within the stability bound that divides `t_final` evenly.
pub fn stable_step(grid: &SpatialGrid, units: &SimUnits, t_final: f64) -> (f64, usize) {
    let bound = STABILITY * grid.dx() * grid.dx() / units.d0();
    let steps = (t_final / bound).ceil().max(1.0) as usize;
    (t_final / steps as f64, steps)
}

/// Points of the window grid used by [`hydro_consistency`].
pub const WINDOW_POINTS: usize = 16;

/// Coarse grid on a subset of `grid` points covering `[lo, hi]` (indices)
/// plus a quarter of its width on each side. Returns the grid, the fine
/// index of its first point and the stride.
pub fn window_grid(grid: &SpatialGrid, lo: usize, hi: usize, points: usize) -> Result<(SpatialGrid, usize, usize)> {
    let n = grid.len();
    let width = (hi - lo) as f64 * 1.5;
    let stride = ((width / (points - 1) as f64).floor() as usize).clamp(1, (n - 1) / (points - 1));
    let span = stride * (points - 1);
    let center = (lo + hi) / 2;
    let first = center.saturating_sub(span / 2).min(n - 1 - span);
    let x0 = grid.x(first);
    let dx = stride as f64 * grid.dx();
    Ok((SpatialGrid::new(x0, x0 + points as f64 * dx, points)?, first, stride))
}

/// Runs both evolution routes from `psi0` to `t_final` and compares velocities.
///
/// The velocity system amplifies relative perturbations of `psi` at rate
/// `|u| k`, so it is integrated on a [`WINDOW_POINTS`]-point subset of the
/// grid spanning the resolved region. Comparison points are the window
/// points that stay unmasked in the Schrodinger fields.
pub fn hydro_consistency(
    psi0: &WaveFunction,
    potential: &Potential,
    units: &SimUnits,
    t_final: f64,
) -> Result<(HydroComparison, HydroState, VelocityFields)> {
    if !(t_final > 0.0) {
        return Err(LabError::domain(format!("t_final must be positive, got {t_final}")));
    }
    let grid = *psi0.grid();
    let start = HydroState::from_wavefunction(psi0, units)?;
    let mask = polar_decompose(psi0, None)?.node_mask;
    let lo = mask.iter().position(|&m| !m).unwrap_or(0);
    let hi = mask.iter().rposition(|&m| !m).unwrap_or(grid.len() - 1);
    let (window, first, stride) = window_grid(&grid, lo, hi, WINDOW_POINTS)?;
    let pick = |f: &RealField| RealField {
        grid: window,
        values: (0..WINDOW_POINTS).map(|c| f.values[first + c * stride]).collect(),
    };
    let coarse = HydroState::new(pick(&start.v), pick(&start.u), psi0.time, units)?;
    let coarse_potential = match potential {
        Potential::Tabulated { samples } => Potential::Tabulated {
            samples: (0..WINDOW_POINTS).map(|c| samples[first + c * stride]).collect(),
        },
        other => other.clone(),
    };
    let (dt, steps) = stable_step(&window, units, t_final);
    let hydro = evolve_madelung(&coarse, &coarse_potential, units, dt, steps, BranchParameter::Hyperbolic)?;

    let schrodinger_steps = (t_final / 1e-3).ceil() as usize;
    let psi = evolve_unitary(psi0, potential, units, t_final / schrodinger_steps as f64, schrodinger_steps)?;
    let polar = polar_decompose(&psi, None)?;
    let resolved: Vec<usize> = (0..grid.len()).filter(|&j| !polar.node_mask[j]).collect();
    if let (Some(&a), Some(&b)) = (resolved.first(), resolved.last()) {
        if let Some(j) = (a..=b).find(|&j| polar.node_mask[j]) {
            return Err(LabError::NodeFormation(format!(
                "wavefunction develops a node at x = {:.4} by t = {t_final}",
                grid.x(j)
            )));
        }
    }
    let fields = drift_fields(&polar, units);
    let (mut sv, mut su, mut points) = (0.0, 0.0, 0);
    for c in 0..WINDOW_POINTS {
        let j = first + c * stride;
        if fields.node_mask[j] {
            continue;
        }
        sv += (hydro.v.values[c] - fields.v.values[j]).powi(2);
        su += (hydro.u.values[c] - fields.u.values[j]).powi(2);
        points += 1;
    }
    let comparison = HydroComparison {
        t_final,
        dt,
        steps,
        v_l2: (sv * window.dx()).sqrt(),
        u_l2: (su * window.dx()).sqrt(),
        points,
    };
    Ok((comparison, hydro, fields))
}

/// L2 norm of `drho/dt + d(rho v)/dx` for densities reconstructed from `u`.
pub fn continuity_residual(before: &HydroState, after: &HydroState) -> Result<f64> {
    before.grid().check_same(after.grid())?;
    let dt = after.time - before.time;
    if !(dt > 0.0) {
        return Err(LabError::domain("states must be ordered in time"));
    }
    let grid = *before.grid();
    let ra = before.reconstructed_density()?;
    let rb = after.reconstructed_density()?;
    let flux: Vec<f64> = (0..grid.len())
        .map(|j| 0.25 * (ra.values[j] + rb.values[j]) * (before.v.values[j] + after.v.values[j]))
        .collect();
    let div = diff::gradient(&flux, grid.dx());
    let sum: f64 = (0..grid.len())
        .map(|j| ((rb.values[j] - ra.values[j]) / dt + div[j]).powi(2))
        .sum();
    Ok((sum * grid.dx()).sqrt())
}

/// Gaussian packet `exp(-(x - x0)^2 / (4 sigma^2) + i k x)`, normalized.
pub fn gaussian_packet(grid: SpatialGrid, x0: f64, sigma: f64, k: f64) -> Result<WaveFunction> {
    WaveFunction::normalized(
        crate::grid::ComplexField::from_fn(grid, |x| {
            Complex64::from_polar((-(x - x0).powi(2) / (4.0 * sigma * sigma)).exp(), k * x)
        }),
        0.0,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;

    fn units() -> SimUnits {
        SimUnits::default()
    }

    #[test]
    fn stationary_ground_state_fields() {
        let g = make_grid(-4.0, 4.0, 16).unwrap();
        let s = HydroState::new(RealField::from_fn(g, |_| 0.0), RealField::from_fn(g, |x| -x), 0.0, &units()).unwrap();
        let (dt, steps) = stable_step(&g, &units(), 1.0);
        let out = evolve_madelung(&s, &Potential::Harmonic { omega: 1.0 }, &units(), dt, steps, BranchParameter::Hyperbolic)
            .unwrap();
        for j in 0..g.len() {
            assert!(out.v.values[j].abs() < 1e-6);
            assert!((out.u.values[j] + g.x(j)).abs() < 1e-6);
        }
        assert!((out.time - 1.0).abs() < 1e-12);
    }

    #[test]
    fn classical_limit_uniform_flow_is_fixed() {
        let g = make_grid(-8.0, 8.0, 128).unwrap();
        let s = HydroState::new(RealField::from_fn(g, |_| 0.7), RealField::from_fn(g, |_| 0.0), 0.0, &units())
            .unwrap()
            .with_nu_plus(0.0)
            .unwrap();
        let out = evolve_madelung(&s, &Potential::Free, &units(), 0.01, 100, BranchParameter::Hyperbolic).unwrap();
        assert!(out.v.values.iter().all(|v| (v - 0.7).abs() < 1e-12));
        assert!(out.u.values.iter().all(|u| u.abs() < 1e-12));
    }

    #[test]
    fn classical_limit_follows_pressureless_euler() {
        // v = x / (1 + t) solves v_t + v v_x = 0
        let g = make_grid(-4.0, 4.0, 128).unwrap();
        let s = HydroState::new(RealField::from_fn(g, |x| x), RealField::from_fn(g, |_| 0.0), 0.0, &units())
            .unwrap()
            .with_nu_plus(0.0)
            .unwrap();
        let out = evolve_madelung(&s, &Potential::Free, &units(), 0.001, 500, BranchParameter::Hyperbolic).unwrap();
        for j in 0..g.len() {
            assert!((out.v.values[j] - g.x(j) / 1.5).abs() < 1e-9);
        }
    }

    #[test]
    fn free_packet_matches_schrodinger() {
        let g = make_grid(-20.0, 20.0, 512).unwrap();
        let psi = gaussian_packet(g, 0.0, 1.0, 0.0).unwrap();
        let (cmp, _, _) = hydro_consistency(&psi, &Potential::Free, &units(), 0.5).unwrap();
        assert!(cmp.v_l2 <= 1e-3 && cmp.u_l2 <= 1e-3, "{cmp:?}");
    }

    #[test]
    fn ground_state_routes_agree() {
        let g = make_grid(-8.0, 8.0, 1024).unwrap();
        let h = Potential::Harmonic { omega: 1.0 };
        let psi = gaussian_packet(g, 0.0, 0.5f64.sqrt(), 0.0).unwrap();
        let (cmp, _, _) = hydro_consistency(&psi, &h, &units(), 0.3).unwrap();
        assert!(cmp.v_l2 <= 1e-6 && cmp.u_l2 <= 1e-6, "{cmp:?}");
    }

    #[test]
    fn coherent_slosh_matches_schrodinger() {
        let g = make_grid(-10.0, 10.0, 512).unwrap();
        let psi = gaussian_packet(g, 1.5, 0.5f64.sqrt(), 0.0).unwrap();
        let quarter = 0.5 * std::f64::consts::PI;
        let (cmp, hydro, _) = hydro_consistency(&psi, &Potential::Harmonic { omega: 1.0 }, &units(), quarter).unwrap();
        assert!(cmp.v_l2 <= 1e-2 && cmp.u_l2 <= 1e-2, "{cmp:?}");
        // at a quarter period the packet passes the origin with uniform velocity -1.5
        assert!(hydro.v.values.iter().all(|v| (v + 1.5).abs() < 1e-3));
    }

    #[test]
    fn reconstructed_density_obeys_continuity() {
        let g = make_grid(-20.0, 20.0, 512).unwrap();
        let psi = gaussian_packet(g, 0.0, 1.0, 0.5).unwrap();
        let s0 = HydroState::from_wavefunction(&psi, &units()).unwrap();
        let rho0 = s0.reconstructed_density().unwrap();
        for (a, b) in rho0.values.iter().zip(&psi.density().values) {
            assert!((a - b).abs() < 1e-8);
        }
        let (dt, _) = stable_step(&g, &units(), 0.1);
        let s1 = evolve_madelung(&s0, &Potential::Free, &units(), dt, 1, BranchParameter::Hyperbolic).unwrap();
        assert!(continuity_residual(&s0, &s1).unwrap() <= 1e-3);
    }

    #[test]
    fn rejects_unstable_step_and_parabolic_branch() {
        let g = make_grid(-8.0, 8.0, 256).unwrap();
        let s = HydroState::new(RealField::from_fn(g, |_| 0.0), RealField::from_fn(g, |x| -x), 0.0, &units()).unwrap();
        let h = Potential::Harmonic { omega: 1.0 };
        assert!(evolve_madelung(&s, &h, &units(), 0.1, 1, BranchParameter::Hyperbolic).is_err());
        assert!(evolve_madelung(&s, &h, &units(), 1e-4, 1, BranchParameter::Parabolic).is_err());
    }

    #[test]
    fn node_in_initial_state_is_rejected() {
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        let psi = WaveFunction::normalized(
            crate::grid::ComplexField::from_fn(g, |x| Complex64::new(x * (-x * x / 2.0).exp(), 0.0)),
            0.0,
        )
        .unwrap();
        assert!(matches!(
            HydroState::from_wavefunction(&psi, &units()),
            Err(LabError::NodeFormation(_))
        ));
    }

    #[test]
    fn node_formation_during_evolution_is_detected() {
        // u with a deep interior well reconstructs to a density with a node
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        let u = RealField::from_fn(g, |x| -x + if x.abs() < 0.5 { 80.0 * x.signum() } else { 0.0 });
        let s = HydroState::new(RealField::from_fn(g, |_| 0.0), u, 0.0, &units()).unwrap();
        assert!(matches!(
            evolve_madelung(&s, &Potential::Free, &units(), 1e-4, 1, BranchParameter::Hyperbolic),
            Err(LabError::NodeFormation(_)) | Err(LabError::Divergence { .. })
        ));
    }
}
