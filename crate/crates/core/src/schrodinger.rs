//! Reference quantum dynamics on a 1D grid.
//!
//! The Hamiltonian `-(hbar^2/2m) d^2/dx^2 + V` is discretized with the
//! five-point fourth-order Laplacian and Dirichlet walls just outside the
//! grid. The same banded matrix drives the eigensolver, Crank-Nicolson
//! stepping and the parabolic (imaginary-time) flow, so eigenstates are exact
//! fixed points of both propagators.

use num_complex::Complex64;

use crate::diff;
use crate::error::{LabError, Result};
use crate::grid::{ComplexField, Potential, RealField, SimUnits, SpatialGrid, BOX_WALL};
use crate::linalg::{BandLu, BandMatrix, SymmetricBand};

/// Added to `|psi|^2` before taking the logarithm in [`polar_decompose`].
pub const LOG_FLOOR: f64 = 1e-300;

/// Default node threshold relative to the peak density.
pub const RELATIVE_NODE_THRESHOLD: f64 = 1e-8;

/// A normalized state at a given time.
#[derive(Debug, Clone, PartialEq)]
pub struct WaveFunction {
    pub field: ComplexField,
    pub time: f64,
}

impl WaveFunction {
    /// Wraps a field that must already be normalized within `1e-10`.
    pub fn new(field: ComplexField, time: f64) -> Result<Self> {
        let norm = field.norm_sqr();
        if (norm - 1.0).abs() > 1e-10 {
            return Err(LabError::domain(format!(
                "wavefunction norm is {norm}, expected 1"
            )));
        }
        Ok(WaveFunction { field, time })
    }

    /// Rescales `field` to unit norm.
    pub fn normalized(mut field: ComplexField, time: f64) -> Result<Self> {
        let norm = field.norm_sqr();
        if !(norm > 0.0 && norm.is_finite()) {
            return Err(LabError::domain("cannot normalize a zero or non-finite field"));
        }
        field.scale(1.0 / norm.sqrt());
        Ok(WaveFunction { field, time })
    }

    /// Normalizes `f(x)` sampled on `grid`, at `t = 0`.
    pub fn from_fn(grid: SpatialGrid, f: impl Fn(f64) -> Complex64) -> Result<Self> {
        WaveFunction::normalized(ComplexField::from_fn(grid, f), 0.0)
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.field.grid
    }

    pub fn density(&self) -> RealField {
        self.field.density()
    }

    pub fn conj(&self) -> WaveFunction {
        WaveFunction {
            field: self.field.conj(),
            time: self.time,
        }
    }

    pub fn mean_position(&self) -> f64 {
        let g = self.grid();
        self.field
            .values
            .iter()
            .enumerate()
            .map(|(j, z)| z.norm_sqr() * g.x(j))
            .sum::<f64>()
            * g.dx()
    }

    pub fn position_variance(&self) -> f64 {
        let g = self.grid();
        let mean = self.mean_position();
        self.field
            .values
            .iter()
            .enumerate()
            .map(|(j, z)| z.norm_sqr() * (g.x(j) - mean).powi(2))
            .sum::<f64>()
            * g.dx()
    }
}

/// Sign of the stochastic acceleration term: `+1` reversible, `-1` parabolic.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BranchParameter {
    Hyperbolic,
    Parabolic,
}

impl BranchParameter {
    pub fn lambda(self) -> f64 {
        match self {
            BranchParameter::Hyperbolic => 1.0,
            BranchParameter::Parabolic => -1.0,
        }
    }

    pub fn from_lambda(lambda: f64) -> Result<Self> {
        if lambda == 1.0 {
            Ok(BranchParameter::Hyperbolic)
        } else if lambda == -1.0 {
            Ok(BranchParameter::Parabolic)
        } else {
            Err(LabError::domain(format!("lambda must be +1 or -1, got {lambda}")))
        }
    }
}

/// Banded Hamiltonian matrix for `potential` on `grid`.
pub fn hamiltonian(potential: &Potential, grid: &SpatialGrid, units: &SimUnits) -> Result<SymmetricBand> {
    units.validate()?;
    let n = grid.len();
    let v = potential.sample(grid, units)?;
    let kin = units.hbar * units.hbar / (2.0 * units.mass) / (12.0 * grid.dx() * grid.dx());
    // Hard walls (grid ends and BOX_WALL regions) close the five-point stencil
    // with an odd ghost value, psi(wall + h) = -psi(wall - h).
    let wall = |j: isize| j < 0 || j >= n as isize || v[j as usize] >= 0.5 * BOX_WALL;
    let diag = (0..n)
        .map(|j| {
            let mut d = 30.0 * kin + v[j];
            if !wall(j as isize) {
                let j = j as isize;
                if wall(j + 1) {
                    d -= kin;
                }
                if wall(j - 1) {
                    d -= kin;
                }
            }
            d
        })
        .collect();
    Ok(SymmetricBand::new(vec![
        diag,
        vec![-16.0 * kin; n - 1],
        vec![kin; n - 2],
    ]))
}

fn identity_plus(h: &SymmetricBand, a: Complex64) -> BandMatrix<Complex64> {
    let n = h.dim();
    let b = h.bandwidth();
    let mut m = BandMatrix::zeros(n, b, b);
    for i in 0..n {
        for j in i.saturating_sub(b)..(i + b + 1).min(n) {
            let mut v = a * h.get(i, j);
            if i == j {
                v += 1.0;
            }
            m.set(i, j, v);
        }
    }
    m
}

/// One eigenpair of the discretized Hamiltonian.
#[derive(Debug, Clone)]
pub struct Eigenstate {
    pub energy: f64,
    pub psi: WaveFunction,
}

/// The `k` lowest eigenpairs, energies ascending.
///
/// Eigenfunctions are real, unit-normalized with weight `dx`, and their
/// first significant lobe is positive.
pub fn solve_eigenstates(
    potential: &Potential,
    grid: &SpatialGrid,
    units: &SimUnits,
    k: usize,
) -> Result<Vec<Eigenstate>> {
    if k >= grid.len() / 4 {
        return Err(LabError::domain(format!(
            "requested {k} states; at most {} are resolvable on {} points",
            grid.len() / 4 - 1,
            grid.len()
        )));
    }
    let h = hamiltonian(potential, grid, units)?;
    let pairs = h.lowest_eigenpairs(k)?;
    let scale = 1.0 / grid.dx().sqrt();
    Ok(pairs
        .into_iter()
        .map(|(energy, v)| {
            let peak = v.iter().fold(0.0f64, |m, a| m.max(a.abs()));
            let lead = v.iter().find(|a| a.abs() > 1e-3 * peak).copied().unwrap_or(1.0);
            let sign = lead.signum() * scale;
            let values = v.iter().map(|a| Complex64::new(a * sign, 0.0)).collect();
            Eigenstate {
                energy,
                psi: WaveFunction {
                    field: ComplexField { grid: *grid, values },
                    time: 0.0,
                },
            }
        })
        .collect())
}

/// Reusable Crank-Nicolson stepper for a fixed grid, potential and `dt`.
pub struct UnitaryPropagator {
    h: SymmetricBand,
    lu: BandLu<Complex64>,
    factor: Complex64,
    grid: SpatialGrid,
    dt: f64,
}

impl UnitaryPropagator {
    pub fn new(grid: &SpatialGrid, potential: &Potential, units: &SimUnits, dt: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(LabError::domain(format!("time step must be positive, got {dt}")));
        }
        if let Potential::Harmonic { omega } = potential {
            let period = 2.0 * std::f64::consts::PI / omega;
            if dt > 0.1 * period {
                return Err(LabError::domain(format!(
                    "time step {dt} exceeds a tenth of the oscillator period {period}"
                )));
            }
        }
        let h = hamiltonian(potential, grid, units)?;
        let factor = Complex64::new(0.0, 0.5 * dt / units.hbar);
        let lu = identity_plus(&h, factor).factor()?;
        Ok(UnitaryPropagator {
            h,
            lu,
            factor,
            grid: *grid,
            dt,
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Advances `psi` in place by one step.
    pub fn step(&self, values: &mut [Complex64]) {
        let n = values.len();
        let b = self.h.bandwidth();
        let rhs: Vec<Complex64> = (0..n)
            .map(|i| {
                let hpsi: Complex64 = (i.saturating_sub(b)..(i + b + 1).min(n))
                    .map(|j| values[j] * self.h.get(i, j))
                    .sum();
                values[i] - self.factor * hpsi
            })
            .collect();
        values.copy_from_slice(&rhs);
        self.lu.solve_in_place(values);
    }

    pub fn advance(&self, psi: &WaveFunction, steps: usize) -> Result<WaveFunction> {
        self.grid.check_same(psi.grid())?;
        let mut values = psi.field.values.clone();
        for _ in 0..steps {
            self.step(&mut values);
        }
        Ok(WaveFunction {
            field: ComplexField { grid: self.grid, values },
            time: psi.time + steps as f64 * self.dt,
        })
    }
}

/// Crank-Nicolson integration of `i hbar dpsi/dt = H psi` for `steps` steps of `dt`.
pub fn evolve_unitary(
    psi: &WaveFunction,
    potential: &Potential,
    units: &SimUnits,
    dt: f64,
    steps: usize,
) -> Result<WaveFunction> {
    psi.field.warn_if_edges_populated("evolve_unitary");
    UnitaryPropagator::new(psi.grid(), potential, units, dt)?.advance(psi, steps)
}

/// Outcome of a parabolic run.
#[derive(Debug, Clone)]
pub struct ParabolicRun {
    /// Final amplitude; unit norm when renormalizing, otherwise the raw iterate.
    pub field: ComplexField,
    /// Norm `sqrt(sum |psi|^2 dx)` of the raw iterate after each step.
    pub norms: Vec<f64>,
    pub tau: f64,
}

impl ParabolicRun {
    pub fn state(&self) -> Result<WaveFunction> {
        WaveFunction::normalized(self.field.clone(), self.tau)
    }
}

/// Irreversible amplitude flow `hbar dpsi/dtau = -H psi`, implicit Euler per step.
///
/// With `renormalize` the iterate is rescaled to unit norm after every step
/// and converges to the ground state of `potential`.
pub fn evolve_parabolic(
    psi: &WaveFunction,
    potential: &Potential,
    units: &SimUnits,
    dtau: f64,
    steps: usize,
    renormalize: bool,
) -> Result<ParabolicRun> {
    if !(dtau > 0.0 && dtau.is_finite()) {
        return Err(LabError::domain(format!("dtau must be positive, got {dtau}")));
    }
    let max_im = psi.field.values.iter().fold(0.0f64, |m, z| m.max(z.im.abs()));
    if max_im >= 1e-12 {
        return Err(LabError::domain(format!(
            "parabolic flow needs a real amplitude (max imaginary part {max_im:.3e})"
        )));
    }
    let grid = *psi.grid();
    let h = hamiltonian(potential, &grid, units)?;
    let n = h.dim();
    let b = h.bandwidth();
    let a = dtau / units.hbar;
    let mut m = BandMatrix::<f64>::zeros(n, b, b);
    for i in 0..n {
        for j in i.saturating_sub(b)..(i + b + 1).min(n) {
            m.set(i, j, a * h.get(i, j) + if i == j { 1.0 } else { 0.0 });
        }
    }
    let lu = m.factor()?;
    let mut values: Vec<f64> = psi.field.values.iter().map(|z| z.re).collect();
    let dx = grid.dx();
    let mut norms = Vec::with_capacity(steps);
    for step in 0..steps {
        lu.solve_in_place(&mut values);
        let norm = (values.iter().map(|v| v * v).sum::<f64>() * dx).sqrt();
        if !norm.is_finite() || (!renormalize && norm > 1e6) {
            return Err(LabError::Divergence {
                step,
                detail: format!("parabolic norm reached {norm:.3e}"),
            });
        }
        if renormalize {
            if norm == 0.0 {
                return Err(LabError::Divergence {
                    step,
                    detail: "parabolic iterate vanished".into(),
                });
            }
            values.iter_mut().for_each(|v| *v /= norm);
        }
        norms.push(norm);
    }
    Ok(ParabolicRun {
        field: ComplexField {
            grid,
            values: values.into_iter().map(|v| Complex64::new(v, 0.0)).collect(),
        },
        norms,
        tau: psi.time + steps as f64 * dtau,
    })
}

/// `psi = exp(R + iS)` sampled on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct PolarFields {
    pub r: RealField,
    pub s: RealField,
    /// True where `|psi|^2` is below the node threshold.
    pub node_mask: Vec<bool>,
}

impl PolarFields {
    pub fn grid(&self) -> &SpatialGrid {
        &self.r.grid
    }

    /// `rho = exp(2R)`.
    pub fn density(&self) -> RealField {
        RealField {
            grid: self.r.grid,
            values: self.r.values.iter().map(|r| (2.0 * r).exp()).collect(),
        }
    }
}

/// Log-amplitude and unwrapped phase of `psi`.
///
/// `node_threshold` defaults to `1e-8 * max |psi|^2`. The phase is unwrapped
/// left to right on each contiguous unmasked segment, starting from `arg psi`
/// at the segment's leftmost point; masked points carry the raw `arg psi`.
pub fn polar_decompose(psi: &WaveFunction, node_threshold: Option<f64>) -> Result<PolarFields> {
    let grid = *psi.grid();
    let rho: Vec<f64> = psi.field.values.iter().map(|z| z.norm_sqr()).collect();
    let peak = rho.iter().cloned().fold(0.0, f64::max);
    let threshold = node_threshold.unwrap_or(RELATIVE_NODE_THRESHOLD * peak);
    let node_mask: Vec<bool> = rho.iter().map(|&d| d < threshold).collect();
    if node_mask.iter().all(|&m| m) {
        return Err(LabError::domain("every grid point lies below the node threshold"));
    }
    let r = rho.iter().map(|d| 0.5 * (d + LOG_FLOOR).ln()).collect();
    let mut s: Vec<f64> = psi.field.values.iter().map(|z| z.arg()).collect();
    let two_pi = 2.0 * std::f64::consts::PI;
    for j in 1..s.len() {
        if node_mask[j] || node_mask[j - 1] {
            continue;
        }
        let mut d = s[j] - s[j - 1];
        d -= two_pi * (d / two_pi).round();
        s[j] = s[j - 1] + d;
    }
    Ok(PolarFields {
        r: RealField { grid, values: r },
        s: RealField { grid, values: s },
        node_mask,
    })
}

/// Systematic and osmotic velocities on the grid.
#[derive(Debug, Clone, PartialEq)]
pub struct VelocityFields {
    pub v: RealField,
    pub u: RealField,
    /// Node mask widened by the finite-difference stencil radius: values at
    /// masked points are computed but not trustworthy.
    pub node_mask: Vec<bool>,
}

impl VelocityFields {
    pub fn grid(&self) -> &SpatialGrid {
        &self.v.grid
    }

    /// Builds fields from closed-form velocity profiles, with nothing masked.
    pub fn from_fns(grid: SpatialGrid, v: impl Fn(f64) -> f64, u: impl Fn(f64) -> f64) -> Self {
        VelocityFields {
            v: RealField::from_fn(grid, v),
            u: RealField::from_fn(grid, u),
            node_mask: vec![false; grid.len()],
        }
    }

    /// Forward drift `c = v + u`.
    pub fn forward_drift(&self) -> Vec<f64> {
        self.v.values.iter().zip(&self.u.values).map(|(v, u)| v + u).collect()
    }
}

fn widen_mask(mask: &[bool], radius: usize) -> Vec<bool> {
    let n = mask.len();
    (0..n)
        .map(|j| {
            let lo = j.saturating_sub(radius);
            let hi = (j + radius + 1).min(n);
            mask[lo..hi].iter().any(|&m| m)
        })
        .collect()
}

/// `v = 2 D0 dS/dx`, `u = 2 D0 dR/dx` by central differences.
pub fn drift_fields(polar: &PolarFields, units: &SimUnits) -> VelocityFields {
    let grid = *polar.grid();
    let two_d0 = 2.0 * units.d0();
    let ds = diff::gradient(&polar.s.values, grid.dx());
    let dr = diff::gradient(&polar.r.values, grid.dx());
    VelocityFields {
        v: RealField {
            grid,
            values: ds.into_iter().map(|g| two_d0 * g).collect(),
        },
        u: RealField {
            grid,
            values: dr.into_iter().map(|g| two_d0 * g).collect(),
        },
        node_mask: widen_mask(&polar.node_mask, diff::STENCIL_RADIUS),
    }
}

/// Osmotic velocity in density form, `D0 (drho/dx) / rho`.
pub fn osmotic_from_density(polar: &PolarFields, units: &SimUnits) -> RealField {
    let rho = polar.density();
    let grad = diff::gradient(&rho.values, rho.grid.dx());
    RealField {
        grid: rho.grid,
        values: grad
            .iter()
            .zip(&rho.values)
            .map(|(g, r)| units.d0() * g / r.max(LOG_FLOOR))
            .collect(),
    }
}

/// Probability current `rho v` from the polar form; zero at masked points.
pub fn probability_flux(polar: &PolarFields, fields: &VelocityFields) -> Vec<f64> {
    let rho = polar.density();
    rho.values
        .iter()
        .zip(&fields.v.values)
        .zip(&fields.node_mask)
        .map(|((r, v), &m)| if m { 0.0 } else { r * v })
        .collect()
}

/// L2 norm of `drho/dt + d(rho v)/dx` between two snapshots `dt` apart.
pub fn continuity_residual(
    before: &WaveFunction,
    after: &WaveFunction,
    units: &SimUnits,
) -> Result<f64> {
    before.grid().check_same(after.grid())?;
    let dt = after.time - before.time;
    if !(dt > 0.0) {
        return Err(LabError::domain("snapshots must be ordered in time"));
    }
    let grid = *before.grid();
    let pa = polar_decompose(before, None)?;
    let pb = polar_decompose(after, None)?;
    let fa = probability_flux(&pa, &drift_fields(&pa, units));
    let fb = probability_flux(&pb, &drift_fields(&pb, units));
    let flux: Vec<f64> = fa.iter().zip(&fb).map(|(a, b)| 0.5 * (a + b)).collect();
    let div = diff::gradient(&flux, grid.dx());
    let ra = before.density();
    let rb = after.density();
    let sum: f64 = (0..grid.len())
        .map(|j| ((rb.values[j] - ra.values[j]) / dt + div[j]).powi(2))
        .sum();
    Ok((sum * grid.dx()).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::make_grid;
    use std::f64::consts::PI;

    fn units() -> SimUnits {
        SimUnits::default()
    }

    fn harmonic() -> Potential {
        Potential::Harmonic { omega: 1.0 }
    }

    #[test]
    fn harmonic_spectrum() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let states = solve_eigenstates(&harmonic(), &g, &units(), 2).unwrap();
        assert!((states[0].energy - 0.5).abs() / 0.5 < 1e-4);
        assert!((states[1].energy - 1.5).abs() / 1.5 < 1e-4);
    }

    #[test]
    fn box_ground_state_energy() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let width = 4.0;
        let states = solve_eigenstates(&Potential::Box { width }, &g, &units(), 1).unwrap();
        let expect = PI * PI / (2.0 * width * width);
        assert!((states[0].energy - expect).abs() / expect < 1e-3, "{}", states[0].energy);
    }

    #[test]
    fn harmonic_ground_state_shape() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let states = solve_eigenstates(&harmonic(), &g, &units(), 1).unwrap();
        for (j, z) in states[0].psi.field.values.iter().enumerate() {
            let x = g.x(j);
            assert!((z.re - PI.powf(-0.25) * (-x * x / 2.0).exp()).abs() < 1e-5);
            assert_eq!(z.im, 0.0);
        }
    }

    #[test]
    fn too_many_states_rejected() {
        let g = make_grid(-8.0, 8.0, 64).unwrap();
        assert!(solve_eigenstates(&harmonic(), &g, &units(), 16).is_err());
    }

    #[test]
    fn stationary_density_over_one_period() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let ground = &solve_eigenstates(&harmonic(), &g, &units(), 1).unwrap()[0];
        let dt = 2.0 * PI / 2000.0;
        let out = evolve_unitary(&ground.psi, &harmonic(), &units(), dt, 2000).unwrap();
        let d0 = ground.psi.density();
        let d1 = out.density();
        let err = d0.values.iter().zip(&d1.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        assert!(err < 1e-6, "{err}");
        assert!((out.time - 2.0 * PI).abs() < 1e-12);
    }

    #[test]
    fn free_packet_spreads() {
        let g = make_grid(-20.0, 20.0, 1024).unwrap();
        let psi = WaveFunction::from_fn(g, |x| Complex64::new((-x * x / 4.0).exp(), 0.0)).unwrap();
        assert!((psi.position_variance() - 1.0).abs() < 1e-10);
        let out = evolve_unitary(&psi, &Potential::Free, &units(), 1e-3, 1000).unwrap();
        assert!((out.position_variance() - 1.25).abs() < 1e-3);
    }

    #[test]
    fn norm_preserved_over_many_steps() {
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        let psi = WaveFunction::from_fn(g, |x| Complex64::from_polar((-(x - 1.0).powi(2)).exp(), 1.5 * x)).unwrap();
        let out = evolve_unitary(&psi, &harmonic(), &units(), 1e-3, 10_000).unwrap();
        assert!((out.field.norm_sqr() - 1.0).abs() < 1e-8);
    }

    #[test]
    fn unitary_rejects_large_steps() {
        let g = make_grid(-8.0, 8.0, 64).unwrap();
        let psi = WaveFunction::from_fn(g, |x| Complex64::new((-x * x).exp(), 0.0)).unwrap();
        assert!(evolve_unitary(&psi, &harmonic(), &units(), 1.0, 1).is_err());
        assert!(evolve_unitary(&psi, &harmonic(), &units(), -0.1, 1).is_err());
    }

    #[test]
    fn parabolic_projects_to_ground_state() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let start = WaveFunction::from_fn(g, |x| Complex64::new((-x * x / 8.0).exp(), 0.0)).unwrap();
        let run = evolve_parabolic(&start, &harmonic(), &units(), 0.01, 2000, true).unwrap();
        let exact = WaveFunction::from_fn(g, |x| Complex64::new((-x * x / 2.0).exp(), 0.0)).unwrap();
        let overlap = exact.field.inner(&run.state().unwrap().field).unwrap().norm();
        assert!(overlap >= 0.999, "{overlap}");
    }

    #[test]
    fn ground_state_is_parabolic_fixed_point() {
        let g = make_grid(-8.0, 8.0, 256).unwrap();
        let ground = solve_eigenstates(&harmonic(), &g, &units(), 1).unwrap().remove(0);
        let run = evolve_parabolic(&ground.psi, &harmonic(), &units(), 0.01, 1, true).unwrap();
        let err = run
            .field
            .values
            .iter()
            .zip(&ground.psi.field.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
    }

    #[test]
    fn parabolic_norm_decays_without_renormalization() {
        let g = make_grid(-8.0, 8.0, 256).unwrap();
        let start = WaveFunction::from_fn(g, |x| Complex64::new((-x * x / 8.0).exp(), 0.0)).unwrap();
        let run = evolve_parabolic(&start, &harmonic(), &units(), 0.01, 500, false).unwrap();
        let mut prev = 1.0;
        for &n in &run.norms {
            assert!(n < prev);
            prev = n;
        }
    }

    #[test]
    fn parabolic_detects_divergence_and_complex_input() {
        let g = make_grid(-8.0, 8.0, 128).unwrap();
        let start = WaveFunction::from_fn(g, |x| Complex64::new((-x * x).exp(), 0.0)).unwrap();
        let deep = Potential::Polynomial { coefficients: vec![-10.0] };
        assert!(matches!(
            evolve_parabolic(&start, &deep, &units(), 0.1, 1000, false),
            Err(LabError::Divergence { .. })
        ));
        let complex = WaveFunction::from_fn(g, |x| Complex64::from_polar((-x * x).exp(), x)).unwrap();
        assert!(evolve_parabolic(&complex, &harmonic(), &units(), 0.1, 1, true).is_err());
    }

    #[test]
    fn polar_form_of_boosted_gaussian() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let psi = WaveFunction::new(
            ComplexField::from_fn(g, |x| Complex64::from_polar(PI.powf(-0.25) * (-x * x / 2.0).exp(), 2.0 * x)),
            0.0,
        )
        .unwrap();
        let polar = polar_decompose(&psi, None).unwrap();
        let j0 = polar.node_mask.iter().position(|m| !m).unwrap();
        let s0 = polar.s.values[j0] - 2.0 * g.x(j0);
        for j in 0..g.len() {
            if polar.node_mask[j] {
                continue;
            }
            let x = g.x(j);
            assert!((polar.r.values[j] - (-x * x / 2.0 - 0.25 * PI.ln())).abs() < 1e-8);
            assert!((polar.s.values[j] - 2.0 * x - s0).abs() < 1e-8);
        }
        let mass: f64 = polar.density().values.iter().zip(&polar.node_mask)
            .filter(|(_, m)| !**m).map(|(r, _)| r).sum::<f64>() * g.dx();
        assert!((mass - 1.0).abs() < 1e-8);
    }

    #[test]
    fn nodes_are_masked_and_real_states_have_zero_phase() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let states = solve_eigenstates(&harmonic(), &g, &units(), 2).unwrap();
        let p1 = polar_decompose(&states[1].psi, None).unwrap();
        assert!(p1.node_mask[256]);
        let p0 = polar_decompose(&states[0].psi, None).unwrap();
        for (s, m) in p0.s.values.iter().zip(&p0.node_mask) {
            if !m {
                assert_eq!(*s, 0.0);
            }
        }
        let zero = WaveFunction {
            field: ComplexField::from_fn(g, |_| Complex64::new(1e-3, 0.0)),
            time: 0.0,
        };
        assert!(polar_decompose(&zero, Some(1.0)).is_err());
    }

    #[test]
    fn ground_state_drift_fields() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let psi = WaveFunction::from_fn(g, |x| Complex64::new((-x * x / 2.0).exp(), 0.0)).unwrap();
        let polar = polar_decompose(&psi, None).unwrap();
        let f = drift_fields(&polar, &units());
        let alt = osmotic_from_density(&polar, &units());
        for j in 0..g.len() {
            let x = g.x(j);
            if x.abs() <= 4.0 {
                assert!(f.v.values[j].abs() < 1e-5);
                assert!((f.u.values[j] + x).abs() < 1e-5);
            }
            if !f.node_mask[j] {
                assert!((f.u.values[j] - alt.values[j]).abs() < 1e-6, "x={x}");
            }
        }
    }

    #[test]
    fn gaussian_width_and_plane_phase_drifts() {
        let g = make_grid(-16.0, 16.0, 1024).unwrap();
        let units = SimUnits::new(0.8, 2.0).unwrap();
        let (sigma, k) = (1.5, 0.7);
        let psi = WaveFunction::from_fn(g, |x| {
            Complex64::from_polar((-x * x / (4.0 * sigma * sigma)).exp(), k * x)
        })
        .unwrap();
        let f = drift_fields(&polar_decompose(&psi, None).unwrap(), &units);
        for j in 0..g.len() {
            if f.node_mask[j] {
                continue;
            }
            let x = g.x(j);
            assert!((f.u.values[j] + units.hbar * x / (2.0 * units.mass * sigma * sigma)).abs() < 1e-8);
            assert!((f.v.values[j] - units.hbar * k / units.mass).abs() < 1e-8);
        }
    }

    #[test]
    fn eigenstate_phase_rotation() {
        let g = make_grid(-8.0, 8.0, 512).unwrap();
        let states = solve_eigenstates(&harmonic(), &g, &units(), 3).unwrap();
        let t = 1.0;
        for s in &states {
            let out = evolve_unitary(&s.psi, &harmonic(), &units(), 5e-4, 2000).unwrap();
            let ov = s.psi.field.inner(&out.field).unwrap();
            let expect = Complex64::from_polar(1.0, -s.energy * t);
            assert!((ov - expect).norm() < 1e-6, "{}", (ov - expect).norm());
        }
    }

    #[test]
    fn time_reversal_symmetry() {
        // With a real Hamiltonian, conj(U(t) psi) = U(-t) conj(psi): evolving the
        // conjugate of the evolved state forward by t returns conj(psi).
        let g = make_grid(-10.0, 10.0, 256).unwrap();
        let psi = WaveFunction::from_fn(g, |x| Complex64::from_polar((-(x - 1.0).powi(2)).exp(), 0.8 * x)).unwrap();
        let forward = evolve_unitary(&psi, &harmonic(), &units(), 1e-3, 500).unwrap();
        let back = evolve_unitary(&forward.conj(), &harmonic(), &units(), 1e-3, 500).unwrap();
        let err = back
            .conj()
            .field
            .values
            .iter()
            .zip(&psi.field.values)
            .map(|(a, b)| (a - b).norm())
            .fold(0.0, f64::max);
        assert!(err < 1e-9, "{err}");
    }

    #[test]
    fn continuity_holds_for_moving_packet() {
        let g = make_grid(-12.0, 12.0, 512).unwrap();
        let psi = WaveFunction::from_fn(g, |x| Complex64::from_polar((-(x - 1.0).powi(2) / 2.0).exp(), 0.5 * x)).unwrap();
        let p = UnitaryPropagator::new(&g, &harmonic(), &units(), 1e-3).unwrap();
        let a = p.advance(&psi, 100).unwrap();
        let b = p.advance(&a, 1).unwrap();
        let res = continuity_residual(&a, &b, &units()).unwrap();
        assert!(res <= 1e-4, "{res}");
    }

    #[test]
    fn branch_parameter_values() {
        assert_eq!(BranchParameter::Hyperbolic.lambda(), 1.0);
        assert_eq!(BranchParameter::from_lambda(-1.0).unwrap(), BranchParameter::Parabolic);
        assert!(BranchParameter::from_lambda(0.5).is_err());
    }
}
