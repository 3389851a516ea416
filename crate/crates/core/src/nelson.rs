//! Nelson diffusion ensembles and the finite-interval drift/diffusion estimators.
//!
//! Particles follow `dx = c(x, t) dt + sqrt(2 D0) dW` with `c = v + u`. Noise
//! comes from ChaCha8 streams keyed by (seed, particle) with the word position
//! fixed by the global step index, so every particle's path is reproducible
//! on its own and batches are bit-identical for any thread count.

use rand::RngCore;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{LabError, Result};
use crate::exec::{self, Execution};
use crate::grid::{RealField, SimUnits, SpatialGrid};
use crate::schrodinger::VelocityFields;

/// Bins with fewer samples are reported invalid.
pub const MIN_BIN_COUNT: usize = 50;

/// Largest tolerated fraction of particles clamped at the grid boundary.
pub const MAX_EXIT_FRACTION: f64 = 0.01;

const PARTICLES_PER_CHUNK: usize = 256;
const SAMPLING_DOMAIN: u64 = 0x5bd1_e995_0d3a_7c21;
const STEPPING_DOMAIN: u64 = 0x27d4_eb2f_1656_67c5;
/// ChaCha words consumed per noise draw (two u64).
const WORDS_PER_STEP: u128 = 4;

fn stream(seed: u64, domain: u64, particle: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ domain);
    rng.set_stream(particle as u64);
    rng
}

fn unit_open(rng: &mut ChaCha8Rng) -> f64 {
    ((rng.next_u64() >> 11) as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
}

/// Box-Muller draw; always consumes exactly two u64.
fn standard_normal(rng: &mut ChaCha8Rng) -> f64 {
    let a = unit_open(rng);
    let b = unit_open(rng);
    (-2.0 * a.ln()).sqrt() * (2.0 * std::f64::consts::PI * b).cos()
}

/// Particle positions at one time.
#[derive(Debug, Clone, PartialEq)]
pub struct Ensemble {
    pub positions: Vec<f64>,
    pub time: f64,
    pub seed: u64,
    /// Global index of the next SDE step; keys the noise streams.
    pub step_index: u64,
}

impl Ensemble {
    pub fn new(positions: Vec<f64>, time: f64, seed: u64) -> Result<Self> {
        if positions.is_empty() {
            return Err(LabError::domain("ensemble needs at least one particle"));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(LabError::domain("ensemble positions must be finite"));
        }
        Ok(Ensemble {
            positions,
            time,
            seed,
            step_index: 0,
        })
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.positions.iter().sum::<f64>() / self.len() as f64
    }

    pub fn variance(&self) -> f64 {
        let m = self.mean();
        self.positions.iter().map(|x| (x - m).powi(2)).sum::<f64>() / self.len() as f64
    }
}

/// Full paths, particle-major: `positions[i * columns + k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryBatch {
    pub positions: Vec<f64>,
    pub particles: usize,
    pub columns: usize,
    pub dt: f64,
    pub t0: f64,
    pub seed: u64,
}

impl TrajectoryBatch {
    pub fn path(&self, particle: usize) -> &[f64] {
        &self.positions[particle * self.columns..(particle + 1) * self.columns]
    }

    pub fn column(&self, k: usize) -> Vec<f64> {
        (0..self.particles).map(|i| self.positions[i * self.columns + k]).collect()
    }

    /// Ensemble at the last column.
    pub fn final_ensemble(&self, first_step: u64) -> Ensemble {
        Ensemble {
            positions: self.column(self.columns - 1),
            time: self.t0 + (self.columns - 1) as f64 * self.dt,
            seed: self.seed,
            step_index: first_step + (self.columns - 1) as u64,
        }
    }
}

/// Inverse-CDF sampling from the cell histogram `rho0` (piecewise-linear CDF).
pub fn sample_density(rho0: &RealField, n_particles: usize, seed: u64) -> Result<Ensemble> {
    sample_density_with(rho0, n_particles, seed, Execution::default())
}

pub fn sample_density_with(
    rho0: &RealField,
    n_particles: usize,
    seed: u64,
    exec: Execution,
) -> Result<Ensemble> {
    if let Some(v) = rho0.values.iter().find(|v| !(**v >= 0.0)) {
        return Err(LabError::domain(format!("density must be nonnegative, found {v}")));
    }
    let mass = rho0.integral();
    if (mass - 1.0).abs() > 1e-6 {
        return Err(LabError::domain(format!("density integrates to {mass}, expected 1")));
    }
    let grid = rho0.grid;
    let dx = grid.dx();
    let mut cdf = Vec::with_capacity(grid.len() + 1);
    cdf.push(0.0);
    for v in &rho0.values {
        cdf.push(cdf.last().unwrap() + v * dx);
    }
    let total = *cdf.last().unwrap();
    let positions = exec::map_indexed(exec, n_particles, |i| {
        let mut rng = stream(seed, SAMPLING_DOMAIN, i);
        let target = unit_open(&mut rng) * total;
        // first cell whose upper CDF exceeds the target
        let j = cdf[1..].partition_point(|&c| c <= target).min(grid.len() - 1);
        let frac = if rho0.values[j] > 0.0 {
            ((target - cdf[j]) / (rho0.values[j] * dx)).clamp(0.0, 1.0)
        } else {
            0.5
        };
        grid.x(j) - 0.5 * dx + frac * dx
    });
    Ensemble::new(positions, 0.0, seed)
}

/// Drift `c = v + u` prepared for interpolation.
///
/// Masked points take the nearest unmasked value and `|c|` is capped at ten
/// times the largest unmasked magnitude.
#[derive(Debug, Clone)]
pub struct DriftTable {
    grid: SpatialGrid,
    c: Vec<f64>,
}

impl DriftTable {
    pub fn from_fields(fields: &VelocityFields) -> Result<Self> {
        let grid = *fields.grid();
        let raw = fields.forward_drift();
        let mask = &fields.node_mask;
        let unmasked: Vec<usize> = (0..raw.len()).filter(|&j| !mask[j]).collect();
        if unmasked.is_empty() {
            return Err(LabError::domain("drift field is masked everywhere"));
        }
        let cap = 10.0 * unmasked.iter().map(|&j| raw[j].abs()).fold(0.0, f64::max);
        let mut c = raw.clone();
        for j in 0..c.len() {
            if mask[j] {
                let k = match unmasked.binary_search(&j) {
                    Ok(k) => unmasked[k],
                    Err(0) => unmasked[0],
                    Err(p) if p == unmasked.len() => unmasked[p - 1],
                    Err(p) => {
                        if j - unmasked[p - 1] <= unmasked[p] - j {
                            unmasked[p - 1]
                        } else {
                            unmasked[p]
                        }
                    }
                };
                c[j] = raw[k];
            }
            c[j] = c[j].clamp(-cap, cap);
        }
        Ok(DriftTable { grid, c })
    }

    pub fn grid(&self) -> &SpatialGrid {
        &self.grid
    }

    /// Piecewise-linear interpolation, clamped to the edge values outside the grid.
    pub fn eval(&self, x: f64) -> f64 {
        let t = (x - self.grid.x_min()) / self.grid.dx();
        if t <= 0.0 {
            return self.c[0];
        }
        let last = self.c.len() - 1;
        if t >= last as f64 {
            return self.c[last];
        }
        let j = t as usize;
        let w = t - j as f64;
        self.c[j] + w * (self.c[j + 1] - self.c[j])
    }

    /// Largest `|dc/dx|` between nodes.
    pub fn max_slope(&self) -> f64 {
        self.c
            .windows(2)
            .map(|w| (w[1] - w[0]).abs() / self.grid.dx())
            .fold(0.0, f64::max)
    }
}

/// Drift lookup by global step index.
pub trait DriftSource: Sync {
    fn table(&self, step: u64) -> &DriftTable;
}

impl DriftSource for DriftTable {
    fn table(&self, _step: u64) -> &DriftTable {
        self
    }
}

/// Time-dependent drift: one table per step, the last one reused beyond the end.
#[derive(Debug, Clone)]
pub struct DriftSchedule {
    pub tables: Vec<DriftTable>,
}

impl DriftSource for DriftSchedule {
    fn table(&self, step: u64) -> &DriftTable {
        let k = (step as usize).min(self.tables.len() - 1);
        &self.tables[k]
    }
}

fn check_step(units: &SimUnits, dt: f64, drift: &dyn DriftSource, first: u64) -> Result<()> {
    units.validate()?;
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(LabError::domain(format!("dt must be positive, got {dt}")));
    }
    let slope = drift.table(first).max_slope();
    if dt * slope >= 0.1 {
        log::warn!("dt * max|dc/dx| = {:.3} exceeds the 0.1 stability heuristic", dt * slope);
    }
    Ok(())
}

struct Walker<'a> {
    drift: &'a dyn DriftSource,
    dt: f64,
    noise: f64,
    lo: f64,
    hi: f64,
}

impl Walker<'_> {
    /// Advances one particle; writes every visited position through `record`.
    fn run(&self, seed: u64, particle: usize, x0: f64, first: u64, steps: usize, mut record: impl FnMut(usize, f64)) -> bool {
        let mut rng = stream(seed, STEPPING_DOMAIN, particle);
        rng.set_word_pos(first as u128 * WORDS_PER_STEP);
        let mut x = x0;
        let mut exited = false;
        record(0, x);
        for k in 0..steps {
            let c = self.drift.table(first + k as u64).eval(x);
            x += c * self.dt + self.noise * standard_normal(&mut rng);
            if x < self.lo || x > self.hi {
                x = x.clamp(self.lo, self.hi);
                exited = true;
            }
            record(k + 1, x);
        }
        exited
    }
}

fn exit_check(exited: usize, n: usize) -> Result<()> {
    let fraction = exited as f64 / n as f64;
    if fraction > MAX_EXIT_FRACTION {
        return Err(LabError::ExitFraction { fraction });
    }
    if exited > 0 {
        log::debug!("{exited} particles clamped at the grid boundary");
    }
    Ok(())
}

/// Euler-Maruyama paths `x_{k+1} = x_k + c(x_k, t_k) dt + sqrt(2 D0 dt) xi_k`.
pub fn step_forward_sde(
    ensemble: &Ensemble,
    drift: &dyn DriftSource,
    units: &SimUnits,
    dt: f64,
    steps: usize,
) -> Result<TrajectoryBatch> {
    step_forward_sde_with(ensemble, drift, units, dt, steps, Execution::default())
}

pub fn step_forward_sde_with(
    ensemble: &Ensemble,
    drift: &dyn DriftSource,
    units: &SimUnits,
    dt: f64,
    steps: usize,
    exec: Execution,
) -> Result<TrajectoryBatch> {
    let first = ensemble.step_index;
    check_step(units, dt, drift, first)?;
    let grid = *drift.table(first).grid();
    let walker = Walker {
        drift,
        dt,
        noise: (2.0 * units.d0() * dt).sqrt(),
        lo: grid.x_min(),
        hi: grid.x_max(),
    };
    let n = ensemble.len();
    let columns = steps + 1;
    let mut positions = vec![0.0; n * columns];
    let exited = AtomicUsize::new(0);
    exec::for_each_chunk_mut(exec, &mut positions, columns * PARTICLES_PER_CHUNK, |chunk, rows| {
        for (r, row) in rows.chunks_mut(columns).enumerate() {
            let i = chunk * PARTICLES_PER_CHUNK + r;
            if walker.run(ensemble.seed, i, ensemble.positions[i], first, steps, |k, x| row[k] = x) {
                exited.fetch_add(1, Ordering::Relaxed);
            }
        }
    });
    exit_check(exited.into_inner(), n)?;
    Ok(TrajectoryBatch {
        positions,
        particles: n,
        columns,
        dt,
        t0: ensemble.time,
        seed: ensemble.seed,
    })
}

/// Same dynamics as [`step_forward_sde`] but keeps only the final positions.
pub fn advance_ensemble(
    ensemble: &Ensemble,
    drift: &dyn DriftSource,
    units: &SimUnits,
    dt: f64,
    steps: usize,
    exec: Execution,
) -> Result<Ensemble> {
    let first = ensemble.step_index;
    check_step(units, dt, drift, first)?;
    let grid = *drift.table(first).grid();
    let walker = Walker {
        drift,
        dt,
        noise: (2.0 * units.d0() * dt).sqrt(),
        lo: grid.x_min(),
        hi: grid.x_max(),
    };
    let mut positions = ensemble.positions.clone();
    let exited = AtomicUsize::new(0);
    exec::for_each_chunk_mut(exec, &mut positions, PARTICLES_PER_CHUNK, |chunk, xs| {
        for (r, x) in xs.iter_mut().enumerate() {
            let i = chunk * PARTICLES_PER_CHUNK + r;
            let mut last = *x;
            if walker.run(ensemble.seed, i, *x, first, steps, |_, y| last = y) {
                exited.fetch_add(1, Ordering::Relaxed);
            }
            *x = last;
        }
    });
    exit_check(exited.into_inner(), ensemble.len())?;
    Ok(Ensemble {
        positions,
        time: ensemble.time + steps as f64 * dt,
        seed: ensemble.seed,
        step_index: first + steps as u64,
    })
}

/// Per-bin conditional means with sample counts and standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct BinnedField {
    pub bin_centers: Vec<f64>,
    /// `NaN` where the bin is invalid.
    pub values: Vec<f64>,
    pub counts: Vec<usize>,
    pub std_err: Vec<f64>,
    pub valid: Vec<bool>,
}

impl BinnedField {
    pub fn len(&self) -> usize {
        self.bin_centers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bin_centers.is_empty()
    }

    /// Iterator over `(center, value, std_err, count)` of valid bins.
    pub fn valid_bins(&self) -> impl Iterator<Item = (f64, f64, f64, usize)> + '_ {
        (0..self.len())
            .filter(|&b| self.valid[b])
            .map(|b| (self.bin_centers[b], self.values[b], self.std_err[b], self.counts[b]))
    }
}

#[derive(Clone)]
struct BinSums {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
    count: Vec<usize>,
}

impl BinSums {
    fn new(n: usize) -> Self {
        BinSums {
            sum: vec![0.0; n],
            sum_sq: vec![0.0; n],
            count: vec![0; n],
        }
    }

    fn merge(&mut self, other: &BinSums) {
        for b in 0..self.sum.len() {
            self.sum[b] += other.sum[b];
            self.sum_sq[b] += other.sum_sq[b];
            self.count[b] += other.count[b];
        }
    }
}

#[derive(Clone, Copy)]
enum Direction {
    Forward,
    Backward,
}

/// Bins `(x_{k+lag} - x_k)` (forward) or `(x_k - x_{k-lag})` (backward) by `x_k`.
fn accumulate(
    batch: &TrajectoryBatch,
    bins: &SpatialGrid,
    lag: usize,
    direction: Direction,
    scale: f64,
    exec: Execution,
) -> BinSums {
    let chunks = batch.particles.div_ceil(PARTICLES_PER_CHUNK);
    let partials = exec::map_indexed(exec, chunks, |c| {
        let mut s = BinSums::new(bins.len());
        let lo = c * PARTICLES_PER_CHUNK;
        let hi = (lo + PARTICLES_PER_CHUNK).min(batch.particles);
        for i in lo..hi {
            let path = batch.path(i);
            for k in 0..batch.columns {
                let d = match direction {
                    Direction::Forward if k + lag < batch.columns => path[k + lag] - path[k],
                    Direction::Backward if k >= lag => path[k] - path[k - lag],
                    _ => continue,
                };
                if let Some(b) = bins.cell_of(path[k]) {
                    let d = d * scale;
                    s.sum[b] += d;
                    s.sum_sq[b] += d * d;
                    s.count[b] += 1;
                }
            }
        }
        s
    });
    let mut total = BinSums::new(bins.len());
    for p in &partials {
        total.merge(p);
    }
    total
}

fn finish(sums: BinSums, bins: &SpatialGrid) -> Result<BinnedField> {
    let n = bins.len();
    let mut values = vec![f64::NAN; n];
    let mut std_err = vec![f64::NAN; n];
    let mut valid = vec![false; n];
    for b in 0..n {
        let c = sums.count[b];
        if c >= MIN_BIN_COUNT {
            let mean = sums.sum[b] / c as f64;
            let var = (sums.sum_sq[b] / c as f64 - mean * mean).max(0.0) * c as f64 / (c - 1) as f64;
            values[b] = mean;
            std_err[b] = (var / c as f64).sqrt();
            valid[b] = true;
        }
    }
    if !valid.iter().any(|&v| v) {
        return Err(LabError::AllBinsInvalid {
            min_count: MIN_BIN_COUNT,
        });
    }
    Ok(BinnedField {
        bin_centers: bins.points(),
        values,
        counts: sums.count,
        std_err,
        valid,
    })
}

fn check_lag(batch: &TrajectoryBatch, lag: usize) -> Result<()> {
    if lag == 0 || batch.columns < lag + 1 {
        return Err(LabError::domain(format!(
            "lag {lag} needs 1 <= lag < columns ({})",
            batch.columns
        )));
    }
    Ok(())
}

/// Forward drift `<(x_{k+lag} - x_k) / (lag dt)>` conditioned on the bin of `x_k`.
///
/// Samples from every starting column are pooled. Standard errors treat the
/// pooled increments as independent, which holds for `lag = 1`.
pub fn estimate_forward_drift(batch: &TrajectoryBatch, bins: &SpatialGrid, lag: usize) -> Result<BinnedField> {
    check_lag(batch, lag)?;
    let scale = 1.0 / (lag as f64 * batch.dt);
    finish(accumulate(batch, bins, lag, Direction::Forward, scale, Execution::default()), bins)
}

/// Backward drift `<(x_k - x_{k-lag}) / (lag dt)>` conditioned on the bin of `x_k`.
pub fn estimate_backward_drift(batch: &TrajectoryBatch, bins: &SpatialGrid, lag: usize) -> Result<BinnedField> {
    check_lag(batch, lag)?;
    let scale = 1.0 / (lag as f64 * batch.dt);
    finish(accumulate(batch, bins, lag, Direction::Backward, scale, Execution::default()), bins)
}

/// Bins used by [`estimate_diffusion`] to remove the conditional mean.
pub const DIFFUSION_BINS: usize = 64;

/// Drift-corrected `<(x_{k+lag} - x_k)^2> / (2 lag dt)`.
///
/// The squared conditional mean of the displacement, estimated on
/// [`DIFFUSION_BINS`] bins spanning the data, is subtracted per bin.
pub fn estimate_diffusion(batch: &TrajectoryBatch, lag: usize) -> Result<f64> {
    check_lag(batch, lag)?;
    let (lo, hi) = batch
        .positions
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &x| (a.min(x), b.max(x)));
    let pad = 1e-9 * (hi - lo).max(1.0);
    let bins = SpatialGrid::new(lo - pad, hi + pad, DIFFUSION_BINS)?;
    // shift so cell_of covers [lo, hi]: cells are centered on grid points
    let bins = SpatialGrid::new(bins.x_min() + 0.5 * bins.dx(), bins.x_max() + 0.5 * bins.dx(), DIFFUSION_BINS)?;
    let sums = accumulate(batch, &bins, lag, Direction::Forward, 1.0, Execution::default());
    let total: usize = sums.count.iter().sum();
    let raw: f64 = sums.sum_sq.iter().sum();
    let mean_part: f64 = (0..bins.len())
        .filter(|&b| sums.count[b] > 0)
        .map(|b| sums.sum[b] * sums.sum[b] / sums.count[b] as f64)
        .sum();
    Ok(((raw - mean_part) / total as f64).max(0.0) / (2.0 * lag as f64 * batch.dt))
}

/// `v = (c + c*) / 2`, `u = (c - c*) / 2`, bin by bin.
pub fn decompose_velocities(c: &BinnedField, c_star: &BinnedField) -> Result<(BinnedField, BinnedField)> {
    let same = c.len() == c_star.len()
        && c
            .bin_centers
            .iter()
            .zip(&c_star.bin_centers)
            .all(|(a, b)| (a - b).abs() <= 1e-12 * (1.0 + a.abs()));
    if !same {
        return Err(LabError::GridMismatch("forward and backward drifts use different bins".into()));
    }
    let n = c.len();
    let combine = |sign: f64| {
        let mut out = BinnedField {
            bin_centers: c.bin_centers.clone(),
            values: vec![f64::NAN; n],
            counts: (0..n).map(|b| c.counts[b].min(c_star.counts[b])).collect(),
            std_err: vec![f64::NAN; n],
            valid: (0..n).map(|b| c.valid[b] && c_star.valid[b]).collect(),
        };
        for b in 0..n {
            if out.valid[b] {
                out.values[b] = 0.5 * (c.values[b] + sign * c_star.values[b]);
                out.std_err[b] = 0.5 * c.std_err[b].hypot(c_star.std_err[b]);
            }
        }
        out
    };
    Ok((combine(1.0), combine(-1.0)))
}

#[derive(Clone)]
struct PairedSums {
    /// Per bin: sum over particles of the per-particle sums (v, u), their
    /// squares and cross terms with the per-particle count.
    sum: [Vec<f64>; 2],
    sum_sq: [Vec<f64>; 2],
    sum_dn: [Vec<f64>; 2],
    sum_nn: Vec<f64>,
    count: Vec<usize>,
}

impl PairedSums {
    fn new(n: usize) -> Self {
        PairedSums {
            sum: [vec![0.0; n], vec![0.0; n]],
            sum_sq: [vec![0.0; n], vec![0.0; n]],
            sum_dn: [vec![0.0; n], vec![0.0; n]],
            sum_nn: vec![0.0; n],
            count: vec![0; n],
        }
    }

    fn merge(&mut self, o: &PairedSums) {
        for b in 0..self.count.len() {
            for f in 0..2 {
                self.sum[f][b] += o.sum[f][b];
                self.sum_sq[f][b] += o.sum_sq[f][b];
                self.sum_dn[f][b] += o.sum_dn[f][b];
            }
            self.sum_nn[b] += o.sum_nn[b];
            self.count[b] += o.count[b];
        }
    }
}

/// `v` and `u` from paired increments around the same sample `x_k`:
/// `(x_{k+lag} - x_{k-lag}) / (2 lag dt)` and `(x_{k+lag} - 2 x_k + x_{k-lag}) / (2 lag dt)`.
///
/// Forward and backward increments along one path are correlated through
/// bin membership, so standard errors are clustered by particle (ratio
/// estimator over independent paths) instead of treating samples as
/// independent.
pub fn estimate_velocities(batch: &TrajectoryBatch, bins: &SpatialGrid, lag: usize) -> Result<(BinnedField, BinnedField)> {
    if lag == 0 || batch.columns < 2 * lag + 1 {
        return Err(LabError::domain(format!(
            "lag {lag} needs 2 lag < columns ({})",
            batch.columns
        )));
    }
    let nb = bins.len();
    let scale = 1.0 / (2.0 * lag as f64 * batch.dt);
    let chunks = batch.particles.div_ceil(PARTICLES_PER_CHUNK);
    let partials = exec::map_indexed(Execution::default(), chunks, |c| {
        let mut s = PairedSums::new(nb);
        let mut d = [vec![0.0; nb], vec![0.0; nb]];
        let mut n = vec![0usize; nb];
        let mut touched = Vec::new();
        let lo = c * PARTICLES_PER_CHUNK;
        let hi = (lo + PARTICLES_PER_CHUNK).min(batch.particles);
        for i in lo..hi {
            let path = batch.path(i);
            for k in lag..batch.columns - lag {
                if let Some(b) = bins.cell_of(path[k]) {
                    let (fwd, bwd) = (path[k + lag] - path[k], path[k] - path[k - lag]);
                    if n[b] == 0 {
                        touched.push(b);
                    }
                    d[0][b] += (fwd + bwd) * scale;
                    d[1][b] += (fwd - bwd) * scale;
                    n[b] += 1;
                }
            }
            for &b in &touched {
                let nn = n[b] as f64;
                for f in 0..2 {
                    s.sum[f][b] += d[f][b];
                    s.sum_sq[f][b] += d[f][b] * d[f][b];
                    s.sum_dn[f][b] += d[f][b] * nn;
                    d[f][b] = 0.0;
                }
                s.sum_nn[b] += nn * nn;
                s.count[b] += n[b];
                n[b] = 0;
            }
            touched.clear();
        }
        s
    });
    let mut total = PairedSums::new(nb);
    for p in &partials {
        total.merge(p);
    }
    let field = |f: usize| {
        let mut out = BinnedField {
            bin_centers: bins.points(),
            values: vec![f64::NAN; nb],
            counts: total.count.clone(),
            std_err: vec![f64::NAN; nb],
            valid: vec![false; nb],
        };
        for b in 0..nb {
            let cnt = total.count[b];
            if cnt >= MIN_BIN_COUNT {
                let big_n = cnt as f64;
                let r = total.sum[f][b] / big_n;
                let resid = total.sum_sq[f][b] - 2.0 * r * total.sum_dn[f][b] + r * r * total.sum_nn[b];
                out.values[b] = r;
                out.std_err[b] = resid.max(0.0).sqrt() / big_n;
                out.valid[b] = true;
            }
        }
        out
    };
    let (v, u) = (field(0), field(1));
    if !u.valid.iter().any(|&x| x) {
        return Err(LabError::AllBinsInvalid {
            min_count: MIN_BIN_COUNT,
        });
    }
    Ok((v, u))
}

/// Normalized histogram of the ensemble on the cells of `grid`.
pub fn empirical_density(ensemble: &Ensemble, grid: &SpatialGrid) -> RealField {
    let mut counts = vec![0usize; grid.len()];
    for &x in &ensemble.positions {
        if let Some(b) = grid.cell_of(x) {
            counts[b] += 1;
        }
    }
    let total: usize = counts.iter().sum();
    let norm = if total > 0 { 1.0 / (total as f64 * grid.dx()) } else { 0.0 };
    RealField {
        grid: *grid,
        values: counts.into_iter().map(|c| c as f64 * norm).collect(),
    }
}
