use std::path::PathBuf;

use serde::Serialize;

use super::config::{EnsembleSpec, InitialState, ScenarioConfig};
use super::output::Outputs;
use super::plot;
use super::report::{Provenance, RunReport, SummaryBuilder};
use super::ScenarioError;
use crate::dispersion::{displacement_dispersion, energy_dispersions, force_balance_residual, min_time_interval, momentum_moments_of};
use crate::error::LabError;
use crate::exec::Execution;
use crate::grid::{make_grid, ComplexField, Potential, RealField, SpatialGrid};
use crate::hydro::{gaussian_packet, hydro_consistency};
use crate::nelson::{
    advance_ensemble, empirical_density, estimate_backward_drift, estimate_diffusion, estimate_forward_drift,
    estimate_velocities, sample_density_with, step_forward_sde_with, DriftSchedule, DriftTable, Ensemble,
};
use crate::phase_space::{
    characteristic_function_with, default_offset_grid, density_from_amplitudes, marginals, negativity_report,
    phase_space_amplitude, wigner_from_characteristic, PhaseSpaceDensity,
};
use crate::schrodinger::{
    drift_fields, evolve_parabolic, polar_decompose, solve_eigenstates, Eigenstate, UnitaryPropagator,
    VelocityFields, WaveFunction,
};

/// Osmotic comparison uses bins with at least this many samples.
const OSMOTIC_MIN_COUNT: usize = 1000;
/// ... inside `|x| <=` this.
const OSMOTIC_WINDOW: f64 = 2.0;
/// Levels in the spectrum check of harmonic potentials.
const SPECTRUM_LEVELS: usize = 6;
/// Points per axis in the Wigner table and heatmap.
const WIGNER_TABLE_POINTS: usize = 128;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Solve,
    Evolve,
    Sample,
    Transform,
    Disperse,
    Hydro,
    Parabolic,
}

impl std::fmt::Display for Stage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Stage::Solve => "solve",
            Stage::Evolve => "evolve",
            Stage::Sample => "sample",
            Stage::Transform => "transform",
            Stage::Disperse => "disperse",
            Stage::Hydro => "hydro",
            Stage::Parabolic => "parabolic",
        })
    }
}

#[derive(Debug, Clone, Default)]
pub struct RunOptions {
    /// Overrides the configured output directory.
    pub output_dir: Option<PathBuf>,
    pub no_plots: bool,
    pub exec: Execution,
}

fn at(stage: Stage) -> impl Fn(LabError) -> ScenarioError {
    move |error| ScenarioError::Numerical { stage, error }
}

fn plot_err(path: PathBuf) -> impl FnOnce(String) -> ScenarioError {
    move |msg| ScenarioError::Io {
        path,
        error: std::io::Error::other(msg),
    }
}

/// Validates `config`, runs every enabled analysis and writes the outputs.
///
/// On failure the files written so far stay in place and the MANIFEST
/// records the run as incomplete.
pub fn run_scenario(config: &ScenarioConfig, options: &RunOptions) -> Result<RunReport, ScenarioError> {
    config.validate()?;
    let hash = config.hash()?;
    let dir = options
        .output_dir
        .clone()
        .or_else(|| config.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out").join(config.scenario.as_str()));
    let mut out = Outputs::create(&dir, &hash)?;
    let mut report = RunReport {
        scenario: config.scenario,
        description: config.description.clone(),
        provenance: Provenance {
            config_sha256: hash,
            seed: config.seed(),
            version: env!("CARGO_PKG_VERSION").to_string(),
        },
        analyses: Vec::new(),
        files: Vec::new(),
    };
    let outcome = Runner {
        config,
        options,
        out: &mut out,
        report: &mut report,
    }
    .execute();
    out.record("report.json");
    report.files = out.files().to_vec();
    let json = serde_json::to_string_pretty(&report).map_err(|e| ScenarioError::Io {
        path: out.path_of("report.json"),
        error: std::io::Error::other(e),
    })?;
    let written = std::fs::write(out.path_of("report.json"), json + "\n").map_err(|error| ScenarioError::Io {
        path: out.path_of("report.json"),
        error,
    });
    let failure = outcome.err().or(written.err());
    out.write_manifest(failure.as_ref())?;
    match failure {
        Some(e) => Err(e),
        None => Ok(report),
    }
}

struct Evolution {
    schedule: DriftSchedule,
    /// `(step, |psi|^2)` at each density checkpoint.
    densities: Vec<(usize, RealField)>,
    /// Osmotic velocity averaged over the recorded estimator window.
    mean_u: RealField,
    norm_drift: f64,
}

struct Runner<'a> {
    config: &'a ScenarioConfig,
    options: &'a RunOptions,
    out: &'a mut Outputs,
    report: &'a mut RunReport,
}

impl<'a> Runner<'a> {
    fn plots(&self) -> bool {
        !self.options.no_plots
    }

    fn summary(&self, name: &str) -> SummaryBuilder<'a> {
        SummaryBuilder::new(name, &self.config.tolerances)
    }

    fn meta(&self) -> Vec<String> {
        let u = &self.config.units;
        vec![
            format!("scenario: {}", self.config.scenario),
            format!("hbar = {}, mass = {}", u.hbar, u.mass),
        ]
    }

    fn execute(&mut self) -> Result<(), ScenarioError> {
        let config = self.config;
        let units = config.units;
        let grid = config.grid.build().map_err(at(Stage::Solve))?;
        let analyses = config.analyses;

        let (states, psi0) = self.solve(&grid)?;
        let (_, var_p) = momentum_moments_of(&psi0, &units);
        let delta_t_min = min_time_interval(var_p, &units);

        let ensemble = config.ensemble;
        let bridge_window = match (ensemble, delta_t_min) {
            (Some(e), Some(t)) if analyses.dispersion => Some(((t / e.dt).round() as usize).max(1)),
            _ => None,
        };
        let mut evolution = None;
        let mut start = None;
        if let Some(spec) = ensemble {
            let bridge_len = bridge_window.map_or(0, |w| w * config.dispersion.bridge_windows);
            let horizon = spec.steps.max(spec.record_steps).max(bridge_len);
            let ev = self.evolve(&psi0, &spec, horizon)?;
            start = Some(self.sample(&psi0, &spec, &ev)?);
            evolution = Some(ev);
        }
        if analyses.wigner {
            self.transform(&psi0)?;
        }
        if analyses.dispersion || analyses.force_balance {
            let bridge = match (&evolution, &start, bridge_window, ensemble) {
                (Some(ev), Some(ens), Some(w), Some(spec)) => Some((ev, ens, w, spec)),
                _ => None,
            };
            self.disperse(&psi0, &states, var_p, bridge)?;
        }
        if analyses.hydro {
            self.hydro(&psi0)?;
        }
        if analyses.parabolic {
            self.parabolic(&grid, &states)?;
        }
        Ok(())
    }

    fn solve(&mut self, grid: &SpatialGrid) -> Result<(Vec<Eigenstate>, WaveFunction), ScenarioError> {
        let config = self.config;
        let units = config.units;
        let potential = &config.potential;
        let omega = match potential {
            Potential::Harmonic { omega } => Some(*omega),
            _ => None,
        };
        let mut k = config.initial.levels_needed();
        if omega.is_some() {
            k = k.max(SPECTRUM_LEVELS);
        }
        if config.analyses.parabolic {
            k = k.max(1);
        }
        k = k.min(grid.len() / 4 - 1);
        let states = if k > 0 {
            solve_eigenstates(potential, grid, &units, k).map_err(at(Stage::Solve))?
        } else {
            Vec::new()
        };
        let mut s = self.summary("solve");
        if let Some(first) = states.first() {
            s.push("ground_energy", first.energy);
        }
        if let Some(w) = omega {
            let quantum = units.hbar * w;
            let worst = states
                .iter()
                .take(SPECTRUM_LEVELS)
                .enumerate()
                .map(|(n, st)| {
                    let exact = (n as f64 + 0.5) * quantum;
                    ((st.energy - exact) / exact).abs()
                })
                .fold(0.0, f64::max);
            s.push("spectrum_max_rel_error", worst);
            let rows = states.iter().enumerate().map(|(n, st)| {
                let exact = (n as f64 + 0.5) * quantum;
                vec![n as f64, st.energy, exact, (st.energy - exact) / exact]
            });
            self.out.write_table(
                "spectrum.csv",
                &self.meta(),
                &[("n", "1"), ("energy", "energy"), ("exact", "energy"), ("rel_error", "1")],
                rows.collect::<Vec<_>>(),
            )?;
        } else if !states.is_empty() {
            let rows = states.iter().enumerate().map(|(n, st)| vec![n as f64, st.energy]);
            self.out.write_table(
                "spectrum.csv",
                &self.meta(),
                &[("n", "1"), ("energy", "energy")],
                rows.collect::<Vec<_>>(),
            )?;
        }
        self.report.analyses.push(s.finish());

        let psi0 = initial_state(&config.initial, grid, &states).map_err(at(Stage::Solve))?;
        psi0.field.warn_if_edges_populated("initial state");
        let fields = drift_fields(&polar_decompose(&psi0, None).map_err(at(Stage::Solve))?, &units);
        let rho = psi0.density();
        let rows = (0..grid.len()).map(|j| {
            vec![
                grid.x(j),
                rho.values[j],
                fields.v.values[j],
                fields.u.values[j],
                if fields.node_mask[j] { 1.0 } else { 0.0 },
            ]
        });
        self.out.write_table(
            "fields.csv",
            &self.meta(),
            &[
                ("x", "length"),
                ("rho", "1/length"),
                ("v", "length/time"),
                ("u", "length/time"),
                ("masked", "1"),
            ],
            rows.collect::<Vec<_>>(),
        )?;
        Ok((states, psi0))
    }

    fn evolve(&mut self, psi0: &WaveFunction, spec: &EnsembleSpec, horizon: usize) -> Result<Evolution, ScenarioError> {
        let units = self.config.units;
        let grid = *psi0.grid();
        let propagator =
            UnitaryPropagator::new(&grid, &self.config.potential, &units, spec.dt).map_err(at(Stage::Evolve))?;
        let checkpoints = checkpoint_steps(spec);
        let mut psi = psi0.clone();
        let mut tables = Vec::with_capacity(horizon + 1);
        let mut densities = Vec::with_capacity(checkpoints.len());
        let mut u_sum = vec![0.0; grid.len()];
        for k in 0..=horizon {
            if k > 0 {
                propagator.step(&mut psi.field.values);
                psi.time += spec.dt;
            }
            let polar = polar_decompose(&psi, None).map_err(at(Stage::Evolve))?;
            let fields = drift_fields(&polar, &units);
            if k <= spec.record_steps {
                u_sum.iter_mut().zip(&fields.u.values).for_each(|(a, b)| *a += b);
            }
            tables.push(DriftTable::from_fields(&fields).map_err(at(Stage::Evolve))?);
            if checkpoints.contains(&k) {
                densities.push((k, psi.density()));
            }
        }
        let norm_drift = (psi.field.norm_sqr() - 1.0).abs();
        let scale = 1.0 / (spec.record_steps + 1) as f64;
        let mean_u = RealField {
            grid,
            values: u_sum.into_iter().map(|u| u * scale).collect(),
        };
        let mut s = self.summary("evolve");
        s.push("norm_drift", norm_drift);
        self.report.analyses.push(s.finish());
        Ok(Evolution {
            schedule: DriftSchedule { tables },
            densities,
            mean_u,
            norm_drift,
        })
    }

    fn sample(&mut self, psi0: &WaveFunction, spec: &EnsembleSpec, ev: &Evolution) -> Result<Ensemble, ScenarioError> {
        let units = self.config.units;
        let exec = self.options.exec;
        let fail = at(Stage::Sample);
        let g = self.config.grid;
        let hist = make_grid(g.x_min, g.x_max, spec.histogram_points).map_err(&fail)?;
        let start = sample_density_with(&psi0.density(), spec.particles, spec.seed, exec).map_err(&fail)?;
        log::debug!("evolution norm drift {:.3e}", ev.norm_drift);

        let mut ens = start.clone();
        let mut l1_rows = Vec::new();
        let mut last = None;
        for (step, rho) in &ev.densities {
            let todo = *step as u64 - ens.step_index;
            if todo > 0 {
                ens = advance_ensemble(&ens, &ev.schedule, &units, spec.dt, todo as usize, exec).map_err(&fail)?;
            }
            let empirical = empirical_density(&ens, &hist);
            let quantum = rho.resample(&hist);
            let l1 = empirical.l1_distance(&quantum).map_err(&fail)?;
            l1_rows.push(vec![*step as f64 * spec.dt, l1]);
            last = Some((ens.time, empirical, quantum));
        }
        let density_l1_max = l1_rows.iter().map(|r| r[1]).fold(0.0, f64::max);
        let (t_last, empirical, quantum) = last.expect("at least one checkpoint");
        let mut meta = self.meta();
        meta.push(format!("particles = {}, seed = {}, dt = {}", spec.particles, spec.seed, spec.dt));
        self.out.write_table(
            "density_l1.csv",
            &meta,
            &[("t", "time"), ("l1", "1")],
            l1_rows,
        )?;
        let mut dmeta = meta.clone();
        dmeta.push(format!("t = {t_last}"));
        let rows = (0..hist.len()).map(|j| vec![hist.x(j), empirical.values[j], quantum.values[j]]);
        self.out.write_table(
            "density.csv",
            &dmeta,
            &[("x", "length"), ("rho_empirical", "1/length"), ("rho_quantum", "1/length")],
            rows.collect::<Vec<_>>(),
        )?;
        if self.plots() {
            let path = self.out.path_of("density.svg");
            plot::density_overlay(&path, &hist.points(), &empirical.values, &quantum.values, t_last)
                .map_err(plot_err(path))?;
            self.out.record("density.svg");
        }

        let batch = step_forward_sde_with(&start, &ev.schedule, &units, spec.dt, spec.record_steps, exec).map_err(&fail)?;
        let diffusion = estimate_diffusion(&batch, spec.lag).map_err(&fail)?;
        let bins = make_grid(-spec.estimator_half_width, spec.estimator_half_width, spec.estimator_bins).map_err(&fail)?;
        let c = estimate_forward_drift(&batch, &bins, spec.lag).map_err(&fail)?;
        let c_star = estimate_backward_drift(&batch, &bins, spec.lag).map_err(&fail)?;
        let (v_est, u_est) = estimate_velocities(&batch, &bins, spec.lag).map_err(&fail)?;
        drop(batch);

        let (mut checked, mut worst) = (0usize, 0.0f64);
        let mut rows = Vec::with_capacity(bins.len());
        for b in 0..bins.len() {
            let x = bins.x(b);
            let analytic = ev.mean_u.at(x);
            if u_est.valid[b] && u_est.counts[b] >= OSMOTIC_MIN_COUNT && x.abs() <= OSMOTIC_WINDOW {
                checked += 1;
                worst = worst.max((u_est.values[b] - analytic).abs() / u_est.std_err[b]);
            }
            rows.push(vec![
                x,
                c.values[b],
                c_star.values[b],
                v_est.values[b],
                u_est.values[b],
                u_est.std_err[b],
                analytic,
                u_est.counts[b] as f64,
            ]);
        }
        let d0 = units.d0();
        let mut s = self.summary("sample");
        s.push("density_l1_max", density_l1_max);
        s.push("diffusion_estimate", diffusion);
        s.push("diffusion_rel_error", (diffusion - d0).abs() / d0);
        s.push("osmotic_bins_checked", checked as f64);
        s.push("osmotic_max_sigma", worst);
        self.report.analyses.push(s.finish());

        let mut emeta = meta;
        emeta.push(format!("record_steps = {}, lag = {}", spec.record_steps, spec.lag));
        self.out.write_table(
            "drift.csv",
            &emeta,
            &[
                ("x", "length"),
                ("c", "length/time"),
                ("c_star", "length/time"),
                ("v_est", "length/time"),
                ("u_est", "length/time"),
                ("u_std_err", "length/time"),
                ("u_analytic", "length/time"),
                ("count", "1"),
            ],
            rows.clone(),
        )?;
        if self.plots() {
            let valid: Vec<&Vec<f64>> = rows.iter().filter(|r| r[4].is_finite()).collect();
            let path = self.out.path_of("drift.svg");
            plot::drift_estimates(
                &path,
                &valid.iter().map(|r| r[0]).collect::<Vec<_>>(),
                &valid.iter().map(|r| r[4]).collect::<Vec<_>>(),
                &valid.iter().map(|r| r[5]).collect::<Vec<_>>(),
                &ev.mean_u,
            )
            .map_err(plot_err(path))?;
            self.out.record("drift.svg");
        }
        Ok(start)
    }

    fn transform(&mut self, psi0: &WaveFunction) -> Result<(), ScenarioError> {
        let units = self.config.units;
        let fail = at(Stage::Transform);
        let grid = *psi0.grid();
        let chi = characteristic_function_with(psi0, &default_offset_grid(&grid), self.options.exec).map_err(&fail)?;
        let f = wigner_from_characteristic(&chi, &units).map_err(&fail)?;
        let phi = phase_space_amplitude(psi0, &units).map_err(&fail)?;
        let f_amp = density_from_amplitudes(&phi).map_err(&fail)?;
        let two_route = f.max_difference(&f_amp).map_err(&fail)?;
        let neg = negativity_report(&f);
        let (mx, _) = marginals(&f);
        let rho = psi0.density();
        let marginal_err = mx.values.iter().zip(&rho.values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        let i0 = grid.cell_of(0.0);
        let k0 = (0..f.p.len()).min_by(|&a, &b| f.p[a].abs().total_cmp(&f.p[b].abs()));

        let mut s = self.summary("transform");
        s.push("wigner_two_route_max_diff", two_route);
        s.push("wigner_integral_error", (f.integral() - 1.0).abs());
        s.push("wigner_min", neg.min_value);
        s.push("wigner_negative_fraction", neg.negative_mass_fraction);
        if let (Some(i), Some(k)) = (i0, k0) {
            s.push("wigner_origin", f.at(i, k));
        }
        s.push("wigner_hermitian_defect", chi.hermitian_defect());
        s.push("wigner_x_marginal_error", marginal_err);
        self.report.analyses.push(s.finish());

        let (xs, ps, window) = wigner_window(&f);
        let mut meta = self.meta();
        meta.push(format!(
            "min F = {} at (x, p) = ({}, {})",
            neg.min_value, neg.location_of_min.0, neg.location_of_min.1
        ));
        meta.push(format!("full grid: {} x {} points, dp = {}", grid.len(), f.p.len(), f.dp));
        let rows = xs
            .iter()
            .flat_map(|&i| ps.iter().map(move |&k| (i, k)))
            .map(|(i, k)| vec![f.x_grid.x(i), f.p[k], f.at(i, k)]);
        self.out.write_table(
            "wigner.csv",
            &meta,
            &[("x", "length"), ("p", "momentum"), ("F", "1/(length momentum)")],
            rows.collect::<Vec<_>>(),
        )?;
        if self.plots() {
            let path = self.out.path_of("wigner.svg");
            plot::wigner_heatmap(&path, &f, &xs, &ps, window, &neg).map_err(plot_err(path))?;
            self.out.record("wigner.svg");
        }
        Ok(())
    }

    fn disperse(
        &mut self,
        psi0: &WaveFunction,
        states: &[Eigenstate],
        var_p: f64,
        bridge: Option<(&Evolution, &Ensemble, usize, EnsembleSpec)>,
    ) -> Result<(), ScenarioError> {
        let config = self.config;
        let units = config.units;
        let potential = &config.potential;
        let fail = at(Stage::Disperse);
        let mut s = self.summary("disperse");
        if config.analyses.dispersion {
            let rep = energy_dispersions(psi0, potential, &units).map_err(&fail)?;
            let half = 0.5 * units.hbar;
            s.push("delta_e", rep.delta_e);
            if let Some(t) = rep.delta_t_min {
                s.push("delta_t_min", t);
            }
            if let Some(p) = rep.product_tk {
                s.push("product_tk_error", (p - half).abs());
            }
            if let (Some(p), false) = (rep.product_te, rep.negative_delta_v) {
                s.push("product_te_margin", p - half);
            }
            if let (Potential::Harmonic { omega }, Some(t)) = (potential, rep.delta_t_min) {
                s.push("period_ratio", t * omega);
            }
            if let Some((ev, start, window, spec)) = bridge {
                let n = spec.particles.min(config.dispersion.bridge_particles);
                let ens = Ensemble::new(start.positions[..n].to_vec(), start.time, start.seed).map_err(&fail)?;
                let steps = window * config.dispersion.bridge_windows;
                let batch =
                    step_forward_sde_with(&ens, &ev.schedule, &units, spec.dt, steps, self.options.exec).map_err(&fail)?;
                let measured = displacement_dispersion(&batch, &ev.schedule, 0, window).map_err(&fail)?;
                let span = window as f64 * spec.dt;
                let expected = var_p * span * span / (units.mass * units.mass);
                s.push("bridge_ratio", measured / expected);
            }
            if let Potential::Harmonic { omega } = potential {
                let quantum = units.hbar * omega;
                let mut rows = Vec::new();
                for (n, st) in states.iter().enumerate() {
                    let d = energy_dispersions(&st.psi, potential, &units).map_err(&fail)?;
                    rows.push(vec![n as f64, st.energy, d.delta_e, st.energy - 0.5 * quantum, st.energy + 0.5 * quantum]);
                }
                if !rows.is_empty() {
                    self.out.write_table(
                        "bands.csv",
                        &self.meta(),
                        &[
                            ("n", "1"),
                            ("energy", "energy"),
                            ("delta_e", "energy"),
                            ("band_lower", "energy"),
                            ("band_upper", "energy"),
                        ],
                        rows.clone(),
                    )?;
                    if self.plots() {
                        let path = self.out.path_of("bands.svg");
                        plot::band_diagram(&path, &rows, quantum).map_err(plot_err(path))?;
                        self.out.record("bands.svg");
                    }
                }
            }
        }
        if config.analyses.force_balance {
            let fb = force_balance_residual(psi0, potential, &units).map_err(&fail)?;
            s.push("force_balance_rel_norm", fb.rel_norm);
            let g = fb.residual.grid;
            let rows = (0..g.len()).map(|j| vec![g.x(j), fb.residual.values[j], fb.stochastic_force.values[j]]);
            self.out.write_table(
                "force_balance.csv",
                &self.meta(),
                &[("x", "length"), ("residual", "force/length"), ("stochastic_force", "force")],
                rows.collect::<Vec<_>>(),
            )?;
        }
        self.report.analyses.push(s.finish());
        Ok(())
    }

    fn hydro(&mut self, psi0: &WaveFunction) -> Result<(), ScenarioError> {
        let units = self.config.units;
        let t_final = self.config.hydro.t_final;
        let (cmp, state, fields): (_, _, VelocityFields) =
            hydro_consistency(psi0, &self.config.potential, &units, t_final).map_err(at(Stage::Hydro))?;
        let mut s = self.summary("hydro");
        s.push("hydro_v_l2", cmp.v_l2);
        s.push("hydro_u_l2", cmp.u_l2);
        self.report.analyses.push(s.finish());
        let g = state.v.grid;
        let rows = (0..g.len()).map(|c| {
            let x = g.x(c);
            vec![x, state.v.values[c], state.u.values[c], fields.v.at(x), fields.u.at(x)]
        });
        let mut meta = self.meta();
        meta.push(format!("t = {t_final}, dt = {}, steps = {}", cmp.dt, cmp.steps));
        self.out.write_table(
            "hydro.csv",
            &meta,
            &[
                ("x", "length"),
                ("v_hydro", "length/time"),
                ("u_hydro", "length/time"),
                ("v_schrodinger", "length/time"),
                ("u_schrodinger", "length/time"),
            ],
            rows.collect::<Vec<_>>(),
        )
    }

    fn parabolic(&mut self, grid: &SpatialGrid, states: &[Eigenstate]) -> Result<(), ScenarioError> {
        let units = self.config.units;
        let spec = self.config.parabolic;
        let fail = at(Stage::Parabolic);
        let ground = states
            .first()
            .ok_or_else(|| fail(LabError::Domain("no ground state for the parabolic overlap".into())))?;
        let start = gaussian_packet(*grid, 0.0, spec.sigma, 0.0).map_err(&fail)?;
        let steps = (spec.tau / spec.dtau).round() as usize;
        let run = evolve_parabolic(&start, &self.config.potential, &units, spec.dtau, steps, true).map_err(&fail)?;
        let state = run.state().map_err(&fail)?;
        let overlap = ground.psi.field.inner(&state.field).map_err(&fail)?.norm_sqr();
        let mut s = self.summary("parabolic");
        s.push("parabolic_overlap", overlap);
        self.report.analyses.push(s.finish());
        let stride = (steps / 200).max(1);
        let rows = run
            .norms
            .iter()
            .enumerate()
            .filter(|(k, _)| (k + 1) % stride == 0)
            .map(|(k, n)| vec![(k + 1) as f64 * spec.dtau, *n]);
        self.out.write_table(
            "parabolic.csv",
            &self.meta(),
            &[("tau", "time"), ("step_norm", "1")],
            rows.collect::<Vec<_>>(),
        )
    }
}

fn initial_state(initial: &InitialState, grid: &SpatialGrid, states: &[Eigenstate]) -> crate::Result<WaveFunction> {
    match initial {
        InitialState::Eigenstate { level } => Ok(states[*level].psi.clone()),
        InitialState::Gaussian { x0, sigma, k } => gaussian_packet(*grid, *x0, *sigma, *k),
        InitialState::Superposition {
            levels,
            amplitudes,
            phases,
        } => {
            let mut values = vec![num_complex::Complex64::new(0.0, 0.0); grid.len()];
            for ((&l, &a), &ph) in levels.iter().zip(amplitudes).zip(phases) {
                let w = num_complex::Complex64::from_polar(a, ph);
                values.iter_mut().zip(&states[l].psi.field.values).for_each(|(v, s)| *v += w * s);
            }
            WaveFunction::normalized(ComplexField::new(*grid, values)?, 0.0)
        }
    }
}

fn checkpoint_steps(spec: &EnsembleSpec) -> Vec<usize> {
    let mut steps: Vec<usize> = (0..=spec.checkpoints)
        .map(|i| (i * spec.steps + spec.checkpoints / 2) / spec.checkpoints)
        .collect();
    steps.dedup();
    steps
}

/// Index ranges of `F` where the marginals are non-negligible, strided to
/// at most [`WIGNER_TABLE_POINTS`] per axis.
fn wigner_window(f: &PhaseSpaceDensity) -> (Vec<usize>, Vec<usize>, (f64, f64, f64, f64)) {
    let (mx, mp) = marginals(f);
    let span = |v: &[f64]| {
        let peak = v.iter().cloned().fold(0.0, f64::max);
        let lo = v.iter().position(|&a| a > 1e-6 * peak).unwrap_or(0);
        let hi = v.iter().rposition(|&a| a > 1e-6 * peak).unwrap_or(v.len() - 1);
        (lo, hi)
    };
    let pick = |(lo, hi): (usize, usize)| {
        let stride = (hi - lo + 1).div_ceil(WIGNER_TABLE_POINTS).max(1);
        (lo..=hi).step_by(stride).collect::<Vec<_>>()
    };
    let xr = span(&mx.values);
    let pr = span(&mp.values);
    let xs = pick(xr);
    let ps = pick(pr);
    let bounds = (f.x_grid.x(xr.0), f.x_grid.x(xr.1), f.p[pr.0], f.p[pr.1]);
    (xs, ps, bounds)
}
