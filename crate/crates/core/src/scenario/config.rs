use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::ScenarioError;
use crate::grid::{make_grid, Potential, SimUnits, SpatialGrid};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ScenarioName {
    OscillatorStationary,
    OscillatorExcited,
    FreePacket,
    CoherentSlosh,
    Custom,
}

impl ScenarioName {
    pub const ALL: [ScenarioName; 5] = [
        ScenarioName::OscillatorStationary,
        ScenarioName::OscillatorExcited,
        ScenarioName::FreePacket,
        ScenarioName::CoherentSlosh,
        ScenarioName::Custom,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ScenarioName::OscillatorStationary => "oscillator-stationary",
            ScenarioName::OscillatorExcited => "oscillator-excited",
            ScenarioName::FreePacket => "free-packet",
            ScenarioName::CoherentSlosh => "coherent-slosh",
            ScenarioName::Custom => "custom",
        }
    }

    pub fn summary(self) -> &'static str {
        match self {
            ScenarioName::OscillatorStationary => "harmonic ground state: spectrum, ensemble, estimators, Wigner, dispersion, hydro, parabolic",
            ScenarioName::OscillatorExcited => "first excited harmonic state: Wigner negativity and force-balance breakdown",
            ScenarioName::FreePacket => "free Gaussian packet: spreading ensemble and velocity-system cross-check",
            ScenarioName::CoherentSlosh => "displaced harmonic ground state: time-dependent drift over one period",
            ScenarioName::Custom => "user-defined grid, potential and initial state",
        }
    }
}

impl std::fmt::Display for ScenarioName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    pub x_min: f64,
    pub x_max: f64,
    pub n: usize,
}

impl GridSpec {
    pub fn build(&self) -> crate::Result<SpatialGrid> {
        make_grid(self.x_min, self.x_max, self.n)
    }
}

/// Initial wavefunction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialState {
    /// Eigenstate of the configured potential.
    Eigenstate { level: usize },
    /// `exp(-(x - x0)^2 / 4 sigma^2 + i k x)`, normalized.
    Gaussian { x0: f64, sigma: f64, k: f64 },
    /// `sum_j a_j exp(i phase_j) psi_{level_j}`, normalized.
    Superposition {
        levels: Vec<usize>,
        amplitudes: Vec<f64>,
        phases: Vec<f64>,
    },
}

impl InitialState {
    /// Number of eigenstates this state needs.
    pub fn levels_needed(&self) -> usize {
        match self {
            InitialState::Eigenstate { level } => level + 1,
            InitialState::Gaussian { .. } => 0,
            InitialState::Superposition { levels, .. } => levels.iter().max().map_or(0, |m| m + 1),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSpec {
    pub particles: usize,
    pub dt: f64,
    pub steps: usize,
    pub seed: u64,
    pub lag: usize,
    /// Steps kept as full trajectories for the drift and diffusion estimators.
    #[serde(default = "default_record_steps")]
    pub record_steps: usize,
    /// Histogram points for the density comparison (power of two).
    #[serde(default = "default_histogram_points")]
    pub histogram_points: usize,
    /// Density comparisons over the run, evenly spaced, plus `t = 0`.
    #[serde(default = "default_checkpoints")]
    pub checkpoints: usize,
    /// Half-width of the estimator bin range.
    #[serde(default = "default_estimator_half_width")]
    pub estimator_half_width: f64,
    /// Estimator bins (power of two).
    #[serde(default = "default_estimator_bins")]
    pub estimator_bins: usize,
}

fn default_record_steps() -> usize {
    50
}
fn default_histogram_points() -> usize {
    128
}
fn default_checkpoints() -> usize {
    10
}
fn default_estimator_half_width() -> f64 {
    4.0
}
fn default_estimator_bins() -> usize {
    64
}

/// Which analyses run. Solve, evolve and sample run whenever their inputs exist.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct Analyses {
    #[serde(default)]
    pub wigner: bool,
    #[serde(default)]
    pub dispersion: bool,
    #[serde(default)]
    pub force_balance: bool,
    #[serde(default)]
    pub hydro: bool,
    #[serde(default)]
    pub parabolic: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DispersionSpec {
    /// Particles in the displacement-dispersion run.
    pub bridge_particles: usize,
    /// Windows of length `delta_t_min` per path.
    pub bridge_windows: usize,
}

impl Default for DispersionSpec {
    fn default() -> Self {
        DispersionSpec {
            bridge_particles: 10_000,
            bridge_windows: 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct HydroSpec {
    pub t_final: f64,
}

impl Default for HydroSpec {
    fn default() -> Self {
        HydroSpec { t_final: 0.5 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ParabolicSpec {
    pub tau: f64,
    pub dtau: f64,
    /// Width of the real Gaussian the flow starts from.
    pub sigma: f64,
}

impl Default for ParabolicSpec {
    fn default() -> Self {
        ParabolicSpec {
            tau: 20.0,
            dtau: 0.01,
            sigma: 2.0,
        }
    }
}

/// Accepted range of one metric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bound {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
}

impl Bound {
    pub fn admits(&self, value: f64) -> bool {
        self.min.is_none_or(|m| value >= m) && self.max.is_none_or(|m| value <= m)
    }
}

/// Metrics a run can report; tolerances may only name these.
pub const METRICS: &[&str] = &[
    "spectrum_max_rel_error",
    "ground_energy",
    "norm_drift",
    "density_l1_max",
    "diffusion_estimate",
    "diffusion_rel_error",
    "osmotic_bins_checked",
    "osmotic_max_sigma",
    "wigner_two_route_max_diff",
    "wigner_integral_error",
    "wigner_min",
    "wigner_negative_fraction",
    "wigner_origin",
    "wigner_hermitian_defect",
    "wigner_x_marginal_error",
    "delta_e",
    "delta_t_min",
    "product_tk_error",
    "product_te_margin",
    "period_ratio",
    "bridge_ratio",
    "force_balance_rel_norm",
    "hydro_v_l2",
    "hydro_u_l2",
    "parabolic_overlap",
];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub scenario: ScenarioName,
    #[serde(default)]
    pub description: String,
    /// Output directory; relative paths resolve against the working directory.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub grid: GridSpec,
    #[serde(default)]
    pub units: SimUnits,
    pub potential: Potential,
    pub initial: InitialState,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ensemble: Option<EnsembleSpec>,
    #[serde(default)]
    pub analyses: Analyses,
    #[serde(default)]
    pub dispersion: DispersionSpec,
    #[serde(default)]
    pub hydro: HydroSpec,
    #[serde(default)]
    pub parabolic: ParabolicSpec,
    #[serde(default)]
    pub tolerances: BTreeMap<String, Bound>,
}

fn invalid(field: &str, msg: impl std::fmt::Display) -> ScenarioError {
    ScenarioError::Config(format!("{field}: {msg}"))
}

impl ScenarioConfig {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        toml::from_str(text).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    pub fn load(path: &Path) -> Result<Self, ScenarioError> {
        let text = std::fs::read_to_string(path).map_err(|error| ScenarioError::Io {
            path: path.to_path_buf(),
            error,
        })?;
        Self::from_toml(&text).map_err(|e| match e {
            ScenarioError::Config(msg) => ScenarioError::Config(format!("{}: {msg}", path.display())),
            other => other,
        })
    }

    pub fn to_toml(&self) -> Result<String, ScenarioError> {
        toml::to_string(self).map_err(|e| ScenarioError::Config(e.to_string()))
    }

    /// SHA-256 of the serialized config without its output directory.
    pub fn hash(&self) -> Result<String, ScenarioError> {
        let mut canonical = self.clone();
        canonical.output_dir = None;
        let text = canonical.to_toml()?;
        Ok(hex::encode(Sha256::digest(text.as_bytes())))
    }

    pub fn seed(&self) -> Option<u64> {
        self.ensemble.map(|e| e.seed)
    }

    pub fn validate(&self) -> Result<(), ScenarioError> {
        let grid = self.grid.build().map_err(|e| invalid("grid", format!("core.make_grid: {e}")))?;
        self.units.validate().map_err(|e| invalid("units", e))?;
        self.potential.validate(&grid).map_err(|e| invalid("potential", e))?;
        let max_levels = grid.len() / 4;
        match &self.initial {
            InitialState::Eigenstate { level } => {
                if *level >= max_levels {
                    return Err(invalid("initial.level", format!("{level} exceeds {}", max_levels - 1)));
                }
            }
            InitialState::Gaussian { sigma, .. } => {
                if !(*sigma > 0.0) {
                    return Err(invalid("initial.sigma", "must be positive"));
                }
            }
            InitialState::Superposition {
                levels,
                amplitudes,
                phases,
            } => {
                if levels.is_empty() || levels.len() != amplitudes.len() || levels.len() != phases.len() {
                    return Err(invalid(
                        "initial",
                        "levels, amplitudes and phases need the same non-zero length",
                    ));
                }
                if levels.iter().any(|&l| l >= max_levels) {
                    return Err(invalid("initial.levels", format!("levels must be below {max_levels}")));
                }
                if amplitudes.iter().all(|a| *a == 0.0) {
                    return Err(invalid("initial.amplitudes", "all amplitudes are zero"));
                }
            }
        }
        if self.initial.levels_needed() > 0 && matches!(self.potential, Potential::Free) {
            return Err(invalid("initial", "eigenstates need a confining potential"));
        }
        if let Some(e) = &self.ensemble {
            if e.seed > i64::MAX as u64 {
                return Err(invalid("ensemble.seed", format!("{} exceeds the TOML integer range", e.seed)));
            }
            if e.particles == 0 {
                return Err(invalid("ensemble.particles", "must be positive"));
            }
            if !(e.dt > 0.0 && e.dt.is_finite()) {
                return Err(invalid("ensemble.dt", "must be positive"));
            }
            if e.lag == 0 || e.record_steps <= e.lag {
                return Err(invalid("ensemble.lag", "needs 1 <= lag < record_steps"));
            }
            if e.checkpoints == 0 || e.steps < e.checkpoints {
                return Err(invalid("ensemble.checkpoints", "needs 1 <= checkpoints <= steps"));
            }
            make_grid(self.grid.x_min, self.grid.x_max, e.histogram_points)
                .map_err(|err| invalid("ensemble.histogram_points", format!("core.make_grid: {err}")))?;
            make_grid(-e.estimator_half_width, e.estimator_half_width, e.estimator_bins)
                .map_err(|err| invalid("ensemble.estimator_bins", format!("core.make_grid: {err}")))?;
        }
        if self.analyses.dispersion && self.ensemble.is_some() {
            let d = &self.dispersion;
            if d.bridge_particles == 0 || d.bridge_windows == 0 {
                return Err(invalid("dispersion", "bridge_particles and bridge_windows must be positive"));
            }
        }
        if self.analyses.hydro && !(self.hydro.t_final > 0.0) {
            return Err(invalid("hydro.t_final", "must be positive"));
        }
        if self.analyses.parabolic {
            let p = &self.parabolic;
            if !(p.tau > 0.0 && p.dtau > 0.0 && p.sigma > 0.0) {
                return Err(invalid("parabolic", "tau, dtau and sigma must be positive"));
            }
            if matches!(self.potential, Potential::Free) {
                return Err(invalid("parabolic", "the flow needs a confining potential"));
            }
        }
        for (name, bound) in &self.tolerances {
            if !METRICS.contains(&name.as_str()) {
                return Err(invalid("tolerances", format!("unknown metric `{name}`")));
            }
            if bound.min.is_none() && bound.max.is_none() {
                return Err(invalid(&format!("tolerances.{name}"), "needs min or max"));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const BASIC: &str = r#"
scenario = "custom"

[grid]
x_min = -10.0
x_max = 10.0
n = 256

[potential]
kind = "harmonic"
omega = 1.0

[initial]
kind = "eigenstate"
level = 0
"#;

    #[test]
    fn parses_minimal_config() {
        let c = ScenarioConfig::from_toml(BASIC).unwrap();
        assert_eq!(c.units, SimUnits::default());
        assert!(c.ensemble.is_none());
        c.validate().unwrap();
    }

    #[test]
    fn unknown_key_rejected() {
        let text = BASIC.replace("n = 256", "n = 256\nspacing = 0.1");
        let err = ScenarioConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("spacing"), "{err}");
    }

    #[test]
    fn bad_grid_names_make_grid() {
        let text = BASIC.replace("n = 256", "n = 7");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        let err = c.validate().unwrap_err();
        assert!(err.to_string().contains("core.make_grid"), "{err}");
        assert_eq!(err.exit_code(), 1);
    }

    #[test]
    fn unknown_tolerance_rejected() {
        let text = format!("{BASIC}\n[tolerances.nonsense]\nmax = 1.0\n");
        let c = ScenarioConfig::from_toml(&text).unwrap();
        assert!(c.validate().is_err());
    }

    #[test]
    fn hash_ignores_output_dir() {
        let a = ScenarioConfig::from_toml(BASIC).unwrap();
        let mut b = a.clone();
        b.output_dir = Some("elsewhere".into());
        assert_eq!(a.hash().unwrap(), b.hash().unwrap());
        b.grid.n = 512;
        assert_ne!(a.hash().unwrap(), b.hash().unwrap());
    }
}
