//! Experiment configuration files.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use vfp_core::assimilate::{CovarianceSpec, Geometry, MethodSpec, SmootherSpec};
use vfp_core::densities::{DensityFamily, ObsTransform};
use vfp_core::dynamics::{Lorenz63, Lorenz96, ModelSystem, StepPolicy};
use vfp_core::flow::{FlowConfig, Metric};

use crate::error::ConfigError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    Lorenz63 {
        #[serde(default = "l63_sigma")]
        sigma: f64,
        #[serde(default = "l63_rho")]
        rho: f64,
        #[serde(default = "l63_beta")]
        beta: f64,
    },
    Lorenz96 {
        #[serde(default = "l96_n")]
        n: usize,
        #[serde(default = "l96_forcing")]
        forcing: f64,
    },
}

fn l63_sigma() -> f64 {
    10.0
}
fn l63_rho() -> f64 {
    28.0
}
fn l63_beta() -> f64 {
    8.0 / 3.0
}
fn l96_n() -> usize {
    40
}
fn l96_forcing() -> f64 {
    8.0
}

impl ModelConfig {
    pub fn dimension(&self) -> usize {
        match *self {
            Self::Lorenz63 { .. } => 3,
            Self::Lorenz96 { n, .. } => n,
        }
    }

    pub fn build(&self) -> Box<dyn ModelSystem> {
        match *self {
            Self::Lorenz63 { sigma, rho, beta } => Box::new(Lorenz63 { sigma, rho, beta }),
            Self::Lorenz96 { n, forcing } => Box::new(Lorenz96::new(n, forcing)),
        }
    }

    /// Grid used for localization: a ring for Lorenz '96, a line otherwise.
    pub fn geometry(&self) -> Geometry {
        match *self {
            Self::Lorenz63 { .. } => Geometry::Line { n: 3 },
            Self::Lorenz96 { n, .. } => Geometry::Ring { n },
        }
    }

    /// A point near the attractor from which the truth run is spun up.
    pub fn reference_state(&self) -> Vec<f64> {
        match *self {
            Self::Lorenz63 { .. } => vec![1.0, 1.0, 1.0],
            Self::Lorenz96 { n, forcing } => vec![forcing; n],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ObsErrorConfig {
    /// Independent errors with a common variance.
    Gaussian { variance: f64 },
    /// Independent Cauchy errors with a common scale `γ`.
    Cauchy { scale: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObservationConfig {
    /// Observed state indices; all of them when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<usize>>,
    #[serde(default)]
    pub transform: ObsTransform,
    pub error: ObsErrorConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum MethodConfig {
    Vfp(MethodSpec),
    /// ETKF; the inflation is tuned on a separate run when absent.
    Etkf {
        #[serde(default, skip_serializing_if = "Option::is_none")]
        inflation: Option<f64>,
    },
    Sir,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EtkfTuning {
    pub inflation_grid: Vec<f64>,
    /// Length of the tuning run, capped at the experiment's cycle count.
    pub tuning_cycles: usize,
}

impl Default for EtkfTuning {
    fn default() -> Self {
        Self { inflation_grid: vec![1.0, 1.02, 1.04, 1.06, 1.08, 1.1, 1.15, 1.2, 1.3, 1.5], tuning_cycles: 2000 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_ens: usize,
    /// Standard deviation of the initial perturbations around the truth.
    #[serde(default = "one")]
    pub spread: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Seeds {
    pub truth: u64,
    pub obs_noise: u64,
    pub init: u64,
    pub flow: u64,
}

impl Default for Seeds {
    fn default() -> Self {
        Self { truth: 1, obs_noise: 2, init: 3, flow: 4 }
    }
}

impl Seeds {
    pub fn offset(self, by: u64) -> Self {
        Self {
            truth: self.truth.wrapping_add(by),
            obs_noise: self.obs_noise.wrapping_add(by),
            init: self.init.wrapping_add(by),
            flow: self.flow.wrapping_add(by),
        }
    }
}

/// Sampling of the climatological covariance from a long truth run.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClimatologyConfig {
    pub samples: usize,
    /// Model time between samples.
    pub interval: f64,
}

impl Default for ClimatologyConfig {
    fn default() -> Self {
        Self { samples: 2000, interval: 0.5 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
    pub series: bool,
    pub ranks: bool,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { dir: PathBuf::from("results"), series: true, ranks: true }
    }
}

fn default_name() -> String {
    "experiment".into()
}
fn default_repetitions() -> usize {
    4
}
fn default_burn_in() -> f64 {
    10.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default = "default_name")]
    pub name: String,
    pub model: ModelConfig,
    #[serde(default)]
    pub integrator: StepPolicy,
    pub cycles: usize,
    pub spinup: usize,
    /// Assimilation interval.
    pub dt: f64,
    /// Model time the truth is run before the first cycle.
    #[serde(default = "default_burn_in")]
    pub truth_burn_in: f64,
    pub observation: ObservationConfig,
    pub method: MethodConfig,
    #[serde(default)]
    pub flow: FlowConfig,
    pub ensemble: EnsembleConfig,
    #[serde(default)]
    pub seeds: Seeds,
    #[serde(default = "default_repetitions")]
    pub repetitions: usize,
    /// State component tracked by the rank histograms.
    #[serde(default)]
    pub rank_component: usize,
    #[serde(default)]
    pub etkf: EtkfTuning,
    #[serde(default)]
    pub climatology: ClimatologyConfig,
    #[serde(default)]
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, ConfigError> {
        let cfg: Self = toml::from_str(text).map_err(|e| ConfigError::Parse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|e| ConfigError::Io(path.to_path_buf(), e.to_string()))?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("configuration serializes to TOML")
    }

    pub fn observed_indices(&self) -> Vec<usize> {
        self.observation.indices.clone().unwrap_or_else(|| (0..self.model.dimension()).collect())
    }

    /// Conventional name of the configured method, e.g. `LVFP(GG)`.
    pub fn method_name(&self) -> String {
        match &self.method {
            MethodConfig::Vfp(spec) => spec.name(self.flow.metric),
            MethodConfig::Etkf { .. } => "ETKF".into(),
            MethodConfig::Sir => "SIR".into(),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |field: &str, msg: String| Err(ConfigError::Invalid { field: field.into(), message: msg });
        let n = self.model.dimension();
        match self.model {
            ModelConfig::Lorenz96 { n, .. } if n < 4 => {
                return bad("model.n", format!("needs at least 4 states, got {n}"))
            }
            _ => {}
        }
        if self.cycles == 0 {
            return bad("cycles", "must be positive".into());
        }
        if self.spinup >= self.cycles {
            return bad("spinup", format!("{} must be smaller than cycles = {}", self.spinup, self.cycles));
        }
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad("dt", format!("must be positive, got {}", self.dt));
        }
        if !(self.truth_burn_in >= 0.0) {
            return bad("truth_burn_in", format!("must be nonnegative, got {}", self.truth_burn_in));
        }
        if let Some(idx) = &self.observation.indices {
            if idx.is_empty() {
                return bad("observation.indices", "must not be empty".into());
            }
            if let Some((k, &i)) = idx.iter().enumerate().find(|(_, &i)| i >= n) {
                return bad(&format!("observation.indices[{k}]"), format!("index {i} out of range for {n} states"));
            }
        }
        match self.observation.error {
            ObsErrorConfig::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => {
                return bad("observation.error.variance", format!("must be positive, got {variance}"))
            }
            ObsErrorConfig::Cauchy { scale } if !(scale > 0.0 && scale.is_finite()) => {
                return bad("observation.error.scale", format!("must be positive, got {scale}"))
            }
            _ => {}
        }
        if self.ensemble.n_ens < 2 {
            return bad("ensemble.n_ens", format!("need at least 2 members, got {}", self.ensemble.n_ens));
        }
        if !(self.ensemble.spread >= 0.0) {
            return bad("ensemble.spread", format!("must be nonnegative, got {}", self.ensemble.spread));
        }
        if self.repetitions == 0 {
            return bad("repetitions", "must be positive".into());
        }
        if self.rank_component >= n {
            return bad("rank_component", format!("{} out of range for {n} states", self.rank_component));
        }
        match &self.method {
            MethodConfig::Vfp(spec) => {
                spec.validate(n)
                    .map_err(|e| ConfigError::Invalid { field: "method".into(), message: e.to_string() })?;
                self.flow
                    .validate()
                    .map_err(|e| ConfigError::Invalid { field: "flow".into(), message: e.to_string() })?;
            }
            MethodConfig::Etkf { inflation: Some(f) } if !(*f >= 1.0) => {
                return bad("method.inflation", format!("must be at least 1, got {f}"))
            }
            MethodConfig::Etkf { inflation: None } => {
                if self.etkf.inflation_grid.is_empty() || self.etkf.inflation_grid.iter().any(|f| !(*f >= 1.0)) {
                    return bad("etkf.inflation_grid", "needs values of at least 1".into());
                }
                if self.etkf.tuning_cycles == 0 {
                    return bad("etkf.tuning_cycles", "must be positive".into());
                }
            }
            _ => {}
        }
        if self.climatology.samples < 2 || !(self.climatology.interval > 0.0) {
            return bad("climatology", "needs at least 2 samples and a positive interval".into());
        }
        Ok(())
    }

    /// Replaces the method by one given by its conventional name, e.g.
    /// `VFP(GH)`, `LVFPS(GG)`, `ShrVFPLn(G)`, `ETKF` or `SIR`.
    ///
    /// Localization keeps the configured radius (5 otherwise) and smoothers the
    /// configured window (5 otherwise).
    pub fn override_method(&mut self, name: &str) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Invalid { field: "--method".into(), message };
        match name.to_ascii_uppercase().as_str() {
            "ETKF" => {
                self.method = MethodConfig::Etkf { inflation: None };
                return Ok(());
            }
            "SIR" => {
                self.method = MethodConfig::Sir;
                return Ok(());
            }
            _ => {}
        }
        let previous = match &self.method {
            MethodConfig::Vfp(spec) => Some(spec.clone()),
            _ => None,
        };
        let (mut rest, covariance) = if let Some(r) = name.strip_prefix("Shr") {
            (r, CovarianceSpec::Shrinkage)
        } else if let Some(r) = name.strip_prefix('L') {
            let radius = match previous.as_ref().map(|s| s.covariance) {
                Some(CovarianceSpec::Localized { radius, .. }) => radius,
                _ => 5.0,
            };
            (r, CovarianceSpec::Localized { radius, geometry: self.model.geometry() })
        } else {
            (name, CovarianceSpec::Jitter)
        };
        rest = rest.strip_prefix("VFP").ok_or_else(|| invalid(format!("unknown method {name:?}")))?;
        let smoother = if let Some(r) = rest.strip_prefix('S') {
            rest = r;
            let window = previous.as_ref().and_then(|s| s.smoother).map_or(5, |s| s.window);
            Some(SmootherSpec { window })
        } else {
            None
        };
        let (metric, letters) =
            if let Some(r) = rest.strip_prefix("Ln") { (Metric::Langevin, r) } else { (Metric::Identity, rest) };
        let letters = letters
            .strip_prefix('(')
            .and_then(|r| r.strip_suffix(')'))
            .ok_or_else(|| invalid(format!("method {name:?} lacks the family letters, e.g. VFP(GG)")))?;
        let families: Vec<DensityFamily> = letters
            .chars()
            .map(|c| family_from_letter(c).ok_or_else(|| invalid(format!("unknown density letter {c:?} in {name:?}"))))
            .collect::<Result<_, _>>()?;
        let (prior, current) = match (metric, families.as_slice()) {
            (Metric::Identity, [p, q]) => (*p, *q),
            (Metric::Langevin, [p]) => (*p, DensityFamily::Gaussian),
            _ => return Err(invalid(format!("wrong number of density letters in {name:?}"))),
        };
        let etkf_warm_start = previous.as_ref().is_some_and(|s| s.etkf_warm_start);
        self.method = MethodConfig::Vfp(MethodSpec { prior, current, covariance, smoother, etkf_warm_start });
        self.flow.metric = metric;
        Ok(())
    }
}

fn family_from_letter(c: char) -> Option<DensityFamily> {
    Some(match c {
        'G' => DensityFamily::Gaussian,
        'L' => DensityFamily::Laplace,
        'H' => DensityFamily::huber(),
        'C' => DensityFamily::Cauchy,
        'K' => DensityFamily::Kernel,
        _ => return None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    pub(crate) const L63: &str = r#"
name = "l63"
cycles = 100
spinup = 10
dt = 0.12

[model]
kind = "lorenz63"

[observation]
error = { family = "gaussian", variance = 8.0 }

[method]
kind = "vfp"
prior = { kind = "gaussian" }
current = { kind = "gaussian" }

[flow]
diffusion = { kind = "background_anomalies", alpha = 0.1 }
regularization = { beta = 0.01 }

[ensemble]
n_ens = 50
"#;

    #[test]
    fn parses_with_defaults() {
        let cfg = ExperimentConfig::from_toml(L63).unwrap();
        assert_eq!(cfg.model.dimension(), 3);
        assert_eq!(cfg.repetitions, 4);
        assert_eq!(cfg.observed_indices(), vec![0, 1, 2]);
        assert_eq!(cfg.method_name(), "VFP(GG)");
        assert_eq!(cfg.flow.regularization.beta, 0.01);
    }

    #[test]
    fn round_trip() {
        let cfg = ExperimentConfig::from_toml(L63).unwrap();
        let again = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn errors_name_the_field() {
        let text = L63.replace("spinup = 10", "spinup = 100");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("spinup"), "{err}");
        let text = L63.replace("error = {", "indices = [0, 7]\nerror = {");
        let err = ExperimentConfig::from_toml(&text).unwrap_err();
        assert!(err.to_string().contains("observation.indices[1]"), "{err}");
        let text = L63.replace("n_ens = 50", "n_ens = 50\nsize = 3");
        assert!(matches!(ExperimentConfig::from_toml(&text), Err(ConfigError::Parse(_))));
    }

    #[test]
    fn method_names_override() {
        let mut cfg = ExperimentConfig::from_toml(L63).unwrap();
        for name in ["VFP(GH)", "LVFPS(GG)", "ShrVFPLn(G)", "VFP(CK)", "ETKF", "SIR"] {
            cfg.override_method(name).unwrap();
            assert_eq!(cfg.method_name(), name);
        }
        assert!(cfg.override_method("VFP(GX)").is_err());
        assert!(cfg.override_method("VFPLn(GG)").is_err());
        assert!(cfg.override_method("KF").is_err());
    }
}
