use std::fmt;
use std::path::{Path, PathBuf};

use clap::ValueEnum;
use serde::{Deserialize, Serialize};

use conceptlab::aesindy::AesindyConfig;
use conceptlab::agents::AgentsConfig;
use conceptlab::bvae::BvaeConfig;
use conceptlab::data::{
    ConceptSetConfig, QaConfig, SindySetConfig, StateSetConfig, DEFAULT_LIFT_SCALE,
};
use conceptlab::sindy::{LibraryConfig, StlsqConfig};
use conceptlab::somvae::SomVaeConfig;

use crate::error::CliError;

/// Overrides the output root of every run when set.
pub const OUTPUT_ENV: &str = "CONCEPTLAB_OUTPUT_DIR";

#[derive(
    Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, ValueEnum,
)]
#[serde(rename_all = "lowercase")]
pub enum Module {
    Bvae,
    Agents,
    Sindy,
    Aesindy,
    Somvae,
}

impl Module {
    pub const ALL: [Module; 5] = [
        Module::Bvae,
        Module::Agents,
        Module::Sindy,
        Module::Aesindy,
        Module::Somvae,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Module::Bvae => "bvae",
            Module::Agents => "agents",
            Module::Sindy => "sindy",
            Module::Aesindy => "aesindy",
            Module::Somvae => "somvae",
        }
    }

    pub fn dataset(self) -> Dataset {
        match self {
            Module::Bvae => Dataset::Concepts,
            Module::Agents => Dataset::Qa,
            Module::Sindy => Dataset::Sindy,
            Module::Aesindy => Dataset::Lifted,
            Module::Somvae => Dataset::States,
        }
    }
}

impl fmt::Display for Module {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum Dataset {
    /// Concept-labelled windows.
    Concepts,
    /// Concept-labelled windows with question answers.
    Qa,
    /// Free-drainage levels and derivatives.
    Sindy,
    /// Degree-5 polynomial lift of the drainage set.
    Lifted,
    /// Phase-cycling stream with training windows.
    States,
}

impl Dataset {
    pub fn name(self) -> &'static str {
        match self {
            Dataset::Concepts => "concepts",
            Dataset::Qa => "qa",
            Dataset::Sindy => "sindy",
            Dataset::Lifted => "lifted",
            Dataset::States => "states",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub concepts: ConceptSetConfig,
    pub qa: QaConfig,
    pub sindy: SindySetConfig,
    pub lift_scale: f64,
    pub states: StateSetConfig,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            concepts: ConceptSetConfig::default(),
            qa: QaConfig::default(),
            sindy: SindySetConfig::default(),
            lift_scale: DEFAULT_LIFT_SCALE,
            states: StateSetConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SindyRunConfig {
    pub library: LibraryConfig,
    pub stlsq: StlsqConfig,
}

impl Default for SindyRunConfig {
    fn default() -> Self {
        Self {
            library: LibraryConfig::default(),
            stlsq: StlsqConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Held-out initial conditions for re-integration checks.
    pub held_out: usize,
    /// Steps per held-out trajectory.
    pub horizon: usize,
    /// Largest shift searched when estimating the timeline lag.
    pub max_lag: usize,
    /// Search half-width around the cycle length for the autocorrelation peak.
    pub period_tolerance: usize,
    /// Minimum share of the timeline for a state to count as used.
    pub min_state_share: f64,
    pub correlation_threshold: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            held_out: 10,
            horizon: 50,
            max_lag: 200,
            period_tolerance: 50,
            min_state_share: 0.05,
            correlation_threshold: 0.5,
        }
    }
}

/// Everything a run depends on. Defaults are written out in full into every
/// report so that a run can be reproduced from its outputs alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: String,
    pub modules: Vec<Module>,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub data: DataConfig,
    pub bvae: BvaeConfig,
    pub agents: AgentsConfig,
    pub sindy: SindyRunConfig,
    pub aesindy: AesindyConfig,
    pub somvae: SomVaeConfig,
    pub eval: EvalConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            experiment: "default".into(),
            modules: Module::ALL.to_vec(),
            seed: 0,
            output_dir: PathBuf::from("runs"),
            data: DataConfig::default(),
            bvae: BvaeConfig::default(),
            agents: AgentsConfig::default(),
            sindy: SindyRunConfig::default(),
            aesindy: AesindyConfig::default(),
            somvae: SomVaeConfig::default(),
            eval: EvalConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            CliError::missing(format!("cannot read config {}: {e}", path.display()))
        })?;
        let cfg: RunConfig = serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Copy with every learner seeded from the run seed.
    pub fn with_seed(&self, seed: u64) -> Self {
        let mut c = self.clone();
        c.seed = seed;
        c.bvae.seed = seed;
        c.agents.seed = seed;
        c.aesindy.seed = seed;
        c.somvae.seed = seed;
        c
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |what: &str, r: conceptlab::Result<()>| {
            r.map_err(|e| CliError::config(format!("{what}: {e}")))
        };
        if self.experiment.is_empty() || self.experiment.contains(['/', '\\']) {
            return Err(CliError::config(
                "experiment must be a non-empty name without path separators",
            ));
        }
        if self.modules.is_empty() {
            return Err(CliError::config("modules must list at least one module"));
        }
        wrap("data.concepts", self.data.concepts.validate())?;
        wrap("data.sindy", self.data.sindy.validate())?;
        wrap("data.states", self.data.states.validate())?;
        if !(self.data.lift_scale > 0.0 && self.data.lift_scale.is_finite()) {
            return Err(CliError::config("data.lift_scale must be positive"));
        }
        if !(self.data.qa.h_max > 0.0
            && self.data.qa.drain_eps > 0.0
            && self.data.qa.drain_substeps > 0)
        {
            return Err(CliError::config(
                "data.qa: h_max, drain_eps and drain_substeps must be positive",
            ));
        }
        wrap("bvae", self.bvae.validate())?;
        wrap("agents", self.agents.validate())?;
        wrap("aesindy", self.aesindy.validate())?;
        wrap("somvae", self.somvae.validate())?;
        if self.eval.held_out == 0 || self.eval.horizon == 0 {
            return Err(CliError::config(
                "eval.held_out and eval.horizon must be positive",
            ));
        }
        if !(0.0..=1.0).contains(&self.eval.min_state_share)
            || !(0.0..=1.0).contains(&self.eval.correlation_threshold)
        {
            return Err(CliError::config(
                "eval shares and thresholds must lie in [0, 1]",
            ));
        }
        Ok(())
    }
}

/// Output root: explicit flag, then the environment, then the config.
pub fn output_root(flag: Option<&Path>, config: &RunConfig) -> PathBuf {
    if let Some(p) = flag {
        return p.to_path_buf();
    }
    match std::env::var_os(OUTPUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => config.output_dir.clone(),
    }
}
