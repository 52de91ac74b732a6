//! Experiment configuration: a flat `key = value` text format with
//! sections, covering the environment selection, the agent
//! hyper-parameters, and the hashing/autoencoder settings.
//!
//! Every run serializes its configuration into the output directory, and
//! `parse(serialize(c)) == c` holds exactly.

use std::fmt::Write as _;

use thiserror::Error;

use crate::agent::{AgentConfig, Algorithm, Exploration, LeniencyMode, OptimizerKind};
use crate::replay::BetaSchedule;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NetworkChoice {
    /// Two conv layers (32/64 kernels) and a 1024-wide dense layer.
    Full,
    /// Dense-only network for desk-scale runs.
    Tiny,
}

impl NetworkChoice {
    fn tag(self) -> &'static str {
        match self {
            NetworkChoice::Full => "full",
            NetworkChoice::Tiny => "tiny",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExplorationChoice {
    Epsilon,
    Tbar,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LeniencyChoice {
    Tds,
    Atf,
}

/// Complete, serializable description of one run.
#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    // [run]
    pub layout: String,
    pub algorithm: Algorithm,
    pub episodes: usize,
    pub step_limit: u32,
    pub seed: u64,
    pub slippery: bool,
    pub noisy: bool,
    pub network: NetworkChoice,
    pub output_dir: String,
    // [agent]
    pub gamma: f64,
    pub alpha: f64,
    pub hysteretic_beta: f64,
    pub exploration: ExplorationChoice,
    pub epsilon_initial: f64,
    pub epsilon_decay: f64,
    pub epsilon_min: f64,
    pub xi: f64,
    pub moderation: f64,
    pub leniency: LeniencyChoice,
    pub tds_rho: f64,
    pub tds_decay: f64,
    pub atf_fold_in: f64,
    pub atf_decay: f64,
    pub nu_decay: f64,
    pub sync_period: u64,
    pub batch_size: usize,
    pub replay_warmup: usize,
    pub replay_capacity: usize,
    pub shdqn_beta_final: f64,
    pub shdqn_beta_decay: f64,
    pub shdqn_beta_floor: f64,
    // [hashing]
    pub hash_bits: usize,
    pub code_size: usize,
    pub projection_seed: u64,
    pub autoencoder_states: usize,
    pub autoencoder_steps: usize,
    pub autoencoder_batch: usize,
    pub autoencoder_alpha: f64,
    // [eval]
    pub classify_trials: usize,
}

impl Default for ExperimentConfig {
    /// Reference defaults: every published hyper-parameter at its stated
    /// value, full-size network, the original layout.
    fn default() -> Self {
        ExperimentConfig {
            layout: "original".into(),
            algorithm: Algorithm::Ldqn,
            episodes: 5000,
            step_limit: 10_000,
            seed: 1,
            slippery: false,
            noisy: false,
            network: NetworkChoice::Full,
            output_dir: "runs".into(),
            gamma: 0.95,
            alpha: 0.0001,
            hysteretic_beta: 0.7,
            exploration: ExplorationChoice::Tbar,
            epsilon_initial: 1.0,
            epsilon_decay: 0.999,
            epsilon_min: 0.05,
            xi: 0.25,
            moderation: 2.0,
            leniency: LeniencyChoice::Tds,
            tds_rho: -0.01,
            tds_decay: 0.95,
            atf_fold_in: 0.4,
            atf_decay: 0.99,
            nu_decay: 0.999,
            sync_period: 5000,
            batch_size: 32,
            replay_warmup: 5000,
            replay_capacity: crate::replay::DEFAULT_CAPACITY,
            shdqn_beta_final: 0.9,
            shdqn_beta_decay: 0.99,
            shdqn_beta_floor: 0.4,
            hash_bits: 64,
            code_size: 512,
            projection_seed: 1,
            autoencoder_states: 50_000,
            autoencoder_steps: 2000,
            autoencoder_batch: 16,
            autoencoder_alpha: 0.001,
            classify_trials: 20,
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`")]
    BadLine { line: usize },
    #[error("line {line}: unknown section {section:?}")]
    UnknownSection { section: String, line: usize },
    #[error("line {line}: unknown field {field:?}")]
    UnknownField { field: String, line: usize },
    #[error("field {field:?}: bad value {value:?}")]
    BadValue { field: String, value: String },
}

impl ExperimentConfig {
    pub fn serialize(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[run]");
        let _ = writeln!(s, "layout = {}", self.layout);
        let _ = writeln!(s, "algorithm = {}", self.algorithm.tag());
        let _ = writeln!(s, "episodes = {}", self.episodes);
        let _ = writeln!(s, "step_limit = {}", self.step_limit);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "slippery = {}", self.slippery);
        let _ = writeln!(s, "noisy = {}", self.noisy);
        let _ = writeln!(s, "network = {}", self.network.tag());
        let _ = writeln!(s, "output = {}", self.output_dir);
        let _ = writeln!(s, "[agent]");
        let _ = writeln!(s, "gamma = {}", self.gamma);
        let _ = writeln!(s, "alpha = {}", self.alpha);
        let _ = writeln!(s, "beta = {}", self.hysteretic_beta);
        let _ = writeln!(
            s,
            "exploration = {}",
            match self.exploration {
                ExplorationChoice::Epsilon => "epsilon",
                ExplorationChoice::Tbar => "tbar",
            }
        );
        let _ = writeln!(s, "epsilon_initial = {}", self.epsilon_initial);
        let _ = writeln!(s, "epsilon_decay = {}", self.epsilon_decay);
        let _ = writeln!(s, "epsilon_min = {}", self.epsilon_min);
        let _ = writeln!(s, "xi = {}", self.xi);
        let _ = writeln!(s, "k = {}", self.moderation);
        let _ = writeln!(
            s,
            "leniency = {}",
            match self.leniency {
                LeniencyChoice::Tds => "tds",
                LeniencyChoice::Atf => "atf",
            }
        );
        let _ = writeln!(s, "rho = {}", self.tds_rho);
        let _ = writeln!(s, "d = {}", self.tds_decay);
        let _ = writeln!(s, "atf_fold_in = {}", self.atf_fold_in);
        let _ = writeln!(s, "atf_decay = {}", self.atf_decay);
        let _ = writeln!(s, "mu = {}", self.nu_decay);
        let _ = writeln!(s, "sync_period = {}", self.sync_period);
        let _ = writeln!(s, "batch_size = {}", self.batch_size);
        let _ = writeln!(s, "replay_warmup = {}", self.replay_warmup);
        let _ = writeln!(s, "replay_capacity = {}", self.replay_capacity);
        let _ = writeln!(s, "shdqn_beta_final = {}", self.shdqn_beta_final);
        let _ = writeln!(s, "shdqn_beta_decay = {}", self.shdqn_beta_decay);
        let _ = writeln!(s, "shdqn_beta_floor = {}", self.shdqn_beta_floor);
        let _ = writeln!(s, "[hashing]");
        let _ = writeln!(s, "bits = {}", self.hash_bits);
        let _ = writeln!(s, "code_size = {}", self.code_size);
        let _ = writeln!(s, "projection_seed = {}", self.projection_seed);
        let _ = writeln!(s, "autoencoder_states = {}", self.autoencoder_states);
        let _ = writeln!(s, "autoencoder_steps = {}", self.autoencoder_steps);
        let _ = writeln!(s, "autoencoder_batch = {}", self.autoencoder_batch);
        let _ = writeln!(s, "autoencoder_alpha = {}", self.autoencoder_alpha);
        let _ = writeln!(s, "[eval]");
        let _ = writeln!(s, "classify_trials = {}", self.classify_trials);
        s
    }

    /// Parses the serialized format, starting from defaults so partial
    /// files stay valid.
    pub fn parse(text: &str) -> Result<ExperimentConfig, ConfigError> {
        let mut config = ExperimentConfig::default();
        let mut section = String::from("run");
        for (idx, raw) in text.lines().enumerate() {
            let line_no = idx + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or(ConfigError::BadLine { line: line_no })?;
                if !["run", "agent", "hashing", "eval"].contains(&name) {
                    return Err(ConfigError::UnknownSection {
                        section: name.to_string(),
                        line: line_no,
                    });
                }
                section = name.to_string();
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or(ConfigError::BadLine { line: line_no })?;
            let key = key.trim();
            let value = value.trim();
            config
                .apply(&section, key, value)
                .map_err(|e| match e {
                    ConfigError::UnknownField { field, .. } => {
                        ConfigError::UnknownField { field, line: line_no }
                    }
                    other => other,
                })?;
        }
        Ok(config)
    }

    /// Sets one field by its section-qualified name.
    pub fn apply(&mut self, section: &str, key: &str, value: &str) -> Result<(), ConfigError> {
        let bad = |field: &str, value: &str| ConfigError::BadValue {
            field: field.to_string(),
            value: value.to_string(),
        };
        macro_rules! parse_into {
            ($field:expr) => {
                *$field = value.parse().map_err(|_| bad(key, value))?
            };
        }
        match (section, key) {
            ("run", "layout") => self.layout = value.to_string(),
            ("run", "algorithm") => {
                self.algorithm = Algorithm::from_tag(value).ok_or_else(|| bad(key, value))?
            }
            ("run", "episodes") => parse_into!(&mut self.episodes),
            ("run", "step_limit") => parse_into!(&mut self.step_limit),
            ("run", "seed") => parse_into!(&mut self.seed),
            ("run", "slippery") => parse_into!(&mut self.slippery),
            ("run", "noisy") => parse_into!(&mut self.noisy),
            ("run", "network") => {
                self.network = match value {
                    "full" => NetworkChoice::Full,
                    "tiny" => NetworkChoice::Tiny,
                    _ => return Err(bad(key, value)),
                }
            }
            ("run", "output") => self.output_dir = value.to_string(),
            ("agent", "gamma") => parse_into!(&mut self.gamma),
            ("agent", "alpha") => parse_into!(&mut self.alpha),
            ("agent", "beta") => parse_into!(&mut self.hysteretic_beta),
            ("agent", "exploration") => {
                self.exploration = match value {
                    "epsilon" => ExplorationChoice::Epsilon,
                    "tbar" => ExplorationChoice::Tbar,
                    _ => return Err(bad(key, value)),
                }
            }
            ("agent", "epsilon_initial") => parse_into!(&mut self.epsilon_initial),
            ("agent", "epsilon_decay") => parse_into!(&mut self.epsilon_decay),
            ("agent", "epsilon_min") => parse_into!(&mut self.epsilon_min),
            ("agent", "xi") => parse_into!(&mut self.xi),
            ("agent", "k") => parse_into!(&mut self.moderation),
            ("agent", "leniency") => {
                self.leniency = match value {
                    "tds" => LeniencyChoice::Tds,
                    "atf" => LeniencyChoice::Atf,
                    _ => return Err(bad(key, value)),
                }
            }
            ("agent", "rho") => parse_into!(&mut self.tds_rho),
            ("agent", "d") => parse_into!(&mut self.tds_decay),
            ("agent", "atf_fold_in") => parse_into!(&mut self.atf_fold_in),
            ("agent", "atf_decay") => parse_into!(&mut self.atf_decay),
            ("agent", "mu") => parse_into!(&mut self.nu_decay),
            ("agent", "sync_period") => parse_into!(&mut self.sync_period),
            ("agent", "batch_size") => parse_into!(&mut self.batch_size),
            ("agent", "replay_warmup") => parse_into!(&mut self.replay_warmup),
            ("agent", "replay_capacity") => parse_into!(&mut self.replay_capacity),
            ("agent", "shdqn_beta_final") => parse_into!(&mut self.shdqn_beta_final),
            ("agent", "shdqn_beta_decay") => parse_into!(&mut self.shdqn_beta_decay),
            ("agent", "shdqn_beta_floor") => parse_into!(&mut self.shdqn_beta_floor),
            ("hashing", "bits") => parse_into!(&mut self.hash_bits),
            ("hashing", "code_size") => parse_into!(&mut self.code_size),
            ("hashing", "projection_seed") => parse_into!(&mut self.projection_seed),
            ("hashing", "autoencoder_states") => parse_into!(&mut self.autoencoder_states),
            ("hashing", "autoencoder_steps") => parse_into!(&mut self.autoencoder_steps),
            ("hashing", "autoencoder_batch") => parse_into!(&mut self.autoencoder_batch),
            ("hashing", "autoencoder_alpha") => parse_into!(&mut self.autoencoder_alpha),
            ("eval", "classify_trials") => parse_into!(&mut self.classify_trials),
            _ => {
                return Err(ConfigError::UnknownField {
                    field: format!("{section}.{key}"),
                    line: 0,
                })
            }
        }
        Ok(())
    }

    /// Stable hash of the serialized form, used in run directory names.
    pub fn content_hash(&self) -> u64 {
        crate::hashing::fnv1a64(self.serialize().as_bytes())
    }

    /// Directory name for one run of this configuration.
    pub fn run_id(&self) -> String {
        format!("{:08x}-s{}", self.content_hash() as u32, self.seed)
    }

    /// The agent-level view of this configuration.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            algorithm: self.algorithm,
            gamma: self.gamma,
            alpha: self.alpha,
            hysteretic_beta: self.hysteretic_beta,
            exploration: match self.exploration {
                ExplorationChoice::Epsilon => Exploration::EpsilonGreedy {
                    initial: self.epsilon_initial,
                    decay: self.epsilon_decay,
                    minimum: self.epsilon_min,
                },
                ExplorationChoice::Tbar => Exploration::TbarGreedy { xi: self.xi },
            },
            moderation: self.moderation,
            leniency_mode: match self.leniency {
                LeniencyChoice::Tds => LeniencyMode::Tds {
                    rho: self.tds_rho,
                    decay: self.tds_decay,
                },
                LeniencyChoice::Atf => LeniencyMode::Atf {
                    fold_in: self.atf_fold_in,
                    decay: self.atf_decay,
                },
            },
            nu_decay: self.nu_decay,
            sync_period: self.sync_period,
            batch_size: self.batch_size,
            replay_warmup: self.replay_warmup,
            replay_capacity: self.replay_capacity,
            step_limit: self.step_limit as usize,
            shdqn_schedule: BetaSchedule {
                final_beta: self.shdqn_beta_final,
                decay: self.shdqn_beta_decay,
                floor: self.shdqn_beta_floor,
            },
            optimizer: OptimizerKind::Adam,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_default() {
        let config = ExperimentConfig::default();
        let text = config.serialize();
        let parsed = ExperimentConfig::parse(&text).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn roundtrip_modified() {
        let mut config = ExperimentConfig::default();
        config.algorithm = Algorithm::Shdqn;
        config.layout = "maps/custom.txt".into();
        config.episodes = 500;
        config.slippery = true;
        config.noisy = true;
        config.network = NetworkChoice::Tiny;
        config.exploration = ExplorationChoice::Epsilon;
        config.xi = 0.5;
        config.moderation = 3.0;
        config.tds_decay = 0.9;
        config.seed = 77;
        let parsed = ExperimentConfig::parse(&config.serialize()).unwrap();
        assert_eq!(parsed, config);
    }

    #[test]
    fn parse_errors_name_the_field() {
        let err = ExperimentConfig::parse("[agent]\ngamma = fast\n").unwrap_err();
        assert_eq!(
            err,
            ConfigError::BadValue {
                field: "gamma".into(),
                value: "fast".into()
            }
        );
        let err = ExperimentConfig::parse("[agent]\nwarp = 9\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownField { field, .. } if field == "agent.warp"));
        let err = ExperimentConfig::parse("[cooking]\n").unwrap_err();
        assert!(matches!(err, ConfigError::UnknownSection { section, .. } if section == "cooking"));
    }

    #[test]
    fn partial_files_keep_defaults() {
        let config = ExperimentConfig::parse("[run]\nalgorithm = hdqn\n").unwrap();
        assert_eq!(config.algorithm, Algorithm::Hdqn);
        assert_eq!(config.gamma, 0.95);
        assert_eq!(config.replay_capacity, 250_000);
        assert_eq!(config.sync_period, 5000);
    }

    #[test]
    fn run_id_depends_on_config_and_seed() {
        let a = ExperimentConfig::default();
        let mut b = a.clone();
        b.seed = 2;
        assert_ne!(a.run_id(), b.run_id());
        let mut c = a.clone();
        c.moderation = 3.0;
        assert_ne!(a.run_id(), c.run_id());
    }
}
