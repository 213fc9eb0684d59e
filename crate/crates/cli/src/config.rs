//! TOML run configuration, command-line overrides and the run manifest.

use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use platoon::env::EnvConfig;
use platoon::eval::{EvalSettings, Perturbation, ScenarioSpec, SpeedProfile};
use platoon::policy::PolicyShape;
use platoon::rewards::{CurriculumPhase, RewardConfig};
use platoon::track::{bundled, load_track};
use platoon::trainer::PpoConfig;
use platoon::Track;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Read {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Parse {
        path: PathBuf,
        #[source]
        source: toml::de::Error,
    },
    #[error("seed is required (set `seed` in the config file or pass --seed)")]
    MissingSeed,
    #[error("track {0:?} is neither a bundled track ({names}) nor an existing file", names = bundled::NAMES.join(", "))]
    MissingTrack(String),
    #[error("track {name:?}: {message}")]
    BadTrack { name: String, message: String },
    #[error("checkpoint {0} does not exist")]
    MissingCheckpoint(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvSection {
    pub platoon_size: usize,
    pub max_steps: u64,
    pub v2v: bool,
    pub caring: bool,
    pub start_speed_fraction: f64,
    pub start_jitter: f64,
}

impl Default for EnvSection {
    fn default() -> Self {
        let d = EnvConfig::<f64>::default();
        Self {
            platoon_size: d.platoon_size,
            max_steps: d.max_steps,
            v2v: d.v2v,
            caring: d.caring,
            start_speed_fraction: d.start_speed_fraction,
            start_jitter: d.start_jitter,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrackSection {
    /// Bundled track name or path of the training track.
    pub train: String,
}

impl Default for TrackSection {
    fn default() -> Self {
        Self {
            train: "training".into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PolicySection {
    pub hidden: Vec<usize>,
}

impl Default for PolicySection {
    fn default() -> Self {
        Self {
            hidden: PolicyShape::default().hidden,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub scenario: Option<u8>,
    pub checkpoint: Option<PathBuf>,
    pub platoon_size: usize,
    pub max_steps: u64,
    /// Replaces the scenario's bundled track.
    pub track: Option<String>,
    /// Curriculum phase whose event values the trace rewards use.
    pub phase: u8,
    pub remove_leader_at_step: u64,
    pub leader_profile: SpeedProfile,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            scenario: None,
            checkpoint: None,
            platoon_size: platoon::eval::DEFAULT_EVAL_PLATOON,
            max_steps: platoon::env::DEFAULT_MAX_STEPS,
            track: None,
            phase: 3,
            remove_leader_at_step: 500,
            leader_profile: SpeedProfile::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub out_dir: PathBuf,
    pub env: EnvSection,
    pub track: TrackSection,
    pub policy: PolicySection,
    pub rewards: RewardConfig<f64>,
    pub ppo: PpoConfig<f64>,
    pub eval: EvalSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            out_dir: PathBuf::from("runs/default"),
            env: EnvSection::default(),
            track: TrackSection::default(),
            policy: PolicySection::default(),
            rewards: RewardConfig::default(),
            ppo: PpoConfig::default(),
            eval: EvalSection::default(),
        }
    }
}

/// Command-line values; each `Some` replaces whatever the file or defaults gave.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub total_steps: Option<u64>,
    pub platoon_size: Option<usize>,
    pub scenario: Option<u8>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub v2v: Option<bool>,
    pub caring: Option<bool>,
}

/// Training-relevant part of the config; its hash tags checkpoints.
#[derive(Serialize)]
struct Canonical<'a> {
    seed: Option<u64>,
    env: &'a EnvSection,
    track: &'a TrackSection,
    policy: &'a PolicySection,
    rewards: &'a RewardConfig<f64>,
    ppo: &'a PpoConfig<f64>,
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self, ConfigError> {
        toml::from_str(text).map_err(|source| ConfigError::Parse {
            path: path.into(),
            source,
        })
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
            path: path.into(),
            source,
        })?;
        Self::parse(&text, path)
    }

    /// Defaults, then the file (if any), then the overrides.
    pub fn resolve(file: Option<&Path>, overrides: &Overrides) -> Result<Self, ConfigError> {
        let mut cfg = file.map(Self::load).transpose()?.unwrap_or_default();
        cfg.apply(overrides);
        Ok(cfg)
    }

    pub fn apply(&mut self, o: &Overrides) {
        if let Some(s) = o.seed {
            self.seed = Some(s);
        }
        if let Some(t) = o.total_steps {
            self.ppo.total_steps = t;
        }
        if let Some(n) = o.platoon_size {
            self.env.platoon_size = n;
            self.eval.platoon_size = n;
        }
        if let Some(s) = o.scenario {
            self.eval.scenario = Some(s);
        }
        if let Some(c) = &o.checkpoint {
            self.eval.checkpoint = Some(c.clone());
        }
        if let Some(d) = &o.out {
            self.out_dir = d.clone();
        }
        if let Some(v) = o.v2v {
            self.env.v2v = v;
        }
        if let Some(c) = o.caring {
            self.env.caring = c;
        }
    }

    pub fn seed(&self) -> Result<u64, ConfigError> {
        self.seed.ok_or(ConfigError::MissingSeed)
    }

    pub fn env_config(&self) -> EnvConfig<f64> {
        let mut rewards = self.rewards.clone();
        let base = EnvConfig::<f64>::default();
        rewards.dt = base.dt;
        EnvConfig {
            platoon_size: self.env.platoon_size,
            max_steps: self.env.max_steps,
            v2v: self.env.v2v,
            caring: self.env.caring,
            start_speed_fraction: self.env.start_speed_fraction,
            start_jitter: self.env.start_jitter,
            rewards,
            ..base
        }
    }

    pub fn policy_shape(&self) -> PolicyShape {
        PolicyShape {
            hidden: self.policy.hidden.clone(),
            ..PolicyShape::default()
        }
    }

    /// First eight bytes (little-endian) of the SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> u64 {
        let canonical = Canonical {
            seed: self.seed,
            env: &self.env,
            track: &self.track,
            policy: &self.policy,
            rewards: &self.rewards,
            ppo: &self.ppo,
        };
        let json = serde_json::to_string(&canonical).expect("config serializes");
        let digest = Sha256::digest(json.as_bytes());
        u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
    }

    pub fn validate_train(&self) -> Result<(), ConfigError> {
        self.seed()?;
        self.ppo.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        self.env_config().validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.policy.hidden.is_empty() || self.policy.hidden.contains(&0) {
            return Err(ConfigError::Invalid("policy.hidden needs at least one non-zero width".into()));
        }
        self.train_track().map(|_| ())
    }

    pub fn train_track(&self) -> Result<Track, ConfigError> {
        load_named_track(&self.track.train)
    }

    pub fn scenario_spec(&self, id: u8) -> Result<ScenarioSpec, ConfigError> {
        let mut spec = ScenarioSpec::standard(id).map_err(|e| ConfigError::Invalid(e.to_string()))?;
        spec.platoon_size = self.eval.platoon_size;
        spec.max_steps = self.eval.max_steps;
        if let Some(t) = &self.eval.track {
            if bundled::by_name(t).is_none() && !Path::new(t).is_file() {
                return Err(ConfigError::MissingTrack(t.clone()));
            }
            spec.track = t.clone();
        }
        spec.perturbation = match spec.perturbation {
            Perturbation::LeaderSpeedProfile(_) => Perturbation::LeaderSpeedProfile(self.eval.leader_profile),
            Perturbation::RemoveLeaderAtStep(_) => Perturbation::RemoveLeaderAtStep(self.eval.remove_leader_at_step),
            p => p,
        };
        spec.validate().map_err(|e| ConfigError::Invalid(e.to_string()))?;
        Ok(spec)
    }

    pub fn eval_settings(&self) -> Result<EvalSettings<f64>, ConfigError> {
        let phase = CurriculumPhase::ALL
            .into_iter()
            .find(|p| p.index() == self.eval.phase as usize)
            .ok_or_else(|| ConfigError::Invalid(format!("eval.phase must be 1, 2 or 3, got {}", self.eval.phase)))?;
        Ok(EvalSettings {
            env: self.env_config(),
            phase,
        })
    }

    pub fn checkpoint(&self) -> Result<&Path, ConfigError> {
        let c = self
            .eval
            .checkpoint
            .as_deref()
            .ok_or_else(|| ConfigError::Invalid("a checkpoint is required (--checkpoint)".into()))?;
        if !c.is_file() {
            return Err(ConfigError::MissingCheckpoint(c.into()));
        }
        Ok(c)
    }
}

pub fn load_named_track(name: &str) -> Result<Track, ConfigError> {
    let text = match bundled::by_name(name) {
        Some(t) => t.to_string(),
        None if Path::new(name).is_file() => std::fs::read_to_string(name).map_err(|source| ConfigError::Read {
            path: name.into(),
            source,
        })?,
        None => return Err(ConfigError::MissingTrack(name.into())),
    };
    load_track(&text).map_err(|e| ConfigError::BadTrack {
        name: name.into(),
        message: e.to_string(),
    })
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Versions {
    pub platoon: String,
    pub checkpoint_format: u32,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub config: RunConfig,
    pub config_hash: String,
    pub versions: Versions,
    pub created_unix_s: u64,
}

impl Manifest {
    pub fn new(command: &str, config: &RunConfig) -> Self {
        Self {
            command: command.into(),
            config: config.clone(),
            config_hash: format!("{:016x}", config.config_hash()),
            versions: Versions {
                platoon: env!("CARGO_PKG_VERSION").into(),
                checkpoint_format: platoon::policy::checkpoint::FORMAT_VERSION,
            },
            created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        }
    }

    pub fn write(&self, path: &Path) -> std::io::Result<()> {
        let json = serde_json::to_string_pretty(self).map_err(std::io::Error::other)?;
        std::fs::write(path, json + "\n")
    }
}
