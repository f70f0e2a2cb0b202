//! Flat `key = value` training configuration: parsing, defaults, and the
//! resolved echo written into every run directory.

use crate::error::{Error, Result};
use crate::grpo::StdMode;
use crate::policy::PolicyKind;
use serde::{Deserialize, Serialize};

/// Where rewards come from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RewardMode {
    /// Pseudo-rewards from the group's majority vote; no labels read.
    Majority,
    /// Supervised rewards from task labels (the baseline comparison).
    GroundTruth,
}

impl RewardMode {
    pub fn as_str(&self) -> &'static str {
        match self {
            RewardMode::Majority => "majority",
            RewardMode::GroundTruth => "ground_truth",
        }
    }
}

impl std::str::FromStr for RewardMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "majority" => Ok(RewardMode::Majority),
            "ground_truth" => Ok(RewardMode::GroundTruth),
            other => Err(Error::InvalidConfig(format!(
                "unknown reward mode {other:?}"
            ))),
        }
    }
}

/// Training hyperparameters. Config files use exactly these field names.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub group_size: usize,
    pub clip_eps: f64,
    pub kl_beta: f64,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub grad_clip_norm: f64,
    pub episodes: usize,
    pub batch_tasks_per_step: usize,
    pub temperature: f64,
    pub seed: u64,
    pub reward_mode: RewardMode,
    pub policy_kind: PolicyKind,
    pub std_mode: StdMode,
    pub inner_epochs: usize,
    pub skip_zero_variance: bool,
    pub eval_every: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            group_size: 8,
            clip_eps: 0.2,
            kl_beta: 0.01,
            learning_rate: 1e-6,
            weight_decay: 1e-2,
            grad_clip_norm: 1.0,
            episodes: 15,
            batch_tasks_per_step: 1,
            temperature: 1.0,
            seed: 0,
            reward_mode: RewardMode::Majority,
            policy_kind: PolicyKind::Bandit,
            std_mode: StdMode::Population,
            inner_epochs: 1,
            skip_zero_variance: false,
            eval_every: 10,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| {
            if ok {
                Ok(())
            } else {
                Err(Error::InvalidConfig(msg.to_string()))
            }
        };
        check(self.group_size >= 2, "group_size must be >= 2")?;
        check(
            self.clip_eps > 0.0 && self.clip_eps < 1.0,
            "clip_eps must lie in (0,1)",
        )?;
        check(
            self.kl_beta >= 0.0 && self.kl_beta.is_finite(),
            "kl_beta must be >= 0",
        )?;
        check(
            self.learning_rate > 0.0 && self.learning_rate.is_finite(),
            "learning_rate must be positive",
        )?;
        check(
            self.weight_decay >= 0.0 && self.weight_decay.is_finite(),
            "weight_decay must be >= 0",
        )?;
        check(
            self.grad_clip_norm > 0.0 && self.grad_clip_norm.is_finite(),
            "grad_clip_norm must be positive",
        )?;
        check(self.episodes >= 1, "episodes must be >= 1")?;
        check(
            self.batch_tasks_per_step >= 1,
            "batch_tasks_per_step must be >= 1",
        )?;
        check(
            self.temperature > 0.0 && self.temperature.is_finite(),
            "temperature must be positive",
        )?;
        check(self.inner_epochs >= 1, "inner_epochs must be >= 1")?;
        check(self.eval_every >= 1, "eval_every must be >= 1")?;
        Ok(())
    }

    /// Parse `key = value` lines; unset keys keep their defaults. `#`
    /// starts a comment. Unknown keys are rejected.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = TrainConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::InvalidConfig(format!("line {}: expected key = value", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())
                .map_err(|e| Error::InvalidConfig(format!("line {}: {e}", lineno + 1)))?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
            value
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("bad value {value:?} for {key}")))
        }
        match key {
            "group_size" => self.group_size = num(key, value)?,
            "clip_eps" => self.clip_eps = num(key, value)?,
            "kl_beta" => self.kl_beta = num(key, value)?,
            "learning_rate" => self.learning_rate = num(key, value)?,
            "weight_decay" => self.weight_decay = num(key, value)?,
            "grad_clip_norm" => self.grad_clip_norm = num(key, value)?,
            "episodes" => self.episodes = num(key, value)?,
            "batch_tasks_per_step" => self.batch_tasks_per_step = num(key, value)?,
            "temperature" => self.temperature = num(key, value)?,
            "seed" => self.seed = num(key, value)?,
            "reward_mode" => self.reward_mode = value.parse()?,
            "policy_kind" => self.policy_kind = value.parse()?,
            "std_mode" => self.std_mode = value.parse()?,
            "inner_epochs" => self.inner_epochs = num(key, value)?,
            "skip_zero_variance" => self.skip_zero_variance = num(key, value)?,
            "eval_every" => self.eval_every = num(key, value)?,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown config key {other:?}"
                )));
            }
        }
        Ok(())
    }

    /// Resolved `key = value` text; parsing it reproduces this config.
    pub fn to_config_text(&self) -> String {
        format!(
            "group_size = {}\nclip_eps = {}\nkl_beta = {}\nlearning_rate = {}\n\
             weight_decay = {}\ngrad_clip_norm = {}\nepisodes = {}\n\
             batch_tasks_per_step = {}\ntemperature = {}\nseed = {}\nreward_mode = {}\n\
             policy_kind = {}\nstd_mode = {}\ninner_epochs = {}\nskip_zero_variance = {}\n\
             eval_every = {}\n",
            self.group_size,
            self.clip_eps,
            self.kl_beta,
            self.learning_rate,
            self.weight_decay,
            self.grad_clip_norm,
            self.episodes,
            self.batch_tasks_per_step,
            self.temperature,
            self.seed,
            self.reward_mode.as_str(),
            self.policy_kind.as_str(),
            self.std_mode.as_str(),
            self.inner_epochs,
            self.skip_zero_variance,
            self.eval_every,
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_are_valid() {
        let cfg = TrainConfig::default();
        cfg.validate().unwrap();
        assert_eq!(cfg.episodes, 15);
        assert_eq!(cfg.kl_beta, 0.01);
        assert_eq!(cfg.learning_rate, 1e-6);
        assert_eq!(cfg.weight_decay, 1e-2);
        assert_eq!(cfg.grad_clip_norm, 1.0);
        assert_eq!(cfg.group_size, 8);
        assert_eq!(cfg.clip_eps, 0.2);
        assert_eq!(cfg.temperature, 1.0);
        assert_eq!(cfg.batch_tasks_per_step, 1);
    }

    #[test]
    fn round_trip_through_text() {
        let cfg = TrainConfig {
            learning_rate: 0.01,
            policy_kind: PolicyKind::Seq,
            reward_mode: RewardMode::GroundTruth,
            skip_zero_variance: true,
            seed: 1234,
            ..TrainConfig::default()
        };
        let text = cfg.to_config_text();
        let back = TrainConfig::parse(&text).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn parses_partial_file_with_comments() {
        let cfg = TrainConfig::parse(
            "# suite overrides\nlearning_rate = 0.01  # fast for toys\nseed = 7\n\n",
        )
        .unwrap();
        assert_eq!(cfg.learning_rate, 0.01);
        assert_eq!(cfg.seed, 7);
        assert_eq!(cfg.episodes, 15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(TrainConfig::parse("nonsense_key = 3").is_err());
        assert!(TrainConfig::parse("group_size = one").is_err());
        assert!(TrainConfig::parse("group_size = 1").is_err());
        assert!(TrainConfig::parse("clip_eps = 1.5").is_err());
        assert!(TrainConfig::parse("reward_mode = oracle").is_err());
        assert!(TrainConfig::parse("no equals sign here").is_err());
    }
}
