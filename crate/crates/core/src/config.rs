//! Training hyperparameters and ablation switches.

use serde::{Deserialize, Serialize};

use crate::agent::EpsilonSchedule;
use crate::env::RewardMode;
use crate::error::{config_err, MaserError, Result};
use crate::subgoal::SubgoalMode;

/// Which steps receive the entropy correction term.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// From each agent's subgoal step onwards.
    Normal,
    None,
    /// Every valid step.
    Over,
}

impl CorrectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Normal => "normal",
            Self::None => "none",
            Self::Over => "over",
        }
    }
}

impl std::str::FromStr for CorrectionMode {
    type Err = MaserError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "normal" => Ok(Self::Normal),
            "none" => Ok(Self::None),
            "over" => Ok(Self::Over),
            _ => Err(config_err(format!("correction must be normal|none|over, got `{s}`"))),
        }
    }
}

impl std::fmt::Display for CorrectionMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    /// Blend between local and total value when scoring subgoal steps.
    pub alpha: f64,
    /// Weight of intrinsic rewards.
    pub lambda: f64,
    pub lambda_i: f64,
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub gamma: f64,
    pub lr: f64,
    pub rms_decay: f64,
    pub rms_eps: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub buffer_capacity: usize,
    /// Episodes per training block.
    pub batch_size: usize,
    /// Target sync interval in collected episodes.
    pub target_interval: u64,
    pub epsilon_start: f64,
    pub epsilon_end: f64,
    pub epsilon_anneal_steps: u64,
    pub hidden_dim: usize,
    pub mixer_embed: usize,
    pub repr_hidden: usize,
    pub share_params: bool,
    pub env: String,
    /// Optional TOML environment spec; overrides `env` when set.
    pub env_file: Option<String>,
    pub reward_mode: RewardMode,
    pub max_env_steps: u64,
    pub seed: u64,
    pub subgoal_mode: SubgoalMode,
    pub correction: CorrectionMode,
    pub disable_li: bool,
    pub disable_repr: bool,
    /// Greedy evaluation cadence in collected episodes.
    pub eval_interval: u64,
    pub eval_episodes: usize,
    /// Write per-block subgoal score curves.
    pub dump_subgoals: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            alpha: 0.5,
            lambda: 0.03,
            lambda_i: 0.001,
            lambda_e: 0.001,
            lambda_d: 0.001,
            gamma: 0.99,
            lr: 0.0005,
            rms_decay: 0.99,
            rms_eps: 1e-5,
            grad_clip: 10.0,
            buffer_capacity: 5000,
            batch_size: 32,
            target_interval: 200,
            epsilon_start: 1.0,
            epsilon_end: 0.05,
            epsilon_anneal_steps: 50_000,
            hidden_dim: 64,
            mixer_embed: 32,
            repr_hidden: 128,
            share_params: false,
            env: "skirmish-2v2".into(),
            env_file: None,
            reward_mode: RewardMode::Sparse,
            max_env_steps: 3_005_000,
            seed: 0,
            subgoal_mode: SubgoalMode::Maser,
            correction: CorrectionMode::Normal,
            disable_li: false,
            disable_repr: false,
            eval_interval: 100,
            eval_episodes: 32,
            dump_subgoals: false,
        }
    }
}

/// Every key accepted in a config file.
pub const CONFIG_KEYS: &[&str] = &[
    "alpha",
    "lambda",
    "lambda_i",
    "lambda_e",
    "lambda_d",
    "gamma",
    "lr",
    "rms_decay",
    "rms_eps",
    "grad_clip",
    "buffer_capacity",
    "batch_size",
    "target_interval",
    "epsilon_start",
    "epsilon_end",
    "epsilon_anneal_steps",
    "hidden_dim",
    "mixer_embed",
    "repr_hidden",
    "share_params",
    "env",
    "env_file",
    "reward_mode",
    "max_env_steps",
    "seed",
    "subgoal_mode",
    "correction",
    "disable_li",
    "disable_repr",
    "eval_interval",
    "eval_episodes",
    "dump_subgoals",
];

impl TrainConfig {
    /// Plain QMIX: no intrinsic reward, no auxiliary losses.
    pub fn qmix_reduction(mut self) -> Self {
        self.lambda = 0.0;
        self.lambda_i = 0.0;
        self.lambda_e = 0.0;
        self.lambda_d = 0.0;
        self
    }

    pub fn epsilon_schedule(&self) -> EpsilonSchedule {
        EpsilonSchedule {
            start: self.epsilon_start,
            end: self.epsilon_end,
            anneal_steps: self.epsilon_anneal_steps,
        }
    }

    /// Effective weight of the individual TD terms.
    pub fn individual_weight(&self) -> f64 {
        if self.disable_li {
            0.0
        } else {
            self.lambda_i
        }
    }

    pub fn correction_weight(&self) -> f64 {
        if self.correction == CorrectionMode::None {
            0.0
        } else {
            self.lambda_e
        }
    }

    pub fn repr_weight(&self) -> f64 {
        if self.disable_repr {
            0.0
        } else {
            self.lambda_d
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let msg = e.to_string();
            if msg.contains("unknown field") {
                config_err(format!("{msg}\nvalid keys: {}", CONFIG_KEYS.join(", ")))
            } else {
                config_err(msg)
            }
        })?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, msg: &str| if ok { Ok(()) } else { Err(config_err(msg.to_string())) };
        check((0.0..=1.0).contains(&self.alpha), "alpha must lie in [0, 1]")?;
        for (v, name) in [
            (self.lambda, "lambda"),
            (self.lambda_i, "lambda_i"),
            (self.lambda_e, "lambda_e"),
            (self.lambda_d, "lambda_d"),
        ] {
            check(v >= 0.0 && v.is_finite(), &format!("{name} must be finite and >= 0"))?;
        }
        check(self.gamma > 0.0 && self.gamma < 1.0, "gamma must lie in (0, 1)")?;
        check(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive")?;
        check(self.rms_decay > 0.0 && self.rms_decay < 1.0, "rms_decay must lie in (0, 1)")?;
        check(self.rms_eps > 0.0, "rms_eps must be positive")?;
        check(self.grad_clip >= 0.0, "grad_clip must be >= 0")?;
        check(self.buffer_capacity >= 1, "buffer_capacity must be >= 1")?;
        check(self.batch_size >= 1, "batch_size must be >= 1")?;
        check(self.target_interval >= 1, "target_interval must be >= 1")?;
        check(
            (0.0..=1.0).contains(&self.epsilon_start) && (0.0..=1.0).contains(&self.epsilon_end),
            "epsilon_start and epsilon_end must lie in [0, 1]",
        )?;
        check(self.epsilon_end <= self.epsilon_start, "epsilon_end must not exceed epsilon_start")?;
        check(
            self.hidden_dim >= 1 && self.mixer_embed >= 1 && self.repr_hidden >= 1,
            "network dimensions must be >= 1",
        )?;
        check(self.eval_interval >= 1, "eval_interval must be >= 1")?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = TrainConfig::from_toml("").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.alpha, 0.5);
        assert_eq!(cfg.lambda, 0.03);
        assert_eq!((cfg.lambda_i, cfg.lambda_e, cfg.lambda_d), (0.001, 0.001, 0.001));
        assert_eq!(cfg.gamma, 0.99);
        assert_eq!(cfg.lr, 0.0005);
        assert_eq!(cfg.buffer_capacity, 5000);
        assert_eq!(cfg.batch_size, 32);
        assert_eq!(cfg.target_interval, 200);
        assert_eq!((cfg.epsilon_start, cfg.epsilon_end, cfg.epsilon_anneal_steps), (1.0, 0.05, 50_000));
        cfg.validate().unwrap();
    }

    #[test]
    fn unknown_key_lists_valid_keys() {
        let err = TrainConfig::from_toml("alpah = 0.3").unwrap_err().to_string();
        assert!(err.contains("valid keys"), "{err}");
        assert!(err.contains("lambda_d"));
    }

    #[test]
    fn keys_list_matches_fields() {
        let text = TrainConfig {
            env_file: Some("x.toml".into()),
            ..TrainConfig::default()
        }
        .to_toml();
        let table: toml::Table = text.parse().unwrap();
        let mut keys: Vec<&str> = table.keys().map(String::as_str).collect();
        let mut expected = CONFIG_KEYS.to_vec();
        keys.sort_unstable();
        expected.sort_unstable();
        assert_eq!(keys, expected);
    }

    #[test]
    fn range_checks() {
        let bad = [
            TrainConfig {
                alpha: 1.5,
                ..Default::default()
            },
            TrainConfig {
                lambda: -0.1,
                ..Default::default()
            },
            TrainConfig {
                gamma: 1.0,
                ..Default::default()
            },
        ];
        for c in bad {
            assert!(c.validate().is_err());
        }
    }

    #[test]
    fn roundtrip_and_modes() {
        let cfg = TrainConfig {
            subgoal_mode: SubgoalMode::Random,
            correction: CorrectionMode::Over,
            reward_mode: RewardMode::Dense,
            ..Default::default()
        };
        assert_eq!(TrainConfig::from_toml(&cfg.to_toml()).unwrap(), cfg);
        let q = cfg.qmix_reduction();
        assert_eq!((q.lambda, q.lambda_i, q.lambda_e, q.lambda_d), (0.0, 0.0, 0.0, 0.0));
    }
}
