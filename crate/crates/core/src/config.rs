//! Scenario, architecture, training and evaluation settings.
//!
//! An [`ExperimentConfig`] is the single TOML document read by the CLI and
//! snapshotted into every run directory.

use serde::{Deserialize, Serialize};

use crate::channel::Splits;
use crate::error::{Error, Result};

/// Distribution of the single-path complex gain of each user.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PathGain {
    /// `CN(0, 1)` gains.
    ComplexGaussian,
    /// Unit gain with zero phase.
    Unit,
}

/// Scenario constants.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SystemConfig {
    pub num_antennas: usize,
    pub num_users: usize,
    /// Highest modulation order in bits per symbol.
    pub max_order: u32,
    /// Total rate requirement in bits per channel use.
    pub rate_req: u32,
    /// Transmit power budget (linear).
    pub power_budget: f64,
    /// Fixed noise variance; when absent it is derived from the SNR.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub noise_var: Option<f64>,
    /// Training SNR interval in dB.
    pub snr_range_db: [f64; 2],
    /// Center angle of arrival of each user, degrees.
    pub user_center_angles: Vec<f64>,
    /// Half-width of the uniform angle-of-arrival window, degrees.
    pub angle_spread_deg: f64,
    #[serde(default = "default_path_gain")]
    pub path_gain: PathGain,
}

fn default_path_gain() -> PathGain {
    PathGain::ComplexGaussian
}

impl SystemConfig {
    pub fn full() -> Self {
        SystemConfig {
            num_antennas: 128,
            num_users: 4,
            max_order: 3,
            rate_req: 8,
            power_budget: 1.0,
            noise_var: None,
            snr_range_db: [0.0, 20.0],
            user_center_angles: vec![-30.0, -15.0, 15.0, 30.0],
            angle_spread_deg: 10.0,
            path_gain: PathGain::ComplexGaussian,
        }
    }

    pub fn desk() -> Self {
        SystemConfig { num_antennas: 16, ..Self::full() }
    }

    /// Alphabet size of the highest order, `2^B`.
    pub fn max_alphabet(&self) -> usize {
        1usize << self.max_order
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.num_antennas == 0 {
            return bad("num_antennas must be positive".into());
        }
        if self.num_users == 0 {
            return bad("num_users must be positive".into());
        }
        if !(1..=8).contains(&self.max_order) {
            return bad(format!("max_order must lie in 1..=8, got {}", self.max_order));
        }
        let k = self.num_users as u64;
        let (b, r) = (u64::from(self.max_order), u64::from(self.rate_req));
        if r < k || r > k * b {
            return bad(format!("rate_req must satisfy K <= R <= K*B (K={k}, B={b}, R={r})"));
        }
        if !(self.power_budget > 0.0 && self.power_budget.is_finite()) {
            return bad(format!("power_budget must be positive, got {}", self.power_budget));
        }
        if let Some(nv) = self.noise_var {
            if !(nv > 0.0 && nv.is_finite()) {
                return bad(format!("noise_var must be positive, got {nv}"));
            }
        }
        let [lo, hi] = self.snr_range_db;
        if !(lo.is_finite() && hi.is_finite() && lo <= hi) {
            return bad(format!("snr_range_db must be a nonempty interval, got [{lo}, {hi}]"));
        }
        if self.user_center_angles.len() != self.num_users {
            return bad(format!(
                "expected {} user_center_angles, got {}",
                self.num_users,
                self.user_center_angles.len()
            ));
        }
        if !(self.angle_spread_deg >= 0.0 && self.angle_spread_deg.is_finite()) {
            return bad("angle_spread_deg must be nonnegative".into());
        }
        Ok(())
    }
}

/// Numeric precision used by the networks during training and inference.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Precision {
    #[default]
    F32,
    F64,
}

/// Architecture constants that are not fixed by the layer table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArchConfig {
    pub leaky_slope: f64,
    pub bn_momentum: f64,
    pub bn_epsilon: f64,
    /// Dropout rate after the first dense layer of the order classifier.
    pub dropout: f64,
    /// Stack `|H|` with the symbol-fused phase as a second CNN input channel.
    pub fuse_amplitude: bool,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig { leaky_slope: 0.3, bn_momentum: 0.99, bn_epsilon: 1e-3, dropout: 0.5, fuse_amplitude: true }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout must lie in [0, 1), got {}", self.dropout)));
        }
        if !(0.0..1.0).contains(&self.bn_momentum) || self.bn_epsilon <= 0.0 {
            return Err(Error::InvalidConfig("batch-norm momentum/epsilon out of range".into()));
        }
        Ok(())
    }
}

/// Optimizer, schedule and stage lengths.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrainConfig {
    pub minibatch: usize,
    pub lr_init: f64,
    pub lr_decay: f64,
    /// Epochs between learning-rate decays.
    pub lr_period: usize,
    pub epochs_stage1: usize,
    pub epochs_stage2: usize,
    pub epochs_stage3: usize,
    /// Fresh (message, SNR, noise) draws per channel per epoch.
    pub draws_per_channel: usize,
    /// Modulation order of every user during stage I.
    pub stage1_order: u32,
    /// Draws per (channel, combination) when generating order labels.
    pub label_draws: usize,
    /// Fixed SNR for label generation; sampled from the training range when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_snr_db: Option<f64>,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_epsilon: f64,
    pub precision: Precision,
    pub seed: u64,
}

impl TrainConfig {
    pub fn full() -> Self {
        TrainConfig {
            minibatch: 1000,
            lr_init: 1e-3,
            lr_decay: 0.1,
            lr_period: 50,
            epochs_stage1: 100,
            epochs_stage2: 100,
            epochs_stage3: 50,
            draws_per_channel: 5,
            stage1_order: 2,
            label_draws: 64,
            label_snr_db: None,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_epsilon: 1e-8,
            precision: Precision::F32,
            seed: 1,
        }
    }

    pub fn desk() -> Self {
        TrainConfig {
            minibatch: 100,
            lr_period: 15,
            epochs_stage1: 30,
            epochs_stage2: 15,
            epochs_stage3: 30,
            label_draws: 8,
            ..Self::full()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("minibatch", self.minibatch),
            ("lr_period", self.lr_period),
            ("draws_per_channel", self.draws_per_channel),
            ("label_draws", self.label_draws),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidConfig(format!("{name} must be positive")));
            }
        }
        if !(self.lr_init > 0.0 && self.lr_decay > 0.0 && self.lr_decay <= 1.0) {
            return Err(Error::InvalidConfig("learning rate settings out of range".into()));
        }
        if self.stage1_order == 0 {
            return Err(Error::InvalidConfig("stage1_order must be positive".into()));
        }
        Ok(())
    }
}

/// Monte Carlo evaluation settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EvalConfig {
    pub snr_grid_db: Vec<f64>,
    /// Minimum symbol slots per SNR point.
    pub min_trials: u64,
    /// Keep extending until this many symbol errors were observed...
    pub target_errors: u64,
    /// ...or this many slots were simulated.
    pub max_trials: u64,
    /// Symbol slots simulated per channel visit.
    pub slots_per_channel: usize,
    /// SNR of the Top-k table.
    pub topk_snr_db: f64,
    pub topk: usize,
    pub ci_slp_tol: f64,
    pub ci_slp_max_iter: usize,
    pub seed: u64,
}

impl EvalConfig {
    pub fn full() -> Self {
        EvalConfig {
            snr_grid_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
            min_trials: 100_000,
            target_errors: 100,
            max_trials: 10_000_000,
            slots_per_channel: 100,
            topk_snr_db: 15.0,
            topk: 3,
            ci_slp_tol: 1e-6,
            ci_slp_max_iter: 1000,
            seed: 7,
        }
    }

    pub fn desk() -> Self {
        EvalConfig { min_trials: 20_000, max_trials: 200_000, slots_per_channel: 20, ..Self::full() }
    }

    pub fn validate(&self) -> Result<()> {
        if self.min_trials == 0 || self.max_trials < self.min_trials || self.slots_per_channel == 0 {
            return Err(Error::InvalidConfig("trial counts must satisfy 0 < min_trials <= max_trials".into()));
        }
        if self.topk == 0 {
            return Err(Error::InvalidConfig("topk must be positive".into()));
        }
        Ok(())
    }
}

/// Complete experiment description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub system: SystemConfig,
    #[serde(default)]
    pub arch: ArchConfig,
    pub train: TrainConfig,
    pub splits: Splits,
    pub eval: EvalConfig,
}

impl ExperimentConfig {
    /// Full-scale setup (128 antennas, 1.2e5 channels, 250 epochs).
    pub fn full() -> Self {
        ExperimentConfig {
            system: SystemConfig::full(),
            arch: ArchConfig::default(),
            train: TrainConfig::full(),
            splits: Splits { train: 100_000, test: 10_000, validation: 10_000 },
            eval: EvalConfig::full(),
        }
    }

    /// Desk-scale setup (16 antennas, 1.2e4 channels).
    pub fn desk() -> Self {
        ExperimentConfig {
            system: SystemConfig::desk(),
            arch: ArchConfig::default(),
            train: TrainConfig::desk(),
            splits: Splits { train: 10_000, test: 1_000, validation: 1_000 },
            eval: EvalConfig::desk(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.system.validate()?;
        self.arch.validate()?;
        self.train.validate()?;
        self.eval.validate()?;
        if self.splits.total() == 0 {
            return Err(Error::InvalidConfig("dataset splits are empty".into()));
        }
        Ok(())
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| Error::InvalidConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_validate() {
        ExperimentConfig::full().validate().unwrap();
        ExperimentConfig::desk().validate().unwrap();
    }

    #[test]
    fn rate_bounds_enforced() {
        let mut cfg = SystemConfig::desk();
        cfg.rate_req = 13;
        assert!(cfg.validate().is_err());
        cfg.rate_req = 3;
        assert!(cfg.validate().is_err());
        cfg.rate_req = 4;
        cfg.validate().unwrap();
    }

    #[test]
    fn toml_round_trip() {
        let cfg = ExperimentConfig::desk();
        let back = ExperimentConfig::from_toml(&cfg.to_toml()).unwrap();
        assert_eq!(cfg, back);
    }

    #[test]
    fn rejects_bad_power_and_angles() {
        let mut cfg = SystemConfig::desk();
        cfg.power_budget = 0.0;
        assert!(cfg.validate().is_err());
        let mut cfg = SystemConfig::desk();
        cfg.user_center_angles.pop();
        assert!(cfg.validate().is_err());
    }
}
