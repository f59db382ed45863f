//! Experiment configuration: defaults, TOML loading, overrides, validation.

use crate::error::{Error, Result};
use crate::gan::{Aggregation, LossMode};
use crate::nn::OptimizerState;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// How discriminator clients communicate between rounds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum Protocol {
    /// Clients only ever talk to the generator.
    Simple,
    /// Clients exchange discriminator parameters every `swap_period` rounds.
    Swap,
}

/// Which free-rider countermeasure runs during training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum DefenseKind {
    /// No defense; free-riders participate unchallenged.
    None,
    /// Probe-based detection (flags clients, keeps serving them batches).
    Dfg,
    /// Detection plus per-client swap gating; requires `protocol = swap`.
    DfgPlus,
    /// Ablation: clustering on pairwise distances without the fresh detector.
    DfgAdj,
}

impl Protocol {
    /// Stable lowercase name, matching the config/CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            Protocol::Simple => "simple",
            Protocol::Swap => "swap",
        }
    }
}

impl DefenseKind {
    /// Stable lowercase name, matching the config/CLI spelling.
    pub fn as_str(self) -> &'static str {
        match self {
            DefenseKind::None => "none",
            DefenseKind::Dfg => "dfg",
            DefenseKind::DfgPlus => "dfg_plus",
            DefenseKind::DfgAdj => "dfg_adj",
        }
    }
}

/// Discriminator loss family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum LossKind {
    NsGan,
    WganClip,
    WganGp,
}

/// How per-client generator feedback is combined.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
#[value(rename_all = "snake_case")]
pub enum AggregationKind {
    Sum,
    Mean,
}

/// Optimizer family for both networks.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

/// Ring-dataset shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DataConfig {
    /// Number of Gaussian modes on the ring.
    pub modes: usize,
    /// Ring radius.
    pub radius: f64,
    /// Per-mode isotropic standard deviation.
    pub noise_std: f64,
    /// Training points held by each benign client.
    pub points_per_client: usize,
}

impl Default for DataConfig {
    fn default() -> Self {
        DataConfig {
            modes: 8,
            radius: 2.0,
            noise_std: 0.05,
            points_per_client: 1600,
        }
    }
}

/// Network widths. Data space is fixed at 2-D.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// Generator input dimension.
    pub latent_dim: usize,
    /// Generator hidden widths.
    pub g_hidden: Vec<usize>,
    /// Discriminator hidden widths.
    pub d_hidden: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        ArchConfig {
            latent_dim: 8,
            g_hidden: vec![32, 32],
            d_hidden: vec![32, 32],
        }
    }
}

/// Optimizer hyperparameters (not taken from any reference setup; tuned for
/// the toy problem).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerConfig {
    pub kind: OptimizerKind,
    /// Generator learning rate.
    pub lr_g: f64,
    /// Discriminator learning rate.
    pub lr_d: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            kind: OptimizerKind::Adam,
            lr_g: 2e-3,
            lr_d: 2e-3,
            beta1: 0.5,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Full experiment description. Every run is a deterministic function of one
/// of these plus nothing else.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Root seed for all random streams.
    pub seed: u64,
    /// Number of data-holding clients.
    pub n_benign: usize,
    /// Number of free-riding clients.
    pub n_freeriders: usize,
    pub protocol: Protocol,
    pub defense: DefenseKind,
    /// Training rounds T.
    pub rounds: usize,
    /// Swap every this many rounds (protocol = swap).
    pub swap_period: usize,
    /// Probe every this many rounds (defense ≠ none).
    pub probe_period: usize,
    /// Probe-set size.
    pub probe_size: usize,
    /// Mini-batch size B.
    pub batch_size: usize,
    /// Discriminator steps per generator step.
    pub d_steps_per_g_step: usize,
    pub loss: LossKind,
    /// Clamp bound for `loss = wgan_clip`.
    pub wgan_clip: f64,
    /// Penalty weight for `loss = wgan_gp`.
    pub wgan_gp_lambda: f64,
    pub aggregation: AggregationKind,
    /// Evaluate metrics every this many rounds (round 0 is always recorded).
    pub metrics_period: usize,
    /// Generator samples per metrics evaluation.
    pub eval_samples: usize,
    /// Free-riders re-randomize their fake discriminator every round instead
    /// of keeping the round-0 init.
    pub freerider_reinit_every_round: bool,
    /// Record all wall-clock columns as zero so outputs are byte-stable.
    pub deterministic_timing: bool,
    pub data: DataConfig,
    pub arch: ArchConfig,
    pub optimizer: OptimizerConfig,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            n_benign: 5,
            n_freeriders: 0,
            protocol: Protocol::Simple,
            defense: DefenseKind::Dfg,
            rounds: 100,
            swap_period: 5,
            probe_period: 10,
            probe_size: 500,
            batch_size: 160,
            d_steps_per_g_step: 5,
            loss: LossKind::NsGan,
            wgan_clip: 0.05,
            wgan_gp_lambda: 10.0,
            aggregation: AggregationKind::Mean,
            metrics_period: 5,
            eval_samples: 10_000,
            freerider_reinit_every_round: false,
            deterministic_timing: false,
            data: DataConfig::default(),
            arch: ArchConfig::default(),
            optimizer: OptimizerConfig::default(),
        }
    }
}

/// Command-line values that take precedence over file values, which take
/// precedence over defaults. `None` means "not given".
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub protocol: Option<Protocol>,
    pub defense: Option<DefenseKind>,
    pub freeriders: Option<usize>,
    pub rounds: Option<usize>,
}

impl ExperimentConfig {
    /// Load from a TOML file, apply `overrides`, and validate.
    pub fn load(path: Option<&Path>, overrides: &Overrides) -> Result<ExperimentConfig> {
        let mut config = match path {
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| Error::io(p.display().to_string(), e))?;
                ExperimentConfig::from_toml(&text)?
            }
            None => ExperimentConfig::default(),
        };
        config.apply(overrides);
        config.validate()?;
        Ok(config)
    }

    /// Parse from TOML text. Unknown keys and type mismatches are rejected
    /// with the offending field named.
    pub fn from_toml(text: &str) -> Result<ExperimentConfig> {
        toml::from_str(text).map_err(|e| Error::ConfigParse(e.to_string()))
    }

    /// Serialize back to TOML (for manifests and generated config files).
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Serialize(e.to_string()))
    }

    /// Overlay command-line values.
    pub fn apply(&mut self, overrides: &Overrides) {
        if let Some(v) = overrides.seed {
            self.seed = v;
        }
        if let Some(v) = overrides.protocol {
            self.protocol = v;
        }
        if let Some(v) = overrides.defense {
            self.defense = v;
        }
        if let Some(v) = overrides.freeriders {
            self.n_freeriders = v;
        }
        if let Some(v) = overrides.rounds {
            self.rounds = v;
        }
    }

    /// Check cross-field invariants. Called by `load`; call directly after
    /// building a config in code.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::InvalidConfig(msg));
        if self.n_benign == 0 {
            return bad("n_benign: at least one data-holding client is required".into());
        }
        if self.defense == DefenseKind::DfgPlus && self.protocol != Protocol::Swap {
            return bad(
                "defense: dfg_plus gates the swap phase and requires protocol = swap".into(),
            );
        }
        if self.swap_period == 0 {
            return bad("swap_period: must be ≥ 1".into());
        }
        if self.probe_period == 0 {
            return bad("probe_period: must be ≥ 1".into());
        }
        if self.defense != DefenseKind::None {
            if self.rounds > 0 && self.probe_period > self.rounds {
                return bad(format!(
                    "probe_period: {} exceeds rounds = {}; the defense would never run",
                    self.probe_period, self.rounds
                ));
            }
            if self.probe_size == 0 {
                return bad("probe_size: must be ≥ 1 when a defense is enabled".into());
            }
        }
        if self.batch_size == 0 {
            return bad("batch_size: must be ≥ 1".into());
        }
        if self.data.points_per_client == 0
            || self.data.points_per_client % self.batch_size != 0
        {
            return bad(format!(
                "batch_size: {} must evenly divide points_per_client = {}",
                self.batch_size, self.data.points_per_client
            ));
        }
        if self.d_steps_per_g_step == 0 {
            return bad("d_steps_per_g_step: must be ≥ 1".into());
        }
        if self.d_steps_per_g_step > self.batches_per_round() {
            return bad(format!(
                "d_steps_per_g_step: {} exceeds the {} batches per round, so the \
                 generator would never update",
                self.d_steps_per_g_step,
                self.batches_per_round()
            ));
        }
        if self.data.modes == 0 {
            return bad("data.modes: must be ≥ 1".into());
        }
        if self.data.points_per_client % self.data.modes != 0 {
            return bad(format!(
                "data.modes: {} must evenly divide points_per_client = {} so every \
                 client holds the same share of every mode",
                self.data.modes, self.data.points_per_client
            ));
        }
        if !(self.data.noise_std > 0.0 && self.data.noise_std.is_finite()) {
            return bad("data.noise_std: must be positive and finite".into());
        }
        if !(self.data.radius >= 0.0 && self.data.radius.is_finite()) {
            return bad("data.radius: must be non-negative and finite".into());
        }
        if self.arch.latent_dim == 0 {
            return bad("arch.latent_dim: must be ≥ 1".into());
        }
        if self.arch.g_hidden.contains(&0) || self.arch.d_hidden.contains(&0) {
            return bad("arch: hidden widths must be ≥ 1".into());
        }
        if self.metrics_period == 0 {
            return bad("metrics_period: must be ≥ 1".into());
        }
        if self.eval_samples < 3 {
            return bad("eval_samples: need at least 3 samples to fit a 2-D Gaussian".into());
        }
        if self.loss == LossKind::WganClip && !(self.wgan_clip > 0.0 && self.wgan_clip.is_finite())
        {
            return bad("wgan_clip: must be positive and finite".into());
        }
        if self.loss == LossKind::WganGp
            && !(self.wgan_gp_lambda >= 0.0 && self.wgan_gp_lambda.is_finite())
        {
            return bad("wgan_gp_lambda: must be non-negative and finite".into());
        }
        for (name, lr) in [("lr_g", self.optimizer.lr_g), ("lr_d", self.optimizer.lr_d)] {
            if !(lr > 0.0 && lr.is_finite()) {
                return bad(format!("optimizer.{name}: must be positive and finite"));
            }
        }
        for (name, beta) in [
            ("beta1", self.optimizer.beta1),
            ("beta2", self.optimizer.beta2),
        ] {
            if !(0.0..1.0).contains(&beta) {
                return bad(format!("optimizer.{name}: must lie in [0, 1)"));
            }
        }
        if !(self.optimizer.eps > 0.0 && self.optimizer.eps.is_finite()) {
            return bad("optimizer.eps: must be positive and finite".into());
        }
        Ok(())
    }

    /// Total client count (benign + free-riders).
    pub fn n_total(&self) -> usize {
        self.n_benign + self.n_freeriders
    }

    /// Mini-batches each client consumes per round.
    pub fn batches_per_round(&self) -> usize {
        self.data.points_per_client / self.batch_size
    }

    /// Generator layer dimensions, latent to data space.
    pub fn g_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.arch.latent_dim];
        dims.extend_from_slice(&self.arch.g_hidden);
        dims.push(2);
        dims
    }

    /// Discriminator layer dimensions, data space to one logit.
    pub fn d_dims(&self) -> Vec<usize> {
        let mut dims = vec![2];
        dims.extend_from_slice(&self.arch.d_hidden);
        dims.push(1);
        dims
    }

    /// Loss family with its hyperparameters filled in.
    pub fn loss_mode(&self) -> LossMode {
        match self.loss {
            LossKind::NsGan => LossMode::NsGan,
            LossKind::WganClip => LossMode::WganClip {
                clip: self.wgan_clip,
            },
            LossKind::WganGp => LossMode::WganGp {
                lambda: self.wgan_gp_lambda,
            },
        }
    }

    /// Feedback aggregation rule.
    pub fn aggregation(&self) -> Aggregation {
        match self.aggregation {
            AggregationKind::Sum => Aggregation::Sum,
            AggregationKind::Mean => Aggregation::Mean,
        }
    }

    /// Fresh optimizer for the generator.
    pub fn generator_optimizer(&self) -> OptimizerState {
        self.optimizer_with_lr(self.optimizer.lr_g)
    }

    /// Fresh optimizer for one discriminator.
    pub fn discriminator_optimizer(&self) -> OptimizerState {
        self.optimizer_with_lr(self.optimizer.lr_d)
    }

    fn optimizer_with_lr(&self, lr: f64) -> OptimizerState {
        match self.optimizer.kind {
            OptimizerKind::Sgd => OptimizerState::sgd(lr),
            OptimizerKind::Adam => OptimizerState::adam(
                lr,
                self.optimizer.beta1,
                self.optimizer.beta2,
                self.optimizer.eps,
            ),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_yields_the_full_default_set() {
        let c = ExperimentConfig::from_toml("").unwrap();
        assert_eq!(c, ExperimentConfig::default());
        assert_eq!(c.n_benign, 5);
        assert_eq!(c.rounds, 100);
        assert_eq!(c.swap_period, 5);
        assert_eq!(c.probe_period, 10);
        assert_eq!(c.probe_size, 500);
        assert_eq!(c.batch_size, 160);
        assert_eq!(c.d_steps_per_g_step, 5);
        assert_eq!(c.loss, LossKind::NsGan);
        assert_eq!(c.aggregation, AggregationKind::Mean);
        assert_eq!(c.batches_per_round(), 10);
        c.validate().unwrap();
    }

    #[test]
    fn flags_override_file_values_override_defaults() {
        let c = ExperimentConfig::from_toml("n_freeriders = 1\nrounds = 7\n").unwrap();
        assert_eq!(c.n_freeriders, 1);
        let mut c = c;
        c.apply(&Overrides {
            freeriders: Some(3),
            ..Overrides::default()
        });
        assert_eq!(c.n_freeriders, 3);
        assert_eq!(c.rounds, 7);
    }

    #[test]
    fn dfg_plus_requires_swap_protocol() {
        let mut c = ExperimentConfig::default();
        c.defense = DefenseKind::DfgPlus;
        c.protocol = Protocol::Simple;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("dfg_plus"), "{err}");
        c.protocol = Protocol::Swap;
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected_by_name() {
        let err = ExperimentConfig::from_toml("nbenign = 5\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("nbenign"), "{err}");
    }

    #[test]
    fn type_errors_name_the_field() {
        let err = ExperimentConfig::from_toml("rounds = \"ten\"\n")
            .unwrap_err()
            .to_string();
        assert!(err.contains("rounds"), "{err}");
    }

    #[test]
    fn indivisible_batch_size_is_rejected() {
        let mut c = ExperimentConfig::default();
        c.batch_size = 150;
        let err = c.validate().unwrap_err().to_string();
        assert!(err.contains("batch_size"), "{err}");
    }

    #[test]
    fn probe_period_beyond_horizon_depends_on_defense() {
        let mut c = ExperimentConfig::default();
        c.rounds = 5;
        c.probe_period = 10;
        assert!(c.validate().is_err());
        c.defense = DefenseKind::None;
        c.validate().unwrap();
    }

    #[test]
    fn toml_round_trip_preserves_everything() {
        let mut c = ExperimentConfig::default();
        c.protocol = Protocol::Swap;
        c.defense = DefenseKind::DfgPlus;
        c.n_freeriders = 4;
        c.arch.g_hidden = vec![16, 24, 16];
        c.loss = LossKind::WganClip;
        let text = c.to_toml().unwrap();
        let back = ExperimentConfig::from_toml(&text).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn network_dims_bracket_the_hidden_widths() {
        let c = ExperimentConfig::default();
        assert_eq!(c.g_dims(), vec![8, 32, 32, 2]);
        assert_eq!(c.d_dims(), vec![2, 32, 32, 1]);
        assert_eq!(c.n_total(), 5);
    }
}
