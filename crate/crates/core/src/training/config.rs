//! Run configuration. `RunConfig::default()` carries the paper's settings;
//! `RunConfig::desk()` is a laptop-scale preset.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::corpus::SynthConfig;
use crate::denoise::{DEFAULT_BREAKING_PERCENT, DEFAULT_OUTLIER_CAP};
use crate::error::{Error, Result};
use crate::user_encoder::{Facet, FacetConfig, FacetWeighting, DEFAULT_RECENT_K, ONE_WEEK_SECONDS};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub dim: usize,
    pub heads: usize,
    pub attn_hidden: usize,
    pub breaking_hidden: usize,
    pub max_headline_len: usize,
    /// Vocabulary cap including special tokens; 0 keeps every token.
    pub max_vocab: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            dim: 64,
            heads: 8,
            attn_hidden: 64,
            breaking_hidden: 32,
            max_headline_len: 16,
            max_vocab: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FilterConfig {
    pub breaking_percent: f64,
    pub outlier_cap_seconds: f64,
    /// Threshold of the rule-based click filter used to pick CTR targets.
    pub min_dwell_seconds: f64,
    pub recent_k: usize,
    /// `None` (written `"unbounded"`) disables the window.
    #[serde(with = "window")]
    pub iea_window_seconds: Option<i64>,
    pub iea_on_dwell: bool,
    /// Drop breaking clicks instead of masking their dwell.
    pub hard_drop: bool,
}

impl Default for FilterConfig {
    fn default() -> Self {
        Self {
            breaking_percent: DEFAULT_BREAKING_PERCENT,
            outlier_cap_seconds: DEFAULT_OUTLIER_CAP,
            min_dwell_seconds: crate::corpus::SHORT_DWELL_SECONDS,
            recent_k: DEFAULT_RECENT_K,
            iea_window_seconds: Some(ONE_WEEK_SECONDS),
            iea_on_dwell: false,
            hard_drop: false,
        }
    }
}

/// Keeps an unbounded window representable in formats without null.
mod window {
    use alloc::string::String;

    use serde::de::Error as _;
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    const UNBOUNDED: &str = "unbounded";

    #[derive(Serialize, Deserialize)]
    #[serde(untagged)]
    enum Repr {
        Seconds(i64),
        Word(String),
    }

    pub fn serialize<S: Serializer>(w: &Option<i64>, s: S) -> Result<S::Ok, S::Error> {
        match w {
            Some(x) => Repr::Seconds(*x),
            None => Repr::Word(UNBOUNDED.into()),
        }
        .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<i64>, D::Error> {
        match Repr::deserialize(d)? {
            Repr::Seconds(x) => Ok(Some(x)),
            Repr::Word(w) if w == UNBOUNDED => Ok(None),
            Repr::Word(w) => Err(D::Error::custom(alloc::format!(
                "iea_window_seconds must be seconds or \"{UNBOUNDED}\", got {w:?}"
            ))),
        }
    }
}

/// Component switches; everything on is the full model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Toggles {
    pub ipl: bool,
    pub iea: bool,
    pub sim: bool,
    /// News-level breaking filter.
    pub bf: bool,
    /// Breaking score injected into decoding; off forces `alpha = 0`.
    pub bp: bool,
    /// Dwell-derived facet weights; off uses uniform presence weights.
    pub dwell_weighting: bool,
}

impl Default for Toggles {
    fn default() -> Self {
        Self {
            ipl: true,
            iea: true,
            sim: true,
            bf: true,
            bp: true,
            dwell_weighting: true,
        }
    }
}

impl Toggles {
    /// No news-level filter and no dwell weighting.
    pub fn no_filter() -> Self {
        Self {
            bf: false,
            dwell_weighting: false,
            ..Self::default()
        }
    }

    pub fn disabled_facets(&self) -> Vec<Facet> {
        let mut out = Vec::new();
        if !self.ipl {
            out.push(Facet::Ipl);
        }
        if !self.iea {
            out.push(Facet::Iea);
        }
        if !self.sim {
            out.push(Facet::Sim);
        }
        out
    }
}

/// Component names accepted by the ablation harness.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Ablation {
    Ipl,
    Iea,
    Sim,
    Bf,
    Bp,
}

impl Ablation {
    pub const ALL: [Ablation; 5] = [Ablation::Ipl, Ablation::Iea, Ablation::Sim, Ablation::Bf, Ablation::Bp];

    pub fn name(self) -> &'static str {
        match self {
            Ablation::Ipl => "IPL",
            Ablation::Iea => "IEA",
            Ablation::Sim => "SIM",
            Ablation::Bf => "BF",
            Ablation::Bp => "BP",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Self::ALL
            .iter()
            .copied()
            .find(|a| a.name().eq_ignore_ascii_case(s.trim()))
            .ok_or_else(|| Error::Config(alloc::format!("unknown ablation toggle {s:?}")))
    }

    pub fn apply(self, mut t: Toggles) -> Toggles {
        match self {
            Ablation::Ipl => t.ipl = false,
            Ablation::Iea => t.iea = false,
            Ablation::Sim => t.sim = false,
            Ablation::Bf => t.bf = false,
            Ablation::Bp => t.bp = false,
        }
        t
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhaseConfig {
    pub epochs: usize,
    pub lr: f64,
    /// Examples per optimiser step.
    pub batch: usize,
    /// Cap on examples per epoch; 0 uses all.
    pub max_examples: usize,
}

impl PhaseConfig {
    const fn new(epochs: usize, lr: f64, batch: usize) -> Self {
        Self {
            epochs,
            lr,
            batch,
            max_examples: 0,
        }
    }
}

impl Default for PhaseConfig {
    fn default() -> Self {
        Self::new(1, 1e-3, 8)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RewardWeights {
    pub fidelity: f64,
    pub personalization: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            fidelity: 0.5,
            personalization: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phase1: PhaseConfig,
    pub phase2: PhaseConfig,
    pub phase3: PhaseConfig,
    pub phase4: PhaseConfig,
    pub critic_lr: f64,
    pub a2c_samples: usize,
    pub reward: RewardWeights,
    /// Most recent clicks of each user used as CTR targets.
    pub ctr_targets_per_user: usize,
    pub clip_norm: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phase1: PhaseConfig::new(3, 1e-5, 16),
            phase2: PhaseConfig::new(3, 1e-7, 16),
            phase3: PhaseConfig::new(3, 1e-7, 16),
            phase4: PhaseConfig::new(1, 1e-7, 4),
            critic_lr: 1e-3,
            a2c_samples: 16,
            reward: RewardWeights::default(),
            ctr_targets_per_user: 4,
            clip_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub synth: SynthConfig,
    pub model: ModelConfig,
    pub filter: FilterConfig,
    pub train: TrainConfig,
    pub beam_width: usize,
    pub toggles: Toggles,
    /// Free-form label carried into reports.
    pub label: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 7,
            synth: SynthConfig::default(),
            model: ModelConfig::default(),
            filter: FilterConfig::default(),
            train: TrainConfig::default(),
            beam_width: 5,
            toggles: Toggles::default(),
            label: String::from("full"),
        }
    }
}

impl RunConfig {
    /// Small model, small corpus and learning rates that move in a few epochs.
    pub fn desk() -> Self {
        let mut cfg = Self::default();
        cfg.synth.num_users = 60;
        cfg.synth.num_articles = 100;
        cfg.model = ModelConfig {
            dim: 16,
            heads: 8,
            attn_hidden: 16,
            breaking_hidden: 8,
            max_headline_len: 10,
            max_vocab: 0,
        };
        cfg.train.phase1 = PhaseConfig::new(4, 5e-3, 8);
        cfg.train.phase2 = PhaseConfig::new(12, 1e-2, 8);
        cfg.train.phase3 = PhaseConfig::new(30, 1e-2, 16);
        cfg.train.phase4 = PhaseConfig {
            epochs: 2,
            lr: 1e-3,
            batch: 4,
            max_examples: 24,
        };
        cfg.train.critic_lr = 1e-2;
        cfg
    }

    pub fn facet_config(&self) -> FacetConfig {
        FacetConfig {
            recent_k: self.filter.recent_k,
            iea_window_seconds: self.filter.iea_window_seconds,
            iea_on_dwell: self.filter.iea_on_dwell,
            weighting: if self.toggles.dwell_weighting {
                FacetWeighting::Dwell
            } else {
                FacetWeighting::Uniform
            },
            disabled: self.toggles.disabled_facets(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let m = &self.model;
        if m.dim == 0 || m.heads == 0 || m.dim % m.heads != 0 {
            return Err(Error::Config(alloc::format!(
                "model dimension {} must be a positive multiple of {} heads",
                m.dim,
                m.heads
            )));
        }
        if m.attn_hidden == 0 || m.breaking_hidden == 0 || m.max_headline_len == 0 {
            return Err(Error::Config("model sizes must be positive".into()));
        }
        if self.beam_width == 0 {
            return Err(Error::Config("beam_width must be at least 1".into()));
        }
        if self.filter.recent_k == 0 {
            return Err(Error::Config("recent_k must be at least 1".into()));
        }
        if !(0.0..=100.0).contains(&self.filter.breaking_percent) {
            return Err(Error::Config("breaking_percent must lie in [0, 100]".into()));
        }
        if self.filter.iea_window_seconds.is_some_and(|w| w < 0) {
            return Err(Error::Config("iea_window_seconds must be nonnegative".into()));
        }
        if !(self.filter.outlier_cap_seconds > 0.0) {
            return Err(Error::Config("outlier_cap_seconds must be positive".into()));
        }
        let t = &self.train;
        for (name, p) in [("phase1", t.phase1), ("phase2", t.phase2), ("phase3", t.phase3), ("phase4", t.phase4)] {
            if p.batch == 0 || !(p.lr > 0.0 && p.lr.is_finite()) {
                return Err(Error::Config(alloc::format!("{name}: batch and lr must be positive")));
            }
        }
        if t.a2c_samples == 0 || t.ctr_targets_per_user == 0 {
            return Err(Error::Config("a2c_samples and ctr_targets_per_user must be positive".into()));
        }
        let w = t.reward;
        if w.fidelity < 0.0 || w.personalization < 0.0 || (w.fidelity + w.personalization - 1.0).abs() > 1e-9 {
            return Err(Error::Config("reward weights must be nonnegative and sum to 1".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_follow_paper_settings() {
        let c = RunConfig::default();
        assert_eq!(c.model.heads, 8);
        assert_eq!(c.filter.recent_k, 30);
        assert_eq!(c.filter.iea_window_seconds, Some(604_800));
        assert_eq!(c.filter.breaking_percent, 0.10);
        assert_eq!(c.filter.outlier_cap_seconds, 3000.0);
        assert_eq!(c.beam_width, 5);
        assert_eq!(c.train.a2c_samples, 16);
        assert_eq!(c.train.phase1.lr, 1e-5);
        assert_eq!(c.train.phase4.lr, 1e-7);
        c.validate().unwrap();
        RunConfig::desk().validate().unwrap();
    }

    #[test]
    fn ablation_names_round_trip() {
        for a in Ablation::ALL {
            assert_eq!(Ablation::parse(&a.name().to_lowercase()).unwrap(), a);
        }
        assert!(matches!(Ablation::parse("XYZ"), Err(Error::Config(_))));
        let t = Ablation::Sim.apply(Toggles::default());
        assert_eq!(t.disabled_facets(), alloc::vec![Facet::Sim]);
    }

    #[test]
    fn bad_heads_rejected() {
        let mut c = RunConfig::desk();
        c.model.dim = 12;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
