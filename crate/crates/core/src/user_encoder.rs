//! Time-aware user encoder: news encoding of clicked headlines, the three
//! dwell masks (instant preference, interest evolution, stable interest),
//! Min-Max facet weights and attention fusion into the user vector.

use alloc::vec;
use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::denoise::{capped_mean, FilteredHistory};
use crate::error::{Error, Result};
use crate::numeric::nn::{AdditivePool, MultiHeadAttention};
use crate::numeric::{sigmoid, Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::vocab::Vocab;

pub const DEFAULT_RECENT_K: usize = 30;
pub const ONE_WEEK_SECONDS: i64 = 604_800;

/// How facet weights are derived from the masked dwell sequences.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FacetWeighting {
    /// Min-Max scaled masked dwell.
    #[default]
    Dwell,
    /// 1 for every position the facet's window covers, dwell ignored.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Facet {
    Ipl,
    Iea,
    Sim,
}

impl Facet {
    pub const ALL: [Facet; 3] = [Facet::Ipl, Facet::Iea, Facet::Sim];

    pub fn name(self) -> &'static str {
        match self {
            Facet::Ipl => "IPL",
            Facet::Iea => "IEA",
            Facet::Sim => "SIM",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FacetConfig {
    pub recent_k: usize,
    /// `None` is an unbounded window.
    pub iea_window_seconds: Option<i64>,
    /// Compare dwell values, not click timestamps, against the window.
    pub iea_on_dwell: bool,
    pub weighting: FacetWeighting,
    /// Facets replaced by the zero vector.
    pub disabled: Vec<Facet>,
}

impl Default for FacetConfig {
    fn default() -> Self {
        Self {
            recent_k: DEFAULT_RECENT_K,
            iea_window_seconds: Some(ONE_WEEK_SECONDS),
            iea_on_dwell: false,
            weighting: FacetWeighting::Dwell,
            disabled: Vec::new(),
        }
    }
}

/// Keeps positions `L-K+1..=L` (1-indexed).
pub fn ipl_mask(dwells: &[f64], k: usize) -> Vec<f64> {
    let start = dwells.len().saturating_sub(k);
    dwells
        .iter()
        .enumerate()
        .map(|(i, &d)| if i >= start { d } else { 0.0 })
        .collect()
}

/// Keeps `t_i` when `stamp_i` lies in the closed interval `[now - window, now]`.
pub fn iea_mask(dwells: &[f64], stamps: &[f64], now: f64, window: Option<f64>) -> Vec<f64> {
    let Some(window) = window else {
        return dwells.to_vec();
    };
    dwells
        .iter()
        .zip(stamps)
        .map(|(&d, &t)| if t >= now - window && t <= now { d } else { 0.0 })
        .collect()
}

/// Keeps `t_i` strictly above the mean of the unflagged entries.
pub fn sim_mask(dwells: &[f64], outliers: &[bool]) -> Vec<f64> {
    if dwells.is_empty() {
        return Vec::new();
    }
    let mean = capped_mean(dwells, outliers);
    dwells.iter().map(|&d| if d > mean { d } else { 0.0 }).collect()
}

/// `(t - min) / (max - min)` over the whole list; all zeros when flat.
pub fn minmax_weights(masked: &[f64]) -> Vec<f64> {
    let min = masked.iter().copied().fold(f64::INFINITY, f64::min);
    let max = masked.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if masked.is_empty() || max == min {
        return vec![0.0; masked.len()];
    }
    masked.iter().map(|&t| (t - min) / (max - min)).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FacetMasks {
    pub t_ipl: Vec<f64>,
    pub t_iea: Vec<f64>,
    pub t_sim: Vec<f64>,
    pub w_ipl: Vec<f64>,
    pub w_iea: Vec<f64>,
    pub w_sim: Vec<f64>,
}

impl FacetMasks {
    pub fn compute(history: &FilteredHistory, cfg: &FacetConfig) -> Self {
        let dwells = &history.dwells;
        let t_ipl = ipl_mask(dwells, cfg.recent_k.max(1));
        let stamps: Vec<f64> = if cfg.iea_on_dwell {
            dwells.clone()
        } else {
            history.click_times.iter().map(|&t| t as f64).collect()
        };
        let now = history.click_times.iter().copied().max().unwrap_or(0) as f64;
        let t_iea = iea_mask(dwells, &stamps, now, cfg.iea_window_seconds.map(|w| w as f64));
        let t_sim = sim_mask(dwells, &history.outliers);
        let (w_ipl, w_iea, w_sim) = match cfg.weighting {
            FacetWeighting::Dwell => (
                minmax_weights(&t_ipl),
                minmax_weights(&t_iea),
                minmax_weights(&t_sim),
            ),
            FacetWeighting::Uniform => {
                let ones = vec![1.0; dwells.len()];
                let cover = |m: Vec<f64>| -> Vec<f64> {
                    m.iter().map(|&x| if x != 0.0 { 1.0 } else { 0.0 }).collect()
                };
                (
                    cover(ipl_mask(&ones, cfg.recent_k.max(1))),
                    cover(iea_mask(&ones, &stamps, now, cfg.iea_window_seconds.map(|w| w as f64))),
                    ones,
                )
            }
        };
        Self {
            t_ipl,
            t_iea,
            t_sim,
            w_ipl,
            w_iea,
            w_sim,
        }
    }

    pub fn weights(&self, facet: Facet) -> &[f64] {
        match facet {
            Facet::Ipl => &self.w_ipl,
            Facet::Iea => &self.w_iea,
            Facet::Sim => &self.w_sim,
        }
    }
}

/// Weighted sum of history rows.
pub fn facet_vector(tape: &mut Tape, weights: &[f64], history: Var) -> Result<Var> {
    let rows = tape.value(history).rows();
    if weights.len() != rows {
        return Err(Error::shape("facet_vector", &[weights.len()], tape.shape(history)));
    }
    let w = tape.constant(Tensor::row(weights.to_vec()));
    tape.matmul(w, history)
}

pub fn ctr_score(user: &[f64], candidate: &[f64]) -> Result<f64> {
    if user.len() != candidate.len() {
        return Err(Error::shape("ctr_score", &[user.len()], &[candidate.len()]));
    }
    Ok(sigmoid(user.iter().zip(candidate).map(|(a, b)| a * b).sum()))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UserEncoderConfig {
    pub dim: usize,
    pub heads: usize,
    pub attn_hidden: usize,
}

impl Default for UserEncoderConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            heads: 8,
            attn_hidden: 16,
        }
    }
}

/// News encoder (word embeddings, multi-head self-attention, additive pooling)
/// plus the facet fusion attention.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct UserEncoder {
    pub dim: usize,
    pub embedding: ParamId,
    pub self_attention: MultiHeadAttention,
    pub pool: AdditivePool,
    pub fusion: AdditivePool,
}

#[derive(Debug, Clone)]
pub struct UserEncoding {
    pub user: Var,
    /// IPL, IEA, SIM facet rows.
    pub facets: [Var; 3],
    /// `[1, 3]` fusion weights.
    pub facet_weights: Var,
    pub masks: FacetMasks,
}

impl UserEncoder {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        cfg: &UserEncoderConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let g = Group::UserEncoder;
        let embedding = store.add(
            "user.embedding",
            g,
            Tensor::xavier(vocab_size, cfg.dim, rng),
        );
        let self_attention =
            MultiHeadAttention::new(store, "user.news_mha", g, cfg.dim, cfg.heads, rng)?;
        let pool = AdditivePool::new(store, "user.news_pool", g, cfg.dim, cfg.attn_hidden, rng);
        let fusion = AdditivePool::new(store, "user.fusion", g, cfg.dim, cfg.attn_hidden, rng);
        Ok(Self {
            dim: cfg.dim,
            embedding,
            self_attention,
            pool,
            fusion,
        })
    }

    /// `[1, d]` representation of one headline.
    pub fn encode_news(&self, tape: &mut Tape, store: &ParamStore, ids: &[usize]) -> Result<Var> {
        if ids.is_empty() {
            return Err(Error::Empty("headline"));
        }
        let table = tape.param(store, self.embedding);
        let words = tape.gather(table, ids)?;
        let ctx = self.self_attention.forward(tape, store, words, words, words)?;
        let (pooled, _) = self.pool.forward(tape, store, ctx.output)?;
        Ok(pooled)
    }

    /// One row per history position; a 0-row constant for an empty history.
    pub fn encode_history(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vocab: &Vocab,
        history: &FilteredHistory,
    ) -> Result<Var> {
        if history.is_empty() {
            return Ok(tape.constant(Tensor::zeros(0, self.dim)));
        }
        let rows = history
            .headlines
            .iter()
            .map(|h| self.encode_news(tape, store, &vocab.ids(h)))
            .collect::<Result<Vec<_>>>()?;
        tape.concat(&rows, 0)
    }

    /// Shared additive scoring over the three facets, softmaxed.
    pub fn dyn_attn(&self, tape: &mut Tape, store: &ParamStore, facets: [Var; 3]) -> Result<(Var, Var)> {
        let stacked = tape.concat(&facets, 0)?;
        self.fusion.forward(tape, store, stacked)
    }

    pub fn encode_user(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vocab: &Vocab,
        history: &FilteredHistory,
        cfg: &FacetConfig,
    ) -> Result<UserEncoding> {
        let masks = FacetMasks::compute(history, cfg);
        let rows = self.encode_history(tape, store, vocab, history)?;
        let mut facets = [rows; 3];
        for (slot, facet) in facets.iter_mut().zip(Facet::ALL) {
            *slot = if history.is_empty() || cfg.disabled.contains(&facet) {
                tape.constant(Tensor::zeros(1, self.dim))
            } else {
                facet_vector(tape, masks.weights(facet), rows)?
            };
        }
        let (user, facet_weights) = self.dyn_attn(tape, store, facets)?;
        Ok(UserEncoding {
            user,
            facets,
            facet_weights,
            masks,
        })
    }

    /// Click logit `e_u . candidate`.
    pub fn ctr_logit(&self, tape: &mut Tape, user: Var, candidate: Var) -> Result<Var> {
        let ct = tape.transpose(candidate)?;
        tape.matmul(user, ct)
    }
}
