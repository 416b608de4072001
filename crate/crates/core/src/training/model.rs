use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::config::{ModelConfig, RewardWeights};
use crate::corpus::Token;
use crate::denoise::FilteredHistory;
use crate::error::{Error, Result};
use crate::eval::rouge_l;
use crate::generator::{beam_search, BreakingPredictor, Critic, Generator, GeneratorConfig};
use crate::numeric::{ParamEntry, ParamStore, Tape, Tensor};
use crate::user_encoder::{FacetConfig, UserEncoder, UserEncoderConfig};
use crate::vocab::Vocab;

/// All four parameter groups plus the vocabulary they index.
#[derive(Debug, Clone)]
pub struct Model {
    pub config: ModelConfig,
    pub vocab: Vocab,
    pub store: ParamStore,
    pub user: UserEncoder,
    pub generator: Generator,
    pub breaking: BreakingPredictor,
    pub critic: Critic,
}

/// Detached user representation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UserSummary {
    pub vector: Tensor,
    /// IPL, IEA, SIM fusion weights.
    pub facet_weights: [f64; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Generated {
    pub tokens: Vec<String>,
    pub score: f64,
    pub alpha: f64,
}

impl Model {
    pub fn new(vocab: Vocab, cfg: &ModelConfig, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let user = UserEncoder::new(
            &mut store,
            vocab.len(),
            &UserEncoderConfig {
                dim: cfg.dim,
                heads: cfg.heads,
                attn_hidden: cfg.attn_hidden,
            },
            &mut rng,
        )?;
        let gcfg = GeneratorConfig {
            dim: cfg.dim,
            attn_hidden: cfg.attn_hidden,
            breaking_hidden: cfg.breaking_hidden,
            max_len: cfg.max_headline_len,
        };
        let generator = Generator::new(&mut store, vocab.len(), &gcfg, &mut rng);
        let breaking = BreakingPredictor::new(&mut store, cfg.dim, cfg.breaking_hidden, &mut rng);
        let critic = Critic::new(&mut store, 2 * cfg.dim, &mut rng);
        Ok(Self {
            config: *cfg,
            vocab,
            store,
            user,
            generator,
            breaking,
            critic,
        })
    }

    /// Replaces every parameter value; names, groups and shapes must match.
    pub fn load_params(&mut self, entries: &[ParamEntry]) -> Result<()> {
        if entries.len() != self.store.len() {
            return Err(Error::Validation(alloc::format!(
                "checkpoint has {} tensors, model has {}",
                entries.len(),
                self.store.len()
            )));
        }
        for (mine, theirs) in self.store.entries().iter().zip(entries) {
            if mine.name != theirs.name || mine.group != theirs.group || mine.value.shape() != theirs.value.shape() {
                return Err(Error::Validation(alloc::format!(
                    "checkpoint tensor {} {:?} does not match model tensor {} {:?}",
                    theirs.name,
                    theirs.value.shape(),
                    mine.name,
                    mine.value.shape()
                )));
            }
        }
        for (mine, theirs) in self.store.entries_mut().iter_mut().zip(entries) {
            mine.value = theirs.value.clone();
        }
        Ok(())
    }

    pub fn user_summary(&self, history: &FilteredHistory, facets: &FacetConfig) -> Result<UserSummary> {
        let mut tape = Tape::new();
        let enc = self.user.encode_user(&mut tape, &self.store, &self.vocab, history, facets)?;
        let w = tape.value(enc.facet_weights).data();
        Ok(UserSummary {
            vector: tape.value(enc.user).clone(),
            facet_weights: [w[0], w[1], w[2]],
        })
    }

    pub fn news_vector(&self, tokens: &[Token]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let v = self.user.encode_news(&mut tape, &self.store, &self.vocab.ids(tokens))?;
        Ok(tape.value(v).clone())
    }

    pub fn pooled_body(&self, body: &[Token]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let b = self.generator.encode_body(&mut tape, &self.store, &self.vocab, body)?;
        Ok(tape.value(b.pooled).clone())
    }

    /// Breaking score of an article body.
    pub fn alpha(&self, body: &[Token]) -> Result<f64> {
        self.breaking.alpha(&self.store, &self.pooled_body(body)?)
    }

    /// Best beam hypothesis, decoded to tokens.
    pub fn generate(&self, body: &[Token], user: &Tensor, alpha: f64, beam_width: usize) -> Result<Generated> {
        let mut tape = Tape::new();
        let b = self.generator.encode_body(&mut tape, &self.store, &self.vocab, body)?;
        let u = tape.constant(user.clone());
        let ctx = self.generator.context(&mut tape, &self.store, b, u, alpha)?;
        let frozen = self.generator.frozen(&self.store, &tape, &ctx);
        let hyps = beam_search(&frozen, beam_width, self.config.max_headline_len)?;
        let best = hyps
            .into_iter()
            .next()
            .ok_or(Error::Empty("beam search result"))?;
        Ok(Generated {
            tokens: frozen.source().decode(&self.vocab, &best.tokens),
            score: best.score,
            alpha,
        })
    }

    /// `w_f * ROUGE-L F1(headline, original) + w_p * clamp(cos(news(headline), e_u), 0, 1)`.
    pub fn reward(
        &self,
        headline: &[Token],
        original: &[Token],
        user: &Tensor,
        weights: RewardWeights,
    ) -> Result<f64> {
        if headline.is_empty() {
            return Ok(0.0);
        }
        let fidelity = rouge_l(headline, original).f1;
        let personal = personalization(&self.news_vector(headline)?, user);
        Ok(weights.fidelity * fidelity + weights.personalization * personal)
    }
}

/// Cosine clamped to `[0, 1]`; 0 when either vector is zero.
pub fn personalization(news: &Tensor, user: &Tensor) -> f64 {
    let (a, b) = (news.norm(), user.norm());
    if a == 0.0 || b == 0.0 {
        return 0.0;
    }
    (news.dot(user) / (a * b)).clamp(0.0, 1.0)
}
