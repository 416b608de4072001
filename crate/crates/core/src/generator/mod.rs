//! Breaking-news predictor and the personalised pointer-generator decoder.

mod search;

use alloc::vec::Vec;

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use search::{beam_search, greedy, sample, sample_index, Hypothesis, StepModel};

use crate::corpus::Token;
use crate::error::{Error, Result};
use crate::numeric::nn::{AdditivePool, Gru, Linear};
use crate::numeric::{Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::vocab::{SourceMap, Vocab, BOS, EOS};

/// Floor added inside `ln` so copy-only tokens with vanishing mass stay finite.
const LOG_FLOOR: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GeneratorConfig {
    pub dim: usize,
    pub attn_hidden: usize,
    pub breaking_hidden: usize,
    pub max_len: usize,
}

impl Default for GeneratorConfig {
    fn default() -> Self {
        Self {
            dim: 16,
            attn_hidden: 16,
            breaking_hidden: 16,
            max_len: 12,
        }
    }
}

/// Mixes a vocabulary distribution with copy attention over the source.
///
/// `source_ids[j]` is the extended id of source position `j`; the result has
/// `width >= p_vocab.len()` entries.
pub fn pointer_mixture(
    p_vocab: &[f64],
    attention: &[f64],
    source_ids: &[usize],
    width: usize,
    gate: f64,
) -> Result<Vec<f64>> {
    if attention.len() != source_ids.len() || p_vocab.len() > width {
        return Err(Error::shape(
            "pointer_mixture",
            &[p_vocab.len(), attention.len()],
            &[width, source_ids.len()],
        ));
    }
    if !(0.0..=1.0).contains(&gate) {
        return Err(Error::Contract(alloc::format!("gate {gate} outside [0, 1]")));
    }
    let mut out = alloc::vec![0.0; width];
    for (o, &p) in out.iter_mut().zip(p_vocab) {
        *o = gate * p;
    }
    for (&id, &a) in source_ids.iter().zip(attention) {
        if id >= width {
            return Err(Error::shape("pointer_mixture", &[id], &[width]));
        }
        out[id] += (1.0 - gate) * a;
    }
    if out.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("non-finite mixture probability".into()));
    }
    Ok(out)
}

/// Two-layer classifier producing the breaking score `alpha`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BreakingPredictor {
    /// Learnable input affine `v * scale + offset`, identity at init.
    pub scale: ParamId,
    pub offset: ParamId,
    pub hidden: Linear,
    pub out: Linear,
}

impl BreakingPredictor {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, dim: usize, hidden: usize, rng: &mut R) -> Self {
        let g = Group::Breaking;
        let scale = store.add("breaking.scale", g, Tensor::filled(1, dim, 1.0));
        let offset = store.add("breaking.offset", g, Tensor::zeros(1, dim));
        let h = Linear::new(store, "breaking.hidden", g, dim, hidden, true, rng);
        let out = Linear::new(store, "breaking.out", g, hidden, 1, true, rng);
        *store.get_mut(out.weight) = Tensor::zeros(hidden, 1);
        Self {
            scale,
            offset,
            hidden: h,
            out,
        }
    }

    /// Sets the input affine to standardise `samples` per feature. Pooled
    /// encodings can sit in a narrow band near the tanh rails, which leaves
    /// the hidden layer nearly constant without this.
    pub fn fit_input(&self, store: &mut ParamStore, samples: &[Tensor]) -> Result<()> {
        let first = samples.first().ok_or(Error::Empty("breaking classifier inputs"))?;
        let d = first.len();
        let n = samples.len() as f64;
        let mut mean = alloc::vec![0.0; d];
        for s in samples {
            if s.len() != d {
                return Err(Error::shape("fit_input", first.shape(), s.shape()));
            }
            for (m, x) in mean.iter_mut().zip(s.data()) {
                *m += x / n;
            }
        }
        let mut var = alloc::vec![0.0; d];
        for s in samples {
            for ((v, x), m) in var.iter_mut().zip(s.data()).zip(&mean) {
                *v += (x - m) * (x - m) / n;
            }
        }
        let scale: Vec<f64> = var.iter().map(|v| 1.0 / libm::sqrt(v + 1e-12)).collect();
        let offset = mean.iter().zip(&scale).map(|(m, k)| -m * k).collect();
        *store.get_mut(self.scale) = Tensor::row(scale);
        *store.get_mut(self.offset) = Tensor::row(offset);
        Ok(())
    }

    pub fn logit(&self, tape: &mut Tape, store: &ParamStore, pooled: Var) -> Result<Var> {
        // scale before offset keeps both gradients on the scale of the input
        let scale = tape.param(store, self.scale);
        let offset = tape.param(store, self.offset);
        let x = tape.mul(pooled, scale)?;
        let x = tape.add(x, offset)?;
        let h = self.hidden.forward(tape, store, x)?;
        let h = tape.tanh(h);
        self.out.forward(tape, store, h)
    }

    pub fn predict(&self, tape: &mut Tape, store: &ParamStore, pooled: Var) -> Result<Var> {
        let z = self.logit(tape, store, pooled)?;
        Ok(tape.sigmoid(z))
    }

    /// `alpha` for a detached pooled vector.
    pub fn alpha(&self, store: &ParamStore, pooled: &Tensor) -> Result<f64> {
        let mut tape = Tape::new();
        let v = tape.constant(pooled.clone());
        let a = self.predict(&mut tape, store, v)?;
        Ok(tape.value(a).item())
    }
}

/// State-value head reading the decoder's initial state.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Critic {
    pub head: Linear,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, input: usize, rng: &mut R) -> Self {
        let head = Linear::new(store, "critic.head", Group::Critic, input, 1, true, rng);
        *store.get_mut(head.weight) = Tensor::zeros(input, 1);
        Self { head }
    }

    pub fn value(&self, tape: &mut Tape, store: &ParamStore, features: Var) -> Result<Var> {
        self.head.forward(tape, store, features)
    }
}

#[derive(Debug, Clone)]
pub struct BodyEncoding {
    /// `[n, d]`, one row per source token.
    pub hidden_states: Var,
    /// `[1, d]`.
    pub pooled: Var,
    pub source: SourceMap,
}

/// Everything a decode step conditions on besides the previous token and state.
#[derive(Debug, Clone)]
pub struct DecodeContext {
    pub body: BodyEncoding,
    /// `alpha * e_u`, `[1, d]`.
    pub scaled_user: Var,
    pub alpha: f64,
    /// Precomputed `H W_h`, `[n, a]`.
    keys: Var,
}

#[derive(Debug, Clone)]
pub struct DecoderStep {
    pub state: Var,
    /// `[1, n]` over source positions.
    pub attention: Var,
    pub context: Var,
    /// `[1, 1]`.
    pub gate: Var,
    /// `[1, width]` over the vocabulary plus source OOV tokens.
    pub dist: Var,
}

/// Body encoder, attention decoder and pointer/generation gate.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Generator {
    pub dim: usize,
    pub vocab_size: usize,
    pub embedding: ParamId,
    pub body_gru: Gru,
    pub body_pool: AdditivePool,
    pub decoder: Gru,
    pub attn_keys: Linear,
    pub attn_query: Linear,
    pub attn_score: ParamId,
    pub output: Linear,
    pub gate: Linear,
}

impl Generator {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        vocab_size: usize,
        cfg: &GeneratorConfig,
        rng: &mut R,
    ) -> Self {
        let g = Group::Generator;
        let d = cfg.dim;
        let a = cfg.attn_hidden;
        let embedding = store.add("gen.embedding", g, Tensor::xavier(vocab_size, d, rng));
        let body_gru = Gru::new(store, "gen.body_gru", g, d, d, rng);
        let body_pool = AdditivePool::new(store, "gen.body_pool", g, d, a, rng);
        let decoder = Gru::new(store, "gen.decoder", g, d, 2 * d, rng);
        let attn_keys = Linear::new(store, "gen.attn_keys", g, d, a, false, rng);
        let attn_query = Linear::new(store, "gen.attn_query", g, 2 * d, a, true, rng);
        let attn_score = store.add("gen.attn_score", g, Tensor::xavier(a, 1, rng));
        let output = Linear::new(store, "gen.output", g, 3 * d, vocab_size, true, rng);
        let gate = Linear::new(store, "gen.gate", g, 4 * d, 1, true, rng);
        Self {
            dim: d,
            vocab_size,
            embedding,
            body_gru,
            body_pool,
            decoder,
            attn_keys,
            attn_query,
            attn_score,
            output,
            gate,
        }
    }

    pub fn encode_body(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        vocab: &Vocab,
        body: &[Token],
    ) -> Result<BodyEncoding> {
        if body.is_empty() {
            return Err(Error::Empty("article body"));
        }
        let source = SourceMap::new(vocab, body);
        let table = tape.param(store, self.embedding);
        let x = tape.gather(table, &source.vocab_ids)?;
        let mut state = tape.constant(Tensor::zeros(1, self.dim));
        let mut states = Vec::with_capacity(body.len());
        for j in 0..body.len() {
            let xj = tape.slice(x, 0, j, 1)?;
            state = self.body_gru.step(tape, store, xj, state)?;
            states.push(state);
        }
        let hidden_states = tape.concat(&states, 0)?;
        let (pooled, _) = self.body_pool.forward(tape, store, hidden_states)?;
        Ok(BodyEncoding {
            hidden_states,
            pooled,
            source,
        })
    }

    pub fn context(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        body: BodyEncoding,
        user: Var,
        alpha: f64,
    ) -> Result<DecodeContext> {
        if !(0.0..=1.0).contains(&alpha) {
            return Err(Error::Contract(alloc::format!("alpha {alpha} outside [0, 1]")));
        }
        let scaled_user = tape.scale(user, alpha);
        let keys = self.attn_keys.forward(tape, store, body.hidden_states)?;
        Ok(DecodeContext {
            body,
            scaled_user,
            alpha,
            keys,
        })
    }

    /// `s_0 = [alpha * e_u; v]`.
    pub fn initial_state(&self, tape: &mut Tape, ctx: &DecodeContext) -> Result<Var> {
        tape.concat(&[ctx.scaled_user, ctx.body.pooled], 1)
    }

    pub fn decode_step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        prev: usize,
        state: Var,
    ) -> Result<DecoderStep> {
        self.decode_step_with_gate(tape, store, ctx, prev, state, None)
    }

    /// `gate` replaces the learned pointer/generation gate; testing hook.
    #[doc(hidden)]
    pub fn decode_step_with_gate(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        prev: usize,
        state: Var,
        gate: Option<f64>,
    ) -> Result<DecoderStep> {
        let table = tape.param(store, self.embedding);
        let x = tape.gather(table, &[ctx.body.source.input_id(prev)])?;
        let state = self.decoder.step(tape, store, x, state)?;

        let q = self.attn_query.forward(tape, store, state)?;
        let e = tape.add_row(ctx.keys, q)?;
        let e = tape.tanh(e);
        let w = tape.param(store, self.attn_score);
        let scores = tape.matmul(e, w)?;
        let scores = tape.transpose(scores)?;
        let attention = tape.softmax(scores, 1)?;
        let context = tape.matmul(attention, ctx.body.hidden_states)?;

        let features = tape.concat(&[state, context], 1)?;
        let logits = self.output.forward(tape, store, features)?;
        let p_vocab = tape.softmax(logits, 1)?;

        let gate = match gate {
            Some(g) => tape.constant(Tensor::scalar(g)),
            None => {
                let input = tape.concat(&[context, state, ctx.scaled_user], 1)?;
                let z = self.gate.forward(tape, store, input)?;
                tape.sigmoid(z)
            }
        };
        let width = ctx.body.source.width();
        let generated = tape.pad(p_vocab, width)?;
        let generated = tape.scale_by(generated, gate)?;
        let copied = tape.scatter(attention, &ctx.body.source.ext_ids, width)?;
        let keep = tape.one_minus(gate);
        let copied = tape.scale_by(copied, keep)?;
        let dist = tape.add(generated, copied)?;
        if !tape.value(dist).is_finite() {
            return Err(Error::Numerical("non-finite decoder distribution".into()));
        }
        Ok(DecoderStep {
            state,
            attention,
            context,
            gate,
            dist,
        })
    }

    /// `ln P(token)` read off a step's distribution.
    pub fn log_prob(tape: &mut Tape, step: &DecoderStep, token: usize) -> Result<Var> {
        let p = tape.element(step.dist, 0, token)?;
        let floor = tape.constant(Tensor::scalar(LOG_FLOOR));
        let p = tape.add(p, floor)?;
        Ok(tape.ln(p))
    }

    /// Mean teacher-forced negative log-likelihood per target token
    /// (end token included).
    pub fn nll(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        vocab: &Vocab,
        target: &[Token],
    ) -> Result<Var> {
        let mut ids: Vec<usize> = target
            .iter()
            .map(|t| ctx.body.source.target_id(vocab, t))
            .collect();
        ids.push(EOS);
        let mut state = self.initial_state(tape, ctx)?;
        let mut prev = BOS;
        let mut terms = Vec::with_capacity(ids.len());
        for &tok in &ids {
            let step = self.decode_step(tape, store, ctx, prev, state)?;
            terms.push(Self::log_prob(tape, &step, tok)?);
            state = step.state;
            prev = tok;
        }
        let all = tape.concat(&terms, 1)?;
        let mean = tape.mean(all);
        Ok(tape.scale(mean, -1.0))
    }

    /// Ancestral sample on `tape`; log-probabilities stay differentiable.
    pub fn rollout<R: Rng + ?Sized>(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        ctx: &DecodeContext,
        max_len: usize,
        rng: &mut R,
    ) -> Result<Rollout> {
        let mut state = self.initial_state(tape, ctx)?;
        let mut prev = BOS;
        let mut tokens = Vec::new();
        let mut log_probs = Vec::new();
        for _ in 0..max_len {
            let step = self.decode_step(tape, store, ctx, prev, state)?;
            let tok = sample_index(tape.value(step.dist).data(), rng);
            log_probs.push(Self::log_prob(tape, &step, tok)?);
            if tok == EOS {
                break;
            }
            tokens.push(tok);
            state = step.state;
            prev = tok;
        }
        Ok(Rollout { tokens, log_probs })
    }

    /// Detached copy of a decode context for value-only search.
    pub fn frozen<'a>(&'a self, store: &'a ParamStore, tape: &Tape, ctx: &DecodeContext) -> FrozenDecoder<'a> {
        FrozenDecoder {
            generator: self,
            store,
            hidden_states: tape.value(ctx.body.hidden_states).clone(),
            keys: tape.value(ctx.keys).clone(),
            pooled: tape.value(ctx.body.pooled).clone(),
            scaled_user: tape.value(ctx.scaled_user).clone(),
            alpha: ctx.alpha,
            source: ctx.body.source.clone(),
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    /// Sampled extended ids, end token excluded.
    pub tokens: Vec<usize>,
    /// One per emitted step, end token included.
    pub log_probs: Vec<Var>,
}

/// A decoder with all conditioning detached, usable by the search routines.
#[derive(Debug, Clone)]
pub struct FrozenDecoder<'a> {
    generator: &'a Generator,
    store: &'a ParamStore,
    hidden_states: Tensor,
    keys: Tensor,
    pooled: Tensor,
    scaled_user: Tensor,
    alpha: f64,
    source: SourceMap,
}

impl FrozenDecoder<'_> {
    pub fn source(&self) -> &SourceMap {
        &self.source
    }

    fn rebuild(&self, tape: &mut Tape) -> DecodeContext {
        let hidden_states = tape.constant(self.hidden_states.clone());
        let pooled = tape.constant(self.pooled.clone());
        let keys = tape.constant(self.keys.clone());
        let scaled_user = tape.constant(self.scaled_user.clone());
        DecodeContext {
            body: BodyEncoding {
                hidden_states,
                pooled,
                source: self.source.clone(),
            },
            scaled_user,
            alpha: self.alpha,
            keys,
        }
    }
}

impl StepModel for FrozenDecoder<'_> {
    type State = Tensor;

    fn start(&self) -> Result<Tensor> {
        let mut tape = Tape::new();
        let ctx = self.rebuild(&mut tape);
        let s = self.generator.initial_state(&mut tape, &ctx)?;
        Ok(tape.value(s).clone())
    }

    fn step(&self, state: &Tensor, prev: usize) -> Result<(Vec<f64>, Tensor)> {
        let mut tape = Tape::new();
        let ctx = self.rebuild(&mut tape);
        let s = tape.constant(state.clone());
        let step = self.generator.decode_step(&mut tape, self.store, &ctx, prev, s)?;
        Ok((tape.value(step.dist).data().to_vec(), tape.value(step.state).clone()))
    }

    fn bos(&self) -> usize {
        BOS
    }

    fn eos(&self) -> usize {
        EOS
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numeric::{grad_check, grad_check_report};
    use alloc::string::{String, ToString};
    use alloc::vec;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn toks(s: &str) -> Vec<String> {
        s.split_whitespace().map(String::from).collect()
    }

    struct Fixture {
        store: ParamStore,
        gen: Generator,
        breaking: BreakingPredictor,
        vocab: Vocab,
        user: Tensor,
    }

    fn fixture(seed: u64) -> Fixture {
        let vocab = Vocab::from_tokens(toks("storm city rain closes road team wins cup").into_iter());
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut store = ParamStore::new();
        let cfg = GeneratorConfig {
            dim: 6,
            attn_hidden: 5,
            breaking_hidden: 4,
            max_len: 6,
        };
        let gen = Generator::new(&mut store, vocab.len(), &cfg, &mut rng);
        let breaking = BreakingPredictor::new(&mut store, cfg.dim, cfg.breaking_hidden, &mut rng);
        let user = Tensor::xavier(1, cfg.dim, &mut rng);
        Fixture {
            store,
            gen,
            breaking,
            vocab,
            user,
        }
    }

    fn ctx(f: &Fixture, tape: &mut Tape, body: &str, alpha: f64) -> DecodeContext {
        let b = f.gen.encode_body(tape, &f.store, &f.vocab, &toks(body)).unwrap();
        let u = tape.constant(f.user.clone());
        f.gen.context(tape, &f.store, b, u, alpha).unwrap()
    }

    #[test]
    fn body_encoding_shapes() {
        let f = fixture(1);
        let mut tape = Tape::new();
        let b = f.gen.encode_body(&mut tape, &f.store, &f.vocab, &toks("storm")).unwrap();
        assert_eq!(tape.value(b.pooled), tape.value(b.hidden_states));
        let b = f.gen.encode_body(&mut tape, &f.store, &f.vocab, &toks("storm city rain")).unwrap();
        assert_eq!(tape.value(b.hidden_states).rows(), 3);
        let again = f.gen.encode_body(&mut tape, &f.store, &f.vocab, &toks("storm city rain")).unwrap();
        assert_eq!(tape.value(b.pooled), tape.value(again.pooled));
        assert!(matches!(
            f.gen.encode_body(&mut tape, &f.store, &f.vocab, &[]),
            Err(Error::Empty(_))
        ));
    }

    #[test]
    fn fresh_breaking_predictor_is_half() {
        let f = fixture(2);
        let alpha = f.breaking.alpha(&f.store, &Tensor::row(vec![3.0, -1.0, 0.5, 2.0, 9.0, -4.0])).unwrap();
        assert_eq!(alpha, 0.5);
    }

    #[test]
    fn fitted_input_is_standardised() {
        let mut f = fixture(4);
        let samples: Vec<Tensor> = (0..5)
            .map(|i| Tensor::row((0..6).map(|k| 0.99 + 1e-3 * ((i * (k + 1)) % 7) as f64).collect()))
            .collect();
        f.breaking.fit_input(&mut f.store, &samples).unwrap();
        let (scale, offset) = (f.store.get(f.breaking.scale).clone(), f.store.get(f.breaking.offset).clone());
        for k in 0..6 {
            let z: Vec<f64> = samples.iter().map(|s| s.data()[k] * scale.data()[k] + offset.data()[k]).collect();
            let mean = z.iter().sum::<f64>() / 5.0;
            let var = z.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / 5.0;
            assert!(mean.abs() < 1e-6, "{mean}");
            assert!((var - 1.0).abs() < 1e-4, "{var}");
        }
        assert!(matches!(f.breaking.fit_input(&mut f.store, &[]), Err(Error::Empty(_))));
    }

    #[test]
    fn breaking_score_in_unit_interval() {
        let mut f = fixture(3);
        let mut rng = ChaCha8Rng::seed_from_u64(30);
        *f.store.get_mut(f.breaking.out.weight) = Tensor::xavier(4, 1, &mut rng).map(|x| x * 50.0);
        for scale in [-1e6, -3.0, 0.0, 2.0, 1e6] {
            let a = f.breaking.alpha(&f.store, &Tensor::filled(1, 6, scale)).unwrap();
            assert!((0.0..=1.0).contains(&a));
        }
    }

    #[test]
    fn forced_gate_endpoints() {
        let f = fixture(4);
        let mut tape = Tape::new();
        // "flood" is outside the vocabulary and only reachable by copying
        let c = ctx(&f, &mut tape, "storm flood city storm", 0.3);
        let s0 = f.gen.initial_state(&mut tape, &c).unwrap();
        let gen_only = f.gen.decode_step_with_gate(&mut tape, &f.store, &c, BOS, s0, Some(1.0)).unwrap();
        let dist = tape.value(gen_only.dist).data().to_vec();
        let logits_row = {
            let feats = tape.concat(&[gen_only.state, gen_only.context], 1).unwrap();
            let l = f.gen.output.forward(&mut tape, &f.store, feats).unwrap();
            let p = tape.softmax(l, 1).unwrap();
            tape.value(p).data().to_vec()
        };
        for (a, b) in dist.iter().zip(&logits_row) {
            assert!((a - b).abs() < 1e-15);
        }
        assert_eq!(dist[c.body.source.base], 0.0);

        let copy_only = f.gen.decode_step_with_gate(&mut tape, &f.store, &c, BOS, s0, Some(0.0)).unwrap();
        let dist = tape.value(copy_only.dist).data().to_vec();
        let attn = tape.value(copy_only.attention).data().to_vec();
        let storm = f.vocab.id("storm").unwrap();
        let city = f.vocab.id("city").unwrap();
        let flood = c.body.source.base;
        assert!((dist[storm] - (attn[0] + attn[3])).abs() < 1e-15);
        assert!((dist[city] - attn[2]).abs() < 1e-15);
        assert!((dist[flood] - attn[1]).abs() < 1e-15);
        let support: f64 = [storm, city, flood].iter().map(|&i| dist[i]).sum();
        assert!((support - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hand_mixture_example() {
        // vocabulary {a, b}, source "a"
        let p = pointer_mixture(&[0.5, 0.5], &[1.0], &[0], 2, 0.5).unwrap();
        assert_eq!(p, vec![0.75, 0.25]);
        assert!(matches!(
            pointer_mixture(&[f64::NAN, 1.0], &[1.0], &[0], 2, 0.5),
            Err(Error::Numerical(_))
        ));
    }

    #[test]
    fn duplicated_source_conserves_copy_mass() {
        let single = pointer_mixture(&[0.2, 0.3, 0.5], &[0.6, 0.4], &[1, 2], 3, 0.3).unwrap();
        let split = pointer_mixture(&[0.2, 0.3, 0.5], &[0.25, 0.35, 0.4], &[1, 1, 2], 3, 0.3).unwrap();
        for (a, b) in single.iter().zip(&split) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn step_invariants_and_alpha_moves_gate() {
        let mut f = fixture(5);
        let mut rng = ChaCha8Rng::seed_from_u64(50);
        // nonzero weights on the alpha * e_u block of the gate input
        *f.store.get_mut(f.gen.gate.weight) = Tensor::xavier(24, 1, &mut rng).map(|x| x * 5.0);
        let mut gates = Vec::new();
        for alpha in [0.0, 1.0] {
            let mut tape = Tape::new();
            let c = ctx(&f, &mut tape, "storm closes road", alpha);
            let s0 = f.gen.initial_state(&mut tape, &c).unwrap();
            let step = f.gen.decode_step(&mut tape, &f.store, &c, BOS, s0).unwrap();
            let a = tape.value(step.attention).data();
            assert!((a.iter().sum::<f64>() - 1.0).abs() < 1e-9);
            let d = tape.value(step.dist).data();
            assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
            assert!(d.iter().all(|&p| p >= 0.0));
            let g = tape.value(step.gate).item();
            assert!((0.0..=1.0).contains(&g));
            gates.push(g);
        }
        assert_ne!(gates[0], gates[1]);
    }

    #[test]
    fn decode_step_gradient_check() {
        let mut f = fixture(11);
        let mut rng = ChaCha8Rng::seed_from_u64(60);
        *f.store.get_mut(f.gen.gate.weight) = Tensor::xavier(24, 1, &mut rng);
        let ids: Vec<ParamId> = f.store.ids_in(Group::Generator).collect();
        let (gen, vocab, user) = (f.gen.clone(), f.vocab.clone(), f.user.clone());
        let err = grad_check_report(&mut f.store, &ids, 1e-5, |tape, store| {
            let b = gen.encode_body(tape, store, &vocab, &toks("storm city flood rain"))?;
            let u = tape.constant(user.clone());
            let c = gen.context(tape, store, b, u, 0.4)?;
            let s0 = gen.initial_state(tape, &c)?;
            let step = gen.decode_step(tape, store, &c, vocab.id("city").unwrap(), s0)?;
            let lp = Generator::log_prob(tape, &step, vocab.id("rain").unwrap())?;
            Ok(tape.scale(lp, -1.0))
        })
        .unwrap();
        let name = err.worst.map(|(id, k)| (f.store.entry(id).name.clone(), k));
        assert!(err.max_rel_err <= 1e-4, "{err:?} {name:?}");
    }

    /// Away from the relative-error floor the analytic gradient agrees with
    /// central differences to roundoff on every fixture.
    #[test]
    fn decode_step_absolute_gradient_error() {
        for seed in [6, 12, 13] {
            let mut f = fixture(seed);
            let ids: Vec<ParamId> = f.store.ids_in(Group::Generator).collect();
            let (gen, vocab, user) = (f.gen.clone(), f.vocab.clone(), f.user.clone());
            let scalar = |tape: &mut Tape, store: &ParamStore| -> Result<Var> {
                let b = gen.encode_body(tape, store, &vocab, &toks("storm city flood rain"))?;
                let u = tape.constant(user.clone());
                let c = gen.context(tape, store, b, u, 0.4)?;
                let s0 = gen.initial_state(tape, &c)?;
                let step = gen.decode_step(tape, store, &c, vocab.id("city").unwrap(), s0)?;
                let lp = Generator::log_prob(tape, &step, vocab.id("rain").unwrap())?;
                Ok(tape.scale(lp, -1.0))
            };
            let mut tape = Tape::new();
            let out = scalar(&mut tape, &f.store).unwrap();
            let analytic = tape.param_grads(out).unwrap();
            for &id in &ids {
                for k in 0..f.store.get(id).len() {
                    let x = f.store.get(id).data()[k];
                    let mut eval = |v: f64| {
                        f.store.get_mut(id).data_mut()[k] = v;
                        let mut t = Tape::new();
                        let o = scalar(&mut t, &f.store).unwrap();
                        t.value(o).item()
                    };
                    let numeric = (eval(x + 1e-5) - eval(x - 1e-5)) / 2e-5;
                    f.store.get_mut(id).data_mut()[k] = x;
                    let a = analytic.get(id).map_or(0.0, |g| g.data()[k]);
                    assert!((a - numeric).abs() < 1e-9, "{seed} {id:?} {k} {a} {numeric}");
                }
            }
        }
    }

    #[test]
    fn breaking_gradient_check() {
        let mut f = fixture(7);
        let mut rng = ChaCha8Rng::seed_from_u64(70);
        *f.store.get_mut(f.breaking.out.weight) = Tensor::xavier(4, 1, &mut rng);
        let ids: Vec<ParamId> = f.store.ids_in(Group::Breaking).collect();
        let bp = f.breaking;
        let v = Tensor::row(vec![0.3, -0.2, 0.8, 0.1, -0.5, 0.4]);
        let err = grad_check(&mut f.store, &ids, 1e-5, |tape, store| {
            let x = tape.constant(v.clone());
            let z = bp.logit(tape, store, x)?;
            tape.bce_with_logits(z, 1.0)
        })
        .unwrap();
        assert!(err <= 1e-4, "{err}");
    }

    #[test]
    fn nll_and_rollout_are_consistent() {
        let f = fixture(8);
        let mut tape = Tape::new();
        let c = ctx(&f, &mut tape, "team wins cup city", 0.5);
        let mut rng = ChaCha8Rng::seed_from_u64(80);
        let r = f.gen.rollout(&mut tape, &f.store, &c, 6, &mut rng).unwrap();
        assert!(r.log_probs.len() == r.tokens.len() || r.log_probs.len() == r.tokens.len() + 1);
        let words = c.body.source.decode(&f.vocab, &r.tokens);
        if r.log_probs.len() == r.tokens.len() + 1 && !words.iter().any(|w| w == "<unk>") {
            let total: f64 = r.log_probs.iter().map(|&v| tape.value(v).item()).sum();
            let nll = f.gen.nll(&mut tape, &f.store, &c, &f.vocab, &words).unwrap();
            let n = (r.tokens.len() + 1) as f64;
            assert!((tape.value(nll).item() * n + total).abs() < 1e-9);
        }
    }

    #[test]
    fn frozen_decoder_matches_tape_decoder() {
        let f = fixture(9);
        let mut tape = Tape::new();
        let c = ctx(&f, &mut tape, "storm closes road", 0.7);
        let frozen = f.gen.frozen(&f.store, &tape, &c);
        let s0 = f.gen.initial_state(&mut tape, &c).unwrap();
        let step = f.gen.decode_step(&mut tape, &f.store, &c, BOS, s0).unwrap();
        let (dist, _) = frozen.step(&frozen.start().unwrap(), BOS).unwrap();
        assert_eq!(dist, tape.value(step.dist).data());
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let a = sample(&frozen, 6, &mut rng).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(a, sample(&frozen, 6, &mut rng).unwrap());
        let g = greedy(&frozen, 6).unwrap();
        assert_eq!(beam_search(&frozen, 1, 6).unwrap()[0].tokens, g.tokens);
    }

    #[test]
    fn one_step_sampling_frequencies() {
        let f = fixture(10);
        let mut tape = Tape::new();
        let c = ctx(&f, &mut tape, "storm city rain", 0.5);
        let frozen = f.gen.frozen(&f.store, &tape, &c);
        let (dist, _) = frozen.step(&frozen.start().unwrap(), BOS).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let mut counts = vec![0usize; dist.len()];
        for _ in 0..10_000 {
            counts[sample_index(&dist, &mut rng)] += 1;
        }
        for (c, p) in counts.iter().zip(&dist) {
            assert!((*c as f64 / 10_000.0 - p).abs() <= 0.02);
        }
        let _ = "x".to_string();
    }

    proptest! {
        #[test]
        fn mixture_is_a_distribution(
            raw_v in prop::collection::vec(0.0f64..1.0, 1..12),
            raw_a in prop::collection::vec(0.0f64..1.0, 1..8),
            gate in 0.0f64..=1.0,
            seed in 0u64..1000,
        ) {
            let zv: f64 = raw_v.iter().sum::<f64>() + 1e-9;
            let p_vocab: Vec<f64> = raw_v.iter().map(|x| (x + 1e-9 / raw_v.len() as f64) / zv).collect();
            let za: f64 = raw_a.iter().sum::<f64>() + 1e-9;
            let attn: Vec<f64> = raw_a.iter().map(|x| (x + 1e-9 / raw_a.len() as f64) / za).collect();
            let width = p_vocab.len() + 3;
            let ids: Vec<usize> = (0..attn.len()).map(|j| (seed as usize * 7 + j * 13) % width).collect();
            let p = pointer_mixture(&p_vocab, &attn, &ids, width, gate).unwrap();
            prop_assert!(p.iter().all(|&x| x >= 0.0));
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
