//! The four training phases: CTR pretraining of the user encoder, MLE
//! warm-up of the generator, breaking-classifier training and A2C
//! fine-tuning.

mod a2c;
mod config;
mod data;
mod model;

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use a2c::{a2c_losses, advantages, A2cLosses, Rollout};
pub use config::{
    Ablation, FilterConfig, ModelConfig, PhaseConfig, RewardWeights, RunConfig, Toggles, TrainConfig,
};
pub use data::{epoch_sample, CtrExample, Pair, Prepared};
pub use model::{personalization, Generated, Model, UserSummary};

use crate::error::{Error, Result};
use crate::numeric::{sigmoid, Adam, AdamConfig, Group, ParamGrads, Tape, Tensor};
use crate::vocab::Vocab;

/// Runs independent per-example work, possibly in parallel. Results must come
/// back in index order so reductions stay deterministic.
pub trait Executor: Sync {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send;
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Sequential;

impl Executor for Sequential {
    fn map<T, F>(&self, n: usize, f: F) -> Vec<T>
    where
        T: Send,
        F: Fn(usize) -> T + Sync + Send,
    {
        (0..n).map(f).collect()
    }
}

/// Hooks for the host: clock, metrics sink and phase-boundary checkpoints.
pub trait Observer {
    fn elapsed_ms(&self) -> u64 {
        0
    }
    fn metric(&mut self, _record: &MetricRecord) -> Result<()> {
        Ok(())
    }
    fn phase_end(&mut self, _state: &TrainState, _model: &Model) -> Result<()> {
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct NullObserver;

impl Observer for NullObserver {}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricRecord {
    pub phase: u8,
    pub epoch: usize,
    pub step: u64,
    pub loss: f64,
    pub reward_mean: Option<f64>,
    pub reward_std: Option<f64>,
    pub wallclock_ms: u64,
}

/// Progress marker. Each phase starts a fresh optimiser and draws from its
/// own seeded stream, so a phase boundary needs no optimiser state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainState {
    /// Number of completed phases, 0..=4.
    pub phase: u8,
    /// Optimiser steps taken so far across all phases.
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(seed: u64) -> Self {
        Self { phase: 0, step: 0, seed }
    }

    fn begin(&self, phase: u8) -> Result<()> {
        if self.phase + 1 != phase {
            return Err(Error::Contract(format!(
                "phase {phase} cannot start after phase {}",
                self.phase
            )));
        }
        Ok(())
    }
}

fn mix(mut x: u64) -> u64 {
    // splitmix64 finaliser
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

pub fn phase_rng(seed: u64, phase: u8) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(seed ^ mix(phase as u64)))
}

/// Stream for one example so results do not depend on scheduling.
pub fn example_rng(seed: u64, phase: u8, epoch: usize, index: usize) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(mix(mix(seed ^ mix(phase as u64)) ^ mix(epoch as u64) ^ mix(index as u64 + 1)))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase1Report {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase2Report {
    pub initial_loss: f64,
    pub final_loss: f64,
    pub xi_checksum_before: u64,
    pub xi_checksum_after: u64,
}

impl Phase2Report {
    pub fn loss_drop(&self) -> f64 {
        1.0 - self.final_loss / self.initial_loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Phase3Report {
    pub positives: usize,
    pub negatives: usize,
    pub final_loss: f64,
    pub train_accuracy: f64,
    pub train_balanced_accuracy: f64,
    pub heldout_accuracy: Option<f64>,
    pub heldout_balanced_accuracy: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Phase4Report {
    /// Mean and standard deviation of rollout reward per epoch.
    pub epoch_rewards: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainSummary {
    pub phase1: Option<Phase1Report>,
    pub phase2: Option<Phase2Report>,
    pub phase3: Option<Phase3Report>,
    pub phase4: Option<Phase4Report>,
}

/// Population mean and standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (0.0, 0.0);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let v = xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / n;
    (m, libm::sqrt(v))
}

/// Binary accuracy and the mean of per-class recalls (`None` if a class is absent).
fn accuracies(scored: &[(f64, bool)]) -> (f64, Option<f64>) {
    let mut tp = 0usize;
    let mut pos = 0usize;
    let mut tn = 0usize;
    let mut neg = 0usize;
    for &(p, y) in scored {
        if y {
            pos += 1;
            tp += usize::from(p > 0.5);
        } else {
            neg += 1;
            tn += usize::from(p <= 0.5);
        }
    }
    let acc = if scored.is_empty() {
        0.0
    } else {
        (tp + tn) as f64 / scored.len() as f64
    };
    let balanced = (pos > 0 && neg > 0).then(|| 0.5 * (tp as f64 / pos as f64 + tn as f64 / neg as f64));
    (acc, balanced)
}

/// Shared state of one training run.
pub struct Session<'a, 'c, E: Executor, O: Observer> {
    pub cfg: &'a RunConfig,
    pub data: &'a Prepared<'c>,
    pub exec: &'a E,
    pub observer: &'a mut O,
}

/// Read-only parts of a session, shareable across executor workers.
#[derive(Clone, Copy)]
struct Ctx<'a, 'c, E: Executor> {
    cfg: &'a RunConfig,
    data: &'a Prepared<'c>,
    exec: &'a E,
}

impl<E: Executor> Ctx<'_, '_, E> {
    fn adam(&self, lr: f64, groups: &[Group]) -> Adam {
        Adam::new(
            AdamConfig {
                lr,
                clip_norm: Some(self.cfg.train.clip_norm),
                ..AdamConfig::default()
            },
            groups,
        )
    }

    fn ctr_loss(&self, model: &Model, ex: &CtrExample, grads: bool) -> Result<(ParamGrads, f64, Vec<(f64, bool)>)> {
        let mut tape = Tape::new();
        let enc = model
            .user
            .encode_user(&mut tape, &model.store, &model.vocab, &ex.context, &self.data.facets)?;
        let mut terms = Vec::with_capacity(ex.candidates.len());
        let mut scored = Vec::with_capacity(ex.candidates.len());
        for &(a, label) in &ex.candidates {
            let ids = model.vocab.ids(&self.data.article(a).headline);
            let c = model.user.encode_news(&mut tape, &model.store, &ids)?;
            let logit = model.user.ctr_logit(&mut tape, enc.user, c)?;
            scored.push((sigmoid(tape.value(logit).item()), label > 0.5));
            terms.push(tape.bce_with_logits(logit, label)?);
        }
        let all = tape.concat(&terms, 1)?;
        let loss = tape.mean(all);
        let value = tape.value(loss).item();
        let g = if grads {
            tape.param_grads(loss)?
        } else {
            ParamGrads::default()
        };
        Ok((g, value, scored))
    }

    fn ctr_eval(&self, model: &Model, examples: &[CtrExample]) -> Result<(f64, f64)> {
        let parts = self.exec.map(examples.len(), |i| self.ctr_loss(model, &examples[i], false));
        let mut loss = 0.0;
        let mut scored = Vec::new();
        for p in parts {
            let (_, l, s) = p?;
            loss += l;
            scored.extend(s);
        }
        Ok((loss / examples.len().max(1) as f64, accuracies(&scored).0))
    }

    fn user_vectors(&self, model: &Model, users: &[usize]) -> Result<BTreeMap<usize, Tensor>> {
        let parts = self.exec.map(users.len(), |i| {
            model
                .user_summary(self.data.history(users[i]), &self.data.facets)
                .map(|s| (users[i], s.vector))
        });
        parts.into_iter().collect()
    }

    fn alphas(&self, model: &Model, articles: &[usize]) -> Result<BTreeMap<usize, f64>> {
        let bp = self.cfg.toggles.bp;
        let parts = self.exec.map(articles.len(), |i| {
            let a = articles[i];
            let alpha = if bp {
                model.alpha(&self.data.article(a).body)?
            } else {
                0.0
            };
            Ok((a, alpha))
        });
        parts.into_iter().collect()
    }

    fn nll(&self, model: &Model, user: &Tensor, alpha: f64, article: usize, grads: bool) -> Result<(ParamGrads, f64)> {
        let a = self.data.article(article);
        let mut tape = Tape::new();
        let body = model.generator.encode_body(&mut tape, &model.store, &model.vocab, &a.body)?;
        let u = tape.constant(user.clone());
        let ctx = model.generator.context(&mut tape, &model.store, body, u, alpha)?;
        let loss = model.generator.nll(&mut tape, &model.store, &ctx, &model.vocab, &a.headline)?;
        let value = tape.value(loss).item();
        let g = if grads {
            tape.param_grads(loss)?
        } else {
            ParamGrads::default()
        };
        Ok((g, value))
    }

    /// One example's A2C gradient: `K` rollouts sharing the critic's value of
    /// the detached initial state.
    fn a2c_example(
        &self,
        model: &Model,
        pair: Pair,
        alpha: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<(ParamGrads, f64, Vec<f64>)> {
        let article = self.data.article(pair.article);
        let mut tape = Tape::new();
        let enc = model.user.encode_user(
            &mut tape,
            &model.store,
            &model.vocab,
            self.data.history(pair.user),
            &self.data.facets,
        )?;
        let user_value = tape.value(enc.user).clone();
        let body = model.generator.encode_body(&mut tape, &model.store, &model.vocab, &article.body)?;
        let ctx = model.generator.context(&mut tape, &model.store, body, enc.user, alpha)?;
        let s0 = model.generator.initial_state(&mut tape, &ctx)?;
        let s0 = tape.constant(tape.value(s0).clone());
        let value = model.critic.value(&mut tape, &model.store, s0)?;
        let mut log_probs = Vec::with_capacity(self.cfg.train.a2c_samples);
        let mut rewards = Vec::with_capacity(self.cfg.train.a2c_samples);
        for _ in 0..self.cfg.train.a2c_samples {
            let r = model
                .generator
                .rollout(&mut tape, &model.store, &ctx, model.config.max_headline_len, rng)?;
            let words = ctx.body.source.decode(&model.vocab, &r.tokens);
            rewards.push(model.reward(&words, &article.headline, &user_value, self.cfg.train.reward)?);
            log_probs.push(r.log_probs);
        }
        let losses = a2c_losses(&mut tape, &log_probs, &rewards, value)?;
        let total = tape.add(losses.policy, losses.critic)?;
        let loss = tape.value(total).item();
        Ok((tape.param_grads(total)?, loss, rewards))
    }

}

impl<'a, 'c, E: Executor, O: Observer> Session<'a, 'c, E, O> {
    fn ctx(&self) -> Ctx<'a, 'c, E> {
        Ctx {
            cfg: self.cfg,
            data: self.data,
            exec: self.exec,
        }
    }

    fn record(&mut self, phase: u8, epoch: usize, step: u64, loss: f64, rewards: Option<(f64, f64)>) -> Result<()> {
        let rec = MetricRecord {
            phase,
            epoch,
            step,
            loss,
            reward_mean: rewards.map(|r| r.0),
            reward_std: rewards.map(|r| r.1),
            wallclock_ms: self.observer.elapsed_ms(),
        };
        self.observer.metric(&rec)
    }

    /// Averages per-example gradients in index order.
    fn reduce(parts: Vec<Result<(ParamGrads, f64)>>) -> Result<(ParamGrads, f64)> {
        let n = parts.len().max(1) as f64;
        let mut grads = ParamGrads::default();
        let mut loss = 0.0;
        for p in parts {
            let (g, l) = p?;
            grads.merge(&g);
            loss += l;
        }
        grads.scale(1.0 / n);
        Ok((grads, loss / n))
    }

    fn step(
        model: &mut Model,
        state: &mut TrainState,
        opts: &mut [&mut Adam],
        grads: &ParamGrads,
        phase: u8,
        epoch: usize,
    ) -> Result<()> {
        if !grads.is_finite() {
            let bad: Vec<String> = grads
                .iter()
                .filter(|(_, g)| !g.is_finite())
                .map(|(id, _)| model.store.entry(id).name.clone())
                .collect();
            return Err(Error::Numerical(format!(
                "phase {phase}, epoch {epoch}, step {}: non-finite gradient in {}",
                state.step,
                bad.join(", ")
            )));
        }
        for opt in opts.iter_mut() {
            opt.step(&mut model.store, grads)?;
        }
        state.step += 1;
        Ok(())
    }

    /// Binary cross-entropy CTR training of the user encoder.
    pub fn phase1_pretrain(&mut self, model: &mut Model, state: &mut TrainState) -> Result<Phase1Report> {
        let cx = self.ctx();
        state.begin(1)?;
        if cx.data.corpus.impressions().iter().all(|l| l.exposed.is_empty()) {
            return Err(Error::Validation("CTR pretraining needs impressions".into()));
        }
        let pc = cx.cfg.train.phase1;
        let targets = cx.cfg.train.ctr_targets_per_user;
        let mut rng = phase_rng(state.seed, 1);
        let examples: Vec<CtrExample> = self
            .data
            .train_users
            .iter()
            .filter_map(|&u| cx.data.ctr_example(u, targets, &mut rng))
            .collect();
        if examples.is_empty() {
            return Err(Error::Validation("no user has labelled CTR candidates".into()));
        }
        let heldout: Vec<CtrExample> = self
            .data
            .test_users
            .iter()
            .filter_map(|&u| cx.data.ctr_example(u, targets, &mut rng))
            .collect();
        let (initial_loss, _) = cx.ctr_eval(model, &examples)?;
        let mut opt = cx.adam(pc.lr, &[Group::UserEncoder]);
        let index: Vec<usize> = (0..examples.len()).collect();
        for epoch in 0..pc.epochs {
            let order = epoch_sample(&index, pc.max_examples, &mut rng);
            let mut losses = Vec::new();
            for chunk in order.chunks(pc.batch) {
                let m: &Model = model;
                let parts = cx.exec.map(chunk.len(), |i| {
                    cx.ctr_loss(m, &examples[chunk[i]], true).map(|(g, l, _)| (g, l))
                });
                let (mut grads, loss) = Self::reduce(parts)?;
                grads.retain_groups(&model.store, &[Group::UserEncoder]);
                Self::step(model, state, &mut [&mut opt], &grads, 1, epoch)?;
                losses.push(loss);
            }
            self.record(1, epoch, state.step, mean_std(&losses).0, None)?;
        }
        let (final_loss, train_accuracy) = cx.ctr_eval(model, &examples)?;
        let heldout_accuracy = if heldout.is_empty() {
            None
        } else {
            Some(cx.ctr_eval(model, &heldout)?.1)
        };
        state.phase = 1;
        Ok(Phase1Report {
            initial_loss,
            final_loss,
            train_accuracy,
            heldout_accuracy,
        })
    }

    /// Teacher-forced headline likelihood with the user encoder frozen.
    pub fn phase2_mle_warmup(&mut self, model: &mut Model, state: &mut TrainState) -> Result<Phase2Report> {
        let cx = self.ctx();
        state.begin(2)?;
        let pc = cx.cfg.train.phase2;
        let mut rng = phase_rng(state.seed, 2);
        let pairs = cx.data.headline_pairs();
        if pairs.is_empty() {
            return Err(Error::Validation("no training (user, headline) pairs".into()));
        }
        let xi_checksum_before = model.store.checksum(Group::UserEncoder);
        let mut users: Vec<usize> = pairs.iter().map(|p| p.user).collect();
        users.dedup();
        let user_vecs = cx.user_vectors(model, &users)?;
        let mut articles: Vec<usize> = pairs.iter().map(|p| p.article).collect();
        articles.sort_unstable();
        articles.dedup();
        let alphas = cx.alphas(model, &articles)?;

        let monitor = epoch_sample(&pairs, 64, &mut rng);
        let eval = |m: &Model| -> Result<f64> {
            let parts = cx.exec.map(monitor.len(), |i| {
                let p = monitor[i];
                cx.nll(m, &user_vecs[&p.user], alphas[&p.article], p.article, false)
            });
            Ok(Self::reduce(parts)?.1)
        };
        let initial_loss = eval(model)?;
        let mut opt = cx.adam(pc.lr, &[Group::Generator]);
        for epoch in 0..pc.epochs {
            let order = epoch_sample(&pairs, pc.max_examples, &mut rng);
            let mut losses = Vec::new();
            for chunk in order.chunks(pc.batch) {
                let m: &Model = model;
                let parts = cx.exec.map(chunk.len(), |i| {
                    let p = chunk[i];
                    cx.nll(m, &user_vecs[&p.user], alphas[&p.article], p.article, true)
                });
                let (mut grads, loss) = Self::reduce(parts)?;
                grads.retain_groups(&model.store, &[Group::Generator]);
                Self::step(model, state, &mut [&mut opt], &grads, 2, epoch)?;
                losses.push(loss);
            }
            self.record(2, epoch, state.step, mean_std(&losses).0, None)?;
        }
        let final_loss = eval(model)?;
        state.phase = 2;
        Ok(Phase2Report {
            initial_loss,
            final_loss,
            xi_checksum_before,
            xi_checksum_after: model.store.checksum(Group::UserEncoder),
        })
    }

    /// Class-balanced binary cross-entropy of the breaking classifier on
    /// detached body encodings.
    pub fn phase3_train_breaking(&mut self, model: &mut Model, state: &mut TrainState) -> Result<Phase3Report> {
        let cx = self.ctx();
        state.begin(3)?;
        let pc = cx.cfg.train.phase3;
        let mut rng = phase_rng(state.seed, 3);
        let encode = |m: &Model, list: &[usize]| -> Result<Vec<(Tensor, bool)>> {
            let parts = cx.exec.map(list.len(), |i| {
                let a = cx.data.article(list[i]);
                Ok((m.pooled_body(&a.body)?, cx.data.breaking.contains(&a.article_id)))
            });
            parts.into_iter().collect()
        };
        let train = encode(model, &cx.data.train_articles)?;
        let positives = train.iter().filter(|(_, y)| *y).count();
        let negatives = train.len() - positives;
        if positives == 0 || negatives == 0 {
            return Err(Error::Validation(format!(
                "breaking classifier needs both classes, got {positives} positive and {negatives} negative articles"
            )));
        }
        let inputs: Vec<Tensor> = train.iter().map(|(v, _)| v.clone()).collect();
        model.breaking.fit_input(&mut model.store, &inputs)?;
        let n = train.len() as f64;
        let (w_pos, w_neg) = (n / (2.0 * positives as f64), n / (2.0 * negatives as f64));
        let mut opt = cx.adam(pc.lr, &[Group::Breaking]);
        let index: Vec<usize> = (0..train.len()).collect();
        let bp = model.breaking;
        let mut final_loss = 0.0;
        for epoch in 0..pc.epochs {
            let order = epoch_sample(&index, pc.max_examples, &mut rng);
            let mut losses = Vec::new();
            for chunk in order.chunks(pc.batch) {
                let m: &Model = model;
                let parts = cx.exec.map(chunk.len(), |i| {
                    let (v, y) = &train[chunk[i]];
                    let mut tape = Tape::new();
                    let x = tape.constant(v.clone());
                    let z = bp.logit(&mut tape, &m.store, x)?;
                    let l = tape.bce_with_logits(z, if *y { 1.0 } else { 0.0 })?;
                    let l = tape.scale(l, if *y { w_pos } else { w_neg });
                    Ok((tape.param_grads(l)?, tape.value(l).item()))
                });
                let (mut grads, loss) = Self::reduce(parts)?;
                grads.retain_groups(&model.store, &[Group::Breaking]);
                Self::step(model, state, &mut [&mut opt], &grads, 3, epoch)?;
                losses.push(loss);
            }
            final_loss = mean_std(&losses).0;
            self.record(3, epoch, state.step, final_loss, None)?;
        }
        let score = |m: &Model, set: &[(Tensor, bool)]| -> Result<Vec<(f64, bool)>> {
            set.iter().map(|(v, y)| Ok((bp.alpha(&m.store, v)?, *y))).collect()
        };
        let (train_accuracy, train_balanced) = accuracies(&score(model, &train)?);
        let heldout = encode(model, &cx.data.test_articles)?;
        let (heldout_accuracy, heldout_balanced_accuracy) = if heldout.is_empty() {
            (None, None)
        } else {
            let (a, b) = accuracies(&score(model, &heldout)?);
            (Some(a), b)
        };
        state.phase = 3;
        Ok(Phase3Report {
            positives,
            negatives,
            final_loss,
            train_accuracy,
            train_balanced_accuracy: train_balanced.unwrap_or(train_accuracy),
            heldout_accuracy,
            heldout_balanced_accuracy,
        })
    }

    /// Policy-gradient fine-tuning of the user encoder and generator.
    pub fn phase4_a2c(&mut self, model: &mut Model, state: &mut TrainState) -> Result<Phase4Report> {
        let cx = self.ctx();
        state.begin(4)?;
        let pc = cx.cfg.train.phase4;
        let mut rng = phase_rng(state.seed, 4);
        let pairs = cx.data.headline_pairs();
        if pairs.is_empty() {
            return Err(Error::Validation("no training (user, headline) pairs".into()));
        }
        let mut articles: Vec<usize> = pairs.iter().map(|p| p.article).collect();
        articles.sort_unstable();
        articles.dedup();
        let alphas = cx.alphas(model, &articles)?;
        let mut policy_opt = cx.adam(pc.lr, &[Group::UserEncoder, Group::Generator]);
        let mut critic_opt = cx.adam(cx.cfg.train.critic_lr, &[Group::Critic]);
        let mut epoch_rewards = Vec::with_capacity(pc.epochs);
        let seed = state.seed;
        for epoch in 0..pc.epochs {
            let order = epoch_sample(&pairs, pc.max_examples, &mut rng);
            let mut losses = Vec::new();
            let mut rewards = Vec::new();
            for (c, chunk) in order.chunks(pc.batch).enumerate() {
                let m: &Model = model;
                let parts = cx.exec.map(chunk.len(), |i| {
                    let mut r = example_rng(seed, 4, epoch, c * pc.batch + i);
                    cx.a2c_example(m, chunk[i], alphas[&chunk[i].article], &mut r)
                });
                let mut batch = Vec::with_capacity(parts.len());
                for p in parts {
                    let (g, l, r) = p?;
                    rewards.extend(r);
                    batch.push(Ok((g, l)));
                }
                let (mut grads, loss) = Self::reduce(batch)?;
                grads.retain_groups(&model.store, &[Group::UserEncoder, Group::Generator, Group::Critic]);
                Self::step(model, state, &mut [&mut policy_opt, &mut critic_opt], &grads, 4, epoch)?;
                losses.push(loss);
            }
            let rs = mean_std(&rewards);
            epoch_rewards.push(rs);
            self.record(4, epoch, state.step, mean_std(&losses).0, Some(rs))?;
        }
        state.phase = 4;
        Ok(Phase4Report { epoch_rewards })
    }

    /// Runs the phases not yet completed in `state`, notifying the observer
    /// after each one.
    pub fn run_all(&mut self, model: &mut Model, state: &mut TrainState) -> Result<TrainSummary> {
        let mut summary = TrainSummary::default();
        if state.phase > 4 {
            return Err(Error::Contract(format!("unknown phase marker {}", state.phase)));
        }
        if state.phase < 1 {
            summary.phase1 = Some(self.phase1_pretrain(model, state)?);
            self.observer.phase_end(state, model)?;
        }
        if state.phase < 2 {
            summary.phase2 = Some(self.phase2_mle_warmup(model, state)?);
            self.observer.phase_end(state, model)?;
        }
        if state.phase < 3 {
            summary.phase3 = Some(self.phase3_train_breaking(model, state)?);
            self.observer.phase_end(state, model)?;
        }
        if state.phase < 4 {
            summary.phase4 = Some(self.phase4_a2c(model, state)?);
            self.observer.phase_end(state, model)?;
        }
        Ok(summary)
    }
}

/// Fresh model for a corpus under a configuration.
pub fn build_model(corpus: &crate::corpus::Corpus, cfg: &RunConfig) -> Result<Model> {
    cfg.validate()?;
    let vocab = Vocab::build(corpus, cfg.model.max_vocab);
    Model::new(vocab, &cfg.model, mix(cfg.seed))
}

/// Builds a model and trains every phase.
pub fn train<E: Executor, O: Observer>(
    corpus: &crate::corpus::Corpus,
    cfg: &RunConfig,
    exec: &E,
    observer: &mut O,
) -> Result<(Model, TrainState, TrainSummary)> {
    let mut model = build_model(corpus, cfg)?;
    let data = Prepared::new(corpus, cfg)?;
    let mut state = TrainState::new(cfg.seed);
    let summary = Session {
        cfg,
        data: &data,
        exec,
        observer,
    }
    .run_all(&mut model, &mut state)?;
    Ok((model, state, summary))
}

#[cfg(test)]
mod tests;
