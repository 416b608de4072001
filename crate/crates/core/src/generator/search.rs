//! Decoding strategies over an abstract next-token model.

use alloc::vec::Vec;

use rand::Rng;

use crate::error::{Error, Result};

/// A left-to-right model exposing next-token distributions.
pub trait StepModel {
    type State: Clone;

    fn start(&self) -> Result<Self::State>;
    /// Distribution over the next token given the previous one.
    fn step(&self, state: &Self::State, prev: usize) -> Result<(Vec<f64>, Self::State)>;
    fn bos(&self) -> usize;
    fn eos(&self) -> usize;
}

#[derive(Debug, Clone, PartialEq)]
pub struct Hypothesis {
    /// Generated tokens, end token excluded.
    pub tokens: Vec<usize>,
    pub log_prob: f64,
    /// `log_prob` divided by the number of emitted tokens (end token included).
    pub score: f64,
    pub finished: bool,
}

fn log(p: f64) -> f64 {
    if p > 0.0 {
        libm::log(p)
    } else {
        f64::NEG_INFINITY
    }
}

fn argmax(dist: &[f64]) -> usize {
    let mut best = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p > dist[best] {
            best = i;
        }
    }
    best
}

fn check(dist: &[f64]) -> Result<()> {
    if dist.iter().any(|p| !p.is_finite()) {
        return Err(Error::Numerical("non-finite probability in decoder output".into()));
    }
    Ok(())
}

pub fn greedy<M: StepModel>(model: &M, max_len: usize) -> Result<Hypothesis> {
    let mut state = model.start()?;
    let mut prev = model.bos();
    let mut tokens = Vec::new();
    let mut log_prob = 0.0;
    for _ in 0..max_len {
        let (dist, next) = model.step(&state, prev)?;
        check(&dist)?;
        let tok = argmax(&dist);
        log_prob += log(dist[tok]);
        if tok == model.eos() {
            let score = log_prob / (tokens.len() + 1) as f64;
            return Ok(Hypothesis { tokens, log_prob, score, finished: true });
        }
        tokens.push(tok);
        state = next;
        prev = tok;
    }
    let score = log_prob / tokens.len().max(1) as f64;
    Ok(Hypothesis { tokens, log_prob, score, finished: false })
}

/// Beam search ranked by length-normalised log-probability; returns at most
/// `width` hypotheses, best first.
pub fn beam_search<M: StepModel>(model: &M, width: usize, max_len: usize) -> Result<Vec<Hypothesis>> {
    if width == 0 || max_len == 0 {
        return Err(Error::Contract("beam width and max length must be at least 1".into()));
    }
    struct Beam<S> {
        tokens: Vec<usize>,
        log_prob: f64,
        state: S,
    }
    let mut alive = alloc::vec![Beam { tokens: Vec::new(), log_prob: 0.0, state: model.start()? }];
    let mut finished: Vec<Hypothesis> = Vec::new();
    for _ in 0..max_len {
        // (beam index, token, cumulative log-prob)
        let mut candidates: Vec<(usize, usize, f64)> = Vec::new();
        let mut nexts = Vec::with_capacity(alive.len());
        for (b, beam) in alive.iter().enumerate() {
            let prev = beam.tokens.last().copied().unwrap_or(model.bos());
            let (dist, next) = model.step(&beam.state, prev)?;
            check(&dist)?;
            let mut order: Vec<usize> = (0..dist.len()).collect();
            order.sort_by(|&x, &y| dist[y].total_cmp(&dist[x]).then(x.cmp(&y)));
            for &tok in order.iter().take(width + 1) {
                candidates.push((b, tok, beam.log_prob + log(dist[tok])));
            }
            nexts.push(next);
        }
        candidates.sort_by(|x, y| y.2.total_cmp(&x.2).then(x.0.cmp(&y.0)).then(x.1.cmp(&y.1)));
        let mut next_alive = Vec::with_capacity(width);
        for (b, tok, lp) in candidates {
            if next_alive.len() == width {
                break;
            }
            let mut tokens = alive[b].tokens.clone();
            if tok == model.eos() {
                let score = lp / (tokens.len() + 1) as f64;
                finished.push(Hypothesis { tokens, log_prob: lp, score, finished: true });
            } else {
                tokens.push(tok);
                next_alive.push(Beam { tokens, log_prob: lp, state: nexts[b].clone() });
            }
        }
        alive = next_alive;
        if finished.len() >= width || alive.is_empty() {
            break;
        }
    }
    if finished.len() < width {
        for beam in alive {
            let score = beam.log_prob / beam.tokens.len().max(1) as f64;
            finished.push(Hypothesis {
                tokens: beam.tokens,
                log_prob: beam.log_prob,
                score,
                finished: false,
            });
        }
    }
    finished.sort_by(|a, b| b.score.total_cmp(&a.score).then(a.tokens.cmp(&b.tokens)));
    finished.truncate(width);
    Ok(finished)
}

/// Draws an index from `dist` by inverse CDF.
pub fn sample_index<R: Rng + ?Sized>(dist: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random::<f64>() * dist.iter().sum::<f64>();
    let mut acc = 0.0;
    let mut last = 0;
    for (i, &p) in dist.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

/// Ancestral sample; returns tokens (end token excluded) and the log-probability
/// of every emitted step, end token included.
pub fn sample<M: StepModel, R: Rng + ?Sized>(
    model: &M,
    max_len: usize,
    rng: &mut R,
) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut state = model.start()?;
    let mut prev = model.bos();
    let mut tokens = Vec::new();
    let mut log_probs = Vec::new();
    for _ in 0..max_len {
        let (dist, next) = model.step(&state, prev)?;
        check(&dist)?;
        let tok = sample_index(&dist, rng);
        log_probs.push(log(dist[tok]));
        if tok == model.eos() {
            break;
        }
        tokens.push(tok);
        state = next;
        prev = tok;
    }
    Ok((tokens, log_probs))
}
