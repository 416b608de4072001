//! Small differentiable building blocks shared by the encoders and decoder.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use rand::Rng;

use super::{Group, ParamId, ParamStore, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// `x W + b` on row-major inputs.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        inputs: usize,
        outputs: usize,
        bias: bool,
        rng: &mut R,
    ) -> Self {
        let weight = store.add(
            format!("{name}.weight"),
            group,
            Tensor::xavier(inputs, outputs, rng),
        );
        let bias = bias.then(|| store.add(format!("{name}.bias"), group, Tensor::zeros(1, outputs)));
        Self { weight, bias }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let w = tape.param(store, self.weight);
        let y = tape.matmul(x, w)?;
        match self.bias {
            Some(b) => {
                let b = tape.param(store, b);
                tape.add_row(y, b)
            }
            None => Ok(y),
        }
    }
}

/// Additive attention pooling: `score_i = q . tanh(W h_i + b)`, softmax over rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AdditivePool {
    pub proj: Linear,
    pub query: ParamId,
}

impl AdditivePool {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        dim: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let proj = Linear::new(store, &format!("{name}.proj"), group, dim, hidden, true, rng);
        let query = store.add(
            format!("{name}.query"),
            group,
            Tensor::xavier(hidden, 1, rng),
        );
        Self { proj, query }
    }

    /// Returns the pooled `[1, d]` row and the `[1, n]` attention weights.
    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, rows: Var) -> Result<(Var, Var)> {
        let scores = self.scores(tape, store, rows)?;
        let weights = tape.softmax(scores, 1)?;
        let pooled = tape.matmul(weights, rows)?;
        Ok((pooled, weights))
    }

    /// Unnormalised `[1, n]` scores.
    pub fn scores(&self, tape: &mut Tape, store: &ParamStore, rows: Var) -> Result<Var> {
        let h = self.proj.forward(tape, store, rows)?;
        let h = tape.tanh(h);
        let q = tape.param(store, self.query);
        let s = tape.matmul(h, q)?;
        tape.transpose(s)
    }
}

/// Scaled dot-product attention over `heads` column blocks, concatenated and
/// projected back to the model dimension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MultiHeadAttention {
    pub heads: usize,
    pub dim: usize,
    pub wq: Linear,
    pub wk: Linear,
    pub wv: Linear,
    pub wo: Linear,
}

#[derive(Debug, Clone)]
pub struct Attended {
    pub output: Var,
    /// One `[m, n]` row-stochastic matrix per head.
    pub weights: Vec<Var>,
}

impl MultiHeadAttention {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        dim: usize,
        heads: usize,
        rng: &mut R,
    ) -> Result<Self> {
        if heads == 0 || dim % heads != 0 {
            return Err(Error::Config(format!(
                "model dimension {dim} is not divisible by {heads} heads"
            )));
        }
        let mut lin = |suffix: &str, rng: &mut R| {
            let n: String = format!("{name}.{suffix}");
            Linear::new(store, &n, group, dim, dim, false, rng)
        };
        let wq = lin("wq", rng);
        let wk = lin("wk", rng);
        let wv = lin("wv", rng);
        let wo = lin("wo", rng);
        Ok(Self {
            heads,
            dim,
            wq,
            wk,
            wv,
            wo,
        })
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        query: Var,
        keys: Var,
        values: Var,
    ) -> Result<Attended> {
        let q = self.wq.forward(tape, store, query)?;
        let k = self.wk.forward(tape, store, keys)?;
        let v = self.wv.forward(tape, store, values)?;
        let head_dim = self.dim / self.heads;
        let scale = 1.0 / libm::sqrt(head_dim as f64);
        let mut contexts = Vec::with_capacity(self.heads);
        let mut weights = Vec::with_capacity(self.heads);
        for h in 0..self.heads {
            let qh = tape.slice(q, 1, h * head_dim, head_dim)?;
            let kh = tape.slice(k, 1, h * head_dim, head_dim)?;
            let vh = tape.slice(v, 1, h * head_dim, head_dim)?;
            let kt = tape.transpose(kh)?;
            let scores = tape.matmul(qh, kt)?;
            let scores = tape.scale(scores, scale);
            let attn = tape.softmax(scores, 1)?;
            contexts.push(tape.matmul(attn, vh)?);
            weights.push(attn);
        }
        let joined = tape.concat(&contexts, 1)?;
        let output = self.wo.forward(tape, store, joined)?;
        Ok(Attended { output, weights })
    }
}

/// Gated recurrent unit with update and reset gates.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Gru {
    pub hidden: usize,
    pub xz: Linear,
    pub hz: Linear,
    pub xr: Linear,
    pub hr: Linear,
    pub xn: Linear,
    pub hn: Linear,
}

impl Gru {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        group: Group,
        inputs: usize,
        hidden: usize,
        rng: &mut R,
    ) -> Self {
        let x = |store: &mut ParamStore, s: &str, rng: &mut R| {
            Linear::new(store, &format!("{name}.{s}"), group, inputs, hidden, true, rng)
        };
        let xz = x(store, "xz", rng);
        let xr = x(store, "xr", rng);
        let xn = x(store, "xn", rng);
        let h = |store: &mut ParamStore, s: &str, rng: &mut R| {
            Linear::new(store, &format!("{name}.{s}"), group, hidden, hidden, false, rng)
        };
        let hz = h(store, "hz", rng);
        let hr = h(store, "hr", rng);
        let hn = h(store, "hn", rng);
        Self {
            hidden,
            xz,
            hz,
            xr,
            hr,
            xn,
            hn,
        }
    }

    /// One step: `x` is `[1, in]`, `state` is `[1, hidden]`.
    pub fn step(&self, tape: &mut Tape, store: &ParamStore, x: Var, state: Var) -> Result<Var> {
        let gate = |tape: &mut Tape, a: &Linear, b: &Linear, h: Var| -> Result<Var> {
            let u = a.forward(tape, store, x)?;
            let w = b.forward(tape, store, h)?;
            tape.add(u, w)
        };
        let z = gate(tape, &self.xz, &self.hz, state)?;
        let z = tape.sigmoid(z);
        let r = gate(tape, &self.xr, &self.hr, state)?;
        let r = tape.sigmoid(r);
        let reset = tape.mul(r, state)?;
        let n = gate(tape, &self.xn, &self.hn, reset)?;
        let n = tape.tanh(n);
        let keep = tape.mul(z, state)?;
        let one_minus_z = tape.one_minus(z);
        let fresh = tape.mul(one_minus_z, n)?;
        tape.add(fresh, keep)
    }
}
