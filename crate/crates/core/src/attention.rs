//! Scaled dot-product attention with a sequence-scaling matrix on the query
//! side.
//!
//! Keys and values are ordinary projections of the `n_in` input tokens. The
//! query matrix is `W_s * (X * W_q)`: the `n_out x n_in` scaling matrix
//! recombines projected tokens into `n_out` query tokens, and because the
//! attention output has one row per query the block maps `n_in` tokens to
//! `n_out` tokens. `n_out < n_in` reduces, `n_out > n_in` expands.

use rand::Rng;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Weights of one single-head attention block.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionParams {
    /// `[d_in, d_attn]`
    pub w_q: Tensor,
    /// `[d_in, d_attn]`
    pub w_k: Tensor,
    /// `[d_in, d_attn]`
    pub w_v: Tensor,
    /// `[n_out, n_in]`
    pub w_s: Tensor,
}

impl AttentionParams {
    pub fn new(w_q: Tensor, w_k: Tensor, w_v: Tensor, w_s: Tensor) -> Result<Self> {
        let proj = w_q.shape().to_vec();
        for w in [&w_k, &w_v] {
            if w.shape() != proj.as_slice() {
                return Err(Error::Shape {
                    op: "attention params",
                    lhs: proj,
                    rhs: w.shape().to_vec(),
                });
            }
        }
        if proj.len() != 2 || w_s.rank() != 2 {
            return Err(Error::Shape {
                op: "attention params",
                lhs: proj,
                rhs: w_s.shape().to_vec(),
            });
        }
        Ok(Self { w_q, w_k, w_v, w_s })
    }

    /// Projections are drawn from `uniform(-1/sqrt(d_in), 1/sqrt(d_in))`.
    /// The scaling matrix starts at [`resampling_matrix`] plus a
    /// `uniform(-1/sqrt(n_in), 1/sqrt(n_in))` perturbation, so each output
    /// token initially queries its own neighbourhood of input positions.
    pub fn init<R: Rng + ?Sized>(d_in: usize, d_attn: usize, n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let b = 1.0 / (d_in as f64).sqrt();
        let w_q = Tensor::uniform(&[d_in, d_attn], b, rng).with_grad();
        let w_k = Tensor::uniform(&[d_in, d_attn], b, rng).with_grad();
        let w_v = Tensor::uniform(&[d_in, d_attn], b, rng).with_grad();
        let mut w_s = Tensor::uniform(&[n_out, n_in], 1.0 / (n_in as f64).sqrt(), rng);
        let base = resampling_matrix(n_out, n_in);
        w_s.data_mut()
            .iter_mut()
            .zip(base.data())
            .for_each(|(w, r)| *w += r);
        Self {
            w_q,
            w_k,
            w_v,
            w_s: w_s.with_grad(),
        }
    }

    pub fn n_in(&self) -> usize {
        self.w_s.shape()[1]
    }

    pub fn n_out(&self) -> usize {
        self.w_s.shape()[0]
    }

    pub fn d_in(&self) -> usize {
        self.w_q.shape()[0]
    }

    pub fn d_attn(&self) -> usize {
        self.w_q.shape()[1]
    }

    /// Parameters in declaration order: `w_q, w_k, w_v, w_s`.
    pub fn tensors(&self) -> [&Tensor; 4] {
        [&self.w_q, &self.w_k, &self.w_v, &self.w_s]
    }

    pub fn tensors_mut(&mut self) -> [&mut Tensor; 4] {
        [&mut self.w_q, &mut self.w_k, &mut self.w_v, &mut self.w_s]
    }

    /// Records the four matrices as leaves on `tape`.
    pub fn watch(&self, tape: &mut Tape) -> AttentionVars {
        AttentionVars {
            w_q: tape.leaf(&self.w_q),
            w_k: tape.leaf(&self.w_k),
            w_v: tape.leaf(&self.w_v),
            w_s: tape.leaf(&self.w_s),
            n_in: self.n_in(),
        }
    }
}

/// Tape handles for an [`AttentionParams`].
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub w_q: Var,
    pub w_k: Var,
    pub w_v: Var,
    pub w_s: Var,
    n_in: usize,
}

impl AttentionVars {
    pub fn vars(&self) -> [Var; 4] {
        [self.w_q, self.w_k, self.w_v, self.w_s]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Qkv {
    pub q: Var,
    pub k: Var,
    pub v: Var,
}

/// Row-normalised tent interpolation from `n_in` to `n_out` positions.
///
/// Output row `i` is centred on input position `(i + 0.5) * n_in / n_out - 0.5`
/// with half-width `max(1, n_in / n_out)`. Equal lengths give the identity.
pub fn resampling_matrix(n_out: usize, n_in: usize) -> Tensor {
    let ratio = n_in as f64 / n_out as f64;
    let radius = ratio.max(1.0);
    let mut m = Tensor::zeros(&[n_out, n_in]);
    for i in 0..n_out {
        let centre = (i as f64 + 0.5) * ratio - 0.5;
        let row = &mut m.data_mut()[i * n_in..(i + 1) * n_in];
        for (j, w) in row.iter_mut().enumerate() {
            *w = (1.0 - (j as f64 - centre).abs() / radius).max(0.0);
        }
        let total: f64 = row.iter().sum();
        row.iter_mut().for_each(|w| *w /= total);
    }
    m
}

fn seq_len(t: &Tensor) -> Option<usize> {
    (t.rank() >= 2).then(|| t.shape()[t.rank() - 2])
}

/// `q = W_s (X W_q)`, `k = X W_k`, `v = X W_v` for `x` of shape
/// `[n_in, d_in]` or `[batch, n_in, d_in]`.
pub fn project_qkv(tape: &mut Tape, x: Var, p: &AttentionVars) -> Result<Qkv> {
    let rows = seq_len(tape.value(x)).ok_or_else(|| Error::Shape {
        op: "project_qkv",
        lhs: tape.value(x).shape().to_vec(),
        rhs: tape.value(p.w_q).shape().to_vec(),
    })?;
    if rows != p.n_in {
        return Err(Error::FixedLength {
            expected: p.n_in,
            actual: rows,
        });
    }
    let xq = tape.matmul(x, p.w_q)?;
    let q = tape.matmul(p.w_s, xq)?;
    let k = tape.matmul(x, p.w_k)?;
    let v = tape.matmul(x, p.w_v)?;
    Ok(Qkv { q, k, v })
}

/// `softmax(q k^T / sqrt(d_k))`, one distribution over keys per query row.
pub fn attention_weights(tape: &mut Tape, q: Var, k: Var) -> Result<Var> {
    let (tq, tk) = (tape.value(q), tape.value(k));
    if tq.last_dim() != tk.last_dim() || tq.rank() < 2 || tk.rank() < 2 {
        return Err(Error::Shape {
            op: "attention q/k",
            lhs: tq.shape().to_vec(),
            rhs: tk.shape().to_vec(),
        });
    }
    let d_k = tk.last_dim() as f64;
    let scores = tape.matmul_nt(q, k)?;
    let scores = tape.scale(scores, 1.0 / d_k.sqrt())?;
    tape.softmax(scores)
}

/// `softmax(q k^T / sqrt(d_k)) v`; the output has as many rows as `q`.
pub fn scaled_dot_attention(tape: &mut Tape, q: Var, k: Var, v: Var) -> Result<Var> {
    let (tk, tv) = (tape.value(k), tape.value(v));
    if seq_len(tk) != seq_len(tv) {
        return Err(Error::Shape {
            op: "attention k/v",
            lhs: tk.shape().to_vec(),
            rhs: tv.shape().to_vec(),
        });
    }
    let weights = attention_weights(tape, q, k)?;
    tape.matmul(weights, v)
}

/// One attention block mapping `n_in` tokens to `n_out` tokens.
pub fn reduce_attention(tape: &mut Tape, x: Var, p: &AttentionVars) -> Result<Var> {
    let Qkv { q, k, v } = project_qkv(tape, x, p)?;
    scaled_dot_attention(tape, q, k, v)
}
