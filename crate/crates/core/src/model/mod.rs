//! The sequence autoencoder: embed `N` tokens, reduce them to `L` latent
//! tokens with attention, expand back to `N` and project onto the vocabulary.

mod checkpoint;

pub use checkpoint::{read_header, to_f32, CheckpointHeader, CHECKPOINT_VERSION};

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::attention::{reduce_attention, AttentionParams, AttentionVars};
use crate::error::{Error, Result};
use crate::tensor::{Gradients, Tape, Tensor, Var};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    /// Tokens per input sequence (`N`).
    pub input_len: usize,
    /// Tokens in the latent sequence (`L`).
    pub latent_len: usize,
    pub d_model: usize,
    pub d_attn: usize,
    pub vocab_size: usize,
    pub use_positional: bool,
    pub encoder_depth: usize,
    pub decoder_depth: usize,
}

impl ModelConfig {
    /// Defaults: embedding width 256, attention width 512, one block each
    /// way, learned positional embeddings on.
    pub fn new(input_len: usize, latent_len: usize, vocab_size: usize) -> Self {
        Self {
            input_len,
            latent_len,
            d_model: 256,
            d_attn: 512,
            vocab_size,
            use_positional: true,
            encoder_depth: 1,
            decoder_depth: 1,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::usage(format!("invalid model config: {what}")));
        if self.input_len == 0 || self.latent_len == 0 {
            return bad("sequence lengths must be positive");
        }
        if self.d_model == 0 || self.d_attn == 0 {
            return bad("widths must be positive");
        }
        if self.vocab_size < 2 {
            return bad("vocabulary needs at least 2 entries");
        }
        if self.encoder_depth == 0 || self.decoder_depth == 0 {
            return bad("depths must be positive");
        }
        Ok(())
    }

    /// `L / N`.
    pub fn reduction_ratio(&self) -> f64 {
        self.latent_len as f64 / self.input_len as f64
    }
}

/// Parameters of the autoencoder.
#[derive(Debug, Clone, PartialEq)]
pub struct Autoencoder {
    config: ModelConfig,
    seed: u64,
    pub embedding: Tensor,
    pub positional: Option<Tensor>,
    /// All blocks but the last keep `N` tokens; the last reduces to `L`.
    pub encoder: Vec<AttentionParams>,
    /// All blocks but the last keep `L` tokens; the last expands to `N`.
    pub decoder: Vec<AttentionParams>,
    pub out_proj: Tensor,
}

/// Tape handles for every parameter of an [`Autoencoder`].
#[derive(Debug, Clone)]
pub struct ModelVars {
    pub embedding: Var,
    pub positional: Option<Var>,
    pub encoder: Vec<AttentionVars>,
    pub decoder: Vec<AttentionVars>,
    pub out_proj: Var,
}

impl ModelVars {
    /// Handles in parameter declaration order.
    pub fn all(&self) -> Vec<Var> {
        let mut out = vec![self.embedding];
        out.extend(self.positional);
        for block in self.encoder.iter().chain(&self.decoder) {
            out.extend(block.vars());
        }
        out.push(self.out_proj);
        out
    }
}

/// Regularisation applied during a training forward pass.
pub struct Dropout<'a> {
    pub p: f64,
    pub rng: &'a mut dyn RngCore,
}

impl Autoencoder {
    /// Deterministic initialisation from `seed`.
    ///
    /// Lookup tables (token and position embeddings) have one active input
    /// per row and are drawn from `uniform(-1, 1)`; every other matrix uses
    /// `uniform(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let c = &config;
        let embedding = Tensor::uniform(&[c.vocab_size, c.d_model], 1.0, &mut rng).with_grad();
        let positional = c
            .use_positional
            .then(|| Tensor::uniform(&[c.input_len, c.d_model], 1.0, &mut rng).with_grad());
        let encoder = (0..c.encoder_depth)
            .map(|i| {
                let d_in = if i == 0 { c.d_model } else { c.d_attn };
                let n_out = if i + 1 == c.encoder_depth { c.latent_len } else { c.input_len };
                AttentionParams::init(d_in, c.d_attn, c.input_len, n_out, &mut rng)
            })
            .collect();
        let decoder = (0..c.decoder_depth)
            .map(|i| {
                let n_out = if i + 1 == c.decoder_depth { c.input_len } else { c.latent_len };
                AttentionParams::init(c.d_attn, c.d_attn, c.latent_len, n_out, &mut rng)
            })
            .collect();
        let bound = 1.0 / (c.d_attn as f64).sqrt();
        let out_proj = Tensor::uniform(&[c.d_attn, c.vocab_size], bound, &mut rng).with_grad();
        Ok(Self {
            config,
            seed,
            embedding,
            positional,
            encoder,
            decoder,
            out_proj,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    /// Named parameters in declaration order.
    pub fn named_params(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![("embedding".to_string(), &self.embedding)];
        if let Some(p) = &self.positional {
            out.push(("positional".to_string(), p));
        }
        for (side, blocks) in [("encoder", &self.encoder), ("decoder", &self.decoder)] {
            for (i, b) in blocks.iter().enumerate() {
                for (name, t) in ["w_q", "w_k", "w_v", "w_s"].iter().zip(b.tensors()) {
                    out.push((format!("{side}.{i}.{name}"), t));
                }
            }
        }
        out.push(("out_proj".to_string(), &self.out_proj));
        out
    }

    /// Parameters in declaration order.
    pub fn params_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = vec![&mut self.embedding];
        if let Some(p) = &mut self.positional {
            out.push(p);
        }
        for b in self.encoder.iter_mut().chain(self.decoder.iter_mut()) {
            out.extend(b.tensors_mut());
        }
        out.push(&mut self.out_proj);
        out
    }

    pub fn param_count(&self) -> usize {
        self.named_params().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn watch(&self, tape: &mut Tape) -> ModelVars {
        ModelVars {
            embedding: tape.leaf(&self.embedding),
            positional: self.positional.as_ref().map(|p| tape.leaf(p)),
            encoder: self.encoder.iter().map(|b| b.watch(tape)).collect(),
            decoder: self.decoder.iter().map(|b| b.watch(tape)).collect(),
            out_proj: tape.leaf(&self.out_proj),
        }
    }

    /// Adds the gradients of one backward pass into the parameter buffers.
    pub fn accumulate_grads(&mut self, grads: &Gradients, vars: &ModelVars) -> Result<()> {
        for (param, var) in self.params_mut().into_iter().zip(vars.all()) {
            grads.accumulate_into(var, param)?;
        }
        Ok(())
    }

    pub fn zero_grads(&mut self) {
        self.params_mut().into_iter().for_each(Tensor::zero_grad);
    }

    fn check_ids(&self, ids: &[usize]) -> Result<()> {
        if ids.len() != self.config.input_len {
            return Err(Error::FixedLength {
                expected: self.config.input_len,
                actual: ids.len(),
            });
        }
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::Index {
                what: "token id",
                index: bad,
                bound: self.config.vocab_size,
            });
        }
        Ok(())
    }

    /// Token plus positional embeddings, `[batch, N, d_model]`.
    pub fn embed(&self, tape: &mut Tape, vars: &ModelVars, batch: &[&[usize]]) -> Result<Var> {
        if batch.is_empty() {
            return Err(Error::usage("empty batch"));
        }
        let mut flat = Vec::with_capacity(batch.len() * self.config.input_len);
        for ids in batch {
            self.check_ids(ids)?;
            flat.extend_from_slice(ids);
        }
        let x = tape.embedding(vars.embedding, &flat, &[batch.len(), self.config.input_len])?;
        match vars.positional {
            Some(p) => tape.add(x, p),
            None => Ok(x),
        }
    }

    /// Encoder stack: `N` tokens of any width in, `L` tokens of `d_attn` out.
    pub fn encode(&self, tape: &mut Tape, vars: &ModelVars, x: Var, mut dropout: Option<&mut Dropout>) -> Result<Var> {
        let mut h = x;
        for block in &vars.encoder {
            h = reduce_attention(tape, h, block)?;
            if let Some(d) = dropout.as_deref_mut() {
                h = tape.dropout(h, d.p, &mut *d.rng)?;
            }
        }
        Ok(h)
    }

    /// Decoder stack: `L` latent tokens in, `N` tokens of `d_attn` out.
    pub fn decode(&self, tape: &mut Tape, vars: &ModelVars, z: Var, mut dropout: Option<&mut Dropout>) -> Result<Var> {
        let t = tape.value(z);
        let rows = if t.rank() >= 2 { t.shape()[t.rank() - 2] } else { 0 };
        if rows != self.config.latent_len {
            return Err(Error::FixedLength {
                expected: self.config.latent_len,
                actual: rows,
            });
        }
        let mut h = z;
        let last = vars.decoder.len() - 1;
        for (i, block) in vars.decoder.iter().enumerate() {
            h = reduce_attention(tape, h, block)?;
            if i < last {
                if let Some(d) = dropout.as_deref_mut() {
                    h = tape.dropout(h, d.p, &mut *d.rng)?;
                }
            }
        }
        Ok(h)
    }

    /// Logits `[batch, N, V]` on an existing tape.
    pub fn forward_on(
        &self,
        tape: &mut Tape,
        vars: &ModelVars,
        batch: &[&[usize]],
        mut dropout: Option<&mut Dropout>,
    ) -> Result<Var> {
        let x = self.embed(tape, vars, batch)?;
        let z = self.encode(tape, vars, x, dropout.as_deref_mut())?;
        let h = self.decode(tape, vars, z, dropout)?;
        tape.matmul(h, vars.out_proj)
    }

    /// Logits `[N, V]` for one sequence of exactly `N` ids.
    pub fn forward(&self, ids: &[usize]) -> Result<Tensor> {
        let mut tape = Tape::new();
        let vars = self.watch(&mut tape);
        let logits = self.forward_on(&mut tape, &vars, &[ids], None)?;
        let t = tape.value(logits);
        Tensor::new(&t.shape()[1..], t.data().to_vec())
    }

    /// Per-position argmax of the logits.
    pub fn reconstruct(&self, ids: &[usize]) -> Result<Vec<usize>> {
        Ok(argmax_rows(&self.forward(ids)?))
    }

    /// [`reconstruct`](Self::reconstruct) for a batch, in input order.
    pub fn reconstruct_batch(&self, batch: &[&[usize]]) -> Result<Vec<Vec<usize>>> {
        let mut tape = Tape::new();
        let vars = self.watch(&mut tape);
        let logits = self.forward_on(&mut tape, &vars, batch, None)?;
        let preds = argmax_rows(tape.value(logits));
        Ok(preds.chunks(self.config.input_len).map(<[usize]>::to_vec).collect())
    }
}

/// Index of the largest entry of every row; ties go to the lowest index.
pub fn argmax_rows(t: &Tensor) -> Vec<usize> {
    let w = t.last_dim();
    t.data()
        .chunks(w)
        .map(|row| {
            row.iter()
                .enumerate()
                .fold((0, f64::NEG_INFINITY), |best, (i, &x)| if x > best.1 { (i, x) } else { best })
                .0
        })
        .collect()
}

/// Fraction of positions where `pred` and `target` agree.
pub fn token_accuracy(pred: &[usize], target: &[usize]) -> Result<f64> {
    if pred.len() != target.len() || pred.is_empty() {
        return Err(Error::usage(format!(
            "token_accuracy needs equal non-empty lengths, got {} and {}",
            pred.len(),
            target.len()
        )));
    }
    let hits = pred.iter().zip(target).filter(|(a, b)| a == b).count();
    Ok(hits as f64 / pred.len() as f64)
}
