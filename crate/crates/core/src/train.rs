//! AdamW, the linear learning-rate warm-down, the epoch loop with
//! patience-based early stopping, and evaluation.

use std::io::Write;
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::model::{token_accuracy, Autoencoder, Dropout};
use crate::tensor::{Tape, Tensor};

/// Smallest validation-accuracy gain that resets the patience counter.
pub const IMPROVEMENT_THRESHOLD: f64 = 1e-4;

/// AdamW hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamW {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub lr_start: f64,
    pub lr_end: f64,
    pub warmdown_epochs: usize,
    /// Train at `lr_end` throughout.
    pub static_lr: bool,
    pub max_epochs: usize,
    pub patience: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub adamw: AdamW,
    pub dropout: f64,
    /// Reshuffle the training set every epoch.
    pub shuffle: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lr_start: 0.001,
            lr_end: 0.0001,
            warmdown_epochs: 5,
            static_lr: false,
            max_epochs: 20,
            patience: 5,
            batch_size: 16,
            seed: 0,
            adamw: AdamW::default(),
            dropout: 0.0,
            shuffle: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr_end > 0.0 && self.lr_end <= self.lr_start && self.lr_start.is_finite()) {
            return Err(Error::usage(format!(
                "learning rates must satisfy 0 < lr_end <= lr_start, got {} and {}",
                self.lr_end, self.lr_start
            )));
        }
        if self.max_epochs == 0 || self.patience == 0 || self.patience > self.max_epochs {
            return Err(Error::usage(format!(
                "need 1 <= patience <= max_epochs, got patience {} and {} epochs",
                self.patience, self.max_epochs
            )));
        }
        if self.batch_size == 0 {
            return Err(Error::usage("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::usage("dropout must lie in [0, 1)"));
        }
        Ok(())
    }
}

/// Learning rate for a 0-based epoch: linear from `lr_start` to `lr_end`
/// over `warmdown_epochs`, then flat.
pub fn lr_at(epoch: usize, cfg: &TrainConfig) -> f64 {
    if cfg.static_lr || epoch >= cfg.warmdown_epochs {
        return cfg.lr_end;
    }
    let t = epoch as f64 / cfg.warmdown_epochs as f64;
    cfg.lr_start + t * (cfg.lr_end - cfg.lr_start)
}

/// Moment buffers, allocated on the first step.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamWState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    step: u64,
}

impl AdamWState {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn step(&self) -> u64 {
        self.step
    }
}

/// One AdamW update of every parameter from its accumulated gradient.
/// Gradients are left in place.
pub fn adamw_step(params: &mut [&mut Tensor], state: &mut AdamWState, lr: f64, hp: &AdamW) -> Result<()> {
    if params.is_empty() || params.iter().any(|p| p.grad().is_none()) {
        return Err(Error::usage("optimizer step without gradients"));
    }
    if state.step == 0 {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    } else if state.m.len() != params.len() || state.m.iter().zip(params.iter()).any(|(m, p)| m.len() != p.len()) {
        return Err(Error::usage("optimizer state does not match the parameters"));
    }
    state.step += 1;
    let t = state.step as i32;
    let c1 = 1.0 - hp.beta1.powi(t);
    let c2 = 1.0 - hp.beta2.powi(t);
    let decay = 1.0 - lr * hp.weight_decay;
    for ((p, m), v) in params.iter_mut().zip(&mut state.m).zip(&mut state.v) {
        let g = p.grad().expect("checked above").to_vec();
        for (i, x) in p.data_mut().iter_mut().enumerate() {
            m[i] = hp.beta1 * m[i] + (1.0 - hp.beta1) * g[i];
            v[i] = hp.beta2 * v[i] + (1.0 - hp.beta2) * g[i] * g[i];
            let m_hat = m[i] / c1;
            let v_hat = v[i] / c2;
            *x = *x * decay - lr * m_hat / (v_hat.sqrt() + hp.eps);
        }
    }
    Ok(())
}

/// Seed for an epoch's shuffle, mixed from the run seed and the epoch.
pub fn epoch_seed(seed: u64, epoch: usize) -> u64 {
    let mut z = seed ^ (epoch as u64).wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// One pass over `data` at the epoch's learning rate; returns the mean
/// per-token cross-entropy.
pub fn train_epoch(
    model: &mut Autoencoder,
    data: &[Sample],
    cfg: &TrainConfig,
    state: &mut AdamWState,
    epoch: usize,
) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::usage("empty training set"));
    }
    let lr = lr_at(epoch, cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(epoch_seed(cfg.seed, epoch));
    let mut order: Vec<usize> = (0..data.len()).collect();
    if cfg.shuffle {
        order.shuffle(&mut rng);
    }
    let mut total = 0.0;
    for chunk in order.chunks(cfg.batch_size) {
        let batch: Vec<&[usize]> = chunk.iter().map(|&i| data[i].ids.as_slice()).collect();
        let targets: Vec<usize> = batch.concat();
        let mut tape = Tape::new();
        let vars = model.watch(&mut tape);
        let mut dropout = Dropout { p: cfg.dropout, rng: &mut rng };
        let drop = (cfg.dropout > 0.0).then_some(&mut dropout);
        let logits = model.forward_on(&mut tape, &vars, &batch, drop)?;
        let loss = tape.cross_entropy(logits, &targets)?;
        total += tape.value(loss).item()? * chunk.len() as f64;
        let grads = tape.backward(loss)?;
        model.accumulate_grads(&grads, &vars)?;
        adamw_step(&mut model.params_mut(), state, lr, &cfg.adamw)?;
        model.zero_grads();
    }
    Ok(total / data.len() as f64)
}

/// Mean token accuracy of the model's reconstructions, summed in sample
/// order.
pub fn evaluate(model: &Autoencoder, data: &[Sample]) -> Result<f64> {
    if data.is_empty() {
        return Err(Error::usage("empty evaluation set"));
    }
    let mut total = 0.0;
    for chunk in data.chunks(64) {
        let batch: Vec<&[usize]> = chunk.iter().map(|s| s.ids.as_slice()).collect();
        for (pred, s) in model.reconstruct_batch(&batch)?.iter().zip(chunk) {
            total += token_accuracy(pred, &s.ids)?;
        }
    }
    Ok(total / data.len() as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    pub train_loss: f64,
    pub val_accuracy: f64,
    pub seconds: f64,
}

#[derive(Debug, Clone)]
pub struct FitOutcome {
    pub records: Vec<EpochRecord>,
    /// Parameters from the best validation epoch.
    pub best: Autoencoder,
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub stopped_early: bool,
}

/// The epoch loop with early stopping. `run_epoch` trains the model for one
/// epoch at the given rate and returns `(train_loss, val_accuracy)`.
pub fn fit_with<F>(mut model: Autoencoder, cfg: &TrainConfig, mut run_epoch: F) -> Result<FitOutcome>
where
    F: FnMut(&mut Autoencoder, usize, f64) -> Result<(f64, f64)>,
{
    cfg.validate()?;
    let mut records = Vec::new();
    let mut best = model.clone();
    let mut best_epoch = 0;
    let mut best_accuracy = f64::NEG_INFINITY;
    let mut stale = 0;
    let mut stopped_early = false;
    for epoch in 0..cfg.max_epochs {
        let lr = lr_at(epoch, cfg);
        let start = Instant::now();
        let (train_loss, val_accuracy) = run_epoch(&mut model, epoch, lr)?;
        records.push(EpochRecord {
            epoch,
            lr,
            train_loss,
            val_accuracy,
            seconds: start.elapsed().as_secs_f64(),
        });
        if val_accuracy > best_accuracy + IMPROVEMENT_THRESHOLD {
            best_accuracy = val_accuracy;
            best_epoch = epoch;
            best = model.clone();
            stale = 0;
        } else {
            stale += 1;
            if stale >= cfg.patience {
                stopped_early = true;
                break;
            }
        }
    }
    Ok(FitOutcome {
        records,
        best,
        best_epoch,
        best_accuracy,
        stopped_early,
    })
}

/// Trains on `train`, validating on `test` after every epoch.
pub fn fit(model: Autoencoder, train: &[Sample], test: &[Sample], cfg: &TrainConfig) -> Result<FitOutcome> {
    if test.is_empty() {
        return Err(Error::usage("empty validation set"));
    }
    let mut state = AdamWState::new();
    fit_with(model, cfg, |m, epoch, _| {
        let loss = train_epoch(m, train, cfg, &mut state, epoch)?;
        Ok((loss, evaluate(m, test)?))
    })
}

/// `x` with 6 significant digits, like C's `%.6g`.
pub fn sig6(x: f64) -> String {
    if x == 0.0 || !x.is_finite() {
        return if x == 0.0 { "0".into() } else { x.to_string() };
    }
    let sci = format!("{x:.5e}");
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if !(-4..6).contains(&exp) {
        let m = mantissa.trim_end_matches('0').trim_end_matches('.');
        return format!("{m}e{}{:02}", if exp < 0 { '-' } else { '+' }, exp.abs());
    }
    let s = format!("{x:.*}", (5 - exp) as usize);
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.').to_string()
    } else {
        s
    }
}

pub const TRAIL_HEADER: &str = "epoch,lr,train_loss,val_accuracy,seconds";

pub fn write_trail_csv<W: Write>(mut w: W, records: &[EpochRecord]) -> Result<()> {
    writeln!(w, "{TRAIL_HEADER}")?;
    for r in records {
        writeln!(
            w,
            "{},{},{},{},{}",
            r.epoch,
            sig6(r.lr),
            sig6(r.train_loss),
            sig6(r.val_accuracy),
            sig6(r.seconds)
        )?;
    }
    w.flush()?;
    Ok(())
}
