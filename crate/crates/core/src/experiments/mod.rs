//! Latent-length sweeps: train one model per (schedule, L, seed) cell,
//! collect the results as CSV, summarise them and draw charts.

mod chart;
mod summary;

pub use chart::{render_charts, ChartKind};
pub use summary::{side_by_side, summarize, write_summary_csv, BandPoint, GroupStats, Summary};

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{gen_synthetic, load_documents, split_train_test, text_corpus, DocLayout, Sample, SyntheticSpec, TextCorpusOptions, TokenMode};
use crate::error::{Error, Result};
use crate::model::{Autoencoder, ModelConfig};
use crate::train::{fit, sig6, EpochRecord, TrainConfig};

/// Environment variable capping the number of cells trained at once.
pub const THREADS_ENV: &str = "REDATTN_THREADS";

#[derive(Debug, Clone, PartialEq)]
pub enum CorpusSource {
    Synthetic(SyntheticSpec),
    Text {
        paths: Vec<PathBuf>,
        layout: DocLayout,
        mode: TokenMode,
        max_vocab: Option<usize>,
        fraction: f64,
    },
}

/// Samples of one fixed length and the vocabulary size they were drawn from.
#[derive(Debug, Clone)]
pub struct PreparedCorpus {
    pub vocab_size: usize,
    pub samples: Vec<Sample>,
}

impl CorpusSource {
    /// Samples of exactly `input_len` tokens. A synthetic spec's own length
    /// is replaced by `input_len`.
    pub fn prepare(&self, input_len: usize) -> Result<PreparedCorpus> {
        match self {
            CorpusSource::Synthetic(spec) => {
                let spec = SyntheticSpec {
                    length: input_len,
                    ..spec.clone()
                };
                Ok(PreparedCorpus {
                    vocab_size: spec.vocab_size,
                    samples: gen_synthetic(&spec)?,
                })
            }
            CorpusSource::Text {
                paths,
                layout,
                mode,
                max_vocab,
                fraction,
            } => {
                let docs = load_documents(paths, *layout)?;
                let opts = TextCorpusOptions {
                    mode: *mode,
                    max_vocab: *max_vocab,
                    input_len,
                    fraction: *fraction,
                };
                let corpus = text_corpus(&docs, &opts)?;
                Ok(PreparedCorpus {
                    vocab_size: corpus.vocab_size,
                    samples: corpus.samples,
                })
            }
        }
    }
}

/// Learning-rate schedule of a sweep cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Schedule {
    /// Linear warm-down from `lr_start` to `lr_end`.
    WarmDown,
    /// `lr_end` throughout.
    Static,
}

impl Schedule {
    pub fn apply(self, cfg: &TrainConfig) -> TrainConfig {
        TrainConfig {
            static_lr: self == Schedule::Static,
            ..cfg.clone()
        }
    }
}

impl fmt::Display for Schedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Schedule::WarmDown => "warmdown",
            Schedule::Static => "static",
        })
    }
}

impl FromStr for Schedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "warmdown" => Ok(Schedule::WarmDown),
            "static" => Ok(Schedule::Static),
            other => Err(Error::Format(format!("unknown schedule {other:?}"))),
        }
    }
}

/// Architecture settings shared by every cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ModelDims {
    pub d_model: usize,
    pub d_attn: usize,
    pub use_positional: bool,
    pub depth: usize,
}

impl ModelDims {
    pub fn config(&self, input_len: usize, latent_len: usize, vocab_size: usize) -> ModelConfig {
        ModelConfig {
            d_model: self.d_model,
            d_attn: self.d_attn,
            use_positional: self.use_positional,
            encoder_depth: self.depth,
            decoder_depth: self.depth,
            ..ModelConfig::new(input_len, latent_len, vocab_size)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub corpus: CorpusSource,
    pub input_len: usize,
    pub latent_lens: Vec<usize>,
    pub seeds: Vec<u64>,
    pub schedules: Vec<Schedule>,
    /// Base training settings; each cell substitutes its seed and schedule.
    pub train: TrainConfig,
    pub dims: ModelDims,
    pub split_ratio: f64,
    /// Seed of the train/test split, shared by all cells.
    pub split_seed: u64,
    /// Cells trained concurrently; `None` reads [`THREADS_ENV`].
    pub threads: Option<usize>,
}

impl SweepSpec {
    /// Template-repetition corpus of 5000 samples over 64 ids, `N = 32`,
    /// `L` in {32, 24, 16, 8, 4}, seeds 1 to 3, 64-wide layers.
    pub fn desk_default() -> Self {
        Self {
            corpus: CorpusSource::Synthetic(SyntheticSpec {
                kind: crate::data::SyntheticKind::template(),
                vocab_size: 64,
                length: 32,
                count: 5000,
                seed: 0,
            }),
            input_len: 32,
            latent_lens: vec![32, 24, 16, 8, 4],
            seeds: vec![1, 2, 3],
            schedules: vec![Schedule::WarmDown],
            train: TrainConfig {
                lr_start: 0.01,
                lr_end: 0.001,
                ..TrainConfig::default()
            },
            dims: ModelDims {
                d_model: 64,
                d_attn: 64,
                use_positional: true,
                depth: 1,
            },
            split_ratio: 0.8,
            split_seed: 0,
            threads: None,
        }
    }

    /// Runs every cell under both the warm-down and the static schedule.
    pub fn elevated_lr(mut self) -> Self {
        self.schedules = vec![Schedule::WarmDown, Schedule::Static];
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_len == 0 {
            return Err(Error::usage("input length must be positive"));
        }
        if self.latent_lens.is_empty() || self.seeds.is_empty() || self.schedules.is_empty() {
            return Err(Error::usage("a sweep needs at least one latent length, seed and schedule"));
        }
        if let Some(&l) = self.latent_lens.iter().find(|&&l| l == 0 || l > self.input_len) {
            return Err(Error::usage(format!(
                "latent length {l} outside 1..={}",
                self.input_len
            )));
        }
        self.train.validate()
    }

    fn cells(&self) -> Vec<(Schedule, usize, u64)> {
        let mut cells = Vec::new();
        for &schedule in &self.schedules {
            for &l in &self.latent_lens {
                for &seed in &self.seeds {
                    cells.push((schedule, l, seed));
                }
            }
        }
        cells.sort_by(|a, b| a.0.cmp(&b.0).then(b.1.cmp(&a.1)).then(a.2.cmp(&b.2)));
        cells.dedup();
        cells
    }
}

/// Outcome of one sweep cell.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub input_len: usize,
    pub latent_len: usize,
    pub seed: u64,
    pub schedule: Schedule,
    pub best_accuracy: f64,
    pub final_accuracy: f64,
    pub best_epoch: usize,
    /// Number of epochs trained before stopping.
    pub epochs_run: usize,
    pub trail: Vec<EpochRecord>,
}

impl SweepRow {
    /// `L / N`.
    pub fn ratio(&self) -> f64 {
        self.latent_len as f64 / self.input_len as f64
    }
}

/// Rows ordered by schedule, then `L` descending, then seed.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
}

/// A finished sweep and the best model of each row.
#[derive(Debug, Clone)]
pub struct SweepOutput {
    pub result: SweepResult,
    pub models: Vec<Autoencoder>,
}

fn thread_count(spec: &SweepSpec) -> Result<usize> {
    if let Some(n) = spec.threads {
        return Ok(n.max(1));
    }
    match std::env::var(THREADS_ENV) {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .map(|n| n.max(1))
            .map_err(|_| Error::usage(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        Err(_) => Ok(std::thread::available_parallelism().map_or(1, usize::from)),
    }
}

/// Trains every cell of the sweep. Output does not depend on the thread
/// count.
pub fn run_sweep(spec: &SweepSpec) -> Result<SweepOutput> {
    spec.validate()?;
    let corpus = spec.corpus.prepare(spec.input_len)?;
    let needed = spec.train.batch_size.max(2);
    if corpus.samples.len() < needed {
        return Err(Error::usage(format!(
            "corpus yields {} samples of length {}, need at least {needed}",
            corpus.samples.len(),
            spec.input_len
        )));
    }
    let (train, test) = split_train_test(corpus.samples, spec.split_ratio, spec.split_seed)?;

    let run_cell = |&(schedule, latent_len, seed): &(Schedule, usize, u64)| -> Result<(SweepRow, Autoencoder)> {
        let model = Autoencoder::init(spec.dims.config(spec.input_len, latent_len, corpus.vocab_size), seed)?;
        let cfg = TrainConfig {
            seed,
            ..schedule.apply(&spec.train)
        };
        let out = fit(model, &train, &test, &cfg)?;
        let row = SweepRow {
            input_len: spec.input_len,
            latent_len,
            seed,
            schedule,
            best_accuracy: out.best_accuracy,
            final_accuracy: out.records.last().map_or(0.0, |r| r.val_accuracy),
            best_epoch: out.best_epoch,
            epochs_run: out.records.len(),
            trail: out.records,
        };
        Ok((row, out.best))
    };

    let cells = spec.cells();
    let threads = thread_count(spec)?;
    let done: Vec<Result<(SweepRow, Autoencoder)>> = if threads == 1 {
        cells.iter().map(run_cell).collect()
    } else {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| Error::usage(format!("thread pool: {e}")))?
            .install(|| cells.par_iter().map(run_cell).collect())
    };
    let mut rows = Vec::with_capacity(done.len());
    let mut models = Vec::with_capacity(done.len());
    for cell in done {
        let (row, model) = cell?;
        rows.push(row);
        models.push(model);
    }
    Ok(SweepOutput {
        result: SweepResult { rows },
        models,
    })
}

pub const RESULTS_HEADER: [&str; 9] = [
    "input_len",
    "latent_len",
    "ratio",
    "seed",
    "schedule",
    "best_accuracy",
    "final_accuracy",
    "best_epoch",
    "epochs_run",
];

pub const TRAILS_HEADER: [&str; 9] = [
    "input_len",
    "latent_len",
    "seed",
    "schedule",
    "epoch",
    "lr",
    "train_loss",
    "val_accuracy",
    "seconds",
];

fn csv_err(e: csv::Error) -> Error {
    Error::Format(e.to_string())
}

/// One row per cell. Contains no timings, so identical sweeps give
/// identical bytes.
pub fn write_results_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(RESULTS_HEADER).map_err(csv_err)?;
    for r in &result.rows {
        w.write_record([
            r.input_len.to_string(),
            r.latent_len.to_string(),
            sig6(r.ratio()),
            r.seed.to_string(),
            r.schedule.to_string(),
            sig6(r.best_accuracy),
            sig6(r.final_accuracy),
            r.best_epoch.to_string(),
            r.epochs_run.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

/// Every epoch of every cell, including wall-clock seconds.
pub fn write_trails_csv(path: &Path, result: &SweepResult) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(TRAILS_HEADER).map_err(csv_err)?;
    for r in &result.rows {
        for e in &r.trail {
            w.write_record([
                r.input_len.to_string(),
                r.latent_len.to_string(),
                r.seed.to_string(),
                r.schedule.to_string(),
                e.epoch.to_string(),
                sig6(e.lr),
                sig6(e.train_loss),
                sig6(e.val_accuracy),
                sig6(e.seconds),
            ])
            .map_err(csv_err)?;
        }
    }
    w.flush()?;
    Ok(())
}

fn field<T: FromStr>(rec: &csv::StringRecord, i: usize, name: &str) -> Result<T> {
    rec.get(i)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format(format!("bad or missing {name} in {rec:?}")))
}

fn check_header(rdr: &mut csv::Reader<std::fs::File>, expected: &[&str], path: &Path) -> Result<()> {
    let header = rdr.headers().map_err(csv_err)?;
    if header.iter().ne(expected.iter().copied()) {
        return Err(Error::Format(format!("{}: unexpected header", path.display())));
    }
    Ok(())
}

/// Reads `results.csv` and, when given, joins the matching `trails.csv`
/// rows onto each cell.
pub fn read_result(results: &Path, trails: Option<&Path>) -> Result<SweepResult> {
    let mut rdr = csv::Reader::from_path(results).map_err(csv_err)?;
    check_header(&mut rdr, &RESULTS_HEADER, results)?;
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(csv_err)?;
        rows.push(SweepRow {
            input_len: field(&rec, 0, "input_len")?,
            latent_len: field(&rec, 1, "latent_len")?,
            seed: field(&rec, 3, "seed")?,
            schedule: field(&rec, 4, "schedule")?,
            best_accuracy: field(&rec, 5, "best_accuracy")?,
            final_accuracy: field(&rec, 6, "final_accuracy")?,
            best_epoch: field(&rec, 7, "best_epoch")?,
            epochs_run: field(&rec, 8, "epochs_run")?,
            trail: Vec::new(),
        });
    }
    if let Some(path) = trails {
        let mut rdr = csv::Reader::from_path(path).map_err(csv_err)?;
        check_header(&mut rdr, &TRAILS_HEADER, path)?;
        for rec in rdr.records() {
            let rec = rec.map_err(csv_err)?;
            let key: (usize, usize, u64, Schedule) = (
                field(&rec, 0, "input_len")?,
                field(&rec, 1, "latent_len")?,
                field(&rec, 2, "seed")?,
                field(&rec, 3, "schedule")?,
            );
            let row = rows
                .iter_mut()
                .find(|r| (r.input_len, r.latent_len, r.seed, r.schedule) == key)
                .ok_or_else(|| Error::Format(format!("trail row without a result row: {rec:?}")))?;
            row.trail.push(EpochRecord {
                epoch: field(&rec, 4, "epoch")?,
                lr: field(&rec, 5, "lr")?,
                train_loss: field(&rec, 6, "train_loss")?,
                val_accuracy: field(&rec, 7, "val_accuracy")?,
                seconds: field(&rec, 8, "seconds")?,
            });
        }
    }
    Ok(SweepResult { rows })
}
