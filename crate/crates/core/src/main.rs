use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use redattn::data::{gen_synthetic, save_samples_csv, DocLayout, SyntheticKind, SyntheticSpec, TokenMode};
use redattn::experiments::{
    read_result, render_charts, run_sweep, side_by_side, summarize, write_results_csv, write_summary_csv,
    write_trails_csv, ChartKind, CorpusSource, ModelDims, Schedule, SweepResult, SweepSpec,
};
use redattn::model::{read_header, Autoencoder};
use redattn::train::{write_trail_csv, TrainConfig};

/// Sequence-length reducing attention autoencoder.
#[derive(Parser)]
#[command(name = "redattn", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a single model and save its best checkpoint
    Train(TrainArgs),
    /// Train one model per latent length and seed
    Sweep(SweepArgs),
    /// Summarise and chart an existing sweep directory
    Report {
        /// Directory holding results.csv and trails.csv
        #[arg(long, default_value = "runs/sweep")]
        out: PathBuf,
    },
    /// Write a synthetic corpus as CSV
    GenData(GenArgs),
    /// Print the header of a checkpoint and verify its contents
    InspectCkpt { path: PathBuf },
}

#[derive(Clone, Copy, ValueEnum)]
enum Kind {
    Uniform,
    Markov,
    Template,
}

#[derive(Args)]
struct CorpusArgs {
    /// Plain-text corpus file (repeatable); one document per file
    #[arg(long, conflicts_with = "synthetic")]
    corpus: Vec<PathBuf>,
    /// Treat every non-empty line of a corpus file as its own document
    #[arg(long)]
    per_line: bool,
    /// Whitespace-separated word tokens instead of characters
    #[arg(long)]
    word: bool,
    /// Largest vocabulary, reserved ids included
    #[arg(long)]
    max_vocab: Option<usize>,
    /// Leading fraction of the documents to use
    #[arg(long, default_value_t = 1.0)]
    fraction: f64,
    /// Synthetic corpus kind, used when no --corpus is given
    #[arg(long, value_enum)]
    synthetic: Option<Kind>,
    /// Synthetic vocabulary size, reserved ids included
    #[arg(long, default_value_t = 64)]
    vocab_size: usize,
    /// Number of synthetic samples
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    data_seed: u64,
    /// Bigram sampling temperature
    #[arg(long, default_value_t = 0.25)]
    temperature: f64,
    /// Template phrase pool size
    #[arg(long, default_value_t = 32)]
    pool_size: usize,
    /// Probability of repeating the previous template phrase
    #[arg(long, default_value_t = 0.3)]
    repeat_prob: f64,
}

impl CorpusArgs {
    fn kind(&self) -> SyntheticKind {
        match self.synthetic.unwrap_or(Kind::Template) {
            Kind::Uniform => SyntheticKind::UniformRandom,
            Kind::Markov => SyntheticKind::MarkovBigram {
                temperature: self.temperature,
            },
            Kind::Template => match SyntheticKind::template() {
                SyntheticKind::TemplateRepetition {
                    min_phrase, max_phrase, ..
                } => SyntheticKind::TemplateRepetition {
                    pool_size: self.pool_size,
                    repeat_prob: self.repeat_prob,
                    min_phrase,
                    max_phrase,
                },
                other => other,
            },
        }
    }

    fn source(&self) -> CorpusSource {
        if self.corpus.is_empty() {
            CorpusSource::Synthetic(SyntheticSpec {
                kind: self.kind(),
                vocab_size: self.vocab_size,
                length: 0,
                count: self.samples,
                seed: self.data_seed,
            })
        } else {
            CorpusSource::Text {
                paths: self.corpus.clone(),
                layout: if self.per_line { DocLayout::PerLine } else { DocLayout::PerFile },
                mode: if self.word { TokenMode::Word } else { TokenMode::Char },
                max_vocab: self.max_vocab,
                fraction: self.fraction,
            }
        }
    }
}

#[derive(Args)]
struct ModelArgs {
    #[arg(long, default_value_t = 64)]
    d_model: usize,
    #[arg(long, default_value_t = 64)]
    d_attn: usize,
    /// Disable learned positional embeddings
    #[arg(long)]
    no_positional: bool,
    /// Attention blocks in the encoder and in the decoder
    #[arg(long, default_value_t = 1)]
    depth: usize,
}

#[derive(Args)]
struct OptimArgs {
    #[arg(long, default_value_t = 20)]
    epochs: usize,
    #[arg(long, default_value_t = 16)]
    batch_size: usize,
    #[arg(long, default_value_t = 0.01)]
    lr_start: f64,
    #[arg(long, default_value_t = 0.001)]
    lr_end: f64,
    /// Epochs over which the rate falls from --lr-start to --lr-end
    #[arg(long, default_value_t = 5)]
    warmdown: usize,
    /// Train at --lr-end throughout
    #[arg(long)]
    static_lr: bool,
    #[arg(long, default_value_t = 5)]
    patience: usize,
    #[arg(long, default_value_t = 0.0)]
    dropout: f64,
    /// Fraction of samples used for training
    #[arg(long, default_value_t = 0.8)]
    split_ratio: f64,
    #[arg(long, default_value_t = 0)]
    split_seed: u64,
}

impl OptimArgs {
    fn config(&self) -> TrainConfig {
        TrainConfig {
            lr_start: self.lr_start,
            lr_end: self.lr_end,
            warmdown_epochs: self.warmdown,
            static_lr: self.static_lr,
            max_epochs: self.epochs,
            patience: self.patience.min(self.epochs),
            batch_size: self.batch_size,
            dropout: self.dropout,
            ..TrainConfig::default()
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 32)]
    input_len: usize,
    #[arg(long, default_value_t = 16)]
    latent_len: usize,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long, default_value = "runs/train")]
    out: PathBuf,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Preset {
    /// Run every cell with both the warm-down and the static schedule
    ElevatedLr,
}

#[derive(Args)]
struct SweepArgs {
    #[command(flatten)]
    corpus: CorpusArgs,
    #[command(flatten)]
    model: ModelArgs,
    #[command(flatten)]
    optim: OptimArgs,
    #[arg(long, default_value_t = 32)]
    input_len: usize,
    /// Latent length (repeatable); defaults to 32, 24, 16, 8 and 4
    #[arg(long)]
    latent_len: Vec<usize>,
    /// Comma-separated training seeds
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    seeds: Vec<u64>,
    /// Use seeds 1 to K instead of --seeds
    #[arg(long)]
    num_seeds: Option<u64>,
    #[arg(long, value_enum)]
    preset: Option<Preset>,
    /// Cells trained at once; overrides REDATTN_THREADS
    #[arg(long)]
    threads: Option<usize>,
    /// Also save the best checkpoint of every cell
    #[arg(long)]
    save_models: bool,
    /// Skip the SVG charts
    #[arg(long)]
    no_charts: bool,
    #[arg(long, default_value = "runs/sweep")]
    out: PathBuf,
}

#[derive(Args)]
struct GenArgs {
    #[arg(long, value_enum, default_value = "template")]
    synthetic: Kind,
    #[arg(long, default_value_t = 64)]
    vocab_size: usize,
    #[arg(long, default_value_t = 32)]
    input_len: usize,
    #[arg(long, default_value_t = 5000)]
    samples: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.25)]
    temperature: f64,
    #[arg(long, default_value_t = 32)]
    pool_size: usize,
    #[arg(long, default_value_t = 0.3)]
    repeat_prob: f64,
    /// Output CSV, one sample per row
    #[arg(long, default_value = "samples.csv")]
    out: PathBuf,
}

fn dims(m: &ModelArgs) -> ModelDims {
    ModelDims {
        d_model: m.d_model,
        d_attn: m.d_attn,
        use_positional: !m.no_positional,
        depth: m.depth,
    }
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))
}

fn train(args: TrainArgs) -> Result<()> {
    let spec = SweepSpec {
        corpus: args.corpus.source(),
        input_len: args.input_len,
        latent_lens: vec![args.latent_len],
        seeds: vec![args.seed],
        schedules: vec![if args.optim.static_lr { Schedule::Static } else { Schedule::WarmDown }],
        train: args.optim.config(),
        dims: dims(&args.model),
        split_ratio: args.optim.split_ratio,
        split_seed: args.optim.split_seed,
        threads: Some(1),
    };
    let out = run_sweep(&spec)?;
    let (row, model) = (&out.result.rows[0], &out.models[0]);
    create_dir(&args.out)?;
    let trail = args.out.join("trail.csv");
    write_trail_csv(fs::File::create(&trail)?, &row.trail)?;
    let ckpt = args.out.join("model.ckpt");
    model.save(&ckpt)?;
    for r in &row.trail {
        println!(
            "epoch {:>3}  lr {:<8.6}  loss {:.4}  val acc {:.4}  {:.1}s",
            r.epoch, r.lr, r.train_loss, r.val_accuracy, r.seconds
        );
    }
    println!(
        "best val acc {:.4} at epoch {} ({} parameters); wrote {} and {}",
        row.best_accuracy,
        row.best_epoch,
        model.param_count(),
        trail.display(),
        ckpt.display()
    );
    Ok(())
}

fn report_into(dir: &Path, result: &SweepResult, charts: bool) -> Result<()> {
    let summary = summarize(result)?;
    write_summary_csv(&dir.join("summary.csv"), &summary)?;
    if charts && result.rows.iter().any(|r| !r.trail.is_empty()) {
        for kind in ChartKind::ALL {
            fs::write(dir.join(kind.file_name()), render_charts(result, kind)?)?;
        }
    }
    print!("{}", side_by_side(&summary));
    Ok(())
}

fn sweep(args: SweepArgs) -> Result<()> {
    let mut spec = SweepSpec {
        corpus: args.corpus.source(),
        input_len: args.input_len,
        latent_lens: args.latent_len.clone(),
        seeds: match args.num_seeds {
            Some(0) => bail!("--num-seeds must be at least 1"),
            Some(k) => (1..=k).collect(),
            None => args.seeds.clone(),
        },
        schedules: vec![if args.optim.static_lr { Schedule::Static } else { Schedule::WarmDown }],
        train: args.optim.config(),
        dims: dims(&args.model),
        split_ratio: args.optim.split_ratio,
        split_seed: args.optim.split_seed,
        threads: args.threads,
    };
    if spec.latent_lens.is_empty() {
        spec.latent_lens = SweepSpec::desk_default()
            .latent_lens
            .into_iter()
            .filter(|&l| l <= args.input_len)
            .collect();
    }
    if args.preset == Some(Preset::ElevatedLr) {
        spec = spec.elevated_lr();
    }
    let out = run_sweep(&spec)?;
    create_dir(&args.out)?;
    write_results_csv(&args.out.join("results.csv"), &out.result)?;
    write_trails_csv(&args.out.join("trails.csv"), &out.result)?;
    if args.save_models {
        let dir = args.out.join("checkpoints");
        create_dir(&dir)?;
        for (row, model) in out.result.rows.iter().zip(&out.models) {
            let name = format!("n{}_l{}_s{}_{}.ckpt", row.input_len, row.latent_len, row.seed, row.schedule);
            model.save(dir.join(name))?;
        }
    }
    report_into(&args.out, &out.result, !args.no_charts)
}

fn report(out: &Path) -> Result<()> {
    let results = out.join("results.csv");
    let trails = out.join("trails.csv");
    let result = read_result(&results, trails.exists().then_some(trails.as_path()))
        .with_context(|| format!("reading {}", results.display()))?;
    report_into(out, &result, true)
}

fn gen_data(args: GenArgs) -> Result<()> {
    let corpus = CorpusArgs {
        corpus: Vec::new(),
        per_line: false,
        word: false,
        max_vocab: None,
        fraction: 1.0,
        synthetic: Some(args.synthetic),
        vocab_size: args.vocab_size,
        samples: args.samples,
        data_seed: args.seed,
        temperature: args.temperature,
        pool_size: args.pool_size,
        repeat_prob: args.repeat_prob,
    };
    let samples = gen_synthetic(&SyntheticSpec {
        kind: corpus.kind(),
        vocab_size: args.vocab_size,
        length: args.input_len,
        count: args.samples,
        seed: args.seed,
    })?;
    save_samples_csv(&args.out, &samples)?;
    println!("wrote {} samples to {}", samples.len(), args.out.display());
    Ok(())
}

fn inspect(path: &Path) -> Result<()> {
    let header = read_header(path)?;
    let c = &header.config;
    println!("input_len       {}", c.input_len);
    println!("latent_len      {}", c.latent_len);
    println!("d_model         {}", c.d_model);
    println!("d_attn          {}", c.d_attn);
    println!("vocab_size      {}", c.vocab_size);
    println!("use_positional  {}", c.use_positional);
    println!("depth           {} / {}", c.encoder_depth, c.decoder_depth);
    println!("seed            {}", header.seed);
    let mut total = 0;
    for (name, shape) in &header.params {
        let n: usize = shape.iter().product();
        total += n;
        println!("  {name:<18} {shape:?}");
    }
    let model = Autoencoder::load(path)?;
    println!("{total} parameters, {} loaded", model.param_count());
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train(a) => train(a),
        Command::Sweep(a) => sweep(a),
        Command::Report { out } => report(&out),
        Command::GenData(a) => gen_data(a),
        Command::InspectCkpt { path } => inspect(&path),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("redattn: {e:#}");
            ExitCode::from(2)
        }
    }
}
