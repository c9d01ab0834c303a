//! Vocabularies, fixed-length samples, train/test splits and synthetic
//! corpora.

use std::collections::HashMap;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
/// Number of reserved ids at the start of every vocabulary.
pub const RESERVED: usize = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TokenMode {
    Char,
    Word,
}

fn split_tokens(text: &str, mode: TokenMode) -> Vec<String> {
    match mode {
        TokenMode::Char => text.chars().map(String::from).collect(),
        TokenMode::Word => text.split_whitespace().map(String::from).collect(),
    }
}

/// Token/id bijection with `PAD = 0` and `UNK = 1` reserved.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    mode: TokenMode,
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Keeps the `max_size - 2` most frequent tokens (ties broken by token
    /// order); everything else maps to `UNK`.
    pub fn build<S: AsRef<str>>(texts: &[S], mode: TokenMode, max_size: Option<usize>) -> Result<Self> {
        if max_size.is_some_and(|m| m < RESERVED) {
            return Err(Error::usage("vocabulary max size must be at least 2"));
        }
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for tok in split_tokens(text.as_ref(), mode) {
                *counts.entry(tok).or_default() += 1;
            }
        }
        if counts.is_empty() {
            return Err(Error::usage("cannot build a vocabulary from an empty corpus"));
        }
        let mut ranked: Vec<(String, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let keep = max_size.map_or(ranked.len(), |m| (m - RESERVED).min(ranked.len()));

        let mut tokens = vec!["<pad>".to_string(), "<unk>".to_string()];
        tokens.extend(ranked.into_iter().take(keep).map(|(t, _)| t));
        let index = tokens
            .iter()
            .enumerate()
            .skip(RESERVED)
            .map(|(i, t)| (t.clone(), i))
            .collect();
        Ok(Self { mode, tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn mode(&self) -> TokenMode {
        self.mode
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, text: &str) -> Vec<usize> {
        split_tokens(text, self.mode).iter().map(|t| self.id(t)).collect()
    }

    pub fn decode(&self, ids: &[usize]) -> String {
        let toks: Vec<&str> = ids.iter().map(|&i| self.token(i).unwrap_or("<unk>")).collect();
        match self.mode {
            TokenMode::Char => toks.concat(),
            TokenMode::Word => toks.join(" "),
        }
    }
}

/// Exactly `N` token ids taken from one document.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub ids: Vec<usize>,
    pub source: String,
}

/// First `n` tokens of a document, or `None` when it is shorter than `n`.
/// Documents are never padded.
pub fn extract_sample(doc_tokens: &[usize], n: usize, source: &str) -> Option<Sample> {
    (n > 0 && doc_tokens.len() >= n).then(|| Sample {
        ids: doc_tokens[..n].to_vec(),
        source: source.to_string(),
    })
}

/// Seeded shuffle followed by a cut at `round(ratio * len)`; both sides are
/// kept non-empty.
pub fn split_train_test<T>(mut samples: Vec<T>, ratio: f64, seed: u64) -> Result<(Vec<T>, Vec<T>)> {
    if !(ratio > 0.0 && ratio < 1.0) {
        return Err(Error::usage(format!("split ratio {ratio} outside (0, 1)")));
    }
    if samples.len() < 2 {
        return Err(Error::usage(format!(
            "need at least 2 samples to split, got {}",
            samples.len()
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    samples.shuffle(&mut rng);
    let cut = ((samples.len() as f64 * ratio).round() as usize).clamp(1, samples.len() - 1);
    let test = samples.split_off(cut);
    Ok((samples, test))
}

#[derive(Debug, Clone, PartialEq)]
pub enum SyntheticKind {
    /// Independent uniform tokens.
    UniformRandom,
    /// First-order chain over a random transition table; `temperature == 0`
    /// always takes the most likely successor.
    MarkovBigram { temperature: f64 },
    /// Concatenated phrases from a fixed pool; with probability
    /// `repeat_prob` the previous phrase is repeated.
    TemplateRepetition {
        pool_size: usize,
        repeat_prob: f64,
        min_phrase: usize,
        max_phrase: usize,
    },
}

impl SyntheticKind {
    pub fn name(&self) -> &'static str {
        match self {
            SyntheticKind::UniformRandom => "uniform",
            SyntheticKind::MarkovBigram { .. } => "markov",
            SyntheticKind::TemplateRepetition { .. } => "template",
        }
    }

    /// Kind with default knobs from its command-line name.
    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "uniform" | "uniform-random" => Ok(SyntheticKind::UniformRandom),
            "markov" | "markov-bigram" => Ok(SyntheticKind::MarkovBigram { temperature: 0.25 }),
            "template" | "template-repetition" => Ok(SyntheticKind::template()),
            other => Err(Error::usage(format!("unknown synthetic corpus kind {other:?}"))),
        }
    }

    /// Pool of 32 phrases of 3 to 6 tokens, repeat probability 0.3.
    pub fn template() -> Self {
        SyntheticKind::TemplateRepetition {
            pool_size: 32,
            repeat_prob: 0.3,
            min_phrase: 3,
            max_phrase: 6,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub kind: SyntheticKind,
    /// Includes the two reserved ids; tokens are drawn from `2..vocab_size`.
    pub vocab_size: usize,
    pub length: usize,
    pub count: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.count == 0 || self.length == 0 {
            return Err(Error::usage("synthetic corpus needs positive count and length"));
        }
        if self.vocab_size <= RESERVED {
            return Err(Error::usage("synthetic vocabulary must exceed the 2 reserved ids"));
        }
        match self.kind {
            SyntheticKind::UniformRandom => {}
            SyntheticKind::MarkovBigram { temperature } => {
                if !(temperature >= 0.0 && temperature.is_finite()) {
                    return Err(Error::usage("bigram temperature must be finite and >= 0"));
                }
            }
            SyntheticKind::TemplateRepetition {
                pool_size,
                repeat_prob,
                min_phrase,
                max_phrase,
            } => {
                if pool_size == 0 || min_phrase == 0 || min_phrase > max_phrase {
                    return Err(Error::usage("template pool and phrase lengths must be positive"));
                }
                if !(0.0..=1.0).contains(&repeat_prob) {
                    return Err(Error::usage("repeat probability outside [0, 1]"));
                }
            }
        }
        Ok(())
    }
}

/// Deterministic synthetic samples for `spec`.
pub fn gen_synthetic(spec: &SyntheticSpec) -> Result<Vec<Sample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let symbols = spec.vocab_size - RESERVED;
    let source = |i: usize| format!("synthetic-{}-{i}", spec.kind.name());
    let samples = match spec.kind {
        SyntheticKind::UniformRandom => (0..spec.count)
            .map(|i| Sample {
                ids: (0..spec.length).map(|_| RESERVED + rng.gen_range(0..symbols)).collect(),
                source: source(i),
            })
            .collect(),
        SyntheticKind::MarkovBigram { temperature } => {
            let table: Vec<Vec<f64>> = (0..symbols)
                .map(|_| (0..symbols).map(|_| rng.gen_range(-1.0..1.0)).collect())
                .collect();
            (0..spec.count)
                .map(|i| {
                    let mut cur = rng.gen_range(0..symbols);
                    let mut ids = vec![RESERVED + cur];
                    while ids.len() < spec.length {
                        cur = next_bigram(&table[cur], temperature, &mut rng);
                        ids.push(RESERVED + cur);
                    }
                    Sample { ids, source: source(i) }
                })
                .collect()
        }
        SyntheticKind::TemplateRepetition {
            pool_size,
            repeat_prob,
            min_phrase,
            max_phrase,
        } => {
            let pool: Vec<Vec<usize>> = (0..pool_size)
                .map(|_| {
                    let len = rng.gen_range(min_phrase..=max_phrase);
                    (0..len).map(|_| RESERVED + rng.gen_range(0..symbols)).collect()
                })
                .collect();
            (0..spec.count)
                .map(|i| {
                    let mut ids = Vec::with_capacity(spec.length + max_phrase);
                    let mut prev: Option<usize> = None;
                    while ids.len() < spec.length {
                        let pick = match prev {
                            Some(p) if rng.gen::<f64>() < repeat_prob => p,
                            _ => rng.gen_range(0..pool_size),
                        };
                        ids.extend_from_slice(&pool[pick]);
                        prev = Some(pick);
                    }
                    ids.truncate(spec.length);
                    Sample { ids, source: source(i) }
                })
                .collect()
        }
    };
    Ok(samples)
}

fn next_bigram<R: Rng>(logits: &[f64], temperature: f64, rng: &mut R) -> usize {
    let (best, max) = logits
        .iter()
        .enumerate()
        .fold((0, f64::NEG_INFINITY), |acc, (i, &x)| if x > acc.1 { (i, x) } else { acc });
    if temperature == 0.0 {
        return best;
    }
    let weights: Vec<f64> = logits.iter().map(|x| ((x - max) / temperature).exp()).collect();
    let total: f64 = weights.iter().sum();
    let mut u = rng.gen::<f64>() * total;
    for (i, w) in weights.iter().enumerate() {
        if u < *w {
            return i;
        }
        u -= w;
    }
    best
}

/// How documents are laid out in input files.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DocLayout {
    /// Each file is one document.
    PerFile,
    /// Each non-empty line is one document.
    PerLine,
}

/// Reads UTF-8 documents as `(source, text)` pairs in file order.
pub fn load_documents(paths: &[PathBuf], layout: DocLayout) -> Result<Vec<(String, String)>> {
    let mut docs = Vec::new();
    for path in paths {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let name = path.display().to_string();
        match layout {
            DocLayout::PerFile => docs.push((name, text)),
            DocLayout::PerLine => docs.extend(
                text.lines()
                    .enumerate()
                    .filter(|(_, l)| !l.trim().is_empty())
                    .map(|(i, l)| (format!("{name}:{}", i + 1), l.to_string())),
            ),
        }
    }
    Ok(docs)
}

/// Tokenised fixed-length samples plus the vocabulary that produced them.
#[derive(Debug, Clone)]
pub struct Corpus {
    pub vocab: Option<Vocabulary>,
    pub vocab_size: usize,
    pub samples: Vec<Sample>,
    /// Documents dropped for being shorter than `N`.
    pub skipped: usize,
}

#[derive(Debug, Clone)]
pub struct TextCorpusOptions {
    pub mode: TokenMode,
    pub max_vocab: Option<usize>,
    pub input_len: usize,
    /// Leading fraction of the documents to keep, in `(0, 1]`.
    pub fraction: f64,
}

/// Builds a corpus from documents: keep the leading fraction, build the
/// vocabulary over it, then take one first-`N` sample per document.
pub fn text_corpus(docs: &[(String, String)], opts: &TextCorpusOptions) -> Result<Corpus> {
    if !(opts.fraction > 0.0 && opts.fraction <= 1.0) {
        return Err(Error::usage(format!("corpus fraction {} outside (0, 1]", opts.fraction)));
    }
    let keep = ((docs.len() as f64 * opts.fraction).ceil() as usize).min(docs.len());
    let docs = &docs[..keep];
    let texts: Vec<&str> = docs.iter().map(|(_, t)| t.as_str()).collect();
    let vocab = Vocabulary::build(&texts, opts.mode, opts.max_vocab)?;
    let mut samples = Vec::new();
    let mut skipped = 0;
    for (source, text) in docs {
        match extract_sample(&vocab.encode(text), opts.input_len, source) {
            Some(s) => samples.push(s),
            None => skipped += 1,
        }
    }
    Ok(Corpus {
        vocab_size: vocab.len(),
        vocab: Some(vocab),
        samples,
        skipped,
    })
}

/// One sample per row, ids separated by commas.
pub fn write_samples_csv<W: Write>(mut w: W, samples: &[Sample]) -> Result<()> {
    for s in samples {
        let row: Vec<String> = s.ids.iter().map(usize::to_string).collect();
        writeln!(w, "{}", row.join(","))?;
    }
    w.flush()?;
    Ok(())
}

pub fn save_samples_csv(path: &Path, samples: &[Sample]) -> Result<()> {
    write_samples_csv(std::io::BufWriter::new(std::fs::File::create(path)?), samples)
}
