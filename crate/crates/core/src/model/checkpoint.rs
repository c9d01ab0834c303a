//! Checkpoint files.
//!
//! Layout:
//!
//! ```text
//! redattn-ckpt-v1\n
//! input_len=<N>\n
//! latent_len=<L>\n
//! d_model=<d>\n
//! d_attn=<d>\n
//! vocab_size=<V>\n
//! use_positional=<true|false>\n
//! encoder_depth=<n>\n
//! decoder_depth=<n>\n
//! seed=<u64>\n
//! param=<name> <d0>x<d1>\n        one line per tensor, declaration order
//! end\n
//! <blobs>
//! ```
//!
//! The blobs are every parameter's values as little-endian `f32`, in the
//! same order as the `param=` lines, with nothing after the last one.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use super::{Autoencoder, ModelConfig};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const CHECKPOINT_VERSION: &str = "redattn-ckpt-v1";

/// The text block at the start of a checkpoint.
#[derive(Debug, Clone, PartialEq)]
pub struct CheckpointHeader {
    pub config: ModelConfig,
    pub seed: u64,
    pub params: Vec<(String, Vec<usize>)>,
}

fn format_err(msg: impl Into<String>) -> Error {
    Error::Format(msg.into())
}

impl Autoencoder {
    pub fn write_checkpoint<W: Write>(&self, mut w: W) -> Result<()> {
        let c = &self.config;
        writeln!(w, "{CHECKPOINT_VERSION}")?;
        writeln!(w, "input_len={}", c.input_len)?;
        writeln!(w, "latent_len={}", c.latent_len)?;
        writeln!(w, "d_model={}", c.d_model)?;
        writeln!(w, "d_attn={}", c.d_attn)?;
        writeln!(w, "vocab_size={}", c.vocab_size)?;
        writeln!(w, "use_positional={}", c.use_positional)?;
        writeln!(w, "encoder_depth={}", c.encoder_depth)?;
        writeln!(w, "decoder_depth={}", c.decoder_depth)?;
        writeln!(w, "seed={}", self.seed)?;
        let params = self.named_params();
        for (name, t) in &params {
            let dims: Vec<String> = t.shape().iter().map(usize::to_string).collect();
            writeln!(w, "param={name} {}", dims.join("x"))?;
        }
        writeln!(w, "end")?;
        for (_, t) in &params {
            for &x in t.data() {
                w.write_all(&(x as f32).to_le_bytes())?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        self.write_checkpoint(BufWriter::new(File::create(path)?))
    }

    /// Parses a checkpoint, checking every parameter name and shape against
    /// the ones the header's config implies.
    pub fn read_checkpoint<R: BufRead>(mut r: R) -> Result<Self> {
        let header = parse_header(&mut r)?;
        let mut model = Autoencoder::init(header.config.clone(), header.seed)?;
        let expected: Vec<(String, Vec<usize>)> = model
            .named_params()
            .into_iter()
            .map(|(n, t)| (n, t.shape().to_vec()))
            .collect();
        if expected != header.params {
            return Err(format_err("parameter list does not match the configuration"));
        }
        for param in model.params_mut() {
            let mut bytes = vec![0u8; param.len() * 4];
            r.read_exact(&mut bytes)
                .map_err(|_| format_err("truncated parameter data"))?;
            for (x, chunk) in param.data_mut().iter_mut().zip(bytes.chunks_exact(4)) {
                *x = f32::from_le_bytes(chunk.try_into().expect("4 bytes")) as f64;
            }
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(format_err("trailing bytes after parameter data"));
        }
        Ok(model)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::read_checkpoint(BufReader::new(File::open(path)?))
    }
}

/// Reads only the text header of a checkpoint file.
pub fn read_header(path: impl AsRef<Path>) -> Result<CheckpointHeader> {
    parse_header(&mut BufReader::new(File::open(path)?))
}

fn parse_header<R: BufRead>(r: &mut R) -> Result<CheckpointHeader> {
    let mut lines = Vec::new();
    loop {
        let mut line = String::new();
        if r.read_line(&mut line)? == 0 {
            return Err(format_err("missing end of header"));
        }
        let line = line.trim_end_matches('\n').to_string();
        if line == "end" {
            break;
        }
        lines.push(line);
    }
    let mut it = lines.into_iter();
    if it.next().as_deref() != Some(CHECKPOINT_VERSION) {
        return Err(format_err(format!("expected version line {CHECKPOINT_VERSION}")));
    }
    let mut fields = std::collections::BTreeMap::new();
    let mut params = Vec::new();
    for line in it {
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format_err(format!("malformed header line {line:?}")))?;
        if key == "param" {
            let (name, dims) = value
                .split_once(' ')
                .ok_or_else(|| format_err(format!("malformed param line {line:?}")))?;
            let shape = dims
                .split('x')
                .map(|d| d.parse::<usize>())
                .collect::<std::result::Result<Vec<_>, _>>()
                .map_err(|_| format_err(format!("bad shape in {line:?}")))?;
            params.push((name.to_string(), shape));
        } else {
            fields.insert(key.to_string(), value.to_string());
        }
    }
    let num = |key: &str| -> Result<usize> {
        fields
            .get(key)
            .ok_or_else(|| format_err(format!("missing {key}")))?
            .parse()
            .map_err(|_| format_err(format!("bad value for {key}")))
    };
    let use_positional = match fields.get("use_positional").map(String::as_str) {
        Some("true") => true,
        Some("false") => false,
        _ => return Err(format_err("bad or missing use_positional")),
    };
    let config = ModelConfig {
        input_len: num("input_len")?,
        latent_len: num("latent_len")?,
        d_model: num("d_model")?,
        d_attn: num("d_attn")?,
        vocab_size: num("vocab_size")?,
        use_positional,
        encoder_depth: num("encoder_depth")?,
        decoder_depth: num("decoder_depth")?,
    };
    let seed = fields
        .get("seed")
        .ok_or_else(|| format_err("missing seed"))?
        .parse()
        .map_err(|_| format_err("bad value for seed"))?;
    Ok(CheckpointHeader {
        config,
        seed,
        params,
    })
}

/// Values rounded to `f32`, the precision checkpoints store.
pub fn to_f32(t: &Tensor) -> Vec<f32> {
    t.data().iter().map(|&x| x as f32).collect()
}
