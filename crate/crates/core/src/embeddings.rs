//! Vocabulary construction, text vector files and embedding tables.
//!
//! Vector files use the common text layout: a header line `count dim`, then
//! one `token v1 ... vdim` line per vector, space separated, UTF-8, LF line
//! endings.

use std::collections::HashMap;
use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{stream_rng, Stream};

pub const PAD: usize = 0;
pub const UNK: usize = 1;
pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";

/// Standard deviation of rows that a vector file does not provide.
pub const MISSING_ROW_STD: f64 = 0.1;

/// Token/index map. Indices 0 and 1 are reserved for padding and unknown
/// tokens; corpus tokens occupy `2..len()`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
}

impl Vocabulary {
    /// Builds a vocabulary from corpus tokens already in index order.
    pub fn from_corpus_tokens(corpus: impl IntoIterator<Item = String>) -> Result<Self> {
        let mut tokens = vec![PAD_TOKEN.to_string(), UNK_TOKEN.to_string()];
        let mut index = HashMap::new();
        for token in corpus {
            if token.is_empty() || token.chars().any(char::is_whitespace) {
                return Err(Error::invalid(format!("invalid vocabulary token {token:?}")));
            }
            if index.insert(token.clone(), tokens.len()).is_some() {
                return Err(Error::invalid(format!("duplicate vocabulary token {token:?}")));
            }
            tokens.push(token);
        }
        Ok(Self { tokens, index })
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Index of a corpus token, if it is in the vocabulary.
    pub fn lookup(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    /// Index of `token`, falling back to [`UNK`].
    pub fn encode(&self, token: &str) -> usize {
        self.lookup(token).unwrap_or(UNK)
    }

    pub fn decode(&self, index: usize) -> Option<&str> {
        self.tokens.get(index).map(String::as_str)
    }

    pub fn encode_text(&self, text: &str) -> Vec<usize> {
        text.split_whitespace().map(|t| self.encode(t)).collect()
    }

    /// Corpus tokens in index order, without the reserved entries.
    pub fn corpus_tokens(&self) -> &[String] {
        &self.tokens[2..]
    }

    /// One token per line, reserved entries first.
    pub fn write<W: Write>(&self, mut out: W) -> Result<()> {
        for t in &self.tokens {
            writeln!(out, "{t}")?;
        }
        Ok(())
    }

    pub fn read<R: Read>(input: R) -> Result<Self> {
        let lines: Vec<String> = BufReader::new(input).lines().collect::<std::io::Result<_>>()?;
        if lines.len() < 2 || lines[0] != PAD_TOKEN || lines[1] != UNK_TOKEN {
            return Err(Error::parse(1, "vocabulary file must start with the reserved tokens"));
        }
        Self::from_corpus_tokens(lines.into_iter().skip(2))
    }
}

/// Vocabulary of a training corpus: every whitespace-separated token, ordered
/// by descending frequency and then lexicographically. No frequency cutoff.
pub fn build_vocab<I, S>(lines: I) -> Result<Vocabulary>
where
    I: IntoIterator<Item = S>,
    S: AsRef<str>,
{
    let mut counts: HashMap<String, usize> = HashMap::new();
    for line in lines {
        for token in line.as_ref().split_whitespace() {
            *counts.entry(token.to_string()).or_default() += 1;
        }
    }
    if counts.is_empty() {
        return Err(Error::invalid("cannot build a vocabulary from an empty corpus"));
    }
    let mut ordered: Vec<(String, usize)> = counts.into_iter().collect();
    ordered.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    Vocabulary::from_corpus_tokens(ordered.into_iter().map(|(t, _)| t))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum EmbedMode {
    #[serde(rename = "random")]
    Random,
    #[serde(rename = "static")]
    Static,
    #[serde(rename = "finetuned")]
    FineTuned,
}

impl EmbedMode {
    pub fn trainable(self) -> bool {
        !matches!(self, EmbedMode::Static)
    }

    pub fn needs_vectors(self) -> bool {
        !matches!(self, EmbedMode::Random)
    }
}

impl fmt::Display for EmbedMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            EmbedMode::Random => "random",
            EmbedMode::Static => "static",
            EmbedMode::FineTuned => "finetuned",
        })
    }
}

impl FromStr for EmbedMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "random" => Ok(EmbedMode::Random),
            "static" => Ok(EmbedMode::Static),
            "finetuned" | "fine-tuned" => Ok(EmbedMode::FineTuned),
            other => Err(Error::invalid(format!(
                "unknown embedding mode {other:?} (expected random, static or finetuned)"
            ))),
        }
    }
}

/// `[V x d]` embedding matrix. The padding row is always zero.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingTable {
    pub matrix: Tensor,
    pub mode: EmbedMode,
}

impl EmbeddingTable {
    pub fn vocab_size(&self) -> usize {
        self.matrix.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.matrix.shape()[1]
    }

    pub fn row(&self, index: usize) -> &[f64] {
        let d = self.dim();
        &self.matrix.data()[index * d..(index + 1) * d]
    }
}

/// Rows drawn from `U(-0.5/d, 0.5/d)`, padding row zero.
pub fn init_random(vocab: &Vocabulary, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    random_table(vocab.len(), dim, seed)
}

/// [`init_random`] for a table of `vocab_size` rows without a vocabulary.
pub fn random_table(vocab_size: usize, dim: usize, seed: u64) -> Result<EmbeddingTable> {
    if dim == 0 || vocab_size == 0 {
        return Err(Error::invalid("embedding table dimensions must be positive"));
    }
    let mut rng = stream_rng(seed, Stream::Embedding);
    let bound = 0.5 / dim as f64;
    let mut data: Vec<f64> = (0..vocab_size * dim).map(|_| rng.random_range(-bound..bound)).collect();
    data[PAD * dim..(PAD + 1) * dim].iter_mut().for_each(|v| *v = 0.0);
    Ok(EmbeddingTable {
        matrix: Tensor::new(vec![vocab_size, dim], data)?,
        mode: EmbedMode::Random,
    })
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LoadReport {
    /// Vocabulary rows copied from the file.
    pub found: usize,
    /// Vocabulary rows (including UNK when absent from the file) filled with noise.
    pub missing: usize,
    /// File tokens seen more than once; the first occurrence is kept.
    pub duplicates: Vec<String>,
}

/// Reads a text vector file into a table for `vocab`. Rows for tokens the
/// file lacks, and the UNK row unless the file carries `<unk>`, are drawn from
/// `N(0, 0.1^2)`; the padding row is zero.
pub fn load_pretrained(
    path: impl AsRef<Path>,
    vocab: &Vocabulary,
    dim: usize,
    mode: EmbedMode,
    seed: u64,
) -> Result<(EmbeddingTable, LoadReport)> {
    let file = std::fs::File::open(path.as_ref())?;
    read_pretrained(file, vocab, dim, mode, seed)
}

pub fn read_pretrained<R: Read>(
    input: R,
    vocab: &Vocabulary,
    dim: usize,
    mode: EmbedMode,
    seed: u64,
) -> Result<(EmbeddingTable, LoadReport)> {
    let mut lines = BufReader::new(input).lines();
    let header = lines.next().ok_or_else(|| Error::parse(1, "missing header line"))??;
    let fields: Vec<&str> = header.split_whitespace().collect();
    let [count, file_dim] = fields.as_slice() else {
        return Err(Error::parse(1, format!("header must be \"count dim\", got {header:?}")));
    };
    let count: usize = count.parse().map_err(|_| Error::parse(1, format!("bad vector count {count:?}")))?;
    let file_dim: usize = file_dim.parse().map_err(|_| Error::parse(1, format!("bad dimension {file_dim:?}")))?;
    if file_dim != dim {
        return Err(Error::invalid(format!(
            "vector file has dimension {file_dim}, configuration expects {dim}"
        )));
    }

    let v = vocab.len();
    let mut data = vec![0.0; v * dim];
    let mut filled = vec![false; v];
    let mut seen = std::collections::HashSet::new();
    let mut report = LoadReport::default();
    let mut rows = 0;
    for (i, line) in lines.enumerate() {
        let line_no = i + 2;
        let line = line?;
        let line = line.strip_suffix('\r').unwrap_or(&line);
        if line.trim().is_empty() {
            continue;
        }
        rows += 1;
        let mut parts = line.split(' ').filter(|s| !s.is_empty());
        let token = parts.next().expect("non-empty line has a token");
        let values: Vec<f64> = parts
            .map(|p| p.parse::<f64>().map_err(|_| Error::parse(line_no, format!("bad value {p:?}"))))
            .collect::<Result<_>>()?;
        if values.len() != dim {
            return Err(Error::parse(line_no, format!("expected {dim} values, found {}", values.len())));
        }
        if values.iter().any(|x| !x.is_finite()) {
            return Err(Error::parse(line_no, "non-finite vector value"));
        }
        if !seen.insert(token.to_string()) {
            log::warn!("vector file repeats token {token:?} at line {line_no}; keeping the first occurrence");
            report.duplicates.push(token.to_string());
            continue;
        }
        let index = match vocab.lookup(token) {
            Some(i) => i,
            None if token == UNK_TOKEN => UNK,
            None => continue,
        };
        data[index * dim..(index + 1) * dim].copy_from_slice(&values);
        filled[index] = true;
        report.found += 1;
    }
    if rows != count {
        return Err(Error::parse(1, format!("header announces {count} vectors, file has {rows}")));
    }

    let mut rng = stream_rng(seed, Stream::Embedding);
    let normal = Normal::new(0.0, MISSING_ROW_STD).expect("valid normal");
    for index in 0..v {
        if index == PAD {
            data[..dim].iter_mut().for_each(|x| *x = 0.0);
            continue;
        }
        if !filled[index] {
            report.missing += 1;
            data[index * dim..(index + 1) * dim]
                .iter_mut()
                .for_each(|x| *x = normal.sample(&mut rng));
        }
    }
    let table = EmbeddingTable {
        matrix: Tensor::new(vec![v, dim], data)?,
        mode,
    };
    Ok((table, report))
}

/// Writes every non-padding row in the text vector format.
pub fn write_vectors<W: Write>(out: W, vocab: &Vocabulary, table: &EmbeddingTable) -> Result<()> {
    if table.vocab_size() != vocab.len() {
        return Err(Error::invalid(format!(
            "table has {} rows, vocabulary has {} tokens",
            table.vocab_size(),
            vocab.len()
        )));
    }
    let mut out = BufWriter::new(out);
    writeln!(out, "{} {}", vocab.len() - 1, table.dim())?;
    for index in 1..vocab.len() {
        write!(out, "{}", vocab.decode(index).expect("index in range"))?;
        for x in table.row(index) {
            write!(out, " {x}")?;
        }
        writeln!(out)?;
    }
    out.flush()?;
    Ok(())
}
