//! The four classifier variants and exact parameter accounting.
//!
//! Every variant embeds tokens, runs three stacked convolutions
//! (`d -> 64 -> 128 -> 256` channels, kernels 3/4/5), averages each channel
//! over positions, applies dropout and classifies:
//!
//! | variant          | feature stack        | head      |
//! |------------------|----------------------|-----------|
//! | `cnn`            | `Conv1d` + ReLU      | linear    |
//! | `cnn-kan`        | `Conv1d` + ReLU      | KAN layer |
//! | `kaconvtext-mlp` | `KaConv1d`           | linear    |
//! | `kaconvtext-kan` | `KaConv1d`           | KAN layer |

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Conv1dOptions, ParamId, ParamSet, Tape, Var};
use crate::embeddings::{random_table, EmbedMode, EmbeddingTable, PAD};
use crate::error::{Error, Result};
use crate::layers::{Conv1dLayer, KaConv1dLayer, KanLayer, Layer, MlpHead, SplineConfig};
use crate::rng::{stream_rng, Rng, Stream};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Variant {
    #[serde(rename = "cnn")]
    Cnn,
    #[serde(rename = "cnn-kan")]
    CnnKan,
    #[serde(rename = "kaconvtext-mlp")]
    KaConvTextMlp,
    #[serde(rename = "kaconvtext-kan")]
    KaConvTextKan,
}

impl Variant {
    pub const ALL: [Variant; 4] = [Variant::Cnn, Variant::CnnKan, Variant::KaConvTextMlp, Variant::KaConvTextKan];

    pub fn kaconv_trunk(self) -> bool {
        matches!(self, Variant::KaConvTextMlp | Variant::KaConvTextKan)
    }

    pub fn kan_head(self) -> bool {
        matches!(self, Variant::CnnKan | Variant::KaConvTextKan)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Cnn => "cnn",
            Variant::CnnKan => "cnn-kan",
            Variant::KaConvTextMlp => "kaconvtext-mlp",
            Variant::KaConvTextKan => "kaconvtext-kan",
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Variant::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| {
                Error::invalid(format!(
                    "unknown model {s:?} (expected cnn, cnn-kan, kaconvtext-mlp or kaconvtext-kan)"
                ))
            })
    }
}

/// Stride/padding/dilation/groups of every convolution in the stack.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct ConvSettings {
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
    pub groups: usize,
}

impl Default for ConvSettings {
    fn default() -> Self {
        let d = Conv1dOptions::default();
        Self {
            stride: d.stride,
            padding: d.padding,
            dilation: d.dilation,
            groups: d.groups,
        }
    }
}

impl From<ConvSettings> for Conv1dOptions {
    fn from(c: ConvSettings) -> Self {
        Conv1dOptions {
            stride: c.stride,
            padding: c.padding,
            dilation: c.dilation,
            groups: c.groups,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub variant: Variant,
    pub embed_dim: usize,
    pub n_classes: usize,
    pub channels: Vec<usize>,
    pub kernel_sizes: Vec<usize>,
    pub dropout_p: f64,
    pub spline: SplineConfig,
    pub conv: ConvSettings,
}

impl ModelSpec {
    pub fn new(variant: Variant, embed_dim: usize, n_classes: usize) -> Self {
        Self {
            variant,
            embed_dim,
            n_classes,
            channels: vec![64, 128, 256],
            kernel_sizes: vec![3, 4, 5],
            dropout_p: 0.3,
            spline: SplineConfig::default(),
            conv: ConvSettings::default(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.channels.len() != 3 || self.kernel_sizes.len() != 3 {
            return Err(Error::invalid(format!(
                "model needs exactly three channel counts and kernel sizes, got {:?} / {:?}",
                self.channels, self.kernel_sizes
            )));
        }
        if self.channels.iter().chain(&self.kernel_sizes).any(|&c| c == 0) {
            return Err(Error::invalid("channel counts and kernel sizes must be positive"));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::invalid(format!("dropout must lie in [0, 1), got {}", self.dropout_p)));
        }
        if self.embed_dim == 0 || self.n_classes == 0 {
            return Err(Error::invalid("embedding dimension and class count must be positive"));
        }
        self.spline.grid()?;
        Ok(())
    }

    /// Width of the pooled feature vector.
    pub fn feature_width(&self) -> usize {
        *self.channels.last().expect("validated spec has channels")
    }

    /// Shortest padded sequence: `sum(k_i - 1) + 3`, so the last feature map
    /// keeps three positions.
    pub fn min_seq_len(&self) -> usize {
        self.kernel_sizes.iter().map(|k| k - 1).sum::<usize>() + 3
    }

    /// Trainable parameter count from layer shapes alone, without building
    /// the model.
    pub fn planned_params(&self, vocab_size: usize, embed_mode: EmbedMode) -> ParamBreakdown {
        let mut rows = Vec::new();
        if embed_mode.trainable() {
            rows.push(("embedding".to_string(), vocab_size * self.embed_dim));
        }
        let nb = self.spline.num_basis();
        let groups = self.conv.groups;
        let mut c_in = self.embed_dim;
        for (i, (&c_out, &k)) in self.channels.iter().zip(&self.kernel_sizes).enumerate() {
            let n = if self.variant.kaconv_trunk() {
                KaConv1dLayer::expected_params(c_in / groups, c_out, k, nb)
            } else {
                Conv1dLayer::expected_params(c_in / groups, c_out, k)
            };
            rows.push((format!("features.{i}"), n));
            c_in = c_out;
        }
        let head = if self.variant.kan_head() {
            KanLayer::expected_params(c_in, self.n_classes, nb)
        } else {
            MlpHead::expected_params(c_in, self.n_classes)
        };
        rows.push(("head".to_string(), head));
        ParamBreakdown::from_components(rows)
    }
}

#[derive(Debug, Clone)]
pub enum FeatureLayer {
    Conv(Conv1dLayer),
    KaConv(KaConv1dLayer),
}

#[derive(Debug, Clone)]
pub enum Head {
    Mlp(MlpHead),
    Kan(KanLayer),
}

/// Token indices of a padded batch, row-major `[batch x len]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenBatch {
    pub indices: Vec<usize>,
    pub batch: usize,
    pub len: usize,
}

impl TokenBatch {
    /// Pads every sequence with [`PAD`] to `max(longest, min_len)`, truncating
    /// to `max_len` when given.
    pub fn pad(sequences: &[&[usize]], min_len: usize, max_len: Option<usize>) -> Result<Self> {
        if sequences.is_empty() {
            return Err(Error::invalid("cannot build an empty batch"));
        }
        let longest = sequences.iter().map(|s| s.len()).max().unwrap_or(0);
        let mut len = longest.max(min_len);
        if let Some(max) = max_len {
            len = len.min(max.max(min_len));
        }
        let mut indices = Vec::with_capacity(sequences.len() * len);
        for s in sequences {
            let take = s.len().min(len);
            indices.extend_from_slice(&s[..take]);
            indices.extend(std::iter::repeat_n(PAD, len - take));
        }
        Ok(Self {
            indices,
            batch: sequences.len(),
            len,
        })
    }
}

#[derive(Debug, Clone)]
pub struct Model {
    pub spec: ModelSpec,
    pub params: ParamSet,
    pub embedding: ParamId,
    pub embed_mode: EmbedMode,
    pub features: Vec<FeatureLayer>,
    pub head: Head,
}

impl Model {
    /// Builds a model with a randomly initialized, trainable embedding table.
    pub fn build(spec: ModelSpec, vocab_size: usize, seed: u64) -> Result<Self> {
        if vocab_size == 0 {
            return Err(Error::invalid("vocabulary size must be at least 1"));
        }
        spec.validate()?;
        let table = random_table(vocab_size, spec.embed_dim, seed)?;
        Self::with_embedding(spec, table, seed)
    }

    /// Builds a model around an existing embedding table. Static tables are
    /// registered as frozen parameters.
    pub fn with_embedding(spec: ModelSpec, table: EmbeddingTable, seed: u64) -> Result<Self> {
        spec.validate()?;
        if table.dim() != spec.embed_dim {
            return Err(Error::invalid(format!(
                "embedding table has dimension {}, model expects {}",
                table.dim(),
                spec.embed_dim
            )));
        }
        let mut params = ParamSet::new();
        let mode = table.mode;
        let embedding = params.add("embedding.weight", table.matrix, mode.trainable());
        params.pin_rows(embedding, vec![PAD]);

        let mut rng = stream_rng(seed, Stream::Init);
        let opts: Conv1dOptions = spec.conv.into();
        let mut features = Vec::with_capacity(spec.channels.len());
        let mut c_in = spec.embed_dim;
        for (i, (&c_out, &k)) in spec.channels.iter().zip(&spec.kernel_sizes).enumerate() {
            let prefix = format!("features.{i}");
            features.push(if spec.variant.kaconv_trunk() {
                FeatureLayer::KaConv(KaConv1dLayer::new(
                    &mut params,
                    &prefix,
                    c_in,
                    c_out,
                    k,
                    opts,
                    &spec.spline,
                    &mut rng,
                )?)
            } else {
                FeatureLayer::Conv(Conv1dLayer::new(&mut params, &prefix, c_in, c_out, k, opts, &mut rng)?)
            });
            c_in = c_out;
        }
        let head = if spec.variant.kan_head() {
            Head::Kan(KanLayer::new(&mut params, "head", c_in, spec.n_classes, &spec.spline, &mut rng)?)
        } else {
            Head::Mlp(MlpHead::new(&mut params, "head", c_in, spec.n_classes, &mut rng)?)
        };
        Ok(Self {
            spec,
            params,
            embedding,
            embed_mode: mode,
            features,
            head,
        })
    }

    pub fn vocab_size(&self) -> usize {
        self.params.value(self.embedding).shape()[0]
    }

    /// Raw logits `[batch x n_classes]`. Dropout is active only when `train` is set.
    pub fn forward(&self, tape: &mut Tape<'_>, tokens: &TokenBatch, train: bool, rng: &mut Rng) -> Result<Var> {
        let min = self.spec.min_seq_len();
        if tokens.len < min {
            return Err(Error::InvalidState(format!(
                "batch sequences have length {} but the model needs at least {min}; pad before calling forward",
                tokens.len
            )));
        }
        let table = tape.param(self.embedding);
        let x = tape.embedding_lookup(table, &tokens.indices, &[tokens.batch, tokens.len])?;
        let mut x = tape.permute(x, &[0, 2, 1])?;
        for layer in &self.features {
            x = match layer {
                FeatureLayer::Conv(conv) => {
                    let y = conv.forward(tape, x)?;
                    tape.relu(y)?
                }
                FeatureLayer::KaConv(kaconv) => kaconv.forward(tape, x)?,
            };
        }
        let pooled = tape.adaptive_avg_pool_to_1(x)?;
        let dropped = tape.dropout(pooled, self.spec.dropout_p, train, rng)?;
        match &self.head {
            Head::Mlp(h) => h.forward(tape, dropped),
            Head::Kan(h) => h.forward(tape, dropped),
        }
    }

    /// Exact enumeration of trainable arrays, grouped by component.
    pub fn count_params(&self) -> ParamBreakdown {
        let mut rows = Vec::new();
        let mut arrays = Vec::new();
        for (_, p) in self.params.iter() {
            if !p.trainable() {
                continue;
            }
            let component = component_of(&p.name);
            arrays.push(ArrayCount {
                name: p.name.clone(),
                shape: p.value.shape().to_vec(),
                count: p.numel(),
            });
            match rows.last_mut() {
                Some((c, n)) if *c == component => *n += p.numel(),
                _ => rows.push((component, p.numel())),
            }
        }
        let mut breakdown = ParamBreakdown::from_components(rows);
        breakdown.arrays = arrays;
        breakdown
    }

    /// `(layer index, layer)` for every spline-kernel convolution.
    pub fn kaconv_layers(&self) -> Vec<(usize, &KaConv1dLayer)> {
        self.features
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                FeatureLayer::KaConv(k) => Some((i, k)),
                FeatureLayer::Conv(_) => None,
            })
            .collect()
    }
}

fn component_of(name: &str) -> String {
    match name.split('.').collect::<Vec<_>>().as_slice() {
        ["features", i, ..] => format!("features.{i}"),
        [first, ..] => first.to_string(),
        [] => String::new(),
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArrayCount {
    pub name: String,
    pub shape: Vec<usize>,
    pub count: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParamBreakdown {
    /// `(component, trainable scalars)` in model order.
    pub components: Vec<(String, usize)>,
    /// Individual arrays; empty for planned (unbuilt) counts.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub arrays: Vec<ArrayCount>,
    pub total: usize,
}

impl ParamBreakdown {
    fn from_components(components: Vec<(String, usize)>) -> Self {
        let total = components.iter().map(|(_, n)| n).sum();
        Self {
            components,
            arrays: Vec::new(),
            total,
        }
    }

    pub fn component(&self, name: &str) -> Option<usize> {
        self.components.iter().find(|(c, _)| c == name).map(|(_, n)| *n)
    }
}
