use std::path::Path;
use std::time::Instant;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::dataset::Dataset;
use super::export::export_splines;
use super::metrics::{metrics_from_predictions, MetricsReport};
use crate::autodiff::{adam_step, AdamConfig, AdamState, Tape};
use crate::embeddings::{build_vocab, init_random, load_pretrained, LoadReport, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{Model, ParamBreakdown, TokenBatch};
use crate::rng::{stream_rng, Stream};

pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean cross-entropy over the epoch's training examples.
    pub train_loss: f64,
}

/// Wall-clock measurements; the only manifest fields that vary between
/// otherwise identical runs.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Timings {
    pub epoch_seconds: Vec<f64>,
    pub train_seconds: f64,
    pub eval_seconds: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub config: RunConfig,
    pub seed: u64,
    pub vocab_size: usize,
    pub labels: Vec<String>,
    pub train_records: usize,
    pub eval_records: usize,
    pub embedding_load: Option<LoadReport>,
    pub epochs: Vec<EpochRecord>,
    pub metrics: MetricsReport,
    pub params: ParamBreakdown,
    pub timings: Timings,
}

impl RunManifest {
    /// Copy with wall-clock fields cleared, for reproducibility comparisons.
    pub fn without_timings(&self) -> Self {
        Self {
            timings: Timings::default(),
            ..self.clone()
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn write(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn read(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_str(&std::fs::read_to_string(path)?)?)
    }
}

/// A model together with everything needed to classify raw text.
#[derive(Debug, Clone)]
pub struct Classifier {
    pub model: Model,
    pub vocab: Vocabulary,
    pub labels: Vec<String>,
    pub config: RunConfig,
}

impl Classifier {
    pub fn label_index(&self, label: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == label)
    }

    fn batch(&self, texts: &[&str]) -> Result<TokenBatch> {
        let encoded: Vec<Vec<usize>> = texts.iter().map(|t| self.vocab.encode_text(t)).collect();
        let refs: Vec<&[usize]> = encoded.iter().map(Vec::as_slice).collect();
        TokenBatch::pad(&refs, self.model.spec.min_seq_len(), self.config.max_len)
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub classifier: Classifier,
    pub manifest: RunManifest,
}

/// Trains `config.model` on `train_set` and reports metrics of the final
/// model on `eval_set`. With `export_dir` set, spline kernels are written
/// after every epoch to `splines_epoch_NN.csv`.
pub fn train(config: &RunConfig, train_set: &Dataset, eval_set: &Dataset, export_dir: Option<&Path>) -> Result<TrainOutcome> {
    config.validate()?;
    if train_set.is_empty() || eval_set.is_empty() {
        return Err(Error::invalid("training and evaluation sets must be non-empty"));
    }
    if export_dir.is_some() && !config.model.kaconv_trunk() {
        return Err(Error::UnsupportedModel(format!(
            "spline export needs a KAConv trunk, {} has plain convolutions",
            config.model
        )));
    }
    let seed = config.seed();
    let labels = train_set.labels();
    let vocab = build_vocab(train_set.texts())?;
    let (table, embedding_load) = if config.embed.needs_vectors() {
        let path = config.vectors.as_ref().expect("validated config has vectors");
        let (table, report) = load_pretrained(path, &vocab, config.dim, config.embed, seed)?;
        (table, Some(report))
    } else {
        (init_random(&vocab, config.dim, seed)?, None)
    };
    let model = Model::with_embedding(config.model_spec(labels.len()), table, seed)?;
    let mut classifier = Classifier {
        model,
        vocab,
        labels,
        config: config.clone(),
    };
    let examples: Vec<(Vec<usize>, usize)> = train_set
        .records
        .iter()
        .map(|r| {
            let label = classifier.label_index(&r.label).expect("label taken from the training set");
            (classifier.vocab.encode_text(&r.text), label)
        })
        .collect();

    let mut optimizer = AdamState::new(AdamConfig {
        lr: config.lr,
        weight_decay: config.weight_decay,
        ..AdamConfig::default()
    });
    let mut shuffle_rng = stream_rng(seed, Stream::Shuffle);
    let mut dropout_rng = stream_rng(seed, Stream::Dropout);
    let min_len = classifier.model.spec.min_seq_len();
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut epochs = Vec::with_capacity(config.epochs);
    let mut timings = Timings::default();
    let train_start = Instant::now();

    for epoch in 1..=config.epochs {
        let epoch_start = Instant::now();
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for (batch_index, chunk) in order.chunks(config.batch_size).enumerate() {
            let seqs: Vec<&[usize]> = chunk.iter().map(|&i| examples[i].0.as_slice()).collect();
            let targets: Vec<usize> = chunk.iter().map(|&i| examples[i].1).collect();
            let mut step = || -> Result<f64> {
                let model = &mut classifier.model;
                let tokens = TokenBatch::pad(&seqs, min_len, config.max_len)?;
                let mut tape = Tape::new(&model.params);
                let logits = model.forward(&mut tape, &tokens, true, &mut dropout_rng)?;
                let loss = tape.softmax_cross_entropy(logits, &targets)?;
                let value = tape.value(loss).item();
                if !value.is_finite() {
                    return Err(Error::Numeric(format!("loss is {value}")));
                }
                let grads = tape.backward(loss)?;
                model.params.accumulate(grads)?;
                adam_step(&mut model.params, &mut optimizer)?;
                Ok(value)
            };
            let value = step().map_err(|e| match e {
                Error::Numeric(msg) => Error::Numeric(format!("epoch {epoch}, batch {batch_index}: {msg}")),
                other => other,
            })?;
            loss_sum += value * chunk.len() as f64;
        }
        let train_loss = loss_sum / examples.len() as f64;
        log::info!("epoch {epoch}: train loss {train_loss:.6}");
        epochs.push(EpochRecord { epoch, train_loss });
        if let Some(dir) = export_dir {
            std::fs::create_dir_all(dir)?;
            export_splines(&classifier.model, epoch, dir.join(format!("splines_epoch_{epoch:02}.csv")))?;
        }
        timings.epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
    }
    timings.train_seconds = train_start.elapsed().as_secs_f64();

    let eval_start = Instant::now();
    let metrics = evaluate(&classifier, eval_set)?;
    timings.eval_seconds = eval_start.elapsed().as_secs_f64();

    let manifest = RunManifest {
        version: MANIFEST_VERSION,
        config: config.clone(),
        seed,
        vocab_size: classifier.vocab.len(),
        labels: classifier.labels.clone(),
        train_records: train_set.len(),
        eval_records: eval_set.len(),
        embedding_load,
        epochs,
        metrics,
        params: classifier.model.count_params(),
        timings,
    };
    Ok(TrainOutcome { classifier, manifest })
}

/// Predicted class index for each text, in input order.
pub fn predict(classifier: &Classifier, texts: &[&str]) -> Result<Vec<usize>> {
    let mut out = Vec::with_capacity(texts.len());
    let mut rng = stream_rng(0, Stream::Dropout);
    for chunk in texts.chunks(classifier.config.batch_size.max(1)) {
        let tokens = classifier.batch(chunk)?;
        let mut tape = Tape::new(&classifier.model.params);
        let logits = classifier.model.forward(&mut tape, &tokens, false, &mut rng)?;
        let value = tape.value(logits);
        let n = value.shape()[1];
        for row in value.data().chunks_exact(n) {
            let mut best = 0;
            for (c, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = c;
                }
            }
            out.push(best);
        }
    }
    Ok(out)
}

/// Metrics of `classifier` on `data`, whose labels must all be known.
pub fn evaluate(classifier: &Classifier, data: &Dataset) -> Result<MetricsReport> {
    let unseen: Vec<String> = data
        .labels()
        .into_iter()
        .filter(|l| classifier.label_index(l).is_none())
        .collect();
    if !unseen.is_empty() {
        return Err(Error::invalid(format!(
            "evaluation labels not seen in training: {}",
            unseen.join(", ")
        )));
    }
    let truth: Vec<usize> = data
        .records
        .iter()
        .map(|r| classifier.label_index(&r.label).expect("checked above"))
        .collect();
    let texts: Vec<&str> = data.texts().collect();
    let predicted = predict(classifier, &texts)?;
    metrics_from_predictions(&classifier.labels, &truth, &predicted)
}
