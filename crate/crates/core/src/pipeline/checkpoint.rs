//! Checkpoint directory layout:
//!
//! ```text
//! VERSION      "kaconvtext-checkpoint 1"
//! model.json   model spec and embedding mode
//! config.json  run configuration
//! params.json  parameter manifest
//! vocab.txt    one token per line, reserved entries first
//! labels.txt   one label per line, in class-index order
//! ```

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::train::Classifier;
use crate::autodiff::{ParamManifest, Tensor};
use crate::embeddings::{EmbedMode, EmbeddingTable, Vocabulary};
use crate::error::{Error, Result};
use crate::models::{Model, ModelSpec};

pub const CHECKPOINT_VERSION: &str = "kaconvtext-checkpoint 1";

#[derive(Debug, Serialize, Deserialize)]
struct ModelHeader {
    spec: ModelSpec,
    embed_mode: EmbedMode,
}

pub type Checkpoint = Classifier;

pub fn save_checkpoint(classifier: &Classifier, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    std::fs::create_dir_all(dir)?;
    std::fs::write(dir.join("VERSION"), format!("{CHECKPOINT_VERSION}\n"))?;
    let header = ModelHeader {
        spec: classifier.model.spec.clone(),
        embed_mode: classifier.model.embed_mode,
    };
    std::fs::write(dir.join("model.json"), serde_json::to_string_pretty(&header)?)?;
    std::fs::write(dir.join("config.json"), serde_json::to_string_pretty(&classifier.config)?)?;
    let params = BufWriter::new(File::create(dir.join("params.json"))?);
    serde_json::to_writer(params, &classifier.model.params.to_manifest())?;
    classifier.vocab.write(BufWriter::new(File::create(dir.join("vocab.txt"))?))?;
    std::fs::write(dir.join("labels.txt"), classifier.labels.join("\n") + "\n")?;
    Ok(())
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Checkpoint> {
    let dir = dir.as_ref();
    let version = std::fs::read_to_string(dir.join("VERSION"))?;
    if version.trim() != CHECKPOINT_VERSION {
        return Err(Error::invalid(format!(
            "unsupported checkpoint version {:?}",
            version.trim()
        )));
    }
    let header: ModelHeader = serde_json::from_str(&std::fs::read_to_string(dir.join("model.json"))?)?;
    let config: RunConfig = serde_json::from_str(&std::fs::read_to_string(dir.join("config.json"))?)?;
    let vocab = Vocabulary::read(File::open(dir.join("vocab.txt"))?)?;
    let labels: Vec<String> = std::fs::read_to_string(dir.join("labels.txt"))?
        .lines()
        .map(str::to_string)
        .collect();
    if labels.len() != header.spec.n_classes {
        return Err(Error::invalid(format!(
            "checkpoint lists {} labels for a {}-class model",
            labels.len(),
            header.spec.n_classes
        )));
    }
    let table = EmbeddingTable {
        matrix: Tensor::zeros(vec![vocab.len(), header.spec.embed_dim]),
        mode: header.embed_mode,
    };
    let mut model = Model::with_embedding(header.spec, table, 0)?;
    let manifest: ParamManifest = serde_json::from_reader(std::io::BufReader::new(File::open(dir.join("params.json"))?))?;
    model.params.load_manifest(&manifest)?;
    Ok(Classifier {
        model,
        vocab,
        labels,
        config,
    })
}
