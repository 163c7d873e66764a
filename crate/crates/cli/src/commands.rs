use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use kaconvtext::embeddings::build_vocab;
use kaconvtext::pipeline::{
    evaluate, export_splines, load_checkpoint, load_dataset, parse_config_map, save_checkpoint, stratified_split,
    train, Classifier, Dataset, MetricsReport, RunConfig, DEFAULT_SEED,
};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::args::{Command, CountArgs, EvalArgs, ExportArgs, ModelArgs, SplitArgs, TrainArgs};

pub const SEED_ENV: &str = "KACONV_SEED";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error(transparent)]
    Lib(#[from] kaconvtext::Error),
}

impl CliError {
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Lib(e) => e.kind(),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Lib(e.into())
    }
}

type Result<T> = std::result::Result<T, CliError>;

pub fn run(command: Command) -> Result<()> {
    match command {
        Command::Split(a) => split(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::CountParams(a) => count_params(a),
        Command::ExportSplines(a) => export(a),
    }
}

fn env_seed() -> Result<Option<u64>> {
    match std::env::var(SEED_ENV) {
        Ok(raw) => raw
            .trim()
            .parse()
            .map(Some)
            .map_err(|_| CliError::Usage(format!("{SEED_ENV} must be a non-negative integer, got {raw:?}"))),
        Err(_) => Ok(None),
    }
}

/// Seed precedence: flag, then config, then the environment, then the default.
fn resolve_seed(flag: Option<u64>, config: Option<u64>) -> Result<u64> {
    Ok(flag.or(config).or(env_seed()?).unwrap_or(DEFAULT_SEED))
}

/// Defaults, overlaid by the config file, overlaid by explicit flags.
fn resolve_config(model: &ModelArgs, flags: Map<String, Value>) -> Result<RunConfig> {
    let mut map = Map::new();
    if let Some(path) = &model.config {
        for (key, value) in parse_config_map(&std::fs::read_to_string(path).map_err(|e| std::io::Error::new(e.kind(), format!("{}: {e}", path.display())))?)? {
            map.insert(key.replace('-', "_"), value);
        }
    }
    let mut set = |key: &str, value: Option<Value>| {
        if let Some(v) = value {
            map.insert(key.to_string(), v);
        }
    };
    set("model", model.model.map(|v| Value::from(v.as_str())));
    set("embed", model.embed.map(|m| Value::from(m.to_string())));
    set("vectors", model.vectors.as_ref().map(|p| Value::from(p.to_string_lossy().into_owned())));
    set("dim", model.dim.map(Value::from));
    set("grid_size", model.grid_size.map(Value::from));
    set("spline_order", model.spline_order.map(Value::from));
    map.extend(flags);
    let mut config = RunConfig::from_map(map)?;
    config.seed = Some(resolve_seed(model.seed, config.seed)?);
    match (config.embed.needs_vectors(), &config.vectors) {
        (false, Some(_)) => {
            return Err(CliError::Usage(format!("--vectors conflicts with --embed {}", config.embed)));
        }
        (true, None) => return Err(CliError::Usage(format!("--embed {} requires --vectors", config.embed))),
        _ => {}
    }
    Ok(config)
}

/// Loads a dataset, naming the file in I/O errors.
fn read_dataset(path: &Path) -> Result<Dataset> {
    load_dataset(path).map_err(|e| match e {
        kaconvtext::Error::Io(io) => {
            kaconvtext::Error::Io(std::io::Error::new(io.kind(), format!("{}: {io}", path.display()))).into()
        }
        other => other.into(),
    })
}

fn split(a: SplitArgs) -> Result<()> {
    let seed = resolve_seed(a.seed, None)?;
    let data = read_dataset(&a.task_file)?;
    let (train_set, test_set) = stratified_split(&data, a.ratio, seed)?;
    std::fs::create_dir_all(&a.out)?;
    for (name, part) in [("train.tsv", &train_set), ("test.tsv", &test_set)] {
        let mut out = BufWriter::new(File::create(a.out.join(name))?);
        part.write_tsv(&mut out)?;
        out.flush()?;
    }
    println!("train {} test {} seed {seed}", train_set.len(), test_set.len());
    Ok(())
}

fn train_cmd(a: TrainArgs) -> Result<()> {
    let mut flags = Map::new();
    let mut set = |key: &str, value: Option<Value>| {
        if let Some(v) = value {
            flags.insert(key.to_string(), v);
        }
    };
    set("epochs", a.epochs.map(Value::from));
    set("batch_size", a.batch_size.map(Value::from));
    set("lr", a.lr.map(Value::from));
    set("weight_decay", a.weight_decay.map(Value::from));
    set("dropout", a.dropout.map(Value::from));
    set("max_len", a.max_len.map(Value::from));
    let mut config = resolve_config(&a.model, flags)?;
    if config.task.is_none() {
        config.task = a.task_file.file_stem().map(|s| s.to_string_lossy().into_owned());
    }
    let data = read_dataset(&a.task_file)?;
    let (train_set, eval_set) = match &a.eval_file {
        Some(path) => (data, read_dataset(path)?),
        None => stratified_split(&data, a.ratio, config.seed())?,
    };
    if let Some(dir) = &a.export_splines {
        std::fs::create_dir_all(dir)?;
    }
    let outcome = train(&config, &train_set, &eval_set, a.export_splines.as_deref())?;
    std::fs::create_dir_all(&a.out)?;
    save_checkpoint(&outcome.classifier, a.out.join("checkpoint"))?;
    let manifest_path = a.out.join("manifest.json");
    outcome.manifest.write(&manifest_path)?;
    for e in &outcome.manifest.epochs {
        println!("epoch {} train_loss {:.6}", e.epoch, e.train_loss);
    }
    print_summary(&outcome.manifest.metrics);
    println!("params {}", outcome.manifest.params.total);
    println!("manifest {}", manifest_path.display());
    Ok(())
}

fn print_summary(m: &MetricsReport) {
    println!("accuracy {:.6} weighted_f1 {:.6} total {}", m.accuracy, m.weighted_f1, m.total);
}

/// Accepts a checkpoint directory or a run directory holding `checkpoint/`.
fn open_checkpoint(dir: &Path) -> Result<Classifier> {
    let nested: PathBuf = dir.join("checkpoint");
    let dir = if nested.join("VERSION").is_file() { nested } else { dir.to_path_buf() };
    Ok(load_checkpoint(dir)?)
}

fn eval(a: EvalArgs) -> Result<()> {
    let classifier = open_checkpoint(&a.checkpoint)?;
    let data = read_dataset(&a.task_file)?;
    let metrics = evaluate(&classifier, &data)?;
    print_summary(&metrics);
    for c in &metrics.per_class {
        println!(
            "class {} precision {:.6} recall {:.6} f1 {:.6} support {}",
            c.label, c.precision, c.recall, c.f1, c.support
        );
    }
    if let Some(path) = &a.out {
        std::fs::write(path, serde_json::to_string_pretty(&metrics).map_err(kaconvtext::Error::from)? + "\n")?;
    }
    Ok(())
}

fn count_params(a: CountArgs) -> Result<()> {
    let config = resolve_config(&a.model, Map::new())?;
    let (vocab_size, classes) = match &a.task_file {
        Some(path) => {
            let (train_set, _) = stratified_split(&read_dataset(path)?, a.ratio, config.seed())?;
            (build_vocab(train_set.texts())?.len(), train_set.labels().len())
        }
        None => (a.vocab_size.unwrap_or_default(), a.classes.unwrap_or_default()),
    };
    let spec = config.model_spec(classes);
    spec.validate()?;
    let counts = spec.planned_params(vocab_size, config.embed);
    if a.breakdown {
        for (name, n) in &counts.components {
            println!("{name} {n}");
        }
        print!("total ");
    }
    println!("{}", counts.total);
    Ok(())
}

fn export(a: ExportArgs) -> Result<()> {
    let classifier = open_checkpoint(&a.checkpoint)?;
    if let Some(parent) = a.out.parent().filter(|p| !p.as_os_str().is_empty()) {
        std::fs::create_dir_all(parent)?;
    }
    let epoch = a.epoch.unwrap_or(classifier.config.epochs);
    let rows = export_splines(&classifier.model, epoch, &a.out)?;
    println!("rows {rows} epoch {epoch} file {}", a.out.display());
    Ok(())
}
