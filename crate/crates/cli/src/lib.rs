//! Command-line pipeline: synthesize or preprocess a corpus, fit sentence
//! topics, annotate, train, generate and evaluate.

pub mod config;

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};
use topicsum::corpus::{preprocess, read_split, CorpusSplit, EncodedExample, RawInstance, RawRecord, Vocab};
use topicsum::inference::generate;
use topicsum::io::{read_jsonl, write_atomic, write_jsonl};
use topicsum::metrics::{evaluate, EvalItem};
use topicsum::model::{Checkpoint, Mode, Model};
use topicsum::synth::generate_corpus;
use topicsum::topics::{grid_search_topics, label_corpus, sentence_documents, LdaConfig, TopicModel};
use topicsum::trainer::train;
use topicsum::{Error, Result};

pub use config::RunConfig;

#[cfg(doctest)]
#[doc = include_str!("../../../book/src/cli.md")]
mod book_cli {}

pub const VOCAB_FILE: &str = "vocab.txt";
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Parser)]
#[command(name = "topicsum", version, about = "Topic-guided multi-document summarization")]
pub struct Cli {
    /// TOML run configuration; TOPICSUM_* environment variables override it.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Writes a synthetic corpus with known sentence topics.
    Synth {
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        instances: Option<usize>,
    },
    /// Filters, splits and encodes a directory of raw records.
    Preprocess(PreprocessArgs),
    /// Fits sentence topic models over the training summaries.
    TrainTopics {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Comma-separated topic counts.
        #[arg(long, value_delimiter = ',')]
        grid: Option<Vec<usize>>,
    },
    /// Labels every summary sentence with its topic.
    Annotate {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        topic_model: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Trains a summarizer and keeps the best checkpoint.
    Train {
        #[arg(long)]
        corpus: Option<PathBuf>,
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long)]
        mode: Option<Mode>,
        #[arg(long)]
        epochs: Option<usize>,
    },
    /// Summarizes every instance of a split file.
    Generate(GenerateArgs),
    /// Scores system summaries against references.
    Evaluate {
        #[arg(long)]
        system: PathBuf,
        #[arg(long)]
        reference: PathBuf,
        #[arg(long)]
        source: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Stem words before matching.
        #[arg(long)]
        stemming: bool,
    },
}

#[derive(Debug, Args)]
pub struct PreprocessArgs {
    #[arg(long)]
    pub input: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long)]
    pub max_source_tokens: Option<usize>,
    #[arg(long)]
    pub min_lead_tokens: Option<usize>,
    #[arg(long)]
    pub min_docs: Option<usize>,
    #[arg(long)]
    pub max_sentences: Option<usize>,
    #[arg(long)]
    pub max_sentence_len: Option<usize>,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Split file to summarize.
    #[arg(long)]
    pub input: PathBuf,
    /// Vocabulary file; defaults to the one next to the input.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Also writes `{id, summary, source}` reference records here.
    #[arg(long)]
    pub reference_out: Option<PathBuf>,
    #[arg(long)]
    pub beam: Option<usize>,
    #[arg(long)]
    pub alpha: Option<f64>,
    #[arg(long, overrides_with = "no_block_trigrams")]
    pub block_trigrams: bool,
    #[arg(long)]
    pub no_block_trigrams: bool,
    #[arg(long)]
    pub max_sentences: Option<usize>,
}

/// Process exit status of a failed command.
pub fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Config(_) => 2,
        Error::InvalidInput(_) | Error::Io { .. } | Error::Parse { .. } => 3,
        Error::Numeric(_) => 4,
    }
}

/// Runs one command with configuration from `cli` and the given environment.
pub fn run(cli: Cli, env: impl IntoIterator<Item = (String, String)>) -> Result<()> {
    let mut cfg = RunConfig::load(cli.config.as_deref(), env)?;
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    match cli.command {
        Command::Synth { out, instances } => {
            if let Some(n) = instances {
                cfg.synth.instances = n;
            }
            cmd_synth(&cfg, out.as_deref().unwrap_or(&cfg.paths.raw.clone()))
        }
        Command::Preprocess(a) => {
            let c = &mut cfg.corpus;
            c.max_source_tokens = a.max_source_tokens.unwrap_or(c.max_source_tokens);
            c.min_lead_tokens = a.min_lead_tokens.unwrap_or(c.min_lead_tokens);
            c.min_docs = a.min_docs.unwrap_or(c.min_docs);
            c.max_sentences = a.max_sentences.unwrap_or(c.max_sentences);
            c.max_sentence_len = a.max_sentence_len.unwrap_or(c.max_sentence_len);
            let input = a.input.unwrap_or_else(|| cfg.paths.raw.clone());
            let out = a.out.unwrap_or_else(|| cfg.paths.corpus.clone());
            cmd_preprocess(&cfg, &input, &out)
        }
        Command::TrainTopics { corpus, out, grid } => {
            if let Some(g) = grid {
                cfg.topics.grid = g;
                cfg.validate()?;
            }
            let corpus = corpus.unwrap_or_else(|| cfg.paths.corpus.clone());
            let out = out.unwrap_or_else(|| cfg.paths.topic_model.clone());
            cmd_train_topics(&cfg, &corpus, &out)
        }
        Command::Annotate { corpus, topic_model, out } => {
            let corpus = corpus.unwrap_or_else(|| cfg.paths.corpus.clone());
            let model = topic_model.unwrap_or_else(|| cfg.paths.topic_model.clone());
            let out = out.unwrap_or_else(|| cfg.paths.labeled.clone());
            cmd_annotate(&cfg, &corpus, &model, &out)
        }
        Command::Train { corpus, out, mode, epochs } => {
            cfg.mode = mode.unwrap_or(cfg.mode);
            cfg.train.max_epochs = epochs.unwrap_or(cfg.train.max_epochs);
            let default_corpus = if cfg.mode.has_topics() { &cfg.paths.labeled } else { &cfg.paths.corpus };
            let corpus = corpus.unwrap_or_else(|| default_corpus.clone());
            let out = out.unwrap_or_else(|| cfg.paths.checkpoints.clone());
            cmd_train(&cfg, &corpus, &out)
        }
        Command::Generate(a) => {
            let d = &mut cfg.decode;
            d.beam_size = a.beam.unwrap_or(d.beam_size);
            d.length_alpha = a.alpha.unwrap_or(d.length_alpha);
            d.max_sentences = a.max_sentences.unwrap_or(d.max_sentences);
            if a.block_trigrams {
                d.block_trigrams = true;
            }
            if a.no_block_trigrams {
                d.block_trigrams = false;
            }
            cfg.validate()?;
            cmd_generate(&cfg, &a)
        }
        Command::Evaluate {
            system,
            reference,
            source,
            out,
            stemming,
        } => cmd_evaluate(&cfg, &system, &reference, &source, &out, stemming),
    }
}

fn require(path: &Path) -> Result<()> {
    if path.exists() {
        Ok(())
    } else {
        Err(Error::io(path, std::io::ErrorKind::NotFound.into()))
    }
}

/// What produced an output: command, seed and the resolved configuration.
#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    seed: u64,
    version: &'a str,
    #[serde(skip_serializing_if = "Option::is_none")]
    details: Option<serde_json::Value>,
    config: &'a RunConfig,
}

fn write_manifest(path: &Path, command: &str, cfg: &RunConfig, details: Option<serde_json::Value>) -> Result<()> {
    let m = Manifest {
        command,
        seed: cfg.seed,
        version: env!("CARGO_PKG_VERSION"),
        details,
        config: cfg,
    };
    let mut text = serde_json::to_string_pretty(&m).expect("manifest serializes");
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

/// Manifest path for a file output: `out.json` → `out.manifest.json`.
fn sidecar(path: &Path) -> PathBuf {
    let stem = path.file_stem().map_or("output".into(), |s| s.to_string_lossy().into_owned());
    path.with_file_name(format!("{stem}.{MANIFEST_FILE}"))
}

pub fn cmd_synth(cfg: &RunConfig, out: &Path) -> Result<()> {
    let mut synth = cfg.synth.clone();
    synth.seed = cfg.seed;
    let records = generate_corpus(&synth)?;
    write_jsonl(&out.join("records.jsonl"), &records)?;
    write_manifest(&out.join(MANIFEST_FILE), "synth", cfg, None)
}

/// Every `*.jsonl` file of `dir`, in file-name order.
fn read_raw_dir(dir: &Path) -> Result<Vec<RawRecord>> {
    require(dir)?;
    let mut files: Vec<PathBuf> = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x == "jsonl"))
        .collect();
    files.sort();
    if files.is_empty() {
        return Err(Error::InvalidInput(format!("{}: no .jsonl record files", dir.display())));
    }
    let mut out = Vec::new();
    for f in files {
        out.extend(read_jsonl::<RawRecord>(&f)?);
    }
    Ok(out)
}

pub fn cmd_preprocess(cfg: &RunConfig, input: &Path, out: &Path) -> Result<()> {
    let records = read_raw_dir(input)?;
    let instances = records.iter().map(RawInstance::from_record).collect::<Result<Vec<_>>>()?;
    let p = preprocess(&instances, &cfg.corpus);
    p.split.write_dir(out)?;
    write_atomic(&out.join(VOCAB_FILE), p.vocab.to_file_string().as_bytes())?;
    let details = serde_json::json!({
        "stats": p.stats,
        "sizes": p.split.parts().map(|s| s.len()),
        "vocab_size": p.vocab.len(),
    });
    write_manifest(&out.join(MANIFEST_FILE), "preprocess", cfg, Some(details))
}

fn read_corpus(dir: &Path) -> Result<(CorpusSplit, Vocab)> {
    require(dir)?;
    let vocab = Vocab::read(&dir.join(VOCAB_FILE))?;
    Ok((CorpusSplit::read_dir(dir)?, vocab))
}

pub fn cmd_train_topics(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<()> {
    let (split, vocab) = read_corpus(corpus)?;
    let docs = sentence_documents(&split.train, &vocab);
    let lda = LdaConfig {
        alpha: cfg.topics.alpha,
        eta: cfg.topics.eta,
        sweeps: cfg.topics.sweeps,
        seed: cfg.seed,
    };
    let ranked = grid_search_topics(&docs, &cfg.topics.grid, &lda)?;
    let grid: Vec<serde_json::Value> = ranked
        .iter()
        .map(|c| serde_json::json!({"k": c.k, "coherence": c.coherence.mean}))
        .collect();
    let best = &ranked[0].model;
    best.save(out)?;
    let stem = out.file_stem().map_or("topics".into(), |s| s.to_string_lossy().into_owned());
    write_atomic(
        &out.with_file_name(format!("{stem}.summary.txt")),
        best.summary(cfg.topics.summary_words).as_bytes(),
    )?;
    write_manifest(&sidecar(out), "train-topics", cfg, Some(serde_json::json!({ "grid": grid })))
}

pub fn cmd_annotate(cfg: &RunConfig, corpus: &Path, topic_model: &Path, out: &Path) -> Result<()> {
    let (split, vocab) = read_corpus(corpus)?;
    let model = TopicModel::load(topic_model)?;
    let labeled = label_corpus(&model, split, &vocab);
    labeled.write_dir(out)?;
    write_atomic(&out.join(VOCAB_FILE), vocab.to_file_string().as_bytes())?;
    let details = serde_json::json!({ "topics": model.k, "end_of_topic_label": model.eot_label() });
    write_manifest(&out.join(MANIFEST_FILE), "annotate", cfg, Some(details))
}

/// Labels including end-of-topic, as found in the training data.
fn topic_count(train: &[EncodedExample]) -> Result<usize> {
    let mut max = None;
    for (i, ex) in train.iter().enumerate() {
        let labels = ex
            .topic_labels
            .as_ref()
            .ok_or_else(|| Error::InvalidInput(format!("training example {i} has no topic labels; run annotate first")))?;
        max = max.max(labels.iter().copied().max());
    }
    Ok(max.map_or(0, |m| m as usize + 1))
}

pub fn cmd_train(cfg: &RunConfig, corpus: &Path, out: &Path) -> Result<()> {
    let (split, vocab) = read_corpus(corpus)?;
    let topics = if cfg.mode.has_topics() { topic_count(&split.train)? } else { 0 };
    let hp = cfg.model.hyperparams(vocab.len(), topics, cfg.mode);
    let model = Model::new(hp, cfg.seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = cfg.seed;
    fs::create_dir_all(out).map_err(|e| Error::io(out, e))?;
    let log_path = out.join("train_log.jsonl");
    let tmp_log = out.join("train_log.jsonl.tmp");
    let mut log = fs::File::create(&tmp_log).map_err(|e| Error::io(&tmp_log, e))?;
    let outcome = train(model, &split.train, &split.valid, &vocab, &train_cfg, |rec| {
        let line = serde_json::to_string(rec).expect("log records serialize");
        writeln!(log, "{line}").and_then(|_| log.flush()).map_err(|e| Error::io(&tmp_log, e))
    })?;
    drop(log);
    fs::rename(&tmp_log, &log_path).map_err(|e| Error::io(&log_path, e))?;
    let fingerprint = vocab.fingerprint();
    Checkpoint {
        model: outcome.best,
        vocab_fingerprint: fingerprint.clone(),
    }
    .save(&out.join("best.ckpt"))?;
    Checkpoint {
        model: outcome.last,
        vocab_fingerprint: fingerprint,
    }
    .save(&out.join("last.ckpt"))?;
    let details = serde_json::json!({ "best_epoch": outcome.best_epoch, "epochs": outcome.log.len() });
    write_manifest(&out.join(MANIFEST_FILE), "train", cfg, Some(details))
}

/// One line of `generate` output.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SummaryRecord {
    pub id: String,
    pub summary: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topic_labels: Option<Vec<u32>>,
    pub score: f64,
}

/// Reference summary and source of one instance, as written by `generate`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReferenceRecord {
    pub id: String,
    pub summary: String,
    pub source: String,
}

pub fn cmd_generate(cfg: &RunConfig, a: &GenerateArgs) -> Result<()> {
    require(&a.checkpoint)?;
    require(&a.input)?;
    let vocab_path = a
        .vocab
        .clone()
        .unwrap_or_else(|| a.input.parent().unwrap_or(Path::new(".")).join(VOCAB_FILE));
    require(&vocab_path)?;
    let vocab = Vocab::read(&vocab_path)?;
    let ck = Checkpoint::load(&a.checkpoint)?;
    if ck.vocab_fingerprint != vocab.fingerprint() {
        return Err(Error::Config(format!(
            "{} was trained with a different vocabulary than {}",
            a.checkpoint.display(),
            vocab_path.display()
        )));
    }
    let examples = read_split(&a.input)?;
    let mut system = Vec::with_capacity(examples.len());
    let mut refs = Vec::with_capacity(examples.len());
    for (i, ex) in examples.iter().enumerate() {
        let out = generate(&ck.model, &ex.source, &cfg.decode)?;
        let id = i.to_string();
        system.push(SummaryRecord {
            id: id.clone(),
            summary: vocab.decode(&out.tokens()).join(" "),
            topic_labels: out.topic_labels,
            score: out.score,
        });
        refs.push(ReferenceRecord {
            id,
            summary: vocab.decode(&ex.summary_tokens()).join(" "),
            source: vocab.decode(&ex.source).join(" "),
        });
    }
    write_jsonl(&a.out, &system)?;
    if let Some(path) = &a.reference_out {
        write_jsonl(path, &refs)?;
    }
    write_manifest(&sidecar(&a.out), "generate", cfg, None)
}

#[derive(Deserialize)]
struct TextField {
    id: String,
    #[serde(default)]
    summary: Option<String>,
    #[serde(default)]
    source: Option<String>,
}

/// `field` of every record of `path`, keyed by id.
fn read_texts(path: &Path, field: &str) -> Result<Vec<(String, Vec<String>)>> {
    require(path)?;
    read_jsonl::<TextField>(path)?
        .into_iter()
        .enumerate()
        .map(|(i, r)| {
            let text = if field == "source" { r.source } else { r.summary };
            let text = text.ok_or_else(|| {
                Error::InvalidInput(format!("{} record {}: no {field} field", path.display(), i + 1))
            })?;
            Ok((r.id, text.split_whitespace().map(String::from).collect()))
        })
        .collect()
}

pub fn cmd_evaluate(cfg: &RunConfig, system: &Path, reference: &Path, source: &Path, out: &Path, stemming: bool) -> Result<()> {
    let refs = read_texts(reference, "summary")?;
    let sys: HashMap<String, Vec<String>> = read_texts(system, "summary")?.into_iter().collect();
    let src: HashMap<String, Vec<String>> = read_texts(source, "source")?.into_iter().collect();
    let missing = |path: &Path, id: &str| Error::InvalidInput(format!("{}: no record with id {id:?}", path.display()));
    let mut items = Vec::with_capacity(refs.len());
    for (id, r) in &refs {
        items.push(EvalItem {
            id,
            system: sys.get(id).ok_or_else(|| missing(system, id))?,
            reference: r,
            source: src.get(id).ok_or_else(|| missing(source, id))?,
        });
    }
    let report = evaluate(&items, stemming);
    let mut text = serde_json::to_string_pretty(&report).expect("report serializes");
    text.push('\n');
    write_atomic(out, text.as_bytes())?;
    write_manifest(&sidecar(out), "evaluate", cfg, None)
}
