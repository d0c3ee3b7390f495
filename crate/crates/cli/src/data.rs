//! Loading corpora from raw logs, preprocessed directories or the
//! synthetic generator.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::Args;
use cmgnn_core::corpus::{
    augment_sequences, corpus_stats, load_sessions, read_sessions_jsonl, read_vocab_json, write_examples_jsonl,
    write_sessions_jsonl, write_vocab_json, InputFormat, SessionCorpus, Vocab,
};
use cmgnn_core::harness::{planted_markov_split, prepare, prepare_split, PreparedData, SynthConfig, TrainingConfig};
use serde_json::json;

use crate::run::RunDir;

pub const VOCAB: &str = "vocab.json";
pub const TRAIN_SESSIONS: &str = "train_sessions.jsonl";
pub const TEST_SESSIONS: &str = "test_sessions.jsonl";
pub const TRAIN_EXAMPLES: &str = "train.jsonl";
pub const TEST_EXAMPLES: &str = "test.jsonl";
pub const STATS: &str = "stats.json";

/// Where the sessions come from; exactly one must be given.
#[derive(Args, Debug, Clone)]
#[group(required = true, multiple = false)]
pub struct DataArgs {
    /// Raw session log (filtered and split per the config).
    #[arg(long)]
    pub input: Option<PathBuf>,
    /// Directory written by `preprocess` or `synth`.
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// The default planted-Markov synthetic corpus.
    #[arg(long)]
    pub synthetic: bool,
}

/// Input format flag shared by commands that read raw logs.
#[derive(Args, Debug, Clone)]
pub struct FormatArg {
    /// tsv, csv or jsonl; guessed from the extension when omitted.
    #[arg(long)]
    pub format: Option<String>,
}

impl FormatArg {
    pub fn resolve(&self, path: &Path) -> Result<InputFormat> {
        match &self.format {
            Some(f) => Ok(f.parse()?),
            None => Ok(InputFormat::from_path(path)),
        }
    }
}

pub fn load_raw(path: &Path, format: &FormatArg) -> Result<SessionCorpus> {
    load_sessions(path, format.resolve(path)?).with_context(|| format!("loading {}", path.display()))
}

/// Train/test corpora and their labeled examples.
pub fn load(args: &DataArgs, format: &FormatArg, cfg: &TrainingConfig) -> Result<PreparedData> {
    if let Some(path) = &args.input {
        return Ok(prepare(&load_raw(path, format)?, cfg)?);
    }
    if let Some(dir) = &args.data {
        let vocab = read_vocab_json(&dir.join(VOCAB))?;
        let train = read_sessions_jsonl(&dir.join(TRAIN_SESSIONS), vocab.clone())?;
        let test_path = dir.join(TEST_SESSIONS);
        if !test_path.exists() {
            bail!("{} has no test split ({} missing)", dir.display(), TEST_SESSIONS);
        }
        let test = read_sessions_jsonl(&test_path, vocab)?;
        return Ok(prepare_split(train, test, cfg.eval_prefixes)?);
    }
    let (train, test) = planted_markov_split(&SynthConfig::default())?;
    Ok(prepare_split(train, test, cfg.eval_prefixes)?)
}

/// Writes the preprocessed-directory layout for a split.
pub fn write_split(run: &mut RunDir, data: &PreparedData) -> Result<()> {
    write_vocab_json(&run.record(VOCAB), &data.train.vocab)?;
    write_sessions_jsonl(&run.record(TRAIN_SESSIONS), &data.train)?;
    write_sessions_jsonl(&run.record(TEST_SESSIONS), &data.test)?;
    write_examples_jsonl(&run.record(TRAIN_EXAMPLES), &data.train_examples)?;
    write_examples_jsonl(&run.record(TEST_EXAMPLES), &data.test_examples)?;
    let stats = json!({
        "train": corpus_stats(&data.train),
        "test": corpus_stats(&data.test),
        "train_examples": data.train_examples.len(),
        "test_examples": data.test_examples.len(),
    });
    run.write(STATS, &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    Ok(())
}

/// Writes an unsplit corpus: sessions, every prefix example and the vocab.
pub fn write_unsplit(run: &mut RunDir, corpus: &SessionCorpus) -> Result<usize> {
    let examples = augment_sequences(corpus);
    write_vocab_json(&run.record(VOCAB), &corpus.vocab)?;
    write_sessions_jsonl(&run.record(TRAIN_SESSIONS), corpus)?;
    write_examples_jsonl(&run.record(TRAIN_EXAMPLES), &examples)?;
    let stats = json!({ "train": corpus_stats(corpus), "train_examples": examples.len() });
    run.write(STATS, &(serde_json::to_string_pretty(&stats)? + "\n"))?;
    Ok(examples.len())
}

/// Vocabulary from `--vocab`, else `vocab.json` beside the checkpoint.
pub fn vocab_for(checkpoint: &Path, explicit: Option<&Path>) -> Result<Option<Vocab>> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None => checkpoint.with_file_name(VOCAB),
    };
    if explicit.is_none() && !path.exists() {
        return Ok(None);
    }
    Ok(Some(read_vocab_json(&path)?))
}
