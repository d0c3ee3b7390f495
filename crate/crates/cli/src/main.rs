//! `cmgnn`: preprocessing, graph building, training, evaluation and
//! recommendation for CM-GNN session recommenders.

mod data;
mod run;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use cmgnn_core::corpus::{filter_corpus, split_train_test, write_vocab_json, ItemIndex, Vocab};
use cmgnn_core::graphs::{build_global_graph, build_hypergraph, build_local_graph};
use cmgnn_core::harness::{
    baseline_scorer, evaluate, format_table, gradcheck_suite, planted_markov_split, prepare_split, ranked_items,
    sweep_beta, sweep_csv, train, BaselineMethod, Checkpoint, MetricReport, SynthConfig, TrainingConfig, DEFAULT_BETAS,
    DEFAULT_KS,
};
use serde_json::json;

use data::{DataArgs, FormatArg};
use run::RunDir;

#[derive(Parser, Debug)]
#[command(name = "cmgnn", version, about = "CM-GNN session-based recommendation")]
struct Cli {
    /// Parent of the run-stamped output directories.
    #[arg(long, global = true, env = "CMGNN_WORKDIR", default_value = "runs")]
    workdir: PathBuf,
    /// Write outputs here instead of a fresh run directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug)]
struct ConfigArgs {
    /// Flat `key = value` config file.
    #[arg(long = "config", global = true)]
    file: Option<PathBuf>,
    /// Override one setting; repeatable, applied after the file.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

impl ConfigArgs {
    fn apply(&self, cfg: &mut TrainingConfig) -> Result<()> {
        if let Some(path) = &self.file {
            let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
            cfg.apply_text(&text)
                .with_context(|| format!("in {}", path.display()))?;
        }
        for kv in &self.overrides {
            let (k, v) = kv
                .split_once('=')
                .with_context(|| format!("`--set {kv}` is not KEY=VALUE"))?;
            cfg.set(k.trim(), v.trim())?;
        }
        cfg.validate()?;
        Ok(())
    }

    fn resolve(&self) -> Result<TrainingConfig> {
        let mut cfg = TrainingConfig::default();
        self.apply(&mut cfg)?;
        Ok(cfg)
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Filter, split and expand a raw session log.
    Preprocess {
        #[arg(long)]
        input: PathBuf,
        #[command(flatten)]
        format: FormatArg,
        /// Keep every filtered session in the training split.
        #[arg(long)]
        no_split: bool,
    },
    /// Build the global, hyper and per-session graphs of the training split.
    Graphs {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        format: FormatArg,
    },
    /// Train a model and evaluate the best checkpoint on the test split.
    Train {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        format: FormatArg,
        /// Check attention normalization every batch.
        #[arg(long)]
        audit: bool,
    },
    /// Score a checkpoint on the test split.
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        format: FormatArg,
        /// Also score the POP and ItemKNN baselines.
        #[arg(long)]
        baselines: bool,
    },
    /// Top-k next items for one prefix.
    Recommend {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Comma-separated raw item ids, oldest first.
        #[arg(long, value_delimiter = ',', required = true)]
        prefix: Vec<String>,
        #[arg(long, default_value_t = 20)]
        k: usize,
        /// Vocabulary file; defaults to vocab.json beside the checkpoint.
        #[arg(long)]
        vocab: Option<PathBuf>,
    },
    /// Train and evaluate once per contrastive weight.
    SweepBeta {
        #[command(flatten)]
        data: DataArgs,
        #[command(flatten)]
        format: FormatArg,
        #[arg(long, value_delimiter = ',')]
        values: Vec<f64>,
    },
    /// Compare analytic and finite-difference gradients.
    Gradcheck {
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Write a planted-Markov synthetic corpus.
    Synth {
        #[arg(long, default_value_t = SynthConfig::default().n_items)]
        n_items: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_train)]
        n_train: usize,
        #[arg(long, default_value_t = SynthConfig::default().n_test)]
        n_test: usize,
        #[arg(long, default_value_t = SynthConfig::default().noise)]
        noise: f64,
        #[arg(long, default_value_t = SynthConfig::default().min_len)]
        min_len: usize,
        #[arg(long, default_value_t = SynthConfig::default().max_len)]
        max_len: usize,
        #[arg(long, default_value_t = SynthConfig::default().seed)]
        seed: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Preprocess { .. } => "preprocess",
            Command::Graphs { .. } => "graphs",
            Command::Train { .. } => "train",
            Command::Evaluate { .. } => "evaluate",
            Command::Recommend { .. } => "recommend",
            Command::SweepBeta { .. } => "sweep-beta",
            Command::Gradcheck { .. } => "gradcheck",
            Command::Synth { .. } => "synth",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match execute(cli) {
        Ok(dir) => {
            eprintln!("outputs in {}", dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn execute(cli: Cli) -> Result<PathBuf> {
    let name = cli.command.name();
    let mut cfg = match &cli.command {
        Command::Evaluate { checkpoint, .. } | Command::Recommend { checkpoint, .. } => {
            let mut cfg = load_checkpoint(checkpoint)?.config;
            cli.config.apply(&mut cfg)?;
            cfg
        }
        _ => cli.config.resolve()?,
    };
    if let Command::Gradcheck { seed: Some(s) } = &cli.command {
        cfg.seed = *s;
    }
    let mut run = RunDir::create(&cli.workdir, cli.out.as_deref(), name, &cfg)?;
    let details = match cli.command {
        Command::Preprocess {
            input,
            format,
            no_split,
        } => preprocess(&mut run, &cfg, &input, &format, no_split)?,
        Command::Graphs { data, format } => graphs(&mut run, &cfg, &data, &format)?,
        Command::Train { data, format, audit } => {
            cfg.audit |= audit;
            train_cmd(&mut run, &cfg, &data, &format)?
        }
        Command::Evaluate {
            checkpoint,
            data,
            format,
            baselines,
        } => evaluate_cmd(&mut run, &cfg, &checkpoint, &data, &format, baselines)?,
        Command::Recommend {
            checkpoint,
            prefix,
            k,
            vocab,
        } => recommend(&mut run, &checkpoint, &prefix, k, vocab.as_deref())?,
        Command::SweepBeta { data, format, values } => sweep(&mut run, &cfg, &data, &format, &values)?,
        Command::Gradcheck { .. } => gradcheck(&mut run, &cfg)?,
        Command::Synth {
            n_items,
            n_train,
            n_test,
            noise,
            min_len,
            max_len,
            seed,
        } => synth(
            &mut run,
            &cfg,
            &SynthConfig {
                n_items,
                n_train,
                n_test,
                noise,
                min_len,
                max_len,
                seed,
            },
        )?,
    };
    let failed = details.get("passed") == Some(&json!(false));
    let dir = run.finish(&cfg, details)?;
    if failed {
        bail!("gradient check failed; see {}", dir.join("gradcheck.json").display());
    }
    Ok(dir)
}

fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    Checkpoint::load(path).with_context(|| format!("loading checkpoint {}", path.display()))
}

fn pretty(value: &impl serde::Serialize) -> Result<String> {
    Ok(serde_json::to_string_pretty(value)? + "\n")
}

fn preprocess(
    run: &mut RunDir,
    cfg: &TrainingConfig,
    input: &Path,
    format: &FormatArg,
    no_split: bool,
) -> Result<serde_json::Value> {
    let raw = data::load_raw(input, format)?;
    let filtered = filter_corpus(&raw, cfg.min_len, cfg.min_item_freq)?;
    if no_split {
        let n = data::write_unsplit(run, &filtered)?;
        eprintln!(
            "{} sessions, {} items, {n} examples",
            filtered.len(),
            filtered.n_items()
        );
        return Ok(json!({ "input": input, "sessions": filtered.len(), "train_examples": n }));
    }
    let (train, test) = split_train_test(&filtered, cfg.holdout_secs)?;
    let prepared = prepare_split(train, test, cfg.eval_prefixes)?;
    data::write_split(run, &prepared)?;
    eprintln!(
        "train {} sessions / {} examples, test {} sessions / {} examples",
        prepared.train.len(),
        prepared.train_examples.len(),
        prepared.test.len(),
        prepared.test_examples.len()
    );
    Ok(json!({
        "input": input,
        "train_sessions": prepared.train.len(),
        "test_sessions": prepared.test.len(),
        "train_examples": prepared.train_examples.len(),
        "test_examples": prepared.test_examples.len(),
    }))
}

fn graphs(run: &mut RunDir, cfg: &TrainingConfig, args: &DataArgs, format: &FormatArg) -> Result<serde_json::Value> {
    let prepared = data::load(args, format, cfg)?;
    let global = build_global_graph(&prepared.train, cfg.eps, cfg.max_neighbors)?;
    let hyper = build_hypergraph(&prepared.train)?;
    run.write("global_graph.json", &pretty(&global)?)?;
    run.write("hypergraph.json", &pretty(&hyper)?)?;
    let mut lines = String::new();
    for s in &prepared.train.sessions {
        let g = build_local_graph(&s.items)?;
        lines.push_str(&serde_json::to_string(
            &json!({ "session_id": s.session_id, "graph": g }),
        )?);
        lines.push('\n');
    }
    run.write("local_graphs.jsonl", &lines)?;
    Ok(json!({ "items": global.n_items(), "hyperedges": hyper.n_edges(), "sessions": prepared.train.len() }))
}

fn train_cmd(run: &mut RunDir, cfg: &TrainingConfig, args: &DataArgs, format: &FormatArg) -> Result<serde_json::Value> {
    let prepared = data::load(args, format, cfg)?;
    eprintln!(
        "training on {} examples over {} items",
        prepared.train_examples.len(),
        prepared.train.n_items()
    );
    let outcome = train(cfg, &prepared.train, &prepared.train_examples, &mut |log| {
        let val = log
            .validation
            .as_ref()
            .and_then(|r| r.precision(20))
            .map(|p| format!(" val P@20 {p}"))
            .unwrap_or_default();
        eprintln!("epoch {} lr {} loss {:.6}{val}", log.epoch, log.lr, log.loss);
    })?;
    outcome.best.save(&run.record("model.ckpt"))?;
    outcome.last.save(&run.record("last.ckpt"))?;
    write_vocab_json(&run.record(data::VOCAB), &prepared.train.vocab)?;
    let mut history = String::new();
    for log in &outcome.history {
        history.push_str(&serde_json::to_string(log)?);
        history.push('\n');
    }
    run.write("history.jsonl", &history)?;
    let model = outcome.best.model()?;
    let report = evaluate(&model.predictor()?, &prepared.test_examples, &DEFAULT_KS)?;
    write_reports(run, &[("cm-gnn".to_string(), &report)])?;
    Ok(json!({ "best_epoch": outcome.best_epoch, "test": report }))
}

fn write_reports(run: &mut RunDir, rows: &[(String, &MetricReport)]) -> Result<()> {
    let table = format_table(rows);
    print!("{table}");
    run.write("report.txt", &table)?;
    let map: serde_json::Map<String, serde_json::Value> = rows
        .iter()
        .map(|(name, r)| Ok((name.clone(), serde_json::to_value(r)?)))
        .collect::<Result<_>>()?;
    run.write("report.json", &pretty(&map)?)?;
    Ok(())
}

fn evaluate_cmd(
    run: &mut RunDir,
    cfg: &TrainingConfig,
    checkpoint: &Path,
    args: &DataArgs,
    format: &FormatArg,
    baselines: bool,
) -> Result<serde_json::Value> {
    let ckpt = load_checkpoint(checkpoint)?;
    let prepared = data::load(args, format, cfg)?;
    let model = ckpt.model()?;
    if prepared.train.n_items() != ckpt.global.n_items() {
        bail!(
            "checkpoint covers {} items but the data has {}",
            ckpt.global.n_items(),
            prepared.train.n_items()
        );
    }
    let mut reports = vec![(
        "cm-gnn".to_string(),
        evaluate(&model.predictor()?, &prepared.test_examples, &DEFAULT_KS)?,
    )];
    if baselines {
        for method in [BaselineMethod::Pop, BaselineMethod::ItemKnn] {
            let scorer = baseline_scorer(method, &prepared.train)?;
            reports.push((
                method.to_string(),
                evaluate(scorer.as_ref(), &prepared.test_examples, &DEFAULT_KS)?,
            ));
        }
    }
    let rows: Vec<(String, &MetricReport)> = reports.iter().map(|(n, r)| (n.clone(), r)).collect();
    write_reports(run, &rows)?;
    Ok(json!({ "checkpoint": checkpoint, "test_examples": prepared.test_examples.len() }))
}

fn resolve_prefix(prefix: &[String], vocab: Option<&Vocab>, n_items: usize) -> Result<Vec<ItemIndex>> {
    prefix
        .iter()
        .map(|raw| {
            let raw = raw.trim();
            let index = match vocab {
                Some(v) => v.get(raw),
                None => raw.parse::<ItemIndex>().ok(),
            };
            match index {
                Some(i) if i >= 1 && i as usize <= n_items => Ok(i),
                _ => bail!("item `{raw}` is not in the vocabulary"),
            }
        })
        .collect()
}

fn recommend(
    run: &mut RunDir,
    checkpoint: &Path,
    prefix: &[String],
    k: usize,
    vocab_path: Option<&Path>,
) -> Result<serde_json::Value> {
    let ckpt = load_checkpoint(checkpoint)?;
    let vocab = data::vocab_for(checkpoint, vocab_path)?;
    let model = ckpt.model()?;
    let items = resolve_prefix(prefix, vocab.as_ref(), ckpt.global.n_items())?;
    let scores = model.predictor()?.scores(&items)?;
    let probs = scores.probs.data();
    let raw = |i: ItemIndex| match &vocab {
        Some(v) => v.raw_id(i).unwrap_or("?").to_string(),
        None => i.to_string(),
    };
    let top: Vec<serde_json::Value> = ranked_items(probs)
        .into_iter()
        .take(k)
        .enumerate()
        .map(|(r, i)| json!({ "rank": r + 1, "item": raw(i), "index": i, "score": probs[i as usize - 1] }))
        .collect();
    let out = json!({ "prefix": prefix, "recommendations": top });
    print!("{}", pretty(&out)?);
    run.write("recommendations.json", &pretty(&out)?)?;
    Ok(json!({ "checkpoint": checkpoint, "k": k }))
}

fn sweep(
    run: &mut RunDir,
    cfg: &TrainingConfig,
    args: &DataArgs,
    format: &FormatArg,
    values: &[f64],
) -> Result<serde_json::Value> {
    let betas = if values.is_empty() {
        DEFAULT_BETAS.to_vec()
    } else {
        values.to_vec()
    };
    let prepared = data::load(args, format, cfg)?;
    eprintln!("sweeping beta over {betas:?}");
    let rows = sweep_beta(cfg, &prepared, &betas)?;
    let csv = sweep_csv(&rows)?;
    print!("{csv}");
    run.write("sweep.csv", &csv)?;
    Ok(json!({ "betas": betas }))
}

fn gradcheck(run: &mut RunDir, cfg: &TrainingConfig) -> Result<serde_json::Value> {
    let reports = gradcheck_suite(cfg.seed)?;
    for r in &reports {
        println!(
            "{:<24} max rel error {:.3e} {}",
            r.label,
            r.max_rel_error,
            if r.passed { "ok" } else { "FAIL" }
        );
    }
    run.write("gradcheck.json", &pretty(&reports)?)?;
    let passed = reports.iter().all(|r| r.passed);
    Ok(json!({ "seed": cfg.seed, "passed": passed }))
}

fn synth(run: &mut RunDir, cfg: &TrainingConfig, synth: &SynthConfig) -> Result<serde_json::Value> {
    let (train, test) = planted_markov_split(synth)?;
    let prepared = prepare_split(train, test, cfg.eval_prefixes)?;
    data::write_split(run, &prepared)?;
    let mut tsv = String::from("session_id\titem_id\ttimestamp\n");
    for corpus in [&prepared.train, &prepared.test] {
        for s in &corpus.sessions {
            for &i in &s.items {
                let raw = corpus.vocab.raw_id(i).unwrap_or("?");
                tsv.push_str(&format!("{}\t{raw}\t{}\n", s.session_id, s.timestamp));
            }
        }
    }
    run.write("sessions.tsv", &tsv)?;
    Ok(json!({ "synthetic": synth }))
}
