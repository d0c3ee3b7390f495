//! End-to-end acceptance checks, one PASS/FAIL line per criterion.
//!
//! Runs as a plain binary so the lines are printed even when the test
//! runner captures output. Exits non-zero if any criterion fails.

mod common;

use std::time::{Duration, Instant};

use cmgnn_core::corpus::SessionCorpus;
use cmgnn_core::graphs::{build_global_graph, build_hypergraph, build_local_graph};
use cmgnn_core::harness::{
    baseline_scorer, evaluate, gradcheck_suite, planted_markov_split, prepare_split, sweep_beta, sweep_csv, train,
    BaselineMethod, EpochLog, EvalPrefixes, MetricReport, PreparedData, SynthConfig, TrainingConfig, DEFAULT_BETAS,
    DEFAULT_KS,
};
use cmgnn_core::model::Ablation;
use cmgnn_core::numerics::Tensor;
use cmgnn_core::Result;
use common::{dense_incidence, global_oracle, local_oracle, random_corpus};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Epochs per ablation variant and per sweep point.
const SHORT_EPOCHS: usize = 1;
/// Epochs of each determinism run.
const DETERMINISM_EPOCHS: usize = 2;

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        passed,
        detail: detail.into(),
    }
}

fn synthetic() -> Result<PreparedData> {
    let (train, test) = planted_markov_split(&SynthConfig::default())?;
    prepare_split(train, test, EvalPrefixes::All)
}

fn gradient_suite() -> Result<Outcome> {
    let start = Instant::now();
    let reports = gradcheck_suite(TrainingConfig::default().seed)?;
    let elapsed = start.elapsed();
    let worst = reports.iter().map(|r| r.max_rel_error).fold(0.0, f64::max);
    let all = reports.iter().all(|r| r.passed);
    Ok(outcome(
        all && elapsed < Duration::from_secs(60),
        format!(
            "{} configurations, worst relative error {worst:.2e}, {elapsed:.1?}",
            reports.len()
        ),
    ))
}

fn graph_oracles() -> Result<Outcome> {
    let mut mismatches = Vec::new();
    for seed in 0..100 {
        let c = random_corpus(1000 + seed, 50, 10);
        for s in c.item_sequences() {
            let g = build_local_graph(s)?;
            if (g.nodes, g.edges) != local_oracle(s) {
                mismatches.push(format!("local, corpus {seed}"));
            }
        }
        for eps in 1..=3 {
            if build_global_graph(&c, eps, 12)?.neighbors != global_oracle(&c, eps, 12) {
                mismatches.push(format!("global eps={eps}, corpus {seed}"));
            }
        }
        let h = build_hypergraph(&c)?;
        let dense: Vec<f64> = dense_incidence(&c).into_iter().flatten().collect();
        if h.incidence().to_dense().data() != dense.as_slice() {
            mismatches.push(format!("hyper, corpus {seed}"));
        }
    }
    Ok(outcome(
        mismatches.is_empty(),
        match mismatches.first() {
            None => "100 corpora, every builder matches".to_string(),
            Some(first) => format!("{} mismatches, first: {first}", mismatches.len()),
        },
    ))
}

fn hyper_fixed_point() -> Result<Outcome> {
    let mut worst: f64 = 0.0;
    for seed in 0..100 {
        let c = random_corpus(2000 + seed, 50, 10);
        let op = build_hypergraph(&c)?.operator()?;
        let ones = Tensor::matrix(c.n_items(), 1, vec![1.0; c.n_items()])?;
        for v in op.apply(&ones).data() {
            worst = worst.max((v - 1.0).abs());
        }
    }
    let c = SessionCorpus::from_index_sessions(4, vec![vec![1, 2, 3], vec![3, 4]])?;
    let op = build_hypergraph(&c)?.operator()?;
    let x1 = op.apply(&Tensor::matrix(4, 1, vec![1.0, 0.0, 0.0, 0.0])?);
    let want = [1.0 / 3.0, 1.0 / 3.0, 1.0 / 6.0, 0.0];
    let example: f64 = x1
        .data()
        .iter()
        .zip(want)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    Ok(outcome(
        worst < 1e-12 && example < 1e-12,
        format!("max |Δ| {worst:.1e} over 100 hypergraphs, worked example |Δ| {example:.1e}"),
    ))
}

fn attention_normalization(history: &[EpochLog]) -> Outcome {
    let audits: Vec<_> = history.iter().filter_map(|h| h.attention).collect();
    let groups: usize = audits.iter().map(|a| a.groups).sum();
    let worst = audits.iter().map(|a| a.max_deviation).fold(0.0, f64::max);
    outcome(
        audits.len() == history.len() && !history.is_empty() && groups > 0 && worst <= 1e-12,
        format!(
            "{groups} softmax groups over {} epochs, max |Σ−1| {worst:.1e}",
            history.len()
        ),
    )
}

struct RandomScorer;

impl cmgnn_core::harness::Scorer for RandomScorer {
    fn n_items(&self) -> usize {
        100
    }

    fn scores(&self, prefix: &[u32]) -> Result<Vec<f64>> {
        let mut rng = ChaCha8Rng::seed_from_u64(prefix.iter().fold(17, |h, &i| h * 31 + i as u64));
        Ok((0..100).map(|_| rng.random()).collect())
    }
}

fn metric_correctness() -> Result<Outcome> {
    let fixture = MetricReport::from_ranks(&[1, 3, 12, 30], &[10])?;
    let (p, m) = (
        fixture.precision(10).unwrap_or(f64::NAN),
        fixture.mrr(10).unwrap_or(f64::NAN),
    );
    let fixture_ok = (p - 50.0).abs() <= 0.01 && (m - 33.33).abs() <= 0.01;

    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let examples: Vec<_> = (0..5000u32)
        .map(|k| cmgnn_core::corpus::LabeledExample {
            prefix: vec![k % 100 + 1, k / 100 + 1],
            target: rng.random_range(1..=100),
        })
        .collect();
    let n = examples.len() as f64;
    let random = evaluate(&RandomScorer, &examples, &[10])?
        .precision(10)
        .unwrap_or(f64::NAN);
    let se = 100.0 * (0.1 * 0.9 / n).sqrt();
    Ok(outcome(
        fixture_ok && (random - 10.0).abs() < 3.0 * se,
        format!(
            "fixture P@10 {p:.2} MRR@10 {m:.2}; random P@10 {random:.2} (3 SE = {:.2})",
            3.0 * se
        ),
    ))
}

struct FullRun {
    history: Vec<EpochLog>,
    outcome: Outcome,
}

fn synthetic_learnability(data: &PreparedData) -> Result<FullRun> {
    let start = Instant::now();
    let cfg = TrainingConfig {
        audit: true,
        ..TrainingConfig::default()
    };
    let out = train(&cfg, &data.train, &data.train_examples, &mut |_| {})?;
    let model = out.best.model()?;
    let ours = evaluate(&model.predictor()?, &data.test_examples, &DEFAULT_KS)?;
    let pop = evaluate(
        baseline_scorer(BaselineMethod::Pop, &data.train)?.as_ref(),
        &data.test_examples,
        &DEFAULT_KS,
    )?;
    let elapsed = start.elapsed();
    let (p_ours, p_pop) = (
        ours.precision(10).unwrap_or(0.0),
        pop.precision(10).unwrap_or(f64::INFINITY),
    );
    let losses: Vec<f64> = out.history.iter().map(|h| h.loss).collect();
    let loss_ok = losses.len() >= 5 && losses[4] < losses[0];
    Ok(FullRun {
        outcome: outcome(
            p_ours > p_pop && loss_ok && elapsed < Duration::from_secs(600),
            format!(
                "P@10 {p_ours:.2} vs POP {p_pop:.2}; loss epoch 1 {:.4}, epoch 5 {:.4}; {elapsed:.0?}",
                losses.first().copied().unwrap_or(f64::NAN),
                losses.get(4).copied().unwrap_or(f64::NAN),
            ),
        ),
        history: out.history,
    })
}

fn well_formed(report: &MetricReport) -> bool {
    let parsed: std::result::Result<MetricReport, _> = serde_json::from_str(&report.to_json());
    parsed.ok().as_ref() == Some(report)
        && DEFAULT_KS.iter().all(|&k| {
            let (p, m) = (report.precision(k), report.mrr(k));
            matches!((p, m), (Some(p), Some(m)) if (0.0..=100.0).contains(&p) && (0.0..=100.0).contains(&m) && m <= p)
        })
}

fn ablation_structure(data: &PreparedData) -> Result<Outcome> {
    let mut bad = Vec::new();
    for ablation in Ablation::ALL {
        let mut cfg = TrainingConfig {
            epochs: SHORT_EPOCHS,
            ..TrainingConfig::default()
        };
        cfg.ablations.insert(ablation);
        let run = train(&cfg, &data.train, &data.train_examples, &mut |_| {})
            .and_then(|out| evaluate(&out.best.model()?.predictor()?, &data.test_examples, &DEFAULT_KS));
        match run {
            Ok(report) if well_formed(&report) => {}
            Ok(_) => bad.push(format!("{ablation}: malformed report")),
            Err(e) => bad.push(format!("{ablation}: {e}")),
        }
    }
    let cfg = TrainingConfig {
        epochs: SHORT_EPOCHS,
        ..TrainingConfig::default()
    };
    let csv = sweep_csv(&sweep_beta(&cfg, data, &DEFAULT_BETAS)?)?;
    let lines: Vec<&str> = csv.lines().collect();
    let csv_ok = lines.len() == 6 && lines[0] == "beta,P@10,P@20,MRR@10,MRR@20";
    Ok(outcome(
        bad.is_empty() && csv_ok,
        format!(
            "{} of 8 variants well-formed, sweep CSV {} data rows ({SHORT_EPOCHS} epoch each){}",
            8 - bad.len(),
            lines.len().saturating_sub(1),
            bad.first().map(|b| format!("; {b}")).unwrap_or_default(),
        ),
    ))
}

fn determinism(data: &PreparedData) -> Result<Outcome> {
    let cfg = TrainingConfig {
        epochs: DETERMINISM_EPOCHS,
        ..TrainingConfig::default()
    };
    let run = || -> Result<(Vec<u8>, String)> {
        let out = train(&cfg, &data.train, &data.train_examples, &mut |_| {})?;
        let report = evaluate(&out.best.model()?.predictor()?, &data.test_examples, &DEFAULT_KS)?;
        Ok((out.best.to_bytes()?, report.to_json()))
    };
    let (a, b) = (run()?, run()?);
    Ok(outcome(
        a == b,
        format!("checkpoint {} bytes, {} epochs per run", a.0.len(), DETERMINISM_EPOCHS),
    ))
}

fn lr_schedule(history: &[EpochLog]) -> Outcome {
    let want = [
        0.001, 0.001, 0.001, 0.0001, 0.0001, 0.0001, 0.00001, 0.00001, 0.00001, 0.000001,
    ];
    let got: Vec<f64> = history.iter().map(|h| h.lr).collect();
    outcome(got == want, format!("{got:?}"))
}

fn report(n: usize, name: &str, result: Result<Outcome>, failures: &mut usize) {
    let (passed, detail) = match result {
        Ok(o) => (o.passed, o.detail),
        Err(e) => (false, format!("error: {e}")),
    };
    if !passed {
        *failures += 1;
    }
    println!(
        "criterion {n} {name}: {} ({detail})",
        if passed { "PASS" } else { "FAIL" }
    );
}

fn main() {
    let mut failures = 0;
    report(1, "gradient suite", gradient_suite(), &mut failures);
    report(2, "graph-builder oracles", graph_oracles(), &mut failures);
    report(3, "hypergraph fixed point", hyper_fixed_point(), &mut failures);

    let data = synthetic();
    let full = data
        .as_ref()
        .map_err(|e| e.to_string())
        .and_then(|d| synthetic_learnability(d).map_err(|e| e.to_string()));
    let history = full.as_ref().map(|f| f.history.clone()).unwrap_or_default();
    report(
        4,
        "attention normalization",
        Ok(attention_normalization(&history)),
        &mut failures,
    );
    report(5, "metric correctness", metric_correctness(), &mut failures);
    let learn = match full {
        Ok(f) => Ok(f.outcome),
        Err(e) => Ok(outcome(false, e)),
    };
    report(6, "synthetic learnability", learn, &mut failures);
    match &data {
        Ok(d) => {
            report(7, "ablation structure", ablation_structure(d), &mut failures);
            report(8, "determinism", determinism(d), &mut failures);
        }
        Err(e) => {
            report(
                7,
                "ablation structure",
                Ok(outcome(false, e.to_string())),
                &mut failures,
            );
            report(8, "determinism", Ok(outcome(false, e.to_string())), &mut failures);
        }
    }
    report(9, "learning-rate schedule", Ok(lr_schedule(&history)), &mut failures);

    println!("acceptance: {} of 9 criteria passed", 9 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
