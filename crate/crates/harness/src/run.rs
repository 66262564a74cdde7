//! Running an experiment and writing its trace.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use cbnn::metric::{MetricStore, Reduction};
use cbnn::oracle::policy_complexity;
use cbnn::{Cbnn, LearnerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::config::{Baseline, EnvironmentConfig, ExperimentConfig};
use crate::env::{self, FileReplay};
use crate::error::{HarnessError, Result};

const BASELINE_STREAM: u64 = 2;

/// One row of the trace.
#[derive(Debug, Clone, PartialEq)]
pub struct Row {
    pub t: usize,
    pub context: Vec<f64>,
    pub similar: Option<usize>,
    pub action: usize,
    pub loss: f64,
    pub cum_loss: f64,
    pub comparator: usize,
    pub comparator_loss: f64,
    pub cum_comparator_loss: f64,
    pub cum_regret: f64,
    pub losses: Vec<f64>,
    /// Cumulative regret of each requested baseline, in config order.
    pub baselines: Vec<f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub config_hash: String,
    pub trials: usize,
    pub final_regret: f64,
    pub cum_loss: f64,
    pub comparator_loss: f64,
    /// Complexity of the comparator policy on the induced similar-trial
    /// sequence.
    pub comparator_phi: usize,
    pub baseline_regret: BTreeMap<String, f64>,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub config: ExperimentConfig,
    pub rows: Vec<Row>,
    pub summary: Summary,
    /// Learner wall time per trial, nanoseconds.
    pub learner_ns: Vec<u64>,
}

impl RunOutput {
    /// Mean per-trial regret over trials `from..to` (zero-based, half open).
    pub fn mean_regret(&self, from: usize, to: usize) -> f64 {
        let at = |i: usize| {
            if i == 0 {
                0.0
            } else {
                self.rows[i - 1].cum_regret
            }
        };
        (at(to) - at(from)) / (to - from) as f64
    }
}

/// Resolves `config` and runs it in memory.
pub fn run(config: &ExperimentConfig) -> Result<RunOutput> {
    config.validate()?;
    let dim = match (&config.environment, config.dim()) {
        (_, Some(d)) => d,
        (EnvironmentConfig::FileReplay { path }, None) => {
            let r = FileReplay::open(path, config.actions)?;
            env::Environment::dim(&r)
        }
        _ => unreachable!("only replay lacks a dimension"),
    };
    let config = config.resolve(dim)?;
    let mut environment = env::build(&config)?;
    let learner_config = LearnerConfig::new(
        config.trials,
        config.actions,
        config.rho_value().expect("resolved"),
        config.seed,
    );
    let mut learner = Cbnn::new(&learner_config)?;
    let mut reduction = Reduction::new(MetricStore::new(dim, config.backend.kind())?);
    let mut baseline_rng = ChaCha8Rng::seed_from_u64(config.seed);
    baseline_rng.set_stream(BASELINE_STREAM);

    let mut rows: Vec<Row> = Vec::with_capacity(config.trials);
    let mut learner_ns = Vec::with_capacity(config.trials);
    let mut similar_seq = Vec::with_capacity(config.trials);
    let mut comparator_seq = Vec::with_capacity(config.trials);
    let mut totals = vec![0.0; config.actions];
    let (mut cum_loss, mut cum_cmp) = (0.0, 0.0);
    let mut cum_uniform = 0.0;
    for t in 1..=config.trials {
        let trial = environment.next_trial()?;
        let similar = reduction.next(&trial.context)?;
        let start = Instant::now();
        let action = learner.choose_action(similar)?;
        let loss = trial.losses[action];
        learner.feedback(loss)?;
        learner_ns.push(start.elapsed().as_nanos() as u64);

        let comparator_loss = trial.losses[trial.comparator];
        cum_loss += loss;
        cum_cmp += comparator_loss;
        let uniform = baseline_rng.random_range(0..config.actions);
        cum_uniform += trial.losses[uniform] - comparator_loss;
        for (total, l) in totals.iter_mut().zip(&trial.losses) {
            *total += l;
        }
        similar_seq.push(similar.unwrap_or(0));
        comparator_seq.push(trial.comparator);
        let baselines = config
            .baselines
            .iter()
            .map(|b| match b {
                Baseline::UniformRandom => cum_uniform,
                Baseline::PerClusterOptimal => 0.0,
                // filled in once the best action is known
                Baseline::BestFixedActionHindsight => 0.0,
            })
            .collect();
        rows.push(Row {
            t,
            context: trial.context,
            similar,
            action,
            loss,
            cum_loss,
            comparator: trial.comparator,
            comparator_loss,
            cum_comparator_loss: cum_cmp,
            cum_regret: cum_loss - cum_cmp,
            losses: trial.losses,
            baselines,
        });
    }

    let best_fixed = (0..config.actions)
        .min_by(|&a, &b| totals[a].total_cmp(&totals[b]))
        .expect("at least two actions");
    if let Some(slot) = config
        .baselines
        .iter()
        .position(|b| *b == Baseline::BestFixedActionHindsight)
    {
        let mut cum = 0.0;
        for row in rows.iter_mut() {
            cum += row.losses[best_fixed] - row.comparator_loss;
            row.baselines[slot] = cum;
        }
    }
    let last = rows.last().expect("at least two trials");
    let baseline_regret = config
        .baselines
        .iter()
        .zip(&last.baselines)
        .map(|(b, r)| (b.name().to_string(), *r))
        .collect();
    let summary = Summary {
        config_hash: config.hash(),
        trials: config.trials,
        final_regret: last.cum_regret,
        cum_loss,
        comparator_loss: cum_cmp,
        comparator_phi: policy_complexity(&comparator_seq, &similar_seq)?,
        baseline_regret,
    };
    Ok(RunOutput {
        config,
        rows,
        summary,
        learner_ns,
    })
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(f64::to_string).collect::<Vec<_>>().join(";")
}

pub const COLUMNS: [&str; 11] = [
    "t",
    "context",
    "similar",
    "action",
    "loss",
    "cum_loss",
    "comparator",
    "comparator_loss",
    "cum_comparator_loss",
    "cum_regret",
    "losses",
];

/// The trace as CSV text: a `#` preamble, a header row, one row per trial
/// and a `#` footer.
pub fn render_trace(out: &RunOutput) -> Result<String> {
    let mut header: Vec<String> = COLUMNS.iter().map(|c| c.to_string()).collect();
    header.extend(
        out.config
            .baselines
            .iter()
            .map(|b| format!("cum_regret_{}", b.name())),
    );
    let mut text = String::new();
    writeln!(text, "# cbnn trace").unwrap();
    writeln!(text, "# config_hash={}", out.summary.config_hash).unwrap();
    writeln!(text, "# columns: {}", header.join(", ")).unwrap();
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(&header)?;
    for r in &out.rows {
        let mut rec = vec![
            r.t.to_string(),
            join(&r.context),
            r.similar.map_or(String::new(), |n| n.to_string()),
            r.action.to_string(),
            r.loss.to_string(),
            r.cum_loss.to_string(),
            r.comparator.to_string(),
            r.comparator_loss.to_string(),
            r.cum_comparator_loss.to_string(),
            r.cum_regret.to_string(),
            join(&r.losses),
        ];
        rec.extend(r.baselines.iter().map(f64::to_string));
        w.write_record(&rec)?;
    }
    let body = w
        .into_inner()
        .map_err(|e| HarnessError::Config(format!("csv buffer: {e}")))?;
    text.push_str(std::str::from_utf8(&body).expect("csv output is utf-8"));
    writeln!(text, "# comparator_phi={}", out.summary.comparator_phi).unwrap();
    writeln!(text, "# final_regret={}", out.summary.final_regret).unwrap();
    Ok(text)
}

/// Paths of the sidecar files next to a trace.
pub fn sidecars(trace: &Path) -> (PathBuf, PathBuf) {
    let mut json = trace.as_os_str().to_owned();
    json.push(".json");
    let mut timing = trace.as_os_str().to_owned();
    timing.push(".timing.csv");
    (json.into(), timing.into())
}

/// Writes the trace, the resolved-config sidecar and the timing sidecar.
pub fn write_outputs(out: &RunOutput, trace: &Path) -> Result<()> {
    fs::write(trace, render_trace(out)?).map_err(|e| HarnessError::io(trace, e))?;
    let (json, timing) = sidecars(trace);
    let sidecar = serde_json::json!({ "config": out.config, "summary": out.summary });
    let text = serde_json::to_string_pretty(&sidecar)? + "\n";
    fs::write(&json, text).map_err(|e| HarnessError::io(&json, e))?;
    let mut t = String::from("t,learner_ns\n");
    for (i, ns) in out.learner_ns.iter().enumerate() {
        writeln!(t, "{},{ns}", i + 1).unwrap();
    }
    writeln!(
        t,
        "# total_learner_ns={}",
        out.learner_ns.iter().sum::<u64>()
    )
    .unwrap();
    fs::write(&timing, t).map_err(|e| HarnessError::io(&timing, e))
}
