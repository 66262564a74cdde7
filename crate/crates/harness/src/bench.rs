//! Per-trial learner timing.

use std::time::Instant;

use cbnn::{Cbnn, LearnerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::error::Result;

#[derive(Debug, Clone, Serialize, PartialEq)]
pub struct BenchRow {
    pub trials: usize,
    pub actions: usize,
    /// Over the final quarter of trials, nanoseconds.
    pub median_ns: u64,
    pub p99_ns: u64,
    pub mean_ns: f64,
}

/// Runs the learner for `trials` trials and times `choose_action` plus
/// `feedback`. Similar trials are the previous trial half the time and a
/// uniformly random earlier trial otherwise, so the trajectory tree mixes
/// long paths with bushy parts. Loss means are fixed per action.
pub fn time_learner(trials: usize, actions: usize, seed: u64) -> Result<Vec<u64>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let means: Vec<f64> = (0..actions).map(|_| rng.random_range(0.2..0.8)).collect();
    let mut learner = Cbnn::new(&LearnerConfig::new(trials, actions, 1.0, seed))?;
    let mut ns = Vec::with_capacity(trials);
    for t in 1..=trials {
        let similar = match t {
            1 => None,
            _ if rng.random_bool(0.5) => Some(t - 1),
            _ => Some(rng.random_range(1..t)),
        };
        let u: f64 = rng.random();
        let start = Instant::now();
        let a = learner.choose_action(similar)?;
        learner.feedback(f64::from(u8::from(u < means[a])))?;
        ns.push(start.elapsed().as_nanos() as u64);
    }
    Ok(ns)
}

fn quantile(sorted: &[u64], q: f64) -> u64 {
    let i = ((sorted.len() - 1) as f64 * q).round() as usize;
    sorted[i]
}

pub fn summarise(trials: usize, actions: usize, ns: &[u64]) -> BenchRow {
    let tail = &ns[ns.len() - ns.len().div_ceil(4)..];
    let mut sorted = tail.to_vec();
    sorted.sort_unstable();
    BenchRow {
        trials,
        actions,
        median_ns: quantile(&sorted, 0.5),
        p99_ns: quantile(&sorted, 0.99),
        mean_ns: tail.iter().sum::<u64>() as f64 / tail.len() as f64,
    }
}

pub fn bench(trial_counts: &[usize], actions: usize, seed: u64) -> Result<Vec<BenchRow>> {
    trial_counts
        .iter()
        .map(|&t| Ok(summarise(t, actions, &time_learner(t, actions, seed)?)))
        .collect()
}

pub fn render(rows: &[BenchRow]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| crate::error::HarnessError::Config(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_row_per_trial_count() {
        let rows = bench(&[64], 4, 1).unwrap();
        assert_eq!(rows.len(), 1);
        assert!(rows[0].median_ns <= rows[0].p99_ns);
        let text = render(&rows).unwrap();
        assert!(text.starts_with("trials,actions,median_ns,p99_ns,mean_ns\n64,4,"));
    }

    #[test]
    fn quarter_of_short_runs() {
        let row = summarise(2, 2, &[5, 9]);
        assert_eq!((row.median_ns, row.p99_ns), (9, 9));
    }
}
