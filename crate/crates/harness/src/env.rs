//! Synthetic and replayed environments.
//!
//! Every environment hands out, per trial, a context, the full loss vector
//! and the action of the comparator policy on that trial.

use std::path::Path;

use cbnn::metric::{Euclidean, GridQuantiser, Metric};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::config::{Density, EnvironmentConfig, ExperimentConfig};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Trial {
    pub context: Vec<f64>,
    pub losses: Vec<f64>,
    pub comparator: usize,
}

pub trait Environment {
    fn dim(&self) -> usize;
    fn next_trial(&mut self) -> Result<Trial>;
}

/// Stream used by environments; the learner draws from stream 0.
pub const ENV_STREAM: u64 = 1;

fn env_rng(seed: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(ENV_STREAM);
    rng
}

fn bernoulli(rng: &mut ChaCha8Rng, means: &[f64]) -> Vec<f64> {
    means
        .iter()
        .map(|&p| f64::from(u8::from(rng.random_bool(p))))
        .collect()
}

#[derive(Debug, Clone)]
pub struct Clusters {
    centres: Vec<Vec<f64>>,
    radius: f64,
    best: Vec<usize>,
    means: Vec<Vec<f64>>,
    rng: ChaCha8Rng,
    last_cluster: usize,
}

impl Clusters {
    /// Places `clusters` centres in `[radius, 1 - radius]^dim` at least
    /// `separation` apart, by rejection.
    pub fn new(
        dim: usize,
        radius: f64,
        separation: f64,
        best: Vec<usize>,
        means: Vec<Vec<f64>>,
        seed: u64,
    ) -> Result<Self> {
        let mut rng = env_rng(seed);
        let mut centres: Vec<Vec<f64>> = Vec::new();
        let mut attempts = 0;
        while centres.len() < best.len() {
            attempts += 1;
            if attempts > 100_000 {
                return Err(HarnessError::Config(format!(
                    "cannot place {} clusters {separation} apart in the unit cube",
                    best.len()
                )));
            }
            let c: Vec<f64> = (0..dim)
                .map(|_| rng.random_range(radius..=1.0 - radius))
                .collect();
            if centres
                .iter()
                .all(|o| Euclidean.distance(o, &c) >= separation)
            {
                centres.push(c);
            }
        }
        Ok(Self {
            centres,
            radius,
            best,
            means,
            rng,
            last_cluster: 0,
        })
    }

    pub fn centres(&self) -> &[Vec<f64>] {
        &self.centres
    }

    /// Cluster of the most recent trial.
    pub fn last_cluster(&self) -> usize {
        self.last_cluster
    }
}

impl Environment for Clusters {
    fn dim(&self) -> usize {
        self.centres[0].len()
    }

    fn next_trial(&mut self) -> Result<Trial> {
        let k = self.rng.random_range(0..self.centres.len());
        let r = self.radius;
        let offset = loop {
            let o: Vec<f64> = (0..self.dim())
                .map(|_| self.rng.random_range(-r..=r))
                .collect();
            if o.iter().map(|x| x * x).sum::<f64>() <= r * r {
                break o;
            }
        };
        let context = self.centres[k]
            .iter()
            .zip(&offset)
            .map(|(c, o)| (c + o).clamp(0.0, 1.0))
            .collect();
        let losses = bernoulli(&mut self.rng, &self.means[k]);
        self.last_cluster = k;
        Ok(Trial {
            context,
            losses,
            comparator: self.best[k],
        })
    }
}

#[derive(Debug, Clone)]
pub struct GridStochastic {
    dim: usize,
    density: Density,
    bands: usize,
    actions: usize,
    gap: f64,
    quantiser: GridQuantiser,
    rng: ChaCha8Rng,
}

impl GridStochastic {
    pub fn new(
        dim: usize,
        density: Density,
        bands: usize,
        actions: usize,
        gap: f64,
        q: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Self {
            dim,
            density,
            bands,
            actions,
            gap,
            quantiser: GridQuantiser::new(q, dim)?,
            rng: env_rng(seed),
        })
    }

    /// Ground-truth best action for a raw context.
    pub fn best_action(&self, z: &[f64]) -> usize {
        let band = ((z[0] * self.bands as f64) as usize).min(self.bands - 1);
        band % self.actions
    }
}

impl Environment for GridStochastic {
    fn dim(&self) -> usize {
        self.dim
    }

    fn next_trial(&mut self) -> Result<Trial> {
        let z: Vec<f64> = (0..self.dim)
            .map(|_| {
                let u: f64 = self.rng.random();
                match self.density {
                    Density::Uniform => u,
                    Density::Power { exponent } => u.powf(exponent),
                }
            })
            .collect();
        let best = self.best_action(&z);
        let means: Vec<f64> = (0..self.actions)
            .map(|a| {
                if a == best {
                    0.5 - self.gap / 2.0
                } else {
                    0.5 + self.gap / 2.0
                }
            })
            .collect();
        let losses = bernoulli(&mut self.rng, &means);
        Ok(Trial {
            context: self.quantiser.quantise(&z)?,
            losses,
            comparator: best,
        })
    }
}

/// Trials read from a trace file, in order.
#[derive(Debug, Clone)]
pub struct FileReplay {
    trials: Vec<Trial>,
    next: usize,
}

pub(crate) fn parse_list(s: &str) -> Result<Vec<f64>> {
    s.split(';')
        .map(|x| {
            x.trim()
                .parse::<f64>()
                .map_err(|e| HarnessError::Config(format!("bad number {x:?}: {e}")))
        })
        .collect()
}

impl FileReplay {
    /// Reads the `context`, `losses` and `comparator` columns of a trace.
    pub fn open(path: &Path, actions: usize) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .from_path(path)
            .map_err(|e| match e.kind() {
                csv::ErrorKind::Io(_) => HarnessError::Config(format!("{}: {e}", path.display())),
                _ => e.into(),
            })?;
        let headers = reader.headers()?.clone();
        let col = |name: &str| {
            headers.iter().position(|h| h == name).ok_or_else(|| {
                HarnessError::Config(format!("{}: no {name} column", path.display()))
            })
        };
        let (ci, li, pi) = (col("context")?, col("losses")?, col("comparator")?);
        let mut trials = Vec::new();
        for row in reader.records() {
            let row = row?;
            let losses = parse_list(&row[li])?;
            if losses.len() != actions || losses.iter().any(|l| !(0.0..=1.0).contains(l)) {
                return Err(HarnessError::Config(format!(
                    "{}: row {} needs {actions} losses in [0, 1]",
                    path.display(),
                    trials.len() + 1
                )));
            }
            let comparator: usize = row[pi]
                .parse()
                .map_err(|e| HarnessError::Config(format!("bad comparator {:?}: {e}", &row[pi])))?;
            trials.push(Trial {
                context: parse_list(&row[ci])?,
                losses,
                comparator,
            });
        }
        let dim = trials.first().map_or(0, |t| t.context.len());
        if dim == 0 || trials.iter().any(|t| t.context.len() != dim) {
            return Err(HarnessError::Config(format!(
                "{}: contexts are empty or ragged",
                path.display()
            )));
        }
        Ok(Self { trials, next: 0 })
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

impl Environment for FileReplay {
    fn dim(&self) -> usize {
        self.trials[0].context.len()
    }

    fn next_trial(&mut self) -> Result<Trial> {
        let t =
            self.trials.get(self.next).cloned().ok_or_else(|| {
                HarnessError::Config("replay file has fewer rows than trials".into())
            })?;
        self.next += 1;
        Ok(t)
    }
}

/// Builds the environment described by a resolved config.
pub fn build(config: &ExperimentConfig) -> Result<Box<dyn Environment>> {
    Ok(match &config.environment {
        EnvironmentConfig::Clusters {
            dim,
            radius,
            separation,
            best_actions,
            means,
            ..
        } => {
            let best = best_actions
                .clone()
                .ok_or_else(|| HarnessError::Config("config is not resolved".into()))?;
            let means = means
                .clone()
                .ok_or_else(|| HarnessError::Config("config is not resolved".into()))?;
            Box::new(Clusters::new(
                *dim,
                *radius,
                *separation,
                best,
                means,
                config.seed,
            )?)
        }
        EnvironmentConfig::GridStochastic {
            dim,
            density,
            bands,
            gap,
        } => {
            let q = config
                .q_value()
                .ok_or_else(|| HarnessError::Config("config is not resolved".into()))?;
            Box::new(GridStochastic::new(
                *dim,
                *density,
                *bands,
                config.actions,
                *gap,
                q,
                config.seed,
            )?)
        }
        EnvironmentConfig::FileReplay { path } => {
            let replay = FileReplay::open(path, config.actions)?;
            if replay.len() < config.trials {
                return Err(HarnessError::Config(format!(
                    "{} has {} rows but {} trials were requested",
                    path.display(),
                    replay.len(),
                    config.trials
                )));
            }
            Box::new(replay)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clusters_are_separated_and_tight() {
        let best = vec![0, 1, 2];
        let means = vec![vec![0.2; 4]; 3];
        let mut env = Clusters::new(2, 0.05, 0.4, best.clone(), means, 3).unwrap();
        let centres = env.centres().to_vec();
        for i in 0..3 {
            for j in 0..i {
                assert!(Euclidean.distance(&centres[i], &centres[j]) >= 0.4);
            }
        }
        for _ in 0..500 {
            let t = env.next_trial().unwrap();
            let k = env.last_cluster();
            assert!(Euclidean.distance(&t.context, &centres[k]) <= 0.05 + 1e-12);
            assert_eq!(t.comparator, best[k]);
            assert_eq!(t.losses.len(), 4);
        }
    }

    #[test]
    fn impossible_packing_is_a_config_error() {
        let err = Clusters::new(1, 0.1, 0.9, vec![0; 3], vec![vec![0.5; 2]; 3], 0).unwrap_err();
        assert!(err.is_config());
    }

    #[test]
    fn grid_contexts_are_quantised() {
        let mut env =
            GridStochastic::new(2, Density::Power { exponent: 2.0 }, 3, 2, 0.2, 5, 1).unwrap();
        for _ in 0..200 {
            let t = env.next_trial().unwrap();
            for c in &t.context {
                assert!(((c * 5.0) - (c * 5.0).round()).abs() < 1e-12);
            }
            assert!(t.comparator < 2);
        }
    }
}
