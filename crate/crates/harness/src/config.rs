//! Experiment configuration, read from JSON.

use std::path::{Path, PathBuf};

use cbnn::metric::{default_params, BackendKind};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AutoTag {
    Auto,
}

/// A numeric parameter or `"auto"`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Param {
    Auto(AutoTag),
    Fixed(f64),
}

impl Default for Param {
    fn default() -> Self {
        Param::Auto(AutoTag::Auto)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Backend {
    #[default]
    Exact,
    Grid {
        cells: usize,
    },
}

impl Backend {
    pub fn kind(&self) -> BackendKind {
        match *self {
            Backend::Exact => BackendKind::ExactScan,
            Backend::Grid { cells } => BackendKind::Grid { cells },
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Baseline {
    UniformRandom,
    BestFixedActionHindsight,
    PerClusterOptimal,
}

impl Baseline {
    pub fn name(&self) -> &'static str {
        match self {
            Baseline::UniformRandom => "uniform_random",
            Baseline::BestFixedActionHindsight => "best_fixed_action",
            Baseline::PerClusterOptimal => "per_cluster_optimal",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "shape")]
pub enum Density {
    #[default]
    Uniform,
    /// Each coordinate is `u^exponent` for uniform `u`.
    Power { exponent: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind", deny_unknown_fields)]
pub enum EnvironmentConfig {
    /// Well-separated balls in `[0, 1]^dim`, each with its own best action.
    Clusters {
        dim: usize,
        clusters: usize,
        radius: f64,
        separation: f64,
        gap: f64,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        best_actions: Option<Vec<usize>>,
        /// Per cluster, per action Bernoulli loss means.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        means: Option<Vec<Vec<f64>>>,
    },
    /// Contexts drawn from a density on the unit cube, rounded to a grid.
    /// The best action depends on which of `bands` slabs along the first
    /// axis the raw context falls in.
    GridStochastic {
        dim: usize,
        #[serde(default)]
        density: Density,
        bands: usize,
        gap: f64,
    },
    /// Contexts and full loss vectors read from a trace file.
    FileReplay { path: PathBuf },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub environment: EnvironmentConfig,
    pub trials: usize,
    pub actions: usize,
    /// Declared approximation factor of the nearest-neighbour backend.
    #[serde(default = "one")]
    pub c: f64,
    #[serde(default)]
    pub rho: Param,
    /// Grid resolution for the grid-stochastic environment.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Param>,
    #[serde(default)]
    pub backend: Backend,
    #[serde(default)]
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output: Option<PathBuf>,
    #[serde(default)]
    pub baselines: Vec<Baseline>,
}

fn one() -> f64 {
    1.0
}

fn bad(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

fn probability(name: &str, p: f64) -> Result<()> {
    if (0.0..=1.0).contains(&p) {
        Ok(())
    } else {
        Err(bad(format!("{name} = {p} is not in [0, 1]")))
    }
}

impl ExperimentConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        Ok(serde_json::from_str(&text)?)
    }

    /// Context dimension, when the environment declares it.
    pub fn dim(&self) -> Option<usize> {
        match &self.environment {
            EnvironmentConfig::Clusters { dim, .. }
            | EnvironmentConfig::GridStochastic { dim, .. } => Some(*dim),
            EnvironmentConfig::FileReplay { .. } => None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.trials < 2 {
            return Err(bad(format!(
                "trials must be at least 2, got {}",
                self.trials
            )));
        }
        if self.actions < 2 || !self.actions.is_power_of_two() {
            return Err(bad(format!(
                "actions must be a power of two >= 2, got {}",
                self.actions
            )));
        }
        if self.c.is_nan() || self.c < 1.0 {
            return Err(bad(format!("c must be at least 1, got {}", self.c)));
        }
        if self.c < self.backend.kind().approximation() {
            return Err(bad("c is smaller than the backend's approximation factor"));
        }
        if let Param::Fixed(rho) = self.rho {
            if !(rho > 0.0 && rho.is_finite()) {
                return Err(bad(format!("rho must be positive, got {rho}")));
            }
        }
        if let Some(Param::Fixed(q)) = self.q {
            if !(q >= 1.0 && q.fract() == 0.0) {
                return Err(bad(format!("q must be a positive integer, got {q}")));
            }
        }
        if matches!(self.backend, Backend::Grid { cells: 0 }) {
            return Err(bad("grid backend needs at least one cell"));
        }
        match &self.environment {
            EnvironmentConfig::Clusters {
                dim,
                clusters,
                radius,
                separation,
                gap,
                best_actions,
                means,
            } => {
                if *dim == 0 || *clusters == 0 {
                    return Err(bad("clusters need dim >= 1 and at least one cluster"));
                }
                if !(*radius >= 0.0 && *separation >= 0.0) || 2.0 * radius > 1.0 {
                    return Err(bad(
                        "radius and separation must be nonnegative with radius <= 1/2",
                    ));
                }
                probability("gap", *gap)?;
                if let Some(best) = best_actions {
                    if best.len() != *clusters || best.iter().any(|&a| a >= self.actions) {
                        return Err(bad("best_actions needs one valid action per cluster"));
                    }
                }
                if let Some(means) = means {
                    if means.len() != *clusters || means.iter().any(|row| row.len() != self.actions)
                    {
                        return Err(bad(
                            "means needs one row per cluster and one entry per action",
                        ));
                    }
                    for &p in means.iter().flatten() {
                        probability("loss mean", p)?;
                    }
                }
            }
            EnvironmentConfig::GridStochastic {
                dim,
                density,
                bands,
                gap,
            } => {
                if *dim == 0 || *bands == 0 {
                    return Err(bad("grid-stochastic needs dim >= 1 and bands >= 1"));
                }
                if let Density::Power { exponent } = density {
                    if !(*exponent > 0.0 && exponent.is_finite()) {
                        return Err(bad("density exponent must be positive"));
                    }
                }
                probability("gap", *gap)?;
            }
            EnvironmentConfig::FileReplay { .. } => {}
        }
        Ok(())
    }

    /// Fills every `"auto"` and default so the result fully determines the
    /// run. `dim` is needed for file replay, whose dimension comes from the
    /// file.
    pub fn resolve(&self, dim: usize) -> Result<Self> {
        self.validate()?;
        let mut out = self.clone();
        let auto = || {
            default_params(self.trials, self.actions, dim)
                .map_err(|e| bad(format!("cannot derive automatic parameters: {e}")))
        };
        if let Param::Auto(_) = self.rho {
            out.rho = Param::Fixed(auto()?.1);
        }
        match &mut out.environment {
            EnvironmentConfig::GridStochastic { .. } => {
                if let None | Some(Param::Auto(_)) = self.q {
                    out.q = Some(Param::Fixed(auto()?.0 as f64));
                }
            }
            EnvironmentConfig::Clusters {
                clusters,
                gap,
                best_actions,
                means,
                ..
            } => {
                out.q = None;
                let best = best_actions
                    .get_or_insert_with(|| (0..*clusters).map(|i| i % self.actions).collect());
                if means.is_none() {
                    *means = Some(
                        best.iter()
                            .map(|&b| {
                                (0..self.actions)
                                    .map(|a| {
                                        if a == b {
                                            0.5 - *gap / 2.0
                                        } else {
                                            0.5 + *gap / 2.0
                                        }
                                    })
                                    .collect()
                            })
                            .collect(),
                    );
                }
            }
            EnvironmentConfig::FileReplay { .. } => out.q = None,
        }
        out.baselines.sort();
        out.baselines.dedup();
        Ok(out)
    }

    pub fn rho_value(&self) -> Option<f64> {
        match self.rho {
            Param::Fixed(r) => Some(r),
            Param::Auto(_) => None,
        }
    }

    pub fn q_value(&self) -> Option<usize> {
        match self.q {
            Some(Param::Fixed(q)) => Some(q as usize),
            _ => None,
        }
    }

    /// Hex SHA-256 of the canonical JSON encoding, shortened to 16 digits.
    /// Hash of the config with the output path left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output = None;
        let json = serde_json::to_string(&c).expect("config serialises");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}
