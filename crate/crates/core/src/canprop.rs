//! The CBNN learner.
//!
//! Actions are the leaves of a complete binary tree stored in heap order:
//! the root is `1`, the children of `v` are `2v` and `2v + 1`, and leaf
//! `K + a` is action `a` (zero-based). Every non-root vertex owns a
//! contraction of the trajectory tree, created on first use.
//!
//! Trial nodes are identified with trial numbers, starting at `1`.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::belief::FLOOR;
use crate::contraction::{Contraction, PhiTable};
use crate::error::{Error, Result};
use crate::trajectory::TrajectoryTree;

/// Construction parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub horizon: usize,
    pub actions: usize,
    pub rho: f64,
    pub seed: u64,
    /// Accept any `actions >= 2` by padding the action tree with phantom
    /// actions that are never returned.
    pub pad_actions: bool,
}

impl LearnerConfig {
    pub fn new(horizon: usize, actions: usize, rho: f64, seed: u64) -> Self {
        Self {
            horizon,
            actions,
            rho,
            seed,
            pad_actions: false,
        }
    }
}

/// `rho * sqrt(ln K ln T / (K T))`.
pub fn learning_rate(rho: f64, horizon: usize, actions: usize) -> f64 {
    let (k, t) = (actions as f64, horizon as f64);
    rho * (k.ln() * t.ln() / (k * t)).sqrt()
}

/// What happened on one trial, for inspection and mirrored testing.
#[derive(Debug, Clone, PartialEq)]
pub struct TrialRecord {
    pub t: usize,
    /// Heap ids `v_0 .. v_L` of the sampled root-to-leaf path.
    pub path: Vec<usize>,
    /// `(theta(left child), theta(right child))` at each path vertex.
    pub theta: Vec<[f64; 2]>,
    /// Normalised `theta` at each path vertex.
    pub pi: Vec<[f64; 2]>,
    /// Uniform draws used at each level, across all rejection rounds.
    pub zeta: Vec<f64>,
    pub action: usize,
    /// Product of the chosen branch probabilities.
    pub pi_tilde: f64,
    /// `psi_0 .. psi_L`, filled in by feedback.
    pub psi: Vec<f64>,
    pub loss: Option<f64>,
}

/// The CBNN learner.
#[derive(Debug, Clone)]
pub struct Cbnn {
    horizon: usize,
    actions: usize,
    leaves: usize,
    depth: usize,
    rho: f64,
    eta: f64,
    phi: PhiTable,
    z: Option<TrajectoryTree>,
    contractions: Vec<Option<Contraction>>,
    // evidence for node 1, recorded before any contraction exists
    pending: Vec<Option<f64>>,
    t: usize,
    current: Option<TrialRecord>,
    last: Option<TrialRecord>,
    rng: ChaCha8Rng,
}

impl Cbnn {
    pub fn new(config: &LearnerConfig) -> Result<Self> {
        let LearnerConfig {
            horizon,
            actions,
            rho,
            seed,
            pad_actions,
        } = *config;
        if horizon < 2 {
            return Err(Error::Config(format!(
                "horizon must be at least 2, got {horizon}"
            )));
        }
        if actions < 2 {
            return Err(Error::Config(format!(
                "need at least 2 actions, got {actions}"
            )));
        }
        if !(rho > 0.0 && rho.is_finite()) {
            return Err(Error::Config(format!("rho must be positive, got {rho}")));
        }
        if !actions.is_power_of_two() && !pad_actions {
            return Err(Error::Config(format!(
                "{actions} actions is not a power of two and padding is disabled"
            )));
        }
        let leaves = actions.next_power_of_two();
        Ok(Self {
            horizon,
            actions,
            leaves,
            depth: leaves.trailing_zeros() as usize,
            rho,
            eta: learning_rate(rho, horizon, leaves),
            phi: PhiTable::new(horizon)?,
            z: None,
            contractions: vec![None; 2 * leaves],
            pending: vec![None; 2 * leaves],
            t: 1,
            current: None,
            last: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn eta(&self) -> f64 {
        self.eta
    }

    pub fn rho(&self) -> f64 {
        self.rho
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn actions(&self) -> usize {
        self.actions
    }

    /// The trial the next call to [`Cbnn::choose_action`] will play.
    pub fn trial(&self) -> usize {
        self.t
    }

    pub fn trajectory(&self) -> Option<&TrajectoryTree> {
        self.z.as_ref()
    }

    /// The contraction at heap vertex `v`, if it has been created.
    pub fn contraction(&self, v: usize) -> Option<&Contraction> {
        self.contractions.get(v).and_then(|c| c.as_ref())
    }

    pub fn phi_table(&self) -> &PhiTable {
        &self.phi
    }

    /// The record of the most recently completed trial.
    pub fn last_trial(&self) -> Option<&TrialRecord> {
        self.last.as_ref()
    }

    /// Record of the trial awaiting feedback.
    pub fn current_trial(&self) -> Option<&TrialRecord> {
        self.current.as_ref()
    }

    /// Picks the action for the next trial. `similar` is the earlier trial
    /// revealed as similar; it must be absent on trial 1 and present after.
    pub fn choose_action(&mut self, similar: Option<usize>) -> Result<usize> {
        if self.current.is_some() {
            return Err(Error::Protocol(
                "choose_action called twice without feedback".into(),
            ));
        }
        let t = self.t;
        if t > self.horizon {
            return Err(Error::Protocol(format!(
                "horizon of {} trials exhausted",
                self.horizon
            )));
        }
        let record = if t == 1 {
            if similar.is_some() {
                return Err(Error::Validation("trial 1 has no similar trial".into()));
            }
            self.sample(t, |_, _| Ok(0.25))?
        } else {
            let n = similar
                .ok_or_else(|| Error::Validation(format!("trial {t} needs a similar trial")))?;
            if n == 0 || n >= t {
                return Err(Error::Validation(format!(
                    "similar trial {n} is not in 1..{t}"
                )));
            }
            self.phi.extend_to(t)?;
            self.advance_trajectory(t, n)?;
            self.sample(t, |me, v| me.theta(v, t))?
        };
        let action = record.action;
        self.current = Some(record);
        Ok(action)
    }

    /// Reports the loss of the chosen action and pushes the evidence.
    pub fn feedback(&mut self, loss: f64) -> Result<()> {
        if !(0.0..=1.0).contains(&loss) {
            return Err(Error::Validation(format!("loss {loss} is outside [0, 1]")));
        }
        let mut rec = self
            .current
            .take()
            .ok_or_else(|| Error::Protocol("feedback without a pending action".into()))?;
        let t = rec.t;
        let depth = self.depth;
        let mut psi = vec![0.0; depth + 1];
        psi[depth] = (-self.eta * loss / rec.pi_tilde).exp().max(FLOOR);
        for j in (1..=depth).rev() {
            let v = rec.path[j];
            let parent = rec.path[j - 1];
            let p = rec.pi[j - 1][v - 2 * parent];
            psi[j - 1] = (1.0 - (1.0 - psi[j]) * p).max(FLOOR);
            let chosen = (psi[j] / psi[j - 1]).max(FLOOR);
            let sibling = (1.0 / psi[j - 1]).max(FLOOR);
            self.push_evidence(v, t, chosen)?;
            self.push_evidence(v ^ 1, t, sibling)?;
        }
        rec.psi = psi;
        rec.loss = Some(loss);
        self.last = Some(rec);
        self.t += 1;
        Ok(())
    }

    /// The exact probability of each action on the next trial, computed on a
    /// scratch copy so this learner is left untouched.
    pub fn action_distribution(&self, similar: Option<usize>) -> Result<Vec<f64>> {
        if self.current.is_some() {
            return Err(Error::Protocol("a trial is awaiting feedback".into()));
        }
        let mut scratch = self.clone();
        let t = scratch.t;
        let mut pi_pairs = vec![[0.5, 0.5]; scratch.leaves];
        if t > 1 {
            let n = similar
                .ok_or_else(|| Error::Validation(format!("trial {t} needs a similar trial")))?;
            scratch.phi.extend_to(t)?;
            scratch.advance_trajectory(t, n)?;
            for (v, pair) in pi_pairs.iter_mut().enumerate().skip(1) {
                let theta = [scratch.theta(2 * v, t)?, scratch.theta(2 * v + 1, t)?];
                *pair = normalise(theta);
            }
        }
        let mut dist = vec![0.0; self.actions];
        for (a, p) in dist.iter_mut().enumerate() {
            let mut v = self.leaves + a;
            *p = 1.0;
            while v > 1 {
                *p *= pi_pairs[v / 2][v & 1];
                v /= 2;
            }
        }
        if self.actions < self.leaves {
            let total: f64 = dist.iter().sum();
            dist.iter_mut().for_each(|p| *p /= total);
        }
        Ok(dist)
    }

    fn advance_trajectory(&mut self, t: usize, n: usize) -> Result<()> {
        match self.z.as_mut() {
            None if t == 2 => {
                self.z = Some(TrajectoryTree::new(1, 2)?);
                Ok(())
            }
            None => Err(Error::Protocol("trajectory tree missing".into())),
            Some(z) => z.grow(t, n).map(|_| ()),
        }
    }

    // make sure x_t is in A(v) and return its marginal there
    fn theta(&mut self, v: usize, t: usize) -> Result<f64> {
        let z = self.z.as_ref().expect("trajectory exists from trial 2");
        if self.contractions[v].is_none() {
            let mut c = Contraction::new_z2(z, &mut self.phi)?;
            if let Some(k) = self.pending[v].take() {
                c.evidence(z.leaf_of(1)?, k)?;
            }
            self.contractions[v] = Some(c);
        }
        let c = self.contractions[v].as_mut().expect("just created");
        let u_t = z.leaf_of(t)?;
        if !c.contains(u_t) {
            c.insert(z, t, &mut self.phi)?;
        }
        c.marginal(u_t)
    }

    fn push_evidence(&mut self, v: usize, t: usize, kappa1: f64) -> Result<()> {
        if t == 1 {
            self.pending[v] = Some(kappa1);
            return Ok(());
        }
        let z = self.z.as_ref().expect("trajectory exists from trial 2");
        let u_t = z.leaf_of(t)?;
        self.contractions[v]
            .as_mut()
            .ok_or_else(|| Error::Protocol(format!("contraction {v} was never touched")))?
            .evidence(u_t, kappa1)
    }

    fn sample<F>(&mut self, t: usize, mut theta_of: F) -> Result<TrialRecord>
    where
        F: FnMut(&mut Self, usize) -> Result<f64>,
    {
        let mut zeta = Vec::new();
        loop {
            let mut v = 1;
            let mut path = vec![1];
            let mut thetas = Vec::with_capacity(self.depth);
            let mut pis = Vec::with_capacity(self.depth);
            let mut pi_tilde = 1.0;
            for _ in 0..self.depth {
                let theta = [theta_of(self, 2 * v)?, theta_of(self, 2 * v + 1)?];
                let pi = normalise(theta);
                let draw: f64 = self.rng.random();
                zeta.push(draw);
                let go_right = usize::from(draw > pi[0]);
                v = 2 * v + go_right;
                pi_tilde *= pi[go_right];
                path.push(v);
                thetas.push(theta);
                pis.push(pi);
            }
            let action = v - self.leaves;
            if action < self.actions {
                return Ok(TrialRecord {
                    t,
                    path,
                    theta: thetas,
                    pi: pis,
                    zeta,
                    action,
                    pi_tilde,
                    psi: Vec::new(),
                    loss: None,
                });
            }
        }
    }
}

fn normalise(theta: [f64; 2]) -> [f64; 2] {
    let total = theta[0] + theta[1];
    if total > 0.0 && total.is_finite() {
        [theta[0] / total, theta[1] / total]
    } else {
        [0.5, 0.5]
    }
}
