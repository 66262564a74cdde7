//! Exponential-time reference implementations.
//!
//! These enumerate subsets of trial nodes or whole policies and exist only to
//! check the fast learner on small instances. Trial nodes are trial numbers
//! starting at `1`; a subset of the first `t` nodes is a bitmask with bit
//! `s - 1` standing for node `s`. `similar[s - 1]` holds the similar earlier
//! trial of trial `s` (ignored for trial 1).

use crate::contraction::Contraction;
use crate::error::{Error, Result};
use crate::trajectory::TrajectoryTree;

/// Largest table any oracle will allocate.
pub const TABLE_LIMIT: usize = 1 << 20;

/// `1 + #{t >= 2 : y(t) != y(n(t))}` for a policy given per trial.
pub fn policy_complexity(policy: &[usize], similar: &[usize]) -> Result<usize> {
    if policy.len() != similar.len() {
        return Err(Error::Validation(
            "policy and similar-trial lists differ in length".into(),
        ));
    }
    let mut phi = 1;
    for t in 2..=policy.len() {
        let n = similar[t - 1];
        if n == 0 || n >= t {
            return Err(Error::Validation(format!(
                "similar trial {n} of trial {t} is not earlier"
            )));
        }
        phi += usize::from(policy[t - 1] != policy[n - 1]);
    }
    Ok(phi)
}

// per-node prior factor given membership of the node and of its parent
fn switch_factor(horizon: usize, in_set: bool, parent_in_set: bool) -> f64 {
    let h = horizon as f64;
    if in_set != parent_in_set {
        1.0 / h
    } else {
        1.0 - 1.0 / h
    }
}

/// The initial weight of a subset of all `horizon` nodes.
pub fn initial_weight(horizon: usize, similar: &[usize], set: u64) -> f64 {
    let mut w = 0.25;
    for s in 2..=horizon {
        let n = similar[s - 1];
        w *= switch_factor(horizon, set >> (s - 1) & 1 == 1, set >> (n - 1) & 1 == 1);
    }
    w
}

/// `sum_S w_1(v, S)` over every subset of all `horizon` nodes.
pub fn initial_mass(horizon: usize, similar: &[usize]) -> Result<f64> {
    if horizon > 20 {
        return Err(Error::Size(format!(
            "2^{horizon} subsets exceed the enumeration limit"
        )));
    }
    if similar.len() != horizon {
        return Err(Error::Validation("need one similar trial per trial".into()));
    }
    Ok((0..1u64 << horizon)
        .map(|s| initial_weight(horizon, similar, s))
        .sum())
}

/// Outcome of one literal CANPROP step.
#[derive(Debug, Clone, PartialEq)]
pub struct StepTrace {
    pub path: Vec<usize>,
    pub theta: Vec<[f64; 2]>,
    pub pi: Vec<[f64; 2]>,
    pub psi: Vec<f64>,
    pub action: usize,
}

/// Explicit subset weights `w_t(v, S)` for every non-root vertex of the
/// action tree, over subsets of the nodes seen so far.
#[derive(Debug, Clone)]
pub struct ExplicitWeights {
    horizon: usize,
    leaves: usize,
    similar: Vec<usize>,
    // heap-indexed, entries 0 and 1 unused
    w: Vec<Vec<f64>>,
}

impl ExplicitWeights {
    /// Weights at trial 1, over subsets of `{x_1}`.
    pub fn new(horizon: usize, actions: usize) -> Result<Self> {
        if !actions.is_power_of_two() || actions < 2 {
            return Err(Error::Config(format!(
                "{actions} actions is not a power of two >= 2"
            )));
        }
        let mut w = vec![Vec::new(); 2 * actions];
        for table in w.iter_mut().skip(2) {
            *table = vec![0.25, 0.25];
        }
        Ok(Self {
            horizon,
            leaves: actions,
            similar: vec![0],
            w,
        })
    }

    /// Number of nodes covered.
    pub fn nodes(&self) -> usize {
        self.similar.len()
    }

    /// Adds the next node, similar to the earlier trial `similar`.
    pub fn extend(&mut self, similar: usize) -> Result<()> {
        let t = self.nodes() + 1;
        if similar == 0 || similar >= t {
            return Err(Error::Validation(format!(
                "similar trial {similar} of trial {t} is not earlier"
            )));
        }
        if 1usize << t > TABLE_LIMIT {
            return Err(Error::Size(format!(
                "2^{t} subsets exceed the enumeration limit"
            )));
        }
        let bit = 1usize << (t - 1);
        let pbit = 1usize << (similar - 1);
        for table in self.w.iter_mut().skip(2) {
            let old = std::mem::take(table);
            let mut new = vec![0.0; 2 * old.len()];
            for (s, &x) in old.iter().enumerate() {
                let parent_in = s & pbit != 0;
                new[s] = x * switch_factor(self.horizon, false, parent_in);
                new[s | bit] = x * switch_factor(self.horizon, true, parent_in);
            }
            *table = new;
        }
        self.similar.push(similar);
        Ok(())
    }

    pub fn weight(&self, v: usize, set: usize) -> f64 {
        self.w[v][set]
    }

    /// `theta_t(v)`: mass of the subsets containing the newest node.
    pub fn theta(&self, v: usize) -> f64 {
        let bit = 1usize << (self.nodes() - 1);
        self.w[v]
            .iter()
            .enumerate()
            .filter(|(s, _)| s & bit != 0)
            .map(|(_, x)| x)
            .sum()
    }

    /// `sum_S w(2v, S) + w(2v + 1, S)`.
    pub fn pair_mass(&self, v: usize) -> f64 {
        self.w[2 * v].iter().chain(&self.w[2 * v + 1]).sum()
    }

    /// Exact action probabilities on the current trial.
    pub fn distribution(&self) -> Vec<f64> {
        (0..self.leaves)
            .map(|a| {
                let mut v = self.leaves + a;
                let mut p = 1.0;
                while v > 1 {
                    let (l, r) = (self.theta(v & !1), self.theta(v | 1));
                    p *= if v & 1 == 0 { l } else { r } / (l + r);
                    v /= 2;
                }
                p
            })
            .collect()
    }

    /// One literal CANPROP trial on the newest node, with the path forced by
    /// the given uniform draws and the loss read from `losses[action]`.
    pub fn step(&mut self, zeta: &[f64], losses: &[f64], eta: f64) -> Result<StepTrace> {
        let depth = self.leaves.trailing_zeros() as usize;
        if zeta.len() < depth || losses.len() < self.leaves {
            return Err(Error::Validation(
                "need one draw per level and one loss per action".into(),
            ));
        }
        let mut v = 1;
        let mut path = vec![1];
        let mut thetas = Vec::new();
        let mut pis = Vec::new();
        for &draw in &zeta[..depth] {
            let theta = [self.theta(2 * v), self.theta(2 * v + 1)];
            let z = theta[0] + theta[1];
            let pi = [theta[0] / z, theta[1] / z];
            v = if draw <= pi[0] { 2 * v } else { 2 * v + 1 };
            path.push(v);
            thetas.push(theta);
            pis.push(pi);
        }
        let action = v - self.leaves;
        let pi_tilde: f64 = (1..=depth).map(|j| pis[j - 1][path[j] & 1]).product();
        let mut psi = vec![0.0; depth + 1];
        psi[depth] = (-eta * losses[action] / pi_tilde).exp();
        let bit = 1usize << (self.nodes() - 1);
        for j in (1..=depth).rev() {
            let v = path[j];
            psi[j - 1] = 1.0 - (1.0 - psi[j]) * pis[j - 1][v & 1];
            let chosen = psi[j] / psi[j - 1];
            let sibling = 1.0 / psi[j - 1];
            for (u, factor) in [(v, chosen), (v ^ 1, sibling)] {
                for (s, x) in self.w[u].iter_mut().enumerate() {
                    if s & bit != 0 {
                        *x *= factor;
                    }
                }
            }
        }
        Ok(StepTrace {
            path,
            theta: thetas,
            pi: pis,
            psi,
            action,
        })
    }
}

/// The subset sum `sum_S [gamma(u_hat) in S] w~(J, lambda, S)` over all
/// subsets of the nodes in `z`, with `lambda` read from the contraction's
/// leaf evidence.
pub fn wtilde(
    contraction: &Contraction,
    z: &TrajectoryTree,
    horizon: usize,
    u_hat: usize,
) -> Result<f64> {
    let mut nodes: Vec<usize> = z.nodes().collect();
    nodes.sort_unstable();
    if nodes.len() > 20 {
        return Err(Error::Size(format!(
            "2^{} subsets exceed the enumeration limit",
            nodes.len()
        )));
    }
    if !contraction.leaves().any(|u| u == u_hat) {
        return Err(Error::Precondition(format!(
            "vertex {u_hat} is not a contraction leaf"
        )));
    }
    let bound = nodes.iter().max().copied().unwrap_or(0) + 1;
    let mut pos = vec![usize::MAX; bound];
    for (k, &x) in nodes.iter().enumerate() {
        pos[x] = k;
    }
    let mut lambda = vec![1.0; nodes.len()];
    for u in contraction.leaves() {
        lambda[pos[z.gamma(u)]] = contraction.kappa(u)?[1];
    }
    let target = pos[z.gamma(u_hat)];
    let edges: Vec<(usize, usize)> = nodes
        .iter()
        .filter_map(|&x| z.parent_node(x).map(|p| (pos[x], pos[p])))
        .collect();
    let mut total = 0.0;
    for set in 0..1usize << nodes.len() {
        if set >> target & 1 == 0 {
            continue;
        }
        let mut w = 1.0;
        for (k, l) in lambda.iter().enumerate() {
            if set >> k & 1 == 1 {
                w *= l;
            }
        }
        for &(x, p) in &edges {
            w *= switch_factor(horizon, set >> x & 1 == 1, set >> p & 1 == 1);
        }
        total += w;
    }
    Ok(total)
}

/// EXP4 over every policy from all `horizon` nodes to actions.
#[derive(Debug, Clone)]
pub struct Exp4Oracle {
    actions: usize,
    eta: f64,
    weights: Vec<f64>,
    t: usize,
    horizon: usize,
}

impl Exp4Oracle {
    /// Policies are weighted by the complexity prior, which needs the full
    /// similar-trial sequence.
    pub fn new(actions: usize, eta: f64, similar: &[usize]) -> Result<Self> {
        let horizon = similar.len();
        let count = (actions as u128)
            .checked_pow(horizon as u32)
            .unwrap_or(u128::MAX);
        if count > TABLE_LIMIT as u128 {
            return Err(Error::Size(format!(
                "{actions}^{horizon} policies exceed the enumeration limit"
            )));
        }
        let (k, h) = (actions as f64, horizon as f64);
        let mut weights = Vec::with_capacity(count as usize);
        let mut policy = vec![0usize; horizon];
        for code in 0..count as usize {
            let mut c = code;
            for slot in policy.iter_mut() {
                *slot = c % actions;
                c /= actions;
            }
            let phi = policy_complexity(&policy, similar)? as f64;
            weights
                .push((1.0 / k) * (h * (k - 1.0)).powf(-phi) * (1.0 - 1.0 / h).powf(h - 1.0 - phi));
        }
        Ok(Self {
            actions,
            eta,
            weights,
            t: 1,
            horizon,
        })
    }

    fn choice(&self, code: usize, t: usize) -> usize {
        code / self.actions.pow((t - 1) as u32) % self.actions
    }

    /// `p_t` before normalisation.
    pub fn mass(&self) -> Vec<f64> {
        let mut p = vec![0.0; self.actions];
        for (code, w) in self.weights.iter().enumerate() {
            p[self.choice(code, self.t)] += w;
        }
        p
    }

    /// Normalised action probabilities on the current trial.
    pub fn distribution(&self) -> Vec<f64> {
        let p = self.mass();
        let total: f64 = p.iter().sum();
        p.into_iter().map(|x| x / total).collect()
    }

    /// Applies the importance-weighted update for the played action.
    pub fn update(&mut self, action: usize, loss: f64) -> Result<()> {
        if self.t > self.horizon {
            return Err(Error::Protocol("horizon exhausted".into()));
        }
        let p = self.mass();
        let total: f64 = p.iter().sum();
        let estimate = loss * total / p[action];
        let factor = (-self.eta * estimate).exp();
        let t = self.t;
        for code in 0..self.weights.len() {
            if self.choice(code, t) == action {
                self.weights[code] *= factor;
            }
        }
        self.t += 1;
        Ok(())
    }
}

/// Largest relative spread of the ratio between the marginal prior of each
/// restricted policy and the product form over the first `t` trials. Zero
/// means the two are exactly proportional.
pub fn factorisation_gap(actions: usize, similar: &[usize], t: usize) -> Result<f64> {
    let oracle = Exp4Oracle::new(actions, 1.0, similar)?;
    let h = similar.len() as f64;
    let k = actions as f64;
    let prefix = actions.pow(t as u32);
    let mut marginal = vec![0.0; prefix];
    for (code, w) in oracle.weights.iter().enumerate() {
        marginal[code % prefix] += w;
    }
    let mut lo = f64::INFINITY;
    let mut hi: f64 = 0.0;
    for (code, m) in marginal.iter().enumerate() {
        let choice = |s: usize| code / actions.pow((s - 1) as u32) % actions;
        let mut product = 1.0;
        for s in 2..=t {
            product *= if choice(s) != choice(similar[s - 1]) {
                1.0 / (h * (k - 1.0))
            } else {
                1.0 - 1.0 / h
            };
        }
        let ratio = m / product;
        lo = lo.min(ratio);
        hi = hi.max(ratio);
    }
    Ok((hi - lo) / hi)
}
