//! Named property suites comparing the engine against brute-force oracles.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use cbnn::belief::rel_err;
use cbnn::contraction::{Contraction, PhiTable};
use cbnn::metric::{BackendKind, MetricStore, Reduction};
use cbnn::oracle::{initial_mass, policy_complexity, wtilde, Exp4Oracle, ExplicitWeights};
use cbnn::trajectory::TrajectoryTree;
use cbnn::tst::{height_bound, BaseTree, BinaryTree, NoAggregate, Side, Tst};
use cbnn::{Cbnn, LearnerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{Clusters, Environment};
use crate::error::{HarnessError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Suite {
    Eq4,
    ThmC1,
    Exp4,
    LemmaE1,
    TstHeight,
    Nu,
    PhiCluster,
}

impl Suite {
    pub const ALL: [Suite; 7] = [
        Suite::Eq4,
        Suite::ThmC1,
        Suite::Exp4,
        Suite::LemmaE1,
        Suite::TstHeight,
        Suite::Nu,
        Suite::PhiCluster,
    ];

    pub fn id(&self) -> &'static str {
        match self {
            Suite::Eq4 => "eq4",
            Suite::ThmC1 => "thmC1",
            Suite::Exp4 => "exp4",
            Suite::LemmaE1 => "lemmaE1",
            Suite::TstHeight => "tst-height",
            Suite::Nu => "nu",
            Suite::PhiCluster => "phi-cluster",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.id())
    }
}

impl FromStr for Suite {
    type Err = HarnessError;
    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.id() == s)
            .ok_or_else(|| HarnessError::Config(format!("unknown suite {s:?}")))
    }
}

/// Outcome of a suite: how many cases ran, the worst observed error and a
/// line per failing case.
#[derive(Debug, Clone, Default)]
pub struct Report {
    pub cases: usize,
    pub worst: f64,
    pub failures: Vec<String>,
    pub notes: Vec<String>,
}

impl Report {
    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }

    fn observe(&mut self, err: f64, tol: f64, what: impl FnOnce() -> String) {
        self.cases += 1;
        self.worst = self.worst.max(err);
        if err.is_nan() || err > tol {
            if self.failures.len() < 20 {
                self.failures
                    .push(format!("{}: rel err {err:.3e} > {tol:e}", what()));
            } else if self.failures.len() == 20 {
                self.failures.push("further failures omitted".into());
            }
        }
    }
}

pub const REL_TOL: f64 = 1e-9;

/// Runs a suite at its standard sizes. Fault injection is only wired into
/// `thmC1`.
pub fn run_suite(suite: Suite, seed: u64, inject_fault: bool) -> Result<Report> {
    if inject_fault && suite != Suite::ThmC1 {
        return Err(HarnessError::Config(format!(
            "suite {suite} has no fault injection"
        )));
    }
    match suite {
        Suite::Eq4 => eq4(&[4, 6, 8], &[2, 4], 20, seed),
        Suite::ThmC1 => theorem_c1(200, 8, seed, inject_fault),
        Suite::Exp4 => exp4(&[2, 3, 4, 5], &[2, 4], 10, seed),
        Suite::LemmaE1 => lemma_e1(3..=12, 8, seed),
        Suite::TstHeight => tst_height(100_000, 100, seed),
        Suite::Nu => nu(512, 10_000, 100_000, seed),
        Suite::PhiCluster => phi_cluster(2..=8, 10, 2_000, seed),
    }
}

fn random_similar(horizon: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (1..=horizon)
        .map(|t| if t == 1 { 0 } else { rng.random_range(1..t) })
        .collect()
}

/// Learner against the explicit subset-weight oracle, sharing every draw.
pub fn eq4(horizons: &[usize], actions: &[usize], seeds: u64, seed: u64) -> Result<Report> {
    let mut report = Report::default();
    for &horizon in horizons {
        for &k in actions {
            for s in seed..seed + seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0x5eed);
                let similar = random_similar(horizon, &mut rng);
                let mut learner = Cbnn::new(&LearnerConfig::new(
                    horizon,
                    k,
                    1.0 + rng.random::<f64>(),
                    s,
                ))?;
                let mut oracle = ExplicitWeights::new(horizon, k)?;
                for t in 1..=horizon {
                    let n = (t > 1).then(|| similar[t - 1]);
                    if let Some(n) = n {
                        oracle.extend(n)?;
                    }
                    learner.choose_action(n)?;
                    let rec = learner.current_trial().expect("pending trial").clone();
                    let loss = f64::from(u8::from(rng.random_bool(0.5)));
                    learner.feedback(loss)?;
                    let trace = oracle.step(&rec.zeta, &vec![loss; k], learner.eta())?;
                    let case = || format!("T={horizon} K={k} seed={s} t={t}");
                    if trace.path != rec.path {
                        report.cases += 1;
                        report.failures.push(format!("{}: paths differ", case()));
                        break;
                    }
                    for (j, (fast, slow)) in rec.theta.iter().zip(&trace.theta).enumerate() {
                        for side in 0..2 {
                            let v = 2 * rec.path[j] + side;
                            report.observe(rel_err(fast[side], slow[side]), REL_TOL, || {
                                format!(
                                    "{} v={v}: fast {} oracle {}",
                                    case(),
                                    fast[side],
                                    slow[side]
                                )
                            });
                        }
                    }
                }
            }
        }
    }
    Ok(report)
}

/// Belief marginals of random contractions against the subset-sum oracle.
pub fn theorem_c1(count: usize, max_t: usize, seed: u64, inject_fault: bool) -> Result<Report> {
    let mut report = Report::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut deltas: BTreeMap<usize, usize> = BTreeMap::new();
    let faulty = inject_fault.then(|| rng.random_range(0..count));
    for id in 0..count {
        let t_max = rng.random_range(2..=max_t);
        let horizon = rng.random_range(t_max.max(2)..=4 * max_t);
        let mut phi = PhiTable::new(horizon)?;
        let mut z = TrajectoryTree::new(1, 2)?;
        let mut j = Contraction::new_z2(&z, &mut phi)?;
        let keep = rng.random_range(0.2..1.0);
        for t in 3..=t_max {
            let n = rng.random_range(1..t);
            z.grow(t, n)?;
            if rng.random_bool(keep) {
                j.insert(&z, t, &mut phi)?;
            }
        }
        for u in j.vertices().collect::<Vec<_>>() {
            if let Some(p) = j.parent(u)? {
                *deltas.entry(z.d(u) - z.d(p)).or_default() += 1;
            }
        }
        let leaves: Vec<usize> = j.leaves().collect();
        for &u in &leaves {
            j.evidence(u, rng.random_range(0.1..10.0))?;
        }
        if faulty == Some(id) {
            let victim = leaves[rng.random_range(0..leaves.len())];
            let k = j.kappa(victim)?;
            j.corrupt_kappa(victim, [k[0], k[1] * 3.0 + 1.0])?;
        }
        for &u in &leaves {
            let fast = 4.0 * j.marginal(u)?;
            let slow = wtilde(&j, &z, horizon, u)?;
            report.observe(rel_err(fast, slow), REL_TOL, || {
                format!("contraction {id} (t={t_max}, {} vertices) leaf {u}: marginal*4 {fast} subset sum {slow}", j.len())
            });
        }
    }
    report
        .notes
        .push(format!("depth gaps seen (gap: edges): {deltas:?}"));
    Ok(report)
}

/// Learner action distributions against EXP4 over all policies.
pub fn exp4(horizons: &[usize], actions: &[usize], seeds: u64, seed: u64) -> Result<Report> {
    let mut report = Report::default();
    let mut explicit_gap: f64 = 0.0;
    let mut first_bad: Option<String> = None;
    for &horizon in horizons {
        for &k in actions {
            for s in seed..seed + seeds {
                let mut rng = ChaCha8Rng::seed_from_u64(s ^ 0xe4);
                let similar = random_similar(horizon, &mut rng);
                let mut learner = Cbnn::new(&LearnerConfig::new(horizon, k, 1.0, s))?;
                let mut oracle = Exp4Oracle::new(k, learner.eta(), &similar)?;
                let mut explicit = ExplicitWeights::new(horizon, k)?;
                for t in 1..=horizon {
                    let n = (t > 1).then(|| similar[t - 1]);
                    if let Some(n) = n {
                        explicit.extend(n)?;
                    }
                    let fast = learner.action_distribution(n)?;
                    let slow = oracle.distribution();
                    let err = fast
                        .iter()
                        .zip(&slow)
                        .map(|(a, b)| rel_err(*a, *b))
                        .fold(0.0, f64::max);
                    let gap = explicit
                        .distribution()
                        .iter()
                        .zip(&slow)
                        .map(|(a, b)| rel_err(*a, *b))
                        .fold(0.0, f64::max);
                    explicit_gap = explicit_gap.max(gap);
                    let case = || {
                        format!("T={horizon} K={k} seed={s} t={t}: learner {fast:?} exp4 {slow:?}")
                    };
                    if err > REL_TOL && first_bad.is_none() {
                        first_bad = Some(case());
                    }
                    report.observe(err, REL_TOL, case);
                    let action = learner.choose_action(n)?;
                    let rec = learner.current_trial().expect("pending trial").clone();
                    let loss = f64::from(u8::from(rng.random_bool(0.5)));
                    learner.feedback(loss)?;
                    explicit.step(&rec.zeta, &vec![loss; k], learner.eta())?;
                    oracle.update(action, loss)?;
                }
            }
        }
    }
    report.notes.push(format!(
        "explicit subset-weight oracle vs exp4, worst rel err {explicit_gap:.3e}"
    ));
    if let Some(c) = first_bad {
        report.notes.push(format!("first disagreement: {c}"));
    }
    Ok(report)
}

/// `sum_S w_1(v, S) = 1/2` by enumeration over all node subsets.
pub fn lemma_e1(
    horizons: std::ops::RangeInclusive<usize>,
    per_horizon: usize,
    seed: u64,
) -> Result<Report> {
    let mut report = Report::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for horizon in horizons {
        let mut shapes = vec![
            (0..horizon).collect::<Vec<_>>(),
            (0..horizon).map(|t| usize::from(t > 0)).collect(),
        ];
        shapes.extend((0..per_horizon).map(|_| random_similar(horizon, &mut rng)));
        for similar in shapes {
            let mass = initial_mass(horizon, &similar)?;
            report.cases += 1;
            report.worst = report.worst.max((mass - 0.5).abs());
            if (mass - 0.5).abs() > 1e-12 {
                report
                    .failures
                    .push(format!("T={horizon} similar={similar:?}: mass {mass}"));
            }
        }
    }
    Ok(report)
}

/// TST height after every insertion, plus full structural checks at evenly
/// spaced checkpoints.
pub fn tst_height(insertions: usize, checkpoints: usize, seed: u64) -> Result<Report> {
    let mut report = Report::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let every = (insertions / checkpoints.max(1)).max(1);
    for order in ["random", "spine", "zigzag"] {
        let mut base = BinaryTree::from_children(&[vec![1, 2], vec![], vec![]])?;
        let mut tst = Tst::build(&base, &NoAggregate)?;
        let mut newest = 2;
        let mut worst_ratio: f64 = 0.0;
        for i in 1..=insertions {
            let (u, left) = match order {
                "random" => (rng.random_range(1..base.len()), rng.random_bool(0.5)),
                "spine" => (newest, false),
                _ => (newest, i % 2 == 0),
            };
            let (inner, leaf) = base.splice(u, left)?;
            newest = leaf;
            tst.insert_splice(&base, inner, leaf, &NoAggregate)?;
            let (h, bound) = (tst.height() as f64, height_bound(base.len()));
            worst_ratio = worst_ratio.max(h / bound);
            report.cases += 1;
            if h > bound && report.failures.len() < 20 {
                report
                    .failures
                    .push(format!("{order} insertion {i}: height {h} > {bound:.2}"));
            }
            if i % every == 0 {
                for e in tst.check(&base).into_iter().take(5) {
                    report.failures.push(format!("{order} checkpoint {i}: {e}"));
                }
            }
        }
        report.worst = report.worst.max(worst_ratio);
        report.notes.push(format!(
            "{order}: final height {} for {} vertices, worst height/bound {worst_ratio:.3}",
            tst.height(),
            base.len()
        ));
    }
    Ok(report)
}

// entry/exit times from an explicit DFS; the descendant oracle
fn euler_intervals(z: &TrajectoryTree) -> (Vec<usize>, Vec<usize>) {
    let n = z.len();
    let (mut tin, mut tout) = (vec![0; n], vec![0; n]);
    let mut clock = 0;
    let mut stack = vec![(z.root(), false)];
    while let Some((u, done)) = stack.pop() {
        if done {
            tout[u] = clock;
            continue;
        }
        tin[u] = clock;
        clock += 1;
        stack.push((u, true));
        if let Some([l, r]) = z.children(u) {
            stack.push((r, false));
            stack.push((l, false));
        }
    }
    (tin, tout)
}

fn brute_side(z: &TrajectoryTree, tin: &[usize], tout: &[usize], u: usize, u2: usize) -> Side {
    let below = |a: usize| tin[a] <= tin[u2] && tin[u2] < tout[a];
    match z.children(u) {
        Some([l, _]) if below(l) => Side::Left,
        Some([_, r]) if below(r) => Side::Right,
        _ => Side::Neither,
    }
}

fn shaped_tree(trials: usize, shape: &str, rng: &mut ChaCha8Rng) -> Result<TrajectoryTree> {
    let mut z = TrajectoryTree::new(1, 2)?;
    for t in 3..=trials {
        let n = match shape {
            "chain" => t - 1,
            "star" => 1,
            _ => rng.random_range(1..t),
        };
        z.grow(t, n)?;
    }
    Ok(z)
}

/// The `nu` query against descendant checks on Euler intervals.
pub fn nu(
    exhaustive_vertices: usize,
    large_vertices: usize,
    samples: usize,
    seed: u64,
) -> Result<Report> {
    let mut report = Report::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mismatch = |report: &mut Report, what: String| {
        report.cases += 1;
        if report.failures.len() < 20 {
            report.failures.push(what);
        }
    };
    for shape in ["random", "chain", "star"] {
        let z = shaped_tree(exhaustive_vertices.div_ceil(2), shape, &mut rng)?;
        let (tin, tout) = euler_intervals(&z);
        for u in 0..z.len() {
            for u2 in 0..z.len() {
                let (got, want) = (z.nu(u, u2)?, brute_side(&z, &tin, &tout, u, u2));
                if got == want {
                    report.cases += 1;
                } else {
                    mismatch(
                        &mut report,
                        format!(
                            "{shape} ({} vertices): nu({u}, {u2}) = {got:?}, want {want:?}",
                            z.len()
                        ),
                    );
                }
            }
        }
        let z = shaped_tree(large_vertices.div_ceil(2), shape, &mut rng)?;
        let (tin, tout) = euler_intervals(&z);
        let bound = 2 * z.tst().height() + 2;
        let mut max_visits = 0;
        for _ in 0..samples {
            let (u, u2) = (rng.random_range(0..z.len()), rng.random_range(0..z.len()));
            let (got, visits) = z.nu_counted(u, u2)?;
            max_visits = max_visits.max(visits);
            let want = brute_side(&z, &tin, &tout, u, u2);
            if got == want {
                report.cases += 1;
            } else {
                mismatch(
                    &mut report,
                    format!(
                        "{shape} ({} vertices): nu({u}, {u2}) = {got:?}, want {want:?}",
                        z.len()
                    ),
                );
            }
        }
        report.notes.push(format!(
            "{shape}: {} vertices, TST height {}, max visits {max_visits} (bound {bound})",
            z.len(),
            z.tst().height()
        ));
        if max_visits > bound {
            report
                .failures
                .push(format!("{shape}: {max_visits} visits exceed {bound}"));
        }
    }
    Ok(report)
}

/// Policy complexity of the per-cluster comparator on well-separated
/// clusters, through the exact nearest-neighbour reduction.
pub fn phi_cluster(
    clusters: std::ops::RangeInclusive<usize>,
    seeds: u64,
    trials: usize,
    seed: u64,
) -> Result<Report> {
    let mut report = Report::default();
    let (radius, c) = (0.02, 1.0);
    let separation = radius * (3.0 * c + 1.0) * 1.5;
    for m in clusters {
        for s in seed..seed + seeds {
            let best: Vec<usize> = (0..m).collect();
            let means = vec![vec![0.5; m]; m];
            let mut env = Clusters::new(2, radius, separation, best, means, s)?;
            let mut reduction = Reduction::new(MetricStore::new(2, BackendKind::ExactScan)?);
            let (mut similar, mut labels) = (Vec::new(), Vec::new());
            for _ in 0..trials {
                let trial = env.next_trial()?;
                similar.push(reduction.next(&trial.context)?.unwrap_or(0));
                labels.push(trial.comparator);
            }
            let phi = policy_complexity(&labels, &similar)?;
            report.cases += 1;
            report.worst = report.worst.max(phi as f64 / m as f64);
            if phi > m {
                report
                    .failures
                    .push(format!("m={m} seed={s}: phi {phi} > {m}"));
            }
        }
    }
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn suite_ids_round_trip() {
        for s in Suite::ALL {
            assert_eq!(s.id().parse::<Suite>().unwrap(), s);
        }
        assert!("bogus".parse::<Suite>().unwrap_err().is_config());
    }

    #[test]
    fn small_suites_pass() {
        assert!(eq4(&[4], &[2], 3, 0).unwrap().passed());
        assert!(theorem_c1(20, 6, 0, false).unwrap().passed());
        assert!(lemma_e1(3..=8, 2, 0).unwrap().passed());
        assert!(tst_height(2000, 5, 0).unwrap().passed());
        assert!(nu(64, 500, 2000, 0).unwrap().passed());
        assert!(phi_cluster(2..=3, 2, 300, 0).unwrap().passed());
    }

    #[test]
    fn injected_fault_names_the_contraction() {
        let r = theorem_c1(30, 6, 1, true).unwrap();
        assert!(!r.passed());
        assert!(r.failures.iter().all(|f| f.starts_with("contraction ")));
    }

    #[test]
    fn exp4_agrees_on_first_trial() {
        let r = exp4(&[2], &[2, 4], 3, 0).unwrap();
        assert_eq!(r.cases, 12);
        assert!(r.failures.iter().all(|f| !f.contains(" t=1:")));
    }
}
