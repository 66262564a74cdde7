use cbnn::belief::rel_err;
use cbnn::contraction::{Contraction, PhiTable};
use cbnn::metric::{BackendKind, Euclidean, GridQuantiser, Metric, MetricStore};
use cbnn::oracle::{initial_mass, policy_complexity};
use cbnn::trajectory::TrajectoryTree;
use cbnn::tst::{height_bound, BaseTree, BinaryTree, NoAggregate, Side, Tst};
use cbnn::{Cbnn, LearnerConfig};
use proptest::prelude::*;

// Similar-trial choices encoded as fractions of the trials seen so far.
fn similar_of(fracs: &[f64]) -> Vec<usize> {
    let mut out = vec![0];
    for (i, f) in fracs.iter().enumerate() {
        let t = i + 2;
        out.push(1 + ((f * (t - 1) as f64) as usize).min(t - 2));
    }
    out
}

fn grow(similar: &[usize]) -> TrajectoryTree {
    let mut z = TrajectoryTree::new(1, 2).unwrap();
    for t in 3..=similar.len() {
        z.grow(t, similar[t - 1]).unwrap();
    }
    z
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn phi_recursion_matches_closed_form(horizon in 2usize..5000, j in 0usize..5000) {
        let j = j.min(horizon);
        let mut table = PhiTable::new(horizon).unwrap();
        let fast = table.phi(j).unwrap();
        let exact = PhiTable::closed_form(horizon, j);
        prop_assert!((fast - exact).abs() <= 1e-12 * exact.max(1e-300));
        prop_assert!((0.0..0.5).contains(&fast) || j == 0);
    }

    #[test]
    fn nu_matches_descendant_checks(fracs in prop::collection::vec(0.0f64..1.0, 1..60), pairs in prop::collection::vec((0usize..1000, 0usize..1000), 50)) {
        let z = grow(&similar_of(&fracs));
        for (a, b) in pairs {
            let (u, u2) = (a % z.len(), b % z.len());
            let expected = match z.children(u) {
                Some([l, _]) if z.is_descendant(l, u2) => Side::Left,
                Some([_, r]) if z.is_descendant(r, u2) => Side::Right,
                _ => Side::Neither,
            };
            prop_assert_eq!(z.nu(u, u2).unwrap(), expected);
        }
    }

    #[test]
    fn tst_stays_balanced(ops in prop::collection::vec((0usize..10_000, any::<bool>()), 1..300)) {
        let mut base = BinaryTree::from_children(&[vec![1, 2], vec![], vec![]]).unwrap();
        let mut tst = Tst::build(&base, &NoAggregate).unwrap();
        for (pick, left) in ops {
            let u = 1 + pick % (base.len() - 1);
            let (inner, leaf) = base.splice(u, left).unwrap();
            tst.insert_splice(&base, inner, leaf, &NoAggregate).unwrap();
            prop_assert!(tst.height() as f64 <= height_bound(base.len()));
        }
        prop_assert!(tst.check(&base).is_empty());
    }

    #[test]
    fn contractions_stay_consistent(
        fracs in prop::collection::vec(0.0f64..1.0, 1..9),
        keep in prop::collection::vec(any::<bool>(), 24),
        kappa in prop::collection::vec(0.1f64..10.0, 24),
    ) {
        let similar = similar_of(&fracs);
        let horizon = similar.len().max(2);
        let mut phi = PhiTable::new(horizon).unwrap();
        let mut z = TrajectoryTree::new(1, 2).unwrap();
        let mut j = Contraction::new_z2(&z, &mut phi).unwrap();
        for t in 3..=similar.len() {
            z.grow(t, similar[t - 1]).unwrap();
            if keep[t] {
                j.insert(&z, t, &mut phi).unwrap();
            }
        }
        let leaves: Vec<usize> = j.leaves().collect();
        for (i, &u) in leaves.iter().enumerate() {
            j.evidence(u, kappa[i]).unwrap();
        }
        prop_assert!(j.validate(&z, &phi).is_empty());
        prop_assert!(j.audit_potentials().unwrap() < 1e-10);
        for &u in &leaves {
            let fast = 4.0 * j.marginal(u).unwrap();
            prop_assert!(rel_err(fast, j.lambda_exhaustive(u).unwrap()) < 1e-9);
        }
    }

    #[test]
    fn action_distribution_is_a_distribution(
        seed in any::<u64>(),
        log_k in 1u32..4,
        losses in prop::collection::vec(0.0f64..=1.0, 2..30),
        fracs in prop::collection::vec(0.0f64..1.0, 30),
    ) {
        let actions = 1usize << log_k;
        let horizon = losses.len() + 1;
        let similar = similar_of(&fracs[..horizon - 1]);
        let mut learner = Cbnn::new(&LearnerConfig::new(horizon, actions, 1.0, seed)).unwrap();
        for (i, &loss) in losses.iter().enumerate() {
            let n = (i > 0).then(|| similar[i]);
            let a = learner.choose_action(n).unwrap();
            prop_assert!(a < actions);
            learner.feedback(loss).unwrap();
        }
        let dist = learner.action_distribution(Some(similar[horizon - 1])).unwrap();
        let total: f64 = dist.iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-9);
        prop_assert!(dist.iter().all(|&p| p > 0.0));
    }

    #[test]
    fn initial_prior_has_half_mass(fracs in prop::collection::vec(0.0f64..1.0, 2..11)) {
        let similar = similar_of(&fracs);
        prop_assert!((initial_mass(similar.len(), &similar).unwrap() - 0.5).abs() < 1e-12);
    }

    #[test]
    fn complexity_bounded_by_trials(fracs in prop::collection::vec(0.0f64..1.0, 0..40), labels in prop::collection::vec(0usize..4, 41)) {
        let similar = similar_of(&fracs);
        let phi = policy_complexity(&labels[..similar.len()], &similar).unwrap();
        prop_assert!(phi >= 1 && phi <= similar.len());
    }

    #[test]
    fn exact_store_returns_nearest(points in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 2), 1..100), x in prop::collection::vec(-5.0f64..5.0, 2)) {
        let mut store = MetricStore::new(2, BackendKind::ExactScan).unwrap();
        for (t, p) in points.iter().enumerate() {
            store.insert(p, t + 1).unwrap();
        }
        let (hit, t) = store.query(&x).unwrap();
        let best = points.iter().map(|p| Euclidean.distance(&x, p)).fold(f64::INFINITY, f64::min);
        prop_assert_eq!(Euclidean.distance(&x, hit), best);
        let first = points.iter().position(|p| Euclidean.distance(&x, p) == best).unwrap() + 1;
        prop_assert_eq!(t, first);
    }

    #[test]
    fn quantise_is_idempotent_and_on_grid(q in 1usize..100, z in prop::collection::vec(0.0f64..=1.0, 1..5)) {
        let g = GridQuantiser::new(q, z.len()).unwrap();
        let once = g.quantise(&z).unwrap();
        prop_assert_eq!(g.quantise(&once).unwrap(), once.clone());
        for (c, orig) in once.iter().zip(&z) {
            let k = c * q as f64;
            prop_assert!((k - k.round()).abs() < 1e-9);
            prop_assert!((c - orig).abs() <= 0.5 / q as f64 + 1e-12);
        }
    }
}
