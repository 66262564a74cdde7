use cbnn::belief::rel_err;
use cbnn::oracle::ExplicitWeights;
use cbnn::{Cbnn, LearnerConfig};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

// Drives the learner and the explicit-weight oracle with the same draws and
// returns the worst relative theta disagreement.
fn mirrored_run(horizon: usize, actions: usize, seed: u64) -> f64 {
    let mut env = ChaCha8Rng::seed_from_u64(seed ^ 0xabcdef);
    let mut learner = Cbnn::new(&LearnerConfig::new(horizon, actions, 1.5, seed)).unwrap();
    let mut oracle = ExplicitWeights::new(horizon, actions).unwrap();
    let mut worst: f64 = 0.0;
    for t in 1..=horizon {
        let similar = (t > 1).then(|| env.random_range(1..t));
        if let Some(n) = similar {
            oracle.extend(n).unwrap();
        }
        let action = learner.choose_action(similar).unwrap();
        let rec = learner.current_trial().unwrap().clone();
        let loss = f64::from(u8::from(env.random_bool(0.5)));
        learner.feedback(loss).unwrap();
        let trace = oracle
            .step(&rec.zeta, &vec![loss; actions], learner.eta())
            .unwrap();
        assert_eq!(trace.path, rec.path, "t={t}");
        assert_eq!(trace.action, action);
        for (fast, slow) in rec.theta.iter().zip(&trace.theta) {
            worst = worst
                .max(rel_err(fast[0], slow[0]))
                .max(rel_err(fast[1], slow[1]));
        }
        let done = learner.last_trial().unwrap();
        for (fast, slow) in done.psi.iter().zip(&trace.psi) {
            worst = worst.max(rel_err(*fast, *slow));
        }
    }
    worst
}

#[test]
fn learner_matches_explicit_weights() {
    for &horizon in &[4, 6, 8] {
        for &actions in &[2, 4] {
            for seed in 0..10 {
                let err = mirrored_run(horizon, actions, seed);
                assert!(err < 1e-9, "T={horizon} K={actions} seed={seed}: {err}");
            }
        }
    }
}

#[test]
fn distribution_matches_explicit_weights() {
    let (horizon, actions) = (7, 4);
    let mut env = ChaCha8Rng::seed_from_u64(77);
    let mut learner = Cbnn::new(&LearnerConfig::new(horizon, actions, 1.0, 3)).unwrap();
    let mut oracle = ExplicitWeights::new(horizon, actions).unwrap();
    for t in 1..=horizon {
        let similar = (t > 1).then(|| env.random_range(1..t));
        if let Some(n) = similar {
            oracle.extend(n).unwrap();
        }
        let fast = learner.action_distribution(similar).unwrap();
        for (a, b) in fast.iter().zip(oracle.distribution()) {
            assert!(rel_err(*a, b) < 1e-9);
        }
        learner.choose_action(similar).unwrap();
        let rec = learner.current_trial().unwrap().clone();
        let loss: f64 = env.random();
        learner.feedback(loss).unwrap();
        oracle
            .step(&rec.zeta, &vec![loss; actions], learner.eta())
            .unwrap();
    }
}

#[test]
fn feedback_trace_ratios_match_oracle() {
    // K = 2, eta chosen so that exp(-eta / pi) = 1/2 on trial 2
    let mut oracle = ExplicitWeights::new(4, 2).unwrap();
    oracle.step(&[0.1], &[0.0, 0.0], 0.0).unwrap();
    oracle.extend(1).unwrap();
    let eta = std::f64::consts::LN_2 / 2.0;
    let before: Vec<f64> = (0..4).map(|s| oracle.weight(2, s)).collect();
    let sib: Vec<f64> = (0..4).map(|s| oracle.weight(3, s)).collect();
    let trace = oracle.step(&[0.1], &[1.0, 1.0], eta).unwrap();
    assert_eq!(trace.action, 0);
    assert!((trace.psi[1] - 0.5).abs() < 1e-12);
    assert!((trace.psi[0] - 0.75).abs() < 1e-12);
    for s in [2, 3] {
        assert!((oracle.weight(2, s) / before[s] - 2.0 / 3.0).abs() < 1e-12);
        assert!((oracle.weight(3, s) / sib[s] - 4.0 / 3.0).abs() < 1e-12);
    }
    assert!((oracle.pair_mass(1) - 1.0).abs() < 1e-12);
}
