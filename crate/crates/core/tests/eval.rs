mod common;

use common::tiny_instance;
use fairpost::data::synth_tightness;
use fairpost::eval::{
    epsilon_g, epsilon_g_bound, epsilon_r, policy_risk, policy_violation, risk, risk_estimate, save_sweep,
    sweep, violation_max, EvalSet, RiskMode, SweepConfig, SweepMode, SWEEP_COLUMNS,
};
use fairpost::postprocess::PostOptions;
use fairpost::{NoiseSpec, PostprocessParams, RandomizedClassifier};
use ndarray::{array, Array2};
use proptest::prelude::*;

#[test]
fn identity_classifier_on_tightness() {
    let t = synth_tightness(0.25, 0.0).unwrap();
    let spec = t.spec(0.0).unwrap();
    let bayes = array![[1.0, 0.0], [0.0, 1.0]];
    assert_eq!(policy_risk(bayes.view(), t.truth.risks(), t.truth.weights()).unwrap(), 0.0);
    let v = policy_violation(bayes.view(), t.truth.groups(), t.truth.weights(), &spec).unwrap();
    assert!((v.max - 0.5).abs() < 1e-12);
    assert!((v.rms - 0.5).abs() < 1e-12);

    let h = RandomizedClassifier::new(PostprocessParams::unconstrained(2, 2, NoiseSpec::none(0)).unwrap());
    assert_eq!(risk(&h, &t.truth, RiskMode::Analytic).unwrap(), 0.0);
}

#[test]
fn noise_costs_at_most_the_budget() {
    let t = synth_tightness(0.25, 0.0).unwrap();
    let r = array![[0.3, 0.31, 0.9], [0.5, 0.2, 0.21]];
    let b = t.truth.with_risks(r).unwrap().with_groups(array![[1.0, 0.0], [0.0, 1.0]]).unwrap();
    let sigma = 0.05;
    let h0 = RandomizedClassifier::new(PostprocessParams::unconstrained(3, 2, NoiseSpec::none(0)).unwrap());
    let h = RandomizedClassifier::new(PostprocessParams::unconstrained(3, 2, NoiseSpec::new(sigma, 1).unwrap()).unwrap());
    let base = risk(&h0, &b, RiskMode::Analytic).unwrap();
    let est = risk_estimate(&h, &b, None, RiskMode::MonteCarlo(50_000)).unwrap();
    assert!(est.value - base <= 3.0 * sigma / 2.0 + 4.0 * est.std_error);
}

#[test]
fn epsilon_on_tightness() {
    let t = synth_tightness(0.45, 0.2).unwrap();
    let e = epsilon_g(t.plugin.groups(), t.truth.groups(), t.truth.weights()).unwrap();
    assert!((e - 2.0 * (t.p_hat - t.p).abs()).abs() < 1e-12);
    assert_eq!(epsilon_g(t.truth.groups(), t.truth.groups(), t.truth.weights()).unwrap(), 0.0);
    assert_eq!(epsilon_r(t.truth.risks(), t.truth.risks(), t.truth.weights()).unwrap(), 0.0);
}

#[test]
fn sweep_matches_the_analytic_curve() {
    let t = synth_tightness(0.25, 0.0).unwrap();
    let cfg = SweepConfig {
        alphas: vec![0.01, 1.0, 0.5, 0.2, 0.1, 0.05, 0.02],
        noise: NoiseSpec::none(0),
        mode: SweepMode::Tabular,
        post: PostOptions::default(),
    };
    let eval = EvalSet {
        scores: &t.truth,
        truth_risks: None,
        truth_groups: None,
    };
    let rows = sweep(&t.truth, &eval, &t.spec(0.0).unwrap(), &cfg).unwrap();
    assert!(rows.windows(2).all(|w| w[0].alpha > w[1].alpha));
    for row in &rows {
        assert!((row.risk - t.opt(row.alpha)).abs() < 1e-6, "{row:?}");
        assert!(row.violation_max <= row.alpha + 1e-9);
    }
    let dir = tempfile::tempdir().unwrap();
    let csv = dir.path().join("sweep.csv");
    save_sweep(&rows, &csv, Some(&dir.path().join("sweep.json"))).unwrap();
    let text = std::fs::read_to_string(&csv).unwrap();
    assert_eq!(text.lines().next().unwrap(), SWEEP_COLUMNS.join(","));
    assert_eq!(text.lines().count(), rows.len() + 1);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn constant_classifiers_are_fair(seed in 0u64..10_000, class in 0usize..3) {
        let (scores, spec) = tiny_instance(seed, 0.0);
        let class = class % scores.num_classes();
        let policy = Array2::from_shape_fn((scores.len(), scores.num_classes()), |(_, y)| (y == class) as u8 as f64);
        let v = policy_violation(policy.view(), scores.groups(), scores.weights(), &spec).unwrap();
        prop_assert!(v.max < 1e-12);
        prop_assert!(v.rms < 1e-12);
    }

    #[test]
    fn group_error_respects_its_bound(seed in 0u64..10_000, other in 0u64..10_000) {
        let (a, _) = tiny_instance(seed, 0.0);
        let (b, _) = tiny_instance(other, 0.0);
        prop_assume!(a.len() == b.len() && a.num_groups() == b.num_groups());
        let e = epsilon_g(b.groups(), a.groups(), a.weights());
        let bound = epsilon_g_bound(b.groups(), a.groups(), a.weights());
        if let (Ok(e), Ok(bound)) = (e, bound) {
            prop_assert!(e <= bound + 1e-12);
        }
    }

    #[test]
    fn rms_never_exceeds_max(seed in 0u64..10_000) {
        let (scores, spec) = tiny_instance(seed, 0.0);
        let h = RandomizedClassifier::new(
            PostprocessParams::unconstrained(scores.num_classes(), scores.num_groups(), NoiseSpec::none(0)).unwrap(),
        );
        let v = violation_max(&h, &scores, None, &spec, RiskMode::Analytic).unwrap();
        prop_assert!(v.rms <= v.max + 1e-12);
        prop_assert!(v.per_constraint.iter().all(|&c| c <= v.max));
    }
}
