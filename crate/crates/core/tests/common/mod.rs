#![allow(dead_code)]

use fairpost::data::{candidate_specs, synth_random, RandomOptions};
use fairpost::oracle::MAX_ORACLE_VARS;
use fairpost::{FairnessSpec, ScoreBundle};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Whether both fairness programs of the instance fit the oracle.
pub fn within_caps(n: usize, spec: &FairnessSpec) -> bool {
    let primal = n * spec.num_classes() + spec.constraints().len();
    let dual = n + 2 * spec.num_pairs();
    primal <= MAX_ORACLE_VARS && dual <= MAX_ORACLE_VARS
}

/// Random tiny instance for `seed`, with a constraint set chosen among the
/// candidates that fit the oracle.
pub fn tiny_instance(seed: u64, alpha: f64) -> (ScoreBundle, FairnessSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x5eed);
    loop {
        let num_classes = rng.gen_range(2..=3);
        let num_groups = rng.gen_range(2..=3);
        let n = rng.gen_range(num_groups..=4);
        let opts = RandomOptions {
            n,
            num_classes,
            num_groups,
            one_hot: rng.gen_bool(0.5),
            random_weights: rng.gen_bool(0.5),
        };
        let specs: Vec<FairnessSpec> = candidate_specs(num_classes, num_groups, alpha)
            .unwrap()
            .into_iter()
            .filter(|s| within_caps(n, s))
            .collect();
        if specs.is_empty() {
            continue;
        }
        let spec = specs[rng.gen_range(0..specs.len())].clone();
        let scores = synth_random(rng.gen(), &opts).unwrap();
        return (scores, spec);
    }
}

/// Tiny instance with two groups: parity of every class for binary labels,
/// of class 0 otherwise.
pub fn two_group_instance(seed: u64, alpha: f64) -> (ScoreBundle, FairnessSpec) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x2a);
    let num_classes = rng.gen_range(2..=3);
    let n = if num_classes == 2 { rng.gen_range(2..=4) } else { rng.gen_range(2..=3) };
    let opts = RandomOptions {
        n,
        num_classes,
        num_groups: 2,
        one_hot: rng.gen_bool(0.5),
        random_weights: rng.gen_bool(0.5),
    };
    let spec = candidate_specs(num_classes, 2, alpha)
        .unwrap()
        .remove(if num_classes == 2 { 0 } else { 1 });
    assert!(within_caps(n, &spec));
    (synth_random(rng.gen(), &opts).unwrap(), spec)
}
