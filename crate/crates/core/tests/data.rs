use std::io::Write;

use fairpost::data::{split, split_sizes, synth_random, synth_tightness, Dataset, RandomOptions, Schema};
use fairpost::Error;
use proptest::prelude::*;

fn write(dir: &tempfile::TempDir, name: &str, text: &str) -> std::path::PathBuf {
    let path = dir.path().join(name);
    std::fs::File::create(&path).unwrap().write_all(text.as_bytes()).unwrap();
    path
}

#[test]
fn three_row_file() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(&dir, "d.csv", "y,a,f1\n0,0,0.1\n1,1,0.2\n1,0,0.3\n");
    let schema = write(&dir, "s.json", r#"{"label": "y", "attribute": "a", "features": ["f1"]}"#);
    let d = Dataset::load_csv(&csv, &Schema::load(&schema).unwrap()).unwrap();
    assert_eq!(d.len(), 3);
    assert_eq!(d.attrs, Some(vec![0, 1, 0]));
    assert_eq!(d.num_attrs, 2);
}

#[test]
fn score_columns_give_a_bundle() {
    let dir = tempfile::tempdir().unwrap();
    let csv = write(
        &dir,
        "scores.csv",
        "r_0,r_1,g_0,g_1,w\n0.2,0.8,1,0,0.5\n0.7,0.3,0,1,0.499999\n",
    );
    let schema = Schema {
        risks: vec!["r_0".into(), "r_1".into()],
        groups: vec!["g_0".into(), "g_1".into()],
        weight: Some("w".into()),
        ..Schema::default()
    };
    let d = Dataset::load_csv(&csv, &schema).unwrap();
    let b = d.score_bundle().unwrap();
    assert_eq!(b.len(), 2);
    assert!((b.weights().sum() - 1.0).abs() < 1e-15);
    assert_eq!(b.risks()[[1, 0]], 0.7);

    let zero = write(&dir, "zero.csv", "r_0,r_1,g_0,g_1,w\n0.2,0.8,1,0,0\n0.7,0.3,0,1,0\n");
    assert!(matches!(Dataset::load_csv(&zero, &schema), Err(Error::Data(_))));
}

#[test]
fn missing_schema_names_the_path() {
    let err = Schema::load(std::path::Path::new("/nonexistent/schema.json")).unwrap_err();
    assert!(err.to_string().contains("/nonexistent/schema.json"));
    assert!(err.is_user_error());
}

#[test]
fn unknown_schema_keys_are_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let schema = write(&dir, "s.json", r#"{"lable": "y"}"#);
    assert!(Schema::load(&schema).is_err());
}

#[test]
fn tightness_excess_matches_the_closed_form() {
    let t = synth_tightness(0.45, 0.2).unwrap();
    assert!((t.excess(0.1) - 0.5 * 0.2 / (0.1 + 0.2)).abs() < 1e-12);
    let t = synth_tightness(0.3, 0.0).unwrap();
    assert_eq!(t.excess(0.05), 0.0);
}

#[test]
fn random_bundles_are_reproducible() {
    let opts = RandomOptions {
        n: 5,
        num_classes: 3,
        num_groups: 2,
        one_hot: true,
        random_weights: true,
    };
    assert_eq!(synth_random(0, &opts).unwrap(), synth_random(0, &opts).unwrap());
    let b = synth_random(0, &opts).unwrap();
    for row in b.groups().rows() {
        assert_eq!(row.iter().filter(|&&v| v == 1.0).count(), 1);
        assert_eq!(row.sum(), 1.0);
    }
}

proptest! {
    #[test]
    fn splits_partition_the_rows(n in 1usize..500, a in 0.0f64..1.0, seed in any::<u64>()) {
        let fr = [a * 0.5, a * 0.5, 1.0 - a];
        let sizes = split_sizes(n, &fr).unwrap();
        prop_assert_eq!(sizes.iter().sum::<usize>(), n);
        for (s, f) in sizes.iter().zip(fr) {
            prop_assert!((*s as f64 - f * n as f64).abs() < 1.0 + 1e-9);
        }
        let parts = split(n, &fr, seed).unwrap();
        let mut all: Vec<usize> = parts.concat();
        all.sort_unstable();
        prop_assert_eq!(all, (0..n).collect::<Vec<_>>());
    }

    #[test]
    fn random_bundles_are_valid(seed in any::<u64>(), n in 3usize..=6, nc in 2usize..=3, k in 2usize..=3, hot in any::<bool>()) {
        let b = synth_random(seed, &RandomOptions { n, num_classes: nc, num_groups: k, one_hot: hot, random_weights: true }).unwrap();
        prop_assert!((b.weights().sum() - 1.0).abs() < 1e-12);
        for row in b.groups().rows() {
            prop_assert!((row.sum() - 1.0).abs() < 1e-12);
        }
        prop_assert!(b.risks().iter().all(|v| (0.0..=1.0).contains(v)));
    }
}
