//! Values pinned from `scripts/subsample_reference.py`, an independent
//! reimplementation of the seeded generator and shuffle.

use std::path::PathBuf;

use mcqa_eval::dataset::{load_dataset, subsample};
use mcqa_eval::metrics::calibration_split;
use mcqa_eval::rng::SplitMix64;

fn fixture_ids(n: usize, seed: u64) -> Vec<String> {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/offline/items.jsonl");
    let items = load_dataset(&path, "fixture").unwrap();
    subsample(&items, n, seed).unwrap().into_iter().map(|i| i.id).collect()
}

#[test]
fn subsample_matches_reference() {
    assert_eq!(fixture_ids(5, 7), ["q03", "q11", "q15", "r01", "r02"]);
    assert_eq!(fixture_ids(2, 7), ["q11", "r01"]);
    assert_eq!(
        fixture_ids(10, 0),
        ["q04", "q06", "q07", "q08", "q10", "q12", "q15", "q16", "r02", "r03"]
    );
    assert_eq!(fixture_ids(20, 123).len(), 20);
}

#[test]
fn calibration_split_matches_reference() {
    assert_eq!(calibration_split(10, 11), (vec![1, 4, 6, 7, 8], vec![0, 2, 3, 5, 9]));
    assert_eq!(calibration_split(7, 3), (vec![1, 2, 5], vec![0, 3, 4, 6]));
}

#[test]
fn generator_stream_matches_reference() {
    let mut rng = SplitMix64::new(7);
    let got: Vec<u64> = (0..3).map(|_| rng.next_u64()).collect();
    assert_eq!(got, [7191089600892374487, 309689372594955804, 16616101746815609346]);
}
