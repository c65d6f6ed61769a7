use std::collections::HashSet;

use hashdistill::data::cifar::cifar10_split_from_labels;
use hashdistill::data::nuswide::{nuswide_split_from_items, NUS_WIDE_CLASSES};
use hashdistill::data::{make_synthetic, quota_split, DatasetSplit, Quota, SplitItem, SyntheticSpec};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn cifar_labels() -> Vec<u32> {
    (0..60_000u32).map(|i| i % 10).collect()
}

fn assert_partition(split: &DatasetSplit, total: usize) {
    split.check_disjoint().unwrap();
    let all: HashSet<u64> = split.train.iter().chain(&split.query).chain(&split.database).copied().collect();
    assert_eq!(all.len(), total);
}

#[test]
fn cifar10_sizes_and_per_class_quotas() {
    let labels = cifar_labels();
    for seed in [0, 1, 42] {
        let split = cifar10_split_from_labels(&labels, seed).unwrap();
        assert_eq!(split.query.len(), 1000);
        assert_eq!(split.train.len(), 5000);
        assert_eq!(split.database.len(), 54_000);
        assert_partition(&split, 60_000);
        for c in 0..10u32 {
            assert_eq!(split.query.iter().filter(|&&i| labels[i as usize] == c).count(), 100);
            assert_eq!(split.train.iter().filter(|&&i| labels[i as usize] == c).count(), 500);
        }
    }
}

#[test]
fn cifar10_split_depends_only_on_seed() {
    let labels = cifar_labels();
    let a = cifar10_split_from_labels(&labels, 9).unwrap();
    assert_eq!(a, cifar10_split_from_labels(&labels, 9).unwrap());
    assert_ne!(a.query, cifar10_split_from_labels(&labels, 10).unwrap().query);
}

/// Multi-hot items whose concept frequencies are skewed the way web tags are.
fn nuswide_like(n: usize, seed: u64) -> Vec<SplitItem> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|i| {
            let mut labels: Vec<u32> = Vec::new();
            let primary = (rng.random::<f64>().powi(2) * NUS_WIDE_CLASSES as f64) as u32;
            labels.push(primary.min(NUS_WIDE_CLASSES as u32 - 1));
            while rng.random_bool(0.35) {
                let extra = rng.random_range(0..NUS_WIDE_CLASSES as u32);
                if !labels.contains(&extra) {
                    labels.push(extra);
                }
            }
            labels.sort_unstable();
            SplitItem { id: i as u64, path: format!("img/{i}.jpg"), labels }
        })
        .collect()
}

#[test]
fn nuswide_sizes_at_full_scale() {
    let items = nuswide_like(162_336, 3);
    let split = nuswide_split_from_items(items.clone(), 0).unwrap();
    assert_eq!(split.query.len(), 2100);
    assert_eq!(split.train.len(), 10_500);
    assert_eq!(split.database.len(), 149_736);
    assert_partition(&split, 162_336);
    // every concept contributed at least its quota of items carrying it
    for c in 0..NUS_WIDE_CLASSES as u32 {
        let carrying = split.query.iter().filter(|&&i| items[i as usize].labels.contains(&c)).count();
        assert!(carrying >= 100, "concept {c}: {carrying}");
    }
}

#[test]
fn nuswide_rejects_a_missing_concept() {
    let items: Vec<SplitItem> = nuswide_like(5000, 1)
        .into_iter()
        .filter(|it| !it.labels.contains(&20))
        .collect();
    assert!(nuswide_split_from_items(items, 0).is_err());
}

#[test]
fn manifest_round_trip() {
    let split = make_synthetic(&SyntheticSpec::new(4, 12, 8, 2)).unwrap().split;
    let back = DatasetSplit::from_manifest(&split.to_manifest()).unwrap();
    assert_eq!(split, back);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn quotas_hold_for_any_seed(seed in any::<u64>(), classes in 2usize..8, extra in 0usize..6) {
        let per_class = 5 + extra;
        let labels: Vec<Vec<u32>> = (0..classes * per_class).map(|i| vec![(i % classes) as u32]).collect();
        let quota = Quota { query_per_class: 1, train_per_class: 3 };
        let (train, query, database) = quota_split(&labels, classes, quota, seed).unwrap();
        prop_assert_eq!(query.len(), classes);
        prop_assert_eq!(train.len(), 3 * classes);
        prop_assert_eq!(train.len() + query.len() + database.len(), labels.len());
        for c in 0..classes as u32 {
            prop_assert_eq!(query.iter().filter(|&&i| labels[i][0] == c).count(), 1);
            prop_assert_eq!(train.iter().filter(|&&i| labels[i][0] == c).count(), 3);
        }
        let mut seen: Vec<usize> = train.iter().chain(&query).chain(&database).copied().collect();
        seen.sort_unstable();
        seen.dedup();
        prop_assert_eq!(seen.len(), labels.len());
    }
}
