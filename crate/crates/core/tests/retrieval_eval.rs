use hashdistill::retrieval::{
    average_precision_at_n, binarize_row, expected_random_ap, hamming_rank, map_at_n, random_baseline_map,
    CodeMatrix,
};
use hashdistill::Error;
use ndarray::Array2;
use proptest::prelude::*;
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

struct Instance {
    q: Array2<f32>,
    db: Array2<f32>,
    q_labels: Vec<Vec<u32>>,
    db_labels: Vec<Vec<u32>>,
    db_ids: Vec<u64>,
}

fn instance(seed: u64) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let k = rng.random_range(1..100usize);
    let nq = rng.random_range(1..6usize);
    let ndb = rng.random_range(1..60usize);
    let classes = rng.random_range(1..5u32);
    let lab = |rng: &mut ChaCha8Rng| -> Vec<u32> {
        let mut l: Vec<u32> = (0..classes).filter(|_| rng.random_bool(0.4)).collect();
        if l.is_empty() {
            l.push(rng.random_range(0..classes));
        }
        l
    };
    // few distinct values so that ties in distance are common
    let q = Array2::from_shape_fn((nq, k), |_| rng.random_range(-1i32..=1) as f32);
    let db = Array2::from_shape_fn((ndb, k), |_| rng.random_range(-1i32..=1) as f32);
    let q_labels = (0..nq).map(|_| lab(&mut rng)).collect();
    let db_labels = (0..ndb).map(|_| lab(&mut rng)).collect();
    let mut db_ids: Vec<u64> = (0..ndb as u64).map(|i| i * 3 + 1).collect();
    db_ids.shuffle(&mut rng);
    Instance { q, db, q_labels, db_labels, db_ids }
}

/// Sign vectors, full sort by (distance, id), AP with the retrieved-relevant denominator.
fn map_oracle(inst: &Instance, n: usize) -> f64 {
    let sign = |v: f32| if v >= 0.0 { 1i32 } else { -1 };
    let k = inst.q.ncols() as i32;
    let mut total = 0.0;
    for qi in 0..inst.q.nrows() {
        let mut ranked: Vec<(i32, u64, usize)> = (0..inst.db.nrows())
            .map(|di| {
                let dot: i32 = (0..inst.q.ncols()).map(|j| sign(inst.q[[qi, j]]) * sign(inst.db[[di, j]])).sum();
                ((k - dot) / 2, inst.db_ids[di], di)
            })
            .collect();
        ranked.sort();
        let (mut hits, mut sum) = (0.0, 0.0);
        for (pos, &(_, _, di)) in ranked.iter().take(n).enumerate() {
            if inst.q_labels[qi].iter().any(|l| inst.db_labels[di].contains(l)) {
                hits += 1.0;
                sum += hits / (pos + 1) as f64;
            }
        }
        total += if hits > 0.0 { sum / hits } else { 0.0 };
    }
    total / inst.q.nrows() as f64
}

fn codes(inst: &Instance) -> (CodeMatrix, CodeMatrix) {
    let q = CodeMatrix::from_features(inst.q.view(), (0..inst.q.nrows() as u64).collect(), inst.q_labels.clone())
        .unwrap();
    let db = CodeMatrix::from_features(inst.db.view(), inst.db_ids.clone(), inst.db_labels.clone()).unwrap();
    (q, db)
}

#[test]
fn map_matches_oracle_on_random_instances() {
    for seed in 0..200u64 {
        let inst = instance(seed);
        let (q, db) = codes(&inst);
        let n = 1 + seed as usize % db.len();
        let got = map_at_n(&q, &db, n).unwrap().map;
        let want = map_oracle(&inst, n);
        assert!((got - want).abs() < 1e-12, "seed {seed}: {got} vs {want}");
        assert!((0.0..=1.0).contains(&got));
    }
}

#[test]
fn ranking_matches_exhaustive_sort() {
    for seed in 0..50u64 {
        let inst = instance(1000 + seed);
        let (q, db) = codes(&inst);
        let n = db.len();
        let ranked = hamming_rank(q.code(0), &db, n).unwrap();
        let mut want: Vec<(u32, u64)> = (0..db.len())
            .map(|i| {
                let d = (0..db.k_bits()).filter(|&j| q.code(0).bit(j) != db.code(i).bit(j)).count() as u32;
                (d, db.ids()[i])
            })
            .collect();
        want.sort();
        let got: Vec<(u32, u64)> = ranked.entries.iter().map(|e| (e.distance, e.id)).collect();
        assert_eq!(got, want);
        // a prefix request returns the prefix of the full ranking
        let m = 1 + seed as usize % n;
        assert_eq!(hamming_rank(q.code(0), &db, m).unwrap().entries[..], ranked.entries[..m]);
    }
}

#[test]
fn mismatched_bits_and_oversized_n_are_rejected() {
    let inst = instance(3);
    let (q, db) = codes(&inst);
    assert!(hamming_rank(q.code(0), &db, db.len() + 1).is_err());
    let other = CodeMatrix::new(db.k_bits() + 1, vec![0; db.len() * ((db.k_bits() + 64) / 64)], db.ids().to_vec(), db.labels().to_vec());
    if let Ok(other) = other {
        assert!(matches!(hamming_rank(q.code(0), &other, 1), Err(Error::Shape(_))));
    }
}

#[test]
fn perfect_and_adversarial_codes() {
    // database items carry exactly the query code when relevant and its complement otherwise
    let k = 32;
    let qf = Array2::from_shape_fn((1, k), |(_, j)| if j % 3 == 0 { 1.0f32 } else { -1.0 });
    let dbf = Array2::from_shape_fn((10, k), |(i, j)| if i < 4 { qf[[0, j]] } else { -qf[[0, j]] });
    let db_labels: Vec<Vec<u32>> = (0..10).map(|i| vec![u32::from(i >= 4)]).collect();
    let q = CodeMatrix::from_features(qf.view(), vec![0], vec![vec![0]]).unwrap();
    let db = CodeMatrix::from_features(dbf.view(), (0..10).collect(), db_labels).unwrap();
    assert_eq!(map_at_n(&q, &db, 10).unwrap().map, 1.0);
    let flipped = CodeMatrix::from_features((-&qf).view(), vec![0], vec![vec![0]]).unwrap();
    // relevant items appear at ranks 7..10
    let want = (1.0 / 7.0 + 2.0 / 8.0 + 3.0 / 9.0 + 4.0 / 10.0) / 4.0;
    assert!((map_at_n(&flipped, &db, 10).unwrap().map - want).abs() < 1e-15);
    assert_eq!(map_at_n(&flipped, &db, 6).unwrap().map, 0.0);
}

#[test]
fn identical_codes_leave_only_id_order() {
    let k = 16;
    let qf = Array2::from_elem((1, k), 1.0f32);
    let dbf = Array2::from_elem((6, k), 1.0f32);
    let labels: Vec<Vec<u32>> = vec![vec![1], vec![0], vec![1], vec![0], vec![0], vec![1]];
    let q = CodeMatrix::from_features(qf.view(), vec![0], vec![vec![0]]).unwrap();
    let db = CodeMatrix::from_features(dbf.view(), vec![5, 4, 3, 2, 1, 0], labels).unwrap();
    // ascending ids: 0(l1) 1(l0) 2(l0) 3(l1) 4(l0) 5(l1)
    let rel = [false, true, true, false, true, false];
    let want = average_precision_at_n(&rel).unwrap();
    assert_eq!(map_at_n(&q, &db, 6).unwrap().map, want);
}

#[test]
fn random_baseline_matches_enumeration_and_monte_carlo() {
    // exhaustive over all orderings for a tiny database
    let (m, r, n) = (7usize, 3usize, 4usize);
    let mut items: Vec<bool> = (0..m).map(|i| i < r).collect();
    let mut total = 0.0;
    let mut count = 0usize;
    permute(&mut items, 0, &mut |p| {
        total += average_precision_at_n(&p[..n]).unwrap();
        count += 1;
    });
    assert!((expected_random_ap(m, r, n).unwrap() - total / count as f64).abs() < 1e-12);

    let (m, r, n) = (200usize, 20usize, 50usize);
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut items: Vec<bool> = (0..m).map(|i| i < r).collect();
    let trials = 40_000;
    let mut sum = 0.0;
    let mut sq = 0.0;
    for _ in 0..trials {
        items.shuffle(&mut rng);
        let ap = average_precision_at_n(&items[..n]).unwrap();
        sum += ap;
        sq += ap * ap;
    }
    let mean = sum / trials as f64;
    let se = ((sq / trials as f64 - mean * mean) / trials as f64).sqrt();
    let analytic = expected_random_ap(m, r, n).unwrap();
    assert!((analytic - mean).abs() < 4.0 * se, "{analytic} vs {mean} ± {se}");
}

fn permute(v: &mut Vec<bool>, k: usize, f: &mut impl FnMut(&[bool])) {
    if k == v.len() {
        f(v);
        return;
    }
    for i in k..v.len() {
        v.swap(k, i);
        permute(v, k + 1, f);
        v.swap(k, i);
    }
}

#[test]
fn baseline_reflects_class_balance() {
    let labels: Vec<Vec<u32>> = (0..1000).map(|i| vec![i % 10]).collect();
    let inst_q = Array2::from_elem((10, 8), 1.0f32);
    let inst_db = Array2::from_elem((1000, 8), 1.0f32);
    let q = CodeMatrix::from_features(inst_q.view(), (0..10).collect(), labels[..10].to_vec()).unwrap();
    let db = CodeMatrix::from_features(inst_db.view(), (0..1000).collect(), labels).unwrap();
    let b = random_baseline_map(&q, &db, 100).unwrap();
    assert!(b > 0.1 && b < 0.2, "{b}");
}

#[test]
fn code_file_round_trip_at_scale() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for &k in &[16usize, 48, 64, 100] {
        let n = 100_000;
        let f = Array2::from_shape_fn((n, k), |_| rng.random_range(-1.0f32..1.0));
        let ids: Vec<u64> = (0..n as u64).map(|i| i.wrapping_mul(0x9e37_79b9_7f4a_7c15)).collect();
        let labels: Vec<Vec<u32>> = (0..n).map(|i| (0..(i % 3) as u32).collect()).collect();
        let m = CodeMatrix::from_features(f.view(), ids, labels).unwrap();
        let mut buf = Vec::new();
        m.write_to(&mut buf).unwrap();
        let back = CodeMatrix::from_bytes(&buf).unwrap();
        assert_eq!(back, m);
        for i in (0..n).step_by(9973) {
            let row: Vec<f32> = f.row(i).to_vec();
            assert_eq!(back.code(i).words, &binarize_row(&row)[..]);
        }
    }
}

#[test]
fn code_file_layout_and_corruption() {
    let f = Array2::from_shape_fn((2, 3), |(i, j)| if (i + j) % 2 == 0 { 1.0f32 } else { -1.0 });
    let m = CodeMatrix::from_features(f.view(), vec![7, 9], vec![vec![2], vec![]]).unwrap();
    let mut buf = Vec::new();
    m.write_to(&mut buf).unwrap();
    assert_eq!(&buf[..4], b"CUKD");
    assert_eq!(u16::from_le_bytes([buf[4], buf[5]]), 1);
    assert_eq!(u16::from_le_bytes([buf[6], buf[7]]), 3);
    assert_eq!(u64::from_le_bytes(buf[8..16].try_into().unwrap()), 2);
    assert_eq!(u64::from_le_bytes(buf[16..24].try_into().unwrap()), 7);
    // bits 0 and 2 set for row 0, bit 1 for row 1
    assert_eq!(u64::from_le_bytes(buf[24..32].try_into().unwrap()), 0b101);
    assert_eq!(u64::from_le_bytes(buf[40..48].try_into().unwrap()), 0b010);
    assert_eq!(buf.len(), 16 + 2 * 16 + 8 + (4 + 4) + 4);

    // without the label block
    let no_labels = CodeMatrix::from_bytes(&buf[..48]).unwrap();
    assert_eq!(no_labels.labels(), &[Vec::<u32>::new(), Vec::new()]);

    match CodeMatrix::from_bytes(&buf[..30]) {
        Err(Error::Truncated { expected, actual, .. }) => assert_eq!((expected, actual), (48, 30)),
        other => panic!("{other:?}"),
    }
    let mut bad = buf.clone();
    bad[0] = b'X';
    assert!(matches!(CodeMatrix::from_bytes(&bad), Err(Error::Format { .. })));
    let mut bad = buf.clone();
    bad[4] = 2;
    assert!(matches!(CodeMatrix::from_bytes(&bad), Err(Error::Format { .. })));
    // a stray bit above K
    let mut bad = buf.clone();
    bad[24] |= 0b1000;
    assert!(CodeMatrix::from_bytes(&bad).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn ap_is_a_probability(rel in prop::collection::vec(any::<bool>(), 1..80)) {
        let ap = average_precision_at_n(&rel).unwrap();
        prop_assert!((0.0..=1.0).contains(&ap));
    }

    #[test]
    fn moving_a_hit_earlier_never_lowers_ap(rel in prop::collection::vec(any::<bool>(), 2..60), i in 0usize..59) {
        let i = i % (rel.len() - 1);
        prop_assume!(!rel[i] && rel[i + 1]);
        let mut better = rel.clone();
        better.swap(i, i + 1);
        prop_assert!(average_precision_at_n(&better).unwrap() >= average_precision_at_n(&rel).unwrap());
    }

    #[test]
    fn binarize_sets_bit_iff_nonnegative(v in prop::collection::vec(-2.0f32..2.0, 1..200)) {
        let words = binarize_row(&v);
        prop_assert_eq!(words.len(), (v.len() + 63) / 64);
        for (j, x) in v.iter().enumerate() {
            prop_assert_eq!((words[j / 64] >> (j % 64)) & 1 == 1, *x >= 0.0);
        }
    }
}
