use hashdistill::distill::{kd_loss, kd_loss_grad, FeatureBatch, FeatureSource};
use hashdistill::hashing::{csq_grad, csq_loss, dch_grad, dch_loss, HashCenterSet, PairwiseSimilarity};
use hashdistill::Error;
use ndarray::{Array2, ArrayView2};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random(rows: usize, cols: usize, scale: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Array2::from_shape_fn((rows, cols), |_| rng.random_range(-scale..scale))
}

fn labels(n: usize, classes: u32, seed: u64) -> Vec<Vec<u32>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| vec![rng.random_range(0..classes)]).collect()
}

/// Largest relative error between `analytic` and a central difference of `f`.
fn fd_check(h: &Array2<f64>, analytic: &Array2<f64>, f: impl Fn(ArrayView2<f64>) -> f64) -> f64 {
    let eps = 1e-6;
    let mut worst: f64 = 0.0;
    for idx in 0..h.len() {
        let (r, c) = (idx / h.ncols(), idx % h.ncols());
        let mut plus = h.clone();
        plus[[r, c]] += eps;
        let mut minus = h.clone();
        minus[[r, c]] -= eps;
        let numeric = (f(plus.view()) - f(minus.view())) / (2.0 * eps);
        let a = analytic[[r, c]];
        let err = (numeric - a).abs() / (numeric.abs() + a.abs()).max(1e-6);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn kd_gradient_matches_finite_differences() {
    let t = FeatureBatch::new(random(6, 9, 2.0, 1), FeatureSource::Teacher);
    let s = random(6, 9, 2.0, 2);
    let g = kd_loss_grad(&t, &FeatureBatch::new(s.clone(), FeatureSource::Student)).unwrap();
    let err = fd_check(&s, &g, |v| kd_loss(&t, &FeatureBatch::new(v.to_owned(), FeatureSource::Student)).unwrap());
    assert!(err < 1e-4, "{err}");
}

#[test]
fn kd_loss_is_mean_over_batch_of_squared_distance() {
    let t = random(5, 4, 1.0, 3);
    let s = random(5, 4, 1.0, 4);
    let mut oracle = 0.0;
    for i in 0..5 {
        for j in 0..4 {
            oracle += (s[[i, j]] - t[[i, j]]).powi(2);
        }
    }
    oracle /= 5.0;
    let got = kd_loss(
        &FeatureBatch::new(t, FeatureSource::Teacher),
        &FeatureBatch::new(s, FeatureSource::Student),
    )
    .unwrap();
    assert!((got - oracle).abs() < 1e-12);
}

#[test]
fn csq_gradient_matches_finite_differences() {
    let centers = HashCenterSet::generate(5, 16, 0).unwrap();
    let lab = labels(7, 5, 5);
    let targets = centers.targets(&lab).unwrap();
    let h = random(7, 16, 2.0, 6);
    for lambda in [0.0, 1e-4, 0.5] {
        let g = csq_grad(h.view(), targets.view(), lambda).unwrap();
        let err = fd_check(&h, &g, |v| csq_loss(v, targets.view(), lambda).unwrap().total());
        assert!(err < 1e-4, "lambda {lambda}: {err}");
    }
}

#[test]
fn dch_gradient_matches_finite_differences() {
    let lab = labels(8, 3, 7);
    let sim = PairwiseSimilarity::from_labels(&lab);
    let h = random(8, 12, 1.5, 8);
    for (gamma, lambda) in [(20.0, 0.1), (2.0, 0.0), (5.0, 1.0)] {
        let g = dch_grad(h.view(), &sim, gamma, lambda).unwrap();
        let err = fd_check(&h, &g, |v| dch_loss(v, &sim, gamma, lambda).unwrap().total());
        assert!(err < 1e-4, "gamma {gamma} lambda {lambda}: {err}");
    }
}

/// Straight transcription of the Cauchy pairwise loss over all ordered pairs,
/// averaging within the similar and dissimilar groups.
fn dch_oracle(h: &Array2<f64>, lab: &[Vec<u32>], gamma: f64, lambda: f64) -> f64 {
    let (n, k) = h.dim();
    let norm = |i: usize| h.row(i).dot(&h.row(i)).sqrt();
    let (mut sim_sum, mut sim_n, mut dis_sum, mut dis_n) = (0.0, 0usize, 0.0, 0usize);
    for i in 0..n {
        for j in 0..n {
            if i == j {
                continue;
            }
            let cos = h.row(i).dot(&h.row(j)) / (norm(i) * norm(j));
            let d = k as f64 / 2.0 * (1.0 - cos);
            let p = gamma / (gamma + d);
            if lab[i].iter().any(|l| lab[j].contains(l)) {
                sim_sum += -p.ln();
                sim_n += 1;
            } else {
                dis_sum += -(1.0 - p).ln();
                dis_n += 1;
            }
        }
    }
    let pair = if sim_n > 0 { sim_sum / sim_n as f64 } else { 0.0 } + if dis_n > 0 { dis_sum / dis_n as f64 } else { 0.0 };
    let mut q = 0.0;
    for i in 0..n {
        let abs_sum: f64 = h.row(i).iter().map(|v| v.abs()).sum();
        let cos = abs_sum / (norm(i) * (k as f64).sqrt());
        q += (1.0 + k as f64 / 2.0 * (1.0 - cos) / gamma).ln();
    }
    pair + lambda * q / n as f64
}

#[test]
fn dch_matches_brute_force_oracle() {
    for seed in 0..20u64 {
        let n = 3 + seed as usize % 6;
        let lab = labels(n, 3, 100 + seed);
        let h = random(n, 8 + seed as usize % 9, 3.0, 200 + seed);
        let sim = PairwiseSimilarity::from_labels(&lab);
        let got = dch_loss(h.view(), &sim, 20.0, 0.1).unwrap().total();
        let want = dch_oracle(&h, &lab, 20.0, 0.1);
        assert!((got - want).abs() < 1e-6, "seed {seed}: {got} vs {want}");
    }
}

#[test]
fn dch_rejects_zero_rows() {
    let mut h = random(4, 6, 1.0, 9);
    h.row_mut(2).fill(0.0);
    let sim = PairwiseSimilarity::from_labels(&labels(4, 2, 1));
    assert!(matches!(dch_loss(h.view(), &sim, 20.0, 0.1), Err(Error::ZeroNorm(2))));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]

    #[test]
    fn dch_is_permutation_invariant(seed in any::<u64>(), n in 3usize..9) {
        let lab = labels(n, 3, seed);
        let h = random(n, 10, 2.0, seed ^ 0xabc);
        let sim = PairwiseSimilarity::from_labels(&lab);
        let mut perm: Vec<usize> = (0..n).collect();
        perm.rotate_left(seed as usize % n);
        perm.swap(0, n - 1);
        let hp = Array2::from_shape_fn(h.dim(), |(i, j)| h[[perm[i], j]]);
        let a = dch_loss(h.view(), &sim, 20.0, 0.1).unwrap().total();
        let b = dch_loss(hp.view(), &sim.permuted(&perm), 20.0, 0.1).unwrap().total();
        prop_assert!((a - b).abs() < 1e-10 * a.abs().max(1.0));
    }

    #[test]
    fn dch_ignores_positive_row_scaling(seed in any::<u64>(), n in 2usize..8, scale in 0.01f64..100.0) {
        let lab = labels(n, 3, seed);
        let h = random(n, 10, 2.0, seed ^ 0x55);
        let sim = PairwiseSimilarity::from_labels(&lab);
        let mut hs = h.clone();
        hs.row_mut(0).mapv_inplace(|v| v * scale);
        let a = dch_loss(h.view(), &sim, 20.0, 0.1).unwrap().total();
        let b = dch_loss(hs.view(), &sim, 20.0, 0.1).unwrap().total();
        prop_assert!((a - b).abs() < 1e-9 * a.abs().max(1.0));
    }

    #[test]
    fn csq_loss_is_finite_and_nonnegative(seed in any::<u64>(), scale in 0.1f64..50.0) {
        let centers = HashCenterSet::generate(4, 8, 0).unwrap();
        let targets = centers.targets(&labels(5, 4, seed)).unwrap();
        let h = random(5, 8, scale, seed);
        let t = csq_loss(h.view(), targets.view(), 1e-4).unwrap();
        prop_assert!(t.total().is_finite() && t.total() >= 0.0);
        let g = csq_grad(h.view(), targets.view(), 1e-4).unwrap();
        prop_assert!(g.iter().all(|v| v.is_finite()));
    }
}
