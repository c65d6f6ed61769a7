use std::fmt;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::{Error, Result};

/// Rejection rounds before random center sampling gives up.
pub const MAX_CENTER_ROUNDS: usize = 1000;

/// One K-bit binary target per class.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct HashCenterSet {
    centers: Array2<u8>,
}

impl HashCenterSet {
    /// Builds a set from explicit 0/1 rows and checks its invariants.
    pub fn from_rows(centers: Array2<u8>) -> Result<Self> {
        if centers.nrows() < 2 || centers.ncols() == 0 {
            return Err(Error::Config(format!(
                "hash center set needs at least 2 classes and 1 bit, got {}x{}",
                centers.nrows(),
                centers.ncols()
            )));
        }
        if centers.iter().any(|&b| b > 1) {
            return Err(Error::Format {
                what: "hash centers",
                detail: "entries must be 0 or 1".into(),
            });
        }
        let set = HashCenterSet { centers };
        set.validate()?;
        Ok(set)
    }

    /// Hadamard rows (then their negations) when `k_bits` is a power of two
    /// and `2 * k_bits >= num_classes`; seeded balanced random codes
    /// otherwise.
    pub fn generate(num_classes: usize, k_bits: usize, seed: u64) -> Result<Self> {
        if num_classes < 2 || k_bits == 0 {
            return Err(Error::Config(format!(
                "hash centers need num_classes >= 2 and K_bits >= 1, got ({num_classes}, {k_bits})"
            )));
        }
        if k_bits.is_power_of_two() && 2 * k_bits >= num_classes {
            return Self::from_rows(hadamard_centers(num_classes, k_bits));
        }
        Self::random(num_classes, k_bits, seed)
    }

    fn random(num_classes: usize, k_bits: usize, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut template: Vec<u8> = (0..k_bits).map(|j| u8::from(j < k_bits / 2)).collect();
        let mut best = 0;
        for _ in 0..MAX_CENTER_ROUNDS {
            let mut centers = Array2::zeros((num_classes, k_bits));
            for mut row in centers.rows_mut() {
                template.shuffle(&mut rng);
                row.assign(&ndarray::ArrayView1::from(&template[..]));
            }
            let set = HashCenterSet { centers };
            best = best.max(set.min_distance());
            if set.validate().is_ok() {
                return Ok(set);
            }
        }
        Err(Error::HashCenters {
            classes: num_classes,
            bits: k_bits,
            rounds: MAX_CENTER_ROUNDS,
            best_min_distance: best,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.centers.nrows()
    }

    pub fn k_bits(&self) -> usize {
        self.centers.ncols()
    }

    pub fn centers(&self) -> &Array2<u8> {
        &self.centers
    }

    pub fn distance(&self, a: usize, b: usize) -> usize {
        self.centers
            .row(a)
            .iter()
            .zip(self.centers.row(b))
            .filter(|(x, y)| x != y)
            .count()
    }

    fn pair_distances(&self) -> impl Iterator<Item = usize> + '_ {
        let n = self.num_classes();
        (0..n).flat_map(move |a| (a + 1..n).map(move |b| self.distance(a, b)))
    }

    pub fn min_distance(&self) -> usize {
        self.pair_distances().min().unwrap_or(0)
    }

    pub fn average_distance(&self) -> f64 {
        let n = self.num_classes();
        let pairs = n * (n - 1) / 2;
        self.pair_distances().sum::<usize>() as f64 / pairs as f64
    }

    /// Distinct rows and average pairwise distance at least `K/2`.
    pub fn validate(&self) -> Result<()> {
        let k = self.k_bits();
        let min = self.min_distance();
        if min == 0 {
            return Err(Error::HashCenters {
                classes: self.num_classes(),
                bits: k,
                rounds: 0,
                best_min_distance: 0,
            });
        }
        if self.average_distance() * 2.0 < k as f64 {
            return Err(Error::HashCenters {
                classes: self.num_classes(),
                bits: k,
                rounds: 0,
                best_min_distance: min,
            });
        }
        Ok(())
    }

    /// Target code for a sample: its class center, or the bitwise majority
    /// of several class centers with ties going to 1.
    pub fn target_for(&self, labels: &[u32]) -> Result<Vec<u8>> {
        if labels.is_empty() {
            return Err(Error::Dataset("sample without labels has no hash center".into()));
        }
        let mut votes = vec![0usize; self.k_bits()];
        for &l in labels {
            let l = l as usize;
            if l >= self.num_classes() {
                return Err(Error::Config(format!(
                    "label {l} has no hash center ({} classes)",
                    self.num_classes()
                )));
            }
            for (v, &b) in votes.iter_mut().zip(self.centers.row(l)) {
                *v += b as usize;
            }
        }
        Ok(votes.iter().map(|&v| u8::from(2 * v >= labels.len())).collect())
    }

    /// Target rows for a batch of label sets.
    pub fn targets(&self, labels: &[Vec<u32>]) -> Result<Array2<u8>> {
        let mut out = Array2::zeros((labels.len(), self.k_bits()));
        for (mut row, l) in out.rows_mut().into_iter().zip(labels) {
            row.assign(&ndarray::Array1::from(self.target_for(l)?));
        }
        Ok(out)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_string())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        std::fs::read_to_string(path)?.parse()
    }
}

impl fmt::Display for HashCenterSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for row in self.centers.rows() {
            let line: String = row.iter().map(|&b| if b == 1 { '1' } else { '0' }).collect();
            writeln!(f, "{line}")?;
        }
        Ok(())
    }
}

impl FromStr for HashCenterSet {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let lines: Vec<&str> = s.lines().map(str::trim).filter(|l| !l.is_empty()).collect();
        let k = lines.first().map_or(0, |l| l.len());
        let mut bits = Vec::with_capacity(lines.len() * k);
        for (i, line) in lines.iter().enumerate() {
            if line.len() != k {
                return Err(Error::Format {
                    what: "hash centers",
                    detail: format!("line {} has {} bits, expected {k}", i + 1, line.len()),
                });
            }
            for c in line.chars() {
                bits.push(match c {
                    '0' => 0,
                    '1' => 1,
                    other => {
                        return Err(Error::Format {
                            what: "hash centers",
                            detail: format!("line {} contains {other:?}", i + 1),
                        })
                    }
                });
            }
        }
        let centers = Array2::from_shape_vec((lines.len(), k), bits).expect("length checked");
        Self::from_rows(centers)
    }
}

/// Sylvester Hadamard matrix of order `n` (a power of two), entries ±1.
pub fn sylvester_hadamard(n: usize) -> Array2<i8> {
    assert!(n.is_power_of_two());
    let mut h = Array2::from_elem((1, 1), 1i8);
    while h.nrows() < n {
        let m = h.nrows();
        let mut next = Array2::zeros((2 * m, 2 * m));
        for i in 0..m {
            for j in 0..m {
                let v = h[[i, j]];
                next[[i, j]] = v;
                next[[i, j + m]] = v;
                next[[i + m, j]] = v;
                next[[i + m, j + m]] = -v;
            }
        }
        h = next;
    }
    h
}

fn hadamard_centers(num_classes: usize, k_bits: usize) -> Array2<u8> {
    let h = sylvester_hadamard(k_bits);
    Array2::from_shape_fn((num_classes, k_bits), |(c, j)| {
        let v = if c < k_bits { h[[c, j]] } else { -h[[c - k_bits, j]] };
        u8::from(v > 0)
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hadamard_rows_are_orthogonal() {
        let h = sylvester_hadamard(8);
        for a in 0..8 {
            for b in 0..8 {
                let dot: i32 = (0..8).map(|j| h[[a, j]] as i32 * h[[b, j]] as i32).sum();
                assert_eq!(dot, if a == b { 8 } else { 0 });
            }
        }
    }

    #[test]
    fn two_classes_four_bits() {
        let set = HashCenterSet::generate(2, 4, 0).unwrap();
        assert!(set.distance(0, 1) >= 2);
    }

    #[test]
    fn ten_classes_sixteen_bits_min_distance_is_half() {
        let set = HashCenterSet::generate(10, 16, 0).unwrap();
        assert_eq!(set.min_distance(), 8);
    }

    #[test]
    fn negations_extend_past_k_rows() {
        let set = HashCenterSet::generate(12, 8, 0).unwrap();
        assert_eq!(set.num_classes(), 12);
        assert_eq!(set.min_distance(), 4);
    }

    #[test]
    fn non_power_of_two_falls_back_to_sampling() {
        let set = HashCenterSet::generate(10, 48, 3).unwrap();
        assert!(set.average_distance() >= 24.0);
        assert!(set.centers().rows().into_iter().all(|r| r.iter().map(|&b| b as usize).sum::<usize>() == 24));
        assert_eq!(set, HashCenterSet::generate(10, 48, 3).unwrap());
    }

    #[test]
    fn impossible_request_reports_best_distance() {
        // Only three balanced 3-bit codes exist.
        match HashCenterSet::generate(4, 3, 0) {
            Err(Error::HashCenters { best_min_distance, rounds, .. }) => {
                assert_eq!(rounds, MAX_CENTER_ROUNDS);
                assert_eq!(best_min_distance, 0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn majority_target_breaks_ties_to_one() {
        let set: HashCenterSet = "0011\n0101\n1001\n".parse().unwrap();
        assert_eq!(set.target_for(&[1]).unwrap(), vec![0, 1, 0, 1]);
        assert_eq!(set.target_for(&[0, 1, 2]).unwrap(), vec![0, 0, 0, 1]);
        assert_eq!(set.target_for(&[0, 1]).unwrap(), vec![0, 1, 1, 1]);
        assert!(set.target_for(&[]).is_err());
        assert!(set.target_for(&[3]).is_err());
    }

    #[test]
    fn text_round_trip() {
        let set = HashCenterSet::generate(5, 16, 0).unwrap();
        let back: HashCenterSet = set.to_string().parse().unwrap();
        assert_eq!(set, back);
        assert!("0101\n01\n".parse::<HashCenterSet>().is_err());
        assert!("0102\n0110\n".parse::<HashCenterSet>().is_err());
    }
}
