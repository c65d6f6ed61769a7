use std::cmp::Ordering;

use super::codes::{CodeMatrix, CodeRef};
use crate::{Error, Result};

pub fn hamming_distance(a: &[u64], b: &[u64]) -> u32 {
    a.iter().zip(b).map(|(x, y)| (x ^ y).count_ones()).sum()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct RankedEntry {
    /// Position of the item in the database matrix.
    pub index: usize,
    pub id: u64,
    pub distance: u32,
}

/// Nearest database items, ordered by distance then ascending id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RankedList {
    pub entries: Vec<RankedEntry>,
}

impl RankedList {
    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> Vec<u64> {
        self.entries.iter().map(|e| e.id).collect()
    }
}

fn order(a: &RankedEntry, b: &RankedEntry) -> Ordering {
    (a.distance, a.id).cmp(&(b.distance, b.id))
}

/// The `n` database items closest to `query` in Hamming distance.
pub fn hamming_rank(query: CodeRef<'_>, database: &CodeMatrix, n: usize) -> Result<RankedList> {
    if query.k_bits != database.k_bits() {
        return Err(Error::Shape(format!(
            "query has {} bits, database has {}",
            query.k_bits,
            database.k_bits()
        )));
    }
    if n > database.len() {
        return Err(Error::Config(format!(
            "cannot retrieve {n} items from a database of {}",
            database.len()
        )));
    }
    let mut all: Vec<RankedEntry> = (0..database.len())
        .map(|i| RankedEntry {
            index: i,
            id: database.ids()[i],
            distance: hamming_distance(query.words, database.code(i).words),
        })
        .collect();
    if n > 0 && n < all.len() {
        all.select_nth_unstable_by(n - 1, order);
    }
    all.truncate(n);
    all.sort_unstable_by(order);
    Ok(RankedList { entries: all })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn db(codes: &[u64], k: usize) -> CodeMatrix {
        let ids: Vec<u64> = (0..codes.len() as u64).collect();
        CodeMatrix::new(k, codes.to_vec(), ids, vec![vec![]; codes.len()]).unwrap()
    }

    #[test]
    fn closer_code_ranks_first() {
        let d = db(&[0b0000, 0b0111], 4);
        let q = [0b1111u64];
        let r = hamming_rank(CodeRef { k_bits: 4, words: &q }, &d, 2).unwrap();
        assert_eq!(r.ids(), vec![1, 0]);
        assert_eq!(r.entries[0].distance, 1);
        assert_eq!(r.entries[1].distance, 4);
    }

    #[test]
    fn ties_break_by_id() {
        let d = CodeMatrix::new(4, vec![1, 2, 4, 8], vec![9, 3, 7, 1], vec![vec![]; 4]).unwrap();
        let q = [0u64];
        let r = hamming_rank(CodeRef { k_bits: 4, words: &q }, &d, 3).unwrap();
        assert_eq!(r.ids(), vec![1, 3, 7]);
    }

    #[test]
    fn bit_width_and_size_checked() {
        let d = db(&[0, 1], 4);
        let q = [0u64];
        assert!(hamming_rank(CodeRef { k_bits: 8, words: &q }, &d, 1).is_err());
        assert!(hamming_rank(CodeRef { k_bits: 4, words: &q }, &d, 3).is_err());
    }
}
