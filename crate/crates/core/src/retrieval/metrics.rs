use std::fmt::Write as _;

use super::codes::CodeMatrix;
use super::rank::hamming_rank;
use crate::{Error, Result};

/// Item relevance: the two label sets share at least one label.
pub fn is_relevant(query: &[u32], item: &[u32]) -> bool {
    query.iter().any(|l| item.contains(l))
}

/// Precision-weighted average over relevant positions of a ranked list.
/// The denominator is the number of relevant items retrieved; a list with
/// none scores 0.
pub fn average_precision_at_n(relevance: &[bool]) -> Result<f64> {
    if relevance.is_empty() {
        return Err(Error::Config("average precision of an empty ranked list".into()));
    }
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (i, &rel) in relevance.iter().enumerate() {
        if rel {
            hits += 1;
            sum += hits as f64 / (i + 1) as f64;
        }
    }
    Ok(if hits == 0 { 0.0 } else { sum / hits as f64 })
}

#[derive(Clone, Debug, PartialEq)]
pub struct MapResult {
    pub map: f64,
    pub per_query: Vec<f64>,
}

/// Mean over queries of AP over each query's top `n` database items.
pub fn map_at_n(queries: &CodeMatrix, database: &CodeMatrix, n: usize) -> Result<MapResult> {
    if queries.is_empty() {
        return Err(Error::Config("mAP needs at least one query".into()));
    }
    if n == 0 {
        return Err(Error::Config("mAP@N needs N >= 1".into()));
    }
    let mut per_query = Vec::with_capacity(queries.len());
    for q in 0..queries.len() {
        let ranked = hamming_rank(queries.code(q), database, n)?;
        let ql = &queries.labels()[q];
        let rel: Vec<bool> = ranked
            .entries
            .iter()
            .map(|e| is_relevant(ql, &database.labels()[e.index]))
            .collect();
        per_query.push(average_precision_at_n(&rel)?);
    }
    let map = per_query.iter().sum::<f64>() / per_query.len() as f64;
    Ok(MapResult { map, per_query })
}

/// Per-query CSV of the `k` nearest database items.
pub fn top_k_listing(queries: &CodeMatrix, database: &CodeMatrix, k: usize) -> Result<String> {
    let mut out = String::from("query_id,rank,item_id,distance,relevant\n");
    for q in 0..queries.len() {
        let ranked = hamming_rank(queries.code(q), database, k)?;
        for (r, e) in ranked.entries.iter().enumerate() {
            let rel = is_relevant(&queries.labels()[q], &database.labels()[e.index]);
            writeln!(out, "{},{},{},{},{}", queries.ids()[q], r + 1, e.id, e.distance, u8::from(rel)).expect("string write");
        }
    }
    Ok(out)
}

fn ln_factorials(m: usize) -> Vec<f64> {
    let mut t = vec![0.0; m + 1];
    for i in 1..=m {
        t[i] = t[i - 1] + (i as f64).ln();
    }
    t
}

fn ln_choose(t: &[f64], n: usize, k: usize) -> f64 {
    t[n] - t[k] - t[n - k]
}

/// Expected AP of a list of `n` items drawn uniformly at random without
/// replacement from a database of `m` items, `r` of them relevant.
pub fn expected_random_ap(m: usize, r: usize, n: usize) -> Result<f64> {
    expected_random_ap_with(&ln_factorials(m), m, r, n)
}

fn expected_random_ap_with(t: &[f64], m: usize, r: usize, n: usize) -> Result<f64> {
    if n == 0 || n > m || r > m {
        return Err(Error::Config(format!("random AP needs 1 <= N <= M and R <= M, got M={m} R={r} N={n}")));
    }
    let nf = n as f64;
    let h_n: f64 = (1..=n).map(|i| 1.0 / i as f64).sum();
    let k_lo = n.saturating_sub(m - r).max(1);
    let k_hi = r.min(n);
    let denom = ln_choose(t, m, n);
    let mut expected = 0.0;
    for k in k_lo..=k_hi {
        let p = (ln_choose(t, r, k) + ln_choose(t, m - r, n - k) - denom).exp();
        // E[AP | k relevant among n uniformly placed positions]
        let ap = if n == 1 {
            1.0
        } else {
            h_n / nf + (k as f64 - 1.0) * (nf - h_n) / (nf * (nf - 1.0))
        };
        expected += p * ap;
    }
    Ok(expected)
}

/// Mean over queries of [`expected_random_ap`], with each query's relevant
/// count taken from the database labels.
pub fn random_baseline_map(queries: &CodeMatrix, database: &CodeMatrix, n: usize) -> Result<f64> {
    random_baseline_map_from_labels(queries.labels(), database.labels(), n)
}

pub fn random_baseline_map_from_labels(queries: &[Vec<u32>], database: &[Vec<u32>], n: usize) -> Result<f64> {
    if queries.is_empty() {
        return Err(Error::Config("random baseline needs at least one query".into()));
    }
    let m = database.len();
    let t = ln_factorials(m);
    let mut total = 0.0;
    for q in queries {
        let r = database.iter().filter(|item| is_relevant(q, item)).count();
        total += expected_random_ap_with(&t, m, r, n)?;
    }
    Ok(total / queries.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hand_evaluated_ap() {
        assert_eq!(average_precision_at_n(&[true; 5]).unwrap(), 1.0);
        assert!((average_precision_at_n(&[true, false, true]).unwrap() - 5.0 / 6.0).abs() < 1e-15);
        assert_eq!(average_precision_at_n(&[false; 3]).unwrap(), 0.0);
        assert!(average_precision_at_n(&[]).is_err());
    }

    #[test]
    fn random_ap_edge_cases() {
        // Every item relevant.
        assert!((expected_random_ap(10, 10, 4).unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(expected_random_ap(10, 0, 4).unwrap(), 0.0);
        // One draw: AP is 1 with probability R/M.
        assert!((expected_random_ap(10, 3, 1).unwrap() - 0.3).abs() < 1e-12);
    }

    #[test]
    fn random_ap_matches_enumeration() {
        // M=5, R=2, N=3: enumerate all ordered draws.
        let (m, r, n) = (5usize, 2usize, 3usize);
        let mut total = 0.0;
        let mut count = 0.0;
        for a in 0..m {
            for b in 0..m {
                for c in 0..m {
                    if a == b || b == c || a == c {
                        continue;
                    }
                    let rel = [a < r, b < r, c < r];
                    total += average_precision_at_n(&rel).unwrap();
                    count += 1.0;
                }
            }
        }
        assert!((expected_random_ap(m, r, n).unwrap() - total / count).abs() < 1e-12);
    }
}
