use ndarray::{Array2, ArrayView2};

use crate::{Error, Result};

/// A loss value split into its two weighted parts.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossTerms {
    /// Central-similarity or pairwise term.
    pub similarity: f64,
    /// Quantization term before multiplying by `lambda_q`.
    pub quantization: f64,
    pub lambda_q: f64,
}

impl LossTerms {
    pub fn total(&self) -> f64 {
        self.similarity + self.lambda_q * self.quantization
    }
}

pub(crate) fn check_finite(h: ArrayView2<f64>) -> Result<()> {
    if let Some(pos) = h.iter().position(|v| !v.is_finite()) {
        return Err(Error::NonFinite(format!(
            "hash output row {} column {}",
            pos / h.ncols().max(1),
            pos % h.ncols().max(1)
        )));
    }
    Ok(())
}

/// `ln(1 + e^x)` without overflow.
fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn ln_cosh(x: f64) -> f64 {
    let a = x.abs();
    a + (-2.0 * a).exp().ln_1p() - std::f64::consts::LN_2
}

fn check_csq(h: ArrayView2<f64>, targets: ArrayView2<u8>, lambda_q: f64) -> Result<()> {
    if h.dim() != targets.dim() {
        return Err(Error::Shape(format!(
            "hash output {:?} does not match center targets {:?}",
            h.dim(),
            targets.dim()
        )));
    }
    if h.is_empty() {
        return Err(Error::Shape("empty hash output".into()));
    }
    if targets.iter().any(|&b| b > 1) {
        return Err(Error::Config("center target bits must be 0 or 1".into()));
    }
    if !(lambda_q >= 0.0) {
        return Err(Error::Config("lambda_q must be non-negative".into()));
    }
    check_finite(h)
}

/// Central-similarity loss: binary cross-entropy between `(tanh h + 1)/2`
/// and the target center bits, plus `lambda_q` times the mean of
/// `ln cosh(|tanh h| - 1)`. Both parts are averaged over samples and bits.
pub fn csq_loss(h: ArrayView2<f64>, targets: ArrayView2<u8>, lambda_q: f64) -> Result<LossTerms> {
    check_csq(h, targets, lambda_q)?;
    let count = h.len() as f64;
    let mut central = 0.0;
    let mut quant = 0.0;
    for (&v, &c) in h.iter().zip(targets.iter()) {
        // (tanh h + 1)/2 = sigmoid(2h)
        let z = 2.0 * v;
        central += if c == 1 { softplus(-z) } else { softplus(z) };
        quant += ln_cosh(v.tanh().abs() - 1.0);
    }
    Ok(LossTerms {
        similarity: central / count,
        quantization: quant / count,
        lambda_q,
    })
}

/// Gradient of [`csq_loss`]'s total with respect to `h`.
pub fn csq_grad(h: ArrayView2<f64>, targets: ArrayView2<u8>, lambda_q: f64) -> Result<Array2<f64>> {
    check_csq(h, targets, lambda_q)?;
    let count = h.len() as f64;
    let mut g = Array2::zeros(h.raw_dim());
    for ((g, &v), &c) in g.iter_mut().zip(h.iter()).zip(targets.iter()) {
        let central = 2.0 * (sigmoid(2.0 * v) - c as f64);
        let t = v.tanh();
        let quant = (t.abs() - 1.0).tanh() * t.signum() * (1.0 - t * t);
        let quant = if t == 0.0 { 0.0 } else { quant };
        *g = (central + lambda_q * quant) / count;
    }
    Ok(g)
}

/// `s_ij = 1` iff the label sets of samples `i` and `j` share a label.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PairwiseSimilarity {
    similar: Array2<bool>,
}

impl PairwiseSimilarity {
    pub fn from_labels(labels: &[Vec<u32>]) -> Self {
        let n = labels.len();
        let similar = Array2::from_shape_fn((n, n), |(i, j)| {
            i == j || labels[i].iter().any(|l| labels[j].contains(l))
        });
        PairwiseSimilarity { similar }
    }

    pub fn from_matrix(similar: Array2<bool>) -> Result<Self> {
        let n = similar.nrows();
        if similar.ncols() != n {
            return Err(Error::Shape("similarity matrix must be square".into()));
        }
        for i in 0..n {
            if !similar[[i, i]] {
                return Err(Error::Config(format!("sample {i} is not similar to itself")));
            }
            for j in 0..i {
                if similar[[i, j]] != similar[[j, i]] {
                    return Err(Error::Config(format!("similarity of ({i}, {j}) is not symmetric")));
                }
            }
        }
        Ok(PairwiseSimilarity { similar })
    }

    pub fn len(&self) -> usize {
        self.similar.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.similar[[i, j]]
    }

    /// Reorders samples: entry `(a, b)` of the result is `(perm[a], perm[b])`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = perm.len();
        PairwiseSimilarity {
            similar: Array2::from_shape_fn((n, n), |(a, b)| self.similar[[perm[a], perm[b]]]),
        }
    }
}

/// Floor on the Cauchy distance inside `ln d` for dissimilar pairs.
const DCH_MIN_DISTANCE: f64 = 1e-12;

fn check_dch(h: ArrayView2<f64>, sim: &PairwiseSimilarity, gamma: f64, lambda_q: f64) -> Result<Vec<f64>> {
    if h.nrows() < 2 {
        return Err(Error::Shape("pairwise loss needs at least 2 samples".into()));
    }
    if sim.len() != h.nrows() {
        return Err(Error::Shape(format!(
            "similarity covers {} samples, batch has {}",
            sim.len(),
            h.nrows()
        )));
    }
    if !(gamma > 0.0) || !(lambda_q >= 0.0) {
        return Err(Error::Config("gamma must be positive and lambda_q non-negative".into()));
    }
    check_finite(h)?;
    let norms: Vec<f64> = h.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    if let Some(i) = norms.iter().position(|&n| n == 0.0) {
        return Err(Error::ZeroNorm(i));
    }
    Ok(norms)
}

fn pair_counts(sim: &PairwiseSimilarity) -> (usize, usize) {
    let n = sim.len();
    let mut pos = 0;
    let mut total = 0;
    for i in 0..n {
        for j in i + 1..n {
            total += 1;
            pos += usize::from(sim.get(i, j));
        }
    }
    (pos, total - pos)
}

/// Pair weight: inverse frequency of the pair's class within the batch.
fn pair_weight(similar: bool, counts: (usize, usize)) -> f64 {
    let c = if similar { counts.0 } else { counts.1 };
    if c == 0 {
        0.0
    } else {
        1.0 / c as f64
    }
}

/// Cross-entropy of one pair at Cauchy distance `d` and its derivative in `d`.
fn cauchy_ce(d: f64, similar: bool, gamma: f64) -> (f64, f64) {
    if similar {
        // -ln(gamma / (gamma + d))
        ((d / gamma).ln_1p(), 1.0 / (gamma + d))
    } else {
        // -ln(d / (gamma + d))
        let dc = d.max(DCH_MIN_DISTANCE);
        let dd = if d > DCH_MIN_DISTANCE { -1.0 / d } else { 0.0 };
        ((gamma + d).ln() - dc.ln(), 1.0 / (gamma + d) + dd)
    }
}

/// Cauchy pairwise loss with a Cauchy quantization prior.
///
/// `d_ij = (K/2)(1 - cos(h_i, h_j))`. The pairwise term is the mean
/// cross-entropy over similar pairs plus the mean over dissimilar pairs.
/// The quantization term is the mean over samples of
/// `ln(1 + d(|h_i|, 1) / gamma)`.
pub fn dch_loss(h: ArrayView2<f64>, sim: &PairwiseSimilarity, gamma: f64, lambda_q: f64) -> Result<LossTerms> {
    let norms = check_dch(h, sim, gamma, lambda_q)?;
    let (n, k) = h.dim();
    let half_k = k as f64 / 2.0;
    let counts = pair_counts(sim);
    let mut pairwise = 0.0;
    for i in 0..n {
        for j in i + 1..n {
            let s = sim.get(i, j);
            let cos = h.row(i).dot(&h.row(j)) / (norms[i] * norms[j]);
            let d = half_k * (1.0 - cos);
            pairwise += pair_weight(s, counts) * cauchy_ce(d, s, gamma).0;
        }
    }
    let sqrt_k = (k as f64).sqrt();
    let mut quant = 0.0;
    for i in 0..n {
        let cos = h.row(i).iter().map(|v| v.abs()).sum::<f64>() / (norms[i] * sqrt_k);
        quant += (half_k * (1.0 - cos) / gamma).ln_1p();
    }
    Ok(LossTerms {
        similarity: pairwise,
        quantization: quant / n as f64,
        lambda_q,
    })
}

/// Gradient of [`dch_loss`]'s total with respect to `h`.
pub fn dch_grad(h: ArrayView2<f64>, sim: &PairwiseSimilarity, gamma: f64, lambda_q: f64) -> Result<Array2<f64>> {
    let norms = check_dch(h, sim, gamma, lambda_q)?;
    let (n, k) = h.dim();
    let half_k = k as f64 / 2.0;
    let counts = pair_counts(sim);
    let mut g = Array2::<f64>::zeros((n, k));
    for i in 0..n {
        for j in i + 1..n {
            let s = sim.get(i, j);
            let w = pair_weight(s, counts);
            if w == 0.0 {
                continue;
            }
            let (hi, hj) = (h.row(i), h.row(j));
            let cos = hi.dot(&hj) / (norms[i] * norms[j]);
            let d = half_k * (1.0 - cos);
            // dL/dcos = dL/dd * dd/dcos
            let coef = -w * cauchy_ce(d, s, gamma).1 * half_k;
            let inv = 1.0 / (norms[i] * norms[j]);
            for c in 0..k {
                g[[i, c]] += coef * (hj[c] * inv - cos * hi[c] / (norms[i] * norms[i]));
                g[[j, c]] += coef * (hi[c] * inv - cos * hj[c] / (norms[j] * norms[j]));
            }
        }
    }
    if lambda_q > 0.0 {
        let sqrt_k = (k as f64).sqrt();
        for i in 0..n {
            let hi = h.row(i);
            let nrm = norms[i];
            let cos = hi.iter().map(|v| v.abs()).sum::<f64>() / (nrm * sqrt_k);
            let d = half_k * (1.0 - cos);
            let coef = -lambda_q / n as f64 * half_k / (gamma + d);
            for c in 0..k {
                let dcos = hi[c].signum() / (nrm * sqrt_k) - cos * hi[c] / (nrm * nrm);
                g[[i, c]] += coef * dcos;
            }
        }
    }
    Ok(g)
}
