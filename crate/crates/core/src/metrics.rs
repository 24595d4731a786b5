//! Recovery metrics for regressors and gating rows.

use ndarray::{Array2, ArrayView2};

use crate::error::{MoeError, Result};
use crate::model::{dot, Dataset, NonlinearityKind};

/// Largest `k` accepted by the brute-force permutation search.
pub const MAX_MATCH_K: usize = 8;

/// Best matching of estimated rows onto truth rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MatchResult {
    /// `permutation[i]` is the truth row matched to estimated row `i`.
    pub permutation: Vec<usize>,
    pub signs: Vec<f64>,
    pub error: f64,
    /// Set when an estimated row is numerically zero.
    pub zero_row: bool,
}

fn unit_rows(m: ArrayView2<f64>) -> (Vec<Vec<f64>>, bool) {
    let mut zero = false;
    let rows = m
        .rows()
        .into_iter()
        .map(|r| {
            let n = r.dot(&r).sqrt();
            if n > 0.0 && n.is_finite() {
                r.iter().map(|v| v / n).collect()
            } else {
                zero = true;
                vec![0.0; r.len()]
            }
        })
        .collect();
    (rows, zero)
}

fn for_each_permutation(k: usize, mut f: impl FnMut(&[usize])) {
    // Heap's algorithm
    let mut p: Vec<usize> = (0..k).collect();
    let mut c = vec![0usize; k];
    f(&p);
    let mut i = 0;
    while i < k {
        if c[i] < i {
            if i % 2 == 0 {
                p.swap(0, i);
            } else {
                p.swap(c[i], i);
            }
            f(&p);
            c[i] += 1;
            i = 0;
        } else {
            c[i] = 0;
            i += 1;
        }
    }
}

/// `1 - max_perm min_i |cos(a_i, a*_perm(i))|`.
pub fn regressor_error(a: ArrayView2<f64>, truth: ArrayView2<f64>) -> Result<MatchResult> {
    let k = a.nrows();
    if k != truth.nrows() || a.ncols() != truth.ncols() {
        return Err(MoeError::DimensionMismatch(format!(
            "estimate is {}x{}, truth is {}x{}",
            a.nrows(),
            a.ncols(),
            truth.nrows(),
            truth.ncols()
        )));
    }
    if k == 0 || k > MAX_MATCH_K {
        return Err(MoeError::Unsupported(format!("matching needs 1 <= k <= {MAX_MATCH_K}, got {k}")));
    }
    let (ua, zero_a) = unit_rows(a);
    let (ut, _) = unit_rows(truth);
    let corr: Vec<Vec<f64>> = ua.iter().map(|r| ut.iter().map(|t| dot(r, t)).collect()).collect();
    let mut best = -1.0;
    let mut best_perm: Vec<usize> = (0..k).collect();
    for_each_permutation(k, |p| {
        let m = (0..k).map(|i| corr[i][p[i]].abs()).fold(f64::INFINITY, f64::min);
        if m > best {
            best = m;
            best_perm = p.to_vec();
        }
    });
    let signs = (0..k).map(|i| if corr[i][best_perm[i]] < 0.0 { -1.0 } else { 1.0 }).collect();
    Ok(MatchResult {
        permutation: best_perm,
        signs,
        error: (1.0 - best.min(1.0)).clamp(0.0, 1.0),
        zero_row: zero_a,
    })
}

/// Direction error of the gating rows after aligning experts with `permutation`.
///
/// Gating logits are taken relative to the last expert, so the estimate is
/// first re-referenced to the expert matched to the last truth expert. Rows
/// are compared as `1 - min |cos|`; a zero row on either side counts as 1.
pub fn gating_error(w: ArrayView2<f64>, truth: ArrayView2<f64>, permutation: &[usize]) -> Result<f64> {
    let k = w.nrows() + 1;
    if truth.nrows() + 1 != k || permutation.len() != k || (k > 1 && w.ncols() != truth.ncols()) {
        return Err(MoeError::DimensionMismatch(format!(
            "gating {}x{} vs truth {}x{} with {} experts matched",
            w.nrows(),
            w.ncols(),
            truth.nrows(),
            truth.ncols(),
            permutation.len()
        )));
    }
    let mut seen = vec![false; k];
    for &p in permutation {
        if p >= k || std::mem::replace(&mut seen[p], true) {
            return Err(MoeError::InvalidArgument(format!("{permutation:?} is not a permutation")));
        }
    }
    if k == 1 {
        return Ok(0.0);
    }
    let d = w.ncols();
    let logit = |i: usize| -> Vec<f64> {
        if i + 1 == k {
            vec![0.0; d]
        } else {
            w.row(i).to_vec()
        }
    };
    // estimate expert whose truth partner is the reference expert
    let anchor = permutation.iter().position(|&p| p == k - 1).expect("bijection");
    let base = logit(anchor);
    let mut aligned = Array2::<f64>::zeros((k - 1, d));
    for i in 0..k {
        let t = permutation[i];
        if t + 1 == k {
            continue;
        }
        let li = logit(i);
        for c in 0..d {
            aligned[[t, c]] = li[c] - base[c];
        }
    }
    let (ua, _) = unit_rows(aligned.view());
    let (ut, _) = unit_rows(truth);
    let mut worst = f64::INFINITY;
    for (r, t) in ua.iter().zip(&ut) {
        worst = worst.min(dot(r, t).abs());
    }
    Ok((1.0 - worst.min(1.0)).clamp(0.0, 1.0))
}

/// Regressors with signs chosen by likelihood and whether the choice was
/// statistically ambiguous.
#[derive(Debug, Clone)]
pub struct SignResolution {
    pub regressors: Array2<f64>,
    pub signs: Vec<f64>,
    pub ambiguous: bool,
}

/// Picks the sign pattern maximizing the uniform-gating log-likelihood.
///
/// Ties go to `+1`. `ambiguous` is set when the gap to the runner-up pattern
/// is under three standard errors of the per-sample difference.
pub fn resolve_signs(a: ArrayView2<f64>, data: &Dataset, sigma: f64, kind: NonlinearityKind) -> Result<SignResolution> {
    let k = a.nrows();
    if k == 0 || k > MAX_MATCH_K {
        return Err(MoeError::Unsupported(format!("sign search needs 1 <= k <= {MAX_MATCH_K}, got {k}")));
    }
    if a.ncols() != data.dim() {
        return Err(MoeError::DimensionMismatch("regressor width differs from input width".into()));
    }
    if data.is_empty() {
        return Err(MoeError::EmptyDataset);
    }
    let sigma = sigma.max(crate::losses::SIGMA_FLOOR);
    let per_sample = |signed: &Array2<f64>| -> Vec<f64> {
        (0..data.len())
            .map(|n| {
                let x = data.x(n);
                let y = data.y(n);
                // log mixture density up to a pattern-independent constant
                let mut m = f64::NEG_INFINITY;
                let terms: Vec<f64> = signed
                    .rows()
                    .into_iter()
                    .map(|r| {
                        let e = y - kind.eval(dot(r.as_slice().expect("standard layout"), x));
                        let t = -0.5 * e * e / (sigma * sigma);
                        m = m.max(t);
                        t
                    })
                    .collect();
                m + terms.iter().map(|t| (t - m).exp()).sum::<f64>().ln()
            })
            .collect()
    };
    let apply = |mask: usize| -> Array2<f64> {
        let mut s = a.as_standard_layout().into_owned();
        for (i, mut r) in s.rows_mut().into_iter().enumerate() {
            if mask >> i & 1 == 1 {
                r.mapv_inplace(|v| -v);
            }
        }
        s
    };
    let mut scores: Vec<(usize, f64, Vec<f64>)> = Vec::with_capacity(1 << k);
    for mask in 0..(1usize << k) {
        let ll = per_sample(&apply(mask));
        let total = ll.iter().sum::<f64>();
        scores.push((mask, total, ll));
    }
    let mut best = 0;
    for (i, s) in scores.iter().enumerate() {
        if s.1 > scores[best].1 {
            best = i;
        }
    }
    let ambiguous = if scores.len() < 2 {
        false
    } else {
        let mut runner = if best == 0 { 1 } else { 0 };
        for (i, s) in scores.iter().enumerate() {
            if i != best && s.1 > scores[runner].1 {
                runner = i;
            }
        }
        let n = data.len() as f64;
        let diffs: Vec<f64> = scores[best].2.iter().zip(&scores[runner].2).map(|(a, b)| a - b).collect();
        let mean = diffs.iter().sum::<f64>() / n;
        let var = diffs.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
        let se = (var / n).sqrt();
        mean <= 3.0 * se
    };
    let mask = scores[best].0;
    Ok(SignResolution {
        regressors: apply(mask),
        signs: (0..k).map(|i| if mask >> i & 1 == 1 { -1.0 } else { 1.0 }).collect(),
        ambiguous,
    })
}
