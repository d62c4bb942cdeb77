//! Nonparametric tests and quantile summaries.
//!
//! Both rank tests report two-sided p-values `min(1, 2 min(P(T <= t), P(T >= t)))`.
//! Small samples use the exact null distribution over doubled mid-ranks (so
//! ties are handled exactly); larger ones use a tie-corrected normal
//! approximation with a 0.5 continuity correction.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Largest number of non-zero differences for the exact signed-rank test.
pub const WILCOXON_EXACT_MAX: usize = 20;
/// Largest `n1 + n2` for the exact rank-sum test.
pub const MANN_WHITNEY_EXACT_MAX: usize = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TestMethod {
    WilcoxonSignedRank,
    MannWhitneyU,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestResult {
    pub statistic: f64,
    pub p_value: f64,
    pub method: TestMethod,
    pub n1: usize,
    pub n2: usize,
    pub exact: bool,
    /// Set when every paired difference was zero.
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Approach {
    Auto,
    Exact,
    Normal,
}

/// Linear-interpolation quantile of sorted data (`h = (n - 1) q`).
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    if lo + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[lo] + (h - lo as f64) * (sorted[lo + 1] - sorted[lo])
}

/// `(median, q1, q3)`.
pub fn median_iqr(x: &[f64]) -> Result<(f64, f64, f64)> {
    if x.is_empty() {
        return Err(Error::Config("median of an empty sample".into()));
    }
    if x.iter().any(|v| v.is_nan()) {
        return Err(Error::Config("sample contains NaN".into()));
    }
    let mut s = x.to_vec();
    s.sort_by(|a, b| a.total_cmp(b));
    Ok((quantile_sorted(&s, 0.5), quantile_sorted(&s, 0.25), quantile_sorted(&s, 0.75)))
}

/// Doubled mid-ranks (integers) of `values` and the tie-group sizes.
fn doubled_ranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, mean doubled = start + 1 + end
        let r2 = (start + 1 + end) as u64;
        for &o in &order[start..end] {
            ranks[o] = r2;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

fn normal_sf(z: f64) -> f64 {
    0.5 * libm::erfc(z / std::f64::consts::SQRT_2)
}

fn two_sided_normal(stat: f64, mean: f64, var: f64) -> f64 {
    if var <= 0.0 {
        return 1.0;
    }
    let z = ((stat - mean).abs() - 0.5).max(0.0) / var.sqrt();
    (2.0 * normal_sf(z)).min(1.0)
}

/// Two-sided p from counts of outcomes at or below / at or above the observed value.
fn two_sided_exact(le: f64, ge: f64, total: f64) -> f64 {
    (2.0 * le.min(ge) / total).min(1.0)
}

pub fn wilcoxon_signed_rank(diffs: &[f64]) -> Result<TestResult> {
    wilcoxon_signed_rank_with(diffs, Approach::Auto)
}

/// Signed-rank test on paired differences; zero differences are dropped.
/// The statistic is the sum of ranks of the positive differences.
pub fn wilcoxon_signed_rank_with(diffs: &[f64], approach: Approach) -> Result<TestResult> {
    if diffs.is_empty() {
        return Err(Error::Config("signed-rank test needs at least one difference".into()));
    }
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Config("signed-rank test needs finite differences".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|&d| d != 0.0).collect();
    let n = nz.len();
    if n == 0 {
        return Ok(TestResult {
            statistic: 0.0,
            p_value: 1.0,
            method: TestMethod::WilcoxonSignedRank,
            n1: 0,
            n2: 0,
            exact: true,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = nz.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = doubled_ranks(&abs);
    let w2: u64 = nz
        .iter()
        .zip(&ranks)
        .filter(|(&d, _)| d > 0.0)
        .map(|(_, &r)| r)
        .sum();
    let statistic = w2 as f64 / 2.0;
    let exact = match approach {
        Approach::Auto => n <= WILCOXON_EXACT_MAX,
        Approach::Exact => true,
        Approach::Normal => false,
    };
    let p_value = if exact {
        // number of sign patterns for each doubled positive-rank sum
        let max: u64 = ranks.iter().sum();
        let mut dist = vec![0f64; max as usize + 1];
        dist[0] = 1.0;
        let mut reach = 0usize;
        for &r in &ranks {
            let r = r as usize;
            for s in (0..=reach).rev() {
                if dist[s] != 0.0 {
                    dist[s + r] += dist[s];
                }
            }
            reach += r;
        }
        let w = w2 as usize;
        let le: f64 = dist[..=w].iter().sum();
        let ge: f64 = dist[w..].iter().sum();
        two_sided_exact(le, ge, 2f64.powi(n as i32))
    } else {
        let nf = n as f64;
        let mean = nf * (nf + 1.0) / 4.0;
        let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie / 48.0;
        two_sided_normal(statistic, mean, var)
    };
    Ok(TestResult {
        statistic,
        p_value,
        method: TestMethod::WilcoxonSignedRank,
        n1: n,
        n2: 0,
        exact,
        degenerate: false,
    })
}

pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<TestResult> {
    mann_whitney_u_with(a, b, Approach::Auto)
}

/// Rank-sum test; the statistic is `U = R_a - n_a (n_a + 1) / 2`.
pub fn mann_whitney_u_with(a: &[f64], b: &[f64], approach: Approach) -> Result<TestResult> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::Config("rank-sum test needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Config("rank-sum test needs finite values".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let n = n1 + n2;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_ranks(&pooled);
    let r2: u64 = ranks[..n1].iter().sum();
    let statistic = r2 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    let exact = match approach {
        Approach::Auto => n <= MANN_WHITNEY_EXACT_MAX,
        Approach::Exact => true,
        Approach::Normal => false,
    };
    let p_value = if exact {
        // dist[k][s]: subsets of size k with doubled rank sum s
        let max: u64 = ranks.iter().sum();
        let width = max as usize + 1;
        let mut dist = vec![vec![0f64; width]; n1 + 1];
        dist[0][0] = 1.0;
        for &r in &ranks {
            let r = r as usize;
            for k in (0..n1).rev() {
                let (lo, hi) = dist.split_at_mut(k + 1);
                let (src, dst) = (&lo[k], &mut hi[0]);
                for s in 0..width - r {
                    if src[s] != 0.0 {
                        dst[s + r] += src[s];
                    }
                }
            }
        }
        let row = &dist[n1];
        let r = r2 as usize;
        let le: f64 = row[..=r].iter().sum();
        let ge: f64 = row[r..].iter().sum();
        let total: f64 = row.iter().sum();
        two_sided_exact(le, ge, total)
    } else {
        let (f1, f2, nf) = (n1 as f64, n2 as f64, n as f64);
        let mean = f1 * f2 / 2.0;
        let tie: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum();
        let var = f1 * f2 / 12.0 * ((nf + 1.0) - tie / (nf * (nf - 1.0)));
        two_sided_normal(statistic, mean, var)
    };
    Ok(TestResult {
        statistic,
        p_value,
        method: TestMethod::MannWhitneyU,
        n1,
        n2,
        exact,
        degenerate: false,
    })
}
