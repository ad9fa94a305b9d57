//! Rank statistics and small numeric helpers.

use statrs::function::erf::erfc;

use crate::error::{Error, Result};

/// Largest pooled sample size for which the rank-sum test enumerates exactly.
pub const EXACT_RANK_SUM_MAX_N: usize = 12;

/// Standard normal CDF.
pub fn normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// 1-based ranks with ties given their average rank.
pub fn average_ranks(values: &[f64]) -> Vec<f64> {
    let n = values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && values[order[j]] == values[order[i]] {
            j += 1;
        }
        let avg = (i + j + 1) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = avg;
        }
        i = j;
    }
    ranks
}

/// Sizes of tie groups in a sample.
fn tie_groups(values: &[f64]) -> Vec<usize> {
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut groups = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i + 1;
        while j < sorted.len() && sorted[j] == sorted[i] {
            j += 1;
        }
        groups.push(j - i);
        i = j;
    }
    groups
}

/// Number of size-`k` subsets of `{1..n}` with each possible rank sum.
fn rank_sum_counts(n: usize, k: usize) -> Vec<f64> {
    let max = n * (n + 1) / 2;
    // counts[j][s]: subsets of size j with sum s, built one rank at a time.
    let mut counts = vec![vec![0.0f64; max + 1]; k + 1];
    counts[0][0] = 1.0;
    for r in 1..=n {
        for j in (1..=k.min(r)).rev() {
            for s in (r..=max).rev() {
                counts[j][s] += counts[j - 1][s - r];
            }
        }
    }
    counts.swap_remove(k)
}

/// One-sided Wilcoxon rank-sum (Mann-Whitney) test of H1: `a` is
/// stochastically smaller than `b`. Returns the p-value.
///
/// Exact enumeration when the pooled size is at most 12 with no ties;
/// otherwise the normal approximation with tie-corrected variance and a
/// continuity correction of at most 0.5 toward the null mean, so that
/// `p(a, b) + p(b, a) = 1` and identical samples give exactly 0.5.
pub fn rank_sum_test(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::InvalidArgument("rank-sum test needs two nonempty samples".into()));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::InvalidArgument("rank-sum test sample contains NaN".into()));
    }
    let (na, nb) = (a.len(), b.len());
    let n = na + nb;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = average_ranks(&pooled);
    let rank_sum_a: f64 = ranks[..na].iter().sum();
    let ties = tie_groups(&pooled);
    let has_ties = ties.iter().any(|&t| t > 1);

    if n <= EXACT_RANK_SUM_MAX_N && !has_ties {
        let counts = rank_sum_counts(n, na);
        let observed = rank_sum_a.round() as usize;
        let below: f64 = counts[..=observed].iter().sum();
        let total: f64 = counts.iter().sum();
        return Ok(below / total);
    }

    let (naf, nbf, nf) = (na as f64, nb as f64, n as f64);
    let u = rank_sum_a - naf * (naf + 1.0) / 2.0;
    let mean = naf * nbf / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (nf * (nf - 1.0));
    let var = naf * nbf / 12.0 * ((nf + 1.0) - tie_term);
    if var <= 0.0 {
        return Ok(0.5);
    }
    let diff = u - mean;
    let corrected = diff.signum() * (diff.abs() - 0.5).max(0.0);
    Ok(normal_cdf(corrected / var.sqrt()))
}

/// Mann-Whitney U of `pos` over `neg` divided by `n_pos * n_neg`
/// (probability a positive outranks a negative, ties counting one half).
pub fn mann_whitney_auc(pos: &[f64], neg: &[f64]) -> f64 {
    let pooled: Vec<f64> = pos.iter().chain(neg).copied().collect();
    let ranks = average_ranks(&pooled);
    let (np, nn) = (pos.len() as f64, neg.len() as f64);
    let r: f64 = ranks[..pos.len()].iter().sum();
    (r - np * (np + 1.0) / 2.0) / (np * nn)
}

/// Linear-interpolated percentile (`p` in [0, 100]) of an ascending sample.
pub fn percentile_sorted(sorted: &[f64], p: f64) -> Option<f64> {
    match sorted.len() {
        0 => None,
        1 => Some(sorted[0]),
        n => {
            let pos = (p / 100.0).clamp(0.0, 1.0) * (n - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            let frac = pos - lo as f64;
            Some(sorted[lo] + (sorted[hi] - sorted[lo]) * frac)
        }
    }
}

pub fn median(values: &[f64]) -> Option<f64> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    percentile_sorted(&v, 50.0)
}

/// Spearman rank correlation (Pearson on average ranks). `None` if either
/// side is constant or fewer than two pairs are given.
pub fn spearman(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return None;
    }
    let rx = average_ranks(x);
    let ry = average_ranks(y);
    pearson(&rx, &ry)
}

pub fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        None
    } else {
        Some(sxy / (sxx * syy).sqrt())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exact_most_extreme_ranking() {
        let p = rank_sum_test(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert!((p - 0.05).abs() < 1e-15);
        let p = rank_sum_test(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert!((p - 1.0).abs() < 1e-15);
    }

    #[test]
    fn identical_samples_give_half() {
        let p = rank_sum_test(&[1.0, 2.0, 3.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!(p, 0.5);
        let p = rank_sum_test(&[2.0; 20], &[2.0; 20]).unwrap();
        assert_eq!(p, 0.5);
    }

    #[test]
    fn normal_branch_is_complementary() {
        let a: Vec<f64> = (0..30).map(|i| (i as f64 * 0.37).sin()).collect();
        let b: Vec<f64> = (0..25).map(|i| (i as f64 * 0.91).cos() + 0.2).collect();
        let p_ab = rank_sum_test(&a, &b).unwrap();
        let p_ba = rank_sum_test(&b, &a).unwrap();
        assert!((p_ab + p_ba - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_empty() {
        assert!(rank_sum_test(&[], &[1.0]).is_err());
    }

    #[test]
    fn ranks_with_ties() {
        assert_eq!(average_ranks(&[3.0, 1.0, 3.0, 2.0]), vec![3.5, 1.0, 3.5, 2.0]);
    }

    #[test]
    fn spearman_basics() {
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]), Some(-1.0));
        assert_eq!(spearman(&[1.0, 2.0, 3.0], &[1.0, 1.0, 1.0]), None);
    }

    #[test]
    fn percentiles() {
        let v = [1.0, 2.0, 3.0, 4.0, 5.0];
        assert_eq!(percentile_sorted(&v, 50.0), Some(3.0));
        assert_eq!(percentile_sorted(&v, 0.5), Some(1.02));
        assert_eq!(median(&[4.0, 1.0, 3.0, 2.0]), Some(2.5));
        assert_eq!(median(&[]), None);
    }
}
