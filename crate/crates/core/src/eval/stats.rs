use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{invalid, Result};

/// Samples with `n + m` at most this size get exact p-values.
pub const EXACT_LIMIT: usize = 16;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceResult {
    pub pair: (String, String),
    pub u_statistic: f64,
    pub p_value: f64,
    pub alpha_corrected: f64,
    pub significant: bool,
    pub exact: bool,
}

impl SignificanceResult {
    pub fn with_labels(mut self, a: &str, b: &str) -> Self {
        self.pair = (a.to_string(), b.to_string());
        self
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha_corrected = alpha;
        self.significant = self.p_value < alpha;
        self
    }
}

/// Midranks of `values`, doubled so ties stay integral: tied values share
/// twice the mean of the ranks they span.
fn doubled_midranks(values: &[f64]) -> (Vec<u64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0u64; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, doubled mean = start + 1 + end
        for &i in &order[start..end] {
            ranks[i] = (start + 1 + end) as u64;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Number of `n`-subsets of `ranks` per subset sum.
fn subset_sum_counts(ranks: &[u64], n: usize) -> BTreeMap<u64, f64> {
    // counts[k][sum] over prefixes of `ranks`
    let mut counts: Vec<BTreeMap<u64, f64>> = vec![BTreeMap::new(); n + 1];
    counts[0].insert(0, 1.0);
    for &r in ranks {
        for k in (1..=n).rev() {
            let prev: Vec<(u64, f64)> = counts[k - 1].iter().map(|(&s, &c)| (s, c)).collect();
            for (s, c) in prev {
                *counts[k].entry(s + r).or_insert(0.0) += c;
            }
        }
    }
    counts.swap_remove(n)
}

/// Two-sided Mann-Whitney U test with midranks for ties. `u_statistic` is
/// `min(U_a, U_b)`. Exact p-values come from the permutation distribution
/// of the rank sum when `n + m ≤ 16`; larger samples use the normal
/// approximation with tie and continuity corrections. The result carries
/// `alpha_corrected = 0.05`.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<SignificanceResult> {
    if a.is_empty() || b.is_empty() {
        return Err(invalid("Mann-Whitney needs two non-empty groups"));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(invalid("Mann-Whitney samples contain NaN"));
    }
    let (n, m) = (a.len(), b.len());
    let total = n + m;
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = doubled_midranks(&pooled);
    let r2: u64 = ranks[..n].iter().sum();
    // doubled U_a = 2 R_a - n (n + 1)
    let u2_a = r2 as f64 - (n * (n + 1)) as f64;
    let u_a = u2_a / 2.0;
    let u_b = (n * m) as f64 - u_a;
    let u = u_a.min(u_b);

    let exact = total <= EXACT_LIMIT;
    let p = if exact {
        // doubled expected rank sum n (N + 1)
        let centre = (n * (total + 1)) as i64;
        let observed = (r2 as i64 - centre).abs();
        let counts = subset_sum_counts(&ranks, n);
        let all: f64 = counts.values().sum();
        let extreme: f64 = counts
            .iter()
            .filter(|(&s, _)| (s as i64 - centre).abs() >= observed)
            .map(|(_, &c)| c)
            .sum();
        extreme / all
    } else {
        let (nf, mf, tf) = (n as f64, m as f64, total as f64);
        let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (tf * (tf - 1.0));
        let var = nf * mf / 12.0 * ((tf + 1.0) - tie_term);
        if var <= 0.0 {
            1.0
        } else {
            let z = ((u_a - nf * mf / 2.0).abs() - 0.5).max(0.0) / var.sqrt();
            let normal = Normal::standard();
            (2.0 * normal.sf(z)).min(1.0)
        }
    };
    let p_value = p.clamp(0.0, 1.0);
    Ok(SignificanceResult {
        pair: ("a".into(), "b".into()),
        u_statistic: u,
        p_value,
        alpha_corrected: 0.05,
        significant: p_value < 0.05,
        exact,
    })
}

/// Family-wise threshold `alpha / comparisons`.
pub fn bonferroni(alpha: f64, comparisons: usize) -> Result<f64> {
    if comparisons < 1 {
        return Err(invalid("Bonferroni needs at least one comparison"));
    }
    Ok(alpha / comparisons as f64)
}

/// `x` cut (not rounded) to `decimals` places, as thresholds are usually
/// quoted.
pub fn truncate_decimals(x: f64, decimals: i32) -> f64 {
    let scale = 10f64.powi(decimals);
    (x * scale).floor() / scale
}

/// All pairwise tests between labelled samples at the Bonferroni-corrected
/// level for the number of pairs.
pub fn pairwise_significance(
    samples: &BTreeMap<String, Vec<f64>>,
    alpha: f64,
) -> Result<Vec<SignificanceResult>> {
    let labels: Vec<&String> = samples.keys().collect();
    let pairs = labels.len() * labels.len().saturating_sub(1) / 2;
    let corrected = bonferroni(alpha, pairs)?;
    let mut out = Vec::with_capacity(pairs);
    for (i, a) in labels.iter().enumerate() {
        for b in &labels[i + 1..] {
            out.push(
                mann_whitney_u(&samples[*a], &samples[*b])?
                    .with_labels(a, b)
                    .with_alpha(corrected),
            );
        }
    }
    Ok(out)
}
