use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum UMode {
    /// Always use the exact permutation distribution.
    Exact,
    /// Exact for small samples (n1 + n2 ≤ 12), normal approximation otherwise.
    Auto,
    /// Always use the tie-corrected normal approximation.
    Normal,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UMethod {
    Exact,
    NormalApprox,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// U for the first group.
    pub u_statistic: f64,
    /// Two-sided.
    pub p_value: f64,
    pub method: UMethod,
}

const EXACT_AUTO_LIMIT: usize = 12;

/// Midranks (1-based) of the pooled sample; ties share their average rank.
fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Counts, for every achievable rank sum of an `n1`-subset, how many subsets
/// produce it. Ranks are doubled so midranks become integers.
fn rank_sum_distribution(doubled_ranks: &[usize], n1: usize) -> Vec<f64> {
    let max_sum: usize = doubled_ranks.iter().sum();
    // ways[k][s]: subsets of size k with doubled sum s
    let mut ways = vec![vec![0f64; max_sum + 1]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in doubled_ranks {
        for k in (1..=n1).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            let (prev, cur) = (&lo[k - 1], &mut hi[0]);
            for s in (r..=max_sum).rev() {
                if prev[s - r] != 0.0 {
                    cur[s] += prev[s - r];
                }
            }
        }
    }
    ways.swap_remove(n1)
}

pub fn mann_whitney_u(group_a: &[f64], group_b: &[f64], mode: UMode) -> Result<UTestResult> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::invalid("Mann-Whitney U needs two non-empty groups"));
    }
    if group_a.iter().chain(group_b).any(|v| !v.is_finite()) {
        return Err(Error::NonFinite { context: "Mann-Whitney U input".into() });
    }
    let n1 = group_a.len();
    let n2 = group_b.len();
    let n = n1 + n2;
    let pooled: Vec<f64> = group_a.iter().chain(group_b).copied().collect();
    let ranks = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n1].iter().sum();
    let u_a = rank_sum_a - (n1 * (n1 + 1)) as f64 / 2.0;
    let mean = (n1 * n2) as f64 / 2.0;

    let exact = match mode {
        UMode::Exact => true,
        UMode::Auto => n <= EXACT_AUTO_LIMIT,
        UMode::Normal => false,
    };
    let method = if exact { UMethod::Exact } else { UMethod::NormalApprox };

    if pooled.iter().all(|&v| v == pooled[0]) {
        return Ok(UTestResult { u_statistic: u_a, p_value: 1.0, method });
    }

    let p_value = if exact {
        let doubled: Vec<usize> = ranks.iter().map(|r| (r * 2.0).round() as usize).collect();
        let dist = rank_sum_distribution(&doubled, n1);
        let total: f64 = dist.iter().sum();
        // U = S/2 - n1(n1+1)/2, so |U - mean| compares through doubled sums.
        let offset = (n1 * (n1 + 1)) as f64;
        let obs_dev = (2.0 * rank_sum_a - offset - 2.0 * mean).abs();
        let extreme: f64 = dist
            .iter()
            .enumerate()
            .filter(|&(s, &w)| w != 0.0 && (s as f64 - offset - 2.0 * mean).abs() >= obs_dev - 1e-9)
            .map(|(_, &w)| w)
            .sum();
        extreme / total
    } else {
        let tie_term: f64 = {
            let mut sorted = pooled.clone();
            sorted.sort_by(f64::total_cmp);
            let mut acc = 0.0;
            let mut i = 0;
            while i < sorted.len() {
                let j = sorted[i..].iter().take_while(|&&v| v == sorted[i]).count();
                let t = j as f64;
                acc += t * t * t - t;
                i += j;
            }
            acc
        };
        let nf = n as f64;
        let var = (n1 * n2) as f64 / 12.0 * ((nf + 1.0) - tie_term / (nf * (nf - 1.0)));
        let dev = (u_a - mean).abs() - 0.5;
        if dev <= 0.0 || var <= 0.0 {
            1.0
        } else {
            let z = dev / var.sqrt();
            // two-sided tail: 2 * (1 - Phi(z)) = erfc(z / sqrt 2)
            libm::erfc(z / std::f64::consts::SQRT_2)
        }
    };

    Ok(UTestResult {
        u_statistic: u_a,
        p_value: p_value.clamp(0.0, 1.0),
        method,
    })
}
