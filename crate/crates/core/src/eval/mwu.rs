use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use super::midranks;
use crate::error::{Error, Result};

/// Both samples at most this large: p-values come from exact enumeration.
pub const EXACT_MWU_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Alternative {
    /// `a` tends to be smaller than `b`.
    Less,
    /// `a` tends to be larger than `b`.
    Greater,
    TwoSided,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UTestResult {
    /// `U` of the first sample: pairs with `a > b`, ties counted half.
    pub u_statistic: f64,
    pub n1: usize,
    pub n2: usize,
    pub alternative: Alternative,
    /// Continuity-corrected, tie-corrected normal score for `alternative`.
    pub z: f64,
    pub p_normal_one_sided: f64,
    pub p_normal_two_sided: f64,
    pub p_exact_one_sided: Option<f64>,
    pub p_exact_two_sided: Option<f64>,
    /// Exact p-value when available, otherwise the normal approximation.
    pub p_one_sided: f64,
    pub p_two_sided: f64,
}

fn u_of(ranks: &[f64], members: impl Iterator<Item = usize>, n1: usize) -> f64 {
    members.map(|i| ranks[i]).sum::<f64>() - (n1 * (n1 + 1)) as f64 / 2.0
}

// Pr(U ≤ u) and Pr(U ≥ u) over all ways of choosing which pooled ranks
// belong to the first sample.
fn exact_tails(ranks: &[f64], n1: usize, u: f64) -> (f64, f64) {
    let n = ranks.len();
    let (mut le, mut ge, mut total) = (0u64, 0u64, 0u64);
    for mask in 0u32..1 << n {
        if mask.count_ones() as usize != n1 {
            continue;
        }
        let v = u_of(ranks, (0..n).filter(|&i| mask & (1 << i) != 0), n1);
        total += 1;
        le += u64::from(v <= u + 1e-9);
        ge += u64::from(v >= u - 1e-9);
    }
    (le as f64 / total as f64, ge as f64 / total as f64)
}

/// Mann-Whitney U test of `a` against `b`.
pub fn mann_whitney_u(a: &[f64], b: &[f64], alternative: Alternative) -> Result<UTestResult> {
    let (n1, n2) = (a.len(), b.len());
    if n1 == 0 || n2 == 0 {
        return Err(Error::Data("Mann-Whitney U needs two non-empty samples".into()));
    }
    if a.iter().chain(b).any(|x| x.is_nan()) {
        return Err(Error::Data("NaN in Mann-Whitney sample".into()));
    }
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = midranks(&pooled);
    let u = u_of(&ranks, 0..n1, n1);
    let n = (n1 + n2) as f64;
    let mean = (n1 * n2) as f64 / 2.0;

    let mut sorted = pooled.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_term = 0.0;
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|&&x| x == sorted[i]).count();
        tie_term += (j * j * j - j) as f64;
        i += j;
    }
    let var = (n1 * n2) as f64 / 12.0 * ((n + 1.0) - tie_term / (n * (n - 1.0)).max(1.0));
    let sd = var.max(0.0).sqrt();
    let phi = Normal::standard();
    let upper = |z: f64| 1.0 - phi.cdf(z);
    let (p_less, p_greater, p_two) = if sd > 0.0 {
        let p_less = phi.cdf((u - mean + 0.5) / sd);
        let p_greater = upper((u - mean - 0.5) / sd);
        let z2 = ((u - mean).abs() - 0.5).max(0.0) / sd;
        (p_less, p_greater, (2.0 * upper(z2)).min(1.0))
    } else {
        (1.0, 1.0, 1.0)
    };
    let z = if sd > 0.0 {
        match alternative {
            Alternative::Less => (u - mean + 0.5) / sd,
            Alternative::Greater => (u - mean - 0.5) / sd,
            Alternative::TwoSided => ((u - mean).abs() - 0.5).max(0.0) / sd,
        }
    } else {
        0.0
    };
    let p_normal_one_sided = match alternative {
        Alternative::Less => p_less,
        Alternative::Greater => p_greater,
        Alternative::TwoSided => p_less.min(p_greater),
    };

    let (p_exact_one_sided, p_exact_two_sided) = if n1 <= EXACT_MWU_MAX && n2 <= EXACT_MWU_MAX {
        let (le, ge) = exact_tails(&ranks, n1, u);
        let one = match alternative {
            Alternative::Less => le,
            Alternative::Greater => ge,
            Alternative::TwoSided => le.min(ge),
        };
        (Some(one), Some((2.0 * le.min(ge)).min(1.0)))
    } else {
        (None, None)
    };
    Ok(UTestResult {
        u_statistic: u,
        n1,
        n2,
        alternative,
        z,
        p_normal_one_sided,
        p_normal_two_sided: p_two,
        p_exact_one_sided,
        p_exact_two_sided,
        p_one_sided: p_exact_one_sided.unwrap_or(p_normal_one_sided),
        p_two_sided: p_exact_two_sided.unwrap_or(p_two),
    })
}
