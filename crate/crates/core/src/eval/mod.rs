//! Cross-validation folds, ROC analysis and summary statistics.

mod mwu;

pub use mwu::{mann_whitney_u, Alternative, UTestResult, EXACT_MWU_MAX};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::error::{Error, Result};

/// Assignment of examples to cross-validation folds.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldSpec {
    pub k: usize,
    /// Fold id of each example.
    pub assignments: Vec<usize>,
    pub seed: u64,
    pub stratified: bool,
}

impl FoldSpec {
    /// `(train, validation)` indices for `fold`.
    pub fn split(&self, fold: usize) -> (Vec<usize>, Vec<usize>) {
        (0..self.assignments.len()).partition(|&i| self.assignments[i] != fold)
    }

    pub fn fold_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.k];
        for &f in &self.assignments {
            sizes[f] += 1;
        }
        sizes
    }
}

/// Seeded k-fold split. Stratified splits shuffle each class separately and
/// deal examples round-robin, positives first, continuing the rotation
/// across classes so fold sizes also stay within one of each other.
pub fn kfold_split(labels: &[u8], k: usize, seed: u64, stratified: bool) -> Result<FoldSpec> {
    if k < 2 {
        return Err(Error::Config(format!("k-fold needs k ≥ 2, got {k}")));
    }
    if labels.len() < k {
        return Err(Error::Config(format!("{} examples cannot fill {k} folds", labels.len())));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = if stratified {
        let mut classes: Vec<u8> = labels.to_vec();
        classes.sort_unstable_by(|a, b| b.cmp(a));
        classes.dedup();
        classes
            .into_iter()
            .map(|c| (0..labels.len()).filter(|&i| labels[i] == c).collect::<Vec<_>>())
            .collect()
    } else {
        vec![(0..labels.len()).collect()]
    };
    let mut assignments = vec![0; labels.len()];
    let mut next = 0usize;
    for mut group in groups {
        if stratified && group.len() < k {
            log::warn!(
                "class {} has {} examples for {k} folds; some folds will lack it",
                labels[group[0]],
                group.len()
            );
        }
        group.shuffle(&mut rng);
        for i in group {
            assignments[i] = next % k;
            next += 1;
        }
    }
    Ok(FoldSpec {
        k,
        assignments,
        seed,
        stratified,
    })
}

fn class_counts(scores: &[f64], labels: &[u8]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::Shape(format!("{} scores for {} labels", scores.len(), labels.len())));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::Data("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l == 1).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::Undefined(format!("ROC needs both classes ({pos} positive, {neg} negative)")));
    }
    Ok((pos, neg))
}

/// 1-based ranks with ties sharing their mean rank.
pub fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        let rank = (i + j + 2) as f64 / 2.0;
        for &o in &order[i..=j] {
            ranks[o] = rank;
        }
        i = j + 1;
    }
    ranks
}

/// Area under the ROC curve from the rank-sum statistic; ties count half.
pub fn roc_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l == 1).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos * neg) as f64)
}

/// AUC by comparing every positive with every negative.
pub fn pairwise_auc(scores: &[f64], labels: &[u8]) -> Result<f64> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut twice = 0u64;
    for (sp, _) in scores.iter().zip(labels).filter(|(_, &l)| l == 1) {
        for (sn, _) in scores.iter().zip(labels).filter(|(_, &l)| l != 1) {
            twice += match sp.partial_cmp(sn) {
                Some(std::cmp::Ordering::Greater) => 2,
                Some(std::cmp::Ordering::Equal) => 1,
                _ => 0,
            };
        }
    }
    Ok(twice as f64 / 2.0 / (pos * neg) as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RocCurve {
    /// `(fpr, tpr)` from `(0, 0)` to `(1, 1)`, thresholds descending.
    pub points: Vec<(f64, f64)>,
    /// Threshold reached at each point after the first.
    pub thresholds: Vec<f64>,
    pub auc: f64,
}

impl RocCurve {
    pub fn trapezoid_area(&self) -> f64 {
        self.points
            .windows(2)
            .map(|w| (w[1].0 - w[0].0) * (w[0].1 + w[1].1) / 2.0)
            .sum()
    }
}

pub fn roc_curve(scores: &[f64], labels: &[u8]) -> Result<RocCurve> {
    let (pos, neg) = class_counts(scores, labels)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    let mut points = vec![(0.0, 0.0)];
    let mut thresholds = Vec::new();
    let (mut tp, mut fp) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = scores[order[i]];
        while i < order.len() && scores[order[i]] == t {
            if labels[order[i]] == 1 {
                tp += 1;
            } else {
                fp += 1;
            }
            i += 1;
        }
        points.push((fp as f64 / neg as f64, tp as f64 / pos as f64));
        thresholds.push(t);
    }
    Ok(RocCurve {
        points,
        thresholds,
        auc: roc_auc(scores, labels)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatingPoint {
    pub threshold: f64,
    pub sensitivity: f64,
    pub specificity: f64,
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

/// Sensitivity and specificity when `score ≥ threshold` predicts death.
pub fn operating_point(scores: &[f64], labels: &[u8], threshold: f64) -> Result<OperatingPoint> {
    class_counts(scores, labels)?;
    let (mut tp, mut fp, mut tn, mut fn_) = (0, 0, 0, 0);
    for (&s, &l) in scores.iter().zip(labels) {
        match (s >= threshold, l == 1) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, false) => tn += 1,
            (false, true) => fn_ += 1,
        }
    }
    Ok(OperatingPoint {
        threshold,
        sensitivity: tp as f64 / (tp + fn_) as f64,
        specificity: tn as f64 / (tn + fp) as f64,
        tp,
        fp,
        tn,
        fn_,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CiMethod {
    /// `mean ± t₀.₉₇₅,ₖ₋₁ · s/√k`
    #[default]
    StudentT,
    /// `mean ± 1.96 · s/√k`
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CvSummary {
    pub fold_aucs: Vec<f64>,
    pub mean: f64,
    /// Sample standard deviation.
    pub std: f64,
    pub ci_low: f64,
    pub ci_high: f64,
    pub ci_method: CiMethod,
}

/// Mean, sample standard deviation and a 95% interval across folds.
pub fn cv_summary(fold_aucs: &[f64], method: CiMethod) -> Result<CvSummary> {
    let k = fold_aucs.len();
    if k < 2 {
        return Err(Error::Undefined(format!("confidence interval over {k} fold(s)")));
    }
    let mean = fold_aucs.iter().sum::<f64>() / k as f64;
    let var = fold_aucs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (k - 1) as f64;
    let std = var.sqrt();
    let q = match method {
        CiMethod::StudentT => StudentsT::new(0.0, 1.0, (k - 1) as f64)
            .expect("positive degrees of freedom")
            .inverse_cdf(0.975),
        CiMethod::Normal => 1.96,
    };
    let half = q * std / (k as f64).sqrt();
    Ok(CvSummary {
        fold_aucs: fold_aucs.to_vec(),
        mean,
        std,
        ci_low: mean - half,
        ci_high: mean + half,
        ci_method: method,
    })
}
