//! Word importances.
//!
//! DeepLIFT gives one value per token position; the exact and sampled
//! Shapley estimators over [`Game`]s are the oracles it is checked against.
//! All of them measure contributions relative to a reference embedding
//! placed at every position.

mod deeplift;
mod shapley;

pub use deeplift::{deeplift, deeplift_embedded, PositionAttribution, Target, RESCALE_EPSILON};
pub use shapley::{
    exact_shapley, sampled_shapley, shapley_by_permutations, EmbeddingGame, FnGame, Game, SampledShapley,
    EXACT_SHAPLEY_CAP, PERMUTATION_ORACLE_CAP,
};

use std::borrow::Borrow;
use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::ModelParams;
use crate::tensor::{Real, Tensor};
use crate::textpipe::{TokenSequence, Vocabulary, PAD_SYMBOL};

/// The smoothing kernel applied to per-position values for display.
pub const SMOOTHING_KERNEL: [f64; 5] = [0.1, 0.2, 0.4, 0.2, 0.1];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceMode {
    /// Mean embedding over every token of the training sequences, padding
    /// included.
    #[default]
    FrequencyWeightedMean,
    /// Mean over the rows of the embedding table.
    UnweightedMean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSpec {
    pub mode: ReferenceMode,
    pub vector: Vec<f64>,
}

impl ReferenceSpec {
    /// `rows` copies of the reference vector.
    pub fn tiled<T: Real>(&self, rows: usize) -> Tensor<T> {
        let data = (0..rows)
            .flat_map(|_| self.vector.iter().map(|&x| T::lit(x)))
            .collect();
        Tensor::from_vec(&[rows, self.vector.len()], data).expect("non-empty reference")
    }
}

/// Mean input embedding used as the attribution reference.
pub fn reference_embedding<T, I>(params: &ModelParams<T>, sequences: I, mode: ReferenceMode) -> Result<ReferenceSpec>
where
    T: Real,
    I: IntoIterator,
    I::Item: Borrow<TokenSequence>,
{
    let table = &params.embedding;
    let d = table.row_len();
    let mut sum = vec![0.0f64; d];
    let mut count = 0usize;
    match mode {
        ReferenceMode::FrequencyWeightedMean => {
            let mut freq = vec![0usize; table.rows()];
            for seq in sequences {
                for &id in &seq.borrow().ids {
                    *freq.get_mut(id).ok_or(Error::IdOutOfRange { id, rows: table.rows() })? += 1;
                }
            }
            for (row, &f) in freq.iter().enumerate().filter(|(_, &f)| f > 0) {
                for (s, &x) in sum.iter_mut().zip(table.row(row)) {
                    *s += f as f64 * x.as_f64();
                }
                count += f;
            }
            if count == 0 {
                return Err(Error::Data("reference from an empty token stream".into()));
            }
        }
        ReferenceMode::UnweightedMean => {
            for row in 0..table.rows() {
                for (s, &x) in sum.iter_mut().zip(table.row(row)) {
                    *s += x.as_f64();
                }
            }
            count = table.rows();
        }
    }
    let vector = sum.into_iter().map(|s| s / count as f64).collect();
    Ok(ReferenceSpec { mode, vector })
}

/// Same-length convolution with [`SMOOTHING_KERNEL`], zero padded.
pub fn smooth(values: &[f64]) -> Vec<f64> {
    let n = values.len() as isize;
    (0..n)
        .map(|i| {
            let mut acc = 0.0;
            for (k, &w) in SMOOTHING_KERNEL.iter().enumerate() {
                let j = i + k as isize - 2;
                if (0..n).contains(&j) {
                    acc += w * values[j as usize];
                }
            }
            acc
        })
        .collect()
}

/// Per-position importances for one note.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AttributionMap {
    pub patient_id: String,
    pub ids: Vec<usize>,
    /// Display word per position; padding is [`PAD_SYMBOL`].
    pub tokens: Vec<String>,
    pub position_values: Vec<f64>,
    pub smoothed_values: Vec<f64>,
    pub f_actual: f64,
    pub f_reference: f64,
    pub target: Target,
    /// Sum of position values per word.
    pub word_aggregates: BTreeMap<String, f64>,
}

impl AttributionMap {
    pub fn new(
        seq: &TokenSequence,
        vocab: &Vocabulary,
        position_values: Vec<f64>,
        f_actual: f64,
        f_reference: f64,
        target: Target,
    ) -> Result<Self> {
        if position_values.len() != seq.ids.len() {
            return Err(Error::Shape(format!(
                "{} values for {} positions",
                position_values.len(),
                seq.ids.len()
            )));
        }
        let tokens = seq
            .ids
            .iter()
            .map(|&id| {
                vocab
                    .word_of(id)
                    .map(str::to_owned)
                    .ok_or(Error::IdOutOfRange { id, rows: vocab.table_rows() })
            })
            .collect::<Result<Vec<_>>>()?;
        let mut word_aggregates = BTreeMap::new();
        for (t, &v) in tokens.iter().zip(&position_values) {
            *word_aggregates.entry(t.clone()).or_insert(0.0) += v;
        }
        Ok(AttributionMap {
            patient_id: seq.patient_id.clone(),
            ids: seq.ids.clone(),
            smoothed_values: smooth(&position_values),
            tokens,
            position_values,
            f_actual,
            f_reference,
            target,
            word_aggregates,
        })
    }

    /// `|Σ values − (f_actual − f_reference)|`.
    pub fn completeness_gap(&self) -> f64 {
        let total: f64 = self.position_values.iter().sum();
        (total - (self.f_actual - self.f_reference)).abs()
    }

    pub fn padding_values(&self) -> impl Iterator<Item = f64> + '_ {
        self.ids
            .iter()
            .zip(&self.position_values)
            .filter(|(&id, _)| id == 0)
            .map(|(_, &v)| v)
    }
}

/// Distribution of attributions at padding positions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PaddingStats {
    /// `counts.len() + 1` edges.
    pub edges: Vec<f64>,
    pub counts: Vec<usize>,
    pub n_values: usize,
    /// Fraction of values below zero (evidence for survival).
    pub share_negative: f64,
    pub mean: f64,
}

pub fn padding_attribution_stats(maps: &[AttributionMap], bins: usize) -> Result<PaddingStats> {
    if bins == 0 {
        return Err(Error::Config("histogram needs at least one bin".into()));
    }
    let values: Vec<f64> = maps.iter().flat_map(AttributionMap::padding_values).collect();
    if values.is_empty() {
        return Err(Error::Data("no padding positions in any attribution map".into()));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let bins = if hi > lo { bins } else { 1 };
    let width = (hi - lo) / bins as f64;
    let edges: Vec<f64> = (0..=bins)
        .map(|i| if i == bins { hi } else { lo + width * i as f64 })
        .collect();
    let mut counts = vec![0usize; bins];
    for &v in &values {
        let b = if width > 0.0 {
            (((v - lo) / width) as usize).min(bins - 1)
        } else {
            0
        };
        counts[b] += 1;
    }
    let negative = values.iter().filter(|&&v| v < 0.0).count();
    Ok(PaddingStats {
        edges,
        counts,
        n_values: values.len(),
        share_negative: negative as f64 / values.len() as f64,
        mean: values.iter().sum::<f64>() / values.len() as f64,
    })
}

/// Display strings for a sequence: vocabulary words, padding as [`PAD_SYMBOL`].
pub fn token_strings(ids: &[usize], vocab: &Vocabulary) -> Vec<String> {
    ids.iter()
        .map(|&id| vocab.word_of(id).unwrap_or(PAD_SYMBOL).to_owned())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use proptest::prelude::*;

    fn params_with_rows(rows: &[[f32; 2]]) -> ModelParams<f32> {
        let cfg = ModelConfig {
            embed_dim: 2,
            max_len: 8,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::zeros(&cfg, rows.len());
        for (i, r) in rows.iter().enumerate() {
            p.embedding.row_mut(i).copy_from_slice(r);
        }
        p
    }

    #[test]
    fn weighted_reference_examples() {
        let p = params_with_rows(&[[0.0, 0.0], [1.0, 2.0], [3.0, -2.0]]);
        let seq = |ids: Vec<usize>| TokenSequence {
            pad_count: 0,
            ids,
            patient_id: String::new(),
        };
        let r = reference_embedding(&p, [seq(vec![1, 2])], ReferenceMode::FrequencyWeightedMean).unwrap();
        assert_eq!(r.vector, vec![2.0, 0.0]);
        let r = reference_embedding(&p, [seq(vec![2, 2, 2])], ReferenceMode::FrequencyWeightedMean).unwrap();
        assert_eq!(r.vector, vec![3.0, -2.0]);
        // skewed stream: token 1 ×3, token 2 ×1, padding ×2
        let r = reference_embedding(&p, [seq(vec![0, 0, 1, 1, 1, 2])], ReferenceMode::FrequencyWeightedMean).unwrap();
        let hand = [(3.0 * 1.0 + 3.0) / 6.0, (3.0 * 2.0 - 2.0) / 6.0];
        assert!((r.vector[0] - hand[0]).abs() < 1e-15 && (r.vector[1] - hand[1]).abs() < 1e-15);
        let u = reference_embedding(&p, [seq(vec![0])], ReferenceMode::UnweightedMean).unwrap();
        assert!((u.vector[0] - 4.0 / 3.0).abs() < 1e-15 && u.vector[1] == 0.0);
        assert_ne!(u.vector, r.vector);
    }

    #[test]
    fn weighted_reference_needs_tokens() {
        let p = params_with_rows(&[[0.0, 0.0], [1.0, 1.0]]);
        let none: Vec<TokenSequence> = Vec::new();
        assert!(reference_embedding(&p, none, ReferenceMode::FrequencyWeightedMean).is_err());
    }

    #[test]
    fn smoothing_impulse_and_edges() {
        assert_eq!(smooth(&[0.0, 0.0, 1.0, 0.0, 0.0]), SMOOTHING_KERNEL.to_vec());
        assert_eq!(smooth(&[0.0; 4]), vec![0.0; 4]);
        assert_eq!(smooth(&[1.0]), vec![0.4]);
        let c = smooth(&[2.5; 9]);
        for v in &c[2..7] {
            assert!((v - 2.5).abs() <= 4.0 * f64::EPSILON * 2.5);
        }
        assert!((c[0] - 2.5 * 0.7).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn smoothing_is_linear(
            x in prop::collection::vec(-5.0f64..5.0, 1..40),
            a in -3.0f64..3.0,
            b in -3.0f64..3.0,
            seed in 0u64..1000,
        ) {
            let y: Vec<f64> = x.iter().enumerate().map(|(i, v)| (v * 1.3 + (i as u64 ^ seed) as f64).sin()).collect();
            let combo: Vec<f64> = x.iter().zip(&y).map(|(p, q)| a * p + b * q).collect();
            let lhs = smooth(&combo);
            let (sx, sy) = (smooth(&x), smooth(&y));
            for i in 0..x.len() {
                prop_assert!((lhs[i] - (a * sx[i] + b * sy[i])).abs() < 1e-12);
            }
        }
    }

    fn map_with_padding(values: &[f64]) -> AttributionMap {
        AttributionMap {
            patient_id: "p".into(),
            ids: vec![0; values.len()],
            tokens: vec![PAD_SYMBOL.into(); values.len()],
            position_values: values.to_vec(),
            smoothed_values: smooth(values),
            f_actual: 0.0,
            f_reference: 0.0,
            target: Target::Probability,
            word_aggregates: BTreeMap::new(),
        }
    }

    #[test]
    fn padding_share_examples() {
        let s = padding_attribution_stats(&[map_with_padding(&[-0.01; 10])], 20).unwrap();
        assert_eq!(s.share_negative, 1.0);
        assert_eq!(s.counts, vec![10]);
        let s = padding_attribution_stats(&[map_with_padding(&[0.3, -0.3, 0.1]), map_with_padding(&[-0.1])], 4).unwrap();
        assert_eq!(s.share_negative, 0.5);
        assert_eq!(s.counts.iter().sum::<usize>(), 4);
        assert_eq!(s.counts, vec![1, 1, 1, 1]);
        assert_eq!(s.edges.len(), 5);
    }

    #[test]
    fn padding_stats_need_padding() {
        let mut m = map_with_padding(&[0.1, 0.2]);
        m.ids = vec![3, 4];
        assert!(padding_attribution_stats(&[m], 10).is_err());
    }
}
