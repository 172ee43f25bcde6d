use serde::{Deserialize, Serialize};

use super::{AttributionMap, ReferenceSpec};
use crate::error::{Error, Result};
use crate::model::{Activation, ForwardCache, Model};
use crate::tensor::layers::{embed_forward, sigmoid};
use crate::tensor::{Real, Tensor};
use crate::textpipe::{TokenSequence, Vocabulary};

/// Below this input delta the rescale rule falls back to the local derivative.
pub const RESCALE_EPSILON: f64 = 1e-7;

/// Which model output is explained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Target {
    #[default]
    Probability,
    Logit,
}

impl Target {
    pub(crate) fn of<T: Real>(self, cache: &ForwardCache<T>) -> T {
        match self {
            Target::Probability => cache.prob,
            Target::Logit => cache.logit,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionAttribution<T> {
    pub values: Vec<T>,
    pub f_actual: T,
    pub f_reference: T,
}

fn rescale<T: Real>(dx: T, dy: T, slope_at_actual: T) -> T {
    if dx.abs() > T::lit(RESCALE_EPSILON) {
        dy / dx
    } else {
        slope_at_actual
    }
}

fn hidden_slope<T: Real>(act: Activation, x: T, dx: T, dy: T) -> T {
    match act {
        Activation::Identity => T::one(),
        Activation::Relu => rescale(dx, dy, act.derivative(x)),
    }
}

/// DeepLIFT over an `L×D` embedded input against the tiled reference.
pub fn deeplift_embedded<T: Real>(
    model: &Model<T>,
    embedded: Tensor<T>,
    reference: &ReferenceSpec,
    target: Target,
) -> Result<PositionAttribution<T>> {
    let cfg = &model.config;
    let p = &model.params;
    if reference.vector.len() != cfg.embed_dim {
        return Err(Error::Shape(format!(
            "reference has {} dims, embedding has {}",
            reference.vector.len(),
            cfg.embed_dim
        )));
    }
    let base = reference.tiled::<T>(cfg.max_len);
    let a = model.forward_embedded(embedded)?;
    let r = model.forward_embedded(base.clone())?;
    let act = cfg.hidden_activation;

    let m_logit = match target {
        Target::Logit => T::one(),
        Target::Probability => {
            let s = sigmoid(a.logit);
            rescale(a.logit - r.logit, a.prob - r.prob, s * (T::one() - s))
        }
    };

    let h = cfg.dense_units;
    let m_hidden_pre: Vec<T> = (0..h)
        .map(|j| {
            let m = p.out_w.data()[j] * m_logit;
            m * hidden_slope(act, a.hidden_pre[j], a.hidden_pre[j] - r.hidden_pre[j], a.hidden[j] - r.hidden[j])
        })
        .collect();

    let flat = cfg.flat_len();
    let w = p.dense_w.data();
    let mut m_pooled = vec![T::zero(); flat];
    for (f, m) in m_pooled.iter_mut().enumerate() {
        let row = &w[f * h..(f + 1) * h];
        *m = row.iter().zip(&m_hidden_pre).map(|(&wi, &mi)| wi * mi).sum();
    }

    // Each pooled delta is routed to the argmax row of the actual input. The
    // reference rows are all equal, so its pool output is that same row's value.
    let c = cfg.conv_channels;
    let mut m_conv = Tensor::<T>::zeros(&[cfg.conv_len(), c]);
    for (o, (&m, &src)) in m_pooled.iter().zip(&a.argmax).enumerate() {
        let ch = o % c;
        let t = src;
        m_conv.data_mut()[t * c + ch] += m;
    }
    for (i, m) in m_conv.data_mut().iter_mut().enumerate() {
        let x = a.conv_pre.data()[i];
        let dx = x - r.conv_pre.data()[i];
        let dy = a.conv_act.data()[i] - r.conv_act.data()[i];
        *m *= hidden_slope(act, x, dx, dy);
    }

    let (k, d) = (cfg.kernel_len, cfg.embed_dim);
    let kernels = p.conv_kernels.data();
    let mut m_x = Tensor::<T>::zeros(&[cfg.max_len, d]);
    for t in 0..cfg.conv_len() {
        for ch in 0..c {
            let m = m_conv.data()[t * c + ch];
            if m == T::zero() {
                continue;
            }
            let kern = &kernels[ch * k * d..(ch + 1) * k * d];
            for j in 0..k {
                let row = m_x.row_mut(t + j);
                for (dst, &wv) in row.iter_mut().zip(&kern[j * d..(j + 1) * d]) {
                    *dst += wv * m;
                }
            }
        }
    }

    let values = (0..cfg.max_len)
        .map(|t| {
            m_x.row(t)
                .iter()
                .zip(a.embedded.row(t))
                .zip(base.row(t))
                .map(|((&m, &x), &b)| m * (x - b))
                .sum()
        })
        .collect();
    Ok(PositionAttribution {
        values,
        f_actual: target.of(&a),
        f_reference: target.of(&r),
    })
}

/// DeepLIFT attributions of one vectorized note.
pub fn deeplift<T: Real>(
    model: &Model<T>,
    seq: &TokenSequence,
    vocab: &Vocabulary,
    reference: &ReferenceSpec,
    target: Target,
) -> Result<AttributionMap> {
    if seq.ids.len() != model.config.max_len {
        return Err(Error::Shape(format!(
            "sequence length {} does not match max_len {}",
            seq.ids.len(),
            model.config.max_len
        )));
    }
    let embedded = embed_forward(&seq.ids, &model.params.embedding)?;
    let pa = deeplift_embedded(model, embedded, reference, target)?;
    AttributionMap::new(
        seq,
        vocab,
        pa.values.iter().map(|v| v.as_f64()).collect(),
        pa.f_actual.as_f64(),
        pa.f_reference.as_f64(),
        target,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::attribution::ReferenceMode;
    use crate::model::{ModelConfig, ModelParams};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn linear_config(max_len: usize, d: usize) -> ModelConfig {
        ModelConfig {
            embed_dim: d,
            conv_channels: 2,
            kernel_len: 2,
            pool_len: 1,
            dense_units: 3,
            max_len,
            hidden_activation: Activation::Identity,
            ..ModelConfig::default()
        }
    }

    fn spec(v: Vec<f64>) -> ReferenceSpec {
        ReferenceSpec {
            mode: ReferenceMode::UnweightedMean,
            vector: v,
        }
    }

    #[test]
    fn constant_model_attributes_nothing() {
        let cfg = ModelConfig {
            embed_dim: 3,
            max_len: 12,
            conv_channels: 4,
            dense_units: 5,
            ..ModelConfig::default()
        };
        let mut params = ModelParams::<f64>::zeros(&cfg, 6);
        params.out_b[0] = 0.7;
        params.embedding = ModelParams::<f64>::init(&cfg, 6, 2).embedding;
        let model = Model::new(cfg, params).unwrap();
        let x = embed_forward(&[1, 2, 3, 4, 5, 0, 1, 2, 3, 4, 5, 0], &model.params.embedding).unwrap();
        let pa = deeplift_embedded(&model, x, &spec(vec![0.3, -0.2, 0.1]), Target::Probability).unwrap();
        assert!(pa.values.iter().all(|&v| v == 0.0));
        assert_eq!(pa.f_actual, pa.f_reference);
    }

    // A model whose logit is w·x + b over three positions of a one-dim
    // embedding: one channel, kernel 1 with weight 1, dense units pass through.
    #[test]
    fn linear_closed_form() {
        let cfg = ModelConfig {
            embed_dim: 1,
            conv_channels: 1,
            kernel_len: 1,
            pool_len: 1,
            dense_units: 1,
            max_len: 3,
            hidden_activation: Activation::Identity,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::<f64>::zeros(&cfg, 2);
        p.conv_kernels.data_mut()[0] = 1.0;
        p.dense_w.data_mut().copy_from_slice(&[1.0, -1.0, 2.0]);
        p.out_w.data_mut()[0] = 1.0;
        p.out_b[0] = 0.25;
        let model = Model::new(cfg, p).unwrap();
        let x = Tensor::from_vec(&[3, 1], vec![1.0, 2.0, 3.0]).unwrap();
        let pa = deeplift_embedded(&model, x, &spec(vec![0.0]), Target::Logit).unwrap();
        assert_eq!(pa.values, vec![1.0, -2.0, 6.0]);
        assert_eq!(pa.f_actual - pa.f_reference, 5.0);
    }

    // One position, one dim, kernel weight 1: the conv ReLU is the only
    // nonlinearity before a linear read-out.
    #[test]
    fn relu_rescale_arithmetic() {
        let cfg = ModelConfig {
            embed_dim: 1,
            conv_channels: 1,
            kernel_len: 1,
            pool_len: 1,
            dense_units: 1,
            max_len: 1,
            ..ModelConfig::default()
        };
        let mut p = ModelParams::<f64>::zeros(&cfg, 2);
        p.conv_kernels.data_mut()[0] = 1.0;
        p.dense_w.data_mut()[0] = 1.0;
        p.dense_b[0] = 1.0; // keeps the dense ReLU active
        p.out_w.data_mut()[0] = 1.0;
        let model = Model::new(cfg, p).unwrap();
        let x = Tensor::from_vec(&[1, 1], vec![1.0]).unwrap();
        let pa = deeplift_embedded(&model, x, &spec(vec![-1.0]), Target::Logit).unwrap();
        // Δx = 2, Δy = relu(1) − relu(−1) = 1: multiplier 0.5, attribution 1
        assert_eq!(pa.values, vec![1.0]);
        assert_eq!(pa.f_actual - pa.f_reference, 1.0);
    }

    #[test]
    fn completeness_on_random_full_models() {
        let cfg = ModelConfig {
            max_len: 60,
            ..ModelConfig::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for seed in 0..5 {
            let model = Model::<f64>::init(cfg.clone(), 40, seed).unwrap();
            let ids: Vec<usize> = (0..60).map(|i| if i < 10 { 0 } else { rng.random_range(1..40) }).collect();
            let x = embed_forward(&ids, &model.params.embedding).unwrap();
            let reference = spec((0..10).map(|_| rng.random_range(-0.05..0.05)).collect());
            for target in [Target::Probability, Target::Logit] {
                let pa = deeplift_embedded(&model, x.clone(), &reference, target).unwrap();
                let gap = pa.values.iter().sum::<f64>() - (pa.f_actual - pa.f_reference);
                assert!(gap.abs() < 1e-10, "{gap}");
            }
        }
    }

    #[test]
    fn reference_position_gets_zero() {
        let cfg = linear_config(5, 2);
        let model = Model::<f64>::init(cfg, 4, 1).unwrap();
        let reference = spec(vec![0.1, -0.2]);
        let mut x = Tensor::from_vec(&[5, 2], (0..10).map(|i| i as f64 * 0.1).collect()).unwrap();
        x.row_mut(2).copy_from_slice(&[0.1, -0.2]);
        let pa = deeplift_embedded(&model, x, &reference, Target::Logit).unwrap();
        assert_eq!(pa.values[2], 0.0);
    }

    #[test]
    fn wrong_reference_width_is_an_error() {
        let model = Model::<f64>::init(linear_config(5, 2), 4, 1).unwrap();
        let x = Tensor::zeros(&[5, 2]);
        assert!(deeplift_embedded(&model, x, &spec(vec![0.0; 3]), Target::Logit).is_err());
    }
}
