//! The convolutional note classifier.
//!
//! ```text
//! ids (L) ─ embedding ─▶ L×D ─ conv K, C channels ─▶ (L−K+1)×C ─ ReLU
//!         ─ max-pool P ─▶ (L−K−P+2)×C ─ flatten ─ dense H + ReLU ─ dense 1 + sigmoid
//! ```

mod checkpoint;
mod train;

pub use checkpoint::{Checkpoint, Predictor, TrainingMeta, VocabRef, CHECKPOINT_FORMAT_VERSION};
pub use train::{fit, train_fold, EpochRecord, Example, FoldModel, TrainHistory};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::layers::{
    conv_backward, conv_forward, dense_backward, dense_forward, embed_backward, embed_forward,
    maxpool_backward, maxpool_forward, relu, relu_grad, sigmoid,
};
use crate::tensor::{AdamConfig, Real, Tensor};

/// Hidden-layer nonlinearity. `Identity` (with `pool_len = 1`) turns the
/// network into a linear model of its embeddings, which is used to check
/// attributions against closed forms.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Identity,
}

impl Activation {
    #[inline]
    pub fn apply<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => relu(x),
            Activation::Identity => x,
        }
    }

    #[inline]
    pub fn derivative<T: Real>(self, x: T) -> T {
        match self {
            Activation::Relu => relu_grad(x),
            Activation::Identity => T::one(),
        }
    }
}

/// Architecture and training hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    /// Vocabulary capacity (`max_words`); at most `vocab_capacity − 1` words.
    pub vocab_capacity: usize,
    pub embed_dim: usize,
    pub conv_channels: usize,
    pub kernel_len: usize,
    pub pool_len: usize,
    pub dense_units: usize,
    pub max_len: usize,
    pub epochs: usize,
    pub batch_size: usize,
    /// Loss weight of the death class; `None` uses `N_neg / N_pos` of the
    /// training fold.
    pub class_weight_pos: Option<f64>,
    pub window_hours: f64,
    pub seed: u64,
    pub adam: AdamConfig,
    pub hidden_activation: Activation,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            vocab_capacity: 100_000,
            embed_dim: 10,
            conv_channels: 32,
            kernel_len: 5,
            pool_len: 3,
            dense_units: 50,
            max_len: 500,
            epochs: 3,
            batch_size: 32,
            class_weight_pos: None,
            window_hours: 48.0,
            seed: 0,
            adam: AdamConfig::default(),
            hidden_activation: Activation::Relu,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let dims = [
            ("vocab_capacity", self.vocab_capacity),
            ("embed_dim", self.embed_dim),
            ("conv_channels", self.conv_channels),
            ("kernel_len", self.kernel_len),
            ("pool_len", self.pool_len),
            ("dense_units", self.dense_units),
            ("max_len", self.max_len),
            ("batch_size", self.batch_size),
        ];
        if let Some((name, _)) = dims.iter().find(|(_, v)| *v == 0) {
            return Err(Error::Config(format!("{name} must be positive")));
        }
        if self.max_len + 1 < self.kernel_len + self.pool_len {
            return Err(Error::Config(format!(
                "max_len {} too short for kernel {} and pool {}",
                self.max_len, self.kernel_len, self.pool_len
            )));
        }
        if let Some(w) = self.class_weight_pos {
            if !(w > 0.0 && w.is_finite()) {
                return Err(Error::Config("class_weight_pos must be positive".into()));
            }
        }
        if !(self.window_hours > 0.0) {
            return Err(Error::Config("window_hours must be positive".into()));
        }
        Ok(())
    }

    /// Rows after the convolution: `L − K + 1`.
    pub fn conv_len(&self) -> usize {
        self.max_len - self.kernel_len + 1
    }

    /// Rows after pooling: `L − K − P + 2`.
    pub fn pooled_len(&self) -> usize {
        self.conv_len() - self.pool_len + 1
    }

    /// Width of the flattened pooled representation.
    pub fn flat_len(&self) -> usize {
        self.pooled_len() * self.conv_channels
    }
}

/// All learnable arrays.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    /// `(V+1)×D`; row 0 is the padding embedding.
    pub embedding: Tensor<T>,
    /// `C×K×D`.
    pub conv_kernels: Tensor<T>,
    pub conv_bias: Vec<T>,
    /// `(pooled_len·C)×H`.
    pub dense_w: Tensor<T>,
    pub dense_b: Vec<T>,
    /// `H×1`.
    pub out_w: Tensor<T>,
    pub out_b: Vec<T>,
}

/// Names of the parameter groups, in [`ModelParams::groups`] order.
pub const PARAM_GROUPS: [&str; 7] = [
    "embedding",
    "conv_kernels",
    "conv_bias",
    "dense_w",
    "dense_b",
    "out_w",
    "out_b",
];

impl<T: Real> ModelParams<T> {
    pub fn zeros(cfg: &ModelConfig, table_rows: usize) -> Self {
        let (d, c, k, h) = (cfg.embed_dim, cfg.conv_channels, cfg.kernel_len, cfg.dense_units);
        ModelParams {
            embedding: Tensor::zeros(&[table_rows, d]),
            conv_kernels: Tensor::zeros(&[c, k, d]),
            conv_bias: vec![T::zero(); c],
            dense_w: Tensor::zeros(&[cfg.flat_len(), h]),
            dense_b: vec![T::zero(); h],
            out_w: Tensor::zeros(&[h, 1]),
            out_b: vec![T::zero()],
        }
    }

    /// Glorot-uniform weights (`±√(6/(fan_in+fan_out))`) and zero biases,
    /// drawn in `f64` from ChaCha8 so both precisions see the same values.
    pub fn init(cfg: &ModelConfig, table_rows: usize, seed: u64) -> Self {
        let mut p = Self::zeros(cfg, table_rows);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (d, c, k, h) = (cfg.embed_dim, cfg.conv_channels, cfg.kernel_len, cfg.dense_units);
        glorot(&mut p.embedding, table_rows, d, &mut rng);
        glorot(&mut p.conv_kernels, k * d, k * c, &mut rng);
        glorot(&mut p.dense_w, cfg.flat_len(), h, &mut rng);
        glorot(&mut p.out_w, h, 1, &mut rng);
        p
    }

    pub fn groups(&self) -> [&[T]; 7] {
        [
            self.embedding.data(),
            self.conv_kernels.data(),
            &self.conv_bias,
            self.dense_w.data(),
            &self.dense_b,
            self.out_w.data(),
            &self.out_b,
        ]
    }

    pub fn groups_mut(&mut self) -> [&mut [T]; 7] {
        [
            self.embedding.data_mut(),
            self.conv_kernels.data_mut(),
            &mut self.conv_bias,
            self.dense_w.data_mut(),
            &mut self.dense_b,
            self.out_w.data_mut(),
            &mut self.out_b,
        ]
    }

    pub fn group_sizes(&self) -> [usize; 7] {
        self.groups().map(<[T]>::len)
    }

    pub fn set_zero(&mut self) {
        for g in self.groups_mut() {
            g.iter_mut().for_each(|x| *x = T::zero());
        }
    }

    pub fn table_rows(&self) -> usize {
        self.embedding.rows()
    }

    pub fn cast<U: Real>(&self) -> ModelParams<U> {
        let v = |x: &[T]| x.iter().map(|&e| U::lit(e.as_f64())).collect::<Vec<U>>();
        ModelParams {
            embedding: self.embedding.cast(),
            conv_kernels: self.conv_kernels.cast(),
            conv_bias: v(&self.conv_bias),
            dense_w: self.dense_w.cast(),
            dense_b: v(&self.dense_b),
            out_w: self.out_w.cast(),
            out_b: v(&self.out_b),
        }
    }

    /// Checks every array against the shapes implied by `cfg`.
    pub fn check_shapes(&self, cfg: &ModelConfig) -> Result<()> {
        let expected = Self::zeros(cfg, self.table_rows());
        let shapes = |p: &ModelParams<T>| {
            [
                p.embedding.shape().to_vec(),
                p.conv_kernels.shape().to_vec(),
                vec![p.conv_bias.len()],
                p.dense_w.shape().to_vec(),
                vec![p.dense_b.len()],
                p.out_w.shape().to_vec(),
                vec![p.out_b.len()],
            ]
        };
        for ((name, got), want) in PARAM_GROUPS.iter().zip(shapes(self)).zip(shapes(&expected)) {
            if got != want {
                return Err(Error::Shape(format!("{name}: expected {want:?}, got {got:?}")));
            }
        }
        Ok(())
    }
}

fn glorot<T: Real>(t: &mut Tensor<T>, fan_in: usize, fan_out: usize, rng: &mut ChaCha8Rng) {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    for x in t.data_mut() {
        *x = T::lit(rng.random_range(-bound..bound));
    }
}

/// Intermediate activations kept for the backward pass and for DeepLIFT.
#[derive(Debug, Clone)]
pub struct ForwardCache<T> {
    /// Token ids; empty when the pass started from embeddings.
    pub ids: Vec<usize>,
    pub embedded: Tensor<T>,
    pub conv_pre: Tensor<T>,
    pub conv_act: Tensor<T>,
    pub pooled: Tensor<T>,
    pub argmax: Vec<usize>,
    pub hidden_pre: Vec<T>,
    pub hidden: Vec<T>,
    pub logit: T,
    pub prob: T,
}

/// Configuration plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub config: ModelConfig,
    pub params: ModelParams<T>,
}

impl<T: Real> Model<T> {
    pub fn new(config: ModelConfig, params: ModelParams<T>) -> Result<Self> {
        config.validate()?;
        params.check_shapes(&config)?;
        Ok(Model { config, params })
    }

    /// Freshly initialized model for a vocabulary with `table_rows` rows.
    pub fn init(config: ModelConfig, table_rows: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ModelParams::init(&config, table_rows, seed);
        Ok(Model { config, params })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            params: self.params.cast(),
        }
    }

    /// Mortality probability for a sequence of `max_len` ids.
    pub fn predict_ids(&self, ids: &[usize]) -> Result<T> {
        Ok(self.forward(ids)?.prob)
    }

    pub fn forward(&self, ids: &[usize]) -> Result<ForwardCache<T>> {
        if ids.len() != self.config.max_len {
            return Err(Error::Shape(format!(
                "sequence length {} does not match max_len {}",
                ids.len(),
                self.config.max_len
            )));
        }
        let embedded = embed_forward(ids, &self.params.embedding)?;
        let mut cache = self.forward_embedded(embedded)?;
        cache.ids = ids.to_vec();
        Ok(cache)
    }

    /// Forward pass from an `L×D` embedded input.
    pub fn forward_embedded(&self, embedded: Tensor<T>) -> Result<ForwardCache<T>> {
        let cfg = &self.config;
        let p = &self.params;
        if embedded.shape() != [cfg.max_len, cfg.embed_dim] {
            return Err(Error::Shape(format!(
                "embedded input {:?} does not match {}×{}",
                embedded.shape(),
                cfg.max_len,
                cfg.embed_dim
            )));
        }
        let act = cfg.hidden_activation;
        let conv_pre = conv_forward(&embedded, &p.conv_kernels, &p.conv_bias)?;
        let mut conv_act = conv_pre.clone();
        conv_act.data_mut().iter_mut().for_each(|x| *x = act.apply(*x));
        let (pooled, argmax) = maxpool_forward(&conv_act, cfg.pool_len)?;
        let hidden_pre = dense_forward(pooled.data(), &p.dense_w, &p.dense_b)?;
        let hidden: Vec<T> = hidden_pre.iter().map(|&x| act.apply(x)).collect();
        let logit = dense_forward(&hidden, &p.out_w, &p.out_b)?[0];
        Ok(ForwardCache {
            ids: Vec::new(),
            embedded,
            conv_pre,
            conv_act,
            pooled,
            argmax,
            hidden_pre,
            hidden,
            logit,
            prob: sigmoid(logit),
        })
    }

    /// Accumulates into `grads` the parameter gradients of a loss whose
    /// derivative with respect to the output probability is `d_prob`.
    pub fn backward(&self, cache: &ForwardCache<T>, d_prob: T, grads: &mut ModelParams<T>) -> Result<()> {
        let p = &self.params;
        let cfg = &self.config;
        if cache.conv_pre.shape() != [cfg.conv_len(), cfg.conv_channels]
            || cache.hidden.len() != cfg.dense_units
        {
            return Err(Error::Shape("forward cache does not belong to this model".into()));
        }
        if grads.table_rows() != p.table_rows() {
            return Err(Error::Shape("gradient buffer has a different table size".into()));
        }
        let act = cfg.hidden_activation;
        let d_logit = d_prob * cache.prob * (T::one() - cache.prob);
        let d_hidden = dense_backward(&cache.hidden, &p.out_w, &[d_logit], &mut grads.out_w, &mut grads.out_b);
        let d_hidden_pre: Vec<T> = d_hidden
            .iter()
            .zip(&cache.hidden_pre)
            .map(|(&g, &z)| g * act.derivative(z))
            .collect();
        let d_flat = dense_backward(
            cache.pooled.data(),
            &p.dense_w,
            &d_hidden_pre,
            &mut grads.dense_w,
            &mut grads.dense_b,
        );
        let d_pooled = Tensor::from_vec(cache.pooled.shape(), d_flat)?;
        let mut d_conv = maxpool_backward(&d_pooled, &cache.argmax, cfg.conv_len());
        for (g, &z) in d_conv.data_mut().iter_mut().zip(cache.conv_pre.data()) {
            *g *= act.derivative(z);
        }
        let track_input = !cache.ids.is_empty();
        let mut d_x = track_input.then(|| Tensor::zeros(cache.embedded.shape()));
        conv_backward(
            &cache.embedded,
            &p.conv_kernels,
            &d_conv,
            &mut grads.conv_kernels,
            &mut grads.conv_bias,
            d_x.as_mut(),
        );
        if let Some(d_x) = d_x {
            embed_backward(&cache.ids, &d_x, &mut grads.embedding);
        }
        Ok(())
    }
}
