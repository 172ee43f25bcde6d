use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Checkpoint, Model, ModelConfig, ModelParams, TrainingMeta, VocabRef};
use crate::attribution::{reference_embedding, ReferenceMode};
use crate::corpus::PatientDoc;
use crate::error::{Error, Result};
use crate::tensor::layers::{weighted_bce, weighted_bce_grad};
use crate::tensor::AdamState;
use crate::textpipe::{preprocess, vectorize, FoldTag, StopwordList, TokenSequence, Vocabulary};

/// A vectorized document with its label (1 = death).
#[derive(Debug, Clone, PartialEq)]
pub struct Example {
    pub seq: TokenSequence,
    pub label: u8,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    /// 1-based.
    pub epoch: usize,
    /// Mean weighted loss over the epoch's mini-batches, before each update.
    pub train_loss: f64,
    /// Mean weighted loss on the held-out fold after the epoch.
    pub val_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub class_weight_pos: f64,
    pub initial_val_loss: f64,
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_loss: f64,
}

/// Mean class-weighted loss of `model` over `examples`.
pub fn mean_loss(model: &Model<f32>, examples: &[Example], w_pos: f64) -> Result<f64> {
    let w = w_pos as f32;
    let mut total = 0.0f64;
    for ex in examples {
        let p = model.forward(&ex.seq.ids)?.prob;
        total += f64::from(weighted_bce(p, ex.label, w));
    }
    Ok(total / examples.len().max(1) as f64)
}

/// Mini-batch Adam for `cfg.epochs` epochs; returns the parameters with the
/// lowest validation loss seen at an epoch boundary.
pub fn fit(
    cfg: &ModelConfig,
    table_rows: usize,
    train: &[Example],
    val: &[Example],
) -> Result<(ModelParams<f32>, TrainHistory)> {
    cfg.validate()?;
    if train.is_empty() {
        return Err(Error::Data("empty training set".into()));
    }
    if val.is_empty() {
        return Err(Error::Data("empty validation set".into()));
    }
    let n_pos = train.iter().filter(|e| e.label == 1).count();
    let n_neg = train.len() - n_pos;
    if n_pos == 0 || n_neg == 0 {
        return Err(Error::Data(format!(
            "training set has a single class ({n_pos} deaths, {n_neg} survivors)"
        )));
    }
    let w_pos = cfg.class_weight_pos.unwrap_or(n_neg as f64 / n_pos as f64);
    let w = w_pos as f32;

    let mut model = Model::init(cfg.clone(), table_rows, cfg.seed)?;
    let mut grads = ModelParams::<f32>::zeros(cfg, table_rows);
    let mut adam = AdamState::<f32>::new(cfg.adam, &model.params.group_sizes());
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9_7f4a_7c15);
    let mut order: Vec<usize> = (0..train.len()).collect();

    let initial_val_loss = mean_loss(&model, val, w_pos)?;
    let mut history = TrainHistory {
        class_weight_pos: w_pos,
        initial_val_loss,
        epochs: Vec::with_capacity(cfg.epochs),
        best_epoch: 0,
        best_val_loss: f64::INFINITY,
    };
    let mut best = model.params.clone();

    for epoch in 1..=cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0f64;
        for batch in order.chunks(cfg.batch_size) {
            grads.set_zero();
            let scale = 1.0 / batch.len() as f32;
            for &i in batch {
                let ex = &train[i];
                let cache = model.forward(&ex.seq.ids)?;
                epoch_loss += f64::from(weighted_bce(cache.prob, ex.label, w));
                let d_prob = weighted_bce_grad(cache.prob, ex.label, w) * scale;
                model.backward(&cache, d_prob, &mut grads)?;
            }
            let mut params = model.params.groups_mut();
            adam.step(&mut params, &grads.groups());
        }
        let val_loss = mean_loss(&model, val, w_pos)?;
        log::debug!("epoch {epoch}: train {:.5} val {val_loss:.5}", epoch_loss / train.len() as f64);
        history.epochs.push(EpochRecord {
            epoch,
            train_loss: epoch_loss / train.len() as f64,
            val_loss,
        });
        if val_loss < history.best_val_loss {
            history.best_val_loss = val_loss;
            history.best_epoch = epoch;
            best = model.params.clone();
        }
    }
    if history.best_epoch == 0 {
        // zero epochs, or a non-finite loss throughout
        history.best_val_loss = initial_val_loss;
    }
    Ok((best, history))
}

/// Everything produced by training on one cross-validation fold.
#[derive(Debug, Clone)]
pub struct FoldModel {
    pub checkpoint: Checkpoint,
    pub vocabulary: Vocabulary,
    pub history: TrainHistory,
    pub val_patient_ids: Vec<String>,
    pub val_labels: Vec<u8>,
    pub val_scores: Vec<f64>,
}

/// Fits the fold's vocabulary on `train` only, vectorizes both splits,
/// trains, and scores the validation documents with the best parameters.
pub fn train_fold(
    train: &[PatientDoc],
    val: &[PatientDoc],
    cfg: &ModelConfig,
    fold: FoldTag,
    stopwords: &StopwordList,
) -> Result<FoldModel> {
    cfg.validate()?;
    let train_tokens: Vec<Vec<String>> = train.iter().map(|d| preprocess(&d.text, stopwords)).collect();
    let vocab = Vocabulary::fit(&train_tokens, cfg.vocab_capacity, fold.clone(), stopwords);
    let to_examples = |docs: &[PatientDoc], tokens: Vec<Vec<String>>| -> Vec<Example> {
        docs.iter()
            .zip(tokens)
            .map(|(d, t)| Example {
                seq: vectorize(&t, &vocab, cfg.max_len, d.patient_id.clone()),
                label: d.outcome,
            })
            .collect()
    };
    let train_ex = to_examples(train, train_tokens);
    let val_tokens: Vec<Vec<String>> = val.iter().map(|d| preprocess(&d.text, stopwords)).collect();
    let val_ex = to_examples(val, val_tokens);

    let (params, history) = fit(cfg, vocab.table_rows(), &train_ex, &val_ex)?;
    let model = Model::new(cfg.clone(), params)?;
    let reference = reference_embedding(
        &model.params,
        train_ex.iter().map(|e| &e.seq),
        ReferenceMode::FrequencyWeightedMean,
    )?;
    let val_scores = val_ex
        .iter()
        .map(|e| model.predict_ids(&e.seq.ids).map(f64::from))
        .collect::<Result<Vec<_>>>()?;

    let checkpoint = Checkpoint {
        config: cfg.clone(),
        params: model.params,
        vocabulary: VocabRef {
            path: String::new(),
            sha256: vocab.checksum(),
        },
        training: TrainingMeta {
            fold,
            history: history.clone(),
            reference: reference.vector.iter().map(|&x| x as f32).collect(),
        },
        provenance: None,
    };
    Ok(FoldModel {
        checkpoint,
        vocabulary: vocab,
        history,
        val_patient_ids: val.iter().map(|d| d.patient_id.clone()).collect(),
        val_labels: val.iter().map(|d| d.outcome).collect(),
        val_scores,
    })
}
