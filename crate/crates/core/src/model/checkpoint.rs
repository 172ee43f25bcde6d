use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Model, ModelConfig, ModelParams, TrainHistory, PARAM_GROUPS};
use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::textpipe::{sha256_hex, FoldTag, StopwordList, TextPipeline, TokenSequence, Vocabulary};

pub const CHECKPOINT_FORMAT_VERSION: u32 = 1;

/// Where the vocabulary lives and what it must hash to.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VocabRef {
    /// Relative paths are resolved against the checkpoint's directory.
    pub path: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainingMeta {
    pub fold: FoldTag,
    pub history: TrainHistory,
    /// Frequency-weighted mean embedding of the training fold, used as the
    /// attribution reference.
    pub reference: Vec<f32>,
}

/// A trained model with everything needed to score new notes.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub params: ModelParams<f32>,
    pub vocabulary: VocabRef,
    pub training: TrainingMeta,
    /// Free-form run description carried along unchanged.
    pub provenance: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct Envelope {
    format_version: u32,
    config: ModelConfig,
    vocabulary: VocabRef,
    training: TrainingEnvelope,
    params: Vec<Encoded>,
    payload_sha256: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    provenance: Option<serde_json::Value>,
}

#[derive(Serialize, Deserialize)]
struct TrainingEnvelope {
    fold: FoldTag,
    best_epoch: usize,
    best_val_loss: f64,
    history: TrainHistory,
    reference: Encoded,
}

#[derive(Serialize, Deserialize)]
struct Encoded {
    name: String,
    shape: Vec<usize>,
    data: String,
}

fn le_bytes(xs: &[f32]) -> Vec<u8> {
    xs.iter().flat_map(|x| x.to_le_bytes()).collect()
}

fn encode(name: &str, shape: Vec<usize>, xs: &[f32]) -> Encoded {
    Encoded {
        name: name.to_string(),
        shape,
        data: STANDARD.encode(le_bytes(xs)),
    }
}

fn decode(e: &Encoded) -> Result<Vec<f32>> {
    let bytes = STANDARD
        .decode(&e.data)
        .map_err(|err| Error::Payload(format!("{}: {err}", e.name)))?;
    if bytes.len() % 4 != 0 {
        return Err(Error::Payload(format!("{}: {} bytes is not a whole number of f32", e.name, bytes.len())));
    }
    let xs: Vec<f32> = bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect();
    if xs.len() != e.shape.iter().product::<usize>() {
        return Err(Error::Payload(format!("{}: {} values for shape {:?}", e.name, xs.len(), e.shape)));
    }
    Ok(xs)
}

fn payload_digest(arrays: &[&[f32]]) -> String {
    let bytes: Vec<u8> = arrays.iter().flat_map(|a| le_bytes(a)).collect();
    sha256_hex(&bytes)
}

impl Checkpoint {
    fn shapes(&self) -> [Vec<usize>; 7] {
        let p = &self.params;
        [
            p.embedding.shape().to_vec(),
            p.conv_kernels.shape().to_vec(),
            vec![p.conv_bias.len()],
            p.dense_w.shape().to_vec(),
            vec![p.dense_b.len()],
            p.out_w.shape().to_vec(),
            vec![p.out_b.len()],
        ]
    }

    pub fn to_json(&self) -> Vec<u8> {
        let groups = self.params.groups();
        let params = PARAM_GROUPS
            .iter()
            .zip(self.shapes())
            .zip(groups)
            .map(|((name, shape), xs)| encode(name, shape, xs))
            .collect();
        let mut arrays = groups.to_vec();
        arrays.push(&self.training.reference);
        let h = &self.training.history;
        let env = Envelope {
            format_version: CHECKPOINT_FORMAT_VERSION,
            config: self.config.clone(),
            vocabulary: self.vocabulary.clone(),
            training: TrainingEnvelope {
                fold: self.training.fold.clone(),
                best_epoch: h.best_epoch,
                best_val_loss: h.best_val_loss,
                history: h.clone(),
                reference: encode("reference", vec![self.training.reference.len()], &self.training.reference),
            },
            params,
            payload_sha256: payload_digest(&arrays),
            provenance: self.provenance.clone(),
        };
        let mut out = serde_json::to_vec_pretty(&env).expect("checkpoint serializes");
        out.push(b'\n');
        out
    }

    pub fn from_json(bytes: &[u8]) -> Result<Self> {
        let probe: serde_json::Value = serde_json::from_slice(bytes)?;
        let version = probe
            .get("format_version")
            .and_then(serde_json::Value::as_u64)
            .ok_or_else(|| Error::Payload("missing format_version".into()))?;
        if version != u64::from(CHECKPOINT_FORMAT_VERSION) {
            return Err(Error::Version {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                supported: CHECKPOINT_FORMAT_VERSION,
            });
        }
        let env: Envelope = serde_json::from_value(probe)?;
        env.config.validate()?;
        if env.params.len() != PARAM_GROUPS.len() {
            return Err(Error::Payload(format!("expected {} parameter arrays", PARAM_GROUPS.len())));
        }
        let mut decoded = Vec::with_capacity(PARAM_GROUPS.len());
        for (e, name) in env.params.iter().zip(PARAM_GROUPS) {
            if e.name != name {
                return Err(Error::Payload(format!("expected array `{name}`, found `{}`", e.name)));
            }
            decoded.push(decode(e)?);
        }
        let reference = decode(&env.training.reference)?;
        let mut arrays: Vec<&[f32]> = decoded.iter().map(Vec::as_slice).collect();
        arrays.push(&reference);
        let found = payload_digest(&arrays);
        if found != env.payload_sha256 {
            return Err(Error::Checksum {
                expected: env.payload_sha256,
                found,
            });
        }
        let mut it = env.params.iter().zip(decoded);
        let mut tensor = || -> Result<Tensor<f32>> {
            let (e, xs) = it.next().expect("seven arrays");
            Tensor::from_vec(&e.shape, xs)
        };
        let embedding = tensor()?;
        let conv_kernels = tensor()?;
        let conv_bias = tensor()?.into_data();
        let dense_w = tensor()?;
        let dense_b = tensor()?.into_data();
        let out_w = tensor()?;
        let out_b = tensor()?.into_data();
        let params = ModelParams {
            embedding,
            conv_kernels,
            conv_bias,
            dense_w,
            dense_b,
            out_w,
            out_b,
        };
        params.check_shapes(&env.config)?;
        if reference.len() != env.config.embed_dim {
            return Err(Error::Shape(format!(
                "reference has {} values, embedding width is {}",
                reference.len(),
                env.config.embed_dim
            )));
        }
        Ok(Checkpoint {
            config: env.config,
            params,
            vocabulary: env.vocabulary,
            training: TrainingMeta {
                fold: env.training.fold,
                history: env.training.history,
                reference,
            },
            provenance: env.provenance,
        })
    }

    /// SHA-256 of the serialized form.
    pub fn checksum(&self) -> String {
        sha256_hex(&self.to_json())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&bytes)
    }

    pub fn model(&self) -> Result<Model<f32>> {
        Model::new(self.config.clone(), self.params.clone())
    }

    /// The vocabulary path with relative paths resolved against `checkpoint_path`.
    pub fn vocabulary_path(&self, checkpoint_path: &Path) -> PathBuf {
        let p = Path::new(&self.vocabulary.path);
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            checkpoint_path.parent().unwrap_or(Path::new("")).join(p)
        }
    }
}

/// Scores raw note text with a checkpoint and its vocabulary.
#[derive(Debug, Clone)]
pub struct Predictor {
    checkpoint: Checkpoint,
    model: Model<f32>,
    pipeline: TextPipeline,
}

impl Predictor {
    /// Pairs a checkpoint with a vocabulary, rejecting a vocabulary whose
    /// checksum differs from the one recorded at training time.
    pub fn new(checkpoint: Checkpoint, vocabulary: Vocabulary, stopwords: StopwordList) -> Result<Self> {
        let found = vocabulary.checksum();
        if found != checkpoint.vocabulary.sha256 {
            return Err(Error::Checksum {
                expected: checkpoint.vocabulary.sha256.clone(),
                found,
            });
        }
        let model = checkpoint.model()?;
        if vocabulary.table_rows() != model.params.table_rows() {
            return Err(Error::Shape(format!(
                "vocabulary has {} rows, embedding table has {}",
                vocabulary.table_rows(),
                model.params.table_rows()
            )));
        }
        let pipeline = TextPipeline::new(stopwords, vocabulary, checkpoint.config.max_len)?;
        Ok(Predictor {
            checkpoint,
            model,
            pipeline,
        })
    }

    /// Loads a checkpoint and the vocabulary it references, using the
    /// built-in English stop-words.
    pub fn load(checkpoint_path: &Path) -> Result<Self> {
        Self::load_with(checkpoint_path, StopwordList::english())
    }

    pub fn load_with(checkpoint_path: &Path, stopwords: StopwordList) -> Result<Self> {
        let checkpoint = Checkpoint::load(checkpoint_path)?;
        let vocab_path = checkpoint.vocabulary_path(checkpoint_path);
        let bytes = std::fs::read(&vocab_path).map_err(|e| Error::io(&vocab_path, e))?;
        let found = sha256_hex(&bytes);
        if found != checkpoint.vocabulary.sha256 {
            return Err(Error::Checksum {
                expected: checkpoint.vocabulary.sha256.clone(),
                found,
            });
        }
        let vocabulary = Vocabulary::from_json(&bytes)?;
        Self::new(checkpoint, vocabulary, stopwords)
    }

    pub fn checkpoint(&self) -> &Checkpoint {
        &self.checkpoint
    }

    pub fn model(&self) -> &Model<f32> {
        &self.model
    }

    pub fn pipeline(&self) -> &TextPipeline {
        &self.pipeline
    }

    pub fn sequence(&self, patient_id: &str, text: &str) -> TokenSequence {
        self.pipeline.vectorize(patient_id, text)
    }

    /// Mortality probability for a raw note.
    pub fn predict(&self, text: &str) -> Result<f64> {
        let seq = self.sequence("", text);
        Ok(f64::from(self.model.predict_ids(&seq.ids)?))
    }
}
