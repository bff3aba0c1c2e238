//! A small pre-norm Transformer encoder classifier with hand-written
//! reverse-mode gradients.
//!
//! Each layer computes
//! `x = x + Attn(LN1(x))`, then `x = x + Drop(FFN(LN2(x)))`, and the
//! classifier reads the final-normalized hidden state at position 0 (CLS).

mod encoder;

use std::fs;
use std::path::Path;

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::position::{PositionError, PositionalScheme};
use crate::tensor::Matrix;

pub use encoder::{
    batch_loss, forward, loss_and_gradients, predict_logits, Example, ForwardTrace, LayerTrace,
    GRAD_CHUNK,
};

pub const INIT_STD: f64 = 0.02;
pub const LAYER_NORM_EPS: f64 = 1e-5;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("token id {id} at position {pos} is outside the vocabulary of {vocab_size}")]
    IdOutOfRange {
        id: u32,
        pos: usize,
        vocab_size: usize,
    },
    #[error("sequence length {len} exceeds max_len {max_len}")]
    LengthExceeded { len: usize, max_len: usize },
    #[error("label {label} is not below the class count {num_classes}")]
    LabelOutOfRange { label: usize, num_classes: usize },
    #[error("batch is empty")]
    EmptyBatch,
    #[error(transparent)]
    Position(#[from] PositionError),
    #[error("checkpoint error: {0}")]
    Checkpoint(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub vocab_size: usize,
    pub d_model: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub d_ff: usize,
    pub max_len: usize,
    pub num_classes: usize,
    pub dropout: f64,
    pub scheme: PositionalScheme,
}

impl ModelConfig {
    /// Full-size defaults: width 768, 12 heads, feed-forward 4x width, 12 layers.
    pub fn new(
        vocab_size: usize,
        max_len: usize,
        num_classes: usize,
        scheme: PositionalScheme,
    ) -> Self {
        Self {
            vocab_size,
            d_model: 768,
            num_layers: 12,
            num_heads: 12,
            d_ff: 3072,
            max_len,
            num_classes,
            dropout: 0.1,
            scheme,
        }
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.num_heads
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let bad = |m: String| Err(ModelError::InvalidConfig(m));
        if self.vocab_size == 0 || self.d_model == 0 || self.num_layers == 0 || self.d_ff == 0 {
            return bad("vocab_size, d_model, num_layers and d_ff must be positive".into());
        }
        if self.num_heads == 0 || !self.d_model.is_multiple_of(self.num_heads) {
            return bad(format!(
                "num_heads {} must divide d_model {}",
                self.num_heads, self.d_model
            ));
        }
        if self.max_len < 3 {
            return bad("max_len must be at least 3".into());
        }
        if self.num_classes < 2 {
            return bad("num_classes must be at least 2".into());
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad(format!("dropout {} must lie in [0, 1)", self.dropout));
        }
        match &self.scheme {
            PositionalScheme::Sinusoidal if !self.d_model.is_multiple_of(2) => {
                return Err(PositionError::OddDimension(self.d_model).into())
            }
            PositionalScheme::Rotary { base } => {
                if !self.head_dim().is_multiple_of(2) {
                    return Err(PositionError::OddDimension(self.head_dim()).into());
                }
                if !(*base > 1.0) {
                    return Err(PositionError::InvalidBase(*base).into());
                }
            }
            PositionalScheme::Alibi { slopes } if slopes.len() != self.num_heads => {
                return bad(format!(
                    "{} ALiBi slopes for {} heads",
                    slopes.len(),
                    self.num_heads
                ))
            }
            _ => {}
        }
        Ok(())
    }
}

/// Exact number of learnable scalars.
pub fn count_parameters(config: &ModelConfig) -> usize {
    let d = config.d_model;
    let ff = config.d_ff;
    let per_layer = 4 * (d * d + d) // q, k, v, o
        + (d * ff + ff) + (ff * d + d) // feed-forward
        + 4 * d; // two norms
    config.vocab_size * d
        + config.num_layers * per_layer
        + 2 * d
        + d * config.num_classes
        + config.num_classes
}

/// Weight-decay treatment of a tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParamKind {
    Weight,
    Bias,
    /// Normalization gains and offsets; never decayed.
    Norm,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub ln1_gain: Matrix,
    pub ln1_bias: Matrix,
    pub wq: Matrix,
    pub bq: Matrix,
    pub wk: Matrix,
    pub bk: Matrix,
    pub wv: Matrix,
    pub bv: Matrix,
    pub wo: Matrix,
    pub bo: Matrix,
    pub ln2_gain: Matrix,
    pub ln2_bias: Matrix,
    pub w1: Matrix,
    pub b1: Matrix,
    pub w2: Matrix,
    pub b2: Matrix,
}

const LAYER_FIELDS: [(&str, ParamKind); 16] = [
    ("ln1_gain", ParamKind::Norm),
    ("ln1_bias", ParamKind::Norm),
    ("wq", ParamKind::Weight),
    ("bq", ParamKind::Bias),
    ("wk", ParamKind::Weight),
    ("bk", ParamKind::Bias),
    ("wv", ParamKind::Weight),
    ("bv", ParamKind::Bias),
    ("wo", ParamKind::Weight),
    ("bo", ParamKind::Bias),
    ("ln2_gain", ParamKind::Norm),
    ("ln2_bias", ParamKind::Norm),
    ("w1", ParamKind::Weight),
    ("b1", ParamKind::Bias),
    ("w2", ParamKind::Weight),
    ("b2", ParamKind::Bias),
];

impl LayerParams {
    fn fields(&self) -> [&Matrix; 16] {
        [
            &self.ln1_gain,
            &self.ln1_bias,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gain,
            &self.ln2_bias,
            &self.w1,
            &self.b1,
            &self.w2,
            &self.b2,
        ]
    }

    fn fields_mut(&mut self) -> [&mut Matrix; 16] {
        [
            &mut self.ln1_gain,
            &mut self.ln1_bias,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gain,
            &mut self.ln2_bias,
            &mut self.w1,
            &mut self.b1,
            &mut self.w2,
            &mut self.b2,
        ]
    }
}

/// All learned tensors. Also used as the gradient container.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    pub embedding: Matrix,
    pub layers: Vec<LayerParams>,
    pub final_gain: Matrix,
    pub final_bias: Matrix,
    pub classifier: Matrix,
    pub classifier_bias: Matrix,
}

impl ModelParams {
    /// Normal(0, 0.02) weights and embeddings, zero offsets, unit gains.
    pub fn init<R: Rng + ?Sized>(config: &ModelConfig, rng: &mut R) -> Result<Self, ModelError> {
        config.validate()?;
        let normal = Normal::new(0.0, INIT_STD).expect("valid std");
        Ok(Self::build(config, |r, c| {
            Matrix::from_vec(r, c, (0..r * c).map(|_| normal.sample(rng)).collect())
        }))
    }

    /// All-zero tensors shaped for `config`.
    pub fn zeros(config: &ModelConfig) -> Result<Self, ModelError> {
        config.validate()?;
        Ok(Self::build(config, Matrix::zeros))
    }

    fn build(config: &ModelConfig, mut randn: impl FnMut(usize, usize) -> Matrix) -> Self {
        let d = config.d_model;
        let ff = config.d_ff;
        let embedding = randn(config.vocab_size, d);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                ln1_gain: Matrix::filled(1, d, 1.0),
                ln1_bias: Matrix::zeros(1, d),
                wq: randn(d, d),
                bq: Matrix::zeros(1, d),
                wk: randn(d, d),
                bk: Matrix::zeros(1, d),
                wv: randn(d, d),
                bv: Matrix::zeros(1, d),
                wo: randn(d, d),
                bo: Matrix::zeros(1, d),
                ln2_gain: Matrix::filled(1, d, 1.0),
                ln2_bias: Matrix::zeros(1, d),
                w1: randn(d, ff),
                b1: Matrix::zeros(1, ff),
                w2: randn(ff, d),
                b2: Matrix::zeros(1, d),
            })
            .collect();
        let classifier = randn(d, config.num_classes);
        Self {
            embedding,
            layers,
            final_gain: Matrix::filled(1, d, 1.0),
            final_bias: Matrix::zeros(1, d),
            classifier,
            classifier_bias: Matrix::zeros(1, config.num_classes),
        }
    }

    pub fn zeros_like(&self) -> Self {
        let z = |m: &Matrix| Matrix::zeros(m.rows(), m.cols());
        Self {
            embedding: z(&self.embedding),
            layers: self
                .layers
                .iter()
                .map(|l| {
                    let f = l.fields();
                    LayerParams {
                        ln1_gain: z(f[0]),
                        ln1_bias: z(f[1]),
                        wq: z(f[2]),
                        bq: z(f[3]),
                        wk: z(f[4]),
                        bk: z(f[5]),
                        wv: z(f[6]),
                        bv: z(f[7]),
                        wo: z(f[8]),
                        bo: z(f[9]),
                        ln2_gain: z(f[10]),
                        ln2_bias: z(f[11]),
                        w1: z(f[12]),
                        b1: z(f[13]),
                        w2: z(f[14]),
                        b2: z(f[15]),
                    }
                })
                .collect(),
            final_gain: z(&self.final_gain),
            final_bias: z(&self.final_bias),
            classifier: z(&self.classifier),
            classifier_bias: z(&self.classifier_bias),
        }
    }

    /// Every tensor with a stable name and its decay treatment, in a fixed order.
    pub fn named_tensors(&self) -> Vec<(String, ParamKind, &Matrix)> {
        let mut out = vec![("embedding".to_string(), ParamKind::Weight, &self.embedding)];
        for (i, layer) in self.layers.iter().enumerate() {
            for ((name, kind), t) in LAYER_FIELDS.iter().zip(layer.fields()) {
                out.push((format!("layers.{i}.{name}"), *kind, t));
            }
        }
        out.push(("final_gain".into(), ParamKind::Norm, &self.final_gain));
        out.push(("final_bias".into(), ParamKind::Norm, &self.final_bias));
        out.push(("classifier".into(), ParamKind::Weight, &self.classifier));
        out.push((
            "classifier_bias".into(),
            ParamKind::Bias,
            &self.classifier_bias,
        ));
        out
    }

    /// Mutable view in the same order as [`Self::named_tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Matrix> {
        let mut out = vec![&mut self.embedding];
        for layer in &mut self.layers {
            out.extend(layer.fields_mut());
        }
        out.push(&mut self.final_gain);
        out.push(&mut self.final_bias);
        out.push(&mut self.classifier);
        out.push(&mut self.classifier_bias);
        out
    }

    pub fn num_scalars(&self) -> usize {
        self.named_tensors().iter().map(|(_, _, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.named_tensors().iter().all(|(_, _, t)| t.is_finite())
    }

    pub fn add_assign(&mut self, other: &ModelParams) {
        let src = other.named_tensors();
        for (dst, (_, _, s)) in self.tensors_mut().into_iter().zip(src) {
            dst.add_assign(s);
        }
    }

    pub fn scale(&mut self, s: f64) {
        for t in self.tensors_mut() {
            t.scale(s);
        }
    }
}

#[derive(Serialize, Deserialize)]
struct TensorRecord {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

const CHECKPOINT_FORMAT: &str = "genoseq-checkpoint";

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct CheckpointFile {
    format: String,
    version: u32,
    config: ModelConfig,
    tensors: Vec<TensorRecord>,
}

/// JSON checkpoint: config plus every tensor with its shape. Floats are
/// written in shortest round-trip form, so reloading is bit-exact.
pub fn checkpoint_to_json(config: &ModelConfig, params: &ModelParams) -> String {
    let file = CheckpointFile {
        format: CHECKPOINT_FORMAT.into(),
        version: 1,
        config: config.clone(),
        tensors: params
            .named_tensors()
            .into_iter()
            .map(|(name, _, t)| TensorRecord {
                name,
                rows: t.rows(),
                cols: t.cols(),
                data: t.as_slice().to_vec(),
            })
            .collect(),
    };
    serde_json::to_string(&file).expect("checkpoint serializes")
}

pub fn checkpoint_from_json(text: &str) -> Result<(ModelConfig, ModelParams), ModelError> {
    let err = |m: String| ModelError::Checkpoint(m);
    let file: CheckpointFile = serde_json::from_str(text).map_err(|e| err(e.to_string()))?;
    if file.format != CHECKPOINT_FORMAT || file.version != 1 {
        return Err(err(format!(
            "unsupported format {} v{}",
            file.format, file.version
        )));
    }
    file.config.validate()?;
    let mut params = ModelParams::zeros(&file.config)?;
    let names: Vec<String> = params
        .named_tensors()
        .into_iter()
        .map(|(n, _, _)| n)
        .collect();
    if names.len() != file.tensors.len() {
        return Err(err(format!(
            "expected {} tensors, found {}",
            names.len(),
            file.tensors.len()
        )));
    }
    for ((dst, name), rec) in params
        .tensors_mut()
        .into_iter()
        .zip(&names)
        .zip(file.tensors)
    {
        if &rec.name != name
            || (rec.rows, rec.cols) != dst.shape()
            || rec.data.len() != rec.rows * rec.cols
        {
            return Err(err(format!("tensor {} does not match {name}", rec.name)));
        }
        *dst = Matrix::from_vec(rec.rows, rec.cols, rec.data);
    }
    Ok((file.config, params))
}

pub fn save_checkpoint(
    path: &Path,
    config: &ModelConfig,
    params: &ModelParams,
) -> Result<(), ModelError> {
    fs::write(path, checkpoint_to_json(config, params)).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_checkpoint(path: &Path) -> Result<(ModelConfig, ModelParams), ModelError> {
    let text = fs::read_to_string(path).map_err(|source| ModelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    checkpoint_from_json(&text)
}
