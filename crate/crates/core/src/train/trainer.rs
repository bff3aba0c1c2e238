use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{adamw_step, lr_at, mcc, AdamWConfig, ConfusionMatrix, OptimizerState, TrainError};
use crate::corpus::{perturb, LabeledSequence, Perturbation};
use crate::model::{loss_and_gradients, predict_logits, Example, ModelConfig, ModelParams};
use crate::tokenize::{TokenSequence, TokenizerSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub optimizer: AdamWConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 3,
            batch_size: 32,
            seed: 0,
            optimizer: AdamWConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub mean_train_loss: f64,
    pub dev_mcc: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best dev MCC (earliest on ties),
    /// or the initial parameters when no epoch ran.
    pub params: ModelParams,
    pub history: Vec<EpochRecord>,
    /// 1-based; `None` when no epoch ran.
    pub best_epoch: Option<usize>,
    /// Training loss of every optimizer step, in order.
    pub step_losses: Vec<f64>,
    pub steps: usize,
}

/// Everything needed to identify and reproduce a training run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunMetadata {
    pub code_version: String,
    pub seed: u64,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub dev_mcc_history: Vec<f64>,
    pub best_epoch: Option<usize>,
    pub wall_clock_secs: f64,
}

impl RunMetadata {
    pub fn new(
        model: &ModelConfig,
        train: &TrainConfig,
        outcome: &TrainOutcome,
        wall_clock_secs: f64,
    ) -> Self {
        Self {
            code_version: code_version(),
            seed: train.seed,
            model: model.clone(),
            train: train.clone(),
            dev_mcc_history: outcome.history.iter().map(|e| e.dev_mcc).collect(),
            best_epoch: outcome.best_epoch,
            wall_clock_secs,
        }
    }
}

/// Crate version, suffixed with `GENOSEQ_GIT_DESCRIBE` when set at build time.
fn code_version() -> String {
    match option_env!("GENOSEQ_GIT_DESCRIBE") {
        Some(d) => format!("{}+{d}", env!("CARGO_PKG_VERSION")),
        None => env!("CARGO_PKG_VERSION").to_string(),
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Evaluation {
    pub confusion: ConfusionMatrix,
    pub mcc: f64,
}

/// Arg-max class; the lowest index wins ties.
pub fn predict(
    params: &ModelParams,
    config: &ModelConfig,
    tokens: &TokenSequence,
) -> Result<usize, TrainError> {
    let logits = predict_logits(params, config, tokens)?;
    let mut best = 0;
    for (c, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = c;
        }
    }
    Ok(best)
}

/// Confusion matrix and MCC over pre-encoded examples; predictions run in
/// parallel and are tallied in example order.
pub fn evaluate_examples(
    params: &ModelParams,
    config: &ModelConfig,
    examples: &[Example],
) -> Result<Evaluation, TrainError> {
    if examples.is_empty() {
        return Err(TrainError::EmptyMatrix);
    }
    let preds: Vec<usize> = examples
        .par_iter()
        .map(|ex| predict(params, config, &ex.tokens))
        .collect::<Result<_, _>>()?;
    let mut confusion = ConfusionMatrix::new(config.num_classes);
    for (ex, p) in examples.iter().zip(preds) {
        confusion.record(ex.label, p);
    }
    let mcc = mcc(&confusion)?;
    Ok(Evaluation { confusion, mcc })
}

pub fn encode_split(
    split: &[LabeledSequence],
    tokenizer: &TokenizerSpec,
    max_len: usize,
) -> Result<Vec<Example>, TrainError> {
    split
        .iter()
        .map(|r| {
            Ok(Example {
                tokens: tokenizer.encode(&r.sequence, max_len)?,
                label: r.label,
            })
        })
        .collect()
}

/// Perturbs every sequence (one rng seeded by `seed`, consumed in split
/// order), tokenizes, and scores in evaluation mode.
pub fn evaluate(
    params: &ModelParams,
    config: &ModelConfig,
    tokenizer: &TokenizerSpec,
    split: &[LabeledSequence],
    perturbation: Perturbation,
    seed: u64,
) -> Result<Evaluation, TrainError> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let perturbed = split
        .iter()
        .map(|r| {
            Ok(LabeledSequence {
                sequence: perturb(&r.sequence, perturbation, &mut rng)?,
                label: r.label,
            })
        })
        .collect::<Result<Vec<_>, TrainError>>()?;
    let examples = encode_split(&perturbed, tokenizer, config.max_len)?;
    evaluate_examples(params, config, &examples)
}

pub fn train(
    config: &ModelConfig,
    init: ModelParams,
    train_set: &[Example],
    dev_set: &[Example],
    tc: &TrainConfig,
) -> Result<TrainOutcome, TrainError> {
    train_observed(config, init, train_set, dev_set, tc, |_| {})
}

/// [`train`] with a callback after every epoch.
pub fn train_observed(
    config: &ModelConfig,
    init: ModelParams,
    train_set: &[Example],
    dev_set: &[Example],
    tc: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochRecord),
) -> Result<TrainOutcome, TrainError> {
    if tc.batch_size == 0 {
        return Err(TrainError::ZeroBatch);
    }
    if tc.epochs > 0 && train_set.is_empty() {
        return Err(TrainError::EmptySplit("train"));
    }
    if tc.epochs > 0 && dev_set.is_empty() {
        return Err(TrainError::EmptySplit("dev"));
    }
    let batches_per_epoch = train_set.len().div_ceil(tc.batch_size);
    let total_steps = tc.epochs * batches_per_epoch;
    let mut rng = ChaCha8Rng::seed_from_u64(tc.seed);
    let mut params = init;
    let mut best = params.clone();
    let mut best_mcc = f64::NEG_INFINITY;
    let mut best_epoch = None;
    let mut state = OptimizerState::new(&params, tc.optimizer);
    let mut history = Vec::with_capacity(tc.epochs);
    let mut step_losses = Vec::with_capacity(total_steps);
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut batch = Vec::with_capacity(tc.batch_size);

    for epoch in 1..=tc.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(tc.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| train_set[i].clone()));
            let (loss, grads) = loss_and_gradients(&params, config, &batch, &mut rng)?;
            let step = step_losses.len();
            adamw_step(
                &mut params,
                &grads,
                &mut state,
                lr_at(step + 1, total_steps, tc.optimizer.lr_peak),
            )?;
            if !params.is_finite() {
                return Err(TrainError::NonFinite { step: step + 1 });
            }
            step_losses.push(loss);
            epoch_loss += loss;
        }
        let dev = evaluate_examples(&params, config, dev_set)?;
        let record = EpochRecord {
            epoch,
            mean_train_loss: epoch_loss / batches_per_epoch as f64,
            dev_mcc: dev.mcc,
        };
        on_epoch(&record);
        if dev.mcc > best_mcc {
            best_mcc = dev.mcc;
            best_epoch = Some(epoch);
            best = params.clone();
        }
        history.push(record);
    }
    Ok(TrainOutcome {
        params: best,
        history,
        best_epoch,
        step_losses,
        steps: total_steps,
    })
}
