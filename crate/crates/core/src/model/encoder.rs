use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{ModelConfig, ModelError, ModelParams, LAYER_NORM_EPS};
use crate::position::{sinusoid_table, PositionalScheme, RopeTable};
use crate::tensor::{gemm, Matrix};
use crate::tokenize::TokenSequence;

/// Examples per gradient work unit. Chunk boundaries do not depend on the
/// thread count and chunk sums are combined in order, so the batch gradient
/// is bit-identical however many threads run.
pub const GRAD_CHUNK: usize = 4;

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[derive(Clone, Debug, PartialEq)]
pub struct Example {
    pub tokens: TokenSequence,
    pub label: usize,
}

#[derive(Clone, Debug)]
struct NormCache {
    xhat: Matrix,
    rstd: Vec<f64>,
}

/// Activations of one encoder layer kept for the backward pass.
#[derive(Clone, Debug)]
pub struct LayerTrace {
    /// Rows that were run as queries; fewer than `seq_len` only in the
    /// last layer of the classification fast path.
    pub query_rows: usize,
    ln1: NormCache,
    /// LN1 output, the input of the q/k/v projections.
    pub attn_input: Matrix,
    /// Per-head queries and keys after any rotation, `seq_len x head_dim`.
    pub queries: Vec<Matrix>,
    pub keys: Vec<Matrix>,
    pub values: Vec<Matrix>,
    /// Per-head attention probabilities before dropout.
    pub attention: Vec<Matrix>,
    /// Per-head dropout multipliers (0 or `1/(1-p)`), training only.
    attn_keep: Option<Vec<Matrix>>,
    context: Matrix,
    ln2: NormCache,
    ffn_input: Matrix,
    pre_gelu: Matrix,
    post_gelu: Matrix,
    ffn_keep: Option<Matrix>,
}

#[derive(Clone, Debug)]
pub struct ForwardTrace {
    ids: Vec<u32>,
    valid_len: usize,
    /// `H^(0)` (embeddings plus any additive positions) through `H^(L)`.
    pub hidden: Vec<Matrix>,
    pub layers: Vec<LayerTrace>,
    final_xhat: Vec<f64>,
    final_rstd: f64,
    /// Final-normalized CLS state fed to the classifier.
    pub pooled: Vec<f64>,
    pub logits: Vec<f64>,
}

impl ForwardTrace {
    pub fn seq_len(&self) -> usize {
        self.ids.len()
    }

    /// Positions that are not PAD; attention never reads keys beyond it.
    pub fn valid_len(&self) -> usize {
        self.valid_len
    }
}

fn check_input(config: &ModelConfig, tokens: &TokenSequence) -> Result<(), ModelError> {
    let n = tokens.ids.len();
    if n > config.max_len {
        return Err(ModelError::LengthExceeded {
            len: n,
            max_len: config.max_len,
        });
    }
    if n == 0 || tokens.valid_len == 0 || tokens.valid_len > n {
        return Err(ModelError::InvalidConfig(format!(
            "token sequence of length {n} with {} valid positions",
            tokens.valid_len
        )));
    }
    if let Some((pos, &id)) = tokens
        .ids
        .iter()
        .enumerate()
        .find(|(_, &id)| id as usize >= config.vocab_size)
    {
        return Err(ModelError::IdOutOfRange {
            id,
            pos,
            vocab_size: config.vocab_size,
        });
    }
    Ok(())
}

fn layer_norm(x: &Matrix, gain: &Matrix, bias: &Matrix) -> (Matrix, NormCache) {
    let (n, d) = x.shape();
    let mut xhat = Matrix::zeros(n, d);
    let mut out = Matrix::zeros(n, d);
    let mut rstd = Vec::with_capacity(n);
    for r in 0..n {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let rs = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        rstd.push(rs);
        let xh = xhat.row_mut(r);
        for (h, v) in xh.iter_mut().zip(row) {
            *h = (v - mean) * rs;
        }
        let xh = xhat.row(r);
        for ((o, h), (g, b)) in out
            .row_mut(r)
            .iter_mut()
            .zip(xh)
            .zip(gain.as_slice().iter().zip(bias.as_slice()))
        {
            *o = h * g + b;
        }
    }
    (out, NormCache { xhat, rstd })
}

/// Returns `dx`; accumulates gain and offset gradients.
fn layer_norm_backward(
    dy: &Matrix,
    cache: &NormCache,
    gain: &Matrix,
    dgain: &mut Matrix,
    dbias: &mut Matrix,
) -> Matrix {
    let (n, d) = dy.shape();
    let mut dx = Matrix::zeros(n, d);
    let mut dxhat = vec![0.0; d];
    for r in 0..n {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        for j in 0..d {
            dxhat[j] = dyr[j] * gain.as_slice()[j];
        }
        for (dg, (g, h)) in dgain.as_mut_slice().iter_mut().zip(dyr.iter().zip(xh)) {
            *dg += g * h;
        }
        for (db, g) in dbias.as_mut_slice().iter_mut().zip(dyr) {
            *db += g;
        }
        let mean_d = dxhat.iter().sum::<f64>() / d as f64;
        let mean_dx = dxhat.iter().zip(xh).map(|(a, b)| a * b).sum::<f64>() / d as f64;
        let rs = cache.rstd[r];
        for (o, (dh, h)) in dx.row_mut(r).iter_mut().zip(dxhat.iter().zip(xh)) {
            *o = rs * (dh - mean_d - h * mean_dx);
        }
    }
    dx
}

/// `x * w + b`.
fn linear(x: &Matrix, w: &Matrix, b: &Matrix) -> Matrix {
    let mut out = Matrix::zeros(x.rows(), w.cols());
    out.add_row_vector(b.as_slice());
    gemm(1.0, x, false, w, false, 1.0, &mut out);
    out
}

/// Accumulates `dW += x^T dy`, `db += colsum(dy)`; returns `dy W^T`.
fn linear_backward(
    x: &Matrix,
    w: &Matrix,
    dy: &Matrix,
    dw: &mut Matrix,
    db: &mut Matrix,
) -> Matrix {
    gemm(1.0, x, true, dy, false, 1.0, dw);
    dy.add_column_sums_into(db.as_mut_slice());
    let mut dx = Matrix::zeros(x.rows(), x.cols());
    gemm(1.0, dy, false, w, true, 0.0, &mut dx);
    dx
}

fn gelu(u: f64) -> f64 {
    0.5 * u * (1.0 + (GELU_C * (u + GELU_A * u * u * u)).tanh())
}

fn gelu_grad(u: f64) -> f64 {
    let t = (GELU_C * (u + GELU_A * u * u * u)).tanh();
    0.5 * (1.0 + t) + 0.5 * u * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * u * u)
}

fn dropout_mask<R: Rng + ?Sized>(rows: usize, cols: usize, p: f64, rng: &mut R) -> Matrix {
    let keep = 1.0 / (1.0 - p);
    Matrix::from_fn(
        rows,
        cols,
        |_, _| if rng.random::<f64>() < p { 0.0 } else { keep },
    )
}

fn hadamard(a: &Matrix, b: &Matrix) -> Matrix {
    Matrix::from_vec(
        a.rows(),
        a.cols(),
        a.as_slice()
            .iter()
            .zip(b.as_slice())
            .map(|(x, y)| x * y)
            .collect(),
    )
}

fn softmax_in_place(row: &mut [f64], valid: usize) {
    let max = row[..valid]
        .iter()
        .cloned()
        .fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in &mut row[..valid] {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in &mut row[..valid] {
        *v /= sum;
    }
    // masked PAD keys
    row[valid..].fill(0.0);
}

/// Runs the encoder on one framed sequence. Dropout is drawn from `rng`
/// only when `train_mode` is set. Every `H^(k)` in the trace covers all
/// positions.
pub fn forward<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ModelConfig,
    tokens: &TokenSequence,
    train_mode: bool,
    rng: &mut R,
) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
    config.validate()?;
    run(params, config, tokens, train_mode, rng, false)
}

/// Evaluation-mode logits.
///
/// The last layer only runs the CLS query, since no other row of its
/// output reaches the classifier; the logits equal those of [`forward`].
pub fn predict_logits(
    params: &ModelParams,
    config: &ModelConfig,
    tokens: &TokenSequence,
) -> Result<Vec<f64>, ModelError> {
    config.validate()?;
    // never drawn from in evaluation mode
    let mut no_rng = ChaCha8Rng::seed_from_u64(0);
    Ok(run(params, config, tokens, false, &mut no_rng, true)?.0)
}

fn run<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ModelConfig,
    tokens: &TokenSequence,
    train_mode: bool,
    rng: &mut R,
    cls_only_last: bool,
) -> Result<(Vec<f64>, ForwardTrace), ModelError> {
    check_input(config, tokens)?;
    let n = tokens.ids.len();
    let d = config.d_model;
    let heads = config.num_heads;
    let hd = config.head_dim();
    let valid = tokens.valid_len;
    let p_drop = if train_mode { config.dropout } else { 0.0 };
    let scale = 1.0 / (hd as f64).sqrt();

    let mut x = Matrix::zeros(n, d);
    for (r, &id) in tokens.ids.iter().enumerate() {
        x.row_mut(r)
            .copy_from_slice(params.embedding.row(id as usize));
    }
    let rope = match &config.scheme {
        PositionalScheme::Sinusoidal => {
            x.add_assign(&sinusoid_table(n, d)?);
            None
        }
        PositionalScheme::Rotary { base } => Some(RopeTable::new(n, hd, *base)),
        PositionalScheme::Alibi { .. } => None,
    };

    let mut hidden = Vec::with_capacity(config.num_layers + 1);
    let mut layer_traces = Vec::with_capacity(config.num_layers);
    hidden.push(x.clone());

    for (l, layer) in params.layers.iter().enumerate() {
        let rows = if cls_only_last && l + 1 == config.num_layers {
            1
        } else {
            n
        };
        let (a, ln1) = layer_norm(&x, &layer.ln1_gain, &layer.ln1_bias);
        let q_all = if rows == n {
            linear(&a, &layer.wq, &layer.bq)
        } else {
            linear(&a.top_rows(rows), &layer.wq, &layer.bq)
        };
        let k_all = linear(&a, &layer.wk, &layer.bk);
        let v_all = linear(&a, &layer.wv, &layer.bv);

        let mut queries = Vec::with_capacity(heads);
        let mut keys = Vec::with_capacity(heads);
        let mut values = Vec::with_capacity(heads);
        let mut attention = Vec::with_capacity(heads);
        let mut keeps = Vec::new();
        let mut context = Matrix::zeros(rows, d);
        for h in 0..heads {
            let mut qh = q_all.column_block(h * hd, hd);
            let mut kh = k_all.column_block(h * hd, hd);
            let vh = v_all.column_block(h * hd, hd);
            if let Some(table) = &rope {
                table.apply(&mut qh, false);
                table.apply(&mut kh, false);
            }
            let mut s = Matrix::zeros(rows, n);
            gemm(scale, &qh, false, &kh, true, 0.0, &mut s);
            if let PositionalScheme::Alibi { slopes } = &config.scheme {
                let m = slopes[h];
                for i in 0..rows {
                    for (j, v) in s.row_mut(i).iter_mut().enumerate() {
                        *v += m * i.abs_diff(j) as f64;
                    }
                }
            }
            for i in 0..rows {
                softmax_in_place(s.row_mut(i), valid);
            }
            let mut ctx_h = Matrix::zeros(rows, hd);
            if p_drop > 0.0 {
                let keep = dropout_mask(rows, n, p_drop, rng);
                gemm(
                    1.0,
                    &hadamard(&s, &keep),
                    false,
                    &vh,
                    false,
                    0.0,
                    &mut ctx_h,
                );
                keeps.push(keep);
            } else {
                gemm(1.0, &s, false, &vh, false, 0.0, &mut ctx_h);
            }
            context.set_column_block(h * hd, &ctx_h);
            queries.push(qh);
            keys.push(kh);
            values.push(vh);
            attention.push(s);
        }
        let mut x1 = linear(&context, &layer.wo, &layer.bo);
        if rows == n {
            x1.add_assign(&x);
        } else {
            x1.add_assign(&x.top_rows(rows));
        }

        let (b, ln2) = layer_norm(&x1, &layer.ln2_gain, &layer.ln2_bias);
        let pre = linear(&b, &layer.w1, &layer.b1);
        let post = Matrix::from_vec(
            rows,
            config.d_ff,
            pre.as_slice().iter().map(|&u| gelu(u)).collect(),
        );
        let mut f = linear(&post, &layer.w2, &layer.b2);
        let ffn_keep = if p_drop > 0.0 {
            let keep = dropout_mask(rows, d, p_drop, rng);
            f = hadamard(&f, &keep);
            Some(keep)
        } else {
            None
        };
        f.add_assign(&x1);
        x = f;
        hidden.push(x.clone());
        layer_traces.push(LayerTrace {
            query_rows: rows,
            ln1,
            attn_input: a,
            queries,
            keys,
            values,
            attention,
            attn_keep: (p_drop > 0.0).then_some(keeps),
            context,
            ln2,
            ffn_input: b,
            pre_gelu: pre,
            post_gelu: post,
            ffn_keep,
        });
    }

    // only the CLS row reaches the classifier
    let cls = Matrix::from_vec(1, d, x.row(0).to_vec());
    let (z, fcache) = layer_norm(&cls, &params.final_gain, &params.final_bias);
    let logits = linear(&z, &params.classifier, &params.classifier_bias)
        .as_slice()
        .to_vec();
    let trace = ForwardTrace {
        ids: tokens.ids.clone(),
        valid_len: valid,
        hidden,
        layers: layer_traces,
        final_xhat: fcache.xhat.as_slice().to_vec(),
        final_rstd: fcache.rstd[0],
        pooled: z.as_slice().to_vec(),
        logits: logits.clone(),
    };
    Ok((logits, trace))
}

/// Accumulates into `grads` the gradient of a loss whose derivative with
/// respect to the logits is `dlogits`.
fn backward(
    params: &ModelParams,
    config: &ModelConfig,
    trace: &ForwardTrace,
    dlogits: &[f64],
    grads: &mut ModelParams,
) {
    let n = trace.seq_len();
    let d = config.d_model;
    let heads = config.num_heads;
    let hd = config.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let rope = match &config.scheme {
        PositionalScheme::Rotary { base } => Some(RopeTable::new(n, hd, *base)),
        _ => None,
    };

    let dl = Matrix::from_vec(1, dlogits.len(), dlogits.to_vec());
    let z = Matrix::from_vec(1, d, trace.pooled.clone());
    let dz = linear_backward(
        &z,
        &params.classifier,
        &dl,
        &mut grads.classifier,
        &mut grads.classifier_bias,
    );
    let fcache = NormCache {
        xhat: Matrix::from_vec(1, d, trace.final_xhat.clone()),
        rstd: vec![trace.final_rstd],
    };
    let dcls = layer_norm_backward(
        &dz,
        &fcache,
        &params.final_gain,
        &mut grads.final_gain,
        &mut grads.final_bias,
    );
    let mut dx = Matrix::zeros(trace.hidden[config.num_layers].rows(), d);
    dx.row_mut(0).copy_from_slice(dcls.row(0));

    for (l, layer) in params.layers.iter().enumerate().rev() {
        let t = &trace.layers[l];
        let g = &mut grads.layers[l];

        // feed-forward block; dx is the gradient at the layer output
        let mut df = dx.clone();
        if let Some(keep) = &t.ffn_keep {
            df = hadamard(&df, keep);
        }
        let mut dpost = linear_backward(&t.post_gelu, &layer.w2, &df, &mut g.w2, &mut g.b2);
        for (v, &u) in dpost.as_mut_slice().iter_mut().zip(t.pre_gelu.as_slice()) {
            *v *= gelu_grad(u);
        }
        let db = linear_backward(&t.ffn_input, &layer.w1, &dpost, &mut g.w1, &mut g.b1);
        let dx1_norm = layer_norm_backward(
            &db,
            &t.ln2,
            &layer.ln2_gain,
            &mut g.ln2_gain,
            &mut g.ln2_bias,
        );
        dx.add_assign(&dx1_norm);

        // attention block; dx is now the gradient at the residual x1
        let dctx = linear_backward(&t.context, &layer.wo, &dx, &mut g.wo, &mut g.bo);
        let rows = t.query_rows;
        let mut dq_all = Matrix::zeros(rows, d);
        let mut dk_all = Matrix::zeros(n, d);
        let mut dv_all = Matrix::zeros(n, d);
        for h in 0..heads {
            let dctx_h = dctx.column_block(h * hd, hd);
            let p = &t.attention[h];
            let keep = t.attn_keep.as_ref().map(|k| &k[h]);
            let pd = keep.map(|k| hadamard(p, k));
            let p_used = pd.as_ref().unwrap_or(p);

            let mut dvh = Matrix::zeros(n, hd);
            gemm(1.0, p_used, true, &dctx_h, false, 0.0, &mut dvh);
            let mut dp = Matrix::zeros(rows, n);
            gemm(1.0, &dctx_h, false, &t.values[h], true, 0.0, &mut dp);
            if let Some(k) = keep {
                dp = hadamard(&dp, k);
            }
            // softmax backward, row by row
            let mut ds = dp;
            for i in 0..rows {
                let pr = p.row(i);
                let dr = ds.row_mut(i);
                let dot: f64 = dr.iter().zip(pr).map(|(a, b)| a * b).sum();
                for (v, pv) in dr.iter_mut().zip(pr) {
                    *v = pv * (*v - dot);
                }
            }
            let mut dqh = Matrix::zeros(rows, hd);
            gemm(scale, &ds, false, &t.keys[h], false, 0.0, &mut dqh);
            let mut dkh = Matrix::zeros(n, hd);
            gemm(scale, &ds, true, &t.queries[h], false, 0.0, &mut dkh);
            if let Some(table) = &rope {
                table.apply(&mut dqh, true);
                table.apply(&mut dkh, true);
            }
            dq_all.set_column_block(h * hd, &dqh);
            dk_all.set_column_block(h * hd, &dkh);
            dv_all.set_column_block(h * hd, &dvh);
        }
        let mut da = linear_backward(&t.attn_input, &layer.wk, &dk_all, &mut g.wk, &mut g.bk);
        da.add_assign(&linear_backward(
            &t.attn_input,
            &layer.wv,
            &dv_all,
            &mut g.wv,
            &mut g.bv,
        ));
        let da_q = if rows == n {
            linear_backward(&t.attn_input, &layer.wq, &dq_all, &mut g.wq, &mut g.bq)
        } else {
            linear_backward(
                &t.attn_input.top_rows(rows),
                &layer.wq,
                &dq_all,
                &mut g.wq,
                &mut g.bq,
            )
        };
        da.add_assign_rows(&da_q);
        let mut dx_in = layer_norm_backward(
            &da,
            &t.ln1,
            &layer.ln1_gain,
            &mut g.ln1_gain,
            &mut g.ln1_bias,
        );
        dx_in.add_assign_rows(&dx);
        dx = dx_in;
    }

    for (r, &id) in trace.ids.iter().enumerate() {
        for (e, v) in grads
            .embedding
            .row_mut(id as usize)
            .iter_mut()
            .zip(dx.row(r))
        {
            *e += v;
        }
    }
}

fn log_softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    logits.iter().map(|v| v - lse).collect()
}

fn check_label(config: &ModelConfig, label: usize) -> Result<(), ModelError> {
    if label >= config.num_classes {
        return Err(ModelError::LabelOutOfRange {
            label,
            num_classes: config.num_classes,
        });
    }
    Ok(())
}

/// Mean softmax cross-entropy over `batch` (training mode, dropout from
/// `rng`) and its exact gradient.
///
/// Each example gets its own dropout stream seeded from `rng` in batch
/// order, so the result does not depend on how chunks are scheduled.
pub fn loss_and_gradients<R: Rng + ?Sized>(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[Example],
    rng: &mut R,
) -> Result<(f64, ModelParams), ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    config.validate()?;
    for ex in batch {
        check_label(config, ex.label)?;
        check_input(config, &ex.tokens)?;
    }
    let seeds: Vec<u64> = batch.iter().map(|_| rng.random()).collect();
    let inv = 1.0 / batch.len() as f64;

    let partials: Vec<Result<(f64, ModelParams), ModelError>> = batch
        .par_chunks(GRAD_CHUNK)
        .zip(seeds.par_chunks(GRAD_CHUNK))
        .map(|(examples, seeds)| {
            let mut grads = params.zeros_like();
            let mut loss = 0.0;
            for (ex, &seed) in examples.iter().zip(seeds) {
                let mut ex_rng = ChaCha8Rng::seed_from_u64(seed);
                let (logits, trace) = run(params, config, &ex.tokens, true, &mut ex_rng, true)?;
                let logp = log_softmax(&logits);
                loss -= logp[ex.label];
                let dlogits: Vec<f64> = logp
                    .iter()
                    .enumerate()
                    .map(|(c, lp)| (lp.exp() - if c == ex.label { 1.0 } else { 0.0 }) * inv)
                    .collect();
                backward(params, config, &trace, &dlogits, &mut grads);
            }
            Ok((loss, grads))
        })
        .collect();

    let mut total_loss = 0.0;
    let mut total = params.zeros_like();
    for part in partials {
        let (loss, grads) = part?;
        total_loss += loss;
        total.add_assign(&grads);
    }
    Ok((total_loss * inv, total))
}

/// Mean cross-entropy in evaluation mode (no dropout).
pub fn batch_loss(
    params: &ModelParams,
    config: &ModelConfig,
    batch: &[Example],
) -> Result<f64, ModelError> {
    if batch.is_empty() {
        return Err(ModelError::EmptyBatch);
    }
    let mut total = 0.0;
    for ex in batch {
        check_label(config, ex.label)?;
        let logits = predict_logits(params, config, &ex.tokens)?;
        total -= log_softmax(&logits)[ex.label];
    }
    Ok(total / batch.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::position::SchemeKind;
    use crate::tensor::matmul;
    use crate::tokenize::frame_ids;

    fn tiny(kind: SchemeKind, dropout: f64) -> ModelConfig {
        ModelConfig {
            vocab_size: 12,
            d_model: 16,
            num_layers: 2,
            num_heads: 2,
            d_ff: 32,
            max_len: 10,
            num_classes: 3,
            dropout,
            scheme: PositionalScheme::with_defaults(kind, 2),
        }
    }

    fn setup(kind: SchemeKind, dropout: f64, seed: u64) -> (ModelConfig, ModelParams) {
        let cfg = tiny(kind, dropout);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut p = ModelParams::init(&cfg, &mut rng).unwrap();
        // larger weights than the 0.02 init so every path carries signal
        for t in p.tensors_mut() {
            for v in t.as_mut_slice() {
                *v += rng.random_range(-0.3..0.3);
            }
        }
        (cfg, p)
    }

    fn seq(body: &[u32], max_len: usize) -> TokenSequence {
        frame_ids(body, max_len).unwrap()
    }

    fn eval(p: &ModelParams, c: &ModelConfig, t: &TokenSequence) -> (Vec<f64>, ForwardTrace) {
        forward(p, c, t, false, &mut ChaCha8Rng::seed_from_u64(0)).unwrap()
    }

    #[test]
    fn attention_rows_are_distributions_and_pad_is_ignored() {
        for kind in SchemeKind::ALL {
            let (cfg, p) = setup(kind, 0.0, 1);
            let t = seq(&[4, 5, 6, 7], 10);
            let (_, trace) = eval(&p, &cfg, &t);
            assert_eq!(trace.hidden.len(), 3);
            for h in &trace.hidden {
                assert_eq!(h.shape(), (10, 16));
            }
            for layer in &trace.layers {
                for a in &layer.attention {
                    for i in 0..10 {
                        let row = a.row(i);
                        assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-9);
                        assert!(row[t.valid_len..].iter().all(|&w| w == 0.0));
                    }
                }
            }
        }
    }

    #[test]
    fn padding_does_not_change_logits() {
        for kind in SchemeKind::ALL {
            let (cfg, p) = setup(kind, 0.0, 2);
            let (a, _) = eval(&p, &cfg, &seq(&[4, 5, 6], 5));
            let (b, _) = eval(&p, &cfg, &seq(&[4, 5, 6], 10));
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn eval_mode_is_deterministic() {
        let (cfg, p) = setup(SchemeKind::Rope, 0.1, 3);
        let t = seq(&[4, 9, 1, 11], 10);
        let a = forward(&p, &cfg, &t, false, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .0;
        let b = forward(&p, &cfg, &t, false, &mut ChaCha8Rng::seed_from_u64(2))
            .unwrap()
            .0;
        assert_eq!(a, b);
        let c = forward(&p, &cfg, &t, true, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap()
            .0;
        assert_ne!(a, c);
    }

    #[test]
    fn zero_classifier_gives_uniform_logits_and_ln_c_loss() {
        let (cfg, mut p) = setup(SchemeKind::Alibi, 0.0, 4);
        p.classifier.fill(0.0);
        p.classifier_bias.fill(0.0);
        let batch = vec![
            Example {
                tokens: seq(&[4, 5], 10),
                label: 0,
            },
            Example {
                tokens: seq(&[7, 8, 9], 10),
                label: 2,
            },
        ];
        for ex in &batch {
            let (l, _) = eval(&p, &cfg, &ex.tokens);
            assert!(l.iter().all(|&v| v == l[0]));
        }
        let loss = batch_loss(&p, &cfg, &batch).unwrap();
        assert!((loss - 3f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn interior_order_matters() {
        for kind in SchemeKind::ALL {
            let (cfg, p) = setup(kind, 0.0, 5);
            let (a, _) = eval(&p, &cfg, &seq(&[4, 5, 6, 7], 10));
            let (b, _) = eval(&p, &cfg, &seq(&[4, 6, 5, 7], 10));
            let diff: f64 = a.iter().zip(&b).map(|(x, y)| (x - y).abs()).sum();
            assert!(diff > 1e-6, "{kind}: {diff}");
        }
    }

    #[test]
    fn rotated_heads_keep_their_norms() {
        let (cfg, p) = setup(SchemeKind::Rope, 0.0, 6);
        let (_, trace) = eval(&p, &cfg, &seq(&[4, 5, 6, 7, 8, 9, 10, 11], 10));
        let hd = cfg.head_dim();
        for (l, layer) in trace.layers.iter().enumerate() {
            let mut q = matmul(&layer.attn_input, &p.layers[l].wq);
            q.add_row_vector(p.layers[l].bq.as_slice());
            for h in 0..cfg.num_heads {
                let plain = q.column_block(h * hd, hd);
                for r in 0..plain.rows() {
                    let n0: f64 = plain.row(r).iter().map(|v| v * v).sum::<f64>().sqrt();
                    let n1: f64 = layer.queries[h]
                        .row(r)
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt();
                    assert!((n0 - n1).abs() <= 1e-9 * n0.max(1e-300));
                }
            }
        }
    }

    #[test]
    fn duplicate_example_matches_single() {
        let (cfg, p) = setup(SchemeKind::Sape, 0.0, 7);
        let ex = Example {
            tokens: seq(&[4, 5, 10], 10),
            label: 1,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let (l1, g1) = loss_and_gradients(&p, &cfg, std::slice::from_ref(&ex), &mut rng).unwrap();
        let (l2, g2) = loss_and_gradients(&p, &cfg, &[ex.clone(), ex], &mut rng).unwrap();
        assert!((l1 - l2).abs() < 1e-12);
        for ((_, _, a), (_, _, b)) in g1.named_tensors().iter().zip(g2.named_tensors()) {
            for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
                assert!((x - y).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn gradient_is_independent_of_thread_count() {
        let (cfg, p) = setup(SchemeKind::Rope, 0.1, 8);
        let batch: Vec<Example> = (0..11)
            .map(|i| Example {
                tokens: seq(&[4 + (i % 8) as u32, 5, 6 + (i % 3) as u32], 10),
                label: i % 3,
            })
            .collect();
        let run = |threads: usize| {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap();
            pool.install(|| {
                loss_and_gradients(&p, &cfg, &batch, &mut ChaCha8Rng::seed_from_u64(5)).unwrap()
            })
        };
        let (la, ga) = run(1);
        let (lb, gb) = run(4);
        assert_eq!(la.to_bits(), lb.to_bits());
        assert_eq!(ga, gb);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for kind in SchemeKind::ALL {
            // dropout masks are fixed by the seed, so they take part in the check
            let (cfg, p) = setup(kind, 0.1, 9);
            let batch = vec![
                Example {
                    tokens: seq(&[4, 5, 6, 1, 7], 10),
                    label: 2,
                },
                Example {
                    tokens: seq(&[11, 10, 9], 10),
                    label: 0,
                },
            ];
            let loss_at = |q: &ModelParams| {
                loss_and_gradients(q, &cfg, &batch, &mut ChaCha8Rng::seed_from_u64(3)).unwrap()
            };
            let (_, grads) = loss_at(&p);
            let named = grads.named_tensors();
            let eps = 1e-5;
            let mut pick = ChaCha8Rng::seed_from_u64(10);
            for _ in 0..40 {
                let ti = pick.random_range(0..named.len());
                let idx = pick.random_range(0..named[ti].2.len());
                let analytic = named[ti].2.as_slice()[idx];
                let mut plus = p.clone();
                plus.tensors_mut()[ti].as_mut_slice()[idx] += eps;
                let mut minus = p.clone();
                minus.tensors_mut()[ti].as_mut_slice()[idx] -= eps;
                let numeric = (loss_at(&plus).0 - loss_at(&minus).0) / (2.0 * eps);
                let err = (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    err < 1e-4,
                    "{kind} {}[{idx}]: {analytic} vs {numeric}",
                    named[ti].0
                );
            }
        }
    }

    #[test]
    fn cls_fast_path_matches_full_pass() {
        for kind in SchemeKind::ALL {
            // mask draws differ in count between the paths, so no dropout here
            let (cfg, p) = setup(kind, 0.0, 11);
            let t = seq(&[4, 5, 6, 7, 8], 10);
            let full = eval(&p, &cfg, &t).0;
            let fast = predict_logits(&p, &cfg, &t).unwrap();
            for (a, b) in full.iter().zip(&fast) {
                assert!((a - b).abs() < 1e-12);
            }
            let grads = |cls_only: bool| {
                let mut rng = ChaCha8Rng::seed_from_u64(4);
                let (logits, trace) = run(&p, &cfg, &t, true, &mut rng, cls_only).unwrap();
                let logp = log_softmax(&logits);
                let dl: Vec<f64> = logp
                    .iter()
                    .enumerate()
                    .map(|(c, v)| v.exp() - (c == 1) as u8 as f64)
                    .collect();
                let mut g = p.zeros_like();
                backward(&p, &cfg, &trace, &dl, &mut g);
                g
            };
            let (a, b) = (grads(false), grads(true));
            for ((_, _, x), (_, _, y)) in a.named_tensors().iter().zip(b.named_tensors()) {
                for (u, v) in x.as_slice().iter().zip(y.as_slice()) {
                    assert!((u - v).abs() < 1e-12);
                }
            }
        }
    }
}
