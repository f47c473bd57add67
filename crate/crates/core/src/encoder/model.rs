//! Pre-norm Transformer encoder with a linear preserve/discard head, and its
//! exact backward pass.

use thiserror::Error;

use super::config::LossVariant;
use super::loss::{self, LengthMismatch};
use super::params::{LayerParams, ModelParams};
use super::tensor::{matmul, matmul_a_bt, matmul_at_b, Matrix};
use super::vocab::{Vocab, SEP};
use crate::align::LabeledExample;
use crate::scalar::Scalar;

const LN_EPS: f64 = 1e-5;
const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_K: f64 = 0.044715;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ModelError {
    #[error("sequence of {len} tokens exceeds max_seq_len {max}")]
    SequenceTooLong { len: usize, max: usize },
    #[error("instruction of {m} words leaves no room in max_seq_len {max}")]
    InstructionTooLong { m: usize, max: usize },
    #[error("token id {id} outside vocabulary of {size}")]
    UnknownToken { id: u32, size: usize },
    #[error("empty input")]
    EmptyInput,
    #[error(transparent)]
    Length(#[from] LengthMismatch),
}

/// Model input: `[instruction, SEP, original]`, or just `original` when
/// there is no instruction.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenizedExample {
    pub token_ids: Vec<u32>,
    /// One label per original word.
    pub labels: Vec<u8>,
    /// Index of the first original word.
    pub boundary: usize,
}

impl TokenizedExample {
    pub fn n(&self) -> usize {
        self.token_ids.len() - self.boundary
    }
}

/// Number of original words that fit next to an `m`-word instruction.
pub fn window_capacity(m: usize, max_seq_len: usize) -> Result<usize, ModelError> {
    if m == 0 {
        return Ok(max_seq_len);
    }
    if m + 1 >= max_seq_len {
        return Err(ModelError::InstructionTooLong { m, max: max_seq_len });
    }
    Ok(max_seq_len - m - 1)
}

/// Splits the original into non-overlapping windows that fit `max_seq_len`,
/// prepending the instruction and separator to each.
pub fn tokenize_windows<S: AsRef<str>, W: AsRef<str>>(
    vocab: &Vocab,
    instruction_words: &[S],
    original_words: &[W],
    labels: Option<&[u8]>,
    max_seq_len: usize,
) -> Result<Vec<TokenizedExample>, ModelError> {
    let m = instruction_words.len();
    let cap = window_capacity(m, max_seq_len)?;
    let prefix: Vec<u32> = if m == 0 {
        Vec::new()
    } else {
        instruction_words
            .iter()
            .map(|w| vocab.id(w.as_ref()))
            .chain(std::iter::once(SEP))
            .collect()
    };
    let ids: Vec<u32> = original_words.iter().map(|w| vocab.id(w.as_ref())).collect();
    Ok(ids
        .chunks(cap)
        .enumerate()
        .map(|(i, window)| {
            let mut token_ids = prefix.clone();
            token_ids.extend_from_slice(window);
            let labels = match labels {
                Some(l) => l[i * cap..i * cap + window.len()].to_vec(),
                None => vec![0; window.len()],
            };
            TokenizedExample {
                token_ids,
                labels,
                boundary: prefix.len(),
            }
        })
        .collect())
}

/// Tokenizes a labeled example, dropping the instruction when
/// `with_instruction` is false.
pub fn tokenize_example(
    vocab: &Vocab,
    example: &LabeledExample,
    with_instruction: bool,
    max_seq_len: usize,
) -> Result<Vec<TokenizedExample>, ModelError> {
    let empty: [&str; 0] = [];
    if with_instruction {
        tokenize_windows(
            vocab,
            &example.instruction_words,
            &example.original_words,
            Some(&example.labels),
            max_seq_len,
        )
    } else {
        tokenize_windows(vocab, &empty, &example.original_words, Some(&example.labels), max_seq_len)
    }
}

/// Trained weights together with the vocabulary they were trained on.
#[derive(Debug, Clone, PartialEq)]
pub struct Model<T> {
    pub params: ModelParams<T>,
    pub vocab: Vocab,
}

struct NormCache<T> {
    xhat: Matrix<T>,
    rstd: Vec<T>,
}

struct LayerCache<T> {
    ln1: NormCache<T>,
    a: Matrix<T>,
    q: Matrix<T>,
    k: Matrix<T>,
    v: Matrix<T>,
    attn: Vec<Matrix<T>>,
    ctx: Matrix<T>,
    ln2: NormCache<T>,
    b: Matrix<T>,
    u: Matrix<T>,
    g: Matrix<T>,
}

/// Intermediate values kept for the backward pass.
pub struct ForwardCache<T> {
    token_ids: Vec<u32>,
    layers: Vec<LayerCache<T>>,
    final_norm: NormCache<T>,
    hidden: Matrix<T>,
    pub probs: Vec<[T; 2]>,
}

fn layer_norm<T: Scalar>(x: &Matrix<T>, gamma: &Matrix<T>, beta: &Matrix<T>) -> (Matrix<T>, NormCache<T>) {
    let d = x.cols;
    let dt = T::lit(d as f64);
    let mut xhat = Matrix::zeros(x.rows, d);
    let mut y = Matrix::zeros(x.rows, d);
    let mut rstd = Vec::with_capacity(x.rows);
    for r in 0..x.rows {
        let row = x.row(r);
        let mean = row.iter().fold(T::zero(), |s, &v| s + v) / dt;
        let var = row.iter().fold(T::zero(), |s, &v| s + (v - mean) * (v - mean)) / dt;
        let rs = T::one() / (var + T::lit(LN_EPS)).sqrt();
        rstd.push(rs);
        for c in 0..d {
            let h = (row[c] - mean) * rs;
            xhat.data[r * d + c] = h;
            y.data[r * d + c] = h * gamma.data[c] + beta.data[c];
        }
    }
    (y, NormCache { xhat, rstd })
}

/// Returns the input gradient; accumulates into `dgamma`, `dbeta`.
fn layer_norm_backward<T: Scalar>(
    dy: &Matrix<T>,
    cache: &NormCache<T>,
    gamma: &Matrix<T>,
    dgamma: &mut Matrix<T>,
    dbeta: &mut Matrix<T>,
) -> Matrix<T> {
    let d = dy.cols;
    let dt = T::lit(d as f64);
    let mut dx = Matrix::zeros(dy.rows, d);
    let mut dxhat = vec![T::zero(); d];
    for r in 0..dy.rows {
        let dyr = dy.row(r);
        let xh = cache.xhat.row(r);
        let mut mean_dxhat = T::zero();
        let mut mean_dxhat_xhat = T::zero();
        for c in 0..d {
            dgamma.data[c] += dyr[c] * xh[c];
            dbeta.data[c] += dyr[c];
            dxhat[c] = dyr[c] * gamma.data[c];
            mean_dxhat += dxhat[c];
            mean_dxhat_xhat += dxhat[c] * xh[c];
        }
        mean_dxhat /= dt;
        mean_dxhat_xhat /= dt;
        let rs = cache.rstd[r];
        for c in 0..d {
            dx.data[r * d + c] = rs * (dxhat[c] - mean_dxhat - xh[c] * mean_dxhat_xhat);
        }
    }
    dx
}

fn gelu<T: Scalar>(u: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_K);
    let half = T::lit(0.5);
    half * u * (T::one() + (c * (u + k * u * u * u)).tanh())
}

fn gelu_grad<T: Scalar>(u: T) -> T {
    let c = T::lit(GELU_C);
    let k = T::lit(GELU_K);
    let half = T::lit(0.5);
    let t = (c * (u + k * u * u * u)).tanh();
    half * (T::one() + t) + half * u * (T::one() - t * t) * c * (T::one() + T::lit(3.0) * k * u * u)
}

fn add_row_bias<T: Scalar>(m: &mut Matrix<T>, bias: &Matrix<T>) {
    for r in 0..m.rows {
        for (v, &b) in m.row_mut(r).iter_mut().zip(&bias.data) {
            *v += b;
        }
    }
}

fn softmax_rows_in_place<T: Scalar>(m: &mut Matrix<T>) {
    for r in 0..m.rows {
        let row = m.row_mut(r);
        let max = row.iter().fold(T::neg_infinity(), |a, &b| a.max(b));
        let mut sum = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            sum += *v;
        }
        for v in row.iter_mut() {
            *v /= sum;
        }
    }
}

fn head_slice<T: Scalar>(m: &Matrix<T>, h: usize, dh: usize) -> Matrix<T> {
    let mut out = Matrix::zeros(m.rows, dh);
    for r in 0..m.rows {
        out.row_mut(r).copy_from_slice(&m.row(r)[h * dh..(h + 1) * dh]);
    }
    out
}

fn add_head_slice<T: Scalar>(dst: &mut Matrix<T>, src: &Matrix<T>, h: usize, dh: usize) {
    for r in 0..dst.rows {
        for (d, &s) in dst.row_mut(r)[h * dh..(h + 1) * dh].iter_mut().zip(src.row(r)) {
            *d += s;
        }
    }
}

fn layer_forward<T: Scalar>(
    p: &LayerParams<T>,
    x: &Matrix<T>,
    num_heads: usize,
) -> (Matrix<T>, LayerCache<T>) {
    let len = x.rows;
    let d = x.cols;
    let dh = d / num_heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();

    let (a, ln1) = layer_norm(x, &p.ln1_gamma, &p.ln1_beta);
    let q = matmul(&a, &p.wq);
    let k = matmul(&a, &p.wk);
    let v = matmul(&a, &p.wv);
    let mut ctx = Matrix::zeros(len, d);
    let mut attn = Vec::with_capacity(num_heads);
    for h in 0..num_heads {
        let (qh, kh, vh) = (head_slice(&q, h, dh), head_slice(&k, h, dh), head_slice(&v, h, dh));
        let mut s = matmul_a_bt(&qh, &kh);
        s.scale(scale);
        softmax_rows_in_place(&mut s);
        add_head_slice(&mut ctx, &matmul(&s, &vh), h, dh);
        attn.push(s);
    }
    let mut x1 = matmul(&ctx, &p.wo);
    x1.add_assign(x);

    let (b, ln2) = layer_norm(&x1, &p.ln2_gamma, &p.ln2_beta);
    let mut u = matmul(&b, &p.ffn_w1);
    add_row_bias(&mut u, &p.ffn_b1);
    let g = Matrix {
        rows: u.rows,
        cols: u.cols,
        data: u.data.iter().map(|&v| gelu(v)).collect(),
    };
    let mut out = matmul(&g, &p.ffn_w2);
    add_row_bias(&mut out, &p.ffn_b2);
    out.add_assign(&x1);

    (
        out,
        LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            attn,
            ctx,
            ln2,
            b,
            u,
            g,
        },
    )
}

fn layer_backward<T: Scalar>(
    p: &LayerParams<T>,
    cache: &LayerCache<T>,
    dout: &Matrix<T>,
    grads: &mut LayerParams<T>,
    num_heads: usize,
) -> Matrix<T> {
    let d = dout.cols;
    let dh = d / num_heads;
    let scale = T::one() / T::lit(dh as f64).sqrt();

    // feed-forward branch
    grads.ffn_b2.add_assign(&dout.col_sums());
    grads.ffn_w2.add_assign(&matmul_at_b(&cache.g, dout));
    let mut du = matmul_a_bt(dout, &p.ffn_w2);
    for (v, &u) in du.data.iter_mut().zip(&cache.u.data) {
        *v *= gelu_grad(u);
    }
    grads.ffn_b1.add_assign(&du.col_sums());
    grads.ffn_w1.add_assign(&matmul_at_b(&cache.b, &du));
    let db = matmul_a_bt(&du, &p.ffn_w1);
    let mut dx1 = layer_norm_backward(&db, &cache.ln2, &p.ln2_gamma, &mut grads.ln2_gamma, &mut grads.ln2_beta);
    dx1.add_assign(dout);

    // attention branch
    grads.wo.add_assign(&matmul_at_b(&cache.ctx, &dx1));
    let dctx = matmul_a_bt(&dx1, &p.wo);
    let mut dq = Matrix::zeros(dout.rows, d);
    let mut dk = Matrix::zeros(dout.rows, d);
    let mut dv = Matrix::zeros(dout.rows, d);
    for h in 0..num_heads {
        let probs = &cache.attn[h];
        let dctx_h = head_slice(&dctx, h, dh);
        let qh = head_slice(&cache.q, h, dh);
        let kh = head_slice(&cache.k, h, dh);
        let vh = head_slice(&cache.v, h, dh);
        add_head_slice(&mut dv, &matmul_at_b(probs, &dctx_h), h, dh);
        let dp = matmul_a_bt(&dctx_h, &vh);
        let mut ds = Matrix::zeros(probs.rows, probs.cols);
        for r in 0..probs.rows {
            let pr = probs.row(r);
            let dpr = dp.row(r);
            let dot = pr.iter().zip(dpr).fold(T::zero(), |s, (&a, &b)| s + a * b);
            for c in 0..probs.cols {
                ds.data[r * probs.cols + c] = pr[c] * (dpr[c] - dot) * scale;
            }
        }
        add_head_slice(&mut dq, &matmul(&ds, &kh), h, dh);
        add_head_slice(&mut dk, &matmul_at_b(&ds, &qh), h, dh);
    }
    grads.wq.add_assign(&matmul_at_b(&cache.a, &dq));
    grads.wk.add_assign(&matmul_at_b(&cache.a, &dk));
    grads.wv.add_assign(&matmul_at_b(&cache.a, &dv));
    let mut da = matmul_a_bt(&dq, &p.wq);
    da.add_assign(&matmul_a_bt(&dk, &p.wk));
    da.add_assign(&matmul_a_bt(&dv, &p.wv));
    let mut dx = layer_norm_backward(&da, &cache.ln1, &p.ln1_gamma, &mut grads.ln1_gamma, &mut grads.ln1_beta);
    dx.add_assign(&dx1);
    dx
}

fn check_input<T: Scalar>(params: &ModelParams<T>, token_ids: &[u32]) -> Result<(), ModelError> {
    if token_ids.is_empty() {
        return Err(ModelError::EmptyInput);
    }
    if token_ids.len() > params.config.max_seq_len {
        return Err(ModelError::SequenceTooLong {
            len: token_ids.len(),
            max: params.config.max_seq_len,
        });
    }
    if let Some(&id) = token_ids.iter().find(|&&id| id as usize >= params.token_emb.rows) {
        return Err(ModelError::UnknownToken {
            id,
            size: params.token_emb.rows,
        });
    }
    Ok(())
}

fn encode_with_cache<T: Scalar>(
    params: &ModelParams<T>,
    token_ids: &[u32],
) -> Result<(Matrix<T>, Vec<LayerCache<T>>, NormCache<T>), ModelError> {
    check_input(params, token_ids)?;
    let d = params.config.embed_dim;
    let mut x = Matrix::zeros(token_ids.len(), d);
    for (t, &id) in token_ids.iter().enumerate() {
        let row = x.row_mut(t);
        for ((o, &e), &p) in row
            .iter_mut()
            .zip(params.token_emb.row(id as usize))
            .zip(params.pos_emb.row(t))
        {
            *o = e + p;
        }
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    for layer in &params.layers {
        let (next, cache) = layer_forward(layer, &x, params.config.num_heads);
        caches.push(cache);
        x = next;
    }
    let (h, final_norm) = layer_norm(&x, &params.final_gamma, &params.final_beta);
    Ok((h, caches, final_norm))
}

/// Hidden states, one `embed_dim` row per input position.
pub fn encode<T: Scalar>(params: &ModelParams<T>, token_ids: &[u32]) -> Result<Matrix<T>, ModelError> {
    encode_with_cache(params, token_ids).map(|(h, _, _)| h)
}

/// `softmax(W h_i + b)` per position, as `(preserve, discard)`.
pub fn classify<T: Scalar>(params: &ModelParams<T>, hidden: &Matrix<T>) -> Vec<[T; 2]> {
    let logits = matmul_a_bt(hidden, &params.cls_w);
    (0..logits.rows)
        .map(|r| {
            let z0 = logits.at(r, 0) + params.cls_b.data[0];
            let z1 = logits.at(r, 1) + params.cls_b.data[1];
            let m = z0.max(z1);
            let e0 = (z0 - m).exp();
            let e1 = (z1 - m).exp();
            let s = e0 + e1;
            [e0 / s, e1 / s]
        })
        .collect()
}

pub fn forward<T: Scalar>(params: &ModelParams<T>, token_ids: &[u32]) -> Result<ForwardCache<T>, ModelError> {
    let (hidden, layers, final_norm) = encode_with_cache(params, token_ids)?;
    let probs = classify(params, &hidden);
    Ok(ForwardCache {
        token_ids: token_ids.to_vec(),
        layers,
        final_norm,
        hidden,
        probs,
    })
}

/// Loss of one example under `variant`.
pub fn example_loss<T: Scalar>(
    params: &ModelParams<T>,
    example: &TokenizedExample,
    variant: LossVariant,
) -> Result<T, ModelError> {
    let cache = forward(params, &example.token_ids)?;
    Ok(loss::loss(variant, &cache.probs, &example.labels, example.boundary)?)
}

/// Accumulates the gradient of one example's loss into `grads` given the
/// per-position logit gradients. Returns nothing; `grads` must be shaped
/// like `params`.
pub fn backward_from_logits<T: Scalar>(
    params: &ModelParams<T>,
    cache: &ForwardCache<T>,
    dlogits: &[[T; 2]],
    grads: &mut ModelParams<T>,
) {
    let len = dlogits.len();
    let dl = Matrix::from_vec(len, 2, dlogits.iter().flat_map(|g| [g[0], g[1]]).collect());
    grads.cls_w.add_assign(&matmul_at_b(&dl, &cache.hidden));
    grads.cls_b.add_assign(&dl.col_sums());
    let dh = matmul(&dl, &params.cls_w);
    let mut dx = layer_norm_backward(
        &dh,
        &cache.final_norm,
        &params.final_gamma,
        &mut grads.final_gamma,
        &mut grads.final_beta,
    );
    for (i, layer) in params.layers.iter().enumerate().rev() {
        dx = layer_backward(layer, &cache.layers[i], &dx, &mut grads.layers[i], params.config.num_heads);
    }
    for (t, &id) in cache.token_ids.iter().enumerate() {
        for (g, &v) in grads.token_emb.row_mut(id as usize).iter_mut().zip(dx.row(t)) {
            *g += v;
        }
        for (g, &v) in grads.pos_emb.row_mut(t).iter_mut().zip(dx.row(t)) {
            *g += v;
        }
    }
}

/// Loss and exact gradient of one example.
pub fn backward<T: Scalar>(
    params: &ModelParams<T>,
    example: &TokenizedExample,
    variant: LossVariant,
) -> Result<(T, ModelParams<T>), ModelError> {
    let mut grads = params.zeros_like();
    let l = accumulate_gradient(params, example, variant, &mut grads)?;
    Ok((l, grads))
}

/// Adds one example's gradient into `grads`; returns its loss.
pub fn accumulate_gradient<T: Scalar>(
    params: &ModelParams<T>,
    example: &TokenizedExample,
    variant: LossVariant,
    grads: &mut ModelParams<T>,
) -> Result<T, ModelError> {
    let cache = forward(params, &example.token_ids)?;
    let l = loss::loss(variant, &cache.probs, &example.labels, example.boundary)?;
    let dlogits = loss::logit_grads(variant, &cache.probs, &example.labels, example.boundary)?;
    backward_from_logits(params, &cache, &dlogits, grads);
    Ok(l)
}

/// Preserve probability of each original word.
pub fn preserve_probs<T: Scalar>(params: &ModelParams<T>, example: &TokenizedExample) -> Result<Vec<T>, ModelError> {
    let hidden = encode(params, &example.token_ids)?;
    Ok(classify(params, &hidden)[example.boundary..]
        .iter()
        .map(|p| p[0])
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::config::ModelConfig;

    fn tiny() -> ModelParams<f64> {
        ModelParams::init(ModelConfig {
            vocab_size: 12,
            embed_dim: 8,
            num_layers: 2,
            num_heads: 2,
            ffn_dim: 16,
            max_seq_len: 16,
            seed: 11,
        })
        .unwrap()
    }

    #[test]
    fn encode_shape_and_determinism() {
        let p = tiny();
        let h = encode(&p, &[3, 4, 5, 6, 7]).unwrap();
        assert_eq!(h.shape(), (5, 8));
        assert!(h.is_finite());
        assert_eq!(h, encode(&p, &[3, 4, 5, 6, 7]).unwrap());
    }

    #[test]
    fn positions_matter() {
        let p = tiny();
        let a = encode(&p, &[3, 4, 5]).unwrap();
        let b = encode(&p, &[4, 3, 5]).unwrap();
        // same multiset, swapped order: the outputs for token 5 differ
        assert_ne!(a.row(2), b.row(2));
    }

    #[test]
    fn encode_errors() {
        let p = tiny();
        assert_eq!(
            encode(&p, &[3; 17]).unwrap_err(),
            ModelError::SequenceTooLong { len: 17, max: 16 }
        );
        assert!(matches!(encode(&p, &[99]), Err(ModelError::UnknownToken { .. })));
        assert_eq!(encode(&p, &[]).unwrap_err(), ModelError::EmptyInput);
    }

    #[test]
    fn classify_sums_to_one() {
        let p = tiny();
        let h = encode(&p, &[3, 4, 5, 6]).unwrap();
        for pr in classify(&p, &h) {
            assert!(pr[0] > 0.0 && pr[1] > 0.0);
            assert!((pr[0] + pr[1] - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn classify_analytic_cases() {
        let mut p = tiny();
        p.cls_w.fill_zero();
        let h = encode(&p, &[3, 4]).unwrap();
        for pr in classify(&p, &h) {
            assert_eq!(pr, [0.5, 0.5]);
        }
        p.cls_b.data = vec![3f64.ln(), 0.0];
        for pr in classify(&p, &h) {
            assert!((pr[0] - 0.75).abs() < 1e-12);
            assert!((pr[1] - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn windows_respect_capacity() {
        let vocab = Vocab::from_words(["a", "b", "q"]);
        let orig: Vec<String> = (0..20).map(|i| if i % 2 == 0 { "a" } else { "b" }.to_string()).collect();
        let labels: Vec<u8> = (0..20).map(|i| (i % 2) as u8).collect();
        let w = tokenize_windows(&vocab, &["q"], &orig, Some(&labels), 8).unwrap();
        assert_eq!(w.len(), 4); // capacity 6: 6+6+6+2
        assert!(w.iter().all(|t| t.token_ids.len() <= 8 && t.boundary == 2 && t.token_ids[1] == SEP));
        let flat: Vec<u8> = w.iter().flat_map(|t| t.labels.clone()).collect();
        assert_eq!(flat, labels);

        let w = tokenize_windows::<&str, _>(&vocab, &[], &orig, None, 8).unwrap();
        assert_eq!(w.iter().map(|t| t.n()).sum::<usize>(), 20);
        assert!(w.iter().all(|t| t.boundary == 0 && !t.token_ids.contains(&SEP)));

        let long: Vec<&str> = vec!["q"; 7];
        assert_eq!(
            tokenize_windows(&vocab, &long, &orig, None, 8).unwrap_err(),
            ModelError::InstructionTooLong { m: 7, max: 8 }
        );
    }

    #[test]
    fn mask_gives_no_gradient_at_instruction_logits() {
        let p = tiny();
        let ex = TokenizedExample {
            token_ids: vec![5, SEP, 3, 4, 6],
            labels: vec![1, 0, 1],
            boundary: 2,
        };
        let cache = forward(&p, &ex.token_ids).unwrap();
        let g = loss::logit_grads(LossVariant::Mask, &cache.probs, &ex.labels, ex.boundary).unwrap();
        assert_eq!(g[0], [0.0, 0.0]);
        assert_eq!(g[1], [0.0, 0.0]);
        assert!(g[2..].iter().all(|r| r[0] != 0.0));
    }
}
