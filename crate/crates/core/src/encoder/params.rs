use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::config::{ConfigError, ModelConfig};
use super::tensor::Matrix;
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<T> {
    pub ln1_gamma: Matrix<T>,
    pub ln1_beta: Matrix<T>,
    pub wq: Matrix<T>,
    pub wk: Matrix<T>,
    pub wv: Matrix<T>,
    pub wo: Matrix<T>,
    pub ln2_gamma: Matrix<T>,
    pub ln2_beta: Matrix<T>,
    pub ffn_w1: Matrix<T>,
    pub ffn_b1: Matrix<T>,
    pub ffn_w2: Matrix<T>,
    pub ffn_b2: Matrix<T>,
}

/// Encoder weights plus the `2 x d` classifier head.
///
/// Projection matrices act on row vectors (`y = x W`), so they are stored
/// `in x out`. The classifier is stored `2 x d` with row 0 scoring
/// "preserve" and row 1 "discard".
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<T> {
    pub config: ModelConfig,
    pub token_emb: Matrix<T>,
    pub pos_emb: Matrix<T>,
    pub layers: Vec<LayerParams<T>>,
    pub final_gamma: Matrix<T>,
    pub final_beta: Matrix<T>,
    pub cls_w: Matrix<T>,
    pub cls_b: Matrix<T>,
}

fn xavier(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

impl<T: Scalar> ModelParams<T> {
    /// Seeded random initialization.
    pub fn init(config: ModelConfig) -> Result<Self, ConfigError> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let d = config.embed_dim;
        let f = config.ffn_dim;
        let token_emb = Matrix::uniform(config.vocab_size, d, 0.5, &mut rng);
        let pos_emb = Matrix::uniform(config.max_seq_len, d, 0.5, &mut rng);
        let layers = (0..config.num_layers)
            .map(|_| LayerParams {
                ln1_gamma: Matrix::filled(1, d, T::one()),
                ln1_beta: Matrix::zeros(1, d),
                wq: Matrix::uniform(d, d, xavier(d, d), &mut rng),
                wk: Matrix::uniform(d, d, xavier(d, d), &mut rng),
                wv: Matrix::uniform(d, d, xavier(d, d), &mut rng),
                wo: Matrix::uniform(d, d, xavier(d, d), &mut rng),
                ln2_gamma: Matrix::filled(1, d, T::one()),
                ln2_beta: Matrix::zeros(1, d),
                ffn_w1: Matrix::uniform(d, f, xavier(d, f), &mut rng),
                ffn_b1: Matrix::zeros(1, f),
                ffn_w2: Matrix::uniform(f, d, xavier(f, d), &mut rng),
                ffn_b2: Matrix::zeros(1, d),
            })
            .collect();
        Ok(Self {
            token_emb,
            pos_emb,
            layers,
            final_gamma: Matrix::filled(1, d, T::one()),
            final_beta: Matrix::zeros(1, d),
            cls_w: Matrix::uniform(2, d, xavier(d, 2), &mut rng),
            cls_b: Matrix::zeros(1, 2),
            config,
        })
    }

    /// Same shapes, all zeros. Used for gradients and optimizer moments.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        z.visit_mut(|_, m| m.fill_zero());
        z
    }

    /// Tensors in the fixed serialization order:
    /// token_emb, pos_emb, then per layer ln1 (gamma, beta), wq, wk, wv, wo,
    /// ln2 (gamma, beta), ffn_w1, ffn_b1, ffn_w2, ffn_b2, then final norm
    /// (gamma, beta), cls_w, cls_b.
    pub fn tensors(&self) -> Vec<(String, &Matrix<T>)> {
        let mut out = vec![
            ("token_emb".to_string(), &self.token_emb),
            ("pos_emb".to_string(), &self.pos_emb),
        ];
        for (i, l) in self.layers.iter().enumerate() {
            for (name, m) in [
                ("ln1_gamma", &l.ln1_gamma),
                ("ln1_beta", &l.ln1_beta),
                ("wq", &l.wq),
                ("wk", &l.wk),
                ("wv", &l.wv),
                ("wo", &l.wo),
                ("ln2_gamma", &l.ln2_gamma),
                ("ln2_beta", &l.ln2_beta),
                ("ffn_w1", &l.ffn_w1),
                ("ffn_b1", &l.ffn_b1),
                ("ffn_w2", &l.ffn_w2),
                ("ffn_b2", &l.ffn_b2),
            ] {
                out.push((format!("layer{i}.{name}"), m));
            }
        }
        out.push(("final_gamma".into(), &self.final_gamma));
        out.push(("final_beta".into(), &self.final_beta));
        out.push(("cls_w".into(), &self.cls_w));
        out.push(("cls_b".into(), &self.cls_b));
        out
    }

    /// Mutable visit in the same order as [`ModelParams::tensors`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(usize, &mut Matrix<T>)) {
        let mut i = 0;
        let mut call = |m: &mut Matrix<T>| {
            f(i, m);
            i += 1;
        };
        call(&mut self.token_emb);
        call(&mut self.pos_emb);
        for l in &mut self.layers {
            for m in [
                &mut l.ln1_gamma,
                &mut l.ln1_beta,
                &mut l.wq,
                &mut l.wk,
                &mut l.wv,
                &mut l.wo,
                &mut l.ln2_gamma,
                &mut l.ln2_beta,
                &mut l.ffn_w1,
                &mut l.ffn_b1,
                &mut l.ffn_w2,
                &mut l.ffn_b2,
            ] {
                call(m);
            }
        }
        call(&mut self.final_gamma);
        call(&mut self.final_beta);
        call(&mut self.cls_w);
        call(&mut self.cls_b);
    }

    /// Expected `(rows, cols)` of every tensor for this config.
    pub fn shapes(config: &ModelConfig) -> Vec<(usize, usize)> {
        let d = config.embed_dim;
        let f = config.ffn_dim;
        let mut s = vec![(config.vocab_size, d), (config.max_seq_len, d)];
        for _ in 0..config.num_layers {
            s.extend([
                (1, d),
                (1, d),
                (d, d),
                (d, d),
                (d, d),
                (d, d),
                (1, d),
                (1, d),
                (d, f),
                (1, f),
                (f, d),
                (1, d),
            ]);
        }
        s.extend([(1, d), (1, d), (2, d), (1, 2)]);
        s
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, m)| m.is_finite())
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        let a = self.tensors();
        let b = other.tensors();
        a.len() == b.len() && a.iter().zip(&b).all(|((_, x), (_, y))| x.shape() == y.shape())
    }

    /// Element type conversion, e.g. to run an f64 gradient check on f32 weights.
    pub fn cast<U: Scalar>(&self) -> ModelParams<U> {
        let conv = |m: &Matrix<T>| Matrix {
            rows: m.rows,
            cols: m.cols,
            data: m.data.iter().map(|v| U::from_f64_lossy(v.as_f64())).collect(),
        };
        ModelParams {
            config: self.config.clone(),
            token_emb: conv(&self.token_emb),
            pos_emb: conv(&self.pos_emb),
            layers: self
                .layers
                .iter()
                .map(|l| LayerParams {
                    ln1_gamma: conv(&l.ln1_gamma),
                    ln1_beta: conv(&l.ln1_beta),
                    wq: conv(&l.wq),
                    wk: conv(&l.wk),
                    wv: conv(&l.wv),
                    wo: conv(&l.wo),
                    ln2_gamma: conv(&l.ln2_gamma),
                    ln2_beta: conv(&l.ln2_beta),
                    ffn_w1: conv(&l.ffn_w1),
                    ffn_b1: conv(&l.ffn_b1),
                    ffn_w2: conv(&l.ffn_w2),
                    ffn_b2: conv(&l.ffn_b2),
                })
                .collect(),
            final_gamma: conv(&self.final_gamma),
            final_beta: conv(&self.final_beta),
            cls_w: conv(&self.cls_w),
            cls_b: conv(&self.cls_b),
        }
    }
}
