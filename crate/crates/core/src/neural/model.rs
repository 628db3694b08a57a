//! Hashed-embedding encoder with one single-head self-attention layer, a
//! residual connection, mean or CLS pooling, and a dropout + affine + softmax
//! classification head. Gradients are derived by hand.

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::loss::{focal_from_logits, rdrop_from_logits, CompositeLossConfig};
use crate::corpus::{KcLabel, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::{rng, softmax, ProbabilityVector};

pub const PAD_ID: u32 = 0;
pub const CLS_ID: u32 = 1;
const FIRST_TOKEN_ID: u64 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Mean,
    ClsToken,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EncoderConfig {
    pub vocab_size: usize,
    pub embed_dim: usize,
    pub max_seq_len: usize,
    pub dropout_rate: f64,
    pub pooling: Pooling,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            vocab_size: 4096,
            embed_dim: 64,
            max_seq_len: 256,
            dropout_rate: 0.1,
            pooling: Pooling::Mean,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.vocab_size < 3 || self.embed_dim < 1 || self.max_seq_len < 1 {
            return Err(Error::validation(format!(
                "encoder needs vocab_size >= 3, embed_dim >= 1, max_seq_len >= 1: {self:?}"
            )));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::validation(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        Ok(())
    }

    pub fn n_params(&self) -> usize {
        Layout::new(self).total
    }
}

/// 64-bit FNV-1a, stable across platforms and releases.
fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= u64::from(b);
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Whitespace tokens hashed into `[2, vocab_size)`, with `CLS_ID` prepended
/// for CLS pooling, truncated and padded with `PAD_ID` to `max_seq_len`.
pub fn tokenize(text: &str, config: &EncoderConfig) -> Vec<u32> {
    let span = config.vocab_size as u64 - FIRST_TOKEN_ID;
    let mut ids = Vec::with_capacity(config.max_seq_len);
    if config.pooling == Pooling::ClsToken {
        ids.push(CLS_ID);
    }
    ids.extend(
        text.split_whitespace()
            .map(|t| (FIRST_TOKEN_ID + fnv1a(t.as_bytes()) % span) as u32),
    );
    ids.truncate(config.max_seq_len);
    ids.resize(config.max_seq_len, PAD_ID);
    ids
}

/// Offsets of each parameter block inside the flat parameter vector.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Layout {
    pub emb: usize,
    pub wq: usize,
    pub wk: usize,
    pub wv: usize,
    pub head_w: usize,
    pub head_b: usize,
    pub total: usize,
}

impl Layout {
    pub fn new(c: &EncoderConfig) -> Layout {
        let h = c.embed_dim;
        let emb = 0;
        let wq = emb + c.vocab_size * h;
        let wk = wq + h * h;
        let wv = wk + h * h;
        let head_w = wv + h * h;
        let head_b = head_w + NUM_CLASSES * h;
        Layout {
            emb,
            wq,
            wk,
            wv,
            head_w,
            head_b,
            total: head_b + NUM_CLASSES,
        }
    }

    pub fn blocks(&self) -> [(&'static str, usize, usize); 6] {
        [
            ("embedding", self.emb, self.wq),
            ("w_query", self.wq, self.wk),
            ("w_key", self.wk, self.wv),
            ("w_value", self.wv, self.head_w),
            ("head_weight", self.head_w, self.head_b),
            ("head_bias", self.head_b, self.total),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Encoder {
    pub config: EncoderConfig,
    /// Flat parameters; see [`Encoder::blocks`] for the layout.
    pub params: Vec<f64>,
}

/// Intermediate values of one deterministic encoder pass.
struct EncoderCache {
    ids: Vec<usize>,
    x: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    attn: Vec<f64>,
    pooled: Vec<f64>,
}

impl Encoder {
    /// Random initialization: embeddings ~ N(0, 0.1^2), projections
    /// ~ N(0, 1/H), head ~ N(0, 0.02^2), zero bias.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Encoder> {
        config.validate()?;
        let layout = Layout::new(&config);
        let mut params = vec![0.0; layout.total];
        let mut rng = rng::stream(seed, 20);
        let h = config.embed_dim as f64;
        let blocks = [
            (layout.emb, layout.wq, 0.1),
            (layout.wq, layout.head_w, 1.0 / h.sqrt()),
            (layout.head_w, layout.head_b, 0.02),
        ];
        for (start, end, std) in blocks {
            let dist = Normal::new(0.0, std).expect("valid std");
            for p in &mut params[start..end] {
                *p = dist.sample(&mut rng);
            }
        }
        Ok(Encoder { config, params })
    }

    pub fn zeros(config: EncoderConfig) -> Result<Encoder> {
        config.validate()?;
        Ok(Encoder {
            params: vec![0.0; config.n_params()],
            config,
        })
    }

    pub(crate) fn layout(&self) -> Layout {
        Layout::new(&self.config)
    }

    /// Named `(start, end)` ranges of the flat parameter vector.
    pub fn blocks(&self) -> Vec<(&'static str, usize, usize)> {
        self.layout().blocks().to_vec()
    }

    fn encode(&self, tokens: &[u32]) -> Result<EncoderCache> {
        let h = self.config.embed_dim;
        let lay = self.layout();
        let ids: Vec<usize> = tokens
            .iter()
            .take(self.config.max_seq_len)
            .filter(|&&t| t != PAD_ID)
            .map(|&t| t as usize)
            .collect();
        if let Some(&bad) = ids.iter().find(|&&t| t >= self.config.vocab_size) {
            return Err(Error::validation(format!(
                "token id {bad} outside vocabulary of {}",
                self.config.vocab_size
            )));
        }
        let n = ids.len();
        let p = &self.params;
        let mut x = vec![0.0; n * h];
        for (i, &id) in ids.iter().enumerate() {
            x[i * h..(i + 1) * h].copy_from_slice(&p[lay.emb + id * h..lay.emb + (id + 1) * h]);
        }
        let q = matmul(&x, &p[lay.wq..lay.wk], n, h, h);
        let k = matmul(&x, &p[lay.wk..lay.wv], n, h, h);
        let v = matmul(&x, &p[lay.wv..lay.head_w], n, h, h);
        let scale = 1.0 / (h as f64).sqrt();
        let mut attn = vec![0.0; n * n];
        for i in 0..n {
            let row = &mut attn[i * n..(i + 1) * n];
            let qi = &q[i * h..(i + 1) * h];
            for j in 0..n {
                row[j] = scale * dot(qi, &k[j * h..(j + 1) * h]);
            }
            let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let mut sum = 0.0;
            for r in row.iter_mut() {
                *r = (*r - max).exp();
                sum += *r;
            }
            for r in row.iter_mut() {
                *r /= sum;
            }
        }
        // Residual output h_i = x_i + sum_j a_ij v_j, pooled.
        let mut pooled = vec![0.0; h];
        let rows: Vec<usize> = match self.config.pooling {
            Pooling::Mean => (0..n).collect(),
            Pooling::ClsToken => (0..n.min(1)).collect(),
        };
        let w = if rows.is_empty() { 0.0 } else { 1.0 / rows.len() as f64 };
        for &i in &rows {
            for d in 0..h {
                let mut c = x[i * h + d];
                for j in 0..n {
                    c += attn[i * n + j] * v[j * h + d];
                }
                pooled[d] += w * c;
            }
        }
        if pooled.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite activation in encoder pooling layer".into()));
        }
        Ok(EncoderCache {
            ids,
            x,
            q,
            k,
            v,
            attn,
            pooled,
        })
    }

    fn head(&self, z: &[f64]) -> [f64; NUM_CLASSES] {
        let lay = self.layout();
        let h = self.config.embed_dim;
        let mut logits = [0.0; NUM_CLASSES];
        for (c, l) in logits.iter_mut().enumerate() {
            *l = self.params[lay.head_b + c] + dot(&self.params[lay.head_w + c * h..lay.head_w + (c + 1) * h], z);
        }
        logits
    }

    fn dropout_mask<R: Rng>(&self, rng: &mut R) -> Vec<f64> {
        let r = self.config.dropout_rate;
        let keep = 1.0 / (1.0 - r);
        (0..self.config.embed_dim)
            .map(|_| if rng.random::<f64>() < r { 0.0 } else { keep })
            .collect()
    }

    /// Logits and probabilities. With `dropout_on`, the dropout mask on the
    /// pooled representation is drawn from `rng`.
    pub fn forward<R: Rng>(
        &self,
        tokens: &[u32],
        dropout_on: bool,
        rng: &mut R,
    ) -> Result<([f64; NUM_CLASSES], ProbabilityVector)> {
        let cache = self.encode(tokens)?;
        let z: Vec<f64> = if dropout_on && self.config.dropout_rate > 0.0 {
            let mask = self.dropout_mask(rng);
            cache.pooled.iter().zip(&mask).map(|(a, m)| a * m).collect()
        } else {
            cache.pooled
        };
        let logits = self.head(&z);
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite activation in classification head".into()));
        }
        Ok((logits, softmax(&logits)))
    }

    /// Deterministic (dropout off) class probabilities.
    pub fn predict_proba(&self, tokens: &[u32]) -> Result<ProbabilityVector> {
        let mut rng = rng::stream(0, 0);
        Ok(self.forward(tokens, false, &mut rng)?.1)
    }

    fn backward_encoder(&self, cache: &EncoderCache, dpooled: &[f64], grad: &mut [f64]) {
        let h = self.config.embed_dim;
        let n = cache.ids.len();
        if n == 0 {
            return;
        }
        let lay = self.layout();
        let p = &self.params;
        let rows: Vec<usize> = match self.config.pooling {
            Pooling::Mean => (0..n).collect(),
            Pooling::ClsToken => vec![0],
        };
        let w = 1.0 / rows.len() as f64;
        // dH (n x h), nonzero only on pooled rows.
        let mut dh = vec![0.0; n * h];
        for &i in &rows {
            for d in 0..h {
                dh[i * h + d] = w * dpooled[d];
            }
        }
        let mut dx = dh.clone();
        let mut dv = vec![0.0; n * h];
        let mut ds = vec![0.0; n * n];
        for &i in &rows {
            let dci = &dh[i * h..(i + 1) * h];
            let arow = &cache.attn[i * n..(i + 1) * n];
            let mut da = vec![0.0; n];
            for j in 0..n {
                da[j] = dot(dci, &cache.v[j * h..(j + 1) * h]);
                for d in 0..h {
                    dv[j * h + d] += arow[j] * dci[d];
                }
            }
            let s: f64 = arow.iter().zip(&da).map(|(a, g)| a * g).sum();
            for j in 0..n {
                ds[i * n + j] = arow[j] * (da[j] - s);
            }
        }
        let scale = 1.0 / (h as f64).sqrt();
        let mut dq = vec![0.0; n * h];
        let mut dk = vec![0.0; n * h];
        for i in 0..n {
            for j in 0..n {
                let g = ds[i * n + j] * scale;
                if g == 0.0 {
                    continue;
                }
                for d in 0..h {
                    dq[i * h + d] += g * cache.k[j * h + d];
                    dk[j * h + d] += g * cache.q[i * h + d];
                }
            }
        }
        for (off, dy) in [(lay.wq, &dq), (lay.wk, &dk), (lay.wv, &dv)] {
            let wmat = &p[off..off + h * h];
            // dW += X^T dY ; dX += dY W^T
            for i in 0..n {
                let xi = &cache.x[i * h..(i + 1) * h];
                let dyi = &dy[i * h..(i + 1) * h];
                for a in 0..h {
                    let xa = xi[a];
                    let gw = &mut grad[off + a * h..off + (a + 1) * h];
                    for b in 0..h {
                        gw[b] += xa * dyi[b];
                    }
                    dx[i * h + a] += dot(&wmat[a * h..(a + 1) * h], dyi);
                }
            }
        }
        for (i, &id) in cache.ids.iter().enumerate() {
            let ge = &mut grad[lay.emb + id * h..lay.emb + (id + 1) * h];
            for d in 0..h {
                ge[d] += dx[i * h + d];
            }
        }
    }
}

/// Output of [`total_loss`].
#[derive(Debug, Clone)]
pub struct LossOutput {
    pub loss: f64,
    /// Mean focal term over both passes and the batch.
    pub focal: f64,
    /// Mean consistency term over the batch.
    pub rdrop: f64,
    /// Largest per-pass focal term in the batch.
    pub max_focal: f64,
    pub grad: Vec<f64>,
}

/// Composite objective over a batch: two dropout passes per example, focal
/// term averaged over both passes, `L = L_FL + lambda_rd * L_RD`, and its exact
/// gradient with respect to every parameter (through both passes).
pub fn total_loss<R: Rng>(
    model: &Encoder,
    batch: &[(&[u32], KcLabel)],
    cfg: &CompositeLossConfig,
    rng: &mut R,
) -> Result<LossOutput> {
    if batch.is_empty() {
        return Err(Error::validation("empty batch"));
    }
    let h = model.config.embed_dim;
    let lay = model.layout();
    let mut grad = vec![0.0; model.params.len()];
    let inv_b = 1.0 / batch.len() as f64;
    let (mut focal_sum, mut rd_sum, mut max_focal) = (0.0, 0.0, 0.0f64);
    let dropout = model.config.dropout_rate > 0.0;

    for &(tokens, label) in batch {
        let cache = model.encode(tokens)?;
        let masks: [Vec<f64>; 2] = if dropout {
            [model.dropout_mask(rng), model.dropout_mask(rng)]
        } else {
            [vec![1.0; h], vec![1.0; h]]
        };
        let z: [Vec<f64>; 2] = [0, 1].map(|s| cache.pooled.iter().zip(&masks[s]).map(|(a, m)| a * m).collect());
        let logits = [model.head(&z[0]), model.head(&z[1])];
        if logits.iter().flatten().any(|l| !l.is_finite()) {
            return Err(Error::Numeric("non-finite logits in classification head".into()));
        }
        let y = label.index();
        let (f1, g1, _) = focal_from_logits(&logits[0], y, cfg);
        let (f2, g2, _) = focal_from_logits(&logits[1], y, cfg);
        let (rd, r1, r2) = rdrop_from_logits(&logits[0], &logits[1]);
        focal_sum += 0.5 * (f1 + f2);
        rd_sum += rd;
        max_focal = max_focal.max(f1).max(f2);

        let mut dpooled = vec![0.0; h];
        for (s, (gf, gr)) in [(g1, r1), (g2, r2)].into_iter().enumerate() {
            let mut dlogit = [0.0; NUM_CLASSES];
            for c in 0..NUM_CLASSES {
                dlogit[c] = inv_b * (0.5 * gf[c] + cfg.lambda_rd * gr[c]);
            }
            for c in 0..NUM_CLASSES {
                grad[lay.head_b + c] += dlogit[c];
                let wrow = lay.head_w + c * h;
                for d in 0..h {
                    grad[wrow + d] += dlogit[c] * z[s][d];
                    dpooled[d] += dlogit[c] * model.params[wrow + d] * masks[s][d];
                }
            }
        }
        model.backward_encoder(&cache, &dpooled, &mut grad);
    }
    let focal = focal_sum * inv_b;
    let rdrop = rd_sum * inv_b;
    let loss = focal + cfg.lambda_rd * rdrop;
    if !loss.is_finite() {
        return Err(Error::Numeric(format!(
            "non-finite composite loss (focal {focal}, rdrop {rdrop})"
        )));
    }
    Ok(LossOutput {
        loss,
        focal,
        rdrop,
        max_focal,
        grad,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// `(n x m) * (m x p)`, row-major.
fn matmul(a: &[f64], b: &[f64], n: usize, m: usize, p: usize) -> Vec<f64> {
    let mut out = vec![0.0; n * p];
    for i in 0..n {
        for k in 0..m {
            let aik = a[i * m + k];
            if aik == 0.0 {
                continue;
            }
            let brow = &b[k * p..(k + 1) * p];
            let orow = &mut out[i * p..(i + 1) * p];
            for j in 0..p {
                orow[j] += aik * brow[j];
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> EncoderConfig {
        EncoderConfig {
            vocab_size: 32,
            embed_dim: 8,
            max_seq_len: 6,
            dropout_rate: 0.2,
            pooling: Pooling::Mean,
        }
    }

    #[test]
    fn tokenize_empty_and_truncation() {
        let cfg = EncoderConfig::default();
        assert_eq!(tokenize("", &cfg), vec![PAD_ID; 256]);
        let cls = EncoderConfig {
            pooling: Pooling::ClsToken,
            ..cfg
        };
        let t = tokenize("", &cls);
        assert_eq!(t[0], CLS_ID);
        assert!(t[1..].iter().all(|&x| x == PAD_ID));

        let long: String = (0..300).map(|i| format!("w{i} ")).collect();
        let ids = tokenize(&long, &cfg);
        assert_eq!(ids.len(), 256);
        assert!(ids.iter().all(|&x| x >= 2 && (x as usize) < cfg.vocab_size));
        assert_eq!(tokenize(&long, &cfg), ids);
    }

    #[test]
    fn zero_head_gives_uniform() {
        let mut m = Encoder::new(small(), 3).unwrap();
        let lay = m.layout();
        m.params[lay.head_w..].iter_mut().for_each(|p| *p = 0.0);
        let toks = tokenize("a b c", &m.config);
        let mut rng = rng::stream(1, 1);
        let (_, p) = m.forward(&toks, true, &mut rng).unwrap();
        assert_eq!(p, [0.25; 4]);
    }

    #[test]
    fn dropout_off_is_deterministic() {
        let m = Encoder::new(small(), 5).unwrap();
        let toks = tokenize("x y z w", &m.config);
        let a = m.forward(&toks, false, &mut rng::stream(1, 0)).unwrap();
        let b = m.forward(&toks, false, &mut rng::stream(2, 0)).unwrap();
        assert_eq!(a, b);
        assert!((a.1.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        let c = m.forward(&toks, true, &mut rng::stream(9, 0)).unwrap();
        let d = m.forward(&toks, true, &mut rng::stream(9, 0)).unwrap();
        assert_eq!(c, d);
    }

    #[test]
    fn out_of_vocab_token_is_rejected() {
        let m = Encoder::new(small(), 5).unwrap();
        assert!(m.predict_proba(&[40, 0, 0]).is_err());
    }

    #[test]
    fn total_loss_degenerate_weights() {
        let m = Encoder::new(small(), 7).unwrap();
        let t1 = tokenize("alpha beta", &m.config);
        let t2 = tokenize("gamma delta eps", &m.config);
        let batch = [(&t1[..], KcLabel::Share), (&t2[..], KcLabel::Negotiate)];
        let no_rd = CompositeLossConfig {
            lambda_rd: 0.0,
            ..CompositeLossConfig::default()
        };
        let out = total_loss(&m, &batch, &no_rd, &mut rng::stream(4, 4)).unwrap();
        assert_eq!(out.loss, out.focal);

        let no_drop = Encoder {
            config: EncoderConfig {
                dropout_rate: 0.0,
                ..m.config
            },
            params: m.params.clone(),
        };
        let out = total_loss(
            &no_drop,
            &batch,
            &CompositeLossConfig::default(),
            &mut rng::stream(4, 4),
        )
        .unwrap();
        assert_eq!(out.rdrop, 0.0);
        assert_eq!(out.loss, out.focal);
    }
}
