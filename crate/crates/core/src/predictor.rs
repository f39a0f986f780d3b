//! Commitment predictor: a small Pre-LN transformer encoder over the
//! hourly (load, solar, wind) sequence with a per-hour classifier head that
//! emits one logit per unit. Gradients are written out by hand.
//!
//! Shapes: the input is `T x F`, hidden states `T x d_model`, logits are
//! produced as `T x N` and handed out transposed as `N x T`.

use std::f64::consts::PI;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::datagen::Dataset;
use crate::instance::Profiles;
use crate::schedule::Schedule;

/// Number of input features per hour.
pub const FEATURES: usize = 3;
const LN_EPS: f64 = 1e-5;
const NORM_EPS: f64 = 1e-6;
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub horizon: usize,
    pub n_gen: usize,
    pub d_model: usize,
    pub layers: usize,
    pub heads: usize,
    pub ffn_dim: usize,
    /// Hidden width of the classifier head.
    pub hidden: usize,
    pub dropout: f64,
    /// Weight of the positive class in the loss.
    pub pos_weight: f64,
    pub weight_decay: f64,
    /// Global gradient-norm clip.
    pub grad_clip: f64,
    /// Peak learning rate of the one-cycle schedule.
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub threshold: f64,
    pub seed: u64,
}

impl PredictorConfig {
    /// Desk-scale model: d_model 32, two layers, four heads.
    pub fn toy(n_gen: usize, horizon: usize) -> Self {
        PredictorConfig {
            horizon,
            n_gen,
            d_model: 32,
            layers: 2,
            heads: 4,
            ffn_dim: 64,
            hidden: 64,
            dropout: 0.05,
            pos_weight: 1.5,
            weight_decay: 1e-4,
            grad_clip: 1.0,
            lr: 3e-3,
            epochs: 60,
            batch_size: 32,
            threshold: 0.5,
            seed: 0,
        }
    }

    /// The full-size reference settings (8 layers, 64 heads, hidden 1024,
    /// batch 1024). Recorded for completeness; far too large to train
    /// here. The model width is not published; 1024 is an assumption.
    pub fn reference(n_gen: usize, horizon: usize) -> Self {
        PredictorConfig {
            d_model: 1024,
            layers: 8,
            heads: 64,
            ffn_dim: 4096,
            hidden: 1024,
            batch_size: 1024,
            ..Self::toy(n_gen, horizon)
        }
    }

    pub fn d_k(&self) -> usize {
        self.d_model / self.heads
    }

    pub fn validate(&self) -> Result<(), PredictorError> {
        let bad = |m: &str| Err(PredictorError::Config(m.into()));
        if self.heads == 0 || self.d_model % self.heads != 0 {
            return bad("d_model must be divisible by heads");
        }
        if self.horizon == 0 || self.n_gen == 0 || self.d_model == 0 || self.ffn_dim == 0 || self.hidden == 0 {
            return bad("dimensions must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return bad("dropout must be in [0, 1)");
        }
        if self.batch_size == 0 {
            return bad("batch size must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PredictorError {
    #[error("invalid predictor configuration: {0}")]
    Config(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("loss became non-finite at step {step}")]
    NonFiniteLoss { step: usize },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Per-feature normalization statistics from the training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; FEATURES],
    pub sd: [f64; FEATURES],
}

fn features(p: &Profiles, t: usize) -> [f64; FEATURES] {
    [p.load[t], p.solar[t], p.wind[t]]
}

impl NormStats {
    /// Population mean and standard deviation over every hour of every
    /// profile.
    pub fn fit<'a>(profiles: impl IntoIterator<Item = &'a Profiles>) -> Self {
        let mut n = 0.0;
        let mut sum = [0.0; FEATURES];
        let mut sq = [0.0; FEATURES];
        for p in profiles {
            for t in 0..p.horizon() {
                let f = features(p, t);
                for k in 0..FEATURES {
                    sum[k] += f[k];
                    sq[k] += f[k] * f[k];
                }
                n += 1.0;
            }
        }
        let n = f64::max(n, 1.0);
        let mean = sum.map(|s| s / n);
        let mut sd = [0.0; FEATURES];
        for k in 0..FEATURES {
            sd[k] = (sq[k] / n - mean[k] * mean[k]).max(0.0).sqrt();
        }
        NormStats { mean, sd }
    }
}

/// `(x - mean) / (sd + 1e-6)` per feature; row-major `T x F`.
pub fn normalize_profiles(profiles: &Profiles, stats: &NormStats) -> Vec<f64> {
    let mut out = Vec::with_capacity(profiles.horizon() * FEATURES);
    for t in 0..profiles.horizon() {
        let f = features(profiles, t);
        for k in 0..FEATURES {
            out.push((f[k] - stats.mean[k]) / (stats.sd[k] + NORM_EPS));
        }
    }
    out
}

/// A named dense matrix (vectors are `1 x n`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tensor {
    pub name: String,
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    fn zeros(name: String, rows: usize, cols: usize) -> Self {
        Tensor {
            name,
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }
}

/// All trainable tensors in a fixed order (see the index constants).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Params {
    pub tensors: Vec<Tensor>,
}

const EMB_W: usize = 0;
const EMB_B: usize = 1;
const PHI: usize = 2;
const LAYER0: usize = 3;
const PER_LAYER: usize = 13;
const LN1_G: usize = 0;
const LN1_B: usize = 1;
const WQ: usize = 2;
const WK: usize = 3;
const WV: usize = 4;
const WO: usize = 5;
const BO: usize = 6;
const LN2_G: usize = 7;
const LN2_B: usize = 8;
const W1: usize = 9;
const B1: usize = 10;
const W2: usize = 11;
const B2: usize = 12;
const LNF_G: usize = 0;
const LNF_B: usize = 1;
const WC1: usize = 2;
const BC1: usize = 3;
const WC2: usize = 4;
const BC2: usize = 5;

fn layer_idx(l: usize, k: usize) -> usize {
    LAYER0 + l * PER_LAYER + k
}

fn head_idx(c: &PredictorConfig, k: usize) -> usize {
    LAYER0 + c.layers * PER_LAYER + k
}

impl Params {
    /// Every tensor zero, with the layout of `config`.
    pub fn zeros(c: &PredictorConfig) -> Self {
        let d = c.d_model;
        let mut t = vec![
            Tensor::zeros("embed.w".into(), FEATURES, d),
            Tensor::zeros("embed.b".into(), 1, d),
            Tensor::zeros("pos".into(), c.horizon, d),
        ];
        for l in 0..c.layers {
            let n = |s: &str| format!("layer{l}.{s}");
            t.extend([
                Tensor::zeros(n("ln1.g"), 1, d),
                Tensor::zeros(n("ln1.b"), 1, d),
                Tensor::zeros(n("attn.wq"), d, d),
                Tensor::zeros(n("attn.wk"), d, d),
                Tensor::zeros(n("attn.wv"), d, d),
                Tensor::zeros(n("attn.wo"), d, d),
                Tensor::zeros(n("attn.bo"), 1, d),
                Tensor::zeros(n("ln2.g"), 1, d),
                Tensor::zeros(n("ln2.b"), 1, d),
                Tensor::zeros(n("ffn.w1"), d, c.ffn_dim),
                Tensor::zeros(n("ffn.b1"), 1, c.ffn_dim),
                Tensor::zeros(n("ffn.w2"), c.ffn_dim, d),
                Tensor::zeros(n("ffn.b2"), 1, d),
            ]);
        }
        t.extend([
            Tensor::zeros("head.ln.g".into(), 1, d),
            Tensor::zeros("head.ln.b".into(), 1, d),
            Tensor::zeros("head.w1".into(), d, c.hidden),
            Tensor::zeros("head.b1".into(), 1, c.hidden),
            Tensor::zeros("head.w2".into(), c.hidden, c.n_gen),
            Tensor::zeros("head.b2".into(), 1, c.n_gen),
        ]);
        Params { tensors: t }
    }

    /// Fresh parameters: weights drawn `N(0, 1/fan_in)`, layer-norm gains
    /// one, biases and the positional table exactly zero.
    pub fn init(c: &PredictorConfig) -> Self {
        let mut p = Params::zeros(c);
        let mut rng = ChaCha8Rng::seed_from_u64(c.seed);
        for t in &mut p.tensors {
            let name = t.name.as_str();
            if name.ends_with(".g") {
                t.data.fill(1.0);
            } else if t.rows > 1 && name != "pos" {
                let normal = Normal::new(0.0, 1.0 / (t.rows as f64).sqrt()).expect("positive sd");
                for v in &mut t.data {
                    *v = normal.sample(&mut rng);
                }
            }
        }
        p
    }

    pub fn num_params(&self) -> usize {
        self.tensors.iter().map(|t| t.data.len()).sum()
    }

    fn zeros_like(&self) -> Self {
        Params {
            tensors: self
                .tensors
                .iter()
                .map(|t| Tensor::zeros(t.name.clone(), t.rows, t.cols))
                .collect(),
        }
    }

    fn w(&self, k: usize) -> &[f64] {
        &self.tensors[k].data
    }

    fn norm_sq(&self) -> f64 {
        self.tensors.iter().flat_map(|t| &t.data).map(|v| v * v).sum()
    }

    fn all_finite(&self) -> bool {
        self.tensors.iter().flat_map(|t| &t.data).all(|v| v.is_finite())
    }
}

// ---------------------------------------------------------------------------
// Dense kernels on row-major slices.

/// `a (m x k) * b (k x n)`.
fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        let row = &mut out[i * n..(i + 1) * n];
        for p in 0..k {
            let av = a[i * k + p];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in row.iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
    out
}

/// `acc += a^T (k x m)^T * b (k x n)`, i.e. `a` is `k x m`.
fn add_at_b(acc: &mut [f64], a: &[f64], b: &[f64], k: usize, m: usize, n: usize) {
    for p in 0..k {
        for i in 0..m {
            let av = a[p * m + i];
            if av == 0.0 {
                continue;
            }
            for (o, bv) in acc[i * n..(i + 1) * n].iter_mut().zip(&b[p * n..(p + 1) * n]) {
                *o += av * bv;
            }
        }
    }
}

/// `a (m x k) * b^T` where `b` is `n x k`.
fn matmul_bt(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = a[i * k..(i + 1) * k].iter().zip(&b[j * k..(j + 1) * k]).map(|(x, y)| x * y).sum();
        }
    }
    out
}

fn add_bias(x: &mut [f64], b: &[f64]) {
    for row in x.chunks_mut(b.len()) {
        for (v, bv) in row.iter_mut().zip(b) {
            *v += bv;
        }
    }
}

fn add_col_sums(acc: &mut [f64], x: &[f64]) {
    for row in x.chunks(acc.len()) {
        for (a, v) in acc.iter_mut().zip(row) {
            *a += v;
        }
    }
}

struct LnCache {
    xhat: Vec<f64>,
    rstd: Vec<f64>,
}

/// Row-wise layer normalization with gain and offset.
fn layer_norm(x: &[f64], g: &[f64], b: &[f64]) -> (Vec<f64>, LnCache) {
    let d = g.len();
    let rows = x.len() / d;
    let mut y = vec![0.0; x.len()];
    let mut xhat = vec![0.0; x.len()];
    let mut rstd = vec![0.0; rows];
    for r in 0..rows {
        let row = &x[r * d..(r + 1) * d];
        let mean = row.iter().sum::<f64>() / d as f64;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d as f64;
        let s = 1.0 / (var + LN_EPS).sqrt();
        rstd[r] = s;
        for j in 0..d {
            let h = (row[j] - mean) * s;
            xhat[r * d + j] = h;
            y[r * d + j] = g[j] * h + b[j];
        }
    }
    (y, LnCache { xhat, rstd })
}

/// Returns `dx`; accumulates `dg`, `db`.
fn layer_norm_back(dy: &[f64], cache: &LnCache, g: &[f64], dg: &mut [f64], db: &mut [f64]) -> Vec<f64> {
    let d = g.len();
    let mut dx = vec![0.0; dy.len()];
    for r in 0..cache.rstd.len() {
        let xh = &cache.xhat[r * d..(r + 1) * d];
        let dyr = &dy[r * d..(r + 1) * d];
        let mut sum = 0.0;
        let mut dot = 0.0;
        for j in 0..d {
            dg[j] += dyr[j] * xh[j];
            db[j] += dyr[j];
            let dh = dyr[j] * g[j];
            sum += dh;
            dot += dh * xh[j];
        }
        let s = cache.rstd[r] / d as f64;
        for j in 0..d {
            let dh = dyr[j] * g[j];
            dx[r * d + j] = s * (d as f64 * dh - sum - xh[j] * dot);
        }
    }
    dx
}

fn relu(x: &mut [f64]) {
    for v in x {
        *v = v.max(0.0);
    }
}

fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

// ---------------------------------------------------------------------------
// Forward and backward passes.

/// Inverted-dropout mask (`None` when inactive).
fn dropout_mask(rng: Option<&mut ChaCha8Rng>, p: f64, len: usize) -> Option<Vec<f64>> {
    let rng = rng?;
    if p <= 0.0 {
        return None;
    }
    let keep = 1.0 / (1.0 - p);
    Some((0..len).map(|_| if rng.random::<f64>() < p { 0.0 } else { keep }).collect())
}

fn apply_mask(x: &mut [f64], mask: &Option<Vec<f64>>) {
    if let Some(m) = mask {
        for (v, k) in x.iter_mut().zip(m) {
            *v *= k;
        }
    }
}

struct LayerCache {
    ln1: LnCache,
    a: Vec<f64>,
    q: Vec<f64>,
    k: Vec<f64>,
    v: Vec<f64>,
    /// Attention probabilities per head, `T x T` each.
    probs: Vec<Vec<f64>>,
    o: Vec<f64>,
    mask1: Option<Vec<f64>>,
    ln2: LnCache,
    b: Vec<f64>,
    f1: Vec<f64>,
    mask2: Option<Vec<f64>>,
}

struct Cache {
    layers: Vec<LayerCache>,
    lnf: LnCache,
    hf: Vec<f64>,
    c1: Vec<f64>,
}

/// Optional masks used to construct null gradient paths in tests.
#[derive(Default)]
struct Masks<'a> {
    /// Keys that no query may attend to.
    keys: Option<&'a [bool]>,
}

/// Logits `T x N` plus the cache needed by [`backward`].
fn forward_cached(
    params: &Params,
    input: &[f64],
    c: &PredictorConfig,
    mut rng: Option<&mut ChaCha8Rng>,
    masks: &Masks<'_>,
) -> (Vec<f64>, Cache) {
    let (t_len, d, dk) = (c.horizon, c.d_model, c.d_k());
    let scale = 1.0 / (dk as f64).sqrt();
    let mut h = matmul(input, params.w(EMB_W), t_len, FEATURES, d);
    add_bias(&mut h, params.w(EMB_B));
    for (v, p) in h.iter_mut().zip(params.w(PHI)) {
        *v += p;
    }
    let mut layers = Vec::with_capacity(c.layers);
    for l in 0..c.layers {
        let w = |k| params.w(layer_idx(l, k));
        let (a, ln1) = layer_norm(&h, w(LN1_G), w(LN1_B));
        let q = matmul(&a, w(WQ), t_len, d, d);
        let k = matmul(&a, w(WK), t_len, d, d);
        let v = matmul(&a, w(WV), t_len, d, d);
        let mut o = vec![0.0; t_len * d];
        let mut probs = Vec::with_capacity(c.heads);
        for hd in 0..c.heads {
            let cols = hd * dk..(hd + 1) * dk;
            let mut p = vec![0.0; t_len * t_len];
            for i in 0..t_len {
                let qi = &q[i * d..(i + 1) * d][cols.clone()];
                let mut max = f64::NEG_INFINITY;
                for j in 0..t_len {
                    let s = if masks.keys.is_some_and(|m| m[j]) {
                        f64::NEG_INFINITY
                    } else {
                        scale * qi.iter().zip(&k[j * d..(j + 1) * d][cols.clone()]).map(|(x, y)| x * y).sum::<f64>()
                    };
                    p[i * t_len + j] = s;
                    max = max.max(s);
                }
                let mut z = 0.0;
                for j in 0..t_len {
                    let e = (p[i * t_len + j] - max).exp();
                    p[i * t_len + j] = e;
                    z += e;
                }
                for j in 0..t_len {
                    p[i * t_len + j] /= z;
                }
                for j in 0..t_len {
                    let pij = p[i * t_len + j];
                    if pij == 0.0 {
                        continue;
                    }
                    for cidx in cols.clone() {
                        o[i * d + cidx] += pij * v[j * d + cidx];
                    }
                }
            }
            probs.push(p);
        }
        let mut attn = matmul(&o, w(WO), t_len, d, d);
        add_bias(&mut attn, w(BO));
        let mask1 = dropout_mask(rng.as_deref_mut(), c.dropout, attn.len());
        apply_mask(&mut attn, &mask1);
        for (x, y) in h.iter_mut().zip(&attn) {
            *x += y;
        }
        let (b, ln2) = layer_norm(&h, w(LN2_G), w(LN2_B));
        let mut f1 = matmul(&b, w(W1), t_len, d, c.ffn_dim);
        add_bias(&mut f1, w(B1));
        relu(&mut f1);
        let mut f2 = matmul(&f1, w(W2), t_len, c.ffn_dim, d);
        add_bias(&mut f2, w(B2));
        let mask2 = dropout_mask(rng.as_deref_mut(), c.dropout, f2.len());
        apply_mask(&mut f2, &mask2);
        for (x, y) in h.iter_mut().zip(&f2) {
            *x += y;
        }
        layers.push(LayerCache {
            ln1,
            a,
            q,
            k,
            v,
            probs,
            o,
            mask1,
            ln2,
            b,
            f1,
            mask2,
        });
    }
    let hw = |k| params.w(head_idx(c, k));
    let (hf, lnf) = layer_norm(&h, hw(LNF_G), hw(LNF_B));
    let mut c1 = matmul(&hf, hw(WC1), t_len, d, c.hidden);
    add_bias(&mut c1, hw(BC1));
    relu(&mut c1);
    let mut z = matmul(&c1, hw(WC2), t_len, c.hidden, c.n_gen);
    add_bias(&mut z, hw(BC2));
    (z, Cache { layers, lnf, hf, c1 })
}

/// Accumulates the gradient for `dz` (`T x N`) into `grad`.
fn backward(params: &Params, input: &[f64], c: &PredictorConfig, cache: &Cache, dz: &[f64], grad: &mut Params) {
    let (t_len, d, dk) = (c.horizon, c.d_model, c.d_k());
    let scale = 1.0 / (dk as f64).sqrt();
    let hi = |k| head_idx(c, k);
    add_at_b(&mut grad.tensors[hi(WC2)].data, &cache.c1, dz, t_len, c.hidden, c.n_gen);
    add_col_sums(&mut grad.tensors[hi(BC2)].data, dz);
    let mut dc1 = matmul_bt(dz, params.w(hi(WC2)), t_len, c.n_gen, c.hidden);
    for (g, a) in dc1.iter_mut().zip(&cache.c1) {
        if *a <= 0.0 {
            *g = 0.0;
        }
    }
    add_at_b(&mut grad.tensors[hi(WC1)].data, &cache.hf, &dc1, t_len, d, c.hidden);
    add_col_sums(&mut grad.tensors[hi(BC1)].data, &dc1);
    let dhf = matmul_bt(&dc1, params.w(hi(WC1)), t_len, c.hidden, d);
    let mut dh = {
        let (g, rest) = grad.tensors[hi(LNF_G)..].split_first_mut().expect("head tensors");
        layer_norm_back(&dhf, &cache.lnf, params.w(hi(LNF_G)), &mut g.data, &mut rest[0].data)
    };

    for l in (0..c.layers).rev() {
        let lc = &cache.layers[l];
        let li = |k| layer_idx(l, k);
        let w = |k| params.w(li(k));

        // Feed-forward sublayer.
        let mut df2 = dh.clone();
        apply_mask(&mut df2, &lc.mask2);
        add_at_b(&mut grad.tensors[li(W2)].data, &lc.f1, &df2, t_len, c.ffn_dim, d);
        add_col_sums(&mut grad.tensors[li(B2)].data, &df2);
        let mut df1 = matmul_bt(&df2, w(W2), t_len, d, c.ffn_dim);
        for (g, a) in df1.iter_mut().zip(&lc.f1) {
            if *a <= 0.0 {
                *g = 0.0;
            }
        }
        add_at_b(&mut grad.tensors[li(W1)].data, &lc.b, &df1, t_len, d, c.ffn_dim);
        add_col_sums(&mut grad.tensors[li(B1)].data, &df1);
        let db = matmul_bt(&df1, w(W1), t_len, c.ffn_dim, d);
        let dx = {
            let (g, rest) = grad.tensors[li(LN2_G)..].split_first_mut().expect("layer tensors");
            layer_norm_back(&db, &lc.ln2, w(LN2_G), &mut g.data, &mut rest[0].data)
        };
        for (a, b) in dh.iter_mut().zip(&dx) {
            *a += b;
        }

        // Attention sublayer.
        let mut dattn = dh.clone();
        apply_mask(&mut dattn, &lc.mask1);
        add_at_b(&mut grad.tensors[li(WO)].data, &lc.o, &dattn, t_len, d, d);
        add_col_sums(&mut grad.tensors[li(BO)].data, &dattn);
        let dout = matmul_bt(&dattn, w(WO), t_len, d, d);
        let mut dq = vec![0.0; t_len * d];
        let mut dkm = vec![0.0; t_len * d];
        let mut dv = vec![0.0; t_len * d];
        for hd in 0..c.heads {
            let c0 = hd * dk;
            let p = &lc.probs[hd];
            for i in 0..t_len {
                // dP_ij = dO_i . V_j ; dS = P (dP - sum_j P dP).
                let doi = &dout[i * d + c0..i * d + c0 + dk];
                let mut dp = vec![0.0; t_len];
                let mut inner = 0.0;
                for j in 0..t_len {
                    let pij = p[i * t_len + j];
                    dp[j] = doi.iter().zip(&lc.v[j * d + c0..j * d + c0 + dk]).map(|(x, y)| x * y).sum();
                    inner += pij * dp[j];
                    if pij != 0.0 {
                        for (g, o) in dv[j * d + c0..j * d + c0 + dk].iter_mut().zip(doi) {
                            *g += pij * o;
                        }
                    }
                }
                for j in 0..t_len {
                    let ds = p[i * t_len + j] * (dp[j] - inner) * scale;
                    if ds == 0.0 {
                        continue;
                    }
                    for x in 0..dk {
                        dq[i * d + c0 + x] += ds * lc.k[j * d + c0 + x];
                        dkm[j * d + c0 + x] += ds * lc.q[i * d + c0 + x];
                    }
                }
            }
        }
        add_at_b(&mut grad.tensors[li(WQ)].data, &lc.a, &dq, t_len, d, d);
        add_at_b(&mut grad.tensors[li(WK)].data, &lc.a, &dkm, t_len, d, d);
        add_at_b(&mut grad.tensors[li(WV)].data, &lc.a, &dv, t_len, d, d);
        let mut da = matmul_bt(&dq, w(WQ), t_len, d, d);
        for (x, y) in da.iter_mut().zip(matmul_bt(&dkm, w(WK), t_len, d, d)) {
            *x += y;
        }
        for (x, y) in da.iter_mut().zip(matmul_bt(&dv, w(WV), t_len, d, d)) {
            *x += y;
        }
        let dx = {
            let (g, rest) = grad.tensors[li(LN1_G)..].split_first_mut().expect("layer tensors");
            layer_norm_back(&da, &lc.ln1, w(LN1_G), &mut g.data, &mut rest[0].data)
        };
        for (a, b) in dh.iter_mut().zip(&dx) {
            *a += b;
        }
    }

    add_at_b(&mut grad.tensors[EMB_W].data, input, &dh, t_len, FEATURES, d);
    add_col_sums(&mut grad.tensors[EMB_B].data, &dh);
    for (g, v) in grad.tensors[PHI].data.iter_mut().zip(&dh) {
        *g += v;
    }
}

fn transpose(x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; x.len()];
    for r in 0..rows {
        for c in 0..cols {
            out[c * rows + r] = x[r * cols + c];
        }
    }
    out
}

fn check_input(input: &[f64], c: &PredictorConfig) -> Result<(), PredictorError> {
    if input.len() != c.horizon * FEATURES {
        return Err(PredictorError::Shape(format!(
            "input has {} values, expected {} x {FEATURES}",
            input.len(),
            c.horizon
        )));
    }
    Ok(())
}

/// Logits as an `N x T` row-major matrix (evaluation mode, no dropout).
pub fn forward(params: &Params, input: &[f64], config: &PredictorConfig) -> Result<Vec<f64>, PredictorError> {
    check_input(input, config)?;
    let (z, _) = forward_cached(params, input, config, None, &Masks::default());
    Ok(transpose(&z, config.horizon, config.n_gen))
}

/// Training-mode forward pass: dropout active, driven by `rng`.
pub fn forward_train(
    params: &Params,
    input: &[f64],
    config: &PredictorConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>, PredictorError> {
    check_input(input, config)?;
    let (z, _) = forward_cached(params, input, config, Some(rng), &Masks::default());
    Ok(transpose(&z, config.horizon, config.n_gen))
}

/// Attention probabilities `[layer][head]` as `T x T` row-major matrices.
pub fn attention_maps(params: &Params, input: &[f64], config: &PredictorConfig) -> Vec<Vec<Vec<f64>>> {
    let (_, cache) = forward_cached(params, input, config, None, &Masks::default());
    cache.layers.into_iter().map(|l| l.probs).collect()
}

/// Class-weighted binary cross-entropy averaged over all elements, in
/// the overflow-free softplus form.
pub fn bce_loss(logits: &[f64], targets: &[f64], pos_weight: f64) -> f64 {
    assert_eq!(logits.len(), targets.len());
    if logits.is_empty() {
        return 0.0;
    }
    let sum: f64 = logits
        .iter()
        .zip(targets)
        .map(|(&z, &y)| pos_weight * y * softplus(-z) + (1.0 - y) * softplus(z))
        .sum();
    sum / logits.len() as f64
}

/// `d loss / d z` for one element, before averaging.
fn bce_grad(z: f64, y: f64, pos_weight: f64) -> f64 {
    let s = sigmoid(z);
    pos_weight * y * (s - 1.0) + (1.0 - y) * s
}

/// One training sample: normalized input `T x F` and targets `N x T`.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub input: Vec<f64>,
    pub target: Vec<f64>,
}

impl Sample {
    pub fn new(profiles: &Profiles, stats: &NormStats, schedule: &Schedule) -> Self {
        let target = (0..schedule.num_generators())
            .flat_map(|i| schedule.row(i).iter().map(|&on| if on { 1.0 } else { 0.0 }))
            .collect();
        Sample {
            input: normalize_profiles(profiles, stats),
            target,
        }
    }
}

fn batch_gradients(
    params: &Params,
    batch: &[&Sample],
    c: &PredictorConfig,
    mut rng: Option<&mut ChaCha8Rng>,
    masks: &Masks<'_>,
    loss_weight: Option<&[f64]>,
) -> (f64, Params) {
    let mut grad = params.zeros_like();
    let per = (c.horizon * c.n_gen) as f64;
    let count = per * batch.len() as f64;
    let mut loss = 0.0;
    for s in batch {
        let (z, cache) = forward_cached(params, &s.input, c, rng.as_deref_mut(), masks);
        // z is T x N; targets are N x T.
        let mut dz = vec![0.0; z.len()];
        for t in 0..c.horizon {
            for i in 0..c.n_gen {
                let w = loss_weight.map_or(1.0, |m| m[t]);
                let (zz, y) = (z[t * c.n_gen + i], s.target[i * c.horizon + t]);
                loss += w * (c.pos_weight * y * softplus(-zz) + (1.0 - y) * softplus(zz));
                dz[t * c.n_gen + i] = w * bce_grad(zz, y, c.pos_weight) / count;
            }
        }
        backward(params, &s.input, c, &cache, &dz, &mut grad);
    }
    (loss / count, grad)
}

/// Mean loss over `batch` and its exact gradient (dropout off).
pub fn loss_and_gradients(params: &Params, batch: &[&Sample], config: &PredictorConfig) -> (f64, Params) {
    batch_gradients(params, batch, config, None, &Masks::default(), None)
}

/// One-cycle learning rate: linear warm-up from `lr/25` over the first
/// 30% of steps, then cosine decay to `lr/1e4`.
pub fn one_cycle_lr(step: usize, total: usize, lr: f64) -> f64 {
    let start = lr / 25.0;
    let end = lr / 1e4;
    let warm = ((total as f64) * 0.3).max(1.0);
    let s = step as f64;
    if s < warm {
        start + (lr - start) * s / warm
    } else {
        let rest = (total as f64 - warm).max(1.0);
        let p = ((s - warm) / rest).min(1.0);
        end + (lr - end) * 0.5 * (1.0 + (PI * p).cos())
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl AdamW {
    pub fn new(params: &Params, weight_decay: f64) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect();
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// `theta <- theta (1 - lr lambda)`, then the Adam moment step.
    pub fn step(&mut self, params: &mut Params, grad: &Params, lr: f64) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for (k, (p, g)) in params.tensors.iter_mut().zip(&grad.tensors).enumerate() {
            for (j, (w, &gv)) in p.data.iter_mut().zip(&g.data).enumerate() {
                *w *= 1.0 - lr * self.weight_decay;
                let m = &mut self.m[k][j];
                let v = &mut self.v[k][j];
                *m = self.beta1 * *m + (1.0 - self.beta1) * gv;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gv * gv;
                *w -= lr * (*m / bc1) / ((*v / bc2).sqrt() + self.eps);
            }
        }
    }
}

/// Scales `grad` so its global norm is at most `max_norm`; returns the
/// norm before clipping.
pub fn clip_grad_norm(grad: &mut Params, max_norm: f64) -> f64 {
    let norm = grad.norm_sq().sqrt();
    if norm > max_norm && norm > 0.0 {
        let k = max_norm / norm;
        for t in &mut grad.tensors {
            for v in &mut t.data {
                *v *= k;
            }
        }
    }
    norm
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    /// Fraction of validation commitments predicted correctly at the
    /// configured threshold.
    pub val_accuracy: f64,
}

/// Mean loss and element accuracy of `samples` in evaluation mode.
pub fn evaluate(params: &Params, samples: &[Sample], config: &PredictorConfig) -> (f64, f64) {
    if samples.is_empty() {
        return (0.0, 0.0);
    }
    let mut loss = 0.0;
    let mut correct = 0usize;
    let mut total = 0usize;
    for s in samples {
        let z = forward(params, &s.input, config).expect("sample matches config");
        loss += bce_loss(&z, &s.target, config.pos_weight);
        for (&zz, &y) in z.iter().zip(&s.target) {
            correct += usize::from((sigmoid(zz) > config.threshold) == (y > 0.5));
            total += 1;
        }
    }
    (loss / samples.len() as f64, correct as f64 / total as f64)
}

/// Trains from [`Params::init`] with AdamW, global-norm clipping and the
/// one-cycle schedule. Sample order is reshuffled every epoch from the
/// config seed, so the log is reproducible.
pub fn train(
    train_set: &[Sample],
    validation: &[Sample],
    config: &PredictorConfig,
) -> Result<(Params, Vec<EpochLog>), PredictorError> {
    config.validate()?;
    let mut params = Params::init(config);
    if train_set.is_empty() {
        return Ok((params, Vec::new()));
    }
    let mut opt = AdamW::new(&params, config.weight_decay);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(1));
    let batches = train_set.len().div_ceil(config.batch_size);
    let total = batches * config.epochs;
    let mut order: Vec<usize> = (0..train_set.len()).collect();
    let mut log = Vec::with_capacity(config.epochs);
    let mut step = 0;
    for epoch in 0..config.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<&Sample> = chunk.iter().map(|&k| &train_set[k]).collect();
            let (loss, mut grad) = batch_gradients(&params, &batch, config, Some(&mut rng), &Masks::default(), None);
            if !loss.is_finite() {
                return Err(PredictorError::NonFiniteLoss { step });
            }
            clip_grad_norm(&mut grad, config.grad_clip);
            opt.step(&mut params, &grad, one_cycle_lr(step, total, config.lr));
            if !params.all_finite() {
                return Err(PredictorError::NonFiniteLoss { step });
            }
            epoch_loss += loss * batch.len() as f64;
            step += 1;
        }
        let (val_loss, val_accuracy) = evaluate(&params, validation, config);
        log.push(EpochLog {
            epoch,
            train_loss: epoch_loss / train_set.len() as f64,
            val_loss,
            val_accuracy,
        });
    }
    Ok((params, log))
}

/// Predictor outputs for one instance; `probs[i][t] = sigmoid(logits[i][t])`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProbabilityTensor {
    pub instance_id: String,
    pub probs: Vec<Vec<f64>>,
    #[serde(default)]
    pub logits: Vec<Vec<f64>>,
}

impl ProbabilityTensor {
    pub fn from_logits(instance_id: String, logits: Vec<Vec<f64>>) -> Self {
        let probs = logits.iter().map(|r| r.iter().map(|&z| sigmoid(z)).collect()).collect();
        ProbabilityTensor {
            instance_id,
            probs,
            logits,
        }
    }

    /// Degenerate tensor with probability one on the schedule's on hours.
    pub fn from_schedule(instance_id: String, schedule: &Schedule) -> Self {
        let probs = (0..schedule.num_generators())
            .map(|i| schedule.row(i).iter().map(|&on| if on { 1.0 } else { 0.0 }).collect())
            .collect();
        ProbabilityTensor {
            instance_id,
            probs,
            logits: Vec::new(),
        }
    }

    pub fn n_gen(&self) -> usize {
        self.probs.len()
    }

    pub fn horizon(&self) -> usize {
        self.probs.first().map_or(0, Vec::len)
    }

    /// `u = 1[p > tau]`.
    pub fn threshold(&self, tau: f64) -> Schedule {
        let rows: Vec<Vec<bool>> = self.probs.iter().map(|r| r.iter().map(|&p| p > tau).collect()).collect();
        Schedule::from_rows(&rows)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("plain data") + "\n"
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }
}

/// Trained model: configuration, weights and input statistics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub stats: NormStats,
    pub params: Params,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    version: u32,
    #[serde(flatten)]
    model: Predictor,
}

impl Predictor {
    /// Probabilities for one instance's profiles.
    pub fn probabilities(&self, instance_id: &str, profiles: &Profiles) -> Result<ProbabilityTensor, PredictorError> {
        let z = forward(&self.params, &normalize_profiles(profiles, &self.stats), &self.config)?;
        let logits = z.chunks(self.config.horizon).map(<[f64]>::to_vec).collect();
        Ok(ProbabilityTensor::from_logits(instance_id.to_string(), logits))
    }

    /// Thresholded schedule and the probabilities behind it.
    pub fn predict(
        &self,
        instance_id: &str,
        profiles: &Profiles,
        tau: f64,
    ) -> Result<(Schedule, ProbabilityTensor), PredictorError> {
        let probs = self.probabilities(instance_id, profiles)?;
        Ok((probs.threshold(tau), probs))
    }

    /// JSON checkpoint with a version tag and named, shaped tensors.
    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), PredictorError> {
        let ck = Checkpoint {
            version: CHECKPOINT_VERSION,
            model: self.clone(),
        };
        fs::write(path, serde_json::to_string(&ck)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, PredictorError> {
        let ck: Checkpoint = serde_json::from_str(&fs::read_to_string(path)?)?;
        if ck.version != CHECKPOINT_VERSION {
            return Err(PredictorError::Checkpoint(format!("unsupported version {}", ck.version)));
        }
        let m = ck.model;
        m.config.validate()?;
        let expected = Params::zeros(&m.config);
        let shapes_ok = expected.tensors.len() == m.params.tensors.len()
            && expected.tensors.iter().zip(&m.params.tensors).all(|(a, b)| {
                a.name == b.name && a.rows == b.rows && a.cols == b.cols && b.data.len() == a.data.len()
            });
        if !shapes_ok {
            return Err(PredictorError::Checkpoint("tensor manifest does not match the configuration".into()));
        }
        Ok(m)
    }
}

/// Picks the threshold from `candidates` with the best validation element
/// accuracy (ties: the earliest candidate).
pub fn tune_threshold(params: &Params, validation: &[Sample], config: &PredictorConfig, candidates: &[f64]) -> f64 {
    let mut best = (config.threshold, -1.0);
    for &tau in candidates {
        let c = PredictorConfig {
            threshold: tau,
            ..config.clone()
        };
        let (_, acc) = evaluate(params, validation, &c);
        if acc > best.1 {
            best = (tau, acc);
        }
    }
    best.0
}

/// Threshold candidates tried by [`fit_predictor`].
pub const THRESHOLD_GRID: [f64; 9] = [0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9];

/// Samples for the listed dataset entries.
pub fn dataset_samples(dataset: &Dataset, ids: &[String], stats: &NormStats) -> Vec<Sample> {
    dataset
        .indices(ids)
        .into_iter()
        .map(|k| Sample::new(&dataset.instances[k].profiles, stats, &dataset.labels[k].schedule))
        .collect()
}

/// Fits statistics on the training split, trains, and picks the decision
/// threshold on the validation split (kept at the configured value when
/// there is no validation data).
pub fn fit_predictor(dataset: &Dataset, config: &PredictorConfig) -> Result<(Predictor, Vec<EpochLog>), PredictorError> {
    let train_ix = dataset.indices(&dataset.splits.train);
    let stats = NormStats::fit(train_ix.iter().map(|&k| &dataset.instances[k].profiles));
    let train_set = dataset_samples(dataset, &dataset.splits.train, &stats);
    let validation = dataset_samples(dataset, &dataset.splits.validation, &stats);
    let (params, log) = train(&train_set, &validation, config)?;
    let mut config = config.clone();
    if !validation.is_empty() {
        config.threshold = tune_threshold(&params, &validation, &config, &THRESHOLD_GRID);
    }
    Ok((Predictor { config, stats, params }, log))
}
