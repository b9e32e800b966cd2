//! The trainable toy transformer: embeddings, multi-head self-attention
//! blocks with post-layer-norm residuals, and a per-position classification
//! head. Forward and backward passes are written out by hand; gradients are
//! exact and checked against finite differences in the tests.

use std::collections::HashMap;

use rand::Rng;

use super::{canon_f32, Encoder, EncoderConfig, ModelError, RepSequence};
use crate::math::{softmax_in_place, Mat};

const LN_EPS: f64 = 1e-5;

/// Ordered, named parameter arrays. Iteration order is the registration
/// order, which keeps optimizer updates and checkpoints deterministic.
#[derive(Debug, Clone)]
pub struct ParamSet {
    names: Vec<String>,
    map: HashMap<String, Mat>,
}

impl ParamSet {
    pub fn new() -> Self {
        ParamSet {
            names: Vec::new(),
            map: HashMap::new(),
        }
    }

    pub fn insert(&mut self, name: impl Into<String>, mat: Mat) {
        let name = name.into();
        assert!(
            self.map.insert(name.clone(), mat).is_none(),
            "duplicate parameter {name}"
        );
        self.names.push(name);
    }

    pub fn get(&self, name: &str) -> &Mat {
        &self.map[name]
    }

    pub fn get_mut(&mut self, name: &str) -> &mut Mat {
        self.map.get_mut(name).expect("unknown parameter")
    }

    pub fn try_get(&self, name: &str) -> Option<&Mat> {
        self.map.get(name)
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Mat)> {
        self.names.iter().map(|n| (n.as_str(), &self.map[n]))
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    /// Same names and shapes, all zeros.
    pub fn zeros_like(&self) -> ParamSet {
        let mut out = ParamSet::new();
        for (name, mat) in self.iter() {
            out.insert(name, Mat::zeros(mat.rows(), mat.cols()));
        }
        out
    }

    pub fn sq_sum(&self) -> f64 {
        self.iter().map(|(_, m)| m.sq_sum()).sum()
    }

    pub fn scale_all(&mut self, s: f64) {
        for name in &self.names {
            self.map.get_mut(name).unwrap().scale(s);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.iter().all(|(_, m)| m.is_finite())
    }

    /// Exact bit-for-bit equality of every array.
    pub fn bitwise_eq(&self, other: &ParamSet) -> bool {
        if self.names != other.names {
            return false;
        }
        self.iter().all(|(name, mat)| {
            let theirs = &other.map[name];
            mat.rows() == theirs.rows()
                && mat.cols() == theirs.cols()
                && mat
                    .data()
                    .iter()
                    .zip(theirs.data())
                    .all(|(a, b)| a.to_bits() == b.to_bits())
        })
    }
}

impl Default for ParamSet {
    fn default() -> Self {
        Self::new()
    }
}

fn ffn_dim(hidden: usize) -> usize {
    4 * hidden
}

/// GELU (tanh approximation) and its derivative; smooth everywhere, which
/// keeps finite-difference gradient checks clean.
fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    const A: f64 = 0.044715;
    0.5 * x * (1.0 + (C * (x + A * x * x * x)).tanh())
}

fn gelu_prime(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4;
    const A: f64 = 0.044715;
    let u = C * (x + A * x * x * x);
    let t = u.tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * C * (1.0 + 3.0 * A * x * x)
}

struct LayerTrace {
    input: Mat,
    q: Mat,
    k: Mat,
    v: Mat,
    /// Per-head attention probabilities, each `T x T`.
    probs: Vec<Mat>,
    /// Concatenated head outputs before the output projection.
    attn_concat: Mat,
    r1: Mat,
    ln1_out: Mat,
    ffn_pre: Mat,
    ffn_act: Mat,
    r2: Mat,
    ln2_out: Mat,
}

/// Cached activations from one forward pass, consumed by [`TransformerEncoder::backward`].
pub struct ForwardTrace {
    ids: Vec<usize>,
    x0: Mat,
    layers: Vec<LayerTrace>,
}

impl ForwardTrace {
    /// Final hidden states (the encoder output).
    pub fn output(&self) -> &Mat {
        self.layers.last().map(|l| &l.ln2_out).unwrap_or(&self.x0)
    }
}

/// Trainable transformer encoder. Parameter values always sit on the f32
/// grid (see `canon_f32`), so saving as 32-bit floats and reloading
/// reproduces encode output bit-for-bit.
#[derive(Debug, Clone)]
pub struct TransformerEncoder {
    config: EncoderConfig,
    index: HashMap<char, usize>,
    params: ParamSet,
    init_seed: u64,
}

impl TransformerEncoder {
    /// Fresh encoder with uniform ±1/sqrt(h) weight init.
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut rng = crate::rng::stream(seed, "encoder-init");
        let bound = 1.0 / (config.hidden_size as f64).sqrt();
        let mut params = ParamSet::new();
        for (name, (rows, cols)) in Self::expected_shapes(&config) {
            let mat = match param_kind(&name) {
                ParamKind::Weight => random_mat(rows, cols, bound, &mut rng),
                ParamKind::Zero => Mat::zeros(rows, cols),
                ParamKind::One => {
                    let mut m = Mat::zeros(rows, cols);
                    for v in m.data_mut() {
                        *v = 1.0;
                    }
                    m
                }
            };
            params.insert(name, mat);
        }
        Ok(Self::assemble(config, params, seed))
    }

    /// Rebuilds an encoder from checkpointed parameters, validating shapes.
    pub fn from_parts(
        config: EncoderConfig,
        params: ParamSet,
        init_seed: u64,
    ) -> Result<Self, ModelError> {
        config.validate()?;
        for (name, (rows, cols)) in Self::expected_shapes(&config) {
            let mat = params
                .try_get(&name)
                .ok_or_else(|| ModelError::MissingParameter(name.clone()))?;
            if (mat.rows(), mat.cols()) != (rows, cols) {
                return Err(ModelError::ShapeMismatch {
                    name,
                    expected: format!("{rows}x{cols}"),
                    found: format!("{}x{}", mat.rows(), mat.cols()),
                });
            }
        }
        if params.len() != Self::expected_shapes(&config).len() {
            let expected: std::collections::HashSet<String> = Self::expected_shapes(&config)
                .into_iter()
                .map(|(n, _)| n)
                .collect();
            let extra = params
                .names()
                .iter()
                .find(|n| !expected.contains(*n))
                .cloned()
                .unwrap_or_default();
            return Err(ModelError::Config(format!("unexpected parameter `{extra}`")));
        }
        Ok(Self::assemble(config, params, init_seed))
    }

    fn assemble(config: EncoderConfig, params: ParamSet, init_seed: u64) -> Self {
        let index = config
            .vocab
            .iter()
            .enumerate()
            .map(|(i, &c)| (c, i + 1)) // 0 is the reserved unknown id
            .collect();
        TransformerEncoder {
            config,
            index,
            params,
            init_seed,
        }
    }

    /// Names and shapes of every parameter, in registration order.
    pub fn expected_shapes(config: &EncoderConfig) -> Vec<(String, (usize, usize))> {
        let h = config.hidden_size;
        let f = ffn_dim(h);
        let v = config.vocab.len();
        let mut shapes = vec![
            ("embed.token".to_string(), (v + 1, h)),
            ("embed.pos".to_string(), (config.max_length, h)),
        ];
        for l in 0..config.layers {
            for part in ["wq", "wk", "wv", "wo"] {
                shapes.push((format!("layer{l}.attn.{part}"), (h, h)));
            }
            for part in ["bq", "bk", "bv", "bo"] {
                shapes.push((format!("layer{l}.attn.{part}"), (1, h)));
            }
            shapes.push((format!("layer{l}.ln1.gain"), (1, h)));
            shapes.push((format!("layer{l}.ln1.bias"), (1, h)));
            shapes.push((format!("layer{l}.ffn.w1"), (h, f)));
            shapes.push((format!("layer{l}.ffn.b1"), (1, f)));
            shapes.push((format!("layer{l}.ffn.w2"), (f, h)));
            shapes.push((format!("layer{l}.ffn.b2"), (1, h)));
            shapes.push((format!("layer{l}.ln2.gain"), (1, h)));
            shapes.push((format!("layer{l}.ln2.bias"), (1, h)));
        }
        shapes
    }

    pub fn config(&self) -> &EncoderConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamSet {
        &self.params
    }

    /// Mutable parameter access for the optimizer. Updates must preserve
    /// shapes and keep values on the f32 grid.
    pub fn params_mut(&mut self) -> &mut ParamSet {
        &mut self.params
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    /// Embedding ids: vocab position + 1, with 0 for unknown characters.
    pub fn ids(&self, sentence: &[char]) -> Result<Vec<usize>, ModelError> {
        if sentence.len() > self.config.max_length {
            return Err(ModelError::SentenceTooLong {
                len: sentence.len(),
                max: self.config.max_length,
            });
        }
        Ok(sentence
            .iter()
            .map(|c| self.index.get(c).copied().unwrap_or(0))
            .collect())
    }

    pub fn encode_with_trace(
        &self,
        sentence: &[char],
    ) -> Result<(RepSequence, ForwardTrace), ModelError> {
        let ids = self.ids(sentence)?;
        let t_len = ids.len();
        let h = self.config.hidden_size;
        let tok = self.params.get("embed.token");
        let pos = self.params.get("embed.pos");
        let mut x0 = Mat::zeros(t_len, h);
        for (t, &id) in ids.iter().enumerate() {
            let row = x0.row_mut(t);
            for ((o, a), b) in row.iter_mut().zip(tok.row(id)).zip(pos.row(t)) {
                *o = a + b;
            }
        }

        let mut layers = Vec::with_capacity(self.config.layers);
        let mut x = x0.clone();
        for l in 0..self.config.layers {
            let trace = self.layer_forward(l, &x)?;
            x = trace.ln2_out.clone();
            layers.push(trace);
        }

        let trace = ForwardTrace { ids, x0, layers };
        let rep = RepSequence::new(trace.output().clone(), t_len)?;
        Ok((rep, trace))
    }

    fn layer_forward(&self, l: usize, x: &Mat) -> Result<LayerTrace, ModelError> {
        let h = self.config.hidden_size;
        let heads = self.config.heads;
        let d = h / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let t_len = x.rows();
        let p = |part: &str| self.params.get(&format!("layer{l}.{part}"));

        let mut q = x.matmul(p("attn.wq"));
        q.add_row_vector(p("attn.bq").row(0));
        let mut k = x.matmul(p("attn.wk"));
        k.add_row_vector(p("attn.bk").row(0));
        let mut v = x.matmul(p("attn.wv"));
        v.add_row_vector(p("attn.bv").row(0));

        let mut probs = Vec::with_capacity(heads);
        let mut attn_concat = Mat::zeros(t_len, h);
        for hd in 0..heads {
            let cols = hd * d..(hd + 1) * d;
            let qh = slice_cols(&q, cols.clone());
            let kh = slice_cols(&k, cols.clone());
            let vh = slice_cols(&v, cols.clone());
            let mut scores = qh.matmul_nt(&kh);
            scores.scale(scale);
            for r in 0..t_len {
                softmax_in_place(scores.row_mut(r));
            }
            let oh = scores.matmul(&vh);
            write_cols(&mut attn_concat, cols, &oh);
            probs.push(scores);
        }
        let mut attn_out = attn_concat.matmul(p("attn.wo"));
        attn_out.add_row_vector(p("attn.bo").row(0));

        let mut r1 = x.clone();
        r1.add_assign(&attn_out);
        let ln1_out = layer_norm_forward(&r1, p("ln1.gain").row(0), p("ln1.bias").row(0));

        let mut ffn_pre = ln1_out.matmul(p("ffn.w1"));
        ffn_pre.add_row_vector(p("ffn.b1").row(0));
        let mut ffn_act = ffn_pre.clone();
        for val in ffn_act.data_mut() {
            *val = gelu(*val);
        }
        let mut ffn_out = ffn_act.matmul(p("ffn.w2"));
        ffn_out.add_row_vector(p("ffn.b2").row(0));

        let mut r2 = ln1_out.clone();
        r2.add_assign(&ffn_out);
        let ln2_out = layer_norm_forward(&r2, p("ln2.gain").row(0), p("ln2.bias").row(0));
        if !ln2_out.is_finite() {
            return Err(ModelError::NonFinite(format!("layer {l} output")));
        }

        Ok(LayerTrace {
            input: x.clone(),
            q,
            k,
            v,
            probs,
            attn_concat,
            r1,
            ln1_out,
            ffn_pre,
            ffn_act,
            r2,
            ln2_out,
        })
    }

    /// Accumulates parameter gradients for `d_output` (the loss gradient with
    /// respect to the encoder output) into `grads`. Returns the gradient with
    /// respect to the embedding sum, which callers normally ignore.
    pub fn backward(&self, trace: &ForwardTrace, d_output: &Mat, grads: &mut ParamSet) -> Mat {
        let mut d_x = d_output.clone();
        for (l, layer) in trace.layers.iter().enumerate().rev() {
            d_x = self.layer_backward(l, layer, &d_x, grads);
        }
        // embedding gradients
        let d_tok = grads.get_mut("embed.token");
        for (t, &id) in trace.ids.iter().enumerate() {
            for (g, v) in d_tok.row_mut(id).iter_mut().zip(d_x.row(t)) {
                *g += v;
            }
        }
        let d_pos = grads.get_mut("embed.pos");
        for t in 0..trace.ids.len() {
            for (g, v) in d_pos.row_mut(t).iter_mut().zip(d_x.row(t)) {
                *g += v;
            }
        }
        d_x
    }

    fn layer_backward(
        &self,
        l: usize,
        trace: &LayerTrace,
        d_out: &Mat,
        grads: &mut ParamSet,
    ) -> Mat {
        let h = self.config.hidden_size;
        let heads = self.config.heads;
        let d = h / heads;
        let scale = 1.0 / (d as f64).sqrt();
        let name = |part: &str| format!("layer{l}.{part}");
        let p = |part: &str| self.params.get(&format!("layer{l}.{part}"));

        // LN2
        let (d_r2, d_gain2, d_bias2) =
            layer_norm_backward(&trace.r2, p("ln2.gain").row(0), d_out);
        grads.get_mut(&name("ln2.gain")).row_mut(0).iter_mut()
            .zip(&d_gain2)
            .for_each(|(g, v)| *g += v);
        grads.get_mut(&name("ln2.bias")).row_mut(0).iter_mut()
            .zip(&d_bias2)
            .for_each(|(g, v)| *g += v);

        // FFN (residual: r2 = ln1_out + ffn_out)
        let mut d_ln1 = d_r2.clone();
        let d_ffn_out = &d_r2;
        grads
            .get_mut(&name("ffn.w2"))
            .add_assign(&trace.ffn_act.matmul_tn(d_ffn_out));
        add_to_row(grads.get_mut(&name("ffn.b2")), &d_ffn_out.col_sums());
        let d_act = d_ffn_out.matmul_nt(p("ffn.w2"));
        let mut d_pre = d_act;
        for (g, x) in d_pre.data_mut().iter_mut().zip(trace.ffn_pre.data()) {
            *g *= gelu_prime(*x);
        }
        grads
            .get_mut(&name("ffn.w1"))
            .add_assign(&trace.ln1_out.matmul_tn(&d_pre));
        add_to_row(grads.get_mut(&name("ffn.b1")), &d_pre.col_sums());
        d_ln1.add_assign(&d_pre.matmul_nt(p("ffn.w1")));

        // LN1
        let (d_r1, d_gain1, d_bias1) =
            layer_norm_backward(&trace.r1, p("ln1.gain").row(0), &d_ln1);
        grads.get_mut(&name("ln1.gain")).row_mut(0).iter_mut()
            .zip(&d_gain1)
            .for_each(|(g, v)| *g += v);
        grads.get_mut(&name("ln1.bias")).row_mut(0).iter_mut()
            .zip(&d_bias1)
            .for_each(|(g, v)| *g += v);

        // attention (residual: r1 = input + attn_out)
        let mut d_input = d_r1.clone();
        let d_attn_out = &d_r1;
        grads
            .get_mut(&name("attn.wo"))
            .add_assign(&trace.attn_concat.matmul_tn(d_attn_out));
        add_to_row(grads.get_mut(&name("attn.bo")), &d_attn_out.col_sums());
        let d_concat = d_attn_out.matmul_nt(p("attn.wo"));

        let t_len = trace.input.rows();
        let mut d_q = Mat::zeros(t_len, h);
        let mut d_k = Mat::zeros(t_len, h);
        let mut d_v = Mat::zeros(t_len, h);
        for hd in 0..heads {
            let cols = hd * d..(hd + 1) * d;
            let d_oh = slice_cols(&d_concat, cols.clone());
            let kh = slice_cols(&trace.k, cols.clone());
            let qh = slice_cols(&trace.q, cols.clone());
            let vh = slice_cols(&trace.v, cols.clone());
            let probs = &trace.probs[hd];

            let d_vh = probs.matmul_tn(&d_oh);
            let d_probs = d_oh.matmul_nt(&vh);
            // softmax rows backward
            let mut d_scores = Mat::zeros(t_len, t_len);
            for r in 0..t_len {
                let p_row = probs.row(r);
                let dp_row = d_probs.row(r);
                let dot: f64 = p_row.iter().zip(dp_row).map(|(a, b)| a * b).sum();
                for (ds, (pv, dpv)) in d_scores.row_mut(r).iter_mut().zip(p_row.iter().zip(dp_row))
                {
                    *ds = pv * (dpv - dot);
                }
            }
            d_scores.scale(scale);
            let d_qh = d_scores.matmul(&kh);
            let d_kh = d_scores.matmul_tn(&qh);
            write_cols(&mut d_q, cols.clone(), &d_qh);
            write_cols(&mut d_k, cols.clone(), &d_kh);
            write_cols(&mut d_v, cols, &d_vh);
        }

        for (proj, d_proj) in [("q", &d_q), ("k", &d_k), ("v", &d_v)] {
            grads
                .get_mut(&name(&format!("attn.w{proj}")))
                .add_assign(&trace.input.matmul_tn(d_proj));
            add_to_row(
                grads.get_mut(&name(&format!("attn.b{proj}"))),
                &d_proj.col_sums(),
            );
            d_input.add_assign(&d_proj.matmul_nt(p(&format!("attn.w{proj}"))));
        }
        d_input
    }
}

impl Encoder for TransformerEncoder {
    fn hidden_size(&self) -> usize {
        self.config.hidden_size
    }

    fn max_length(&self) -> usize {
        self.config.max_length
    }

    fn vocab(&self) -> &[char] {
        &self.config.vocab
    }

    fn encode(&self, sentence: &[char]) -> Result<RepSequence, ModelError> {
        self.encode_with_trace(sentence).map(|(rep, _)| rep)
    }
}

enum ParamKind {
    Weight,
    Zero,
    One,
}

fn param_kind(name: &str) -> ParamKind {
    if name.contains("ln1.gain") || name.contains("ln2.gain") {
        ParamKind::One
    } else if name.contains(".b") || name.contains("bias") {
        ParamKind::Zero
    } else {
        ParamKind::Weight
    }
}

fn random_mat(rows: usize, cols: usize, bound: f64, rng: &mut impl Rng) -> Mat {
    let mut m = Mat::zeros(rows, cols);
    for v in m.data_mut() {
        *v = canon_f32(rng.random_range(-bound..bound));
    }
    m
}

fn slice_cols(m: &Mat, cols: std::ops::Range<usize>) -> Mat {
    let mut out = Mat::zeros(m.rows(), cols.len());
    for r in 0..m.rows() {
        out.row_mut(r).copy_from_slice(&m.row(r)[cols.clone()]);
    }
    out
}

fn write_cols(target: &mut Mat, cols: std::ops::Range<usize>, src: &Mat) {
    for r in 0..target.rows() {
        target.row_mut(r)[cols.clone()].copy_from_slice(src.row(r));
    }
}

fn add_to_row(target: &mut Mat, values: &[f64]) {
    for (g, v) in target.row_mut(0).iter_mut().zip(values) {
        *g += v;
    }
}

fn layer_norm_forward(x: &Mat, gain: &[f64], bias: &[f64]) -> Mat {
    let mut out = Mat::zeros(x.rows(), x.cols());
    let n = x.cols() as f64;
    for r in 0..x.rows() {
        let row = x.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        for (i, (o, v)) in out.row_mut(r).iter_mut().zip(row).enumerate() {
            *o = gain[i] * (v - mean) * inv + bias[i];
        }
    }
    out
}

/// Returns (d_input, d_gain, d_bias).
fn layer_norm_backward(x: &Mat, gain: &[f64], d_out: &Mat) -> (Mat, Vec<f64>, Vec<f64>) {
    let n = x.cols() as f64;
    let mut d_x = Mat::zeros(x.rows(), x.cols());
    let mut d_gain = vec![0.0; x.cols()];
    let mut d_bias = vec![0.0; x.cols()];
    for r in 0..x.rows() {
        let row = x.row(r);
        let dy = d_out.row(r);
        let mean = row.iter().sum::<f64>() / n;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        let inv = 1.0 / (var + LN_EPS).sqrt();
        let xhat: Vec<f64> = row.iter().map(|v| (v - mean) * inv).collect();
        let mut mean_dxhat = 0.0;
        let mut mean_dxhat_xhat = 0.0;
        for i in 0..row.len() {
            let dxhat = dy[i] * gain[i];
            d_gain[i] += dy[i] * xhat[i];
            d_bias[i] += dy[i];
            mean_dxhat += dxhat;
            mean_dxhat_xhat += dxhat * xhat[i];
        }
        mean_dxhat /= n;
        mean_dxhat_xhat /= n;
        for (i, o) in d_x.row_mut(r).iter_mut().enumerate() {
            let dxhat = dy[i] * gain[i];
            *o = inv * (dxhat - mean_dxhat - xhat[i] * mean_dxhat_xhat);
        }
    }
    (d_x, d_gain, d_bias)
}

/// Gradients for a [`CscModel`]: one set for the encoder, one for the head.
pub struct ModelGrads {
    pub encoder: ParamSet,
    pub head: ParamSet,
}

impl ModelGrads {
    pub fn zeros_like(model: &CscModel) -> Self {
        ModelGrads {
            encoder: model.encoder.params().zeros_like(),
            head: model.head.zeros_like(),
        }
    }

    pub fn sq_sum(&self) -> f64 {
        self.encoder.sq_sum() + self.head.sq_sum()
    }

    pub fn scale_all(&mut self, s: f64) {
        self.encoder.scale_all(s);
        self.head.scale_all(s);
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.head.is_finite()
    }
}

/// The spell-checking model: a trainable encoder plus a per-position linear
/// head producing a distribution over the vocabulary.
#[derive(Debug, Clone)]
pub struct CscModel {
    encoder: TransformerEncoder,
    head: ParamSet,
    steps: u64,
}

impl CscModel {
    pub fn new(config: EncoderConfig, seed: u64) -> Result<Self, ModelError> {
        let encoder = TransformerEncoder::new(config, crate::rng::derive_seed(seed, "csc-encoder"))?;
        let mut rng = crate::rng::stream(seed, "csc-head");
        let h = encoder.config().hidden_size;
        let v = encoder.config().vocab.len();
        let bound = 1.0 / (h as f64).sqrt();
        let mut head = ParamSet::new();
        head.insert("head.w", random_mat(h, v, bound, &mut rng));
        head.insert("head.b", Mat::zeros(1, v));
        Ok(CscModel {
            encoder,
            head,
            steps: 0,
        })
    }

    pub fn from_parts(
        encoder: TransformerEncoder,
        head: ParamSet,
        steps: u64,
    ) -> Result<Self, ModelError> {
        let h = encoder.config().hidden_size;
        let v = encoder.config().vocab.len();
        for (name, expected) in [("head.w", (h, v)), ("head.b", (1, v))] {
            let mat = head
                .try_get(name)
                .ok_or_else(|| ModelError::MissingParameter(name.to_string()))?;
            if (mat.rows(), mat.cols()) != expected {
                return Err(ModelError::ShapeMismatch {
                    name: name.to_string(),
                    expected: format!("{}x{}", expected.0, expected.1),
                    found: format!("{}x{}", mat.rows(), mat.cols()),
                });
            }
        }
        Ok(CscModel {
            encoder,
            head,
            steps,
        })
    }

    pub fn encoder(&self) -> &TransformerEncoder {
        &self.encoder
    }

    pub fn encoder_mut(&mut self) -> &mut TransformerEncoder {
        &mut self.encoder
    }

    pub fn into_encoder(self) -> TransformerEncoder {
        self.encoder
    }

    pub fn head(&self) -> &ParamSet {
        &self.head
    }

    pub fn head_mut(&mut self) -> &mut ParamSet {
        &mut self.head
    }

    /// Simultaneous mutable access to both trainable parameter sets, for the
    /// optimizer.
    pub fn trainable_mut(&mut self) -> (&mut ParamSet, &mut ParamSet) {
        (self.encoder.params_mut(), &mut self.head)
    }

    pub fn config(&self) -> &EncoderConfig {
        self.encoder.config()
    }

    pub fn vocab(&self) -> &[char] {
        &self.encoder.config().vocab
    }

    /// Head-column index of a vocabulary character.
    pub fn vocab_index(&self, c: char) -> Option<usize> {
        self.encoder.index.get(&c).map(|&id| id - 1)
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn record_step(&mut self) {
        self.steps += 1;
    }

    pub fn forward(&self, sentence: &[char]) -> Result<(RepSequence, Mat), ModelError> {
        let (rep, logits, _) = self.forward_with_trace(sentence)?;
        Ok((rep, logits))
    }

    pub fn forward_with_trace(
        &self,
        sentence: &[char],
    ) -> Result<(RepSequence, Mat, ForwardTrace), ModelError> {
        let (rep, trace) = self.encoder.encode_with_trace(sentence)?;
        let mut logits = rep.matrix().matmul(self.head.get("head.w"));
        logits.add_row_vector(self.head.get("head.b").row(0));
        Ok((rep, logits, trace))
    }

    /// Accumulates gradients from `d_rep` (gradient on the encoder output,
    /// e.g. from contrastive objectives) and `d_logits` (gradient on the head
    /// output, from the spell-checking loss).
    pub fn backward(
        &self,
        trace: &ForwardTrace,
        d_rep: Option<&Mat>,
        d_logits: Option<&Mat>,
        grads: &mut ModelGrads,
    ) {
        let output = trace.output();
        let mut d_y = match d_rep {
            Some(m) => m.clone(),
            None => Mat::zeros(output.rows(), output.cols()),
        };
        if let Some(dl) = d_logits {
            grads
                .head
                .get_mut("head.w")
                .add_assign(&output.matmul_tn(dl));
            add_to_row(grads.head.get_mut("head.b"), &dl.col_sums());
            d_y.add_assign(&dl.matmul_nt(self.head.get("head.w")));
        }
        self.encoder.backward(trace, &d_y, &mut grads.encoder);
    }

    /// Per-position probability distributions (softmax over logit rows).
    pub fn distributions(&self, logits: &Mat) -> Mat {
        let mut out = logits.clone();
        for r in 0..out.rows() {
            softmax_in_place(out.row_mut(r));
        }
        out
    }

    /// Most likely vocabulary character per position; ties break toward the
    /// lowest vocabulary index.
    pub fn predict_chars(&self, sentence: &[char]) -> Result<Vec<char>, ModelError> {
        let (_, logits) = self.forward(sentence)?;
        let vocab = self.vocab();
        Ok((0..logits.rows())
            .map(|r| {
                let row = logits.row(r);
                let mut best = 0usize;
                for (i, v) in row.iter().enumerate() {
                    if *v > row[best] {
                        best = i;
                    }
                }
                vocab[best]
            })
            .collect())
    }
}
