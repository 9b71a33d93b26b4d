//! Toy chunk-causal encoder, stateless predictor, and the parameter
//! registry with its checkpoint format.
//!
//! The encoder is a per-frame linear + ReLU followed by masked self-attention
//! layers with residual connections; the mask comes from
//! [`chunking::encoder_mask`], so chunk causality holds at any depth. The
//! predictor is stateless: the mean of the embeddings of the last
//! `context_size` tokens, with a learned start embedding for empty history.
//! Frame stacking (concatenate `stack_factor` consecutive input frames)
//! stands in for convolutional subsampling.

mod checkpoint;

pub use checkpoint::{load_checkpoint, load_checkpoint_bytes, save_checkpoint, save_checkpoint_bytes};

use indexmap::IndexMap;

use crate::chunking::{self, ChunkSpec};
use crate::joiner::JoinerConfig;
use crate::numerics::{Graph, Tensor, Var};
use crate::{Error, Result, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct EncoderConfig {
    pub input_dim: usize,
    pub d_enc: usize,
    /// Masked self-attention layers after the input projection.
    pub num_sa_layers: usize,
    pub num_heads_enc: usize,
    /// Consecutive input frames stacked into one encoder frame (s >= 1).
    pub stack_factor: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct PredictorConfig {
    pub vocab_size: usize,
    pub d_pred: usize,
    /// Number of trailing non-blank tokens embedded (>= 1).
    pub context_size: usize,
}

/// Everything needed to build and run one model.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ModelConfig {
    pub variant: Variant,
    pub encoder: EncoderConfig,
    pub predictor: PredictorConfig,
    pub joiner: JoinerConfig,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let e = &self.encoder;
        if e.input_dim == 0 || e.d_enc == 0 {
            return Err(Error::InvalidConfig("encoder dims must be positive".into()));
        }
        if e.stack_factor == 0 {
            return Err(Error::InvalidConfig("stack_factor must be >= 1".into()));
        }
        if e.num_heads_enc == 0 || e.d_enc % e.num_heads_enc != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_enc {} must be divisible by num_heads_enc {}",
                e.d_enc, e.num_heads_enc
            )));
        }
        let p = &self.predictor;
        if p.vocab_size == 0 || p.d_pred == 0 {
            return Err(Error::InvalidConfig(
                "predictor dims must be positive".into(),
            ));
        }
        if p.context_size == 0 {
            return Err(Error::InvalidConfig("context_size must be >= 1".into()));
        }
        if self.joiner.d_enc != e.d_enc
            || self.joiner.d_pred != p.d_pred
            || self.joiner.vocab_size != p.vocab_size
        {
            return Err(Error::InvalidConfig(
                "joiner dims must match encoder/predictor dims".into(),
            ));
        }
        self.joiner.validate(self.variant)
    }

    /// Seeded uniform init in [-1/sqrt(fan_in), +1/sqrt(fan_in)] for every
    /// parameter; deterministic across runs for a given seed.
    pub fn init_params(&self, seed: u64) -> Result<ModelParams> {
        use rand::{Rng, SeedableRng};
        self.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
        let mut uniform = |rows: usize, cols: usize, fan_in: usize| {
            let bound = 1.0 / (fan_in as f64).sqrt();
            let data = (0..rows * cols)
                .map(|_| rng.random_range(-bound..=bound))
                .collect();
            Tensor::matrix(rows, cols, data)
        };

        let e = &self.encoder;
        let p = &self.predictor;
        let j = &self.joiner;
        let mut params = ModelParams::new();
        let stacked = e.stack_factor * e.input_dim;
        params.insert(names::ENC_W_IN, uniform(stacked, e.d_enc, stacked)?)?;
        for layer in 0..e.num_sa_layers {
            for suffix in ["w_q", "w_k", "w_v"] {
                params.insert(
                    &names::enc_sa(layer, suffix),
                    uniform(e.d_enc, e.d_enc, e.d_enc)?,
                )?;
            }
        }
        // Embedding rows are outputs; scale by the embedding dim.
        params.insert(names::PRED_EMBED, uniform(p.vocab_size, p.d_pred, p.d_pred)?)?;
        params.insert(names::PRED_START, uniform(1, p.d_pred, p.d_pred)?)?;
        match self.variant {
            Variant::Rnnt => {
                params.insert(names::JOIN_W_ENC, uniform(j.d_enc, j.d_joint, j.d_enc)?)?;
                params.insert(names::JOIN_W_PRED, uniform(j.d_pred, j.d_joint, j.d_pred)?)?;
            }
            Variant::Chat => {
                params.insert(names::JOIN_W_Q, uniform(j.d_pred, j.d_joint, j.d_pred)?)?;
                params.insert(names::JOIN_W_K, uniform(j.d_enc, j.d_joint, j.d_enc)?)?;
                params.insert(names::JOIN_W_V, uniform(j.d_enc, j.d_joint, j.d_enc)?)?;
            }
        }
        params.insert(
            names::JOIN_W_OUT,
            uniform(j.d_joint, j.num_outputs(), j.d_joint)?,
        )?;
        Ok(params)
    }
}

/// Canonical parameter names.
pub mod names {
    pub const ENC_W_IN: &str = "enc.w_in";
    pub const PRED_EMBED: &str = "pred.embed";
    pub const PRED_START: &str = "pred.start";
    pub const JOIN_W_ENC: &str = "join.w_enc";
    pub const JOIN_W_PRED: &str = "join.w_pred";
    pub const JOIN_W_Q: &str = "join.w_q";
    pub const JOIN_W_K: &str = "join.w_k";
    pub const JOIN_W_V: &str = "join.w_v";
    pub const JOIN_W_OUT: &str = "join.w_out";

    pub fn enc_sa(layer: usize, suffix: &str) -> String {
        format!("enc.sa{layer}.{suffix}")
    }
}

/// Ordered name -> tensor registry. Names are unique and shapes are fixed
/// after construction; gradient accumulators live on the tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ModelParams {
    entries: IndexMap<String, Tensor>,
}

impl ModelParams {
    pub fn new() -> Self {
        ModelParams::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::InvalidConfig(format!(
                "duplicate parameter name '{name}'"
            )));
        }
        self.entries.insert(name.to_string(), tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter '{name}'")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::InvalidConfig(format!("missing parameter '{name}'")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(|k| k.as_str())
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Insert every parameter into `g` as a leaf and remember the mapping.
    /// Parameters are copied, so the registry stays read-only for the pass.
    pub fn bind(&self, g: &mut Graph) -> BoundParams {
        let mut vars = IndexMap::with_capacity(self.entries.len());
        for (name, tensor) in &self.entries {
            let leaf = Tensor::new(tensor.shape().to_vec(), tensor.data().to_vec())
                .expect("registry tensors are consistent");
            vars.insert(name.clone(), g.leaf(leaf));
        }
        BoundParams { vars }
    }

    /// Pull gradients off a backward-swept graph into the registry's
    /// accumulators, scaled by `weight` (1/batch for a batch-mean loss).
    pub fn accumulate_grads(&mut self, g: &Graph, bound: &BoundParams, weight: f64) {
        for (name, var) in &bound.vars {
            if let Some(grad) = g.grad(*var) {
                self.entries
                    .get_mut(name)
                    .expect("bound name exists in registry")
                    .accumulate_grad_scaled(grad, weight);
            }
        }
    }

    /// Plain SGD step on the accumulated gradients, which are then cleared.
    pub fn apply_sgd(&mut self, lr: f64) {
        for tensor in self.entries.values_mut() {
            if let Some(grad) = tensor.grad() {
                let update: Vec<f64> = grad.iter().map(|g| lr * g).collect();
                let data = tensor.data_mut();
                for (x, u) in data.iter_mut().zip(&update) {
                    *x -= u;
                }
                tensor.clear_grad();
            }
        }
    }

    pub fn zero_grads(&mut self) {
        for tensor in self.entries.values_mut() {
            tensor.clear_grad();
        }
    }

    /// True when every parameter has a gradient accumulator.
    pub fn all_have_grads(&self) -> bool {
        self.entries.values().all(|t| t.grad().is_some())
    }

    /// Bitwise equality of shapes and values (gradients ignored).
    pub fn bitwise_eq(&self, other: &ModelParams) -> bool {
        self.entries.len() == other.entries.len()
            && self.iter().zip(other.iter()).all(|((na, ta), (nb, tb))| {
                na == nb
                    && ta.shape() == tb.shape()
                    && ta
                        .data()
                        .iter()
                        .zip(tb.data())
                        .all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// Per-pass mapping from parameter names to graph leaves.
pub struct BoundParams {
    vars: IndexMap<String, Var>,
}

impl BoundParams {
    /// Leaf for a parameter. Panics on unknown names: callers only ask for
    /// names the variant registered.
    pub fn var(&self, name: &str) -> Var {
        *self
            .vars
            .get(name)
            .unwrap_or_else(|| panic!("parameter '{name}' not bound"))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, Var)> {
        self.vars.iter().map(|(k, v)| (k.as_str(), *v))
    }
}

/// Encode input features [T_in, input_dim] into [T, d_enc], T = T_in / s:
/// frame stacking, linear + ReLU, then masked self-attention layers with
/// residual connections. Chunk causality comes from the masks alone, and
/// the left-context bound holds at every depth: the first layer attends to
/// `left_context` previous chunks, deeper layers within the chunk only.
pub fn encode(
    g: &mut Graph,
    x: Var,
    spec: &ChunkSpec,
    cfg: &EncoderConfig,
    bound: &BoundParams,
) -> Result<Var> {
    let shape = g.shape(x).to_vec();
    if shape.len() != 2 || shape[1] != cfg.input_dim {
        return Err(Error::ShapeMismatch {
            op: "encode",
            lhs: shape,
            rhs: vec![cfg.input_dim],
        });
    }
    let t_in = shape[0];
    let s = cfg.stack_factor;
    let t = t_in / s;
    if t == 0 {
        return Err(Error::EmptyInput("fewer input frames than stack_factor"));
    }

    let stacked = if s == 1 && t_in == t {
        x
    } else {
        let trimmed = g.narrow(x, 0, 0, t * s)?;
        g.reshape(trimmed, vec![t, s * cfg.input_dim])?
    };
    let projected = g.matmul(stacked, bound.var(names::ENC_W_IN))?;
    let mut h = g.relu(projected)?;

    if cfg.num_sa_layers > 0 {
        // Only the first layer sees previous chunks; deeper layers attend
        // within the chunk. Per-layer left context would compound with
        // depth and break the L-chunk bound the mask promises.
        let mask_first = chunking::encoder_mask(t, spec);
        let within_chunk = ChunkSpec {
            left_context: 0,
            ..*spec
        };
        let mask_rest = chunking::encoder_mask(t, &within_chunk);
        let head_dim = cfg.d_enc / cfg.num_heads_enc;
        let scale = 1.0 / (head_dim as f64).sqrt();
        for layer in 0..cfg.num_sa_layers {
            let mask = if layer == 0 { &mask_first } else { &mask_rest };
            let q = g.matmul(h, bound.var(&names::enc_sa(layer, "w_q")))?;
            let k = g.matmul(h, bound.var(&names::enc_sa(layer, "w_k")))?;
            let v = g.matmul(h, bound.var(&names::enc_sa(layer, "w_v")))?;
            let mut heads = Vec::with_capacity(cfg.num_heads_enc);
            for head in 0..cfg.num_heads_enc {
                let off = head * head_dim;
                let qh = g.narrow(q, 1, off, head_dim)?;
                let kh = g.narrow(k, 1, off, head_dim)?;
                let vh = g.narrow(v, 1, off, head_dim)?;
                let kt = g.transpose(kh)?;
                let scores = g.matmul(qh, kt)?;
                let scaled = g.scale(scores, scale)?;
                let attn = g.masked_softmax(scaled, 1, mask)?;
                heads.push(g.matmul(attn, vh)?);
            }
            let ctx = g.concat(1, &heads)?;
            h = g.add(h, ctx)?;
        }
    }
    Ok(h)
}

/// Geometric recency decay of the predictor's weighted mean. A plain mean
/// would make the state a multiset of the last tokens — mean(a, b) equals
/// mean(b, a) — and an order collision inside one chunk forces two
/// different joiner outputs from one state. Recency weighting keeps the
/// state order-sensitive.
pub const RECENCY_DECAY: f64 = 0.5;

/// Predictor state for one label history: recency-weighted mean of the
/// embeddings of the last `context_size` tokens (weights 1, 1/2, 1/4, ...
/// newest first, normalized), with the learned start embedding standing in
/// for the missing slots of short histories. An empty history is exactly
/// the start embedding; at context 1 the state is exactly the last token's
/// embedding. Output shape [1, d_pred].
pub fn predict(
    g: &mut Graph,
    history: &[usize],
    cfg: &PredictorConfig,
    bound: &BoundParams,
) -> Result<Var> {
    for &id in history {
        if id >= cfg.vocab_size {
            return Err(Error::VocabOutOfRange {
                id,
                vocab: cfg.vocab_size,
            });
        }
    }
    if history.is_empty() {
        return Ok(bound.var(names::PRED_START));
    }
    let k = cfg.context_size;
    let tail_len = history.len().min(k);
    let tail = &history[history.len() - tail_len..];
    let total: f64 = (0..k).map(|j| RECENCY_DECAY.powi(j as i32)).sum();

    // Newest token has slot 0; slots beyond the history take the start
    // embedding.
    let embedded = g.embedding(bound.var(names::PRED_EMBED), tail)?;
    let mut state: Option<Var> = None;
    let mut start_weight = 0.0;
    for slot in 0..k {
        let weight = RECENCY_DECAY.powi(slot as i32) / total;
        if slot < tail_len {
            let row = g.narrow(embedded, 0, tail_len - 1 - slot, 1)?;
            let scaled = g.scale(row, weight)?;
            state = Some(match state {
                Some(acc) => g.add(acc, scaled)?,
                None => scaled,
            });
        } else {
            start_weight += weight;
        }
    }
    let mut state = state.expect("tail_len >= 1");
    if start_weight > 0.0 {
        let padded = g.scale(bound.var(names::PRED_START), start_weight)?;
        state = g.add(state, padded)?;
    }
    Ok(state)
}

/// Predictor states for every prefix of `target`: row u is the state after
/// consuming u labels, row 0 the start state. Output [(U+1), d_pred].
pub fn predictor_states(
    g: &mut Graph,
    target: &[usize],
    cfg: &PredictorConfig,
    bound: &BoundParams,
) -> Result<Var> {
    let mut rows = Vec::with_capacity(target.len() + 1);
    for u in 0..=target.len() {
        rows.push(predict(g, &target[..u], cfg, bound)?);
    }
    if rows.len() == 1 {
        Ok(rows[0])
    } else {
        g.concat(0, &rows)
    }
}
