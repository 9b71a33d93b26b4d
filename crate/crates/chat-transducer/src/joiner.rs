//! The two joiners: additive (RNN-T) and multi-head chunk attention (CHAT).
//!
//! Additive: log_softmax(W_out · ReLU(W_enc h_enc + W_pred h_pred)).
//!
//! Attention: the predictor state queries the chunk's frames (zero frame
//! included) per head with scaled dot-product attention; head contexts are
//! concatenated back to d_joint, added to the predictor state, and passed
//! through ReLU and the output projection. All projections are bias-free, so
//! the zero frame has exactly zero key and value — attending to it is
//! attending to nothing, which is what backs blank emission. Heads use
//! per-head scaling 1/sqrt(d_joint / H) and there is no output projection.

use crate::chunking::ChunkedEncoding;
use crate::lattice::JointLattice;
use crate::model::{names, BoundParams};
use crate::numerics::{Graph, Var};
use crate::{Error, Result, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct JoinerConfig {
    pub d_enc: usize,
    pub d_pred: usize,
    pub d_joint: usize,
    /// Attention heads (CHAT only).
    pub num_heads: usize,
    /// Real vocabulary size; blank takes id `vocab_size`, so the joiner
    /// emits `vocab_size + 1` log-probabilities.
    pub vocab_size: usize,
}

impl JoinerConfig {
    pub fn blank_id(&self) -> usize {
        self.vocab_size
    }

    pub fn num_outputs(&self) -> usize {
        self.vocab_size + 1
    }

    pub fn head_dim(&self) -> usize {
        self.d_joint / self.num_heads
    }

    pub fn validate(&self, variant: Variant) -> Result<()> {
        if self.d_joint == 0 || self.vocab_size == 0 {
            return Err(Error::InvalidConfig(
                "joiner dims and vocab must be positive".into(),
            ));
        }
        if self.num_heads == 0 || self.d_joint % self.num_heads != 0 {
            return Err(Error::InvalidConfig(format!(
                "d_joint {} must be divisible by num_heads {}",
                self.d_joint, self.num_heads
            )));
        }
        // The attention joiner adds the chunk context and the predictor
        // state without a projection, which requires equal dims. Reject
        // rather than silently project.
        if variant == Variant::Chat && self.d_pred != self.d_joint {
            return Err(Error::InvalidConfig(format!(
                "chat joiner requires d_pred == d_joint, got {} and {}",
                self.d_pred, self.d_joint
            )));
        }
        Ok(())
    }
}

/// Attention weights of one joiner call: per head, one weight per chunk
/// position (real frames plus the zero frame).
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionRecord {
    per_head: Vec<Vec<f64>>,
}

impl AttentionRecord {
    /// Assemble from per-head weight rows (all the same length).
    pub fn from_weights(per_head: Vec<Vec<f64>>) -> Self {
        assert!(!per_head.is_empty(), "attention record needs at least one head");
        assert!(
            per_head.iter().all(|h| h.len() == per_head[0].len()),
            "attention heads must cover the same positions"
        );
        AttentionRecord { per_head }
    }

    pub fn num_heads(&self) -> usize {
        self.per_head.len()
    }

    pub fn positions(&self) -> usize {
        self.per_head[0].len()
    }

    pub fn head(&self, h: usize) -> &[f64] {
        &self.per_head[h]
    }

    /// Per-position weights summed across heads (sums to H).
    pub fn summed(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.positions()];
        for head in &self.per_head {
            for (o, w) in out.iter_mut().zip(head) {
                *o += w;
            }
        }
        out
    }

    /// Head-summed weights divided by the head count (sums to 1).
    pub fn normalized(&self) -> Vec<f64> {
        let h = self.num_heads() as f64;
        self.summed().iter().map(|w| w / h).collect()
    }
}

/// One additive-joiner evaluation: h_enc [1, d_enc] and h_pred [1, d_pred]
/// to log-probabilities [1, vocab+1].
pub fn additive_join(
    g: &mut Graph,
    h_enc: Var,
    h_pred: Var,
    bound: &BoundParams,
) -> Result<Var> {
    let enc_proj = g.matmul(h_enc, bound.var(names::JOIN_W_ENC))?;
    let pred_proj = g.matmul(h_pred, bound.var(names::JOIN_W_PRED))?;
    join_output(g, enc_proj, pred_proj, bound)
}

fn join_output(g: &mut Graph, a: Var, b: Var, bound: &BoundParams) -> Result<Var> {
    let sum = g.add(a, b)?;
    let hidden = g.relu(sum)?;
    let logits = g.matmul(hidden, bound.var(names::JOIN_W_OUT))?;
    g.log_softmax(logits, 1)
}

/// Per-chunk key/value projections, head-split and ready to be queried for
/// every label position of the chunk's decision step.
pub struct ProjectedChunk {
    /// Per head: (K_h transposed [head_dim, m+1], V_h [m+1, head_dim]).
    heads: Vec<(Var, Var)>,
    positions: usize,
}

impl ProjectedChunk {
    pub fn positions(&self) -> usize {
        self.positions
    }
}

/// Project a chunk (with its appended zero frame as the last row) for
/// attention.
pub fn project_chunk(
    g: &mut Graph,
    chunk: Var,
    bound: &BoundParams,
    cfg: &JoinerConfig,
) -> Result<ProjectedChunk> {
    let shape = g.shape(chunk).to_vec();
    if shape.len() != 2 || shape[1] != cfg.d_enc || shape[0] < 2 {
        return Err(Error::ShapeMismatch {
            op: "project_chunk",
            lhs: shape,
            rhs: vec![cfg.d_enc],
        });
    }
    debug_assert!(
        {
            let d = g.data(chunk);
            let last = shape[0] - 1;
            d[last * shape[1]..].iter().all(|&v| v == 0.0)
        },
        "chunk is missing its appended zero frame"
    );
    let positions = shape[0];
    let k = g.matmul(chunk, bound.var(names::JOIN_W_K))?;
    let v = g.matmul(chunk, bound.var(names::JOIN_W_V))?;
    let hd = cfg.head_dim();
    let mut heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let kh = g.narrow(k, 1, h * hd, hd)?;
        let kt = g.transpose(kh)?;
        let vh = g.narrow(v, 1, h * hd, hd)?;
        heads.push((kt, vh));
    }
    Ok(ProjectedChunk { heads, positions })
}

/// Per-label-position query, head-split and pre-scaled by
/// 1/sqrt(head_dim), plus the raw predictor state for the residual add.
pub struct ProjectedQuery {
    scaled_heads: Vec<Var>,
    h_pred: Var,
}

/// Project one predictor state [1, d_pred] into per-head scaled queries.
pub fn project_query(
    g: &mut Graph,
    h_pred: Var,
    bound: &BoundParams,
    cfg: &JoinerConfig,
) -> Result<ProjectedQuery> {
    let q = g.matmul(h_pred, bound.var(names::JOIN_W_Q))?;
    let hd = cfg.head_dim();
    let scale = 1.0 / (hd as f64).sqrt();
    let mut scaled_heads = Vec::with_capacity(cfg.num_heads);
    for h in 0..cfg.num_heads {
        let qh = g.narrow(q, 1, h * hd, hd)?;
        scaled_heads.push(g.scale(qh, scale)?);
    }
    Ok(ProjectedQuery {
        scaled_heads,
        h_pred,
    })
}

/// Attention-joiner core on pre-projected inputs.
pub fn attend(
    g: &mut Graph,
    chunk: &ProjectedChunk,
    query: &ProjectedQuery,
    bound: &BoundParams,
    cfg: &JoinerConfig,
) -> Result<(Var, AttentionRecord)> {
    let mut contexts = Vec::with_capacity(cfg.num_heads);
    let mut per_head = Vec::with_capacity(cfg.num_heads);
    for ((kt, vh), qh) in chunk.heads.iter().zip(&query.scaled_heads) {
        let scores = g.matmul(*qh, *kt)?;
        let alpha = g.softmax(scores, 1)?;
        per_head.push(g.data(alpha).to_vec());
        contexts.push(g.matmul(alpha, *vh)?);
    }
    let context = if contexts.len() == 1 {
        contexts[0]
    } else {
        g.concat(1, &contexts)?
    };
    let out = join_output(g, context, query.h_pred, bound)?;
    Ok((out, AttentionRecord { per_head }))
}

/// One attention-joiner evaluation: a chunk [(m+1), d_enc] including its
/// zero frame, and a predictor state [1, d_pred], to log-probabilities
/// [1, vocab+1] plus the attention weights.
pub fn attention_join(
    g: &mut Graph,
    chunk: Var,
    h_pred: Var,
    bound: &BoundParams,
    cfg: &JoinerConfig,
) -> Result<(Var, AttentionRecord)> {
    let projected = project_chunk(g, chunk, bound, cfg)?;
    let query = project_query(g, h_pred, bound, cfg)?;
    attend(g, &projected, &query, bound, cfg)
}

/// Full joint lattice over decision steps x label positions x symbols.
/// RNN-T: one step per frame with the additive joiner. CHAT: one step per
/// chunk with the attention joiner.
pub fn build_joint_lattice(
    g: &mut Graph,
    chunked: &ChunkedEncoding,
    pred_states: Var,
    bound: &BoundParams,
    cfg: &JoinerConfig,
    variant: Variant,
) -> Result<JointLattice> {
    let label_slots = g.shape(pred_states)[0];
    match variant {
        Variant::Rnnt => {
            let frames = chunked.frames(g)?;
            let t = chunked.total_frames;
            let enc_proj = g.matmul(frames, bound.var(names::JOIN_W_ENC))?;
            let pred_proj = g.matmul(pred_states, bound.var(names::JOIN_W_PRED))?;
            let mut enc_rows = Vec::with_capacity(t);
            for step in 0..t {
                enc_rows.push(g.narrow(enc_proj, 0, step, 1)?);
            }
            let mut pred_rows = Vec::with_capacity(label_slots);
            for u in 0..label_slots {
                pred_rows.push(g.narrow(pred_proj, 0, u, 1)?);
            }
            let mut cells = Vec::with_capacity(t * label_slots);
            for &enc_row in &enc_rows {
                for &pred_row in &pred_rows {
                    cells.push(join_output(g, enc_row, pred_row, bound)?);
                }
            }
            JointLattice::from_cells(t, label_slots, cfg.num_outputs(), cells)
        }
        Variant::Chat => {
            let mut queries = Vec::with_capacity(label_slots);
            for u in 0..label_slots {
                let h_pred = g.narrow(pred_states, 0, u, 1)?;
                queries.push(project_query(g, h_pred, bound, cfg)?);
            }
            let mut cells = Vec::with_capacity(chunked.num_chunks() * label_slots);
            for &chunk in &chunked.chunks {
                let projected = project_chunk(g, chunk, bound, cfg)?;
                for query in &queries {
                    let (cell, _) = attend(g, &projected, query, bound, cfg)?;
                    cells.push(cell);
                }
            }
            JointLattice::from_cells(chunked.num_chunks(), label_slots, cfg.num_outputs(), cells)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chunking::{partition_tensor, ChunkSpec};
    use crate::model::{EncoderConfig, ModelConfig, ModelParams, PredictorConfig};
    use crate::numerics::Tensor;
    use crate::test_support::{assert_close, finite_diff, max_rel_err};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn config(variant: Variant, d: usize, heads: usize, vocab: usize) -> ModelConfig {
        ModelConfig {
            variant,
            encoder: EncoderConfig {
                input_dim: d,
                d_enc: d,
                num_sa_layers: 0,
                num_heads_enc: 1,
                stack_factor: 1,
            },
            predictor: PredictorConfig {
                vocab_size: vocab,
                d_pred: d,
                context_size: 1,
            },
            joiner: JoinerConfig {
                d_enc: d,
                d_pred: d,
                d_joint: d,
                num_heads: heads,
                vocab_size: vocab,
            },
        }
    }

    /// Scalar-world parameters: every projection the identity scalar, the
    /// output projection mapping the joint scalar to logits [x, 0] so the
    /// joint value can be read back off the log-probabilities.
    fn scalar_params() -> ModelParams {
        let mut p = ModelParams::new();
        p.insert(names::JOIN_W_Q, Tensor::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        p.insert(names::JOIN_W_K, Tensor::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        p.insert(names::JOIN_W_V, Tensor::matrix(1, 1, vec![1.0]).unwrap())
            .unwrap();
        p.insert(names::JOIN_W_OUT, Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap())
            .unwrap();
        p
    }

    #[test]
    fn attention_join_scalar_walkthrough() {
        // d = 1, H = 1, chunk values [2, -1] plus the zero frame, identity
        // projections, h_pred = 1. Logits [2, -1, 0]; the softmax and the
        // context are evaluated by hand.
        let cfg = JoinerConfig {
            d_enc: 1,
            d_pred: 1,
            d_joint: 1,
            num_heads: 1,
            vocab_size: 1,
        };
        let params = scalar_params();
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let chunk = g.leaf(Tensor::matrix(3, 1, vec![2.0, -1.0, 0.0]).unwrap());
        let h_pred = g.leaf(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let (logp, record) = attention_join(&mut g, chunk, h_pred, &bound, &cfg).unwrap();

        // Softmax of [2, -1, 0] computed from scalar exponentials.
        let exps = [2.0f64.exp(), (-1.0f64).exp(), 1.0];
        let denom: f64 = exps.iter().sum();
        let alpha: Vec<f64> = exps.iter().map(|e| e / denom).collect();
        assert_close(alpha[0], 0.84379, 1e-5, "alpha[0]");
        assert_close(alpha[1], 0.04201, 1e-5, "alpha[1]");
        assert_close(alpha[2], 0.11420, 1e-5, "alpha[2]");
        for (got, want) in record.head(0).iter().zip(&alpha) {
            assert_close(*got, *want, 1e-12, "recorded alpha");
        }

        let c = alpha[0] * 2.0 + alpha[1] * (-1.0) + alpha[2] * 0.0;
        assert_close(c, 1.64557, 1e-5, "context");

        // W_out maps relu(c + 1) to logits [c + 1, 0], so the joint value is
        // recoverable as the difference of the two log-probabilities.
        let lp = g.data(logp);
        assert_close(lp[0] - lp[1], c + 1.0, 1e-12, "joint value");
    }

    #[test]
    fn zero_query_gives_uniform_attention() {
        let cfg = config(Variant::Chat, 4, 2, 3);
        let params = cfg.init_params(5).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let sp = ChunkSpec::new(6, 0, 10.0).unwrap();
        let enc = Tensor::from_fn(6, 4, |i, j| (i + j) as f64 * 0.3 - 0.5);
        let ce = partition_tensor(&mut g, enc, &sp).unwrap();
        let h_pred = g.leaf(Tensor::zeros(vec![1, 4]));
        let (_, record) =
            attention_join(&mut g, ce.chunks[0], h_pred, &bound, &cfg.joiner).unwrap();
        for h in 0..record.num_heads() {
            for &w in record.head(h) {
                assert_close(w, 1.0 / 7.0, 1e-15, "uniform weight");
            }
        }
    }

    #[test]
    fn zero_frame_contributes_exactly_zero_context() {
        // Keys of the real frames are pushed to -inf-like logits so all
        // attention mass lands on the zero frame; its value row is exactly
        // zero, so the context is exactly zero and the output depends on
        // h_pred alone.
        let cfg = JoinerConfig {
            d_enc: 1,
            d_pred: 1,
            d_joint: 1,
            num_heads: 1,
            vocab_size: 1,
        };
        let mut params = scalar_params();
        *params.get_mut(names::JOIN_W_K).unwrap() = Tensor::matrix(1, 1, vec![-40.0]).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let chunk = g.leaf(Tensor::matrix(3, 1, vec![50.0, 50.0, 0.0]).unwrap());
        let h_pred = g.leaf(Tensor::matrix(1, 1, vec![1.0]).unwrap());
        let (logp, record) = attention_join(&mut g, chunk, h_pred, &bound, &cfg).unwrap();
        // exp(-2000) underflows to exactly zero.
        assert_eq!(record.head(0)[0], 0.0);
        assert_eq!(record.head(0)[1], 0.0);
        assert_eq!(record.head(0)[2], 1.0);
        // Context is exactly 0, so the joint value is relu(0 + 1) = 1.
        let lp = g.data(logp);
        assert_eq!(lp[0] - lp[1], 1.0);
    }

    #[test]
    fn additive_join_zero_params_is_uniform() {
        let cfg = config(Variant::Rnnt, 4, 1, 5);
        let mut params = ModelParams::new();
        for (name, t) in cfg.init_params(0).unwrap().iter() {
            params.insert(name, Tensor::zeros(t.shape().to_vec())).unwrap();
        }
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let h_enc = g.leaf(Tensor::matrix(1, 4, vec![1.0, -2.0, 0.5, 3.0]).unwrap());
        let h_pred = g.leaf(Tensor::matrix(1, 4, vec![0.1, 0.2, 0.3, 0.4]).unwrap());
        let logp = additive_join(&mut g, h_enc, h_pred, &bound).unwrap();
        let expected = (1.0 / 6.0f64).ln();
        for &v in g.data(logp) {
            assert_close(v, expected, 1e-15, "uniform log-prob");
        }
    }

    #[test]
    fn join_outputs_exponentiate_to_one() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = config(Variant::Chat, 6, 3, 7);
        let params = cfg.init_params(3).unwrap();
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let sp = ChunkSpec::new(4, 1, 10.0).unwrap();
        let enc = Tensor::matrix(4, 6, (0..24).map(|_| rng.random_range(-2.0..2.0)).collect())
            .unwrap();
        let ce = partition_tensor(&mut g, enc, &sp).unwrap();
        let h_pred = g.leaf(Tensor::matrix(
            1,
            6,
            (0..6).map(|_| rng.random_range(-2.0..2.0)).collect(),
        )
        .unwrap());
        let (logp, record) =
            attention_join(&mut g, ce.chunks[0], h_pred, &bound, &cfg.joiner).unwrap();
        let total: f64 = g.data(logp).iter().map(|v| v.exp()).sum();
        assert_close(total, 1.0, 1e-12, "prob mass");
        for h in 0..record.num_heads() {
            let s: f64 = record.head(h).iter().sum();
            assert_close(s, 1.0, 1e-12, "head weights");
            assert!(record.head(h).iter().all(|&w| w >= 0.0));
        }
    }

    #[test]
    fn head_weights_sum_to_one_on_partial_final_chunk() {
        let mut rng = ChaCha8Rng::seed_from_u64(21);
        let cfg = config(Variant::Chat, 4, 2, 3);
        let params = cfg.init_params(4).unwrap();
        for c in [1usize, 3, 5, 12] {
            let sp = ChunkSpec::new(c, 2, 10.0).unwrap();
            let t = 7;
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let enc =
                Tensor::matrix(t, 4, (0..t * 4).map(|_| rng.random_range(-2.0..2.0)).collect())
                    .unwrap();
            let ce = partition_tensor(&mut g, enc, &sp).unwrap();
            let h_pred = g.leaf(Tensor::matrix(
                1,
                4,
                (0..4).map(|_| rng.random_range(-2.0..2.0)).collect(),
            )
            .unwrap());
            let last = *ce.chunks.last().unwrap();
            let (_, record) = attention_join(&mut g, last, h_pred, &bound, &cfg.joiner).unwrap();
            assert_eq!(record.positions(), ce.real_lens.last().unwrap() + 1);
            for h in 0..record.num_heads() {
                let s: f64 = record.head(h).iter().sum();
                assert_close(s, 1.0, 1e-12, "partial chunk head sum");
            }
        }
    }

    #[test]
    fn permuting_real_rows_permutes_alpha_and_preserves_output() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cfg = config(Variant::Chat, 4, 2, 3);
        let params = cfg.init_params(6).unwrap();
        let rows: Vec<Vec<f64>> = (0..5)
            .map(|_| (0..4).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        let perm = [3usize, 0, 4, 1, 2];

        let run = |order: &[usize]| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let mut data = Vec::new();
            for &i in order {
                data.extend_from_slice(&rows[i]);
            }
            data.extend_from_slice(&[0.0; 4]); // zero frame
            let chunk = g.leaf(Tensor::matrix(6, 4, data).unwrap());
            let h_pred = g.leaf(Tensor::matrix(1, 4, vec![0.3, -0.2, 0.9, 0.1]).unwrap());
            let (logp, record) = attention_join(&mut g, chunk, h_pred, &bound, &cfg.joiner).unwrap();
            (g.data(logp).to_vec(), record)
        };

        let (out_id, rec_id) = run(&[0, 1, 2, 3, 4]);
        let (out_pm, rec_pm) = run(&perm);
        for (a, b) in out_id.iter().zip(&out_pm) {
            assert_close(*a, *b, 1e-12, "permutation-covariant output");
        }
        for h in 0..rec_id.num_heads() {
            for (pos, &src) in perm.iter().enumerate() {
                assert_close(
                    rec_pm.head(h)[pos],
                    rec_id.head(h)[src],
                    1e-12,
                    "permuted alpha",
                );
            }
            // Zero frame stays last.
            assert_close(rec_pm.head(h)[5], rec_id.head(h)[5], 1e-12, "zero frame alpha");
        }
    }

    #[test]
    fn single_head_matches_hand_rolled_equations() {
        // H = 1 must reduce to the single-head equations computed with
        // plain arithmetic: q = h_pred W_Q, k_t = h_t W_K, v_t = h_t W_V,
        // alpha = softmax(q k / sqrt(d_joint)), c = sum alpha v,
        // p = log_softmax(W_out relu(c + h_pred)).
        let d = 3;
        let vocab = 2;
        let cfg = config(Variant::Chat, d, 1, vocab);
        let params = cfg.init_params(17).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let m = 4;
        let mut chunk_data: Vec<f64> = (0..m * d).map(|_| rng.random_range(-1.5..1.5)).collect();
        chunk_data.extend(std::iter::repeat(0.0).take(d));
        let pred_data: Vec<f64> = (0..d).map(|_| rng.random_range(-1.5..1.5)).collect();

        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let chunk = g.leaf(Tensor::matrix(m + 1, d, chunk_data.clone()).unwrap());
        let h_pred = g.leaf(Tensor::matrix(1, d, pred_data.clone()).unwrap());
        let (logp, record) = attention_join(&mut g, chunk, h_pred, &bound, &cfg.joiner).unwrap();

        // Hand-rolled single-head reference.
        let wq = params.get(names::JOIN_W_Q).unwrap();
        let wk = params.get(names::JOIN_W_K).unwrap();
        let wv = params.get(names::JOIN_W_V).unwrap();
        let wo = params.get(names::JOIN_W_OUT).unwrap();
        let matvec = |w: &Tensor, x: &[f64]| -> Vec<f64> {
            (0..w.cols())
                .map(|j| (0..w.rows()).map(|i| x[i] * w.at(i, j)).sum())
                .collect()
        };
        let q = matvec(wq, &pred_data);
        let scale = 1.0 / (d as f64).sqrt();
        let mut logits = Vec::new();
        for t in 0..=m {
            let k = matvec(wk, &chunk_data[t * d..(t + 1) * d]);
            logits.push(q.iter().zip(&k).map(|(a, b)| a * b).sum::<f64>() * scale);
        }
        let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
        let denom: f64 = logits.iter().map(|l| (l - mx).exp()).sum();
        let alpha: Vec<f64> = logits.iter().map(|l| (l - mx).exp() / denom).collect();
        let mut c = vec![0.0; d];
        for t in 0..=m {
            let v = matvec(wv, &chunk_data[t * d..(t + 1) * d]);
            for (ci, vi) in c.iter_mut().zip(&v) {
                *ci += alpha[t] * vi;
            }
        }
        let joint: Vec<f64> = c
            .iter()
            .zip(&pred_data)
            .map(|(a, b)| (a + b).max(0.0))
            .collect();
        let out_logits = matvec(wo, &joint);
        let omx = out_logits.iter().cloned().fold(f64::MIN, f64::max);
        let lse = omx + out_logits.iter().map(|l| (l - omx).exp()).sum::<f64>().ln();

        for (got, want) in record.head(0).iter().zip(&alpha) {
            assert_close(*got, *want, 1e-12, "single-head alpha");
        }
        for (got, l) in g.data(logp).iter().zip(&out_logits) {
            assert_close(*got, l - lse, 1e-12, "single-head log-prob");
        }
    }

    #[test]
    fn attention_join_gradients_match_finite_differences() {
        let d = 4;
        let cfg = config(Variant::Chat, d, 2, 3);
        let params = cfg.init_params(23).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        let m = 3;
        // Probe the m real rows only; the zero frame is structural, not an
        // input.
        let real_rows: Vec<f64> = (0..m * d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pred_data: Vec<f64> = (0..d).map(|_| rng.random_range(-2.0..2.0)).collect();
        let with_zero_frame = |rows: &[f64]| {
            let mut data = rows.to_vec();
            data.extend(std::iter::repeat(0.0).take(d));
            data
        };

        // Loss: sum of the output log-probs (a scalar over all symbols).
        let eval = |rows_probe: &[f64], pred_probe: &[f64], p: &ModelParams| -> f64 {
            let mut g = Graph::new();
            let bound = p.bind(&mut g);
            let chunk = g.leaf(Tensor::matrix(m + 1, d, with_zero_frame(rows_probe)).unwrap());
            let h_pred = g.leaf(Tensor::matrix(1, d, pred_probe.to_vec()).unwrap());
            let (logp, _) = attention_join(&mut g, chunk, h_pred, &bound, &cfg.joiner).unwrap();
            let s = g.sum(logp).unwrap();
            g.scalar_value(s)
        };

        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let chunk = g.leaf(Tensor::matrix(m + 1, d, with_zero_frame(&real_rows)).unwrap());
        let h_pred = g.leaf(Tensor::matrix(1, d, pred_data.clone()).unwrap());
        let (logp, _) = attention_join(&mut g, chunk, h_pred, &bound, &cfg.joiner).unwrap();
        let s = g.sum(logp).unwrap();
        g.backward(s).unwrap();

        // Inputs.
        let num = finite_diff(|probe| eval(probe, &pred_data, &params), &real_rows, 1e-5);
        let chunk_grad = &g.grad(chunk).unwrap()[..m * d];
        assert!(max_rel_err(chunk_grad, &num, 1e-3) < 1e-4, "chunk grad");
        let num = finite_diff(|probe| eval(&real_rows, probe, &params), &pred_data, 1e-5);
        assert!(max_rel_err(g.grad(h_pred).unwrap(), &num, 1e-3) < 1e-4, "pred grad");

        // Every joiner weight matrix.
        for name in [names::JOIN_W_Q, names::JOIN_W_K, names::JOIN_W_V, names::JOIN_W_OUT] {
            let base = params.get(name).unwrap().data().to_vec();
            let shape = params.get(name).unwrap().shape().to_vec();
            let num = finite_diff(
                |probe| {
                    let mut p2 = params.clone();
                    *p2.get_mut(name).unwrap() =
                        Tensor::new(shape.clone(), probe.to_vec()).unwrap();
                    eval(&real_rows, &pred_data, &p2)
                },
                &base,
                1e-5,
            );
            let analytic = g.grad(bound.var(name)).unwrap();
            assert!(
                max_rel_err(analytic, &num, 1e-3) < 1e-4,
                "{name} grad mismatch"
            );
        }
    }

    #[test]
    fn additive_join_gradient_wrt_h_enc() {
        let cfg = config(Variant::Rnnt, 5, 1, 4);
        let params = cfg.init_params(2).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let enc_data: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();
        let pred_data: Vec<f64> = (0..5).map(|_| rng.random_range(-2.0..2.0)).collect();

        let eval = |enc_probe: &[f64]| {
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let h_enc = g.leaf(Tensor::matrix(1, 5, enc_probe.to_vec()).unwrap());
            let h_pred = g.leaf(Tensor::matrix(1, 5, pred_data.clone()).unwrap());
            let logp = additive_join(&mut g, h_enc, h_pred, &bound).unwrap();
            let s = g.sum(logp).unwrap();
            g.scalar_value(s)
        };
        let numeric = finite_diff(eval, &enc_data, 1e-5);

        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let h_enc = g.leaf(Tensor::matrix(1, 5, enc_data).unwrap());
        let h_pred = g.leaf(Tensor::matrix(1, 5, pred_data.clone()).unwrap());
        let logp = additive_join(&mut g, h_enc, h_pred, &bound).unwrap();
        let s = g.sum(logp).unwrap();
        g.backward(s).unwrap();
        assert!(max_rel_err(g.grad(h_enc).unwrap(), &numeric, 1e-3) < 1e-4);
    }

    #[test]
    fn lattice_shapes_per_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(40);
        for (variant, expect_steps) in [(Variant::Rnnt, 24), (Variant::Chat, 2)] {
            let cfg = config(variant, 4, 2, 4);
            let params = cfg.init_params(1).unwrap();
            let sp = ChunkSpec::new(12, 6, 10.0).unwrap();
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let enc = Tensor::matrix(
                24,
                4,
                (0..96).map(|_| rng.random_range(-1.0..1.0)).collect(),
            )
            .unwrap();
            let ce = partition_tensor(&mut g, enc, &sp).unwrap();
            let target = [1usize, 3, 0];
            let states =
                crate::model::predictor_states(&mut g, &target, &cfg.predictor, &bound).unwrap();
            let lat =
                build_joint_lattice(&mut g, &ce, states, &bound, &cfg.joiner, variant).unwrap();
            assert_eq!(lat.steps(), expect_steps);
            assert_eq!(lat.label_slots(), 4);
            assert_eq!(lat.symbols(), 5);
            assert_eq!(lat.element_count(), expect_steps * 4 * 5);

            // Every slice exponentiates to one.
            for s in 0..lat.steps() {
                for u in 0..lat.label_slots() {
                    let total: f64 = g.data(lat.cell(s, u)).iter().map(|v| v.exp()).sum();
                    assert_close(total, 1.0, 1e-12, "cell prob mass");
                }
            }
        }
    }

    #[test]
    fn chat_lattice_is_chunk_factor_smaller() {
        // T = 96, C = 12: element counts shrink by exactly 1/12.
        let t: usize = 96;
        let c = 12;
        let slots = 5;
        let symbols = 9;
        let rnnt_elems = t * slots * symbols;
        let chat_elems = t.div_ceil(c) * slots * symbols;
        assert_eq!(chat_elems * 12, rnnt_elems);
    }

    #[test]
    fn chat_config_requires_matching_pred_and_joint_dims() {
        let mut cfg = config(Variant::Chat, 4, 2, 3);
        cfg.joiner.d_pred = 8;
        assert!(cfg.joiner.validate(Variant::Chat).is_err());
        assert!(cfg.joiner.validate(Variant::Rnnt).is_ok());
    }
}
