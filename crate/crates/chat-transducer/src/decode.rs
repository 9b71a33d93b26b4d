//! Greedy transducer decoding: frame-synchronous for RNN-T,
//! chunk-synchronous for CHAT, plus label-looping batched decoding that is
//! token-identical to per-utterance greedy.
//!
//! At every decision step the joiner's argmax either emits a token (the
//! decoder stays at the step and refreshes the predictor state) or a blank
//! (the decoder advances). A cap on consecutive non-blank emissions forces a
//! blank on pathological untrained models. Ties break toward the lowest
//! symbol id, which keeps batched and sequential decoding bit-identical.

use crate::chunking::{partition, ChunkSpec, ChunkedEncoding};
use crate::joiner::{
    attend, project_chunk, project_query, AttentionRecord, ProjectedChunk, ProjectedQuery,
};
use crate::model::{self, names, BoundParams, ModelConfig, ModelParams};
use crate::numerics::{Graph, Tensor, Var};
use crate::{Error, Result, Variant};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DecodeConfig {
    /// Consecutive non-blank emissions allowed at one step before a blank
    /// is forced.
    pub max_symbols_per_step: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            max_symbols_per_step: 10,
        }
    }
}

impl DecodeConfig {
    pub fn validate(&self) -> Result<()> {
        if self.max_symbols_per_step == 0 {
            return Err(Error::InvalidConfig(
                "max_symbols_per_step must be >= 1".into(),
            ));
        }
        Ok(())
    }
}

/// Result of decoding one utterance.
#[derive(Clone, Debug)]
pub struct DecodePath {
    /// Emitted non-blank token ids, in order.
    pub tokens: Vec<usize>,
    /// Decision step of each emission: frame index for RNN-T, chunk index
    /// for CHAT. Non-decreasing.
    pub emit_steps: Vec<usize>,
    /// Attention weights per emission (CHAT only; empty for RNN-T).
    pub attn: Vec<AttentionRecord>,
    /// Total blanks emitted, forced blanks included; always equals the
    /// number of decision steps.
    pub blank_count: usize,
    pub variant: Variant,
}

/// Joiner-call bookkeeping: one call per blank plus one per emission.
pub fn count_joiner_calls(path: &DecodePath) -> usize {
    path.blank_count + path.tokens.len()
}

/// Argmax with ties broken toward the lowest id.
fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate().skip(1) {
        if v > values[best] {
            best = i;
        }
    }
    best
}

/// Variant-specific cached projections of the current predictor state.
enum PredCache {
    Rnnt { pred_proj: Var },
    Chat { query: ProjectedQuery },
}

/// Cursor state of one utterance's greedy decode. One `advance` performs at
/// most one joiner call, so a batch of these can be driven in lockstep.
struct GreedyCursor {
    step: usize,
    steps_total: usize,
    symbols_this_step: usize,
    history: Vec<usize>,
    tokens: Vec<usize>,
    emit_steps: Vec<usize>,
    attn: Vec<AttentionRecord>,
    blank_count: usize,
    pred: Option<PredCache>,
    // RNN-T: cumulative chunk start frames, cached per-step encoder
    // projection. CHAT: lazily projected chunks.
    chunk_starts: Vec<usize>,
    enc_row: Option<(usize, Var)>,
    projected: Vec<Option<ProjectedChunk>>,
}

impl GreedyCursor {
    fn new(chunked: &ChunkedEncoding, variant: Variant) -> Self {
        let steps_total = match variant {
            Variant::Rnnt => chunked.total_frames,
            Variant::Chat => chunked.num_chunks(),
        };
        let mut chunk_starts = Vec::with_capacity(chunked.real_lens.len());
        let mut acc = 0;
        for &len in &chunked.real_lens {
            chunk_starts.push(acc);
            acc += len;
        }
        GreedyCursor {
            step: 0,
            steps_total,
            symbols_this_step: 0,
            history: Vec::new(),
            tokens: Vec::new(),
            emit_steps: Vec::new(),
            attn: Vec::new(),
            blank_count: 0,
            pred: None,
            chunk_starts,
            enc_row: None,
            projected: (0..chunked.num_chunks()).map(|_| None).collect(),
        }
    }

    fn done(&self) -> bool {
        self.step >= self.steps_total
    }

    fn pred_cache(
        &mut self,
        g: &mut Graph,
        bound: &BoundParams,
        cfg: &ModelConfig,
    ) -> Result<()> {
        if self.pred.is_none() {
            let h_pred = model::predict(g, &self.history, &cfg.predictor, bound)?;
            self.pred = Some(match cfg.variant {
                Variant::Rnnt => PredCache::Rnnt {
                    pred_proj: g.matmul(h_pred, bound.var(names::JOIN_W_PRED))?,
                },
                Variant::Chat => PredCache::Chat {
                    query: project_query(g, h_pred, bound, &cfg.joiner)?,
                },
            });
        }
        Ok(())
    }

    /// One greedy iteration: either a forced blank (no joiner call) or one
    /// joiner call followed by emit-or-advance.
    fn advance(
        &mut self,
        g: &mut Graph,
        chunked: &ChunkedEncoding,
        bound: &BoundParams,
        cfg: &ModelConfig,
        decode_cfg: &DecodeConfig,
    ) -> Result<()> {
        debug_assert!(!self.done());
        if self.symbols_this_step >= decode_cfg.max_symbols_per_step {
            self.blank_count += 1;
            self.step += 1;
            self.symbols_this_step = 0;
            return Ok(());
        }
        self.pred_cache(g, bound, cfg)?;

        let blank = cfg.joiner.blank_id();
        let (choice, record) = match (cfg.variant, self.pred.as_ref().unwrap()) {
            (Variant::Rnnt, PredCache::Rnnt { pred_proj }) => {
                let pred_proj = *pred_proj;
                let enc_row = match self.enc_row {
                    Some((s, v)) if s == self.step => v,
                    _ => {
                        // Frame `step` lives in the chunk covering it; later
                        // chunks are never touched.
                        let chunk_idx = match self.chunk_starts.binary_search(&self.step) {
                            Ok(i) => i,
                            Err(i) => i - 1,
                        };
                        let offset = self.step - self.chunk_starts[chunk_idx];
                        let frame = g.narrow(chunked.chunks[chunk_idx], 0, offset, 1)?;
                        let row = g.matmul(frame, bound.var(names::JOIN_W_ENC))?;
                        self.enc_row = Some((self.step, row));
                        row
                    }
                };
                let sum = g.add(enc_row, pred_proj)?;
                let hidden = g.relu(sum)?;
                let logits = g.matmul(hidden, bound.var(names::JOIN_W_OUT))?;
                let logp = g.log_softmax(logits, 1)?;
                (argmax(g.data(logp)), None)
            }
            (Variant::Chat, PredCache::Chat { query }) => {
                if self.projected[self.step].is_none() {
                    self.projected[self.step] = Some(project_chunk(
                        g,
                        chunked.chunks[self.step],
                        bound,
                        &cfg.joiner,
                    )?);
                }
                // Split borrows: the query is cloned trivially by reference
                // through the cache entry we just ensured exists.
                let chunk_proj = self.projected[self.step].as_ref().unwrap();
                let (logp, record) = attend(g, chunk_proj, query, bound, &cfg.joiner)?;
                (argmax(g.data(logp)), Some(record))
            }
            _ => unreachable!("cache variant matches config variant"),
        };

        if choice == blank {
            self.blank_count += 1;
            self.step += 1;
            self.symbols_this_step = 0;
        } else {
            self.tokens.push(choice);
            self.emit_steps.push(self.step);
            if let Some(record) = record {
                self.attn.push(record);
            }
            self.history.push(choice);
            self.symbols_this_step += 1;
            self.pred = None; // predictor state must be refreshed
        }
        Ok(())
    }

    fn finish(self, variant: Variant) -> DecodePath {
        DecodePath {
            tokens: self.tokens,
            emit_steps: self.emit_steps,
            attn: self.attn,
            blank_count: self.blank_count,
            variant,
        }
    }
}

/// Greedy decode over an already-encoded, already-chunked utterance.
pub fn greedy_decode(
    g: &mut Graph,
    chunked: &ChunkedEncoding,
    bound: &BoundParams,
    cfg: &ModelConfig,
    decode_cfg: &DecodeConfig,
) -> Result<DecodePath> {
    decode_cfg.validate()?;
    let mut cursor = GreedyCursor::new(chunked, cfg.variant);
    while !cursor.done() {
        cursor.advance(g, chunked, bound, cfg, decode_cfg)?;
    }
    Ok(cursor.finish(cfg.variant))
}

/// Encode, partition, and greedy-decode one utterance from raw features.
pub fn decode_utterance(
    params: &ModelParams,
    cfg: &ModelConfig,
    spec: &ChunkSpec,
    decode_cfg: &DecodeConfig,
    features: &Tensor,
) -> Result<DecodePath> {
    let mut g = Graph::new();
    let bound = params.bind(&mut g);
    let x = g.leaf(features.clone());
    let enc = model::encode(&mut g, x, spec, &cfg.encoder, &bound)?;
    let chunked = partition(&mut g, enc, spec)?;
    greedy_decode(&mut g, &chunked, &bound, cfg, decode_cfg)
}

/// Label-looping batched decode: every sweep advances all unfinished
/// utterances by one predictor/joiner iteration; utterances that emitted
/// blank move to their next step, finished utterances drop out of the
/// sweep. Per-utterance computations are independent, so the output is
/// element-wise identical to sequential `greedy_decode`.
pub fn batched_decode(
    params: &ModelParams,
    cfg: &ModelConfig,
    spec: &ChunkSpec,
    decode_cfg: &DecodeConfig,
    batch: &[Tensor],
) -> Result<Vec<DecodePath>> {
    decode_cfg.validate()?;
    if batch.is_empty() {
        return Err(Error::EmptyInput("batched decode of zero utterances"));
    }

    struct Lane {
        g: Graph,
        chunked: ChunkedEncoding,
        bound: BoundParams,
        cursor: GreedyCursor,
    }

    let mut lanes = Vec::with_capacity(batch.len());
    for features in batch {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let x = g.leaf(features.clone());
        let enc = model::encode(&mut g, x, spec, &cfg.encoder, &bound)?;
        let chunked = partition(&mut g, enc, spec)?;
        let cursor = GreedyCursor::new(&chunked, cfg.variant);
        lanes.push(Lane {
            g,
            chunked,
            bound,
            cursor,
        });
    }

    // Lockstep sweeps over the active set.
    while lanes.iter().any(|l| !l.cursor.done()) {
        for lane in lanes.iter_mut().filter(|l| !l.cursor.done()) {
            lane.cursor
                .advance(&mut lane.g, &lane.chunked, &lane.bound, cfg, decode_cfg)?;
        }
    }

    Ok(lanes
        .into_iter()
        .map(|l| l.cursor.finish(cfg.variant))
        .collect())
}
