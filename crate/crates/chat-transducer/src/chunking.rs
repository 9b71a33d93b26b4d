//! Chunk partitioning and chunk-aware attention masks.
//!
//! Encoder outputs are split into non-overlapping chunks of `chunk_size`
//! frames (the last chunk keeps its natural length), and every chunk gets an
//! all-zero frame appended — the attention joiner's attend-to-nothing target
//! for blank emission. The encoder mask limits self-attention to the frame's
//! own chunk plus `left_context` previous chunks.

use crate::numerics::{Graph, Mask, Tensor, Var};
use crate::{Error, Result};

/// Chunk geometry shared by the encoder mask, the joiner, and latency
/// reporting.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ChunkSpec {
    /// Frames per chunk (C >= 1).
    pub chunk_size: usize,
    /// Number of previous chunks visible to self-attention (L >= 0).
    pub left_context: usize,
    /// Milliseconds of audio per encoder frame, for latency reporting.
    pub frame_duration_ms: f64,
}

impl ChunkSpec {
    pub fn new(chunk_size: usize, left_context: usize, frame_duration_ms: f64) -> Result<Self> {
        if chunk_size == 0 {
            return Err(Error::InvalidConfig("chunk_size must be >= 1".into()));
        }
        if !(frame_duration_ms > 0.0) {
            return Err(Error::InvalidConfig(
                "frame_duration_ms must be positive".into(),
            ));
        }
        Ok(ChunkSpec {
            chunk_size,
            left_context,
            frame_duration_ms,
        })
    }

    pub fn chunk_of(&self, frame: usize) -> usize {
        frame / self.chunk_size
    }

    pub fn num_chunks(&self, total_frames: usize) -> usize {
        total_frames.div_ceil(self.chunk_size)
    }
}

/// Encoder output split into chunks, each stored with its appended zero
/// frame: chunk n has `real_lens[n] + 1` rows, the last row exactly zero.
#[derive(Clone, Debug)]
pub struct ChunkedEncoding {
    /// Per-chunk [real_len + 1, d] matrices in the owning graph.
    pub chunks: Vec<Var>,
    /// Real (pre-append) frame count of each chunk.
    pub real_lens: Vec<usize>,
    /// Total real frames across all chunks.
    pub total_frames: usize,
    /// Encoder feature dimension.
    pub dim: usize,
}

impl ChunkedEncoding {
    pub fn num_chunks(&self) -> usize {
        self.chunks.len()
    }

    /// Re-concatenate the real frames of every chunk (drops the zero rows),
    /// recovering the pre-partition encoder output.
    pub fn frames(&self, g: &mut Graph) -> Result<Var> {
        let mut parts = Vec::with_capacity(self.chunks.len());
        for (chunk, &len) in self.chunks.iter().zip(&self.real_lens) {
            parts.push(g.narrow(*chunk, 0, 0, len)?);
        }
        g.concat(0, &parts)
    }

    /// Truncate to the first `n` chunks (for streaming probes).
    pub fn truncated(&self, n: usize) -> ChunkedEncoding {
        let n = n.min(self.chunks.len());
        ChunkedEncoding {
            chunks: self.chunks[..n].to_vec(),
            real_lens: self.real_lens[..n].to_vec(),
            total_frames: self.real_lens[..n].iter().sum(),
            dim: self.dim,
        }
    }
}

/// Split `enc` ([T, d], T >= 1) into ceil(T / C) chunks and append the zero
/// frame to each. The last chunk keeps `T mod C` rows when T mod C != 0; no
/// padding is invented.
pub fn partition(g: &mut Graph, enc: Var, spec: &ChunkSpec) -> Result<ChunkedEncoding> {
    let shape = g.shape(enc).to_vec();
    if shape.len() != 2 {
        return Err(Error::ShapeMismatch {
            op: "partition",
            lhs: shape,
            rhs: vec![],
        });
    }
    let (total, dim) = (shape[0], shape[1]);
    if total == 0 {
        return Err(Error::EmptyInput("partition of zero frames"));
    }
    let c = spec.chunk_size;
    let mut chunks = Vec::new();
    let mut real_lens = Vec::new();
    let mut start = 0;
    while start < total {
        let len = c.min(total - start);
        let body = g.narrow(enc, 0, start, len)?;
        let zero = g.zeros(vec![1, dim]);
        chunks.push(g.concat(0, &[body, zero])?);
        real_lens.push(len);
        start += len;
    }
    Ok(ChunkedEncoding {
        chunks,
        real_lens,
        total_frames: total,
        dim,
    })
}

/// T x T self-attention mask: frame i may attend frame j iff chunk(j) is
/// within [chunk(i) - L, chunk(i)]. Bidirectional inside a chunk, causal
/// across chunks.
pub fn encoder_mask(total_frames: usize, spec: &ChunkSpec) -> Mask {
    Mask::from_fn(total_frames, total_frames, |i, j| {
        let (ci, cj) = (spec.chunk_of(i), spec.chunk_of(j));
        cj <= ci && ci - cj <= spec.left_context
    })
}

/// Leaf-node partition of a plain tensor, for callers that start from values
/// rather than an in-graph encoder output.
pub fn partition_tensor(g: &mut Graph, enc: Tensor, spec: &ChunkSpec) -> Result<ChunkedEncoding> {
    let v = g.leaf(enc);
    partition(g, v, spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn spec(c: usize, l: usize) -> ChunkSpec {
        ChunkSpec::new(c, l, 10.0).unwrap()
    }

    fn rows(g: &Graph, v: Var) -> usize {
        g.shape(v)[0]
    }

    #[test]
    fn partition_exact_multiple() {
        let mut g = Graph::new();
        let enc = Tensor::from_fn(24, 3, |i, j| (i * 3 + j) as f64);
        let ce = partition_tensor(&mut g, enc, &spec(12, 6)).unwrap();
        assert_eq!(ce.real_lens, vec![12, 12]);
        assert_eq!(ce.num_chunks(), 2);
        for &c in &ce.chunks {
            assert_eq!(rows(&g, c), 13);
        }
    }

    #[test]
    fn partition_with_remainder() {
        let mut g = Graph::new();
        let ce = partition_tensor(&mut g, Tensor::zeros(vec![25, 2]), &spec(12, 6)).unwrap();
        assert_eq!(ce.real_lens, vec![12, 12, 1]);
    }

    #[test]
    fn partition_short_input_single_chunk() {
        let mut g = Graph::new();
        let ce = partition_tensor(&mut g, Tensor::zeros(vec![5, 2]), &spec(12, 6)).unwrap();
        assert_eq!(ce.real_lens, vec![5]);
        assert_eq!(ce.num_chunks(), 1);
    }

    #[test]
    fn partition_empty_input_errors() {
        let mut g = Graph::new();
        let err = partition_tensor(&mut g, Tensor::zeros(vec![0, 2]), &spec(4, 0));
        assert!(matches!(err, Err(Error::EmptyInput(_))));
    }

    #[test]
    fn appended_rows_are_exactly_zero() {
        let mut g = Graph::new();
        let enc = Tensor::from_fn(7, 4, |i, j| 1.0 + (i + j) as f64);
        let ce = partition_tensor(&mut g, enc, &spec(3, 1)).unwrap();
        for (chunk, &len) in ce.chunks.iter().zip(&ce.real_lens) {
            let d = g.data(*chunk);
            assert!(d[len * 4..(len + 1) * 4].iter().all(|&v| v == 0.0));
        }
    }

    #[test]
    fn mask_no_left_context() {
        let m = encoder_mask(4, &spec(2, 0));
        for i in 0..2 {
            for j in 0..4 {
                assert_eq!(m.allowed(i, j), j < 2, "frame {i} -> {j}");
            }
        }
        for i in 2..4 {
            for j in 0..4 {
                assert_eq!(m.allowed(i, j), j >= 2, "frame {i} -> {j}");
            }
        }
    }

    #[test]
    fn mask_one_chunk_left_context() {
        let m = encoder_mask(6, &spec(2, 1));
        // Frame 4 (chunk 2) sees chunks 1 and 2, i.e. frames 2..=5.
        for j in 0..6 {
            assert_eq!(m.allowed(4, j), (2..6).contains(&j), "frame 4 -> {j}");
        }
    }

    #[test]
    fn mask_same_chunk_is_bidirectional() {
        let sp = spec(3, 2);
        let m = encoder_mask(9, &sp);
        for i in 0..9 {
            for j in 0..9 {
                if sp.chunk_of(i) == sp.chunk_of(j) {
                    assert!(m.allowed(i, j));
                }
            }
        }
    }

    proptest! {
        #[test]
        fn partition_then_frames_reconstructs_input(
            t in 1usize..40,
            d in 1usize..5,
            c in 1usize..15,
            seed in 0u64..64,
        ) {
            use rand::{Rng, SeedableRng};
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let data: Vec<f64> = (0..t * d).map(|_| rng.random_range(-1.0..1.0)).collect();
            let enc = Tensor::matrix(t, d, data.clone()).unwrap();

            let mut g = Graph::new();
            let ce = partition_tensor(&mut g, enc, &spec(c, 2)).unwrap();
            prop_assert_eq!(ce.num_chunks(), t.div_ceil(c));
            prop_assert_eq!(ce.real_lens.iter().sum::<usize>(), t);
            let rec = ce.frames(&mut g).unwrap();
            prop_assert_eq!(g.data(rec), &data[..]);
        }
    }
}
