//! Chunk-wise attention transducer (CHAT) and a frame-level RNN-T baseline,
//! desk-scale and fully testable on a CPU.
//!
//! The transducer decides, at every decision step, whether to emit a token
//! (stay) or a blank (advance). The RNN-T variant takes one decision step per
//! encoder frame; the CHAT variant takes one per fixed-size chunk and lets an
//! attention joiner look inside the chunk, with an appended all-zero frame as
//! the attend-to-nothing target that backs blank emission. Shrinking the
//! decision axis from T frames to ceil(T/C) chunks shrinks the joint lattice,
//! training memory, and the number of inference joiner calls by the same
//! factor.
//!
//! Everything runs on a minimal f64 tape autodiff ([`numerics`]), so the
//! transducer loss is differentiated through the actual lattice recursion and
//! every gradient is checkable against central finite differences.
//!
//! ## Modules
//!
//! - [`numerics`] — tensors, the operation tape, reverse-mode gradients
//! - [`chunking`] — chunk partitioning, zero-frame append, encoder masks
//! - [`model`] — toy chunk-causal encoder, stateless predictor, checkpoints
//! - [`joiner`] — additive (RNN-T) and multi-head attention (CHAT) joiners
//! - [`lattice`] — transducer loss, enumeration oracle, best alignment path
//! - [`decode`] — greedy and label-looping batched decoding
//! - [`metrics`] — WER, emission timestamps, lattice memory, alignment dumps
//! - [`harness`] — config files, synthetic data, training, bench, gradcheck
//!
//! ## Examples
//!
//! One runnable example per capability, in rough reading order:
//!
//! ```bash
//! cargo run --example tensor_gradients    # tape autodiff vs finite differences
//! cargo run --example chunked_encoder     # chunk masks and causality probes
//! cargo run --example attention_joiner    # the attention joiner, worked by hand
//! cargo run --example lattice_loss        # lattice loss vs enumeration oracle
//! cargo run --example greedy_decode       # chunk-synchronous greedy decoding
//! cargo run --example batched_decode      # label-looping batched inference
//! cargo run --example train_toy           # SGD on the synthetic task
//! cargo run --example alignment_export    # attention-derived frame alignments
//! cargo run --example efficiency_bench    # chunk-size sweep: memory and speed
//! ```
//!
//! ## CLI
//!
//! The `chat` binary wires the same library calls into subcommands driven by
//! a key=value config file:
//!
//! ```bash
//! cargo run --bin chat -- gen-data --config run.cfg
//! cargo run --bin chat -- train    --config run.cfg
//! cargo run --bin chat -- decode   --config run.cfg
//! cargo run --bin chat -- align    --config run.cfg
//! cargo run --bin chat -- bench    --config run.cfg --chunk-sizes 6,12,24
//! cargo run --bin chat -- gradcheck --config run.cfg
//! ```

pub mod chunking;
pub mod decode;
pub mod harness;
pub mod joiner;
pub mod lattice;
pub mod metrics;
pub mod model;
pub mod numerics;

mod error;

pub use error::{Error, Result};

/// Which transducer variant a model, lattice, or decode path belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variant {
    /// Frame-synchronous baseline: one decision step per encoder frame,
    /// additive joiner.
    Rnnt,
    /// Chunk-synchronous: one decision step per chunk, attention joiner.
    Chat,
}

impl Variant {
    pub fn as_str(self) -> &'static str {
        match self {
            Variant::Rnnt => "rnnt",
            Variant::Chat => "chat",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rnnt" => Ok(Variant::Rnnt),
            "chat" => Ok(Variant::Chat),
            other => Err(Error::Config(format!(
                "variant must be 'rnnt' or 'chat', got '{other}'"
            ))),
        }
    }
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[cfg(test)]
pub(crate) mod test_support {
    //! Shared helpers for unit tests: finite differences and tolerance checks.

    /// Central finite-difference gradient of a scalar function of a flat
    /// input vector.
    pub fn finite_diff<F>(f: F, x: &[f64], h: f64) -> Vec<f64>
    where
        F: Fn(&[f64]) -> f64,
    {
        let mut grad = vec![0.0; x.len()];
        let mut probe = x.to_vec();
        for i in 0..x.len() {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            grad[i] = (up - down) / (2.0 * h);
        }
        grad
    }

    /// Max relative error between analytic and numerical gradients. The
    /// denominator floor keeps finite-difference noise on near-zero entries
    /// from registering as error.
    pub fn max_rel_err(analytic: &[f64], numeric: &[f64], floor: f64) -> f64 {
        assert_eq!(analytic.len(), numeric.len());
        analytic
            .iter()
            .zip(numeric)
            .map(|(a, n)| (a - n).abs() / a.abs().max(n.abs()).max(floor))
            .fold(0.0, f64::max)
    }

    pub fn assert_close(actual: f64, expected: f64, tol: f64, what: &str) {
        assert!(
            (actual - expected).abs() <= tol,
            "{what}: got {actual}, expected {expected} (tol {tol})"
        );
    }
}
