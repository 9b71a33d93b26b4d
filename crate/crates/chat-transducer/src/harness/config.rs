//! Run configuration: a plain-text key=value file with '#' comments.
//!
//! Every key is validated with a typed error before any work starts and
//! unknown keys are rejected. CLI flags override file values. Defaults
//! mirror the reference configuration: chunk_size 12, left_context 6,
//! num_heads 4.

use std::path::{Path, PathBuf};

use crate::chunking::ChunkSpec;
use crate::decode::DecodeConfig;
use crate::joiner::JoinerConfig;
use crate::model::{EncoderConfig, ModelConfig, PredictorConfig};
use crate::{Error, Result, Variant};

/// Milliseconds of audio per (pre-stacking) encoder frame.
pub const FRAME_DURATION_MS: f64 = 10.0;

/// Self-attention layers used by the CLI harness's encoder.
pub const HARNESS_SA_LAYERS: usize = 1;

/// Predictor context used by the CLI harness. Three tokens: with the
/// recency-weighted predictor state and 3-token chunks, a state collision
/// inside one chunk would need a 4-token constant run, which cannot occur —
/// so greedy exact recovery is not structurally blocked.
pub const HARNESS_CONTEXT_SIZE: usize = 3;

#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub variant: Variant,
    pub chunk_size: usize,
    pub left_context: usize,
    pub num_heads: usize,
    pub d_enc: usize,
    pub d_pred: usize,
    pub d_joint: usize,
    pub vocab_size: usize,
    pub stack_factor: usize,
    pub lr: f64,
    pub steps: usize,
    pub batch: usize,
    pub seed: u64,
    pub max_symbols_per_step: usize,
    pub data: PathBuf,
    pub out_dir: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            variant: Variant::Chat,
            chunk_size: 12,
            left_context: 6,
            num_heads: 4,
            d_enc: 16,
            d_pred: 16,
            d_joint: 16,
            vocab_size: 16,
            stack_factor: 1,
            lr: 0.1,
            steps: 1000,
            batch: 8,
            seed: 0,
            max_symbols_per_step: 10,
            data: PathBuf::from("data.txt"),
            out_dir: PathBuf::from("out"),
        }
    }
}

impl RunConfig {
    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(&path).map_err(|e| {
            Error::Config(format!("cannot read '{}': {e}", path.as_ref().display()))
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = RunConfig::default();
        for (lineno, raw) in text.lines().enumerate() {
            let line = match raw.find('#') {
                Some(i) => &raw[..i],
                None => raw,
            }
            .trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::Config(format!("line {}: expected key=value, got '{line}'", lineno + 1))
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Set one key from its text form; the entry point for both file lines
    /// and CLI flag overrides.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        fn num<T: std::str::FromStr>(key: &str, value: &str, expected: &str) -> Result<T> {
            value.parse().map_err(|_| {
                Error::Config(format!("key '{key}': expected {expected}, got '{value}'"))
            })
        }
        match key {
            "variant" => self.variant = value.parse()?,
            "chunk_size" => self.chunk_size = num(key, value, "a positive integer")?,
            "left_context" => self.left_context = num(key, value, "an integer >= 0")?,
            "num_heads" => self.num_heads = num(key, value, "a positive integer")?,
            "d_enc" => self.d_enc = num(key, value, "a positive integer")?,
            "d_pred" => self.d_pred = num(key, value, "a positive integer")?,
            "d_joint" => self.d_joint = num(key, value, "a positive integer")?,
            "vocab_size" => self.vocab_size = num(key, value, "a positive integer")?,
            "stack_factor" => self.stack_factor = num(key, value, "a positive integer")?,
            "lr" => self.lr = num(key, value, "a number")?,
            "steps" => self.steps = num(key, value, "an integer >= 0")?,
            "batch" => self.batch = num(key, value, "a positive integer")?,
            "seed" => self.seed = num(key, value, "an integer >= 0")?,
            "max_symbols_per_step" => {
                self.max_symbols_per_step = num(key, value, "a positive integer")?
            }
            "data" => self.data = PathBuf::from(value),
            "out_dir" => self.out_dir = PathBuf::from(value),
            other => return Err(Error::Config(format!("unknown key '{other}'"))),
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let positive: [(&str, usize); 8] = [
            ("chunk_size", self.chunk_size),
            ("num_heads", self.num_heads),
            ("d_enc", self.d_enc),
            ("d_pred", self.d_pred),
            ("d_joint", self.d_joint),
            ("vocab_size", self.vocab_size),
            ("stack_factor", self.stack_factor),
            ("batch", self.batch),
        ];
        for (name, value) in positive {
            if value == 0 {
                return Err(Error::Config(format!("key '{name}' must be >= 1")));
            }
        }
        if self.max_symbols_per_step == 0 {
            return Err(Error::Config("key 'max_symbols_per_step' must be >= 1".into()));
        }
        if !self.lr.is_finite() || self.lr < 0.0 {
            return Err(Error::Config(format!(
                "key 'lr' must be a finite non-negative number, got {}",
                self.lr
            )));
        }
        if self.d_enc % self.num_heads != 0 || self.d_joint % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "num_heads {} must divide d_enc {} and d_joint {}",
                self.num_heads, self.d_enc, self.d_joint
            )));
        }
        if self.variant == Variant::Chat && self.d_pred != self.d_joint {
            return Err(Error::Config(format!(
                "variant chat requires d_pred == d_joint, got {} and {}",
                self.d_pred, self.d_joint
            )));
        }
        Ok(())
    }

    pub fn chunk_spec(&self) -> ChunkSpec {
        ChunkSpec::new(self.chunk_size, self.left_context, FRAME_DURATION_MS)
            .expect("validated config")
    }

    pub fn decode_config(&self) -> DecodeConfig {
        DecodeConfig {
            max_symbols_per_step: self.max_symbols_per_step,
        }
    }

    /// Model built by the CLI harness: one self-attention layer, predictor
    /// context 1, `num_heads` reused for encoder self-attention. The input
    /// dimension comes from the data file.
    pub fn model_config(&self, input_dim: usize) -> Result<ModelConfig> {
        let cfg = ModelConfig {
            variant: self.variant,
            encoder: EncoderConfig {
                input_dim,
                d_enc: self.d_enc,
                num_sa_layers: HARNESS_SA_LAYERS,
                num_heads_enc: self.num_heads,
                stack_factor: self.stack_factor,
            },
            predictor: PredictorConfig {
                vocab_size: self.vocab_size,
                d_pred: self.d_pred,
                context_size: HARNESS_CONTEXT_SIZE,
            },
            joiner: JoinerConfig {
                d_enc: self.d_enc,
                d_pred: self.d_pred,
                d_joint: self.d_joint,
                num_heads: self.num_heads,
                vocab_size: self.vocab_size,
            },
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_keys_comments_and_blanks() {
        let cfg = RunConfig::parse(
            "# a comment\n\
             variant = rnnt\n\
             chunk_size=6   # trailing comment\n\
             \n\
             lr = 0.5\n\
             data = corpus.txt\n",
        )
        .unwrap();
        assert_eq!(cfg.variant, Variant::Rnnt);
        assert_eq!(cfg.chunk_size, 6);
        assert_eq!(cfg.lr, 0.5);
        assert_eq!(cfg.data, PathBuf::from("corpus.txt"));
        // Untouched keys keep defaults.
        assert_eq!(cfg.left_context, 6);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = RunConfig::parse("chunk_sise=12\n").unwrap_err();
        assert!(err.to_string().contains("unknown key 'chunk_sise'"), "{err}");
    }

    #[test]
    fn bad_values_name_key_and_expectation() {
        let err = RunConfig::parse("steps=many\n").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("'steps'") && msg.contains("'many'"), "{msg}");
        assert!(RunConfig::parse("variant=ctc\n").is_err());
        assert!(RunConfig::parse("lr=fast\n").is_err());
    }

    #[test]
    fn cross_field_validation() {
        // num_heads must divide both widths.
        assert!(RunConfig::parse("num_heads=3\n").is_err());
        // CHAT requires d_pred == d_joint.
        assert!(RunConfig::parse("variant=chat\nd_pred=8\n").is_err());
        assert!(RunConfig::parse("variant=rnnt\nd_pred=8\nnum_heads=4\n").is_ok());
        assert!(RunConfig::parse("chunk_size=0\n").is_err());
    }

    #[test]
    fn defaults_mirror_reference_configuration() {
        let cfg = RunConfig::default();
        assert_eq!(cfg.chunk_size, 12);
        assert_eq!(cfg.left_context, 6);
        assert_eq!(cfg.num_heads, 4);
        cfg.validate().unwrap();
    }
}
