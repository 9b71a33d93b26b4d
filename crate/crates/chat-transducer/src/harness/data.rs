//! Line-oriented data records and the synthetic separable task.
//!
//! One record per line, whitespace-separated:
//!   <utterance id> <T_in> <input_dim> <T_in * input_dim floats> <target ids>
//!
//! Floats use shortest round-trip formatting, so writing and re-reading a
//! file is value-exact and generation is byte-deterministic per seed.

use std::io::{BufRead, Write};
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::numerics::Tensor;
use crate::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct DataRecord {
    pub utterance_id: String,
    /// [T_in, input_dim] feature matrix.
    pub features: Tensor,
    pub targets: Vec<usize>,
}

impl DataRecord {
    pub fn input_frames(&self) -> usize {
        self.features.shape()[0]
    }

    pub fn input_dim(&self) -> usize {
        self.features.shape()[1]
    }
}

/// Parameters of the synthetic task: each sampled token becomes `repeat`
/// consecutive frames of that token's fixed random embedding plus Gaussian
/// noise.
#[derive(Clone, Copy, Debug)]
pub struct GenConfig {
    pub n_utts: usize,
    pub vocab_size: usize,
    pub repeat: usize,
    pub noise: f64,
    pub seed: u64,
    pub input_dim: usize,
    pub min_tokens: usize,
    pub max_tokens: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig {
            n_utts: 64,
            vocab_size: 16,
            repeat: 4,
            noise: 0.0,
            seed: 0,
            input_dim: 8,
            min_tokens: 3,
            max_tokens: 8,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if self.repeat == 0 {
            return Err(Error::Config("gen: repeat must be >= 1".into()));
        }
        if self.n_utts == 0 || self.vocab_size == 0 || self.input_dim == 0 {
            return Err(Error::Config("gen: counts and dims must be positive".into()));
        }
        if self.min_tokens == 0 || self.min_tokens > self.max_tokens {
            return Err(Error::Config(
                "gen: need 1 <= min_tokens <= max_tokens".into(),
            ));
        }
        if !(self.noise >= 0.0) {
            return Err(Error::Config("gen: noise must be >= 0".into()));
        }
        Ok(())
    }

    /// The fixed random embedding of each vocabulary token, the class
    /// signal of the task.
    pub fn token_embeddings(&self) -> Vec<Vec<f64>> {
        // Separate stream so data generation below sees the same
        // embeddings regardless of utterance count.
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed.wrapping_mul(2).wrapping_add(1));
        (0..self.vocab_size)
            .map(|_| (0..self.input_dim).map(|_| rng.random_range(-1.0..1.0)).collect())
            .collect()
    }
}

/// Deterministically sample the synthetic corpus.
pub fn gen_synthetic(cfg: &GenConfig) -> Result<Vec<DataRecord>> {
    cfg.validate()?;
    let embeddings = cfg.token_embeddings();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, 1.0).expect("unit normal");
    let mut records = Vec::with_capacity(cfg.n_utts);
    for i in 0..cfg.n_utts {
        let len = rng.random_range(cfg.min_tokens..=cfg.max_tokens);
        let targets: Vec<usize> = (0..len).map(|_| rng.random_range(0..cfg.vocab_size)).collect();
        let mut data = Vec::with_capacity(len * cfg.repeat * cfg.input_dim);
        for &token in &targets {
            for _ in 0..cfg.repeat {
                for d in 0..cfg.input_dim {
                    let jitter = if cfg.noise > 0.0 {
                        cfg.noise * noise.sample(&mut rng)
                    } else {
                        0.0
                    };
                    data.push(embeddings[token][d] + jitter);
                }
            }
        }
        records.push(DataRecord {
            utterance_id: format!("utt{i:04}"),
            features: Tensor::matrix(len * cfg.repeat, cfg.input_dim, data)?,
            targets,
        });
    }
    Ok(records)
}

pub fn write_records<W: Write>(mut w: W, records: &[DataRecord]) -> Result<()> {
    for r in records {
        write!(w, "{} {} {}", r.utterance_id, r.input_frames(), r.input_dim())?;
        for v in r.features.data() {
            write!(w, " {v}")?;
        }
        for t in &r.targets {
            write!(w, " {t}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}

pub fn read_records<R: BufRead>(r: R) -> Result<Vec<DataRecord>> {
    let mut records = Vec::new();
    for (lineno, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let bad = |why: &str| Error::Data(format!("record line {}: {why}", lineno + 1));
        let mut fields = line.split_whitespace();
        let id = fields.next().ok_or_else(|| bad("missing utterance id"))?;
        let t_in: usize = fields
            .next()
            .ok_or_else(|| bad("missing frame count"))?
            .parse()
            .map_err(|_| bad("bad frame count"))?;
        let dim: usize = fields
            .next()
            .ok_or_else(|| bad("missing input dim"))?
            .parse()
            .map_err(|_| bad("bad input dim"))?;
        let mut data = Vec::with_capacity(t_in * dim);
        for _ in 0..t_in * dim {
            let v: f64 = fields
                .next()
                .ok_or_else(|| bad("missing feature value"))?
                .parse()
                .map_err(|_| bad("bad feature value"))?;
            data.push(v);
        }
        let targets: Vec<usize> = fields
            .map(|f| f.parse().map_err(|_| bad("bad target id")))
            .collect::<Result<_>>()?;
        records.push(DataRecord {
            utterance_id: id.to_string(),
            features: Tensor::matrix(t_in, dim, data)?,
            targets,
        });
    }
    if records.is_empty() {
        return Err(Error::Data("no records in data file".into()));
    }
    Ok(records)
}

pub fn write_records_file(path: impl AsRef<Path>, records: &[DataRecord]) -> Result<()> {
    let mut buf = Vec::new();
    write_records(&mut buf, records)?;
    Ok(std::fs::write(path, buf)?)
}

pub fn read_records_file(path: impl AsRef<Path>) -> Result<Vec<DataRecord>> {
    let file = std::fs::File::open(&path).map_err(|e| {
        Error::Data(format!("cannot open '{}': {e}", path.as_ref().display()))
    })?;
    read_records(std::io::BufReader::new(file))
}

/// Check records against a run's expectations before any work starts.
pub fn validate_records(
    records: &[DataRecord],
    vocab_size: usize,
    stack_factor: usize,
) -> Result<usize> {
    let dim = records[0].input_dim();
    for r in records {
        if r.input_dim() != dim {
            return Err(Error::Data(format!(
                "utterance '{}': input dim {} differs from {}",
                r.utterance_id,
                r.input_dim(),
                dim
            )));
        }
        if r.input_frames() < stack_factor {
            return Err(Error::Data(format!(
                "utterance '{}': {} frames < stack_factor {}",
                r.utterance_id,
                r.input_frames(),
                stack_factor
            )));
        }
        if let Some(&id) = r.targets.iter().find(|&&t| t >= vocab_size) {
            return Err(Error::VocabOutOfRange {
                id,
                vocab: vocab_size,
            });
        }
    }
    Ok(dim)
}
