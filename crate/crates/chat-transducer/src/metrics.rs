//! Evaluation and bookkeeping: word error rate, emission-timestamp latency,
//! joint-lattice memory estimation, and alignment export.
//!
//! Alignment dumps are line-oriented with one self-contained, versioned
//! record per utterance: the chunk-level token path plus, for attention
//! decodes, per-emission frame heat (head-summed attention weights over the
//! emitting chunk's positions, zero frame included). Heat is normalized by
//! the head count so rows sum to one; raw head-sums are emitted under a
//! flag. Floats are written in shortest round-trip form, so parsing a dump
//! recovers the exact values.

use std::io::{BufRead, Write};

use crate::chunking::ChunkSpec;
use crate::decode::DecodePath;
use crate::{Error, Result, Variant};

pub const ALIGNMENT_FORMAT_VERSION: u32 = 1;

// ── Word error rate ──────────────────────────────────────────────────

/// Unit-cost Levenshtein distance between token slices.
pub fn edit_distance<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    // Two-row DP over the shorter side.
    let (short, long) = if a.len() <= b.len() { (a, b) } else { (b, a) };
    let mut prev: Vec<usize> = (0..=short.len()).collect();
    let mut cur = vec![0; short.len() + 1];
    for (i, lv) in long.iter().enumerate() {
        cur[0] = i + 1;
        for (j, sv) in short.iter().enumerate() {
            let sub = prev[j] + usize::from(lv != sv);
            cur[j + 1] = sub.min(prev[j + 1] + 1).min(cur[j] + 1);
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[short.len()]
}

/// Word error rate: edit distance over the reference length. Errors on an
/// empty reference (the rate is undefined).
pub fn wer<T: PartialEq>(reference: &[T], hypothesis: &[T]) -> Result<f64> {
    if reference.is_empty() {
        return Err(Error::EmptyReference);
    }
    Ok(edit_distance(reference, hypothesis) as f64 / reference.len() as f64)
}

// ── Emission-timestamp latency ───────────────────────────────────────

/// Per-utterance emission timestamps: every token is released at its
/// chunk's boundary.
#[derive(Clone, Debug, PartialEq)]
pub struct LatencyReport {
    pub per_token_ms: Vec<f64>,
}

impl LatencyReport {
    /// Mean emission timestamp; undefined (None) for an empty path.
    pub fn mean_ms(&self) -> Option<f64> {
        if self.per_token_ms.is_empty() {
            None
        } else {
            Some(self.per_token_ms.iter().sum::<f64>() / self.per_token_ms.len() as f64)
        }
    }
}

/// Timestamp of each emission: a token from chunk n gets
/// (n + 1) · C · s · frame_duration_ms. RNN-T emit steps index encoder
/// frames and are mapped to their covering chunk first; CHAT emit steps are
/// chunk indices already.
pub fn emission_timestamps(
    path: &DecodePath,
    spec: &ChunkSpec,
    stack_factor: usize,
) -> LatencyReport {
    let chunk_ms = spec.chunk_size as f64 * stack_factor as f64 * spec.frame_duration_ms;
    let per_token_ms = path
        .emit_steps
        .iter()
        .map(|&step| {
            let chunk = match path.variant {
                Variant::Rnnt => spec.chunk_of(step),
                Variant::Chat => step,
            };
            (chunk + 1) as f64 * chunk_ms
        })
        .collect();
    LatencyReport { per_token_ms }
}

/// One row of the latency CSV (columns: utterance_id, n_tokens,
/// mean_ts_ms).
#[derive(Clone, Debug)]
pub struct LatencyRow {
    pub utterance_id: String,
    pub n_tokens: usize,
    pub mean_ts_ms: Option<f64>,
}

pub fn write_latency_csv<W: Write>(mut w: W, rows: &[LatencyRow]) -> Result<()> {
    writeln!(w, "utterance_id,n_tokens,mean_ts_ms")?;
    for row in rows {
        match row.mean_ts_ms {
            Some(ms) => writeln!(w, "{},{},{ms}", row.utterance_id, row.n_tokens)?,
            None => writeln!(w, "{},{},undefined", row.utterance_id, row.n_tokens)?,
        }
    }
    Ok(())
}

// ── Joint-lattice memory ─────────────────────────────────────────────

/// Closed-form joint-tensor sizes for a batch: RNN-T holds
/// B x T x (U+1) x (V+1) elements, CHAT shrinks T to ceil(T / C).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LatticeMemory {
    pub rnnt_bytes: u64,
    pub chat_bytes: u64,
    /// chat / rnnt = ceil(T / C) / T, exactly.
    pub ratio: f64,
}

pub fn lattice_memory(
    batch: usize,
    frames: usize,
    labels: usize,
    vocab: usize,
    chunk_size: usize,
    bytes_per_element: usize,
) -> LatticeMemory {
    assert!(frames > 0 && chunk_size > 0, "frames and chunk size must be positive");
    let chunks = frames.div_ceil(chunk_size);
    let cell = (labels as u64 + 1) * (vocab as u64 + 1) * bytes_per_element as u64;
    let rnnt_bytes = batch as u64 * frames as u64 * cell;
    let chat_bytes = batch as u64 * chunks as u64 * cell;
    LatticeMemory {
        rnnt_bytes,
        chat_bytes,
        ratio: chunks as f64 / frames as f64,
    }
}

// ── Alignment export ─────────────────────────────────────────────────

/// One emission of an alignment record.
#[derive(Clone, Debug, PartialEq)]
pub struct Emission {
    pub token: usize,
    /// Chunk index (CHAT) or frame index (RNN-T) of the emission.
    pub step: usize,
    /// Normalized frame heat over the emitting chunk's positions (sums to
    /// 1); absent for decodes without attention records.
    pub heat: Option<Vec<f64>>,
    /// Raw head-summed weights (sums to the head count); written only when
    /// requested.
    pub raw_heat: Option<Vec<f64>>,
}

/// Self-contained per-utterance alignment record.
#[derive(Clone, Debug, PartialEq)]
pub struct AlignmentDump {
    pub utterance_id: String,
    pub variant: Variant,
    pub emissions: Vec<Emission>,
}

/// Build the alignment record for one decoded utterance.
pub fn alignment_from_path(
    utterance_id: &str,
    path: &DecodePath,
    include_raw: bool,
) -> AlignmentDump {
    let emissions = path
        .tokens
        .iter()
        .enumerate()
        .map(|(i, &token)| {
            let record = path.attn.get(i);
            Emission {
                token,
                step: path.emit_steps[i],
                heat: record.map(|r| r.normalized()),
                raw_heat: record.filter(|_| include_raw).map(|r| r.summed()),
            }
        })
        .collect();
    AlignmentDump {
        utterance_id: utterance_id.to_string(),
        variant: path.variant,
        emissions,
    }
}

fn join_floats(values: &[f64]) -> String {
    values
        .iter()
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join(",")
}

pub fn write_alignments<W: Write>(mut w: W, dumps: &[AlignmentDump]) -> Result<()> {
    for dump in dumps {
        writeln!(
            w,
            "record v={} utt={} variant={} emissions={}",
            ALIGNMENT_FORMAT_VERSION,
            dump.utterance_id,
            dump.variant,
            dump.emissions.len()
        )?;
        for e in &dump.emissions {
            write!(w, "emit token={} step={}", e.token, e.step)?;
            if let Some(heat) = &e.heat {
                write!(w, " heat={}", join_floats(heat))?;
            }
            if let Some(raw) = &e.raw_heat {
                write!(w, " raw={}", join_floats(raw))?;
            }
            writeln!(w)?;
        }
        writeln!(w, "end")?;
    }
    Ok(())
}

pub fn read_alignments<R: BufRead>(r: R) -> Result<Vec<AlignmentDump>> {
    let bad = |line: &str, why: &str| Error::Data(format!("alignment dump: {why}: '{line}'"));
    let mut dumps = Vec::new();
    let mut current: Option<AlignmentDump> = None;
    for line in r.lines() {
        let line = line?;
        if line.is_empty() {
            continue;
        }
        if let Some(rest) = line.strip_prefix("record ") {
            if current.is_some() {
                return Err(bad(&line, "record inside record"));
            }
            let mut version = None;
            let mut utt = None;
            let mut variant = None;
            for field in rest.split_whitespace() {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| bad(&line, "malformed field"))?;
                match key {
                    "v" => {
                        version = Some(
                            value
                                .parse::<u32>()
                                .map_err(|_| bad(&line, "bad version"))?,
                        )
                    }
                    "utt" => utt = Some(value.to_string()),
                    "variant" => variant = Some(value.parse::<Variant>()?),
                    "emissions" => {}
                    _ => return Err(bad(&line, "unknown field")),
                }
            }
            match version {
                Some(ALIGNMENT_FORMAT_VERSION) => {}
                Some(v) => return Err(Error::Data(format!("alignment dump: version {v}"))),
                None => return Err(bad(&line, "missing version")),
            }
            current = Some(AlignmentDump {
                utterance_id: utt.ok_or_else(|| bad(&line, "missing utt"))?,
                variant: variant.ok_or_else(|| bad(&line, "missing variant"))?,
                emissions: Vec::new(),
            });
        } else if let Some(rest) = line.strip_prefix("emit ") {
            let record = current.as_mut().ok_or_else(|| bad(&line, "emit outside record"))?;
            let mut token = None;
            let mut step = None;
            let mut heat = None;
            let mut raw = None;
            for field in rest.split_whitespace() {
                let (key, value) = field
                    .split_once('=')
                    .ok_or_else(|| bad(&line, "malformed field"))?;
                let parse_floats = |v: &str| -> Result<Vec<f64>> {
                    v.split(',')
                        .map(|x| x.parse::<f64>().map_err(|_| bad(&line, "bad float")))
                        .collect()
                };
                match key {
                    "token" => token = Some(value.parse().map_err(|_| bad(&line, "bad token"))?),
                    "step" => step = Some(value.parse().map_err(|_| bad(&line, "bad step"))?),
                    "heat" => heat = Some(parse_floats(value)?),
                    "raw" => raw = Some(parse_floats(value)?),
                    _ => return Err(bad(&line, "unknown field")),
                }
            }
            record.emissions.push(Emission {
                token: token.ok_or_else(|| bad(&line, "missing token"))?,
                step: step.ok_or_else(|| bad(&line, "missing step"))?,
                heat,
                raw_heat: raw,
            });
        } else if line == "end" {
            dumps.push(current.take().ok_or_else(|| bad(&line, "end outside record"))?);
        } else {
            return Err(bad(&line, "unrecognized line"));
        }
    }
    if current.is_some() {
        return Err(Error::Data("alignment dump: unterminated record".into()));
    }
    Ok(dumps)
}
