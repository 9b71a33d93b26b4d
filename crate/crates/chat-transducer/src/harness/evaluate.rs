//! Decode-and-score: greedy decoding over a record set, corpus WER,
//! latency rows, and alignment dumps.

use super::config::RunConfig;
use super::data::{validate_records, DataRecord};
use crate::decode::{count_joiner_calls, decode_utterance, DecodePath};
use crate::metrics::{
    alignment_from_path, edit_distance, emission_timestamps, AlignmentDump, LatencyRow,
};
use crate::model::ModelParams;
use crate::{Error, Result};

#[derive(Debug)]
pub struct Evaluation {
    pub paths: Vec<DecodePath>,
    /// Corpus WER: total edit distance over total reference tokens.
    pub wer: f64,
    pub total_joiner_calls: usize,
    pub latency: Vec<LatencyRow>,
}

/// Decode every record (batch = 1 greedy) and score against its targets.
pub fn evaluate(
    cfg: &RunConfig,
    params: &ModelParams,
    records: &[DataRecord],
) -> Result<Evaluation> {
    let input_dim = validate_records(records, cfg.vocab_size, cfg.stack_factor)?;
    let model_cfg = cfg.model_config(input_dim)?;
    let spec = cfg.chunk_spec();
    let decode_cfg = cfg.decode_config();

    let mut paths = Vec::with_capacity(records.len());
    let mut edits = 0usize;
    let mut ref_tokens = 0usize;
    let mut calls = 0usize;
    let mut latency = Vec::with_capacity(records.len());
    for record in records {
        let path = decode_utterance(params, &model_cfg, &spec, &decode_cfg, &record.features)?;
        edits += edit_distance(&record.targets, &path.tokens);
        ref_tokens += record.targets.len();
        calls += count_joiner_calls(&path);
        let report = emission_timestamps(&path, &spec, cfg.stack_factor);
        latency.push(LatencyRow {
            utterance_id: record.utterance_id.clone(),
            n_tokens: path.tokens.len(),
            mean_ts_ms: report.mean_ms(),
        });
        paths.push(path);
    }
    if ref_tokens == 0 {
        return Err(Error::EmptyReference);
    }
    Ok(Evaluation {
        paths,
        wer: edits as f64 / ref_tokens as f64,
        total_joiner_calls: calls,
        latency,
    })
}

/// Alignment dumps for already-decoded paths, in record order.
pub fn alignments(
    records: &[DataRecord],
    paths: &[DecodePath],
    include_raw: bool,
) -> Vec<AlignmentDump> {
    records
        .iter()
        .zip(paths)
        .map(|(r, p)| alignment_from_path(&r.utterance_id, p, include_raw))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::data::{gen_synthetic, GenConfig};
    use crate::Variant;

    #[test]
    fn evaluation_scores_untrained_model() {
        let cfg = RunConfig {
            variant: Variant::Chat,
            chunk_size: 4,
            num_heads: 2,
            d_enc: 8,
            d_pred: 8,
            d_joint: 8,
            vocab_size: 6,
            ..RunConfig::default()
        };
        let records = gen_synthetic(&GenConfig {
            n_utts: 4,
            vocab_size: 6,
            repeat: 2,
            input_dim: 4,
            min_tokens: 2,
            max_tokens: 3,
            ..GenConfig::default()
        })
        .unwrap();
        let params = cfg.model_config(4).unwrap().init_params(0).unwrap();
        let eval = evaluate(&cfg, &params, &records).unwrap();
        assert_eq!(eval.paths.len(), 4);
        assert!(eval.wer >= 0.0);
        assert_eq!(eval.latency.len(), 4);
        // Joiner calls: steps plus emissions for every utterance.
        let expected: usize = eval
            .paths
            .iter()
            .map(|p| p.blank_count + p.tokens.len())
            .sum();
        assert_eq!(eval.total_joiner_calls, expected);

        let dumps = alignments(&records, &eval.paths, false);
        assert_eq!(dumps.len(), 4);
        assert!(dumps.iter().all(|d| d.variant == Variant::Chat));
    }
}
