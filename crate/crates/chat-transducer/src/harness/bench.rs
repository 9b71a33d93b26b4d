//! Chunk-size sweep: train-step wall-time, decode wall-time, joiner-call
//! counts, and joint-lattice element counts per (chunk size, variant), plus
//! an SVG line chart of the per-step memory proxy.
//!
//! Wall times are monotonic-clock deltas around the measured region only,
//! with one warm-up iteration excluded. Lattice and joiner-call columns are
//! exact counts and reproduce the closed-form formulas.

use std::io::Write;
use std::time::Instant;

use super::config::RunConfig;
use super::data::{validate_records, DataRecord};
use super::train::utterance_loss;
use crate::decode::{count_joiner_calls, decode_utterance};
use crate::model::ModelParams;
use crate::numerics::Graph;
use crate::{Result, Variant};

#[derive(Clone, Debug)]
pub struct BenchRow {
    pub chunk_size: usize,
    pub variant: Variant,
    pub train_ms_per_step: f64,
    pub decode_ms: f64,
    pub joiner_calls: usize,
    pub lattice_elems: usize,
}

#[derive(Debug)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    /// Per-step graph-allocated f64 elements at the config's chunk size,
    /// one series per variant: the memory proxy the SVG plots.
    pub memory_series: Vec<(Variant, Vec<f64>)>,
}

/// Measured training steps for one (config, variant, chunk size): returns
/// (mean ms per step, lattice elements per step, per-step graph elements).
fn bench_train(
    cfg: &RunConfig,
    records: &[DataRecord],
    steps: usize,
) -> Result<(f64, usize, Vec<f64>)> {
    let input_dim = validate_records(records, cfg.vocab_size, cfg.stack_factor)?;
    let model_cfg = cfg.model_config(input_dim)?;
    let spec = cfg.chunk_spec();
    let mut params = model_cfg.init_params(cfg.seed)?;
    let batch: Vec<&DataRecord> = records.iter().take(cfg.batch).collect();

    let mut lattice_elems = 0;
    let mut series = Vec::with_capacity(steps);
    let mut measured_ms = 0.0;
    // One warm-up step (step 0) excluded from timing.
    for step in 0..=steps {
        let started = Instant::now();
        let mut step_lattice = 0;
        let mut step_graph = 0;
        for record in &batch {
            let mut g = Graph::new();
            let bound = params.bind(&mut g);
            let (loss, elems) = utterance_loss(&mut g, &bound, &model_cfg, &spec, record)?;
            g.backward(loss)?;
            params.accumulate_grads(&g, &bound, 1.0 / batch.len() as f64);
            step_lattice += elems;
            step_graph += g.allocated_elements();
        }
        params.apply_sgd(cfg.lr);
        let elapsed = started.elapsed().as_secs_f64() * 1e3;
        if step > 0 {
            measured_ms += elapsed;
            series.push(step_graph as f64);
        }
        lattice_elems = step_lattice;
    }
    Ok((measured_ms / steps as f64, lattice_elems, series))
}

/// Batch-1 greedy decode over all records: (wall ms, total joiner calls).
fn bench_decode(
    cfg: &RunConfig,
    params: &ModelParams,
    records: &[DataRecord],
) -> Result<(f64, usize)> {
    let input_dim = validate_records(records, cfg.vocab_size, cfg.stack_factor)?;
    let model_cfg = cfg.model_config(input_dim)?;
    let spec = cfg.chunk_spec();
    let decode_cfg = cfg.decode_config();

    // Warm up on the first record, outside the measured region.
    decode_utterance(params, &model_cfg, &spec, &decode_cfg, &records[0].features)?;
    let started = Instant::now();
    let mut calls = 0;
    for record in records {
        let path = decode_utterance(params, &model_cfg, &spec, &decode_cfg, &record.features)?;
        calls += count_joiner_calls(&path);
    }
    Ok((started.elapsed().as_secs_f64() * 1e3, calls))
}

pub fn run_bench(
    cfg: &RunConfig,
    chunk_sizes: &[usize],
    records: &[DataRecord],
    train_steps: usize,
) -> Result<BenchReport> {
    let mut rows = Vec::new();
    let mut memory_series = Vec::new();
    for &chunk_size in chunk_sizes {
        for variant in [Variant::Rnnt, Variant::Chat] {
            let mut run_cfg = cfg.clone();
            run_cfg.chunk_size = chunk_size;
            run_cfg.variant = variant;
            run_cfg.validate()?;

            let (train_ms_per_step, lattice_elems, series) =
                bench_train(&run_cfg, records, train_steps)?;
            let input_dim = records[0].input_dim();
            let params = run_cfg.model_config(input_dim)?.init_params(run_cfg.seed)?;
            let (decode_ms, joiner_calls) = bench_decode(&run_cfg, &params, records)?;

            if chunk_size == cfg.chunk_size {
                memory_series.push((variant, series));
            }
            rows.push(BenchRow {
                chunk_size,
                variant,
                train_ms_per_step,
                decode_ms,
                joiner_calls,
                lattice_elems,
            });
        }
    }
    Ok(BenchReport { rows, memory_series })
}

/// Fixed column order: chunk_size,variant,train_ms_per_step,decode_ms,
/// joiner_calls,lattice_elems.
pub fn write_bench_csv<W: Write>(mut w: W, rows: &[BenchRow]) -> Result<()> {
    writeln!(
        w,
        "chunk_size,variant,train_ms_per_step,decode_ms,joiner_calls,lattice_elems"
    )?;
    for r in rows {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.chunk_size, r.variant, r.train_ms_per_step, r.decode_ms, r.joiner_calls, r.lattice_elems
        )?;
    }
    Ok(())
}

/// Minimal SVG line chart of the per-step memory proxy, one polyline per
/// variant. Deterministic output (element counts, not wall time).
pub fn memory_chart_svg(series: &[(Variant, Vec<f64>)]) -> String {
    const W: f64 = 640.0;
    const H: f64 = 360.0;
    const MARGIN: f64 = 50.0;
    let max_y = series
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .fold(1.0_f64, f64::max);
    let max_x = series
        .iter()
        .map(|(_, s)| s.len())
        .max()
        .unwrap_or(1)
        .max(2) as f64
        - 1.0;

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n"
    ));
    svg.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    svg.push_str(&format!(
        "<text x=\"{}\" y=\"20\" font-family=\"monospace\" font-size=\"14\">training memory proxy (graph f64 elements) vs step</text>\n",
        MARGIN
    ));
    // Axes.
    svg.push_str(&format!(
        "<line x1=\"{m}\" y1=\"{b}\" x2=\"{r}\" y2=\"{b}\" stroke=\"black\"/>\n<line x1=\"{m}\" y1=\"{t}\" x2=\"{m}\" y2=\"{b}\" stroke=\"black\"/>\n",
        m = MARGIN,
        b = H - MARGIN,
        r = W - 10.0,
        t = 30.0
    ));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">{max_y:.0}</text>\n",
        36.0
    ));
    svg.push_str(&format!(
        "<text x=\"4\" y=\"{}\" font-family=\"monospace\" font-size=\"11\">0</text>\n",
        H - MARGIN
    ));

    let colors = ["#c0392b", "#2471a3"];
    for (i, (variant, points)) in series.iter().enumerate() {
        if points.is_empty() {
            continue;
        }
        let path: Vec<String> = points
            .iter()
            .enumerate()
            .map(|(x, &y)| {
                let px = MARGIN + (x as f64 / max_x) * (W - MARGIN - 10.0);
                let py = (H - MARGIN) - (y / max_y) * (H - MARGIN - 30.0);
                format!("{px:.1},{py:.1}")
            })
            .collect();
        let color = colors[i % colors.len()];
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"2\" points=\"{}\"/>\n",
            path.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-family=\"monospace\" font-size=\"12\" fill=\"{color}\">{variant}</text>\n",
            W - MARGIN - 60.0,
            40.0 + 16.0 * i as f64
        ));
    }
    svg.push_str("</svg>\n");
    svg
}
