//! CLI harness: config files, synthetic data, training, evaluation,
//! benchmarking, and gradient checking, shared by the `chat` binary and the
//! runnable examples.

pub mod bench;
pub mod config;
pub mod data;
pub mod evaluate;
pub mod gradcheck;
pub mod train;

pub use bench::{memory_chart_svg, run_bench, write_bench_csv, BenchReport, BenchRow};
pub use config::{RunConfig, FRAME_DURATION_MS};
pub use data::{gen_synthetic, read_records_file, write_records_file, DataRecord, GenConfig};
pub use evaluate::{alignments, evaluate, Evaluation};
pub use gradcheck::{gradcheck, gradcheck_with_corruption, GradCheckReport, GRADCHECK_THRESHOLD};
pub use train::{train, write_train_log, StepLog, TrainOutcome};

use std::fs;
use std::path::{Path, PathBuf};

use crate::metrics::write_latency_csv;
use crate::model::{load_checkpoint, save_checkpoint, ModelParams};
use crate::{Error, Result};

pub fn checkpoint_path(cfg: &RunConfig) -> PathBuf {
    cfg.out_dir.join("best.ckpt")
}

fn ensure_out_dir(cfg: &RunConfig) -> Result<()> {
    Ok(fs::create_dir_all(&cfg.out_dir)?)
}

/// Generate the synthetic corpus and write it to the config's data path.
pub fn cmd_gen_data(cfg: &RunConfig, gen: &GenConfig) -> Result<()> {
    let records = gen_synthetic(gen)?;
    if let Some(parent) = cfg.data.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    data::write_records_file(&cfg.data, &records)?;
    println!(
        "wrote {} utterances (vocab {}, repeat {}, noise {}) to {}",
        records.len(),
        gen.vocab_size,
        gen.repeat,
        gen.noise,
        cfg.data.display()
    );
    Ok(())
}

/// Train on the config's data; writes best.ckpt and train_log.csv under
/// out_dir.
pub fn cmd_train(cfg: &RunConfig) -> Result<TrainOutcome> {
    ensure_out_dir(cfg)?;
    let records = read_records_file(&cfg.data)?;
    let outcome = train(cfg, &records)?;
    save_checkpoint(&outcome.best_params, checkpoint_path(cfg))?;
    let mut log_buf = Vec::new();
    write_train_log(&mut log_buf, &outcome.log)?;
    fs::write(cfg.out_dir.join("train_log.csv"), log_buf)?;
    if let (Some(first), Some(last)) = (outcome.log.first(), outcome.log.last()) {
        println!(
            "trained {} steps ({}): loss {:.6} -> {:.6}, best {:.6} at step {}",
            cfg.steps, cfg.variant, first.loss, last.loss, outcome.best_loss, outcome.best_step
        );
    } else {
        println!("0 steps: checkpoint equals initialization");
    }
    println!(
        "peak lattice elements/step: {}, peak graph elements/step: {}",
        outcome.peak_lattice_elements, outcome.peak_graph_elements
    );
    println!("checkpoint: {}", checkpoint_path(cfg).display());
    Ok(outcome)
}

/// Load a checkpoint compatible with the config's model, verifying names
/// and shapes.
pub fn load_params_for(cfg: &RunConfig, input_dim: usize, path: &Path) -> Result<ModelParams> {
    let params = load_checkpoint(path)?;
    let expected = cfg.model_config(input_dim)?.init_params(cfg.seed)?;
    if expected.len() != params.len() {
        return Err(Error::InvalidConfig(format!(
            "checkpoint has {} tensors, config expects {}",
            params.len(),
            expected.len()
        )));
    }
    for (name, tensor) in expected.iter() {
        let loaded = params.get(name).map_err(|_| {
            Error::InvalidConfig(format!("checkpoint is missing parameter '{name}'"))
        })?;
        if loaded.shape() != tensor.shape() {
            return Err(Error::InvalidConfig(format!(
                "checkpoint parameter '{name}' has shape {:?}, config expects {:?}",
                loaded.shape(),
                tensor.shape()
            )));
        }
    }
    Ok(params)
}

/// Decode the config's data with a trained checkpoint; prints corpus WER
/// and writes latency.csv.
pub fn cmd_decode(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Evaluation> {
    ensure_out_dir(cfg)?;
    let records = read_records_file(&cfg.data)?;
    let default_path = checkpoint_path(cfg);
    let path = checkpoint.unwrap_or(&default_path);
    let params = load_params_for(cfg, records[0].input_dim(), path)?;
    let eval = evaluate(cfg, &params, &records)?;
    let mut buf = Vec::new();
    write_latency_csv(&mut buf, &eval.latency)?;
    fs::write(cfg.out_dir.join("latency.csv"), buf)?;
    println!(
        "decoded {} utterances ({}): WER {:.4}, joiner calls {}",
        records.len(),
        cfg.variant,
        eval.wer,
        eval.total_joiner_calls
    );
    println!("latency report: {}", cfg.out_dir.join("latency.csv").display());
    Ok(eval)
}

/// Decode and export alignment dumps (frame heat included for CHAT).
pub fn cmd_align(cfg: &RunConfig, checkpoint: Option<&Path>, include_raw: bool) -> Result<()> {
    ensure_out_dir(cfg)?;
    let records = read_records_file(&cfg.data)?;
    let default_path = checkpoint_path(cfg);
    let path = checkpoint.unwrap_or(&default_path);
    let params = load_params_for(cfg, records[0].input_dim(), path)?;
    let eval = evaluate(cfg, &params, &records)?;
    let dumps = alignments(&records, &eval.paths, include_raw);
    let mut buf = Vec::new();
    crate::metrics::write_alignments(&mut buf, &dumps)?;
    let out = cfg.out_dir.join("alignments.txt");
    fs::write(&out, buf)?;
    println!("wrote {} alignment records to {}", dumps.len(), out.display());
    Ok(())
}

/// Chunk-size sweep; writes bench.csv and memory.svg.
pub fn cmd_bench(cfg: &RunConfig, chunk_sizes: &[usize], train_steps: usize) -> Result<BenchReport> {
    ensure_out_dir(cfg)?;
    let records = read_records_file(&cfg.data)?;
    let report = run_bench(cfg, chunk_sizes, &records, train_steps)?;
    let mut buf = Vec::new();
    write_bench_csv(&mut buf, &report.rows)?;
    fs::write(cfg.out_dir.join("bench.csv"), buf)?;
    fs::write(
        cfg.out_dir.join("memory.svg"),
        memory_chart_svg(&report.memory_series),
    )?;
    for row in &report.rows {
        println!(
            "C={:<3} {:<4} train {:>8.3} ms/step  decode {:>8.1} ms  joiner calls {:>6}  lattice elems {:>8}",
            row.chunk_size,
            row.variant,
            row.train_ms_per_step,
            row.decode_ms,
            row.joiner_calls,
            row.lattice_elems
        );
    }
    println!(
        "bench outputs: {} and {}",
        cfg.out_dir.join("bench.csv").display(),
        cfg.out_dir.join("memory.svg").display()
    );
    Ok(report)
}

/// Finite-difference check of every parameter; nonzero exit via error when
/// a parameter fails.
pub fn cmd_gradcheck(cfg: &RunConfig, corrupt: Option<&str>) -> Result<GradCheckReport> {
    let report = gradcheck_with_corruption(cfg, corrupt)?;
    for check in &report.per_param {
        println!(
            "{:<14} max rel err {:.3e}  {}",
            check.name,
            check.max_rel_err,
            if check.max_rel_err < report.threshold { "ok" } else { "FAIL" }
        );
    }
    if report.passed() {
        println!("gradcheck PASS (threshold {:.0e})", report.threshold);
        Ok(report)
    } else {
        Err(Error::GradCheckFailed(report.failures()))
    }
}
