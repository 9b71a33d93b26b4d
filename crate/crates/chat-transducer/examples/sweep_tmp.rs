//! Scratch sweep (removed before release).
use chat_transducer::harness::{evaluate, gen_synthetic, train, GenConfig, RunConfig};
use chat_transducer::Variant;

fn main() -> chat_transducer::Result<()> {
    let records = gen_synthetic(&GenConfig::default())?;
    let variant = match std::env::var("SWEEP_VARIANT").as_deref() {
        Ok("rnnt") => Variant::Rnnt,
        _ => Variant::Chat,
    };
    for &(lr, batch, d, steps, stack, chunk) in &[
        (0.05, 16, 16, 5000, 3, 4),
        (0.1, 16, 16, 5000, 3, 4),
        (0.05, 16, 32, 5000, 3, 4),
        (0.05, 16, 16, 5000, 3, 6),
        (0.1, 16, 16, 5000, 3, 6),
        (0.05, 16, 32, 5000, 3, 6),
    ] {
        let cfg = RunConfig {
            variant,
            lr,
            batch,
            d_enc: d,
            d_pred: d,
            d_joint: d,
            steps,
            stack_factor: stack,
            chunk_size: chunk,
            ..RunConfig::default()
        };
        let start = std::time::Instant::now();
        let outcome = train(&cfg, &records)?;
        let eval_best = evaluate(&cfg, &outcome.best_params, &records)?;
        let eval_final = evaluate(&cfg, &outcome.final_params, &records)?;
        println!(
            "{variant} lr={lr} batch={batch} d={d} steps={steps} s={stack} C={chunk}: best_loss={:.4}@{} wer_best={:.4} wer_final={:.4} ({:.0}s)",
            outcome.best_loss,
            outcome.best_step,
            eval_best.wer,
            eval_final.wer,
            start.elapsed().as_secs_f64()
        );
        for (record, path) in records.iter().zip(&eval_best.paths) {
            if record.targets != path.tokens {
                println!(
                    "  BEST mismatch {}: want {:?} got {:?} steps {:?}",
                    record.utterance_id, record.targets, path.tokens, path.emit_steps
                );
            }
        }
    }
    Ok(())
}
