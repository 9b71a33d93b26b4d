//! End-to-end gradient verification: the loss gradient w.r.t. every
//! parameter tensor against central finite differences (h = 1e-5).
//!
//! The probe task is two tiny utterances generated from small dims (the
//! check enforces d <= 8, T <= 12, U <= 3), so a full sweep over every
//! parameter entry stays fast. The relative-error denominator is floored at
//! 1e-3: differences below finite-difference noise on near-zero entries are
//! not gradient errors.

use super::config::RunConfig;
use super::data::{gen_synthetic, DataRecord, GenConfig};
use super::train::utterance_loss;
use crate::model::{ModelConfig, ModelParams};
use crate::numerics::{Graph, Tensor};
use crate::{Error, Result};

pub const GRADCHECK_THRESHOLD: f64 = 1e-4;
const FD_STEP: f64 = 1e-5;
const REL_FLOOR: f64 = 1e-3;
const MAX_DIM: usize = 8;

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub max_rel_err: f64,
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub per_param: Vec<ParamCheck>,
    pub threshold: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.per_param.iter().all(|p| p.max_rel_err < self.threshold)
    }

    pub fn failures(&self) -> Vec<String> {
        self.per_param
            .iter()
            .filter(|p| p.max_rel_err >= self.threshold)
            .map(|p| p.name.clone())
            .collect()
    }
}

fn probe_records(cfg: &RunConfig) -> Result<Vec<DataRecord>> {
    // U <= 3 and, at repeat 4 / stack 1, T <= 12.
    gen_synthetic(&GenConfig {
        n_utts: 2,
        vocab_size: cfg.vocab_size,
        repeat: 4 * cfg.stack_factor,
        noise: 0.1,
        seed: cfg.seed,
        input_dim: 4,
        min_tokens: 2,
        max_tokens: 3,
    })
}

fn mean_loss(
    params: &ModelParams,
    model_cfg: &ModelConfig,
    cfg: &RunConfig,
    records: &[DataRecord],
) -> Result<f64> {
    let spec = cfg.chunk_spec();
    let mut total = 0.0;
    for record in records {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let (loss, _) = utterance_loss(&mut g, &bound, model_cfg, &spec, record)?;
        total += g.scalar_value(loss);
    }
    Ok(total / records.len() as f64)
}

/// Check every parameter of the config's model; `corrupt` deliberately
/// perturbs the analytic gradient of the named parameter first (negative
/// control for the check itself).
pub fn gradcheck_with_corruption(
    cfg: &RunConfig,
    corrupt: Option<&str>,
) -> Result<GradCheckReport> {
    cfg.validate()?;
    for (name, dim) in [
        ("d_enc", cfg.d_enc),
        ("d_pred", cfg.d_pred),
        ("d_joint", cfg.d_joint),
    ] {
        if dim > MAX_DIM {
            return Err(Error::InvalidConfig(format!(
                "gradcheck needs {name} <= {MAX_DIM}, got {dim}"
            )));
        }
    }
    let records = probe_records(cfg)?;
    let model_cfg = cfg.model_config(records[0].input_dim())?;
    let mut params = model_cfg.init_params(cfg.seed)?;

    // Analytic gradients of the mean loss.
    let spec = cfg.chunk_spec();
    for record in &records {
        let mut g = Graph::new();
        let bound = params.bind(&mut g);
        let (loss, _) = utterance_loss(&mut g, &bound, &model_cfg, &spec, record)?;
        g.backward(loss)?;
        params.accumulate_grads(&g, &bound, 1.0 / records.len() as f64);
    }
    let mut analytic: Vec<(String, Vec<f64>)> = params
        .iter()
        .map(|(name, t)| {
            (
                name.to_string(),
                t.grad().map(<[f64]>::to_vec).unwrap_or_else(|| vec![0.0; t.numel()]),
            )
        })
        .collect();
    params.zero_grads();

    if let Some(victim) = corrupt {
        let entry = analytic
            .iter_mut()
            .find(|(name, _)| name == victim)
            .ok_or_else(|| Error::InvalidConfig(format!("no parameter named '{victim}'")))?;
        entry.1[0] += 1.0;
    }

    // Central finite differences, entry by entry.
    let mut per_param = Vec::with_capacity(analytic.len());
    for (name, grad) in &analytic {
        let base = params.get(name)?.data().to_vec();
        let shape = params.get(name)?.shape().to_vec();
        let mut max_rel = 0.0_f64;
        for i in 0..base.len() {
            let mut probe = base.clone();
            probe[i] = base[i] + FD_STEP;
            *params.get_mut(name)? = Tensor::new(shape.clone(), probe.clone())?;
            let up = mean_loss(&params, &model_cfg, cfg, &records)?;
            probe[i] = base[i] - FD_STEP;
            *params.get_mut(name)? = Tensor::new(shape.clone(), probe)?;
            let down = mean_loss(&params, &model_cfg, cfg, &records)?;
            let numeric = (up - down) / (2.0 * FD_STEP);
            let rel = (grad[i] - numeric).abs()
                / grad[i].abs().max(numeric.abs()).max(REL_FLOOR);
            max_rel = max_rel.max(rel);
        }
        *params.get_mut(name)? = Tensor::new(shape, base)?;
        per_param.push(ParamCheck {
            name: name.clone(),
            max_rel_err: max_rel,
        });
    }

    Ok(GradCheckReport {
        per_param,
        threshold: GRADCHECK_THRESHOLD,
    })
}

pub fn gradcheck(cfg: &RunConfig) -> Result<GradCheckReport> {
    gradcheck_with_corruption(cfg, None)
}
