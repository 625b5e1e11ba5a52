//! Policy checkpoints: the shared container plus a `variant` field and the
//! embedded normalization state.

use std::path::Path;

use serde_json::json;

use super::{make_schedule, DiffusionPolicy, PolicyError, Variant};
use crate::nn::checkpoint;
use crate::percept::AudioEncoder;

pub fn save_policy(path: &Path, policy: &DiffusionPolicy) -> Result<(), PolicyError> {
    let meta = json!({
        "kind": "policy",
        "variant": policy.variant,
        "threshold": policy.threshold,
        "latency_s": policy.latency_s,
        "temb_dim": policy.temb_dim,
        "diffusion_steps": policy.schedule.t_steps,
        "norm_stats": policy.norm,
        "spec_stats": policy.spec_stats,
        "trained_steps": policy.trained_steps,
        "train_seed": policy.train_seed,
        "non_paper_defaults": [
            "diffusion_steps",
            "denoiser architecture (conditioned MLP)",
            "observation horizon 1",
        ],
    });
    checkpoint::save(
        path,
        &meta,
        &[
            ("vision", &policy.vision),
            ("denoiser", &policy.denoiser),
            ("audio_encoder", &policy.audio_encoder.net),
        ],
    )?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<DiffusionPolicy, PolicyError> {
    let (meta, modules) = checkpoint::load(path)?;
    if meta["kind"] != "policy" {
        return Err(PolicyError::Config(format!(
            "{} is not a policy checkpoint",
            path.display()
        )));
    }
    let variant: Variant = serde_json::from_value(meta["variant"].clone())
        .map_err(|e| PolicyError::Config(format!("variant field: {e}")))?;
    let norm = serde_json::from_value(meta["norm_stats"].clone())
        .map_err(|e| PolicyError::Config(format!("norm_stats field: {e}")))?;
    let spec_stats = serde_json::from_value(meta["spec_stats"].clone())
        .map_err(|e| PolicyError::Config(format!("spec_stats field: {e}")))?;
    let t_steps = meta["diffusion_steps"]
        .as_u64()
        .ok_or_else(|| PolicyError::Config("missing diffusion_steps".into()))?
        as usize;
    let mut vision = None;
    let mut denoiser = None;
    let mut audio = None;
    for (name, module) in modules {
        match name.as_str() {
            "vision" => vision = Some(module),
            "denoiser" => denoiser = Some(module),
            "audio_encoder" => audio = Some(module),
            other => {
                return Err(PolicyError::Config(format!(
                    "unexpected module '{other}' in policy checkpoint"
                )))
            }
        }
    }
    let missing = |what: &str| PolicyError::Config(format!("checkpoint lacks module {what}"));
    Ok(DiffusionPolicy {
        variant,
        schedule: make_schedule(t_steps)?,
        vision: vision.ok_or_else(|| missing("vision"))?,
        denoiser: denoiser.ok_or_else(|| missing("denoiser"))?,
        audio_encoder: AudioEncoder { net: audio.ok_or_else(|| missing("audio_encoder"))? },
        threshold: meta["threshold"].as_f64().unwrap_or(0.5) as f32,
        latency_s: meta["latency_s"].as_f64().unwrap_or(0.05),
        norm,
        spec_stats,
        temb_dim: meta["temb_dim"].as_u64().unwrap_or(32) as usize,
        trained_steps: meta["trained_steps"].as_u64().unwrap_or(0) as usize,
        train_seed: meta["train_seed"].as_u64().unwrap_or(0),
    })
}
