//! End-to-end stage orchestration shared by the command-line driver and the
//! test suites: collect, train-detector, train-policy, evaluate, selftest.

pub mod selftest;

use std::path::{Path, PathBuf};

use serde_json::json;
use thiserror::Error;

use crate::config::{ConfigError, RunConfig};
use crate::data::{collect, Dataset, DataError, Manifest};
use crate::dsp::SpecStats;
use crate::eval::{
    make_report, plot_data, run_rollouts, EvalError, EvalReport, ReportMeta, RolloutOptions,
    VariantResults,
};
use crate::nn::{checkpoint, NnError};
use crate::percept::{
    detector_windows, eval_detector, finetune_click_detector, AudioEncoder, ClickDetector,
    DetectorMetrics, PerceptError,
};
use crate::policy::{
    load_policy, precompute_features, save_policy, train_policy, PolicyError, PolicyTrainConfig,
    PolicyTrainReport, Variant,
};
use crate::rng::{derive_seed, SeededRng};

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Percept(#[from] PerceptError),
    #[error(transparent)]
    Policy(#[from] PolicyError),
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Nn(#[from] NnError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("{0}")]
    Stage(String),
}

impl PipelineError {
    /// Contract violations (privileged leaks, numeric divergence) exit 1.
    pub fn is_contract_violation(&self) -> bool {
        matches!(
            self,
            PipelineError::Eval(EvalError::PrivilegedLeak(_))
                | PipelineError::Policy(PolicyError::PrivilegedLeak(_))
                | PipelineError::Nn(NnError::NonFinite(_))
        )
    }
}

/// Collect demonstrations into `out_dir`.
pub fn run_collect(
    cfg: &RunConfig,
    episodes: usize,
    out_dir: &Path,
    base_seed: u64,
) -> Result<Manifest, PipelineError> {
    cfg.validate()?;
    Ok(collect(
        &cfg.sim,
        &cfg.expert,
        &cfg.mel,
        episodes,
        out_dir,
        base_seed,
        &cfg.hash(),
    )?)
}

/// Artifacts of the detector stage.
#[derive(Clone, Debug)]
pub struct DetectorOutcome {
    pub checkpoint: PathBuf,
    pub metrics: DetectorMetrics,
    pub pretrain_accuracy: f64,
    pub positive_fraction: f64,
    pub spec_stats: SpecStats,
}

pub const DETECTOR_CKPT: &str = "detector.ckpt";
pub const DETECTOR_METRICS: &str = "detector_metrics.json";

/// Pretrain on synthetic events, fine-tune on privileged labels, evaluate on
/// a held-out window set, and persist the checkpoint plus a metrics record.
pub fn run_train_detector(
    cfg: &RunConfig,
    dataset_dir: &Path,
    out_dir: &Path,
    pretrain_epochs: usize,
    finetune_epochs: usize,
    finetune_lr: f64,
) -> Result<DetectorOutcome, PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ds = Dataset::load(dataset_dir)?;
    let stats = ds.norm_stats()?.clone();

    let (pretrained, pre_report) = crate::percept::train::pretrain_audio_default(
        cfg.detector.pretrain_examples_per_class,
        pretrain_epochs,
        cfg.detector.pretrain_lr,
        cfg.detector.pretrain_batch,
        derive_seed(cfg.seed, "pretrain"),
        &cfg.mel,
    )?;

    // disjoint seeded train/holdout window picks
    let want = cfg.detector.finetune_windows + cfg.detector.holdout_windows;
    if ds.flat_len() < want {
        return Err(PipelineError::Stage(format!(
            "dataset has {} ticks but detector training wants {want} distinct windows",
            ds.flat_len()
        )));
    }
    let mut pick_rng = SeededRng::derived(cfg.seed, "detector-windows");
    let perm = pick_rng.permutation(ds.flat_len());
    let train_picks: Vec<(usize, usize)> = perm[..cfg.detector.finetune_windows]
        .iter()
        .map(|&i| ds.locate(i))
        .collect();
    let holdout_picks: Vec<(usize, usize)> = perm
        [cfg.detector.finetune_windows..want]
        .iter()
        .map(|&i| ds.locate(i))
        .collect();

    let train_set = detector_windows(&ds, &cfg.mel, &stats.spec, &train_picks)?;
    let (detector, ft_report) = finetune_click_detector(
        &pretrained,
        &train_set,
        finetune_epochs,
        finetune_lr,
        cfg.detector.finetune_batch,
        derive_seed(cfg.seed, "finetune"),
        cfg.detector.threshold,
    )?;
    drop(train_set);

    // evaluate the holdout in chunks to bound window memory
    let (mut tp, mut fp, mut tn, mut fn_) = (0usize, 0usize, 0usize, 0usize);
    for chunk in holdout_picks.chunks(256) {
        let set = detector_windows(&ds, &cfg.mel, &stats.spec, chunk)?;
        let m = eval_detector(&detector, &set)?;
        tp += m.tp;
        fp += m.fp;
        tn += m.tn;
        fn_ += m.fn_;
    }
    let metrics = DetectorMetrics::from_counts(tp, fp, tn, fn_);

    let ckpt_path = out_dir.join(DETECTOR_CKPT);
    let meta = json!({
        "kind": "detector",
        "threshold": cfg.detector.threshold,
        "spec_stats": stats.spec,
        "pretrain": {
            "heldout_accuracy": pre_report.heldout_accuracy,
            "spec_stats": pre_report.spec_stats,
            "train_examples": pre_report.train_examples,
        },
        "metrics": metrics,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
    });
    checkpoint::save(
        &ckpt_path,
        &meta,
        &[("pretrained", &pretrained.net), ("finetuned", &detector.encoder.net)],
    )?;
    let record = json!({
        "f1": metrics.f1,
        "false_negative_rate": metrics.false_negative_rate,
        "tp": metrics.tp,
        "fp": metrics.fp,
        "tn": metrics.tn,
        "fn": metrics.fn_,
        "threshold": cfg.detector.threshold,
        "pretrain_accuracy": pre_report.heldout_accuracy,
        "train_windows": ft_report.train_windows,
        "holdout_windows": holdout_picks.len(),
        "positive_fraction": ft_report.positive_fraction,
        "config_hash": cfg.hash(),
        "seed": cfg.seed,
    });
    std::fs::write(
        out_dir.join(DETECTOR_METRICS),
        serde_json::to_vec_pretty(&record).expect("metrics serialize"),
    )?;

    Ok(DetectorOutcome {
        checkpoint: ckpt_path,
        metrics,
        pretrain_accuracy: pre_report.heldout_accuracy,
        positive_fraction: ft_report.positive_fraction,
        spec_stats: stats.spec,
    })
}

/// Load both encoders from a detector checkpoint:
/// (pretrained, fine-tuned detector).
pub fn load_detector(
    path: &Path,
) -> Result<(AudioEncoder, ClickDetector), PipelineError> {
    let (meta, modules) = checkpoint::load(path)?;
    if meta["kind"] != "detector" {
        return Err(PipelineError::Stage(format!(
            "{} is not a detector checkpoint",
            path.display()
        )));
    }
    let mut pretrained = None;
    let mut finetuned = None;
    for (name, module) in modules {
        match name.as_str() {
            "pretrained" => pretrained = Some(AudioEncoder { net: module }),
            "finetuned" => finetuned = Some(AudioEncoder { net: module }),
            other => {
                return Err(PipelineError::Stage(format!(
                    "unexpected module '{other}' in detector checkpoint"
                )))
            }
        }
    }
    let threshold = meta["threshold"].as_f64().unwrap_or(0.5) as f32;
    let pretrained =
        pretrained.ok_or_else(|| PipelineError::Stage("missing pretrained module".into()))?;
    let finetuned =
        finetuned.ok_or_else(|| PipelineError::Stage("missing finetuned module".into()))?;
    Ok((pretrained, ClickDetector::new(finetuned, threshold)?))
}

/// Train one policy variant; returns the checkpoint path and loss curve.
pub fn run_train_policy(
    cfg: &RunConfig,
    dataset_dir: &Path,
    variant: Variant,
    detector_path: &Path,
    out_dir: &Path,
    steps: usize,
    seed: u64,
) -> Result<(PathBuf, PolicyTrainReport), PipelineError> {
    cfg.validate()?;
    std::fs::create_dir_all(out_dir)?;
    let ds = Dataset::load(dataset_dir)?;
    let (pretrained, detector) = load_detector(detector_path)?;
    let encoder = match variant {
        Variant::Generic => pretrained,
        _ => detector.encoder.clone(),
    };
    let features = match variant {
        Variant::SoftSensor => None,
        _ => Some(precompute_features(
            &ds,
            &cfg.mel,
            &ds.norm_stats()?.spec.clone(),
            &encoder,
        )?),
    };
    let train_cfg = PolicyTrainConfig {
        steps,
        batch_size: cfg.policy.batch_size,
        base_lr: cfg.policy.learning_rate,
        warmup_steps: cfg.policy.warmup_steps,
        weight_decay: cfg.policy.weight_decay as f32,
        diffusion_steps: cfg.policy.diffusion_steps,
        denoiser_width: cfg.policy.denoiser_width,
        temb_dim: cfg.policy.timestep_embed_dim,
        seed,
    };
    let (policy, report) = train_policy(
        &ds,
        &cfg.augment,
        cfg.sim.render.width,
        variant,
        encoder,
        features.as_ref(),
        detector.threshold,
        cfg.policy.soft_sensor_latency_s,
        &train_cfg,
    )?;
    let path = out_dir.join(format!("policy-{}.ckpt", variant.name()));
    save_policy(&path, &policy)?;
    Ok((path, report))
}

pub const REPORT_NAME: &str = "report.json";
pub const PLOTDATA_NAME: &str = "plotdata.json";

/// Evaluate one or more policy checkpoints against the expert reference and
/// write `report.json` plus `plotdata.json`.
pub fn run_evaluate(
    cfg: &RunConfig,
    policy_paths: &[PathBuf],
    expert_dataset: &Path,
    out_dir: &Path,
    rollouts: usize,
    base_seed: u64,
    debug_read_privileged: bool,
) -> Result<EvalReport, PipelineError> {
    cfg.validate()?;
    if policy_paths.is_empty() {
        return Err(PipelineError::Stage("no policy checkpoints given".into()));
    }
    std::fs::create_dir_all(out_dir)?;
    let manifest = crate::data::collect::read_manifest(expert_dataset)?;
    if manifest.episodes.is_empty() {
        return Err(PipelineError::Stage("expert dataset is empty".into()));
    }
    let expert_peaks: Vec<f64> = manifest.episodes.iter().map(|e| e.peak_fz as f64).collect();
    let expert_traces = if cfg.eval.w1_on_traces {
        Some(expert_force_traces(cfg, expert_dataset, &manifest)?)
    } else {
        None
    };

    let opts = RolloutOptions {
        budget_s: cfg.eval.budget_s,
        retract_margin_m: cfg.eval.retract_margin_m,
        debug_read_privileged,
    };
    let mut all_results = Vec::with_capacity(policy_paths.len());
    let mut names: Vec<String> = Vec::new();
    for path in policy_paths {
        let policy = load_policy(path)?;
        let results = run_rollouts(
            &policy,
            &cfg.mel,
            &cfg.augment,
            &cfg.sim,
            rollouts,
            base_seed,
            &opts,
        )?;
        let mut name = policy.variant.name().to_string();
        let mut suffix = 2;
        while names.contains(&name) {
            name = format!("{}#{suffix}", policy.variant.name());
            suffix += 1;
        }
        names.push(name);
        all_results.push(results);
    }
    let variants: Vec<VariantResults> = names
        .iter()
        .zip(&all_results)
        .map(|(name, results)| VariantResults { name: name.clone(), results })
        .collect();

    let meta = ReportMeta {
        rollouts_per_variant: rollouts,
        base_seed,
        config_hash: cfg.hash(),
        prior: "Beta(1,1), equal tails".into(),
        w1_source: if cfg.eval.w1_on_traces { "force_trace" } else { "peak_fz" }.into(),
        non_paper_defaults: vec![
            "diffusion_steps=50".into(),
            "denoiser: conditioned MLP".into(),
            "observation horizon 1".into(),
            format!("retract margin {} m, budget {} s", cfg.eval.retract_margin_m, cfg.eval.budget_s),
        ],
    };
    let report = make_report(
        &variants,
        &expert_peaks,
        expert_traces.as_deref(),
        cfg.eval.w1_on_traces,
        meta,
    )?;
    std::fs::write(
        out_dir.join(REPORT_NAME),
        serde_json::to_vec_pretty(&report).expect("report serializes"),
    )?;
    let plot = plot_data(&report, cfg.eval.histogram_bin_n);
    std::fs::write(
        out_dir.join(PLOTDATA_NAME),
        serde_json::to_vec_pretty(&plot).expect("plot data serializes"),
    )?;
    Ok(report)
}

/// Replay expert episodes to recover their per-substep |F_z| traces.
fn expert_force_traces(
    cfg: &RunConfig,
    dir: &Path,
    manifest: &Manifest,
) -> Result<Vec<Vec<f64>>, PipelineError> {
    let mut out = Vec::with_capacity(manifest.episodes.len());
    for entry in &manifest.episodes {
        let ep = crate::data::episode_io::read_episode(&dir.join(&entry.file))?;
        let mut sim = crate::sim::new_sim(&cfg.sim, ep.seed)?;
        let _ = sim.start_observation();
        let max_step = cfg.sim.max_step_m() as f32;
        let mut trace = Vec::new();
        for step in &ep.steps {
            let out_step = sim.step([
                step.action[0] / max_step,
                step.action[1] / max_step,
                step.action[2] / max_step,
            ]);
            trace.extend(out_step.force_trace.iter().map(|f| f[2].abs() as f64));
        }
        out.push(trace);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.collect.episodes = 2;
        cfg.detector.pretrain_examples_per_class = 3;
        cfg.detector.pretrain_epochs = 0;
        cfg.detector.finetune_windows = 40;
        cfg.detector.holdout_windows = 20;
        cfg.detector.finetune_epochs = 0;
        cfg.policy.steps = 3;
        cfg.policy.warmup_steps = 1;
        cfg.policy.batch_size = 2;
        cfg
    }

    #[test]
    fn detector_stage_round_trips_through_its_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let out_dir = dir.path().join("det");
        let cfg = tiny_cfg();
        run_collect(&cfg, 2, &data_dir, 5).unwrap();
        let outcome = run_train_detector(&cfg, &data_dir, &out_dir, 0, 0, 1e-5).unwrap();
        assert!(outcome.checkpoint.exists());
        assert!(out_dir.join(DETECTOR_METRICS).exists());
        let (pretrained, detector) = load_detector(&outcome.checkpoint).unwrap();
        assert_eq!(pretrained.n_classes(), 4);
        assert_eq!(detector.encoder.n_classes(), 2);
    }

    #[test]
    fn policy_stage_writes_a_loadable_checkpoint() {
        let dir = tempfile::tempdir().unwrap();
        let data_dir = dir.path().join("data");
        let det_dir = dir.path().join("det");
        let pol_dir = dir.path().join("pol");
        let cfg = tiny_cfg();
        run_collect(&cfg, 2, &data_dir, 5).unwrap();
        let det = run_train_detector(&cfg, &data_dir, &det_dir, 0, 0, 1e-5).unwrap();
        let (path, report) = run_train_policy(
            &cfg,
            &data_dir,
            Variant::SoftSensor,
            &det.checkpoint,
            &pol_dir,
            3,
            7,
        )
        .unwrap();
        assert_eq!(report.losses.len(), 3);
        let policy = load_policy(&path).unwrap();
        assert_eq!(policy.variant, Variant::SoftSensor);
        assert_eq!(policy.trained_steps, 3);
    }
}
