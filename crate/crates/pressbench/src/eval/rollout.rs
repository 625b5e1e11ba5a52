//! Seeded evaluation rollouts with the privileged-read taint check.
//!
//! The controller sees only the rendered image and the microphone history; a
//! rollout succeeds once a press event has occurred and the fingertip is back
//! above the retract threshold (start height minus a margin), at which point
//! it terminates. Every step's privileged field is checked for reads after
//! the controller acted; any read aborts evaluation.

use crate::data::AugmentConfig;
use crate::dsp::{AudioRing, MelConfig};
use crate::policy::DiffusionPolicy;
use crate::rng::SeededRng;
use crate::sim::{new_sim, SimConfig};

use super::EvalError;

#[derive(Clone, Copy, Debug)]
pub struct RolloutOptions {
    /// Wall-clock budget per rollout, simulated seconds.
    pub budget_s: f64,
    /// Success requires final height >= start height - this margin, m.
    pub retract_margin_m: f64,
    /// Test hook: make the harness itself read the privileged field, to
    /// prove the taint trip aborts evaluation.
    pub debug_read_privileged: bool,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            budget_s: 10.0,
            retract_margin_m: 0.010,
            debug_read_privileged: false,
        }
    }
}

/// One evaluation rollout's outcome.
#[derive(Clone, Debug)]
pub struct RolloutResult {
    pub success: bool,
    /// Peak |F_z| over the trace; populated only for successful rollouts.
    pub peak_fz: Option<f64>,
    /// Per-substep contact forces, N.
    pub force_trace: Vec<[f32; 3]>,
    pub duration: f64,
    pub seed: u64,
}

/// What a controller may observe at each tick.
pub struct RolloutObs<'a> {
    pub image: &'a [f32],
    pub img_side: usize,
    pub ring: &'a AudioRing,
    pub t: f64,
}

/// Run `n` seeded rollouts of an arbitrary controller. The controller returns
/// a displacement in meters.
pub fn run_rollouts_with<F>(
    sim_cfg: &SimConfig,
    n: usize,
    base_seed: u64,
    opts: &RolloutOptions,
    mut act: F,
) -> Result<Vec<RolloutResult>, EvalError>
where
    F: FnMut(&RolloutObs, u64, &mut SeededRng) -> Result<[f32; 3], EvalError>,
{
    let mut results = Vec::with_capacity(n);
    for r in 0..n {
        let seed = base_seed + r as u64;
        results.push(run_single(sim_cfg, seed, opts, &mut act)?);
    }
    Ok(results)
}

fn run_single<F>(
    sim_cfg: &SimConfig,
    seed: u64,
    opts: &RolloutOptions,
    act: &mut F,
) -> Result<RolloutResult, EvalError>
where
    F: FnMut(&RolloutObs, u64, &mut SeededRng) -> Result<[f32; 3], EvalError>,
{
    let mut sim = new_sim(sim_cfg, seed)?;
    let mut sampler_rng = SeededRng::derived(seed, "rollout-sampler");
    let mut ring = AudioRing::new(sim_cfg.audio_rate);
    let max_step = sim_cfg.max_step_m() as f32;
    let img_side = sim_cfg.render.width;

    let obs0 = sim.start_observation();
    let start_z = obs0.eef_position[2] as f64;
    let threshold_z = start_z - opts.retract_margin_m;
    let mut image = obs0.image;
    if opts.debug_read_privileged {
        obs0.button_state.read();
    }
    if obs0.button_state.was_read() {
        return Err(EvalError::PrivilegedLeak(format!(
            "privileged button state read during evaluation rollout (seed {seed})"
        )));
    }

    let mut pressed_ever = false;
    let mut success = false;
    let mut force_trace: Vec<[f32; 3]> = Vec::new();
    let max_ticks = (opts.budget_s / sim_cfg.control_dt).round() as usize;

    for tick in 0..max_ticks {
        let t = tick as f64 * sim_cfg.control_dt;
        let action_m = act(
            &RolloutObs { image: &image, img_side, ring: &ring, t },
            seed,
            &mut sampler_rng,
        )?;
        let sim_action = [
            action_m[0] / max_step,
            action_m[1] / max_step,
            action_m[2] / max_step,
        ];
        let out = sim.step(sim_action);
        ring.push(&out.audio_chunk);
        force_trace.extend_from_slice(&out.force_trace);
        pressed_ever |= out.press_edge;
        if opts.debug_read_privileged {
            out.button_state.read();
        }
        if out.button_state.was_read() {
            return Err(EvalError::PrivilegedLeak(format!(
                "privileged button state read during evaluation rollout (seed {seed}, t {t:.1})"
            )));
        }
        image = out.image;
        if pressed_ever && out.eef_position[2] as f64 >= threshold_z {
            success = true;
            break;
        }
    }

    let peak_fz = if success {
        Some(
            force_trace
                .iter()
                .map(|f| f[2].abs() as f64)
                .fold(0.0f64, f64::max),
        )
    } else {
        None
    };
    Ok(RolloutResult {
        success,
        peak_fz,
        force_trace,
        duration: sim.time(),
        seed,
    })
}

/// Worker count for policy evaluation: the PRESSBENCH_THREADS environment
/// variable caps it, hardware parallelism is the default.
pub fn rollout_workers(n: usize) -> usize {
    let cap = std::env::var("PRESSBENCH_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&v| v >= 1);
    let hw = std::thread::available_parallelism().map(|v| v.get()).unwrap_or(1);
    cap.unwrap_or(hw).clamp(1, n.max(1))
}

/// Evaluate a trained policy. Rollouts are independent (each owns its sim and
/// sampler stream), so they may run on parallel workers; results are merged
/// by rollout index and do not depend on the worker count.
pub fn run_rollouts(
    policy: &DiffusionPolicy,
    mel: &MelConfig,
    aug: &AugmentConfig,
    sim_cfg: &SimConfig,
    n: usize,
    base_seed: u64,
    opts: &RolloutOptions,
) -> Result<Vec<RolloutResult>, EvalError> {
    let workers = rollout_workers(n);
    let act = |obs: &RolloutObs, _seed: u64, rng: &mut SeededRng| {
        policy
            .act(obs.image, obs.img_side, obs.ring, obs.t, mel, aug, rng)
            .map_err(EvalError::from)
    };
    if workers <= 1 {
        return run_rollouts_with(sim_cfg, n, base_seed, opts, act);
    }
    let mut slots: Vec<Option<Result<RolloutResult, EvalError>>> = Vec::new();
    slots.resize_with(n, || None);
    let slots = std::sync::Mutex::new(slots);
    let next = std::sync::atomic::AtomicUsize::new(0);
    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let r = next.fetch_add(1, std::sync::atomic::Ordering::Relaxed);
                if r >= n {
                    break;
                }
                let seed = base_seed + r as u64;
                let mut act = act;
                let result = run_single(sim_cfg, seed, opts, &mut act);
                slots.lock().expect("rollout slots").get_mut(r).map(|s| *s = Some(result));
            });
        }
    });
    let mut out = Vec::with_capacity(n);
    for slot in slots.into_inner().expect("rollout slots") {
        out.push(slot.expect("every rollout index filled")?);
    }
    Ok(out)
}

/// Maximum |F_z| over a force trace.
pub fn peak_fz(trace: &[[f32; 3]]) -> Result<f64, EvalError> {
    if trace.is_empty() {
        return Err(EvalError::Domain("peak_fz of an empty trace".into()));
    }
    Ok(trace.iter().map(|f| f[2].abs() as f64).fold(0.0, f64::max))
}
