//! Scripted demonstrator driven by the privileged button-state channel.
//!
//! Approach a randomized via point above the button, settle over it, descend
//! gently (slowing near the surface so the snap never drives the plunger into
//! the travel wall), retract to the start height as soon as the
//! instrumentation reports the press event.

use serde::{Deserialize, Serialize};

use super::{quantize_image, DataError, Episode, TimeStep};
use crate::rng::SeededRng;
use crate::sim::{new_sim, SimConfig};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExpertConfig {
    /// Height of the descent start point above the button top, m.
    pub hover_height: f64,
    /// Via-point height band above the button top, m.
    pub via_height: [f64; 2],
    /// Lateral via-point jitter around the button axis, m.
    pub via_jitter: f64,
    /// Direction-noise sigma as a fraction of each step's length.
    pub approach_noise_frac: f64,
    /// Fast descent displacement per step, m.
    pub descent_fast: f64,
    /// Slow (near-surface) descent displacement per step, m.
    pub descent_slow: f64,
    /// Height above the button top where descent switches to slow, m.
    pub slow_band: f64,
    /// Retraction displacement per step as a fraction of the step limit.
    pub retract_frac: f64,
    /// Lateral settling tolerance over the button, m.
    pub lateral_tolerance: f64,
    /// Give up when no press happened by this time, s.
    pub timeout_s: f64,
}

impl Default for ExpertConfig {
    fn default() -> Self {
        Self {
            hover_height: 0.020,
            via_height: [0.045, 0.070],
            via_jitter: 0.012,
            approach_noise_frac: 0.10,
            descent_fast: 0.002,
            descent_slow: 0.0005,
            slow_band: 0.008,
            retract_frac: 0.9,
            lateral_tolerance: 0.001,
            timeout_s: 15.0,
        }
    }
}

impl ExpertConfig {
    pub fn validate(&self, sim: &SimConfig) -> Result<(), DataError> {
        let max_step = sim.max_step_m();
        // the descent stays gentle: at most 20% of the per-step limit
        let bound = 0.2 * max_step + 1e-12;
        if self.descent_fast > bound || self.descent_slow > bound {
            return Err(DataError::Config(format!(
                "descent speeds ({}, {}) exceed the gentle-press bound {bound}",
                self.descent_fast, self.descent_slow
            )));
        }
        if self.via_height[0] > self.via_height[1] {
            return Err(DataError::Config("via_height band is inverted".into()));
        }
        if self.timeout_s <= 0.0 {
            return Err(DataError::Config("timeout_s must be positive".into()));
        }
        Ok(())
    }
}

/// A collected demonstration plus collection-time measurements.
#[derive(Clone, Debug)]
pub struct ExpertEpisode {
    pub episode: Episode,
    /// Peak |F_z| over all physics substeps, N.
    pub peak_fz: f32,
    /// Time of the peak force sample, s.
    pub peak_time: f64,
    /// Time of the press edge, s (when pressed).
    pub press_time: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
enum Phase {
    Approach,
    Settle,
    Descend,
    Retract,
    Done,
}

/// Run one scripted demonstration.
pub fn scripted_expert(
    sim_cfg: &SimConfig,
    expert_cfg: &ExpertConfig,
    seed: u64,
    config_hash: &str,
) -> Result<ExpertEpisode, DataError> {
    expert_cfg.validate(sim_cfg)?;
    let mut sim = new_sim(sim_cfg, seed)?;
    let mut rng = SeededRng::derived(seed, "expert");

    let bc = sim_cfg.button_center;
    let via = [
        bc[0] + rng.uniform_in(-expert_cfg.via_jitter, expert_cfg.via_jitter),
        bc[1] + rng.uniform_in(-expert_cfg.via_jitter, expert_cfg.via_jitter),
        bc[2] + rng.uniform_in(expert_cfg.via_height[0], expert_cfg.via_height[1]),
    ];
    let hover = [bc[0], bc[1], bc[2] + expert_cfg.hover_height];
    let max_step = sim_cfg.max_step_m();

    let obs = sim.start_observation();
    let start_z = obs.eef_position[2] as f64;
    let mut image = obs.image;
    let mut button = obs.button_state.read();
    let mut eef = obs.eef_position;

    let mut phase = Phase::Approach;
    let mut steps: Vec<TimeStep> = Vec::new();
    let mut peak_fz = 0.0f32;
    let mut peak_time = 0.0f64;
    let mut press_time: Option<f64> = None;
    let max_ticks = (expert_cfg.timeout_s / sim_cfg.control_dt).ceil() as usize + 32;

    for tick in 0..max_ticks {
        let t = tick as f64 * sim_cfg.control_dt;
        let pos = [eef[0] as f64, eef[1] as f64, eef[2] as f64];

        // choose the displacement for this tick, meters
        let mut delta = match phase {
            Phase::Approach | Phase::Settle => {
                let target = if phase == Phase::Approach { via } else { hover };
                let to = [target[0] - pos[0], target[1] - pos[1], target[2] - pos[2]];
                let dist = (to[0] * to[0] + to[1] * to[1] + to[2] * to[2]).sqrt();
                let scale = if dist > max_step { max_step / dist } else { 1.0 };
                let mut mv = [to[0] * scale, to[1] * scale, to[2] * scale];
                let len = dist.min(max_step);
                let sigma = expert_cfg.approach_noise_frac * len;
                for m in mv.iter_mut() {
                    *m += rng.gauss() * sigma;
                }
                mv
            }
            Phase::Descend => {
                let height = pos[2] - bc[2];
                let dz = if height > expert_cfg.slow_band {
                    expert_cfg.descent_fast
                } else {
                    expert_cfg.descent_slow
                };
                [0.0, 0.0, -dz]
            }
            Phase::Retract => [0.0, 0.0, max_step * expert_cfg.retract_frac],
            Phase::Done => break,
        };
        for d in delta.iter_mut() {
            *d = d.clamp(-max_step, max_step);
        }
        let action_m = [delta[0] as f32, delta[1] as f32, delta[2] as f32];
        let sim_action = [
            action_m[0] / max_step as f32,
            action_m[1] / max_step as f32,
            action_m[2] / max_step as f32,
        ];

        let out = sim.step(sim_action);
        for (k, f) in out.force_trace.iter().enumerate() {
            let fz = f[2].abs();
            if fz > peak_fz {
                peak_fz = fz;
                peak_time = t + (k + 1) as f64 * sim_cfg.physics_dt;
            }
        }
        if out.press_edge && press_time.is_none() {
            press_time = Some(t + sim_cfg.control_dt * 0.5);
        }

        steps.push(TimeStep {
            image: quantize_image(&image),
            audio: out.audio_chunk.clone(),
            button_state: button,
            eef_position: eef,
            action: action_m,
            force: out.force,
            press_edge: out.press_edge,
            t: t as f32,
        });

        image = out.image;
        button = out.button_state.read();
        eef = out.eef_position;
        let pos_after = [eef[0] as f64, eef[1] as f64, eef[2] as f64];

        // phase transitions react to the step's outcome
        phase = match phase {
            Phase::Approach => {
                let d = dist3(pos_after, via);
                if d <= 0.005 {
                    Phase::Settle
                } else {
                    Phase::Approach
                }
            }
            Phase::Settle => {
                let lat = ((pos_after[0] - hover[0]).powi(2) + (pos_after[1] - hover[1]).powi(2))
                    .sqrt();
                if lat <= expert_cfg.lateral_tolerance && (pos_after[2] - hover[2]).abs() <= 0.002
                {
                    Phase::Descend
                } else {
                    Phase::Settle
                }
            }
            Phase::Descend => {
                if out.press_edge {
                    Phase::Retract
                } else {
                    Phase::Descend
                }
            }
            Phase::Retract => {
                if pos_after[2] >= start_z - 0.001 {
                    Phase::Done
                } else {
                    Phase::Retract
                }
            }
            Phase::Done => Phase::Done,
        };

        if phase == Phase::Done {
            break;
        }
        if press_time.is_none() && t >= expert_cfg.timeout_s {
            break;
        }
    }

    let success = phase == Phase::Done && press_time.is_some();
    Ok(ExpertEpisode {
        episode: Episode {
            steps,
            seed,
            success,
            config_hash: config_hash.to_string(),
        },
        peak_fz,
        peak_time,
        press_time,
    })
}

fn dist3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::replay_matches;

    #[test]
    fn expert_presses_and_retracts() {
        let sim_cfg = SimConfig::default();
        let e = scripted_expert(&sim_cfg, &ExpertConfig::default(), 42, "h").unwrap();
        assert!(e.episode.success);
        assert!(e.press_time.is_some());
        let edges: usize = e.episode.steps.iter().filter(|s| s.press_edge).count();
        assert_eq!(edges, 1);
        // retracted to within 10 mm of the start height
        let start_z = e.episode.steps[0].eef_position[2];
        let last = e.episode.steps.last().unwrap();
        assert!(last.eef_position[2] >= start_z - 0.010);
    }

    #[test]
    fn expert_press_is_gentle() {
        let sim_cfg = SimConfig::default();
        for seed in 0..10 {
            let e = scripted_expert(&sim_cfg, &ExpertConfig::default(), seed, "h").unwrap();
            assert!(e.episode.success, "seed {seed}");
            assert!(
                e.peak_fz >= 2.5 && e.peak_fz <= 4.5,
                "seed {seed}: peak {}",
                e.peak_fz
            );
            // peak force lands within 200 ms of the press event
            let press = e.press_time.unwrap();
            assert!(
                (e.peak_time - press).abs() <= 0.2,
                "seed {seed}: peak at {} press at {press}",
                e.peak_time
            );
        }
    }

    #[test]
    fn same_seed_identical_episode() {
        let sim_cfg = SimConfig::default();
        let a = scripted_expert(&sim_cfg, &ExpertConfig::default(), 7, "h").unwrap();
        let b = scripted_expert(&sim_cfg, &ExpertConfig::default(), 7, "h").unwrap();
        assert_eq!(a.episode, b.episode);
    }

    #[test]
    fn recorded_actions_replay_bit_exactly() {
        let sim_cfg = SimConfig::default();
        let e = scripted_expert(&sim_cfg, &ExpertConfig::default(), 13, "h").unwrap();
        assert!(replay_matches(&sim_cfg, &e.episode).unwrap());
    }

    #[test]
    fn descent_speed_bound_is_enforced() {
        let sim_cfg = SimConfig::default();
        let mut cfg = ExpertConfig::default();
        cfg.descent_slow = 0.005; // > 20% of the 10 mm step limit
        assert!(scripted_expert(&sim_cfg, &cfg, 0, "h").is_err());
    }
}
