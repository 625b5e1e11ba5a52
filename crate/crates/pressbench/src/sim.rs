//! Deterministic simulation of a position-controlled fingertip pressing a
//! snap-action button.
//!
//! The fingertip is a point servo (first-order tracking, speed-clamped); the
//! button is a quasi-static detent: force depends only on instantaneous
//! depression, with a snap drop at the click point and a stiff wall at full
//! travel. Each control step advances the inner physics loop, synthesizes
//! fingertip-microphone audio at the configured rate, and renders a top-down
//! wrist view.
//!
//! The binary button state is privileged instrumentation: it is wrapped in
//! [`Privileged`] so evaluation harnesses can verify policies never read it.

use std::sync::atomic::{AtomicBool, Ordering};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rng::SeededRng;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("domain error: {0}")]
    Domain(String),
}

/// Axis-aligned box in meters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct BoxBounds {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl BoxBounds {
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|i| p[i] >= self.min[i] && p[i] <= self.max[i])
    }

    pub fn clamp(&self, p: [f64; 3]) -> [f64; 3] {
        [
            p[0].clamp(self.min[0], self.max[0]),
            p[1].clamp(self.min[1], self.max[1]),
            p[2].clamp(self.min[2], self.max[2]),
        ]
    }
}

/// Contact-audio synthesis parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct AudioConfig {
    pub noise_floor_sigma: f64,
    pub scrape_gain: f64,
    pub click_amp: f64,
    pub click_freq_hz: f64,
    pub click_decay_s: f64,
}

/// Wrist-view rendering parameters.
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct RenderConfig {
    pub width: usize,
    pub height: usize,
    pub focal_px: f64,
    pub min_height_m: f64,
    pub noise_sigma: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    pub control_dt: f64,
    pub physics_dt: f64,
    pub audio_rate: u32,
    pub button_center: [f64; 3],
    pub click_depth: f64,
    pub full_travel: f64,
    pub release_depth: f64,
    pub pre_click_stiffness: f64,
    pub post_click_force: f64,
    pub wall_stiffness: f64,
    pub button_radius: f64,
    pub max_eef_speed: f64,
    pub servo_gain: f64,
    pub start_box: BoxBounds,
    pub workspace: BoxBounds,
    pub audio: AudioConfig,
    pub render: RenderConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            control_dt: 0.1,
            physics_dt: 0.001,
            audio_rate: 16_000,
            button_center: [0.0, 0.0, 0.0],
            click_depth: 0.0015,
            full_travel: 0.0025,
            release_depth: 0.0010,
            pre_click_stiffness: 2000.0,
            post_click_force: 0.8,
            wall_stiffness: 50_000.0,
            button_radius: 0.006,
            max_eef_speed: 0.1,
            servo_gain: 20.0,
            start_box: BoxBounds {
                min: [-0.06, -0.06, 0.08],
                max: [0.06, 0.06, 0.14],
            },
            workspace: BoxBounds {
                min: [-0.15, -0.15, -0.02],
                max: [0.15, 0.15, 0.25],
            },
            audio: AudioConfig {
                noise_floor_sigma: 0.002,
                scrape_gain: 0.5,
                click_amp: 0.5,
                click_freq_hz: 3000.0,
                click_decay_s: 0.005,
            },
            render: RenderConfig {
                width: 96,
                height: 96,
                focal_px: 48.0,
                min_height_m: 0.008,
                noise_sigma: 0.01,
            },
        }
    }
}

impl SimConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::Config(msg));
        if !(self.release_depth < self.click_depth && self.click_depth < self.full_travel) {
            return bad(format!(
                "need release_depth < click_depth < full_travel, got {} / {} / {}",
                self.release_depth, self.click_depth, self.full_travel
            ));
        }
        for (name, v) in [
            ("pre_click_stiffness", self.pre_click_stiffness),
            ("post_click_force", self.post_click_force),
            ("wall_stiffness", self.wall_stiffness),
            ("button_radius", self.button_radius),
            ("max_eef_speed", self.max_eef_speed),
            ("servo_gain", self.servo_gain),
            ("control_dt", self.control_dt),
            ("physics_dt", self.physics_dt),
        ] {
            if !(v > 0.0) {
                return bad(format!("{name} must be strictly positive, got {v}"));
            }
        }
        if self.audio_rate == 0 {
            return bad("audio_rate must be strictly positive".into());
        }
        let substeps = self.control_dt / self.physics_dt;
        if (substeps - substeps.round()).abs() > 1e-9 || substeps < 1.0 {
            return bad(format!(
                "control_dt ({}) must be an integer multiple of physics_dt ({})",
                self.control_dt, self.physics_dt
            ));
        }
        let samples = self.audio_rate as f64 * self.control_dt;
        if (samples - samples.round()).abs() > 1e-9 || samples < 1.0 {
            return bad(format!(
                "audio_rate * control_dt must be an integer, got {samples}"
            ));
        }
        for (name, b) in [("start_box", &self.start_box), ("workspace", &self.workspace)] {
            for i in 0..3 {
                if b.min[i] > b.max[i] {
                    return bad(format!("{name} min exceeds max on axis {i}"));
                }
            }
        }
        for corner in [self.start_box.min, self.start_box.max] {
            if !self.workspace.contains(corner) {
                return bad("start_box must lie inside the workspace".into());
            }
        }
        if self.render.width == 0 || self.render.height == 0 {
            return bad("render dimensions must be positive".into());
        }
        if !(self.render.focal_px > 0.0) || !(self.render.min_height_m > 0.0) {
            return bad("render focal_px and min_height_m must be positive".into());
        }
        if self.audio.click_decay_s <= 0.0 || self.audio.click_freq_hz <= 0.0 {
            return bad("click transient frequency and decay must be positive".into());
        }
        Ok(())
    }

    pub fn substeps(&self) -> usize {
        (self.control_dt / self.physics_dt).round() as usize
    }

    pub fn samples_per_step(&self) -> usize {
        (self.audio_rate as f64 * self.control_dt).round() as usize
    }

    /// Largest commanded displacement per control step, meters.
    pub fn max_step_m(&self) -> f64 {
        self.max_eef_speed * self.control_dt
    }
}

/// Axial detent force as a function of depression (meters).
///
/// Linear spring up to the click point, a constant post-click plateau (the
/// snap), and a stiff wall beyond full travel.
pub fn button_force(depression: f64, cfg: &SimConfig) -> Result<f64, SimError> {
    if !depression.is_finite() || depression < 0.0 {
        return Err(SimError::Domain(format!(
            "depression must be finite and nonnegative, got {depression}"
        )));
    }
    Ok(if depression < cfg.click_depth {
        cfg.pre_click_stiffness * depression
    } else if depression < cfg.full_travel {
        cfg.post_click_force
    } else {
        cfg.post_click_force + cfg.wall_stiffness * (depression - cfg.full_travel)
    })
}

/// A training-time-only value. Reading it raises a taint flag that evaluation
/// harnesses check to prove no privileged signal leaked into inference.
#[derive(Debug)]
pub struct Privileged<T> {
    value: T,
    read: AtomicBool,
}

impl<T: Copy> Privileged<T> {
    pub fn new(value: T) -> Self {
        Self { value, read: AtomicBool::new(false) }
    }

    /// Read the privileged value, tripping the taint flag.
    pub fn read(&self) -> T {
        self.read.store(true, Ordering::Relaxed);
        self.value
    }

    pub fn was_read(&self) -> bool {
        self.read.load(Ordering::Relaxed)
    }
}

/// Products of one 100 ms control step.
#[derive(Debug)]
pub struct StepOutput {
    /// Height x width x 3 intensities in [0, 1], rendered at step end.
    pub image: Vec<f32>,
    /// Fingertip-microphone samples covering this step, in [-1, 1].
    pub audio_chunk: Vec<f32>,
    /// Pressed state at step end (privileged instrumentation).
    pub button_state: Privileged<u8>,
    /// Contact force at step end, N.
    pub force: [f32; 3],
    /// Per-substep contact force, N.
    pub force_trace: Vec<[f32; 3]>,
    /// Fingertip position at step end, m.
    pub eef_position: [f32; 3],
    /// True when a press event occurred during this step.
    pub press_edge: bool,
}

/// State available before the first step.
#[derive(Debug)]
pub struct Observation {
    pub image: Vec<f32>,
    pub button_state: Privileged<u8>,
    pub eef_position: [f32; 3],
}

#[derive(Clone, Debug)]
pub struct SimState {
    config: SimConfig,
    eef: [f64; 3],
    servo_target: [f64; 3],
    depression: f64,
    pressed: bool,
    time: f64,
    /// Press-edge instants still contributing ringing transients.
    active_clicks: Vec<f64>,
    rng: SeededRng,
    seed: u64,
}

/// Initialize a simulation; the start pose is sampled uniformly from the
/// configured start box.
pub fn new_sim(config: &SimConfig, seed: u64) -> Result<SimState, SimError> {
    config.validate()?;
    let mut rng = SeededRng::derived(seed, "sim");
    let b = &config.start_box;
    let eef = [
        rng.uniform_in(b.min[0], b.max[0]),
        rng.uniform_in(b.min[1], b.max[1]),
        rng.uniform_in(b.min[2], b.max[2]),
    ];
    Ok(SimState {
        config: config.clone(),
        eef,
        servo_target: eef,
        depression: 0.0,
        pressed: false,
        time: 0.0,
        active_clicks: Vec::new(),
        rng,
        seed,
    })
}

impl SimState {
    pub fn config(&self) -> &SimConfig {
        &self.config
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn eef_position(&self) -> [f64; 3] {
        self.eef
    }

    pub fn pressed(&self) -> bool {
        self.pressed
    }

    fn eef_f32(&self) -> [f32; 3] {
        [self.eef[0] as f32, self.eef[1] as f32, self.eef[2] as f32]
    }

    /// Observation of the initial state (renders once; consumes render noise
    /// from the state's RNG stream, so call it exactly once per episode,
    /// before the first step).
    pub fn start_observation(&mut self) -> Observation {
        let image = self.render();
        Observation {
            image,
            button_state: Privileged::new(self.pressed as u8),
            eef_position: self.eef_f32(),
        }
    }

    /// Depression of the button implied by a fingertip position.
    fn depression_at(&self, p: [f64; 3]) -> f64 {
        let c = self.config.button_center;
        let lateral = ((p[0] - c[0]).powi(2) + (p[1] - c[1]).powi(2)).sqrt();
        if lateral <= self.config.button_radius {
            (c[2] - p[2]).max(0.0)
        } else {
            0.0
        }
    }

    /// Advance one control step. Action components are clamped to [-1, 1]
    /// and scaled by the per-step displacement limit.
    pub fn step(&mut self, action: [f32; 3]) -> StepOutput {
        let cfg = self.config.clone();
        let max_step = cfg.max_step_m();
        let scaled = [
            (action[0].clamp(-1.0, 1.0) as f64) * max_step,
            (action[1].clamp(-1.0, 1.0) as f64) * max_step,
            (action[2].clamp(-1.0, 1.0) as f64) * max_step,
        ];
        self.servo_target = cfg.workspace.clamp([
            self.eef[0] + scaled[0],
            self.eef[1] + scaled[1],
            self.eef[2] + scaled[2],
        ]);

        let substeps = cfg.substeps();
        let step_start = self.time;
        let mut force_trace = Vec::with_capacity(substeps);
        let mut scrape_amp = vec![0.0f64; substeps];
        let mut new_clicks: Vec<f64> = Vec::new();
        let mut press_edge = false;

        for k in 0..substeps {
            // first-order servo with speed clamp
            let mut vel = [
                cfg.servo_gain * (self.servo_target[0] - self.eef[0]),
                cfg.servo_gain * (self.servo_target[1] - self.eef[1]),
                cfg.servo_gain * (self.servo_target[2] - self.eef[2]),
            ];
            let speed = (vel[0] * vel[0] + vel[1] * vel[1] + vel[2] * vel[2]).sqrt();
            if speed > cfg.max_eef_speed {
                let s = cfg.max_eef_speed / speed;
                vel = [vel[0] * s, vel[1] * s, vel[2] * s];
            }
            self.eef = cfg.workspace.clamp([
                self.eef[0] + vel[0] * cfg.physics_dt,
                self.eef[1] + vel[1] * cfg.physics_dt,
                self.eef[2] + vel[2] * cfg.physics_dt,
            ]);

            let depression = self.depression_at(self.eef);
            // hysteresis: set above click depth, clear below release depth
            if !self.pressed && depression >= cfg.click_depth {
                self.pressed = true;
                press_edge = true;
                let edge_time = step_start + k as f64 * cfg.physics_dt;
                new_clicks.push(edge_time);
            } else if self.pressed && depression < cfg.release_depth {
                self.pressed = false;
            }
            self.depression = depression;

            let fz = if depression > 0.0 {
                button_force(depression, &cfg).expect("depression is nonnegative")
            } else {
                0.0
            };
            force_trace.push([0.0f32, 0.0, fz as f32]);
            if depression > 0.0 {
                scrape_amp[k] = cfg.audio.scrape_gain * (vel[0] * vel[0] + vel[1] * vel[1]).sqrt();
            }
        }

        self.active_clicks.extend(new_clicks);
        let audio_chunk = self.synthesize_audio(step_start, &scrape_amp);
        let horizon = 10.0 * cfg.audio.click_decay_s;
        let step_end = step_start + cfg.control_dt;
        self.active_clicks.retain(|&e| step_end - e <= horizon);

        self.time = step_end;
        let image = self.render();
        StepOutput {
            image,
            audio_chunk,
            button_state: Privileged::new(self.pressed as u8),
            force: *force_trace.last().expect("at least one substep"),
            force_trace,
            eef_position: self.eef_f32(),
            press_edge,
        }
    }

    /// Microphone model: gaussian noise floor, contact scrape proportional to
    /// tangential speed, and an exponentially decaying sine transient per
    /// press edge. Output clipped to [-1, 1].
    fn synthesize_audio(&mut self, step_start: f64, scrape_amp: &[f64]) -> Vec<f32> {
        let cfg = &self.config;
        let n = cfg.samples_per_step();
        let substeps = scrape_amp.len();
        let dt = 1.0 / cfg.audio_rate as f64;
        let a = &cfg.audio;
        let mut out = Vec::with_capacity(n);
        for j in 0..n {
            let t = step_start + j as f64 * dt;
            let sub = (j * substeps / n).min(substeps - 1);
            // fixed two draws per sample keeps the stream aligned across
            // contact patterns
            let mut s = self.rng.gauss() * a.noise_floor_sigma;
            s += self.rng.gauss() * scrape_amp[sub];
            for &edge in &self.active_clicks {
                let tau = t - edge;
                if tau >= 0.0 {
                    s += a.click_amp
                        * (-tau / a.click_decay_s).exp()
                        * (std::f64::consts::TAU * a.click_freq_hz * tau).sin();
                }
            }
            out.push(s.clamp(-1.0, 1.0) as f32);
        }
        out
    }

    /// Top-down wrist view: dark background plus the button disc. Disc center
    /// and radius follow a pinhole projection of the button relative to the
    /// fingertip; the disc brightens while pressed.
    fn render(&mut self) -> Vec<f32> {
        let cfg = &self.config;
        let r = &cfg.render;
        let c = cfg.button_center;
        let h = (self.eef[2] - c[2]).max(r.min_height_m);
        let u0 = r.width as f64 / 2.0 + r.focal_px * (c[0] - self.eef[0]) / h;
        let v0 = r.height as f64 / 2.0 + r.focal_px * (c[1] - self.eef[1]) / h;
        let radius = r.focal_px * cfg.button_radius / h;

        const BG: [f64; 3] = [0.10, 0.11, 0.13];
        const DISC: [f64; 3] = [0.55, 0.22, 0.18];
        const DISC_PRESSED: [f64; 3] = [0.95, 0.50, 0.35];
        let disc = if self.pressed { DISC_PRESSED } else { DISC };

        let mut img = Vec::with_capacity(r.width * r.height * 3);
        for py in 0..r.height {
            for px in 0..r.width {
                let dx = px as f64 + 0.5 - u0;
                let dy = py as f64 + 0.5 - v0;
                let dist = (dx * dx + dy * dy).sqrt();
                // 1.5 px feathered edge
                let alpha = ((radius + 0.75 - dist) / 1.5).clamp(0.0, 1.0);
                for ch in 0..3 {
                    let base = BG[ch] * (1.0 - alpha) + disc[ch] * alpha;
                    let noisy = base + self.rng.gauss() * r.noise_sigma;
                    img.push(noisy.clamp(0.0, 1.0) as f32);
                }
            }
        }
        img
    }

    /// Disc footprint mask at the current pose (no rng consumed); true where
    /// the rendered disc has any influence. Test support.
    pub fn disc_mask(&self) -> Vec<bool> {
        let cfg = &self.config;
        let r = &cfg.render;
        let c = cfg.button_center;
        let h = (self.eef[2] - c[2]).max(r.min_height_m);
        let u0 = r.width as f64 / 2.0 + r.focal_px * (c[0] - self.eef[0]) / h;
        let v0 = r.height as f64 / 2.0 + r.focal_px * (c[1] - self.eef[1]) / h;
        let radius = r.focal_px * cfg.button_radius / h;
        let mut mask = Vec::with_capacity(r.width * r.height);
        for py in 0..r.height {
            for px in 0..r.width {
                let dx = px as f64 + 0.5 - u0;
                let dy = py as f64 + 0.5 - v0;
                let dist = (dx * dx + dy * dy).sqrt();
                mask.push((radius + 0.75 - dist) / 1.5 > 0.0);
            }
        }
        mask
    }
}

/// Intensity centroid of an image, for projection tests.
pub fn image_centroid(img: &[f32], width: usize, height: usize) -> (f64, f64) {
    let mut sx = 0.0;
    let mut sy = 0.0;
    let mut total = 0.0;
    for py in 0..height {
        for px in 0..width {
            let i = (py * width + px) * 3;
            let lum = (img[i] + img[i + 1] + img[i + 2]) as f64;
            sx += lum * px as f64;
            sy += lum * py as f64;
            total += lum;
        }
    }
    (sx / total, sy / total)
}
