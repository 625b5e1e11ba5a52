//! Audio front end: resampling, framing, log-Mel spectrograms, normalization.
//!
//! All operations are pure functions; the 3-second, 16 kHz analysis window
//! always produces a 298x128 spectrogram (25 ms Hann frames, 10 ms hop,
//! 512-point FFT, 128 HTK-mel filters over 0..8 kHz).

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DspError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("configuration error: {0}")]
    Config(String),
}

/// Log-Mel front-end parameters.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct MelConfig {
    pub sample_rate: u32,
    pub window_length: usize,
    pub hop_length: usize,
    pub fft_size: usize,
    pub n_mels: usize,
    pub f_min: f64,
    pub f_max: f64,
    pub log_floor: f64,
}

impl Default for MelConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            window_length: 400,
            hop_length: 160,
            fft_size: 512,
            n_mels: 128,
            f_min: 0.0,
            f_max: 8_000.0,
            log_floor: 1e-10,
        }
    }
}

/// Frames in the 3-second analysis window.
pub const SPEC_FRAMES: usize = 298;
/// Mel bins.
pub const SPEC_BINS: usize = 128;
/// Samples in the 3-second analysis window at 16 kHz.
pub const WINDOW_SAMPLES: usize = 48_000;

impl MelConfig {
    pub fn validate(&self) -> Result<(), DspError> {
        if self.sample_rate == 0 {
            return Err(DspError::Config("sample_rate must be positive".into()));
        }
        if self.window_length > self.fft_size {
            return Err(DspError::Config(format!(
                "window_length {} exceeds fft_size {}",
                self.window_length, self.fft_size
            )));
        }
        if self.hop_length > self.window_length || self.hop_length == 0 {
            return Err(DspError::Config(format!(
                "hop_length {} must be in 1..=window_length {}",
                self.hop_length, self.window_length
            )));
        }
        if !self.fft_size.is_power_of_two() {
            return Err(DspError::Config(format!(
                "fft_size {} must be a power of two",
                self.fft_size
            )));
        }
        if self.f_max > self.sample_rate as f64 / 2.0 {
            return Err(DspError::Config(format!(
                "f_max {} exceeds Nyquist {}",
                self.f_max,
                self.sample_rate as f64 / 2.0
            )));
        }
        if self.f_min < 0.0 || self.f_min >= self.f_max {
            return Err(DspError::Config("need 0 <= f_min < f_max".into()));
        }
        if self.log_floor <= 0.0 {
            return Err(DspError::Config("log_floor must be positive".into()));
        }
        if self.n_mels != SPEC_BINS {
            return Err(DspError::Config(format!(
                "n_mels {} != {SPEC_BINS}: encoders expect a fixed spectrogram shape",
                self.n_mels
            )));
        }
        let frames = self.frames_for(self.window_samples());
        if frames != SPEC_FRAMES {
            return Err(DspError::Config(format!(
                "window/hop produce {frames} frames per 3 s window, expected {SPEC_FRAMES}"
            )));
        }
        Ok(())
    }

    /// Samples in a 3-second analysis window.
    pub fn window_samples(&self) -> usize {
        3 * self.sample_rate as usize
    }

    pub fn frames_for(&self, samples: usize) -> usize {
        if samples < self.window_length {
            return 0;
        }
        1 + (samples - self.window_length) / self.hop_length
    }
}

/// One 298x128 log-energy observation.
#[derive(Clone, Debug, PartialEq)]
pub struct LogMelSpectrogram {
    /// Row-major [frames][mel] log energies.
    pub values: Vec<f32>,
    pub start_time: f64,
}

impl LogMelSpectrogram {
    pub fn frames(&self) -> usize {
        SPEC_FRAMES
    }

    pub fn bins(&self) -> usize {
        SPEC_BINS
    }

    pub fn at(&self, frame: usize, bin: usize) -> f32 {
        self.values[frame * SPEC_BINS + bin]
    }
}

/// Spectrogram normalization statistics (corpus mean / std of log energies).
#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct SpecStats {
    pub mean: f64,
    pub std: f64,
}

impl SpecStats {
    pub fn validate(&self) -> Result<(), DspError> {
        if !(self.std > 0.0) {
            return Err(DspError::Config(format!(
                "std must be positive, got {}",
                self.std
            )));
        }
        Ok(())
    }

    /// Accumulate mean/std over a corpus of spectrograms.
    pub fn from_corpus<'a>(
        specs: impl Iterator<Item = &'a LogMelSpectrogram>,
    ) -> Result<Self, DspError> {
        let mut n = 0u64;
        let mut sum = 0.0f64;
        let mut sumsq = 0.0f64;
        for s in specs {
            for &v in &s.values {
                let v = v as f64;
                sum += v;
                sumsq += v * v;
                n += 1;
            }
        }
        if n == 0 {
            return Err(DspError::Config("empty spectrogram corpus".into()));
        }
        let mean = sum / n as f64;
        let var = (sumsq / n as f64 - mean * mean).max(1e-12);
        Ok(Self { mean, std: var.sqrt() })
    }
}

/// Normalize by (x - mean) / (2 std): half-unit variance.
pub fn normalize_spec(
    spec: &LogMelSpectrogram,
    stats: &SpecStats,
) -> Result<LogMelSpectrogram, DspError> {
    stats.validate()?;
    let inv = 1.0 / (2.0 * stats.std);
    let mean = stats.mean;
    Ok(LogMelSpectrogram {
        values: spec
            .values
            .iter()
            .map(|&v| ((v as f64 - mean) * inv) as f32)
            .collect(),
        start_time: spec.start_time,
    })
}

/// Invert [`normalize_spec`].
pub fn denormalize_spec(spec: &LogMelSpectrogram, stats: &SpecStats) -> LogMelSpectrogram {
    LogMelSpectrogram {
        values: spec
            .values
            .iter()
            .map(|&v| (v as f64 * 2.0 * stats.std + stats.mean) as f32)
            .collect(),
        start_time: spec.start_time,
    }
}

/// HTK mel scale.
pub fn hz_to_mel(f: f64) -> f64 {
    2595.0 * (1.0 + f / 700.0).log10()
}

pub fn mel_to_hz(m: f64) -> f64 {
    700.0 * (10f64.powf(m / 2595.0) - 1.0)
}

/// Triangular filterbank on the HTK mel scale.
///
/// Returns row-major [n_mels][fft_size/2 + 1] weights plus the filter center
/// frequencies in Hz.
pub fn mel_filterbank(cfg: &MelConfig) -> (Vec<f64>, Vec<f64>) {
    let n_bins = cfg.fft_size / 2 + 1;
    let mel_lo = hz_to_mel(cfg.f_min);
    let mel_hi = hz_to_mel(cfg.f_max);
    // n_mels filters need n_mels + 2 edge points
    let edges: Vec<f64> = (0..cfg.n_mels + 2)
        .map(|i| mel_lo + (mel_hi - mel_lo) * i as f64 / (cfg.n_mels + 1) as f64)
        .collect();
    let centers_hz: Vec<f64> = edges[1..=cfg.n_mels].iter().map(|&m| mel_to_hz(m)).collect();
    let mut weights = vec![0.0f64; cfg.n_mels * n_bins];
    for bin in 0..n_bins {
        let f = bin as f64 * cfg.sample_rate as f64 / cfg.fft_size as f64;
        let m = hz_to_mel(f);
        for k in 0..cfg.n_mels {
            let (lo, mid, hi) = (edges[k], edges[k + 1], edges[k + 2]);
            let w = if m <= lo || m >= hi {
                0.0
            } else if m <= mid {
                (m - lo) / (mid - lo)
            } else {
                (hi - m) / (hi - mid)
            };
            weights[k * n_bins + bin] = w;
        }
    }
    (weights, centers_hz)
}

/// Iterative radix-2 complex FFT (in place, decimation in time).
pub fn fft_in_place(re: &mut [f64], im: &mut [f64]) {
    let n = re.len();
    debug_assert!(n.is_power_of_two());
    debug_assert_eq!(im.len(), n);
    // bit reversal
    let mut j = 0usize;
    for i in 0..n {
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
        let mut mask = n >> 1;
        while mask > 0 && j & mask != 0 {
            j ^= mask;
            mask >>= 1;
        }
        j |= mask;
    }
    let mut len = 2;
    while len <= n {
        let ang = -2.0 * std::f64::consts::PI / len as f64;
        let (wr, wi) = (ang.cos(), ang.sin());
        let mut start = 0;
        while start < n {
            let (mut cr, mut ci) = (1.0f64, 0.0f64);
            for off in 0..len / 2 {
                let a = start + off;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
                let ncr = cr * wr - ci * wi;
                ci = cr * wi + ci * wr;
                cr = ncr;
            }
            start += len;
        }
        len <<= 1;
    }
}

/// Periodic Hann window.
fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 * (1.0 - (std::f64::consts::TAU * i as f64 / n as f64).cos()))
        .collect()
}

/// Log-Mel spectrogram of exactly one 3-second window.
pub fn log_mel(window: &[f32], cfg: &MelConfig) -> Result<LogMelSpectrogram, DspError> {
    log_mel_at(window, cfg, 0.0)
}

/// Like [`log_mel`] with an explicit start time carried into the result.
pub fn log_mel_at(
    window: &[f32],
    cfg: &MelConfig,
    start_time: f64,
) -> Result<LogMelSpectrogram, DspError> {
    cfg.validate()?;
    let want = cfg.window_samples();
    if window.len() != want {
        return Err(DspError::Shape(format!(
            "window length {} != {want}",
            window.len()
        )));
    }
    let (filters, _) = mel_filterbank(cfg);
    let n_bins = cfg.fft_size / 2 + 1;
    let n_frames = cfg.frames_for(want);
    let hann = hann(cfg.window_length);
    let log_floor = cfg.log_floor;

    let mut values = vec![0.0f32; n_frames * cfg.n_mels];
    let mut re = vec![0.0f64; cfg.fft_size];
    let mut im = vec![0.0f64; cfg.fft_size];
    let mut power = vec![0.0f64; n_bins];
    for frame in 0..n_frames {
        let off = frame * cfg.hop_length;
        for i in 0..cfg.fft_size {
            re[i] = if i < cfg.window_length {
                window[off + i] as f64 * hann[i]
            } else {
                0.0
            };
            im[i] = 0.0;
        }
        fft_in_place(&mut re, &mut im);
        for b in 0..n_bins {
            power[b] = re[b] * re[b] + im[b] * im[b];
        }
        for k in 0..cfg.n_mels {
            let row = &filters[k * n_bins..(k + 1) * n_bins];
            let mut energy = 0.0f64;
            for b in 0..n_bins {
                energy += row[b] * power[b];
            }
            values[frame * cfg.n_mels + k] = energy.max(log_floor).ln() as f32;
        }
    }
    Ok(LogMelSpectrogram { values, start_time })
}

/// Linear-interpolation resampling. Output length = round(len * dst / src).
pub fn resample(samples: &[f32], src_rate: u32, dst_rate: u32) -> Result<Vec<f32>, DspError> {
    if src_rate == 0 || dst_rate == 0 {
        return Err(DspError::Config("sample rates must be positive".into()));
    }
    if samples.is_empty() {
        return Ok(Vec::new());
    }
    if src_rate == dst_rate {
        return Ok(samples.to_vec());
    }
    let ratio = src_rate as f64 / dst_rate as f64;
    let out_len = (samples.len() as f64 * dst_rate as f64 / src_rate as f64).round() as usize;
    let mut out = Vec::with_capacity(out_len);
    for j in 0..out_len {
        let pos = j as f64 * ratio;
        let i0 = (pos.floor() as usize).min(samples.len() - 1);
        let i1 = (i0 + 1).min(samples.len() - 1);
        let frac = (pos - i0 as f64) as f32;
        out.push(samples[i0] * (1.0 - frac) + samples[i1] * frac);
    }
    Ok(out)
}

/// Rolling audio history serving fixed 3-second windows.
///
/// Keeps the most recent 3 s of the stream; older history is discarded.
/// Windows younger than 3 s are zero-padded on the left.
#[derive(Clone, Debug)]
pub struct AudioRing {
    sample_rate: u32,
    window: usize,
    buf: Vec<f32>,
    total: u64,
}

impl AudioRing {
    pub fn new(sample_rate: u32) -> Self {
        let window = 3 * sample_rate as usize;
        Self {
            sample_rate,
            window,
            buf: vec![0.0; window],
            total: 0,
        }
    }

    pub fn push(&mut self, chunk: &[f32]) {
        for &s in chunk {
            let idx = (self.total % self.window as u64) as usize;
            self.buf[idx] = s;
            self.total += 1;
        }
    }

    /// Samples pushed so far.
    pub fn len(&self) -> u64 {
        self.total
    }

    pub fn is_empty(&self) -> bool {
        self.total == 0
    }

    /// The most recent 3 s ending at time `t` (seconds). `t` must not exceed
    /// the stream head and must not trail it by more than the retained
    /// window.
    pub fn window_ending_at(&self, t: f64) -> Result<Vec<f32>, DspError> {
        let end = (t * self.sample_rate as f64).round() as i64;
        if end < 0 {
            return Err(DspError::Config(format!("negative window end time {t}")));
        }
        let end = end as u64;
        if end > self.total {
            return Err(DspError::Config(format!(
                "window ends at sample {end} but only {} samples exist",
                self.total
            )));
        }
        if self.total - end >= self.window as u64 {
            return Err(DspError::Config(
                "window end has already left the retained history".into(),
            ));
        }
        let mut out = vec![0.0f32; self.window];
        let start = end.saturating_sub(self.window as u64);
        let pad = self.window - (end - start) as usize;
        for (k, src) in (start..end).enumerate() {
            let idx = (src % self.window as u64) as usize;
            out[pad + k] = self.buf[idx];
        }
        Ok(out)
    }
}
