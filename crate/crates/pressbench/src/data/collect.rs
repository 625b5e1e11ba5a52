//! Automated dataset collection: run the scripted expert over consecutive
//! seeds, persist successful episodes, and assemble the manifest with
//! normalization statistics.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode_io::write_episode;
use super::expert::{scripted_expert, ExpertConfig};
use super::{DataError, Episode, NormStats};
use crate::dsp::{self, MelConfig, SpecStats};
use crate::sim::SimConfig;

pub const MANIFEST_NAME: &str = "manifest.json";

#[derive(Clone, Copy, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct CollectStats {
    pub requested: usize,
    pub attempted: usize,
    pub failed: usize,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EpisodeEntry {
    pub file: String,
    pub seed: u64,
    pub steps: usize,
    pub peak_fz: f32,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub base_seed: u64,
    pub episodes: Vec<EpisodeEntry>,
    pub collection: CollectStats,
    /// Absent for an empty collection.
    pub norm_stats: Option<NormStats>,
}

/// Collect `n` successful demonstrations into `out_dir`.
pub fn collect(
    sim_cfg: &SimConfig,
    expert_cfg: &ExpertConfig,
    mel: &MelConfig,
    n: usize,
    out_dir: &Path,
    base_seed: u64,
    config_hash: &str,
) -> Result<Manifest, DataError> {
    fs::create_dir_all(out_dir)?;
    let mut episodes: Vec<Episode> = Vec::with_capacity(n);
    let mut entries: Vec<EpisodeEntry> = Vec::with_capacity(n);
    let mut attempted = 0usize;
    let mut failed = 0usize;
    let mut seed = base_seed;
    // collection failures are excluded from the dataset but counted; the cap
    // guards against a misconfigured expert spinning forever
    let max_attempts = n * 4 + 16;
    while episodes.len() < n && attempted < max_attempts {
        attempted += 1;
        let run = scripted_expert(sim_cfg, expert_cfg, seed, config_hash)?;
        if run.episode.success {
            let file = format!("ep_{:05}.pbe", episodes.len());
            write_episode(&out_dir.join(&file), &run.episode)?;
            entries.push(EpisodeEntry {
                file,
                seed,
                steps: run.episode.steps.len(),
                peak_fz: run.peak_fz,
            });
            episodes.push(run.episode);
        } else {
            failed += 1;
        }
        seed = seed.wrapping_add(1);
    }
    if episodes.len() < n {
        return Err(DataError::Config(format!(
            "collection produced only {}/{n} successful episodes in {attempted} attempts",
            episodes.len()
        )));
    }

    let norm_stats = if episodes.is_empty() {
        None
    } else {
        Some(compute_norm_stats(&episodes, mel)?)
    };
    let manifest = Manifest {
        schema_version: 1,
        config_hash: config_hash.to_string(),
        base_seed,
        episodes: entries,
        collection: CollectStats { requested: n, attempted, failed },
        norm_stats,
    };
    write_manifest(out_dir, &manifest)?;
    Ok(manifest)
}

pub fn write_manifest(dir: &Path, manifest: &Manifest) -> Result<(), DataError> {
    let json = serde_json::to_vec_pretty(manifest)
        .map_err(|e| DataError::Format(format!("manifest: {e}")))?;
    fs::write(dir.join(MANIFEST_NAME), json)?;
    Ok(())
}

pub fn read_manifest(dir: &Path) -> Result<Manifest, DataError> {
    let raw = fs::read(dir.join(MANIFEST_NAME))?;
    serde_json::from_slice(&raw).map_err(|e| DataError::Format(format!("manifest: {e}")))
}

/// Min/max action and state bounds plus spectrogram moments over every
/// per-tick 3 s window of the dataset.
pub fn compute_norm_stats(episodes: &[Episode], mel: &MelConfig) -> Result<NormStats, DataError> {
    let mut action_min = [f32::INFINITY; 3];
    let mut action_max = [f32::NEG_INFINITY; 3];
    let mut eef_min = [f32::INFINITY; 3];
    let mut eef_max = [f32::NEG_INFINITY; 3];
    let mut sum = 0.0f64;
    let mut sumsq = 0.0f64;
    let mut count = 0u64;
    for ep in episodes {
        for t in 0..ep.steps.len() {
            let s = &ep.steps[t];
            for i in 0..3 {
                action_min[i] = action_min[i].min(s.action[i]);
                action_max[i] = action_max[i].max(s.action[i]);
                eef_min[i] = eef_min[i].min(s.eef_position[i]);
                eef_max[i] = eef_max[i].max(s.eef_position[i]);
            }
            let spec = dsp::log_mel(&ep.window_at(t, mel), mel)?;
            for &v in &spec.values {
                let v = v as f64;
                sum += v;
                sumsq += v * v;
                count += 1;
            }
        }
    }
    if count == 0 {
        return Err(DataError::Config("no steps to compute stats over".into()));
    }
    let mean = sum / count as f64;
    let var = (sumsq / count as f64 - mean * mean).max(1e-12);
    let stats = NormStats {
        action_min,
        action_max,
        eef_min,
        eef_max,
        spec: SpecStats { mean, std: var.sqrt() },
    };
    stats.validate()?;
    Ok(stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Dataset;

    #[test]
    fn empty_collection_yields_valid_manifest() {
        let dir = tempfile::tempdir().unwrap();
        let m = collect(
            &SimConfig::default(),
            &ExpertConfig::default(),
            &MelConfig::default(),
            0,
            dir.path(),
            0,
            "hash0",
        )
        .unwrap();
        assert!(m.episodes.is_empty());
        assert!(m.norm_stats.is_none());
        let back = read_manifest(dir.path()).unwrap();
        assert_eq!(m, back);
    }

    #[test]
    fn small_collection_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let m = collect(
            &SimConfig::default(),
            &ExpertConfig::default(),
            &MelConfig::default(),
            3,
            dir.path(),
            100,
            "hash1",
        )
        .unwrap();
        assert_eq!(m.episodes.len(), 3);
        let stats = m.norm_stats.as_ref().unwrap();
        stats.validate().unwrap();

        let ds = Dataset::load(dir.path()).unwrap();
        assert_eq!(ds.episodes.len(), 3);
        assert!(ds.flat_len() > 0);
        // normalized actions attain both endpoints by construction
        let ns = ds.norm_stats().unwrap();
        let mut saw_lo = [false; 3];
        let mut saw_hi = [false; 3];
        for ep in &ds.episodes {
            for s in &ep.steps {
                let a = ns.normalize_action(s.action);
                for i in 0..3 {
                    if a[i] == -1.0 {
                        saw_lo[i] = true;
                    }
                    if a[i] == 1.0 {
                        saw_hi[i] = true;
                    }
                }
            }
        }
        assert!(saw_lo.iter().all(|&b| b) && saw_hi.iter().all(|&b| b));
    }

    #[test]
    fn rerun_with_same_seed_is_byte_identical() {
        let d1 = tempfile::tempdir().unwrap();
        let d2 = tempfile::tempdir().unwrap();
        for d in [&d1, &d2] {
            collect(
                &SimConfig::default(),
                &ExpertConfig::default(),
                &MelConfig::default(),
                2,
                d.path(),
                7,
                "hash2",
            )
            .unwrap();
        }
        let m1 = fs::read(d1.path().join(MANIFEST_NAME)).unwrap();
        let m2 = fs::read(d2.path().join(MANIFEST_NAME)).unwrap();
        assert_eq!(m1, m2);
        let e1 = fs::read(d1.path().join("ep_00000.pbe")).unwrap();
        let e2 = fs::read(d2.path().join("ep_00000.pbe")).unwrap();
        assert_eq!(e1, e2);
    }
}
