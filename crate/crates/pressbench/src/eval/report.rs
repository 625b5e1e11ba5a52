//! Evaluation report assembly: success rates with credible intervals, peak
//! force distributions, Wasserstein distances to the expert reference, and
//! the ranked summary emitted as JSON.

use serde::{Deserialize, Serialize};

use super::beta::{beta_credible_interval, CredibleInterval};
use super::rollout::RolloutResult;
use super::wasserstein::wasserstein1;
use super::EvalError;

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ReportMeta {
    pub rollouts_per_variant: usize,
    pub base_seed: u64,
    pub config_hash: String,
    pub prior: String,
    /// "peak_fz" or "force_trace" depending on the W1 source flag.
    pub w1_source: String,
    pub non_paper_defaults: Vec<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct ExpertReference {
    pub episodes: usize,
    pub peak_fz: Vec<f64>,
    pub peak_fz_median: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct VariantEval {
    pub variant: String,
    pub trials: usize,
    pub successes: usize,
    pub success_rate: f64,
    pub credible_interval: CredibleInterval,
    pub peak_fz: Vec<f64>,
    pub peak_fz_median: Option<f64>,
    /// Absent when no rollout succeeded (no force distribution exists).
    pub w1_to_expert: Option<f64>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct EvalReport {
    pub schema_version: u32,
    pub metadata: ReportMeta,
    pub expert: ExpertReference,
    pub variants: Vec<VariantEval>,
    /// Variant names sorted ascending by W1 (variants without a W1 last).
    pub ranking: Vec<String>,
}

/// Histogram plot data, 0.5 N bins by default.
#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlotData {
    pub schema_version: u32,
    pub bin_width: f64,
    pub series: Vec<PlotSeries>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlotSeries {
    pub name: String,
    pub bins: Vec<PlotBin>,
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct PlotBin {
    pub lo: f64,
    pub hi: f64,
    pub count: usize,
}

fn median(sorted: &[f64]) -> Option<f64> {
    if sorted.is_empty() {
        return None;
    }
    let n = sorted.len();
    Some(if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    })
}

/// Per-variant rollout results to aggregate.
pub struct VariantResults<'a> {
    pub name: String,
    pub results: &'a [RolloutResult],
}

/// Assemble the evaluation report.
///
/// `expert_peaks` is the expert per-episode peak-force reference; the W1
/// source is the per-rollout peak force unless `w1_on_traces` pools the whole
/// per-substep |F_z| trajectories instead.
pub fn make_report(
    variants: &[VariantResults],
    expert_peaks: &[f64],
    expert_traces: Option<&[Vec<f64>]>,
    w1_on_traces: bool,
    meta: ReportMeta,
) -> Result<EvalReport, EvalError> {
    if variants.is_empty() {
        return Err(EvalError::Domain("report needs at least one variant".into()));
    }
    if expert_peaks.is_empty() {
        return Err(EvalError::Domain("report needs a nonempty expert reference".into()));
    }
    let mut expert_sorted = expert_peaks.to_vec();
    expert_sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let expert_ref = ExpertReference {
        episodes: expert_peaks.len(),
        peak_fz_median: median(&expert_sorted).expect("nonempty"),
        peak_fz: expert_sorted.clone(),
    };
    let expert_w1_samples: Vec<f64> = if w1_on_traces {
        expert_traces
            .ok_or_else(|| {
                EvalError::Domain("trace-level W1 requested without expert traces".into())
            })?
            .iter()
            .flatten()
            .copied()
            .collect()
    } else {
        expert_sorted
    };

    let mut evals = Vec::with_capacity(variants.len());
    for v in variants {
        let trials = v.results.len();
        let successes = v.results.iter().filter(|r| r.success).count();
        let mut peaks: Vec<f64> = v.results.iter().filter_map(|r| r.peak_fz).collect();
        peaks.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let w1_samples: Vec<f64> = if w1_on_traces {
            v.results
                .iter()
                .filter(|r| r.success)
                .flat_map(|r| r.force_trace.iter().map(|f| f[2].abs() as f64))
                .collect()
        } else {
            peaks.clone()
        };
        let w1_to_expert = if w1_samples.is_empty() {
            None
        } else {
            Some(wasserstein1(&w1_samples, &expert_w1_samples)?)
        };
        evals.push(VariantEval {
            variant: v.name.clone(),
            trials,
            successes,
            success_rate: if trials > 0 { successes as f64 / trials as f64 } else { 0.0 },
            credible_interval: beta_credible_interval(successes, trials, 0.95)?,
            peak_fz_median: median(&peaks),
            peak_fz: peaks,
            w1_to_expert,
        });
    }

    let mut order: Vec<usize> = (0..evals.len()).collect();
    order.sort_by(|&i, &j| match (evals[i].w1_to_expert, evals[j].w1_to_expert) {
        (Some(a), Some(b)) => a.partial_cmp(&b).unwrap(),
        (Some(_), None) => std::cmp::Ordering::Less,
        (None, Some(_)) => std::cmp::Ordering::Greater,
        (None, None) => evals[i].variant.cmp(&evals[j].variant),
    });
    let ranking = order.iter().map(|&i| evals[i].variant.clone()).collect();

    Ok(EvalReport {
        schema_version: 1,
        metadata: meta,
        expert: expert_ref,
        variants: evals,
        ranking,
    })
}

/// 0.5 N histograms of peak forces for external plotting.
pub fn plot_data(report: &EvalReport, bin_width: f64) -> PlotData {
    let hist = |samples: &[f64]| -> Vec<PlotBin> {
        if samples.is_empty() {
            return Vec::new();
        }
        let max = samples.iter().cloned().fold(0.0f64, f64::max);
        let n_bins = (max / bin_width).floor() as usize + 1;
        let mut bins: Vec<PlotBin> = (0..n_bins)
            .map(|i| PlotBin {
                lo: i as f64 * bin_width,
                hi: (i + 1) as f64 * bin_width,
                count: 0,
            })
            .collect();
        for &s in samples {
            let idx = ((s / bin_width).floor() as usize).min(n_bins - 1);
            bins[idx].count += 1;
        }
        bins
    };
    let mut series = vec![PlotSeries {
        name: "expert".into(),
        bins: hist(&report.expert.peak_fz),
    }];
    for v in &report.variants {
        series.push(PlotSeries { name: v.variant.clone(), bins: hist(&v.peak_fz) });
    }
    PlotData { schema_version: 1, bin_width, series }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn meta() -> ReportMeta {
        ReportMeta {
            rollouts_per_variant: 40,
            base_seed: 0,
            config_hash: "h".into(),
            prior: "Beta(1,1)".into(),
            w1_source: "peak_fz".into(),
            non_paper_defaults: vec![],
        }
    }

    fn fake_results(peaks: &[f64]) -> Vec<RolloutResult> {
        peaks
            .iter()
            .enumerate()
            .map(|(i, &p)| RolloutResult {
                success: true,
                peak_fz: Some(p),
                force_trace: vec![[0.0, 0.0, p as f32]],
                duration: 5.0,
                seed: i as u64,
            })
            .collect()
    }

    #[test]
    fn variant_matching_expert_ranks_first_with_zero_w1() {
        let expert = vec![3.0, 3.1, 2.9, 3.0];
        let same = fake_results(&expert);
        let far = fake_results(&[9.0, 9.5, 8.5, 9.0]);
        let report = make_report(
            &[
                VariantResults { name: "far".into(), results: &far },
                VariantResults { name: "same".into(), results: &same },
            ],
            &expert,
            None,
            false,
            meta(),
        )
        .unwrap();
        assert_eq!(report.ranking[0], "same");
        let same_eval = report.variants.iter().find(|v| v.variant == "same").unwrap();
        assert_eq!(same_eval.w1_to_expert, Some(0.0));
    }

    /// Injected distances reproduce the published ordering: fusion variants
    /// closest, generic next, soft sensor last.
    #[test]
    fn injected_distances_reproduce_the_reference_ranking() {
        // expert at 0; a single sample at distance W gives W1 = W exactly
        let expert = vec![0.0];
        let soft = fake_results(&[5.0]);
        let generic = fake_results(&[4.6]);
        let fusion_embed = fake_results(&[2.5]);
        let fusion_logits = fake_results(&[2.8]);
        let report = make_report(
            &[
                VariantResults { name: "soft-sensor".into(), results: &soft },
                VariantResults { name: "generic".into(), results: &generic },
                VariantResults { name: "fusion-embed".into(), results: &fusion_embed },
                VariantResults { name: "fusion-logits".into(), results: &fusion_logits },
            ],
            &expert,
            None,
            false,
            meta(),
        )
        .unwrap();
        assert_eq!(
            report.ranking,
            vec!["fusion-embed", "fusion-logits", "generic", "soft-sensor"]
        );
    }

    #[test]
    fn success_counting_is_integral() {
        let mut results = fake_results(&[3.0, 4.0, 5.0]);
        results.push(RolloutResult {
            success: false,
            peak_fz: None,
            force_trace: vec![[0.0; 3]],
            duration: 10.0,
            seed: 99,
        });
        let report = make_report(
            &[VariantResults { name: "v".into(), results: &results }],
            &[3.0],
            None,
            false,
            meta(),
        )
        .unwrap();
        let v = &report.variants[0];
        assert_eq!(v.successes, 3);
        assert_eq!(v.trials, 4);
        let recount = (v.success_rate * v.trials as f64).round() as usize;
        assert_eq!(recount, v.successes);
        // failed rollouts contribute no peak samples
        assert_eq!(v.peak_fz.len(), 3);
    }

    #[test]
    fn report_round_trips_through_json() {
        let results = fake_results(&[3.0, 4.0]);
        let report = make_report(
            &[VariantResults { name: "v".into(), results: &results }],
            &[3.0, 3.5],
            None,
            false,
            meta(),
        )
        .unwrap();
        let json = serde_json::to_string_pretty(&report).unwrap();
        let back: EvalReport = serde_json::from_str(&json).unwrap();
        assert_eq!(report, back);
        // serialization is deterministic
        assert_eq!(json, serde_json::to_string_pretty(&back).unwrap());
    }

    #[test]
    fn plot_bins_cover_all_samples() {
        let results = fake_results(&[0.2, 0.7, 3.4, 3.6, 7.9]);
        let report = make_report(
            &[VariantResults { name: "v".into(), results: &results }],
            &[3.0],
            None,
            false,
            meta(),
        )
        .unwrap();
        let plot = plot_data(&report, 0.5);
        let v = plot.series.iter().find(|s| s.name == "v").unwrap();
        let total: usize = v.bins.iter().map(|b| b.count).sum();
        assert_eq!(total, 5);
        for b in &v.bins {
            assert!((b.hi - b.lo - 0.5).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_success_variant_ranks_last_without_w1() {
        let ok = fake_results(&[3.0]);
        let none: Vec<RolloutResult> = vec![RolloutResult {
            success: false,
            peak_fz: None,
            force_trace: vec![[0.0; 3]],
            duration: 10.0,
            seed: 0,
        }];
        let report = make_report(
            &[
                VariantResults { name: "dead".into(), results: &none },
                VariantResults { name: "ok".into(), results: &ok },
            ],
            &[3.0],
            None,
            false,
            meta(),
        )
        .unwrap();
        assert_eq!(report.ranking, vec!["ok", "dead"]);
        assert_eq!(report.variants[0].w1_to_expert, None);
    }
}
