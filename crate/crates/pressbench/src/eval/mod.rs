//! Rollout harness and contact-quality metrics: success rate with Bayesian
//! credible intervals, peak vertical force, Wasserstein-1 distance to the
//! expert force distribution, and report emission.

pub mod beta;
pub mod report;
pub mod rollout;
pub mod wasserstein;

pub use beta::{beta_cdf, beta_credible_interval, beta_quantile, ln_gamma, CredibleInterval};
pub use report::{
    make_report, plot_data, EvalReport, ExpertReference, PlotData, ReportMeta, VariantEval,
    VariantResults,
};
pub use rollout::{
    peak_fz, run_rollouts, run_rollouts_with, RolloutObs, RolloutOptions, RolloutResult,
};
pub use wasserstein::wasserstein1;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("domain error: {0}")]
    Domain(String),
    #[error("privileged leak: {0}")]
    PrivilegedLeak(String),
    #[error(transparent)]
    Policy(#[from] crate::policy::PolicyError),
    #[error(transparent)]
    Sim(#[from] crate::sim::SimError),
    #[error(transparent)]
    Dsp(#[from] crate::dsp::DspError),
}
