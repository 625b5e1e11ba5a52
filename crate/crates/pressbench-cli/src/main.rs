//! Command-line pipeline driver.
//!
//! Subcommands run the stages end to end with seeded, reproducible outputs:
//! `default-config`, `collect`, `train-detector`, `train-policy`,
//! `evaluate`, and `selftest`. Exit codes: 0 success, 1 runtime or contract
//! failure (privileged-read taint, numeric divergence), 2 usage errors.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pressbench::config::RunConfig;
use pressbench::pipeline::{self, selftest};
use pressbench::policy::Variant;

#[derive(Parser)]
#[command(name = "pressbench", version, about = "Simulated button-pressing pipeline")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct ConfigArgs {
    /// JSON run configuration; defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the configured base seed.
    #[arg(long)]
    seed: Option<u64>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig, String> {
        let mut cfg = match &self.config {
            Some(path) => RunConfig::from_file(path).map_err(|e| e.to_string())?,
            None => RunConfig::default(),
        };
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        Ok(cfg)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Print the full default configuration as JSON.
    DefaultConfig,
    /// Collect scripted demonstrations into a dataset directory.
    Collect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Successful episodes to collect.
        #[arg(long)]
        episodes: Option<usize>,
        /// Output dataset directory.
        #[arg(long)]
        out: PathBuf,
    },
    /// Pretrain the audio encoder and fine-tune the click detector.
    TrainDetector {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset directory from `collect`.
        #[arg(long)]
        dataset: PathBuf,
        /// Pretraining epochs over the synthetic event corpus.
        #[arg(long)]
        pretrain_epochs: Option<usize>,
        /// Fine-tuning epochs.
        #[arg(long)]
        epochs: Option<usize>,
        /// Fine-tuning learning rate.
        #[arg(long)]
        lr: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one diffusion-policy variant.
    TrainPolicy {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        dataset: PathBuf,
        /// generic | fusion-logits | fusion-embed | soft-sensor
        #[arg(long)]
        variant: String,
        /// Detector checkpoint (required; the generic variant uses its
        /// pretrained encoder).
        #[arg(long)]
        detector: Option<PathBuf>,
        /// Training steps.
        #[arg(long)]
        steps: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate policy checkpoints and write report.json / plotdata.json.
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Policy checkpoint; repeat for several variants.
        #[arg(long = "policy", required = true)]
        policies: Vec<PathBuf>,
        #[arg(long)]
        rollouts: Option<usize>,
        /// Dataset directory providing the expert force reference.
        #[arg(long)]
        expert_dataset: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Test hook: force a privileged read to prove the taint trips.
        #[arg(long, hide = true)]
        debug_read_privileged: bool,
    },
    /// Run the built-in oracle suites.
    Selftest {
        /// Test hook: inject a known defect ("gradient-bug").
        #[arg(long, hide = true)]
        inject_fault: Option<String>,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}

fn header(stage: &str, cfg: &RunConfig) {
    println!("pressbench {stage} | config {} | seed {}", cfg.hash(), cfg.seed);
}

fn run(cli: Cli) -> Result<ExitCode, String> {
    match cli.command {
        Command::DefaultConfig => {
            println!("{}", RunConfig::default().to_json_pretty());
            Ok(ExitCode::SUCCESS)
        }
        Command::Collect { cfg, episodes, out } => {
            let cfg = cfg.load()?;
            header("collect", &cfg);
            let n = episodes.unwrap_or(cfg.collect.episodes);
            let manifest = pipeline::run_collect(&cfg, n, &out, cfg.seed)
                .map_err(|e| e.to_string())?;
            println!(
                "collected {} episodes ({} attempts, {} failed) -> {}",
                manifest.episodes.len(),
                manifest.collection.attempted,
                manifest.collection.failed,
                out.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainDetector { cfg, dataset, pretrain_epochs, epochs, lr, out } => {
            let cfg = cfg.load()?;
            header("train-detector", &cfg);
            let outcome = pipeline::run_train_detector(
                &cfg,
                &dataset,
                &out,
                pretrain_epochs.unwrap_or(cfg.detector.pretrain_epochs),
                epochs.unwrap_or(cfg.detector.finetune_epochs),
                lr.unwrap_or(cfg.detector.finetune_lr),
            )
            .map_err(|e| e.to_string())?;
            println!(
                "pretrain accuracy {:.3} | validation f1 {:.4} | fn rate {:.4} -> {}",
                outcome.pretrain_accuracy,
                outcome.metrics.f1,
                outcome.metrics.false_negative_rate,
                outcome.checkpoint.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::TrainPolicy { cfg, dataset, variant, detector, steps, out } => {
            let cfg = cfg.load()?;
            header("train-policy", &cfg);
            let variant = Variant::parse(&variant).map_err(|e| e.to_string())?;
            let detector = match detector {
                Some(d) => d,
                None =>

                {
                    // usage error: exit 2 like other argument problems
                    eprintln!(
                        "error: --detector is required (all variants read an encoder from it)"
                    );
                    return Ok(ExitCode::from(2));
                }
            };
            if variant == Variant::Generic {
                eprintln!(
                    "note: generic variant conditions on the pretrained encoder inside {}, \
                     not the fine-tuned detector",
                    detector.display()
                );
            }
            let steps = steps.unwrap_or(cfg.policy.steps);
            let (path, report) = pipeline::run_train_policy(
                &cfg,
                &dataset,
                variant,
                &detector,
                &out,
                steps,
                cfg.seed,
            )
            .map_err(|e| e.to_string())?;
            let first = report.losses.first().copied().unwrap_or(0.0);
            let last = report.losses.last().copied().unwrap_or(0.0);
            println!(
                "trained {} for {} steps | loss {:.4} -> {:.4} | {}",
                variant.name(),
                steps,
                first,
                last,
                path.display()
            );
            Ok(ExitCode::SUCCESS)
        }
        Command::Evaluate {
            cfg,
            policies,
            rollouts,
            expert_dataset,
            out,
            debug_read_privileged,
        } => {
            let cfg = cfg.load()?;
            header("evaluate", &cfg);
            let rollouts = rollouts.unwrap_or(cfg.eval.rollouts);
            match pipeline::run_evaluate(
                &cfg,
                &policies,
                &expert_dataset,
                &out,
                rollouts,
                cfg.seed,
                debug_read_privileged,
            ) {
                Ok(report) => {
                    for v in &report.variants {
                        println!(
                            "{}: success {}/{} (CI [{:.3}, {:.3}]) | W1 {}",
                            v.variant,
                            v.successes,
                            v.trials,
                            v.credible_interval.lo,
                            v.credible_interval.hi,
                            v.w1_to_expert
                                .map(|w| format!("{w:.3} N"))
                                .unwrap_or_else(|| "n/a".into())
                        );
                    }
                    println!("ranking: {}", report.ranking.join(" < "));
                    println!("wrote {}", out.join(pipeline::REPORT_NAME).display());
                    Ok(ExitCode::SUCCESS)
                }
                Err(e) if e.is_contract_violation() => {
                    eprintln!("contract violation: {e}");
                    Ok(ExitCode::from(1))
                }
                Err(e) => Err(e.to_string()),
            }
        }
        Command::Selftest { inject_fault } => {
            let fault = match inject_fault.as_deref() {
                None => None,
                Some("gradient-bug") => Some(selftest::Fault::GradientBug),
                Some(other) => return Err(format!("unknown fault '{other}'")),
            };
            let started = std::time::Instant::now();
            let report = selftest::run_selftest(fault);
            for check in &report.checks {
                println!(
                    "{} {}: {}",
                    if check.passed { "PASS" } else { "FAIL" },
                    check.name,
                    check.detail
                );
            }
            println!(
                "selftest {} in {:.1}s",
                if report.passed() { "passed" } else { "FAILED" },
                started.elapsed().as_secs_f64()
            );
            Ok(if report.passed() {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            })
        }
    }
}
