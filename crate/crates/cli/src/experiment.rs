//! Model construction (from dataset files or seeded synthetic recipes) and
//! experiment execution: one optimizer run per (scheme, seed), trace and
//! summary CSV artifacts, and an optional JSON manifest of resolved settings.

use std::fmt;
use std::path::{Path, PathBuf};

use sovi_core::estimators::EstimatorConfig;
use sovi_core::family::{FamilyDescriptor, VariationalParams};
use sovi_core::la::DenseMatrix;
use sovi_core::model::{self, LogJointModel};
use sovi_core::optimizer::{
    run_model, C0Choice, ConvergenceCriterion, NullClock, RunOutput, Scheme, StepControl,
};
use sovi_core::rng::Stream;

use crate::config::{ConfigError, ExperimentConfig, ModelConfig, ModelKind};
use crate::dataio;
use crate::report::{self, SummaryRow};
use crate::WallClock;

/// Harness-level failure: configuration problems or filesystem trouble.
#[derive(Debug)]
pub enum HarnessError {
    Config(ConfigError),
    Io(String),
}

impl fmt::Display for HarnessError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            HarnessError::Config(e) => write!(f, "{e}"),
            HarnessError::Io(msg) => write!(f, "{msg}"),
        }
    }
}

impl std::error::Error for HarnessError {}

impl From<ConfigError> for HarnessError {
    fn from(e: ConfigError) -> Self {
        HarnessError::Config(e)
    }
}

/// A model instance plus its matching variational family.
pub struct BuiltModel {
    pub model: LogJointModel,
    pub family: FamilyDescriptor,
}

/// Disjoint-support synthetic design: row `i` touches only column
/// `i mod latent_dim`, so the columns are orthogonal and the Gaussian
/// posterior factorizes, which a mean-field family can actually recover.
fn synthetic_design(rows: usize, cols: usize, stream: &mut Stream) -> DenseMatrix {
    let mut out = Vec::with_capacity(rows);
    for i in 0..rows {
        let mut row = vec![0.0; cols];
        row[i % cols] = 0.6 + 0.2 * stream.normal();
        out.push(row);
    }
    DenseMatrix::from_rows(&out).expect("uniform rows")
}

/// Instantiate the configured model, either from a dataset CSV or from the
/// seeded synthetic recipe documented in the README.
pub fn build_model(cfg: &ModelConfig) -> Result<BuiltModel, ConfigError> {
    let lift = |e: sovi_core::Error| ConfigError {
        field: "model".to_string(),
        message: e.to_string(),
    };
    match cfg.kind {
        ModelKind::ConjugateGaussian => {
            let data: Vec<f64> = match &cfg.dataset {
                Some(path) => {
                    let ds = dataio::read_csv(path, false)?;
                    if ds.observations.cols() != 1 {
                        return Err(ConfigError {
                            field: "model.dataset".to_string(),
                            message: "conjugate-gaussian expects a single column".to_string(),
                        });
                    }
                    (0..ds.observations.rows())
                        .map(|i| ds.observations.get(i, 0))
                        .collect()
                }
                None => {
                    let mut stream = Stream::seed_from_u64(cfg.data_seed);
                    (0..cfg.data_count)
                        .map(|_| cfg.data_center + cfg.data_scale * stream.normal())
                        .collect()
                }
            };
            let model =
                model::conjugate_gaussian(&data, cfg.prior_mean, cfg.prior_var, cfg.noise_var)
                    .map_err(lift)?;
            Ok(BuiltModel {
                model,
                family: FamilyDescriptor::gaussian_mean_field(1),
            })
        }
        ModelKind::BayesLinreg => {
            let (design, targets) = match &cfg.dataset {
                Some(path) => {
                    let ds = dataio::read_csv(path, true)?;
                    let targets = ds.targets.clone().expect("requested target column");
                    (ds.observations, targets)
                }
                None => {
                    let mut stream = Stream::seed_from_u64(cfg.data_seed);
                    let design = synthetic_design(cfg.data_count, cfg.latent_dim, &mut stream);
                    let truth: Vec<f64> = (0..cfg.latent_dim)
                        .map(|_| 0.15 * stream.normal())
                        .collect();
                    let targets: Vec<f64> = (0..cfg.data_count)
                        .map(|i| sovi_core::la::dot(design.row(i), &truth) + 0.02 * stream.normal())
                        .collect();
                    (design, targets)
                }
            };
            let dim = design.cols();
            let model = model::bayes_linreg(&design, &targets, cfg.prior_precision, cfg.noise_var)
                .map_err(lift)?;
            Ok(BuiltModel {
                model,
                family: FamilyDescriptor::gaussian_mean_field(dim),
            })
        }
        ModelKind::BayesLogreg => {
            let (design, labels) = match &cfg.dataset {
                Some(path) => {
                    let ds = dataio::read_csv(path, true)?;
                    let labels = ds.targets.clone().expect("requested target column");
                    (ds.observations, labels)
                }
                None => {
                    let mut stream = Stream::seed_from_u64(cfg.data_seed);
                    let design = synthetic_design(cfg.data_count, cfg.latent_dim, &mut stream);
                    let truth: Vec<f64> =
                        (0..cfg.latent_dim).map(|_| 0.8 * stream.normal()).collect();
                    let labels: Vec<f64> = (0..cfg.data_count)
                        .map(|i| {
                            let z = sovi_core::la::dot(design.row(i), &truth);
                            let p = 1.0 / (1.0 + (-z).exp());
                            if stream.uniform() < p {
                                1.0
                            } else {
                                0.0
                            }
                        })
                        .collect();
                    (design, labels)
                }
            };
            let dim = design.cols();
            let model = model::bayes_logreg(&design, &labels, cfg.prior_precision).map_err(lift)?;
            Ok(BuiltModel {
                model,
                family: FamilyDescriptor::gaussian_mean_field(dim),
            })
        }
    }
}

/// Step control for one scheme under this experiment config.
pub fn step_control_for(cfg: &ExperimentConfig, scheme: Scheme) -> StepControl {
    let step_size = if scheme == Scheme::FirstOrder {
        cfg.first_order_step_size.or(cfg.step_size)
    } else {
        cfg.step_size
    };
    StepControl {
        step_size,
        damping: cfg.damping,
        c0: cfg.c0,
        max_step_norm: cfg.max_step_norm,
        neumann_max_steps: cfg.neumann_max_steps,
        literal_neumann: cfg.literal_neumann,
        ..StepControl::default()
    }
}

pub fn criterion_for(cfg: &ExperimentConfig) -> ConvergenceCriterion {
    ConvergenceCriterion {
        grad_norm_tol: cfg.grad_norm_tol,
        grad_window: cfg.grad_window,
        param_tol: cfg.param_tol,
        max_iterations: cfg.max_iterations,
    }
}

/// One run's record for the manifest and the abort report.
#[derive(Debug)]
pub struct RunRecord {
    pub scheme: Scheme,
    pub seed: u64,
    pub iterations: usize,
    pub iterations_to_threshold: Option<usize>,
    pub aborted: Option<String>,
    pub resolved_c0: Option<f64>,
    pub final_lambda: Option<f64>,
}

/// Everything an experiment leaves behind.
pub struct ExperimentOutcome {
    pub out_dir: PathBuf,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutcome {
    pub fn aborted_runs(&self) -> impl Iterator<Item = &RunRecord> {
        self.runs.iter().filter(|r| r.aborted.is_some())
    }
}

fn write_file(path: &Path, content: &str) -> Result<(), HarnessError> {
    std::fs::write(path, content)
        .map_err(|e| HarnessError::Io(format!("cannot write `{}`: {e}", path.display())))
}

/// Execute one run and return its output; dispatches on the clock choice.
pub fn execute_run(
    built: &BuiltModel,
    cfg: &ExperimentConfig,
    scheme: Scheme,
    seed: u64,
) -> Result<RunOutput, sovi_core::Error> {
    let est = EstimatorConfig::new(cfg.grad_samples, cfg.hess_samples, seed)?;
    let ctl = step_control_for(cfg, scheme);
    let criterion = criterion_for(cfg);
    let initial =
        VariationalParams::constant_gaussian(&built.family, cfg.init_mean, cfg.init_log_scale);
    if cfg.real_clock {
        run_model(
            scheme,
            &built.model,
            &built.family,
            initial,
            &est,
            &ctl,
            &criterion,
            &WallClock::new(),
            cfg.elbo_samples,
        )
    } else {
        run_model(
            scheme,
            &built.model,
            &built.family,
            initial,
            &est,
            &ctl,
            &criterion,
            &NullClock,
            cfg.elbo_samples,
        )
    }
}

/// Run every (scheme, seed) pair, writing one trace CSV per run, a summary
/// CSV, and (optionally) a JSON manifest. Aborted runs still leave their
/// partial traces behind; the caller decides the exit status from
/// [`ExperimentOutcome::aborted_runs`].
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<ExperimentOutcome, HarnessError> {
    let built = build_model(&cfg.model)?;
    std::fs::create_dir_all(&cfg.out_dir)
        .map_err(|e| HarnessError::Io(format!("cannot create `{}`: {e}", cfg.out_dir.display())))?;

    let grad_tol = cfg.grad_norm_tol.unwrap_or(1e-3);
    let mut runs = Vec::new();
    let mut summary = Vec::new();

    for &scheme in &cfg.schemes {
        for &seed in &cfg.seeds {
            let output = execute_run(&built, cfg, scheme, seed).map_err(|e| {
                HarnessError::Config(ConfigError {
                    field: "estimator".to_string(),
                    message: e.to_string(),
                })
            })?;
            let trace_path = cfg
                .out_dir
                .join(format!("trace_{}_{}.csv", scheme.name(), seed));
            write_file(&trace_path, &report::trace_csv(&output.trace))?;

            let iterations_to_threshold = report::iterations_to_threshold(&output.trace, grad_tol);
            let total_wallclock: f64 = output.trace.iter().map(|r| r.wallclock_ms).sum();
            summary.push(SummaryRow {
                scheme: scheme.name(),
                seed,
                iterations_to_threshold,
                final_elbo: output.trace.last().map(|r| r.elbo_estimate),
                total_wallclock_ms: total_wallclock,
            });
            runs.push(RunRecord {
                scheme,
                seed,
                iterations: output.trace.len(),
                iterations_to_threshold,
                aborted: output.aborted.as_ref().map(|e| e.to_string()),
                resolved_c0: output.final_diagnostic("c0"),
                final_lambda: output.final_diagnostic("lambda"),
            });
        }
    }

    write_file(
        &cfg.out_dir.join("summary.csv"),
        &report::summary_csv(&summary),
    )?;

    if cfg.write_manifest {
        let manifest = manifest_json(cfg, &runs);
        write_file(&cfg.out_dir.join("manifest.json"), &manifest)?;
    }

    Ok(ExperimentOutcome {
        out_dir: cfg.out_dir.clone(),
        runs,
        summary,
    })
}

/// Machine-readable record of resolved defaults and per-run diagnostics.
fn manifest_json(cfg: &ExperimentConfig, runs: &[RunRecord]) -> String {
    let run_entries: Vec<serde_json::Value> = runs
        .iter()
        .map(|r| {
            serde_json::json!({
                "scheme": r.scheme.name(),
                "seed": r.seed,
                "iterations": r.iterations,
                "iterations_to_threshold": r.iterations_to_threshold,
                "aborted": r.aborted,
                "resolved_c0": r.resolved_c0,
                "final_lambda": r.final_lambda,
            })
        })
        .collect();
    let doc = serde_json::json!({
        "model": {
            "name": cfg.model.kind.name(),
            "latent_dim": cfg.model.latent_dim,
            "dataset": cfg.model.dataset.as_ref().map(|p| p.display().to_string()),
            "data_seed": cfg.model.data_seed,
            "data_count": cfg.model.data_count,
        },
        "schemes": cfg.schemes.iter().map(|s| s.name()).collect::<Vec<_>>(),
        "seeds": cfg.seeds,
        "estimator": {
            "grad_samples": cfg.grad_samples,
            "hess_samples": cfg.hess_samples,
            "elbo_samples": cfg.elbo_samples.unwrap_or(cfg.grad_samples),
        },
        "control": {
            "step_size": cfg.step_size,
            "first_order_step_size": cfg.first_order_step_size,
            "damping": cfg.damping,
            "c0": match cfg.c0 {
                C0Choice::Auto => serde_json::Value::from("auto"),
                C0Choice::Fixed(v) => serde_json::Value::from(v),
            },
            "max_step_norm": cfg.max_step_norm,
            "neumann_max_steps": cfg.neumann_max_steps,
        },
        "criterion": {
            "grad_norm_tol": cfg.grad_norm_tol,
            "param_tol": cfg.param_tol,
            "grad_window": cfg.grad_window,
            "max_iterations": cfg.max_iterations,
        },
        "init": {
            "mean": cfg.init_mean,
            "log_scale": cfg.init_log_scale,
        },
        "clock": if cfg.real_clock { "real" } else { "none" },
        "runs": run_entries,
    });
    serde_json::to_string_pretty(&doc).expect("manifest serialization") + "\n"
}
