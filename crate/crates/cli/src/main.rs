//! `sovi` command line: run experiments from a config file, or run the
//! invariant check suite.

use std::process::ExitCode;

use sovi_cli::checks::{all_pass, run_checks, FaultInjection};
use sovi_cli::config;
use sovi_cli::exit_code;
use sovi_cli::experiment::{run_experiment, HarnessError};

const USAGE: &str = "\
usage:
  sovi run --config <path> [overrides]
  sovi check [--verbose]

run overrides:
  --scheme <name>      replace the config's scheme list with one scheme
  --seed <list>        replace the seed list (comma-separated integers)
  --samples <n>        set gradient and Hessian sample counts to n
  --max-iters <n>      set the iteration cap
  --out-dir <dir>      set the output directory

exit codes: 0 success, 1 configuration error, 2 runtime abort, 3 check failure
";

enum Command {
    Run {
        config_path: String,
        scheme: Option<String>,
        seeds: Option<String>,
        samples: Option<String>,
        max_iters: Option<String>,
        out_dir: Option<String>,
    },
    Check {
        verbose: bool,
    },
}

fn parse_args(args: &[String]) -> Result<Command, String> {
    let mut it = args.iter();
    let sub = it.next().ok_or_else(|| "missing subcommand".to_string())?;
    match sub.as_str() {
        "run" => {
            let mut config_path = None;
            let mut scheme = None;
            let mut seeds = None;
            let mut samples = None;
            let mut max_iters = None;
            let mut out_dir = None;
            while let Some(flag) = it.next() {
                let mut grab = |name: &str| -> Result<String, String> {
                    it.next()
                        .cloned()
                        .ok_or_else(|| format!("{name} needs a value"))
                };
                match flag.as_str() {
                    "--config" => config_path = Some(grab("--config")?),
                    "--scheme" => scheme = Some(grab("--scheme")?),
                    "--seed" => seeds = Some(grab("--seed")?),
                    "--samples" => samples = Some(grab("--samples")?),
                    "--max-iters" => max_iters = Some(grab("--max-iters")?),
                    "--out-dir" => out_dir = Some(grab("--out-dir")?),
                    other => return Err(format!("unknown flag `{other}`")),
                }
            }
            let config_path = config_path.ok_or_else(|| "run requires --config".to_string())?;
            Ok(Command::Run {
                config_path,
                scheme,
                seeds,
                samples,
                max_iters,
                out_dir,
            })
        }
        "check" => {
            let mut verbose = false;
            for flag in it {
                match flag.as_str() {
                    "--verbose" => verbose = true,
                    other => return Err(format!("unknown flag `{other}`")),
                }
            }
            Ok(Command::Check { verbose })
        }
        other => Err(format!("unknown subcommand `{other}`")),
    }
}

fn apply_overrides(
    cfg: &mut config::ExperimentConfig,
    scheme: Option<String>,
    seeds: Option<String>,
    samples: Option<String>,
    max_iters: Option<String>,
    out_dir: Option<String>,
) -> Result<(), String> {
    if let Some(name) = scheme {
        let s = sovi_core::optimizer::Scheme::parse(&name)
            .ok_or_else(|| format!("--scheme: unknown scheme `{name}`"))?;
        cfg.schemes = vec![s];
    }
    if let Some(list) = seeds {
        let mut parsed = Vec::new();
        for part in list.split(',') {
            let s = part.trim();
            if s.is_empty() {
                continue;
            }
            parsed.push(
                s.parse::<u64>()
                    .map_err(|_| format!("--seed: not an integer `{s}`"))?,
            );
        }
        if parsed.is_empty() {
            return Err("--seed: empty list".to_string());
        }
        cfg.seeds = parsed;
    }
    if let Some(n) = samples {
        let n: usize = n
            .parse()
            .map_err(|_| format!("--samples: not an integer `{n}`"))?;
        if n == 0 {
            return Err("--samples: must be at least 1".to_string());
        }
        cfg.grad_samples = n;
        cfg.hess_samples = n;
    }
    if let Some(n) = max_iters {
        cfg.max_iterations = n
            .parse()
            .map_err(|_| format!("--max-iters: not an integer `{n}`"))?;
    }
    if let Some(dir) = out_dir {
        cfg.out_dir = dir.into();
    }
    if cfg
        .schemes
        .contains(&sovi_core::optimizer::Scheme::FirstOrder)
        && cfg.first_order_step_size.or(cfg.step_size).is_none()
    {
        return Err(
            "first-order scheme selected but the config sets no control.first_order_step_size"
                .to_string(),
        );
    }
    Ok(())
}

/// Entry point with injectable arguments; returns the process exit code.
fn run_cli(args: &[String]) -> i32 {
    let command = match parse_args(args) {
        Ok(c) => c,
        Err(msg) => {
            eprintln!("error: {msg}\n{USAGE}");
            return exit_code::CONFIG_ERROR;
        }
    };
    match command {
        Command::Run {
            config_path,
            scheme,
            seeds,
            samples,
            max_iters,
            out_dir,
        } => {
            let text = match std::fs::read_to_string(&config_path) {
                Ok(t) => t,
                Err(e) => {
                    eprintln!("error: cannot read `{config_path}`: {e}");
                    return exit_code::CONFIG_ERROR;
                }
            };
            let mut cfg = match config::parse(&text) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return exit_code::CONFIG_ERROR;
                }
            };
            if let Err(msg) = apply_overrides(&mut cfg, scheme, seeds, samples, max_iters, out_dir)
            {
                eprintln!("error: {msg}");
                return exit_code::CONFIG_ERROR;
            }
            match run_experiment(&cfg) {
                Ok(outcome) => {
                    let aborted: Vec<_> = outcome.aborted_runs().collect();
                    println!(
                        "wrote {} trace file(s) and summary.csv to {}",
                        outcome.runs.len(),
                        outcome.out_dir.display()
                    );
                    if aborted.is_empty() {
                        exit_code::SUCCESS
                    } else {
                        for r in &aborted {
                            eprintln!(
                                "aborted: scheme {} seed {}: {}",
                                r.scheme.name(),
                                r.seed,
                                r.aborted.as_deref().unwrap_or("unknown")
                            );
                        }
                        exit_code::RUNTIME_ABORT
                    }
                }
                Err(HarnessError::Config(e)) => {
                    eprintln!("error: {e}");
                    exit_code::CONFIG_ERROR
                }
                Err(HarnessError::Io(msg)) => {
                    eprintln!("error: {msg}");
                    exit_code::RUNTIME_ABORT
                }
            }
        }
        Command::Check { verbose } => {
            let reports = run_checks(verbose, &FaultInjection::default());
            if all_pass(&reports) {
                println!("all {} checks passed", reports.len());
                exit_code::SUCCESS
            } else {
                let failed = reports.iter().filter(|r| !r.pass).count();
                eprintln!("{failed} check(s) failed");
                exit_code::CHECK_FAILURE
            }
        }
    }
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    ExitCode::from(run_cli(&args) as u8)
}
