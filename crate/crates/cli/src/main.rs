use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, ValueEnum};
use subgqmc::harness::{
    configure_threads, integrate_csv, rows_csv, run_best_of_both, run_diagnose, run_generate,
    run_integrate, run_scaling, run_verify, summarize, ExperimentConfig, Mode, ScalingResult,
    ScalingRow,
};
use subgqmc::Error;

const EXIT_CHECK_FAILED: u8 = 1;
const EXIT_USAGE: u8 = 2;

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ModeArg {
    /// RMSE of each estimator against n, with log-log slopes.
    Scaling,
    /// Integral estimates per estimator, n and trial.
    Integrate,
    /// Split discrepancy records, subgaussian MGF estimates and star discrepancy.
    Diagnose,
    /// Run the invariant suite; exits 1 if any check fails.
    Verify,
    /// Write the leaves of a full partition as CSV files.
    Generate,
}

impl From<ModeArg> for Mode {
    fn from(m: ModeArg) -> Mode {
        match m {
            ModeArg::Scaling => Mode::Scaling,
            ModeArg::Integrate => Mode::Integrate,
            ModeArg::Diagnose => Mode::Diagnose,
            ModeArg::Verify => Mode::Verify,
            ModeArg::Generate => Mode::Generate,
        }
    }
}

/// Randomized QMC point sets from subgaussian colorings: experiments,
/// verification and export.
///
/// Exit codes: 0 success, 1 check failure or runtime error, 2 usage error.
/// SUBGQMC_THREADS caps the number of worker threads.
#[derive(Debug, Parser)]
#[command(name = "subgqmc", version)]
struct Cli {
    #[arg(value_enum)]
    mode: ModeArg,
    /// Experiment configuration (JSON). Its `mode`, if present, must match.
    #[arg(long, value_name = "PATH")]
    config: PathBuf,
    /// Overrides the configuration's seed [default: from config, else 0].
    #[arg(long, value_name = "S")]
    seed: Option<u64>,
    /// Output directory [default: the configuration's output_path, else ./out].
    #[arg(long, value_name = "DIR")]
    out: Option<PathBuf>,
    /// Overwrite outputs of an earlier run.
    #[arg(long, default_value_t = false)]
    force: bool,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidConfig(_)
        | Error::Json(_)
        | Error::Parse(_)
        | Error::OutputExists(_)
        | Error::EstimatorDimension { .. }
        | Error::DimensionMismatch { .. } => EXIT_USAGE,
        _ => EXIT_CHECK_FAILED,
    }
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig, Error> {
    let text = std::fs::read_to_string(&cli.config)
        .map_err(|e| Error::InvalidConfig(format!("cannot read {}: {e}", cli.config.display())))?;
    let mode: Mode = cli.mode.into();
    let mut value: serde_json::Value = serde_json::from_str(&text)?;
    if let Some(obj) = value.as_object_mut() {
        obj.entry("mode")
            .or_insert_with(|| serde_json::to_value(mode).expect("mode serializes"));
    }
    let mut cfg: ExperimentConfig = serde_json::from_value(value)?;
    if cfg.mode != mode {
        return Err(Error::InvalidConfig(format!(
            "config is for mode {:?}, not {mode:?}",
            cfg.mode
        )));
    }
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_path = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn write_output(path: &Path, contents: &str, force: bool) -> Result<(), Error> {
    if path.exists() && !force {
        return Err(Error::OutputExists(path.display().to_string()));
    }
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    std::fs::write(path, contents)?;
    Ok(())
}

fn print_summary(res: &ScalingResult) {
    println!(
        "{:<13} {:>6} {:>7} {:>12} {:>12} {:>12}",
        "estimator", "n", "trials", "rmse", "mean_error", "stderr"
    );
    for s in &res.summary {
        println!(
            "{:<13} {:>6} {:>7} {:>12.4e} {:>12.4e} {:>12.4e}",
            s.estimator.name(),
            s.n,
            s.trials,
            s.rmse,
            s.mean_error,
            s.stderr
        );
    }
    for f in res.slopes.iter().filter(|f| f.filtered) {
        match (f.ci_low, f.ci_high) {
            (Some(lo), Some(hi)) => println!(
                "slope {:<13} {:+.3}  [{lo:+.3}, {hi:+.3}]",
                f.estimator.name(),
                f.slope
            ),
            _ => println!("slope {:<13} {:+.3}", f.estimator.name(), f.slope),
        }
    }
    for e in &res.envelope {
        println!(
            "envelope n={} k={} predicted_rmse={:.4e}",
            e.n, e.k, e.predicted_rmse
        );
    }
}

fn run(cli: &Cli) -> Result<u8, Error> {
    configure_threads()?;
    let cfg = load_config(cli)?;
    let out = cfg.output_path.clone();
    let base = cli.config.parent();
    match cfg.mode {
        Mode::Scaling => {
            let res = if cfg.best_of_both {
                run_best_of_both(&cfg)?
            } else {
                run_scaling(&cfg, &cfg.load_function(base)?)?
            };
            write_output(
                &out.join("scaling_rows.csv"),
                &rows_csv(&res.rows),
                cli.force,
            )?;
            write_output(
                &out.join("scaling_summary.json"),
                &res.summary_json(),
                cli.force,
            )?;
            print_summary(&res);
        }
        Mode::Integrate => {
            let rows = run_integrate(&cfg, &cfg.load_function(base)?)?;
            let as_errors: Vec<ScalingRow> = rows
                .iter()
                .map(|r| ScalingRow {
                    estimator: r.estimator,
                    n: r.n,
                    trial: r.trial,
                    error: r.error,
                    abs_error: r.error.abs(),
                })
                .collect();
            let summary = summarize(&as_errors);
            write_output(
                &out.join("integrate_rows.csv"),
                &integrate_csv(&rows),
                cli.force,
            )?;
            write_output(
                &out.join("integrate_summary.json"),
                &serde_json::to_string_pretty(&summary)?,
                cli.force,
            )?;
            let exact = rows.first().map_or(0.0, |r| r.exact);
            println!("exact integral {exact}");
            for s in &summary {
                println!(
                    "{:<13} n={:<6} mean estimate {:.10} rmse {:.4e}",
                    s.estimator.name(),
                    s.n,
                    exact + s.mean_error,
                    s.rmse
                );
            }
        }
        Mode::Diagnose => {
            for &n in &cfg.n_list {
                let d = run_diagnose(n, cfg.d, cfg.seed, cfg.trials, cfg.pairing)?;
                write_output(
                    &out.join(format!("diagnose_n{n}_disc.csv")),
                    &d.disc_csv,
                    cli.force,
                )?;
                write_output(
                    &out.join(format!("diagnose_n{n}_mgf.csv")),
                    &d.mgf_csv,
                    cli.force,
                )?;
                let json = serde_json::to_string_pretty(&d.report)?;
                write_output(&out.join(format!("diagnose_n{n}.json")), &json, cli.force)?;
                println!("{json}");
            }
        }
        Mode::Verify => {
            let report = run_verify(&cfg);
            let json = serde_json::to_string_pretty(&report)?;
            if cli.out.is_some() {
                write_output(&out.join("verify_report.json"), &json, cli.force)?;
            }
            println!("{json}");
            for c in &report.checks {
                eprintln!(
                    "{} {}: {}",
                    if c.passed { "PASS" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            if !report.passed {
                return Ok(EXIT_CHECK_FAILED);
            }
        }
        Mode::Generate => {
            for s in run_generate(&cfg, &out, cli.force)? {
                println!("{}", serde_json::to_string(&s)?);
            }
        }
    }
    Ok(0)
}
