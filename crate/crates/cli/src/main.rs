use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::Serialize;
use sha2::{Digest, Sha256};

use sheetbond_core::report::{covariance_csv, martingale_csv, verification_csv};
use sheetbond_core::{discounted_surface, Error, Pipeline, Scenario};

/// Simulate and verify bond prices driven by a Brownian sheet.
#[derive(Parser)]
#[command(name = "sheetbond", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate bond surfaces and summarize discounted prices.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Also write the discounted surface of the first N paths.
        #[arg(long, value_name = "N")]
        dump_paths: Option<u64>,
    },
    /// Run the mean-one, martingale and sheet checks.
    Verify {
        #[command(flatten)]
        common: Common,
        /// Add the unweighted checks, which should detect the risk premium.
        #[arg(long)]
        negative_control: bool,
    },
    /// Evaluate the integrability conditions for the scenario's η.
    Conditions {
        #[command(flatten)]
        common: Common,
    },
    /// Estimate the field covariance at the probe pairs.
    Covariance {
        #[command(flatten)]
        common: Common,
    },
}

#[derive(Args)]
struct Common {
    /// Scenario file (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Override the scenario seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Override the number of paths.
    #[arg(long)]
    paths: Option<u64>,
    #[arg(long, default_value = "out")]
    out_dir: PathBuf,
    /// Worker threads; results do not depend on this.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    config: String,
    config_sha256: String,
    seed: u64,
    n_paths: u64,
    version: &'static str,
    outputs: Vec<String>,
    passed: Option<bool>,
}

enum Failure {
    Config(String),
    Runtime(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config { .. }
            | Error::InvalidGrid { .. }
            | Error::InvalidWarp(_)
            | Error::NonMonotoneWarp { .. }
            | Error::MissingDerivative { .. } => Failure::Config(e.to_string()),
            other => Failure::Runtime(other.to_string()),
        }
    }
}

fn io_err(path: &Path, e: std::io::Error) -> Failure {
    Failure::Runtime(format!("{}: {e}", path.display()))
}

struct Loaded {
    pipeline: Pipeline,
    config: String,
    sha: String,
}

fn load(common: &Common) -> Result<Loaded, Failure> {
    let text = fs::read_to_string(&common.config)
        .map_err(|e| Failure::Config(format!("{}: {e}", common.config.display())))?;
    let mut scenario = Scenario::from_toml_str(&text)?;
    if let Some(seed) = common.seed {
        scenario = scenario.with_seed(seed);
    }
    if let Some(paths) = common.paths {
        scenario = scenario.with_paths(paths)?;
    }
    if common.workers == 0 {
        return Err(Failure::Config("`workers` must be >= 1".into()));
    }
    Ok(Loaded {
        pipeline: Pipeline::new(scenario)?,
        config: common.config.display().to_string(),
        sha: hex::encode(Sha256::digest(text.as_bytes())),
    })
}

fn write(dir: &Path, name: &str, contents: &str, outputs: &mut Vec<String>) -> Result<(), Failure> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| io_err(&path, e))?;
    outputs.push(name.to_string());
    Ok(())
}

fn run(cli: Cli) -> Result<bool, Failure> {
    let (name, common) = match &cli.command {
        Command::Simulate { common, .. } => ("simulate", common),
        Command::Verify { common, .. } => ("verify", common),
        Command::Conditions { common } => ("conditions", common),
        Command::Covariance { common } => ("covariance", common),
    };
    let loaded = load(common)?;
    let p = &loaded.pipeline;
    let dir = &common.out_dir;
    fs::create_dir_all(dir).map_err(|e| io_err(dir, e))?;
    let mut outputs = Vec::new();

    let passed = match &cli.command {
        Command::Simulate { dump_paths, .. } => {
            let report = p.simulate(common.workers)?;
            write(dir, "simulate.csv", &martingale_csv(&report), &mut outputs)?;
            if let Some(n) = dump_paths {
                let sub = dir.join("paths");
                fs::create_dir_all(&sub).map_err(|e| io_err(&sub, e))?;
                for path in 0..(*n).min(p.scenario().n_paths) {
                    let d = discounted_surface(&p.bond_surface(path)?);
                    let csv: String = d
                        .rows()
                        .into_iter()
                        .map(|r| {
                            r.iter()
                                .map(|x| format!("{x:.17e}"))
                                .collect::<Vec<_>>()
                                .join(",")
                                + "\n"
                        })
                        .collect();
                    write(
                        dir,
                        &format!("paths/discounted_{path}.csv"),
                        &csv,
                        &mut outputs,
                    )?;
                }
            }
            print!("{}", martingale_csv(&report));
            None
        }
        Command::Verify {
            negative_control, ..
        } => {
            let out = p.verify(common.workers, *negative_control)?;
            write(
                dir,
                "verify.csv",
                &verification_csv(&out.report),
                &mut outputs,
            )?;
            write(
                dir,
                "verify.json",
                &serde_json::to_string_pretty(&out).map_err(Error::from)?,
                &mut outputs,
            )?;
            println!("{}", out.report.to_text());
            Some(out.report.passed)
        }
        Command::Conditions { .. } => {
            let out = p.conditions()?;
            let json = out.to_json()?;
            write(dir, "conditions.json", &json, &mut outputs)?;
            println!("{json}");
            None
        }
        Command::Covariance { .. } => {
            let report = p.covariance(common.workers)?;
            let csv = covariance_csv(&report, &p.scenario().grid);
            write(dir, "covariance.csv", &csv, &mut outputs)?;
            print!("{csv}");
            println!(
                "max |z| = {:.3}, {} of {} probes beyond {}",
                report.max_abs_z,
                report.count_exceeding,
                report.rows.len(),
                p.scenario().policy.z_bound
            );
            Some(report.passed)
        }
    };

    let sc = p.scenario();
    let manifest = Manifest {
        command: name,
        config: loaded.config.clone(),
        config_sha256: loaded.sha.clone(),
        seed: sc.seed,
        n_paths: sc.n_paths,
        version: env!("CARGO_PKG_VERSION"),
        outputs: outputs.clone(),
        passed,
    };
    let json = serde_json::to_string_pretty(&manifest).map_err(Error::from)?;
    write(dir, "manifest.json", &json, &mut outputs)?;
    Ok(passed.unwrap_or(true))
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(Failure::Config(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
