//! Batch runner and service launcher behind the `seisnet` binary.
//!
//! ```text
//! seisnet --scenario scenarios/desk.json --out out/desk --set tomo.lambda_scale=2
//! seisnet serve --addr 127.0.0.1:8080
//! ```
//!
//! Exit codes: 0 when the pipeline finished, 1 when it failed (the manifest
//! is still written), 2 for an invalid configuration.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::run::{Run, RunStatus};
use crate::scenario::{config_error, Pipeline, Scenario};

#[derive(Debug, Parser)]
#[command(name = "seisnet", version, about = "In-network seismic imaging simulator")]
#[command(args_conflicts_with_subcommands = true, subcommand_negates_reqs = true)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Option<Mode>,
    #[command(flatten)]
    pub run: RunArgs,
}

#[derive(Debug, Subcommand)]
pub enum Mode {
    /// Serve the /v1 control API.
    Serve {
        #[arg(long, default_value = "127.0.0.1:8080")]
        addr: SocketAddr,
    },
}

#[derive(Debug, Clone, Args)]
pub struct RunArgs {
    /// Scenario JSON file.
    #[arg(long, required = true)]
    pub scenario: Option<PathBuf>,
    /// Output directory; created if missing.
    #[arg(long, required = true)]
    pub out: Option<PathBuf>,
    /// Dotted-path override, e.g. `tomo.lambda=0.5`; repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", value_parser = parse_key_value)]
    pub overrides: Vec<(String, String)>,
    /// TOMO_TT, MMI or ANSI; wins over the file.
    #[arg(long)]
    pub pipeline: Option<String>,
    /// Wins over the file.
    #[arg(long)]
    pub seed: Option<u64>,
}

fn parse_key_value(s: &str) -> std::result::Result<(String, String), String> {
    s.split_once('=')
        .map(|(k, v)| (k.trim().to_string(), v.to_string()))
        .filter(|(k, _)| !k.is_empty())
        .ok_or_else(|| format!("expected KEY=VALUE, got `{s}`"))
}

/// Summary written to `manifest.json` next to the artifacts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub scenario_hash: String,
    pub seed: u64,
    pub pipeline: Pipeline,
    pub status: RunStatus,
    pub rounds: u64,
    /// Artifact file names, relative to the output directory.
    pub files: Vec<String>,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub message: Option<String>,
}

/// Reads the scenario and applies `--set`, `--pipeline` and `--seed` in
/// that order.
pub fn load_scenario(path: &Path, overrides: &[(String, String)], pipeline: Option<&str>, seed: Option<u64>) -> Result<Scenario> {
    let text = std::fs::read_to_string(path).map_err(|e| config_error("--scenario", format!("{}: {e}", path.display())))?;
    let value: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| config_error("<document>", e.to_string()))?;
    let mut all = overrides.to_vec();
    if let Some(p) = pipeline {
        all.push(("pipeline".into(), Pipeline::parse(p)?.as_str().into()));
    }
    if let Some(s) = seed {
        all.push(("seed".into(), s.to_string()));
    }
    Scenario::from_value(value, &all)
}

/// Runs a scenario to the end and writes every artifact plus
/// `manifest.json` into `out`. A failed run still returns its manifest.
pub fn run_scenario(scenario: Scenario, out: &Path) -> Result<RunManifest> {
    let mut run = Run::new(scenario)?;
    let status = run.run_to_end();
    let files = run.write_artifacts(out)?;
    let manifest = RunManifest {
        scenario_hash: run.scenario().hash(),
        seed: run.scenario().seed,
        pipeline: run.scenario().pipeline,
        status,
        rounds: run.round(),
        files,
        metrics: run.metrics(),
        message: run.message().map(str::to_owned),
    };
    std::fs::write(out.join("manifest.json"), serde_json::to_vec_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Loads, runs and reports; returns the process exit code.
pub fn execute(args: &RunArgs) -> u8 {
    let (Some(scenario), Some(out)) = (&args.scenario, &args.out) else {
        eprintln!("error: --scenario and --out are required");
        return 2;
    };
    let result = load_scenario(scenario, &args.overrides, args.pipeline.as_deref(), args.seed)
        .and_then(|s| run_scenario(s, out));
    match result {
        Ok(m) => {
            println!("{} {:?} after {} rounds, wrote {}", m.pipeline.as_str(), m.status, m.rounds, out.display());
            match m.status {
                RunStatus::Finished => 0,
                _ => {
                    eprintln!("run failed: {}", m.message.as_deref().unwrap_or("unknown error"));
                    1
                }
            }
        }
        Err(e @ Error::Config { .. }) => {
            eprintln!("error: {e}");
            2
        }
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

pub fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command {
        Some(Mode::Serve { addr }) => {
            let rt = tokio::runtime::Builder::new_multi_thread().enable_all().build().expect("tokio runtime");
            eprintln!("listening on http://{addr}/v1");
            match rt.block_on(crate::control::serve(addr)) {
                Ok(()) => ExitCode::SUCCESS,
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::FAILURE
                }
            }
        }
        None => ExitCode::from(execute(&cli.run)),
    }
}
