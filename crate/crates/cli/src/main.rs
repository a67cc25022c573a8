//! Batch front end: `roughflow --config job.json [--output dir] [--seed n] [--set key=value]...`

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use serde_json::{json, Value};

use commands::{Artifacts, Outcome, Status, VerificationFailed};
use config::{apply_override, load_config, set_seed, ConfigError, JobConfig};

#[derive(Debug, Parser)]
#[command(name = "roughflow", version, about = "Rough flow decomposition jobs from JSON configs")]
struct Cli {
    /// JSON job config (a previous report.json is accepted too).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Random seed; overrides `parameters.seed`.
    #[arg(long)]
    seed: Option<u64>,
    /// Override a parameter, e.g. `--set N=2000`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    /// Print nothing on success.
    #[arg(long)]
    quiet: bool,
}

const EXIT_OK: u8 = 0;
const EXIT_ERROR: u8 = 1;
const EXIT_EVENT: u8 = 2;

fn is_mathematical_event(err: &anyhow::Error) -> bool {
    use roughflow::Error as E;
    err.chain().any(|c| {
        matches!(
            c.downcast_ref::<E>(),
            Some(E::Explosion { .. } | E::TransversalityLost(_) | E::NegativeRealEigenvalue(_))
        )
    })
}

fn prepare(cli: &Cli) -> Result<(JobConfig, config::Source), ConfigError> {
    let (mut cfg, mut src) = load_config(&cli.config)?;
    if let Some(seed) = cli.seed {
        set_seed(&mut cfg, &mut src, seed);
    }
    for a in &cli.overrides {
        apply_override(&mut cfg, &mut src, a)?;
    }
    if let Some(dir) = &cli.output {
        cfg.output_dir = dir.clone();
    }
    for (name, path) in &cfg.inputs {
        if !path.is_file() {
            return Err(src.error(name, format!("input `{name}` does not exist: {}", path.display())));
        }
    }
    Ok((cfg, src))
}

fn write_report(cfg: &JobConfig, status: &str, code: u8, results: Value, artifacts: &[String], error: Option<String>) {
    let report = json!({
        "command": cfg.command.name(),
        "status": status,
        "exit_code": code,
        "config": cfg,
        "results": results,
        "artifacts": artifacts,
        "error": error,
    });
    let path = cfg.output_dir.join("report.json");
    let text = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    if let Err(e) = std::fs::create_dir_all(&cfg.output_dir).and_then(|_| std::fs::write(&path, text)) {
        eprintln!("error: cannot write {}: {e}", path.display());
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (cfg, src) = match prepare(&cli) {
        Ok(x) => x,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    let inputs: Vec<PathBuf> = cfg.inputs.values().cloned().chain([cli.config.clone()]).collect();
    let mut out = match Artifacts::new(&cfg.output_dir, &inputs) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(EXIT_ERROR);
        }
    };
    if out.path("report.json").is_err() {
        eprintln!("error: report.json would overwrite an input file");
        return ExitCode::from(EXIT_ERROR);
    }

    match commands::run(&cfg, &src, &mut out) {
        Ok(Outcome { status, results }) => {
            let (label, code) = match status {
                Status::Ok => ("ok", EXIT_OK),
                Status::Event => ("event", EXIT_EVENT),
            };
            write_report(&cfg, label, code, results, &out.written, None);
            if !cli.quiet {
                println!("{}: {label}; report in {}", cfg.command.name(), cfg.output_dir.join("report.json").display());
            }
            ExitCode::from(code)
        }
        Err(e) => {
            let (label, code) = if is_mathematical_event(&e) { ("event", EXIT_EVENT) } else { ("error", EXIT_ERROR) };
            let results = e.downcast_ref::<VerificationFailed>().map_or(Value::Null, |v| v.0.clone());
            write_report(&cfg, label, code, results, &out.written, Some(format!("{e:#}")));
            eprintln!("{}: {e:#}", if code == EXIT_EVENT { "stopped" } else { "error" });
            ExitCode::from(code)
        }
    }
}
