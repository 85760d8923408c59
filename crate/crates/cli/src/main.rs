//! `shiftadd-dvs`: data generation, training, distillation, shift-add
//! quantization, integer inference and streaming simulation for fiber
//! vibration frames.

mod artifacts;
mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser};
use shiftadd_core::engine::SaturationMode;
use shiftadd_core::par::ExecMode;

use crate::commands::Command;
use crate::config::RunConfig;

const THREADS_ENV: &str = "SHIFTADD_DVS_THREADS";

#[derive(Debug, Parser)]
#[command(
    name = "shiftadd-dvs",
    version,
    about = "Shift-add CNN toolchain for fiber vibration classification"
)]
struct Cli {
    #[command(flatten)]
    overrides: Overrides,
    #[command(subcommand)]
    command: Command,
}

/// Settings shared by all commands. Flags win over `--config`, which wins
/// over built-in defaults.
#[derive(Debug, Args)]
struct Overrides {
    /// Run config to start from (a bare config or any result document).
    #[arg(long, global = true, value_name = "FILE")]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Directory for result documents and default artifact paths.
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,
    /// JSON model spec replacing the built-in student.
    #[arg(long = "model-spec", global = true, value_name = "FILE")]
    model_spec: Option<PathBuf>,
    /// Channel multiplier of the built-in student.
    #[arg(long, global = true)]
    width: Option<usize>,
    /// Fraction bits F of the weight fixed-point frame.
    #[arg(long = "frac-bits", global = true)]
    frac_bits: Option<u32>,
    /// Integer bits I of the weight fixed-point frame.
    #[arg(long = "int-bits", global = true)]
    int_bits: Option<u32>,
    /// Activation fraction bits of the integer engine.
    #[arg(long = "activation-bits", global = true)]
    activation_bits: Option<u32>,
    /// Fail on the first saturating activation instead of clamping.
    #[arg(long, global = true)]
    diagnostic: bool,
    /// Run batch loops on one thread.
    #[arg(long, global = true)]
    sequential: bool,
}

impl Overrides {
    fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = &self.out {
            cfg.out_dir = v.clone();
        }
        if let Some(v) = &self.model_spec {
            cfg.model_spec = Some(v.clone());
        }
        if let Some(v) = self.width {
            cfg.width = v;
        }
        if let Some(v) = self.frac_bits {
            cfg.quant.fraction_bits = v;
        }
        if let Some(v) = self.int_bits {
            cfg.quant.integer_bits = v;
        }
        if let Some(v) = self.activation_bits {
            cfg.engine.activation_bits = v;
        }
        if self.diagnostic {
            cfg.engine.saturation = SaturationMode::Diagnostic;
        }
        Ok(cfg)
    }
}

fn configure_threads() -> Result<(), String> {
    let Ok(raw) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|n| *n > 0)
        .ok_or_else(|| format!("{THREADS_ENV} must be a positive integer, got {raw:?}"))?;
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| format!("cannot size thread pool: {e}"))?;
    #[cfg(not(feature = "parallel"))]
    let _ = n;
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = cli.overrides.resolve()?;
    let mode = if cli.overrides.sequential {
        ExecMode::Sequential
    } else {
        ExecMode::Parallel
    };
    cli.command.run(&mut cfg, mode).context("command failed")
}

/// Structured error line on stderr: `{"error": {"kind": ..., "message": ...}}`.
fn report_error(err: &anyhow::Error) {
    let kind = err
        .chain()
        .find_map(|e| {
            e.downcast_ref::<shiftadd_core::Error>()
                .map(error_kind)
                .or_else(|| e.downcast_ref::<std::io::Error>().map(|_| "io"))
        })
        .unwrap_or("internal");
    let chain: Vec<String> = err.chain().map(ToString::to_string).collect();
    let doc = serde_json::json!({ "error": { "kind": kind, "message": chain.join(": ") } });
    eprintln!("{doc}");
}

fn error_kind(e: &shiftadd_core::Error) -> &'static str {
    use shiftadd_core::Error::*;
    match e {
        Config(_) => "config",
        Domain(_) => "domain",
        Range(_) => "range",
        Numeric { .. } => "numeric",
        Stratification(_) => "stratification",
        Ingestion(_) => "ingestion",
        Parse { .. } => "parse",
        Format(_) => "format",
        Protocol(_) => "protocol",
        Saturation { .. } => "saturation",
        Io(_) => "io",
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help and version go to stdout with status 0, usage errors get 2
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    if let Err(msg) = configure_threads() {
        eprintln!("error: {msg}");
        return ExitCode::from(2);
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            report_error(&e);
            ExitCode::from(1)
        }
    }
}
