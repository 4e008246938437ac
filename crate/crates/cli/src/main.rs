use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use eosguard_core::attacks::{AttackConfig, DEFAULT_RATIO};
use eosguard_core::report::{parse_secs, AttackScanConfig, OutputFormat, SOLVER_BUDGET_ENV};
use eosguard_core::{run_attack_scan, run_scan, Detector, ScanConfig};

/// Symbolic vulnerability scanner for EOSIO WebAssembly contracts.
#[derive(Parser)]
#[command(name = "eosguard", version)]
#[command(after_help = format!(
    "Exit status: 0 ran cleanly, 1 at least one vulnerable finding, 2 usage or I/O error.\n\
     {SOLVER_BUDGET_ENV} overrides the per-query solver budget (seconds)."
))]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Text,
}

#[derive(Subcommand)]
enum Command {
    /// Scan .wasm files or directories of them.
    Scan {
        #[arg(required = true)]
        paths: Vec<PathBuf>,
        #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u32).range(1..))]
        call_depth: u32,
        /// Per contract and detector.
        #[arg(long, default_value = "300", value_name = "SECONDS")]
        timeout: String,
        /// Comma-separated subset of fake_eos,fake_receipt,rollback,missing_permission.
        #[arg(long, value_delimiter = ',', value_name = "LIST")]
        detectors: Option<Vec<String>>,
        /// Tab-separated `contract_id<TAB>category` file.
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = Format::Json)]
        format: Format,
        /// Worker threads (default: all cores).
        #[arg(long, value_name = "N")]
        jobs: Option<usize>,
        /// Omit timing so repeated runs give identical output.
        #[arg(long)]
        deterministic: bool,
        /// Write the report here instead of stdout.
        #[arg(long, short, value_name = "FILE")]
        output: Option<PathBuf>,
    },
    /// Run the exploitation heuristics over a transaction log.
    Attacks {
        /// Line-delimited JSON transaction log.
        log: PathBuf,
        /// JSON report written by `scan`.
        #[arg(long, value_name = "FILE")]
        scan_report: PathBuf,
        /// Join window between a trigger and the payout.
        #[arg(long, default_value_t = 24.0, value_name = "HOURS")]
        window: f64,
        /// Received/spent ratio that escalates a flag to suspicious.
        #[arg(long, default_value_t = DEFAULT_RATIO, value_name = "R")]
        ratio: f64,
        /// Labels naming additional gambling accounts.
        #[arg(long, value_name = "FILE")]
        labels: Option<PathBuf>,
        #[arg(long, short, value_name = "FILE")]
        output: Option<PathBuf>,
    },
}

fn emit(text: &str, output: Option<&PathBuf>) -> Result<()> {
    match output {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            let mut out = std::io::stdout().lock();
            out.write_all(text.as_bytes())?;
            out.flush()?;
            Ok(())
        }
    }
}

fn parse_detectors(names: &[String]) -> Result<Vec<Detector>> {
    let mut ds = Vec::new();
    for n in names.iter().map(|n| n.trim()).filter(|n| !n.is_empty()) {
        match Detector::parse(n) {
            Some(d) if !ds.contains(&d) => ds.push(d),
            Some(_) => {}
            None => bail!("unknown detector `{n}`"),
        }
    }
    if ds.is_empty() {
        bail!("--detectors selects nothing");
    }
    // keep report order independent of the command line
    ds.sort_by_key(|d| Detector::ALL.iter().position(|x| x == d));
    Ok(ds)
}

fn run(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Scan {
            paths,
            call_depth,
            timeout,
            detectors,
            labels,
            format,
            jobs,
            deterministic,
            output,
        } => {
            let timeout = parse_secs(&timeout)
                .with_context(|| format!("--timeout {timeout} is not a positive number"))?;
            let config = ScanConfig {
                call_depth,
                timeout,
                detectors: match detectors {
                    Some(d) => parse_detectors(&d)?,
                    None => Detector::ALL.to_vec(),
                },
                labels,
                format: match format {
                    Format::Json => OutputFormat::Json,
                    Format::Text => OutputFormat::Text,
                },
                jobs: jobs.unwrap_or(0),
                deterministic,
                ..ScanConfig::default()
            }
            .with_env_overrides()?;
            let report = run_scan(&paths, &config)?;
            emit(&report.render(config.format), output.as_ref())?;
            Ok(report.exit_code())
        }
        Command::Attacks {
            log,
            scan_report,
            window,
            ratio,
            labels,
            output,
        } => {
            if !(window.is_finite() && window > 0.0) {
                bail!("--window must be a positive number of hours");
            }
            let config = AttackScanConfig {
                heuristics: AttackConfig {
                    window_secs: (window * 3600.0).round().max(1.0) as i64,
                    ratio_threshold: ratio,
                },
                labels,
            };
            let doc = run_attack_scan(&log, &scan_report, &config)?;
            let mut text = serde_json::to_string_pretty(&doc)?;
            text.push('\n');
            emit(&text, output.as_ref())?;
            Ok(0)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("eosguard: {e:#}");
            ExitCode::from(2)
        }
    }
}
