//! Batch scanning of `.wasm` files and attack-log analysis, with JSON and
//! plain-text rendering. Key names are documented in `docs/schema.md`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::attacks::{
    flag_fake_eos_attacks, flag_fake_receipt_attacks, flag_permission_misuse,
    flag_rollback_attacks, AttackConfig, AttackError, AttackFlag, LogReader,
};
use crate::engine::{ExplorationOptions, DEFAULT_CALL_DEPTH, DEFAULT_TIMEOUT};
use crate::scanner::{
    read_labels, scan_context, Detector, Finding, LabelError, Labels, ScanContext, ScanOptions,
    Verdict,
};
use crate::symbolic::{Solver, DEFAULT_QUERY_BUDGET};
use crate::wasm::parse_module;

pub const SCHEMA_VERSION: &str = "eosguard-report/1";
/// Overrides the per-query solver budget, in (fractional) seconds.
pub const SOLVER_BUDGET_ENV: &str = "EOSGUARD_SOLVER_TIMEOUT_SECS";

#[derive(Debug, Error)]
pub enum ReportError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error(transparent)]
    Labels(#[from] LabelError),
    #[error(transparent)]
    Attack(#[from] AttackError),
    #[error("malformed scan report {path}: {reason}")]
    MalformedReport { path: String, reason: String },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> ReportError + '_ {
    move |source| ReportError::Io {
        path: path.display().to_string(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OutputFormat {
    #[default]
    Json,
    Text,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanConfig {
    pub call_depth: u32,
    /// Per contract and detector.
    pub timeout: Duration,
    pub detectors: Vec<Detector>,
    pub solver_budget: Duration,
    pub labels: Option<PathBuf>,
    pub format: OutputFormat,
    /// Worker threads; 0 lets rayon decide.
    pub jobs: usize,
    /// Omit wall-clock timing so repeated runs are byte-identical.
    pub deterministic: bool,
}

impl Default for ScanConfig {
    fn default() -> Self {
        ScanConfig {
            call_depth: DEFAULT_CALL_DEPTH,
            timeout: DEFAULT_TIMEOUT,
            detectors: Detector::ALL.to_vec(),
            solver_budget: DEFAULT_QUERY_BUDGET,
            labels: None,
            format: OutputFormat::Json,
            jobs: 0,
            deterministic: false,
        }
    }
}

impl ScanConfig {
    /// Applies `EOSGUARD_SOLVER_TIMEOUT_SECS` if set.
    pub fn with_env_overrides(mut self) -> Result<Self, ReportError> {
        if let Ok(v) = std::env::var(SOLVER_BUDGET_ENV) {
            self.solver_budget = parse_secs(&v).ok_or_else(|| {
                ReportError::InvalidConfig(format!(
                    "{SOLVER_BUDGET_ENV}={v} is not a positive number"
                ))
            })?;
        }
        Ok(self)
    }

    pub fn validate(&self) -> Result<(), ReportError> {
        if self.call_depth == 0 {
            return Err(ReportError::InvalidConfig(
                "call depth must be at least 1".into(),
            ));
        }
        if self.timeout.is_zero() || self.solver_budget.is_zero() {
            return Err(ReportError::InvalidConfig(
                "timeouts must be positive".into(),
            ));
        }
        if self.detectors.is_empty() {
            return Err(ReportError::InvalidConfig("no detectors enabled".into()));
        }
        Ok(())
    }

    fn scan_options(&self, is_gambling: bool) -> ScanOptions {
        ScanOptions {
            exploration: ExplorationOptions {
                call_depth: self.call_depth,
                timeout: self.timeout,
                ..ExplorationOptions::default()
            },
            detectors: self.detectors.clone(),
            is_gambling,
        }
    }
}

/// Parses a positive, finite number of seconds.
pub fn parse_secs(s: &str) -> Option<Duration> {
    let v: f64 = s.trim().parse().ok()?;
    (v.is_finite() && v > 0.0).then(|| Duration::from_secs_f64(v))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConfigSummary {
    pub call_depth: u32,
    pub timeout_secs: f64,
    pub detectors: Vec<Detector>,
    pub solver_budget_secs: f64,
    pub labels: Option<String>,
    pub deterministic: bool,
}

impl From<&ScanConfig> for ConfigSummary {
    fn from(c: &ScanConfig) -> Self {
        ConfigSummary {
            call_depth: c.call_depth,
            timeout_secs: c.timeout.as_secs_f64(),
            detectors: c.detectors.clone(),
            solver_budget_secs: c.solver_budget.as_secs_f64(),
            labels: c.labels.as_ref().map(|p| p.display().to_string()),
            deterministic: c.deterministic,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Timing {
    pub elapsed_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ContractReport {
    pub id: String,
    pub path: String,
    pub findings: Vec<Finding>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub timing: Option<Timing>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScanReport {
    pub schema_version: String,
    pub config: ConfigSummary,
    pub contracts: Vec<ContractReport>,
    pub attacks: Vec<AttackFlag>,
}

impl ScanReport {
    pub fn has_vulnerable(&self) -> bool {
        self.contracts
            .iter()
            .flat_map(|c| &c.findings)
            .any(|f| f.verdict == Verdict::Vulnerable)
    }

    /// 1 when any finding is vulnerable, else 0.
    pub fn exit_code(&self) -> i32 {
        i32::from(self.has_vulnerable())
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }

    pub fn render(&self, format: OutputFormat) -> String {
        match format {
            OutputFormat::Json => self.to_json(),
            OutputFormat::Text => self.to_text(),
        }
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for c in &self.contracts {
            let _ = write!(out, "{}", c.id);
            if let Some(t) = &c.timing {
                let _ = write!(out, " ({:.1} ms)", t.elapsed_ms);
            }
            out.push('\n');
            if let Some(e) = &c.error {
                let _ = writeln!(out, "  error: {e}");
            }
            for f in &c.findings {
                let _ = write!(out, "  {:<18} {}", f.detector.as_str(), f.verdict);
                let flags = diagnostic_flags(f);
                if !flags.is_empty() {
                    let _ = write!(out, "  [{}]", flags.join(", "));
                }
                out.push('\n');
                if let Some(w) = &f.witness {
                    let _ = writeln!(
                        out,
                        "    via {}: {}",
                        w.entry_label,
                        w.import_trace.join(" -> ")
                    );
                    if !w.actions.is_empty() {
                        let _ = writeln!(out, "    actions: {}", w.actions.join(", "));
                    }
                }
            }
        }
        let vulnerable = self
            .contracts
            .iter()
            .filter(|c| c.findings.iter().any(|f| f.verdict == Verdict::Vulnerable))
            .count();
        let _ = writeln!(
            out,
            "{} contracts, {} vulnerable, {} errors",
            self.contracts.len(),
            vulnerable,
            self.contracts.iter().filter(|c| c.error.is_some()).count()
        );
        out
    }
}

fn diagnostic_flags(f: &Finding) -> Vec<&'static str> {
    let d = &f.diagnostics;
    let p = &d.pruning;
    [
        (p.timeout, "timeout"),
        (p.depth, "depth"),
        (p.loop_bound, "loop_bound"),
        (p.solver_unknown, "solver_unknown"),
        (p.unsupported, "unsupported"),
        (p.abandoned, "abandoned"),
        (p.default_modeled, "default_modeled"),
        (d.no_dispatcher, "no_dispatcher"),
        (d.ambiguous_handler, "ambiguous_handler"),
        (d.gated, "gated"),
    ]
    .into_iter()
    .filter_map(|(on, name)| on.then_some(name))
    .collect()
}

/// Expands directories (recursively) into their `.wasm` files. Explicit file
/// arguments are kept whatever their extension.
pub fn collect_inputs(paths: &[PathBuf]) -> Result<Vec<PathBuf>, ReportError> {
    let mut out = Vec::new();
    for p in paths {
        let meta = std::fs::metadata(p).map_err(io_err(p))?;
        if meta.is_dir() {
            walk(p, &mut out)?;
        } else {
            out.push(p.clone());
        }
    }
    out.sort();
    out.dedup();
    Ok(out)
}

fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<(), ReportError> {
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.is_dir() {
            walk(&path, out)?;
        } else if path.extension().is_some_and(|e| e == "wasm") {
            out.push(path);
        }
    }
    Ok(())
}

fn contract_id(path: &Path) -> String {
    path.file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn scan_file(path: &Path, config: &ScanConfig, labels: &Labels) -> ContractReport {
    let start = Instant::now();
    let id = contract_id(path);
    let result = std::fs::read(path)
        .map_err(|e| e.to_string())
        .and_then(|bytes| parse_module(&bytes).map_err(|e| e.to_string()))
        .map(|module| {
            let ctx = ScanContext::new(&id, module, config.scan_options(labels.is_gambling(&id)))
                .with_solver(Solver::new(config.solver_budget));
            scan_context(&ctx)
        });
    let timing = (!config.deterministic).then(|| Timing {
        elapsed_ms: start.elapsed().as_secs_f64() * 1e3,
    });
    let (findings, error) = match result {
        Ok(f) => (f, None),
        Err(e) => (Vec::new(), Some(e)),
    };
    ContractReport {
        id,
        path: path.display().to_string(),
        findings,
        timing,
        error,
    }
}

/// Scans every contract under `paths`. Per-file read or decode failures are
/// recorded on that entry; missing inputs or a bad label file abort the run.
pub fn run_scan(paths: &[PathBuf], config: &ScanConfig) -> Result<ScanReport, ReportError> {
    config.validate()?;
    let labels = match &config.labels {
        Some(p) => read_labels(p)?,
        None => Labels::default(),
    };
    let files = collect_inputs(paths)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.jobs)
        .build()
        .map_err(|e| ReportError::InvalidConfig(e.to_string()))?;
    let contracts = pool.install(|| {
        files
            .par_iter()
            .map(|p| scan_file(p, config, &labels))
            .collect::<Vec<_>>()
    });
    Ok(ScanReport {
        schema_version: SCHEMA_VERSION.to_string(),
        config: config.into(),
        contracts,
        attacks: Vec::new(),
    })
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AttackScanConfig {
    pub heuristics: AttackConfig,
    /// Extra gambling accounts for the rollback heuristic.
    pub labels: Option<PathBuf>,
}

#[derive(Deserialize)]
struct ReportIn {
    contracts: Vec<ContractIn>,
}

#[derive(Deserialize)]
struct ContractIn {
    id: String,
    #[serde(default)]
    findings: Vec<FindingIn>,
}

#[derive(Deserialize)]
struct FindingIn {
    detector: String,
    verdict: String,
    witness: Option<WitnessIn>,
}

#[derive(Deserialize)]
struct WitnessIn {
    #[serde(default)]
    actions: Vec<String>,
}

/// Accounts and actions the attack heuristics should watch, taken from a
/// scan report.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackTargets {
    /// Contracts vulnerable to fake EOS or fake receipts.
    pub victims: BTreeSet<String>,
    pub gambling: BTreeSet<String>,
    pub vulnerable_actions: BTreeSet<(String, String)>,
}

impl AttackTargets {
    pub fn from_report(report: &serde_json::Value, labels: &Labels) -> Result<Self, String> {
        let r: ReportIn = serde_json::from_value(report.clone()).map_err(|e| e.to_string())?;
        let mut t = AttackTargets {
            gambling: labels.gambling_accounts().map(str::to_string).collect(),
            ..AttackTargets::default()
        };
        for c in r.contracts {
            for f in c.findings.into_iter().filter(|f| f.verdict == "vulnerable") {
                match Detector::parse(&f.detector) {
                    Some(Detector::FakeEos | Detector::FakeReceipt) => {
                        t.victims.insert(c.id.clone());
                    }
                    Some(Detector::Rollback) => {
                        t.gambling.insert(c.id.clone());
                    }
                    Some(Detector::MissingPermission) => {
                        for a in f.witness.into_iter().flat_map(|w| w.actions) {
                            t.vulnerable_actions.insert((c.id.clone(), a));
                        }
                    }
                    None => return Err(format!("unknown detector {}", f.detector)),
                }
            }
        }
        Ok(t)
    }
}

/// Runs all four heuristics over `log` against the targets in `targets`,
/// one streaming pass each. Flags come out grouped by heuristic.
pub fn flag_attacks(
    log: &Path,
    targets: &AttackTargets,
    cfg: &AttackConfig,
) -> Result<Vec<AttackFlag>, ReportError> {
    let mut flags = flag_fake_eos_attacks(LogReader::open(log)?, &targets.victims, cfg)?;
    flags.extend(flag_fake_receipt_attacks(
        LogReader::open(log)?,
        &targets.victims,
        cfg,
    )?);
    flags.extend(flag_rollback_attacks(
        LogReader::open(log)?,
        &targets.gambling,
    )?);
    flags.extend(flag_permission_misuse(
        LogReader::open(log)?,
        &targets.vulnerable_actions,
    )?);
    Ok(flags)
}

/// Reads a scan report, runs the heuristics over `log_path`, and returns the
/// report with its `attacks` key replaced by the flags.
pub fn run_attack_scan(
    log_path: &Path,
    scan_report_path: &Path,
    config: &AttackScanConfig,
) -> Result<serde_json::Value, ReportError> {
    let h = &config.heuristics;
    if h.window_secs <= 0 || !(h.ratio_threshold.is_finite() && h.ratio_threshold >= 1.0) {
        return Err(ReportError::InvalidConfig(
            "window must be positive and ratio at least 1".into(),
        ));
    }
    let text = std::fs::read_to_string(scan_report_path).map_err(io_err(scan_report_path))?;
    let malformed = |reason: String| ReportError::MalformedReport {
        path: scan_report_path.display().to_string(),
        reason,
    };
    let mut report: serde_json::Value =
        serde_json::from_str(&text).map_err(|e| malformed(e.to_string()))?;
    let labels = match &config.labels {
        Some(p) => read_labels(p)?,
        None => Labels::default(),
    };
    let targets = AttackTargets::from_report(&report, &labels).map_err(malformed)?;
    let flags = flag_attacks(log_path, &targets, h)?;
    let obj = report
        .as_object_mut()
        .ok_or_else(|| malformed("top level is not an object".into()))?;
    obj.insert(
        "attacks".into(),
        serde_json::to_value(flags).expect("flags serialize"),
    );
    Ok(report)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults() {
        let c = ScanConfig::default();
        assert_eq!(c.call_depth, 2);
        assert_eq!(c.timeout, Duration::from_secs(300));
        assert_eq!(c.detectors, Detector::ALL);
        c.validate().unwrap();
    }

    #[test]
    fn seconds_parsing() {
        assert_eq!(parse_secs("2.5"), Some(Duration::from_millis(2500)));
        assert_eq!(parse_secs("0"), None);
        assert_eq!(parse_secs("-1"), None);
        assert_eq!(parse_secs("inf"), None);
        assert_eq!(parse_secs("x"), None);
    }

    #[test]
    fn empty_directory() {
        let dir = tempfile::tempdir().unwrap();
        let r = run_scan(&[dir.path().to_path_buf()], &ScanConfig::default()).unwrap();
        assert!(r.contracts.is_empty());
        assert_eq!(r.exit_code(), 0);
        let v: serde_json::Value = serde_json::from_str(&r.to_json()).unwrap();
        assert_eq!(v["schema_version"], SCHEMA_VERSION);
        assert_eq!(v["attacks"], serde_json::json!([]));
    }

    #[test]
    fn missing_input_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        let err = run_scan(&[dir.path().join("nope")], &ScanConfig::default()).unwrap_err();
        assert!(matches!(err, ReportError::Io { .. }));
    }

    #[test]
    fn targets_from_report() {
        let report = serde_json::json!({
            "contracts": [
                {"id": "a", "findings": [
                    {"detector": "fake_eos", "verdict": "vulnerable", "witness": {}},
                    {"detector": "rollback", "verdict": "safe", "witness": null}]},
                {"id": "b", "findings": [
                    {"detector": "missing_permission", "verdict": "vulnerable",
                     "witness": {"actions": ["clear", "setowner"]}}]},
                {"id": "c", "error": "bad magic"}
            ]
        });
        let mut labels = Labels::default();
        labels.categories.insert("dice".into(), "Gambling".into());
        let t = AttackTargets::from_report(&report, &labels).unwrap();
        assert_eq!(t.victims, BTreeSet::from(["a".to_string()]));
        assert_eq!(t.gambling, BTreeSet::from(["dice".to_string()]));
        assert_eq!(t.vulnerable_actions.len(), 2);
        let bad = serde_json::json!({"contracts": [{"id": "x", "findings": [
            {"detector": "reentrancy", "verdict": "vulnerable", "witness": null}]}]});
        assert!(AttackTargets::from_report(&bad, &labels).is_err());
    }
}
