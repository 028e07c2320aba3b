use std::fmt;
use std::fs;
use std::io::{BufReader, Write};
use std::path::Path;

use anyhow::Context;
use fairflow_core::config::Regime;
use fairflow_core::config::{parse_regimes, ScenarioConfig};
use fairflow_core::game::{build_report, default_games, RoleGameFile, MAX_HORIZON};
use fairflow_core::harness::{run_comparison, run_regime, HarnessError, RunOptions};
use fairflow_core::trace::{read_jsonl, verify_trace, write_jsonl};

/// A command failure, classified by exit code.
#[derive(Debug)]
pub enum Failure {
    Config(anyhow::Error),
    Internal(anyhow::Error),
    Verification(String),
}

impl Failure {
    pub fn exit_code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Internal(_) => 3,
            Failure::Verification(_) => 4,
        }
    }
}

impl fmt::Display for Failure {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Failure::Config(e) => write!(f, "configuration error: {e:#}"),
            Failure::Internal(e) => write!(f, "internal fault: {e:#}"),
            Failure::Verification(msg) => write!(f, "verification failed: {msg}"),
        }
    }
}

type Outcome = Result<(), Failure>;

fn config_err(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Config(e.into())
}

fn internal(e: impl Into<anyhow::Error>) -> Failure {
    Failure::Internal(e.into())
}

fn harness_err(e: HarnessError) -> Failure {
    match e {
        HarnessError::Config(_) | HarnessError::SearchBound(_) => config_err(e),
        HarnessError::Internal(_) => internal(e),
    }
}

fn load_scenario(path: &Path) -> Result<ScenarioConfig, Failure> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("cannot read scenario {}", path.display()))
        .map_err(config_err)?;
    ScenarioConfig::from_json(&text)
        .with_context(|| format!("scenario {}", path.display()))
        .map_err(config_err)
}

/// Writes through a temporary file in the same directory, then renames.
fn write_atomic(dir: &Path, name: &str, contents: &[u8]) -> Outcome {
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create a temporary file in {}", dir.display()))
        .map_err(internal)?;
    tmp.write_all(contents).map_err(internal)?;
    #[cfg(unix)]
    {
        use std::os::unix::fs::PermissionsExt;
        tmp.as_file()
            .set_permissions(fs::Permissions::from_mode(0o644))
            .map_err(internal)?;
    }
    tmp.as_file().sync_all().map_err(internal)?;
    tmp.persist(dir.join(name))
        .with_context(|| format!("cannot write {}", dir.join(name).display()))
        .map_err(internal)?;
    Ok(())
}

fn ensure_dir(dir: &Path) -> Outcome {
    fs::create_dir_all(dir)
        .with_context(|| format!("cannot create output directory {}", dir.display()))
        .map_err(config_err)
}

fn to_json_bytes<T: serde::Serialize>(value: &T) -> Result<Vec<u8>, Failure> {
    let mut bytes = serde_json::to_vec_pretty(value).map_err(internal)?;
    bytes.push(b'\n');
    Ok(bytes)
}

pub fn run(scenario: &Path, seed: u64, out: &Path, trace: bool) -> Outcome {
    let config = load_scenario(scenario)?;
    ensure_dir(out)?;
    let mut reports = Vec::new();
    let mut write_error = None;
    let output = run_regime(&config, seed, Regime::Fairflow, RunOptions { trace }, |report| {
        if let Err(e) = serde_json::to_writer(&mut reports, report) {
            write_error.get_or_insert(e);
        }
        reports.push(b'\n');
    })
    .map_err(harness_err)?;
    if let Some(e) = write_error {
        return Err(internal(e));
    }
    if !output.summary.conservation.holds() {
        return Err(internal(anyhow::anyhow!(
            "conservation violated: {:?}",
            output.summary.conservation
        )));
    }
    write_atomic(out, "reports.jsonl", &reports)?;
    write_atomic(out, "metrics.json", &to_json_bytes(&output.summary)?)?;
    if trace {
        let mut buf = Vec::new();
        write_jsonl(&output.trace, &mut buf).map_err(internal)?;
        write_atomic(out, "trace.jsonl", &buf)?;
    }
    tracing::info!(slots = config.slots, seed, "run complete");
    Ok(())
}

pub fn compare(scenario: &Path, seeds: Option<u64>, regimes: Option<&str>, out: &Path) -> Outcome {
    let config = load_scenario(scenario)?;
    let regimes = match regimes {
        Some(list) => parse_regimes(list).map_err(config_err)?,
        None => config.regimes.clone(),
    };
    let mut effective = config.clone();
    effective.regimes = regimes.clone();
    effective.validate().map_err(config_err)?;
    let seeds: Vec<u64> = match seeds {
        Some(0) => return Err(config_err(anyhow::anyhow!("--seeds must be positive"))),
        Some(n) => (0..n).collect(),
        None => config.default_seeds(),
    };
    ensure_dir(out)?;
    let report = run_comparison(&effective, &seeds, &regimes).map_err(harness_err)?;
    write_atomic(out, "comparison.json", &to_json_bytes(&report)?)?;
    write_atomic(out, "comparison.csv", report.to_csv().as_bytes())?;
    Ok(())
}

pub fn equilibrium(params: Option<&Path>, horizon: Option<u32>, out: &Path) -> Outcome {
    if let Some(t) = horizon.filter(|&t| t > MAX_HORIZON) {
        return Err(config_err(anyhow::anyhow!(
            "horizon {t} exceeds the search bound of {MAX_HORIZON}"
        )));
    }
    let file: RoleGameFile = match params {
        Some(path) => {
            let text = fs::read_to_string(path)
                .with_context(|| format!("cannot read parameters {}", path.display()))
                .map_err(config_err)?;
            serde_json::from_str(&text)
                .with_context(|| format!("parameters {}", path.display()))
                .map_err(config_err)?
        }
        None => default_games(),
    };
    let report = build_report(&file.roles, horizon).map_err(config_err)?;
    ensure_dir(out)?;
    write_atomic(out, "equilibrium.json", &to_json_bytes(&report)?)?;
    Ok(())
}

pub fn verify(trace: &Path) -> Outcome {
    let file = fs::File::open(trace)
        .with_context(|| format!("cannot open trace {}", trace.display()))
        .map_err(config_err)?;
    let events = read_jsonl(BufReader::new(file)).map_err(|e| Failure::Verification(e.to_string()))?;
    let summary = verify_trace(&events).map_err(|v| Failure::Verification(v.to_string()))?;
    println!(
        "trace ok: {} events, {} slots, {} proofs verified, {} faulted slots",
        summary.events, summary.slots, summary.proofs_verified, summary.faults
    );
    Ok(())
}
