//! Experiment dispatch and output writing.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use darkstate_core::qcore::monitor;
use serde_json::{json, Value};

use crate::config::{ExperimentParams, RunConfig};
use crate::error::SimError;
use crate::exec::Executor;
use crate::experiments::{
    absorption_linewidth, cpt_linecut_and_visibility, run_cpt_map, run_g2_experiment, run_phase_jump, run_steady_state,
    run_transient_scan, run_visibility_vs_field,
};
use crate::result::ExperimentResult;

/// Identifier of the running build: crate version plus the git revision
/// when it was available at compile time.
pub const BUILD_ID: &str = concat!(env!("CARGO_PKG_VERSION"), "+", env!("DARKSTATE_GIT_REV"));

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Format {
    Csv,
    Json,
}

impl std::str::FromStr for Format {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "csv" => Ok(Format::Csv),
            "json" => Ok(Format::Json),
            other => Err(format!("unknown format `{other}` (expected csv or json)")),
        }
    }
}

/// Runs the configured experiment.
pub fn run_experiment(cfg: &RunConfig, exec: &Executor) -> Result<ExperimentResult, SimError> {
    let sys = &cfg.system;
    let spec = &cfg.ensemble;
    match &cfg.params {
        ExperimentParams::G2(s) => run_g2_experiment(sys, spec, s, exec),
        ExperimentParams::CptMap(s) => {
            let mut map = run_cpt_map(sys, spec, s, exec)?;
            match cpt_linecut_and_visibility(&map, absorption_linewidth(&sys.qd)) {
                Ok(cut) => map.tables.extend(cut.tables),
                Err(SimError::Input(why)) => map.warn(format!("no linecut: {why}")),
                Err(e) => return Err(e),
            }
            Ok(map)
        }
        ExperimentParams::CptVisibility { fields, settings } => run_visibility_vs_field(sys, spec, fields, settings, exec),
        ExperimentParams::PhaseJump(s) => run_phase_jump(sys, spec, s, exec),
        ExperimentParams::TransientScan(s) => run_transient_scan(sys, spec, s, exec),
        ExperimentParams::SteadyState { oh_field } => run_steady_state(sys, oh_field, cfg.step),
    }
}

/// Files written by [`write_outputs`].
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Written {
    pub files: Vec<PathBuf>,
}

/// Writes one file per table and format plus `meta.json`.
pub fn write_outputs(
    dir: &Path,
    cfg: &RunConfig,
    result: &ExperimentResult,
    formats: &[Format],
    threads: usize,
    wall_time_s: f64,
) -> Result<Written, SimError> {
    fs::create_dir_all(dir)?;
    let mut written = Written::default();
    let mut tables = Vec::new();
    for t in &result.tables {
        let mut files = Vec::new();
        for f in formats {
            let (name, bytes) = match f {
                Format::Csv => (format!("{}.csv", t.name), t.to_csv_string().into_bytes()),
                Format::Json => {
                    let mut s = serde_json::to_string_pretty(&t.to_json()).expect("table serialises");
                    s.push('\n');
                    (format!("{}.json", t.name), s.into_bytes())
                }
            };
            let path = dir.join(&name);
            fs::write(&path, bytes)?;
            written.files.push(path);
            files.push(name);
        }
        tables.push(json!({
            "name": t.name,
            "files": files,
            "rows": t.rows(),
            "columns": t.columns.iter().map(|c| c.header()).collect::<Vec<_>>(),
        }));
    }
    let meta = json!({
        "experiment": cfg.experiment.name(),
        "seed": cfg.seed,
        "build_id": BUILD_ID,
        "wall_time_s": wall_time_s,
        "threads": threads,
        "kernel_evaluations": result.metadata.get("kernel_evaluations").cloned().unwrap_or(Value::Null),
        "config": cfg.canonical_json(),
        "tables": tables,
        "results": result.metadata,
    });
    let path = dir.join("meta.json");
    let mut s = serde_json::to_string_pretty(&meta).expect("metadata serialises");
    s.push('\n');
    fs::write(&path, s)?;
    written.files.push(path);
    Ok(written)
}

/// Machine-readable description of a failed run.
pub fn error_json(err: &SimError) -> Value {
    json!({
        "error": {
            "kind": err.kind(),
            "exit_code": err.exit_code(),
            "message": err.to_string(),
        }
    })
}

/// Parses, runs and writes a configuration: the whole command-line flow
/// without process exit handling.
pub fn run_config(cfg: &RunConfig, out: &Path, formats: &[Format], threads: usize) -> Result<Written, SimError> {
    let exec = Executor::new(threads)?;
    let start = Instant::now();
    monitor::reset();
    let mut result = run_experiment(cfg, &exec)?;
    let worst = monitor::worst();
    result.set(
        "state_diagnostics",
        json!({
            "max_hermiticity_error": worst.hermiticity_error,
            "max_trace_error": worst.trace_error,
            "min_eigenvalue": worst.min_eigenvalue,
        }),
    );
    let wall = start.elapsed().as_secs_f64();
    write_outputs(out, cfg, &result, formats, exec.threads(), wall)
}
