//! CSV and manifest writers.
//!
//! Floats are written as `{:.16e}` (17 significant digits), which round-trips
//! every `f64` and is identical across platforms.

use std::fmt::Write as _;
use std::fs::{self, File, OpenOptions};
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::experiments::{LogLogFit, StudyResult};
use crate::flow::FlowTrace;

pub const SNAPSHOTS_FILE: &str = "snapshots.csv";
pub const DIAGNOSTICS_FILE: &str = "diagnostics.csv";
pub const STUDY_FILE: &str = "study.csv";
pub const MANIFEST_FILE: &str = "manifest.json";
const LOCK_FILE: &str = ".lock";

fn float(out: &mut String, v: f64) {
    write!(out, "{v:.16e}").expect("write to string");
}

fn write_file(dir: &Path, name: &str, contents: &str) -> Result<PathBuf> {
    let path = dir.join(name);
    fs::write(&path, contents).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

/// `t,x,h`, one row per recorded step and node.
pub fn snapshots_csv(trace: &FlowTrace) -> String {
    let mut out = String::from("t,x,h\n");
    for snap in &trace.snapshots {
        let grid = snap.h.grid();
        for (j, &h) in snap.h.values().iter().enumerate() {
            float(&mut out, snap.t);
            out.push(',');
            float(&mut out, grid.x(j));
            out.push(',');
            float(&mut out, h);
            out.push('\n');
        }
    }
    out
}

pub fn diagnostics_csv(trace: &FlowTrace) -> String {
    let mut out = String::from("n,t,tv_energy,mob_l1,mob_inv_l1,inner_iters,converged,phi_before,phi_after\n");
    for r in &trace.records {
        write!(out, "{},", r.n).unwrap();
        for v in [r.t, r.tv_energy, r.mob_l1, r.mob_inv_l1] {
            float(&mut out, v);
            out.push(',');
        }
        write!(out, "{},{},", r.inner_iters, r.converged).unwrap();
        float(&mut out, r.phi_before);
        out.push(',');
        float(&mut out, r.phi_after);
        out.push('\n');
    }
    out
}

pub fn study_csv(result: &StudyResult) -> String {
    let mut out = String::from("param,value,variant\n");
    for row in &result.rows {
        write!(out, "{},", row.param).unwrap();
        float(&mut out, row.value);
        writeln!(out, ",{}", row.variant).unwrap();
    }
    out
}

pub fn write_snapshot_csv(trace: &FlowTrace, dir: &Path) -> Result<PathBuf> {
    write_file(dir, SNAPSHOTS_FILE, &snapshots_csv(trace))
}

pub fn write_diagnostics_csv(trace: &FlowTrace, dir: &Path) -> Result<PathBuf> {
    write_file(dir, DIAGNOSTICS_FILE, &diagnostics_csv(trace))
}

pub fn write_study_csv(result: &StudyResult, dir: &Path) -> Result<PathBuf> {
    write_file(dir, STUDY_FILE, &study_csv(result))
}

/// Milliseconds since the Unix epoch.
pub fn now_millis() -> u128 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_millis())
        .unwrap_or(0)
}

#[derive(Debug, Clone, Serialize)]
pub struct CensoredRow {
    pub param: usize,
    pub variant: String,
}

#[derive(Debug, Clone, Serialize)]
pub struct StudySummary {
    pub study: String,
    pub fit: Option<LogLogFit>,
    pub censored: Vec<CensoredRow>,
}

impl From<&StudyResult> for StudySummary {
    fn from(r: &StudyResult) -> Self {
        Self {
            study: r.study.clone(),
            fit: r.fit,
            censored: r
                .rows
                .iter()
                .filter(|row| row.censored)
                .map(|row| CensoredRow {
                    param: row.param,
                    variant: row.variant.clone(),
                })
                .collect(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub config: RunConfig,
    pub started_unix_ms: u128,
    pub finished_unix_ms: u128,
    pub files: Vec<String>,
    pub exit_status: i32,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub study: Option<StudySummary>,
}

impl RunManifest {
    pub fn new(command: &str, config: &RunConfig, started_unix_ms: u128) -> Self {
        Self {
            command: command.into(),
            version: env!("CARGO_PKG_VERSION").into(),
            config: config.clone(),
            started_unix_ms,
            finished_unix_ms: started_unix_ms,
            files: Vec::new(),
            exit_status: 0,
            error: None,
            study: None,
        }
    }

    pub fn record(&mut self, path: &Path) {
        let name = path.file_name().map(|n| n.to_string_lossy().into_owned());
        self.files.push(name.unwrap_or_else(|| path.display().to_string()));
    }

    pub fn write(&mut self, dir: &Path) -> Result<PathBuf> {
        self.finished_unix_ms = now_millis();
        let mut json = serde_json::to_string_pretty(self).expect("manifest serializes");
        json.push('\n');
        write_file(dir, MANIFEST_FILE, &json)
    }
}

/// Exclusive claim on an output directory, released on drop.
#[derive(Debug)]
pub struct OutputLock {
    path: PathBuf,
    _file: File,
}

impl OutputLock {
    /// Creates `dir` if needed and claims it.
    pub fn acquire(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let path = dir.join(LOCK_FILE);
        let file = OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
            .map_err(|e| match e.kind() {
                std::io::ErrorKind::AlreadyExists => Error::Locked(dir.to_path_buf()),
                _ => Error::io(&path, e),
            })?;
        Ok(Self { path, _file: file })
    }
}

impl Drop for OutputLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}
