//! TOML run configuration.
//!
//! Every key is optional; missing keys take the defaults below. Unknown keys
//! are rejected so typos surface immediately.
//!
//! ```toml
//! nx = 200
//! nt = 10
//! T = 1e-2
//! epsilon = 0.04
//! on_nonconvergence = "abort"   # or "continue"
//! step_condition = "report"     # or "enforce"
//!
//! [mobility]
//! variant = "exact-sign"        # or "smoothed-sign"
//! slope = 10.0
//!
//! [pdhg]
//! lambda = 500.0
//! sigma = 5e-4
//! delta = 5e-6
//! max_iter = 200000
//! penalty = "h1-dot"            # or "l2"
//! ergodic_tracking = false
//!
//! [initial]
//! kind = "sine"                 # jump, facet, zero
//!
//! [output]
//! dir = "output"
//! snapshot_stride = 1
//!
//! [studies]
//! epsilon = 0.05
//! variant = "smoothed-sign"
//! T = 1e-4
//! space_nx = [16, 32, 64, 128, 256, 512]
//! time_nt = [5, 10, 20, 40, 80]
//! penalty_nx = [32, 64, 124, 250, 500, 750]
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{InitialKind, StudyConfig};
use crate::flow::{FlowConfig, NonConvergencePolicy, StepConditionPolicy};
use crate::grid::GridSpec;
use crate::mobility::{MobilityConfig, SignVariant};
use crate::pdhg::PdhgConfig;

/// Environment variable naming the default output directory.
pub const OUTPUT_DIR_ENV: &str = "CRYSTAL_SURFACE_OUT";
pub const DEFAULT_OUTPUT_DIR: &str = "output";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub nx: usize,
    pub nt: usize,
    #[serde(rename = "T")]
    pub final_time: f64,
    pub epsilon: f64,
    pub on_nonconvergence: NonConvergencePolicy,
    pub step_condition: StepConditionPolicy,
    pub mobility: MobilitySection,
    pub pdhg: PdhgConfig,
    pub initial: InitialSection,
    pub output: OutputSection,
    pub studies: StudyConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MobilitySection {
    pub variant: SignVariant,
    pub slope: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct InitialSection {
    pub kind: InitialKind,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OutputSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub dir: Option<PathBuf>,
    pub snapshot_stride: usize,
}

impl Default for MobilitySection {
    fn default() -> Self {
        Self {
            variant: SignVariant::ExactSign,
            slope: MobilityConfig::DEFAULT_SLOPE,
        }
    }
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: None,
            snapshot_stride: 1,
        }
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            nx: 200,
            nt: 10,
            final_time: 1e-2,
            epsilon: 0.04,
            on_nonconvergence: NonConvergencePolicy::Abort,
            step_condition: StepConditionPolicy::Report,
            mobility: MobilitySection::default(),
            pdhg: PdhgConfig::default(),
            initial: InitialSection::default(),
            output: OutputSection::default(),
            studies: StudyConfig::default(),
        }
    }
}

/// Source text plus `key=value` overrides, kept for error reporting.
#[derive(Debug, Clone, Default)]
pub struct ConfigSource {
    pub text: String,
    pub overrides: Vec<String>,
}

impl ConfigSource {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Ok(Self {
            text,
            overrides: Vec::new(),
        })
    }

    pub fn from_str(text: &str) -> Self {
        Self {
            text: text.into(),
            overrides: Vec::new(),
        }
    }

    pub fn with_overrides(mut self, overrides: impl IntoIterator<Item = String>) -> Self {
        self.overrides.extend(overrides);
        self
    }

    /// 1-based line of `key` (dotted path) in the source, if it appears there.
    fn line_of(&self, key: &str) -> Option<usize> {
        let (table, leaf) = match key.rsplit_once('.') {
            Some((t, l)) => (t, l),
            None => ("", key),
        };
        let mut current = String::new();
        for (i, raw) in self.text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if let Some(header) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                current = header.trim().to_string();
                continue;
            }
            if current == table {
                if let Some((k, _)) = line.split_once('=') {
                    if k.trim().trim_matches('"') == leaf {
                        return Some(i + 1);
                    }
                }
            }
        }
        None
    }

    fn error(&self, key: impl Into<String>, message: impl Into<String>) -> Error {
        let key = key.into();
        Error::Config {
            line: self.line_of(&key),
            key,
            message: message.into(),
        }
    }

    pub fn parse(&self) -> Result<RunConfig> {
        let mut table: toml::Table = self.text.parse().map_err(|e: toml::de::Error| Error::Config {
            key: "<document>".into(),
            line: e.span().map(|s| line_at(&self.text, s.start)),
            message: e.message().to_string(),
        })?;
        for o in &self.overrides {
            apply_override(&mut table, o)?;
        }
        let cfg: RunConfig = serde_path_to_error::deserialize(table).map_err(|e| {
            let key = e.path().to_string();
            self.error(
                if key == "." { "<document>".to_string() } else { key },
                e.inner().message().to_string(),
            )
        })?;
        self.check(&cfg)?;
        Ok(cfg)
    }

    /// Constraint checks, reported against the offending key.
    fn check(&self, cfg: &RunConfig) -> Result<()> {
        let named = |e: Error| match e {
            Error::InvalidParameter { name, value, reason } => {
                let key = match name {
                    "T" | "nt" => name.to_string(),
                    n if n.contains('.') => n.to_string(),
                    n => format!("pdhg.{n}"),
                };
                self.error(key, format!("{value}: {reason}"))
            }
            Error::InvalidEpsilon(v) => self.error("epsilon", format!("{v}: must satisfy 0 < epsilon < pi")),
            Error::InvalidSlope(v) => self.error("mobility.slope", format!("{v}: must be positive")),
            Error::GridTooSmall(n) => self.error("nx", format!("{n}: need at least {} nodes", GridSpec::MIN_NODES)),
            other => other,
        };
        cfg.flow().map_err(named)?.validate().map_err(named)?;
        cfg.studies.validate().map_err(|e| match e {
            Error::InvalidEpsilon(v) => self.error("studies.epsilon", format!("{v}: must satisfy 0 < epsilon < pi")),
            Error::InvalidSlope(v) => self.error("studies.slope", format!("{v}: must be positive")),
            Error::GridTooSmall(n) => self.error("studies", format!("grid size {n} is below {}", GridSpec::MIN_NODES)),
            e => named(e),
        })
    }
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

/// Sets `a.b.c = value` in the table; `value` is parsed as TOML, falling
/// back to a bare string.
fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<()> {
    let bad = |message: &str| Error::Config {
        key: assignment.to_string(),
        line: None,
        message: message.to_string(),
    };
    let (key, raw) = assignment.split_once('=').ok_or_else(|| bad("expected key=value"))?;
    let key = key.trim();
    let raw = raw.trim();
    if key.is_empty() {
        return Err(bad("empty key"));
    }
    let value: toml::Value = raw.parse().unwrap_or_else(|_| toml::Value::String(raw.to_string()));
    let mut parts: Vec<&str> = key.split('.').collect();
    let leaf = parts.pop().expect("nonempty");
    let mut node = table;
    for part in parts {
        node = node
            .entry(part)
            .or_insert_with(|| toml::Value::Table(toml::Table::new()))
            .as_table_mut()
            .ok_or_else(|| bad("path runs through a non-table value"))?;
    }
    node.insert(leaf.to_string(), value);
    Ok(())
}

impl RunConfig {
    pub fn flow(&self) -> Result<FlowConfig> {
        Ok(FlowConfig {
            grid: GridSpec::new(self.nx)?,
            final_time: self.final_time,
            n_t: self.nt,
            mobility: MobilityConfig::new(self.epsilon, self.mobility.variant, self.mobility.slope)?,
            pdhg: self.pdhg,
            initial: self.initial.kind,
            snapshot_stride: self.output.snapshot_stride,
            step_condition: self.step_condition,
            on_nonconvergence: self.on_nonconvergence,
        })
    }

    /// Output directory: explicit flag, then config, then environment, then `output`.
    pub fn output_dir(&self, flag: Option<&Path>) -> PathBuf {
        flag.map(Path::to_path_buf)
            .or_else(|| self.output.dir.clone())
            .or_else(|| std::env::var_os(OUTPUT_DIR_ENV).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}

impl From<&FlowConfig> for RunConfig {
    fn from(f: &FlowConfig) -> Self {
        Self {
            nx: f.grid.len(),
            nt: f.n_t,
            final_time: f.final_time,
            epsilon: f.mobility.mollifier.epsilon(),
            on_nonconvergence: f.on_nonconvergence,
            step_condition: f.step_condition,
            mobility: MobilitySection {
                variant: f.mobility.variant,
                slope: f.mobility.slope,
            },
            pdhg: f.pdhg,
            initial: InitialSection { kind: f.initial },
            output: OutputSection {
                dir: None,
                snapshot_stride: f.snapshot_stride,
            },
            studies: StudyConfig::default(),
        }
    }
}

/// Parses configuration text with no overrides.
pub fn parse_config(text: &str) -> Result<RunConfig> {
    ConfigSource::from_str(text).parse()
}
