//! Initial data and the refinement / penalization studies.

use std::f64::consts::{FRAC_PI_2, PI};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::flow::{run_flow, FlowConfig, NonConvergencePolicy, StepConditionPolicy};
use crate::grid::{self, Field, GridSpec, Profile};
use crate::mobility::{MobilityConfig, SignVariant};
use crate::pdhg::{PdhgConfig, Penalty};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum InitialKind {
    #[default]
    Sine,
    Jump,
    Facet,
    Zero,
}

impl InitialKind {
    pub fn name(&self) -> &'static str {
        match self {
            InitialKind::Sine => "sine",
            InitialKind::Jump => "jump",
            InitialKind::Facet => "facet",
            InitialKind::Zero => "zero",
        }
    }
}

const EDGE_TOL: f64 = 1e-12;

/// `x ∈ [a, b)`, with node coordinates within rounding of `a` counted inside.
fn in_piece(x: f64, a: f64, b: f64) -> bool {
    x >= a - EDGE_TOL && x < b - EDGE_TOL
}

fn raw_profile(kind: InitialKind, x: f64) -> f64 {
    match kind {
        InitialKind::Sine => x.sin(),
        InitialKind::Jump => {
            if in_piece(x, FRAC_PI_2, 1.5 * PI) {
                (2.0 * x).sin()
            } else {
                0.0
            }
        }
        InitialKind::Facet => {
            if in_piece(x, FRAC_PI_2, 0.75 * PI) {
                (2.0 * (x - FRAC_PI_2)).sin()
            } else if in_piece(x, 0.75 * PI, 1.25 * PI) {
                1.0
            } else if in_piece(x, 1.25 * PI, 1.5 * PI) {
                (2.0 * (x - 1.25 * PI)).cos()
            } else {
                0.0
            }
        }
        InitialKind::Zero => 0.0,
    }
}

/// Samples the named profile at the nodes and removes its discrete mean.
pub fn initial_profile(kind: InitialKind, grid: GridSpec) -> Profile {
    let values = grid.nodes().into_iter().map(|x| raw_profile(kind, x)).collect();
    Field::from_raw(grid, values).mean_free()
}

/// Keeps every other node of a grid with twice as many points.
pub fn restrict_fine_to_coarse(h_fine: &Profile, coarse: GridSpec) -> Result<Profile> {
    let fine = h_fine.len();
    if fine != 2 * coarse.len() {
        return Err(Error::NotNested {
            fine,
            coarse: coarse.len(),
        });
    }
    let values = h_fine.values().iter().step_by(2).copied().collect();
    Ok(Field::from_raw(coarse, values))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct L1Error {
    pub absolute: f64,
    /// `absolute / ‖b‖₁`, or `None` when `b` vanishes.
    pub relative: Option<f64>,
}

/// `‖a − b‖₁` (dx-weighted), also normalized by `‖b‖₁`.
pub fn relative_l1_error(a: &Profile, b: &Profile) -> Result<L1Error> {
    let absolute = grid::l1_norm(&a.sub(b)?);
    let norm_b = grid::l1_norm(b);
    Ok(L1Error {
        absolute,
        relative: (norm_b > 0.0).then(|| absolute / norm_b),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LogLogFit {
    pub slope: f64,
    pub intercept: f64,
    /// Root-mean-square residual in log space.
    pub residual: f64,
}

/// Least-squares line through `(ln x, ln y)`.
pub fn fit_loglog_slope(pairs: &[(f64, f64)]) -> Result<LogLogFit> {
    if pairs.len() < 3
        || pairs
            .iter()
            .any(|&(x, y)| !(x > 0.0 && y > 0.0 && x.is_finite() && y.is_finite()))
    {
        return Err(Error::BadFit);
    }
    let pts: Vec<(f64, f64)> = pairs.iter().map(|&(x, y)| (x.ln(), y.ln())).collect();
    let k = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / k;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / k;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::BadFit);
    }
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let residual = (pts.iter().map(|p| (p.1 - intercept - slope * p.0).powi(2)).sum::<f64>() / k).sqrt();
    Ok(LogLogFit {
        slope,
        intercept,
        residual,
    })
}

/// Shared setup for the three studies.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct StudyConfig {
    pub epsilon: f64,
    pub variant: SignVariant,
    pub slope: f64,
    #[serde(rename = "T")]
    pub final_time: f64,
    pub initial: InitialKind,
    pub space_nx: Vec<usize>,
    pub space_nt: usize,
    pub time_nx: usize,
    pub time_nt: Vec<usize>,
    pub penalty_nx: Vec<usize>,
    pub penalty_tau: f64,
    pub penalty_nt: usize,
    pub l2_lambda: f64,
    pub l2_sigma: f64,
}

impl Default for StudyConfig {
    fn default() -> Self {
        Self {
            epsilon: 0.05,
            variant: SignVariant::SmoothedSign,
            slope: MobilityConfig::DEFAULT_SLOPE,
            final_time: 1e-4,
            initial: InitialKind::Sine,
            space_nx: vec![16, 32, 64, 128, 256, 512],
            space_nt: 10,
            time_nx: 256,
            time_nt: vec![5, 10, 20, 40, 80],
            penalty_nx: vec![32, 64, 124, 250, 500, 750],
            penalty_tau: 1e-6,
            penalty_nt: 1,
            l2_lambda: 5e-5,
            l2_sigma: 5e-5,
        }
    }
}

impl StudyConfig {
    pub fn validate(&self) -> Result<()> {
        MobilityConfig::new(self.epsilon, self.variant, self.slope)?;
        crate::pdhg::positive("studies.T", self.final_time)?;
        crate::pdhg::positive("studies.penalty_tau", self.penalty_tau)?;
        crate::pdhg::positive("studies.l2_lambda", self.l2_lambda)?;
        crate::pdhg::positive("studies.l2_sigma", self.l2_sigma)?;
        let increasing = |v: &[usize]| v.windows(2).all(|w| w[0] < w[1]);
        for (name, list) in [
            ("studies.space_nx", &self.space_nx),
            ("studies.time_nt", &self.time_nt),
            ("studies.penalty_nx", &self.penalty_nx),
        ] {
            if list.is_empty() || !increasing(list) || list[0] == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    value: list.first().copied().unwrap_or(0) as f64,
                    reason: "must be a nonempty, strictly increasing list of positive integers",
                });
            }
        }
        for n in self.space_nx.iter().chain(&self.penalty_nx).chain([&self.time_nx]) {
            GridSpec::new(*n)?;
        }
        for (name, v) in [
            ("studies.space_nt", self.space_nt),
            ("studies.penalty_nt", self.penalty_nt),
        ] {
            if v == 0 {
                return Err(Error::InvalidParameter {
                    name,
                    value: 0.0,
                    reason: "must be at least 1",
                });
            }
        }
        Ok(())
    }

    fn mobility(&self) -> MobilityConfig {
        MobilityConfig {
            mollifier: crate::mobility::MollifierSpec::new(self.epsilon).expect("validated"),
            variant: self.variant,
            slope: self.slope,
        }
    }

    /// Flow configuration for one study run; only `n_x`, `n_t`, `T` and the
    /// solver settings vary between runs.
    fn flow(&self, pdhg: &PdhgConfig, nx: usize, nt: usize, final_time: f64) -> FlowConfig {
        FlowConfig {
            grid: GridSpec::new(nx).expect("validated"),
            final_time,
            n_t: nt,
            mobility: self.mobility(),
            pdhg: *pdhg,
            initial: self.initial,
            snapshot_stride: nt,
            step_condition: StepConditionPolicy::Report,
            on_nonconvergence: NonConvergencePolicy::Abort,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub param: usize,
    pub value: f64,
    pub variant: String,
    /// Iteration count hit `max_iter`; `value` is a lower bound.
    pub censored: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyResult {
    pub study: String,
    pub rows: Vec<StudyRow>,
    /// Fit of the primary variant, when enough rows are available.
    pub fit: Option<LogLogFit>,
    /// Set when a run failed; `rows` then holds what completed.
    pub failure: Option<String>,
}

impl StudyResult {
    pub fn values(&self, variant: &str) -> Vec<(usize, f64)> {
        self.rows
            .iter()
            .filter(|r| r.variant == variant)
            .map(|r| (r.param, r.value))
            .collect()
    }

    pub fn row(&self, variant: &str, param: usize) -> Option<&StudyRow> {
        self.rows.iter().find(|r| r.variant == variant && r.param == param)
    }
}

pub const ABSOLUTE: &str = "l1";
pub const RELATIVE: &str = "relative-l1";

/// Runs every configuration concurrently; results come back in input order.
fn run_final_profiles(cfgs: &[FlowConfig]) -> Vec<Result<Profile>> {
    cfgs.par_iter()
        .map(|cfg| {
            let run = run_flow(cfg, |_| {})?;
            match run.error {
                Some(e) => Err(e),
                None => Ok(run.trace.final_profile),
            }
        })
        .collect()
}

/// Runs each distinct `key` once and compares the results pairwise (`k` vs `2k`).
fn refinement_study(
    study: &str,
    params: &[usize],
    compare: impl Fn(&Profile, &Profile) -> Result<(Profile, Profile)>,
    flow: impl Fn(usize) -> FlowConfig,
) -> StudyResult {
    let mut keys: Vec<usize> = params.iter().flat_map(|&k| [k, 2 * k]).collect();
    keys.sort_unstable();
    keys.dedup();
    let cfgs: Vec<FlowConfig> = keys.iter().map(|&k| flow(k)).collect();
    let mut failure = None;
    let finals: Vec<Option<Profile>> = keys
        .iter()
        .zip(run_final_profiles(&cfgs))
        .map(|(k, r)| {
            r.map_err(|e| {
                failure.get_or_insert_with(|| format!("{study} at {k}: {e}"));
            })
            .ok()
        })
        .collect();
    let get = |k: usize| finals[keys.binary_search(&k).expect("scheduled")].as_ref();

    let mut rows = Vec::new();
    for &param in params {
        let (Some(coarse), Some(fine)) = (get(param), get(2 * param)) else {
            continue;
        };
        let err = compare(coarse, fine).and_then(|(a, b)| relative_l1_error(&a, &b));
        match err {
            Ok(err) => {
                rows.push(StudyRow {
                    param,
                    value: err.absolute,
                    variant: ABSOLUTE.into(),
                    censored: false,
                });
                if let Some(rel) = err.relative {
                    rows.push(StudyRow {
                        param,
                        value: rel,
                        variant: RELATIVE.into(),
                        censored: false,
                    });
                }
            }
            Err(e) => {
                failure.get_or_insert_with(|| format!("{study} at {param}: {e}"));
            }
        }
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.variant == ABSOLUTE)
        .map(|r| (r.param as f64, r.value))
        .collect();
    StudyResult {
        study: study.into(),
        fit: fit_loglog_slope(&pts).ok(),
        rows,
        failure,
    }
}

/// `‖h(N_x) − h(2N_x)‖₁` on the coarse grid for each `N_x` in the list.
pub fn space_refinement_study(study: &StudyConfig, pdhg: &PdhgConfig) -> Result<StudyResult> {
    study.validate()?;
    pdhg.validate()?;
    Ok(refinement_study(
        "space-refine",
        &study.space_nx,
        |coarse, fine| Ok((coarse.clone(), restrict_fine_to_coarse(fine, coarse.grid())?)),
        |n| study.flow(pdhg, n, study.space_nt, study.final_time),
    ))
}

/// `‖h(N_t) − h(2N_t)‖₁` at fixed `N_x` for each `N_t` in the list.
pub fn time_refinement_study(study: &StudyConfig, pdhg: &PdhgConfig) -> Result<StudyResult> {
    study.validate()?;
    pdhg.validate()?;
    Ok(refinement_study(
        "time-refine",
        &study.time_nt,
        |a, b| Ok((a.clone(), b.clone())),
        |nt| study.flow(pdhg, study.time_nx, nt, study.final_time),
    ))
}

/// Inner iteration counts of a single outer step with each penalty.
///
/// The Ḣ¹ runs use `pdhg` as given; the L² runs swap in the study's
/// `l2_lambda`/`l2_sigma`. Runs that exhaust `max_iter` are kept and flagged.
pub fn penalty_comparison_study(study: &StudyConfig, pdhg: &PdhgConfig) -> Result<StudyResult> {
    study.validate()?;
    pdhg.validate()?;
    let h1 = PdhgConfig {
        penalty: Penalty::H1Dot,
        ..*pdhg
    };
    let l2 = PdhgConfig {
        penalty: Penalty::L2,
        lambda: study.l2_lambda,
        sigma: study.l2_sigma,
        ..*pdhg
    };
    let horizon = study.penalty_tau * study.penalty_nt as f64;
    let jobs: Vec<(usize, PdhgConfig)> = study.penalty_nx.iter().flat_map(|&n| [(n, h1), (n, l2)]).collect();
    let outcomes: Vec<(usize, Penalty, Result<(usize, bool)>)> = jobs
        .par_iter()
        .map(|&(n, p)| {
            let mut cfg = study.flow(&p, n, study.penalty_nt, horizon);
            cfg.on_nonconvergence = NonConvergencePolicy::Continue;
            let out = run_flow(&cfg, |_| {}).and_then(|run| match run.error {
                Some(e) => Err(e),
                None => {
                    let steps = &run.trace.records[1..];
                    let iters = steps.iter().map(|r| r.inner_iters).sum();
                    Ok((iters, steps.iter().any(|r| !r.converged)))
                }
            });
            (n, p.penalty, out)
        })
        .collect();
    let mut rows = Vec::new();
    let mut failure = None;
    for (n, penalty, out) in outcomes {
        match out {
            Ok((iters, censored)) => rows.push(StudyRow {
                param: n,
                value: iters as f64,
                variant: penalty.name().into(),
                censored,
            }),
            Err(e) => {
                failure.get_or_insert_with(|| format!("penalty-compare at nx = {n} ({}): {e}", penalty.name()));
            }
        }
    }
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.variant == Penalty::H1Dot.name() && !r.censored)
        .map(|r| (r.param as f64, r.value))
        .collect();
    Ok(StudyResult {
        study: "penalty-compare".into(),
        fit: fit_loglog_slope(&pts).ok(),
        rows,
        failure,
    })
}
