//! Outer semi-implicit loop: freeze the mobility at `hⁿ`, solve the inner
//! saddle problem for `h^{n+1}`, record diagnostics, repeat `n_t` times.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::experiments::{initial_profile, InitialKind};
use crate::grid::{self, Field, GridSpec, Profile};
use crate::mobility::{MobilityConfig, MobilityEvaluator, MobilityField};
use crate::pdhg::{self, PdhgConfig, PdhgReport, PrimalSolver};
use crate::variational::{assemble_weighted_laplacian, tv_energy, tv_sum, WeightedLaplacian};

/// What to do when `(τ/λ)‖A DᵗD‖ ≥ 1` at some step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum StepConditionPolicy {
    /// Record the ratio and carry on. The primal system stays invertible
    /// regardless, since `A DᵗD` is similar to a positive semidefinite matrix.
    #[default]
    Report,
    Enforce,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NonConvergencePolicy {
    /// Stop and hand back the trace so far.
    #[default]
    Abort,
    /// Keep going with the unconverged iterate; the record is flagged.
    Continue,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FlowConfig {
    pub grid: GridSpec,
    pub final_time: f64,
    pub n_t: usize,
    pub mobility: MobilityConfig,
    pub pdhg: PdhgConfig,
    pub initial: InitialKind,
    pub snapshot_stride: usize,
    pub step_condition: StepConditionPolicy,
    pub on_nonconvergence: NonConvergencePolicy,
}

impl FlowConfig {
    /// Sine data at `n_x = 200`, `ε = 0.04`, `T = 10⁻²`, ten steps.
    pub fn reference_default() -> Self {
        Self {
            grid: GridSpec::new(200).unwrap(),
            final_time: 1e-2,
            n_t: 10,
            mobility: MobilityConfig::exact(0.04).unwrap(),
            pdhg: PdhgConfig::default(),
            initial: InitialKind::Sine,
            snapshot_stride: 1,
            step_condition: StepConditionPolicy::Report,
            on_nonconvergence: NonConvergencePolicy::Abort,
        }
    }

    pub fn tau(&self) -> f64 {
        self.final_time / self.n_t as f64
    }

    /// Time of outer step `n`; exactly `T` at `n = n_t`.
    pub fn time(&self, n: usize) -> f64 {
        (n as f64 / self.n_t as f64) * self.final_time
    }

    pub fn validate(&self) -> Result<()> {
        pdhg::positive("T", self.final_time)?;
        if self.n_t == 0 {
            return Err(Error::InvalidParameter {
                name: "nt",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        if self.snapshot_stride == 0 {
            return Err(Error::InvalidParameter {
                name: "output.snapshot_stride",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        self.mobility.validate()?;
        self.pdhg.validate()
    }
}

/// Outcome of the `(τ/λ)‖A DᵗD‖₂ < 1` check.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepCondition {
    pub estimate: f64,
    pub ratio: f64,
    pub power_converged: bool,
    pub power_iterations: usize,
    pub passes: bool,
}

pub const POWER_MAX_ITER: usize = 50;
pub const POWER_RTOL: f64 = 1e-6;

/// Power-iteration estimate of `‖A DᵗD‖₂`.
///
/// Returns `(estimate, converged, iterations)`. The start vector is a fixed
/// pseudo-random draw, so results are reproducible.
pub fn estimate_operator_norm(a: &WeightedLaplacian, max_iter: usize, rtol: f64) -> (f64, bool, usize) {
    let n = a.len();
    let dx = a.mobility().grid().dx();
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut x: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
    normalize(&mut x);
    let mut y = vec![0.0; n];
    let mut t = vec![0.0; n];
    let mut estimate = 0.0;
    for it in 1..=max_iter {
        // y = A DᵗD x
        grid::wide_laplacian_into(&x, &mut t, dx);
        a.apply(&t, &mut y);
        let next = normalize(&mut y);
        // x = (A DᵗD)ᵗ y = DᵗD A y
        a.apply(&y, &mut t);
        grid::wide_laplacian_into(&t, &mut x, dx);
        normalize(&mut x);
        let change = (next - estimate).abs();
        estimate = next;
        if it > 1 && change <= rtol * estimate {
            return (estimate, true, it);
        }
    }
    (estimate, false, max_iter)
}

fn normalize(v: &mut [f64]) -> f64 {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
    norm
}

/// Checks `(τ/λ)‖A DᵗD‖₂ < 1` for the given Laplacian.
///
/// An unconverged power iteration only passes with a 2× margin.
pub fn validate_config(cfg: &FlowConfig, a: &WeightedLaplacian) -> StepCondition {
    step_condition(a, cfg.tau(), cfg.pdhg.lambda)
}

pub fn step_condition(a: &WeightedLaplacian, tau: f64, lambda: f64) -> StepCondition {
    let (estimate, converged, iterations) = estimate_operator_norm(a, POWER_MAX_ITER, POWER_RTOL);
    let ratio = tau / lambda * estimate;
    StepCondition {
        estimate,
        ratio,
        power_converged: converged,
        power_iterations: iterations,
        passes: if converged { ratio < 1.0 } else { ratio < 0.5 },
    }
}

/// Diagnostics for the state `hⁿ` and the inner solve that produced it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StepRecord {
    pub n: usize,
    pub t: f64,
    /// `dx·Σ|(Dhⁿ)_j|`.
    pub tv_energy: f64,
    pub mob_l1: f64,
    pub mob_inv_l1: f64,
    pub mean: f64,
    pub inner_iters: usize,
    pub converged: bool,
    /// `Φ_{n-1}(h^{n-1})`, i.e. `Σ|(Dh^{n-1})_j|`. For `n = 0`, `Σ|(Dh⁰)_j|`.
    pub phi_before: f64,
    /// `Φ_{n-1}(hⁿ)`.
    pub phi_after: f64,
    pub final_update: f64,
    pub max_dual_sup: f64,
    /// `(τ/λ)‖A DᵗD‖` for the Laplacian used to reach this state.
    pub step_ratio: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub n: usize,
    pub t: f64,
    pub h: Profile,
}

#[derive(Debug, Clone)]
pub struct FlowTrace {
    pub records: Vec<StepRecord>,
    pub snapshots: Vec<Snapshot>,
    pub final_profile: Profile,
}

impl FlowTrace {
    pub fn is_complete(&self, cfg: &FlowConfig) -> bool {
        self.records.len() == cfg.n_t + 1
    }
}

/// A finished or aborted run. `error` is set when the run stopped early.
#[derive(Debug)]
pub struct FlowRun {
    pub trace: FlowTrace,
    pub error: Option<Error>,
}

/// Result of one outer step.
#[derive(Debug, Clone)]
pub struct OuterStep {
    pub profile: Profile,
    pub mobility: MobilityField,
    pub report: PdhgReport,
    pub condition: StepCondition,
    pub phi_before: f64,
}

/// Outer-step machinery with the mollifier kernel cached for the run.
#[derive(Debug, Clone)]
pub struct Stepper {
    cfg: FlowConfig,
    mobility: MobilityEvaluator,
}

impl Stepper {
    pub fn new(cfg: &FlowConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            mobility: MobilityEvaluator::new(cfg.mobility, cfg.grid)?,
            cfg: cfg.clone(),
        })
    }

    pub fn mobility(&self, h: &Profile) -> Result<MobilityField> {
        self.mobility.evaluate(h)
    }

    /// `M = M(hⁿ)`, `A = Dᵗ diag(M) D`, then one inner solve.
    pub fn step(&self, h_n: &Profile, n: usize) -> Result<OuterStep> {
        let mobility = self.mobility(h_n).map_err(|e| e.at_step(n))?;
        let a = assemble_weighted_laplacian(&mobility);
        let tau = self.cfg.tau();
        let condition = step_condition(&a, tau, self.cfg.pdhg.lambda);
        if self.cfg.step_condition == StepConditionPolicy::Enforce && !condition.passes {
            return Err(Error::StepCondition {
                step: n,
                ratio: condition.ratio,
                estimate: condition.estimate,
            });
        }
        let solver =
            PrimalSolver::new(&a, tau, self.cfg.pdhg.lambda, self.cfg.pdhg.penalty).map_err(|e| e.at_step(n))?;
        let sol = pdhg::solve_inner_with(&solver, h_n, &a, tau, &self.cfg.pdhg).map_err(|e| e.at_step(n))?;
        Ok(OuterStep {
            profile: sol.profile,
            mobility,
            report: sol.report,
            condition,
            phi_before: tv_sum(h_n),
        })
    }
}

pub fn step_outer(h_n: &Profile, cfg: &FlowConfig) -> Result<OuterStep> {
    Stepper::new(cfg)?.step(h_n, 0)
}

pub fn evolve(cfg: &FlowConfig) -> Result<FlowTrace> {
    let run = run_flow(cfg, |_| {})?;
    match run.error {
        Some(e) => Err(e),
        None => Ok(run.trace),
    }
}

/// Runs the flow, reporting each record to `observer` as it is produced.
///
/// Configuration problems are returned as `Err`; failures during the run
/// come back inside [`FlowRun`] together with the partial trace.
pub fn run_flow(cfg: &FlowConfig, mut observer: impl FnMut(&StepRecord)) -> Result<FlowRun> {
    let stepper = Stepper::new(cfg)?;
    let h0 = initial_profile(cfg.initial, cfg.grid);
    run_from(&stepper, cfg, h0, &mut observer)
}

fn run_from(
    stepper: &Stepper,
    cfg: &FlowConfig,
    h0: Profile,
    observer: &mut dyn FnMut(&StepRecord),
) -> Result<FlowRun> {
    let mut records = Vec::with_capacity(cfg.n_t + 1);
    let mut snapshots = Vec::new();
    let mut h = h0;

    let m0 = match stepper.mobility(&h) {
        Ok(m) => m,
        Err(e) => {
            return Ok(FlowRun {
                trace: FlowTrace {
                    records,
                    snapshots,
                    final_profile: h,
                },
                error: Some(e.at_step(0)),
            })
        }
    };
    let tv0 = tv_sum(&h);
    let first = StepRecord {
        n: 0,
        t: 0.0,
        tv_energy: tv_energy(&h),
        mob_l1: m0.l1_norm(),
        mob_inv_l1: m0.reciprocal().l1_norm(),
        mean: grid::mean(&h),
        inner_iters: 0,
        converged: true,
        phi_before: tv0,
        phi_after: tv0,
        final_update: 0.0,
        max_dual_sup: 0.0,
        step_ratio: 0.0,
    };
    observer(&first);
    records.push(first);
    snapshots.push(Snapshot {
        n: 0,
        t: 0.0,
        h: h.clone(),
    });

    let mut error = None;
    for n in 1..=cfg.n_t {
        let step = match stepper.step(&h, n - 1) {
            Ok(s) => s,
            Err(e) => {
                error = Some(e);
                break;
            }
        };
        h = step.profile;
        let t = cfg.time(n);
        let m = match stepper.mobility(&h) {
            Ok(m) => m,
            Err(e) => {
                error = Some(e.at_step(n));
                break;
            }
        };
        let rec = StepRecord {
            n,
            t,
            tv_energy: tv_energy(&h),
            mob_l1: m.l1_norm(),
            mob_inv_l1: m.reciprocal().l1_norm(),
            mean: grid::mean(&h),
            inner_iters: step.report.iterations,
            converged: step.report.converged,
            phi_before: step.phi_before,
            phi_after: step.report.objective,
            final_update: step.report.final_update,
            max_dual_sup: step.report.max_dual_sup,
            step_ratio: step.condition.ratio,
        };
        observer(&rec);
        records.push(rec);
        if n % cfg.snapshot_stride == 0 || n == cfg.n_t {
            snapshots.push(Snapshot { n, t, h: h.clone() });
        }
        if !step.report.converged && cfg.on_nonconvergence == NonConvergencePolicy::Abort {
            if n < cfg.n_t || snapshots.last().map(|s| s.n) != Some(n) {
                snapshots.push(Snapshot { n, t, h: h.clone() });
            }
            error = Some(Error::NotConverged {
                step: n - 1,
                iterations: step.report.iterations,
                update: step.report.final_update,
            });
            break;
        }
    }
    Ok(FlowRun {
        trace: FlowTrace {
            records,
            snapshots,
            final_profile: h,
        },
        error,
    })
}

/// Runs the flow from an explicit starting profile instead of the catalog.
pub fn run_flow_from(cfg: &FlowConfig, h0: Profile, mut observer: impl FnMut(&StepRecord)) -> Result<FlowRun> {
    let stepper = Stepper::new(cfg)?;
    h0.check_same_grid(&Field::zeros(cfg.grid))?;
    run_from(&stepper, cfg, h0, &mut observer)
}
