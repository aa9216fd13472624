//! Primal-dual hybrid gradient iteration for one minimizing-movement step
//!
//! ```text
//! min_h  Σ|(Dh)_j| + (1/2τ) ‖h - hⁿ‖²_{A⁺}
//! ```
//!
//! written as the saddle problem `min_h max_{‖φ‖∞≤1} φᵗDh + (1/2τ)‖h - hⁿ‖²_{A⁺}`.
//! Each iteration takes a proximal primal step (penalized in the `DᵗD`
//! seminorm or in plain `ℓ²`), extrapolates, then clamps the dual variable
//! back into the unit box.
//!
//! # Primal solves
//!
//! The `Ḣ¹`-penalized step is defined by
//! `((τ/λ) A DᵗD + I) h = (τ/λ) A u + hⁿ` with `u = DᵗD h^(m) - λ Dᵗφ^(m)`.
//! When the mobility spans many orders of magnitude this non-symmetric system
//! is hopelessly scaled, so we solve an equivalent one. Writing
//! `d = h - hⁿ`, `v = u - DᵗD hⁿ` and introducing the flux
//! `z = diag(M) D (DᵗD d - v)` gives
//!
//! ```text
//! (diag(1/M) + (τ/λ)(DᵗD)²) z = -D v,     d = -(τ/λ) Dᵗ z,
//! ```
//!
//! whose matrix is symmetric positive definite and is Cholesky-factorized
//! once per outer step. Both `(DᵗD)²` and `DᵗD` only couple nodes an even
//! distance apart, so along the chains `j, j+2, j+4, …` the matrix is a
//! cyclic band and each factorization and solve is linear in `n`. The `ℓ²` step `(A + (λ/τ)I) h = A(h^(m) - λDᵗφ) + (λ/τ)hⁿ`
//! becomes `(diag(1/M) + (τ/λ)DᵗD) z = D w`, `d = (τ/λ)Dᵗz` with
//! `w = h^(m) - hⁿ - λDᵗφ`. Because `d` is always in the range of `Dᵗ`, the
//! mean (and for even grids the alternating component) of `hⁿ` is carried
//! through exactly.

use serde::{Deserialize, Serialize};

use crate::banded::CyclicBandCholesky;
use crate::error::{Error, Result};
use crate::grid::{self, Field, GridSpec, Profile};
use crate::variational::{objective_phi, WeightedLaplacian};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Penalty {
    /// Proximal term `(1/2λ)‖h - h^(m)‖²` measured with `DᵗD`.
    #[serde(rename = "h1-dot")]
    H1Dot,
    /// Proximal term measured in the plain Euclidean norm.
    L2,
}

impl Penalty {
    pub fn name(&self) -> &'static str {
        match self {
            Penalty::H1Dot => "h1-dot",
            Penalty::L2 => "l2",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PdhgConfig {
    pub lambda: f64,
    pub sigma: f64,
    pub delta: f64,
    pub max_iter: usize,
    pub penalty: Penalty,
    pub ergodic_tracking: bool,
}

impl Default for PdhgConfig {
    fn default() -> Self {
        Self {
            lambda: 500.0,
            sigma: 5e-4,
            delta: 5e-6,
            max_iter: 200_000,
            penalty: Penalty::H1Dot,
            ergodic_tracking: false,
        }
    }
}

impl PdhgConfig {
    pub fn validate(&self) -> Result<()> {
        positive("pdhg.lambda", self.lambda)?;
        positive("pdhg.sigma", self.sigma)?;
        positive("pdhg.delta", self.delta)?;
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "pdhg.max_iter",
                value: 0.0,
                reason: "must be at least 1",
            });
        }
        Ok(())
    }
}

pub(crate) fn positive(name: &'static str, value: f64) -> Result<()> {
    if value > 0.0 && value.is_finite() {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

/// Factorized primal update for one outer step.
#[derive(Debug, Clone)]
pub struct PrimalSolver {
    grid: GridSpec,
    penalty: Penalty,
    ratio: f64,
    lambda: f64,
    chains: Vec<(Vec<usize>, CyclicBandCholesky)>,
}

/// Node sequences `j, j+2, j+4, …`: two chains for even `n`, one for odd.
fn stride_two_chains(n: usize) -> Vec<Vec<usize>> {
    if n % 2 == 0 {
        vec![(0..n).step_by(2).collect(), (1..n).step_by(2).collect()]
    } else {
        vec![(0..n).map(|k| 2 * k % n).collect()]
    }
}

impl PrimalSolver {
    pub fn new(a: &WeightedLaplacian, tau: f64, lambda: f64, penalty: Penalty) -> Result<Self> {
        positive("tau", tau)?;
        positive("pdhg.lambda", lambda)?;
        let grid = a.mobility().grid();
        let dx = grid.dx();
        let ratio = tau / lambda;
        // Circulant entries along a chain at offsets 0, ±1, ±2.
        let stencil: Vec<f64> = match penalty {
            Penalty::H1Dot => [6.0, -4.0, 1.0]
                .iter()
                .map(|c| ratio * c / (16.0 * dx.powi(4)))
                .collect(),
            Penalty::L2 => [2.0, -1.0].iter().map(|c| ratio * c / (4.0 * dx * dx)).collect(),
        };
        let m = a.mobility().values();
        let chains = stride_two_chains(grid.len())
            .into_iter()
            .map(|nodes| {
                let diag: Vec<f64> = nodes.iter().map(|&j| 1.0 / m[j]).collect();
                CyclicBandCholesky::new(&diag, &stencil)
                    .map(|f| (nodes, f))
                    .ok_or(Error::Factorization { what: penalty.name() })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            grid,
            penalty,
            ratio,
            lambda,
            chains,
        })
    }

    pub fn penalty(&self) -> Penalty {
        self.penalty
    }

    /// `h^(m+1)` from `h^(m)`, `φ^(m)` and the outer iterate `hⁿ`.
    pub fn step(&self, h_m: &Field, phi: &Field, h_n: &Field) -> Result<Field> {
        h_m.check_same_grid(phi)?;
        h_m.check_same_grid(h_n)?;
        if h_m.grid() != self.grid {
            return Err(Error::GridMismatch {
                left: h_m.len(),
                right: self.grid.len(),
            });
        }
        let mut work = Workspace::new(self.grid.len());
        let mut out = vec![0.0; self.grid.len()];
        self.step_into(h_m.values(), phi.values(), h_n.values(), &mut out, &mut work);
        Ok(Field::from_raw(self.grid, out))
    }

    fn solve_in_place(&self, rhs: &mut [f64], buf: &mut Vec<f64>) {
        for (nodes, factor) in &self.chains {
            buf.clear();
            buf.extend(nodes.iter().map(|&j| rhs[j]));
            factor.solve_in_place(buf);
            for (&j, &v) in nodes.iter().zip(buf.iter()) {
                rhs[j] = v;
            }
        }
    }

    fn step_into(&self, h_m: &[f64], phi: &[f64], h_n: &[f64], out: &mut [f64], work: &mut Workspace) {
        let dx = self.grid.dx();
        let Workspace { a, b, c, rhs, buf } = work;
        for ((d, x), y) in c.iter_mut().zip(h_m).zip(h_n) {
            *d = x - y;
        }
        grid::centered_adjoint_into(phi, b, dx);
        match self.penalty {
            // a <- v = DᵗD(h^(m) - hⁿ) - λDᵗφ ; rhs <- -Dv
            Penalty::H1Dot => grid::wide_laplacian_into(c, a, dx),
            // a <- w = h^(m) - hⁿ - λDᵗφ ; rhs <- Dw
            Penalty::L2 => a.copy_from_slice(c),
        }
        for (v, t) in a.iter_mut().zip(b.iter()) {
            *v -= self.lambda * t;
        }
        grid::centered_into(a, rhs, dx);
        if self.penalty == Penalty::H1Dot {
            rhs.iter_mut().for_each(|r| *r = -*r);
        }
        self.solve_in_place(rhs, buf);
        grid::centered_adjoint_into(rhs, b, dx);
        let scale = match self.penalty {
            Penalty::H1Dot => -self.ratio,
            Penalty::L2 => self.ratio,
        };
        for ((o, hn), d) in out.iter_mut().zip(h_n).zip(b.iter()) {
            *o = hn + scale * d;
        }
    }
}

#[derive(Debug)]
struct Workspace {
    a: Vec<f64>,
    b: Vec<f64>,
    c: Vec<f64>,
    rhs: Vec<f64>,
    buf: Vec<f64>,
}

impl Workspace {
    fn new(n: usize) -> Self {
        Self {
            a: vec![0.0; n],
            b: vec![0.0; n],
            c: vec![0.0; n],
            rhs: vec![0.0; n],
            buf: Vec::with_capacity(n),
        }
    }
}

/// One `Ḣ¹`-penalized primal step, factorizing from scratch.
pub fn primal_step_h1(
    h_m: &Field,
    phi: &Field,
    h_n: &Profile,
    a: &WeightedLaplacian,
    tau: f64,
    lambda: f64,
) -> Result<Field> {
    PrimalSolver::new(a, tau, lambda, Penalty::H1Dot)?.step(h_m, phi, h_n)
}

/// One `ℓ²`-penalized primal step, factorizing from scratch.
pub fn primal_step_l2(
    h_m: &Field,
    phi: &Field,
    h_n: &Profile,
    a: &WeightedLaplacian,
    tau: f64,
    lambda: f64,
) -> Result<Field> {
    PrimalSolver::new(a, tau, lambda, Penalty::L2)?.step(h_m, phi, h_n)
}

/// `2·h_new - h_old`.
pub fn extrapolate(h_new: &Field, h_old: &Field) -> Result<Field> {
    h_new.zip_with(h_old, |a, b| 2.0 * a - b)
}

/// Clamp `φ + σ D h̄` componentwise into `[-1, 1]`.
pub fn dual_step(phi: &Field, h_bar: &Field, sigma: f64) -> Result<Field> {
    phi.check_same_grid(h_bar)?;
    let mut out = vec![0.0; phi.len()];
    dual_step_into(phi.values(), h_bar.values(), sigma, phi.grid().dx(), &mut out);
    Ok(Field::from_raw(phi.grid(), out))
}

#[inline]
fn dual_step_into(phi: &[f64], h_bar: &[f64], sigma: f64, dx: f64, out: &mut [f64]) {
    grid::centered_into(h_bar, out, dx);
    for (o, p) in out.iter_mut().zip(phi) {
        *o = (p + sigma * *o).clamp(-1.0, 1.0);
    }
}

/// Projection onto the Euclidean unit ball, `u / max(1, ‖u‖₂)`.
///
/// Dual prox for the isotropic (`ℓ²`-gradient) variant of the energy.
pub fn dual_prox_l2ball(u: &Field) -> Field {
    let norm = grid::l2_norm(u);
    if norm <= 1.0 {
        u.clone()
    } else {
        u.scale(1.0 / norm)
    }
}

/// Iterates of the inner loop.
#[derive(Debug, Clone)]
pub struct PdhgState {
    pub h: Field,
    pub phi: Field,
    pub h_bar: Field,
    pub m: usize,
    h_sum: Option<Vec<f64>>,
    phi_sum: Option<Vec<f64>>,
}

impl PdhgState {
    /// `h^(0) = hⁿ`, `φ^(0) = 0`.
    pub fn initial(h_n: &Profile, ergodic: bool) -> Self {
        let n = h_n.len();
        Self {
            h: h_n.clone(),
            phi: Field::zeros(h_n.grid()),
            h_bar: h_n.clone(),
            m: 0,
            h_sum: ergodic.then(|| vec![0.0; n]),
            phi_sum: ergodic.then(|| vec![0.0; n]),
        }
    }

    /// Running averages `(1/m) Σ_{k=1}^m h^(k)` and the same for `φ`.
    pub fn ergodic(&self) -> Option<ErgodicAverages> {
        let (hs, ps) = (self.h_sum.as_ref()?, self.phi_sum.as_ref()?);
        let inv = 1.0 / self.m.max(1) as f64;
        let grid = self.h.grid();
        Some(ErgodicAverages {
            h: Field::from_raw(grid, hs.iter().map(|v| v * inv).collect()),
            phi: Field::from_raw(grid, ps.iter().map(|v| v * inv).collect()),
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ErgodicAverages {
    pub h: Field,
    pub phi: Field,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PdhgReport {
    pub iterations: usize,
    /// `sqrt(‖Δh‖² + ‖Δφ‖²)` of the last iteration.
    pub final_update: f64,
    pub converged: bool,
    /// `Φ(h^{n+1})` with the matrix-level TV term.
    pub objective: f64,
    /// Largest `‖φ^(m)‖∞` seen over all iterates.
    pub max_dual_sup: f64,
}

#[derive(Debug, Clone)]
pub struct InnerSolution {
    /// `h^{n+1} = h̄^(m+1)`.
    pub profile: Profile,
    pub report: PdhgReport,
    pub ergodic: Option<ErgodicAverages>,
}

pub fn solve_inner(h_n: &Profile, a: &WeightedLaplacian, tau: f64, cfg: &PdhgConfig) -> Result<InnerSolution> {
    cfg.validate()?;
    let solver = PrimalSolver::new(a, tau, cfg.lambda, cfg.penalty)?;
    solve_inner_with(&solver, h_n, a, tau, cfg)
}

/// Runs the iteration with an already factorized primal solver.
pub fn solve_inner_with(
    solver: &PrimalSolver,
    h_n: &Profile,
    a: &WeightedLaplacian,
    tau: f64,
    cfg: &PdhgConfig,
) -> Result<InnerSolution> {
    h_n.check_same_grid(a.mobility().field())?;
    let n = h_n.len();
    let dx = h_n.grid().dx();
    let mut state = PdhgState::initial(h_n, cfg.ergodic_tracking);
    let mut work = Workspace::new(n);
    let mut h_next = vec![0.0; n];
    let mut phi_next = vec![0.0; n];
    let mut update = f64::INFINITY;
    let mut converged = false;
    let mut max_dual_sup: f64 = 0.0;

    while state.m < cfg.max_iter {
        solver.step_into(
            state.h.values(),
            state.phi.values(),
            h_n.values(),
            &mut h_next,
            &mut work,
        );
        {
            let h_bar = state.h_bar.values_mut();
            for ((b, new), old) in h_bar.iter_mut().zip(&h_next).zip(state.h.values()) {
                *b = 2.0 * new - old;
            }
        }
        dual_step_into(state.phi.values(), state.h_bar.values(), cfg.sigma, dx, &mut phi_next);

        let mut sq = 0.0;
        for (new, old) in h_next.iter().zip(state.h.values()) {
            sq += (new - old) * (new - old);
        }
        for (new, old) in phi_next.iter().zip(state.phi.values()) {
            sq += (new - old) * (new - old);
        }
        update = sq.sqrt();

        state.h.values_mut().copy_from_slice(&h_next);
        state.phi.values_mut().copy_from_slice(&phi_next);
        state.m += 1;
        max_dual_sup = max_dual_sup.max(grid::linf_norm(&state.phi));
        if let (Some(hs), Some(ps)) = (state.h_sum.as_mut(), state.phi_sum.as_mut()) {
            hs.iter_mut().zip(&h_next).for_each(|(s, v)| *s += v);
            ps.iter_mut().zip(&phi_next).for_each(|(s, v)| *s += v);
        }
        if !update.is_finite() {
            return Err(Error::NonFinite {
                index: state.m,
                value: update,
            });
        }
        if update < cfg.delta {
            converged = true;
            break;
        }
    }

    let profile = state.h_bar.clone();
    let objective = objective_phi(&profile, h_n, a, tau)?;
    Ok(InnerSolution {
        report: PdhgReport {
            iterations: state.m,
            final_update: update,
            converged,
            objective,
            max_dual_sup,
        },
        ergodic: state.ergodic(),
        profile,
    })
}
