//! Reference computations shared by the integration and acceptance tests.
//! They build every operator from scratch as dense matrices and use
//! nothing from the library beyond its data types.

#![allow(dead_code)]

use std::f64::consts::TAU;

use crystal_surface::grid::{Field, GridSpec};
use crystal_surface::mobility::MobilityField;
use crystal_surface::pdhg::Penalty;
use nalgebra::{DMatrix, DVector, SymmetricEigen};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Centered difference on `n` periodic nodes over `[0, 2π)`.
pub fn d_matrix(n: usize) -> DMatrix<f64> {
    let dx = TAU / n as f64;
    DMatrix::from_fn(n, n, |i, j| {
        if j == (i + 1) % n {
            0.5 / dx
        } else if j == (i + n - 1) % n {
            -0.5 / dx
        } else {
            0.0
        }
    })
}

pub fn weighted_laplacian(m: &[f64]) -> DMatrix<f64> {
    let d = d_matrix(m.len());
    d.transpose() * DMatrix::from_diagonal(&DVector::from_column_slice(m)) * d
}

pub fn random_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

pub fn field(values: &[f64]) -> Field {
    Field::new(GridSpec::new(values.len()).unwrap(), values.to_vec()).unwrap()
}

pub fn mobility(values: &[f64]) -> MobilityField {
    MobilityField::new(field(values)).unwrap()
}

/// Maximizer of `ψᵗ D h̄ − ‖ψ − φ‖² / 2σ` over the box `|ψ_i| ≤ 1`.
///
/// The objective separates by coordinate; each one-dimensional concave
/// problem is solved by comparing the objective at both box ends and at the
/// interior stationary point when it is feasible.
pub fn dual_oracle(phi: &[f64], h_bar: &[f64], sigma: f64) -> Vec<f64> {
    let n = phi.len();
    let g = d_matrix(n) * DVector::from_column_slice(h_bar);
    (0..n)
        .map(|i| {
            let f = |p: f64| p * g[i] - (p - phi[i]).powi(2) / (2.0 * sigma);
            let mut candidates = vec![-1.0, 1.0];
            let stationary = phi[i] + sigma * g[i];
            if stationary.abs() <= 1.0 {
                candidates.push(stationary);
            }
            candidates
                .into_iter()
                .max_by(|a, b| f(*a).partial_cmp(&f(*b)).unwrap())
                .unwrap()
        })
        .collect()
}

/// Minimizer of
/// `(1/2τ)(h−hⁿ)ᵗA⁺(h−hⁿ) + φᵗDh + (1/2λ)‖h − h_m‖²_P` over `h − hⁿ ∈ range(A)`,
/// with `P = DᵗD` (Ḣ¹ penalty) or `P = I` (ℓ² penalty).
///
/// `range(A)` comes from a symmetric eigendecomposition and `A⁺` from an SVD,
/// so this shares no linear algebra with the library's primal step.
pub fn kkt_oracle(
    penalty: Penalty,
    m: &[f64],
    h_m: &[f64],
    phi: &[f64],
    h_n: &[f64],
    tau: f64,
    lambda: f64,
) -> Vec<f64> {
    let n = m.len();
    let a = weighted_laplacian(m);
    let d = d_matrix(n);
    let eig = SymmetricEigen::new(a.clone());
    let tol = 1e-10 * eig.eigenvalues.amax();
    let cols: Vec<usize> = (0..n).filter(|&k| eig.eigenvalues[k] > tol).collect();
    let u = DMatrix::from_fn(n, cols.len(), |i, k| eig.eigenvectors[(i, cols[k])]);
    let a_pinv = a.pseudo_inverse(tol).unwrap();
    let p = match penalty {
        Penalty::H1Dot => d.transpose() * &d,
        Penalty::L2 => DMatrix::identity(n, n),
    };
    let hm = DVector::from_column_slice(h_m);
    let hn = DVector::from_column_slice(h_n);
    let ph = DVector::from_column_slice(phi);
    let lhs = u.transpose() * (&a_pinv / tau + &p / lambda) * &u;
    let rhs = u.transpose() * (&p * (&hm - &hn) / lambda - d.transpose() * ph);
    let y = lhs.lu().solve(&rhs).unwrap();
    (hn + u * y).iter().copied().collect()
}

pub fn rel_l2(a: &[f64], b: &[f64]) -> f64 {
    let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let den: f64 = b.iter().map(|y| y * y).sum::<f64>().sqrt();
    num / den
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

/// One random primal-step instance.
pub struct PrimalInstance {
    pub m: Vec<f64>,
    pub h_m: Vec<f64>,
    pub phi: Vec<f64>,
    pub h_n: Vec<f64>,
    pub tau: f64,
    pub lambda: f64,
}

impl PrimalInstance {
    pub fn random(rng: &mut ChaCha8Rng, n: usize) -> Self {
        Self {
            m: random_vec(rng, n, 0.2, 5.0),
            h_m: random_vec(rng, n, -1.0, 1.0),
            phi: random_vec(rng, n, -1.0, 1.0),
            h_n: random_vec(rng, n, -1.0, 1.0),
            tau: 10f64.powf(rng.random_range(-3.0..-1.0)),
            lambda: 10f64.powf(rng.random_range(-1.0..1.0)),
        }
    }

    pub fn oracle(&self, penalty: Penalty) -> Vec<f64> {
        kkt_oracle(penalty, &self.m, &self.h_m, &self.phi, &self.h_n, self.tau, self.lambda)
    }
}
