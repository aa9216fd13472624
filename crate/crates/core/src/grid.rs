//! Periodic 1D grid on `[0, 2π)` and the finite-difference machinery built on it.
//!
//! Node `j` (0-based here) sits at `x_j = j·dx` with `dx = 2π/n`. All index
//! arithmetic wraps modulo `n`.

use std::f64::consts::TAU;

use nalgebra::DMatrix;
use rustfft::{num_complex::Complex, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "usize", into = "usize")]
pub struct GridSpec {
    n: usize,
}

impl GridSpec {
    pub const MIN_NODES: usize = 4;

    pub fn new(n: usize) -> Result<Self> {
        if n < Self::MIN_NODES {
            return Err(Error::GridTooSmall(n));
        }
        Ok(Self { n })
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.n
    }

    #[inline]
    pub fn dx(&self) -> f64 {
        TAU / self.n as f64
    }

    #[inline]
    pub fn x(&self, j: usize) -> f64 {
        j as f64 * self.dx()
    }

    pub fn nodes(&self) -> Vec<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Node coordinate mapped into `[-π, π)`.
    pub fn signed_x(&self, j: usize) -> f64 {
        if 2 * j >= self.n {
            self.x(j) - TAU
        } else {
            self.x(j)
        }
    }
}

impl TryFrom<usize> for GridSpec {
    type Error = Error;
    fn try_from(n: usize) -> Result<Self> {
        GridSpec::new(n)
    }
}

impl From<GridSpec> for usize {
    fn from(g: GridSpec) -> usize {
        g.n
    }
}

/// Nodal values on a [`GridSpec`]. Always finite and of the grid's length.
#[derive(Debug, Clone, PartialEq)]
pub struct Field {
    grid: GridSpec,
    values: Vec<f64>,
}

/// A height profile. Same representation as any other field.
pub type Profile = Field;

impl Field {
    pub fn new(grid: GridSpec, values: Vec<f64>) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::LengthMismatch {
                len: values.len(),
                n: grid.len(),
            });
        }
        if let Some((index, &value)) = values.iter().enumerate().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self { grid, values })
    }

    /// Construction from values the caller has already checked.
    pub(crate) fn from_raw(grid: GridSpec, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), grid.len());
        Self { grid, values }
    }

    pub fn zeros(grid: GridSpec) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: GridSpec, c: f64) -> Self {
        Self::from_raw(grid, vec![c; grid.len()])
    }

    pub fn from_fn(grid: GridSpec, f: impl Fn(f64) -> f64) -> Result<Self> {
        Self::new(grid, (0..grid.len()).map(|j| f(grid.x(j))).collect())
    }

    #[inline]
    pub fn grid(&self) -> GridSpec {
        self.grid
    }

    #[inline]
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub(crate) fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn check_same_grid(&self, other: &Field) -> Result<()> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch {
                left: self.grid.len(),
                right: other.grid.len(),
            });
        }
        Ok(())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Field {
        Field::from_raw(self.grid, self.values.iter().map(|&v| f(v)).collect())
    }

    pub fn zip_with(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Result<Field> {
        self.check_same_grid(other)?;
        Ok(Field::from_raw(
            self.grid,
            self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        ))
    }

    pub fn sub(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a - b)
    }

    pub fn add(&self, other: &Field) -> Result<Field> {
        self.zip_with(other, |a, b| a + b)
    }

    pub fn scale(&self, c: f64) -> Field {
        self.map(|v| c * v)
    }

    /// Subtracts the discrete mean.
    pub fn mean_free(&self) -> Field {
        let m = mean(self);
        self.map(|v| v - m)
    }

    /// Cyclic shift: `out_j = self_{j-k}`.
    pub fn shifted(&self, k: usize) -> Field {
        let n = self.len();
        Field::from_raw(self.grid, (0..n).map(|j| self.values[(j + n - k % n) % n]).collect())
    }
}

// Slice kernels used by the inner solver. All assume equal lengths.

#[inline]
pub(crate) fn centered_into(f: &[f64], out: &mut [f64], dx: f64) {
    let n = f.len();
    let c = 0.5 / dx;
    out[0] = c * (f[1] - f[n - 1]);
    for j in 1..n - 1 {
        out[j] = c * (f[j + 1] - f[j - 1]);
    }
    out[n - 1] = c * (f[0] - f[n - 2]);
}

/// `Dᵗ` for the centered stencil, i.e. `-D`.
#[inline]
pub(crate) fn centered_adjoint_into(f: &[f64], out: &mut [f64], dx: f64) {
    let n = f.len();
    let c = 0.5 / dx;
    out[0] = c * (f[n - 1] - f[1]);
    for j in 1..n - 1 {
        out[j] = c * (f[j - 1] - f[j + 1]);
    }
    out[n - 1] = c * (f[n - 2] - f[0]);
}

/// `DᵗD`, the wide-stencil periodic Laplacian `(-f_{j+2} + 2f_j - f_{j-2}) / (4dx²)`.
#[inline]
pub(crate) fn wide_laplacian_into(f: &[f64], out: &mut [f64], dx: f64) {
    let n = f.len();
    let c = 0.25 / (dx * dx);
    for j in 0..n {
        let p = f[(j + 2) % n];
        let m = f[(j + n - 2) % n];
        out[j] = c * (2.0 * f[j] - p - m);
    }
}

fn apply(f: &Field, kernel: impl Fn(&[f64], &mut [f64], f64)) -> Field {
    let mut out = vec![0.0; f.len()];
    kernel(f.values(), &mut out, f.grid().dx());
    Field::from_raw(f.grid(), out)
}

/// `(Df)_j = (f_{j+1} - f_{j-1}) / (2dx)`.
pub fn centered_difference(f: &Field) -> Field {
    apply(f, centered_into)
}

/// Transpose of the centered difference matrix.
pub fn centered_difference_adjoint(f: &Field) -> Field {
    apply(f, centered_adjoint_into)
}

pub fn wide_laplacian(f: &Field) -> Field {
    apply(f, wide_laplacian_into)
}

/// `(D₊f)_j = (f_{j+1} - f_j) / dx`.
pub fn forward_difference(f: &Field) -> Field {
    let n = f.len();
    let dx = f.grid().dx();
    let v = f.values();
    Field::from_raw(f.grid(), (0..n).map(|j| (v[(j + 1) % n] - v[j]) / dx).collect())
}

/// `(D₋f)_j = (f_j - f_{j-1}) / dx`.
pub fn backward_difference(f: &Field) -> Field {
    let n = f.len();
    let dx = f.grid().dx();
    let v = f.values();
    Field::from_raw(f.grid(), (0..n).map(|j| (v[j] - v[(j + n - 1) % n]) / dx).collect())
}

/// Minimum-modulus limiter: zero unless `a` and `b` share a sign.
#[inline]
pub fn minmod(a: f64, b: f64) -> f64 {
    if a * b <= 0.0 {
        0.0
    } else if a > 0.0 {
        a.min(b)
    } else {
        a.max(b)
    }
}

/// Riemann-sum periodic convolution `dx · Σ_i s_i k_{(j-i) mod n}`, evaluated directly.
pub fn circular_convolution(s: &Field, k: &Field) -> Result<Field> {
    s.check_same_grid(k)?;
    let n = s.len();
    let dx = s.grid().dx();
    let (sv, kv) = (s.values(), k.values());
    let out = (0..n)
        .map(|j| {
            let mut acc = 0.0;
            for (i, &si) in sv.iter().enumerate() {
                acc += si * kv[(j + n - i) % n];
            }
            dx * acc
        })
        .collect();
    Ok(Field::from_raw(s.grid(), out))
}

/// Same result as [`circular_convolution`], computed with a length-`n` FFT.
pub fn circular_convolution_fft(s: &Field, k: &Field) -> Result<Field> {
    s.check_same_grid(k)?;
    let n = s.len();
    let mut planner = FftPlanner::<f64>::new();
    let fwd = planner.plan_fft_forward(n);
    let inv = planner.plan_fft_inverse(n);

    let mut a: Vec<Complex<f64>> = s.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    let mut b: Vec<Complex<f64>> = k.values().iter().map(|&v| Complex::new(v, 0.0)).collect();
    fwd.process(&mut a);
    fwd.process(&mut b);
    for (x, y) in a.iter_mut().zip(&b) {
        *x *= y;
    }
    inv.process(&mut a);

    let scale = s.grid().dx() / n as f64;
    Ok(Field::from_raw(s.grid(), a.iter().map(|c| c.re * scale).collect()))
}

pub fn mean(f: &Field) -> f64 {
    f.values().iter().sum::<f64>() / f.len() as f64
}

/// `dx · Σ|f_j|`, an approximation of the continuum L¹ norm on the torus.
pub fn l1_norm(f: &Field) -> f64 {
    f.grid().dx() * f.values().iter().map(|v| v.abs()).sum::<f64>()
}

pub fn linf_norm(f: &Field) -> f64 {
    f.values().iter().fold(0.0, |m, v| m.max(v.abs()))
}

/// Plain Euclidean norm of the raw vector (no `dx` weight).
pub fn l2_norm(f: &Field) -> f64 {
    f.values().iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Coefficient of the alternating vector `(-1)^j`, i.e. `(1/n) Σ (-1)^j f_j`.
///
/// For even `n` the alternating vector is in the kernel of the centered
/// difference, so this component is invisible to every operator built on `D`.
/// Always zero for odd `n`.
pub fn alternating_component(f: &Field) -> f64 {
    if f.len() % 2 == 1 {
        return 0.0;
    }
    let s: f64 = f
        .values()
        .iter()
        .enumerate()
        .map(|(j, v)| if j % 2 == 0 { *v } else { -*v })
        .sum();
    s / f.len() as f64
}

/// Dense matrix of a circulant stencil given as `(offset, coefficient)` pairs.
pub(crate) fn circulant(n: usize, stencil: &[(isize, f64)]) -> DMatrix<f64> {
    let mut m = DMatrix::zeros(n, n);
    for i in 0..n {
        for &(off, c) in stencil {
            let j = (i as isize + off).rem_euclid(n as isize) as usize;
            m[(i, j)] += c;
        }
    }
    m
}

/// The centered difference operator as a dense matrix.
pub fn centered_difference_matrix(grid: GridSpec) -> DMatrix<f64> {
    let c = 0.5 / grid.dx();
    circulant(grid.len(), &[(1, c), (-1, -c)])
}

/// `DᵗD` as a dense matrix.
pub fn wide_laplacian_matrix(grid: GridSpec) -> DMatrix<f64> {
    let c = 0.25 / (grid.dx() * grid.dx());
    circulant(grid.len(), &[(-2, -c), (0, 2.0 * c), (2, -c)])
}

/// `(DᵗD)²` as a dense matrix.
pub fn biharmonic_matrix(grid: GridSpec) -> DMatrix<f64> {
    let c = 0.25 / (grid.dx() * grid.dx());
    let c2 = c * c;
    circulant(
        grid.len(),
        &[(-4, c2), (-2, -4.0 * c2), (0, 6.0 * c2), (2, -4.0 * c2), (4, c2)],
    )
}
