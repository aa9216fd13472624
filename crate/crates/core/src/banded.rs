//! Cholesky factorization of symmetric matrices `diag(d) + C`, where `C` is
//! a constant symmetric circulant of half-bandwidth `b`.
//!
//! Stored as an envelope: row `i` keeps columns from `i - b` up to the
//! diagonal, except the last `b` rows, which are dense because of the
//! wrap-around corners. Fill stays inside the envelope, so factorization is
//! `O(m b²)` and each solve is `O(m b)`.

#[derive(Debug, Clone)]
pub(crate) struct CyclicBandCholesky {
    start: Vec<usize>,
    rows: Vec<Vec<f64>>,
}

impl CyclicBandCholesky {
    /// `stencil[o]` is the circulant entry at offsets `±o`. Returns `None`
    /// when the matrix is not numerically positive definite.
    pub(crate) fn new(diag: &[f64], stencil: &[f64]) -> Option<Self> {
        let m = diag.len();
        let b = stencil.len().saturating_sub(1);
        let start: Vec<usize> = (0..m)
            .map(|i| if i + b >= m { 0 } else { i.saturating_sub(b) })
            .collect();
        let mut rows: Vec<Vec<f64>> = (0..m).map(|i| vec![0.0; i - start[i] + 1]).collect();
        for i in 0..m {
            rows[i][i - start[i]] += diag[i];
            for o in -(b as isize)..=(b as isize) {
                let j = (i as isize + o).rem_euclid(m as isize) as usize;
                if j <= i {
                    rows[i][j - start[i]] += stencil[o.unsigned_abs()];
                }
            }
        }
        for i in 0..m {
            let si = start[i];
            for j in si..=i {
                let sj = start[j];
                let lo = si.max(sj);
                let mut s = rows[i][j - si];
                for k in lo..j {
                    s -= rows[i][k - si] * rows[j][k - sj];
                }
                if j < i {
                    rows[i][j - si] = s / rows[j][j - sj];
                } else if s > 0.0 && s.is_finite() {
                    rows[i][i - si] = s.sqrt();
                } else {
                    return None;
                }
            }
        }
        Some(Self { start, rows })
    }

    pub(crate) fn len(&self) -> usize {
        self.rows.len()
    }

    /// Overwrites `x` with the solution of `L Lᵗ y = x`.
    pub(crate) fn solve_in_place(&self, x: &mut [f64]) {
        let m = self.len();
        for i in 0..m {
            let si = self.start[i];
            let row = &self.rows[i];
            let mut s = x[i];
            for k in si..i {
                s -= row[k - si] * x[k];
            }
            x[i] = s / row[i - si];
        }
        for i in (0..m).rev() {
            let si = self.start[i];
            let row = &self.rows[i];
            x[i] /= row[i - si];
            let xi = x[i];
            for k in si..i {
                x[k] -= row[k - si] * xi;
            }
        }
    }
}
