//! Regularized exponential mobility `M(h) = exp(-φ′_ε ⋆ s(f))`, where
//! `f = minmod(D₊h, D₋h)` and `s` is either the sign function or `tanh(slope·f)`.

use std::f64::consts::PI;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{self, circular_convolution, Field, GridSpec, Profile};

/// Exponents beyond this magnitude abort the mobility evaluation.
pub const MAX_EXPONENT: f64 = 700.0;

/// Radius of the standard bump mollifier `φ_ε(x) = φ(x/ε)/ε`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MollifierSpec {
    epsilon: f64,
}

impl MollifierSpec {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(epsilon > 0.0 && epsilon < PI) {
            return Err(Error::InvalidEpsilon(epsilon));
        }
        Ok(Self { epsilon })
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }
}

/// Normalizing constant `c` with `∫₋₁¹ c·exp(-1/(1-x²)) dx = 1`.
///
/// The integrand is flat to all orders at ±1, so the trapezoid rule converges
/// faster than any power of the step.
pub fn bump_normalization() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| {
        let n = 1 << 14;
        let h = 2.0 / n as f64;
        let integral: f64 = (1..n).map(|i| raw_bump(-1.0 + i as f64 * h)).sum::<f64>() * h;
        1.0 / integral
    })
}

fn raw_bump(x: f64) -> f64 {
    if x.abs() < 1.0 {
        (-1.0 / (1.0 - x * x)).exp()
    } else {
        0.0
    }
}

/// The unit-mass bump `φ(x)`.
pub fn bump(x: f64) -> f64 {
    bump_normalization() * raw_bump(x)
}

/// `φ′(x) = φ(x) · (-2x / (1-x²)²)`.
pub fn bump_derivative(x: f64) -> f64 {
    if x.abs() >= 1.0 {
        return 0.0;
    }
    let q = 1.0 - x * x;
    bump(x) * (-2.0 * x / (q * q))
}

/// Samples `φ′_ε(x) = φ′(x/ε)/ε²` at the nodes (coordinates taken in `[-π, π)`),
/// then removes the discrete mean so that `dx·Σ kernel = 0`.
pub fn sample_mollifier_derivative(spec: MollifierSpec, grid: GridSpec) -> Field {
    let eps = spec.epsilon();
    let mut k: Vec<f64> = (0..grid.len())
        .map(|j| bump_derivative(grid.signed_x(j) / eps) / (eps * eps))
        .collect();
    let m = k.iter().sum::<f64>() / k.len() as f64;
    k.iter_mut().for_each(|v| *v -= m);
    Field::from_raw(grid, k)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SignVariant {
    /// `sgn(f)` with `sgn(0) = 0`.
    ExactSign,
    /// `tanh(slope · f)`.
    SmoothedSign,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MobilityConfig {
    pub mollifier: MollifierSpec,
    pub variant: SignVariant,
    pub slope: f64,
}

impl MobilityConfig {
    pub const DEFAULT_SLOPE: f64 = 10.0;

    pub fn new(epsilon: f64, variant: SignVariant, slope: f64) -> Result<Self> {
        let cfg = Self {
            mollifier: MollifierSpec::new(epsilon)?,
            variant,
            slope,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn exact(epsilon: f64) -> Result<Self> {
        Self::new(epsilon, SignVariant::ExactSign, Self::DEFAULT_SLOPE)
    }

    pub fn smoothed(epsilon: f64, slope: f64) -> Result<Self> {
        Self::new(epsilon, SignVariant::SmoothedSign, slope)
    }

    pub fn validate(&self) -> Result<()> {
        MollifierSpec::new(self.mollifier.epsilon)?;
        if self.variant == SignVariant::SmoothedSign && !(self.slope > 0.0 && self.slope.is_finite()) {
            return Err(Error::InvalidSlope(self.slope));
        }
        Ok(())
    }

    fn sign(&self, f: f64) -> f64 {
        match self.variant {
            SignVariant::ExactSign => {
                if f > 0.0 {
                    1.0
                } else if f < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            SignVariant::SmoothedSign => (self.slope * f).tanh(),
        }
    }
}

/// Strictly positive, finite nodal mobility.
#[derive(Debug, Clone, PartialEq)]
pub struct MobilityField(Field);

impl MobilityField {
    pub fn new(values: Field) -> Result<Self> {
        if let Some((index, &value)) = values
            .values()
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v > 0.0 && v.is_finite()))
        {
            return Err(Error::NonFinite { index, value });
        }
        Ok(Self(values))
    }

    pub fn ones(grid: GridSpec) -> Self {
        Self(Field::constant(grid, 1.0))
    }

    pub fn field(&self) -> &Field {
        &self.0
    }

    pub fn values(&self) -> &[f64] {
        self.0.values()
    }

    pub fn grid(&self) -> GridSpec {
        self.0.grid()
    }

    pub fn l1_norm(&self) -> f64 {
        grid::l1_norm(&self.0)
    }

    pub fn reciprocal(&self) -> MobilityField {
        MobilityField(self.0.map(|m| 1.0 / m))
    }
}

/// Evaluates the mobility with the kernel sampled here; use
/// [`MobilityEvaluator`] when the same grid and `ε` are reused.
pub fn compute_mobility(h: &Profile, cfg: &MobilityConfig) -> Result<MobilityField> {
    MobilityEvaluator::new(*cfg, h.grid())?.evaluate(h)
}

/// Mobility evaluation with the sampled kernel cached for one grid.
#[derive(Debug, Clone)]
pub struct MobilityEvaluator {
    cfg: MobilityConfig,
    kernel: Field,
}

impl MobilityEvaluator {
    pub fn new(cfg: MobilityConfig, grid: GridSpec) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            kernel: sample_mollifier_derivative(cfg.mollifier, grid),
            cfg,
        })
    }

    pub fn kernel(&self) -> &Field {
        &self.kernel
    }

    /// The pre-exponential sign field `s_j`.
    pub fn sign_field(&self, h: &Profile) -> Field {
        let fwd = grid::forward_difference(h);
        let bwd = grid::backward_difference(h);
        fwd.zip_with(&bwd, |a, b| self.cfg.sign(grid::minmod(a, b)))
            .expect("differences share the profile's grid")
    }

    /// The exponent `g = φ′_ε ⋆ s`, so that `M = exp(-g)`.
    pub fn exponent(&self, h: &Profile) -> Result<Field> {
        circular_convolution(&self.sign_field(h), &self.kernel)
    }

    pub fn evaluate(&self, h: &Profile) -> Result<MobilityField> {
        let g = self.exponent(h)?;
        let (index, max_abs) = g
            .values()
            .iter()
            .enumerate()
            .map(|(i, v)| (i, v.abs()))
            .fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
        if max_abs > MAX_EXPONENT {
            return Err(Error::MobilityOverflow { max_abs, index });
        }
        MobilityField::new(g.map(|v| (-v).exp()))
    }
}

pub fn reciprocal(m: &MobilityField) -> MobilityField {
    m.reciprocal()
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::{assert_abs_diff_eq, assert_relative_eq};
    use proptest::prelude::*;

    /// Adaptive-quadrature value (scipy `quad`, epsrel 1e-14) of 1/∫₋₁¹ exp(-1/(1-x²)) dx.
    const BUMP_C_REFERENCE: f64 = 2.2522836210435813;

    fn grid(n: usize) -> GridSpec {
        GridSpec::new(n).unwrap()
    }

    #[test]
    fn normalization_constant() {
        assert_relative_eq!(bump_normalization(), BUMP_C_REFERENCE, max_relative = 1e-13);
    }

    #[test]
    fn epsilon_bounds() {
        assert!(MollifierSpec::new(PI).is_err());
        assert!(MollifierSpec::new(0.0).is_err());
        assert!(MollifierSpec::new(3.0).is_ok());
        assert!(MobilityConfig::smoothed(0.1, 0.0).is_err());
        assert!(MobilityConfig::new(0.1, SignVariant::ExactSign, -1.0).is_ok());
    }

    #[test]
    fn kernel_sums_to_zero_and_is_odd() {
        for (n, eps) in [(200, 0.04), (64, 0.5), (33, 0.3)] {
            let g = grid(n);
            let k = sample_mollifier_derivative(MollifierSpec::new(eps).unwrap(), g);
            let scale = grid::linf_norm(&k);
            assert!(scale > 0.0);
            assert!((g.dx() * k.values().iter().sum::<f64>()).abs() < 1e-13 * scale);
            for j in 1..n {
                assert_abs_diff_eq!(k.values()[j], -k.values()[n - j], epsilon = 1e-12 * scale);
            }
        }
    }

    #[test]
    fn zero_profile_gives_unit_mobility() {
        let cfg = MobilityConfig::exact(0.04).unwrap();
        let m = compute_mobility(&Field::zeros(grid(200)), &cfg).unwrap();
        assert!(m.values().iter().all(|&v| v == 1.0));
        let c = compute_mobility(
            &Field::constant(grid(50), 2.5),
            &MobilityConfig::smoothed(0.3, 10.0).unwrap(),
        )
        .unwrap();
        assert!(c.values().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn flat_node_contributes_zero_sign() {
        let g = grid(8);
        let h = Field::new(g, vec![0.0, 1.0, 2.0, 1.0, 0.0, -1.0, -2.0, -1.0]).unwrap();
        let ev = MobilityEvaluator::new(MobilityConfig::exact(0.5).unwrap(), g).unwrap();
        let s = ev.sign_field(&h);
        assert_eq!(s.values()[2], 0.0);
        assert_eq!(s.values()[6], 0.0);
        assert_eq!(s.values()[1], 1.0);
        assert_eq!(s.values()[4], -1.0);
    }

    /// Independent evaluation of the discrete mobility for `h = sin`: sign
    /// taken from the limiter applied to exact sine differences, kernel
    /// evaluated pointwise at wrapped node distances, no precomputed arrays.
    fn sine_mobility_reference(n: usize, eps: f64, smooth: Option<f64>) -> Vec<f64> {
        let dx = std::f64::consts::TAU / n as f64;
        let s: Vec<f64> = (0..n)
            .map(|j| {
                let x = j as f64 * dx;
                let fp = ((x + dx).sin() - x.sin()) / dx;
                let fm = (x.sin() - (x - dx).sin()) / dx;
                let f = if fp * fm <= 0.0 {
                    0.0
                } else if fp > 0.0 {
                    fp.min(fm)
                } else {
                    fp.max(fm)
                };
                match smooth {
                    None => f.signum() * (f != 0.0) as i32 as f64,
                    Some(k) => (k * f).tanh(),
                }
            })
            .collect();
        (0..n)
            .map(|j| {
                let mut g = 0.0;
                for (i, si) in s.iter().enumerate() {
                    let mut d = (j as f64 - i as f64) * dx;
                    while d >= PI {
                        d -= std::f64::consts::TAU;
                    }
                    while d < -PI {
                        d += std::f64::consts::TAU;
                    }
                    let y = d / eps;
                    let dphi = if y.abs() < 1.0 {
                        let q = 1.0 - y * y;
                        BUMP_C_REFERENCE * (-1.0 / q).exp() * (-2.0 * y / (q * q))
                    } else {
                        0.0
                    };
                    g += si * dphi / (eps * eps);
                }
                (-(g * dx)).exp()
            })
            .collect()
    }

    #[test]
    fn sine_mobility_matches_reference() {
        let g = grid(200);
        let h = Field::from_fn(g, f64::sin).unwrap();
        for (cfg, smooth) in [
            (MobilityConfig::exact(0.04).unwrap(), None),
            (MobilityConfig::smoothed(0.04, 10.0).unwrap(), Some(10.0)),
            (MobilityConfig::exact(0.3).unwrap(), None),
        ] {
            let eps = cfg.mollifier.epsilon();
            let m = compute_mobility(&h, &cfg).unwrap();
            let reference = sine_mobility_reference(200, eps, smooth);
            let ref_l1: f64 = g.dx() * reference.iter().sum::<f64>();
            let ref_inv_l1: f64 = g.dx() * reference.iter().map(|v| 1.0 / v).sum::<f64>();
            assert_relative_eq!(m.l1_norm(), ref_l1, max_relative = 1e-6);
            assert_relative_eq!(reciprocal(&m).l1_norm(), ref_inv_l1, max_relative = 1e-6);
        }
    }

    #[test]
    fn mobility_peaks_at_maximum() {
        // Large mobility at the crest (x = π/2), small in the trough (x = 3π/2).
        let g = grid(200);
        let h = Field::from_fn(g, f64::sin).unwrap();
        let m = compute_mobility(&h, &MobilityConfig::exact(0.04).unwrap()).unwrap();
        assert!(m.values()[50] > 1e20);
        assert!(m.values()[150] < 1e-20);
    }

    #[test]
    fn overflow_is_reported() {
        // Kernel support reaches only the nearest neighbours, with exponent ~2/dx.
        let g = grid(4000);
        let h = Field::from_fn(g, f64::sin).unwrap();
        let err = compute_mobility(&h, &MobilityConfig::exact(0.0021).unwrap()).unwrap_err();
        assert!(matches!(err, Error::MobilityOverflow { max_abs, .. } if max_abs > MAX_EXPONENT));
    }

    #[test]
    fn reciprocal_involution() {
        let g = grid(16);
        let m = MobilityField::new(Field::from_fn(g, |x| 1.5 + x.sin()).unwrap()).unwrap();
        let back = m.reciprocal().reciprocal();
        for (a, b) in back.values().iter().zip(m.values()) {
            assert_relative_eq!(*a, *b, max_relative = 1e-15);
        }
        assert!(MobilityField::ones(g).reciprocal().values().iter().all(|&v| v == 1.0));
        assert!(MobilityField::new(Field::zeros(g)).is_err());
    }

    proptest! {
        #[test]
        fn odd_symmetry(v in proptest::collection::vec(-2.0f64..2.0, 24), smooth in any::<bool>()) {
            let g = grid(24);
            let h = Field::new(g, v).unwrap();
            let cfg = if smooth { MobilityConfig::smoothed(0.6, 10.0) } else { MobilityConfig::exact(0.6) }.unwrap();
            let m = compute_mobility(&h, &cfg).unwrap();
            let mneg = compute_mobility(&h.scale(-1.0), &cfg).unwrap();
            for (a, b) in m.values().iter().zip(mneg.values()) {
                prop_assert!((a * b - 1.0).abs() < 1e-12);
            }
        }

        #[test]
        fn smoothed_variant_is_continuous(v in proptest::collection::vec(-1.0f64..1.0, 16), dir in proptest::collection::vec(-1.0f64..1.0, 16)) {
            let g = grid(16);
            let h = Field::new(g, v).unwrap();
            let step = Field::new(g, dir).unwrap().scale(1e-9);
            let cfg = MobilityConfig::smoothed(1.0, 10.0).unwrap();
            let a = compute_mobility(&h, &cfg).unwrap();
            let b = compute_mobility(&h.add(&step).unwrap(), &cfg).unwrap();
            for (x, y) in a.values().iter().zip(b.values()) {
                prop_assert!((x / y - 1.0).abs() < 1e-5);
            }
        }
    }
}
