//! Valuation noise distributions and the pricing quantities derived from them.
//!
//! For a noise law `F` with density `f`, the virtual valuation is
//! `phi(v) = v - (1 - F(v)) / f(v)` and the revenue-maximising posted price
//! for an expected valuation `u` is `g(u) = u + phi^{-1}(-u)`. All three
//! supported laws have log-concave survival functions, so `phi' > 1` and
//! `0 < g' < 1` on the interior of the support.
//!
//! Internally everything is written in terms of the Mills ratio
//! `R(v) = (1 - F(v)) / f(v)`, which stays finite in the tails where the
//! density itself underflows: `phi = v - R` and `phi' = 1 - R'`.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::error::{Error, Result};
use crate::roots::{expand_bracket, newton_bisect, RootOptions, ROOT_MAX_ITER};

const INV_SQRT_2PI: f64 = 0.398_942_280_401_432_7;
const FRAC_1_SQRT_2: f64 = std::f64::consts::FRAC_1_SQRT_2;
/// Beyond this many standard deviations the normal Mills ratio switches to
/// its asymptotic expansion.
const NORMAL_TAIL: f64 = 12.0;
const NORMAL_SUPPORT: f64 = 40.0;
const LOGISTIC_EXP_CAP: f64 = 700.0;

/// Which noise law `z_t` follows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NoiseKind {
    /// Uniform on `(lo, hi)`.
    Uniform { lo: f64, hi: f64 },
    /// Standard normal.
    #[serde(alias = "standard_normal")]
    Normal,
    /// Logistic with location 0.
    Logistic { scale: f64 },
}

/// A noise law plus the working interval `[-W, B]` and root-finding tolerance.
#[derive(Debug, Clone, PartialEq)]
pub struct NoiseModel {
    kind: NoiseKind,
    domain_lo: f64,
    domain_hi: f64,
    tol: f64,
}

impl NoiseModel {
    pub fn new(kind: NoiseKind, domain_lo: f64, domain_hi: f64, tol: f64) -> Result<Self> {
        match kind {
            NoiseKind::Uniform { lo, hi } if !(lo < hi && lo.is_finite() && hi.is_finite()) => {
                return Err(Error::config("noise", "uniform requires lo < hi"));
            }
            NoiseKind::Logistic { scale } if !(scale > 0.0 && scale.is_finite()) => {
                return Err(Error::config(
                    "noise.scale",
                    "logistic scale must be positive",
                ));
            }
            _ => {}
        }
        if !(domain_lo < domain_hi) {
            return Err(Error::config(
                "noise",
                "working interval must satisfy -W < B",
            ));
        }
        if !(tol > 0.0) {
            return Err(Error::config("noise.tol", "tolerance must be positive"));
        }
        Ok(Self {
            kind,
            domain_lo,
            domain_hi,
            tol,
        })
    }

    pub fn standard_normal() -> Self {
        Self::new(NoiseKind::Normal, -18.0, 6.0, crate::roots::ROOT_TOL).unwrap()
    }

    pub fn uniform(lo: f64, hi: f64) -> Self {
        Self::new(
            NoiseKind::Uniform { lo, hi },
            -1.0,
            1.0,
            crate::roots::ROOT_TOL,
        )
        .expect("uniform bounds")
    }

    pub fn logistic(scale: f64) -> Self {
        Self::new(
            NoiseKind::Logistic { scale },
            -18.0,
            6.0,
            crate::roots::ROOT_TOL,
        )
        .expect("logistic scale")
    }

    pub fn kind(&self) -> NoiseKind {
        self.kind
    }

    pub fn tol(&self) -> f64 {
        self.tol
    }

    /// The working interval `[-W, B]`.
    pub fn domain(&self) -> (f64, f64) {
        (self.domain_lo, self.domain_hi)
    }

    /// Closed support of the law (numerically effective for unbounded laws).
    pub fn support(&self) -> (f64, f64) {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => (lo, hi),
            NoiseKind::Normal => (-NORMAL_SUPPORT, NORMAL_SUPPORT),
            NoiseKind::Logistic { scale } => (-LOGISTIC_EXP_CAP * scale, LOGISTIC_EXP_CAP * scale),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
            NoiseKind::Normal => StandardNormal.sample(rng),
            NoiseKind::Logistic { scale } => {
                let u: f64 = rng.random_range(f64::EPSILON..1.0);
                scale * (u / (1.0 - u)).ln()
            }
        }
    }

    pub fn cdf(&self, v: f64) -> f64 {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => ((v - lo) / (hi - lo)).clamp(0.0, 1.0),
            NoiseKind::Normal => 0.5 * erfc(-v * FRAC_1_SQRT_2),
            NoiseKind::Logistic { scale } => {
                1.0 / (1.0
                    + (-v / scale)
                        .clamp(-LOGISTIC_EXP_CAP, LOGISTIC_EXP_CAP)
                        .exp())
            }
        }
    }

    /// Survival function `1 - F(v)`, computed without cancellation.
    pub fn sf(&self, v: f64) -> f64 {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => ((hi - v) / (hi - lo)).clamp(0.0, 1.0),
            NoiseKind::Normal => 0.5 * erfc(v * FRAC_1_SQRT_2),
            NoiseKind::Logistic { scale } => {
                1.0 / (1.0 + (v / scale).clamp(-LOGISTIC_EXP_CAP, LOGISTIC_EXP_CAP).exp())
            }
        }
    }

    pub fn pdf(&self, v: f64) -> f64 {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => {
                if (lo..=hi).contains(&v) {
                    1.0 / (hi - lo)
                } else {
                    0.0
                }
            }
            NoiseKind::Normal => INV_SQRT_2PI * (-0.5 * v * v).exp(),
            NoiseKind::Logistic { scale } => {
                let e = (-v.abs() / scale).exp();
                e / (scale * (1.0 + e) * (1.0 + e))
            }
        }
    }

    /// Derivative of the density.
    pub fn pdf_deriv(&self, v: f64) -> f64 {
        match self.kind {
            NoiseKind::Uniform { .. } => 0.0,
            NoiseKind::Normal => -v * self.pdf(v),
            NoiseKind::Logistic { scale } => self.pdf(v) * (1.0 - 2.0 * self.cdf(v)) / scale,
        }
    }

    fn in_support(&self, v: f64) -> bool {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => v >= lo && v <= hi,
            _ => v.is_finite(),
        }
    }

    /// Mills ratio `(1 - F(v)) / f(v)`; only meaningful inside the support.
    fn mills(&self, v: f64) -> f64 {
        match self.kind {
            NoiseKind::Uniform { hi, .. } => hi - v,
            NoiseKind::Normal => {
                if v > NORMAL_TAIL {
                    let w = 1.0 / (v * v);
                    // 1/v - 1/v^3 + 3/v^5 - 15/v^7 + 105/v^9 - 945/v^11
                    (1.0 + w * (-1.0 + w * (3.0 + w * (-15.0 + w * (105.0 - 945.0 * w))))) / v
                } else {
                    self.sf(v) / self.pdf(v)
                }
            }
            NoiseKind::Logistic { scale } => {
                scale
                    * (1.0
                        + (-v / scale)
                            .clamp(-LOGISTIC_EXP_CAP, LOGISTIC_EXP_CAP)
                            .exp())
            }
        }
    }

    fn mills_deriv(&self, v: f64) -> f64 {
        match self.kind {
            NoiseKind::Uniform { .. } => -1.0,
            NoiseKind::Normal => {
                if v > NORMAL_TAIL {
                    let w = 1.0 / (v * v);
                    w * (-1.0 + w * (3.0 + w * (-15.0 + w * (105.0 - 945.0 * w))))
                } else {
                    v * self.mills(v) - 1.0
                }
            }
            NoiseKind::Logistic { scale } => -(-v / scale)
                .clamp(-LOGISTIC_EXP_CAP, LOGISTIC_EXP_CAP)
                .exp(),
        }
    }

    /// Virtual valuation `phi(v) = v - (1 - F(v)) / f(v)`.
    pub fn virtual_valuation(&self, v: f64) -> Result<f64> {
        if !self.in_support(v) {
            return Err(Error::DensityZero { v });
        }
        Ok(v - self.mills(v))
    }

    /// `phi'(v) = 1 + lambda'(v) / lambda(v)^2` with `lambda` the hazard rate.
    pub fn virtual_valuation_deriv(&self, v: f64) -> Result<f64> {
        if !self.in_support(v) {
            return Err(Error::DensityZero { v });
        }
        Ok(1.0 - self.mills_deriv(v))
    }

    /// `phi^{-1}(y)`; closed form for the uniform law, root finding otherwise.
    pub fn inv_virtual_valuation(&self, y: f64) -> Result<f64> {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => {
                let v = 0.5 * (y + hi);
                if v < lo || v > hi {
                    Err(Error::BracketFailure {
                        what: "inverse virtual valuation",
                        target: y,
                    })
                } else {
                    Ok(v)
                }
            }
            _ => self.inv_virtual_valuation_numeric(y),
        }
    }

    /// `phi^{-1}(y)` by bracketed Newton/bisection for any law. Exposed so the
    /// closed forms can be checked against it.
    pub fn inv_virtual_valuation_numeric(&self, y: f64) -> Result<f64> {
        let (slo, shi) = self.support();
        let residual = |v: f64| v - self.mills(v) - y;
        let (lo, hi) = match self.kind {
            NoiseKind::Uniform { .. } => {
                if residual(slo) > 0.0 || residual(shi) < 0.0 {
                    return Err(Error::BracketFailure {
                        what: "inverse virtual valuation",
                        target: y,
                    });
                }
                (slo, shi)
            }
            _ => {
                let (seed, step) = self.inversion_seed(y);
                expand_bracket(residual, seed, step, slo, shi, "inverse virtual valuation")
                    .map_err(|_| Error::BracketFailure {
                        what: "inverse virtual valuation",
                        target: y,
                    })?
            }
        };
        if lo == hi {
            return Ok(lo);
        }
        let opts = RootOptions {
            tol: self.tol,
            max_iter: ROOT_MAX_ITER,
        };
        newton_bisect(
            |v| (residual(v), 1.0 - self.mills_deriv(v)),
            lo,
            hi,
            opts,
            "inverse virtual valuation",
        )
    }

    fn inversion_seed(&self, y: f64) -> (f64, f64) {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => ((0.5 * (y + hi)).clamp(lo, hi), 0.5 * (hi - lo)),
            // phi(v) ~ v on the right and falls off like -1/f(v) on the left.
            NoiseKind::Normal => (y.clamp(-4.0, NORMAL_SUPPORT), 0.5),
            NoiseKind::Logistic { scale } => {
                let seed = if y >= 0.0 {
                    y + scale
                } else {
                    -scale * (1.0 - y / scale).ln()
                };
                (seed, 0.5 * scale)
            }
        }
    }

    fn price_parts(&self, u: f64, v_star: f64) -> Result<(f64, f64)> {
        let slope = self.virtual_valuation_deriv(v_star)?;
        Ok((u + v_star, 1.0 - 1.0 / slope))
    }

    /// Pricing function `g(u) = u + phi^{-1}(-u)` and its derivative
    /// `g'(u) = 1 - 1 / phi'(phi^{-1}(-u))`, sharing one inversion.
    ///
    /// For the uniform law `phi^{-1}` is taken as the generalised inverse
    /// clamped to the support, so `g` stays the revenue-maximising price even
    /// when `-u` leaves the range of `phi`; there the slope saturates at 1.
    pub fn price_fn_with_deriv(&self, u: f64) -> Result<(f64, f64)> {
        match self.kind {
            NoiseKind::Uniform { lo, hi } => {
                let v = 0.5 * (hi - u);
                if v < lo {
                    Ok((u + lo, 1.0))
                } else if v > hi {
                    Ok((u + hi, 1.0))
                } else {
                    Ok((u + v, 0.5))
                }
            }
            _ => {
                let v_star = self.inv_virtual_valuation_numeric(-u)?;
                self.price_parts(u, v_star)
            }
        }
    }

    /// `g(u)`, the revenue-maximising price for expected valuation `u`.
    pub fn price_fn(&self, u: f64) -> Result<f64> {
        self.price_fn_with_deriv(u).map(|(p, _)| p)
    }

    /// `g'(u)`.
    pub fn price_fn_deriv(&self, u: f64) -> Result<f64> {
        self.price_fn_with_deriv(u).map(|(_, d)| d)
    }

    /// `g` and `g'` through the numeric inversion regardless of law.
    pub fn price_fn_with_deriv_numeric(&self, u: f64) -> Result<(f64, f64)> {
        let v_star = self.inv_virtual_valuation_numeric(-u)?;
        self.price_parts(u, v_star)
    }

    /// Expected revenue `p (1 - F(p - u))` of posting `p` to a buyer with
    /// expected valuation `u`.
    pub fn expected_revenue(&self, price: f64, u: f64) -> f64 {
        price * self.sf(price - u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unif() -> NoiseModel {
        NoiseModel::uniform(-0.5, 0.5)
    }

    #[test]
    fn cdf_examples() {
        assert_eq!(unif().cdf(0.0), 0.5);
        assert_eq!(unif().cdf(0.25), 0.75);
        assert!((NoiseModel::standard_normal().cdf(0.0) - 0.5).abs() < 1e-15);
        assert_eq!(unif().cdf(3.0), 1.0);
        assert_eq!(unif().cdf(-3.0), 0.0);
    }

    #[test]
    fn uniform_virtual_valuation_closed_form() {
        let m = unif();
        assert!((m.virtual_valuation(0.25).unwrap()).abs() < 1e-15);
        assert!((m.virtual_valuation(0.5).unwrap() - 0.5).abs() < 1e-15);
        assert!((m.inv_virtual_valuation(0.0).unwrap() - 0.25).abs() < 1e-15);
    }

    #[test]
    fn density_zero_outside_uniform_support() {
        let err = unif().virtual_valuation(0.75).unwrap_err();
        assert!(matches!(err, Error::DensityZero { .. }));
    }

    #[test]
    fn uniform_inverse_out_of_range_is_bracket_failure() {
        let m = unif();
        assert!(matches!(
            m.inv_virtual_valuation(2.0),
            Err(Error::BracketFailure { .. })
        ));
        assert!(matches!(
            m.inv_virtual_valuation_numeric(-2.0),
            Err(Error::BracketFailure { .. })
        ));
    }

    #[test]
    fn uniform_price_fn_closed_form() {
        let m = unif();
        assert!((m.price_fn(0.0).unwrap() - 0.25).abs() < 1e-15);
        assert!((m.price_fn(0.5).unwrap() - 0.5).abs() < 1e-15);
        assert_eq!(m.price_fn_deriv(0.1).unwrap(), 0.5);
    }

    #[test]
    fn uniform_price_saturates_outside_phi_range() {
        let m = unif();
        // u > hi - 2 lo: sell with certainty at the bottom of the support.
        assert!((m.price_fn(2.0).unwrap() - 1.5).abs() < 1e-15);
    }

    #[test]
    fn normal_virtual_valuation_at_zero() {
        // -(1 - 0.5) / (1/sqrt(2 pi)) = -sqrt(pi/2)
        let expected = -(std::f64::consts::PI / 2.0).sqrt();
        let m = NoiseModel::standard_normal();
        assert!((m.virtual_valuation(0.0).unwrap() - expected).abs() < 1e-14);
        assert!(m.inv_virtual_valuation(expected).unwrap().abs() < 1e-9);
    }

    #[test]
    fn normal_tail_switch_is_continuous() {
        let m = NoiseModel::standard_normal();
        let below = m.virtual_valuation(NORMAL_TAIL - 1e-9).unwrap();
        let above = m.virtual_valuation(NORMAL_TAIL + 1e-9).unwrap();
        assert!((above - below).abs() < 1e-8);
        // deep left tail stays finite and ordered
        let a = m.virtual_valuation(-20.0).unwrap();
        let b = m.virtual_valuation(-19.0).unwrap();
        assert!(a < b && a.is_finite());
    }

    #[test]
    fn logistic_phi_closed_form() {
        let m = NoiseModel::logistic(0.7);
        for &v in &[-3.0, -0.5, 0.0, 1.2, 4.0] {
            let f = m.pdf(v);
            let direct = v - (1.0 - m.cdf(v)) / f;
            assert!((m.virtual_valuation(v).unwrap() - direct).abs() < 1e-10);
        }
    }

    #[test]
    fn deep_tail_inversion_does_not_fault() {
        let m = NoiseModel::standard_normal();
        let v = m.inv_virtual_valuation(-1e12).unwrap();
        assert!(v.is_finite() && v < -5.0);
        let v = m.inv_virtual_valuation(30.0).unwrap();
        assert!((m.virtual_valuation(v).unwrap() - 30.0).abs() < 1e-10);
    }

    #[test]
    fn logistic_samples_have_right_scale() {
        use rand::SeedableRng;
        let m = NoiseModel::logistic(2.0);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        let n = 50_000;
        let var = (0..n).map(|_| m.sample(&mut rng).powi(2)).sum::<f64>() / n as f64;
        // variance of a logistic law is s^2 pi^2 / 3
        let expected = 4.0 * std::f64::consts::PI.powi(2) / 3.0;
        assert!((var / expected - 1.0).abs() < 0.05, "{var} vs {expected}");
    }
}
