//! The deterministic skew product `F(x, y) = (T(x), G(x, y))` for the
//! contracting Lorenz family, together with mod-2 arithmetic on `(-1, 1]`.
//!
//! `T(x) = sgn(x) (a |x|^s - 1)` and `G(x, y) = 2^-r sgn(x) y |x|^r + c(x)`,
//! where `c(x)` is `c_plus` on `x > 0` and `c_minus` on `x < 0`.

use std::f64::consts::LN_2;

use serde::Serialize;

use crate::error::{NioError, Result};

/// A point of the circle `R / 2Z`, represented in `(-1, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, PartialOrd, Serialize)]
pub struct TorusCoord(f64);

impl TorusCoord {
    pub fn new(r: f64) -> Result<Self> {
        mod2(r)
    }

    #[inline]
    pub fn value(self) -> f64 {
        self.0
    }

    /// Wraps without the finiteness check; callers guarantee a finite input.
    #[inline]
    pub(crate) fn wrap(r: f64) -> Self {
        TorusCoord(wrap_mod2(r))
    }
}

impl From<TorusCoord> for f64 {
    fn from(t: TorusCoord) -> f64 {
        t.0
    }
}

#[inline]
pub(crate) fn wrap_mod2(r: f64) -> f64 {
    if r > -1.0 && r <= 1.0 {
        return r;
    }
    // m = 1 - w with w = (1 - r) mod 2 in [0, 2)
    let mut w = (1.0 - r).rem_euclid(2.0);
    if w >= 2.0 {
        w = 0.0;
    }
    let m = 1.0 - w;
    if m <= -1.0 {
        1.0
    } else {
        m
    }
}

/// Reduces `r` to its representative in `(-1, 1]`.
pub fn mod2(r: f64) -> Result<TorusCoord> {
    if !r.is_finite() {
        return Err(NioError::Domain(format!("mod2 of non-finite value {r}")));
    }
    Ok(TorusCoord(wrap_mod2(r)))
}

/// Parameters of the contracting Lorenz skew product.
///
/// `a` is the slope parameter of the base map (the Lorenz "ρ"), `s` the
/// order of the critical point, `r` the fiber exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LorenzSkewProduct {
    a: f64,
    s: f64,
    r: f64,
    c_plus: f64,
    c_minus: f64,
}

impl Default for LorenzSkewProduct {
    fn default() -> Self {
        LorenzSkewProduct {
            a: 2.0,
            s: 4.0,
            r: 7.5,
            c_plus: 0.5,
            c_minus: -0.5,
        }
    }
}

/// Partial derivatives of `F` at a point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JacobianEntries {
    /// `T'(x)`
    pub dt: f64,
    /// `∂G/∂y`
    pub dgdy: f64,
    /// `∂G/∂x`
    pub dgdx: f64,
}

impl LorenzSkewProduct {
    pub fn new(a: f64, s: f64, r: f64, c_plus: f64, c_minus: f64) -> Result<Self> {
        let m = LorenzSkewProduct {
            a,
            s,
            r,
            c_plus,
            c_minus,
        };
        m.validate()?;
        Ok(m)
    }

    /// Default fiber parameters with the given base map; `r` is raised
    /// above `s + 3` when needed.
    pub fn with_base(a: f64, s: f64) -> Result<Self> {
        let d = Self::default();
        let r = if s + 3.0 < d.r { d.r } else { s + 3.5 };
        Self::new(a, s, r, d.c_plus, d.c_minus)
    }

    pub fn validate(&self) -> Result<()> {
        let finite = |field, v: f64| {
            if v.is_finite() {
                Ok(())
            } else {
                Err(NioError::invalid(field, format!("{v} is not finite")))
            }
        };
        finite("a", self.a)?;
        finite("s", self.s)?;
        finite("r", self.r)?;
        finite("c_plus", self.c_plus)?;
        finite("c_minus", self.c_minus)?;
        if !(self.a > 0.0 && self.a <= 2.0) {
            return Err(NioError::invalid("a", format!("{} not in (0, 2]", self.a)));
        }
        // s = 1 is the affine degenerate instance used as an exact oracle.
        if self.s < 1.0 {
            return Err(NioError::invalid("s", format!("{} < 1", self.s)));
        }
        if !(self.r > self.s + 3.0) {
            return Err(NioError::invalid(
                "r",
                format!("r = {} must exceed s + 3 = {}", self.r, self.s + 3.0),
            ));
        }
        let h = self.lip_fiber();
        for (field, c) in [("c_plus", self.c_plus), ("c_minus", self.c_minus)] {
            if c - h < -1.0 || c + h > 1.0 {
                return Err(NioError::invalid(
                    field,
                    format!("fiber image [{}, {}] leaves [-1, 1]", c - h, c + h),
                ));
            }
        }
        let (lo, hi) = if self.c_plus < self.c_minus {
            (self.c_plus, self.c_minus)
        } else {
            (self.c_minus, self.c_plus)
        };
        if lo + h >= hi - h {
            return Err(NioError::invalid(
                "c_plus",
                format!(
                    "branch fiber images around {} and {} overlap (half-width {h})",
                    self.c_plus, self.c_minus
                ),
            ));
        }
        Ok(())
    }

    pub fn a(&self) -> f64 {
        self.a
    }

    pub fn s(&self) -> f64 {
        self.s
    }

    pub fn r(&self) -> f64 {
        self.r
    }

    pub fn c_plus(&self) -> f64 {
        self.c_plus
    }

    pub fn c_minus(&self) -> f64 {
        self.c_minus
    }

    /// Fiber Lipschitz constant `2^-r`.
    pub fn lip_fiber(&self) -> f64 {
        (-self.r * LN_2).exp()
    }

    /// `T(x)` for any real `x` in `[-1, 1] \ {0}`.
    pub fn t(&self, x: f64) -> Result<f64> {
        if x == 0.0 {
            return Err(NioError::SingularPoint);
        }
        Ok(x.signum() * (self.a * x.abs().powf(self.s) - 1.0))
    }

    /// `G(x, y)` for `x != 0`.
    pub fn g(&self, x: f64, y: f64) -> Result<f64> {
        if x == 0.0 {
            return Err(NioError::SingularPoint);
        }
        let c = if x > 0.0 { self.c_plus } else { self.c_minus };
        Ok(self.lip_fiber() * x.signum() * y * x.abs().powf(self.r) + c)
    }

    pub fn jacobian_at(&self, x: f64, y: f64) -> Result<JacobianEntries> {
        if x == 0.0 {
            return Err(NioError::SingularPoint);
        }
        let ax = x.abs();
        let h = self.lip_fiber();
        Ok(JacobianEntries {
            dt: self.a * self.s * ax.powf(self.s - 1.0),
            dgdy: h * x.signum() * ax.powf(self.r),
            dgdx: h * y * self.r * ax.powf(self.r - 1.0),
        })
    }

    /// `log |T'(x)|` given `log |x|`.
    #[inline]
    pub fn log_dt(&self, log_abs_x: f64) -> f64 {
        self.a.ln() + self.s.ln() + (self.s - 1.0) * log_abs_x
    }

    /// `log |∂G/∂y|` given `log |x|`.
    #[inline]
    pub fn log_dgdy(&self, log_abs_x: f64) -> f64 {
        -self.r * LN_2 + self.r * log_abs_x
    }

    /// Range of `T`: `(-1, a-1] ∪ [1-a, 1)`.
    pub fn base_image(&self) -> [(f64, f64); 2] {
        [(-1.0, self.a - 1.0), (1.0 - self.a, 1.0)]
    }
}

pub fn base_map(m: &LorenzSkewProduct, x: TorusCoord) -> Result<f64> {
    m.t(x.value())
}

pub fn fiber_map(m: &LorenzSkewProduct, x: TorusCoord, y: TorusCoord) -> Result<f64> {
    m.g(x.value(), y.value())
}

pub fn jacobian(m: &LorenzSkewProduct, x: TorusCoord, y: TorusCoord) -> Result<JacobianEntries> {
    m.jacobian_at(x.value(), y.value())
}

/// One step of the random map `F_ω(x, y) = F(x, y) + ω mod 2`.
pub fn random_step(
    m: &LorenzSkewProduct,
    x: TorusCoord,
    y: TorusCoord,
    omega: (f64, f64),
) -> Result<(TorusCoord, TorusCoord)> {
    if !(omega.0.is_finite() && omega.1.is_finite()) {
        return Err(NioError::Domain(format!("non-finite noise {omega:?}")));
    }
    let tx = base_map(m, x)?;
    let gy = fiber_map(m, x, y)?;
    Ok((mod2(tx + omega.0)?, mod2(gy + omega.1)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{RngExt, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tc(v: f64) -> TorusCoord {
        mod2(v).unwrap()
    }

    #[test]
    fn mod2_examples() {
        assert_eq!(mod2(1.5).unwrap().value(), -0.5);
        assert_eq!(mod2(-1.0).unwrap().value(), 1.0);
        assert_eq!(mod2(0.25).unwrap().value(), 0.25);
        assert_eq!(mod2(1.0).unwrap().value(), 1.0);
        assert_eq!(mod2(3.0).unwrap().value(), 1.0);
        assert_eq!(mod2(-3.0).unwrap().value(), 1.0);
        assert_eq!(mod2(-2.5).unwrap().value(), -0.5);
        assert!(mod2(f64::NAN).is_err());
        assert!(mod2(f64::INFINITY).is_err());
    }

    #[test]
    fn mod2_tiny_negative_offsets_stay_in_range() {
        for r in [-1.0 - 1e-17, -3.0 + 1e-16, 1.0 + 1e-16, -1.0 - f64::EPSILON] {
            let v = mod2(r).unwrap().value();
            assert!(v > -1.0 && v <= 1.0, "{r} -> {v}");
        }
    }

    #[test]
    fn base_map_examples() {
        let m = LorenzSkewProduct::default();
        assert_eq!(base_map(&m, tc(1.0)).unwrap(), 1.0);
        assert_eq!(base_map(&m, tc(0.5)).unwrap(), -0.875);
        let affine = LorenzSkewProduct::with_base(2.0, 1.0).unwrap();
        assert_eq!(base_map(&affine, tc(-0.25)).unwrap(), 0.5);
        assert_eq!(base_map(&m, tc(0.0)), Err(NioError::SingularPoint));
    }

    #[test]
    fn fiber_map_examples() {
        let m = LorenzSkewProduct::default();
        assert_eq!(fiber_map(&m, tc(0.3), tc(0.0)).unwrap(), 0.5);
        let up = fiber_map(&m, tc(1.0), tc(1.0)).unwrap();
        assert!((up - (0.5 + 2f64.powf(-7.5))).abs() < 1e-16);
        // x = -1 wraps to +1 on the torus, so evaluate the real map directly
        assert!((m.g(-1.0, 1.0).unwrap() - (-0.5 - 2f64.powf(-7.5))).abs() < 1e-16);
    }

    #[test]
    fn jacobian_examples() {
        let m = LorenzSkewProduct::default();
        let j = jacobian(&m, tc(1.0), tc(0.0)).unwrap();
        assert_eq!(j.dt, 8.0);
        assert!((j.dgdy - 2f64.powf(-7.5)).abs() < 1e-17);
        assert_eq!(j.dgdx, 0.0);
        let affine = LorenzSkewProduct::with_base(2.0, 1.0).unwrap();
        assert_eq!(jacobian(&affine, tc(0.3), tc(0.7)).unwrap().dt, 2.0);
        assert_eq!(jacobian(&m, tc(0.5), tc(0.0)).unwrap().dgdx, 0.0);
    }

    #[test]
    fn random_step_examples() {
        let m = LorenzSkewProduct::default();
        let (x, y) = random_step(&m, tc(1.0), tc(0.0), (0.0, 0.0)).unwrap();
        assert_eq!((x.value(), y.value()), (1.0, 0.5));
        let a = random_step(&m, tc(0.3), tc(-0.2), (2.0, 2.0)).unwrap();
        let b = random_step(&m, tc(0.3), tc(-0.2), (0.0, 0.0)).unwrap();
        assert!((a.0.value() - b.0.value()).abs() < 1e-15);
        assert!((a.1.value() - b.1.value()).abs() < 1e-15);
        let (x, _) = random_step(&m, tc(1.0), tc(0.0), (0.5, 0.0)).unwrap();
        assert_eq!(x.value(), -0.5);
    }

    #[test]
    fn validation_rejects_bad_parameters() {
        assert!(LorenzSkewProduct::new(2.5, 4.0, 7.5, 0.5, -0.5).is_err());
        assert!(LorenzSkewProduct::new(0.0, 4.0, 7.5, 0.5, -0.5).is_err());
        assert!(LorenzSkewProduct::new(2.0, 4.0, 7.0, 0.5, -0.5).is_err());
        assert!(LorenzSkewProduct::new(2.0, 4.0, 7.5, 0.5, 0.5).is_err());
        assert!(LorenzSkewProduct::new(2.0, 4.0, 7.5, 0.999, -0.5).is_err());
        assert!(LorenzSkewProduct::new(2.0, 0.5, 7.5, 0.5, -0.5).is_err());
        assert!(LorenzSkewProduct::new(2.0, 4.0, 7.5, 0.5, -0.5).is_ok());
    }

    #[test]
    fn random_step_stays_on_torus() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100_000 {
            let a = rng.random_range(0.05..=2.0);
            let s = rng.random_range(1.0..4.4);
            let m = LorenzSkewProduct::with_base(a, s).unwrap();
            let x = tc(1.0 - 2.0 * rng.random::<f64>());
            let y = tc(1.0 - 2.0 * rng.random::<f64>());
            if x.value() == 0.0 {
                continue;
            }
            let omega = (rng.random_range(-30.0..30.0), rng.random_range(-30.0..30.0));
            let (x1, y1) = random_step(&m, x, y, omega).unwrap();
            for v in [x1.value(), y1.value()] {
                assert!(v > -1.0 && v <= 1.0);
            }
        }
    }

    #[test]
    fn fiber_is_lipschitz_with_constant_two_to_minus_r() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = LorenzSkewProduct::default();
        let c = m.lip_fiber();
        for _ in 0..10_000 {
            let x = 1.0 - 2.0 * rng.random::<f64>();
            let y = 1.0 - 2.0 * rng.random::<f64>();
            let y2 = 1.0 - 2.0 * rng.random::<f64>();
            if x == 0.0 {
                continue;
            }
            let d = (m.g(x, y).unwrap() - m.g(x, y2).unwrap()).abs();
            assert!(d <= c * (y - y2).abs() * (1.0 + 1e-12) + 1e-17);
        }
    }

    // G carries the offset c, so its fiber term (often far below ulp(c)) is
    // only resolvable by differencing where the signal dominates rounding;
    // those points are skipped rather than compared against noise.
    #[test]
    fn jacobian_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let m = LorenzSkewProduct::default();
        let rel = |a: f64, b: f64| (a - b).abs() / b.abs().max(1e-300);
        let five_point = |f: &dyn Fn(f64) -> f64, x: f64, h: f64| {
            (f(x - 2.0 * h) - 8.0 * f(x - h) + 8.0 * f(x + h) - f(x + 2.0 * h)) / (12.0 * h)
        };
        let (mut checked, mut base_checked, mut fiber_checked) = (0, 0, 0);
        while checked < 1000 {
            let x: f64 = rng.random_range(-0.999..0.999);
            let y: f64 = rng.random_range(-0.999..0.999);
            if x.abs() < 1e-3 {
                continue;
            }
            let j = m.jacobian_at(x, y).unwrap();
            let hx = 1e-3 * x.abs();
            // T = ±(a|x|^s - 1) also hides a flat term under the constant near 0
            if (j.dt * hx).abs() > 1e-8 {
                let t = |v: f64| m.t(v).unwrap();
                assert!(rel(j.dt, five_point(&t, x, hx)) < 1e-6, "dT at {x}");
                base_checked += 1;
            }
            if (j.dgdx * hx).abs() > 1e-9 {
                let g = |t: f64| m.g(t, y).unwrap();
                assert!(rel(j.dgdx, five_point(&g, x, hx)) < 1e-6, "dGdx at {x},{y}");
                fiber_checked += 1;
            }
            if j.dgdy.abs() > 1e-8 {
                // G is affine in y, so a wide difference is exact up to rounding
                let fd_gy = m.g(x, 0.5).unwrap() - m.g(x, -0.5).unwrap();
                assert!(rel(j.dgdy, fd_gy) < 1e-6, "dGdy at {x}");
            }
            checked += 1;
        }
        assert!(base_checked > 500 && fiber_checked > 100);
    }

    #[test]
    fn jacobian_invariants() {
        let m = LorenzSkewProduct::default();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..1000 {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x == 0.0 {
                continue;
            }
            let j = m.jacobian_at(x, 0.3).unwrap();
            assert!(j.dgdy.abs() <= m.lip_fiber());
            let closed = m.a() * m.s() * x.abs().powf(m.s() - 1.0);
            assert!((j.dt - closed).abs() <= 1e-14 * closed);
            let via_log = m.log_dt(x.abs().ln()).exp();
            assert!((via_log - j.dt).abs() <= 1e-13 * j.dt);
        }
    }

    #[test]
    fn base_image_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let sub = LorenzSkewProduct::with_base(1.7, 3.0).unwrap();
        let full = LorenzSkewProduct::default();
        let mut sup_sub: f64 = 0.0;
        for _ in 0..10_000 {
            let x: f64 = rng.random_range(-1.0..1.0);
            if x == 0.0 {
                continue;
            }
            sup_sub = sup_sub.max(sub.t(x).unwrap().abs());
            let v = full.t(x).unwrap().abs();
            assert!(v <= 1.0, "{x} -> {v}");
            // |T| rounds to 1 only next to |x| = 1 or where a|x|^s is below an ulp of 1
            let near_edge = x.abs() > 1.0 - 1e-15 || 2.0 * x.abs().powi(4) < f64::EPSILON;
            assert!(v < 1.0 || near_edge, "{x} -> {v}");
        }
        assert!(sup_sub < 1.0);
        assert_eq!(full.t(1.0).unwrap(), 1.0);
        assert_eq!(full.t(-1.0).unwrap(), -1.0);
    }

    mod props {
        use super::super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn mod2_idempotent_and_in_range(r in -1e6f64..1e6) {
                let m = mod2(r).unwrap().value();
                prop_assert!(m > -1.0 && m <= 1.0);
                prop_assert_eq!(mod2(m).unwrap().value(), m);
            }

            #[test]
            fn mod2_is_two_periodic(r in -1e3f64..1e3) {
                let a = mod2(r).unwrap().value();
                let b = mod2(r + 2.0).unwrap().value();
                // compare on the circle: (a - b) mod 2 is ~0
                let d = (a - b).abs();
                prop_assert!(d.min(2.0 - d) < 1e-12);
            }
        }
    }
}
