//! Outward-rounded interval arithmetic and a certified interval Newton
//! solver for the zero set of the large-noise base exponent
//! `λ(a, s) = ln a + ln s + 1 - s`.
//!
//! Directed rounding is emulated: every round-to-nearest result is corrected
//! by one ulp in the right direction whenever an error-free transform shows
//! the exact value lies on the other side. `ln` has no such transform and is
//! widened by two ulps each way instead (except `ln 1 = 0`).

use std::fmt;
use std::ops::{Add, Mul, Neg, Sub};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{NioError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl fmt::Display for Interval {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "[{:e}, {:e}]", self.lo, self.hi)
    }
}

#[inline]
fn two_sum(a: f64, b: f64) -> (f64, f64) {
    let s = a + b;
    let bb = s - a;
    (s, (a - (s - bb)) + (b - bb))
}

// Directed versions of a rounded-to-nearest result `r` whose exact value is
// `r + err` (only the sign of `err` matters).
#[inline]
fn down(r: f64, err: f64) -> f64 {
    if err < 0.0 {
        r.next_down()
    } else {
        r
    }
}

#[inline]
fn up(r: f64, err: f64) -> f64 {
    if err > 0.0 {
        r.next_up()
    } else {
        r
    }
}

// Products and quotients in the subnormal range lose the exactness of the
// FMA residual, so those are widened unconditionally.
const TINY: f64 = 1e-290;

#[inline]
fn mul_down(a: f64, b: f64) -> f64 {
    let p = a * b;
    if p.abs() < TINY {
        return p.next_down();
    }
    down(p, a.mul_add(b, -p))
}

#[inline]
fn mul_up(a: f64, b: f64) -> f64 {
    let p = a * b;
    if p.abs() < TINY {
        return p.next_up();
    }
    up(p, a.mul_add(b, -p))
}

// a / b - q has the sign of (a - q b) / b.
#[inline]
fn div_down(a: f64, b: f64) -> f64 {
    let q = a / b;
    if q.abs() < TINY || !q.is_finite() {
        return q.next_down();
    }
    let r = (-q).mul_add(b, a);
    down(q, r * b.signum())
}

#[inline]
fn div_up(a: f64, b: f64) -> f64 {
    let q = a / b;
    if q.abs() < TINY || !q.is_finite() {
        return q.next_up();
    }
    let r = (-q).mul_add(b, a);
    up(q, r * b.signum())
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self> {
        if lo.is_nan() || hi.is_nan() || lo > hi {
            return Err(NioError::Domain(format!("invalid interval [{lo}, {hi}]")));
        }
        Ok(Interval { lo, hi })
    }

    pub fn point(x: f64) -> Self {
        Interval { lo: x, hi: x }
    }

    #[inline]
    pub fn lo(&self) -> f64 {
        self.lo
    }

    #[inline]
    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn mid(&self) -> f64 {
        let m = 0.5 * self.lo + 0.5 * self.hi;
        m.clamp(self.lo, self.hi)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn contains_zero(&self) -> bool {
        self.contains(0.0)
    }

    pub fn subset_of(&self, other: &Interval) -> bool {
        other.lo <= self.lo && self.hi <= other.hi
    }

    pub fn intersect(&self, other: &Interval) -> Option<Interval> {
        let lo = self.lo.max(other.lo);
        let hi = self.hi.min(other.hi);
        (lo <= hi).then_some(Interval { lo, hi })
    }

    pub fn hull(&self, other: &Interval) -> Interval {
        Interval {
            lo: self.lo.min(other.lo),
            hi: self.hi.max(other.hi),
        }
    }

    /// Splits at the midpoint.
    pub fn bisect(&self) -> (Interval, Interval) {
        let m = self.mid();
        (
            Interval { lo: self.lo, hi: m },
            Interval { lo: m, hi: self.hi },
        )
    }

    /// Widens each endpoint outward by `eps`, rounding outward.
    pub fn inflate(&self, eps: f64) -> Interval {
        let (l, el) = two_sum(self.lo, -eps);
        let (h, eh) = two_sum(self.hi, eps);
        Interval {
            lo: down(l, el),
            hi: up(h, eh),
        }
    }

    pub fn checked_div(self, rhs: Interval) -> Result<Interval> {
        if rhs.contains_zero() {
            return Err(NioError::Domain(format!(
                "division by interval {rhs} containing 0"
            )));
        }
        let c = [
            (self.lo, rhs.lo),
            (self.lo, rhs.hi),
            (self.hi, rhs.lo),
            (self.hi, rhs.hi),
        ];
        let lo = c
            .iter()
            .map(|&(a, b)| div_down(a, b))
            .fold(f64::INFINITY, f64::min);
        let hi = c
            .iter()
            .map(|&(a, b)| div_up(a, b))
            .fold(f64::NEG_INFINITY, f64::max);
        Ok(Interval { lo, hi })
    }

    pub fn recip(self) -> Result<Interval> {
        Interval::point(1.0).checked_div(self)
    }

    /// Enclosure of `ln` on a positive interval.
    pub fn ln(self) -> Result<Interval> {
        if self.lo <= 0.0 {
            return Err(NioError::Domain(format!(
                "ln of interval {self} not positive"
            )));
        }
        Ok(Interval {
            lo: ln_down(self.lo),
            hi: ln_up(self.hi),
        })
    }
}

fn ln_down(x: f64) -> f64 {
    if x == 1.0 {
        return 0.0;
    }
    let l = x.ln();
    if l.is_infinite() {
        return l;
    }
    l.next_down().next_down()
}

fn ln_up(x: f64) -> f64 {
    if x == 1.0 {
        return 0.0;
    }
    let l = x.ln();
    if l.is_infinite() {
        return l;
    }
    l.next_up().next_up()
}

impl Add for Interval {
    type Output = Interval;
    fn add(self, rhs: Interval) -> Interval {
        let (l, el) = two_sum(self.lo, rhs.lo);
        let (h, eh) = two_sum(self.hi, rhs.hi);
        Interval {
            lo: down(l, el),
            hi: up(h, eh),
        }
    }
}

impl Neg for Interval {
    type Output = Interval;
    fn neg(self) -> Interval {
        Interval {
            lo: -self.hi,
            hi: -self.lo,
        }
    }
}

impl Sub for Interval {
    type Output = Interval;
    #[allow(clippy::suspicious_arithmetic_impl)]
    fn sub(self, rhs: Interval) -> Interval {
        self + (-rhs)
    }
}

impl Mul for Interval {
    type Output = Interval;
    fn mul(self, rhs: Interval) -> Interval {
        let c = [
            (self.lo, rhs.lo),
            (self.lo, rhs.hi),
            (self.hi, rhs.lo),
            (self.hi, rhs.hi),
        ];
        let lo = c
            .iter()
            .map(|&(a, b)| mul_down(a, b))
            .fold(f64::INFINITY, f64::min);
        let hi = c
            .iter()
            .map(|&(a, b)| mul_up(a, b))
            .fold(f64::NEG_INFINITY, f64::max);
        Interval { lo, hi }
    }
}

/// `ln a + ln s + 1 - s`, the base exponent of the flat stationary density.
pub fn lambda_large_noise(a: f64, s: f64) -> f64 {
    a.ln() + s.ln() + 1.0 - s
}

/// Natural interval extension of [`lambda_large_noise`].
pub fn lambda_enclosure(a: Interval, s: Interval) -> Result<Interval> {
    Ok(a.ln()? + s.ln()? + Interval::point(1.0) - s)
}

/// Enclosure of `∂λ/∂s = 1/s - 1` over `s`.
pub fn lambda_derivative(s: Interval) -> Result<Interval> {
    Ok(s.recip()? - Interval::point(1.0))
}

// λ(a, ·) is decreasing for s >= 1, so its range over S sits between the
// endpoint values; tighter than the natural extension on wide boxes.
fn monotone_range(a: Interval, s: Interval) -> Result<Interval> {
    let at_lo = lambda_enclosure(a, Interval::point(s.lo))?;
    let at_hi = lambda_enclosure(a, Interval::point(s.hi))?;
    Ok(Interval {
        lo: at_hi.lo,
        hi: at_lo.hi,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ZeroEnclosure {
    pub a: f64,
    pub s_star: Interval,
    pub newton_steps: usize,
    /// Both endpoint signs of `λ(a, ·)` are rigorous and opposite and the
    /// derivative is negative on the enclosure: exactly one root inside.
    pub certified: bool,
}

pub const DEFAULT_WIDTH_TOL: f64 = 1e-8;
const MAX_BISECT_DEPTH: usize = 8;
const MAX_NEWTON_STEPS: usize = 64;

enum NewtonOutcome {
    Converged(Interval, usize),
    Empty(usize),
    NeedsSplit(Interval, usize),
}

fn newton_contract(
    a: Interval,
    mut s: Interval,
    tol: f64,
    trace: &mut Vec<f64>,
) -> Result<NewtonOutcome> {
    let mut steps = 0;
    trace.push(s.width());
    while steps < MAX_NEWTON_STEPS && s.width() > tol {
        let d = lambda_derivative(s)?;
        if d.contains_zero() {
            return Ok(NewtonOutcome::NeedsSplit(s, steps));
        }
        let m = Interval::point(s.mid());
        let fm = lambda_enclosure(a, m)?;
        let n = m - fm.checked_div(d)?;
        steps += 1;
        let Some(next) = n.intersect(&s) else {
            return Ok(NewtonOutcome::Empty(steps));
        };
        trace.push(next.width());
        if next == s {
            break;
        }
        s = next;
    }
    Ok(NewtonOutcome::Converged(s, steps))
}

fn certify(a: Interval, s: Interval) -> Result<bool> {
    if s.lo <= 0.0 {
        return Ok(false);
    }
    let d = lambda_derivative(s)?;
    let f_lo = lambda_enclosure(a, Interval::point(s.lo))?;
    let f_hi = lambda_enclosure(a, Interval::point(s.hi))?;
    Ok(d.hi < 0.0 && f_lo.lo > 0.0 && f_hi.hi < 0.0)
}

/// Encloses the root in `s` of `λ(a, s) = 0` within `bracket`.
///
/// Interval Newton with bisection where the derivative enclosure straddles
/// zero, followed by epsilon-inflation until the endpoint signs are rigorous.
/// A tangential root (a = 1, s = 1) yields an enclosure with
/// `certified == false`.
pub fn interval_newton_root(a: f64, bracket: Interval, width_tol: f64) -> Result<ZeroEnclosure> {
    newton_root_traced(a, bracket, width_tol, &mut Vec::new())
}

pub(crate) fn newton_root_traced(
    a: f64,
    bracket: Interval,
    width_tol: f64,
    trace: &mut Vec<f64>,
) -> Result<ZeroEnclosure> {
    if !(a > 0.0 && a <= 2.0) {
        return Err(NioError::invalid("a", format!("{a} outside (0, 2]")));
    }
    if !(width_tol > 0.0) {
        return Err(NioError::invalid("width_tol", "must be positive"));
    }
    if bracket.lo < 1.0 || !bracket.hi.is_finite() {
        return Err(NioError::Domain(format!(
            "bracket {bracket} must lie in [1, inf)"
        )));
    }
    let ai = Interval::point(a);
    let range = monotone_range(ai, bracket)?;
    if !range.contains_zero() {
        return Err(NioError::NoRoot {
            lo: bracket.lo,
            hi: bracket.hi,
        });
    }

    let mut pending = vec![(bracket, 0usize)];
    let mut found: Vec<(Interval, usize)> = Vec::new();
    let mut unresolved: Option<Interval> = None;
    let mut total_steps = 0;
    while let Some((s, depth)) = pending.pop() {
        match newton_contract(ai, s, width_tol, trace)? {
            NewtonOutcome::Converged(enc, k) => {
                total_steps += k;
                found.push((enc, k));
            }
            NewtonOutcome::Empty(k) => total_steps += k,
            NewtonOutcome::NeedsSplit(s, k) => {
                total_steps += k;
                if depth >= MAX_BISECT_DEPTH {
                    unresolved = Some(unresolved.map_or(s, |u| u.hull(&s)));
                    continue;
                }
                let (l, r) = s.bisect();
                // push right first so the left half is explored first
                for half in [r, l] {
                    if monotone_range(ai, half)?.contains_zero() {
                        pending.push((half, depth + 1));
                    }
                }
            }
        }
    }

    let hull = found
        .iter()
        .map(|(e, _)| *e)
        .chain(unresolved)
        .reduce(|x, y| x.hull(&y));
    let Some(mut enc) = hull else {
        return Err(NioError::NoRoot {
            lo: bracket.lo,
            hi: bracket.hi,
        });
    };
    if unresolved.is_some() || found.len() != 1 {
        return Ok(ZeroEnclosure {
            a,
            s_star: enc,
            newton_steps: total_steps,
            certified: false,
        });
    }

    let mut certified = certify(ai, enc)?;
    let mut eps = f64::EPSILON * enc.mid().abs();
    while !certified {
        let wider = enc.inflate(eps);
        if wider.width() > width_tol || wider.lo < 1.0 {
            break;
        }
        enc = wider;
        certified = certify(ai, enc)?;
        eps *= 2.0;
    }
    Ok(ZeroEnclosure {
        a,
        s_star: enc,
        newton_steps: total_steps,
        certified,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepOptions {
    pub a_lo: f64,
    pub a_hi: f64,
    pub n_points: usize,
    pub width_tol: f64,
    /// Sequential sweep seeding each bracket from the previous enclosure;
    /// otherwise every point starts from the full bracket in parallel.
    pub warm_start: bool,
}

impl Default for SweepOptions {
    fn default() -> Self {
        SweepOptions {
            a_lo: 1.00781,
            a_hi: 2.0,
            n_points: 128,
            width_tol: DEFAULT_WIDTH_TOL,
            warm_start: true,
        }
    }
}

/// Full bracket used for a cold start.
pub fn default_bracket(a: f64) -> Interval {
    if a >= 2.0 {
        Interval { lo: 2.0, hi: 4.0 }
    } else {
        Interval { lo: 1.0, hi: 4.0 }
    }
}

/// The `n_points` equally spaced `a` values of a sweep; a degenerate range
/// gives a single point.
pub fn sweep_grid(opts: &SweepOptions) -> Vec<f64> {
    let n = opts.n_points;
    if n == 1 || opts.a_lo == opts.a_hi {
        return vec![opts.a_lo];
    }
    (0..n)
        .map(|i| {
            if i == n - 1 {
                opts.a_hi
            } else {
                opts.a_lo + (opts.a_hi - opts.a_lo) * i as f64 / (n - 1) as f64
            }
        })
        .collect()
}

pub fn zero_set_sweep(opts: &SweepOptions) -> Result<Vec<ZeroEnclosure>> {
    if opts.n_points == 0 {
        return Err(NioError::invalid("n_points", "must be at least 1"));
    }
    if !(opts.a_lo > 0.0 && opts.a_lo <= opts.a_hi && opts.a_hi <= 2.0) {
        return Err(NioError::invalid(
            "a_range",
            format!(
                "[{}, {}] must satisfy 0 < lo <= hi <= 2",
                opts.a_lo, opts.a_hi
            ),
        ));
    }
    let grid = sweep_grid(opts);
    if !opts.warm_start {
        return grid
            .par_iter()
            .map(|&a| interval_newton_root(a, default_bracket(a), opts.width_tol))
            .collect();
    }
    let mut out = Vec::with_capacity(grid.len());
    let mut prev: Option<Interval> = None;
    for &a in &grid {
        let bracket = match prev {
            Some(p) => Interval {
                lo: (p.mid() - 0.5).max(1.0),
                hi: p.mid() + 0.5,
            },
            None => default_bracket(a),
        };
        let enc = match interval_newton_root(a, bracket, opts.width_tol) {
            Ok(e) if e.certified => e,
            // warm bracket missed or was inconclusive: fall back to a cold start
            _ => interval_newton_root(a, default_bracket(a), opts.width_tol)?,
        };
        prev = Some(enc.s_star);
        out.push(enc);
    }
    Ok(out)
}

/// Writes the `a,s_lo,s_hi,steps,certified` CSV body.
pub fn write_zeroset_csv<W: std::io::Write>(
    rows: &[ZeroEnclosure],
    mut w: W,
) -> std::io::Result<()> {
    writeln!(w, "a,s_lo,s_hi,steps,certified")?;
    for r in rows {
        writeln!(
            w,
            "{:.16e},{:.16e},{:.16e},{},{}",
            r.a, r.s_star.lo, r.s_star.hi, r.newton_steps, r.certified
        )?;
    }
    Ok(())
}
