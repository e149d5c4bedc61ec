//! Monte Carlo orbits of the random skew product, Birkhoff averages of the
//! base and fiber log-derivatives, and the QR Lyapunov spectrum of the
//! 2×2 derivative cocycle.
//!
//! The base coordinate is carried together with its distance to `±1`, so
//! orbits passing close to the critical point do not collapse onto the
//! floating-point fixed points at `±1` (where `a|x|^s` falls below an ulp
//! of 1). With noise the extra precision is irrelevant and is recomputed
//! from the wrapped value each step.

use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::dynamics::{wrap_mod2, LorenzSkewProduct, TorusCoord};
use crate::error::{NioError, Result};
use crate::noise::ScaledKernel;
use crate::stats::{BatchMeans, MeanEstimate, DEFAULT_BATCHES};

pub const DEFAULT_BURNIN: u64 = 10_000;
pub const MIN_STEPS: u64 = 10_000;
pub const MIN_QR_STEPS: u64 = 100_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OrbitConfig {
    pub seed: u64,
    pub n_burnin: u64,
    pub n_steps: u64,
    pub n_batches: usize,
    /// Starting point; drawn uniformly on `(-1, 1]²` from the seed when absent.
    pub initial: Option<(f64, f64)>,
}

impl OrbitConfig {
    pub fn new(seed: u64, n_steps: u64) -> Self {
        OrbitConfig {
            seed,
            n_burnin: DEFAULT_BURNIN,
            n_steps,
            n_batches: DEFAULT_BATCHES,
            initial: None,
        }
    }

    fn batch_size(&self) -> u64 {
        (self.n_steps / self.n_batches as u64).max(1)
    }
}

/// Which per-step observables an orbit feeds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Accumulators {
    pub log_dt: bool,
    pub log_dgdy: bool,
    pub log_abs_x: bool,
    pub qr: bool,
    /// Bins per axis of an optional 2-D histogram of `(x, y)`.
    pub histogram: Option<usize>,
}

impl Accumulators {
    pub fn exponents() -> Self {
        Accumulators {
            log_dt: true,
            log_dgdy: true,
            log_abs_x: true,
            qr: false,
            histogram: None,
        }
    }

    pub fn all() -> Self {
        Accumulators {
            qr: true,
            ..Self::exponents()
        }
    }
}

/// State of the Markov chain `(X_n, Y_n)` plus its private noise stream.
#[derive(Debug, Clone)]
pub struct OrbitState {
    pub x: TorusCoord,
    pub y: TorusCoord,
    pub step: u64,
    sign: f64,
    mag: f64,
    edge: f64,
    rng: ChaCha8Rng,
}

/// Outcome of advancing one step.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StepEvent {
    Normal,
    /// Noiseless orbit hit 0 or a floating fixed point; a fresh initial
    /// condition was drawn.
    Restarted,
}

impl OrbitState {
    pub fn new(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x = draw_nonzero(&mut rng);
        let y = 1.0 - 2.0 * rng.random::<f64>();
        Self::with_rng(x, y, rng)
    }

    pub fn with_initial(seed: u64, x: f64, y: f64) -> Result<Self> {
        let x = TorusCoord::new(x)?;
        let y = TorusCoord::new(y)?;
        if x.value() == 0.0 {
            return Err(NioError::SingularPoint);
        }
        Ok(Self::with_rng(
            x.value(),
            y.value(),
            ChaCha8Rng::seed_from_u64(seed),
        ))
    }

    fn with_rng(x: f64, y: f64, rng: ChaCha8Rng) -> Self {
        let mut s = OrbitState {
            x: TorusCoord::wrap(x),
            y: TorusCoord::wrap(y),
            step: 0,
            sign: 1.0,
            mag: 0.0,
            edge: 0.0,
            rng,
        };
        s.set_base_from_value();
        s
    }

    fn set_base_from_value(&mut self) {
        let v = self.x.value();
        self.sign = if v < 0.0 { -1.0 } else { 1.0 };
        self.mag = v.abs();
        self.edge = 1.0 - self.mag;
    }

    /// `log |x|`, accurate both near 0 and near `±1`.
    #[inline]
    pub fn log_abs_x(&self) -> f64 {
        if self.mag > 0.5 {
            (-self.edge).ln_1p()
        } else {
            self.mag.ln()
        }
    }

    /// Advances one step of `F_ω`.
    pub fn advance(&mut self, m: &LorenzSkewProduct, k: &ScaledKernel) {
        let _ = self.advance_event(m, k, self.log_abs_x());
    }

    #[inline]
    fn advance_event(&mut self, m: &LorenzSkewProduct, k: &ScaledKernel, lx: f64) -> StepEvent {
        let (a, s) = (m.a(), m.s());
        // p = |x|^s and 1 - p, each computed on the side where it is accurate
        let (p, one_minus_p) = if self.mag > 0.5 {
            let om = -(s * (-self.edge).ln_1p()).exp_m1();
            (1.0 - om, om)
        } else {
            let p = (s * lx).exp();
            (p, 1.0 - p)
        };
        let ap = a * p;
        let (t_mag, t_edge, t_sign) = if ap < 1.0 {
            (1.0 - ap, ap, -self.sign)
        } else {
            (ap - 1.0, (2.0 - a) + a * one_minus_p, self.sign)
        };

        let c = if self.sign > 0.0 {
            m.c_plus()
        } else {
            m.c_minus()
        };
        let g = m.lip_fiber() * self.sign * self.y.value() * (m.r() * lx).exp() + c;

        self.step += 1;
        if k.xi() == 0.0 {
            if t_mag == 0.0 || t_edge == 0.0 {
                self.restart();
                return StepEvent::Restarted;
            }
            self.sign = t_sign;
            self.mag = t_mag;
            self.edge = t_edge;
            self.x = TorusCoord::wrap(t_sign * t_mag);
            self.y = TorusCoord::wrap(g);
            return StepEvent::Normal;
        }

        let t = t_sign * t_mag;
        let mut x_new = wrap_mod2(t + k.sample(self.rng.random::<f64>()));
        let omega_y = k.sample(self.rng.random::<f64>());
        while x_new == 0.0 {
            // resample the base noise component, same law
            x_new = wrap_mod2(t + k.sample(self.rng.random::<f64>()));
        }
        self.x = TorusCoord::wrap(x_new);
        self.y = TorusCoord::wrap(g + omega_y);
        self.set_base_from_value();
        StepEvent::Normal
    }

    fn restart(&mut self) {
        let x = draw_nonzero(&mut self.rng);
        let y = 1.0 - 2.0 * self.rng.random::<f64>();
        self.x = TorusCoord::wrap(x);
        self.y = TorusCoord::wrap(y);
        self.set_base_from_value();
    }
}

fn draw_nonzero(rng: &mut ChaCha8Rng) -> f64 {
    loop {
        let x = 1.0 - 2.0 * rng.random::<f64>();
        if x != 0.0 {
            return x;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Histogram2d {
    pub bins: usize,
    pub counts: Vec<u64>,
}

impl Histogram2d {
    fn new(bins: usize) -> Self {
        Histogram2d {
            bins,
            counts: vec![0; bins * bins],
        }
    }

    #[inline]
    fn add(&mut self, x: f64, y: f64) {
        let idx = |v: f64| (((v + 1.0) * 0.5 * self.bins as f64) as usize).min(self.bins - 1);
        let (i, j) = (idx(x), idx(y));
        self.counts[i * self.bins + j] += 1;
    }
}

/// Everything a single orbit accumulated.
#[derive(Debug, Clone)]
pub struct OrbitRecord {
    pub log_dt: Option<BatchMeans>,
    pub log_dgdy: Option<BatchMeans>,
    pub log_abs_x: Option<BatchMeans>,
    pub qr_r11: Option<BatchMeans>,
    pub qr_r22: Option<BatchMeans>,
    pub histogram: Option<Histogram2d>,
    pub n_steps: u64,
    pub n_burnin: u64,
    pub restarts: u64,
}

// Unit vector carried by the QR recursion.
#[derive(Debug, Clone, Copy)]
struct QrFrame {
    q0: f64,
    q1: f64,
}

impl QrFrame {
    // One Gram–Schmidt step of J = [[T', 0], [∂xG, ∂yG]] applied to the frame,
    // in log-scaled form. Returns (log R11, log R22); R22 = det J / R11.
    #[inline]
    fn step(&mut self, m: &LorenzSkewProduct, lx: f64, x_sign: f64, y: f64) -> (f64, f64) {
        let lt = m.log_dt(lx);
        let lg = m.log_dgdy(lx);
        let lgx = if y == 0.0 {
            f64::NEG_INFINITY
        } else {
            -m.r() * std::f64::consts::LN_2 + m.r().ln() + y.abs().ln() + (m.r() - 1.0) * lx
        };
        let top = lt.max(lg).max(lgx);
        let a11 = (lt - top).exp();
        let a21 = y.signum() * (lgx - top).exp();
        let a22 = x_sign * (lg - top).exp();
        let v0 = a11 * self.q0;
        let v1 = a21 * self.q0 + a22 * self.q1;
        let nrm = v0.hypot(v1);
        let lr11 = if nrm > 0.0 && nrm.is_finite() {
            self.q0 = v0 / nrm;
            self.q1 = v1 / nrm;
            top + nrm.ln()
        } else {
            // frame collapsed below the representable range; restart along e1
            self.q0 = 1.0;
            self.q1 = 0.0;
            lt
        };
        (lr11, lt + lg - lr11)
    }
}

/// Runs one orbit, feeding the selected accumulators after `n_burnin` steps.
pub fn simulate_orbit(
    m: &LorenzSkewProduct,
    k: &ScaledKernel,
    cfg: &OrbitConfig,
    acc: &Accumulators,
) -> Result<OrbitRecord> {
    m.validate()?;
    if cfg.n_steps < MIN_STEPS {
        return Err(NioError::Precondition(format!(
            "n_steps = {} below the minimum {MIN_STEPS}",
            cfg.n_steps
        )));
    }
    if cfg.n_batches < 2 {
        return Err(NioError::invalid("n_batches", "need at least two batches"));
    }
    let mut state = match cfg.initial {
        Some((x, y)) => OrbitState::with_initial(cfg.seed, x, y)?,
        None => OrbitState::new(cfg.seed),
    };
    let mut restarts = 0;
    for _ in 0..cfg.n_burnin {
        let lx = state.log_abs_x();
        if state.advance_event(m, k, lx) == StepEvent::Restarted {
            restarts += 1;
        }
    }

    let bs = cfg.batch_size();
    let used = bs * cfg.n_batches as u64;
    let mk = |on: bool| on.then(|| BatchMeans::new(bs));
    let mut log_dt = mk(acc.log_dt);
    let mut log_dgdy = mk(acc.log_dgdy);
    let mut log_abs_x = mk(acc.log_abs_x);
    let mut qr_r11 = mk(acc.qr);
    let mut qr_r22 = mk(acc.qr);
    let mut hist = acc.histogram.map(Histogram2d::new);
    let mut frame = QrFrame { q0: 1.0, q1: 0.0 };

    for _ in 0..used {
        let lx = state.log_abs_x();
        if let Some(b) = log_dt.as_mut() {
            b.push(m.log_dt(lx));
        }
        if let Some(b) = log_dgdy.as_mut() {
            b.push(m.log_dgdy(lx));
        }
        if let Some(b) = log_abs_x.as_mut() {
            b.push(lx);
        }
        if let (Some(r1), Some(r2)) = (qr_r11.as_mut(), qr_r22.as_mut()) {
            let (l1, l2) = frame.step(m, lx, state.sign, state.y.value());
            r1.push(l1);
            r2.push(l2);
        }
        if let Some(h) = hist.as_mut() {
            h.add(state.x.value(), state.y.value());
        }
        if state.advance_event(m, k, lx) == StepEvent::Restarted {
            restarts += 1;
        }
    }

    Ok(OrbitRecord {
        log_dt,
        log_dgdy,
        log_abs_x,
        qr_r11,
        qr_r22,
        histogram: hist,
        n_steps: used,
        n_burnin: cfg.n_burnin,
        restarts,
    })
}

/// A Lyapunov exponent estimate in nats per step.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LyapEstimate {
    pub value: f64,
    pub stderr: f64,
    pub n_steps: u64,
    pub n_burnin: u64,
}

impl LyapEstimate {
    fn from_batches(b: &BatchMeans, n_burnin: u64) -> Self {
        let e = b.summary();
        LyapEstimate {
            value: e.mean,
            stderr: e.stderr,
            n_steps: b.count(),
            n_burnin,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FiberEstimate {
    pub chi1: LyapEstimate,
    /// `-r log 2 + r · mean(log|x|)` from the same orbit.
    pub identity_value: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SpectrumEstimate {
    /// Descending.
    pub chi: [f64; 2],
    pub stderr: [f64; 2],
    pub n_steps: u64,
}

impl SpectrumEstimate {
    pub fn sum(&self) -> f64 {
        self.chi[0] + self.chi[1]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum TopBranch {
    Base,
    Fiber,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TopExponent {
    pub estimate: LyapEstimate,
    pub branch: TopBranch,
    /// The two candidates are within three combined standard errors.
    pub ambiguous: bool,
}

impl TopExponent {
    pub fn select(base: LyapEstimate, fiber: LyapEstimate) -> Self {
        let (estimate, branch) = if base.value >= fiber.value {
            (base, TopBranch::Base)
        } else {
            (fiber, TopBranch::Fiber)
        };
        let ambiguous = (base.value - fiber.value).abs() < 3.0 * (base.stderr + fiber.stderr);
        TopExponent {
            estimate,
            branch,
            ambiguous,
        }
    }
}

/// All exponent estimates from one shared orbit.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct OrbitSummary {
    pub xi: f64,
    pub seed: u64,
    pub base: LyapEstimate,
    pub fiber: FiberEstimate,
    pub top: TopExponent,
    pub spectrum: Option<SpectrumEstimate>,
    /// `mean(log|T'|) + mean(log|∂yG|)`: Birkhoff average of `log|det DF|`.
    pub log_det: f64,
    pub restarts: u64,
}

impl OrbitSummary {
    pub fn from_record(m: &LorenzSkewProduct, xi: f64, seed: u64, rec: &OrbitRecord) -> Self {
        let base_bm = rec.log_dt.as_ref().expect("log|T'| accumulator");
        let fib_bm = rec.log_dgdy.as_ref().expect("log|dG/dy| accumulator");
        let base = LyapEstimate::from_batches(base_bm, rec.n_burnin);
        let chi1 = LyapEstimate::from_batches(fib_bm, rec.n_burnin);
        let mean_log_x = rec
            .log_abs_x
            .as_ref()
            .map_or(f64::NAN, |b| b.summary().mean);
        let fiber = FiberEstimate {
            chi1,
            identity_value: m.log_dgdy(mean_log_x),
        };
        let spectrum = match (&rec.qr_r11, &rec.qr_r22) {
            (Some(r1), Some(r2)) => {
                let (e1, e2) = (r1.summary(), r2.summary());
                let (hi, lo) = if e1.mean >= e2.mean {
                    (e1, e2)
                } else {
                    (e2, e1)
                };
                Some(SpectrumEstimate {
                    chi: [hi.mean, lo.mean],
                    stderr: [hi.stderr, lo.stderr],
                    n_steps: r1.count(),
                })
            }
            _ => None,
        };
        OrbitSummary {
            xi,
            seed,
            base,
            fiber,
            top: TopExponent::select(base, chi1),
            spectrum,
            log_det: base.value + chi1.value,
            restarts: rec.restarts,
        }
    }
}

/// Runs one orbit with every exponent accumulator and summarises it.
pub fn orbit_summary(
    m: &LorenzSkewProduct,
    k: &ScaledKernel,
    cfg: &OrbitConfig,
    with_qr: bool,
) -> Result<OrbitSummary> {
    if with_qr && cfg.n_steps < MIN_QR_STEPS {
        return Err(NioError::Precondition(format!(
            "QR spectrum needs n >= {MIN_QR_STEPS}, got {}",
            cfg.n_steps
        )));
    }
    let acc = if with_qr {
        Accumulators::all()
    } else {
        Accumulators::exponents()
    };
    let rec = simulate_orbit(m, k, cfg, &acc)?;
    Ok(OrbitSummary::from_record(m, k.xi(), cfg.seed, &rec))
}

/// Birkhoff average of `log|T'|` along the chain.
pub fn base_exponent_mc(
    m: &LorenzSkewProduct,
    k: &ScaledKernel,
    seed: u64,
    n: u64,
) -> Result<LyapEstimate> {
    let acc = Accumulators {
        log_dt: true,
        ..Default::default()
    };
    let rec = simulate_orbit(m, k, &OrbitConfig::new(seed, n), &acc)?;
    Ok(LyapEstimate::from_batches(
        rec.log_dt.as_ref().unwrap(),
        rec.n_burnin,
    ))
}

/// Birkhoff average of `log|∂G/∂y|`, with the `log|x|` identity check value.
pub fn fiber_exponent_mc(
    m: &LorenzSkewProduct,
    k: &ScaledKernel,
    seed: u64,
    n: u64,
) -> Result<FiberEstimate> {
    let acc = Accumulators {
        log_dgdy: true,
        log_abs_x: true,
        ..Default::default()
    };
    let rec = simulate_orbit(m, k, &OrbitConfig::new(seed, n), &acc)?;
    let chi1 = LyapEstimate::from_batches(rec.log_dgdy.as_ref().unwrap(), rec.n_burnin);
    let mean_log_x = rec.log_abs_x.as_ref().unwrap().summary().mean;
    Ok(FiberEstimate {
        chi1,
        identity_value: m.log_dgdy(mean_log_x),
    })
}

/// QR-accumulated Lyapunov spectrum of the full derivative cocycle.
pub fn lyapunov_spectrum_qr(
    m: &LorenzSkewProduct,
    k: &ScaledKernel,
    seed: u64,
    n: u64,
) -> Result<SpectrumEstimate> {
    let s = orbit_summary(m, k, &OrbitConfig::new(seed, n), true)?;
    Ok(s.spectrum.expect("QR accumulators were enabled"))
}

/// `max(λ_base, χ̂₁)` from a shared orbit.
pub fn top_exponent(
    m: &LorenzSkewProduct,
    k: &ScaledKernel,
    seed: u64,
    n: u64,
) -> Result<TopExponent> {
    Ok(orbit_summary(m, k, &OrbitConfig::new(seed, n), false)?.top)
}

/// Per-seed base exponents and their across-seed mean and standard deviation.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SeedSpread {
    pub values: Vec<f64>,
    pub mean: f64,
    pub spread: f64,
    pub restarts: u64,
}

/// Independent orbits, one per seed, evaluated in parallel and reduced in
/// seed order.
pub fn base_exponent_seeds(
    m: &LorenzSkewProduct,
    k: &ScaledKernel,
    seeds: &[u64],
    n: u64,
) -> Result<SeedSpread> {
    let acc = Accumulators {
        log_dt: true,
        ..Default::default()
    };
    let runs: Vec<OrbitRecord> = seeds
        .par_iter()
        .map(|&s| simulate_orbit(m, k, &OrbitConfig::new(s, n), &acc))
        .collect::<Result<_>>()?;
    let values: Vec<f64> = runs
        .iter()
        .map(|r| r.log_dt.as_ref().unwrap().summary().mean)
        .collect();
    let (mean, spread) = MeanEstimate::spread(&values);
    Ok(SeedSpread {
        values,
        mean,
        spread,
        restarts: runs.iter().map(|r| r.restarts).sum(),
    })
}

/// Deterministic per-stream seed derivation (SplitMix64 finaliser).
pub fn derive_seed(master: u64, stream: u64) -> u64 {
    let mut z = master ^ stream.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
