use nio_core::cocycle::{
    base_exponent_mc, fiber_exponent_mc, lyapunov_spectrum_qr, orbit_summary, top_exponent,
    OrbitConfig,
};
use nio_core::transfer::{base_lyapunov_from_density, build_ulam, stationary_density};
use nio_core::{LorenzSkewProduct, NoiseKernel, ScaledKernel};

fn uniform(xi: f64) -> ScaledKernel {
    ScaledKernel::new(NoiseKernel::uniform(), xi).unwrap()
}

#[test]
fn monte_carlo_matches_ulam() {
    let m = LorenzSkewProduct::default();
    let op = build_ulam(&m, 4096).unwrap();
    for (i, xi) in [0.5, 1.0, 5.0].into_iter().enumerate() {
        let k = uniform(xi);
        let ulam = base_lyapunov_from_density(
            &m,
            &stationary_density(&op, &k, 1e-10, 100_000).unwrap().density,
        );
        let mc = base_exponent_mc(&m, &k, 40 + i as u64, 2_000_000).unwrap();
        assert!(
            (mc.value - ulam).abs() <= 3.0 * mc.stderr + 5e-3,
            "xi={xi}: mc {} ± {} vs ulam {ulam}",
            mc.value,
            mc.stderr
        );
    }
}

#[test]
fn zero_noise_base_exponent_is_positive() {
    let m = LorenzSkewProduct::default();
    let e = base_exponent_mc(&m, &uniform(0.0), 2, 10_000_000).unwrap();
    assert!(e.value > 3.0 * e.stderr && e.value > 0.5, "{e:?}");
    assert_eq!(e.n_steps, 10_000_000);
    assert_eq!(e.n_burnin, 10_000);
}

#[test]
fn large_noise_base_and_fiber() {
    let m = LorenzSkewProduct::default();
    let k = uniform(50.0);
    let b = base_exponent_mc(&m, &k, 3, 10_000_000).unwrap();
    assert!((b.value + 0.920558).abs() <= 3.0 * b.stderr + 0.02);
    let f = fiber_exponent_mc(&m, &k, 3, 1_000_000).unwrap();
    assert!(
        (f.chi1.value + 7.5 * (std::f64::consts::LN_2 + 1.0)).abs() <= 3.0 * f.chi1.stderr + 0.1
    );
}

#[test]
fn top_exponent_signs() {
    let m = LorenzSkewProduct::default();
    assert!(
        top_exponent(&m, &uniform(0.0), 5, 1_000_000)
            .unwrap()
            .estimate
            .value
            > 0.0
    );
    let t = top_exponent(&m, &uniform(5.0), 5, 1_000_000).unwrap();
    assert!(t.estimate.value < 0.0);
}

#[test]
fn qr_top_matches_max_at_unit_noise() {
    let m = LorenzSkewProduct::default();
    let k = uniform(1.0);
    let s = orbit_summary(&m, &k, &OrbitConfig::new(8, 1_000_000), true).unwrap();
    let sp = s.spectrum.unwrap();
    let top = s.top.estimate;
    assert!((sp.chi[0] - top.value).abs() <= 3.0 * (sp.stderr[0] + top.stderr));
    assert!((sp.sum() - (s.base.value + s.fiber.chi1.value)).abs() < 1e-10);
    assert_eq!(lyapunov_spectrum_qr(&m, &k, 8, 1_000_000).unwrap(), sp);
}
