//! Shared fixtures for the criterion benchmarks.

use nio_core::{LorenzSkewProduct, NoiseKernel, ScaledKernel};

pub fn default_model() -> LorenzSkewProduct {
    LorenzSkewProduct::default()
}

pub fn uniform(xi: f64) -> ScaledKernel {
    ScaledKernel::new(NoiseKernel::uniform(), xi).expect("xi >= 0")
}
