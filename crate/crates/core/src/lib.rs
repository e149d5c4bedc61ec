//! Numerical laboratory for noise-induced order in fiber-contracting skew
//! products with additive mod-2 noise.

// `!(x > 0.0)` is used on purpose so that NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cocycle;
pub mod dynamics;
pub mod error;
pub mod grid;
pub mod interval;
pub mod noise;
pub mod scan;
pub mod stats;
pub mod transfer;

pub use cocycle::{LyapEstimate, OrbitConfig, OrbitSummary, SpectrumEstimate, TopExponent};
pub use dynamics::{mod2, JacobianEntries, LorenzSkewProduct, TorusCoord};
pub use error::{NioError, Result};
pub use grid::GridDensity;
pub use interval::{Interval, ZeroEnclosure};
pub use noise::{KernelKind, NoiseKernel, PeriodicConvolution, ScaledKernel};
pub use scan::{Budgets, ScanRow, TransitionReport};
pub use transfer::{StationaryResult, UlamOperator};
