//! Projection sampling for flow-matching models of skeletal motion.
//!
//! At every Euler step of a rectified-flow sampler, the predicted clean
//! endpoint is corrected onto a set of linear measurements `y = A x + e`
//! (hard rows exactly, soft rows in proportion to their variance) using the
//! skeleton-aware metric in [`metric`]. The crate ships analytic velocity
//! oracles, the inpainting constraint scheduler, and task builders for
//! trajectory control, 2D-to-3D lifting, loop closure and relative offsets.

// `!(x > 0.0)` is used on purpose: it also rejects NaN.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

#[cfg(test)]
macro_rules! assert_close {
    ($a:expr, $b:expr, $tol:expr) => {{
        let (a, b): (f64, f64) = ($a, $b);
        let tol: f64 = $tol;
        assert!((a - b).abs() <= tol, "{a} vs {b} (tol {tol})");
    }};
}

pub mod error;
pub mod flow;
pub mod inpaint;
pub mod io;
pub mod metric;
pub mod motion;
pub mod operators;
pub mod projector;
pub mod sampler;
pub mod synth;
pub mod tasks;
pub mod verify;

pub use error::{Error, Result};
pub use flow::{GaussianPrior, MixturePrior, VelocityOracle};
pub use metric::KinematicMetric;
pub use motion::{MotionSeq, Skeleton, VecIndex};
pub use operators::{Camera, ConstraintSystem, LinOp};
pub use projector::{project_endpoint, Projection};
pub use sampler::{sample, EtaSchedule, NoiseSource, SamplerConfig, SystemProvider};
