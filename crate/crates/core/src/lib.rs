//! Measurement-first polyline toolkit.
//!
//! Geometry and distances for short (2–4 point) polylines, exact bipartite
//! assignment, detection and segmentation losses with analytic gradients,
//! mask-to-length measurement, detection/measurement metrics and Vd:Cd based
//! grading. Numeric code is generic over [`Scalar`] (`f32` or `f64`); the
//! aliases below pin the common concrete types.

pub mod assign;
pub mod dtw;
pub mod error;
pub mod fusion;
pub mod geom;
pub mod gradcheck;
pub mod grading;
pub mod io;
pub mod losses;
pub mod maskmeasure;
pub mod metrics;
pub mod pipeline;
pub mod raster;
pub mod rng;
pub mod scalar;
pub mod synth;

pub use error::{Error, Result};
pub use geom::{ClassLabel, DistanceKind, Point, Polyline, ResamplePolicy};
pub use scalar::Scalar;

pub type Point64 = geom::Point<f64>;
pub type Point32 = geom::Point<f32>;
pub type Polyline64 = geom::Polyline<f64>;
pub type Polyline32 = geom::Polyline<f32>;
pub type CostMatrix64 = assign::CostMatrix<f64>;
pub type CostMatrix32 = assign::CostMatrix<f32>;
pub type LossValue64 = losses::LossValue<f64>;
pub type LossValue32 = losses::LossValue<f32>;
pub type FeatureGrid64 = fusion::FeatureGrid<f64>;
pub type FeatureGrid32 = fusion::FeatureGrid<f32>;
