//! Multi-camera marker tracking: SLIC superpixel segmentation of painted
//! markers, DLT calibration and triangulation, a constant-velocity 3D Kalman
//! predictor, and weighted feature matching, plus a synthetic-scene harness.
//!
//! The numeric modules are generic over [`Real`] (`f32` or `f64`); the
//! aliases below fix the double-precision types the pipeline uses.

pub mod config;
pub mod geometry;
pub mod imgproc;
pub mod io;
pub mod kalman;
pub mod linalg;
pub mod matcher;
pub mod scalar;
pub mod slic;
pub mod synth;
pub mod tracker;

pub use scalar::Real;

pub type Point2D = geometry::Point2<f64>;
pub type Point3D = geometry::Point3<f64>;
pub type CameraModel = geometry::DltCamera<f64>;
pub type CalibrationSet = geometry::CalibrationSet<f64>;
pub type KalmanState = kalman::KalmanState<f64>;
pub type KalmanConfig = kalman::KalmanConfig<f64>;
pub type FeatureVector = matcher::FeatureVector<f64>;
pub type Weights = matcher::Weights<f64>;
pub type Gate = matcher::Gate<f64>;
pub type MarkerAppearance = matcher::MarkerAppearance<f64>;
pub type Trajectory = tracker::Trajectory;
pub type TrackerConfig = tracker::TrackerConfig;
