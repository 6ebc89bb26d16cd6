//! Constant-velocity Kalman filter in object space.
//!
//! State is `(X, Y, Z, Vx, Vy, Vz)` with velocity in object units per frame.
//! The transition has no acceleration or external-force term; each axis is an
//! independent position/velocity pair, but the filter carries the full 6×6
//! covariance.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::Point3;
use crate::linalg::{symmetric_eigenvalues, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum KalmanError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("innovation covariance is singular")]
    Singular,
    #[error("invalid config: {0} must be > 0")]
    InvalidConfig(&'static str),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct KalmanConfig<T> {
    /// Process noise intensity `q`, units²/frame.
    pub process_noise: T,
    /// Measurement variance `r` per axis, units².
    pub measurement_noise: T,
    #[serde(rename = "init_pos_var")]
    pub initial_position_var: T,
    #[serde(rename = "init_vel_var")]
    pub initial_velocity_var: T,
}

impl<T: Real> Default for KalmanConfig<T> {
    fn default() -> Self {
        Self {
            process_noise: T::lit(0.05),
            measurement_noise: T::lit(0.5),
            initial_position_var: T::lit(1.0),
            initial_velocity_var: T::lit(1.0),
        }
    }
}

impl<T: Real> KalmanConfig<T> {
    pub fn validate(&self) -> Result<(), KalmanError> {
        let check = |v: T, name| {
            if v > T::zero() && v.is_finite() {
                Ok(())
            } else {
                Err(KalmanError::InvalidConfig(name))
            }
        };
        check(self.process_noise, "kalman.process_noise")?;
        check(self.measurement_noise, "kalman.measurement_noise")?;
        check(self.initial_position_var, "kalman.init_pos_var")?;
        check(self.initial_velocity_var, "kalman.init_vel_var")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct KalmanState<T> {
    pub mean: [T; 6],
    pub covariance: Matrix<T>,
    /// Predict-only steps since the last measurement update.
    pub frames_since_update: usize,
}

fn transition<T: Real>() -> Matrix<T> {
    let mut f = Matrix::identity(6);
    for axis in 0..3 {
        f[(axis, axis + 3)] = T::one();
    }
    f
}

/// Piecewise-constant white acceleration noise with unit frame step.
fn process_noise<T: Real>(q: T) -> Matrix<T> {
    let mut m = Matrix::zeros(6, 6);
    let quarter = T::lit(0.25);
    let half = T::lit(0.5);
    for axis in 0..3 {
        m[(axis, axis)] = quarter * q;
        m[(axis, axis + 3)] = half * q;
        m[(axis + 3, axis)] = half * q;
        m[(axis + 3, axis + 3)] = q;
    }
    m
}

impl<T: Real> KalmanState<T> {
    /// Starts a track at `p1` with velocity `p1 - p0` from two consecutive frames.
    pub fn init(p0: Point3<T>, p1: Point3<T>, config: &KalmanConfig<T>) -> Result<Self, KalmanError> {
        if !p0.is_finite() || !p1.is_finite() {
            return Err(KalmanError::NonFinite("initial position"));
        }
        config.validate()?;
        let pv = config.initial_position_var;
        let vv = config.initial_velocity_var;
        Ok(Self {
            mean: [p1.x, p1.y, p1.z, p1.x - p0.x, p1.y - p0.y, p1.z - p0.z],
            covariance: Matrix::from_diagonal(&[pv, pv, pv, vv, vv, vv]),
            frames_since_update: 0,
        })
    }

    pub fn position(&self) -> Point3<T> {
        Point3::new(self.mean[0], self.mean[1], self.mean[2])
    }

    pub fn velocity(&self) -> Point3<T> {
        Point3::new(self.mean[3], self.mean[4], self.mean[5])
    }

    /// Advances one frame and returns the predicted position.
    pub fn predict(&mut self, config: &KalmanConfig<T>) -> Point3<T> {
        for axis in 0..3 {
            self.mean[axis] += self.mean[axis + 3];
        }
        let f = transition::<T>();
        let mut p = f
            .matmul(&self.covariance)
            .matmul(&f.transpose())
            .add(&process_noise(config.process_noise));
        p.symmetrize();
        self.covariance = p;
        self.frames_since_update += 1;
        self.position()
    }

    /// Measurement update on the position components (Joseph form).
    pub fn update(&mut self, measurement: Point3<T>, config: &KalmanConfig<T>) -> Result<(), KalmanError> {
        if !measurement.is_finite() {
            return Err(KalmanError::NonFinite("measurement"));
        }
        let r = config.measurement_noise;
        let p = &self.covariance;
        let mut s = Matrix::zeros(3, 3);
        for i in 0..3 {
            for j in 0..3 {
                s[(i, j)] = p[(i, j)];
            }
            s[(i, i)] += r;
        }
        let s_inv = s.inverse().map_err(|_| KalmanError::Singular)?;
        // P Hᵀ is the first three columns of P.
        let mut pht = Matrix::zeros(6, 3);
        for i in 0..6 {
            for j in 0..3 {
                pht[(i, j)] = p[(i, j)];
            }
        }
        let gain = pht.matmul(&s_inv);
        let innovation = [
            measurement.x - self.mean[0],
            measurement.y - self.mean[1],
            measurement.z - self.mean[2],
        ];
        let correction = gain.matvec(&innovation);
        for (m, c) in self.mean.iter_mut().zip(correction) {
            *m += c;
        }
        let mut i_kh = Matrix::identity(6);
        for i in 0..6 {
            for j in 0..3 {
                i_kh[(i, j)] -= gain[(i, j)];
            }
        }
        let joseph = i_kh.matmul(p).matmul(&i_kh.transpose());
        let krk = gain.matmul(&gain.transpose()).scale(r);
        let mut updated = joseph.add(&krk);
        updated.symmetrize();
        self.covariance = updated;
        self.frames_since_update = 0;
        Ok(())
    }

    pub fn min_covariance_eigenvalue(&self) -> T {
        symmetric_eigenvalues(&self.covariance)[0]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> KalmanConfig<f64> {
        KalmanConfig::default()
    }

    #[test]
    fn init_examples() {
        let s = KalmanState::init(Point3::new(1.0, 2.0, 3.0), Point3::new(1.0, 2.0, 3.0), &cfg()).unwrap();
        assert_eq!(s.mean, [1.0, 2.0, 3.0, 0.0, 0.0, 0.0]);
        let s = KalmanState::init(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 0.0, 0.0), &cfg()).unwrap();
        assert_eq!(s.velocity(), Point3::new(1.0, 0.0, 0.0));
        let s = KalmanState::init(Point3::new(2.0, 3.0, 4.0), Point3::new(2.5, 3.1, 3.8), &cfg()).unwrap();
        let v = s.velocity();
        assert!((v.x - 0.5).abs() < 1e-12 && (v.y - 0.1).abs() < 1e-12 && (v.z + 0.2).abs() < 1e-12);
        assert!(KalmanState::init(Point3::new(f64::NAN, 0.0, 0.0), Point3::default(), &cfg()).is_err());
    }

    #[test]
    fn predict_examples() {
        let mut s = KalmanState::init(Point3::new(-1.0, 0.0, 0.0), Point3::new(0.0, 0.0, 0.0), &cfg()).unwrap();
        assert_eq!(s.predict(&cfg()), Point3::new(1.0, 0.0, 0.0));
        assert_eq!(s.frames_since_update, 1);

        let mut s = KalmanState::init(Point3::new(4.0, 5.0, 6.0), Point3::new(4.0, 5.0, 6.0), &cfg()).unwrap();
        assert_eq!(s.predict(&cfg()), Point3::new(4.0, 5.0, 6.0));

        let mut s = KalmanState::init(Point3::new(-1.0, -2.0, -3.0), Point3::new(0.0, 0.0, 0.0), &cfg()).unwrap();
        let mut last = Point3::default();
        for _ in 0..10 {
            last = s.predict(&cfg());
        }
        assert_eq!(last, Point3::new(10.0, 20.0, 30.0));
        assert_eq!(s.frames_since_update, 10);
    }

    #[test]
    fn zero_innovation_keeps_mean() {
        let mut s = KalmanState::init(Point3::new(0.0, 0.0, 0.0), Point3::new(1.0, 1.0, 1.0), &cfg()).unwrap();
        let p = s.predict(&cfg());
        let before = s.mean;
        s.update(p, &cfg()).unwrap();
        assert_eq!(s.mean, before);
        assert_eq!(s.frames_since_update, 0);
    }

    #[test]
    fn huge_measurement_noise_barely_moves() {
        let c = KalmanConfig {
            measurement_noise: 1e12,
            ..cfg()
        };
        let mut s = KalmanState::init(Point3::default(), Point3::default(), &c).unwrap();
        s.update(Point3::new(1.0, 0.0, 0.0), &c).unwrap();
        assert!(s.mean[0] < 1e-6 && s.mean[0] > 0.0);
    }

    #[test]
    fn scalar_gain_matches_closed_form() {
        // Position variance P, measurement r: gain P/(P+r) on the position axis.
        let c = KalmanConfig {
            measurement_noise: 3.0,
            initial_position_var: 2.0,
            initial_velocity_var: 5.0,
            ..cfg()
        };
        let mut s = KalmanState::init(Point3::default(), Point3::default(), &c).unwrap();
        s.update(Point3::new(10.0, 0.0, 0.0), &c).unwrap();
        let gain = 2.0 / (2.0 + 3.0);
        assert!((s.mean[0] - 10.0 * gain).abs() < 1e-12);
        assert!((s.covariance[(0, 0)] - (1.0 - gain) * 2.0).abs() < 1e-12);
        // No cross-covariance yet, so velocity is untouched.
        assert_eq!(s.mean[3], 0.0);
    }

    #[test]
    fn update_rejects_nan_and_contracts_trace() {
        let mut s = KalmanState::init(Point3::default(), Point3::new(1.0, 0.0, 0.0), &cfg()).unwrap();
        s.predict(&cfg());
        let t0 = s.covariance.trace();
        assert!(s.update(Point3::new(f64::NAN, 0.0, 0.0), &cfg()).is_err());
        s.update(Point3::new(2.5, 0.3, -0.2), &cfg()).unwrap();
        assert!(s.covariance.trace() <= t0);
    }

    #[test]
    fn config_validation() {
        let bad = KalmanConfig {
            process_noise: 0.0,
            ..cfg()
        };
        assert_eq!(bad.validate(), Err(KalmanError::InvalidConfig("kalman.process_noise")));
    }

    #[test]
    fn single_precision_filter() {
        let c = KalmanConfig::<f32>::default();
        let mut s = KalmanState::init(Point3::new(0.0f32, 0.0, 0.0), Point3::new(1.0, 2.0, 3.0), &c).unwrap();
        let p = s.predict(&c);
        assert_eq!(p, Point3::new(2.0, 4.0, 6.0));
        s.update(Point3::new(2.0, 4.0, 6.0), &c).unwrap();
        assert!(s.min_covariance_eigenvalue() > 0.0);
    }
}
