//! Eleven-parameter DLT camera model: calibration from known 3D/2D
//! correspondences, projection, and linear multi-view triangulation.

use thiserror::Error;

use crate::linalg::{least_squares, LinalgError, Matrix};
use crate::scalar::Real;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeometryError {
    #[error("underdetermined calibration: {points} points give {} equations for 11 unknowns (need at least 6 points)", points * 2)]
    Underdetermined { points: usize },
    #[error("degenerate configuration (condition estimate {condition:e})")]
    Degenerate { condition: f64 },
    #[error("point projects to infinity (denominator {denominator:e})")]
    PointAtInfinity { denominator: f64 },
    #[error("triangulation needs at least 2 views, got {0}")]
    TooFewViews(usize),
    #[error("non-finite coordinate")]
    NonFinite,
}

impl From<LinalgError> for GeometryError {
    fn from(e: LinalgError) -> Self {
        match e {
            LinalgError::RankDeficient { condition } => GeometryError::Degenerate { condition },
            LinalgError::Singular => GeometryError::Degenerate {
                condition: f64::INFINITY,
            },
            LinalgError::Dimension(_) => GeometryError::Degenerate {
                condition: f64::INFINITY,
            },
        }
    }
}

/// Image-plane pixel coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point2<T> {
    pub u: T,
    pub v: T,
}

impl<T: Real> Point2<T> {
    pub fn new(u: T, v: T) -> Self {
        Self { u, v }
    }

    pub fn distance(&self, other: &Self) -> T {
        (self.u - other.u).hypot(self.v - other.v)
    }

    pub fn is_finite(&self) -> bool {
        self.u.is_finite() && self.v.is_finite()
    }
}

/// Object-space coordinates in calibration-object units.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Point3<T> {
    pub x: T,
    pub y: T,
    pub z: T,
}

impl<T: Real> Point3<T> {
    pub fn new(x: T, y: T, z: T) -> Self {
        Self { x, y, z }
    }

    pub fn distance(&self, other: &Self) -> T {
        let (dx, dy, dz) = (self.x - other.x, self.y - other.y, self.z - other.z);
        (dx * dx + dy * dy + dz * dz).sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn to_array(self) -> [T; 3] {
        [self.x, self.y, self.z]
    }
}

/// A camera as its DLT coefficients `L1..L11`.
#[derive(Debug, Clone, PartialEq)]
pub struct DltCamera<T> {
    pub id: usize,
    coeffs: [T; 11],
}

impl<T: Real> DltCamera<T> {
    pub fn new(id: usize, coeffs: [T; 11]) -> Result<Self, GeometryError> {
        if coeffs.iter().any(|c| !c.is_finite()) {
            return Err(GeometryError::NonFinite);
        }
        Ok(Self { id, coeffs })
    }

    pub fn coeffs(&self) -> &[T; 11] {
        &self.coeffs
    }

    /// Builds the DLT model of an ideal pinhole camera at `center` looking at
    /// `target`, with `up` fixing the roll. Image `v` grows downward.
    pub fn pinhole(
        id: usize,
        center: Point3<T>,
        target: Point3<T>,
        up: Point3<T>,
        focal_px: T,
        principal: Point2<T>,
    ) -> Result<Self, GeometryError> {
        let sub = |a: [T; 3], b: [T; 3]| [a[0] - b[0], a[1] - b[1], a[2] - b[2]];
        let cross = |a: [T; 3], b: [T; 3]| {
            [
                a[1] * b[2] - a[2] * b[1],
                a[2] * b[0] - a[0] * b[2],
                a[0] * b[1] - a[1] * b[0],
            ]
        };
        let norm = |a: [T; 3]| {
            let n = (a[0] * a[0] + a[1] * a[1] + a[2] * a[2]).sqrt();
            [a[0] / n, a[1] / n, a[2] / n]
        };
        let dot = |a: [T; 3], b: [T; 3]| a[0] * b[0] + a[1] * b[1] + a[2] * b[2];
        let c = center.to_array();
        let forward = norm(sub(target.to_array(), c));
        let right = norm(cross(forward, up.to_array()));
        let down = cross(forward, right);
        // P = K [R | -R C]; rows of R are right, down, forward.
        let rows = [right, down, forward];
        let t: Vec<T> = rows.iter().map(|r| -dot(*r, c)).collect();
        let k = [
            [focal_px, T::zero(), principal.u],
            [T::zero(), focal_px, principal.v],
            [T::zero(), T::zero(), T::one()],
        ];
        let mut p = [[T::zero(); 4]; 3];
        for i in 0..3 {
            for j in 0..3 {
                for (m, row) in rows.iter().enumerate() {
                    p[i][j] += k[i][m] * row[j];
                }
            }
            for (m, tm) in t.iter().enumerate() {
                p[i][3] += k[i][m] * *tm;
            }
        }
        Self::from_projection_matrix(id, &p)
    }

    /// Scales a 3×4 projection matrix so its last entry is 1.
    pub fn from_projection_matrix(id: usize, p: &[[T; 4]; 3]) -> Result<Self, GeometryError> {
        let s = p[2][3];
        if s.abs() <= T::epsilon() {
            return Err(GeometryError::Degenerate {
                condition: f64::INFINITY,
            });
        }
        let mut coeffs = [T::zero(); 11];
        for (k, c) in coeffs.iter_mut().enumerate() {
            *c = p[k / 4][k % 4] / s;
        }
        Self::new(id, coeffs)
    }

    fn denominator(&self, p: &Point3<T>) -> T {
        let l = &self.coeffs;
        l[8] * p.x + l[9] * p.y + l[10] * p.z + T::one()
    }

    pub fn project(&self, p: &Point3<T>) -> Result<Point2<T>, GeometryError> {
        let l = &self.coeffs;
        let den = self.denominator(p);
        if !(den.abs() > T::lit(1e-12)) {
            return Err(GeometryError::PointAtInfinity {
                denominator: den.as_f64(),
            });
        }
        Ok(Point2 {
            u: (l[0] * p.x + l[1] * p.y + l[2] * p.z + l[3]) / den,
            v: (l[4] * p.x + l[5] * p.y + l[6] * p.z + l[7]) / den,
        })
    }
}

/// Known 3D/2D correspondences for one camera.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct CalibrationSet<T> {
    pub pairs: Vec<(Point3<T>, Point2<T>)>,
}

impl<T: Real> CalibrationSet<T> {
    pub fn new(pairs: Vec<(Point3<T>, Point2<T>)>) -> Self {
        Self { pairs }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationReport<T> {
    /// Reprojection error per correspondence, in pixels.
    pub errors: Vec<T>,
    pub rms: T,
    /// Condition estimate of the normalized design matrix.
    pub condition: T,
}

/// Default bound on the design-matrix condition estimate.
pub fn default_max_condition<T: Real>() -> T {
    T::one() / T::epsilon().sqrt()
}

struct Normalizer<T> {
    centroid: Vec<T>,
    scale: T,
}

impl<T: Real> Normalizer<T> {
    /// Centroid at the origin and RMS distance `sqrt(dim)`.
    fn fit(points: &[Vec<T>]) -> Self {
        let dim = points[0].len();
        let n = T::from_usize(points.len()).unwrap();
        let centroid: Vec<T> = (0..dim)
            .map(|d| points.iter().fold(T::zero(), |a, p| a + p[d]) / n)
            .collect();
        let ms = points
            .iter()
            .map(|p| p.iter().zip(&centroid).fold(T::zero(), |a, (&x, &c)| a + (x - c) * (x - c)))
            .fold(T::zero(), |a, d| a + d)
            / n;
        let scale = if ms > T::zero() {
            (T::from_usize(dim).unwrap() / ms).sqrt()
        } else {
            T::one()
        };
        Self { centroid, scale }
    }

    fn apply(&self, p: &[T]) -> Vec<T> {
        p.iter().zip(&self.centroid).map(|(&x, &c)| (x - c) * self.scale).collect()
    }
}

/// Linear DLT calibration with centroid/scale conditioning.
pub fn calibrate<T: Real>(
    id: usize,
    set: &CalibrationSet<T>,
) -> Result<(DltCamera<T>, CalibrationReport<T>), GeometryError> {
    calibrate_with_limit(id, set, default_max_condition())
}

pub fn calibrate_with_limit<T: Real>(
    id: usize,
    set: &CalibrationSet<T>,
    max_condition: T,
) -> Result<(DltCamera<T>, CalibrationReport<T>), GeometryError> {
    let n = set.pairs.len();
    if n < 6 {
        return Err(GeometryError::Underdetermined { points: n });
    }
    if set.pairs.iter().any(|(p, q)| !p.is_finite() || !q.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let world: Vec<Vec<T>> = set.pairs.iter().map(|(p, _)| p.to_array().to_vec()).collect();
    let image: Vec<Vec<T>> = set.pairs.iter().map(|(_, q)| vec![q.u, q.v]).collect();
    let n3 = Normalizer::fit(&world);
    let n2 = Normalizer::fit(&image);

    let zero = T::zero();
    let one = T::one();
    let mut rows = Vec::with_capacity(2 * n);
    let mut rhs = Vec::with_capacity(2 * n);
    for (w, i) in world.iter().zip(&image) {
        let w = n3.apply(w);
        let i = n2.apply(i);
        let (x, y, z) = (w[0], w[1], w[2]);
        let (u, v) = (i[0], i[1]);
        rows.push(vec![x, y, z, one, zero, zero, zero, zero, -u * x, -u * y, -u * z]);
        rhs.push(u);
        rows.push(vec![zero, zero, zero, zero, x, y, z, one, -v * x, -v * y, -v * z]);
        rhs.push(v);
    }
    let (l, condition) = least_squares(&Matrix::from_rows(&rows), &rhs, max_condition)?;

    // Undo the conditioning: P = T2⁻¹ · P' · T3.
    let pn = [
        [l[0], l[1], l[2], l[3]],
        [l[4], l[5], l[6], l[7]],
        [l[8], l[9], l[10], one],
    ];
    let s3 = n3.scale;
    let c3 = &n3.centroid;
    let mut pt3 = [[zero; 4]; 3];
    for r in 0..3 {
        for c in 0..3 {
            pt3[r][c] = pn[r][c] * s3;
        }
        pt3[r][3] = pn[r][3] - s3 * (pn[r][0] * c3[0] + pn[r][1] * c3[1] + pn[r][2] * c3[2]);
    }
    let inv_s2 = one / n2.scale;
    let c2 = &n2.centroid;
    let mut p = [[zero; 4]; 3];
    for c in 0..4 {
        p[0][c] = inv_s2 * pt3[0][c] + c2[0] * pt3[2][c];
        p[1][c] = inv_s2 * pt3[1][c] + c2[1] * pt3[2][c];
        p[2][c] = pt3[2][c];
    }
    let camera = DltCamera::from_projection_matrix(id, &p)?;

    let mut errors = Vec::with_capacity(n);
    for (w, q) in &set.pairs {
        errors.push(camera.project(w)?.distance(q));
    }
    let rms = rms(&errors);
    Ok((
        camera,
        CalibrationReport {
            errors,
            rms,
            condition,
        },
    ))
}

fn rms<T: Real>(values: &[T]) -> T {
    if values.is_empty() {
        return T::zero();
    }
    let n = T::from_usize(values.len()).unwrap();
    (values.iter().fold(T::zero(), |a, &e| a + e * e) / n).sqrt()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Triangulation<T> {
    pub point: Point3<T>,
    /// RMS reprojection error over the views, in pixels.
    pub residual: T,
}

/// Least-squares intersection of the viewing rays of `k ≥ 2` observations.
pub fn triangulate<T: Real>(
    observations: &[(&DltCamera<T>, Point2<T>)],
) -> Result<Triangulation<T>, GeometryError> {
    if observations.len() < 2 {
        return Err(GeometryError::TooFewViews(observations.len()));
    }
    if observations.iter().any(|(_, q)| !q.is_finite()) {
        return Err(GeometryError::NonFinite);
    }
    let mut rows = Vec::with_capacity(2 * observations.len());
    let mut rhs = Vec::with_capacity(2 * observations.len());
    for (cam, q) in observations {
        let l = cam.coeffs();
        rows.push(vec![l[0] - q.u * l[8], l[1] - q.u * l[9], l[2] - q.u * l[10]]);
        rhs.push(q.u - l[3]);
        rows.push(vec![l[4] - q.v * l[8], l[5] - q.v * l[9], l[6] - q.v * l[10]]);
        rhs.push(q.v - l[7]);
    }
    let (x, _) = least_squares(&Matrix::from_rows(&rows), &rhs, default_max_condition())?;
    let point = Point3::new(x[0], x[1], x[2]);
    let mut errors = Vec::with_capacity(observations.len());
    for (cam, q) in observations {
        errors.push(cam.project(&point)?.distance(q));
    }
    Ok(Triangulation {
        point,
        residual: rms(&errors),
    })
}
