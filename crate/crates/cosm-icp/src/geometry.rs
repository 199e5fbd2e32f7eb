//! Core geometric types: 3D points, point clouds, rigid transforms and
//! Euler poses.
//!
//! All math is done in `f64`; transforms are stored as a rotation matrix plus
//! a translation vector, with a homogeneous 4x4 view available at the I/O
//! boundary only.

use nalgebra::{Matrix3, Matrix4, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Frobenius tolerance for rotation orthonormality and determinant checks.
pub const ROTATION_TOL: f64 = 1e-9;

#[derive(Debug, Error)]
pub enum TransformError {
    #[error("rotation is not orthonormal: ||R^T R - I||_F = {0:.3e}")]
    NotOrthonormal(f64),
    #[error("rotation is not proper: det R = {0}")]
    ImproperRotation(f64),
    #[error("transform contains non-finite entries")]
    NonFinite,
}

/// A single 3D point with finite coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Point3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Point3 {
    /// Creates a point. Panics if any coordinate is NaN or infinite.
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        assert!(
            x.is_finite() && y.is_finite() && z.is_finite(),
            "point coordinates must be finite"
        );
        Self { x, y, z }
    }

    pub fn to_vector(self) -> Vector3<f64> {
        Vector3::new(self.x, self.y, self.z)
    }

    pub fn from_vector(v: Vector3<f64>) -> Self {
        Self::new(v.x, v.y, v.z)
    }

    /// Squared Euclidean distance to another point.
    pub fn dist_sq(self, other: Point3) -> f64 {
        let dx = self.x - other.x;
        let dy = self.y - other.y;
        let dz = self.z - other.z;
        dx * dx + dy * dy + dz * dz
    }
}

impl From<[f64; 3]> for Point3 {
    fn from(c: [f64; 3]) -> Self {
        Self::new(c[0], c[1], c[2])
    }
}

/// An ordered sequence of points. Index order is stable: operations that do
/// not explicitly reorder (transforming, outlier injection) preserve it.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct PointCloud {
    points: Vec<Point3>,
}

impl PointCloud {
    pub fn new(points: Vec<Point3>) -> Self {
        Self { points }
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn iter(&self) -> std::slice::Iter<'_, Point3> {
        self.points.iter()
    }

    pub fn push(&mut self, p: Point3) {
        self.points.push(p);
    }

    /// Arithmetic mean of all points; `None` for an empty cloud.
    pub fn centroid(&self) -> Option<Vector3<f64>> {
        if self.points.is_empty() {
            return None;
        }
        let mut sum = Vector3::zeros();
        for p in &self.points {
            sum += p.to_vector();
        }
        Some(sum / self.points.len() as f64)
    }

    /// Axis-aligned bounding box as (min corner, max corner).
    pub fn bounds(&self) -> Option<(Point3, Point3)> {
        let first = *self.points.first()?;
        let mut min = first;
        let mut max = first;
        for p in &self.points[1..] {
            min.x = min.x.min(p.x);
            min.y = min.y.min(p.y);
            min.z = min.z.min(p.z);
            max.x = max.x.max(p.x);
            max.y = max.y.max(p.y);
            max.z = max.z.max(p.z);
        }
        Some((min, max))
    }

    /// Length of the bounding-box diagonal; 0 for empty or single-point clouds.
    pub fn bounding_diagonal(&self) -> f64 {
        match self.bounds() {
            Some((min, max)) => max.dist_sq(min).sqrt(),
            None => 0.0,
        }
    }
}

impl FromIterator<Point3> for PointCloud {
    fn from_iter<I: IntoIterator<Item = Point3>>(iter: I) -> Self {
        Self::new(iter.into_iter().collect())
    }
}

impl<'a> IntoIterator for &'a PointCloud {
    type Item = &'a Point3;
    type IntoIter = std::slice::Iter<'a, Point3>;
    fn into_iter(self) -> Self::IntoIter {
        self.points.iter()
    }
}

/// A proper rigid transform: orthonormal rotation with determinant +1 plus a
/// translation. Validated on construction and immutable afterwards.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RigidTransform {
    rotation: Matrix3<f64>,
    translation: Vector3<f64>,
}

impl RigidTransform {
    pub fn identity() -> Self {
        Self {
            rotation: Matrix3::identity(),
            translation: Vector3::zeros(),
        }
    }

    /// Builds a transform, rejecting rotations that are not orthonormal
    /// proper rotations within [`ROTATION_TOL`].
    pub fn new(rotation: Matrix3<f64>, translation: Vector3<f64>) -> Result<Self, TransformError> {
        if !rotation.iter().all(|v| v.is_finite()) || !translation.iter().all(|v| v.is_finite()) {
            return Err(TransformError::NonFinite);
        }
        let ortho_err = (rotation.transpose() * rotation - Matrix3::identity()).norm();
        if ortho_err > ROTATION_TOL {
            return Err(TransformError::NotOrthonormal(ortho_err));
        }
        let det = rotation.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(TransformError::ImproperRotation(det));
        }
        Ok(Self {
            rotation,
            translation,
        })
    }

    pub fn rotation(&self) -> &Matrix3<f64> {
        &self.rotation
    }

    pub fn translation(&self) -> &Vector3<f64> {
        &self.translation
    }

    /// Applies `self` after `other`: the result maps `p` to `self(other(p))`.
    pub fn compose(&self, other: &RigidTransform) -> RigidTransform {
        let rotation = self.rotation * other.rotation;
        let translation = self.rotation * other.translation + self.translation;
        RigidTransform::new(rotation, translation)
            .expect("composition of valid rigid transforms stays rigid")
    }

    pub fn inverse(&self) -> RigidTransform {
        let rotation = self.rotation.transpose();
        let translation = -(rotation * self.translation);
        RigidTransform::new(rotation, translation)
            .expect("inverse of a valid rigid transform stays rigid")
    }

    pub fn apply_point(&self, p: Point3) -> Point3 {
        Point3::from_vector(self.rotation * p.to_vector() + self.translation)
    }

    /// Transforms every point, preserving order and count.
    pub fn apply(&self, cloud: &PointCloud) -> PointCloud {
        cloud.iter().map(|&p| self.apply_point(p)).collect()
    }

    /// Homogeneous 4x4 view for printing and interop.
    pub fn to_homogeneous(&self) -> Matrix4<f64> {
        let mut m = Matrix4::identity();
        m.fixed_view_mut::<3, 3>(0, 0).copy_from(&self.rotation);
        m.fixed_view_mut::<3, 1>(0, 3).copy_from(&self.translation);
        m
    }
}

/// Roll/pitch/yaw angles (radians) plus a translation, the parameterization
/// used by the random-transform generator and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EulerPose {
    pub roll: f64,
    pub pitch: f64,
    pub yaw: f64,
    pub tx: f64,
    pub ty: f64,
    pub tz: f64,
}

impl EulerPose {
    pub fn new(roll: f64, pitch: f64, yaw: f64, tx: f64, ty: f64, tz: f64) -> Self {
        let pose = Self {
            roll,
            pitch,
            yaw,
            tx,
            ty,
            tz,
        };
        assert!(pose.is_finite(), "pose fields must be finite");
        pose
    }

    pub fn identity() -> Self {
        Self::new(0.0, 0.0, 0.0, 0.0, 0.0, 0.0)
    }

    pub fn is_finite(&self) -> bool {
        [self.roll, self.pitch, self.yaw, self.tx, self.ty, self.tz]
            .iter()
            .all(|v| v.is_finite())
    }

    /// Converts to a rigid transform with the fixed-axis convention
    /// R = Rz(yaw) * Ry(pitch) * Rx(roll). Deterministic: equal poses yield
    /// bit-identical matrices.
    pub fn to_transform(&self) -> RigidTransform {
        let (sr, cr) = self.roll.sin_cos();
        let (sp, cp) = self.pitch.sin_cos();
        let (sy, cy) = self.yaw.sin_cos();
        let rx = Matrix3::new(1.0, 0.0, 0.0, 0.0, cr, -sr, 0.0, sr, cr);
        let ry = Matrix3::new(cp, 0.0, sp, 0.0, 1.0, 0.0, -sp, 0.0, cp);
        let rz = Matrix3::new(cy, -sy, 0.0, sy, cy, 0.0, 0.0, 0.0, 1.0);
        let rotation = rz * ry * rx;
        let translation = Vector3::new(self.tx, self.ty, self.tz);
        RigidTransform::new(rotation, translation)
            .expect("euler angles always produce a proper rotation")
    }
}

/// Geodesic angle (radians) between two rotations.
///
/// Uses `atan2(|skew part|, (trace - 1) / 2)` rather than a bare `acos` of
/// the trace: near zero the acos form loses half the significant digits,
/// while this form resolves angles down to machine precision.
pub fn rotation_angle_between(a: &Matrix3<f64>, b: &Matrix3<f64>) -> f64 {
    let m = a.transpose() * b;
    let cos = (m.trace() - 1.0) / 2.0;
    let sin = Vector3::new(
        m[(2, 1)] - m[(1, 2)],
        m[(0, 2)] - m[(2, 0)],
        m[(1, 0)] - m[(0, 1)],
    )
    .norm()
        / 2.0;
    sin.atan2(cos)
}
