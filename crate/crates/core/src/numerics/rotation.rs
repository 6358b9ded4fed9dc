//! Rotations on SO(3): Haar sampling, the 6D Gram-Schmidt parameterization and
//! the pose type shared by the simulator, the model and the evaluation code.

use nalgebra::{Matrix3, Unit, UnitQuaternion, Vector3};
use rand::Rng;
use std::f64::consts::PI;

use crate::error::{HetemError, Result};

/// Rotation plus in-plane translation (pixels).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Pose {
    pub rot: Matrix3<f64>,
    pub t: [f64; 2],
}

impl Pose {
    pub fn new(rot: Matrix3<f64>, t: [f64; 2]) -> Self {
        Pose { rot, t }
    }

    pub fn identity() -> Self {
        Pose {
            rot: Matrix3::identity(),
            t: [0.0, 0.0],
        }
    }

    /// Checks `RᵀR = I`, `det R = 1` (both to `tol`) and `|t| ≤ t_max` per component.
    pub fn validate(&self, tol: f64, t_max: f64) -> Result<()> {
        if orthogonality_error(&self.rot) > tol || (self.rot.determinant() - 1.0).abs() > tol {
            return Err(HetemError::Parameter(format!(
                "pose rotation is not in SO(3): {}",
                self.rot
            )));
        }
        if self.t.iter().any(|c| !c.is_finite() || c.abs() > t_max) {
            return Err(HetemError::Parameter(format!(
                "translation {:?} exceeds t_max {t_max}",
                self.t
            )));
        }
        Ok(())
    }
}

/// Frobenius norm of `RᵀR - I`.
pub fn orthogonality_error(r: &Matrix3<f64>) -> f64 {
    (r.transpose() * r - Matrix3::identity()).norm()
}

pub fn is_rotation(r: &Matrix3<f64>, tol: f64) -> bool {
    orthogonality_error(r) <= tol && (r.determinant() - 1.0).abs() <= tol
}

pub fn axis_angle(axis: [f64; 3], angle: f64) -> Matrix3<f64> {
    let axis = Unit::new_normalize(Vector3::from(axis));
    UnitQuaternion::from_axis_angle(&axis, angle).to_rotation_matrix().into_inner()
}

/// Haar-uniform rotation from a uniform unit quaternion (Shoemake's method).
pub fn sample_rotation_uniform<R: Rng + ?Sized>(rng: &mut R) -> Matrix3<f64> {
    let u1: f64 = rng.random();
    let u2: f64 = rng.random();
    let u3: f64 = rng.random();
    let a = (1.0 - u1).sqrt();
    let b = u1.sqrt();
    let q = nalgebra::Quaternion::new(
        b * (2.0 * PI * u3).cos(),
        a * (2.0 * PI * u2).sin(),
        a * (2.0 * PI * u2).cos(),
        b * (2.0 * PI * u3).sin(),
    );
    UnitQuaternion::from_quaternion(q).to_rotation_matrix().into_inner()
}

/// Each component i.i.d. uniform on `[-t_max, t_max)`.
pub fn sample_translation_uniform<R: Rng + ?Sized>(rng: &mut R, t_max: f64) -> [f64; 2] {
    if t_max <= 0.0 {
        return [0.0, 0.0];
    }
    [
        rng.random_range(-t_max..t_max),
        rng.random_range(-t_max..t_max),
    ]
}

/// Gram-Schmidt map from two 3-vectors to a rotation with columns `[e1 e2 e3]`.
pub fn rot6d_to_matrix(v: &[f64; 6]) -> Result<Matrix3<f64>> {
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let na = a.norm();
    if !(na > 1e-12) {
        return Err(HetemError::Degenerate("first 6D column is zero".into()));
    }
    let e1 = a / na;
    let u = b - e1 * b.dot(&e1);
    let nu = u.norm();
    if !(nu > 1e-12 * b.norm().max(1.0)) {
        return Err(HetemError::Degenerate(
            "6D columns are zero or parallel".into(),
        ));
    }
    let e2 = u / nu;
    let e3 = e1.cross(&e2);
    Ok(Matrix3::from_columns(&[e1, e2, e3]))
}

/// Inverse of [`rot6d_to_matrix`] up to scale: the first two columns.
pub fn matrix_to_rot6d(r: &Matrix3<f64>) -> [f64; 6] {
    [
        r[(0, 0)],
        r[(1, 0)],
        r[(2, 0)],
        r[(0, 1)],
        r[(1, 1)],
        r[(2, 1)],
    ]
}

/// Rotation angle of `R` in radians.
pub fn rotation_angle(r: &Matrix3<f64>) -> f64 {
    ((r.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
}
