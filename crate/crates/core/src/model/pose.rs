//! Gram–Schmidt map from 6D vectors to rotations, with its adjoint.

use nalgebra::{Matrix3, Vector3};

/// Like `rot6d_to_matrix`, but total: near-degenerate inputs are nudged by a
/// tiny epsilon instead of failing, so a training step never aborts on them.
pub fn rot6d_to_matrix_lenient(v: &[f64; 6]) -> Matrix3<f64> {
    let (e1, e2, e3, _) = gram_schmidt(v);
    Matrix3::from_columns(&[e1, e2, e3])
}

struct Intermediates {
    a_norm: f64,
    u_norm: f64,
    b: Vector3<f64>,
}

fn gram_schmidt(v: &[f64; 6]) -> (Vector3<f64>, Vector3<f64>, Vector3<f64>, Intermediates) {
    const EPS: f64 = 1e-12;
    let a = Vector3::new(v[0], v[1], v[2]);
    let b = Vector3::new(v[3], v[4], v[5]);
    let a_norm = a.norm().max(EPS);
    let e1 = a / a_norm;
    let u = b - e1 * e1.dot(&b);
    let u_norm = u.norm().max(EPS);
    let e2 = u / u_norm;
    let e3 = e1.cross(&e2);
    (e1, e2, e3, Intermediates { a_norm, u_norm, b })
}

/// `∂loss/∂v` given `∂loss/∂R` for `R = rot6d(v)` (columns `e1, e2, e3`).
pub fn rot6d_backward(v: &[f64; 6], g_r: &Matrix3<f64>) -> [f64; 6] {
    let (e1, e2, _, it) = gram_schmidt(v);
    let g1: Vector3<f64> = g_r.column(0).into();
    let g2: Vector3<f64> = g_r.column(1).into();
    let g3: Vector3<f64> = g_r.column(2).into();
    let g_e1 = g1 + e2.cross(&g3);
    let g_e2 = g2 + g3.cross(&e1);
    let g_u = (g_e2 - e2 * e2.dot(&g_e2)) / it.u_norm;
    let g_b = g_u - e1 * e1.dot(&g_u);
    let g_e1 = g_e1 - g_u * e1.dot(&it.b) - it.b * e1.dot(&g_u);
    let g_a = (g_e1 - e1 * e1.dot(&g_e1)) / it.a_norm;
    [g_a.x, g_a.y, g_a.z, g_b.x, g_b.y, g_b.z]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::rot6d_to_matrix;

    #[test]
    fn lenient_matches_strict_on_regular_input() {
        let v = [0.3, -1.2, 0.5, 2.0, 0.1, -0.7];
        assert!((rot6d_to_matrix_lenient(&v) - rot6d_to_matrix(&v).unwrap()).norm() < 1e-14);
        let r = rot6d_to_matrix_lenient(&[0.0; 6]);
        assert!(r.iter().all(|x| x.is_finite()));
    }

    #[test]
    fn backward_matches_central_differences() {
        let v = [0.3, -1.2, 0.5, 2.0, 0.1, -0.7];
        let w = Matrix3::new(0.2, -1.0, 0.4, 0.9, 0.3, -0.5, -0.1, 0.6, 1.1);
        let f = |v: &[f64; 6]| rot6d_to_matrix_lenient(v).component_mul(&w).sum();
        let g = rot6d_backward(&v, &w);
        for i in 0..6 {
            let h = 1e-6;
            let mut p = v;
            let mut m = v;
            p[i] += h;
            m[i] -= h;
            let fd = (f(&p) - f(&m)) / (2.0 * h);
            assert!((fd - g[i]).abs() < 1e-7, "component {i}: {fd} vs {}", g[i]);
        }
    }
}
