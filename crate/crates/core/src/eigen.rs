//! Closed-form eigen-decomposition of symmetric 3x3 matrices.
//!
//! Eigenvalues come from the trigonometric solution of the characteristic
//! cubic. The eigenvector of the best-isolated eigenvalue is taken from the
//! cross products of the rows of the shifted matrix, and the remaining pair is
//! resolved by a single plane rotation inside its orthogonal complement. No
//! iteration is involved, so results are bit-reproducible.

use std::f64::consts::PI;

use crate::so3::{Matrix3, Vector3};

/// Below this normalized spread the matrix is treated as a multiple of identity.
const ISOTROPIC_TOL: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SymEigen {
    /// Ascending.
    pub values: [f64; 3],
    /// Unit eigenvectors as columns, matching `values`. Each column has its
    /// largest-magnitude component positive.
    pub vectors: Matrix3,
}

impl SymEigen {
    /// Smallest gap between consecutive eigenvalues.
    pub fn min_gap(&self) -> f64 {
        (self.values[1] - self.values[0]).min(self.values[2] - self.values[1])
    }

    pub fn vector(&self, i: usize) -> Vector3 {
        self.vectors.column(i)
    }

    /// `U diag(values) U^T`
    pub fn reconstruct(&self) -> Matrix3 {
        self.vectors * Matrix3::diag(self.values) * self.vectors.transpose()
    }
}

/// Eigen-decomposition of a symmetric matrix. Only the upper triangle is read.
pub fn sym_eigen3(m: &Matrix3) -> SymEigen {
    let a = symmetrized(m);
    let scale = a.max_abs();
    if scale == 0.0 || !scale.is_finite() {
        return SymEigen { values: [0.0; 3], vectors: Matrix3::IDENTITY };
    }
    let b = a.scale(1.0 / scale);

    let q = b.trace() / 3.0;
    let off = b.0[0][1].powi(2) + b.0[0][2].powi(2) + b.0[1][2].powi(2);
    let p2 = (b.0[0][0] - q).powi(2) + (b.0[1][1] - q).powi(2) + (b.0[2][2] - q).powi(2) + 2.0 * off;
    let p = (p2 / 6.0).sqrt();
    if p < ISOTROPIC_TOL {
        return SymEigen { values: [q * scale; 3], vectors: Matrix3::IDENTITY };
    }

    let shifted = (b - Matrix3::IDENTITY.scale(q)).scale(1.0 / p);
    let r = (shifted.det() / 2.0).clamp(-1.0, 1.0);
    let phi = r.acos() / 3.0;
    let hi = q + 2.0 * p * phi.cos();
    let lo = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let mid = 3.0 * q - hi - lo;

    let isolated = if hi - mid >= mid - lo { hi } else { lo };
    let v0 = null_vector(&(b - Matrix3::IDENTITY.scale(isolated)));
    let (u, w) = complement_basis(v0);

    // 2x2 block of b restricted to span{u, w}
    let s00 = u.dot(b * u);
    let s01 = u.dot(b * w);
    let s11 = w.dot(b * w);
    let theta = 0.5 * (2.0 * s01).atan2(s00 - s11);
    let (sn, cs) = theta.sin_cos();
    let v1 = u * cs + w * sn;
    let v2 = w * cs - u * sn;

    let mut pairs = [v0, v1, v2].map(|v| (v.dot(b * v) * scale, canonical_sign(v)));
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    SymEigen {
        values: [pairs[0].0, pairs[1].0, pairs[2].0],
        vectors: Matrix3::from_columns(pairs[0].1, pairs[1].1, pairs[2].1),
    }
}

fn symmetrized(m: &Matrix3) -> Matrix3 {
    let mut a = *m;
    a.0[1][0] = a.0[0][1];
    a.0[2][0] = a.0[0][2];
    a.0[2][1] = a.0[1][2];
    a
}

/// Unit vector spanning the kernel of a rank-2 symmetric matrix.
fn null_vector(n: &Matrix3) -> Vector3 {
    let (r0, r1, r2) = (n.row(0), n.row(1), n.row(2));
    let candidates = [r0.cross(r1), r0.cross(r2), r1.cross(r2)];
    let best =
        candidates.into_iter().max_by(|a, b| a.norm_squared().total_cmp(&b.norm_squared())).unwrap_or(Vector3::ZERO);
    best.try_normalize().unwrap_or(Vector3::unit_x())
}

/// Orthonormal pair completing `v` to a right-handed basis.
pub(crate) fn complement_basis(v: Vector3) -> (Vector3, Vector3) {
    let a = v.to_array().map(f64::abs);
    let axis = if a[0] <= a[1] && a[0] <= a[2] {
        Vector3::unit_x()
    } else if a[1] <= a[2] {
        Vector3::unit_y()
    } else {
        Vector3::unit_z()
    };
    let u = v.cross(axis).try_normalize().unwrap_or(Vector3::unit_y());
    let w = v.cross(u);
    (u, w)
}

fn canonical_sign(v: Vector3) -> Vector3 {
    let a = v.to_array();
    let mut k = 0;
    for i in 1..3 {
        if a[i].abs() > a[k].abs() {
            k = i;
        }
    }
    if a[k] < 0.0 {
        -v
    } else {
        v
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::so3::{exp_so3, rot_z};

    fn check(m: &Matrix3, tol: f64) -> SymEigen {
        let e = sym_eigen3(m);
        let u = e.vectors;
        assert!((u.transpose() * u - Matrix3::IDENTITY).max_abs() < 1e-14, "U not orthogonal");
        assert!((e.reconstruct() - *m).max_abs() < tol * m.max_abs().max(1.0), "bad reconstruction");
        assert!(e.values[0] <= e.values[1] && e.values[1] <= e.values[2]);
        e
    }

    #[test]
    fn diagonal_input() {
        let e = check(&Matrix3::diag([3.0, 1.0, 2.0]), 1e-15);
        assert_eq!(e.values, [1.0, 2.0, 3.0]);
        assert_eq!(e.vectors, Matrix3::from_columns(Vector3::unit_y(), Vector3::unit_z(), Vector3::unit_x()));
    }

    #[test]
    fn zero_and_identity() {
        let e = sym_eigen3(&Matrix3::ZERO);
        assert_eq!(e.values, [0.0; 3]);
        let e = check(&Matrix3::IDENTITY.scale(2.5), 1e-15);
        assert_eq!(e.values, [2.5; 3]);
    }

    #[test]
    fn repeated_pair() {
        let r = exp_so3(Vector3::new(0.3, -0.5, 0.9));
        let m = *r.matrix() * Matrix3::diag([1.0, 1.0, 4.0]) * r.matrix().transpose();
        let e = check(&m, 1e-14);
        assert!((e.values[0] - 1.0).abs() < 1e-14);
        assert!((e.values[1] - 1.0).abs() < 1e-14);
        assert!((e.values[2] - 4.0).abs() < 1e-14);
        let m = *r.matrix() * Matrix3::diag([-2.0, 5.0, 5.0]) * r.matrix().transpose();
        check(&m, 1e-14);
    }

    #[test]
    fn nearly_isotropic() {
        let r = rot_z(0.4).compose(&exp_so3(Vector3::new(0.1, 0.2, 0.3)));
        let m = *r.matrix() * Matrix3::diag([1.0, 1.0 + 1e-11, 1.0 + 3e-11]) * r.matrix().transpose();
        check(&m, 1e-15);
    }

    #[test]
    fn rank_deficient() {
        let a = Vector3::new(1.0, 2.0, 2.0) * (1.0 / 3.0);
        let e = check(&a.outer(a), 1e-15);
        assert!(e.values[0].abs() < 1e-15 && e.values[1].abs() < 1e-15);
        assert!((e.values[2] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn sign_convention() {
        let m = Matrix3([[2.0, -1.0, 0.0], [-1.0, 2.0, -1.0], [0.0, -1.0, 2.0]]);
        let e = check(&m, 1e-14);
        for j in 0..3 {
            let c = e.vector(j).to_array();
            let k = (0..3).max_by(|&a, &b| c[a].abs().total_cmp(&c[b].abs())).unwrap();
            assert!(c[k] > 0.0);
        }
    }
}
