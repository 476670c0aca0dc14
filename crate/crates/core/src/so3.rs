//! Rotation-group primitives.
//!
//! Small fixed-size value types (`Vector3`, `Matrix3`) plus the `Rotation`
//! newtype that carries the SO(3) invariant. Everything here is `Copy` and
//! immutable.

use std::fmt;
use std::ops::{Add, AddAssign, Index, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::eigen::sym_eigen3;
use crate::error::{Error, Result};

/// Entrywise tolerance for the orthogonality and determinant checks on `Rotation`.
pub const ROTATION_TOL: f64 = 1e-9;
/// Norm tolerance for `UnitVector3`.
pub const UNIT_TOL: f64 = 1e-12;
/// Skew-symmetry tolerance accepted by `vee`.
pub const SKEW_TOL: f64 = 1e-9;

const SMALL_ANGLE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(from = "[f64; 3]", into = "[f64; 3]")]
pub struct Vector3 {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Vector3 {
    pub const ZERO: Vector3 = Vector3 { x: 0.0, y: 0.0, z: 0.0 };

    pub const fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub const fn unit_x() -> Self {
        Self::new(1.0, 0.0, 0.0)
    }

    pub const fn unit_y() -> Self {
        Self::new(0.0, 1.0, 0.0)
    }

    pub const fn unit_z() -> Self {
        Self::new(0.0, 0.0, 1.0)
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.x, self.y, self.z]
    }

    pub fn dot(self, o: Vector3) -> f64 {
        self.x * o.x + self.y * o.y + self.z * o.z
    }

    pub fn cross(self, o: Vector3) -> Vector3 {
        Vector3::new(self.y * o.z - self.z * o.y, self.z * o.x - self.x * o.z, self.x * o.y - self.y * o.x)
    }

    pub fn norm_squared(self) -> f64 {
        self.dot(self)
    }

    pub fn norm(self) -> f64 {
        self.norm_squared().sqrt()
    }

    /// Returns `None` when the norm is zero or not finite.
    pub fn try_normalize(self) -> Option<Vector3> {
        let n = self.norm();
        (n > 0.0 && n.is_finite()).then(|| self * (1.0 / n))
    }

    pub fn outer(self, o: Vector3) -> Matrix3 {
        let a = self.to_array();
        let b = o.to_array();
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i] * b[j];
            }
        }
        Matrix3(m)
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn max_abs(self) -> f64 {
        self.x.abs().max(self.y.abs()).max(self.z.abs())
    }
}

impl From<[f64; 3]> for Vector3 {
    fn from(a: [f64; 3]) -> Self {
        Vector3::new(a[0], a[1], a[2])
    }
}

impl From<Vector3> for [f64; 3] {
    fn from(v: Vector3) -> Self {
        v.to_array()
    }
}

impl Index<usize> for Vector3 {
    type Output = f64;

    fn index(&self, i: usize) -> &f64 {
        match i {
            0 => &self.x,
            1 => &self.y,
            2 => &self.z,
            _ => panic!("Vector3 index {i} out of range"),
        }
    }
}

impl Add for Vector3 {
    type Output = Vector3;

    fn add(self, o: Vector3) -> Vector3 {
        Vector3::new(self.x + o.x, self.y + o.y, self.z + o.z)
    }
}

impl AddAssign for Vector3 {
    fn add_assign(&mut self, o: Vector3) {
        *self = *self + o;
    }
}

impl Sub for Vector3 {
    type Output = Vector3;

    fn sub(self, o: Vector3) -> Vector3 {
        Vector3::new(self.x - o.x, self.y - o.y, self.z - o.z)
    }
}

impl Neg for Vector3 {
    type Output = Vector3;

    fn neg(self) -> Vector3 {
        Vector3::new(-self.x, -self.y, -self.z)
    }
}

impl Mul<f64> for Vector3 {
    type Output = Vector3;

    fn mul(self, s: f64) -> Vector3 {
        Vector3::new(self.x * s, self.y * s, self.z * s)
    }
}

impl Mul<Vector3> for f64 {
    type Output = Vector3;

    fn mul(self, v: Vector3) -> Vector3 {
        v * self
    }
}

impl fmt::Display for Vector3 {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {}, {})", self.x, self.y, self.z)
    }
}

/// Row-major 3x3 matrix.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Matrix3(pub [[f64; 3]; 3]);

impl Matrix3 {
    pub const ZERO: Matrix3 = Matrix3([[0.0; 3]; 3]);
    pub const IDENTITY: Matrix3 = Matrix3([[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]]);

    pub fn from_rows(r0: Vector3, r1: Vector3, r2: Vector3) -> Self {
        Matrix3([r0.to_array(), r1.to_array(), r2.to_array()])
    }

    pub fn from_columns(c0: Vector3, c1: Vector3, c2: Vector3) -> Self {
        Matrix3::from_rows(c0, c1, c2).transpose()
    }

    pub fn diag(d: [f64; 3]) -> Self {
        let mut m = Matrix3::ZERO;
        for (i, v) in d.iter().enumerate() {
            m.0[i][i] = *v;
        }
        m
    }

    pub fn row(&self, i: usize) -> Vector3 {
        Vector3::from(self.0[i])
    }

    pub fn column(&self, j: usize) -> Vector3 {
        Vector3::new(self.0[0][j], self.0[1][j], self.0[2][j])
    }

    pub fn transpose(&self) -> Matrix3 {
        let m = &self.0;
        Matrix3([[m[0][0], m[1][0], m[2][0]], [m[0][1], m[1][1], m[2][1]], [m[0][2], m[1][2], m[2][2]]])
    }

    pub fn trace(&self) -> f64 {
        self.0[0][0] + self.0[1][1] + self.0[2][2]
    }

    pub fn det(&self) -> f64 {
        self.row(0).dot(self.row(1).cross(self.row(2)))
    }

    pub fn frobenius_norm(&self) -> f64 {
        self.0.iter().flatten().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.0.iter().flatten().fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().flatten().all(|v| v.is_finite())
    }

    pub fn scale(&self, s: f64) -> Matrix3 {
        let mut m = *self;
        m.0.iter_mut().flatten().for_each(|v| *v *= s);
        m
    }

    /// `self^T v`
    pub fn transpose_mul_vec(&self, v: Vector3) -> Vector3 {
        let m = &self.0;
        Vector3::new(
            m[0][0] * v.x + m[1][0] * v.y + m[2][0] * v.z,
            m[0][1] * v.x + m[1][1] * v.y + m[2][1] * v.z,
            m[0][2] * v.x + m[1][2] * v.y + m[2][2] * v.z,
        )
    }

    /// Largest entrywise deviation from symmetry.
    pub fn asymmetry(&self) -> f64 {
        let m = &self.0;
        (m[0][1] - m[1][0]).abs().max((m[0][2] - m[2][0]).abs()).max((m[1][2] - m[2][1]).abs())
    }

    /// Entries in row-major order.
    pub fn to_row_major(&self) -> [f64; 9] {
        let m = &self.0;
        [m[0][0], m[0][1], m[0][2], m[1][0], m[1][1], m[1][2], m[2][0], m[2][1], m[2][2]]
    }

    pub fn from_row_major(a: [f64; 9]) -> Self {
        Matrix3([[a[0], a[1], a[2]], [a[3], a[4], a[5]], [a[6], a[7], a[8]]])
    }
}

impl Add for Matrix3 {
    type Output = Matrix3;

    fn add(self, o: Matrix3) -> Matrix3 {
        let mut m = self;
        for i in 0..3 {
            for j in 0..3 {
                m.0[i][j] += o.0[i][j];
            }
        }
        m
    }
}

impl Sub for Matrix3 {
    type Output = Matrix3;

    fn sub(self, o: Matrix3) -> Matrix3 {
        self + o.scale(-1.0)
    }
}

impl Mul for Matrix3 {
    type Output = Matrix3;

    fn mul(self, o: Matrix3) -> Matrix3 {
        let a = &self.0;
        let b = &o.0;
        let mut m = [[0.0; 3]; 3];
        for (i, row) in m.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                *v = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
            }
        }
        Matrix3(m)
    }
}

impl Mul<Vector3> for Matrix3 {
    type Output = Vector3;

    fn mul(self, v: Vector3) -> Vector3 {
        Vector3::new(self.row(0).dot(v), self.row(1).dot(v), self.row(2).dot(v))
    }
}

impl Mul<f64> for Matrix3 {
    type Output = Matrix3;

    fn mul(self, s: f64) -> Matrix3 {
        self.scale(s)
    }
}

/// Skew-symmetric matrix with `hat(w) * v == w.cross(v)`.
pub fn hat(w: Vector3) -> Matrix3 {
    Matrix3([[0.0, -w.z, w.y], [w.z, 0.0, -w.x], [-w.y, w.x, 0.0]])
}

/// Inverse of [`hat`]. Rejects matrices whose symmetric part exceeds [`SKEW_TOL`].
pub fn vee(a: &Matrix3) -> Result<Vector3> {
    let m = &a.0;
    let sym = (0..3)
        .flat_map(|i| (0..3).map(move |j| (i, j)))
        .map(|(i, j)| (m[i][j] + m[j][i]).abs())
        .fold(0.0_f64, f64::max);
    if sym > SKEW_TOL || !a.is_finite() {
        return Err(Error::NonSkew(sym));
    }
    Ok(Vector3::new(m[2][1], m[0][2], m[1][0]))
}

/// Frame a direction is expressed in.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Frame {
    Global,
    Body(usize),
}

/// Unit direction tagged with its frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UnitVector3 {
    v: Vector3,
    frame: Frame,
}

impl UnitVector3 {
    /// Normalizes `v`; fails on zero or non-finite input.
    pub fn normalize(v: Vector3, frame: Frame) -> Result<Self> {
        let u = v.try_normalize().ok_or(Error::NotUnit(v.norm()))?;
        Ok(Self { v: u, frame })
    }

    /// Wraps an already-unit vector, checking the norm against [`UNIT_TOL`].
    pub fn new(v: Vector3, frame: Frame) -> Result<Self> {
        let n = v.norm();
        if (n - 1.0).abs() > UNIT_TOL || !n.is_finite() {
            return Err(Error::NotUnit(n));
        }
        Ok(Self { v, frame })
    }

    pub fn vector(&self) -> Vector3 {
        self.v
    }

    pub fn frame(&self) -> Frame {
        self.frame
    }
}

/// Element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Matrix3", into = "Matrix3")]
pub struct Rotation(Matrix3);

impl Rotation {
    pub const IDENTITY: Rotation = Rotation(Matrix3::IDENTITY);

    /// Checks orthogonality and unit determinant within [`ROTATION_TOL`].
    pub fn new(m: Matrix3) -> Result<Self> {
        let orth = (m.transpose() * m - Matrix3::IDENTITY).max_abs();
        let det = m.det();
        if !m.is_finite() || orth > ROTATION_TOL || (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotRotation { orth, det });
        }
        Ok(Rotation(m))
    }

    /// Used for products of rotations and other constructions that are
    /// orthogonal up to roundoff.
    pub(crate) fn from_matrix_unchecked(m: Matrix3) -> Self {
        Rotation(m)
    }

    pub fn matrix(&self) -> &Matrix3 {
        &self.0
    }

    pub fn transpose(&self) -> Rotation {
        Rotation(self.0.transpose())
    }

    pub fn compose(&self, o: &Rotation) -> Rotation {
        Rotation(self.0 * o.0)
    }

    pub fn apply(&self, v: Vector3) -> Vector3 {
        self.0 * v
    }

    /// `R^T v`
    pub fn apply_inverse(&self, v: Vector3) -> Vector3 {
        self.0.transpose_mul_vec(v)
    }

    /// Rotation angle in `[0, pi]`.
    pub fn angle(&self) -> f64 {
        ((self.0.trace() - 1.0) / 2.0).clamp(-1.0, 1.0).acos()
    }

    /// `||R^T R - I||_F`
    pub fn orthogonality_error(&self) -> f64 {
        (self.0.transpose() * self.0 - Matrix3::IDENTITY).frobenius_norm()
    }
}

impl TryFrom<Matrix3> for Rotation {
    type Error = Error;

    fn try_from(m: Matrix3) -> Result<Self> {
        Rotation::new(m)
    }
}

impl From<Rotation> for Matrix3 {
    fn from(r: Rotation) -> Self {
        r.0
    }
}

/// Rodrigues' formula, with a second-order series below an angle of 1e-8.
pub fn exp_so3(w: Vector3) -> Rotation {
    let theta2 = w.norm_squared();
    let theta = theta2.sqrt();
    let k = hat(w);
    let k2 = k * k;
    let (a, b) = if theta < SMALL_ANGLE {
        (1.0 - theta2 / 6.0, 0.5 - theta2 / 24.0)
    } else {
        (theta.sin() / theta, (1.0 - theta.cos()) / theta2)
    };
    Rotation(Matrix3::IDENTITY + k * a + k2 * b)
}

pub fn rot_x(a: f64) -> Rotation {
    let (s, c) = a.sin_cos();
    Rotation(Matrix3([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]]))
}

pub fn rot_y(a: f64) -> Rotation {
    let (s, c) = a.sin_cos();
    Rotation(Matrix3([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]]))
}

pub fn rot_z(a: f64) -> Rotation {
    let (s, c) = a.sin_cos();
    Rotation(Matrix3([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]]))
}

/// Orthogonal polar factor of `a`, i.e. the nearest rotation in Frobenius norm.
///
/// Computed as `A (A^T A)^{-1/2}` with the inverse square root taken through
/// the closed-form symmetric eigen-solve.
pub fn project_to_so3(a: &Matrix3) -> Result<Rotation> {
    let det = a.det();
    if !(det > 1e-12) || !a.is_finite() {
        return Err(Error::Degenerate(det));
    }
    let ata = a.transpose() * *a;
    let eig = sym_eigen3(&ata);
    let v = eig.vectors;
    let inv_sqrt = eig.values.map(|l| 1.0 / l.sqrt());
    let s = v * Matrix3::diag(inv_sqrt) * v.transpose();
    Ok(Rotation(*a * s))
}

/// `||I - R_a^T R_b||_F`, in `[0, 2 sqrt 2]`.
pub fn frobenius_error(ra: &Rotation, rb: &Rotation) -> f64 {
    (Matrix3::IDENTITY - ra.0.transpose() * rb.0).frobenius_norm()
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::{FRAC_PI_2, FRAC_PI_6, PI};

    fn close(a: &Matrix3, b: &Matrix3, tol: f64) -> bool {
        (*a - *b).max_abs() <= tol
    }

    #[test]
    fn hat_of_123() {
        let h = hat(Vector3::new(1.0, 2.0, 3.0));
        assert_eq!(h.0, [[0.0, -3.0, 2.0], [3.0, 0.0, -1.0], [-2.0, 1.0, 0.0]]);
        assert_eq!(hat(Vector3::ZERO), Matrix3::ZERO);
    }

    #[test]
    fn vee_inverts_hat() {
        let w = Vector3::new(1.0, 2.0, 3.0);
        assert_eq!(vee(&hat(w)).unwrap(), w);
        assert_eq!(vee(&Matrix3::ZERO).unwrap(), Vector3::ZERO);
    }

    #[test]
    fn vee_rejects_symmetric_part() {
        let mut m = hat(Vector3::new(1.0, 2.0, 3.0));
        m.0[0][1] += 1e-6;
        assert!(matches!(vee(&m), Err(Error::NonSkew(_))));
        assert!(matches!(vee(&Matrix3::IDENTITY), Err(Error::NonSkew(_))));
    }

    #[test]
    fn exp_identity_and_quarter_turn() {
        assert_eq!(*exp_so3(Vector3::ZERO).matrix(), Matrix3::IDENTITY);
        let r = exp_so3(Vector3::new(FRAC_PI_2, 0.0, 0.0));
        let y = r.apply(Vector3::unit_y());
        assert!((y - Vector3::unit_z()).max_abs() < 1e-15);
    }

    #[test]
    fn exp_small_angle_branch_is_continuous() {
        let w = Vector3::new(3e-9, -2e-9, 1e-9);
        let small = exp_so3(w);
        let big = exp_so3(w * 10.0);
        assert!(small.orthogonality_error() < 1e-15);
        assert!(close(small.matrix(), &(Matrix3::IDENTITY + hat(w)), 1e-16));
        assert!(big.orthogonality_error() < 1e-15);
    }

    #[test]
    fn axis_rotations() {
        assert_eq!(*rot_x(0.0).matrix(), Matrix3::IDENTITY);
        let x = rot_z(FRAC_PI_2).apply(Vector3::unit_x());
        assert!((x - Vector3::unit_y()).max_abs() < 1e-15);
        assert!(close(rot_x(FRAC_PI_6).matrix(), exp_so3(Vector3::new(FRAC_PI_6, 0.0, 0.0)).matrix(), 1e-14));
        assert!(close(rot_y(0.7).matrix(), exp_so3(Vector3::new(0.0, 0.7, 0.0)).matrix(), 1e-14));
        assert!(close(rot_z(-2.1).matrix(), exp_so3(Vector3::new(0.0, 0.0, -2.1)).matrix(), 1e-14));
    }

    #[test]
    fn rotation_new_checks_invariants() {
        assert!(Rotation::new(Matrix3::IDENTITY).is_ok());
        assert!(Rotation::new(Matrix3::diag([1.0, 1.0, -1.0])).is_err());
        assert!(Rotation::new(Matrix3::IDENTITY * 1.001).is_err());
    }

    #[test]
    fn projection_removes_scaling() {
        let r = rot_z(0.3);
        assert!(close(project_to_so3(&Matrix3::IDENTITY).unwrap().matrix(), &Matrix3::IDENTITY, 1e-15));
        let p = project_to_so3(&(*r.matrix() * 1.001)).unwrap();
        assert!(close(p.matrix(), r.matrix(), 1e-9));
    }

    #[test]
    fn projection_rejects_reflections_and_singular() {
        assert!(matches!(project_to_so3(&Matrix3::diag([1.0, 1.0, -1.0])), Err(Error::Degenerate(_))));
        assert!(project_to_so3(&Matrix3::ZERO).is_err());
    }

    #[test]
    fn frobenius_error_values() {
        let r = rot_y(0.4);
        assert_eq!(frobenius_error(&r, &r), 0.0);
        let flip = Rotation::new(Matrix3::diag([1.0, -1.0, -1.0])).unwrap();
        assert!((frobenius_error(&Rotation::IDENTITY, &flip) - 8f64.sqrt()).abs() < 1e-15);
        // entrywise: I - rot_x(a) has entries 1-c twice and +-s twice
        let a = FRAC_PI_6;
        let expected = (2.0 * (1.0 - a.cos()).powi(2) + 2.0 * a.sin().powi(2)).sqrt();
        assert!((frobenius_error(&Rotation::IDENTITY, &rot_x(a)) - expected).abs() < 1e-15);
        assert!((frobenius_error(&Rotation::IDENTITY, &rot_x(PI)) - 8f64.sqrt()).abs() < 1e-15);
    }

    #[test]
    fn unit_vector_checks_norm() {
        assert!(UnitVector3::new(Vector3::new(1.0, 1e-13, 0.0), Frame::Global).is_ok());
        assert!(UnitVector3::new(Vector3::new(1.0, 1e-5, 0.0), Frame::Global).is_err());
        assert!(UnitVector3::normalize(Vector3::ZERO, Frame::Global).is_err());
        let u = UnitVector3::normalize(Vector3::new(3.0, 4.0, 0.0), Frame::Body(2)).unwrap();
        assert_eq!(u.frame(), Frame::Body(2));
        assert!((u.vector().norm() - 1.0).abs() < 1e-15);
    }
}
