//! Rotation-group primitives.
//!
//! Everything downstream (Fisher distributions, skinning, Gaussian
//! orientation) consumes the types here. Matrices are `nalgebra::Matrix3<f64>`;
//! a [`RotationMatrix`] is a validated newtype around one.

use std::f64::consts::PI;
use std::ops::Mul;

use nalgebra::{Matrix3, Vector3};
use rand::Rng;

use crate::error::{Error, Result};

pub type Mat3 = Matrix3<f64>;
pub type Vec3 = Vector3<f64>;

const ROTATION_TOL: f64 = 1e-9;
const JACOBI_TOL: f64 = 1e-12;
const JACOBI_MAX_SWEEPS: usize = 60;

/// Skew-symmetric matrix with `hat(v) * u == v.cross(u)`.
pub fn hat(v: &Vec3) -> Mat3 {
    Mat3::new(0.0, -v.z, v.y, v.z, 0.0, -v.x, -v.y, v.x, 0.0)
}

/// Inverse of [`hat`] on the skew part of `m`.
pub fn vee(m: &Mat3) -> Vec3 {
    Vec3::new(m[(2, 1)] - m[(1, 2)], m[(0, 2)] - m[(2, 0)], m[(1, 0)] - m[(0, 1)]) * 0.5
}

pub fn is_finite(m: &Mat3) -> bool {
    m.iter().all(|x| x.is_finite())
}

/// An element of SO(3).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RotationMatrix(Mat3);

impl RotationMatrix {
    /// Validates orthonormality and unit determinant to 1e-9.
    pub fn new(m: Mat3) -> Result<Self> {
        if !is_finite(&m) {
            return Err(Error::NonFinite("rotation matrix"));
        }
        let ortho = (m.transpose() * m - Mat3::identity()).abs().max();
        if ortho > ROTATION_TOL {
            return Err(Error::NotRotation(format!("|RᵀR - I| = {ortho:e}")));
        }
        let det = m.determinant();
        if (det - 1.0).abs() > ROTATION_TOL {
            return Err(Error::NotRotation(format!("det = {det}")));
        }
        Ok(Self(m))
    }

    /// Wraps `m` without checking. Callers guarantee `m ∈ SO(3)`.
    pub fn new_unchecked(m: Mat3) -> Self {
        Self(m)
    }

    /// Closest rotation to an arbitrary matrix in the Frobenius sense.
    pub fn nearest(m: &Mat3) -> Self {
        let svd = proper_svd(m);
        Self(svd.u.0 * svd.v.0.transpose())
    }

    pub fn identity() -> Self {
        Self(Mat3::identity())
    }

    pub fn about_x(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(1.0, 0.0, 0.0, 0.0, c, -s, 0.0, s, c))
    }

    pub fn about_y(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, 0.0, s, 0.0, 1.0, 0.0, -s, 0.0, c))
    }

    pub fn about_z(angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self(Mat3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0))
    }

    pub fn matrix(&self) -> &Mat3 {
        &self.0
    }

    pub fn into_inner(self) -> Mat3 {
        self.0
    }

    pub fn inverse(&self) -> Self {
        Self(self.0.transpose())
    }

    pub fn rotate(&self, v: &Vec3) -> Vec3 {
        self.0 * v
    }

    /// Unit quaternion `(w, x, y, z)` with `w >= 0`.
    pub fn to_quaternion(&self) -> [f64; 4] {
        let m = &self.0;
        let tr = m.trace();
        let mut q = if tr > 0.0 {
            let s = (tr + 1.0).sqrt() * 2.0;
            [0.25 * s, (m[(2, 1)] - m[(1, 2)]) / s, (m[(0, 2)] - m[(2, 0)]) / s, (m[(1, 0)] - m[(0, 1)]) / s]
        } else if m[(0, 0)] > m[(1, 1)] && m[(0, 0)] > m[(2, 2)] {
            let s = (1.0 + m[(0, 0)] - m[(1, 1)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(2, 1)] - m[(1, 2)]) / s, 0.25 * s, (m[(0, 1)] + m[(1, 0)]) / s, (m[(0, 2)] + m[(2, 0)]) / s]
        } else if m[(1, 1)] > m[(2, 2)] {
            let s = (1.0 + m[(1, 1)] - m[(0, 0)] - m[(2, 2)]).sqrt() * 2.0;
            [(m[(0, 2)] - m[(2, 0)]) / s, (m[(0, 1)] + m[(1, 0)]) / s, 0.25 * s, (m[(1, 2)] + m[(2, 1)]) / s]
        } else {
            let s = (1.0 + m[(2, 2)] - m[(0, 0)] - m[(1, 1)]).sqrt() * 2.0;
            [(m[(1, 0)] - m[(0, 1)]) / s, (m[(0, 2)] + m[(2, 0)]) / s, (m[(1, 2)] + m[(2, 1)]) / s, 0.25 * s]
        };
        if q[0] < 0.0 {
            q.iter_mut().for_each(|c| *c = -*c);
        }
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        q.map(|c| c / n)
    }

    /// Rotation from a unit quaternion `(w, x, y, z)`; the input is normalized.
    pub fn from_quaternion(q: [f64; 4]) -> Self {
        let n = q.iter().map(|c| c * c).sum::<f64>().sqrt();
        let [w, x, y, z] = q.map(|c| c / n);
        Self(Mat3::new(
            1.0 - 2.0 * (y * y + z * z),
            2.0 * (x * y - w * z),
            2.0 * (x * z + w * y),
            2.0 * (x * y + w * z),
            1.0 - 2.0 * (x * x + z * z),
            2.0 * (y * z - w * x),
            2.0 * (x * z - w * y),
            2.0 * (y * z + w * x),
            1.0 - 2.0 * (x * x + y * y),
        ))
    }

    /// Uniform (Haar) rotation from three uniform variates in `[0, 1)`.
    ///
    /// Shoemake's construction: a uniform rotation about z composed with a
    /// uniformly distributed axis, expressed as a unit quaternion.
    pub fn from_unit_cube(u1: f64, u2: f64, u3: f64) -> Self {
        let r1 = (1.0 - u1).sqrt();
        let r2 = u1.sqrt();
        let (s2, c2) = (2.0 * PI * u2).sin_cos();
        let (s3, c3) = (2.0 * PI * u3).sin_cos();
        Self::from_quaternion([r2 * c3, r1 * s2, r1 * c2, r2 * s3])
    }

    pub fn uniform<R: Rng + ?Sized>(rng: &mut R) -> Self {
        Self::from_unit_cube(rng.random(), rng.random(), rng.random())
    }

    /// Geodesic angle between two rotations.
    pub fn angle_to(&self, other: &Self) -> f64 {
        log_so3(&Self(self.0.transpose() * other.0)).angle
    }
}

impl Mul for RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: Self) -> Self {
        Self(self.0 * rhs.0)
    }
}

impl Mul<&RotationMatrix> for &RotationMatrix {
    type Output = RotationMatrix;
    fn mul(self, rhs: &RotationMatrix) -> RotationMatrix {
        RotationMatrix(self.0 * rhs.0)
    }
}

/// `n` rotations from the Halton sequence (bases 2, 3, 5) pushed through
/// [`RotationMatrix::from_unit_cube`]. Deterministic and low-discrepancy.
pub fn quasi_uniform_grid(n: usize) -> Vec<RotationMatrix> {
    (1..=n).map(|i| RotationMatrix::from_unit_cube(halton(i, 2), halton(i, 3), halton(i, 5))).collect()
}

fn halton(mut index: usize, base: usize) -> f64 {
    let mut f = 1.0;
    let mut r = 0.0;
    while index > 0 {
        f /= base as f64;
        r += f * (index % base) as f64;
        index /= base;
    }
    r
}

/// Rotation axis (unit) and angle in `[0, π]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AxisAngle {
    axis: Vec3,
    angle: f64,
}

impl AxisAngle {
    /// Normalizes `axis` and folds `angle` into `[0, π]`.
    pub fn new(axis: Vec3, angle: f64) -> Result<Self> {
        if !axis.iter().all(|x| x.is_finite()) || !angle.is_finite() {
            return Err(Error::NonFinite("axis-angle"));
        }
        let norm = axis.norm();
        if norm < 1e-300 {
            return Err(Error::InvalidParameter("axis-angle with zero axis".into()));
        }
        let mut axis = axis / norm;
        let mut angle = angle.rem_euclid(2.0 * PI);
        if angle > PI {
            angle = 2.0 * PI - angle;
            axis = -axis;
        }
        Ok(Self { axis, angle })
    }

    pub fn identity() -> Self {
        Self { axis: Vec3::x(), angle: 0.0 }
    }

    /// From a rotation vector `angle * axis`.
    pub fn from_rotation_vector(w: &Vec3) -> Self {
        let angle = w.norm();
        if angle == 0.0 {
            Self::identity()
        } else {
            Self::new(*w, angle).unwrap_or_else(|_| Self::identity())
        }
    }

    pub fn axis(&self) -> &Vec3 {
        &self.axis
    }

    pub fn angle(&self) -> f64 {
        self.angle
    }

    pub fn rotation_vector(&self) -> Vec3 {
        self.axis * self.angle
    }
}

/// Rodrigues' formula `I + sin θ ê + (1 - cos θ) ê²`.
pub fn exp_so3(a: &AxisAngle) -> RotationMatrix {
    let k = hat(&a.axis);
    let (s, c) = a.angle.sin_cos();
    RotationMatrix(Mat3::identity() + k * s + k * k * (1.0 - c))
}

/// Inverse of [`exp_so3`]. Identity maps to angle 0 about `(1, 0, 0)`; at
/// angle π the axis sign puts the largest-magnitude component positive.
pub fn log_so3(r: &RotationMatrix) -> AxisAngle {
    let m = &r.0;
    let w = vee(m);
    let sin = w.norm();
    let cos = ((m.trace() - 1.0) * 0.5).clamp(-1.0, 1.0);
    let angle = sin.atan2(cos);
    if sin < 1e-300 && cos > 0.0 {
        return AxisAngle::identity();
    }
    if cos > -0.5 {
        return AxisAngle { axis: w / sin, angle };
    }
    // Near π the skew part vanishes; (R + Rᵀ)/2 - cos θ I = (1 - cos θ) a aᵀ.
    let sym = (m + m.transpose()) * 0.5 - Mat3::identity() * cos;
    let col = (0..3).max_by(|&i, &j| sym[(i, i)].total_cmp(&sym[(j, j)])).unwrap_or(0);
    let mut axis: Vec3 = sym.column(col).into_owned();
    axis /= axis.norm();
    if sin > 1e-12 {
        if axis.dot(&w) < 0.0 {
            axis = -axis;
        }
    } else {
        let big = (0..3).max_by(|&i, &j| axis[i].abs().total_cmp(&axis[j].abs())).unwrap_or(0);
        if axis[big] < 0.0 {
            axis = -axis;
        }
    }
    AxisAngle { axis, angle }
}

/// `U diag(S) Vᵀ` with `det U = det V = +1`, `s1 >= s2 >= |s3|`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProperSvd {
    pub u: RotationMatrix,
    pub s: [f64; 3],
    pub v: RotationMatrix,
}

impl ProperSvd {
    pub fn reconstruct(&self) -> Mat3 {
        self.u.0 * Mat3::from_diagonal(&Vec3::from(self.s)) * self.v.0.transpose()
    }
}

/// Proper singular value decomposition.
///
/// An ordinary SVD `U' S' V'ᵀ` with `s1' >= s2' >= s3' >= 0` is corrected by
/// `U = U' diag(1, 1, det U')`, `V = V' diag(1, 1, det V')` and
/// `s3 = det(U' V') s3'`, so both factors are rotations.
pub fn proper_svd(m: &Mat3) -> ProperSvd {
    let (u0, s0, v0) = ordinary_svd(m);
    let du = u0.determinant().signum();
    let dv = v0.determinant().signum();
    let fix_u = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, du));
    let fix_v = Mat3::from_diagonal(&Vec3::new(1.0, 1.0, dv));
    ProperSvd { u: RotationMatrix(u0 * fix_u), s: [s0[0], s0[1], du * dv * s0[2]], v: RotationMatrix(v0 * fix_v) }
}

/// One-sided Jacobi SVD. Returns orthogonal `U'`, `V'` and descending
/// non-negative singular values.
fn ordinary_svd(m: &Mat3) -> (Mat3, [f64; 3], Mat3) {
    let mut a = *m;
    let mut v = Mat3::identity();
    for _ in 0..JACOBI_MAX_SWEEPS {
        let mut rotated = false;
        for (p, q) in [(0usize, 1usize), (0, 2), (1, 2)] {
            let alpha = a.column(p).norm_squared();
            let beta = a.column(q).norm_squared();
            let gamma = a.column(p).dot(&a.column(q));
            if gamma == 0.0 || gamma.abs() <= JACOBI_TOL * (alpha * beta).sqrt() {
                continue;
            }
            rotated = true;
            let zeta = (beta - alpha) / (2.0 * gamma);
            let t = zeta.signum() / (zeta.abs() + (1.0 + zeta * zeta).sqrt());
            let c = 1.0 / (1.0 + t * t).sqrt();
            let s = c * t;
            for mat in [&mut a, &mut v] {
                for row in 0..3 {
                    let xp = mat[(row, p)];
                    let xq = mat[(row, q)];
                    mat[(row, p)] = c * xp - s * xq;
                    mat[(row, q)] = s * xp + c * xq;
                }
            }
        }
        if !rotated {
            break;
        }
    }

    let mut order = [0usize, 1, 2];
    let norms = [a.column(0).norm(), a.column(1).norm(), a.column(2).norm()];
    order.sort_by(|&i, &j| norms[j].total_cmp(&norms[i]));
    let sigma = order.map(|i| norms[i]);
    let mut vs = Mat3::zeros();
    let mut cols: [Vec3; 3] = [Vec3::zeros(); 3];
    for (k, &i) in order.iter().enumerate() {
        vs.set_column(k, &v.column(i));
        cols[k] = a.column(i).into_owned();
    }

    // Columns belonging to (numerically) zero singular values carry no
    // direction; complete them to an orthonormal basis instead.
    let tiny = sigma[0] * 1e-15;
    let mut u = Mat3::zeros();
    let u1 = if sigma[0] > 0.0 { cols[0] / sigma[0] } else { Vec3::x() };
    let u2 = if sigma[1] > tiny && sigma[1] > 0.0 {
        let w = cols[1] - u1 * u1.dot(&cols[1]);
        w / w.norm()
    } else {
        any_orthogonal(&u1)
    };
    let u3 = if sigma[2] > tiny && sigma[2] > 0.0 {
        let w = cols[2] - u1 * u1.dot(&cols[2]) - u2 * u2.dot(&cols[2]);
        w / w.norm()
    } else {
        u1.cross(&u2)
    };
    u.set_column(0, &u1);
    u.set_column(1, &u2);
    u.set_column(2, &u3);
    (u, sigma, vs)
}

fn any_orthogonal(a: &Vec3) -> Vec3 {
    let pick = if a.x.abs() <= a.y.abs() && a.x.abs() <= a.z.abs() {
        Vec3::x()
    } else if a.y.abs() <= a.z.abs() {
        Vec3::y()
    } else {
        Vec3::z()
    };
    let w = a.cross(&pick);
    w / w.norm()
}
