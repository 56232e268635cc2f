//! Scalar trait and the handful of fixed-size vector/matrix helpers the
//! projection and rasterization code needs.

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

/// Floating-point scalar used throughout the engine. Training and serving
/// run in `f32`; gradient checks run in `f64`.
pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + Copy
    + Send
    + Sync
    + Debug
    + Default
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
    + 'static
{
    #[inline(always)]
    fn c(v: f64) -> Self {
        // Every f64 is representable (possibly rounded) in both impls.
        Self::from_f64(v).unwrap()
    }

    #[inline(always)]
    fn f64(self) -> f64 {
        self.to_f64().unwrap()
    }
}

impl Real for f32 {}
impl Real for f64 {}

pub type Vec2<T> = [T; 2];
pub type Vec3<T> = [T; 3];
/// Row-major 3×3 matrix.
pub type Mat3<T> = [[T; 3]; 3];
/// Row-major 2×3 matrix.
pub type Mat23<T> = [[T; 3]; 2];

/// Symmetric 2×2 matrix stored as `(xx, xy, yy)`.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct Sym2<T> {
    pub xx: T,
    pub xy: T,
    pub yy: T,
}

impl<T: Real> Sym2<T> {
    pub fn new(xx: T, xy: T, yy: T) -> Self {
        Self { xx, xy, yy }
    }

    pub fn det(&self) -> T {
        self.xx * self.yy - self.xy * self.xy
    }

    pub fn inverse(&self) -> Option<Self> {
        let det = self.det();
        if !(det > T::zero()) || !det.is_finite() {
            return None;
        }
        let inv = T::one() / det;
        Some(Self::new(self.yy * inv, -self.xy * inv, self.xx * inv))
    }

    /// Eigenvalues in ascending order.
    pub fn eigenvalues(&self) -> [T; 2] {
        let half = T::c(0.5);
        let mid = half * (self.xx + self.yy);
        let diff = half * (self.xx - self.yy);
        let rad = (diff * diff + self.xy * self.xy).sqrt();
        [mid - rad, mid + rad]
    }

    /// Product `self * rhs * self` of symmetric matrices (result is symmetric).
    pub fn sandwich(&self, rhs: &Sym2<T>) -> Sym2<T> {
        let (a, b, c) = (self.xx, self.xy, self.yy);
        // (self * rhs)
        let m00 = a * rhs.xx + b * rhs.xy;
        let m01 = a * rhs.xy + b * rhs.yy;
        let m10 = b * rhs.xx + c * rhs.xy;
        let m11 = b * rhs.xy + c * rhs.yy;
        Sym2::new(m00 * a + m01 * b, m00 * b + m01 * c, m10 * b + m11 * c)
    }
}

pub fn cast3<T: Real>(v: [f64; 3]) -> Vec3<T> {
    [T::c(v[0]), T::c(v[1]), T::c(v[2])]
}

pub fn cast_mat3<T: Real>(m: &[[f64; 3]; 3]) -> Mat3<T> {
    [cast3(m[0]), cast3(m[1]), cast3(m[2])]
}

#[inline]
pub fn dot3<T: Real>(a: Vec3<T>, b: Vec3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn mat3_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

#[inline]
pub fn mat3_t_vec<T: Real>(m: &Mat3<T>, v: Vec3<T>) -> Vec3<T> {
    let mut out = [T::zero(); 3];
    for (r, row) in m.iter().enumerate() {
        for c in 0..3 {
            out[c] += row[c] * v[r];
        }
    }
    out
}

pub fn mat3_mul<T: Real>(a: &Mat3<T>, b: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn transpose3<T: Real>(m: &Mat3<T>) -> Mat3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

pub fn mat23_mul_mat3<T: Real>(a: &Mat23<T>, b: &Mat3<T>) -> Mat23<T> {
    let mut out = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            out[i][j] = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

/// `a * s * aᵀ` for a 2×3 `a` and a 3×3 `s`.
pub fn congruence23<T: Real>(a: &Mat23<T>, s: &Mat3<T>) -> Sym2<T> {
    let mut tmp = [[T::zero(); 3]; 2];
    for i in 0..2 {
        for j in 0..3 {
            tmp[i][j] = a[i][0] * s[0][j] + a[i][1] * s[1][j] + a[i][2] * s[2][j];
        }
    }
    let xx = dot3(tmp[0], a[0]);
    let xy = dot3(tmp[0], a[1]);
    let yy = dot3(tmp[1], a[1]);
    Sym2::new(xx, xy, yy)
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

#[inline]
pub fn logit(p: f64) -> f64 {
    (p / (1.0 - p)).ln()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sym2_inverse_roundtrip() {
        let m = Sym2::new(2.0f64, 0.5, 1.0);
        let inv = m.inverse().unwrap();
        let p00 = m.xx * inv.xx + m.xy * inv.xy;
        let p01 = m.xx * inv.xy + m.xy * inv.yy;
        assert!((p00 - 1.0).abs() < 1e-14);
        assert!(p01.abs() < 1e-14);
        assert!(Sym2::new(1.0f64, 1.0, 1.0).inverse().is_none());
    }

    #[test]
    fn sym2_eigenvalues_diag() {
        let e = Sym2::new(3.0f64, 0.0, 1.0).eigenvalues();
        assert_eq!(e, [1.0, 3.0]);
    }
}
