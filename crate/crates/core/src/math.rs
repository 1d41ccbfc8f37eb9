//! Small fixed-size vector/matrix helpers for the projection and compositing
//! code. Everything is generic over [`Scalar`] so the training path runs in
//! f32 while verification oracles run the identical code in f64.

use std::fmt::Debug;

use num_traits::Float;

pub trait Scalar: Float + Debug + Default + Send + Sync + 'static {}
impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for embedding literal constants in generic code.
#[inline]
pub fn lit<T: Scalar>(x: f64) -> T {
    T::from(x).expect("literal representable in scalar type")
}

pub type V2<T> = [T; 2];
pub type V3<T> = [T; 3];
pub type V4<T> = [T; 4];
/// Row-major 3x3.
pub type M3<T> = [[T; 3]; 3];
/// Two rows of three: the perspective Jacobian shape.
pub type M23<T> = [[T; 3]; 2];
/// Symmetric 2x2 packed as (m00, m01, m11).
pub type Sym2<T> = [T; 3];

#[inline]
pub fn dot3<T: Scalar>(a: V3<T>, b: V3<T>) -> T {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn add3<T: Scalar>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3<T: Scalar>(a: V3<T>, b: V3<T>) -> V3<T> {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn scale3<T: Scalar>(a: V3<T>, s: T) -> V3<T> {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn norm3<T: Scalar>(a: V3<T>) -> T {
    dot3(a, a).sqrt()
}

/// Unit vector along `a`; `a` itself when its norm is zero.
#[inline]
pub fn normalize3<T: Scalar>(a: V3<T>) -> V3<T> {
    let n = norm3(a);
    if n > T::zero() {
        scale3(a, T::one() / n)
    } else {
        a
    }
}

#[inline]
pub fn cross3<T: Scalar>(a: V3<T>, b: V3<T>) -> V3<T> {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

/// m * v
#[inline]
pub fn m3_mulv<T: Scalar>(m: &M3<T>, v: V3<T>) -> V3<T> {
    [dot3(m[0], v), dot3(m[1], v), dot3(m[2], v)]
}

/// m^T * v
#[inline]
pub fn m3_tmulv<T: Scalar>(m: &M3<T>, v: V3<T>) -> V3<T> {
    [
        m[0][0] * v[0] + m[1][0] * v[1] + m[2][0] * v[2],
        m[0][1] * v[0] + m[1][1] * v[1] + m[2][1] * v[2],
        m[0][2] * v[0] + m[1][2] * v[1] + m[2][2] * v[2],
    ]
}

pub fn m3_mul<T: Scalar>(a: &M3<T>, b: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, cell) in row.iter_mut().enumerate() {
            *cell = a[i][0] * b[0][j] + a[i][1] * b[1][j] + a[i][2] * b[2][j];
        }
    }
    out
}

pub fn m3_transpose<T: Scalar>(m: &M3<T>) -> M3<T> {
    let mut out = [[T::zero(); 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = m[j][i];
        }
    }
    out
}

/// j * w for the 2x3 Jacobian times a 3x3 rotation.
pub fn m23_mul_m3<T: Scalar>(j: &M23<T>, w: &M3<T>) -> M23<T> {
    let mut out = [[T::zero(); 3]; 2];
    for (i, row) in out.iter_mut().enumerate() {
        for (k, cell) in row.iter_mut().enumerate() {
            *cell = j[i][0] * w[0][k] + j[i][1] * w[1][k] + j[i][2] * w[2][k];
        }
    }
    out
}

/// m * s * m^T for symmetric s, returned packed.
pub fn sandwich23<T: Scalar>(m: &M23<T>, s: &M3<T>) -> Sym2<T> {
    let sm0 = m3_mulv(s, m[0]);
    let sm1 = m3_mulv(s, m[1]);
    [dot3(m[0], sm0), dot3(m[0], sm1), dot3(m[1], sm1)]
}

/// Inverse of a symmetric 2x2; None when not invertible.
pub fn inv_sym2<T: Scalar>(s: Sym2<T>) -> Option<(Sym2<T>, T)> {
    let det = s[0] * s[2] - s[1] * s[1];
    if det <= T::zero() {
        return None;
    }
    let inv_det = T::one() / det;
    Some(([s[2] * inv_det, -s[1] * inv_det, s[0] * inv_det], det))
}

/// Larger eigenvalue of a symmetric 2x2.
pub fn max_eigen_sym2<T: Scalar>(s: Sym2<T>) -> T {
    let half = lit::<T>(0.5);
    let mid = (s[0] + s[2]) * half;
    let det = s[0] * s[2] - s[1] * s[1];
    mid + (mid * mid - det).max(T::zero()).sqrt()
}

/// Normalizes a quaternion, returning the unit vector and the original norm.
#[inline]
pub fn normalize4<T: Scalar>(q: V4<T>) -> (V4<T>, T) {
    let n = (q[0] * q[0] + q[1] * q[1] + q[2] * q[2] + q[3] * q[3]).sqrt();
    ([q[0] / n, q[1] / n, q[2] / n, q[3] / n], n)
}

/// Rotation matrix from a unit quaternion in (w, x, y, z) order.
pub fn quat_rot<T: Scalar>(q: V4<T>) -> M3<T> {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = lit::<T>(2.0);
    let one = T::one();
    [
        [
            one - two * (y * y + z * z),
            two * (x * y - w * z),
            two * (x * z + w * y),
        ],
        [
            two * (x * y + w * z),
            one - two * (x * x + z * z),
            two * (y * z - w * x),
        ],
        [
            two * (x * z - w * y),
            two * (y * z + w * x),
            one - two * (x * x + y * y),
        ],
    ]
}

/// Logistic function 1 / (1 + exp(-x)).
#[inline]
pub fn sigmoid<T: Scalar>(x: T) -> T {
    T::one() / (T::one() + (-x).exp())
}

/// Inverse of [`sigmoid`] on (0, 1).
#[inline]
pub fn logit<T: Scalar>(p: T) -> T {
    (p / (T::one() - p)).ln()
}

/// Partial derivatives of [`quat_rot`] with respect to each unit-quaternion
/// component, in (w, x, y, z) order.
pub fn quat_rot_partials<T: Scalar>(q: V4<T>) -> [M3<T>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    let two = lit::<T>(2.0);
    let zero = T::zero();
    let d_w = [
        [zero, -two * z, two * y],
        [two * z, zero, -two * x],
        [-two * y, two * x, zero],
    ];
    let d_x = [
        [zero, two * y, two * z],
        [two * y, -two * two * x, -two * w],
        [two * z, two * w, -two * two * x],
    ];
    let d_y = [
        [-two * two * y, two * x, two * w],
        [two * x, zero, two * z],
        [-two * w, two * z, -two * two * y],
    ];
    let d_z = [
        [-two * two * z, -two * w, two * x],
        [two * w, -two * two * z, two * y],
        [two * x, two * y, zero],
    ];
    [d_w, d_x, d_y, d_z]
}
