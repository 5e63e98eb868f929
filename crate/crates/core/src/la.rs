//! Small fixed-size vector and matrix helpers shared by the geometry and
//! solver kernels. Everything here is `#[inline]` glue over `[f64; N]`
//! arrays; sparse linear algebra lives in [`crate::sparse`].

pub type Vec2 = [f64; 2];
pub type Vec3 = [f64; 3];
/// Row-major 2x2 matrix.
pub type Mat2 = [f64; 4];
/// Row-major 3x3 matrix.
pub type Mat3 = [f64; 9];

#[inline]
pub fn dot3(a: Vec3, b: Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn cross3(a: Vec3, b: Vec3) -> Vec3 {
    [
        a[1] * b[2] - a[2] * b[1],
        a[2] * b[0] - a[0] * b[2],
        a[0] * b[1] - a[1] * b[0],
    ]
}

#[inline]
pub fn norm3(a: Vec3) -> f64 {
    dot3(a, a).sqrt()
}

#[inline]
pub fn scale3(a: Vec3, s: f64) -> Vec3 {
    [a[0] * s, a[1] * s, a[2] * s]
}

#[inline]
pub fn add3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] + b[0], a[1] + b[1], a[2] + b[2]]
}

#[inline]
pub fn sub3(a: Vec3, b: Vec3) -> Vec3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

#[inline]
pub fn normalize3(a: Vec3) -> Vec3 {
    scale3(a, 1.0 / norm3(a))
}

#[inline]
pub fn det2(m: Mat2) -> f64 {
    m[0] * m[3] - m[1] * m[2]
}

#[inline]
pub fn det3(m: Mat3) -> f64 {
    m[0] * (m[4] * m[8] - m[5] * m[7]) - m[1] * (m[3] * m[8] - m[5] * m[6])
        + m[2] * (m[3] * m[7] - m[4] * m[6])
}

/// Adjugate (transposed cofactor matrix), so that `m * adj(m) = det(m) * I`.
#[inline]
pub fn adj3(m: Mat3) -> Mat3 {
    [
        m[4] * m[8] - m[5] * m[7],
        m[2] * m[7] - m[1] * m[8],
        m[1] * m[5] - m[2] * m[4],
        m[5] * m[6] - m[3] * m[8],
        m[0] * m[8] - m[2] * m[6],
        m[2] * m[3] - m[0] * m[5],
        m[3] * m[7] - m[4] * m[6],
        m[1] * m[6] - m[0] * m[7],
        m[0] * m[4] - m[1] * m[3],
    ]
}

#[inline]
pub fn mat3_vec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0] * v[0] + m[1] * v[1] + m[2] * v[2],
        m[3] * v[0] + m[4] * v[1] + m[5] * v[2],
        m[6] * v[0] + m[7] * v[1] + m[8] * v[2],
    ]
}

#[inline]
pub fn mat3_tvec(m: &Mat3, v: Vec3) -> Vec3 {
    [
        m[0] * v[0] + m[3] * v[1] + m[6] * v[2],
        m[1] * v[0] + m[4] * v[1] + m[7] * v[2],
        m[2] * v[0] + m[5] * v[1] + m[8] * v[2],
    ]
}

#[inline]
pub fn mat3_mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [0.0; 9];
    for i in 0..3 {
        for j in 0..3 {
            out[3 * i + j] = a[3 * i] * b[j] + a[3 * i + 1] * b[3 + j] + a[3 * i + 2] * b[6 + j];
        }
    }
    out
}

/// Outer product `a b^T`.
#[inline]
pub fn outer3(a: Vec3, b: Vec3) -> Mat3 {
    [
        a[0] * b[0],
        a[0] * b[1],
        a[0] * b[2],
        a[1] * b[0],
        a[1] * b[1],
        a[1] * b[2],
        a[2] * b[0],
        a[2] * b[1],
        a[2] * b[2],
    ]
}

/// Tangential projector `I - k k^T` for a unit vector `k`.
#[inline]
pub fn tangent_projector(k: Vec3) -> Mat3 {
    let mut p = outer3(k, k);
    for v in p.iter_mut() {
        *v = -*v;
    }
    p[0] += 1.0;
    p[4] += 1.0;
    p[8] += 1.0;
    p
}

/// Geodesic distance on the sphere of radius `r` through the ambient points
/// `a`, `b` (assumed on the sphere). Uses atan2 for accuracy near 0 and pi.
#[inline]
pub fn geodesic(a: Vec3, b: Vec3, r: f64) -> f64 {
    r * cross3(a, b).iter().map(|v| v * v).sum::<f64>().sqrt().atan2(dot3(a, b))
}
