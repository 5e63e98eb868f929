//! Fixed quadrature rules, exact to polynomial degree 8 on both reference
//! cells. One rule per cell shape is used for every integral in the library,
//! including the nonlinear determinant terms.

use crate::mesh::CellShape;

#[derive(Debug, Clone)]
pub struct QuadratureRule {
    pub points: Vec<[f64; 2]>,
    pub weights: Vec<f64>,
}

impl QuadratureRule {
    pub fn for_shape(shape: CellShape) -> QuadratureRule {
        match shape {
            CellShape::Quad => gauss_legendre_5x5(),
            CellShape::Triangle => triangle_degree8(),
        }
    }

    #[inline]
    pub fn len(&self) -> usize {
        self.weights.len()
    }

    #[inline]
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// 5-point Gauss-Legendre nodes and weights on [0,1], exact through degree 9.
/// Closed-form constants, accurate to the last bit.
fn gauss_legendre_unit() -> ([f64; 5], [f64; 5]) {
    let a = (5.0 - 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let b = (5.0 + 2.0 * (10.0f64 / 7.0).sqrt()).sqrt() / 3.0;
    let sq70 = 70.0f64.sqrt();
    let wa = (322.0 + 13.0 * sq70) / 900.0;
    let wb = (322.0 - 13.0 * sq70) / 900.0;
    let x = [-b, -a, 0.0, a, b].map(|t| (t + 1.0) / 2.0);
    let w = [wb, wa, 128.0 / 225.0, wa, wb].map(|t| t / 2.0);
    (x, w)
}

/// Tensor-product 5-point Gauss-Legendre rule on [0,1]^2, exact through
/// degree 9 per axis.
fn gauss_legendre_5x5() -> QuadratureRule {
    let (x1, w1) = gauss_legendre_unit();
    let mut points = Vec::with_capacity(25);
    let mut weights = Vec::with_capacity(25);
    for j in 0..5 {
        for i in 0..5 {
            points.push([x1[i], x1[j]]);
            weights.push(w1[i] * w1[j]);
        }
    }
    QuadratureRule { points, weights }
}

/// 25-point rule on the unit triangle {x,y >= 0, x+y <= 1}, exact through
/// total degree 8 (weights sum to the reference area 1/2).
///
/// Collapsed-square construction: x = u(1-v), y = uv with Jacobian u. A
/// total-degree-8 integrand becomes degree <= 9 in u and <= 8 in v, both
/// within reach of the 5-point Gauss-Legendre factors, so exactness holds
/// to machine precision rather than to the printed precision of tabulated
/// triangle rules.
fn triangle_degree8() -> QuadratureRule {
    let (x1, w1) = gauss_legendre_unit();
    let mut points = Vec::with_capacity(25);
    let mut weights = Vec::with_capacity(25);
    for j in 0..5 {
        let v = x1[j];
        for i in 0..5 {
            let u = x1[i];
            points.push([u * (1.0 - v), u * v]);
            weights.push(w1[i] * w1[j] * u);
        }
    }
    QuadratureRule { points, weights }
}
