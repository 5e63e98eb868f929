//! Nodal reference elements on the unit quad [0,1]^2 and the unit triangle.
//!
//! Node order follows the mesh convention: vertices counterclockwise, then
//! mid-edge nodes in local edge order, then the cell-center node (Q2 only).

use crate::mesh::CellShape;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementKind {
    Q1,
    Q2,
    P1,
    P2,
}

impl ElementKind {
    pub fn for_shape(shape: CellShape, degree: usize) -> ElementKind {
        match (shape, degree) {
            (CellShape::Quad, 1) => ElementKind::Q1,
            (CellShape::Quad, 2) => ElementKind::Q2,
            (CellShape::Triangle, 1) => ElementKind::P1,
            (CellShape::Triangle, 2) => ElementKind::P2,
            _ => panic!("unsupported element degree {degree}"),
        }
    }

    #[inline]
    pub fn shape(self) -> CellShape {
        match self {
            ElementKind::Q1 | ElementKind::Q2 => CellShape::Quad,
            ElementKind::P1 | ElementKind::P2 => CellShape::Triangle,
        }
    }

    #[inline]
    pub fn degree(self) -> usize {
        match self {
            ElementKind::Q1 | ElementKind::P1 => 1,
            ElementKind::Q2 | ElementKind::P2 => 2,
        }
    }

    #[inline]
    pub fn n_basis(self) -> usize {
        match self {
            ElementKind::Q1 => 4,
            ElementKind::Q2 => 9,
            ElementKind::P1 => 3,
            ElementKind::P2 => 6,
        }
    }

    /// Reference coordinates of the nodes, in dof order.
    pub fn nodes(self) -> &'static [[f64; 2]] {
        match self {
            ElementKind::Q1 => &[[0., 0.], [1., 0.], [1., 1.], [0., 1.]],
            ElementKind::Q2 => &[
                [0., 0.],
                [1., 0.],
                [1., 1.],
                [0., 1.],
                [0.5, 0.],
                [1., 0.5],
                [0.5, 1.],
                [0., 0.5],
                [0.5, 0.5],
            ],
            ElementKind::P1 => &[[0., 0.], [1., 0.], [0., 1.]],
            ElementKind::P2 => &[
                [0., 0.],
                [1., 0.],
                [0., 1.],
                [0.5, 0.],
                [0.5, 0.5],
                [0., 0.5],
            ],
        }
    }

    /// Basis values at a reference point, written into `out[..n_basis]`.
    pub fn eval(self, p: [f64; 2], out: &mut [f64]) {
        let (x, y) = (p[0], p[1]);
        match self {
            ElementKind::Q1 => {
                out[0] = (1. - x) * (1. - y);
                out[1] = x * (1. - y);
                out[2] = x * y;
                out[3] = (1. - x) * y;
            }
            ElementKind::Q2 => {
                let lx = quad1d(x);
                let ly = quad1d(y);
                out[0] = lx[0] * ly[0];
                out[1] = lx[2] * ly[0];
                out[2] = lx[2] * ly[2];
                out[3] = lx[0] * ly[2];
                out[4] = lx[1] * ly[0];
                out[5] = lx[2] * ly[1];
                out[6] = lx[1] * ly[2];
                out[7] = lx[0] * ly[1];
                out[8] = lx[1] * ly[1];
            }
            ElementKind::P1 => {
                out[0] = 1. - x - y;
                out[1] = x;
                out[2] = y;
            }
            ElementKind::P2 => {
                let l = [1. - x - y, x, y];
                out[0] = l[0] * (2. * l[0] - 1.);
                out[1] = l[1] * (2. * l[1] - 1.);
                out[2] = l[2] * (2. * l[2] - 1.);
                out[3] = 4. * l[0] * l[1];
                out[4] = 4. * l[1] * l[2];
                out[5] = 4. * l[2] * l[0];
            }
        }
    }

    /// Reference gradients at a point, written into `out[..n_basis]`.
    pub fn eval_grad(self, p: [f64; 2], out: &mut [[f64; 2]]) {
        let (x, y) = (p[0], p[1]);
        match self {
            ElementKind::Q1 => {
                out[0] = [-(1. - y), -(1. - x)];
                out[1] = [1. - y, -x];
                out[2] = [y, x];
                out[3] = [-y, 1. - x];
            }
            ElementKind::Q2 => {
                let lx = quad1d(x);
                let ly = quad1d(y);
                let dx = quad1d_d(x);
                let dy = quad1d_d(y);
                let pairs = [
                    (0, 0),
                    (2, 0),
                    (2, 2),
                    (0, 2),
                    (1, 0),
                    (2, 1),
                    (1, 2),
                    (0, 1),
                    (1, 1),
                ];
                for (k, &(a, b)) in pairs.iter().enumerate() {
                    out[k] = [dx[a] * ly[b], lx[a] * dy[b]];
                }
            }
            ElementKind::P1 => {
                out[0] = [-1., -1.];
                out[1] = [1., 0.];
                out[2] = [0., 1.];
            }
            ElementKind::P2 => {
                let l = [1. - x - y, x, y];
                let dl = [[-1., -1.], [1., 0.], [0., 1.]];
                for i in 0..3 {
                    let c = 4. * l[i] - 1.;
                    out[i] = [c * dl[i][0], c * dl[i][1]];
                }
                let edges = [(0, 1), (1, 2), (2, 0)];
                for (k, &(i, j)) in edges.iter().enumerate() {
                    out[3 + k] = [
                        4. * (dl[i][0] * l[j] + l[i] * dl[j][0]),
                        4. * (dl[i][1] * l[j] + l[i] * dl[j][1]),
                    ];
                }
            }
        }
    }
}

/// 1D quadratic Lagrange basis on nodes {0, 1/2, 1}.
#[inline]
fn quad1d(t: f64) -> [f64; 3] {
    [
        (2. * t - 1.) * (t - 1.),
        4. * t * (1. - t),
        t * (2. * t - 1.),
    ]
}

#[inline]
fn quad1d_d(t: f64) -> [f64; 3] {
    [4. * t - 3., 4. - 8. * t, 4. * t - 1.]
}

#[cfg(test)]
mod tests {
    use super::*;

    const ELEMENTS: [ElementKind; 4] = [
        ElementKind::Q1,
        ElementKind::Q2,
        ElementKind::P1,
        ElementKind::P2,
    ];

    #[test]
    fn kronecker_property_at_nodes() {
        for el in ELEMENTS {
            let mut vals = [0.0; 9];
            for (i, &node) in el.nodes().iter().enumerate() {
                el.eval(node, &mut vals);
                for j in 0..el.n_basis() {
                    let want = if i == j { 1.0 } else { 0.0 };
                    assert!(
                        (vals[j] - want).abs() < 1e-14,
                        "{el:?} basis {j} at node {i}: {}",
                        vals[j]
                    );
                }
            }
        }
    }

    #[test]
    fn partition_of_unity_and_gradient_sum() {
        // 20 deterministic sample points per element.
        for el in ELEMENTS {
            for k in 0..20 {
                let mut p = [
                    (k as f64 * 0.61803398875).fract(),
                    (k as f64 * 0.3819660112501).fract(),
                ];
                if el.shape() == CellShape::Triangle && p[0] + p[1] > 1.0 {
                    p = [1.0 - p[0], 1.0 - p[1]];
                }
                let mut vals = [0.0; 9];
                let mut grads = [[0.0; 2]; 9];
                el.eval(p, &mut vals);
                el.eval_grad(p, &mut grads);
                let s: f64 = vals[..el.n_basis()].iter().sum();
                let gx: f64 = grads[..el.n_basis()].iter().map(|g| g[0]).sum();
                let gy: f64 = grads[..el.n_basis()].iter().map(|g| g[1]).sum();
                assert!((s - 1.0).abs() < 1e-13, "{el:?}: sum {s}");
                assert!(gx.abs() < 1e-12 && gy.abs() < 1e-12, "{el:?}: grad sum");
            }
        }
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = 1e-6;
        for el in ELEMENTS {
            let p = [0.31, 0.4];
            let mut g = [[0.0; 2]; 9];
            el.eval_grad(p, &mut g);
            for d in 0..2 {
                let mut pp = p;
                let mut pm = p;
                pp[d] += h;
                pm[d] -= h;
                let (mut vp, mut vm) = ([0.0; 9], [0.0; 9]);
                el.eval(pp, &mut vp);
                el.eval(pm, &mut vm);
                for b in 0..el.n_basis() {
                    let fd = (vp[b] - vm[b]) / (2.0 * h);
                    assert!((fd - g[b][d]).abs() < 1e-8, "{el:?} basis {b} dir {d}");
                }
            }
        }
    }
}
