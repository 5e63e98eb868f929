//! Monitor functions: the prescribed mesh-density fields the solvers
//! equidistribute. Plane monitors measure distance in the minimum-image
//! sense on the torus; sphere monitors use geodesic distance. A gridded
//! variant interpolates tabulated values bilinearly with periodic wrap and
//! clamps them away from zero.

use crate::error::{Error, Result};
use crate::fem::{Field, FunctionSpace, ValueShape};
use crate::la::geodesic;
use crate::mesh::{wrap_half, MeshData};
use std::f64::consts::PI;
use std::sync::Arc;

/// Nodal values on a uniform periodic lattice over the unit square.
/// Node (ix, iy) sits at (ix/nx, iy/ny); rows vary in y, so the value index
/// is `iy * nx + ix`.
#[derive(Debug, Clone)]
pub struct GriddedField {
    pub nx: usize,
    pub ny: usize,
    values: Vec<f64>,
}

impl GriddedField {
    pub fn new(nx: usize, ny: usize, values: Vec<f64>) -> Result<GriddedField> {
        if nx < 2 || ny < 2 {
            return Err(Error::InvalidParameter(format!(
                "gridded monitor needs at least 2 nodes per axis, got {nx} x {ny}"
            )));
        }
        if values.len() != nx * ny {
            return Err(Error::ShapeMismatch {
                expected: nx * ny,
                got: values.len(),
                context: "gridded monitor values",
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "gridded monitor values must be finite".into(),
            ));
        }
        Ok(GriddedField { nx, ny, values })
    }

    /// Parses the text format: a header line `nx ny`, then `nx * ny`
    /// whitespace-separated values in row-major order.
    pub fn parse(text: &str) -> Result<GriddedField> {
        let mut tokens = text.split_whitespace();
        let mut next_usize = |what: &str| -> Result<usize> {
            tokens
                .next()
                .ok_or_else(|| Error::Parse(format!("gridded monitor: missing {what}")))?
                .parse()
                .map_err(|e| Error::Parse(format!("gridded monitor {what}: {e}")))
        };
        let nx = next_usize("nx")?;
        let ny = next_usize("ny")?;
        let mut values = Vec::with_capacity(nx.saturating_mul(ny));
        for t in tokens {
            let v: f64 = t
                .parse()
                .map_err(|e| Error::Parse(format!("gridded monitor value {t:?}: {e}")))?;
            values.push(v);
        }
        GriddedField::new(nx, ny, values)
    }

    /// Periodic bilinear interpolation at a point of the unit square.
    pub fn eval(&self, x: f64, y: f64) -> f64 {
        let fx = (x - x.floor()) * self.nx as f64;
        let fy = (y - y.floor()) * self.ny as f64;
        let ix = (fx.floor() as usize).min(self.nx - 1);
        let iy = (fy.floor() as usize).min(self.ny - 1);
        let tx = fx - ix as f64;
        let ty = fy - iy as f64;
        let ix1 = (ix + 1) % self.nx;
        let iy1 = (iy + 1) % self.ny;
        let v00 = self.values[iy * self.nx + ix];
        let v10 = self.values[iy * self.nx + ix1];
        let v01 = self.values[iy1 * self.nx + ix];
        let v11 = self.values[iy1 * self.nx + ix1];
        (1.0 - ty) * ((1.0 - tx) * v00 + tx * v10) + ty * ((1.0 - tx) * v01 + tx * v11)
    }
}

/// Minimum value a gridded monitor may take after interpolation.
pub const GRIDDED_FLOOR: f64 = 0.005;

#[derive(Debug, Clone)]
pub enum MonitorSpec {
    Uniform,
    /// Plane: 1 + 10 sech^2(200 (|x - c|^2 - 0.25^2)).
    Ring { center: [f64; 2] },
    /// Plane: 1 + 50 sech^2(100 |x - c|^2).
    Bell { center: [f64; 2] },
    /// Sphere: sqrt((1-gamma)/2 (tanh((beta - s)/alpha) + 1) + gamma) with s
    /// the geodesic distance from the center.
    Tanh {
        center: [f64; 3],
        alpha: f64,
        beta: f64,
        gamma: f64,
    },
    /// Sphere: two sech^2 bands at geodesic radius pi/2 around two poles.
    Cross {
        pole1: [f64; 3],
        pole2: [f64; 3],
        amplitude: f64,
        sharpness: f64,
    },
    /// Plane: interpolated tabulated field, clamped to at least `floor`.
    Gridded { field: GriddedField, floor: f64 },
}

#[inline]
fn sech2(t: f64) -> f64 {
    let c = t.cosh();
    1.0 / (c * c)
}

impl MonitorSpec {
    /// The ring monitor centred at (0.5, 0.5).
    pub fn ring() -> MonitorSpec {
        MonitorSpec::Ring {
            center: [0.5, 0.5],
        }
    }

    /// The bell monitor centred at (0.5, 0.5).
    pub fn bell() -> MonitorSpec {
        MonitorSpec::Bell {
            center: [0.5, 0.5],
        }
    }

    /// The axisymmetric band monitor at 30 degrees North on the prime
    /// meridian, with the standard widths alpha = pi/20 and beta = pi/6.
    /// `gamma` in (0, 1] controls the outer-region density; gamma = kappa^4
    /// gives an edge-length ratio kappa between inner and outer regions.
    pub fn tanh_band(gamma: f64) -> Result<MonitorSpec> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(Error::InvalidParameter(format!(
                "tanh monitor gamma must lie in (0, 1], got {gamma}"
            )));
        }
        Ok(MonitorSpec::Tanh {
            center: [3.0f64.sqrt() / 2.0, 0.0, 0.5],
            alpha: PI / 20.0,
            beta: PI / 6.0,
            gamma,
        })
    }

    /// Two great-circle bands crossing at 60/120 degrees.
    pub fn cross_bands() -> MonitorSpec {
        let h = 3.0f64.sqrt() / 2.0;
        MonitorSpec::Cross {
            pole1: [h, 0.0, 0.5],
            pole2: [-h, 0.0, 0.5],
            amplitude: 10.0,
            sharpness: 5.0,
        }
    }

    pub fn gridded(field: GriddedField) -> MonitorSpec {
        MonitorSpec::Gridded {
            field,
            floor: GRIDDED_FLOOR,
        }
    }

    pub fn is_sphere_monitor(&self) -> bool {
        matches!(self, MonitorSpec::Tanh { .. } | MonitorSpec::Cross { .. })
    }

    /// Evaluation at a point of the doubly periodic unit square.
    pub fn eval_plane(&self, x: [f64; 2]) -> Result<f64> {
        match self {
            MonitorSpec::Uniform => Ok(1.0),
            MonitorSpec::Ring { center } => {
                let d2 = torus_dist2(x, *center);
                Ok(1.0 + 10.0 * sech2(200.0 * (d2 - 0.0625)))
            }
            MonitorSpec::Bell { center } => {
                let d2 = torus_dist2(x, *center);
                Ok(1.0 + 50.0 * sech2(100.0 * d2))
            }
            MonitorSpec::Gridded { field, floor } => Ok(field.eval(x[0], x[1]).max(*floor)),
            _ => Err(Error::InvalidParameter(
                "sphere monitor evaluated on the plane".into(),
            )),
        }
    }

    /// Evaluation at a point of the radius-`radius` sphere. The point must
    /// lie on the surface to within 1e-8 relative.
    pub fn eval_sphere(&self, x: [f64; 3], radius: f64) -> Result<f64> {
        if self.is_sphere_monitor() || matches!(self, MonitorSpec::Uniform) {
            let r = (x[0] * x[0] + x[1] * x[1] + x[2] * x[2]).sqrt();
            if (r - radius).abs() > 1e-8 * radius {
                return Err(Error::InvalidParameter(format!(
                    "point at radius {r} is off the sphere of radius {radius}"
                )));
            }
        }
        match self {
            MonitorSpec::Uniform => Ok(1.0),
            // Both sphere monitors are functions of angular distance only,
            // so a run is invariant under rescaling the sphere radius.
            MonitorSpec::Tanh {
                center,
                alpha,
                beta,
                gamma,
            } => {
                let s = geodesic(x, *center, 1.0);
                let inner = 0.5 * (1.0 - gamma) * (((beta - s) / alpha).tanh() + 1.0) + gamma;
                Ok(inner.sqrt())
            }
            MonitorSpec::Cross {
                pole1,
                pole2,
                amplitude,
                sharpness,
            } => {
                let quarter = PI / 2.0;
                let s1 = geodesic(x, *pole1, 1.0);
                let s2 = geodesic(x, *pole2, 1.0);
                Ok(1.0
                    + amplitude * sech2(sharpness * (s1 * s1 - quarter * quarter))
                    + amplitude * sech2(sharpness * (s2 * s2 - quarter * quarter)))
            }
            _ => Err(Error::InvalidParameter(
                "plane monitor evaluated on the sphere".into(),
            )),
        }
    }

    /// Dispatches on the mesh kind. `x` uses the first two components on
    /// the plane.
    pub fn eval(&self, x: [f64; 3], mesh: &MeshData) -> Result<f64> {
        if mesh.is_sphere() {
            self.eval_sphere(x, mesh.radius)
        } else {
            self.eval_plane([x[0], x[1]])
        }
    }

    /// For monitors that depend only on the geodesic distance from a fixed
    /// center, the center and the radial profile; `None` otherwise. The
    /// exact-map oracle needs this.
    pub fn axisymmetric_profile(&self) -> Option<AxisymmetricProfile> {
        match self {
            MonitorSpec::Tanh { center, .. } => Some(AxisymmetricProfile {
                center: *center,
                spec: self.clone(),
            }),
            MonitorSpec::Uniform => Some(AxisymmetricProfile {
                center: [0.0, 0.0, 1.0],
                spec: MonitorSpec::Uniform,
            }),
            _ => None,
        }
    }
}

/// Radial profile M(s) of an axisymmetric sphere monitor, with s the
/// geodesic distance from `center` on the unit sphere.
#[derive(Debug, Clone)]
pub struct AxisymmetricProfile {
    pub center: [f64; 3],
    spec: MonitorSpec,
}

impl AxisymmetricProfile {
    pub fn eval(&self, s: f64) -> f64 {
        match &self.spec {
            MonitorSpec::Uniform => 1.0,
            MonitorSpec::Tanh {
                alpha, beta, gamma, ..
            } => {
                let inner = 0.5 * (1.0 - gamma) * (((beta - s) / alpha).tanh() + 1.0) + gamma;
                inner.sqrt()
            }
            _ => unreachable!("profile constructed only for axisymmetric variants"),
        }
    }
}

#[inline]
fn torus_dist2(x: [f64; 2], c: [f64; 2]) -> f64 {
    let dx = wrap_half(x[0] - c[0]);
    let dy = wrap_half(x[1] - c[1]);
    dx * dx + dy * dy
}

/// Samples the monitor at the physical positions of the mesh vertices and
/// returns the degree-1 continuous field over the computational space that
/// carries those nodal values.
pub fn monitor_to_field(
    spec: &MonitorSpec,
    physical_mesh: &MeshData,
    computational_space: &Arc<FunctionSpace>,
) -> Result<Field> {
    if computational_space.element.degree() != 1
        || computational_space.shape != ValueShape::Scalar
    {
        return Err(Error::InvalidParameter(
            "monitor fields live in the degree-1 scalar space".into(),
        ));
    }
    if computational_space.n_scalar != physical_mesh.n_vertices {
        return Err(Error::ShapeMismatch {
            expected: computational_space.n_scalar,
            got: physical_mesh.n_vertices,
            context: "monitor field vertex count",
        });
    }
    let mut data = vec![0.0; computational_space.n_scalar];
    for (v, slot) in data.iter_mut().enumerate() {
        *slot = spec.eval(physical_mesh.node_coord(v), physical_mesh)?;
    }
    Field::from_data(computational_space.clone(), data)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::periodic_unit_square;
    use rand::{Rng, SeedableRng};

    #[test]
    fn ring_peaks_at_radius_quarter() {
        let m = MonitorSpec::ring();
        assert!((m.eval_plane([0.75, 0.5]).unwrap() - 11.0).abs() <= 1e-12);
        assert!((m.eval_plane([0.5, 0.25]).unwrap() - 11.0).abs() <= 1e-12);
        // Away from the ring the field decays back to 1.
        assert!((m.eval_plane([0.5, 0.5]).unwrap() - 1.0).abs() <= 1e-3);
    }

    #[test]
    fn bell_peaks_at_center() {
        let m = MonitorSpec::bell();
        assert!((m.eval_plane([0.5, 0.5]).unwrap() - 51.0).abs() <= 1e-12);
    }

    #[test]
    fn ring_uses_minimum_image_distance() {
        let m = MonitorSpec::Ring {
            center: [0.0, 0.0],
        };
        // 0.95 is 0.05 away from the center across the seam; 0.25 away on
        // the same side gives the peak.
        let near_seam = m.eval_plane([0.95, 0.0]).unwrap();
        let direct = m.eval_plane([0.05, 0.0]).unwrap();
        assert!((near_seam - direct).abs() <= 1e-13);
        assert!((m.eval_plane([0.75, 0.0]).unwrap() - 11.0).abs() <= 1e-12);
    }

    #[test]
    fn tanh_value_at_transition_radius() {
        let gamma = 0.5f64.powi(4);
        let m = MonitorSpec::tanh_band(gamma).unwrap();
        // Rotate the center by beta about the y axis to land on the
        // transition circle.
        let beta = PI / 6.0;
        let c = [3.0f64.sqrt() / 2.0, 0.0, 0.5];
        let x = [
            beta.cos() * c[0] + beta.sin() * c[2],
            0.0,
            -beta.sin() * c[0] + beta.cos() * c[2],
        ];
        let v = m.eval_sphere(x, 1.0).unwrap();
        assert!((v - 0.53125f64.sqrt()).abs() <= 1e-12, "got {v}");
        assert!((v - 0.728869).abs() <= 1e-6);
    }

    #[test]
    fn cross_value_where_bands_intersect() {
        let m = MonitorSpec::cross_bands();
        // The intersection of the two great circles at geodesic distance
        // pi/2 from both poles is normal to both pole vectors.
        let x = [0.0, 1.0, 0.0];
        let v = m.eval_sphere(x, 1.0).unwrap();
        assert!((v - 21.0).abs() <= 1e-12, "got {v}");
    }

    #[test]
    fn off_surface_points_rejected() {
        let m = MonitorSpec::tanh_band(0.1).unwrap();
        assert!(m.eval_sphere([1.1, 0.0, 0.0], 1.0).is_err());
        assert!(m.eval_sphere([0.0, 0.0, 1.0 + 1e-10], 1.0).is_ok());
    }

    #[test]
    fn all_monitors_positive_on_random_points() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(99);
        let plane_specs = [
            MonitorSpec::Uniform,
            MonitorSpec::ring(),
            MonitorSpec::bell(),
        ];
        for spec in &plane_specs {
            for _ in 0..10_000 {
                let x = [rng.gen::<f64>(), rng.gen::<f64>()];
                assert!(spec.eval_plane(x).unwrap() > 0.0);
            }
        }
        let sphere_specs = [
            MonitorSpec::tanh_band(0.5f64.powi(4)).unwrap(),
            MonitorSpec::tanh_band(1.0 / 16.0f64.powi(4)).unwrap(),
            MonitorSpec::cross_bands(),
        ];
        for spec in &sphere_specs {
            for _ in 0..10_000 {
                let x = loop {
                    let c = [
                        rng.gen::<f64>() * 2.0 - 1.0,
                        rng.gen::<f64>() * 2.0 - 1.0,
                        rng.gen::<f64>() * 2.0 - 1.0,
                    ];
                    let n = (c[0] * c[0] + c[1] * c[1] + c[2] * c[2]).sqrt();
                    if n > 1e-3 {
                        break [c[0] / n, c[1] / n, c[2] / n];
                    }
                };
                assert!(spec.eval_sphere(x, 1.0).unwrap() > 0.0);
            }
        }
    }

    #[test]
    fn tanh_profile_is_nonincreasing() {
        let m = MonitorSpec::tanh_band(0.25f64.powi(4)).unwrap();
        let p = m.axisymmetric_profile().unwrap();
        let mut prev = f64::INFINITY;
        for k in 0..=1000 {
            let s = PI * k as f64 / 1000.0;
            let v = p.eval(s);
            assert!(v <= prev + 1e-15, "rise at s = {s}");
            prev = v;
        }
    }

    #[test]
    fn tanh_edge_ratio_approaches_kappa_squared() {
        for kappa in [0.5f64, 0.25, 0.125] {
            let m = MonitorSpec::tanh_band(kappa.powi(4)).unwrap();
            let p = m.axisymmetric_profile().unwrap();
            let ratio = p.eval(PI) / p.eval(0.0);
            let k2 = kappa * kappa;
            assert!(
                (ratio - k2).abs() <= 0.02 * k2,
                "kappa {kappa}: ratio {ratio} vs {k2}"
            );
        }
    }

    #[test]
    fn gridded_parse_and_floor() {
        let g = GriddedField::parse("2 2\n0.001 1.0\n1.0 1.0\n").unwrap();
        let spec = MonitorSpec::gridded(g);
        // At the low-valued node the floor kicks in.
        assert!((spec.eval_plane([0.0, 0.0]).unwrap() - GRIDDED_FLOOR).abs() <= 1e-15);
        // Nodes sit at multiples of 1/nx, so (0.5, 0) is exactly the second
        // node and (0.25, 0) is halfway along the first interval.
        assert!((spec.eval_plane([0.5, 0.0]).unwrap() - 1.0).abs() <= 1e-12);
        assert!((spec.eval_plane([0.25, 0.0]).unwrap() - 0.5005).abs() <= 1e-12);
        assert!((spec.eval_plane([0.75, 0.0]).unwrap() - 0.5005).abs() <= 1e-12);
        assert!(GriddedField::parse("2\n1 2").is_err());
        assert!(GriddedField::parse("2 2\n1 2 3").is_err());
        assert!(GriddedField::parse("1 5\n1 2 3 4 5").is_err());
        assert!(GriddedField::parse("2 2\n1 2 3 nope").is_err());
    }

    #[test]
    fn gridded_wraps_periodically() {
        let g = GriddedField::parse("4 4\n1 2 3 4  5 6 7 8  9 10 11 12  13 14 15 16").unwrap();
        let spec = MonitorSpec::gridded(g);
        let a = spec.eval_plane([0.1, 0.7]).unwrap();
        let b = spec.eval_plane([1.1, -0.3]).unwrap();
        assert!((a - b).abs() <= 1e-13);
    }

    #[test]
    fn gridded_samples_of_ring_interpolate_within_refined_bound() {
        let ring = MonitorSpec::ring();
        let sample = |n: usize| -> GriddedField {
            let mut vals = Vec::with_capacity(n * n);
            for iy in 0..n {
                for ix in 0..n {
                    vals.push(
                        ring.eval_plane([ix as f64 / n as f64, iy as f64 / n as f64])
                            .unwrap(),
                    );
                }
            }
            GriddedField::new(n, n, vals).unwrap()
        };
        let coarse = MonitorSpec::gridded(sample(100));
        let oracle = MonitorSpec::gridded(sample(400));
        let mut err_coarse = 0.0f64;
        let mut err_oracle = 0.0f64;
        for i in 0..17 {
            for j in 0..17 {
                let p = [(i as f64 + 0.37) / 17.0, (j as f64 + 0.61) / 17.0];
                let exact = ring.eval_plane(p).unwrap();
                err_coarse = err_coarse.max((coarse.eval_plane(p).unwrap() - exact).abs());
                err_oracle = err_oracle.max((oracle.eval_plane(p).unwrap() - exact).abs());
            }
        }
        // Bilinear interpolation converges at second order, so the 100-grid
        // error should sit near 16x the 400-grid error; allow 2x slack.
        assert!(err_oracle < err_coarse);
        assert!(
            err_coarse <= 32.0 * err_oracle,
            "coarse {err_coarse:e}, oracle {err_oracle:e}"
        );
    }

    #[test]
    fn field_on_identity_mesh_matches_direct_evaluation() {
        let mesh = Arc::new(periodic_unit_square(8).unwrap());
        let space = FunctionSpace::new(mesh.clone(), 1, ValueShape::Scalar).unwrap();
        let spec = MonitorSpec::ring();
        let field = monitor_to_field(&spec, &mesh, &space).unwrap();
        for v in 0..mesh.n_vertices {
            let x = mesh.node_coord(v);
            let direct = spec.eval_plane([x[0], x[1]]).unwrap();
            assert!((field.data[v] - direct).abs() <= 1e-15);
        }
        let uniform = monitor_to_field(&MonitorSpec::Uniform, &mesh, &space).unwrap();
        assert!(uniform.data.iter().all(|&v| v == 1.0));
    }
}
