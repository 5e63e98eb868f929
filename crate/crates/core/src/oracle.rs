//! Exact equidistributed maps for sphere monitors that are symmetric about
//! an axis. For such a monitor the adapted mesh is a pure latitude
//! redistribution about the symmetry center: a point at angle t from the
//! center moves to the angle s(t) that balances the monitor mass of the
//! spherical cap against the uniform measure,
//!
//!   integral_0^{s(t)} M(sigma) sin(sigma) d sigma = theta (1 - cos t),
//!
//! with theta fixed by global mass conservation. Inverting this one
//! dimensional relation gives a reference solution that solver output can
//! be compared against without discretization error in the map itself.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::la::{self, Vec3};
use crate::mesh::MeshData;
use crate::monitor::MonitorSpec;

/// Relative accuracy of the adaptive cap-mass integrals.
const QUAD_REL_TOL: f64 = 1e-7;
/// Angle bracket width at which the bisection for s(t) stops.
const BISECT_TOL: f64 = 1e-6;
/// Tangential components below this are treated as exactly polar.
const POLE_TOL: f64 = 1e-12;

/// Exact optimally transported map for an axisymmetric monitor on the
/// sphere of a fixed radius.
pub struct AxisymmetricOracle {
    center: Vec3,
    radius: f64,
    theta: f64,
    half_mass: f64,
    profile: Box<dyn Fn(f64) -> f64>,
}

impl AxisymmetricOracle {
    /// Oracle for a monitor specification; fails when the monitor has no
    /// symmetry axis.
    pub fn from_spec(spec: &MonitorSpec, radius: f64) -> Result<AxisymmetricOracle> {
        let profile = spec.axisymmetric_profile().ok_or_else(|| {
            Error::InvalidParameter(
                "exact map is only available for monitors with a symmetry axis".into(),
            )
        })?;
        let center = profile.center;
        AxisymmetricOracle::from_profile(center, radius, move |s| profile.eval(s))
    }

    /// Oracle for an arbitrary radial profile `m(s)` of the angle from
    /// `center`. The profile must be positive on [0, pi].
    pub fn from_profile(
        center: Vec3,
        radius: f64,
        m: impl Fn(f64) -> f64 + 'static,
    ) -> Result<AxisymmetricOracle> {
        if !(radius > 0.0) || !radius.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "sphere radius must be positive, got {radius}"
            )));
        }
        let norm = la::norm3(center);
        if !(norm > 0.0) {
            return Err(Error::InvalidParameter(
                "symmetry center must be a nonzero direction".into(),
            ));
        }
        let center = la::scale3(center, 1.0 / norm);
        let integrand = move |s: f64| m(s) * s.sin();
        let total = adaptive_simpson(&integrand, 0.0, PI, QUAD_REL_TOL);
        if !(total > 0.0) || !total.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "monitor mass over the sphere is {total:e}; the profile must be positive"
            )));
        }
        // The uniform measure of the full sphere is integral_0^pi sin = 2.
        Ok(AxisymmetricOracle {
            center,
            radius,
            theta: total / 2.0,
            half_mass: total,
            profile: Box::new(integrand),
        })
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn center(&self) -> Vec3 {
        self.center
    }

    /// Cap mass integral_0^t M sin of the profile.
    pub fn cap_mass(&self, t: f64) -> f64 {
        adaptive_simpson(&self.profile, 0.0, t.clamp(0.0, PI), QUAD_REL_TOL)
    }

    /// Mapped angle s(t) from the symmetry center.
    pub fn mapped_angle(&self, t: f64) -> f64 {
        let target = self.theta * (1.0 - t.clamp(0.0, PI).cos());
        if target <= 0.0 {
            return 0.0;
        }
        if target >= self.half_mass {
            return PI;
        }
        let (mut lo, mut hi) = (0.0f64, PI);
        while hi - lo > BISECT_TOL {
            let mid = 0.5 * (lo + hi);
            if self.cap_mass(mid) < target {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        0.5 * (lo + hi)
    }

    /// Image of an ambient point of the sphere under the exact map.
    pub fn map_point(&self, xi: Vec3) -> Result<Vec3> {
        let r = la::norm3(xi);
        if (r - self.radius).abs() > 1e-8 * self.radius {
            return Err(Error::InvalidParameter(format!(
                "point at radius {r} is off the sphere of radius {}",
                self.radius
            )));
        }
        let hat = la::scale3(xi, 1.0 / r);
        let ct = la::dot3(hat, self.center);
        let v = la::sub3(hat, la::scale3(self.center, ct));
        let vn = la::norm3(v);
        // Both poles of the symmetry axis are fixed points; near them the
        // azimuth is ill conditioned but the motion vanishes.
        if vn <= POLE_TOL {
            return Ok(xi);
        }
        let u = la::scale3(v, 1.0 / vn);
        let t = vn.atan2(ct);
        let s = self.mapped_angle(t);
        Ok(la::scale3(
            la::add3(la::scale3(self.center, s.cos()), la::scale3(u, s.sin())),
            self.radius,
        ))
    }

    /// Exact image of every vertex of a sphere mesh, in vertex order.
    pub fn target_positions(&self, mesh: &MeshData) -> Result<Vec<Vec3>> {
        if !mesh.is_sphere() {
            return Err(Error::InvalidParameter(
                "exact sphere map applied to a plane mesh".into(),
            ));
        }
        (0..mesh.n_vertices)
            .map(|v| self.map_point(mesh.node_coord(v)))
            .collect()
    }
}

/// Root mean square geodesic distance between matching position sets on
/// the sphere of the given radius.
pub fn rms_geodesic_deviation(got: &[Vec3], want: &[Vec3], radius: f64) -> Result<f64> {
    if got.len() != want.len() {
        return Err(Error::ShapeMismatch {
            expected: want.len(),
            got: got.len(),
            context: "geodesic deviation position sets",
        });
    }
    if got.is_empty() {
        return Err(Error::InvalidParameter(
            "geodesic deviation of empty position sets".into(),
        ));
    }
    let sum: f64 = got
        .iter()
        .zip(want)
        .map(|(a, b)| {
            let d = la::geodesic(*a, *b, radius);
            d * d
        })
        .sum();
    Ok((sum / got.len() as f64).sqrt())
}

/// Adaptive Simpson quadrature with a relative tolerance against the
/// whole-interval estimate.
fn adaptive_simpson(f: &impl Fn(f64) -> f64, a: f64, b: f64, rel_tol: f64) -> f64 {
    if b <= a {
        return 0.0;
    }
    let fa = f(a);
    let fm = f(0.5 * (a + b));
    let fb = f(b);
    let whole = simpson(a, b, fa, fm, fb);
    let tol = rel_tol * whole.abs().max(1e-300);
    // The first levels split unconditionally; narrow features can fool the
    // error estimate when the coarse samples happen to straddle them.
    refine(f, a, b, fa, fm, fb, whole, tol, 40, 6)
}

fn simpson(a: f64, b: f64, fa: f64, fm: f64, fb: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn refine(
    f: &impl Fn(f64) -> f64,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: usize,
    force: usize,
) -> f64 {
    let m = 0.5 * (a + b);
    let lm = f(0.5 * (a + m));
    let rm = f(0.5 * (m + b));
    let left = simpson(a, m, fa, lm, fm);
    let right = simpson(m, b, fm, rm, fb);
    let err = left + right - whole;
    if depth == 0 || (force == 0 && err.abs() <= 15.0 * tol) {
        return left + right + err / 15.0;
    }
    let force = force.saturating_sub(1);
    refine(f, a, m, fa, lm, fm, left, 0.5 * tol, depth - 1, force)
        + refine(f, m, b, fm, rm, fb, right, 0.5 * tol, depth - 1, force)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::cubed_sphere;
    use rand::{Rng, SeedableRng};

    fn random_unit(rng: &mut rand_chacha::ChaCha8Rng) -> Vec3 {
        loop {
            let c = [
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
                rng.gen::<f64>() * 2.0 - 1.0,
            ];
            let n = la::norm3(c);
            if n > 1e-3 {
                return la::scale3(c, 1.0 / n);
            }
        }
    }

    #[test]
    fn uniform_monitor_gives_the_identity_map() {
        let oracle = AxisymmetricOracle::from_spec(&MonitorSpec::Uniform, 1.0).unwrap();
        assert!((oracle.theta() - 1.0).abs() <= 1e-7);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let xi = random_unit(&mut rng);
            let x = oracle.map_point(xi).unwrap();
            assert!(la::geodesic(x, xi, 1.0) <= 2.0 * BISECT_TOL);
        }
    }

    #[test]
    fn cosine_profile_matches_the_closed_form() {
        // For m = 1 + cos s the cap mass is (1 - cos s) + sin^2(s) / 2 and
        // theta = 1, so the equator t = pi/2 maps to arccos(sqrt(2) - 1).
        let oracle =
            AxisymmetricOracle::from_profile([0.0, 0.0, 1.0], 1.0, |s| 1.0 + s.cos()).unwrap();
        assert!((oracle.theta() - 1.0).abs() <= 1e-7);
        let s = oracle.mapped_angle(PI / 2.0);
        let want = (2.0f64.sqrt() - 1.0).acos();
        assert!((s - want).abs() <= 1e-5, "s = {s}, closed form {want}");
        let x = oracle.map_point([1.0, 0.0, 0.0]).unwrap();
        assert!((la::dot3(x, [0.0, 0.0, 1.0]) - want.cos()).abs() <= 1e-5);
        // The azimuth of the moved point is untouched.
        assert!(x[1].abs() <= 1e-12 && x[0] > 0.0);
    }

    #[test]
    fn mapped_angle_is_monotone_with_fixed_endpoints() {
        let spec = MonitorSpec::tanh_band(0.5f64.powi(4)).unwrap();
        let oracle = AxisymmetricOracle::from_spec(&spec, 1.0).unwrap();
        assert!(oracle.mapped_angle(0.0) == 0.0);
        assert!((oracle.mapped_angle(PI) - PI).abs() <= BISECT_TOL);
        let mut prev = 0.0;
        for k in 1..=64 {
            let s = oracle.mapped_angle(PI * k as f64 / 64.0);
            assert!(s + 1e-9 >= prev, "angle map decreased at step {k}");
            prev = s;
        }
    }

    #[test]
    fn mapped_points_balance_the_cap_mass() {
        let spec = MonitorSpec::tanh_band(0.5f64.powi(4)).unwrap();
        let oracle = AxisymmetricOracle::from_spec(&spec, 1.0).unwrap();
        for k in 0..100 {
            let t = PI * (k as f64 + 0.5) / 100.0;
            let s = oracle.mapped_angle(t);
            let lhs = oracle.cap_mass(s);
            let rhs = oracle.theta() * (1.0 - t.cos());
            assert!(
                (lhs - rhs).abs() <= 1e-5 * rhs.max(1.0),
                "imbalance {:e} at t = {t}",
                lhs - rhs
            );
        }
    }

    #[test]
    fn radius_scales_through_the_map() {
        let spec = MonitorSpec::tanh_band(0.5f64.powi(4)).unwrap();
        let unit = AxisymmetricOracle::from_spec(&spec, 1.0).unwrap();
        let scaled = AxisymmetricOracle::from_spec(&spec, 2.5).unwrap();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..20 {
            let xi = random_unit(&mut rng);
            let a = unit.map_point(xi).unwrap();
            let b = scaled.map_point(la::scale3(xi, 2.5)).unwrap();
            assert!(la::norm3(la::sub3(la::scale3(a, 2.5), b)) <= 1e-5);
        }
    }

    #[test]
    fn vertex_targets_stay_on_the_sphere() {
        let mesh = cubed_sphere(4, 1, 1.0).unwrap();
        let spec = MonitorSpec::tanh_band(0.5f64.powi(4)).unwrap();
        let oracle = AxisymmetricOracle::from_spec(&spec, 1.0).unwrap();
        let targets = oracle.target_positions(&mesh).unwrap();
        assert_eq!(targets.len(), mesh.n_vertices);
        for t in &targets {
            assert!((la::norm3(*t) - 1.0).abs() <= 1e-9);
        }
    }

    #[test]
    fn deviation_of_identical_sets_is_zero_and_rotations_add_up() {
        let a = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]];
        assert!(rms_geodesic_deviation(&a, &a, 1.0).unwrap() == 0.0);
        let quarter = [[0.0, 1.0, 0.0], [-1.0, 0.0, 0.0]];
        let d = rms_geodesic_deviation(&a, &quarter, 1.0).unwrap();
        assert!((d - PI / 2.0).abs() <= 1e-12);
        assert!(rms_geodesic_deviation(&a[..1], &quarter, 1.0).is_err());
    }
}
