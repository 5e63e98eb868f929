//! End-to-end sphere adaptation: solver output against the exact
//! axisymmetric map, and consistency of the two nonlinear methods on the
//! same problem.

use std::sync::Arc;

use otmesh::mesh::cubed_sphere;
use otmesh::monitor::MonitorSpec;
use otmesh::oracle::{rms_geodesic_deviation, AxisymmetricOracle};
use otmesh::solve::{NonlinearConfig, SphereSolver};

fn band() -> MonitorSpec {
    MonitorSpec::tanh_band(0.5f64.powi(4)).unwrap()
}

/// RMS geodesic deviation of the converged band problem against the exact
/// map, per mesh size.
fn converged_deviation(n: usize) -> f64 {
    let mesh = Arc::new(cubed_sphere(n, 2, 1.0).unwrap());
    let oracle = AxisymmetricOracle::from_spec(&band(), 1.0).unwrap();
    let targets = oracle.target_positions(&mesh).unwrap();
    let mut solver = SphereSolver::new(mesh.clone(), band()).unwrap();
    solver.set_reference_targets(targets.clone()).unwrap();
    let report = solver.solve(&NonlinearConfig::relaxation(2.0).unwrap()).unwrap();

    // The deviation settles once the residual is small: over the last
    // quarter of the run it may wander by a few percent but not drift.
    let devs: Vec<f64> = report
        .history
        .iter()
        .filter_map(|r| r.rms_deviation)
        .collect();
    assert_eq!(devs.len(), report.history.len());
    let last_quarter = &devs[devs.len() - devs.len() / 4..];
    let final_dev = *devs.last().unwrap();
    for d in last_quarter {
        assert!(
            (d - final_dev).abs() <= 0.05 * final_dev,
            "deviation still moving: {d} vs {final_dev}"
        );
    }

    let got: Vec<[f64; 3]> = solver.physical_coords()[..mesh.n_vertices].to_vec();
    let check = rms_geodesic_deviation(&got, &targets, 1.0).unwrap();
    assert!((check - final_dev).abs() <= 1e-12 * (1.0 + final_dev));
    final_dev
}

#[test]
fn band_problem_tracks_the_exact_map_and_improves_under_refinement() {
    let coarse = converged_deviation(8);
    let fine = converged_deviation(16);
    assert!(
        fine < coarse,
        "deviation did not shrink: {coarse:e} -> {fine:e}"
    );
}

#[test]
fn both_methods_land_on_the_same_adapted_mesh() {
    let mesh = Arc::new(cubed_sphere(8, 2, 1.0).unwrap());
    let mut relax = SphereSolver::new(mesh.clone(), band()).unwrap();
    relax.solve(&NonlinearConfig::relaxation(2.0).unwrap()).unwrap();
    let mut newton = SphereSolver::new(mesh.clone(), band()).unwrap();
    newton.solve(&NonlinearConfig::quasi_newton().unwrap()).unwrap();

    let a = &relax.physical_coords()[..mesh.n_vertices];
    let b = &newton.physical_coords()[..mesh.n_vertices];
    let dev = rms_geodesic_deviation(a, b, 1.0).unwrap();
    // Both satisfy the same discrete equations to 1e-8; the positions may
    // differ only through the solver tolerance.
    assert!(dev <= 1e-5, "methods disagree by {dev:e}");
}
