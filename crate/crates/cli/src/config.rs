//! Run and sweep configuration: a single JSON document mapped onto the
//! library types. Unknown keys are rejected everywhere; a numerics run
//! killed by a typo that silently fell back to a default is worse than a
//! parse error.

use std::fs;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use serde::Deserialize;

use otmesh::error::{Error, Result};
use otmesh::mesh::{cubed_sphere, icosahedral_sphere, periodic_unit_square, MeshData};
use otmesh::monitor::{GriddedField, MonitorSpec, GRIDDED_FLOOR};
use otmesh::solve::{Method, NonlinearConfig};
use otmesh::sparse::KrylovConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Domain {
    Plane,
    Sphere,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MeshFamily {
    PeriodicPlane,
    CubedSphere,
    Icosahedral,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MeshConfig {
    pub family: MeshFamily,
    /// Cells per axis (plane, cubed sphere) or refinement level
    /// (icosahedral).
    pub resolution: usize,
    /// Coordinate degree on the sphere; the plane always uses vertices.
    pub coord_degree: Option<usize>,
    pub radius: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct MonitorParams {
    pub gamma: Option<f64>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MonitorConfig {
    /// uniform | ring | bell | tanh | cross | gridded
    pub name: String,
    #[serde(default)]
    pub params: MonitorParams,
    pub grid_file: Option<PathBuf>,
    pub floor: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MethodName {
    Relaxation,
    QuasiNewton,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SolverConfig {
    pub method: MethodName,
    pub dt: Option<f64>,
    pub tol: Option<f64>,
    pub max_iters: Option<usize>,
    pub line_search_iters: Option<usize>,
    pub linear_tol: Option<f64>,
    pub restart: Option<usize>,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    pub mesh_path: Option<PathBuf>,
    pub csv_path: Option<PathBuf>,
    pub checkpoint_path: Option<PathBuf>,
    #[serde(default)]
    pub vtk: bool,
}

#[derive(Debug, Clone, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct OracleConfig {
    #[serde(default)]
    pub enabled: bool,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub domain: Domain,
    pub mesh: MeshConfig,
    pub monitor: MonitorConfig,
    pub solver: SolverConfig,
    #[serde(default)]
    pub output: OutputConfig,
    #[serde(default)]
    pub oracle: OracleConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SweepAxis {
    Resolution,
    Dt,
    Gamma,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepConfig {
    pub base: RunConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
}

pub fn load_run_config(path: &Path) -> Result<RunConfig> {
    let text = fs::read_to_string(path)?;
    serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

pub fn load_sweep_config(path: &Path) -> Result<SweepConfig> {
    let text = fs::read_to_string(path)?;
    let cfg: SweepConfig =
        serde_json::from_str(&text).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    if cfg.values.is_empty() {
        return Err(Error::InvalidParameter("sweep has no axis values".into()));
    }
    Ok(cfg)
}

impl RunConfig {
    pub fn build_mesh(&self) -> Result<Arc<MeshData>> {
        let radius = self.mesh.radius.unwrap_or(1.0);
        let mesh = match (self.domain, self.mesh.family) {
            (Domain::Plane, MeshFamily::PeriodicPlane) => {
                if let Some(d) = self.mesh.coord_degree {
                    if d != 1 {
                        return Err(Error::InvalidParameter(format!(
                            "plane meshes carry degree-1 coordinates, got {d}"
                        )));
                    }
                }
                if self.mesh.radius.is_some() {
                    return Err(Error::InvalidParameter(
                        "radius is a sphere setting".into(),
                    ));
                }
                periodic_unit_square(self.mesh.resolution)?
            }
            (Domain::Sphere, MeshFamily::CubedSphere) => {
                cubed_sphere(self.mesh.resolution, self.mesh.coord_degree.unwrap_or(2), radius)?
            }
            (Domain::Sphere, MeshFamily::Icosahedral) => icosahedral_sphere(
                self.mesh.resolution,
                self.mesh.coord_degree.unwrap_or(2),
                radius,
            )?,
            (d, f) => {
                return Err(Error::InvalidParameter(format!(
                    "mesh family {f:?} does not live on the {d:?} domain"
                )))
            }
        };
        Ok(Arc::new(mesh))
    }

    pub fn build_monitor(&self) -> Result<MonitorSpec> {
        let m = &self.monitor;
        let needs_no_grid = |spec: MonitorSpec| -> Result<MonitorSpec> {
            if m.grid_file.is_some() || m.floor.is_some() {
                return Err(Error::InvalidParameter(format!(
                    "monitor {} takes no grid_file or floor",
                    m.name
                )));
            }
            Ok(spec)
        };
        match m.name.as_str() {
            "uniform" => needs_no_grid(MonitorSpec::Uniform),
            "ring" => needs_no_grid(MonitorSpec::ring()),
            "bell" => needs_no_grid(MonitorSpec::bell()),
            "tanh" => {
                let gamma = m.params.gamma.unwrap_or(0.5f64.powi(4));
                needs_no_grid(MonitorSpec::tanh_band(gamma)?)
            }
            "cross" => needs_no_grid(MonitorSpec::cross_bands()),
            "gridded" => {
                let path = m.grid_file.as_ref().ok_or_else(|| {
                    Error::InvalidParameter("gridded monitor needs grid_file".into())
                })?;
                let field = GriddedField::parse(&fs::read_to_string(path)?)?;
                Ok(MonitorSpec::Gridded {
                    field,
                    floor: m.floor.unwrap_or(GRIDDED_FLOOR),
                })
            }
            other => Err(Error::InvalidParameter(format!(
                "unknown monitor name {other:?}"
            ))),
        }
    }

    pub fn build_solver_config(&self) -> Result<NonlinearConfig> {
        let s = &self.solver;
        let mut cfg = match s.method {
            MethodName::Relaxation => {
                let dt = s.dt.unwrap_or(match self.domain {
                    Domain::Plane => 0.1,
                    Domain::Sphere => 2.0,
                });
                NonlinearConfig::relaxation(dt)?
            }
            MethodName::QuasiNewton => {
                if s.dt.is_some() {
                    return Err(Error::InvalidParameter(
                        "dt is a relaxation setting".into(),
                    ));
                }
                NonlinearConfig::quasi_newton()?
            }
        };
        if let Some(t) = s.tol {
            cfg.tol = t;
        }
        if let Some(n) = s.max_iters {
            cfg.max_iters = n;
        }
        if let Some(n) = s.line_search_iters {
            cfg.line_search_iters = n;
        }
        if cfg.method == Method::QuasiNewton {
            let tol = s.linear_tol.unwrap_or(1e-5);
            let restart = s.restart.unwrap_or(30);
            cfg.linear = KrylovConfig::gmres(tol, 3000, restart)?;
        } else if s.linear_tol.is_some() || s.restart.is_some() {
            return Err(Error::InvalidParameter(
                "linear_tol and restart are quasi-Newton settings".into(),
            ));
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Checks the parts that must hold regardless of the solve outcome.
    pub fn validate(&self) -> Result<()> {
        if self.oracle.enabled {
            if self.domain != Domain::Sphere {
                return Err(Error::InvalidParameter(
                    "the exact-map oracle only exists on the sphere".into(),
                ));
            }
            if !matches!(self.monitor.name.as_str(), "uniform" | "tanh") {
                return Err(Error::InvalidParameter(format!(
                    "monitor {} has no symmetry axis for the oracle",
                    self.monitor.name
                )));
            }
        }
        Ok(())
    }
}

impl SweepConfig {
    /// The base configuration with the sweep axis overridden to `value`.
    pub fn point(&self, value: f64) -> Result<RunConfig> {
        let mut cfg = self.base.clone();
        match self.axis {
            SweepAxis::Resolution => {
                let r = value.round();
                if (value - r).abs() > 1e-9 || r <= 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "resolution sweep value {value} is not a positive integer"
                    )));
                }
                cfg.mesh.resolution = r as usize;
            }
            SweepAxis::Dt => {
                cfg.solver.dt = Some(value);
            }
            SweepAxis::Gamma => {
                if cfg.monitor.name != "tanh" {
                    return Err(Error::InvalidParameter(
                        "gamma sweeps apply to the tanh monitor".into(),
                    ));
                }
                cfg.monitor.params.gamma = Some(value);
            }
        }
        Ok(cfg)
    }
}
