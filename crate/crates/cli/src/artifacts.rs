//! On-disk artifacts: the per-iteration diagnostics CSV, legacy ASCII VTK
//! meshes, a raw coordinate dump, and the solver state checkpoint. All
//! writers format floats deterministically so identical runs produce
//! byte-identical files.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use otmesh::error::{Error, Result};
use otmesh::mesh::{CellShape, MeshData, MeshKind};
use otmesh::solve::DiagnosticsRecord;

pub const CSV_HEADER: &str =
    "iter,residual,equidistribution_cv,rms_deviation,theta,step_length,min_area_ratio";

fn fmt_opt(v: Option<f64>) -> String {
    match v {
        Some(x) => format!("{x}"),
        None => String::new(),
    }
}

/// Diagnostics history as CSV. Missing diagnostics become empty fields so
/// the column layout never changes.
pub fn render_csv(history: &[DiagnosticsRecord]) -> String {
    let mut out = String::with_capacity(64 * (history.len() + 1));
    out.push_str(CSV_HEADER);
    out.push('\n');
    for r in history {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.iteration,
            r.residual,
            r.equidistribution_cv,
            fmt_opt(r.rms_deviation),
            r.theta,
            fmt_opt(r.step_length),
            r.min_area_ratio
        );
    }
    out
}

pub fn write_csv(path: &Path, history: &[DiagnosticsRecord]) -> Result<()> {
    fs::write(path, render_csv(history))?;
    Ok(())
}

/// Sweep summary rows, one per axis point.
pub struct SweepRow {
    pub axis_value: f64,
    pub iterations: usize,
    pub final_cv: f64,
    pub wall_time_seconds: f64,
    pub converged: bool,
}

pub const SWEEP_HEADER: &str = "axis_value,iterations,final_cv,wall_time_seconds,converged";

pub fn render_sweep_csv(rows: &[SweepRow]) -> String {
    let mut out = String::new();
    out.push_str(SWEEP_HEADER);
    out.push('\n');
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.axis_value, r.iterations, r.final_cv, r.wall_time_seconds, r.converged
        );
    }
    out
}

/// Raw physical coordinates, one node per line.
pub fn write_coords(path: &Path, mesh: &MeshData, coords: &[[f64; 3]]) -> Result<()> {
    let dim = mesh.dim();
    let mut out = String::new();
    let _ = writeln!(out, "points {} dim {dim}", coords.len());
    for c in coords {
        for (d, v) in c[..dim].iter().enumerate() {
            if d > 0 {
                out.push(' ');
            }
            let _ = write!(out, "{v:.17e}");
        }
        out.push('\n');
    }
    fs::write(path, out)?;
    Ok(())
}

/// Quarters of a degree-2 cell in terms of local node slots (vertices,
/// then mid-edge nodes, then the quad center).
const QUAD_QUARTERS: [[usize; 4]; 4] = [[0, 4, 8, 7], [4, 1, 5, 8], [8, 5, 2, 6], [7, 8, 6, 3]];
const TRI_QUARTERS: [[usize; 3]; 4] = [[0, 3, 5], [3, 1, 4], [5, 4, 2], [3, 4, 5]];

/// Legacy ASCII VTK unstructured grid of the physical mesh. Degree-2 cells
/// are exported as four linear subcells through their higher-order nodes.
/// On the periodic plane, cells that straddle the seam get duplicated
/// points shifted by a lattice vector so every cell renders contiguously;
/// `coords` itself is never altered.
///
/// `fields` are nodal scalars over the same node set as `coords`.
pub fn render_vtk(
    mesh: &MeshData,
    coords: &[[f64; 3]],
    fields: &[(&str, &[f64])],
) -> Result<String> {
    let n_nodes = mesh.node_count();
    if coords.len() != n_nodes {
        return Err(Error::ShapeMismatch {
            expected: n_nodes,
            got: coords.len(),
            context: "vtk node coordinates",
        });
    }
    for (name, f) in fields {
        if f.len() < n_nodes {
            return Err(Error::ShapeMismatch {
                expected: n_nodes,
                got: f.len(),
                context: "vtk point data",
            });
        }
        if name.contains(char::is_whitespace) {
            return Err(Error::InvalidParameter(format!(
                "vtk array name {name:?} contains whitespace"
            )));
        }
    }

    // Point list: (node, lattice offset) pairs; the offset is always zero
    // away from the periodic seam.
    let mut points: Vec<([f64; 3], u32)> = Vec::with_capacity(n_nodes);
    let mut seen = std::collections::HashMap::new();
    let mut key_of = |node: u32, off: [i32; 2], points: &mut Vec<([f64; 3], u32)>| -> u32 {
        *seen.entry((node, off[0], off[1])).or_insert_with(|| {
            let mut p = coords[node as usize];
            p[0] += off[0] as f64;
            p[1] += off[1] as f64;
            points.push((p, node));
            (points.len() - 1) as u32
        })
    };

    let mut cells: Vec<Vec<u32>> = Vec::new();
    let mut nodes = Vec::new();
    let periodic = mesh.kind == MeshKind::PeriodicPlane;
    for cell in 0..mesh.n_cells {
        mesh.cell_nodes(cell, &mut nodes);
        // Lattice offsets that make the computational cell contiguous
        // relative to its first vertex; reused for the physical points.
        let offsets: Vec<[i32; 2]> = if periodic {
            let anchor = mesh.node_coord(nodes[0] as usize);
            nodes
                .iter()
                .map(|&v| {
                    let p = mesh.node_coord(v as usize);
                    [
                        -(p[0] - anchor[0]).round() as i32,
                        -(p[1] - anchor[1]).round() as i32,
                    ]
                })
                .collect()
        } else {
            vec![[0, 0]; nodes.len()]
        };
        let ids: Vec<u32> = nodes
            .iter()
            .zip(&offsets)
            .map(|(&v, &off)| key_of(v, off, &mut points))
            .collect();
        if mesh.coord_degree == 2 {
            match mesh.shape() {
                CellShape::Quad => {
                    for q in &QUAD_QUARTERS {
                        cells.push(q.iter().map(|&s| ids[s]).collect());
                    }
                }
                CellShape::Triangle => {
                    for t in &TRI_QUARTERS {
                        cells.push(t.iter().map(|&s| ids[s]).collect());
                    }
                }
            }
        } else {
            cells.push(ids);
        }
    }

    let mut out = String::new();
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str("adapted mesh\n");
    out.push_str("ASCII\n");
    out.push_str("DATASET UNSTRUCTURED_GRID\n");
    let _ = writeln!(out, "POINTS {} double", points.len());
    for (p, _) in &points {
        let _ = writeln!(out, "{:.17e} {:.17e} {:.17e}", p[0], p[1], p[2]);
    }
    let entries: usize = cells.iter().map(|c| c.len() + 1).sum();
    let _ = writeln!(out, "CELLS {} {entries}", cells.len());
    for c in &cells {
        let _ = write!(out, "{}", c.len());
        for id in c {
            let _ = write!(out, " {id}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "CELL_TYPES {}", cells.len());
    let vtk_type = match mesh.shape() {
        CellShape::Quad => 9,
        CellShape::Triangle => 5,
    };
    for _ in &cells {
        let _ = writeln!(out, "{vtk_type}");
    }
    if !fields.is_empty() {
        let _ = writeln!(out, "POINT_DATA {}", points.len());
        for (name, f) in fields {
            let _ = writeln!(out, "SCALARS {name} double 1");
            out.push_str("LOOKUP_TABLE default\n");
            for (_, node) in &points {
                let _ = writeln!(out, "{:.17e}", f[*node as usize]);
            }
        }
    }
    Ok(out)
}

pub fn write_vtk(
    path: &Path,
    mesh: &MeshData,
    coords: &[[f64; 3]],
    fields: &[(&str, &[f64])],
) -> Result<()> {
    fs::write(path, render_vtk(mesh, coords, fields)?)?;
    Ok(())
}

const CHECKPOINT_MAGIC: &str = "otmesh checkpoint v1";

/// 64-bit FNV-1a over the mesh identity: kind, degree, radius, counts,
/// connectivity, and computational coordinates.
pub fn mesh_fingerprint(mesh: &MeshData) -> u64 {
    let mut h: u64 = 0xcbf29ce484222325;
    let mut eat = |bytes: &[u8]| {
        for &b in bytes {
            h ^= b as u64;
            h = h.wrapping_mul(0x100000001b3);
        }
    };
    eat(&[match mesh.kind {
        MeshKind::PeriodicPlane => 1u8,
        MeshKind::CubedSphere => 2,
        MeshKind::Icosahedral => 3,
    }]);
    eat(&(mesh.coord_degree as u64).to_le_bytes());
    eat(&mesh.radius.to_le_bytes());
    eat(&(mesh.n_vertices as u64).to_le_bytes());
    eat(&(mesh.n_edges as u64).to_le_bytes());
    eat(&(mesh.n_cells as u64).to_le_bytes());
    for v in &mesh.cell_vertices {
        eat(&v.to_le_bytes());
    }
    for c in &mesh.coords {
        eat(&c.to_le_bytes());
    }
    h
}

/// Solver state dump tied to a mesh fingerprint, for warm starts.
pub fn write_checkpoint(path: &Path, mesh: &MeshData, phi: &[f64], sigma: &[f64]) -> Result<()> {
    let mut out = String::new();
    let _ = writeln!(out, "{CHECKPOINT_MAGIC}");
    let _ = writeln!(out, "mesh {:016x}", mesh_fingerprint(mesh));
    let _ = writeln!(out, "phi {}", phi.len());
    for v in phi {
        let _ = writeln!(out, "{v:.17e}");
    }
    let _ = writeln!(out, "sigma {}", sigma.len());
    for v in sigma {
        let _ = writeln!(out, "{v:.17e}");
    }
    fs::write(path, out)?;
    Ok(())
}

/// Reads a checkpoint back, refusing one written for a different mesh.
pub fn load_checkpoint(path: &Path, mesh: &MeshData) -> Result<(Vec<f64>, Vec<f64>)> {
    let text = fs::read_to_string(path)?;
    let mut lines = text.lines();
    let bad = |what: &str| Error::Parse(format!("{}: {what}", path.display()));
    if lines.next() != Some(CHECKPOINT_MAGIC) {
        return Err(bad("not a checkpoint file"));
    }
    let mesh_line = lines.next().ok_or_else(|| bad("missing mesh line"))?;
    let hash = mesh_line
        .strip_prefix("mesh ")
        .and_then(|h| u64::from_str_radix(h, 16).ok())
        .ok_or_else(|| bad("malformed mesh line"))?;
    if hash != mesh_fingerprint(mesh) {
        return Err(Error::InvalidParameter(format!(
            "checkpoint {} belongs to a different mesh",
            path.display()
        )));
    }
    let mut section = |name: &str, lines: &mut std::str::Lines| -> Result<Vec<f64>> {
        let head = lines.next().ok_or_else(|| bad("missing section"))?;
        let count: usize = head
            .strip_prefix(name)
            .and_then(|c| c.trim().parse().ok())
            .ok_or_else(|| bad("malformed section header"))?;
        let mut vals = Vec::with_capacity(count);
        for _ in 0..count {
            let line = lines.next().ok_or_else(|| bad("truncated section"))?;
            vals.push(
                line.trim()
                    .parse::<f64>()
                    .map_err(|e| bad(&format!("bad float: {e}")))?,
            );
        }
        Ok(vals)
    };
    let phi = section("phi", &mut lines)?;
    let sigma = section("sigma", &mut lines)?;
    Ok((phi, sigma))
}
