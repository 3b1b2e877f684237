//! Legacy ASCII VTK output for base and cylinder meshes.

use std::fmt::Write as _;
use std::io::{self, Write};

use crate::mesh::{BaseMesh, CylinderMesh};

const VTK_LINE: u8 = 3;
const VTK_TRIANGLE: u8 = 5;
const VTK_QUAD: u8 = 9;
const VTK_WEDGE: u8 = 13;

fn header(out: &mut String, title: &str) {
    out.push_str("# vtk DataFile Version 3.0\n");
    out.push_str(title.lines().next().unwrap_or(""));
    out.push_str("\nASCII\nDATASET UNSTRUCTURED_GRID\n");
}

fn cells(out: &mut String, cells: &[Vec<usize>], kind: u8) {
    let size: usize = cells.iter().map(|c| c.len() + 1).sum();
    let _ = writeln!(out, "CELLS {} {}", cells.len(), size);
    for c in cells {
        let _ = write!(out, "{}", c.len());
        for v in c {
            let _ = write!(out, " {v}");
        }
        out.push('\n');
    }
    let _ = writeln!(out, "CELL_TYPES {}", cells.len());
    for _ in cells {
        let _ = writeln!(out, "{kind}");
    }
}

fn point_data(out: &mut String, n: usize, fields: &[(&str, &[f64])]) -> io::Result<()> {
    if fields.is_empty() {
        return Ok(());
    }
    let _ = writeln!(out, "POINT_DATA {n}");
    for (name, values) in fields {
        if values.len() != n {
            return Err(io::Error::new(
                io::ErrorKind::InvalidInput,
                format!("field `{name}` has {} values for {n} points", values.len()),
            ));
        }
        let _ = writeln!(out, "SCALARS {name} double 1\nLOOKUP_TABLE default");
        for v in *values {
            let _ = writeln!(out, "{v:.16e}");
        }
    }
    Ok(())
}

/// Writes the base mesh with nodal fields.
pub fn write_base<W: Write>(
    w: &mut W,
    title: &str,
    base: &BaseMesh,
    fields: &[(&str, &[f64])],
) -> io::Result<()> {
    let mut out = String::new();
    header(&mut out, title);
    let _ = writeln!(out, "POINTS {} double", base.num_vertices());
    for x in base.vertices() {
        let _ = writeln!(out, "{:.16e} {:.16e} 0", x[0], x[1]);
    }
    let kind = if base.dim() == 1 {
        VTK_LINE
    } else {
        VTK_TRIANGLE
    };
    let conn: Vec<Vec<usize>> = base.elements().map(|e| e.to_vec()).collect();
    cells(&mut out, &conn, kind);
    point_data(&mut out, base.num_vertices(), fields)?;
    w.write_all(out.as_bytes())
}

/// Writes the cylinder mesh (quads in 1D, wedges in 2D) with nodal fields;
/// the extended variable is the last coordinate.
pub fn write_cylinder<W: Write>(
    w: &mut W,
    title: &str,
    mesh: &CylinderMesh,
    fields: &[(&str, &[f64])],
) -> io::Result<()> {
    let mut out = String::new();
    header(&mut out, title);
    let base = &mesh.base;
    let ys = mesh.interval.nodes();
    let _ = writeln!(out, "POINTS {} double", mesh.num_nodes());
    for y in ys {
        for x in base.vertices() {
            if base.dim() == 1 {
                let _ = writeln!(out, "{:.16e} {:.16e} 0", x[0], y);
            } else {
                let _ = writeln!(out, "{:.16e} {:.16e} {:.16e}", x[0], x[1], y);
            }
        }
    }
    let mut conn = Vec::new();
    for (e, k) in mesh.cells() {
        let el = base.element(e);
        let lo: Vec<usize> = el.iter().map(|&b| mesh.node(b, k)).collect();
        let hi: Vec<usize> = el.iter().map(|&b| mesh.node(b, k + 1)).collect();
        if base.dim() == 1 {
            conn.push(vec![lo[0], lo[1], hi[1], hi[0]]);
        } else {
            conn.push(lo.into_iter().chain(hi).collect());
        }
    }
    cells(
        &mut out,
        &conn,
        if base.dim() == 1 { VTK_QUAD } else { VTK_WEDGE },
    );
    point_data(&mut out, mesh.num_nodes(), fields)?;
    w.write_all(out.as_bytes())
}
