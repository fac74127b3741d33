//! Minimal Wavefront OBJ reader/writer: `v` and `f` records only.

use std::io::{BufRead, Write};

use nalgebra::Point3;

use super::mesh::TriangleMesh;
use super::GeometryError;

/// Parses vertices and faces; polygons are fan-triangulated, `v/vt/vn` forms accepted.
pub fn read_obj(reader: impl BufRead) -> Result<TriangleMesh, GeometryError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (n, line) in reader.lines().enumerate() {
        let line = line?;
        let line_no = n + 1;
        let mut parts = line.split_whitespace();
        match parts.next() {
            Some("v") => {
                let coords: Vec<f64> = parts
                    .take(3)
                    .map(str::parse)
                    .collect::<Result<_, _>>()
                    .map_err(|_| GeometryError::Obj {
                        line: line_no,
                        message: "bad vertex coordinate".into(),
                    })?;
                if coords.len() != 3 {
                    return Err(GeometryError::Obj {
                        line: line_no,
                        message: "vertex needs 3 coordinates".into(),
                    });
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let idx: Vec<u32> = parts
                    .map(|tok| {
                        let first = tok.split('/').next().unwrap_or("");
                        let i: i64 = first.parse().map_err(|_| GeometryError::Obj {
                            line: line_no,
                            message: format!("bad face index {tok:?}"),
                        })?;
                        let resolved = if i < 0 { vertices.len() as i64 + i } else { i - 1 };
                        u32::try_from(resolved).map_err(|_| GeometryError::Obj {
                            line: line_no,
                            message: format!("face index {i} out of range"),
                        })
                    })
                    .collect::<Result<_, _>>()?;
                if idx.len() < 3 {
                    return Err(GeometryError::Obj {
                        line: line_no,
                        message: "face needs at least 3 vertices".into(),
                    });
                }
                for k in 1..idx.len() - 1 {
                    triangles.push([idx[0], idx[k], idx[k + 1]]);
                }
            }
            _ => {}
        }
    }
    TriangleMesh::new(vertices, triangles)
}

/// Writes shortest round-trip decimal coordinates, so a read gives back identical bits.
pub fn write_obj(mesh: &TriangleMesh, mut w: impl Write) -> std::io::Result<()> {
    for v in mesh.vertices() {
        writeln!(w, "v {:?} {:?} {:?}", v.x, v.y, v.z)?;
    }
    for t in mesh.triangles() {
        writeln!(w, "f {} {} {}", t[0] + 1, t[1] + 1, t[2] + 1)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quad_is_fan_triangulated() {
        let src = "# quad\nv 0 0 0\nv 1 0 0\nv 1 1 0\nv 0 1 0\nf 1/1 2/2 3/3 4/4\n";
        let mesh = read_obj(src.as_bytes()).unwrap();
        assert_eq!(mesh.triangles(), &[[0, 1, 2], [0, 2, 3]]);
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let src = "v 0.1 -0.30000000000000004 1e-7\nv 1 0 0\nv 0 1 0.7\nf 1 2 3\n";
        let mesh = read_obj(src.as_bytes()).unwrap();
        let mut out = Vec::new();
        write_obj(&mesh, &mut out).unwrap();
        assert_eq!(read_obj(out.as_slice()).unwrap(), mesh);
    }

    #[test]
    fn bad_index_reports_line() {
        let err = read_obj("v 0 0 0\nf 1 2 x\n".as_bytes()).unwrap_err();
        assert!(matches!(err, GeometryError::Obj { line: 2, .. }));
    }
}
