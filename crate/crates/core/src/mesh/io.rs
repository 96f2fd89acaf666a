//! Plain-text mesh format:
//!
//! ```text
//! <V> vertices <T> triangles <B> edges
//! x y            (V lines)
//! i j k          (T lines)
//! i j label      (B lines)
//! ```
//!
//! Coordinates are written with 17 significant digits so a write/read cycle
//! is lossless.

use std::io::{BufRead, Write};

use super::{BoundaryEdge, Mesh};
use crate::error::{Error, Result};

pub fn write_mesh(mesh: &Mesh, mut w: impl Write) -> Result<()> {
    writeln!(
        w,
        "{} vertices {} triangles {} edges",
        mesh.vertex_count(),
        mesh.triangle_count(),
        mesh.boundary_edges.len()
    )?;
    for p in &mesh.vertices {
        writeln!(w, "{:.16e} {:.16e}", p[0], p[1])?;
    }
    for t in &mesh.triangles {
        writeln!(w, "{} {} {}", t[0], t[1], t[2])?;
    }
    for e in &mesh.boundary_edges {
        writeln!(w, "{} {} {}", e.vertices[0], e.vertices[1], e.label)?;
    }
    Ok(())
}

fn bad(line: usize, msg: impl Into<String>) -> Error {
    Error::InvalidMesh(format!("line {line}: {}", msg.into()))
}

fn parse<T: std::str::FromStr>(tok: Option<&str>, line: usize, what: &str) -> Result<T> {
    tok.ok_or_else(|| bad(line, format!("missing {what}")))?
        .parse()
        .map_err(|_| bad(line, format!("malformed {what}")))
}

pub fn read_mesh(r: impl BufRead) -> Result<Mesh> {
    let mut lines = r.lines().enumerate().map(|(i, l)| (i + 1, l));
    let mut next = |what: &str| -> Result<(usize, String)> {
        match lines.next() {
            Some((n, l)) => Ok((n, l?)),
            None => Err(Error::InvalidMesh(format!("unexpected end of file, expected {what}"))),
        }
    };

    let (n, header) = next("header")?;
    let tok: Vec<&str> = header.split_whitespace().collect();
    if tok.len() != 6 || tok[1] != "vertices" || tok[3] != "triangles" || tok[5] != "edges" {
        return Err(bad(n, "expected '<V> vertices <T> triangles <B> edges'"));
    }
    let nv: usize = parse(Some(tok[0]), n, "vertex count")?;
    let nt: usize = parse(Some(tok[2]), n, "triangle count")?;
    let nb: usize = parse(Some(tok[4]), n, "edge count")?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (n, l) = next("vertex")?;
        let mut it = l.split_whitespace();
        vertices.push([parse(it.next(), n, "x")?, parse(it.next(), n, "y")?]);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let (n, l) = next("triangle")?;
        let mut it = l.split_whitespace();
        triangles.push([
            parse(it.next(), n, "vertex index")?,
            parse(it.next(), n, "vertex index")?,
            parse(it.next(), n, "vertex index")?,
        ]);
    }
    let mut boundary_edges = Vec::with_capacity(nb);
    for _ in 0..nb {
        let (n, l) = next("boundary edge")?;
        let mut it = l.split_whitespace();
        let a = parse(it.next(), n, "vertex index")?;
        let b = parse(it.next(), n, "vertex index")?;
        let label = it.next().ok_or_else(|| bad(n, "missing label"))?.to_string();
        boundary_edges.push(BoundaryEdge {
            vertices: [a, b],
            label,
        });
    }
    Mesh::new(vertices, triangles, boundary_edges)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{generate_l_shaped_mesh, refine_uniform};

    #[test]
    fn round_trip_is_exact() {
        let mesh = refine_uniform(&generate_l_shaped_mesh(0.3).unwrap()).unwrap();
        let mut buf = Vec::new();
        write_mesh(&mesh, &mut buf).unwrap();
        let back = read_mesh(buf.as_slice()).unwrap();
        assert_eq!(back, mesh);
        let mut again = Vec::new();
        write_mesh(&back, &mut again).unwrap();
        assert_eq!(buf, again);
    }

    #[test]
    fn header_counts_match() {
        let mesh = generate_l_shaped_mesh(0.2).unwrap();
        let mut buf = Vec::new();
        write_mesh(&mesh, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let header = text.lines().next().unwrap();
        assert_eq!(
            header,
            format!(
                "{} vertices {} triangles {} edges",
                mesh.vertex_count(),
                mesh.triangle_count(),
                mesh.boundary_edges.len()
            )
        );
    }

    #[test]
    fn truncated_file_rejected() {
        let text = "3 vertices 1 triangles 0 edges\n0 0\n1 0\n";
        assert!(matches!(read_mesh(text.as_bytes()), Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn malformed_number_names_line() {
        let text = "3 vertices 1 triangles 0 edges\n0 0\n1 zero\n0 1\n0 1 2\n";
        let err = read_mesh(text.as_bytes()).unwrap_err().to_string();
        assert!(err.contains("line 3"), "{err}");
    }
}
