//! Triangular meshes of polygonal domains, piecewise-linear interpolation and
//! finite-element assembly.

mod assembly;
mod bc;
mod generate;
mod io;

pub use assembly::{
    assemble_load, assemble_mass, assemble_stiffness, element_mass, element_stiffness, robin_edge_mass, FeSystem,
    RobinTerm,
};
pub use bc::{apply_essential_bc, DirichletCondition, ReducedSystem};
pub use generate::{generate_l_shaped_mesh, generate_mesh, perturb_interior, refine_uniform, Polygon};
pub use io::{read_mesh, write_mesh};

use crate::error::{Error, Result};
use crate::linalg::Vector;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq)]
pub struct BoundaryEdge {
    pub vertices: [usize; 2],
    pub label: String,
}

/// A conforming triangulation. Triangles are counter-clockwise.
#[derive(Debug, Clone, PartialEq)]
pub struct Mesh {
    pub vertices: Vec<Point>,
    pub triangles: Vec<[usize; 3]>,
    pub boundary_edges: Vec<BoundaryEdge>,
}

/// Containing triangle of a point and its barycentric weights.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PointLocation {
    pub triangle: usize,
    pub weights: [f64; 3],
}

const LOCATE_TOL: f64 = 1e-12;

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

impl Mesh {
    /// Builds a mesh and checks its structural invariants.
    pub fn new(vertices: Vec<Point>, triangles: Vec<[usize; 3]>, boundary_edges: Vec<BoundaryEdge>) -> Result<Self> {
        let mesh = Self {
            vertices,
            triangles,
            boundary_edges,
        };
        mesh.validate()?;
        Ok(mesh)
    }

    pub fn vertex_count(&self) -> usize {
        self.vertices.len()
    }

    pub fn triangle_count(&self) -> usize {
        self.triangles.len()
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.vertices.len();
        for (t, tri) in self.triangles.iter().enumerate() {
            if tri.iter().any(|&v| v >= n) {
                return Err(Error::InvalidMesh(format!("triangle {t} has an out-of-range vertex")));
            }
            let area = self.triangle_area(t);
            if area <= 0.0 {
                return Err(Error::DegenerateTriangle { triangle: t, area });
            }
        }
        let counts = self.edge_triangle_counts();
        for (e, edge) in self.boundary_edges.iter().enumerate() {
            let [a, b] = edge.vertices;
            if a >= n || b >= n {
                return Err(Error::InvalidMesh(format!("boundary edge {e} is out of range")));
            }
            if counts.get(&edge_key(a, b)).copied().unwrap_or(0) != 1 {
                return Err(Error::InvalidMesh(format!(
                    "boundary edge {e} ({a}, {b}) does not belong to exactly one triangle"
                )));
            }
        }
        Ok(())
    }

    fn edge_triangle_counts(&self) -> std::collections::HashMap<(usize, usize), usize> {
        let mut counts = std::collections::HashMap::new();
        for tri in &self.triangles {
            for k in 0..3 {
                *counts.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
            }
        }
        counts
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangles[t];
        signed_area(self.vertices[a], self.vertices[b], self.vertices[c])
    }

    pub fn area(&self) -> f64 {
        (0..self.triangles.len()).map(|t| self.triangle_area(t)).sum()
    }

    pub fn max_edge_length(&self) -> f64 {
        self.triangles
            .iter()
            .flat_map(|tri| (0..3).map(move |k| (tri[k], tri[(k + 1) % 3])))
            .map(|(a, b)| dist(self.vertices[a], self.vertices[b]))
            .fold(0.0, f64::max)
    }

    /// Triangles incident to each vertex, in ascending order.
    pub fn vertex_triangles(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.vertices.len()];
        for (t, tri) in self.triangles.iter().enumerate() {
            for &v in tri {
                out[v].push(t);
            }
        }
        out
    }

    /// Sorted, deduplicated boundary labels.
    pub fn labels(&self) -> Vec<String> {
        let mut labels: Vec<String> = self.boundary_edges.iter().map(|e| e.label.clone()).collect();
        labels.sort();
        labels.dedup();
        labels
    }

    /// Vertices touched by boundary edges carrying `label`, ascending.
    pub fn vertices_with_label(&self, label: &str) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .boundary_edges
            .iter()
            .filter(|e| e.label == label)
            .flat_map(|e| e.vertices)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }

    /// Flags vertices lying on the domain boundary.
    pub fn boundary_vertex_mask(&self) -> Vec<bool> {
        let mut mask = vec![false; self.vertices.len()];
        for e in &self.boundary_edges {
            mask[e.vertices[0]] = true;
            mask[e.vertices[1]] = true;
        }
        mask
    }

    pub fn barycentric(&self, t: usize, p: Point) -> [f64; 3] {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        let area = signed_area(pa, pb, pc);
        [
            signed_area(p, pb, pc) / area,
            signed_area(pa, p, pc) / area,
            signed_area(pa, pb, p) / area,
        ]
    }

    /// Finds the first triangle (in index order) containing `p`.
    pub fn locate(&self, p: Point) -> Result<PointLocation> {
        for t in 0..self.triangles.len() {
            let w = self.barycentric(t, p);
            if w.iter().all(|&x| x >= -LOCATE_TOL) {
                return Ok(PointLocation {
                    triangle: t,
                    weights: w,
                });
            }
        }
        Err(Error::OutOfDomain { x: p[0], y: p[1] })
    }

    /// Piecewise-linear interpolation of vertex coefficients at `p`.
    pub fn eval_field(&self, coeffs: &Vector, p: Point) -> Result<f64> {
        if coeffs.len() != self.vertices.len() {
            return Err(Error::invalid(format!(
                "coefficient vector has length {}, mesh has {} vertices",
                coeffs.len(),
                self.vertices.len()
            )));
        }
        let loc = self.locate(p)?;
        Ok(self.eval_at(coeffs, &loc))
    }

    pub fn eval_at(&self, coeffs: &Vector, loc: &PointLocation) -> f64 {
        let tri = self.triangles[loc.triangle];
        (0..3).map(|k| loc.weights[k] * coeffs[tri[k]]).sum()
    }

    pub fn centroid(&self, t: usize) -> Point {
        let [a, b, c] = self.triangles[t];
        let (pa, pb, pc) = (self.vertices[a], self.vertices[b], self.vertices[c]);
        [(pa[0] + pb[0] + pc[0]) / 3.0, (pa[1] + pb[1] + pc[1]) / 3.0]
    }
}

pub(crate) fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

pub(crate) fn dist(a: Point, b: Point) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_triangle() -> Mesh {
        Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![
                BoundaryEdge {
                    vertices: [0, 1],
                    label: "bottom".into(),
                },
                BoundaryEdge {
                    vertices: [1, 2],
                    label: "hyp".into(),
                },
                BoundaryEdge {
                    vertices: [2, 0],
                    label: "left".into(),
                },
            ],
        )
        .unwrap()
    }

    #[test]
    fn clockwise_triangle_is_rejected() {
        let err = Mesh::new(vec![[0.0, 0.0], [0.0, 1.0], [1.0, 0.0]], vec![[0, 1, 2]], vec![]);
        assert!(matches!(err, Err(Error::DegenerateTriangle { triangle: 0, .. })));
    }

    #[test]
    fn interior_edge_cannot_be_boundary() {
        let m = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [1.0, 1.0], [0.0, 1.0]],
            vec![[0, 1, 2], [0, 2, 3]],
            vec![BoundaryEdge {
                vertices: [0, 2],
                label: "diag".into(),
            }],
        );
        assert!(matches!(m, Err(Error::InvalidMesh(_))));
    }

    #[test]
    fn eval_at_vertices_and_centroid() {
        let m = unit_triangle();
        let c = Vector::from_vec(vec![3.0, -1.0, 7.0]);
        for (j, p) in m.vertices.iter().enumerate() {
            assert!((m.eval_field(&c, *p).unwrap() - c[j]).abs() < 1e-14);
        }
        let centroid = m.eval_field(&c, m.centroid(0)).unwrap();
        assert!((centroid - 3.0).abs() < 1e-14);
    }

    #[test]
    fn outside_point_is_an_error() {
        let m = unit_triangle();
        let c = Vector::from_vec(vec![0.0; 3]);
        assert!(matches!(m.eval_field(&c, [0.8, 0.8]), Err(Error::OutOfDomain { .. })));
    }
}
