use std::collections::HashMap;

use super::{edge_key, BoundaryEdge, Mesh, Point};
use crate::error::{Error, Result};

/// A simple polygon given by its corners in counter-clockwise order; side `k`
/// runs from `corners[k]` to `corners[k + 1]` and carries `labels[k]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Polygon {
    pub corners: Vec<Point>,
    pub labels: Vec<String>,
}

impl Polygon {
    pub fn new(corners: Vec<Point>, labels: Vec<String>) -> Result<Self> {
        if corners.len() < 3 || corners.len() != labels.len() {
            return Err(Error::invalid("polygon needs >= 3 corners and one label per side"));
        }
        let p = Self { corners, labels };
        if p.signed_area() <= 0.0 {
            return Err(Error::invalid("polygon corners must be counter-clockwise"));
        }
        Ok(p)
    }

    pub fn rectangle(width: f64, height: f64) -> Self {
        Self {
            corners: vec![[0.0, 0.0], [width, 0.0], [width, height], [0.0, height]],
            labels: ["bottom", "right", "top", "left"].map(String::from).to_vec(),
        }
    }

    /// `size × size` square with the upper-right `size/2 × size/2` quadrant
    /// removed.
    pub fn l_shape(size: f64) -> Self {
        let h = 0.5 * size;
        Self {
            corners: vec![[0.0, 0.0], [size, 0.0], [size, h], [h, h], [h, size], [0.0, size]],
            labels: ["bottom", "right", "notch_bottom", "notch_side", "top", "left"]
                .map(String::from)
                .to_vec(),
        }
    }

    pub fn sides(&self) -> impl Iterator<Item = (Point, Point, &str)> + '_ {
        let n = self.corners.len();
        (0..n).map(move |k| (self.corners[k], self.corners[(k + 1) % n], self.labels[k].as_str()))
    }

    pub fn signed_area(&self) -> f64 {
        self.sides().map(|(a, b, _)| 0.5 * (a[0] * b[1] - b[0] * a[1])).sum()
    }

    /// Even-odd point-in-polygon test; points on the boundary count as inside.
    pub fn contains(&self, p: Point) -> bool {
        if self.sides().any(|(a, b, _)| on_segment(p, a, b, 1e-12)) {
            return true;
        }
        let mut inside = false;
        for (a, b, _) in self.sides() {
            if (a[1] > p[1]) != (b[1] > p[1]) {
                let x = a[0] + (p[1] - a[1]) * (b[0] - a[0]) / (b[1] - a[1]);
                if p[0] < x {
                    inside = !inside;
                }
            }
        }
        inside
    }

    /// Label of the side containing the segment `a`–`b`, if any.
    pub fn side_label(&self, a: Point, b: Point) -> Option<&str> {
        let scale = self
            .corners
            .iter()
            .flat_map(|c| c.iter())
            .fold(1.0_f64, |m, v| m.max(v.abs()));
        let tol = 1e-9 * scale;
        self.sides()
            .find(|(s, e, _)| on_segment(a, *s, *e, tol) && on_segment(b, *s, *e, tol))
            .map(|(_, _, l)| l)
    }

    fn is_rectilinear(&self) -> bool {
        self.sides().all(|(a, b, _)| a[0] == b[0] || a[1] == b[1])
    }
}

fn on_segment(p: Point, a: Point, b: Point, tol: f64) -> bool {
    let (dx, dy) = (b[0] - a[0], b[1] - a[1]);
    let len2 = dx * dx + dy * dy;
    let t = ((p[0] - a[0]) * dx + (p[1] - a[1]) * dy) / len2;
    if !(-tol..=1.0 + tol).contains(&t) {
        return false;
    }
    let (qx, qy) = (a[0] + t * dx, a[1] + t * dy);
    ((p[0] - qx).powi(2) + (p[1] - qy).powi(2)).sqrt() <= tol
}

/// Grid coordinates through every corner coordinate, with each gap split into
/// pieces no longer than `max_step`.
fn grid_lines(mut coords: Vec<f64>, max_step: f64) -> Vec<f64> {
    coords.sort_by(f64::total_cmp);
    coords.dedup();
    let mut out = vec![coords[0]];
    for w in coords.windows(2) {
        let pieces = ((w[1] - w[0]) / max_step - 1e-9).ceil().max(1.0) as usize;
        for k in 1..=pieces {
            out.push(if k == pieces {
                w[1]
            } else {
                w[0] + (w[1] - w[0]) * k as f64 / pieces as f64
            });
        }
    }
    out
}

/// Structured triangulation of an axis-aligned polygon. Cells of a
/// tensor grid through the polygon corners are split along alternating
/// diagonals; no edge exceeds `edge_target`.
pub fn generate_mesh(polygon: &Polygon, edge_target: f64) -> Result<Mesh> {
    if !(edge_target > 0.0) || !edge_target.is_finite() {
        return Err(Error::invalid(format!(
            "edge target must be positive, got {edge_target}"
        )));
    }
    if !polygon.is_rectilinear() {
        return Err(Error::invalid("structured generator needs an axis-aligned polygon"));
    }
    let step = edge_target / std::f64::consts::SQRT_2;
    let xs = grid_lines(polygon.corners.iter().map(|c| c[0]).collect(), step);
    let ys = grid_lines(polygon.corners.iter().map(|c| c[1]).collect(), step);
    let (nx, ny) = (xs.len() - 1, ys.len() - 1);

    let cell_inside = |i: usize, j: usize| polygon.contains([0.5 * (xs[i] + xs[i + 1]), 0.5 * (ys[j] + ys[j + 1])]);

    // Row-major vertex numbering over lattice points used by some cell.
    let mut used = vec![false; (nx + 1) * (ny + 1)];
    for j in 0..ny {
        for i in 0..nx {
            if cell_inside(i, j) {
                for (di, dj) in [(0, 0), (1, 0), (0, 1), (1, 1)] {
                    used[(j + dj) * (nx + 1) + i + di] = true;
                }
            }
        }
    }
    let mut index = vec![usize::MAX; used.len()];
    let mut vertices = Vec::new();
    for j in 0..=ny {
        for i in 0..=nx {
            let k = j * (nx + 1) + i;
            if used[k] {
                index[k] = vertices.len();
                vertices.push([xs[i], ys[j]]);
            }
        }
    }

    let mut triangles = Vec::new();
    for j in 0..ny {
        for i in 0..nx {
            if !cell_inside(i, j) {
                continue;
            }
            let v = |di: usize, dj: usize| index[(j + dj) * (nx + 1) + i + di];
            let (a, b, c, d) = (v(0, 0), v(1, 0), v(1, 1), v(0, 1));
            if (i + j) % 2 == 0 {
                triangles.push([a, b, c]);
                triangles.push([a, c, d]);
            } else {
                triangles.push([a, b, d]);
                triangles.push([b, c, d]);
            }
        }
    }

    let boundary_edges = label_boundary(polygon, &vertices, &triangles)?;
    Mesh::new(vertices, triangles, boundary_edges)
}

fn label_boundary(polygon: &Polygon, vertices: &[Point], triangles: &[[usize; 3]]) -> Result<Vec<BoundaryEdge>> {
    let mut count: HashMap<(usize, usize), usize> = HashMap::new();
    for tri in triangles {
        for k in 0..3 {
            *count.entry(edge_key(tri[k], tri[(k + 1) % 3])).or_insert(0) += 1;
        }
    }
    let mut edges = Vec::new();
    // Traverse in triangle order so the result is deterministic.
    for tri in triangles {
        for k in 0..3 {
            let (a, b) = (tri[k], tri[(k + 1) % 3]);
            if count[&edge_key(a, b)] == 1 {
                let label = polygon
                    .side_label(vertices[a], vertices[b])
                    .ok_or_else(|| Error::InvalidMesh(format!("boundary edge ({a}, {b}) is on no polygon side")))?;
                edges.push(BoundaryEdge {
                    vertices: [a, b],
                    label: label.to_string(),
                });
            }
        }
    }
    Ok(edges)
}

/// L-shaped 2 m × 2 m plate with the upper-right 1 m × 1 m quadrant removed.
pub fn generate_l_shaped_mesh(edge_target: f64) -> Result<Mesh> {
    generate_mesh(&Polygon::l_shape(2.0), edge_target)
}

/// Moves every interior vertex by an independent uniform offset in
/// `[−amplitude, amplitude]²`. Boundary vertices stay put, so labels and the
/// domain are unchanged. Breaks the mirror symmetries of the structured grid,
/// which otherwise produce repeated local eigenvalues.
pub fn perturb_interior(mesh: &Mesh, amplitude: f64, seed: u64) -> Result<Mesh> {
    use rand::{RngExt, SeedableRng};
    if !(amplitude >= 0.0) || !amplitude.is_finite() {
        return Err(Error::invalid(format!(
            "perturbation amplitude must be nonnegative, got {amplitude}"
        )));
    }
    let boundary = mesh.boundary_vertex_mask();
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut out = mesh.clone();
    for (v, p) in out.vertices.iter_mut().enumerate() {
        let (dx, dy) = (rng.random_range(-1.0..=1.0), rng.random_range(-1.0..=1.0));
        if !boundary[v] {
            p[0] += amplitude * dx;
            p[1] += amplitude * dy;
        }
    }
    for t in 0..out.triangles.len() {
        if out.triangle_area(t) <= 0.0 {
            return Err(Error::invalid(format!(
                "perturbation of {amplitude} inverts triangle {t}"
            )));
        }
    }
    out.validate()?;
    Ok(out)
}

/// Splits every triangle into four through its edge midpoints. Original
/// vertices keep their indices; midpoints are appended in first-visit order.
pub fn refine_uniform(mesh: &Mesh) -> Result<Mesh> {
    mesh.validate()?;
    let mut vertices = mesh.vertices.clone();
    let mut midpoint: HashMap<(usize, usize), usize> = HashMap::new();
    let mut mid = |a: usize, b: usize, vertices: &mut Vec<Point>| -> usize {
        *midpoint.entry(edge_key(a, b)).or_insert_with(|| {
            let (pa, pb) = (vertices[a], vertices[b]);
            vertices.push([0.5 * (pa[0] + pb[0]), 0.5 * (pa[1] + pb[1])]);
            vertices.len() - 1
        })
    };
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for &[a, b, c] in &mesh.triangles {
        let ab = mid(a, b, &mut vertices);
        let bc = mid(b, c, &mut vertices);
        let ca = mid(c, a, &mut vertices);
        triangles.extend([[a, ab, ca], [ab, b, bc], [ca, bc, c], [ab, bc, ca]]);
    }
    let mut boundary_edges = Vec::with_capacity(2 * mesh.boundary_edges.len());
    for e in &mesh.boundary_edges {
        let [a, b] = e.vertices;
        let m = mid(a, b, &mut vertices);
        boundary_edges.push(BoundaryEdge {
            vertices: [a, m],
            label: e.label.clone(),
        });
        boundary_edges.push(BoundaryEdge {
            vertices: [m, b],
            label: e.label.clone(),
        });
    }
    Mesh::new(vertices, triangles, boundary_edges)
}
