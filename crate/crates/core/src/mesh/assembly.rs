use super::{dist, Mesh, Point};
use crate::error::{Error, Result};
use crate::linalg::{csr_from_triplets, SparseMatrix, Vector};

/// Convective exchange `λ∂x/∂n + νx = νx_e` on every boundary edge with the
/// given label.
#[derive(Debug, Clone, PartialEq)]
pub struct RobinTerm {
    pub label: String,
    pub nu: f64,
    pub external: f64,
}

/// Global mass and stiffness matrices of a mesh.
#[derive(Debug, Clone)]
pub struct FeSystem {
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
}

impl FeSystem {
    pub fn assemble(mesh: &Mesh, diffusivity: f64, robin: &[RobinTerm]) -> Result<Self> {
        Ok(Self {
            mass: assemble_mass(mesh)?,
            stiffness: assemble_stiffness(mesh, diffusivity, robin)?,
        })
    }

    pub fn n(&self) -> usize {
        self.mass.nrows()
    }
}

fn corners(mesh: &Mesh, t: usize) -> Result<[Point; 3]> {
    let area = mesh.triangle_area(t);
    if area <= 0.0 {
        return Err(Error::DegenerateTriangle { triangle: t, area });
    }
    Ok(mesh.triangles[t].map(|v| mesh.vertices[v]))
}

/// Exact `∫ φ_i φ_j` over one triangle.
pub fn element_mass(p: [Point; 3]) -> [[f64; 3]; 3] {
    let area = super::signed_area(p[0], p[1], p[2]);
    let mut out = [[area / 12.0; 3]; 3];
    for (i, row) in out.iter_mut().enumerate() {
        row[i] = area / 6.0;
    }
    out
}

/// Exact `λ ∫ ∇φ_i · ∇φ_j` over one triangle.
pub fn element_stiffness(p: [Point; 3], diffusivity: f64) -> [[f64; 3]; 3] {
    let area = super::signed_area(p[0], p[1], p[2]);
    // Gradient of φ_i is (b_i, c_i) / (2·area).
    let b = [p[1][1] - p[2][1], p[2][1] - p[0][1], p[0][1] - p[1][1]];
    let c = [p[2][0] - p[1][0], p[0][0] - p[2][0], p[1][0] - p[0][0]];
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = diffusivity * (b[i] * b[j] + c[i] * c[j]) / (4.0 * area);
        }
    }
    out
}

/// `ν ∫ φ_i φ_j` along a boundary edge of length `h`.
pub fn robin_edge_mass(h: f64, nu: f64) -> [[f64; 2]; 2] {
    let d = nu * h / 3.0;
    let o = nu * h / 6.0;
    [[d, o], [o, d]]
}

pub fn assemble_mass(mesh: &Mesh) -> Result<SparseMatrix> {
    let mut trip = Vec::with_capacity(9 * mesh.triangle_count());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let block = element_mass(corners(mesh, t)?);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], block[i][j]));
            }
        }
    }
    let n = mesh.vertex_count();
    Ok(csr_from_triplets(n, n, trip))
}

fn check_robin(mesh: &Mesh, robin: &[RobinTerm]) -> Result<()> {
    for term in robin {
        if !(term.nu >= 0.0) || !term.nu.is_finite() {
            return Err(Error::invalid(format!(
                "Robin coefficient must be >= 0, got {}",
                term.nu
            )));
        }
        if !mesh.boundary_edges.iter().any(|e| e.label == term.label) {
            return Err(Error::invalid(format!("unknown boundary label '{}'", term.label)));
        }
    }
    Ok(())
}

pub fn assemble_stiffness(mesh: &Mesh, diffusivity: f64, robin: &[RobinTerm]) -> Result<SparseMatrix> {
    if !(diffusivity > 0.0) || !diffusivity.is_finite() {
        return Err(Error::invalid(format!(
            "diffusivity must be positive, got {diffusivity}"
        )));
    }
    check_robin(mesh, robin)?;
    let mut trip = Vec::with_capacity(9 * mesh.triangle_count());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let block = element_stiffness(corners(mesh, t)?, diffusivity);
        for i in 0..3 {
            for j in 0..3 {
                trip.push((tri[i], tri[j], block[i][j]));
            }
        }
    }
    for term in robin {
        for e in mesh.boundary_edges.iter().filter(|e| e.label == term.label) {
            let h = dist(mesh.vertices[e.vertices[0]], mesh.vertices[e.vertices[1]]);
            let block = robin_edge_mass(h, term.nu);
            for i in 0..2 {
                for j in 0..2 {
                    trip.push((e.vertices[i], e.vertices[j], block[i][j]));
                }
            }
        }
    }
    let n = mesh.vertex_count();
    Ok(csr_from_triplets(n, n, trip))
}

/// `u_i = ∫ φ_i f(·, t) dΩ + Σ_Robin ∫ φ_i ν x_e dΓ`. The area integral uses
/// the edge-midpoint rule, exact when `f` is linear in space.
pub fn assemble_load(mesh: &Mesh, forcing: impl Fn(Point, f64) -> f64, t: f64, robin: &[RobinTerm]) -> Result<Vector> {
    check_robin(mesh, robin)?;
    let mut u = Vector::zeros(mesh.vertex_count());
    for (k, tri) in mesh.triangles.iter().enumerate() {
        let p = corners(mesh, k)?;
        let area = mesh.triangle_area(k);
        let mid = |a: usize, b: usize| [0.5 * (p[a][0] + p[b][0]), 0.5 * (p[a][1] + p[b][1])];
        // f at the midpoint of the edge opposite vertex i.
        let fm = [forcing(mid(1, 2), t), forcing(mid(2, 0), t), forcing(mid(0, 1), t)];
        for i in 0..3 {
            // φ_i is 1/2 at the two adjacent midpoints and 0 at the opposite one.
            u[tri[i]] += area / 6.0 * (fm[(i + 1) % 3] + fm[(i + 2) % 3]);
        }
    }
    for term in robin {
        for e in mesh.boundary_edges.iter().filter(|e| e.label == term.label) {
            let h = dist(mesh.vertices[e.vertices[0]], mesh.vertices[e.vertices[1]]);
            for &v in &e.vertices {
                u[v] += term.nu * term.external * h / 2.0;
            }
        }
    }
    Ok(u)
}
