//! Overlapping domain decomposition: subdomains grown from a seed partition,
//! internal and interface index sets, local matrix blocks and the augmented
//! (duplicated-overlap) global system.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::linalg::{csr_from_triplets, csr_submatrix, Matrix, SparseMatrix, Vector};
use crate::mesh::Mesh;

/// Vertices of subdomain `m` that node `m` reads from neighbor `j`.
#[derive(Debug, Clone, PartialEq)]
pub struct Interface {
    pub neighbor: usize,
    /// Global vertex ids, ascending.
    pub vertices: Vec<usize>,
    /// Positions of `vertices` inside the neighbor's internal set.
    pub neighbor_local: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decomposition {
    /// Triangles of each subdomain, ascending.
    pub triangles: Vec<Vec<usize>>,
    /// All vertices of each subdomain, ascending.
    pub vertices: Vec<Vec<usize>>,
    /// Internal set: subdomain vertices whose incident triangles all belong
    /// to the subdomain. Position in this list is the local index.
    pub internal: Vec<Vec<usize>>,
    /// Interface sets, ascending by neighbor.
    pub interfaces: Vec<Vec<Interface>>,
    offsets: Vec<usize>,
    copies: Vec<Vec<(usize, usize)>>,
}

impl Decomposition {
    pub fn node_count(&self) -> usize {
        self.internal.len()
    }

    pub fn vertex_count(&self) -> usize {
        self.copies.len()
    }

    /// Neighborhood including the node itself, ascending.
    pub fn neighborhood(&self, m: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.interfaces[m].iter().map(|i| i.neighbor).collect();
        out.push(m);
        out.sort_unstable();
        out
    }

    /// Directed edges `(j, m)`: node `m` reads from node `j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (m, ifs) in self.interfaces.iter().enumerate() {
            for i in ifs {
                out.push((i.neighbor, m));
            }
        }
        out.sort_unstable();
        out
    }

    pub fn local_dim(&self, m: usize) -> usize {
        self.internal[m].len()
    }

    pub fn augmented_dim(&self) -> usize {
        *self.offsets.last().unwrap()
    }

    /// Start of node `m`'s block in the augmented ordering.
    pub fn offset(&self, m: usize) -> usize {
        self.offsets[m]
    }

    /// Node and local index of augmented index `i`.
    pub fn split_augmented(&self, i: usize) -> (usize, usize) {
        let m = self.offsets.partition_point(|&o| o <= i) - 1;
        (m, i - self.offsets[m])
    }

    /// Entries `(row, col)` of an augmented-ordering coupling matrix whose
    /// column is not a vertex of the interface set that the row's node reads
    /// from the column's node. Entries inside the row's own block are not
    /// coupling terms and are ignored.
    pub fn interface_support_violations(&self, entries: impl IntoIterator<Item = (usize, usize)>) -> usize {
        entries
            .into_iter()
            .filter(|&(r, c)| {
                let (m, _) = self.split_augmented(r);
                let (j, lc) = self.split_augmented(c);
                if j == m {
                    return false;
                }
                let vertex = self.internal[j][lc];
                !self.interfaces[m]
                    .iter()
                    .any(|i| i.neighbor == j && i.vertices.binary_search(&vertex).is_ok())
            })
            .count()
    }

    pub fn local_index(&self, m: usize, vertex: usize) -> Option<usize> {
        self.internal[m].binary_search(&vertex).ok()
    }

    /// All `(node, local index)` copies of a global vertex, ascending by node.
    pub fn copies(&self, vertex: usize) -> &[(usize, usize)] {
        &self.copies[vertex]
    }

    /// Restriction of a global vector to node `m`.
    pub fn restrict(&self, m: usize, global: &Vector) -> Vector {
        Vector::from_iterator(self.internal[m].len(), self.internal[m].iter().map(|&v| global[v]))
    }

    /// Augmented vector holding a copy of `global` in every node.
    pub fn duplicate(&self, global: &Vector) -> Vector {
        let mut out = Vector::zeros(self.augmented_dim());
        for m in 0..self.node_count() {
            for (l, &v) in self.internal[m].iter().enumerate() {
                out[self.offsets[m] + l] = global[v];
            }
        }
        out
    }

    /// Global vector from the first copy of each vertex.
    pub fn gather_first(&self, augmented: &Vector) -> Vector {
        Vector::from_iterator(
            self.vertex_count(),
            self.copies.iter().map(|c| augmented[self.offsets[c[0].0] + c[0].1]),
        )
    }

    /// Global vector averaging all copies of each vertex.
    pub fn gather_mean(&self, augmented: &Vector) -> Vector {
        Vector::from_iterator(
            self.vertex_count(),
            self.copies.iter().map(|c| {
                let sum: f64 = c.iter().map(|&(m, l)| augmented[self.offsets[m] + l]).sum();
                sum / c.len() as f64
            }),
        )
    }

    /// Largest spread between copies of the same vertex.
    pub fn max_disagreement(&self, augmented: &Vector) -> f64 {
        self.copies
            .iter()
            .map(|c| {
                let vals = c.iter().map(|&(m, l)| augmented[self.offsets[m] + l]);
                let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| (lo.min(x), hi.max(x)));
                hi - lo
            })
            .fold(0.0, f64::max)
    }

    /// Text dump: per node its subdomain vertices, internal set and interface
    /// sets.
    pub fn dump(&self) -> String {
        let list = |v: &[usize]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(" ");
        let mut s = String::new();
        let _ = writeln!(s, "nodes {}", self.node_count());
        let _ = writeln!(s, "vertices {}", self.vertex_count());
        let _ = writeln!(s, "augmented {}", self.augmented_dim());
        for m in 0..self.node_count() {
            let _ = writeln!(s, "node {m}");
            let _ = writeln!(s, "  subdomain {}", list(&self.vertices[m]));
            let _ = writeln!(s, "  internal {}", list(&self.internal[m]));
            for i in &self.interfaces[m] {
                let _ = writeln!(s, "  interface {} {}", i.neighbor, list(&i.vertices));
            }
        }
        s
    }
}

/// Seed partition from axis-aligned rectangles `[x0, x1, y0, y1]`: each vertex
/// goes to the first rectangle (closed) containing it.
pub fn seed_from_rectangles(mesh: &Mesh, rects: &[[f64; 4]]) -> Result<Vec<usize>> {
    let tol = 1e-12;
    mesh.vertices
        .iter()
        .enumerate()
        .map(|(v, p)| {
            rects
                .iter()
                .position(|r| p[0] >= r[0] - tol && p[0] <= r[1] + tol && p[1] >= r[2] - tol && p[1] <= r[3] + tol)
                .ok_or_else(|| Error::invalid(format!("vertex {v} at ({}, {}) is in no seed rectangle", p[0], p[1])))
        })
        .collect()
}

/// Builds subdomains from a vertex→node seed map. The core is every triangle
/// touching a seed vertex; each overlap layer then adds every triangle
/// touching the current subdomain. Without a layer the internal sets would
/// partition the vertices and no state would be shared.
pub fn decompose(mesh: &Mesh, seed: &[usize], overlap_layers: usize) -> Result<Decomposition> {
    if overlap_layers < 1 {
        return Err(Error::invalid("overlap_layers must be at least 1"));
    }
    if seed.len() != mesh.vertex_count() {
        return Err(Error::invalid(format!(
            "seed partition has {} entries for {} vertices",
            seed.len(),
            mesh.vertex_count()
        )));
    }
    let nodes = seed.iter().copied().max().map_or(0, |m| m + 1);
    let mut members = vec![Vec::new(); nodes];
    for (v, &m) in seed.iter().enumerate() {
        members[m].push(v);
    }
    if let Some(m) = members.iter().position(Vec::is_empty) {
        return Err(Error::invalid(format!("seed partition leaves node {m} empty")));
    }

    let vt = mesh.vertex_triangles();
    let triangles: Vec<Vec<usize>> = members
        .iter()
        .map(|seed_vertices| {
            let mut verts: BTreeSet<usize> = seed_vertices.iter().copied().collect();
            let mut tris = BTreeSet::new();
            for _ in 0..=overlap_layers {
                tris = verts.iter().flat_map(|&v| vt[v].iter().copied()).collect();
                verts = tris.iter().flat_map(|&t| mesh.triangles[t]).collect();
            }
            tris.into_iter().collect()
        })
        .collect();
    decompose_with_triangles(mesh, triangles)
}

/// Builds the index sets for given subdomain triangle sets.
pub fn decompose_with_triangles(mesh: &Mesh, triangles: Vec<Vec<usize>>) -> Result<Decomposition> {
    let n = mesh.vertex_count();
    let nodes = triangles.len();
    let vt = mesh.vertex_triangles();
    let mut vertices = Vec::with_capacity(nodes);
    let mut internal = Vec::with_capacity(nodes);
    for (m, tris) in triangles.iter().enumerate() {
        if tris.iter().any(|&t| t >= mesh.triangle_count()) {
            return Err(Error::invalid(format!("subdomain {m} has an out-of-range triangle")));
        }
        let mut in_sub = vec![false; mesh.triangle_count()];
        for &t in tris {
            in_sub[t] = true;
        }
        let verts: BTreeSet<usize> = tris.iter().flat_map(|&t| mesh.triangles[t]).collect();
        let inner: Vec<usize> = verts
            .iter()
            .copied()
            .filter(|&v| vt[v].iter().all(|&t| in_sub[t]))
            .collect();
        vertices.push(verts.into_iter().collect::<Vec<_>>());
        internal.push(inner);
    }

    let mut copies = vec![Vec::new(); n];
    for (m, inner) in internal.iter().enumerate() {
        for (l, &v) in inner.iter().enumerate() {
            copies[v].push((m, l));
        }
    }
    if let Some(v) = copies.iter().position(Vec::is_empty) {
        return Err(Error::DecompositionInfeasible(format!(
            "vertex {v} is internal to no subdomain"
        )));
    }

    let mut interfaces = Vec::with_capacity(nodes);
    for m in 0..nodes {
        let mut by_neighbor: Vec<Vec<usize>> = vec![Vec::new(); nodes];
        for &v in &vertices[m] {
            if internal[m].binary_search(&v).is_ok() {
                continue;
            }
            let owner = copies[v].iter().map(|&(j, _)| j).find(|&j| j != m).ok_or_else(|| {
                Error::DecompositionInfeasible(format!(
                    "interface vertex {v} of subdomain {m} is internal to no other subdomain"
                ))
            })?;
            by_neighbor[owner].push(v);
        }
        let ifs = by_neighbor
            .into_iter()
            .enumerate()
            .filter(|(_, vs)| !vs.is_empty())
            .map(|(j, vs)| Interface {
                neighbor: j,
                neighbor_local: vs.iter().map(|v| internal[j].binary_search(v).unwrap()).collect(),
                vertices: vs,
            })
            .collect();
        interfaces.push(ifs);
    }

    let mut offsets = vec![0];
    for inner in &internal {
        offsets.push(offsets.last().unwrap() + inner.len());
    }
    Ok(Decomposition {
        triangles,
        vertices,
        internal,
        interfaces,
        offsets,
        copies,
    })
}

/// Rows of the global matrices belonging to one node, split by column set.
#[derive(Debug, Clone)]
pub struct LocalBlocks {
    pub node: usize,
    pub mass: Matrix,
    pub stiffness: Matrix,
    pub couplings: Vec<CouplingBlock>,
}

/// Columns of a node's rows that refer to one neighbor's interface set.
#[derive(Debug, Clone)]
pub struct CouplingBlock {
    pub neighbor: usize,
    /// Local indices in the neighbor's state for each column.
    pub neighbor_local: Vec<usize>,
    pub mass: Matrix,
    pub stiffness: Matrix,
}

pub fn extract_local_blocks(
    mass: &SparseMatrix,
    stiffness: &SparseMatrix,
    dec: &Decomposition,
    m: usize,
) -> LocalBlocks {
    let rows = &dec.internal[m];
    let couplings = dec.interfaces[m]
        .iter()
        .map(|i| CouplingBlock {
            neighbor: i.neighbor,
            neighbor_local: i.neighbor_local.clone(),
            mass: csr_submatrix(mass, rows, &i.vertices),
            stiffness: csr_submatrix(stiffness, rows, &i.vertices),
        })
        .collect();
    LocalBlocks {
        node: m,
        mass: csr_submatrix(mass, rows, rows),
        stiffness: csr_submatrix(stiffness, rows, rows),
        couplings,
    }
}

/// Augmented system `(M̃_D + M̃_F) x̃' + (S̃_D + S̃_F) x̃ = ũ` in node-major
/// ordering.
#[derive(Debug, Clone)]
pub struct AugmentedSystem {
    pub mass_diag: SparseMatrix,
    pub stiffness_diag: SparseMatrix,
    pub mass_coupling: SparseMatrix,
    pub stiffness_coupling: SparseMatrix,
}

impl AugmentedSystem {
    pub fn dim(&self) -> usize {
        self.mass_diag.nrows()
    }
}

pub fn build_augmented(mass: &SparseMatrix, stiffness: &SparseMatrix, dec: &Decomposition) -> AugmentedSystem {
    let dim = dec.augmented_dim();
    let mut md = Vec::new();
    let mut sd = Vec::new();
    let mut mf = Vec::new();
    let mut sf = Vec::new();
    for m in 0..dec.node_count() {
        let blocks = extract_local_blocks(mass, stiffness, dec, m);
        let om = dec.offset(m);
        push_dense(&mut md, &blocks.mass, om, |c| om + c);
        push_dense(&mut sd, &blocks.stiffness, om, |c| om + c);
        for cb in &blocks.couplings {
            let oj = dec.offset(cb.neighbor);
            push_dense(&mut mf, &cb.mass, om, |c| oj + cb.neighbor_local[c]);
            push_dense(&mut sf, &cb.stiffness, om, |c| oj + cb.neighbor_local[c]);
        }
    }
    AugmentedSystem {
        mass_diag: csr_from_triplets(dim, dim, md),
        stiffness_diag: csr_from_triplets(dim, dim, sd),
        mass_coupling: csr_from_triplets(dim, dim, mf),
        stiffness_coupling: csr_from_triplets(dim, dim, sf),
    }
}

/// Structural nonzeros only: entries that are exactly zero are skipped.
fn push_dense(out: &mut Vec<(usize, usize, f64)>, block: &Matrix, row0: usize, col: impl Fn(usize) -> usize) {
    for i in 0..block.nrows() {
        for j in 0..block.ncols() {
            let v = block[(i, j)];
            if v != 0.0 {
                out.push((row0 + i, col(j), v));
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{csr_mul_vec, csr_nnz, csr_to_dense};
    use crate::mesh::{generate_mesh, FeSystem, Polygon};

    fn strips() -> (Mesh, Decomposition) {
        let mesh = generate_mesh(&Polygon::rectangle(2.0, 1.0), 0.3).unwrap();
        let seed = seed_from_rectangles(&mesh, &[[0.0, 1.0, 0.0, 1.0], [1.0, 2.0, 0.0, 1.0]]).unwrap();
        let dec = decompose(&mesh, &seed, 1).unwrap();
        (mesh, dec)
    }

    #[test]
    fn single_node_is_identity() {
        let mesh = generate_mesh(&Polygon::l_shape(2.0), 0.3).unwrap();
        let dec = decompose(&mesh, &vec![0; mesh.vertex_count()], 1).unwrap();
        assert_eq!(dec.node_count(), 1);
        assert_eq!(dec.internal[0], (0..mesh.vertex_count()).collect::<Vec<_>>());
        assert!(dec.interfaces[0].is_empty());
        assert_eq!(dec.augmented_dim(), mesh.vertex_count());
        assert_eq!(dec.neighborhood(0), vec![0]);
    }

    #[test]
    fn two_strips_exchange_single_columns() {
        let (mesh, dec) = strips();
        assert_eq!(dec.node_count(), 2);
        for m in 0..2 {
            assert_eq!(dec.interfaces[m].len(), 1);
            let i = &dec.interfaces[m][0];
            assert_eq!(i.neighbor, 1 - m);
            let xs: BTreeSet<u64> = i.vertices.iter().map(|&v| mesh.vertices[v][0].to_bits()).collect();
            assert_eq!(xs.len(), 1, "interface is one vertex column");
            for &v in &i.vertices {
                assert!(dec.local_index(1 - m, v).is_some());
            }
        }
        assert!(dec.augmented_dim() > mesh.vertex_count());
    }

    #[test]
    fn partition_laws() {
        let (_, dec) = strips();
        for m in 0..dec.node_count() {
            let mut seen: BTreeSet<usize> = dec.internal[m].iter().copied().collect();
            for i in &dec.interfaces[m] {
                for &v in &i.vertices {
                    assert!(seen.insert(v), "interface sets overlap");
                }
            }
            let all: BTreeSet<usize> = dec.vertices[m].iter().copied().collect();
            assert_eq!(seen, all);
        }
    }

    #[test]
    fn row_sums_are_preserved() {
        let (mesh, dec) = strips();
        let sys = FeSystem::assemble(&mesh, 0.3, &[]).unwrap();
        let ones = Vector::from_element(mesh.vertex_count(), 1.0);
        let global_rows = csr_mul_vec(&sys.mass, &ones);
        for m in 0..dec.node_count() {
            let b = extract_local_blocks(&sys.mass, &sys.stiffness, &dec, m);
            for (r, &v) in dec.internal[m].iter().enumerate() {
                let mut s: f64 = b.mass.row(r).sum();
                for c in &b.couplings {
                    s += c.mass.row(r).sum();
                }
                assert!((s - global_rows[v]).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn augmented_rows_reproduce_global_rows() {
        let (mesh, dec) = strips();
        let sys = FeSystem::assemble(&mesh, 0.3, &[]).unwrap();
        let aug = build_augmented(&sys.mass, &sys.stiffness, &dec);
        let x = Vector::from_iterator(
            mesh.vertex_count(),
            (0..mesh.vertex_count()).map(|i| (i as f64 * 0.37).cos()),
        );
        let xt = dec.duplicate(&x);
        let full_m = csr_to_dense(&aug.mass_diag) + csr_to_dense(&aug.mass_coupling);
        let mx = csr_mul_vec(&sys.mass, &x);
        let mxt = &full_m * &xt;
        for m in 0..dec.node_count() {
            for (l, &v) in dec.internal[m].iter().enumerate() {
                assert!((mxt[dec.offset(m) + l] - mx[v]).abs() < 1e-14);
            }
        }
        assert!(csr_nnz(&aug.mass_coupling) > 0);
    }

    #[test]
    fn gather_inverts_duplicate() {
        let (mesh, dec) = strips();
        let x = Vector::from_iterator(mesh.vertex_count(), (0..mesh.vertex_count()).map(|i| i as f64));
        let xt = dec.duplicate(&x);
        assert_eq!(dec.gather_first(&xt), x);
        assert_eq!(dec.gather_mean(&xt), x);
        assert_eq!(dec.max_disagreement(&xt), 0.0);
    }

    #[test]
    fn gather_mean_averages_copies() {
        let (_, dec) = strips();
        let v = (0..dec.vertex_count()).find(|&v| dec.copies(v).len() == 2).unwrap();
        let mut xt = Vector::zeros(dec.augmented_dim());
        let c = dec.copies(v);
        xt[dec.offset(c[0].0) + c[0].1] = 299.0;
        xt[dec.offset(c[1].0) + c[1].1] = 301.0;
        assert_eq!(dec.gather_mean(&xt)[v], 300.0);
        assert_eq!(dec.max_disagreement(&xt), 2.0);
    }

    #[test]
    fn infeasible_subdomains_rejected() {
        let mesh = generate_mesh(&Polygon::rectangle(1.0, 1.0), 0.5).unwrap();
        // Two copies of one small patch leave most vertices uncovered.
        let err = decompose_with_triangles(&mesh, vec![vec![0], vec![1]]);
        assert!(matches!(err, Err(Error::DecompositionInfeasible(_))));
    }

    #[test]
    fn zero_layers_rejected() {
        let mesh = generate_mesh(&Polygon::rectangle(1.0, 1.0), 0.5).unwrap();
        assert!(decompose(&mesh, &vec![0; mesh.vertex_count()], 0).is_err());
    }

    #[test]
    fn dump_lists_every_node() {
        let (_, dec) = strips();
        let d = dec.dump();
        assert!(d.contains("node 0") && d.contains("node 1"));
        assert!(d.contains("interface 1 ") && d.contains("interface 0 "));
    }
}
