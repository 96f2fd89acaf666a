use super::{FeSystem, Mesh};
use crate::error::{Error, Result};
use crate::linalg::{csr_from_triplets, SparseMatrix, Vector};

#[derive(Debug, Clone, PartialEq)]
pub struct DirichletCondition {
    pub label: String,
    pub value: f64,
}

/// System restricted to the unconstrained vertices.
#[derive(Debug, Clone)]
pub struct ReducedSystem {
    pub mass: SparseMatrix,
    pub stiffness: SparseMatrix,
    /// `free[r]` is the full index of reduced unknown `r`.
    pub free: Vec<usize>,
    /// Constrained vertices and their prescribed values, ascending by vertex.
    pub fixed: Vec<(usize, f64)>,
    /// `−S_fb·g`, the constant right-hand side from the prescribed values.
    pub load: Vector,
    pub full_dim: usize,
}

impl ReducedSystem {
    /// Full vector from reduced unknowns plus the prescribed values.
    pub fn lift(&self, reduced: &Vector) -> Vector {
        let mut full = Vector::zeros(self.full_dim);
        for (r, &v) in self.free.iter().enumerate() {
            full[v] = reduced[r];
        }
        for &(v, g) in &self.fixed {
            full[v] = g;
        }
        full
    }

    pub fn restrict(&self, full: &Vector) -> Vector {
        Vector::from_iterator(self.free.len(), self.free.iter().map(|&v| full[v]))
    }
}

/// Prescribed values per vertex. A vertex shared by a Dirichlet side and any
/// other side is constrained; two Dirichlet sides disagreeing on a shared
/// vertex is an error.
pub fn dirichlet_values(mesh: &Mesh, dirichlet: &[DirichletCondition]) -> Result<Vec<Option<f64>>> {
    let mut values: Vec<Option<f64>> = vec![None; mesh.vertex_count()];
    for cond in dirichlet {
        let verts = mesh.vertices_with_label(&cond.label);
        if verts.is_empty() {
            return Err(Error::invalid(format!("unknown boundary label '{}'", cond.label)));
        }
        for v in verts {
            match values[v] {
                Some(prev) if prev != cond.value => {
                    return Err(Error::ConstraintConflict {
                        vertex: v,
                        first: prev,
                        second: cond.value,
                    })
                }
                _ => values[v] = Some(cond.value),
            }
        }
    }
    Ok(values)
}

/// Eliminates constrained rows and columns from `system`.
pub fn apply_essential_bc(system: &FeSystem, mesh: &Mesh, dirichlet: &[DirichletCondition]) -> Result<ReducedSystem> {
    let n = system.n();
    if mesh.vertex_count() != n {
        return Err(Error::invalid("system and mesh sizes differ"));
    }
    let values = dirichlet_values(mesh, dirichlet)?;
    let mut reduced_index = vec![usize::MAX; n];
    let mut free = Vec::new();
    let mut fixed = Vec::new();
    for (v, val) in values.iter().enumerate() {
        match val {
            Some(g) => fixed.push((v, *g)),
            None => {
                reduced_index[v] = free.len();
                free.push(v);
            }
        }
    }
    let nf = free.len();
    let select = |a: &SparseMatrix| {
        let mut trip = Vec::new();
        for (r, &v) in free.iter().enumerate() {
            let row = a.row(v);
            for (&c, &x) in row.col_indices().iter().zip(row.values()) {
                if reduced_index[c] != usize::MAX {
                    trip.push((r, reduced_index[c], x));
                }
            }
        }
        csr_from_triplets(nf, nf, trip)
    };
    let mut load = Vector::zeros(nf);
    for (r, &v) in free.iter().enumerate() {
        let row = system.stiffness.row(v);
        for (&c, &x) in row.col_indices().iter().zip(row.values()) {
            if let Some(g) = values[c] {
                load[r] -= x * g;
            }
        }
    }
    Ok(ReducedSystem {
        mass: select(&system.mass),
        stiffness: select(&system.stiffness),
        free,
        fixed,
        load,
        full_dim: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{csr_mul_vec, csr_to_dense, implicit_solve, Matrix};
    use crate::mesh::{generate_l_shaped_mesh, BoundaryEdge};

    fn cond(label: &str, value: f64) -> DirichletCondition {
        DirichletCondition {
            label: label.into(),
            value,
        }
    }

    #[test]
    fn all_boundary_dirichlet_on_single_triangle_is_empty() {
        let mesh = Mesh::new(
            vec![[0.0, 0.0], [1.0, 0.0], [0.0, 1.0]],
            vec![[0, 1, 2]],
            vec![
                BoundaryEdge {
                    vertices: [0, 1],
                    label: "b".into(),
                },
                BoundaryEdge {
                    vertices: [1, 2],
                    label: "b".into(),
                },
                BoundaryEdge {
                    vertices: [2, 0],
                    label: "b".into(),
                },
            ],
        )
        .unwrap();
        let sys = FeSystem::assemble(&mesh, 1.0, &[]).unwrap();
        let red = apply_essential_bc(&sys, &mesh, &[cond("b", 1.0)]).unwrap();
        assert!(red.free.is_empty());
        assert_eq!(red.mass.nrows(), 0);
        assert_eq!(red.lift(&Vector::zeros(0)), Vector::from_element(3, 1.0));
    }

    #[test]
    fn homogeneous_dirichlet_has_no_load() {
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 1.0, &[]).unwrap();
        let red = apply_essential_bc(&sys, &mesh, &[cond("bottom", 0.0)]).unwrap();
        assert_eq!(red.load.amax(), 0.0);
    }

    #[test]
    fn corner_conflict_detected() {
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 1.0, &[]).unwrap();
        let err = apply_essential_bc(&sys, &mesh, &[cond("bottom", 1.0), cond("left", 2.0)]);
        assert!(matches!(err, Err(Error::ConstraintConflict { .. })));
        assert!(apply_essential_bc(&sys, &mesh, &[cond("bottom", 1.0), cond("left", 1.0)]).is_ok());
    }

    #[test]
    fn unknown_label_rejected() {
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 1.0, &[]).unwrap();
        assert!(matches!(
            apply_essential_bc(&sys, &mesh, &[cond("roof", 1.0)]),
            Err(Error::InvalidArgument(_))
        ));
    }

    #[test]
    fn corners_of_dirichlet_side_are_constrained() {
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 1.0, &[]).unwrap();
        let red = apply_essential_bc(&sys, &mesh, &[cond("bottom", 315.0)]).unwrap();
        let corner = mesh.vertices.iter().position(|p| *p == [0.0, 0.0]).unwrap();
        assert!(red.fixed.iter().any(|&(v, _)| v == corner));
    }

    #[test]
    fn reduced_rows_reproduce_full_product() {
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 0.7, &[]).unwrap();
        let red = apply_essential_bc(&sys, &mesh, &[cond("bottom", 3.0)]).unwrap();
        let xr = Vector::from_iterator(red.free.len(), (0..red.free.len()).map(|i| (i as f64).sin()));
        let full = red.lift(&xr);
        let sx = csr_mul_vec(&sys.stiffness, &full);
        let lhs = csr_mul_vec(&red.stiffness, &xr) - &red.load;
        assert!((lhs - red.restrict(&sx)).amax() < 1e-12);
    }

    #[test]
    fn isothermal_bottom_with_insulation_relaxes_to_constant() {
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 1.0, &[]).unwrap();
        let red = apply_essential_bc(&sys, &mesh, &[cond("bottom", 315.0)]).unwrap();
        let m = csr_to_dense(&red.mass);
        let s = csr_to_dense(&red.stiffness);
        let dt = 0.5;
        let mut x = Matrix::from_element(red.free.len(), 1, 300.0);
        let load = Matrix::from_column_slice(red.free.len(), 1, red.load.as_slice());
        for _ in 0..200 {
            x = implicit_solve(&m, &s, dt, &(&m * &x + &load * dt)).unwrap();
        }
        let x = x.column(0).into_owned();
        let full = red.lift(&x);
        assert!(full.iter().all(|&v| (v - 315.0).abs() < 1e-6));
    }
}
