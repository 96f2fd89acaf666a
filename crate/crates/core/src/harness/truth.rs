use std::collections::HashMap;

use super::config::{robin_terms, BoundaryKind, Scenario};
use crate::error::{Error, Result};
use crate::linalg::{csr_axpby, csr_mul_vec, SparseCholesky, SparseMatrix, Vector};
use crate::mesh::{
    apply_essential_bc, assemble_load, refine_uniform, DirichletCondition, FeSystem, Mesh, ReducedSystem,
};

/// Field on the truth mesh at every sample time, `fields[q]` at `t = q·T_s`.
#[derive(Debug, Clone)]
pub struct TruthTrajectory {
    pub mesh: Mesh,
    pub fields: Vec<Vector>,
}

/// One backward-Euler stepper for a fixed set of boundary conditions.
struct Stepper {
    reduced: ReducedSystem,
    mass: SparseMatrix,
    factor: SparseCholesky,
    /// `dt·(Robin load + Dirichlet lift)` on the free vertices.
    rhs: Vector,
}

impl Stepper {
    fn new(mesh: &Mesh, diffusivity: f64, dt: f64, conditions: &[(&str, &BoundaryKind)]) -> Result<Self> {
        let robin = robin_terms(conditions);
        let dirichlet: Vec<DirichletCondition> = conditions
            .iter()
            .filter_map(|(label, kind)| match kind {
                BoundaryKind::Dirichlet { value } => Some(DirichletCondition {
                    label: label.to_string(),
                    value: *value,
                }),
                _ => None,
            })
            .collect();
        let system = FeSystem::assemble(mesh, diffusivity, &robin)?;
        let reduced = apply_essential_bc(&system, mesh, &dirichlet)?;
        let load = assemble_load(mesh, |_, _| 0.0, 0.0, &robin)?;
        let rhs = (reduced.restrict(&load) + &reduced.load) * dt;
        let k = csr_axpby(1.0, &reduced.mass, dt, &reduced.stiffness);
        let factor = SparseCholesky::new(&k)?;
        let mass = reduced.mass.clone();
        Ok(Self {
            reduced,
            mass,
            factor,
            rhs,
        })
    }

    fn advance(&self, full: &Vector, steps: usize) -> Vector {
        let mut x = self.reduced.restrict(full);
        for _ in 0..steps {
            let mut b = csr_mul_vec(&self.mass, &x);
            b += &self.rhs;
            self.factor.solve_in_place(b.as_mut_slice());
            x = b;
        }
        self.reduced.lift(&x)
    }
}

/// Truth mesh: the filter mesh refined `truth_refinements` times.
pub fn truth_mesh(scenario: &Scenario, filter_mesh: &Mesh) -> Result<Mesh> {
    let mut mesh = filter_mesh.clone();
    for _ in 0..scenario.domain.truth_refinements {
        mesh = refine_uniform(&mesh)?;
    }
    Ok(mesh)
}

/// Backward Euler at `truth_step` with the scheduled boundary conditions.
/// Sample interval `q` uses the conditions active at `q`; a Dirichlet value
/// takes effect at the first step of its interval.
pub fn simulate_truth(scenario: &Scenario, mesh: &Mesh) -> Result<TruthTrajectory> {
    simulate_truth_with_step(scenario, mesh, scenario.sampling.truth_step)
}

pub fn simulate_truth_with_step(scenario: &Scenario, mesh: &Mesh, dt: f64) -> Result<TruthTrajectory> {
    let ratio = scenario.sampling.period / dt;
    if !(dt > 0.0) || (ratio - ratio.round()).abs() > 1e-9 * ratio {
        return Err(Error::invalid(format!(
            "truth step {dt} must divide the sampling period"
        )));
    }
    let steps = ratio.round() as usize;
    let samples = scenario.sampling.samples;
    let mut cache: HashMap<String, Stepper> = HashMap::new();
    let mut x = Vector::from_element(mesh.vertex_count(), scenario.physics.initial_temperature);
    let mut fields = Vec::with_capacity(samples + 1);
    fields.push(x.clone());
    for q in 0..samples {
        let conditions = scenario.conditions_at(q);
        let key = format!("{conditions:?}");
        if !cache.contains_key(&key) {
            let stepper = Stepper::new(mesh, scenario.physics.diffusivity, dt, &conditions)?;
            cache.insert(key.clone(), stepper);
        }
        x = cache[&key].advance(&x, steps);
        fields.push(x.clone());
    }
    Ok(TruthTrajectory {
        mesh: mesh.clone(),
        fields,
    })
}
