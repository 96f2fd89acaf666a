//! Time discretization: centralized backward Euler, per-node hybrid Euler
//! (optionally relaxed), point-sensor measurement matrices, and the L-round
//! composition of the coupled local recursions.

mod composed;
mod local;
mod measurement;

pub use composed::{apply_round, compose_l_steps, coupling_matrices, ComposedModel, RoundMatrices};
pub use local::{discretize_local, discretize_local_omega, LocalCoupling, LocalModel};
pub use measurement::{assign_sensors, build_measurement, Measurement, NodeSensors};

use crate::error::{Error, Result};
use crate::linalg::{csr_axpby, csr_mul_vec, csr_to_dense, Matrix, SparseCholesky, SparseMatrix, Vector};
use crate::mesh::FeSystem;

/// Backward-Euler model `x_{k+1} = A x_k + B u_k` with
/// `(M + ΔS) A = M` and `(M + ΔS) B = Δ I`.
#[derive(Debug, Clone)]
pub struct CentralModel {
    pub dt: f64,
    pub a: Matrix,
    pub b: Matrix,
    mass: SparseMatrix,
    factor: SparseCholesky,
}

impl CentralModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }

    /// One step through the sparse factor instead of the dense `A`, `B`.
    pub fn step(&self, x: &Vector, u: Option<&Vector>) -> Vector {
        let mut rhs = csr_mul_vec(&self.mass, x);
        if let Some(u) = u {
            rhs.axpy(self.dt, u, 1.0);
        }
        self.factor.solve_in_place(rhs.as_mut_slice());
        rhs
    }

    pub fn factor(&self) -> &SparseCholesky {
        &self.factor
    }
}

pub fn discretize_central(system: &FeSystem, dt: f64) -> Result<CentralModel> {
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::invalid(format!("time step must be positive, got {dt}")));
    }
    let k = csr_axpby(1.0, &system.mass, dt, &system.stiffness);
    let factor = SparseCholesky::new(&k)?;
    let a = factor.solve_matrix(&csr_to_dense(&system.mass));
    let b = factor.solve_matrix(&(Matrix::identity(system.n(), system.n()) * dt));
    Ok(CentralModel {
        dt,
        a,
        b,
        mass: system.mass.clone(),
        factor,
    })
}

/// `‖(M + ΔS) A − M‖_max / ‖M‖_max`.
pub fn central_residual(system: &FeSystem, model: &CentralModel) -> f64 {
    let k = csr_to_dense(&csr_axpby(1.0, &system.mass, model.dt, &system.stiffness));
    let m = csr_to_dense(&system.mass);
    crate::linalg::max_abs(&(k * &model.a - &m)) / crate::linalg::max_abs(&m)
}

/// Isotropic process and measurement noise levels (standard deviations).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseLevels {
    pub process: f64,
    pub measurement: f64,
}

impl NoiseLevels {
    pub fn q(&self, n: usize) -> Matrix {
        Matrix::identity(n, n) * self.process.powi(2)
    }

    pub fn r(&self, n: usize) -> Matrix {
        Matrix::identity(n, n) * self.measurement.powi(2)
    }
}
