use crate::decomposition::LocalBlocks;
use crate::error::{Error, Result};
use crate::linalg::{dense_to_csr, Matrix, SparseCholesky};

/// Coefficients multiplying one neighbor's interface values.
#[derive(Debug, Clone)]
pub struct LocalCoupling {
    pub neighbor: usize,
    /// Local indices in the neighbor's state for each column.
    pub neighbor_local: Vec<usize>,
    /// Applied to the neighbor's values at the previous round.
    pub current: Matrix,
    /// Applied to the neighbor's values two rounds back.
    pub delayed: Matrix,
}

/// One node's consensus recursion
///
/// `x_{ℓ} = A x_{ℓ−1} + A_self x_{ℓ−2} + Σ_j (C_j x^j_{ℓ−1} + D_j x^j_{ℓ−2}) + B u`
///
/// where `A_self` is present only for the relaxed scheme (`omega < 1`).
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub node: usize,
    pub delta: f64,
    pub omega: f64,
    pub a: Matrix,
    pub a_self_delayed: Option<Matrix>,
    pub couplings: Vec<LocalCoupling>,
    pub b: Matrix,
}

impl LocalModel {
    pub fn dim(&self) -> usize {
        self.a.nrows()
    }
}

/// Hybrid Euler: implicit in the node's own block, explicit with one round of
/// delay in the coupling blocks.
pub fn discretize_local(blocks: &LocalBlocks, delta: f64) -> Result<LocalModel> {
    discretize_local_omega(blocks, delta, 1.0)
}

/// Relaxed hybrid Euler with weight `omega ∈ (0, 1]`:
///
/// `(M + ωδS) x_{ℓ+1} = (2−ω) M x_ℓ − (1−ω) M x_{ℓ−1}
///     − ω Σ_j (M_j + δS_j) x^j_ℓ + ω Σ_j M_j x^j_{ℓ−1} + ωδ u`.
///
/// `omega = 1` reproduces [`discretize_local`] bit for bit.
pub fn discretize_local_omega(blocks: &LocalBlocks, delta: f64, omega: f64) -> Result<LocalModel> {
    if !(delta > 0.0) || !delta.is_finite() {
        return Err(Error::invalid(format!("consensus step must be positive, got {delta}")));
    }
    if !(omega > 0.0 && omega <= 1.0) {
        return Err(Error::invalid(format!(
            "relaxation weight must lie in (0, 1], got {omega}"
        )));
    }
    let n = blocks.mass.nrows();
    let k = &blocks.mass + &blocks.stiffness * (omega * delta);
    let factor =
        SparseCholesky::new(&dense_to_csr(&k)).map_err(|e| Error::numerical(format!("node {}: {e}", blocks.node)))?;

    let a = factor.solve_matrix(&(&blocks.mass * (2.0 - omega)));
    let a_self_delayed = (omega < 1.0).then(|| factor.solve_matrix(&(&blocks.mass * -(1.0 - omega))));
    let couplings = blocks
        .couplings
        .iter()
        .map(|c| LocalCoupling {
            neighbor: c.neighbor,
            neighbor_local: c.neighbor_local.clone(),
            current: factor.solve_matrix(&((&c.mass + &c.stiffness * delta) * -omega)),
            delayed: factor.solve_matrix(&(&c.mass * omega)),
        })
        .collect();
    let b = factor.solve_matrix(&(Matrix::identity(n, n) * (omega * delta)));
    Ok(LocalModel {
        node: blocks.node,
        delta,
        omega,
        a,
        a_self_delayed,
        couplings,
        b,
    })
}
