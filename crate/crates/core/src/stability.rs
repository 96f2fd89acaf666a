//! Numerical and filter stability analysis: zero-stability of the consensus
//! scheme, relaxation weight selection, the boosted steady-state Riccati
//! equation, the boost condition, and the closed-loop error dynamics.

use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::decomposition::{build_augmented, extract_local_blocks, AugmentedSystem, Decomposition};
use crate::error::{Error, Result};
use crate::linalg::{
    csr_mul_vec, csr_to_dense, eigenvalues, spectral_radius, sym_max_eigenvalue, symmetrize, Matrix, SparseCholesky,
    SparseMatrix, Vector,
};
use crate::mesh::FeSystem;
use crate::model::{compose_l_steps, discretize_local_omega, LocalModel, NodeSensors, NoiseLevels};

/// Spectral radius estimate of a linear operator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RadiusEstimate {
    pub rho: f64,
    /// False when the Krylov cap was hit before the dominant Ritz value
    /// settled; `rho` is then the last estimate.
    pub converged: bool,
    pub krylov_dim: usize,
}

/// Arnoldi iteration on `op` from a fixed pseudo-random start. The Krylov
/// space grows until it becomes invariant (exact answer), until the dominant
/// Ritz modulus stops changing, or until `max_dim`.
pub fn arnoldi_radius(op: impl Fn(&Vector) -> Vector, n: usize, max_dim: usize, tol: f64) -> Result<RadiusEstimate> {
    if n == 0 {
        return Ok(RadiusEstimate {
            rho: 0.0,
            converged: true,
            krylov_dim: 0,
        });
    }
    let max_dim = max_dim.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(0x5eed);
    let mut v0 = Vector::from_fn(n, |_, _| StandardNormal.sample(&mut rng));
    v0 /= v0.norm();
    let mut basis = vec![v0];
    let mut h = Matrix::zeros(max_dim + 1, max_dim);
    let mut history: Vec<f64> = Vec::new();
    let ritz = |h: &Matrix, k: usize| -> Result<f64> {
        let hk = h.view((0, 0), (k, k)).into_owned();
        Ok(eigenvalues(&hk)?.iter().map(|z| z.norm()).fold(0.0, f64::max))
    };
    for j in 0..max_dim {
        let mut w = op(&basis[j]);
        let scale = w.norm();
        // Modified Gram-Schmidt, twice.
        for _ in 0..2 {
            for (i, v) in basis.iter().enumerate() {
                let c = v.dot(&w);
                h[(i, j)] += c;
                w.axpy(-c, v, 1.0);
            }
        }
        let beta = w.norm();
        h[(j + 1, j)] = beta;
        let k = j + 1;
        if beta <= 1e-12 * scale.max(f64::MIN_POSITIVE) || scale == 0.0 {
            return Ok(RadiusEstimate {
                rho: ritz(&h, k)?,
                converged: true,
                krylov_dim: k,
            });
        }
        if k % 10 == 0 || k == max_dim {
            let rho = ritz(&h, k)?;
            if k == n {
                return Ok(RadiusEstimate {
                    rho,
                    converged: true,
                    krylov_dim: k,
                });
            }
            let settled = history
                .last()
                .is_some_and(|&prev| (rho - prev).abs() <= tol * rho.max(1e-300));
            history.push(rho);
            if settled {
                return Ok(RadiusEstimate {
                    rho,
                    converged: true,
                    krylov_dim: k,
                });
            }
            if k == max_dim {
                return Ok(RadiusEstimate {
                    rho,
                    converged: false,
                    krylov_dim: k,
                });
            }
        }
        basis.push(w / beta);
    }
    unreachable!("loop returns at max_dim")
}

/// Krylov cap used by the zero-stability analysis.
const KRYLOV_CAP: usize = 400;

fn mass_diag_factor(aug: &AugmentedSystem) -> Result<SparseCholesky> {
    SparseCholesky::new(&aug.mass_diag).map_err(|e| Error::numerical(format!("block-diagonal mass: {e}")))
}

fn coupled_operator<'a>(
    factor: &'a SparseCholesky,
    coupling: &'a SparseMatrix,
    omega: f64,
) -> impl Fn(&Vector) -> Vector + 'a {
    move |v: &Vector| {
        let mut w = factor.solve(&csr_mul_vec(coupling, v)) * omega;
        if omega != 1.0 {
            w.axpy(-(1.0 - omega), v, 1.0);
        }
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ZeroStability {
    pub rho: f64,
    pub stable: bool,
    pub converged: bool,
}

/// `ρ(M̃_D⁻¹ M̃_F)` by Arnoldi on the solve-apply operator.
pub fn zero_stability(aug: &AugmentedSystem) -> Result<ZeroStability> {
    let factor = mass_diag_factor(aug)?;
    let est = arnoldi_radius(
        coupled_operator(&factor, &aug.mass_coupling, 1.0),
        aug.dim(),
        KRYLOV_CAP,
        1e-12,
    )?;
    Ok(ZeroStability {
        rho: est.rho,
        stable: est.rho < 1.0,
        converged: est.converged,
    })
}

/// Same radius from the dense companion form
/// `[[I, −G], [0, −G]]`, `G = M̃_D⁻¹ M̃_F`, after discarding the `n`
/// eigenvalues contributed by the identity block.
pub fn zero_stability_companion(aug: &AugmentedSystem) -> Result<f64> {
    let n = aug.dim();
    let factor = mass_diag_factor(aug)?;
    let g = factor.solve_matrix(&csr_to_dense(&aug.mass_coupling));
    let mut comp = Matrix::zeros(2 * n, 2 * n);
    comp.view_mut((0, 0), (n, n)).fill_with_identity();
    comp.view_mut((0, n), (n, n)).copy_from(&(-&g));
    comp.view_mut((n, n), (n, n)).copy_from(&(-&g));
    let mut eig = eigenvalues(&comp)?;
    eig.sort_by(|a, b| (a - 1.0).norm().total_cmp(&(b - 1.0).norm()));
    Ok(eig[n..].iter().map(|z| z.norm()).fold(0.0, f64::max))
}

/// Both routes; an error if they disagree by more than `1e-8`.
pub fn zero_stability_checked(aug: &AugmentedSystem) -> Result<(ZeroStability, f64)> {
    let z = zero_stability(aug)?;
    let c = zero_stability_companion(aug)?;
    if z.converged && ((z.rho - c).abs() > 1e-8 || (z.rho < 1.0) != (c < 1.0)) {
        return Err(Error::InternalConsistency(format!(
            "zero-stability radius: Arnoldi {} vs companion {c}",
            z.rho
        )));
    }
    Ok((z, c))
}

/// Largest `ω` on a `1e-3` grid with `max{ωρ, 1−ω} ≤ 1 − safety`, or 1 when
/// `ρ < 1`.
pub fn omega_for_radius(rho: f64, safety: f64) -> Result<f64> {
    if !(safety > 0.0 && safety < 1.0) {
        return Err(Error::invalid(format!(
            "safety margin must lie in (0, 1), got {safety}"
        )));
    }
    if rho < 1.0 {
        return Ok(1.0);
    }
    let cap = 1.0 - safety;
    // Integer grid avoids drift from repeated subtraction.
    let mut k = ((cap / rho) * 1000.0).floor() as i64 + 1;
    while k > 0 && (k as f64 / 1000.0) * rho > cap {
        k -= 1;
    }
    let omega = k as f64 / 1000.0;
    if k <= 0 || 1.0 - omega > cap {
        return Err(Error::InternalConsistency(format!(
            "no grid weight for radius {rho} and margin {safety}"
        )));
    }
    Ok(omega)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OmegaChoice {
    pub omega: f64,
    pub rho: f64,
    /// `ρ(ω M̃_D⁻¹ M̃_F − (1−ω) I)`, recomputed.
    pub rho_omega: f64,
}

/// The grid rule bounds only eigenvalues on the positive real axis; an
/// eigenvalue `−ρ` maps to `−(ωρ + 1 − ω)`. `rho_omega` is therefore always
/// recomputed rather than assumed.
pub fn select_omega(aug: &AugmentedSystem, safety: f64) -> Result<OmegaChoice> {
    let z = zero_stability(aug)?;
    let omega = omega_for_radius(z.rho, safety)?;
    let rho_omega = if omega == 1.0 {
        z.rho
    } else {
        let factor = mass_diag_factor(aug)?;
        arnoldi_radius(
            coupled_operator(&factor, &aug.mass_coupling, omega),
            aug.dim(),
            KRYLOV_CAP,
            1e-12,
        )?
        .rho
    };
    Ok(OmegaChoice {
        omega,
        rho: z.rho,
        rho_omega,
    })
}

/// Smooth manufactured solution `ξ(t) = a cos(t/τ) + b exp(−t/τ)`.
#[derive(Debug, Clone)]
pub struct ManufacturedSolution {
    pub a: Vector,
    pub b: Vector,
    pub tau: f64,
}

impl ManufacturedSolution {
    pub fn value(&self, t: f64) -> Vector {
        &self.a * (t / self.tau).cos() + &self.b * (-t / self.tau).exp()
    }

    pub fn derivative(&self, t: f64) -> Vector {
        (&self.a * -(t / self.tau).sin() - &self.b * (-t / self.tau).exp()) / self.tau
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConsistencyOrder {
    pub deltas: Vec<f64>,
    pub errors: Vec<f64>,
    /// Least-squares slope of `log error` against `log δ`.
    pub slope: f64,
}

/// Terminal max-abs error of the relaxed hybrid Euler scheme on the
/// augmented system, driven by the forcing that makes `solution` exact.
pub fn scheme_error(
    aug: &AugmentedSystem,
    solution: &ManufacturedSolution,
    omega: f64,
    delta: f64,
    horizon: f64,
) -> Result<f64> {
    let steps = (horizon / delta).round() as usize;
    if steps == 0 || ((steps as f64) * delta - horizon).abs() > 1e-9 * horizon {
        return Err(Error::invalid("horizon must be a positive multiple of the step"));
    }
    let k = crate::linalg::csr_axpby(1.0, &aug.mass_diag, omega * delta, &aug.stiffness_diag);
    let factor = SparseCholesky::new(&k)?;
    let mass = crate::linalg::csr_axpby(1.0, &aug.mass_diag, 1.0, &aug.mass_coupling);
    let stiff = crate::linalg::csr_axpby(1.0, &aug.stiffness_diag, 1.0, &aug.stiffness_coupling);
    let forcing = |t: f64| csr_mul_vec(&mass, &solution.derivative(t)) + csr_mul_vec(&stiff, &solution.value(t));
    let mut prev = solution.value(-delta);
    let mut cur = solution.value(0.0);
    for l in 0..steps {
        let md_cur = csr_mul_vec(&aug.mass_diag, &cur);
        let md_prev = csr_mul_vec(&aug.mass_diag, &prev);
        let mf_cur = csr_mul_vec(&aug.mass_coupling, &cur);
        let mf_prev = csr_mul_vec(&aug.mass_coupling, &prev);
        let sf_cur = csr_mul_vec(&aug.stiffness_coupling, &cur);
        let rhs = md_cur * (2.0 - omega) - md_prev * (1.0 - omega) - (mf_cur + sf_cur * delta) * omega
            + mf_prev * omega
            + forcing((l + 1) as f64 * delta) * (omega * delta);
        let next = factor.solve(&rhs);
        prev = std::mem::replace(&mut cur, next);
    }
    Ok((cur - solution.value(horizon)).amax())
}

pub fn consistency_order(
    aug: &AugmentedSystem,
    solution: &ManufacturedSolution,
    omega: f64,
    horizon: f64,
    deltas: &[f64],
) -> Result<ConsistencyOrder> {
    if deltas.len() < 2 {
        return Err(Error::invalid("at least two step sizes are needed"));
    }
    let errors = deltas
        .iter()
        .map(|&d| scheme_error(aug, solution, omega, d, horizon))
        .collect::<Result<Vec<_>>>()?;
    let xs: Vec<f64> = deltas.iter().map(|d| d.ln()).collect();
    let ys: Vec<f64> = errors.iter().map(|e| e.max(1e-300).ln()).collect();
    let n = xs.len() as f64;
    let (mx, my) = (xs.iter().sum::<f64>() / n, ys.iter().sum::<f64>() / n);
    let sxy: f64 = xs.iter().zip(&ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    Ok(ConsistencyOrder {
        deltas: deltas.to_vec(),
        errors,
        slope: sxy / sxx,
    })
}

/// PBH test: for every eigenvalue `μ` of `a`, the smallest singular value of
/// `[μI − a; c]` must exceed `tol · max(1, ‖a‖)`. Returns the smallest ratio
/// found.
pub fn pbh_margin(a: &Matrix, c: &Matrix) -> Result<f64> {
    use nalgebra::Complex;
    let n = a.nrows();
    let scale = a.norm().max(1.0);
    let mut worst = f64::INFINITY;
    let mut seen: Vec<Complex<f64>> = Vec::new();
    for mu in eigenvalues(a)? {
        if seen.iter().any(|s| (s - mu).norm() <= 1e-12 * scale) {
            continue;
        }
        seen.push(mu);
        let mut stacked = nalgebra::DMatrix::<Complex<f64>>::zeros(n + c.nrows(), n);
        for i in 0..n {
            for j in 0..n {
                stacked[(i, j)] = Complex::new(-a[(i, j)], 0.0);
            }
            stacked[(i, i)] += mu;
        }
        for i in 0..c.nrows() {
            for j in 0..n {
                stacked[(n + i, j)] = Complex::new(c[(i, j)], 0.0);
            }
        }
        let sv = stacked.singular_values();
        worst = worst.min(sv.min() / scale);
    }
    Ok(if n == 0 { f64::INFINITY } else { worst })
}

pub const OBSERVABILITY_TOL: f64 = 1e-8;

/// Boosted Riccati problem over one sampling interval of `rounds` rounds
/// with per-round boost `gamma^(1/rounds)`; `gamma` is the total boost.
#[derive(Debug, Clone)]
pub struct RiccatiProblem {
    /// One-round transition.
    pub a: Matrix,
    pub rounds: usize,
    pub gamma: f64,
    pub q: Matrix,
    pub c: Matrix,
    pub r: Matrix,
}

impl RiccatiProblem {
    pub fn gamma_step(&self) -> f64 {
        self.gamma.powf(1.0 / self.rounds as f64)
    }

    /// `(A^L, Φ)` with `Φ = Σ_{i<L} γ_step^{2i} A^i Q (A^i)ᵀ`.
    pub fn interval_maps(&self) -> (Matrix, Matrix) {
        let n = self.a.nrows();
        let g2 = self.gamma_step().powi(2);
        let mut a_pow = Matrix::identity(n, n);
        let mut phi = Matrix::zeros(n, n);
        for _ in 0..self.rounds {
            phi = (&self.a * phi * self.a.transpose()) * g2 + &self.q;
            a_pow = &self.a * a_pow;
        }
        symmetrize(&mut phi);
        (a_pow, phi)
    }

    fn prior(&self, a_l: &Matrix, phi: &Matrix, post: &Matrix) -> Matrix {
        let mut p = (a_l * post * a_l.transpose()) * self.gamma.powi(2) + phi;
        symmetrize(&mut p);
        p
    }
}

#[derive(Debug, Clone)]
pub struct RiccatiSolution {
    /// Steady posterior covariance.
    pub p: Matrix,
    /// Steady gain.
    pub gain: Matrix,
    pub iterations: usize,
    /// `‖P⁻¹ − prior(P)⁻¹ − CᵀR⁻¹C‖_F / ‖P⁻¹‖_F`.
    pub residual: f64,
}

fn spd_inverse(a: &Matrix, what: &str) -> Result<Matrix> {
    a.clone()
        .cholesky()
        .map(|c| c.inverse())
        .ok_or_else(|| Error::numerical(format!("{what} is not positive definite")))
}

/// Fixed-point iteration of the filter covariance recursion
/// `P ← (I−KC) [γ² A^L P (A^L)ᵀ + Φ] (I−KC)ᵀ + K R Kᵀ`.
pub fn steady_riccati(problem: &RiccatiProblem, init: &Matrix, tol: f64, max_iter: usize) -> Result<RiccatiSolution> {
    let (a_l, phi) = problem.interval_maps();
    let margin = pbh_margin(&a_l, &problem.c)?;
    if margin < OBSERVABILITY_TOL {
        return Err(Error::Precondition(format!(
            "interval transition is not observable from the sensors (PBH margin {margin:.3e})"
        )));
    }
    let n = a_l.nrows();
    let eye = Matrix::identity(n, n);
    let mut p = init.clone();
    for it in 1..=max_iter {
        let prior = problem.prior(&a_l, &phi, &p);
        let gain = crate::filter::kalman_gain(&prior, &problem.c, &problem.r)?;
        let ikc = &eye - &gain * &problem.c;
        let mut next = &ikc * prior * ikc.transpose() + &gain * &problem.r * gain.transpose();
        symmetrize(&mut next);
        let change = (&next - &p).norm() / p.norm().max(f64::MIN_POSITIVE);
        p = next;
        if change < tol {
            let prior = problem.prior(&a_l, &phi, &p);
            let gain = crate::filter::kalman_gain(&prior, &problem.c, &problem.r)?;
            let p_inv = spd_inverse(&p, "steady covariance")?;
            let rhs = spd_inverse(&prior, "steady prior")?
                + problem.c.transpose() * spd_inverse(&problem.r, "measurement covariance")? * &problem.c;
            let residual = (&p_inv - rhs).norm() / p_inv.norm();
            return Ok(RiccatiSolution {
                p,
                gain,
                iterations: it,
                residual,
            });
        }
    }
    let change = {
        let prior = problem.prior(&a_l, &phi, &p);
        let gain = crate::filter::kalman_gain(&prior, &problem.c, &problem.r)?;
        let ikc = &eye - &gain * &problem.c;
        let next = &ikc * prior * ikc.transpose() + &gain * &problem.r * gain.transpose();
        (&next - &p).norm() / p.norm()
    };
    Err(Error::NonConvergence {
        iterations: max_iter,
        residual: change,
    })
}

/// Induced norm for the vector norm `√(vᵀ P⁻¹ v)`: `‖L⁻¹ X L‖₂` with
/// `P = L Lᵀ`.
pub fn weighted_norm(x: &Matrix, p: &Matrix) -> Result<f64> {
    let l = p
        .clone()
        .cholesky()
        .ok_or_else(|| Error::numerical("weight matrix is not positive definite"))?
        .l();
    let xl = x * &l;
    let y = l
        .solve_lower_triangular(&xl)
        .ok_or_else(|| Error::numerical("singular weight factor"))?;
    Ok(sym_max_eigenvalue(&(y.transpose() * y)).max(0.0).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GammaCheck {
    /// `‖I + (Ã_D^L)⁻¹ Ã_{F,L}‖_P̃`
    pub bound: f64,
    /// Total boost over the interval.
    pub gamma_total: f64,
    pub passes: bool,
}

pub fn check_gamma_condition(
    p: &Matrix,
    a_diag_power: &Matrix,
    a_coupling: &Matrix,
    gamma_total: f64,
) -> Result<GammaCheck> {
    let n = p.nrows();
    let x = a_diag_power
        .clone()
        .lu()
        .solve(a_coupling)
        .ok_or_else(|| Error::numerical("block-diagonal interval transition is singular"))?
        + Matrix::identity(n, n);
    let bound = weighted_norm(&x, p)?;
    Ok(GammaCheck {
        bound,
        gamma_total,
        passes: gamma_total > bound,
    })
}

/// `1/γ − ‖(I − L̃C̃) Ã_D^L‖_P̃`; nonnegative at the Riccati fixed point.
pub fn contraction_slack(
    p: &Matrix,
    gain: &Matrix,
    c: &Matrix,
    a_diag_power: &Matrix,
    gamma_total: f64,
) -> Result<f64> {
    let n = p.nrows();
    let x = (Matrix::identity(n, n) - gain * c) * a_diag_power;
    Ok(1.0 / gamma_total - weighted_norm(&x, p)?)
}

/// `ρ((I − L̃C̃)(Ã_D^L + Ã_{F,L}))`.
pub fn error_dynamics(gain: &Matrix, c: &Matrix, a_diag_power: &Matrix, a_coupling: &Matrix) -> Result<f64> {
    let n = a_diag_power.nrows();
    spectral_radius(&((Matrix::identity(n, n) - gain * c) * (a_diag_power + a_coupling)))
}

fn block_diag(blocks: &[&Matrix]) -> Matrix {
    let rows = blocks.iter().map(|b| b.nrows()).sum();
    let cols = blocks.iter().map(|b| b.ncols()).sum();
    let mut out = Matrix::zeros(rows, cols);
    let (mut r, mut c) = (0, 0);
    for b in blocks {
        out.view_mut((r, c), b.shape()).copy_from(b);
        r += b.nrows();
        c += b.ncols();
    }
    out
}

/// Stacked measurement matrix and noise of all nodes (block diagonal).
pub fn stacked_measurement(sensors: &[NodeSensors], noise: NoiseLevels) -> (Matrix, Matrix) {
    let c = block_diag(&sensors.iter().map(|s| &s.c).collect::<Vec<_>>());
    let r = noise.r(c.nrows());
    (c, r)
}

/// Steady Riccati solution of the whole network. The recursion is block
/// diagonal, so each node is solved separately and the blocks assembled.
pub fn steady_riccati_network(
    models: &[LocalModel],
    sensors: &[NodeSensors],
    noise: NoiseLevels,
    rounds: usize,
    gamma: f64,
    init_scale: f64,
    tol: f64,
    max_iter: usize,
) -> Result<RiccatiSolution> {
    let mut ps = Vec::with_capacity(models.len());
    let mut gains = Vec::with_capacity(models.len());
    let (mut iterations, mut residual) = (0, 0.0_f64);
    for (model, s) in models.iter().zip(sensors) {
        let n = model.dim();
        let problem = RiccatiProblem {
            a: model.a.clone(),
            rounds,
            gamma,
            q: noise.q(n),
            c: s.c.clone(),
            r: noise.r(s.c.nrows()),
        };
        let sol =
            steady_riccati(&problem, &(Matrix::identity(n, n) * init_scale), tol, max_iter).map_err(|e| match e {
                Error::Precondition(msg) => Error::Precondition(format!("node {}: {msg}", model.node)),
                other => other,
            })?;
        iterations = iterations.max(sol.iterations);
        residual = residual.max(sol.residual);
        ps.push(sol.p);
        gains.push(sol.gain);
    }
    Ok(RiccatiSolution {
        p: block_diag(&ps.iter().collect::<Vec<_>>()),
        gain: block_diag(&gains.iter().collect::<Vec<_>>()),
        iterations,
        residual,
    })
}

#[derive(Debug, Clone, Copy)]
pub struct StabilityOptions {
    pub omega_safety: f64,
    pub riccati_tol: f64,
    pub riccati_max_iter: usize,
    pub p0_scale: f64,
}

impl Default for StabilityOptions {
    fn default() -> Self {
        Self {
            omega_safety: 0.05,
            riccati_tol: 1e-10,
            riccati_max_iter: 100_000,
            p0_scale: 1.0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct StabilityReport {
    pub rounds: usize,
    pub gamma: f64,
    pub rho_zero: f64,
    pub rho_zero_companion: f64,
    pub zero_converged: bool,
    pub omega_used: f64,
    pub rho_omega: f64,
    pub p_star: Matrix,
    pub gain: Matrix,
    pub riccati_iterations: usize,
    pub riccati_residual: f64,
    pub gamma_bound: f64,
    pub gamma_l_actual: f64,
    pub contraction_slack: f64,
    pub rho_error: f64,
}

impl StabilityReport {
    /// `(name, holds, required)`. The boost condition is sufficient but not
    /// necessary, so it is reported without gating.
    pub fn verdicts(&self) -> Vec<(&'static str, bool, bool)> {
        vec![
            ("zero_stable", self.rho_omega < 1.0, true),
            ("riccati_converged", self.riccati_residual < 1e-7, true),
            ("gamma_condition", self.gamma_l_actual > self.gamma_bound, false),
            ("error_dynamics_stable", self.rho_error < 1.0, true),
        ]
    }

    pub fn passes(&self) -> bool {
        self.verdicts().iter().all(|&(_, ok, required)| ok || !required)
    }

    /// `key = value` lines.
    pub fn write_text(&self, mut w: impl Write) -> Result<()> {
        writeln!(w, "rounds = {}", self.rounds)?;
        writeln!(w, "gamma = {}", self.gamma)?;
        writeln!(w, "rho_zero = {:.12e}", self.rho_zero)?;
        writeln!(w, "rho_zero_companion = {:.12e}", self.rho_zero_companion)?;
        writeln!(w, "rho_zero_converged = {}", self.zero_converged)?;
        writeln!(w, "omega_used = {}", self.omega_used)?;
        writeln!(w, "rho_omega = {:.12e}", self.rho_omega)?;
        writeln!(w, "p_star_dim = {}", self.p_star.nrows())?;
        writeln!(w, "p_star_trace = {:.12e}", self.p_star.trace())?;
        writeln!(w, "riccati_iterations = {}", self.riccati_iterations)?;
        writeln!(w, "riccati_residual = {:.3e}", self.riccati_residual)?;
        writeln!(w, "gamma_bound = {:.12e}", self.gamma_bound)?;
        writeln!(w, "gamma_l_actual = {:.12e}", self.gamma_l_actual)?;
        writeln!(w, "contraction_slack = {:.3e}", self.contraction_slack)?;
        writeln!(w, "rho_error = {:.12e}", self.rho_error)?;
        for (name, ok, required) in self.verdicts() {
            let tag = if required { "" } else { " (informational)" };
            writeln!(w, "verdict.{name} = {}{tag}", if ok { "pass" } else { "fail" })?;
        }
        Ok(())
    }
}

/// Local models of every node at consensus step `delta` and weight `omega`.
pub fn local_models(system: &FeSystem, dec: &Decomposition, delta: f64, omega: f64) -> Result<Vec<LocalModel>> {
    (0..dec.node_count())
        .map(|m| {
            discretize_local_omega(
                &extract_local_blocks(&system.mass, &system.stiffness, dec, m),
                delta,
                omega,
            )
        })
        .collect()
}

/// Full analysis for one `(rounds, gamma)` pair; `delta` is the consensus
/// step (sampling period over rounds).
pub fn analyze(
    system: &FeSystem,
    dec: &Decomposition,
    sensors: &[NodeSensors],
    noise: NoiseLevels,
    rounds: usize,
    gamma: f64,
    delta: f64,
    opts: StabilityOptions,
) -> Result<StabilityReport> {
    let aug = build_augmented(&system.mass, &system.stiffness, dec);
    let (zero, companion) = zero_stability_checked(&aug)?;
    let omega = select_omega(&aug, opts.omega_safety)?;
    let models = local_models(system, dec, delta, omega.omega)?;
    let sol = steady_riccati_network(
        &models,
        sensors,
        noise,
        rounds,
        gamma,
        opts.p0_scale,
        opts.riccati_tol,
        opts.riccati_max_iter,
    )?;
    let composed = compose_l_steps(&models, dec, rounds);
    let (c, _) = stacked_measurement(sensors, noise);
    let check = check_gamma_condition(&sol.p, &composed.a_diag_power, &composed.a_coupling, gamma)?;
    let slack = contraction_slack(&sol.p, &sol.gain, &c, &composed.a_diag_power, gamma)?;
    let rho_error = error_dynamics(&sol.gain, &c, &composed.a_diag_power, &composed.a_coupling)?;
    Ok(StabilityReport {
        rounds,
        gamma,
        rho_zero: zero.rho,
        rho_zero_companion: companion,
        zero_converged: zero.converged,
        omega_used: omega.omega,
        rho_omega: omega.rho_omega,
        p_star: sol.p,
        gain: sol.gain,
        riccati_iterations: sol.iterations,
        riccati_residual: sol.residual,
        gamma_bound: check.bound,
        gamma_l_actual: gamma,
        contraction_slack: slack,
        rho_error,
    })
}
