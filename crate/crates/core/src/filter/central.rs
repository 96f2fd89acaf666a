use std::io::Write;

use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::model::CentralModel;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    /// `x̂_{k|k−1}`, `P_{k|k−1}`
    Prior,
    /// `x̂_{k|k}`, `P_{k|k}`
    Posterior,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterState {
    pub x: Vector,
    pub p: Matrix,
    pub phase: Phase,
    pub step: usize,
}

impl FilterState {
    pub fn prior(x: Vector, p: Matrix) -> Self {
        Self {
            x,
            p,
            phase: Phase::Prior,
            step: 0,
        }
    }
}

/// Kalman gain `P Cᵀ (R + C P Cᵀ)⁻¹`.
pub fn kalman_gain(p: &Matrix, c: &Matrix, r: &Matrix) -> Result<Matrix> {
    let pct = p * c.transpose();
    let s = r + c * &pct;
    let chol = s
        .cholesky()
        .ok_or_else(|| Error::numerical("innovation covariance is not positive definite"))?;
    // L = P Cᵀ S⁻¹ = (S⁻¹ C P)ᵀ for symmetric P and S.
    Ok(chol.solve(&pct.transpose()).transpose())
}

/// Measurement update. An empty measurement leaves the estimate unchanged.
pub fn correct(state: &FilterState, y: &Vector, c: &Matrix, r: &Matrix) -> Result<FilterState> {
    if state.phase != Phase::Prior {
        return Err(Error::Precondition("correction needs a prior state".into()));
    }
    if c.nrows() != y.len() || c.ncols() != state.x.len() || r.nrows() != y.len() {
        return Err(Error::invalid("measurement dimensions are inconsistent"));
    }
    let mut out = FilterState {
        phase: Phase::Posterior,
        ..state.clone()
    };
    if y.is_empty() {
        return Ok(out);
    }
    let gain = kalman_gain(&state.p, c, r)?;
    out.x += &gain * (y - c * &state.x);
    out.p -= &gain * (c * &state.p);
    symmetrize(&mut out.p);
    Ok(out)
}

/// Time update `x ← A x + B u`, `P ← A P Aᵀ + Q`.
pub fn predict(state: &FilterState, a: &Matrix, input: Option<(&Matrix, &Vector)>, q: &Matrix) -> Result<FilterState> {
    if state.phase != Phase::Posterior {
        return Err(Error::Precondition("prediction needs a posterior state".into()));
    }
    let mut x = a * &state.x;
    if let Some((b, u)) = input {
        x += b * u;
    }
    let mut p = a * &state.p * a.transpose() + q;
    symmetrize(&mut p);
    Ok(FilterState {
        x,
        p,
        phase: Phase::Prior,
        step: state.step + 1,
    })
}

/// Filter configuration shared by every run of one variant.
#[derive(Debug, Clone)]
pub struct CentralConfig<'a> {
    pub model: &'a CentralModel,
    pub c: &'a Matrix,
    pub r: &'a Matrix,
    pub q: &'a Matrix,
    /// Prediction steps between consecutive samples.
    pub steps_per_sample: usize,
}

/// Posterior estimates at each sample.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub estimates: Vec<Vector>,
}

impl Trajectory {
    /// CSV with columns `time,vertex,estimate`; `sample_period` converts the
    /// sample index (starting at 1) to time.
    pub fn write_csv(&self, sample_period: f64, mut w: impl Write) -> Result<()> {
        writeln!(w, "time,vertex,estimate")?;
        for (k, x) in self.estimates.iter().enumerate() {
            let t = (k + 1) as f64 * sample_period;
            for (v, value) in x.iter().enumerate() {
                writeln!(w, "{t},{v},{value}")?;
            }
        }
        Ok(())
    }
}

/// Literal recursion: correct at every sample, then `steps_per_sample`
/// predictions. The input at prediction step `k` (counted from zero) is
/// `input(k)`.
pub fn run(
    cfg: &CentralConfig,
    measurements: &[Vector],
    initial: FilterState,
    input: Option<&dyn Fn(usize) -> Vector>,
) -> Result<Trajectory> {
    let mut state = initial;
    let mut estimates = Vec::with_capacity(measurements.len());
    let mut k = 0;
    for y in measurements {
        if y.len() != cfg.c.nrows() {
            return Err(Error::invalid(format!(
                "measurement has {} entries, expected {}",
                y.len(),
                cfg.c.nrows()
            )));
        }
        state = correct(&state, y, cfg.c, cfg.r)?;
        estimates.push(state.x.clone());
        for _ in 0..cfg.steps_per_sample {
            // No measurement between intermediate steps: the prior is its own posterior.
            state.phase = Phase::Posterior;
            let u = input.map(|f| f(k));
            state = predict(&state, &cfg.model.a, u.as_ref().map(|u| (&cfg.model.b, u)), cfg.q)?;
            k += 1;
        }
    }
    Ok(Trajectory { estimates })
}

/// Gains of the centralized filter for each sample. The covariance recursion
/// does not depend on the measured values, so it is run once and shared by
/// every Monte Carlo run; once consecutive gains agree to `freeze_tol`
/// (relative) the last gain is reused.
#[derive(Debug, Clone)]
pub struct CentralSchedule {
    pub gains: Vec<Matrix>,
    pub posterior_covariances: Vec<Matrix>,
}

impl CentralSchedule {
    pub fn compute(cfg: &CentralConfig, p0: &Matrix, samples: usize, freeze_tol: f64) -> Result<Self> {
        let steps = cfg.steps_per_sample;
        let n = cfg.model.dim();
        // P ← A^s P (A^s)ᵀ + Σ_{i<s} A^i Q (A^i)ᵀ over one sample interval.
        let mut a_pow = Matrix::identity(n, n);
        let mut phi = Matrix::zeros(n, n);
        for _ in 0..steps {
            phi = &cfg.model.a * phi * cfg.model.a.transpose() + cfg.q;
            a_pow = &cfg.model.a * a_pow;
        }
        let mut p = p0.clone();
        let mut gains: Vec<Matrix> = Vec::new();
        let mut posts = Vec::new();
        for _ in 0..samples {
            let gain = kalman_gain(&p, cfg.c, cfg.r)?;
            let mut post = &p - &gain * (cfg.c * &p);
            symmetrize(&mut post);
            let converged = gains
                .last()
                .is_some_and(|g| (g - &gain).norm() <= freeze_tol * gain.norm().max(f64::MIN_POSITIVE));
            gains.push(gain);
            posts.push(post.clone());
            if converged {
                break;
            }
            p = &a_pow * post * a_pow.transpose() + &phi;
            symmetrize(&mut p);
        }
        Ok(Self {
            gains,
            posterior_covariances: posts,
        })
    }

    pub fn gain(&self, sample: usize) -> &Matrix {
        &self.gains[sample.min(self.gains.len() - 1)]
    }

    /// Estimate-only run using the precomputed gains and sparse stepping.
    pub fn run(&self, cfg: &CentralConfig, measurements: &[Vector], x0: &Vector) -> Result<Trajectory> {
        let mut x = x0.clone();
        let mut estimates = Vec::with_capacity(measurements.len());
        for (q, y) in measurements.iter().enumerate() {
            if y.len() != cfg.c.nrows() {
                return Err(Error::invalid("measurement length does not match the sensor count"));
            }
            x += self.gain(q) * (y - cfg.c * &x);
            estimates.push(x.clone());
            for _ in 0..cfg.steps_per_sample {
                x = cfg.model.step(&x, None);
            }
        }
        Ok(Trajectory { estimates })
    }
}
