use std::cell::OnceCell;

use super::LocalModel;
use crate::decomposition::Decomposition;
use crate::linalg::Matrix;

/// Rows of `x` at the given augmented indices.
fn gather_rows(x: &Matrix, rows: impl ExactSizeIterator<Item = usize>) -> Matrix {
    let mut out = Matrix::zeros(rows.len(), x.ncols());
    for (r, i) in rows.enumerate() {
        out.row_mut(r).copy_from(&x.row(i));
    }
    out
}

/// One synchronous round of all node recursions applied column-wise to
/// augmented states: `cur` holds round `ℓ−1`, `prev` round `ℓ−2`, and
/// `input` (if any) the augmented input for round `ℓ`.
pub fn apply_round(
    models: &[LocalModel],
    dec: &Decomposition,
    cur: &Matrix,
    prev: &Matrix,
    input: Option<&Matrix>,
) -> Matrix {
    let mut out = Matrix::zeros(cur.nrows(), cur.ncols());
    for (m, model) in models.iter().enumerate() {
        let (off, n) = (dec.offset(m), dec.local_dim(m));
        let mut block = &model.a * cur.rows(off, n);
        if let Some(a_self) = &model.a_self_delayed {
            block += a_self * prev.rows(off, n);
        }
        for c in &model.couplings {
            let oj = dec.offset(c.neighbor);
            let idx = || c.neighbor_local.iter().map(move |&l| oj + l);
            block += &c.current * gather_rows(cur, idx());
            block += &c.delayed * gather_rows(prev, idx());
        }
        if let Some(u) = input {
            block += &model.b * u.rows(off, n);
        }
        out.rows_mut(off, n).copy_from(&block);
    }
    out
}

/// Dense augmented matrices of one round: block-diagonal `A_D`, and the
/// couplings applied to the previous round (`current`) and to the round
/// before it (`delayed`, which also carries the self-delay of the relaxed
/// scheme).
#[derive(Debug, Clone)]
pub struct RoundMatrices {
    pub diag: Matrix,
    pub current: Matrix,
    pub delayed: Matrix,
    pub input: Matrix,
}

pub fn coupling_matrices(models: &[LocalModel], dec: &Decomposition) -> RoundMatrices {
    let dim = dec.augmented_dim();
    let mut r = RoundMatrices {
        diag: Matrix::zeros(dim, dim),
        current: Matrix::zeros(dim, dim),
        delayed: Matrix::zeros(dim, dim),
        input: Matrix::zeros(dim, dim),
    };
    for (m, model) in models.iter().enumerate() {
        let (off, n) = (dec.offset(m), dec.local_dim(m));
        r.diag.view_mut((off, off), (n, n)).copy_from(&model.a);
        r.input.view_mut((off, off), (n, n)).copy_from(&model.b);
        if let Some(a_self) = &model.a_self_delayed {
            r.delayed.view_mut((off, off), (n, n)).copy_from(a_self);
        }
        for c in &model.couplings {
            let oj = dec.offset(c.neighbor);
            for (k, &l) in c.neighbor_local.iter().enumerate() {
                for i in 0..n {
                    r.current[(off + i, oj + l)] += c.current[(i, k)];
                    r.delayed[(off + i, oj + l)] += c.delayed[(i, k)];
                }
            }
        }
    }
    r
}

/// Augmented map over one sampling interval of `L` rounds started from
/// `x_{−1} = x_0`:
///
/// `x_L = (A_D^L + A_{F,L}) x_0 + B_L u + Σ_ℓ D_{L,ℓ} w_ℓ`.
///
/// `A_{F,L}` is defined by unrolling the recursion on basis vectors; no
/// closed-form product expansion is assumed. The input and noise maps are
/// computed on first use.
pub struct ComposedModel<'a> {
    pub rounds: usize,
    pub a_diag_power: Matrix,
    pub a_coupling: Matrix,
    models: &'a [LocalModel],
    dec: &'a Decomposition,
    input_map: OnceCell<Matrix>,
    noise_maps: OnceCell<Vec<Matrix>>,
}

impl ComposedModel<'_> {
    pub fn dim(&self) -> usize {
        self.a_diag_power.nrows()
    }

    /// `A_D^L + A_{F,L}`.
    pub fn transition(&self) -> Matrix {
        &self.a_diag_power + &self.a_coupling
    }

    /// Response at round `L` to a unit input held over all rounds.
    pub fn input_map(&self) -> &Matrix {
        self.input_map.get_or_init(|| {
            let dim = self.dim();
            let eye = Matrix::identity(dim, dim);
            let mut prev = Matrix::zeros(dim, dim);
            let mut cur = Matrix::zeros(dim, dim);
            for _ in 0..self.rounds {
                let next = apply_round(self.models, self.dec, &cur, &prev, Some(&eye));
                prev = std::mem::replace(&mut cur, next);
            }
            cur
        })
    }

    /// `D_{L,ℓ}` for `ℓ = 1..=L`: response at round `L` to a unit state
    /// perturbation added at the end of round `ℓ`.
    pub fn noise_maps(&self) -> &[Matrix] {
        self.noise_maps.get_or_init(|| {
            let dim = self.dim();
            (1..=self.rounds)
                .map(|l| {
                    let mut prev = Matrix::zeros(dim, dim);
                    let mut cur = Matrix::identity(dim, dim);
                    for _ in l..self.rounds {
                        let next = apply_round(self.models, self.dec, &cur, &prev, None);
                        prev = std::mem::replace(&mut cur, next);
                    }
                    cur
                })
                .collect()
        })
    }
}

pub fn compose_l_steps<'a>(models: &'a [LocalModel], dec: &'a Decomposition, rounds: usize) -> ComposedModel<'a> {
    assert!(rounds >= 1, "at least one round is required");
    let dim = dec.augmented_dim();
    let mut prev = Matrix::identity(dim, dim);
    let mut cur = prev.clone();
    let mut diag_prev = Matrix::identity(dim, dim);
    let diag = coupling_matrices(models, dec).diag;
    for _ in 0..rounds {
        let next = apply_round(models, dec, &cur, &prev, None);
        prev = std::mem::replace(&mut cur, next);
        diag_prev = &diag * diag_prev;
    }
    ComposedModel {
        rounds,
        a_coupling: cur - &diag_prev,
        a_diag_power: diag_prev,
        models,
        dec,
        input_map: OnceCell::new(),
        noise_maps: OnceCell::new(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{decompose, extract_local_blocks, seed_from_rectangles};
    use crate::linalg::max_abs;
    use crate::mesh::{generate_mesh, FeSystem, Polygon};
    use crate::model::{discretize_local, discretize_local_omega};

    fn two_node(omega: f64) -> (Decomposition, Vec<LocalModel>) {
        let mesh = generate_mesh(&Polygon::rectangle(2.0, 1.0), 0.45).unwrap();
        let sys = FeSystem::assemble(&mesh, 0.05, &[]).unwrap();
        let rects = [[0.0, 1.0, 0.0, 1.0], [1.0, 2.0, 0.0, 1.0]];
        let dec = decompose(&mesh, &seed_from_rectangles(&mesh, &rects).unwrap(), 1).unwrap();
        let models = (0..2)
            .map(|m| {
                let b = extract_local_blocks(&sys.mass, &sys.stiffness, &dec, m);
                discretize_local_omega(&b, 1.0, omega).unwrap()
            })
            .collect();
        (dec, models)
    }

    fn random_vec(n: usize, seed: u64) -> Matrix {
        let mut s = seed;
        Matrix::from_fn(n, 1, |_, _| {
            s = s.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
            (s >> 11) as f64 / (1u64 << 53) as f64 - 0.5
        })
    }

    /// Oracle: dense three-term recursion.
    fn simulate(r: &RoundMatrices, x0: &Matrix, u: &Matrix, rounds: usize) -> Matrix {
        let mut prev = x0.clone();
        let mut cur = x0.clone();
        for _ in 0..rounds {
            let next = &r.diag * &cur + &r.current * &cur + &r.delayed * &prev + &r.input * u;
            prev = std::mem::replace(&mut cur, next);
        }
        cur
    }

    #[test]
    fn composed_map_matches_recursion() {
        for omega in [1.0, 0.8] {
            let (dec, models) = two_node(omega);
            let r = coupling_matrices(&models, &dec);
            for rounds in [1, 2, 5] {
                let c = compose_l_steps(&models, &dec, rounds);
                let x0 = random_vec(dec.augmented_dim(), rounds as u64);
                let u = random_vec(dec.augmented_dim(), 99);
                let direct = simulate(&r, &x0, &u, rounds);
                let composed = c.transition() * &x0 + c.input_map() * &u;
                assert!(max_abs(&(direct - composed)) < 1e-12, "omega {omega} L {rounds}");
            }
        }
    }

    #[test]
    fn single_round_coupling_is_sum_of_couplings() {
        let (dec, models) = two_node(1.0);
        let r = coupling_matrices(&models, &dec);
        let c = compose_l_steps(&models, &dec, 1);
        assert!(max_abs(&(&c.a_coupling - (&r.current + &r.delayed))) < 1e-14);
        assert!(max_abs(&(&c.a_diag_power - &r.diag)) == 0.0);
    }

    #[test]
    fn single_node_has_no_coupling() {
        let mesh = generate_mesh(&Polygon::rectangle(1.0, 1.0), 0.4).unwrap();
        let sys = FeSystem::assemble(&mesh, 0.1, &[]).unwrap();
        let dec = decompose(&mesh, &vec![0; mesh.vertex_count()], 1).unwrap();
        let b = extract_local_blocks(&sys.mass, &sys.stiffness, &dec, 0);
        let models = vec![discretize_local(&b, 1.0).unwrap()];
        let c = compose_l_steps(&models, &dec, 1);
        assert_eq!(max_abs(&c.a_coupling), 0.0);
        assert_eq!(c.a_diag_power, models[0].a);
    }

    #[test]
    fn restarting_the_delay_changes_the_result() {
        // Splitting L = 2 + 2 with x_{−1} := x_0 re-imposed at the split is
        // not the same map as a single run of four rounds.
        let (dec, models) = two_node(1.0);
        let four = compose_l_steps(&models, &dec, 4).transition();
        let two = compose_l_steps(&models, &dec, 2).transition();
        assert!(max_abs(&(&four - &two * &two)) > 1e-10);
    }

    #[test]
    fn noise_maps_match_recursion() {
        let (dec, models) = two_node(1.0);
        let r = coupling_matrices(&models, &dec);
        let rounds = 3;
        let c = compose_l_steps(&models, &dec, rounds);
        let dim = dec.augmented_dim();
        let w: Vec<Matrix> = (0..rounds).map(|k| random_vec(dim, 7 + k as u64)).collect();
        // Oracle: noise added after each round.
        let mut prev = Matrix::zeros(dim, 1);
        let mut cur = Matrix::zeros(dim, 1);
        for wk in &w {
            let next = &r.diag * &cur + &r.current * &cur + &r.delayed * &prev + wk;
            prev = std::mem::replace(&mut cur, next);
        }
        let mut composed = Matrix::zeros(dim, 1);
        for (d, wk) in c.noise_maps().iter().zip(&w) {
            composed += d * wk;
        }
        assert!(max_abs(&(cur - composed)) < 1e-12);
        assert_eq!(c.noise_maps()[rounds - 1], Matrix::identity(dim, dim));
    }
}
