//! Equivalence checks between the centralized and distributed filters.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::experiment::Prepared;
use super::truth::TruthTrajectory;
use crate::decomposition::{decompose, extract_local_blocks};
use crate::error::{Error, Result};
use crate::filter::{
    central, consensus_round, gather_global_estimate, run_sampling_cycle, CentralConfig, DistributedConfig,
    FilterState, InProcessTransport,
};
use crate::linalg::{Matrix, Vector};
use crate::mesh::{generate_mesh, FeSystem, Polygon};
use crate::model::{assign_sensors, build_measurement, discretize_central, discretize_local, NoiseLevels};

#[derive(Debug, Clone, PartialEq)]
pub struct OracleReport {
    pub vertices: usize,
    pub samples: usize,
    pub max_abs_diff: f64,
}

/// A single node with `gamma = 1` and as many rounds as the centralized
/// filter has substeps is the centralized filter. Runs both literal
/// recursions on a unit square meshed at `edge` with noisy measurements of
/// a decaying field.
pub fn single_node_oracle(edge: f64, samples: usize, substeps: usize, seed: u64) -> Result<OracleReport> {
    let mesh = generate_mesh(&Polygon::rectangle(1.0, 1.0), edge)?;
    let n = mesh.vertex_count();
    let diffusivity = 1e-3;
    let period = 100.0;
    let delta = period / substeps as f64;
    let sys = FeSystem::assemble(&mesh, diffusivity, &[])?;
    let dec = decompose(&mesh, &vec![0; n], 1)?;
    let models = vec![discretize_local(
        &extract_local_blocks(&sys.mass, &sys.stiffness, &dec, 0),
        delta,
    )?];
    let sensors = [[0.13, 0.21], [0.71, 0.33], [0.42, 0.58], [0.27, 0.86], [0.88, 0.77]];
    let meas = build_measurement(&mesh, &sensors)?;
    let node_sensors = assign_sensors(&mesh, &dec, &meas)?;
    let noise = NoiseLevels {
        process: 0.5,
        measurement: 0.1,
    };
    let cfg = DistributedConfig::new(&dec, &models, &node_sensors, noise, substeps, 1.0)?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ys: Vec<Vector> = (1..=samples)
        .map(|q| {
            let level = 300.0 + 5.0 * (-(q as f64) / 20.0).exp();
            Vector::from_fn(sensors.len(), |_, _| {
                let z: f64 = StandardNormal.sample(&mut rng);
                level + noise.measurement * z
            })
        })
        .collect();
    let x0 = Vector::from_element(n, 305.0);
    let p0 = 20.0;

    let mut nodes = cfg.initial_nodes(&x0, p0);
    let mut transport = InProcessTransport::new(1);
    let mut distributed = Vec::with_capacity(samples);
    for (q, y) in ys.iter().enumerate() {
        let post = run_sampling_cycle(&cfg, &mut nodes, &cfg.split_measurement(y), q, &mut transport)?;
        distributed.push(gather_global_estimate(&post, &dec));
    }

    let model = discretize_central(&sys, delta)?;
    let (q, r) = (noise.q(n), noise.r(sensors.len()));
    let ccfg = CentralConfig {
        model: &model,
        c: &meas.c,
        r: &r,
        q: &q,
        steps_per_sample: substeps,
    };
    let traj = central::run(&ccfg, &ys, FilterState::prior(x0, Matrix::identity(n, n) * p0), None)?;
    let max_abs_diff = distributed
        .iter()
        .zip(&traj.estimates)
        .map(|(a, b)| (a - b).amax())
        .fold(0.0, f64::max);
    Ok(OracleReport {
        vertices: n,
        samples,
        max_abs_diff,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SchwarzPoint {
    pub rounds: usize,
    /// Largest spread between copies of a duplicated vertex after the cycle.
    pub disagreement: f64,
    /// `‖x_d − x_c‖ / ‖x_c − x_0‖` on the filter mesh, where `x_c` is the
    /// centralized prediction and `x_0` the starting field.
    pub relative_error: f64,
}

/// One sampling interval of pure prediction from the truth at `sample`
/// (restricted to the filter mesh) for every configured round count.
pub fn schwarz_check(prepared: &Prepared, truth: &TruthTrajectory, sample: usize) -> Result<Vec<SchwarzPoint>> {
    let n = prepared.mesh.vertex_count();
    let field = truth
        .fields
        .get(sample)
        .ok_or_else(|| Error::invalid(format!("no truth at sample {sample}")))?;
    // Refinement keeps the coarse vertices first.
    let x0 = field.rows(0, n).into_owned();
    let s = &prepared.scenario;
    let mut xc = x0.clone();
    for _ in 0..s.steps_per_sample(s.filter.central_step) {
        xc = prepared.central.step(&xc, None);
    }
    let increment = (&xc - &x0).norm();
    let dec = &prepared.dec;
    let mut out = Vec::new();
    for &rounds in &s.filter.rounds {
        let cfg = prepared.distributed_config(rounds, s.filter.gamma)?;
        let start: Vec<Vector> = (0..dec.node_count()).map(|m| dec.restrict(m, &x0)).collect();
        let variances: Vec<Vector> = start.iter().map(|x| Vector::zeros(x.len())).collect();
        let mut transport = InProcessTransport::new(dec.node_count());
        let mut prev = start.clone();
        let mut cur = start;
        for l in 1..=rounds {
            let next = consensus_round(&cfg, &cur, &prev, &variances, None, cfg.round_tag(0, l), &mut transport)?;
            prev = std::mem::replace(&mut cur, next);
        }
        let mut aug = Vector::zeros(dec.augmented_dim());
        for (m, x) in cur.iter().enumerate() {
            aug.rows_mut(dec.offset(m), x.len()).copy_from(x);
        }
        let xd = gather_global_estimate(&cur, dec);
        out.push(SchwarzPoint {
            rounds,
            disagreement: dec.max_disagreement(&aug),
            relative_error: (&xd - &xc).norm() / increment.max(f64::MIN_POSITIVE),
        });
    }
    Ok(out)
}
