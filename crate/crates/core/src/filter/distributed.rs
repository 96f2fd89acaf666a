use rayon::prelude::*;

use super::central::{self, FilterState, Phase};
use super::runtime::{BoundaryMessage, Transport};
use crate::decomposition::Decomposition;
use crate::error::{Error, Result};
use crate::linalg::{symmetrize, Matrix, Vector};
use crate::model::{LocalModel, NodeSensors, NoiseLevels};

/// Whether node computations inside a round run on one thread or on the
/// rayon pool. Results are bit-identical either way.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Execution {
    #[default]
    Sequential,
    Parallel,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeState {
    pub node: usize,
    pub x: Vector,
    pub p: Matrix,
    pub phase: Phase,
}

/// Everything the nodes share for one filter variant.
pub struct DistributedConfig<'a> {
    pub dec: &'a Decomposition,
    pub models: &'a [LocalModel],
    pub sensors: &'a [NodeSensors],
    pub q: Vec<Matrix>,
    pub r: Vec<Matrix>,
    pub rounds: usize,
    /// Total covariance boost per sampling interval; each round applies
    /// `gamma^(1/rounds)`.
    pub gamma: f64,
    pub execution: Execution,
}

impl<'a> DistributedConfig<'a> {
    pub fn new(
        dec: &'a Decomposition,
        models: &'a [LocalModel],
        sensors: &'a [NodeSensors],
        noise: NoiseLevels,
        rounds: usize,
        gamma: f64,
    ) -> Result<Self> {
        if rounds == 0 {
            return Err(Error::invalid("at least one consensus round is required"));
        }
        if !(gamma >= 1.0) {
            return Err(Error::invalid(format!("covariance boost must be >= 1, got {gamma}")));
        }
        if models.len() != dec.node_count() || sensors.len() != dec.node_count() {
            return Err(Error::invalid("one model and one sensor set per node are required"));
        }
        Ok(Self {
            dec,
            models,
            sensors,
            q: (0..dec.node_count()).map(|m| noise.q(dec.local_dim(m))).collect(),
            r: sensors.iter().map(|s| noise.r(s.sensors.len())).collect(),
            rounds,
            gamma,
            execution: Execution::Sequential,
        })
    }

    pub fn with_execution(mut self, execution: Execution) -> Self {
        self.execution = execution;
        self
    }

    pub fn gamma_step(&self) -> f64 {
        self.gamma.powf(1.0 / self.rounds as f64)
    }

    /// Round tag of round `l` (1-based) in sampling interval `cycle`.
    pub fn round_tag(&self, cycle: usize, l: usize) -> u64 {
        (cycle * self.rounds + l) as u64
    }

    /// Initial prior of every node from a global estimate and a scalar
    /// covariance level.
    pub fn initial_nodes(&self, x0: &Vector, p0_scale: f64) -> Vec<NodeState> {
        (0..self.dec.node_count())
            .map(|m| {
                let n = self.dec.local_dim(m);
                NodeState {
                    node: m,
                    x: self.dec.restrict(m, x0),
                    p: Matrix::identity(n, n) * p0_scale,
                    phase: Phase::Prior,
                }
            })
            .collect()
    }

    /// Splits a global measurement vector into per-node vectors.
    pub fn split_measurement(&self, y: &Vector) -> Vec<Vector> {
        self.sensors
            .iter()
            .map(|s| Vector::from_iterator(s.sensors.len(), s.sensors.iter().map(|&i| y[i])))
            .collect()
    }

    fn map_nodes<T: Send>(&self, f: impl Fn(usize) -> Result<T> + Sync + Send) -> Result<Vec<T>> {
        let n = self.dec.node_count();
        match self.execution {
            Execution::Sequential => (0..n).map(f).collect(),
            Execution::Parallel => (0..n).into_par_iter().map(f).collect(),
        }
    }
}

/// Local measurement update; identical algebra to the centralized filter.
pub fn local_correct(node: &NodeState, y: &Vector, c: &Matrix, r: &Matrix) -> Result<NodeState> {
    let st = FilterState {
        x: node.x.clone(),
        p: node.p.clone(),
        phase: node.phase,
        step: 0,
    };
    let post = central::correct(&st, y, c, r)?;
    Ok(NodeState {
        node: node.node,
        x: post.x,
        p: post.p,
        phase: Phase::Posterior,
    })
}

/// `γ_step² A P Aᵀ + Q`.
pub fn covariance_round(model: &LocalModel, p: &Matrix, gamma_step: f64, q: &Matrix) -> Matrix {
    let mut out = (&model.a * p * model.a.transpose()) * (gamma_step * gamma_step) + q;
    symmetrize(&mut out);
    out
}

/// One synchronous consensus round on the estimates. Every node first sends
/// its interface values to each reader; then each node combines its own
/// state with the received payloads. `cur` holds round `ℓ−1`, `prev` round
/// `ℓ−2`; `variances[j]` is node `j`'s covariance diagonal at round `ℓ−1`.
pub fn consensus_round(
    cfg: &DistributedConfig,
    cur: &[Vector],
    prev: &[Vector],
    variances: &[Vector],
    inputs: Option<&[Vector]>,
    tag: u64,
    transport: &mut dyn Transport,
) -> Result<Vec<Vector>> {
    let dec = cfg.dec;
    for m in 0..dec.node_count() {
        for c in &cfg.models[m].couplings {
            let j = c.neighbor;
            let pick = |v: &Vector| c.neighbor_local.iter().map(|&l| v[l]).collect::<Vec<f64>>();
            transport.send(BoundaryMessage {
                sender: j,
                receiver: m,
                round: tag,
                current: pick(&cur[j]),
                previous: pick(&prev[j]),
                variances: pick(&variances[j]),
            })?;
        }
    }
    let mut inboxes = Vec::with_capacity(dec.node_count());
    for m in 0..dec.node_count() {
        let senders: Vec<usize> = cfg.models[m].couplings.iter().map(|c| c.neighbor).collect();
        inboxes.push(transport.collect(m, tag, &senders)?);
    }
    cfg.map_nodes(|m| {
        let model = &cfg.models[m];
        let mut x = &model.a * &cur[m];
        if let Some(a_self) = &model.a_self_delayed {
            x += a_self * &prev[m];
        }
        for (c, msg) in model.couplings.iter().zip(&inboxes[m]) {
            if msg.current.len() != c.neighbor_local.len() {
                return Err(Error::Protocol(format!(
                    "payload from {} to {m} has {} values, expected {}",
                    msg.sender,
                    msg.current.len(),
                    c.neighbor_local.len()
                )));
            }
            x += &c.current * Vector::from_column_slice(&msg.current);
            x += &c.delayed * Vector::from_column_slice(&msg.previous);
        }
        if let Some(u) = inputs {
            x += &model.b * &u[m];
        }
        Ok(x)
    })
}

/// Correction followed by `rounds` consensus rounds; on return every node
/// holds its prior for the next sample. Returns the posterior estimates.
pub fn run_sampling_cycle(
    cfg: &DistributedConfig,
    nodes: &mut [NodeState],
    y: &[Vector],
    cycle: usize,
    transport: &mut dyn Transport,
) -> Result<Vec<Vector>> {
    if y.len() != nodes.len() {
        return Err(Error::invalid("one measurement vector per node is required"));
    }
    let posts = cfg.map_nodes(|m| {
        let s = &cfg.sensors[m];
        local_correct(&nodes[m], &y[m], &s.c, &cfg.r[m])
    })?;
    let posterior: Vec<Vector> = posts.iter().map(|n| n.x.clone()).collect();

    let gamma_step = cfg.gamma_step();
    let mut prev = posterior.clone();
    let mut cur = posterior.clone();
    let mut cov: Vec<Matrix> = posts.into_iter().map(|n| n.p).collect();
    for l in 1..=cfg.rounds {
        let variances: Vec<Vector> = cov.iter().map(|p| p.diagonal()).collect();
        let next = consensus_round(cfg, &cur, &prev, &variances, None, cfg.round_tag(cycle, l), transport)?;
        cov = cfg.map_nodes(|m| Ok(covariance_round(&cfg.models[m], &cov[m], gamma_step, &cfg.q[m])))?;
        prev = std::mem::replace(&mut cur, next);
    }
    for ((node, x), p) in nodes.iter_mut().zip(cur).zip(cov) {
        node.x = x;
        node.p = p;
        node.phase = Phase::Prior;
    }
    Ok(posterior)
}

/// Global estimate from per-node estimates, averaging duplicated vertices.
pub fn gather_global_estimate(states: &[Vector], dec: &Decomposition) -> Vector {
    let mut aug = Vector::zeros(dec.augmented_dim());
    for (m, x) in states.iter().enumerate() {
        aug.rows_mut(dec.offset(m), x.len()).copy_from(x);
    }
    dec.gather_mean(&aug)
}

/// Per-node gains and per-round covariance diagonals, computed once per
/// variant because the covariance recursion ignores the measured values.
/// Once every node's gain changes by at most `freeze_tol` (relative) the
/// last sample is reused.
#[derive(Debug, Clone)]
pub struct DistributedSchedule {
    /// `gains[q][m]`
    pub gains: Vec<Vec<Matrix>>,
    /// `variances[q][l][m]`: diagonal of `P^m` entering round `l + 1`.
    pub variances: Vec<Vec<Vec<Vector>>>,
    /// `posterior[q][m]`
    pub posterior: Vec<Vec<Matrix>>,
}

impl DistributedSchedule {
    pub fn compute(cfg: &DistributedConfig, p0: &[Matrix], samples: usize, freeze_tol: f64) -> Result<Self> {
        let gamma_step = cfg.gamma_step();
        let mut p: Vec<Matrix> = p0.to_vec();
        let mut gains: Vec<Vec<Matrix>> = Vec::new();
        let mut variances = Vec::new();
        let mut posterior = Vec::new();
        for _ in 0..samples {
            let step = cfg.map_nodes(|m| {
                let s = &cfg.sensors[m];
                if s.sensors.is_empty() {
                    return Ok((Matrix::zeros(p[m].nrows(), 0), p[m].clone()));
                }
                let gain = central::kalman_gain(&p[m], &s.c, &cfg.r[m])?;
                let mut post = &p[m] - &gain * (&s.c * &p[m]);
                symmetrize(&mut post);
                Ok((gain, post))
            })?;
            let (g, mut cov): (Vec<Matrix>, Vec<Matrix>) = step.into_iter().unzip();
            let converged = gains.last().is_some_and(|last| {
                last.iter()
                    .zip(&g)
                    .all(|(a, b)| (a - b).norm() <= freeze_tol * b.norm().max(f64::MIN_POSITIVE))
            });
            gains.push(g);
            posterior.push(cov.clone());
            let mut per_round = Vec::with_capacity(cfg.rounds);
            for _ in 0..cfg.rounds {
                per_round.push(cov.iter().map(|c| c.diagonal()).collect());
                cov = cfg.map_nodes(|m| Ok(covariance_round(&cfg.models[m], &cov[m], gamma_step, &cfg.q[m])))?;
            }
            variances.push(per_round);
            p = cov;
            if converged {
                break;
            }
        }
        Ok(Self {
            gains,
            variances,
            posterior,
        })
    }

    fn at(&self, q: usize) -> usize {
        q.min(self.gains.len() - 1)
    }

    /// Estimate-only run. `measurements[q]` is the global measurement at
    /// sample `q`; returns the per-node posterior estimates at every sample.
    pub fn run(
        &self,
        cfg: &DistributedConfig,
        x0: &[Vector],
        measurements: &[Vector],
        transport: &mut dyn Transport,
    ) -> Result<Vec<Vec<Vector>>> {
        let mut x: Vec<Vector> = x0.to_vec();
        let mut out = Vec::with_capacity(measurements.len());
        for (q, y) in measurements.iter().enumerate() {
            let k = self.at(q);
            let ys = cfg.split_measurement(y);
            let posterior = cfg.map_nodes(|m| {
                let c = &cfg.sensors[m].c;
                if ys[m].is_empty() {
                    return Ok(x[m].clone());
                }
                Ok(&x[m] + &self.gains[k][m] * (&ys[m] - c * &x[m]))
            })?;
            let mut prev = posterior.clone();
            let mut cur = posterior.clone();
            for l in 1..=cfg.rounds {
                let next = consensus_round(
                    cfg,
                    &cur,
                    &prev,
                    &self.variances[k][l - 1],
                    None,
                    cfg.round_tag(q, l),
                    transport,
                )?;
                prev = std::mem::replace(&mut cur, next);
            }
            x = cur;
            out.push(posterior);
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decomposition::{decompose, extract_local_blocks, seed_from_rectangles};
    use crate::filter::runtime::InProcessTransport;
    use crate::mesh::{generate_l_shaped_mesh, FeSystem};
    use crate::model::{assign_sensors, build_measurement, discretize_local};

    struct Setup {
        dec: Decomposition,
        models: Vec<LocalModel>,
        sensors: Vec<NodeSensors>,
        n: usize,
        sensor_count: usize,
    }

    fn setup(rounds: usize) -> Setup {
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 1.11e-4, &[]).unwrap();
        let rects = [[0.0, 1.0, 0.0, 1.0], [1.0, 2.0, 0.0, 1.0], [0.0, 1.0, 1.0, 2.0]];
        let dec = decompose(&mesh, &seed_from_rectangles(&mesh, &rects).unwrap(), 1).unwrap();
        let delta = 100.0 / rounds as f64;
        let models = (0..dec.node_count())
            .map(|m| discretize_local(&extract_local_blocks(&sys.mass, &sys.stiffness, &dec, m), delta).unwrap())
            .collect();
        let pts = [
            [0.31, 0.27],
            [0.72, 0.61],
            [1.43, 0.33],
            [1.81, 0.77],
            [0.37, 1.52],
            [0.66, 1.83],
        ];
        let meas = build_measurement(&mesh, &pts).unwrap();
        let sensors = assign_sensors(&mesh, &dec, &meas).unwrap();
        Setup {
            n: mesh.vertex_count(),
            dec,
            models,
            sensors,
            sensor_count: pts.len(),
        }
    }

    fn noise() -> NoiseLevels {
        NoiseLevels {
            process: 3.0,
            measurement: 0.1,
        }
    }

    fn measurements(count: usize, sensors: usize) -> Vec<Vector> {
        (0..count)
            .map(|k| Vector::from_fn(sensors, |i, _| 300.0 + ((k * 7 + i * 3) % 11) as f64 * 0.05))
            .collect()
    }

    #[test]
    fn sensorless_node_keeps_prior() {
        let node = NodeState {
            node: 0,
            x: Vector::from_element(2, 1.0),
            p: Matrix::identity(2, 2),
            phase: Phase::Prior,
        };
        let post = local_correct(&node, &Vector::zeros(0), &Matrix::zeros(0, 2), &Matrix::zeros(0, 0)).unwrap();
        assert_eq!(post.x, node.x);
        assert_eq!(post.p, node.p);
    }

    #[test]
    fn total_boost_over_rounds() {
        // Scalar A = 1, Q = 0: after L rounds P grows by exactly γ².
        let model = LocalModel {
            node: 0,
            delta: 1.0,
            omega: 1.0,
            a: Matrix::identity(1, 1),
            a_self_delayed: None,
            couplings: vec![],
            b: Matrix::identity(1, 1),
        };
        let (gamma, rounds) = (1.1_f64, 10);
        let step = gamma.powf(1.0 / rounds as f64);
        let mut p = Matrix::identity(1, 1);
        for _ in 0..rounds {
            p = covariance_round(&model, &p, step, &Matrix::zeros(1, 1));
        }
        assert!((p[(0, 0)] - gamma * gamma).abs() < 1e-12);
    }

    #[test]
    fn parallel_and_sequential_are_bit_identical() {
        let s = setup(5);
        let ys = measurements(6, s.sensor_count);
        let run = |exec: Execution| {
            let cfg = DistributedConfig::new(&s.dec, &s.models, &s.sensors, noise(), 5, 1.1)
                .unwrap()
                .with_execution(exec);
            let mut nodes = cfg.initial_nodes(&Vector::from_element(s.n, 305.0), 20.0);
            let mut t = InProcessTransport::new(s.dec.node_count());
            let mut out = Vec::new();
            for (q, y) in ys.iter().enumerate() {
                out.push(run_sampling_cycle(&cfg, &mut nodes, &cfg.split_measurement(y), q, &mut t).unwrap());
            }
            (out, nodes)
        };
        assert_eq!(run(Execution::Sequential), run(Execution::Parallel));
    }

    #[test]
    fn schedule_matches_literal_cycle() {
        let rounds = 4;
        let s = setup(rounds);
        let ys = measurements(25, s.sensor_count);
        let cfg = DistributedConfig::new(&s.dec, &s.models, &s.sensors, noise(), rounds, 1.1).unwrap();
        let x0 = Vector::from_element(s.n, 305.0);
        let mut nodes = cfg.initial_nodes(&x0, 20.0);
        let mut t = InProcessTransport::new(s.dec.node_count());
        let mut literal = Vec::new();
        for (q, y) in ys.iter().enumerate() {
            literal.push(run_sampling_cycle(&cfg, &mut nodes, &cfg.split_measurement(y), q, &mut t).unwrap());
        }
        let init = cfg.initial_nodes(&x0, 20.0);
        let p0: Vec<Matrix> = init.iter().map(|n| n.p.clone()).collect();
        let x0s: Vec<Vector> = init.iter().map(|n| n.x.clone()).collect();
        let sched = DistributedSchedule::compute(&cfg, &p0, ys.len(), 1e-13).unwrap();
        let mut t2 = InProcessTransport::new(s.dec.node_count());
        let fast = sched.run(&cfg, &x0s, &ys, &mut t2).unwrap();
        for (a, b) in literal.iter().zip(&fast) {
            for (xa, xb) in a.iter().zip(b) {
                assert!((xa - xb).amax() < 1e-8);
            }
        }
    }

    #[test]
    fn messages_carry_only_interface_values() {
        let s = setup(2);
        let cfg = DistributedConfig::new(&s.dec, &s.models, &s.sensors, noise(), 2, 1.0).unwrap();
        let mut nodes = cfg.initial_nodes(&Vector::from_element(s.n, 300.0), 1.0);
        let mut t = InProcessTransport::new(s.dec.node_count()).with_trace();
        let y = measurements(1, s.sensor_count).remove(0);
        run_sampling_cycle(&cfg, &mut nodes, &cfg.split_measurement(&y), 0, &mut t).unwrap();
        let edges = s.dec.edges();
        assert_eq!(t.trace().len(), 2 * edges.len());
        for e in t.trace() {
            let iface = s.dec.interfaces[e.receiver]
                .iter()
                .find(|i| i.neighbor == e.sender)
                .unwrap();
            assert_eq!(e.payload, iface.vertices.len());
        }
        let tags: Vec<u64> = t.trace().iter().map(|e| e.round).collect();
        assert!(tags.windows(2).all(|w| w[0] <= w[1]));
    }

    #[test]
    fn covariance_is_independent_of_measurements() {
        let s = setup(2);
        let cfg = DistributedConfig::new(&s.dec, &s.models, &s.sensors, noise(), 2, 1.1).unwrap();
        let x0 = Vector::from_element(s.n, 305.0);
        let run = |offset: f64| {
            let mut nodes = cfg.initial_nodes(&x0, 20.0);
            let mut t = InProcessTransport::new(s.dec.node_count());
            for (q, y) in measurements(4, s.sensor_count).iter().enumerate() {
                let y = y.add_scalar(offset);
                run_sampling_cycle(&cfg, &mut nodes, &cfg.split_measurement(&y), q, &mut t).unwrap();
            }
            nodes.into_iter().map(|n| n.p).collect::<Vec<_>>()
        };
        assert_eq!(run(0.0), run(7.0));
    }

    #[test]
    fn single_node_matches_central_filter() {
        use crate::filter::central::{self, CentralConfig};
        let mesh = generate_l_shaped_mesh(0.25).unwrap();
        let sys = FeSystem::assemble(&mesh, 1.11e-4, &[]).unwrap();
        let n = mesh.vertex_count();
        let dec = decompose(&mesh, &vec![0; n], 1).unwrap();
        let rounds = 5;
        let models = vec![discretize_local(&extract_local_blocks(&sys.mass, &sys.stiffness, &dec, 0), 2.0).unwrap()];
        let pts = [[0.31, 0.27], [1.43, 0.33], [0.37, 1.52]];
        let meas = build_measurement(&mesh, &pts).unwrap();
        let sensors = assign_sensors(&mesh, &dec, &meas).unwrap();
        let cfg = DistributedConfig::new(&dec, &models, &sensors, noise(), rounds, 1.0).unwrap();
        let ys = measurements(8, pts.len());
        let x0 = Vector::from_element(n, 305.0);
        let mut nodes = cfg.initial_nodes(&x0, 20.0);
        let mut t = InProcessTransport::new(1);
        let dist: Vec<Vector> = ys
            .iter()
            .enumerate()
            .map(|(q, y)| {
                run_sampling_cycle(&cfg, &mut nodes, &cfg.split_measurement(y), q, &mut t)
                    .unwrap()
                    .remove(0)
            })
            .collect();

        let central_model = crate::model::discretize_central(&sys, 2.0).unwrap();
        let (q, r) = (noise().q(n), noise().r(pts.len()));
        let ccfg = CentralConfig {
            model: &central_model,
            c: &meas.c,
            r: &r,
            q: &q,
            steps_per_sample: rounds,
        };
        let traj = central::run(&ccfg, &ys, FilterState::prior(x0, Matrix::identity(n, n) * 20.0), None).unwrap();
        for (a, b) in dist.iter().zip(&traj.estimates) {
            assert!((a - b).amax() < 1e-10, "{}", (a - b).amax());
        }
    }

    #[test]
    fn gather_averages_copies() {
        let s = setup(1);
        let x = Vector::from_fn(s.n, |i, _| i as f64);
        let states: Vec<Vector> = (0..s.dec.node_count()).map(|m| s.dec.restrict(m, &x)).collect();
        assert_eq!(gather_global_estimate(&states, &s.dec), x);
    }
}
