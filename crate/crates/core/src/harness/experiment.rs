use std::time::Instant;

use rayon::prelude::*;

use super::config::Scenario;
use super::sampling::{evaluation_lattice, rmse, sample_measurements, PointProbe};
use super::truth::{simulate_truth, truth_mesh, TruthTrajectory};
use crate::decomposition::{build_augmented, decompose, seed_from_rectangles, Decomposition};
use crate::error::{Error, Result};
use crate::filter::{
    gather_global_estimate, CentralConfig, CentralSchedule, DistributedConfig, DistributedSchedule, InProcessTransport,
    TraceEntry,
};
use crate::linalg::{Matrix, Vector};
use crate::mesh::{FeSystem, Mesh, Point};
use crate::model::{
    assign_sensors, build_measurement, discretize_central, CentralModel, LocalModel, Measurement, NodeSensors,
    NoiseLevels,
};
use crate::stability::{
    analyze, local_models, pbh_margin, select_omega, OmegaChoice, StabilityOptions, StabilityReport, OBSERVABILITY_TOL,
};

/// Lattice spacing of the RMSE evaluation points.
pub const EVAL_SPACING: f64 = 0.1;
/// Relative gain change below which a gain schedule is frozen.
pub const FREEZE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variant {
    Central,
    Distributed { rounds: usize },
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Central => "cfekf".into(),
            Variant::Distributed { rounds } => format!("dfekf_L{rounds}"),
        }
    }
}

/// Everything derived from a scenario before any Monte Carlo run. The
/// filters see only `system` (adiabatic), the measurement maps and the
/// noise levels; the boundary schedule is read by the truth alone.
pub struct Prepared {
    pub scenario: Scenario,
    pub mesh: Mesh,
    pub system: FeSystem,
    pub dec: Decomposition,
    pub measurement: Measurement,
    pub node_sensors: Vec<NodeSensors>,
    pub omega: OmegaChoice,
    pub central: CentralModel,
    /// Local models per entry of `scenario.filter.rounds`.
    pub local: Vec<Vec<LocalModel>>,
    pub eval_points: Vec<Point>,
}

impl Prepared {
    pub fn new(scenario: &Scenario) -> Result<Self> {
        let mesh = scenario.filter_mesh()?;
        let system = FeSystem::assemble(&mesh, scenario.physics.diffusivity, &[])?;
        let seed = seed_from_rectangles(&mesh, &scenario.subdomains)?;
        let dec = decompose(&mesh, &seed, scenario.filter.overlap_layers)?;
        let measurement = build_measurement(&mesh, &scenario.sensors)?;
        let node_sensors = assign_sensors(&mesh, &dec, &measurement)?;
        let aug = build_augmented(&system.mass, &system.stiffness, &dec);
        let omega = select_omega(&aug, StabilityOptions::default().omega_safety)?;
        let central = discretize_central(&system, scenario.filter.central_step)?;
        let period = scenario.sampling.period;
        let local = scenario
            .filter
            .rounds
            .iter()
            .map(|&l| local_models(&system, &dec, period / l as f64, omega.omega))
            .collect::<Result<Vec<_>>>()?;
        let eval_points = evaluation_lattice(&scenario.polygon(), EVAL_SPACING);
        let prepared = Self {
            scenario: scenario.clone(),
            mesh,
            system,
            dec,
            measurement,
            node_sensors,
            omega,
            central,
            local,
            eval_points,
        };
        prepared.check_observability()?;
        Ok(prepared)
    }

    pub fn noise(&self) -> NoiseLevels {
        NoiseLevels {
            process: self.scenario.filter.process_std,
            measurement: self.scenario.filter.measurement_std,
        }
    }

    /// Every node's `((A^m)^L, C^m)` pair must pass the PBH test.
    pub fn check_observability(&self) -> Result<()> {
        for (models, &l) in self.local.iter().zip(&self.scenario.filter.rounds) {
            for (m, model) in models.iter().enumerate() {
                let s = &self.node_sensors[m];
                if s.sensors.is_empty() {
                    return Err(Error::Precondition(format!(
                        "node {m} has no sensors and is not observable"
                    )));
                }
                let a = model.a.pow(l as u32);
                let margin = pbh_margin(&a, &s.c)?;
                if margin < OBSERVABILITY_TOL {
                    return Err(Error::Precondition(format!(
                        "node {m} is not observable with {l} rounds (PBH margin {margin:.3e})"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn variants(&self) -> Vec<Variant> {
        std::iter::once(Variant::Central)
            .chain(
                self.scenario
                    .filter
                    .rounds
                    .iter()
                    .map(|&rounds| Variant::Distributed { rounds }),
            )
            .collect()
    }

    fn local_for(&self, rounds: usize) -> &[LocalModel] {
        let i = self
            .scenario
            .filter
            .rounds
            .iter()
            .position(|&l| l == rounds)
            .expect("configured rounds");
        &self.local[i]
    }

    pub fn distributed_config(&self, rounds: usize, gamma: f64) -> Result<DistributedConfig<'_>> {
        DistributedConfig::new(
            &self.dec,
            self.local_for(rounds),
            &self.node_sensors,
            self.noise(),
            rounds,
            gamma,
        )
    }

    pub fn stability(&self, rounds: usize, gamma: f64) -> Result<StabilityReport> {
        analyze(
            &self.system,
            &self.dec,
            &self.node_sensors,
            self.noise(),
            rounds,
            gamma,
            self.scenario.sampling.period / rounds as f64,
            StabilityOptions::default(),
        )
    }

    pub fn truth(&self) -> Result<TruthTrajectory> {
        let fine = truth_mesh(&self.scenario, &self.mesh)?;
        simulate_truth(&self.scenario, &fine)
    }
}

/// Gain schedules of one variant, shared by all runs.
enum Schedule<'a> {
    Central(CentralSchedule),
    Distributed(DistributedConfig<'a>, DistributedSchedule),
}

#[derive(Debug, Clone, Copy, Default)]
pub struct ExperimentOptions {
    /// Worker threads for the Monte Carlo runs; 0 means the rayon default.
    pub threads: usize,
    /// Record the message trace of run 0 for every distributed variant.
    pub trace_messages: bool,
}

#[derive(Debug, Clone)]
pub struct VariantResult {
    pub name: String,
    /// `rmse[run][q - 1]` for samples `q = 1..=samples`.
    pub rmse: Vec<Vec<f64>>,
    /// Global estimates of run 0 at the snapshot samples.
    pub snapshots: Vec<(usize, Vector)>,
    pub trace: Vec<TraceEntry>,
}

impl VariantResult {
    /// Mean across runs at each sample, summed in run order.
    pub fn mean(&self) -> Vec<f64> {
        let samples = self.rmse[0].len();
        (0..samples)
            .map(|k| self.rmse.iter().map(|r| r[k]).sum::<f64>() / self.rmse.len() as f64)
            .collect()
    }

    /// Mean over the last `window` samples of the run-averaged series.
    pub fn steady_mean(&self, window: usize) -> f64 {
        let mean = self.mean();
        let tail = &mean[mean.len() - window.min(mean.len())..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }

    /// Standard error across runs of the per-run steady-state mean.
    pub fn steady_std_error(&self, window: usize) -> f64 {
        let per_run: Vec<f64> = self
            .rmse
            .iter()
            .map(|r| {
                let tail = &r[r.len() - window.min(r.len())..];
                tail.iter().sum::<f64>() / tail.len() as f64
            })
            .collect();
        let n = per_run.len() as f64;
        if n < 2.0 {
            return 0.0;
        }
        let mean = per_run.iter().sum::<f64>() / n;
        let var = per_run.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (var / n).sqrt()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub rounds: usize,
    pub gamma: f64,
    pub steady_mean: f64,
}

#[derive(Debug, Clone)]
pub struct ExperimentResult {
    pub scenario: Scenario,
    pub config_hash: String,
    pub variants: Vec<VariantResult>,
    pub sweep: Vec<SweepPoint>,
    /// Truth mesh and the truth at the snapshot samples.
    pub truth_mesh: Mesh,
    pub truth_snapshots: Vec<(usize, Vector)>,
    /// Filter mesh, on which every estimate lives.
    pub mesh: Mesh,
    /// Reported only on stdout, never in the CSV files.
    pub wall_clock_seconds: f64,
}

impl ExperimentResult {
    pub fn variant(&self, name: &str) -> Option<&VariantResult> {
        self.variants.iter().find(|v| v.name == name)
    }
}

/// Truth sampled once at the sensors and at the evaluation points.
pub struct TruthSamples {
    pub at_sensors: Vec<Vector>,
    pub at_eval: Vec<Vector>,
}

impl TruthSamples {
    pub fn new(prepared: &Prepared, truth: &TruthTrajectory) -> Result<Self> {
        let sensors = PointProbe::new(&truth.mesh, &prepared.scenario.sensors)?;
        let eval = PointProbe::new(&truth.mesh, &prepared.eval_points)?;
        Ok(Self {
            at_sensors: truth.fields.iter().map(|f| sensors.sample(&truth.mesh, f)).collect(),
            at_eval: truth.fields.iter().map(|f| eval.sample(&truth.mesh, f)).collect(),
        })
    }
}

struct Runner<'a> {
    prepared: &'a Prepared,
    truth: &'a TruthSamples,
    eval: PointProbe,
    q: Matrix,
    r: Matrix,
}

impl<'a> Runner<'a> {
    fn new(prepared: &'a Prepared, truth: &'a TruthSamples) -> Result<Self> {
        let n = prepared.mesh.vertex_count();
        let noise = prepared.noise();
        Ok(Self {
            prepared,
            truth,
            eval: PointProbe::new(&prepared.mesh, &prepared.eval_points)?,
            q: noise.q(n),
            r: noise.r(prepared.measurement.count()),
        })
    }

    fn central_config(&self) -> CentralConfig<'_> {
        let s = &self.prepared.scenario;
        CentralConfig {
            model: &self.prepared.central,
            c: &self.prepared.measurement.c,
            r: &self.r,
            q: &self.q,
            steps_per_sample: s.steps_per_sample(s.filter.central_step),
        }
    }

    fn schedule(&self, variant: Variant, gamma: f64) -> Result<Schedule<'a>> {
        let s = &self.prepared.scenario;
        let samples = s.sampling.samples;
        let p0 = s.filter.initial_covariance;
        match variant {
            Variant::Central => {
                let n = self.prepared.mesh.vertex_count();
                let sched = CentralSchedule::compute(
                    &self.central_config(),
                    &(Matrix::identity(n, n) * p0),
                    samples,
                    FREEZE_TOL,
                )?;
                Ok(Schedule::Central(sched))
            }
            Variant::Distributed { rounds } => {
                let cfg = self.prepared.distributed_config(rounds, gamma)?;
                let p0s: Vec<Matrix> = (0..self.prepared.dec.node_count())
                    .map(|m| {
                        let k = self.prepared.dec.local_dim(m);
                        Matrix::identity(k, k) * p0
                    })
                    .collect();
                let sched = DistributedSchedule::compute(&cfg, &p0s, samples, FREEZE_TOL)?;
                Ok(Schedule::Distributed(cfg, sched))
            }
        }
    }

    /// Global posterior estimates of one run at samples `1..=samples`.
    fn estimates(&self, schedule: &Schedule, ys: &[Vector], trace: bool) -> Result<(Vec<Vector>, Vec<TraceEntry>)> {
        let s = &self.prepared.scenario;
        let x0 = Vector::from_element(self.prepared.mesh.vertex_count(), s.filter.initial_estimate);
        match schedule {
            Schedule::Central(sched) => Ok((sched.run(&self.central_config(), ys, &x0)?.estimates, Vec::new())),
            Schedule::Distributed(cfg, sched) => {
                let dec = &self.prepared.dec;
                let x0s: Vec<Vector> = (0..dec.node_count()).map(|m| dec.restrict(m, &x0)).collect();
                let mut transport = InProcessTransport::new(dec.node_count());
                if trace {
                    transport = transport.with_trace();
                }
                let per_node = sched.run(cfg, &x0s, ys, &mut transport)?;
                let global = per_node
                    .iter()
                    .map(|states| gather_global_estimate(states, dec))
                    .collect();
                Ok((global, transport.trace().to_vec()))
            }
        }
    }

    fn rmse_series(&self, estimates: &[Vector]) -> Vec<f64> {
        estimates
            .iter()
            .enumerate()
            .map(|(k, x)| rmse(&self.eval.sample(&self.prepared.mesh, x), &self.truth.at_eval[k + 1]))
            .collect()
    }

    fn measurements(&self, run: usize) -> Result<Vec<Vector>> {
        let s = &self.prepared.scenario;
        sample_measurements(
            &self.truth.at_sensors,
            s.filter.measurement_std,
            s.monte_carlo.seed,
            run,
        )
    }
}

fn in_pool<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::invalid(format!("cannot build worker pool: {e}")))?;
    Ok(pool.install(f))
}

/// Monte Carlo loop over every variant plus the optional boost sweep.
pub fn run_experiment(scenario: &Scenario, opts: ExperimentOptions) -> Result<ExperimentResult> {
    let started = Instant::now();
    let prepared = Prepared::new(scenario)?;
    let truth = prepared.truth()?;
    let samples_truth = TruthSamples::new(&prepared, &truth)?;
    let runner = Runner::new(&prepared, &samples_truth)?;
    let mc = &scenario.monte_carlo;

    let result = in_pool(opts.threads, || -> Result<_> {
        let measurements: Vec<Vec<Vector>> = (0..mc.runs)
            .into_par_iter()
            .map(|run| runner.measurements(run))
            .collect::<Result<_>>()?;
        let mut variants = Vec::new();
        for variant in prepared.variants() {
            let schedule = runner.schedule(variant, scenario.filter.gamma)?;
            let runs: Vec<(Vec<f64>, Vec<(usize, Vector)>, Vec<TraceEntry>)> = (0..mc.runs)
                .into_par_iter()
                .map(|run| {
                    let (est, trace) =
                        runner.estimates(&schedule, &measurements[run], run == 0 && opts.trace_messages)?;
                    let snaps = if run == 0 {
                        mc.snapshots.iter().map(|&q| (q, est[q - 1].clone())).collect()
                    } else {
                        Vec::new()
                    };
                    Ok((runner.rmse_series(&est), snaps, trace))
                })
                .collect::<Result<_>>()?;
            let mut rmse = Vec::with_capacity(runs.len());
            let mut snapshots = Vec::new();
            let mut trace = Vec::new();
            for (k, (series, snaps, tr)) in runs.into_iter().enumerate() {
                rmse.push(series);
                if k == 0 {
                    snapshots = snaps;
                    trace = tr;
                }
            }
            variants.push(VariantResult {
                name: variant.name(),
                rmse,
                snapshots,
                trace,
            });
        }

        let mut sweep = Vec::new();
        for &rounds in &scenario.filter.rounds {
            for &gamma in &mc.gamma_sweep {
                let schedule = runner.schedule(Variant::Distributed { rounds }, gamma)?;
                let rmse: Vec<Vec<f64>> = (0..mc.runs)
                    .into_par_iter()
                    .map(|run| Ok(runner.rmse_series(&runner.estimates(&schedule, &measurements[run], false)?.0)))
                    .collect::<Result<_>>()?;
                let v = VariantResult {
                    name: String::new(),
                    rmse,
                    snapshots: Vec::new(),
                    trace: Vec::new(),
                };
                sweep.push(SweepPoint {
                    rounds,
                    gamma,
                    steady_mean: v.steady_mean(mc.steady_window),
                });
            }
        }
        Ok((variants, sweep))
    })??;

    let (variants, sweep) = result;
    Ok(ExperimentResult {
        scenario: scenario.clone(),
        config_hash: scenario.config_hash(),
        variants,
        sweep,
        truth_snapshots: mc.snapshots.iter().map(|&q| (q, truth.fields[q].clone())).collect(),
        truth_mesh: truth.mesh,
        mesh: prepared.mesh,
        wall_clock_seconds: started.elapsed().as_secs_f64(),
    })
}
