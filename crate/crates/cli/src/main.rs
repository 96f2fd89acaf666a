use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use fekf::decomposition::build_augmented;
use fekf::harness::{
    run_experiment, schwarz_check, single_node_oracle, write_outputs, ExperimentOptions, Prepared, Scenario,
};
use fekf::linalg::csr_nnz;
use fekf::mesh::{refine_uniform, write_mesh};
use fekf::model::coupling_matrices;
use fekf::Error;

#[derive(Parser)]
#[command(
    name = "fekf",
    version,
    about = "Finite-element Kalman filtering of 2-D diffusion fields"
)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Preset name (scenario1, scenario2) or path to a scenario TOML file.
    #[arg(long, global = true, default_value = "scenario1")]
    config: String,
    /// Overrides the Monte Carlo seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output file or directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    threads: usize,
    /// Write the consensus message log of the first run.
    #[arg(long, global = true)]
    trace_messages: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the filter mesh (optionally refined) in the text mesh format.
    Mesh {
        /// Target longest edge; defaults to the scenario value.
        #[arg(long)]
        edge: Option<f64>,
        /// Uniform refinements applied after generation.
        #[arg(long, default_value_t = 0)]
        refine: usize,
    },
    /// Print the decomposition and the sparsity of the coupling blocks.
    Decompose,
    /// Stability analysis for each configured round count.
    Stability {
        /// Round counts to analyze; defaults to the scenario list.
        #[arg(long, value_delimiter = ',')]
        rounds: Vec<usize>,
        /// Total covariance boost; defaults to the scenario value.
        #[arg(long)]
        gamma: Option<f64>,
    },
    /// Monte Carlo experiment writing CSV results.
    Run {
        /// Also run the covariance-boost sweep.
        #[arg(long)]
        gamma_sweep: bool,
        /// Overrides the number of Monte Carlo runs.
        #[arg(long)]
        runs: Option<usize>,
        /// Truncates the experiment to this many samples.
        #[arg(long)]
        samples: Option<usize>,
    },
    /// Centralized-versus-distributed equivalence checks.
    Compare {
        /// Truth sample from which the one-cycle predictions start.
        #[arg(long, default_value_t = 10)]
        start_sample: usize,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(code) => code,
        Err(e @ Error::InvalidConfig { .. }) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}

fn load(common: &Common) -> Result<Scenario, Error> {
    let mut s = Scenario::load(&common.config)?;
    if let Some(seed) = common.seed {
        s.monte_carlo.seed = seed;
    }
    Ok(s)
}

fn output(path: Option<&Path>) -> Result<Box<dyn Write>, Error> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(BufWriter::new(io::stdout())),
    })
}

fn run(cli: Cli) -> Result<ExitCode, Error> {
    let common = &cli.common;
    let mut scenario = load(common)?;
    match cli.command {
        Command::Mesh { edge, refine } => {
            if let Some(e) = edge {
                scenario.domain.edge = e;
            }
            let mut mesh = scenario.filter_mesh()?;
            for _ in 0..refine {
                mesh = refine_uniform(&mesh)?;
            }
            let mut w = output(common.out.as_deref())?;
            write_mesh(&mesh, &mut w)?;
            w.flush()?;
            eprintln!("{} vertices, {} triangles", mesh.vertex_count(), mesh.triangle_count());
        }
        Command::Decompose => {
            let prepared = Prepared::new(&scenario)?;
            let dec = &prepared.dec;
            let aug = build_augmented(&prepared.system.mass, &prepared.system.stiffness, dec);
            let mut w = output(common.out.as_deref())?;
            write!(w, "{}", dec.dump())?;
            let (nf, nd) = (csr_nnz(&aug.stiffness_coupling), csr_nnz(&aug.stiffness_diag));
            writeln!(w, "nnz_stiffness_diag = {nd}")?;
            writeln!(w, "nnz_stiffness_coupling = {nf}")?;
            writeln!(w, "coupling_ratio = {}", nf as f64 / nd as f64)?;
            for (models, l) in prepared.local.iter().zip(&scenario.filter.rounds) {
                let rm = coupling_matrices(models, dec);
                let entries = |m: &fekf::linalg::Matrix| {
                    let mut v = Vec::new();
                    for c in 0..m.ncols() {
                        for r in 0..m.nrows() {
                            if m[(r, c)] != 0.0 {
                                v.push((r, c));
                            }
                        }
                    }
                    v
                };
                let bad = dec.interface_support_violations(entries(&rm.current))
                    + dec.interface_support_violations(entries(&rm.delayed));
                writeln!(w, "support_violations_L{l} = {bad}")?;
            }
            for (m, s) in prepared.node_sensors.iter().enumerate() {
                writeln!(w, "sensors_node{m} = {}", s.sensors.len())?;
            }
            w.flush()?;
        }
        Command::Stability { rounds, gamma } => {
            let prepared = Prepared::new(&scenario)?;
            let rounds = if rounds.is_empty() {
                scenario.filter.rounds.clone()
            } else {
                rounds
            };
            let gamma = gamma.unwrap_or(scenario.filter.gamma);
            let mut w = output(common.out.as_deref())?;
            let mut ok = true;
            for l in rounds {
                if l == 0 {
                    return Err(Error::InvalidArgument("rounds must be positive".into()));
                }
                let prepared_l;
                let p = if scenario.filter.rounds.contains(&l) {
                    &prepared
                } else {
                    let mut s = scenario.clone();
                    s.filter.rounds = vec![l];
                    prepared_l = Prepared::new(&s)?;
                    &prepared_l
                };
                let report = p.stability(l, gamma)?;
                writeln!(w, "[L{l}]")?;
                report.write_text(&mut w)?;
                ok &= report.passes();
            }
            w.flush()?;
            if !ok {
                return Ok(ExitCode::FAILURE);
            }
        }
        Command::Run {
            gamma_sweep,
            runs,
            samples,
        } => {
            if let Some(r) = runs {
                scenario.monte_carlo.runs = r;
            }
            if let Some(q) = samples {
                scenario.sampling.samples = q;
                scenario.monte_carlo.steady_window = scenario.monte_carlo.steady_window.min(q);
                scenario.monte_carlo.snapshots.retain(|&k| k <= q);
                scenario.boundary.iter_mut().for_each(|e| {
                    e.to = e.to.map(|t| t.min(q));
                });
                scenario.boundary.retain(|e| e.from < q);
            }
            if !gamma_sweep {
                scenario.monte_carlo.gamma_sweep.clear();
            }
            let scenario = Scenario::from_toml_str(&scenario.to_toml())?;
            let out = common
                .out
                .clone()
                .unwrap_or_else(|| PathBuf::from("results").join(&scenario.name));
            let result = run_experiment(
                &scenario,
                ExperimentOptions {
                    threads: common.threads,
                    trace_messages: common.trace_messages,
                },
            )?;
            write_outputs(&result, &out, common.trace_messages)?;
            let window = scenario.monte_carlo.steady_window;
            println!("variant,final_mean_rmse,steady_mean_rmse");
            for v in &result.variants {
                println!(
                    "{},{:.4},{:.4}",
                    v.name,
                    v.mean().last().copied().unwrap_or(f64::NAN),
                    v.steady_mean(window)
                );
            }
            eprintln!("wrote {} in {:.1} s", out.display(), result.wall_clock_seconds);
        }
        Command::Compare { start_sample } => {
            let mut w = output(common.out.as_deref())?;
            let oracle = single_node_oracle(0.16, 50, 10, scenario.monte_carlo.seed)?;
            writeln!(w, "oracle_vertices = {}", oracle.vertices)?;
            writeln!(w, "oracle_samples = {}", oracle.samples)?;
            writeln!(w, "oracle_max_abs_diff = {:.3e}", oracle.max_abs_diff)?;
            let prepared = Prepared::new(&scenario)?;
            let mut short = scenario.clone();
            short.sampling.samples = start_sample.max(1);
            short.boundary.retain(|e| e.from < short.sampling.samples);
            let truth = fekf::harness::simulate_truth(&short, &fekf::harness::truth_mesh(&short, &prepared.mesh)?)?;
            for p in schwarz_check(&prepared, &truth, start_sample.min(short.sampling.samples))? {
                writeln!(w, "schwarz_L{}_disagreement = {:.6e}", p.rounds, p.disagreement)?;
                writeln!(w, "schwarz_L{}_relative_error = {:.6e}", p.rounds, p.relative_error)?;
            }
            w.flush()?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
