use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::Path;

use super::experiment::ExperimentResult;
use crate::error::Result;
use crate::linalg::Vector;
use crate::mesh::Mesh;

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

/// `vertex,x,y,value` for every vertex of `mesh`.
pub fn write_field_csv(mesh: &Mesh, field: &Vector, mut w: impl Write) -> Result<()> {
    writeln!(w, "vertex,x,y,value")?;
    for (v, p) in mesh.vertices.iter().enumerate() {
        writeln!(w, "{v},{},{},{}", p[0], p[1], field[v])?;
    }
    Ok(())
}

/// Writes every CSV of an experiment under `dir`. Floats use the shortest
/// round-trip representation, so equal results give identical bytes.
pub fn write_outputs(result: &ExperimentResult, dir: &Path, with_trace: bool) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mc = &result.scenario.monte_carlo;

    let mut w = create(&dir.join("rmse.csv"))?;
    writeln!(w, "variant,run,sample,rmse")?;
    for v in &result.variants {
        for (run, series) in v.rmse.iter().enumerate() {
            for (k, e) in series.iter().enumerate() {
                writeln!(w, "{},{run},{},{e}", v.name, k + 1)?;
            }
        }
    }
    w.flush()?;

    let mut w = create(&dir.join("mean_rmse.csv"))?;
    writeln!(w, "variant,sample,mean_rmse")?;
    for v in &result.variants {
        for (k, e) in v.mean().iter().enumerate() {
            writeln!(w, "{},{},{e}", v.name, k + 1)?;
        }
    }
    w.flush()?;

    let mut w = create(&dir.join("summary.csv"))?;
    writeln!(
        w,
        "variant,runs,final_mean_rmse,steady_mean_rmse,steady_std_error,seed,config_hash"
    )?;
    for v in &result.variants {
        let mean = v.mean();
        writeln!(
            w,
            "{},{},{},{},{},{},{}",
            v.name,
            v.rmse.len(),
            mean.last().copied().unwrap_or(f64::NAN),
            v.steady_mean(mc.steady_window),
            v.steady_std_error(mc.steady_window),
            mc.seed,
            result.config_hash
        )?;
    }
    w.flush()?;

    if !result.sweep.is_empty() {
        let mut w = create(&dir.join("gamma_sweep.csv"))?;
        writeln!(w, "rounds,gamma,steady_mean_rmse")?;
        for p in &result.sweep {
            writeln!(w, "{},{},{}", p.rounds, p.gamma, p.steady_mean)?;
        }
        w.flush()?;
    }

    for v in &result.variants {
        for (q, field) in &v.snapshots {
            let mut w = create(&dir.join(&v.name).join(format!("field_q{q}.csv")))?;
            write_field_csv(&result.mesh, field, &mut w)?;
            w.flush()?;
        }
    }
    for (q, field) in &result.truth_snapshots {
        let mut w = create(&dir.join("truth").join(format!("field_q{q}.csv")))?;
        write_field_csv(&result.truth_mesh, field, &mut w)?;
        w.flush()?;
    }

    if with_trace {
        let mut w = create(&dir.join("messages.csv"))?;
        writeln!(w, "variant,round,sender,receiver,payload")?;
        for v in &result.variants {
            for t in &v.trace {
                writeln!(w, "{},{},{},{},{}", v.name, t.round, t.sender, t.receiver, t.payload)?;
            }
        }
        w.flush()?;
    }

    let mut w = create(&dir.join("config.toml"))?;
    w.write_all(result.scenario.to_toml().as_bytes())?;
    w.flush()?;
    Ok(())
}
