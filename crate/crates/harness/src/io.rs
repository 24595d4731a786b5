//! CSV readers and writers.
//!
//! Schemas:
//! - dataset: `x_1..x_d, y[, z]`
//! - trajectory: `iter, loss, metric, param_distance, gating_metric`
//! - experiment rows: `iter, method, setting, seed, loss, E_reg, E_gating, param_distance`
//! - aggregate: `iter, method, setting, seeds, E_reg_mean, E_reg_min, E_reg_max, E_gating_mean, E_gating_min, E_gating_max`
//!
//! Missing values are written as empty fields.

use std::path::Path;

use ndarray::{Array1, Array2};

use moe_core::optim::Trajectory;
use moe_core::Dataset;

use crate::experiment::{AggRow, Stats, TrajRow};
use crate::{HarnessError, Result};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

pub fn write_dataset(path: &Path, data: &Dataset) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let d = data.dim();
    let mut header: Vec<String> = (1..=d).map(|i| format!("x_{i}")).collect();
    header.push("y".into());
    if data.latents.is_some() {
        header.push("z".into());
    }
    w.write_record(&header)?;
    for n in 0..data.len() {
        let mut rec: Vec<String> = data.x(n).iter().map(|v| v.to_string()).collect();
        rec.push(data.y(n).to_string());
        if let Some(z) = &data.latents {
            rec.push(z[n].to_string());
        }
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    let mut r = csv::Reader::from_path(path)?;
    let header = r.headers()?.clone();
    let names: Vec<&str> = header.iter().map(str::trim).collect();
    let d = names.iter().take_while(|h| h.starts_with("x_")).count();
    let has_z = match &names[d..] {
        ["y"] => false,
        ["y", "z"] => true,
        _ => return Err(HarnessError::Config(format!("{}: expected columns x_1..x_d, y[, z]", path.display()))),
    };
    if d == 0 {
        return Err(HarnessError::Config(format!("{}: no input columns", path.display())));
    }
    let bad = |line: usize, field: &str| HarnessError::Config(format!("{}:{line}: bad number '{field}'", path.display()));
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut zs = Vec::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let line = i + 2;
        for f in rec.iter().take(d) {
            xs.push(f.trim().parse::<f64>().map_err(|_| bad(line, f))?);
        }
        let y = &rec[d];
        ys.push(y.trim().parse::<f64>().map_err(|_| bad(line, y))?);
        if has_z {
            let z = &rec[d + 1];
            zs.push(z.trim().parse::<usize>().map_err(|_| bad(line, z))?);
        }
    }
    let n = ys.len();
    let inputs = Array2::from_shape_vec((n, d), xs).map_err(|e| HarnessError::Config(e.to_string()))?;
    Ok(Dataset::new(inputs, Array1::from(ys), has_z.then_some(zs))?)
}

pub fn write_trajectory(path: &Path, traj: &Trajectory) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "loss", "metric", "param_distance", "gating_metric"])?;
    for r in &traj.records {
        w.write_record([r.iter.to_string(), r.loss.to_string(), opt(r.metric), opt(r.param_distance), opt(r.gating_metric)])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_result_rows(path: &Path, rows: &[TrajRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["iter", "method", "setting", "seed", "loss", "E_reg", "E_gating", "param_distance"])?;
    for r in rows {
        w.write_record([
            r.iter.to_string(),
            r.method.clone(),
            r.setting.clone(),
            r.seed.to_string(),
            r.loss.to_string(),
            opt(r.e_reg),
            opt(r.e_gating),
            opt(r.param_distance),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_aggregates(path: &Path, rows: &[AggRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record([
        "iter",
        "method",
        "setting",
        "seeds",
        "E_reg_mean",
        "E_reg_min",
        "E_reg_max",
        "E_gating_mean",
        "E_gating_min",
        "E_gating_max",
    ])?;
    let split = |s: Option<Stats>| match s {
        Some(s) => [s.mean.to_string(), s.min.to_string(), s.max.to_string()],
        None => Default::default(),
    };
    for r in rows {
        let mut rec = vec![r.iter.to_string(), r.method.clone(), r.setting.clone(), r.seeds.to_string()];
        rec.extend(split(r.e_reg));
        rec.extend(split(r.e_gating));
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
