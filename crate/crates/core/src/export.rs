//! CSV writers for field dumps, traces and batch results.
//!
//! Floats are written with Rust's shortest round-trip representation, so
//! parsing a value back yields the identical `f64`.

use std::io::{self, Write};

use crate::eval::{EvalGrid, RunRecord, Summary};
use crate::field::{probability_from_value, FieldModel};

fn opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

/// `x,y,phi,prob` over the grid.
pub fn write_field<W: Write>(out: &mut W, model: &FieldModel, noise_std: f64, threshold: f64, grid: &EvalGrid) -> io::Result<()> {
    writeln!(out, "x,y,phi,prob")?;
    for x in grid.points() {
        let phi = model.value(x);
        writeln!(out, "{},{},{},{}", x.x, x.y, phi, probability_from_value(phi, noise_std, threshold))?;
    }
    Ok(())
}

/// `k,beta_1..beta_p,grad_norm,hess_min_eig,damped`; row `k` holds the
/// estimate after `k` measurements.
pub fn write_trace<W: Write>(out: &mut W, record: &RunRecord) -> io::Result<()> {
    let p = record.estimate.p();
    let betas: Vec<String> = (1..=p).map(|i| format!("beta_{i}")).collect();
    writeln!(out, "k,{},grad_norm,hess_min_eig,damped", betas.join(","))?;
    for row in &record.trace {
        let beta: Vec<String> = row.beta.iter().map(f64::to_string).collect();
        writeln!(out, "{},{},{},{},{}", row.k, beta.join(","), opt(row.grad_norm), opt(row.hess_min_eig), row.damped)?;
    }
    Ok(())
}

/// `k,x,y,target_x,target_y,lambda_min`.
pub fn write_waypoints<W: Write>(out: &mut W, record: &RunRecord) -> io::Result<()> {
    writeln!(out, "k,x,y,target_x,target_y,lambda_min")?;
    for w in &record.waypoints {
        writeln!(out, "{},{},{},{},{},{}", w.k, w.position.x, w.position.y, w.target.x, w.target.y, w.lambda_min)?;
    }
    Ok(())
}

/// Per-step MSE rows `scenario_id,k,mse`.
pub fn write_mse_header<W: Write>(out: &mut W) -> io::Result<()> {
    writeln!(out, "scenario_id,k,mse")
}

pub fn write_mse_rows<W: Write>(out: &mut W, record: &RunRecord) -> io::Result<()> {
    for (k, mse) in record.mse_trace.iter().enumerate() {
        writeln!(out, "{},{},{}", record.scenario_id, k, mse)?;
    }
    Ok(())
}

/// `scenario_id,seed,estimator,final_mse,time_s,aborted`. When
/// `with_timing` is false the time column is written as `0` so the file is
/// reproducible byte-for-byte.
pub fn write_results<W: Write>(out: &mut W, records: &[RunRecord], with_timing: bool) -> io::Result<()> {
    writeln!(out, "scenario_id,seed,estimator,final_mse,time_s,aborted")?;
    for r in records {
        let time = if with_timing { r.wall_time_s } else { 0.0 };
        writeln!(out, "{},{},{},{},{},{}", r.scenario_id, r.seed, r.estimator, r.final_mse, time, r.is_aborted())?;
    }
    Ok(())
}

/// `estimator,q1,median,q3,whisker_lo,whisker_hi,outliers...`; outliers
/// follow as extra columns.
pub fn write_boxplot<W: Write>(out: &mut W, rows: &[(String, Summary)]) -> io::Result<()> {
    writeln!(out, "estimator,q1,median,q3,whisker_lo,whisker_hi,outliers...")?;
    for (name, s) in rows {
        write!(out, "{},{},{},{},{},{}", name, s.q1, s.median, s.q3, s.whisker_lo, s.whisker_hi)?;
        for o in &s.outliers {
            write!(out, ",{o}")?;
        }
        writeln!(out)?;
    }
    Ok(())
}
