//! On-disk artifacts: the time-series CSV, its schema and JSON summaries.

use std::fs;
use std::path::Path;

use bfd_core::functionals::level_set_positive;
use bfd_core::integrator::TimeSeries;
use serde::Serialize;

use crate::error::{io_at, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Column {
    pub name: String,
    pub description: String,
}

fn col(name: impl Into<String>, description: impl Into<String>) -> Column {
    Column { name: name.into(), description: description.into() }
}

/// Columns of `timeseries.csv` for the given moment orders, extra
/// production exponents and levels.
pub fn columns(moments: &[f64], etas: &[f64], levels: &[f64]) -> Vec<Column> {
    let mut c = vec![
        col("t", "time"),
        col("mass", "int f"),
        col("momentum_x", "int f v_x"),
        col("momentum_y", "int f v_y"),
        col("momentum_z", "int f v_z"),
        col("energy", "int f |v|^2"),
    ];
    for s in moments {
        c.push(col(format!("m_{s}"), format!("moment int f <v>^{s}")));
    }
    c.extend([
        col("M_0", "int f^2"),
        col("S_eps", "entropy S_eps(f)"),
        col("H", "Boltzmann H functional int f ln f"),
        col("H_rel", "relative entropy H_eps(f | M_eps) against the reference statistics (empty if none)"),
        col("L1_dist", "||f - M_eps||_{L^1} (empty if no reference)"),
        col("ck_lower", "Csiszar-Kullback left side (empty if no reference)"),
        col("ck_middle", "Csiszar-Kullback middle term (empty if no reference)"),
        col("ck_upper", "Csiszar-Kullback right side (empty if no reference)"),
        col("D_gamma", "entropy production D_eps^(gamma)"),
    ]);
    for e in etas {
        c.push(col(format!("D_eta_{e}"), format!("entropy production D_eps^({e})")));
    }
    c.extend([
        col("int_D", "int_0^t D_eps^(gamma), trapezoidal"),
        col("int_rate", "int_0^t <ln((1 - eps f) / f), Q_h(f)>, the scheme's own entropy rate, trapezoidal"),
    ]);
    for k in levels {
        c.push(col(format!("level_{k}"), format!("int (f - {k})^+")));
    }
    c.extend([
        col("max_f", "max_i f_i"),
        col("kappa0", "1 - eps max_i f_i"),
        col("dt", "last accepted step (0 at the initial time)"),
        col("steps", "accepted steps so far"),
    ]);
    c
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(String::new, num)
}

/// Writes `timeseries.csv` and `timeseries.schema.json` into `dir`.
pub fn write_timeseries(dir: &Path, series: &TimeSeries, etas: &[f64], levels: &[f64]) -> Result<()> {
    let moments: Vec<f64> = series.records.first().map_or_else(Vec::new, |r| r.moments.iter().map(|m| m.0).collect());
    let cols = columns(&moments, etas, levels);
    let path = dir.join("timeseries.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(cols.iter().map(|c| c.name.as_str()))?;
    for (k, r) in series.records.iter().enumerate() {
        let mut row = vec![num(r.t), num(r.mass), num(r.momentum[0]), num(r.momentum[1]), num(r.momentum[2]), num(r.energy)];
        row.extend(r.moments.iter().map(|m| num(m.1)));
        row.extend([
            num(r.big_m0),
            num(r.s_eps),
            num(r.h),
            opt(r.h_rel),
            opt(r.l1_dist),
            opt(r.ck.map(|c| c.lhs)),
            opt(r.ck.map(|c| c.mid)),
            opt(r.ck.map(|c| c.rhs)),
            num(r.d_gamma),
        ]);
        row.extend(r.d_eta.iter().map(|d| num(d.1)));
        row.extend([num(r.d_integral), num(r.rate_integral)]);
        for &level in levels {
            let state = &series.states[k];
            let plus = level_set_positive(state, level)?;
            row.push(num(state.grid().integrate(&plus)?));
        }
        row.extend([num(r.max_f), num(r.kappa0), num(r.dt), r.steps.to_string()]);
        debug_assert_eq!(row.len(), cols.len());
        w.write_record(&row)?;
    }
    w.flush().map_err(io_at(&path))?;
    #[derive(Serialize)]
    struct Schema<'a> {
        file: &'a str,
        column_count: usize,
        columns: &'a [Column],
    }
    write_json(&dir.join("timeseries.schema.json"), &Schema { file: "timeseries.csv", column_count: cols.len(), columns: &cols })
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(io_at(path))
}

pub fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(io_at(dir))
}
