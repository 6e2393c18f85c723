use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{svg, ErrorStats};
use crate::error::{Result, SdeError};
use crate::stepper::Trajectory;

/// One line of `stats.csv`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatsRow {
    pub method: String,
    #[serde(rename = "N")]
    pub n: usize,
    pub mean_steps: f64,
    pub sigma_steps: f64,
    #[serde(rename = "E2")]
    pub e2: f64,
    #[serde(rename = "sigma_E")]
    pub sigma_e: f64,
    pub samples: usize,
    pub failures: usize,
}

impl From<&ErrorStats> for StatsRow {
    fn from(s: &ErrorStats) -> Self {
        Self {
            method: s.method.name().to_string(),
            n: s.n,
            mean_steps: s.mean_steps,
            sigma_steps: s.sigma_steps,
            e2: s.e2,
            sigma_e: s.sigma,
            samples: s.samples(),
            failures: s.failures,
        }
    }
}

#[derive(Serialize)]
struct ScatterRow {
    method: &'static str,
    #[serde(rename = "N")]
    n: usize,
    sample_id: u64,
    steps: usize,
    #[serde(rename = "E")]
    e: f64,
}

#[derive(Serialize)]
struct StepsRow {
    method: &'static str,
    #[serde(rename = "N")]
    n: usize,
    mean_steps: f64,
    sigma_steps: f64,
}

fn csv_error(path: &Path) -> impl Fn(csv::Error) -> SdeError + '_ {
    move |source| SdeError::Csv {
        path: path.to_path_buf(),
        source,
    }
}

fn io_error(path: &Path) -> impl Fn(std::io::Error) -> SdeError + '_ {
    move |source| SdeError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn write_rows<T: Serialize>(path: &Path, header: &[&str], rows: impl Iterator<Item = T>) -> Result<()> {
    let mut w = csv::WriterBuilder::new()
        .has_headers(false)
        .from_path(path)
        .map_err(csv_error(path))?;
    w.write_record(header).map_err(csv_error(path))?;
    for row in rows {
        w.serialize(row).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}

/// Writes `stats.csv`, `scatter.csv`, `steps.csv` and, when `charts` is set,
/// `e2.svg` and `sigma.svg` into `dir`. Returns the written paths.
pub fn emit_outputs(results: &[ErrorStats], dir: &Path, charts: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(io_error(dir))?;
    let stats_path = dir.join("stats.csv");
    write_rows(
        &stats_path,
        &["method", "N", "mean_steps", "sigma_steps", "E2", "sigma_E", "samples", "failures"],
        results.iter().map(StatsRow::from),
    )?;
    let scatter_path = dir.join("scatter.csv");
    write_rows(
        &scatter_path,
        &["method", "N", "sample_id", "steps", "E"],
        results.iter().flat_map(|s| {
            s.sample_ids.iter().zip(&s.steps).zip(&s.e_values).map(|((id, st), e)| ScatterRow {
                method: s.method.name(),
                n: s.n,
                sample_id: *id,
                steps: *st,
                e: *e,
            })
        }),
    )?;
    let steps_path = dir.join("steps.csv");
    write_rows(
        &steps_path,
        &["method", "N", "mean_steps", "sigma_steps"],
        results.iter().map(|s| StepsRow {
            method: s.method.name(),
            n: s.n,
            mean_steps: s.mean_steps,
            sigma_steps: s.sigma_steps,
        }),
    )?;
    let mut written = vec![stats_path, scatter_path, steps_path];
    if charts {
        for (name, title, pick) in [
            ("e2.svg", "E2 against mean steps", (|s: &ErrorStats| s.e2) as fn(&ErrorStats) -> f64),
            ("sigma.svg", "sigma(E) against mean steps", |s: &ErrorStats| s.sigma),
        ] {
            let path = dir.join(name);
            fs::write(&path, svg::loglog_chart(title, results, pick)).map_err(io_error(&path))?;
            written.push(path);
        }
    }
    Ok(written)
}

pub fn read_stats_csv(path: &Path) -> Result<Vec<StatsRow>> {
    let mut r = csv::Reader::from_path(path).map_err(csv_error(path))?;
    r.deserialize().collect::<std::result::Result<_, _>>().map_err(csv_error(path))
}

/// `t,W_1..W_m,y_1..y_d`, one row per partition time.
pub fn write_trajectory_csv(path: &Path, traj: &Trajectory<f64>) -> Result<()> {
    let record = traj.record();
    let d = traj.states().first().map_or(0, Vec::len);
    let mut header = vec!["t".to_string()];
    header.extend((1..=record.m()).map(|j| format!("W_{j}")));
    header.extend((1..=d).map(|i| format!("y_{i}")));
    let mut w = csv::Writer::from_path(path).map_err(csv_error(path))?;
    w.write_record(&header).map_err(csv_error(path))?;
    for ((t, wv), y) in record.times().iter().zip(record.cumulative()).zip(traj.states()) {
        let row: Vec<String> = std::iter::once(*t)
            .chain(wv.iter().copied())
            .chain(y.iter().copied())
            .map(|v| v.to_string())
            .collect();
        w.write_record(&row).map_err(csv_error(path))?;
    }
    w.flush().map_err(io_error(path))
}
