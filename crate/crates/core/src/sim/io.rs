//! CSV writers for run artifacts.

use std::path::Path;

use serde::Serialize;

use super::pipeline::Population;
use super::studies::OracleRow;
use crate::clustering::ClusterAssignment;
use crate::dirichlet::Estimate;
use crate::error::Result;

/// Writes serializable rows with a header taken from the field names.
pub fn write_rows<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn numbered(prefix: &str, n: usize) -> impl Iterator<Item = String> + '_ {
    (1..=n).map(move |j| format!("{prefix}_{j}"))
}

/// `user_id,n_1..n_C`
pub fn write_histograms(path: &Path, pop: &Population) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let c = pop.datasets.first().map_or(0, |d| d.num_classes());
    w.write_record(std::iter::once("user_id".to_string()).chain(numbered("n", c)))?;
    for (u, d) in pop.datasets.iter().enumerate() {
        w.write_record(std::iter::once(u.to_string()).chain(d.histogram().counts().iter().map(u64::to_string)))?;
    }
    w.flush()?;
    Ok(())
}

/// `user_id,alpha_1..alpha_C,converged,iterations`
pub fn write_alphas(path: &Path, estimates: &[Estimate]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    let c = estimates.first().map_or(0, |e| e.alpha.len());
    w.write_record(
        std::iter::once("user_id".to_string())
            .chain(numbered("alpha", c))
            .chain(["converged".to_string(), "iterations".to_string()]),
    )?;
    for (u, e) in estimates.iter().enumerate() {
        w.write_record(
            std::iter::once(u.to_string())
                .chain(e.alpha.as_slice().iter().map(f64::to_string))
                .chain([e.converged.to_string(), e.iterations.to_string()]),
        )?;
    }
    w.flush()?;
    Ok(())
}

#[derive(Serialize)]
struct ClusterRow {
    user_id: usize,
    cluster_id: usize,
}

/// `user_id,cluster_id`
pub fn write_clusters(path: &Path, a: &ClusterAssignment) -> Result<()> {
    let rows: Vec<ClusterRow> = a
        .labels()
        .iter()
        .enumerate()
        .map(|(user_id, &cluster_id)| ClusterRow { user_id, cluster_id })
        .collect();
    write_rows(path, &rows)
}

#[derive(Serialize)]
struct SpectrumRow {
    index: usize,
    eigenvalue: f64,
}

/// `index,eigenvalue`, ascending.
pub fn write_spectrum(path: &Path, spectrum: &[f64]) -> Result<()> {
    let rows: Vec<SpectrumRow> = spectrum
        .iter()
        .enumerate()
        .map(|(index, &eigenvalue)| SpectrumRow { index, eigenvalue })
        .collect();
    write_rows(path, &rows)
}

#[derive(Serialize)]
struct OracleCsv {
    instance: usize,
    kkt_energy: f64,
    oracle_energy: f64,
    relative_gap: f64,
}

/// `instance,kkt_energy,oracle_energy,relative_gap`
pub fn write_oracle(path: &Path, rows: &[OracleRow]) -> Result<()> {
    let rows: Vec<OracleCsv> = rows
        .iter()
        .map(|r| OracleCsv {
            instance: r.instance,
            kkt_energy: r.kkt_energy,
            oracle_energy: r.oracle_energy,
            relative_gap: r.relative_gap,
        })
        .collect();
    write_rows(path, &rows)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)?)?;
    Ok(())
}
