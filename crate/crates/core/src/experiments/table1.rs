use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::sweep::{run_sweep, LambdaMode, SweepAxis, SweepSpec};
use crate::error::{Error, Result};
use crate::hsi::format::write_atomic;
use crate::hsi::HsiCube;
use crate::real::Real;

/// Published overall accuracy (percent, mean and std) of the two ladder
/// variants, keyed by variant and labels per class.
pub const PUBLISHED_OA: [(&str, usize, f64, f64); 4] = [
    ("fc", 5, 71.2, 1.5),
    ("fc", 10, 77.4, 1.0),
    ("conv", 5, 88.92, 2.97),
    ("conv", 10, 93.13, 2.03),
];

pub fn published(variant: &str, n: usize) -> Option<(f64, f64)> {
    PUBLISHED_OA
        .iter()
        .find(|(v, k, ..)| *v == variant && *k == n)
        .map(|&(_, _, m, s)| (m, s))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Table1Row {
    pub variant: String,
    pub labels_per_class: usize,
    pub runs: usize,
    pub failed: usize,
    /// Percent.
    pub oa_mean: f64,
    pub oa_std: f64,
    pub published: Option<(f64, f64)>,
}

/// Runs one variant's configuration at each labels-per-class count over
/// `seeds`, writing `<variant>_runs.csv` into `out_dir`.
pub fn table1_protocol<T: Real>(
    variant: &str,
    config: &RunConfig,
    cube: &HsiCube,
    labels: &[usize],
    seeds: &[u64],
    workers: usize,
    out_dir: &Path,
) -> Result<Vec<Table1Row>> {
    if labels.is_empty() {
        return Err(Error::Config("table1 needs at least one labels-per-class count".into()));
    }
    let spec = SweepSpec {
        base: config.train.clone(),
        data: config.data.clone(),
        axis: SweepAxis::LabelsPerClass,
        values: labels.iter().map(|&n| n as f64).collect(),
        seeds: seeds.to_vec(),
        lambda_mode: LambdaMode::Top,
    };
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    let result = run_sweep::<T>(&spec, cube, Some(&out_dir.join(format!("{variant}_runs.csv"))), workers)?;
    Ok(result
        .aggregates
        .iter()
        .zip(labels)
        .map(|(a, &n)| Table1Row {
            variant: variant.to_string(),
            labels_per_class: n,
            runs: a.runs,
            failed: a.failed,
            oa_mean: 100.0 * a.oa_mean,
            oa_std: 100.0 * a.oa_std,
            published: published(variant, n),
        })
        .collect())
}

/// `variant,labels_per_class,runs,failed,oa_mean,oa_std,published_mean,published_std`.
pub fn write_table1(rows: &[Table1Row], path: &Path) -> Result<()> {
    let mut s = String::from("variant,labels_per_class,runs,failed,oa_mean,oa_std,published_mean,published_std\n");
    for r in rows {
        let (pm, ps) = r
            .published
            .map_or((String::new(), String::new()), |(m, s)| (m.to_string(), s.to_string()));
        s.push_str(&format!(
            "{},{},{},{},{:.2},{:.2},{pm},{ps}\n",
            r.variant, r.labels_per_class, r.runs, r.failed, r.oa_mean, r.oa_std
        ));
    }
    write_atomic(path, s.as_bytes())
}
