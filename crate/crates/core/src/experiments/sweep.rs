use std::collections::BTreeMap;
use std::fs::OpenOptions;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::hsi::format::write_atomic;
use crate::hsi::{prepare, DataConfig, HsiCube};
use crate::par;
use crate::real::Real;
use crate::train::{train, TrainConfig, TrainReport};

/// Per-level λ used when sweeping the noise level.
pub const NOISE_SWEEP_LAMBDA: f64 = 0.1;
/// Noise level used when sweeping reconstruction weights.
pub const LAMBDA_SWEEP_NOISE: f64 = 0.5;

pub const CSV_HEADER: [&str; 9] = [
    "axis", "value", "seed", "status", "oa", "aa", "c_super", "c_recon", "seconds",
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepAxis {
    LabelsPerClass,
    NoiseStd,
    TopLambda,
    PcaComponents,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            SweepAxis::LabelsPerClass => "labels_per_class",
            SweepAxis::NoiseStd => "noise_std",
            SweepAxis::TopLambda => "top_lambda",
            SweepAxis::PcaComponents => "pca_components",
        }
    }

    fn is_integer(self) -> bool {
        matches!(self, SweepAxis::LabelsPerClass | SweepAxis::PcaComponents)
    }

    /// Canonical text of an axis value, used in the CSV and to match
    /// cells on resume.
    pub fn format_value(self, v: f64) -> String {
        if self.is_integer() {
            format!("{}", v as i64)
        } else {
            format!("{v}")
        }
    }
}

/// How the `top_lambda` axis maps onto the λ vector.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum LambdaMode {
    /// Replace only the top level's λ.
    #[default]
    Top,
    /// Use the value at every level.
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepSpec {
    pub base: TrainConfig,
    pub data: DataConfig,
    pub axis: SweepAxis,
    pub values: Vec<f64>,
    pub seeds: Vec<u64>,
    pub lambda_mode: LambdaMode,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.values.is_empty() || self.seeds.is_empty() {
            return Err(Error::Config("sweep needs at least one value and one seed".into()));
        }
        let mut seen = BTreeMap::new();
        for &v in &self.values {
            let ok = match self.axis {
                SweepAxis::LabelsPerClass | SweepAxis::PcaComponents => v.fract() == 0.0 && v >= 1.0,
                SweepAxis::NoiseStd | SweepAxis::TopLambda => v.is_finite() && v >= 0.0,
            };
            if !ok {
                return Err(Error::Config(format!("invalid {} value {v}", self.axis.name())));
            }
            if seen.insert(self.axis.format_value(v), ()).is_some() {
                return Err(Error::Config(format!("duplicate sweep value {v}")));
            }
        }
        let mut seeds = self.seeds.clone();
        seeds.sort_unstable();
        seeds.dedup();
        if seeds.len() != self.seeds.len() {
            return Err(Error::Config("duplicate sweep seed".into()));
        }
        Ok(())
    }

    /// Training and data settings of one cell, with the axis applied and
    /// the fixed-axis protocol enforced.
    pub fn cell(&self, value: f64, seed: u64, bands: usize) -> Result<(TrainConfig, DataConfig)> {
        let mut cfg = self.base.clone();
        let mut data = self.data.clone();
        cfg.seed = seed;
        let levels = cfg.ladder.lambdas.len();
        match self.axis {
            SweepAxis::LabelsPerClass => data.labels_per_class = Some(value as usize),
            SweepAxis::PcaComponents => data.pca_components = Some(value as usize),
            SweepAxis::NoiseStd => {
                cfg.ladder.noise_std = value;
                cfg.ladder.lambdas = vec![NOISE_SWEEP_LAMBDA; levels];
            }
            SweepAxis::TopLambda => {
                cfg.ladder.noise_std = LAMBDA_SWEEP_NOISE;
                match self.lambda_mode {
                    LambdaMode::Top => cfg.ladder.lambdas[levels - 1] = value,
                    LambdaMode::Uniform => cfg.ladder.lambdas = vec![value; levels],
                }
            }
        }
        match self.axis {
            SweepAxis::NoiseStd => assert!(cfg.ladder.lambdas.iter().all(|&l| l == NOISE_SWEEP_LAMBDA)),
            SweepAxis::TopLambda => assert_eq!(cfg.ladder.noise_std, LAMBDA_SWEEP_NOISE),
            _ => {}
        }
        cfg.ladder.input_shape = data.sample_shape(bands);
        cfg.validate()?;
        Ok((cfg, data))
    }
}

/// One `(value, seed)` cell of a sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub axis: String,
    pub value: String,
    pub seed: u64,
    /// `ok`, or `error: ...` for a failed run.
    pub status: String,
    pub oa: Option<f64>,
    pub aa: Option<f64>,
    pub c_super: Option<f64>,
    pub c_recon: Option<f64>,
    pub seconds: f64,
}

impl SweepRow {
    pub fn is_ok(&self) -> bool {
        self.status == "ok"
    }

    fn from_report(axis: SweepAxis, value: f64, seed: u64, r: &TrainReport, seconds: f64) -> Self {
        let last = r.final_losses();
        SweepRow {
            axis: axis.name().into(),
            value: axis.format_value(value),
            seed,
            status: "ok".into(),
            oa: Some(r.metrics.oa),
            aa: Some(r.metrics.aa),
            c_super: Some(last.c_super),
            c_recon: Some(last.c_recon),
            seconds,
        }
    }

    fn failed(axis: SweepAxis, value: f64, seed: u64, msg: &str, seconds: f64) -> Self {
        SweepRow {
            axis: axis.name().into(),
            value: axis.format_value(value),
            seed,
            status: format!("error: {msg}"),
            oa: None,
            aa: None,
            c_super: None,
            c_recon: None,
            seconds,
        }
    }

    fn record(&self) -> Vec<String> {
        let opt = |v: Option<f64>| v.map_or(String::new(), |x| x.to_string());
        vec![
            self.axis.clone(),
            self.value.clone(),
            self.seed.to_string(),
            self.status.clone(),
            opt(self.oa),
            opt(self.aa),
            opt(self.c_super),
            opt(self.c_recon),
            format!("{:.3}", self.seconds),
        ]
    }
}

/// Mean and sample standard deviation of the successful runs at one value.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub value: String,
    pub runs: usize,
    pub failed: usize,
    pub oa_mean: f64,
    pub oa_std: f64,
    pub aa_mean: f64,
    pub aa_std: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepResult {
    pub rows: Vec<SweepRow>,
    pub aggregates: Vec<Aggregate>,
}

/// Mean and sample (n − 1) standard deviation; the deviation of a single
/// value is 0 and of no values NaN.
pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() == 1 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// One aggregate per distinct value, in first-appearance order.
pub fn aggregate(rows: &[SweepRow]) -> Vec<Aggregate> {
    let mut order: Vec<&str> = Vec::new();
    for r in rows {
        if !order.contains(&r.value.as_str()) {
            order.push(&r.value);
        }
    }
    order
        .into_iter()
        .map(|v| {
            let at: Vec<&SweepRow> = rows.iter().filter(|r| r.value == v).collect();
            let ok: Vec<&&SweepRow> = at.iter().filter(|r| r.is_ok()).collect();
            let oa: Vec<f64> = ok.iter().filter_map(|r| r.oa).collect();
            let aa: Vec<f64> = ok.iter().filter_map(|r| r.aa).collect();
            let (oa_mean, oa_std) = mean_std(&oa);
            let (aa_mean, aa_std) = mean_std(&aa);
            Aggregate {
                value: v.to_string(),
                runs: ok.len(),
                failed: at.len() - ok.len(),
                oa_mean,
                oa_std,
                aa_mean,
                aa_std,
            }
        })
        .collect()
}

fn csv_err(path: &Path, e: impl std::fmt::Display) -> Error {
    Error::format(path, e.to_string())
}

/// Reads a sweep CSV written by [`run_sweep`].
pub fn read_rows(path: &Path) -> Result<Vec<SweepRow>> {
    let mut rd = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header: Vec<String> = rd
        .headers()
        .map_err(|e| csv_err(path, e))?
        .iter()
        .map(String::from)
        .collect();
    if header != CSV_HEADER {
        return Err(Error::format(path, format!("unexpected header {header:?}")));
    }
    let mut rows = Vec::new();
    for rec in rd.records() {
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let num = |i: usize| -> Result<Option<f64>> {
            match &rec[i] {
                "" => Ok(None),
                s => s.parse().map(Some).map_err(|e| csv_err(path, e)),
            }
        };
        rows.push(SweepRow {
            axis: rec[0].to_string(),
            value: rec[1].to_string(),
            seed: rec[2].parse().map_err(|e| csv_err(path, e))?,
            status: rec[3].to_string(),
            oa: num(4)?,
            aa: num(5)?,
            c_super: num(6)?,
            c_recon: num(7)?,
            seconds: num(8)?.unwrap_or(0.0),
        });
    }
    Ok(rows)
}

pub fn rows_to_csv(rows: &[SweepRow]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let res = (|| -> csv::Result<()> {
        w.write_record(CSV_HEADER)?;
        for r in rows {
            w.write_record(r.record())?;
        }
        w.flush()?;
        Ok(())
    })();
    res.map_err(|e| Error::Data(e.to_string()))?;
    w.into_inner().map_err(|e| Error::Data(e.to_string()))
}

pub fn aggregates_to_csv(axis: SweepAxis, aggs: &[Aggregate]) -> String {
    let mut s = String::from("axis,value,runs,failed,oa_mean,oa_std,aa_mean,aa_std\n");
    for a in aggs {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            axis.name(),
            a.value,
            a.runs,
            a.failed,
            a.oa_mean,
            a.oa_std,
            a.aa_mean,
            a.aa_std
        ));
    }
    s
}

fn run_cell<T: Real>(spec: &SweepSpec, cube: &HsiCube, value: f64, seed: u64) -> SweepRow {
    let start = Instant::now();
    let outcome = catch_unwind(AssertUnwindSafe(|| -> Result<TrainReport> {
        let (cfg, data_cfg) = spec.cell(value, seed, cube.bands)?;
        let data = prepare(cube, &data_cfg, seed)?;
        Ok(train::<T>(&cfg, &data)?.1)
    }));
    let secs = start.elapsed().as_secs_f64();
    match outcome {
        Ok(Ok(r)) => SweepRow::from_report(spec.axis, value, seed, &r, secs),
        Ok(Err(e)) => SweepRow::failed(spec.axis, value, seed, &e.to_string(), secs),
        Err(p) => {
            let msg = p
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panic".into());
            SweepRow::failed(spec.axis, value, seed, &format!("panic: {msg}"), secs)
        }
    }
}

/// Runs every `(value, seed)` cell not already present in `csv_path`.
///
/// Finished cells are appended to the CSV as they complete, so an
/// interrupted sweep resumes where it stopped. At the end the file is
/// rewritten in `(value, seed)` spec order. `workers` bounds concurrent
/// runs (0 = one per core).
pub fn run_sweep<T: Real>(
    spec: &SweepSpec,
    cube: &HsiCube,
    csv_path: Option<&Path>,
    workers: usize,
) -> Result<SweepResult> {
    spec.validate()?;
    let mut done: Vec<SweepRow> = Vec::new();
    if let Some(p) = csv_path.filter(|p| p.exists()) {
        done = read_rows(p)?;
        if let Some(r) = done.iter().find(|r| r.axis != spec.axis.name()) {
            return Err(Error::Config(format!(
                "{} holds a {} sweep, not {}",
                p.display(),
                r.axis,
                spec.axis.name()
            )));
        }
    }
    let key = |v: &str, s: u64| (v.to_string(), s);
    let have: BTreeMap<(String, u64), ()> = done.iter().map(|r| (key(&r.value, r.seed), ())).collect();
    let todo: Vec<(f64, u64)> = spec
        .values
        .iter()
        .flat_map(|&v| spec.seeds.iter().map(move |&s| (v, s)))
        .filter(|&(v, s)| !have.contains_key(&key(&spec.axis.format_value(v), s)))
        .collect();

    let writer = match csv_path {
        Some(p) => {
            let fresh = !p.exists();
            let file = OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(file);
            if fresh {
                w.write_record(CSV_HEADER)
                    .and_then(|_| Ok(w.flush()?))
                    .map_err(|e| csv_err(p, e))?;
            }
            Some(Mutex::new(w))
        }
        None => None,
    };
    let fresh_rows = par::map_ordered(todo, workers, |(v, s)| {
        let row = run_cell::<T>(spec, cube, v, s);
        if let (Some(w), Some(p)) = (&writer, csv_path) {
            let mut w = w.lock().unwrap_or_else(|e| e.into_inner());
            if let Err(e) = w.write_record(row.record()).and_then(|_| Ok(w.flush()?)) {
                return Err(csv_err(p, e));
            }
        }
        Ok(row)
    });
    drop(writer);
    for r in fresh_rows {
        done.push(r?);
    }

    let mut ordered = Vec::with_capacity(done.len());
    for &v in &spec.values {
        let vs = spec.axis.format_value(v);
        for &s in &spec.seeds {
            if let Some(i) = done.iter().position(|r| r.value == vs && r.seed == s) {
                ordered.push(done.swap_remove(i));
            }
        }
    }
    ordered.extend(done);
    if let Some(p) = csv_path {
        write_atomic(p, &rows_to_csv(&ordered)?)?;
    }
    let aggregates = aggregate(&ordered);
    Ok(SweepResult {
        rows: ordered,
        aggregates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(v: &str, s: u64, oa: Option<f64>) -> SweepRow {
        SweepRow {
            axis: "noise_std".into(),
            value: v.into(),
            seed: s,
            status: if oa.is_some() { "ok".into() } else { "error: x".into() },
            oa,
            aa: oa,
            c_super: oa,
            c_recon: oa,
            seconds: 1.0,
        }
    }

    #[test]
    fn aggregates_match_rows() {
        let rows = vec![
            row("0.5", 1, Some(0.8)),
            row("0.5", 2, Some(0.6)),
            row("0", 1, Some(0.3)),
            row("0", 2, None),
        ];
        let a = aggregate(&rows);
        assert_eq!(a.len(), 2);
        assert_eq!((a[0].runs, a[1].runs, a[1].failed), (2, 1, 1));
        assert!((a[0].oa_mean - 0.7).abs() < 1e-15);
        assert!((a[0].oa_std - 0.02f64.sqrt()).abs() < 1e-15);
        assert_eq!(a[1].oa_std, 0.0);
    }

    #[test]
    fn csv_round_trip() {
        let rows = vec![row("0.5", 1, Some(0.8)), row("0", 2, None)];
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.csv");
        std::fs::write(&p, rows_to_csv(&rows).unwrap()).unwrap();
        let back = read_rows(&p).unwrap();
        assert_eq!(back, rows);
    }

    #[test]
    fn integer_axis_values_are_type_checked() {
        use crate::ladder::LadderSpec;
        let spec = SweepSpec {
            base: TrainConfig::new(LadderSpec::fc(4, &[3], 2, 0.3, vec![1.0; 3])),
            data: DataConfig::default(),
            axis: SweepAxis::LabelsPerClass,
            values: vec![2.5],
            seeds: vec![1],
            lambda_mode: LambdaMode::Top,
        };
        assert!(spec.validate().is_err());
    }

    #[test]
    fn fixed_axis_protocol() {
        use crate::ladder::LadderSpec;
        let mut spec = SweepSpec {
            base: TrainConfig::new(LadderSpec::fc(4, &[3], 2, 0.3, vec![5.0, 1.0, 0.0])),
            data: DataConfig::default(),
            axis: SweepAxis::NoiseStd,
            values: vec![0.0],
            seeds: vec![1],
            lambda_mode: LambdaMode::Top,
        };
        let (c, _) = spec.cell(0.7, 3, 4).unwrap();
        assert_eq!((c.ladder.noise_std, c.seed), (0.7, 3));
        assert_eq!(c.ladder.lambdas, vec![0.1; 3]);
        spec.axis = SweepAxis::TopLambda;
        let (c, _) = spec.cell(2.0, 1, 4).unwrap();
        assert_eq!(c.ladder.noise_std, 0.5);
        assert_eq!(c.ladder.lambdas, vec![5.0, 1.0, 2.0]);
        spec.lambda_mode = LambdaMode::Uniform;
        assert_eq!(spec.cell(2.0, 1, 4).unwrap().0.ladder.lambdas, vec![2.0; 3]);
    }
}
