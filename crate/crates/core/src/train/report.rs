use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::metrics::Metrics;
use super::LossRecord;
use crate::error::{Error, Result};
use crate::hsi::format::write_atomic;

/// Outcome of one training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainReport {
    pub config: TrainConfig,
    pub iterations: usize,
    pub labeled: usize,
    pub unlabeled: usize,
    pub test: usize,
    pub losses: Vec<LossRecord>,
    pub pretrain_losses: Vec<f64>,
    pub metrics: Metrics,
    pub seconds: f64,
}

fn join<I: IntoIterator<Item = String>>(it: I, sep: &str) -> String {
    it.into_iter().collect::<Vec<_>>().join(sep)
}

impl TrainReport {
    pub fn final_losses(&self) -> LossRecord {
        self.losses.last().copied().unwrap_or(LossRecord {
            c_super: f64::NAN,
            c_recon: f64::NAN,
            c_total: f64::NAN,
        })
    }

    /// `key=value` lines. The confusion matrix is rows separated by `;`,
    /// entries by `,`; classes absent from the test set print as `nan`.
    pub fn to_kv(&self) -> String {
        let m = &self.metrics;
        let last = self.final_losses();
        let mode = serde_json::to_value(self.config.mode).unwrap();
        let mut s = String::new();
        let mut kv = |k: &str, v: String| writeln!(s, "{k}={v}").unwrap();
        kv("mode", mode.as_str().unwrap_or_default().to_string());
        kv("seed", self.config.seed.to_string());
        kv("iterations", self.iterations.to_string());
        kv("labeled", self.labeled.to_string());
        kv("unlabeled", self.unlabeled.to_string());
        kv("test", self.test.to_string());
        kv("oa", m.oa.to_string());
        kv("aa", m.aa.to_string());
        kv(
            "per_class",
            join(
                m.per_class.iter().map(|p| p.map_or("nan".into(), |v| v.to_string())),
                ",",
            ),
        );
        kv(
            "confusion",
            join(m.confusion.iter().map(|r| join(r.iter().map(u64::to_string), ",")), ";"),
        );
        kv("final_c_super", last.c_super.to_string());
        kv("final_c_recon", last.c_recon.to_string());
        kv("final_c_total", last.c_total.to_string());
        kv("pretrain_iterations", self.pretrain_losses.len().to_string());
        kv("seconds", format!("{:.3}", self.seconds));
        kv("config", serde_json::to_string(&self.config).unwrap());
        s
    }

    pub fn loss_csv(&self) -> String {
        let mut s = String::from("iteration,c_super,c_recon,c_total\n");
        for (i, l) in self.losses.iter().enumerate() {
            writeln!(s, "{},{},{},{}", i + 1, l.c_super, l.c_recon, l.c_total).unwrap();
        }
        s
    }

    /// Writes `report.txt` and `loss_curve.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        write_atomic(&dir.join("report.txt"), self.to_kv().as_bytes())?;
        write_atomic(&dir.join("loss_curve.csv"), self.loss_csv().as_bytes())
    }
}

/// Parses `key=value` lines as written by [`TrainReport::to_kv`].
pub fn parse_kv(text: &str) -> BTreeMap<String, String> {
    text.lines()
        .filter_map(|l| l.split_once('='))
        .map(|(k, v)| (k.to_string(), v.to_string()))
        .collect()
}
