use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::Stage;
use crate::arch::CountReport;
use crate::hashing::Framework;
use crate::training::EpochRecord;
use crate::{Error, Result};

pub const METRICS_FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Fingerprint {
    pub crate_version: String,
    pub os: String,
    pub arch: String,
    pub cpus: usize,
    pub optimized: bool,
}

impl Fingerprint {
    pub fn current() -> Self {
        Fingerprint {
            crate_version: env!("CARGO_PKG_VERSION").to_string(),
            os: std::env::consts::OS.to_string(),
            arch: std::env::consts::ARCH.to_string(),
            cpus: std::thread::available_parallelism().map_or(1, |n| n.get()),
            optimized: !cfg!(debug_assertions),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MapSummary {
    pub top_n: usize,
    pub map: f64,
    pub random_baseline: f64,
    pub queries: usize,
    pub database: usize,
}

/// Input checkpoint a stage started from.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub path: String,
    pub config_hash: String,
}

/// Outcome of one stage of one experiment. All values were produced by the
/// configuration named by `config_hash`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub format_version: u32,
    pub config_hash: String,
    pub experiment: String,
    pub stage: Stage,
    pub dataset: String,
    pub teacher: String,
    pub student: String,
    pub framework: Option<Framework>,
    pub n_bits: Option<usize>,
    pub epochs: Vec<EpochRecord>,
    pub teacher_checksum_before: Option<String>,
    pub teacher_checksum_after: Option<String>,
    pub map: Option<MapSummary>,
    #[serde(default)]
    pub train_accuracy: Option<f64>,
    pub counts: Vec<CountReport>,
    pub input: Option<Provenance>,
    pub environment: Fingerprint,
}

impl MetricsReport {
    pub fn new(config: &super::ExperimentConfig, stage: Stage) -> Self {
        MetricsReport {
            format_version: METRICS_FORMAT_VERSION,
            config_hash: config.config_hash(),
            experiment: config.name.clone(),
            stage,
            dataset: config.dataset.name(),
            teacher: config.teacher.id.as_str().to_string(),
            student: config
                .student_layout()
                .map(|l| l.name)
                .unwrap_or_else(|_| "invalid".into()),
            framework: config.finetune.as_ref().map(|f| f.framework),
            n_bits: config.finetune.as_ref().map(|f| f.n_bits),
            epochs: Vec::new(),
            teacher_checksum_before: None,
            teacher_checksum_after: None,
            map: None,
            train_accuracy: None,
            counts: Vec::new(),
            input: None,
            environment: Fingerprint::current(),
        }
    }

    pub fn first_loss(&self) -> Option<f64> {
        self.epochs.first().map(|e| e.loss)
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epochs.last().map(|e| e.loss)
    }

    pub fn mean_epoch_seconds(&self) -> Option<f64> {
        if self.epochs.is_empty() {
            None
        } else {
            Some(self.epochs.iter().map(|e| e.seconds).sum::<f64>() / self.epochs.len() as f64)
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let r: MetricsReport = serde_json::from_str(text)?;
        if r.format_version != METRICS_FORMAT_VERSION {
            return Err(Error::Format {
                what: "metrics report",
                detail: format!("unsupported format_version {}", r.format_version),
            });
        }
        Ok(r)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::Missing(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

/// One mAP table per framework: rows are models, columns are
/// dataset/bit-width pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct MapTable {
    pub framework: Framework,
    pub columns: Vec<(String, usize)>,
    pub rows: Vec<(String, Vec<Option<f64>>)>,
}

impl MapTable {
    fn header(&self) -> Vec<String> {
        std::iter::once("model".to_string())
            .chain(self.columns.iter().map(|(d, b)| format!("{d} {b} bit")))
            .collect()
    }

    /// Full-precision values; empty cells stay empty.
    pub fn to_csv(&self) -> String {
        let mut out = format!("# {}\n{}\n", self.framework, self.header().join(","));
        for (model, cells) in &self.rows {
            let cells: Vec<String> = cells.iter().map(|c| c.map(|v| v.to_string()).unwrap_or_default()).collect();
            writeln!(out, "{model},{}", cells.join(",")).expect("string write");
        }
        out
    }

    pub fn to_text(&self) -> String {
        let header = self.header();
        let body: Vec<Vec<String>> = self
            .rows
            .iter()
            .map(|(m, cells)| {
                std::iter::once(m.clone())
                    .chain(cells.iter().map(|c| c.map_or_else(|| "-".to_string(), |v| format!("{v:.4}"))))
                    .collect()
            })
            .collect();
        let widths: Vec<usize> = (0..header.len())
            .map(|i| body.iter().map(|r| r[i].len()).chain([header[i].len()]).max().unwrap_or(0))
            .collect();
        let line = |cells: &[String]| -> String {
            cells
                .iter()
                .enumerate()
                .map(|(i, c)| if i == 0 { format!("{c:<w$}", w = widths[i]) } else { format!("{c:>w$}", w = widths[i]) })
                .collect::<Vec<_>>()
                .join("  ")
                .trim_end()
                .to_string()
        };
        let mut out = format!("mAP under {}\n{}\n", self.framework, line(&header));
        for r in &body {
            out.push_str(&line(r));
            out.push('\n');
        }
        out
    }
}

/// Groups evaluation reports into per-framework tables. Reports without an
/// mAP are skipped; a later report for the same cell replaces an earlier one.
pub fn report_tables(reports: &[MetricsReport]) -> Vec<MapTable> {
    let mut grouped: BTreeMap<&'static str, (Framework, Vec<&MetricsReport>)> = BTreeMap::new();
    for r in reports {
        if let (Some(fw), Some(_), Some(_)) = (r.framework, r.n_bits, &r.map) {
            grouped.entry(fw.as_str()).or_insert_with(|| (fw, Vec::new())).1.push(r);
        }
    }
    grouped
        .into_values()
        .map(|(framework, rs)| {
            let columns: Vec<(String, usize)> = rs
                .iter()
                .map(|r| (r.dataset.clone(), r.n_bits.expect("filtered")))
                .collect::<BTreeSet<_>>()
                .into_iter()
                .collect();
            let mut models: Vec<String> = Vec::new();
            for r in &rs {
                let m = model_label(r);
                if !models.contains(&m) {
                    models.push(m);
                }
            }
            let rows = models
                .into_iter()
                .map(|m| {
                    let mut cells = vec![None; columns.len()];
                    for r in rs.iter().filter(|r| model_label(r) == m) {
                        let key = (r.dataset.clone(), r.n_bits.expect("filtered"));
                        let col = columns.iter().position(|c| *c == key).expect("column exists");
                        cells[col] = r.map.as_ref().map(|s| s.map);
                    }
                    (m, cells)
                })
                .collect();
            MapTable { framework, columns, rows }
        })
        .collect()
}

fn model_label(r: &MetricsReport) -> String {
    format!("{} ({})", r.student, r.teacher)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn report(fw: Framework, bits: usize, dataset: &str, student: &str, map: f64) -> MetricsReport {
        MetricsReport {
            format_version: METRICS_FORMAT_VERSION,
            config_hash: "h".into(),
            experiment: "e".into(),
            stage: Stage::Evaluate,
            dataset: dataset.into(),
            teacher: "resnet50".into(),
            student: student.into(),
            framework: Some(fw),
            n_bits: Some(bits),
            epochs: Vec::new(),
            teacher_checksum_before: None,
            teacher_checksum_after: None,
            map: Some(MapSummary { top_n: 5000, map, random_baseline: 0.1, queries: 1, database: 1 }),
            train_accuracy: None,
            counts: Vec::new(),
            input: None,
            environment: Fingerprint::current(),
        }
    }

    #[test]
    fn single_run_gives_one_cell() {
        let t = report_tables(&[report(Framework::Csq, 16, "cifar10", "student_v1", 0.8)]);
        assert_eq!(t.len(), 1);
        assert_eq!(t[0].rows.len(), 1);
        assert_eq!(t[0].columns.len(), 1);
    }

    #[test]
    fn frameworks_split_into_tables_with_gaps() {
        let rs = [
            report(Framework::Csq, 16, "cifar10", "student_v1", 0.81234567891),
            report(Framework::Csq, 32, "cifar10", "student_v2", 0.7),
            report(Framework::Dch, 48, "nuswide", "student_v1", 0.6),
        ];
        let t = report_tables(&rs);
        assert_eq!(t.len(), 2);
        let csq = &t[0];
        assert_eq!(csq.framework, Framework::Csq);
        assert_eq!(csq.rows[0].1, vec![Some(0.81234567891), None]);
        let csv = csq.to_csv();
        assert!(csv.contains("0.81234567891"));
        let text = csq.to_text();
        assert!(text.contains("0.8123") && text.contains('-'));
    }

    #[test]
    fn json_round_trip_is_lossless() {
        let r = report(Framework::Dch, 48, "nuswide", "student_v2", 0.1 + 0.2);
        let back = MetricsReport::from_json(&r.to_json().unwrap()).unwrap();
        assert_eq!(back, r);
        let t = report_tables(&[back]);
        let v: f64 = t[0].to_csv().lines().nth(2).unwrap().split(',').nth(1).unwrap().parse().unwrap();
        assert_eq!(v, 0.1 + 0.2);
    }
}
