use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{mean_std, percent};
use crate::federation::RoundMetrics;

use super::compare::BaselineComparison;
use super::config::{ExperimentConfig, Method};

/// Metrics of one repeat: the mean over the last `window` rounds.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Absent when any averaged round had a single-class test set.
    pub auc: Option<f64>,
}

impl MetricsReport {
    /// Averages the trailing `window` rounds of `series`.
    pub fn from_window(series: &[RoundMetrics], window: usize) -> Option<Self> {
        let tail = &series[series.len().saturating_sub(window)..];
        if tail.is_empty() {
            return None;
        }
        let n = tail.len() as f64;
        let avg = |f: fn(&RoundMetrics) -> f64| tail.iter().map(f).sum::<f64>() / n;
        let auc: Option<Vec<f64>> = tail.iter().map(|m| m.auc).collect();
        Some(Self {
            precision: avg(|m| m.precision),
            recall: avg(|m| m.recall),
            f1: avg(|m| m.f1),
            auc: auc.map(|v| v.iter().sum::<f64>() / n),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MeanStd {
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
}

impl MeanStd {
    pub fn of(values: &[f64]) -> Option<Self> {
        mean_std(values).map(|(mean, std)| Self { mean, std })
    }
}

/// Mean and spread over repeats; `None` when there is nothing to average.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SummaryStats {
    pub precision: Option<MeanStd>,
    pub recall: Option<MeanStd>,
    pub f1: Option<MeanStd>,
    pub auc: Option<MeanStd>,
}

impl SummaryStats {
    pub fn of(repeats: &[RepeatResult]) -> Self {
        let col = |f: fn(&MetricsReport) -> f64| {
            MeanStd::of(&repeats.iter().map(|r| f(&r.metrics)).collect::<Vec<_>>())
        };
        let auc: Option<Vec<f64>> = repeats.iter().map(|r| r.metrics.auc).collect();
        Self {
            precision: col(|m| m.precision),
            recall: col(|m| m.recall),
            f1: col(|m| m.f1),
            auc: auc.and_then(|v| MeanStd::of(&v)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RepeatResult {
    pub repeat: usize,
    pub seed: u64,
    pub metrics: MetricsReport,
    /// Test-set metrics after every round.
    pub series: Vec<RoundMetrics>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub label: String,
    pub method: Method,
    pub test_project: String,
    pub test_version: String,
    pub clients: Vec<String>,
    pub config: ExperimentConfig,
    pub repeats: Vec<RepeatResult>,
    pub summary: SummaryStats,
    #[serde(default)]
    pub significance: Vec<BaselineComparison>,
}

impl ExperimentReport {
    /// File stem used by [`emit_report`], e.g. `ant_FedDP-FedProx`.
    pub fn file_stem(&self) -> String {
        let label: String = self
            .label
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '.' { c } else { '-' })
            .collect();
        format!("{}_{}", self.test_project, label)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report always serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    /// Table-style summary with percentages to two decimals.
    pub fn summary_markdown(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "## {} on {}\n", self.label, self.test_project);
        let _ = writeln!(out, "| Metric | Mean (%) | Std |");
        let _ = writeln!(out, "|---|---|---|");
        for (name, stat) in [
            ("Precision", self.summary.precision),
            ("Recall", self.summary.recall),
            ("F1", self.summary.f1),
            ("AUC", self.summary.auc),
        ] {
            let _ = writeln!(out, "| {name} | {} | {} |", fmt_mean(stat), fmt_std(stat));
        }
        let _ = writeln!(out, "\n| Repeat | Precision | Recall | F1 | AUC |");
        let _ = writeln!(out, "|---|---|---|---|---|");
        for r in &self.repeats {
            let m = &r.metrics;
            let _ = writeln!(
                out,
                "| {} | {} | {} | {} | {} |",
                r.repeat,
                percent(m.precision),
                percent(m.recall),
                percent(m.f1),
                m.auc.map(percent).unwrap_or_else(|| "n/a".into())
            );
        }
        if !self.significance.is_empty() {
            let _ = writeln!(out, "\n| Baseline | Metric | Ours | Baseline | p-value | Verdict |");
            let _ = writeln!(out, "|---|---|---|---|---|---|");
            for c in &self.significance {
                let _ = writeln!(
                    out,
                    "| {} | {} | {} | {} | {:.4} | {} |",
                    c.baseline,
                    c.metric.name(),
                    percent(c.ours_mean),
                    percent(c.baseline_mean),
                    c.p_value,
                    c.verdict
                );
            }
        }
        out
    }

    /// Per-round F1/AUC series as CSV: `repeat,round,precision,recall,f1,auc`.
    pub fn series_csv(&self) -> String {
        let mut out = String::from("repeat,round,precision,recall,f1,auc\n");
        for r in &self.repeats {
            for (i, m) in r.series.iter().enumerate() {
                let auc = m.auc.map(|a| a.to_string()).unwrap_or_default();
                let _ = writeln!(out, "{},{},{},{},{},{}", r.repeat, i + 1, m.precision, m.recall, m.f1, auc);
            }
        }
        out
    }
}

pub(crate) fn fmt_mean(stat: Option<MeanStd>) -> String {
    stat.map(|s| percent(s.mean)).unwrap_or_else(|| "n/a".into())
}

pub(crate) fn fmt_std(stat: Option<MeanStd>) -> String {
    stat.map(|s| format!("{:.3}", s.std)).unwrap_or_else(|| "n/a".into())
}

/// Paths written by [`emit_report`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EmittedFiles {
    pub json: PathBuf,
    pub summary: PathBuf,
    pub series: PathBuf,
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    std::fs::write(path, contents).map_err(|e| Error::io(path, e))
}

/// Writes the full-precision JSON report, a markdown summary and the
/// per-round series into `dir`.
pub fn emit_report(report: &ExperimentReport, dir: &Path) -> Result<EmittedFiles> {
    let stem = report.file_stem();
    let files = EmittedFiles {
        json: dir.join(format!("{stem}.json")),
        summary: dir.join(format!("{stem}.summary.md")),
        series: dir.join(format!("{stem}.series.csv")),
    };
    write_file(&files.json, &report.to_json())?;
    write_file(&files.summary, &report.summary_markdown())?;
    write_file(&files.series, &report.series_csv())?;
    Ok(files)
}

pub fn read_report(path: &Path) -> Result<ExperimentReport> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    ExperimentReport::from_json(&text)
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    fn rm(f1: f64, auc: Option<f64>) -> RoundMetrics {
        RoundMetrics {
            precision: f1 / 2.0,
            recall: f1 * 1.5,
            f1,
            auc,
        }
    }

    pub(crate) fn sample_report(values: &[f64]) -> ExperimentReport {
        let repeats: Vec<RepeatResult> = values
            .iter()
            .enumerate()
            .map(|(i, &v)| {
                let series = vec![rm(v - 0.1, Some(0.6)), rm(v, Some(0.7)), rm(v, Some(0.7))];
                RepeatResult {
                    repeat: i,
                    seed: i as u64,
                    metrics: MetricsReport::from_window(&series, 2).unwrap(),
                    series,
                }
            })
            .collect();
        ExperimentReport {
            label: "FedDP/FedProx".into(),
            method: Method::FedDp,
            test_project: "ant".into(),
            test_version: "1.7".into(),
            clients: vec!["ivy-1.4".into()],
            config: ExperimentConfig::default(),
            summary: SummaryStats::of(&repeats),
            repeats,
            significance: vec![],
        }
    }

    #[test]
    fn window_average() {
        let s = [rm(0.1, Some(0.5)), rm(0.2, Some(0.6)), rm(0.4, None)];
        let m = MetricsReport::from_window(&s, 2).unwrap();
        assert!((m.f1 - 0.3).abs() < 1e-15);
        assert_eq!(m.auc, None);
        let m = MetricsReport::from_window(&s[..2], 10).unwrap();
        assert!((m.auc.unwrap() - 0.55).abs() < 1e-15);
        assert!(MetricsReport::from_window(&[], 3).is_none());
    }

    #[test]
    fn summary_means_match_arithmetic_mean() {
        let r = sample_report(&[0.4, 0.5, 0.6, 0.45, 0.55]);
        let direct = r.repeats.iter().map(|x| x.metrics.f1).sum::<f64>() / 5.0;
        assert!((r.summary.f1.unwrap().mean - direct).abs() < 1e-12);
    }

    #[test]
    fn empty_report_has_explicit_nulls_and_round_trips() {
        let r = sample_report(&[]);
        let json = r.to_json();
        assert!(json.contains("\"f1\": null"));
        assert!(json.contains("\"auc\": null"));
        assert_eq!(ExperimentReport::from_json(&json).unwrap(), r);
    }

    #[test]
    fn emit_then_read_is_identity_and_byte_stable() {
        let dir = tempfile::tempdir().unwrap();
        let r = sample_report(&[0.491372, 0.3, 0.1 + 0.2]);
        let files = emit_report(&r, dir.path()).unwrap();
        assert_eq!(read_report(&files.json).unwrap(), r);
        let first = std::fs::read(&files.json).unwrap();
        let series = std::fs::read(&files.series).unwrap();
        emit_report(&r, dir.path()).unwrap();
        assert_eq!(std::fs::read(&files.json).unwrap(), first);
        assert_eq!(std::fs::read(&files.series).unwrap(), series);
    }

    #[test]
    fn summary_uses_two_decimal_percentages() {
        assert_eq!(percent(0.491372), "49.14");
        let r = sample_report(&[0.5]);
        let md = r.summary_markdown();
        assert!(md.contains("| F1 | 50.00 | 0.000 |"), "{md}");
    }

    #[test]
    fn series_csv_lists_every_round() {
        let r = sample_report(&[0.5, 0.6]);
        let csv = r.series_csv();
        assert_eq!(csv.lines().count(), 1 + 2 * 3);
        assert!(csv.lines().nth(2).unwrap().starts_with("0,2,0.25,0.75,0.5,0.7"));
    }

    #[test]
    fn file_stem_is_path_safe() {
        let mut r = sample_report(&[0.5]);
        r.label = "FedDP/FedProx w/o factor".into();
        assert_eq!(r.file_stem(), "ant_FedDP-FedProx-w-o-factor");
    }
}
