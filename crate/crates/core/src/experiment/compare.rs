use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::evaluation::{percent, wilcoxon_signed_rank, win_tie_loss, Verdict, WilcoxonMethod};
use crate::federation::RoundMetrics;

use super::config::Pairing;
use super::report::{ExperimentReport, MetricsReport};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Precision,
    Recall,
    F1,
    Auc,
}

impl Metric {
    pub fn name(self) -> &'static str {
        match self {
            Metric::Precision => "Precision",
            Metric::Recall => "Recall",
            Metric::F1 => "F1",
            Metric::Auc => "AUC",
        }
    }

    pub fn of_repeat(self, m: &MetricsReport) -> Option<f64> {
        match self {
            Metric::Precision => Some(m.precision),
            Metric::Recall => Some(m.recall),
            Metric::F1 => Some(m.f1),
            Metric::Auc => m.auc,
        }
    }

    pub fn of_round(self, m: &RoundMetrics) -> Option<f64> {
        match self {
            Metric::Precision => Some(m.precision),
            Metric::Recall => Some(m.recall),
            Metric::F1 => Some(m.f1),
            Metric::Auc => m.auc,
        }
    }
}

/// Values entering the paired test, in a fixed order.
pub fn paired_values(report: &ExperimentReport, metric: Metric, pairing: Pairing) -> Result<Vec<f64>> {
    let missing = || Error::EmptyInput("metric undefined for this report");
    match pairing {
        Pairing::Repeats => report
            .repeats
            .iter()
            .map(|r| metric.of_repeat(&r.metrics).ok_or_else(missing))
            .collect(),
        Pairing::Rounds => {
            let window = report.config.window;
            let mut out = Vec::new();
            for r in &report.repeats {
                let tail = &r.series[r.series.len().saturating_sub(window)..];
                for m in tail {
                    out.push(metric.of_round(m).ok_or_else(missing)?);
                }
            }
            Ok(out)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BaselineComparison {
    pub baseline: String,
    pub metric: Metric,
    pub pairing: Pairing,
    pub ours_mean: f64,
    pub baseline_mean: f64,
    pub p_value: f64,
    pub w_plus: f64,
    /// Set when all paired differences vanish or fewer than two pairs remain;
    /// the p-value is then 1.
    pub degenerate: bool,
    pub exact: bool,
    pub verdict: Verdict,
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

/// Signed-rank comparison of `ours` against `baseline` on one test project.
pub fn compare_reports(
    ours: &ExperimentReport,
    baseline: &ExperimentReport,
    metric: Metric,
    pairing: Pairing,
) -> Result<BaselineComparison> {
    if ours.test_project != baseline.test_project {
        return Err(Error::RepeatMismatch(format!(
            "test projects differ: {} vs {}",
            ours.test_project, baseline.test_project
        )));
    }
    let a = paired_values(ours, metric, pairing)?;
    let b = paired_values(baseline, metric, pairing)?;
    if a.len() != b.len() || ours.repeats.len() != baseline.repeats.len() {
        return Err(Error::RepeatMismatch(format!(
            "{} has {} paired values, {} has {}",
            ours.label,
            a.len(),
            baseline.label,
            b.len()
        )));
    }
    let (ours_mean, baseline_mean) = (mean(&a), mean(&b));
    let (p_value, w_plus, degenerate, exact) = match wilcoxon_signed_rank(&a, &b) {
        Ok(w) => (w.p_value, w.w_plus, w.degenerate, w.method == WilcoxonMethod::Exact),
        Err(Error::AllZeroDifferences | Error::EmptyInput(_)) => (1.0, 0.0, true, true),
        Err(e) => return Err(e),
    };
    let verdict = if degenerate {
        Verdict::Tie
    } else {
        win_tie_loss(p_value, ours_mean, baseline_mean).verdict
    };
    Ok(BaselineComparison {
        baseline: baseline.label.clone(),
        metric,
        pairing,
        ours_mean,
        baseline_mean,
        p_value,
        w_plus,
        degenerate,
        exact,
        verdict,
    })
}

/// One project's reports keyed by method label, in column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRuns {
    pub project: String,
    pub reports: Vec<ExperimentReport>,
}

impl ProjectRuns {
    pub fn get(&self, label: &str) -> Option<&ExperimentReport> {
        self.reports.iter().find(|r| r.label == label)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectRow {
    pub project: String,
    /// Mean metric per method, aligned with [`SignificanceTable::methods`].
    pub means: Vec<f64>,
    /// Comparison of `ours` against each baseline, aligned with
    /// [`SignificanceTable::baselines`].
    pub comparisons: Vec<BaselineComparison>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WinTieLoss {
    pub win: usize,
    pub tie: usize,
    pub loss: usize,
}

impl WinTieLoss {
    pub fn total(&self) -> usize {
        self.win + self.tie + self.loss
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignificanceTable {
    pub metric: Metric,
    pub pairing: Pairing,
    pub ours: String,
    pub methods: Vec<String>,
    pub baselines: Vec<String>,
    pub rows: Vec<ProjectRow>,
    /// Mean over projects per method.
    pub averages: Vec<f64>,
    pub tallies: Vec<WinTieLoss>,
}

/// Compares `ours` against every other method of each project and tallies
/// Win/Tie/Loss per baseline.
pub fn compare_methods(
    ours: &str,
    projects: &[ProjectRuns],
    metric: Metric,
    pairing: Pairing,
) -> Result<SignificanceTable> {
    let first = projects.first().ok_or(Error::EmptyInput("no projects to compare"))?;
    let methods: Vec<String> = first.reports.iter().map(|r| r.label.clone()).collect();
    if !methods.iter().any(|m| m == ours) {
        return Err(Error::InvalidConfig(format!("no report labelled {ours:?}")));
    }
    let baselines: Vec<String> = methods.iter().filter(|m| *m != ours).cloned().collect();
    let mut rows = Vec::with_capacity(projects.len());
    for p in projects {
        let find = |label: &str| {
            p.get(label).ok_or_else(|| {
                Error::RepeatMismatch(format!("project {} has no {label} report", p.project))
            })
        };
        let our_report = find(ours)?;
        let means = methods
            .iter()
            .map(|m| Ok(mean(&paired_values(find(m)?, metric, pairing)?)))
            .collect::<Result<Vec<_>>>()?;
        let comparisons = baselines
            .iter()
            .map(|b| compare_reports(our_report, find(b)?, metric, pairing))
            .collect::<Result<Vec<_>>>()?;
        rows.push(ProjectRow {
            project: p.project.clone(),
            means,
            comparisons,
        });
    }
    let averages = (0..methods.len())
        .map(|j| rows.iter().map(|r| r.means[j]).sum::<f64>() / rows.len() as f64)
        .collect();
    let tallies = (0..baselines.len())
        .map(|j| {
            let mut t = WinTieLoss::default();
            for r in &rows {
                match r.comparisons[j].verdict {
                    Verdict::Win => t.win += 1,
                    Verdict::Tie => t.tie += 1,
                    Verdict::Loss => t.loss += 1,
                }
            }
            t
        })
        .collect();
    Ok(SignificanceTable {
        metric,
        pairing,
        ours: ours.to_string(),
        methods,
        baselines,
        rows,
        averages,
        tallies,
    })
}

impl SignificanceTable {
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "| Project |");
        for m in &self.methods {
            let _ = write!(out, " {m} |");
        }
        for b in &self.baselines {
            let _ = write!(out, " p vs {b} |");
        }
        out.push('\n');
        out.push_str(&"|---".repeat(1 + self.methods.len() + self.baselines.len()));
        out.push_str("|\n");
        for r in &self.rows {
            let _ = write!(out, "| {} |", r.project);
            for m in &r.means {
                let _ = write!(out, " {} |", percent(*m));
            }
            for c in &r.comparisons {
                let _ = write!(out, " {:.4} ({}) |", c.p_value, c.verdict);
            }
            out.push('\n');
        }
        let _ = write!(out, "| Avg. & W/T/L |");
        for a in &self.averages {
            let _ = write!(out, " {} |", percent(*a));
        }
        for t in &self.tallies {
            let _ = write!(out, " {}/{}/{} |", t.win, t.tie, t.loss);
        }
        out.push('\n');
        out
    }
}
