use std::fmt::Write as _;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ProjectDataset;
use crate::error::{Error, Result};
use crate::evaluation::{mean_rounds, percent, rounds_to_target, MeanRounds, RoundsToTarget};
use crate::federation::Weighting;
use crate::scalar::Scalar;

use super::compare::ProjectRuns;
use super::config::{ExperimentConfig, Method};
use super::report::{fmt_mean, ExperimentReport, MeanStd};
use super::runner::run_on_datasets;

/// A named configuration; the test project is filled in per run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Variant {
    pub name: String,
    pub config: ExperimentConfig,
}

impl Variant {
    /// Variant named after the config's own label.
    pub fn labelled(config: ExperimentConfig) -> Self {
        Self {
            name: config.label(),
            config,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SuiteReport {
    pub variants: Vec<String>,
    pub projects: Vec<ProjectRuns>,
}

/// Runs every variant against every test project. Runs execute in parallel
/// and are collected in (project, variant) order.
pub fn run_suite<T: Scalar>(
    variants: &[Variant],
    test_projects: &[String],
    datasets: &[ProjectDataset<T>],
) -> Result<SuiteReport> {
    if variants.is_empty() || test_projects.is_empty() {
        return Err(Error::EmptyInput("suite needs variants and test projects"));
    }
    let jobs: Vec<(usize, usize)> = (0..test_projects.len())
        .flat_map(|p| (0..variants.len()).map(move |v| (p, v)))
        .collect();
    let reports = jobs
        .par_iter()
        .map(|&(p, v)| {
            let mut cfg = variants[v].config.clone();
            cfg.test_project = test_projects[p].clone();
            let mut report = run_on_datasets(&cfg, datasets)?;
            report.label = variants[v].name.clone();
            Ok(report)
        })
        .collect::<Result<Vec<_>>>()?;
    let mut iter = reports.into_iter();
    let projects = test_projects
        .iter()
        .map(|p| ProjectRuns {
            project: p.clone(),
            reports: iter.by_ref().take(variants.len()).collect(),
        })
        .collect();
    Ok(SuiteReport {
        variants: variants.iter().map(|v| v.name.clone()).collect(),
        projects,
    })
}

impl SuiteReport {
    pub fn report(&self, project: &str, variant: &str) -> Option<&ExperimentReport> {
        self.projects
            .iter()
            .find(|p| p.project == project)
            .and_then(|p| p.get(variant))
    }

    /// Mean over projects of each project's repeat-mean F1, per variant.
    pub fn grand_mean_f1(&self, variant: &str) -> Option<f64> {
        self.grand_mean(variant, |r| r.summary.f1)
    }

    pub fn grand_mean_auc(&self, variant: &str) -> Option<f64> {
        self.grand_mean(variant, |r| r.summary.auc)
    }

    fn grand_mean(&self, variant: &str, f: fn(&ExperimentReport) -> Option<MeanStd>) -> Option<f64> {
        let values: Option<Vec<f64>> = self
            .projects
            .iter()
            .map(|p| p.get(variant).and_then(f).map(|s| s.mean))
            .collect();
        let values = values?;
        (!values.is_empty()).then(|| values.iter().sum::<f64>() / values.len() as f64)
    }

    /// F1 per project and variant with a trailing average row.
    pub fn f1_markdown(&self) -> String {
        let mut out = String::from("| Project |");
        for v in &self.variants {
            let _ = write!(out, " {v} |");
        }
        out.push('\n');
        out.push_str(&"|---".repeat(1 + self.variants.len()));
        out.push_str("|\n");
        for p in &self.projects {
            let _ = write!(out, "| {} |", p.project);
            for v in &self.variants {
                let _ = write!(out, " {} |", fmt_mean(p.get(v).and_then(|r| r.summary.f1)));
            }
            out.push('\n');
        }
        out.push_str("| Avg. |");
        for v in &self.variants {
            let cell = self.grand_mean_f1(v).map(percent).unwrap_or_else(|| "n/a".into());
            let _ = write!(out, " {cell} |");
        }
        out.push('\n');
        out
    }
}

/// Full FedDP, FedDP with uniform teacher weights, and FLR.
pub fn ablation_variants(base: &ExperimentConfig) -> Vec<Variant> {
    let full = ExperimentConfig {
        method: Method::FedDp,
        weighting: Weighting::Correlation,
        ..base.clone()
    };
    let no_factor = ExperimentConfig {
        weighting: Weighting::Uniform,
        ..full.clone()
    };
    let no_distill = ExperimentConfig {
        method: Method::Flr,
        ..full.clone()
    };
    vec![
        Variant {
            name: "FedDP".into(),
            config: full,
        },
        Variant {
            name: "w/o factor".into(),
            config: no_factor,
        },
        Variant {
            name: "w/o factor & distill".into(),
            config: no_distill,
        },
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    ParticipationRatio,
    DistillSteps,
    SampleSize,
}

impl SweepParam {
    pub fn symbol(self) -> &'static str {
        match self {
            SweepParam::ParticipationRatio => "R",
            SweepParam::DistillSteps => "N",
            SweepParam::SampleSize => "p",
        }
    }
}

/// One variant of `base` per swept value, named like `N=5`.
pub fn sweep_variants(base: &ExperimentConfig, param: SweepParam, values: &[f64]) -> Result<Vec<Variant>> {
    values
        .iter()
        .map(|&v| {
            let mut cfg = base.clone();
            match param {
                SweepParam::ParticipationRatio => cfg.participation_ratio = v,
                SweepParam::DistillSteps | SweepParam::SampleSize => {
                    if !(v >= 0.0 && v.fract() == 0.0) {
                        return Err(Error::InvalidConfig(format!(
                            "{} takes non-negative integers, got {v}",
                            param.symbol()
                        )));
                    }
                    if param == SweepParam::DistillSteps {
                        cfg.distill_steps = v as usize;
                    } else {
                        cfg.sample_size = v as usize;
                    }
                }
            }
            cfg.validate()?;
            Ok(Variant {
                name: format!("{}={v}", param.symbol()),
                config: cfg,
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyRow {
    pub label: String,
    /// Per target, the rounds needed by each repeat.
    pub runs: Vec<Vec<RoundsToTarget>>,
    /// Per target, the mean over repeats.
    pub means: Vec<MeanRounds>,
}

/// Rounds needed to stably reach each F1 target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyTable {
    pub project: String,
    pub targets: Vec<f64>,
    pub horizon: usize,
    pub rows: Vec<EfficiencyRow>,
}

pub fn efficiency_table(runs: &ProjectRuns, targets: &[f64]) -> EfficiencyTable {
    let horizon = runs.reports.iter().map(|r| r.config.rounds).max().unwrap_or(0);
    let rows = runs
        .reports
        .iter()
        .map(|r| {
            let per_target: Vec<Vec<RoundsToTarget>> = targets
                .iter()
                .map(|&t| {
                    r.repeats
                        .iter()
                        .map(|rep| {
                            let f1: Vec<f64> = rep.series.iter().map(|m| m.f1).collect();
                            rounds_to_target(&f1, t)
                        })
                        .collect()
                })
                .collect();
            let means = per_target.iter().map(|runs| mean_rounds(runs, r.config.rounds)).collect();
            EfficiencyRow {
                label: r.label.clone(),
                runs: per_target,
                means,
            }
        })
        .collect();
    EfficiencyTable {
        project: runs.project.clone(),
        targets: targets.to_vec(),
        horizon,
        rows,
    }
}

impl EfficiencyTable {
    pub fn to_markdown(&self) -> String {
        let mut out = format!("| {} |", self.project);
        for t in &self.targets {
            let _ = write!(out, " F1 {}% |", format_target(*t));
        }
        out.push('\n');
        out.push_str(&"|---".repeat(1 + self.targets.len()));
        out.push_str("|\n");
        for row in &self.rows {
            let _ = write!(out, "| {} |", row.label);
            for m in &row.means {
                let _ = write!(out, " {m} |");
            }
            out.push('\n');
        }
        out
    }
}

fn format_target(t: f64) -> String {
    format!("{:.1}", t * 100.0)
}
