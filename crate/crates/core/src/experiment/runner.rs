use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::{Manifest, ProjectDataset};
use crate::error::{Error, Result};
use crate::evaluation::{auc, confusion, metrics};
use crate::federation::{ClientId, ClientState, RoundMetrics, ServerState};
use crate::model::{local_train, predict_proba, ModelParams, TrainSpec};
use crate::scalar::Scalar;
use crate::seed::{derive, rng_for, TAG_CENTRAL, TAG_REPEAT};

use super::config::{ExperimentConfig, Method};
use super::report::{ExperimentReport, MetricsReport, RepeatResult, SummaryStats};
use super::scenario::{build_scenario, Scenario, ScenarioSpec};

/// One line of the streamed round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundLogEntry {
    pub test_project: String,
    pub label: String,
    pub repeat: usize,
    pub round: usize,
    pub participants: Vec<ClientId>,
    pub checksum: String,
    pub kl_before: Option<f64>,
    pub kl_after: Option<f64>,
    pub metrics: RoundMetrics,
}

/// Loads every dataset listed in the config's manifest.
pub fn load_datasets<T: Scalar>(cfg: &ExperimentConfig) -> Result<Vec<ProjectDataset<T>>> {
    let path = cfg
        .manifest
        .as_ref()
        .ok_or_else(|| Error::InvalidConfig("config has no manifest".into()))?;
    Manifest::load(path)?.load_datasets(&cfg.csv_schema()?)
}

pub fn scenario_spec(cfg: &ExperimentConfig) -> ScenarioSpec {
    ScenarioSpec {
        test_project: cfg.test_project.clone(),
        distillation_project: cfg.distillation_project.clone(),
        version_order: cfg.version_order,
    }
}

/// Test-set precision, recall, F1 and AUC of `params`.
pub fn evaluate<T: Scalar>(params: &ModelParams<T>, test: &ProjectDataset<T>, threshold: f64) -> Result<RoundMetrics> {
    let scores = test
        .instances()
        .iter()
        .map(|inst| Ok(predict_proba(params, &inst.features)?.defective().as_f64()))
        .collect::<Result<Vec<f64>>>()?;
    let labels: Vec<_> = test.instances().iter().map(|i| i.label).collect();
    let m = metrics(&confusion(&scores, &labels, threshold)?);
    let auc = match auc(&scores, &labels) {
        Ok(a) => Some(a),
        Err(Error::SingleClass) => None,
        Err(e) => return Err(e),
    };
    Ok(RoundMetrics {
        precision: m.precision,
        recall: m.recall,
        f1: m.f1,
        auc,
    })
}

pub fn repeat_seed(master: u64, repeat: usize) -> u64 {
    derive(master, &[TAG_REPEAT, repeat as u64])
}

fn run_federated<T: Scalar>(
    cfg: &ExperimentConfig,
    scenario: &Scenario<T>,
    seed: u64,
    log: &mut Vec<RoundLogEntry>,
    label: &str,
    repeat: usize,
) -> Result<Vec<RoundMetrics>> {
    let round_cfg = cfg
        .round_config::<T>(scenario.distillation.len())
        .expect("federated method");
    let clients = scenario
        .training_clients(seed)?
        .into_iter()
        .enumerate()
        .map(|(id, data)| ClientState::new(id, data))
        .collect();
    let open = (cfg.method != Method::Flr).then(|| scenario.distillation.clone());
    let mut server = ServerState::new(clients, open, seed)?;
    let mut series = Vec::with_capacity(cfg.rounds);
    for _ in 0..cfg.rounds {
        let record = server.run_round(&round_cfg)?;
        let m = evaluate(&server.global, &scenario.test, cfg.threshold)?;
        log.push(RoundLogEntry {
            test_project: scenario.test.project().to_string(),
            label: label.to_string(),
            repeat,
            round: record.round,
            participants: record.participants,
            checksum: record.checksum,
            kl_before: record.kl_before,
            kl_after: record.kl_after,
            metrics: m,
        });
        series.push(m);
    }
    Ok(series)
}

/// Pooled training on the oversampled client data plus the distillation
/// project; each "round" is a block of `local_epochs` epochs.
fn run_centralized<T: Scalar>(
    cfg: &ExperimentConfig,
    scenario: &Scenario<T>,
    seed: u64,
    log: &mut Vec<RoundLogEntry>,
    label: &str,
    repeat: usize,
) -> Result<Vec<RoundMetrics>> {
    let clients = scenario.training_clients(seed)?;
    let pooled = ProjectDataset::concat(
        "pooled",
        "",
        clients.iter().chain(std::iter::once(&scenario.distillation)),
    )?;
    let spec = TrainSpec {
        batch_size: cfg.batch_size,
        ..TrainSpec::plain(T::of(cfg.learning_rate), cfg.local_epochs)
    };
    let mut params = ModelParams::zeros(pooled.dim());
    let mut series = Vec::with_capacity(cfg.rounds);
    for round in 1..=cfg.rounds {
        let mut rng = rng_for(seed, &[TAG_CENTRAL, round as u64]);
        params = local_train(&params, &pooled, &spec, &mut rng)?;
        let m = evaluate(&params, &scenario.test, cfg.threshold)?;
        log.push(RoundLogEntry {
            test_project: scenario.test.project().to_string(),
            label: label.to_string(),
            repeat,
            round,
            participants: Vec::new(),
            checksum: params.checksum(),
            kl_before: None,
            kl_after: None,
            metrics: m,
        });
        series.push(m);
    }
    Ok(series)
}

/// Runs every repeat on a prepared scenario. Repeats execute in parallel;
/// `log` receives the round entries afterwards in (repeat, round) order.
pub fn run_experiment_logged<T: Scalar, F: FnMut(&RoundLogEntry)>(
    cfg: &ExperimentConfig,
    scenario: &Scenario<T>,
    mut log: F,
) -> Result<ExperimentReport> {
    cfg.validate()?;
    let label = cfg.label();
    let runs = (0..cfg.repeats)
        .into_par_iter()
        .map(|repeat| {
            let seed = repeat_seed(cfg.seed, repeat);
            let mut entries = Vec::with_capacity(cfg.rounds);
            let series = match cfg.method {
                Method::Centralized => run_centralized(cfg, scenario, seed, &mut entries, &label, repeat)?,
                _ => run_federated(cfg, scenario, seed, &mut entries, &label, repeat)?,
            };
            let metrics = MetricsReport::from_window(&series, cfg.window).expect("rounds >= 1");
            Ok((
                RepeatResult {
                    repeat,
                    seed,
                    metrics,
                    series,
                },
                entries,
            ))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut repeats = Vec::with_capacity(runs.len());
    for (result, entries) in runs {
        entries.iter().for_each(&mut log);
        repeats.push(result);
    }
    Ok(ExperimentReport {
        label,
        method: cfg.method,
        test_project: scenario.test.project().to_string(),
        test_version: scenario.test.version().to_string(),
        clients: scenario.client_names(),
        config: cfg.clone(),
        summary: SummaryStats::of(&repeats),
        repeats,
        significance: Vec::new(),
    })
}

pub fn run_experiment<T: Scalar>(cfg: &ExperimentConfig, scenario: &Scenario<T>) -> Result<ExperimentReport> {
    run_experiment_logged(cfg, scenario, |_| {})
}

/// Builds the scenario from `datasets` and runs the experiment.
pub fn run_on_datasets<T: Scalar>(cfg: &ExperimentConfig, datasets: &[ProjectDataset<T>]) -> Result<ExperimentReport> {
    let scenario = build_scenario(&scenario_spec(cfg), datasets)?;
    run_experiment(cfg, &scenario)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Instance, Label};
    use crate::experiment::config::{Algorithm, VersionOrder};
    use crate::federation::Weighting;
    use rand::Rng;

    fn toy(project: &str, version: &str, n: usize, shift: f64, seed: u64) -> ProjectDataset<f64> {
        let mut rng = rng_for(seed, &[]);
        let instances = (0..n)
            .map(|i| {
                let defective = i % 4 == 0;
                let center = if defective { 3.0 } else { 1.0 } + shift;
                let x = (0..3).map(|_| center + rng.random_range(-1.0..1.0)).collect();
                Instance::new(x, if defective { Label::Defective } else { Label::Clean })
            })
            .collect();
        ProjectDataset::new(project, version, instances).unwrap()
    }

    fn corpus() -> Vec<ProjectDataset<f64>> {
        vec![
            toy("a", "1", 40, 0.0, 1),
            toy("a", "2", 48, 0.1, 2),
            toy("b", "1", 36, 0.3, 3),
            toy("c", "1", 44, -0.2, 4),
            toy("d", "1", 30, 0.5, 5),
            toy("open", "1", 60, 0.0, 6),
        ]
    }

    fn cfg(method: Method) -> ExperimentConfig {
        ExperimentConfig {
            test_project: "a".into(),
            distillation_project: "open".into(),
            method,
            local_epochs: 2,
            rounds: 6,
            distill_steps: 3,
            sample_size: 40,
            learning_rate: 0.05,
            repeats: 3,
            window: 3,
            version_order: VersionOrder::Manifest,
            ..ExperimentConfig::default()
        }
    }

    #[test]
    fn feddp_without_distillation_matches_flr() {
        let data = corpus();
        let mut feddp = cfg(Method::FedDp);
        feddp.distill_steps = 0;
        let a = run_on_datasets(&feddp, &data).unwrap();
        let b = run_on_datasets(&cfg(Method::Flr), &data).unwrap();
        assert_eq!(a.repeats, b.repeats);
        assert_eq!(a.summary, b.summary);
    }

    #[test]
    fn openflr_with_zero_server_rate_matches_flr() {
        let data = corpus();
        let mut open = cfg(Method::OpenFlr);
        open.server_learning_rate = Some(0.0);
        let a = run_on_datasets(&open, &data).unwrap();
        let b = run_on_datasets(&cfg(Method::Flr), &data).unwrap();
        assert_eq!(a.repeats, b.repeats);
    }

    #[test]
    fn runs_are_bit_identical() {
        let data = corpus();
        for method in [Method::Centralized, Method::Flr, Method::OpenFlr, Method::FedDp] {
            let a = run_on_datasets(&cfg(method), &data).unwrap();
            let b = run_on_datasets(&cfg(method), &data).unwrap();
            assert_eq!(a.to_json(), b.to_json());
            assert_eq!(a.repeats.len(), 3);
            assert!(a.repeats.iter().all(|r| r.series.len() == 6));
        }
    }

    #[test]
    fn repeats_differ_and_summary_is_their_mean() {
        let r = run_on_datasets(&cfg(Method::FedDp), &corpus()).unwrap();
        assert_ne!(r.repeats[0].series, r.repeats[1].series);
        let mean = r.repeats.iter().map(|x| x.metrics.f1).sum::<f64>() / 3.0;
        assert!((r.summary.f1.unwrap().mean - mean).abs() < 1e-12);
        assert_eq!(r.test_version, "2");
        assert_eq!(r.clients, vec!["b-1", "c-1", "d-1"]);
    }

    #[test]
    fn log_is_ordered_by_repeat_then_round() {
        let mut seen = Vec::new();
        let c = cfg(Method::FedDp);
        let scenario = build_scenario(&scenario_spec(&c), &corpus()).unwrap();
        let report = run_experiment_logged(&c, &scenario, |e| seen.push((e.repeat, e.round, e.metrics))).unwrap();
        let expected: Vec<_> = (0..3).flat_map(|r| (1..=6).map(move |k| (r, k))).collect();
        assert_eq!(seen.iter().map(|(r, k, _)| (*r, *k)).collect::<Vec<_>>(), expected);
        assert_eq!(seen[7].2, report.repeats[1].series[1]);
    }

    #[test]
    fn learns_the_toy_problem() {
        for method in [Method::Centralized, Method::FedDp] {
            let mut c = cfg(method);
            c.rounds = 15;
            c.learning_rate = 0.5;
            c.server_learning_rate = Some(0.5);
            let r = run_on_datasets(&c, &corpus()).unwrap();
            assert!(r.summary.auc.unwrap().mean > 0.9, "{method:?}: {:?}", r.summary);
        }
    }

    #[test]
    fn variants_change_results() {
        let scenario = build_scenario(&scenario_spec(&cfg(Method::FedDp)), &corpus()).unwrap();
        let checksums = |c: &ExperimentConfig| {
            let mut sums = Vec::new();
            run_experiment_logged(c, &scenario, |e| sums.push(e.checksum.clone())).unwrap();
            sums
        };
        let full = checksums(&cfg(Method::FedDp));
        let mut uniform = cfg(Method::FedDp);
        uniform.weighting = Weighting::Uniform;
        let mut avg = cfg(Method::FedDp);
        avg.algorithm = Algorithm::FedAvg;
        assert_ne!(full, checksums(&uniform));
        assert_ne!(full, checksums(&avg));
        assert_eq!(uniform.label(), "FedDP/FedProx w/o factor");
    }

    #[test]
    fn f32_pipeline_runs() {
        let data: Vec<ProjectDataset<f32>> = corpus()
            .iter()
            .map(|d| {
                let inst = d
                    .instances()
                    .iter()
                    .map(|i| Instance::new(i.features.iter().map(|&v| v as f32).collect(), i.label))
                    .collect();
                ProjectDataset::new(d.project(), d.version(), inst).unwrap()
            })
            .collect();
        let r = run_on_datasets(&cfg(Method::FedDp), &data).unwrap();
        assert!(r.summary.f1.is_some());
    }
}
