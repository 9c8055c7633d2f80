use serde::{Deserialize, Serialize};

use crate::dataset::{compute_norm_stats, normalize, oversample, NormStats, ProjectDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{rng_for, TAG_OVERSAMPLE};

use super::config::VersionOrder;

/// Which projects play the test and distillation roles.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    pub test_project: String,
    pub distillation_project: String,
    pub version_order: VersionOrder,
}

/// Normalized partitions for one test project. Client data is not yet
/// oversampled; see [`Scenario::training_clients`].
#[derive(Debug, Clone)]
pub struct Scenario<T> {
    pub clients: Vec<ProjectDataset<T>>,
    pub distillation: ProjectDataset<T>,
    pub test: ProjectDataset<T>,
    pub norm_stats: NormStats<T>,
}

fn parse_version(v: &str) -> Option<Vec<u64>> {
    v.split('.').map(|p| p.trim().parse().ok()).collect()
}

/// Index of the latest version of `project` among `datasets`.
fn latest_index<T: Scalar>(datasets: &[ProjectDataset<T>], project: &str, order: VersionOrder) -> Option<usize> {
    let versions: Vec<usize> = (0..datasets.len())
        .filter(|&i| datasets[i].project() == project)
        .collect();
    let by_manifest = versions.last().copied();
    match order {
        VersionOrder::Manifest => by_manifest,
        VersionOrder::Numeric => {
            let parsed: Option<Vec<(Vec<u64>, usize)>> = versions
                .iter()
                .map(|&i| parse_version(datasets[i].version()).map(|v| (v, i)))
                .collect();
            match parsed {
                // Later manifest entries win ties.
                Some(p) => p.into_iter().max().map(|(_, i)| i),
                None => by_manifest,
            }
        }
    }
}

pub fn build_scenario<T: Scalar>(spec: &ScenarioSpec, datasets: &[ProjectDataset<T>]) -> Result<Scenario<T>> {
    if spec.test_project == spec.distillation_project {
        return Err(Error::TestEqualsDistillation(spec.test_project.clone()));
    }
    let test_idx = latest_index(datasets, &spec.test_project, spec.version_order)
        .ok_or_else(|| Error::UnknownProject(spec.test_project.clone()))?;
    let distill_parts: Vec<&ProjectDataset<T>> = datasets
        .iter()
        .filter(|d| d.project() == spec.distillation_project)
        .collect();
    if distill_parts.is_empty() {
        return Err(Error::UnknownProject(spec.distillation_project.clone()));
    }
    let raw_distillation = ProjectDataset::concat(
        &spec.distillation_project,
        "",
        distill_parts.iter().copied(),
    )?;
    let norm_stats = compute_norm_stats(&raw_distillation);
    let distillation = normalize(&raw_distillation, &norm_stats)?;
    let test = normalize(&datasets[test_idx], &norm_stats)?;
    let clients = datasets
        .iter()
        .filter(|d| d.project() != spec.test_project && d.project() != spec.distillation_project)
        .map(|d| normalize(d, &norm_stats))
        .collect::<Result<Vec<_>>>()?;
    if clients.is_empty() {
        return Err(Error::EmptyInput("no client projects remain after exclusion"));
    }
    Ok(Scenario {
        clients,
        distillation,
        test,
        norm_stats,
    })
}

impl<T: Scalar> Scenario<T> {
    /// Client data oversampled to class parity with a repeat-specific seed.
    /// Clients holding a single class are kept as they are.
    pub fn training_clients(&self, repeat_seed: u64) -> Result<Vec<ProjectDataset<T>>> {
        self.clients
            .iter()
            .enumerate()
            .map(|(i, c)| {
                let (clean, defective) = c.class_counts();
                if clean == 0 || defective == 0 {
                    return Ok(c.clone());
                }
                let mut rng = rng_for(repeat_seed, &[TAG_OVERSAMPLE, i as u64]);
                oversample(c, &mut rng)
            })
            .collect()
    }

    pub fn client_names(&self) -> Vec<String> {
        self.clients.iter().map(ProjectDataset::name).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Instance, Label};

    fn ds(project: &str, version: &str, n: usize, offset: f64) -> ProjectDataset<f64> {
        let instances = (0..n)
            .map(|i| {
                let label = if i % 3 == 0 { Label::Defective } else { Label::Clean };
                Instance::new(vec![offset + i as f64, 2.0 * i as f64], label)
            })
            .collect();
        ProjectDataset::new(project, version, instances).unwrap()
    }

    fn corpus() -> Vec<ProjectDataset<f64>> {
        vec![
            ds("ant", "1.6", 9, 0.0),
            ds("ant", "1.7", 12, 1.0),
            ds("camel", "1.4", 10, 2.0),
            ds("camel", "1.6", 11, 3.0),
            ds("ivy", "1.4", 6, 4.0),
            ds("ivy", "2.0", 7, 5.0),
            ds("tomcat", "", 8, 6.0),
        ]
    }

    fn spec(test: &str, distill: &str) -> ScenarioSpec {
        ScenarioSpec {
            test_project: test.into(),
            distillation_project: distill.into(),
            version_order: VersionOrder::Manifest,
        }
    }

    #[test]
    fn excludes_test_and_distillation_projects() {
        let s = build_scenario(&spec("ant", "camel"), &corpus()).unwrap();
        assert_eq!(s.client_names(), vec!["ivy-1.4", "ivy-2.0", "tomcat"]);
        assert_eq!(s.test.name(), "ant-1.7");
        assert_eq!(s.distillation.len(), 21);
    }

    #[test]
    fn single_version_test_project() {
        let s = build_scenario(&spec("tomcat", "camel"), &corpus()).unwrap();
        assert_eq!(s.test.name(), "tomcat");
        assert!(s.clients.iter().all(|c| c.project() != "tomcat"));
        assert_eq!(s.clients.len(), 4);
    }

    #[test]
    fn errors() {
        assert!(matches!(build_scenario(&spec("nope", "camel"), &corpus()), Err(Error::UnknownProject(_))));
        assert!(matches!(build_scenario(&spec("ant", "nope"), &corpus()), Err(Error::UnknownProject(_))));
        assert!(matches!(
            build_scenario(&spec("ant", "ant"), &corpus()),
            Err(Error::TestEqualsDistillation(_))
        ));
    }

    #[test]
    fn numeric_order_picks_highest_version() {
        let mut data = corpus();
        data.swap(0, 1);
        let mut sp = spec("ant", "camel");
        assert_eq!(build_scenario(&sp, &data).unwrap().test.name(), "ant-1.6");
        sp.version_order = VersionOrder::Numeric;
        assert_eq!(build_scenario(&sp, &data).unwrap().test.name(), "ant-1.7");
        let mut odd = corpus();
        odd.push(ds("ant", "final", 5, 0.0));
        assert_eq!(build_scenario(&sp, &odd).unwrap().test.name(), "ant-final");
        assert_eq!(parse_version("1.10"), Some(vec![1, 10]));
    }

    #[test]
    fn scaling_uses_distillation_stats() {
        let s = build_scenario(&spec("ant", "camel"), &corpus()).unwrap();
        for inst in s.distillation.instances() {
            assert!(inst.features.iter().all(|v| (0.0..=1.0).contains(v)));
        }
        assert_eq!(s.norm_stats.min, vec![2.0, 0.0]);
        assert_eq!(s.norm_stats.max, vec![13.0, 20.0]);
    }

    #[test]
    fn oversampling_balances_every_client_and_depends_on_seed() {
        let s = build_scenario(&spec("ant", "camel"), &corpus()).unwrap();
        let a = s.training_clients(1).unwrap();
        for c in &a {
            let (clean, defective) = c.class_counts();
            assert_eq!(clean, defective);
        }
        assert_eq!(a, s.training_clients(1).unwrap());
        assert_ne!(a, s.training_clients(2).unwrap());
    }
}
