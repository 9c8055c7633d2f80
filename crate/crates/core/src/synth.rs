//! Synthetic corpora with the project/version layout, instance counts and
//! defect rates of the public Promise and Softlab collections. Feature values
//! are generated, not real; they exist so the pipeline can be exercised
//! end-to-end without the original files.

use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::dataset::{write_project_csv, CsvSchema, Instance, Label, Manifest, ManifestEntry, ProjectDataset};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::seed::{derive, rng_for};

/// Size and defect rate of one project version.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VersionSpec {
    pub project: &'static str,
    pub version: &'static str,
    pub instances: usize,
    /// Percentage with two decimals.
    pub defect_rate_percent: f64,
}

impl VersionSpec {
    const fn new(project: &'static str, version: &'static str, instances: usize, defect_rate_percent: f64) -> Self {
        Self {
            project,
            version,
            instances,
            defect_rate_percent,
        }
    }

    /// Defective instance count closest to the stated rate.
    pub fn defective(&self) -> usize {
        (self.instances as f64 * self.defect_rate_percent / 100.0).round() as usize
    }
}

pub const PROMISE_VERSIONS: [VersionSpec; 25] = [
    VersionSpec::new("ant", "1.6", 351, 26.21),
    VersionSpec::new("ant", "1.7", 745, 22.28),
    VersionSpec::new("camel", "1.4", 872, 16.63),
    VersionSpec::new("camel", "1.6", 965, 19.48),
    VersionSpec::new("jedit", "4.0", 306, 24.51),
    VersionSpec::new("jedit", "4.1", 312, 25.32),
    VersionSpec::new("lucene", "2.2", 247, 58.30),
    VersionSpec::new("lucene", "2.4", 340, 59.70),
    VersionSpec::new("xerces", "1.2", 440, 16.14),
    VersionSpec::new("xerces", "1.3", 453, 15.23),
    VersionSpec::new("velocity", "1.5", 214, 66.35),
    VersionSpec::new("velocity", "1.6", 229, 34.06),
    VersionSpec::new("xalan", "2.5", 803, 48.19),
    VersionSpec::new("xalan", "2.6", 885, 46.44),
    VersionSpec::new("synapse", "1.1", 222, 27.03),
    VersionSpec::new("synapse", "1.2", 256, 33.59),
    VersionSpec::new("log4j", "1.0", 135, 25.18),
    VersionSpec::new("log4j", "1.1", 109, 33.94),
    VersionSpec::new("poi", "2.5", 385, 64.41),
    VersionSpec::new("poi", "3.0", 442, 63.57),
    VersionSpec::new("ivy", "1.4", 241, 6.64),
    VersionSpec::new("ivy", "2.0", 352, 11.36),
    VersionSpec::new("prop6", "", 660, 10.00),
    VersionSpec::new("redaktor", "", 176, 15.34),
    VersionSpec::new("tomcat", "", 858, 8.97),
];

pub const SOFTLAB_VERSIONS: [VersionSpec; 5] = [
    VersionSpec::new("ar1", "", 121, 7.44),
    VersionSpec::new("ar3", "", 63, 12.70),
    VersionSpec::new("ar4", "", 107, 18.69),
    VersionSpec::new("ar5", "", 36, 22.22),
    VersionSpec::new("ar6", "", 101, 14.85),
];

/// Promise projects evaluated as test projects (all but the distillation
/// project `camel`).
pub const PROMISE_TEST_PROJECTS: [&str; 13] = [
    "ant", "jedit", "lucene", "xerces", "velocity", "xalan", "synapse", "log4j", "poi", "ivy", "prop6",
    "redaktor", "tomcat",
];

pub const SOFTLAB_TEST_PROJECTS: [&str; 4] = ["ar3", "ar4", "ar5", "ar6"];

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum MetricKind {
    Count,
    Ratio,
    Real,
}

fn promise_kind(name: &str) -> MetricKind {
    match name {
        "lcom3" | "dam" | "mfa" | "cam" => MetricKind::Ratio,
        "amc" | "avg_cc" => MetricKind::Real,
        _ => MetricKind::Count,
    }
}

fn softlab_kind(name: &str) -> MetricKind {
    if name.contains("density") || name.contains("level") || name.contains("error") || name.starts_with("normalized") {
        MetricKind::Ratio
    } else if name.starts_with("halstead_") && name != "halstead_length" && name != "halstead_vocabulary" {
        MetricKind::Real
    } else {
        MetricKind::Count
    }
}

fn name_tag(name: &str) -> u64 {
    name.bytes().fold(0xcbf2_9ce4_8422_2325, |h, b| (h ^ b as u64).wrapping_mul(0x0100_0000_01b3))
}

/// Generates one dataset per entry of `table`. Projects get their own
/// feature offsets and defect effect sizes, so clients are heterogeneous.
fn generate<T: Scalar>(table: &[VersionSpec], kinds: &[MetricKind], seed: u64) -> Vec<ProjectDataset<T>> {
    let dim = kinds.len();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    let mut global = rng_for(seed, &[name_tag("metrics")]);
    let location: Vec<f64> = (0..dim).map(|_| global.random_range(0.5..4.0)).collect();
    let spread: Vec<f64> = (0..dim).map(|_| global.random_range(0.5..1.2)).collect();
    let effect: Vec<f64> = (0..dim).map(|_| global.random_range(0.2..1.0)).collect();

    table
        .iter()
        .map(|spec| {
            let mut proj = rng_for(seed, &[name_tag(spec.project)]);
            let style: Vec<f64> = (0..dim).map(|_| 0.5 * std.sample(&mut proj)).collect();
            let strength = proj.random_range(0.4..1.2);
            let mut rng = rng_for(seed, &[name_tag(spec.project), name_tag(spec.version)]);
            let jitter: Vec<f64> = (0..dim).map(|_| 0.1 * std.sample(&mut rng)).collect();

            let mut labels = vec![Label::Clean; spec.instances];
            labels[..spec.defective()].fill(Label::Defective);
            labels.shuffle(&mut rng);

            let instances = labels
                .into_iter()
                .map(|label| {
                    let size = std.sample(&mut rng);
                    let shift = if label.is_defective() { strength } else { 0.0 };
                    let features = (0..dim)
                        .map(|j| {
                            let noise = std.sample(&mut rng);
                            let v = location[j] + style[j] + jitter[j]
                                + spread[j] * (0.7 * size + 0.7 * noise)
                                + shift * effect[j];
                            let value = match kinds[j] {
                                MetricKind::Count => (v.exp() - 1.0).round().max(0.0),
                                MetricKind::Ratio => (1.0 / (1.0 + (location[j] - v).exp()) * 1e4).round() / 1e4,
                                MetricKind::Real => (v.exp() * 100.0).round() / 100.0,
                            };
                            T::of(value)
                        })
                        .collect();
                    Instance::new(features, label)
                })
                .collect();
            ProjectDataset::new(spec.project, spec.version, instances).expect("generated data is valid")
        })
        .collect()
}

/// Promise-shaped corpus with the 20 metrics of [`CsvSchema::promise`].
pub fn promise_corpus<T: Scalar>(seed: u64) -> Vec<ProjectDataset<T>> {
    let schema = CsvSchema::promise();
    let kinds: Vec<_> = schema.feature_columns.iter().map(|c| promise_kind(c)).collect();
    generate(&PROMISE_VERSIONS, &kinds, derive(seed, &[name_tag("promise")]))
}

/// Softlab-shaped corpus with the 29 metrics of [`CsvSchema::softlab`].
pub fn softlab_corpus<T: Scalar>(seed: u64) -> Vec<ProjectDataset<T>> {
    let schema = CsvSchema::softlab();
    let kinds: Vec<_> = schema.feature_columns.iter().map(|c| softlab_kind(c)).collect();
    generate(&SOFTLAB_VERSIONS, &kinds, derive(seed, &[name_tag("softlab")]))
}

/// Writes one CSV per dataset plus `manifest.csv` into `dir` and returns the
/// manifest path.
pub fn write_corpus<T: Scalar>(datasets: &[ProjectDataset<T>], schema: &CsvSchema, dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut entries = Vec::with_capacity(datasets.len());
    for d in datasets {
        let path = dir.join(format!("{}.csv", d.name()));
        write_project_csv(d, schema, &path)?;
        entries.push(ManifestEntry {
            path,
            project: d.project().to_string(),
            version: d.version().to_string(),
        });
    }
    let manifest = dir.join("manifest.csv");
    let text = Manifest { entries }.to_text(dir);
    std::fs::write(&manifest, text).map_err(|e| Error::io(&manifest, e))?;
    Ok(manifest)
}
