//! Project-version defect data: CSV ingestion, class balancing, min-max
//! scaling, Non-IID categorization and the cosine similarity primitive.

use std::collections::HashMap;
use std::fmt;
use std::path::{Path, PathBuf};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Clean = 0,
    Defective = 1,
}

impl Label {
    /// Binarizes a raw bug count: any positive count is a defect.
    pub fn from_bug_count(count: f64) -> Self {
        if count > 0.0 {
            Label::Defective
        } else {
            Label::Clean
        }
    }

    pub fn is_defective(self) -> bool {
        self == Label::Defective
    }

    pub fn as_scalar<T: Scalar>(self) -> T {
        if self.is_defective() {
            T::one()
        } else {
            T::zero()
        }
    }
}

/// One software module: its static code metrics and defect label.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Instance<T> {
    pub features: Vec<T>,
    pub label: Label,
}

impl<T: Scalar> Instance<T> {
    pub fn new(features: Vec<T>, label: Label) -> Self {
        Self { features, label }
    }
}

/// All modules of one project version.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProjectDataset<T> {
    project: String,
    version: String,
    dim: usize,
    instances: Vec<Instance<T>>,
}

impl<T: Scalar> ProjectDataset<T> {
    /// Validates that the instance list is non-empty, rectangular and finite.
    pub fn new(
        project: impl Into<String>,
        version: impl Into<String>,
        instances: Vec<Instance<T>>,
    ) -> Result<Self> {
        let first = instances
            .first()
            .ok_or(Error::EmptyInput("project dataset"))?;
        let dim = first.features.len();
        for inst in &instances {
            check_dim(dim, inst.features.len())?;
            if inst.features.iter().any(|v| !v.is_finite()) {
                return Err(Error::InvalidConfig(
                    "feature values must be finite".to_string(),
                ));
            }
        }
        Ok(Self {
            project: project.into(),
            version: version.into(),
            dim,
            instances,
        })
    }

    pub fn project(&self) -> &str {
        &self.project
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    /// `project-version`, or just the project name for single-version projects.
    pub fn name(&self) -> String {
        if self.version.is_empty() {
            self.project.clone()
        } else {
            format!("{}-{}", self.project, self.version)
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn instances(&self) -> &[Instance<T>] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<Instance<T>> {
        self.instances
    }

    /// (clean, defective) counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let defective = self
            .instances
            .iter()
            .filter(|i| i.label.is_defective())
            .count();
        (self.len() - defective, defective)
    }

    pub fn defect_rate(&self) -> f64 {
        self.class_counts().1 as f64 / self.len() as f64
    }

    /// Concatenates datasets of equal dimensionality under a new name.
    pub fn concat<'a>(
        project: impl Into<String>,
        version: impl Into<String>,
        parts: impl IntoIterator<Item = &'a ProjectDataset<T>>,
    ) -> Result<Self> {
        let instances = parts
            .into_iter()
            .flat_map(|p| p.instances.iter().cloned())
            .collect();
        Self::new(project, version, instances)
    }
}

/// Column mapping for a defect-data CSV file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CsvSchema {
    pub label_column: String,
    pub feature_columns: Vec<String>,
}

pub const PROMISE_METRICS: [&str; 20] = [
    "wmc", "dit", "noc", "cbo", "rfc", "lcom", "ca", "ce", "npm", "lcom3", "loc", "dam", "moa",
    "mfa", "cam", "ic", "cbm", "amc", "max_cc", "avg_cc",
];

pub const SOFTLAB_METRICS: [&str; 29] = [
    "total_loc",
    "blank_loc",
    "comment_loc",
    "code_and_comment_loc",
    "executable_loc",
    "unique_operands",
    "unique_operators",
    "total_operands",
    "total_operators",
    "halstead_vocabulary",
    "halstead_length",
    "halstead_volume",
    "halstead_level",
    "halstead_difficulty",
    "halstead_effort",
    "halstead_error",
    "halstead_time",
    "branch_count",
    "decision_count",
    "call_pairs",
    "condition_count",
    "multiple_condition_count",
    "cyclomatic_complexity",
    "cyclomatic_density",
    "decision_density",
    "design_complexity",
    "design_density",
    "normalized_cyclomatic_complexity",
    "formal_parameters",
];

impl CsvSchema {
    pub fn new(label_column: impl Into<String>, feature_columns: Vec<String>) -> Self {
        Self {
            label_column: label_column.into(),
            feature_columns,
        }
    }

    /// 20 CK/OO metrics with a `bug` count column.
    pub fn promise() -> Self {
        Self::new("bug", PROMISE_METRICS.iter().map(|s| s.to_string()).collect())
    }

    /// 29 Halstead/McCabe metrics with a `defects` column.
    pub fn softlab() -> Self {
        Self::new(
            "defects",
            SOFTLAB_METRICS.iter().map(|s| s.to_string()).collect(),
        )
    }

    pub fn preset(name: &str) -> Option<Self> {
        match name {
            "promise" => Some(Self::promise()),
            "softlab" => Some(Self::softlab()),
            _ => None,
        }
    }
}

fn parse_label(raw: &str) -> Option<Label> {
    let trimmed = raw.trim();
    if let Ok(count) = trimmed.parse::<f64>() {
        return count.is_finite().then(|| Label::from_bug_count(count));
    }
    match trimmed.to_ascii_lowercase().as_str() {
        "true" | "yes" | "y" => Some(Label::Defective),
        "false" | "no" | "n" => Some(Label::Clean),
        _ => None,
    }
}

/// Reads one project version. Header names are matched exactly after trimming;
/// the first occurrence wins when a header repeats.
pub fn load_project_csv<T: Scalar>(
    path: &Path,
    schema: &CsvSchema,
    project: &str,
    version: &str,
) -> Result<ProjectDataset<T>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_reader(file);
    let headers = reader.headers()?.clone();
    let find = |name: &str| {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::MissingColumn {
                column: name.to_string(),
                path: path.to_path_buf(),
            })
    };
    let label_idx = find(&schema.label_column)?;
    let feature_idx = schema
        .feature_columns
        .iter()
        .map(|c| find(c))
        .collect::<Result<Vec<_>>>()?;

    let mut instances = Vec::new();
    for (row, record) in reader.records().enumerate() {
        let record = record?;
        let cell = |idx: usize| record.get(idx).unwrap_or("");
        let mut features = Vec::with_capacity(feature_idx.len());
        for (&idx, name) in feature_idx.iter().zip(&schema.feature_columns) {
            let raw = cell(idx);
            let value = raw
                .parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::NonNumericCell {
                    row: row + 1,
                    column: name.clone(),
                    value: raw.to_string(),
                })?;
            features.push(T::of(value));
        }
        let raw_label = cell(label_idx);
        let label = parse_label(raw_label).ok_or_else(|| Error::NonNumericCell {
            row: row + 1,
            column: schema.label_column.clone(),
            value: raw_label.to_string(),
        })?;
        instances.push(Instance::new(features, label));
    }
    if instances.is_empty() {
        return Err(Error::EmptyFile(path.to_path_buf()));
    }
    ProjectDataset::new(project, version, instances)
}

/// Writes a dataset under `schema`, labels as binarized 0/1 counts.
pub fn write_project_csv<T: Scalar>(
    data: &ProjectDataset<T>,
    schema: &CsvSchema,
    path: &Path,
) -> Result<()> {
    check_dim(data.dim(), schema.feature_columns.len())?;
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let mut writer = csv::Writer::from_writer(file);
    let mut header: Vec<&str> = schema.feature_columns.iter().map(String::as_str).collect();
    header.push(&schema.label_column);
    writer.write_record(&header)?;
    for inst in data.instances() {
        let mut row: Vec<String> = inst.features.iter().map(|v| v.to_string()).collect();
        row.push((inst.label as u8).to_string());
        writer.write_record(&row)?;
    }
    writer.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// One manifest line: where a project version lives and what it is called.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub path: PathBuf,
    pub project: String,
    pub version: String,
}

/// Ordered list of project versions. Within a project, later lines are newer.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    /// Parses `path,project,version` lines. `#` starts a comment, the version
    /// may be omitted, an optional `path,project,version` header is skipped and
    /// relative paths resolve against the manifest's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        Self::parse(&text, base)
    }

    pub fn parse(text: &str, base: &Path) -> Result<Self> {
        let mut entries = Vec::new();
        let mut reader = csv::ReaderBuilder::new()
            .has_headers(false)
            .flexible(true)
            .trim(csv::Trim::All)
            .comment(Some(b'#'))
            .from_reader(text.as_bytes());
        for record in reader.records() {
            let record = record?;
            let fields: Vec<&str> = record.iter().collect();
            if fields.iter().all(|f| f.is_empty()) {
                continue;
            }
            if fields.first() == Some(&"path") && fields.get(1) == Some(&"project") {
                continue;
            }
            if fields.len() < 2 || fields[0].is_empty() || fields[1].is_empty() {
                return Err(Error::InvalidConfig(format!(
                    "manifest line needs `path,project[,version]`: {fields:?}"
                )));
            }
            let raw = PathBuf::from(fields[0]);
            entries.push(ManifestEntry {
                path: if raw.is_absolute() { raw } else { base.join(raw) },
                project: fields[1].to_string(),
                version: fields.get(2).copied().unwrap_or("").to_string(),
            });
        }
        Ok(Self { entries })
    }

    pub fn to_text(&self, base: &Path) -> String {
        let mut out = String::from("path,project,version\n");
        for e in &self.entries {
            let shown = e.path.strip_prefix(base).unwrap_or(&e.path);
            out.push_str(&format!("{},{},{}\n", shown.display(), e.project, e.version));
        }
        out
    }

    pub fn load_datasets<T: Scalar>(&self, schema: &CsvSchema) -> Result<Vec<ProjectDataset<T>>> {
        self.entries
            .iter()
            .map(|e| load_project_csv(&e.path, schema, &e.project, &e.version))
            .collect()
    }
}

/// Random oversampling of the minority class to parity. The input order is
/// kept and the sampled duplicates are appended.
pub fn oversample<T: Scalar, R: Rng + ?Sized>(
    data: &ProjectDataset<T>,
    rng: &mut R,
) -> Result<ProjectDataset<T>> {
    let (clean, defective) = data.class_counts();
    if clean == 0 || defective == 0 {
        return Err(Error::SingleClassDataset(data.name()));
    }
    let minority_label = if defective < clean {
        Label::Defective
    } else {
        Label::Clean
    };
    let minority: Vec<usize> = data
        .instances
        .iter()
        .enumerate()
        .filter(|(_, inst)| inst.label == minority_label)
        .map(|(i, _)| i)
        .collect();
    let deficit = clean.abs_diff(defective);
    let mut instances = data.instances.clone();
    instances.reserve(deficit);
    for _ in 0..deficit {
        let pick = minority[rng.random_range(0..minority.len())];
        instances.push(data.instances[pick].clone());
    }
    Ok(ProjectDataset {
        instances,
        ..data.clone_header()
    })
}

impl<T: Scalar> ProjectDataset<T> {
    fn clone_header(&self) -> Self {
        Self {
            project: self.project.clone(),
            version: self.version.clone(),
            dim: self.dim,
            instances: Vec::new(),
        }
    }
}

/// Per-feature range used for min-max scaling.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats<T> {
    pub min: Vec<T>,
    pub max: Vec<T>,
}

pub fn compute_norm_stats<T: Scalar>(data: &ProjectDataset<T>) -> NormStats<T> {
    let first = &data.instances[0].features;
    let mut min = first.clone();
    let mut max = first.clone();
    for inst in &data.instances[1..] {
        for (j, &v) in inst.features.iter().enumerate() {
            min[j] = min[j].min(v);
            max[j] = max[j].max(v);
        }
    }
    NormStats { min, max }
}

impl<T: Scalar> NormStats<T> {
    pub fn dim(&self) -> usize {
        self.min.len()
    }

    /// Maps a vector into `[0, 1]^d`; constant features map to 0.
    pub fn scale(&self, x: &[T]) -> Result<Vec<T>> {
        check_dim(self.dim(), x.len())?;
        Ok(x.iter()
            .zip(self.min.iter().zip(&self.max))
            .map(|(&v, (&lo, &hi))| {
                if hi > lo {
                    ((v - lo) / (hi - lo)).max(T::zero()).min(T::one())
                } else {
                    T::zero()
                }
            })
            .collect())
    }
}

pub fn normalize<T: Scalar>(
    data: &ProjectDataset<T>,
    stats: &NormStats<T>,
) -> Result<ProjectDataset<T>> {
    check_dim(stats.dim(), data.dim())?;
    let instances = data
        .instances
        .iter()
        .map(|inst| Ok(Instance::new(stats.scale(&inst.features)?, inst.label)))
        .collect::<Result<Vec<_>>>()?;
    Ok(ProjectDataset {
        instances,
        ..data.clone_header()
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Level {
    L,
    M,
    H,
}

impl Level {
    pub fn letter(self) -> char {
        match self {
            Level::L => 'L',
            Level::M => 'M',
            Level::H => 'H',
        }
    }
}

/// Scale x balance cell of the Non-IID grid.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct DistributionCategory {
    pub scale: Level,
    pub balance: Level,
}

impl DistributionCategory {
    pub fn code(&self) -> String {
        format!("{}{}", self.scale.letter(), self.balance.letter())
    }
}

impl fmt::Display for DistributionCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}{}", self.scale.letter(), self.balance.letter())
    }
}

pub const SCALE_THRESHOLDS: (f64, f64) = (0.5, 1.5);
pub const BALANCE_THRESHOLDS: (f64, f64) = (0.1667, 0.3333);

fn level(value: f64, (low, high): (f64, f64)) -> Level {
    if value < low {
        Level::L
    } else if value <= high {
        Level::M
    } else {
        Level::H
    }
}

/// Classifies a client by size relative to `ideal` and by its raw defect rate.
/// Threshold values themselves fall into the middle level.
pub fn categorize(instances: usize, ideal: f64, defect_rate: f64) -> DistributionCategory {
    assert!(ideal > 0.0, "ideal client size must be positive");
    DistributionCategory {
        scale: level(instances as f64 / ideal, SCALE_THRESHOLDS),
        balance: level(defect_rate, BALANCE_THRESHOLDS),
    }
}

/// Categorizes every dataset against the mean size of the group.
pub fn categorize_clients<T: Scalar>(
    clients: &[ProjectDataset<T>],
) -> HashMap<String, DistributionCategory> {
    let total: usize = clients.iter().map(ProjectDataset::len).sum();
    let ideal = total as f64 / clients.len().max(1) as f64;
    clients
        .iter()
        .map(|c| (c.name(), categorize(c.len(), ideal, c.defect_rate())))
        .collect()
}

pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter().zip(b).map(|(&x, &y)| x * y).sum()
}

pub fn norm<T: Scalar>(a: &[T]) -> T {
    dot(a, a).sqrt()
}

pub fn cosine_similarity<T: Scalar>(a: &[T], b: &[T]) -> Result<T> {
    check_dim(a.len(), b.len())?;
    let (na, nb) = (norm(a), norm(b));
    if na == T::zero() || nb == T::zero() {
        return Err(Error::ZeroVector);
    }
    // Rounding can push colinear pairs a hair past 1.
    Ok((dot(a, b) / (na * nb)).max(-T::one()).min(T::one()))
}
