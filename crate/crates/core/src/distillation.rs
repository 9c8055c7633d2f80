//! Server-side ensemble distillation guided by per-client correlation factors.
//!
//! Each client scores every open-source sample by its mean cosine similarity
//! to the client's local data. For a sample, the participating clients'
//! scores are normalized into ensemble weights, the weighted mixture of the
//! local models' soft predictions becomes the teacher, and the aggregated
//! global model is pulled toward that teacher by gradient descent on
//! `KL(teacher || student)`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::dataset::{norm, dot, ProjectDataset};
use crate::error::{check_dim, Error, Result};
use crate::federation::ClientId;
use crate::model::{kd_grad, kl_div, predict_proba, ModelParams, SoftPrediction};
use crate::scalar::Scalar;

/// Mean cosine similarity between each distillation sample and the local
/// instances. Pairs involving a zero vector count as similarity 0.
pub fn compute_correlation_factors<T: Scalar>(
    local: &ProjectDataset<T>,
    distill: &ProjectDataset<T>,
) -> Result<Vec<T>> {
    check_dim(local.dim(), distill.dim())?;
    let local_norms: Vec<T> = local.instances().iter().map(|i| norm(&i.features)).collect();
    let count = T::of(local.len() as f64);
    let factors = distill
        .instances()
        .iter()
        .map(|sample| {
            let sample_norm = norm(&sample.features);
            if sample_norm == T::zero() {
                return T::zero();
            }
            let total: T = local
                .instances()
                .iter()
                .zip(&local_norms)
                .map(|(inst, &n)| {
                    if n == T::zero() {
                        T::zero()
                    } else {
                        (dot(&sample.features, &inst.features) / (sample_norm * n))
                            .max(-T::one())
                            .min(T::one())
                    }
                })
                .sum();
            total / count
        })
        .collect();
    Ok(factors)
}

/// Correlation factors of a set of clients over one distillation dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationMatrix<T> {
    clients: Vec<ClientId>,
    rows: Vec<Arc<[T]>>,
    samples: usize,
}

impl<T: Scalar> CorrelationMatrix<T> {
    pub fn new(rows: Vec<(ClientId, Arc<[T]>)>) -> Result<Self> {
        let samples = rows
            .first()
            .map(|(_, r)| r.len())
            .ok_or(Error::EmptyInput("correlation matrix"))?;
        for (_, row) in &rows {
            check_dim(samples, row.len())?;
            if row.iter().any(|&c| !(c >= -T::one() && c <= T::one())) {
                return Err(Error::InvalidConfig(
                    "correlation factors must lie in [-1, 1]".into(),
                ));
            }
        }
        let (clients, rows) = rows.into_iter().unzip();
        Ok(Self {
            clients,
            rows,
            samples,
        })
    }

    pub fn clients(&self) -> &[ClientId] {
        &self.clients
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn get(&self, client: ClientId, sample: usize) -> Option<T> {
        let pos = self.clients.iter().position(|&c| c == client)?;
        self.rows[pos].get(sample).copied()
    }
}

/// Per-sample ensemble weights of the participating clients.
///
/// Negative correlations are floored at zero; if every participant floors to
/// zero the weights fall back to uniform.
pub fn normalize_weights<T: Scalar>(
    factors: &CorrelationMatrix<T>,
    sample: usize,
    participants: &[ClientId],
) -> Result<Vec<T>> {
    if participants.is_empty() {
        return Err(Error::EmptyInput("participants"));
    }
    let floored = participants
        .iter()
        .map(|&k| {
            factors
                .get(k, sample)
                .map(|c| c.max(T::zero()))
                .ok_or_else(|| {
                    Error::InvalidConfig(format!("no correlation for client {k}, sample {sample}"))
                })
        })
        .collect::<Result<Vec<T>>>()?;
    let total: T = floored.iter().copied().sum();
    if total > T::zero() {
        Ok(floored.into_iter().map(|c| c / total).collect())
    } else {
        Ok(uniform_weights(participants.len()))
    }
}

pub fn uniform_weights<T: Scalar>(count: usize) -> Vec<T> {
    vec![T::one() / T::of(count as f64); count]
}

/// Convex combination of the local models' soft predictions at `x`.
pub fn ensemble_teacher<T: Scalar>(
    locals: &[ModelParams<T>],
    weights: &[T],
    x: &[T],
) -> Result<SoftPrediction<T>> {
    if locals.is_empty() {
        return Err(Error::EmptyInput("local models"));
    }
    if locals.len() != weights.len() {
        return Err(Error::LengthMismatch {
            left: locals.len(),
            right: weights.len(),
        });
    }
    let mut defective = T::zero();
    for (model, &w) in locals.iter().zip(weights) {
        defective = defective + w * predict_proba(model, x)?.defective();
    }
    Ok(SoftPrediction::from_defective(defective.max(T::zero()).min(T::one())))
}

/// How the ensemble weights are chosen for each distillation sample.
#[derive(Debug, Clone, Copy)]
pub enum TeacherWeights<'a, T> {
    /// Normalized correlation factors; rows must follow the order of `locals`.
    Correlation(&'a CorrelationMatrix<T>),
    /// Equal weight for every participant (the no-factor ablation).
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DistillOutcome<T> {
    pub params: ModelParams<T>,
    /// Mean subset `KL(teacher || student)` before the first step.
    pub kl_before: T,
    /// Same quantity for the returned model.
    pub kl_after: T,
}

/// Builds one teacher per subset sample. Local models are frozen during
/// distillation, so these are reused across every step.
pub fn build_teachers<T: Scalar>(
    locals: &[ModelParams<T>],
    weighting: TeacherWeights<'_, T>,
    data: &ProjectDataset<T>,
    subset: &[usize],
) -> Result<Vec<SoftPrediction<T>>> {
    let uniform = uniform_weights(locals.len());
    subset
        .iter()
        .map(|&i| {
            let x = &data
                .instances()
                .get(i)
                .ok_or(Error::LengthMismatch {
                    left: i,
                    right: data.len(),
                })?
                .features;
            match weighting {
                TeacherWeights::Correlation(matrix) => {
                    if matrix.clients().len() != locals.len() {
                        return Err(Error::LengthMismatch {
                            left: matrix.clients().len(),
                            right: locals.len(),
                        });
                    }
                    let w = normalize_weights(matrix, i, matrix.clients())?;
                    ensemble_teacher(locals, &w, x)
                }
                TeacherWeights::Uniform => ensemble_teacher(locals, &uniform, x),
            }
        })
        .collect()
}

fn mean_kl<T: Scalar>(
    student: &ModelParams<T>,
    data: &ProjectDataset<T>,
    subset: &[usize],
    teachers: &[SoftPrediction<T>],
) -> Result<T> {
    let total = subset
        .iter()
        .zip(teachers)
        .map(|(&i, t)| Ok(kl_div(t, &predict_proba(student, &data.instances()[i].features)?)))
        .sum::<Result<T>>()?;
    Ok(total / T::of(subset.len() as f64))
}

/// `steps` full-subset gradient steps of the student on the mean
/// `KL(teacher || student)`.
pub fn distill<T: Scalar>(
    global: &ModelParams<T>,
    locals: &[ModelParams<T>],
    weighting: TeacherWeights<'_, T>,
    data: &ProjectDataset<T>,
    subset: &[usize],
    steps: usize,
    learning_rate: T,
) -> Result<DistillOutcome<T>> {
    if subset.is_empty() {
        return Err(Error::EmptyInput("distillation subset"));
    }
    check_dim(global.dim(), data.dim())?;
    let teachers = build_teachers(locals, weighting, data, subset)?;
    let kl_before = mean_kl(global, data, subset, &teachers)?;
    let inv = T::one() / T::of(subset.len() as f64);
    let mut student = global.clone();
    let mut grad = ModelParams::zeros(global.dim());
    for _ in 0..steps {
        grad.weights.iter_mut().for_each(|g| *g = T::zero());
        grad.bias = T::zero();
        for (&i, teacher) in subset.iter().zip(&teachers) {
            let g = kd_grad(&student, &data.instances()[i].features, teacher)?;
            grad.add_scaled(&g, inv)?;
        }
        student.add_scaled(&grad, -learning_rate)?;
    }
    let kl_after = mean_kl(&student, data, subset, &teachers)?;
    Ok(DistillOutcome {
        params: student,
        kl_before,
        kl_after,
    })
}
