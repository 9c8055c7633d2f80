//! Binary logistic regression: the one model every federation role trains.

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::dataset::{Instance, ProjectDataset};
use crate::error::{check_dim, Error, Result};
use crate::scalar::Scalar;

/// Weight vector and bias of a logistic model. Also used for gradients.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelParams<T> {
    pub weights: Vec<T>,
    pub bias: T,
}

impl<T: Scalar> ModelParams<T> {
    pub fn zeros(dim: usize) -> Self {
        Self {
            weights: vec![T::zero(); dim],
            bias: T::zero(),
        }
    }

    pub fn dim(&self) -> usize {
        self.weights.len()
    }

    /// `d` weights followed by the bias.
    pub fn to_flat(&self) -> Vec<T> {
        let mut flat = self.weights.clone();
        flat.push(self.bias);
        flat
    }

    pub fn from_flat(flat: &[T]) -> Result<Self> {
        let (bias, weights) = flat.split_last().ok_or(Error::EmptyInput("flat params"))?;
        Ok(Self {
            weights: weights.to_vec(),
            bias: *bias,
        })
    }

    pub fn is_finite(&self) -> bool {
        self.bias.is_finite() && self.weights.iter().all(|w| w.is_finite())
    }

    /// `self += scale * other`.
    pub fn add_scaled(&mut self, other: &Self, scale: T) -> Result<()> {
        check_dim(self.dim(), other.dim())?;
        for (w, &o) in self.weights.iter_mut().zip(&other.weights) {
            *w = *w + scale * o;
        }
        self.bias = self.bias + scale * other.bias;
        Ok(())
    }

    pub fn squared_distance(&self, other: &Self) -> Result<T> {
        check_dim(self.dim(), other.dim())?;
        let w: T = self
            .weights
            .iter()
            .zip(&other.weights)
            .map(|(&a, &b)| (a - b) * (a - b))
            .sum();
        Ok(w + (self.bias - other.bias) * (self.bias - other.bias))
    }

    /// First 16 hex digits of SHA-256 over the flat record as little-endian f64.
    pub fn checksum(&self) -> String {
        let mut hasher = Sha256::new();
        for v in self.to_flat() {
            hasher.update(v.as_f64().to_le_bytes());
        }
        hasher
            .finalize()
            .iter()
            .take(8)
            .map(|b| format!("{b:02x}"))
            .collect()
    }

    pub fn logit(&self, x: &[T]) -> Result<T> {
        check_dim(self.dim(), x.len())?;
        Ok(self
            .weights
            .iter()
            .zip(x)
            .map(|(&w, &v)| w * v)
            .sum::<T>()
            + self.bias)
    }
}

pub fn sigmoid<T: Scalar>(z: T) -> T {
    if z >= T::zero() {
        T::one() / (T::one() + (-z).exp())
    } else {
        let e = z.exp();
        e / (T::one() + e)
    }
}

/// Two-class distribution `[p(clean), p(defective)]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SoftPrediction<T> {
    probs: [T; 2],
}

impl<T: Scalar> SoftPrediction<T> {
    pub fn from_defective(p: T) -> Self {
        Self {
            probs: [T::one() - p, p],
        }
    }

    /// Checks that both entries lie in `[0, 1]` and sum to 1 within 1e-9
    /// (a few ulps for `f32`).
    pub fn from_probs(probs: [T; 2]) -> Result<Self> {
        let unit = |p: T| p >= T::zero() && p <= T::one();
        let tol = (T::epsilon().as_f64() * 64.0).max(1e-9);
        let sum_ok = ((probs[0] + probs[1]).as_f64() - 1.0).abs() <= tol;
        if unit(probs[0]) && unit(probs[1]) && sum_ok {
            Ok(Self { probs })
        } else {
            Err(Error::InvalidConfig(format!(
                "not a two-class distribution: {probs:?}"
            )))
        }
    }

    pub fn probs(&self) -> [T; 2] {
        self.probs
    }

    pub fn clean(&self) -> T {
        self.probs[0]
    }

    pub fn defective(&self) -> T {
        self.probs[1]
    }
}

pub fn predict_proba<T: Scalar>(params: &ModelParams<T>, x: &[T]) -> Result<SoftPrediction<T>> {
    Ok(SoftPrediction::from_defective(sigmoid(params.logit(x)?)))
}

fn clamp_prob<T: Scalar>(p: T) -> T {
    let eps = T::prob_epsilon();
    p.max(eps).min(T::one() - eps)
}

fn instance_ce<T: Scalar>(params: &ModelParams<T>, inst: &Instance<T>) -> Result<T> {
    let p = clamp_prob(sigmoid(params.logit(&inst.features)?));
    Ok(if inst.label.is_defective() {
        -p.ln()
    } else {
        -(T::one() - p).ln()
    })
}

/// Mean binary cross-entropy over `data`.
pub fn ce_loss<T: Scalar>(params: &ModelParams<T>, data: &ProjectDataset<T>) -> Result<T> {
    check_dim(params.dim(), data.dim())?;
    let total = data
        .instances()
        .iter()
        .map(|inst| instance_ce(params, inst))
        .sum::<Result<T>>()?;
    Ok(total / T::of(data.len() as f64))
}

/// Optional FedProx pull `(mu / 2) * ||params - anchor||^2`.
#[derive(Debug, Clone, Copy)]
pub struct Proximal<'a, T> {
    pub mu: T,
    pub anchor: &'a ModelParams<T>,
}

/// Cross-entropy over `batch` plus the proximal term, if any.
pub fn objective<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[Instance<T>],
    prox: Option<Proximal<'_, T>>,
) -> Result<T> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    let ce = batch
        .iter()
        .map(|inst| instance_ce(params, inst))
        .sum::<Result<T>>()?
        / T::of(batch.len() as f64);
    let pull = match prox {
        Some(p) => p.mu / T::of(2.0) * params.squared_distance(p.anchor)?,
        None => T::zero(),
    };
    Ok(ce + pull)
}

/// Analytic gradient of [`objective`], written into `grad`.
pub fn objective_gradient_into<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[Instance<T>],
    prox: Option<Proximal<'_, T>>,
    grad: &mut ModelParams<T>,
) -> Result<()> {
    if batch.is_empty() {
        return Err(Error::EmptyInput("batch"));
    }
    check_dim(params.dim(), grad.dim())?;
    grad.weights.iter_mut().for_each(|g| *g = T::zero());
    grad.bias = T::zero();
    for inst in batch {
        let residual = sigmoid(params.logit(&inst.features)?) - inst.label.as_scalar::<T>();
        for (g, &x) in grad.weights.iter_mut().zip(&inst.features) {
            *g = *g + residual * x;
        }
        grad.bias = grad.bias + residual;
    }
    let inv = T::one() / T::of(batch.len() as f64);
    grad.weights.iter_mut().for_each(|g| *g = *g * inv);
    grad.bias = grad.bias * inv;
    if let Some(p) = prox {
        check_dim(params.dim(), p.anchor.dim())?;
        for ((g, &w), &a) in grad
            .weights
            .iter_mut()
            .zip(&params.weights)
            .zip(&p.anchor.weights)
        {
            *g = *g + p.mu * (w - a);
        }
        grad.bias = grad.bias + p.mu * (params.bias - p.anchor.bias);
    }
    Ok(())
}

pub fn objective_gradient<T: Scalar>(
    params: &ModelParams<T>,
    batch: &[Instance<T>],
    prox: Option<Proximal<'_, T>>,
) -> Result<ModelParams<T>> {
    let mut grad = ModelParams::zeros(params.dim());
    objective_gradient_into(params, batch, prox, &mut grad)?;
    Ok(grad)
}

/// Settings for one call to [`local_train`].
#[derive(Debug, Clone, PartialEq)]
pub struct TrainSpec<T> {
    pub learning_rate: T,
    pub epochs: usize,
    pub batch_size: usize,
    /// Zero disables the proximal term.
    pub prox_mu: T,
    pub anchor: Option<ModelParams<T>>,
}

pub const DEFAULT_BATCH_SIZE: usize = 32;

impl<T: Scalar> TrainSpec<T> {
    pub fn plain(learning_rate: T, epochs: usize) -> Self {
        Self {
            learning_rate,
            epochs,
            batch_size: DEFAULT_BATCH_SIZE,
            prox_mu: T::zero(),
            anchor: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !self.learning_rate.is_finite() || self.learning_rate < T::zero() {
            return Err(Error::InvalidConfig("learning rate must be >= 0".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        if self.prox_mu.is_nan() || self.prox_mu < T::zero() {
            return Err(Error::InvalidConfig("prox_mu must be >= 0".into()));
        }
        if self.prox_mu > T::zero() && self.anchor.is_none() {
            return Err(Error::InvalidConfig(
                "prox_mu > 0 requires an anchor model".into(),
            ));
        }
        Ok(())
    }

    fn proximal(&self) -> Option<Proximal<'_, T>> {
        match (&self.anchor, self.prox_mu > T::zero()) {
            (Some(anchor), true) => Some(Proximal {
                mu: self.prox_mu,
                anchor,
            }),
            _ => None,
        }
    }
}

/// Mini-batch gradient descent from `params`; a fresh shuffle per epoch and
/// the final partial batch kept.
pub fn local_train<T: Scalar, R: Rng + ?Sized>(
    params: &ModelParams<T>,
    data: &ProjectDataset<T>,
    spec: &TrainSpec<T>,
    rng: &mut R,
) -> Result<ModelParams<T>> {
    spec.validate()?;
    check_dim(params.dim(), data.dim())?;
    let prox = spec.proximal();
    let instances = data.instances();
    let mut current = params.clone();
    let mut grad = ModelParams::zeros(params.dim());
    let mut order: Vec<usize> = (0..instances.len()).collect();
    let mut batch: Vec<Instance<T>> = Vec::with_capacity(spec.batch_size);
    for _ in 0..spec.epochs {
        order.shuffle(rng);
        for chunk in order.chunks(spec.batch_size) {
            batch.clear();
            batch.extend(chunk.iter().map(|&i| instances[i].clone()));
            objective_gradient_into(&current, &batch, prox, &mut grad)?;
            current.add_scaled(&grad, -spec.learning_rate)?;
        }
    }
    Ok(current)
}

/// `KL(p || q)` over the two classes; `q` is clamped away from 0 and 1.
pub fn kl_div<T: Scalar>(p: &SoftPrediction<T>, q: &SoftPrediction<T>) -> T {
    p.probs
        .iter()
        .zip(&q.probs)
        .filter(|(&pc, _)| pc > T::zero())
        .map(|(&pc, &qc)| pc * (pc / clamp_prob(qc)).ln())
        .sum()
}

/// Gradient of `KL(teacher || student(x))` with respect to the student's
/// parameters: `(sigma(z) - teacher_defective) * [x, 1]`.
pub fn kd_grad<T: Scalar>(
    student: &ModelParams<T>,
    x: &[T],
    teacher: &SoftPrediction<T>,
) -> Result<ModelParams<T>> {
    let residual = sigmoid(student.logit(x)?) - teacher.defective();
    Ok(ModelParams {
        weights: x.iter().map(|&v| residual * v).collect(),
        bias: residual,
    })
}
