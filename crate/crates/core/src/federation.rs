//! Clients, server and the per-round protocol.
//!
//! A client's raw instances never leave [`ClientState`]: the only value it
//! hands to the server is a [`ClientUpload`], i.e. its locally trained
//! parameters and (when the server shared distillation data) its correlation
//! factors. The server learns each client's sample count at registration, as
//! size-weighted averaging requires.

use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dataset::ProjectDataset;
use crate::distillation::{compute_correlation_factors, distill, CorrelationMatrix, TeacherWeights};
use crate::error::{check_dim, Error, Result};
use crate::model::{local_train, ModelParams, TrainSpec};
use crate::scalar::Scalar;
use crate::seed::{self, rng_for};

pub type ClientId = usize;

/// Server behavior after aggregation.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    /// Aggregate only.
    Flr,
    /// Aggregate, then keep training on the open-source data with cross-entropy.
    OpenFlr,
    /// Aggregate, then distill from the correlation-weighted ensemble.
    FedDp,
}

impl Mode {
    pub fn name(self) -> &'static str {
        match self {
            Mode::Flr => "FLR",
            Mode::OpenFlr => "OpenFLR",
            Mode::FedDp => "FedDP",
        }
    }

    fn needs_open_data(self) -> bool {
        !matches!(self, Mode::Flr)
    }
}

/// Teacher weighting used by [`Mode::FedDp`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Weighting {
    Correlation,
    Uniform,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundConfig<T> {
    pub participation_ratio: f64,
    pub local_epochs: usize,
    pub batch_size: usize,
    pub learning_rate: T,
    /// Rate for OpenFLR's extra training and for distillation.
    pub server_learning_rate: T,
    /// Zero selects FedAvg, positive values FedProx.
    pub prox_mu: T,
    pub distill_steps: usize,
    pub sample_size: usize,
    pub mode: Mode,
    pub weighting: Weighting,
}

impl<T: Scalar> RoundConfig<T> {
    pub fn validate(&self) -> Result<()> {
        if !(self.participation_ratio > 0.0 && self.participation_ratio <= 1.0) {
            return Err(Error::InvalidConfig(format!(
                "participation ratio {} outside (0, 1]",
                self.participation_ratio
            )));
        }
        if self.mode == Mode::FedDp && (self.distill_steps == 0 || self.sample_size == 0) {
            return Err(Error::InvalidConfig(
                "FedDP needs at least one distillation step and sample".into(),
            ));
        }
        for (name, rate) in [
            ("learning rate", self.learning_rate),
            ("server learning rate", self.server_learning_rate),
            ("prox_mu", self.prox_mu),
        ] {
            if !(rate >= T::zero() && rate.is_finite()) {
                return Err(Error::InvalidConfig(format!("{name} must be finite and >= 0")));
            }
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidConfig("batch size must be positive".into()));
        }
        Ok(())
    }

    /// FedProx anchors each client to the global model it received.
    fn client_spec(&self, global: &ModelParams<T>) -> TrainSpec<T> {
        TrainSpec {
            learning_rate: self.learning_rate,
            epochs: self.local_epochs,
            batch_size: self.batch_size,
            prox_mu: self.prox_mu,
            anchor: (self.prox_mu > T::zero()).then(|| global.clone()),
        }
    }
}

/// What a client sends back after local training.
#[derive(Debug, Clone, PartialEq)]
pub struct ClientUpload<T> {
    pub params: ModelParams<T>,
    pub correlation: Option<Arc<[T]>>,
}

#[derive(Debug, Clone)]
pub struct ClientState<T> {
    id: ClientId,
    name: String,
    data: ProjectDataset<T>,
    params: Option<ModelParams<T>>,
    correlation: Option<Arc<[T]>>,
}

impl<T: Scalar> ClientState<T> {
    /// `data` is expected to be oversampled and normalized already.
    pub fn new(id: ClientId, data: ProjectDataset<T>) -> Self {
        Self {
            id,
            name: data.name(),
            data,
            params: None,
            correlation: None,
        }
    }

    pub fn id(&self) -> ClientId {
        self.id
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn sample_count(&self) -> usize {
        self.data.len()
    }

    pub fn dim(&self) -> usize {
        self.data.dim()
    }

    /// Last locally trained model, if the client has participated.
    pub fn params(&self) -> Option<&ModelParams<T>> {
        self.params.as_ref()
    }

    pub fn cached_correlation(&self) -> Option<&Arc<[T]>> {
        self.correlation.as_ref()
    }

    /// Local training from the received global model. Correlation factors
    /// depend only on data, so they are computed on the first call that
    /// carries distillation data and reused afterwards.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        global: &ModelParams<T>,
        cfg: &RoundConfig<T>,
        distill_data: Option<&ProjectDataset<T>>,
        rng: &mut R,
    ) -> Result<ClientUpload<T>> {
        let params = local_train(global, &self.data, &cfg.client_spec(global), rng)?;
        self.params = Some(params.clone());
        let correlation = match distill_data {
            Some(open) => {
                if self.correlation.is_none() {
                    let factors = compute_correlation_factors(&self.data, open)?;
                    self.correlation = Some(Arc::from(factors));
                }
                self.correlation.clone()
            }
            None => None,
        };
        Ok(ClientUpload {
            params,
            correlation,
        })
    }
}

pub fn client_update<T: Scalar, R: Rng + ?Sized>(
    client: &mut ClientState<T>,
    global: &ModelParams<T>,
    cfg: &RoundConfig<T>,
    distill_data: Option<&ProjectDataset<T>>,
    rng: &mut R,
) -> Result<ClientUpload<T>> {
    client.update(global, cfg, distill_data, rng)
}

/// `max(round(ratio * count), 1)` distinct ids, uniformly without
/// replacement, returned in ascending order.
pub fn select_clients<R: Rng + ?Sized>(count: usize, ratio: f64, rng: &mut R) -> Vec<ClientId> {
    assert!(count >= 1, "need at least one client");
    let m = ((ratio * count as f64 + 0.5).floor() as usize).clamp(1, count);
    let mut ids = rand::seq::index::sample(rng, count, m).into_vec();
    ids.sort_unstable();
    ids
}

/// `|D_k| / sum |D_i|` for each client.
pub fn aggregation_weights(sizes: &[usize]) -> Vec<f64> {
    let total: usize = sizes.iter().sum();
    sizes.iter().map(|&s| s as f64 / total as f64).collect()
}

/// Size-weighted average of `models`, accumulated as a running mean so that
/// averaging copies of one model reproduces it exactly.
pub fn aggregate<T: Scalar>(models: &[ModelParams<T>], sizes: &[usize]) -> Result<ModelParams<T>> {
    let first = models.first().ok_or(Error::EmptyInput("models"))?;
    if models.len() != sizes.len() {
        return Err(Error::LengthMismatch {
            left: models.len(),
            right: sizes.len(),
        });
    }
    if sizes.contains(&0) {
        return Err(Error::InvalidConfig("client sizes must be positive".into()));
    }
    let mut mean = first.clone();
    let mut seen = sizes[0];
    for (model, &size) in models.iter().zip(sizes).skip(1) {
        check_dim(mean.dim(), model.dim())?;
        seen += size;
        let frac = T::of(size as f64 / seen as f64);
        for (m, &w) in mean.weights.iter_mut().zip(&model.weights) {
            *m = *m + (w - *m) * frac;
        }
        mean.bias = mean.bias + (model.bias - mean.bias) * frac;
    }
    Ok(mean)
}

/// Test-set scores recorded for a round.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RoundMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    pub auc: Option<f64>,
}

/// One line of the round log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RoundRecord {
    pub round: usize,
    pub mode: Mode,
    pub participants: Vec<ClientId>,
    pub checksum: String,
    pub kl_before: Option<f64>,
    pub kl_after: Option<f64>,
    pub metrics: Option<RoundMetrics>,
}

#[derive(Debug, Clone)]
pub struct ServerState<T> {
    pub global: ModelParams<T>,
    pub clients: Vec<ClientState<T>>,
    /// Open-source project used by OpenFLR and FedDP.
    pub open_data: Option<ProjectDataset<T>>,
    pub round: usize,
    pub seed: u64,
}

impl<T: Scalar> ServerState<T> {
    /// Zero-initialized global model. Client ids must be a permutation of
    /// `0..clients.len()`.
    pub fn new(
        clients: Vec<ClientState<T>>,
        open_data: Option<ProjectDataset<T>>,
        seed: u64,
    ) -> Result<Self> {
        let first = clients.first().ok_or(Error::EmptyInput("clients"))?;
        let dim = first.dim();
        let mut seen = vec![false; clients.len()];
        for c in &clients {
            check_dim(dim, c.dim())?;
            match seen.get_mut(c.id()) {
                Some(slot) if !*slot => *slot = true,
                _ => {
                    return Err(Error::InvalidConfig(format!(
                        "client ids must be a permutation of 0..{}",
                        clients.len()
                    )))
                }
            }
        }
        if let Some(open) = &open_data {
            check_dim(dim, open.dim())?;
        }
        Ok(Self {
            global: ModelParams::zeros(dim),
            clients,
            open_data,
            round: 0,
            seed,
        })
    }

    /// Distillation sample indices for `round`, ascending.
    fn distill_subset(&self, round: usize, size: usize, available: usize) -> Vec<usize> {
        let mut rng = rng_for(self.seed, &[seed::TAG_DISTILL_SUBSET, round as u64]);
        let mut idx = rand::seq::index::sample(&mut rng, available, size.min(available)).into_vec();
        idx.sort_unstable();
        idx
    }

    /// Selection, parallel client updates, aggregation and the mode-specific
    /// server step. Randomness is keyed by (round, client id), so the outcome
    /// does not depend on client execution order.
    pub fn run_round(&mut self, cfg: &RoundConfig<T>) -> Result<RoundRecord> {
        let round = self.round + 1;
        let mut select_rng = rng_for(self.seed, &[seed::TAG_SELECT, round as u64]);
        let participants = select_clients(self.clients.len(), cfg.participation_ratio, &mut select_rng);

        let share_open = cfg.mode == Mode::FedDp
            && cfg.distill_steps > 0
            && cfg.weighting == Weighting::Correlation;
        let open_for_clients = if share_open { self.open_data.as_ref() } else { None };
        if cfg.mode.needs_open_data() && self.open_data.is_none() {
            return Err(Error::InvalidConfig(format!(
                "{} needs open-source data on the server",
                cfg.mode.name()
            )));
        }

        let global = &self.global;
        let master = self.seed;
        let mut uploads: Vec<(ClientId, usize, ClientUpload<T>)> = self
            .clients
            .par_iter_mut()
            .filter(|c| participants.binary_search(&c.id()).is_ok())
            .map(|client| {
                let mut rng = rng_for(master, &[seed::TAG_CLIENT, round as u64, client.id() as u64]);
                let upload = client.update(global, cfg, open_for_clients, &mut rng)?;
                Ok((client.id(), client.sample_count(), upload))
            })
            .collect::<Result<_>>()?;
        uploads.sort_by_key(|(id, _, _)| *id);

        let sizes: Vec<usize> = uploads.iter().map(|(_, n, _)| *n).collect();
        let models: Vec<ModelParams<T>> = uploads.iter().map(|(_, _, u)| u.params.clone()).collect();
        let aggregated = aggregate(&models, &sizes)?;

        let (mut kl_before, mut kl_after) = (None, None);
        self.global = match cfg.mode {
            Mode::Flr => aggregated,
            Mode::OpenFlr => {
                let open = self.open_data.as_ref().expect("checked above");
                let spec = TrainSpec {
                    batch_size: cfg.batch_size,
                    ..TrainSpec::plain(cfg.server_learning_rate, cfg.local_epochs)
                };
                let mut rng = rng_for(master, &[seed::TAG_SERVER_TRAIN, round as u64]);
                local_train(&aggregated, open, &spec, &mut rng)?
            }
            Mode::FedDp if cfg.distill_steps == 0 || cfg.sample_size == 0 => aggregated,
            Mode::FedDp => {
                let open = self.open_data.as_ref().expect("checked above");
                let subset = self.distill_subset(round, cfg.sample_size, open.len());
                let matrix;
                let weighting = match cfg.weighting {
                    Weighting::Correlation => {
                        let rows = uploads
                            .iter()
                            .map(|(id, _, u)| {
                                u.correlation
                                    .clone()
                                    .map(|c| (*id, c))
                                    .ok_or(Error::EmptyInput("client correlation factors"))
                            })
                            .collect::<Result<Vec<_>>>()?;
                        matrix = CorrelationMatrix::new(rows)?;
                        TeacherWeights::Correlation(&matrix)
                    }
                    Weighting::Uniform => TeacherWeights::Uniform,
                };
                let outcome = distill(
                    &aggregated,
                    &models,
                    weighting,
                    open,
                    &subset,
                    cfg.distill_steps,
                    cfg.server_learning_rate,
                )?;
                kl_before = Some(outcome.kl_before.as_f64());
                kl_after = Some(outcome.kl_after.as_f64());
                outcome.params
            }
        };
        self.round = round;
        Ok(RoundRecord {
            round,
            mode: cfg.mode,
            participants,
            checksum: self.global.checksum(),
            kl_before,
            kl_after,
            metrics: None,
        })
    }
}

pub fn run_round<T: Scalar>(state: &mut ServerState<T>, cfg: &RoundConfig<T>) -> Result<RoundRecord> {
    state.run_round(cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Instance, Label};
    use crate::seed::rng_for;
    use proptest::prelude::*;
    use rand::Rng;

    fn cfg(mode: Mode) -> RoundConfig<f64> {
        RoundConfig {
            participation_ratio: 1.0,
            local_epochs: 2,
            batch_size: 8,
            learning_rate: 0.05,
            server_learning_rate: 0.05,
            prox_mu: 0.0,
            distill_steps: 3,
            sample_size: 6,
            mode,
            weighting: Weighting::Correlation,
        }
    }

    fn toy_data(seed: u64, n: usize, shift: f64) -> ProjectDataset<f64> {
        let mut rng = rng_for(seed, &[]);
        let instances = (0..n)
            .map(|i| {
                let defective = i % 3 == 0;
                let base = if defective { 0.6 } else { 0.3 } + shift;
                Instance::new(
                    (0..3).map(|_| (base + rng.random_range(-0.2..0.2)).clamp(0.0, 1.0)).collect(),
                    if defective { Label::Defective } else { Label::Clean },
                )
            })
            .collect();
        ProjectDataset::new(format!("c{seed}"), "", instances).unwrap()
    }

    fn toy_server(seed: u64) -> ServerState<f64> {
        let clients = (0..3)
            .map(|k| ClientState::new(k, toy_data(k as u64 + 10, 12 + 5 * k, 0.1 * k as f64)))
            .collect();
        ServerState::new(clients, Some(toy_data(99, 10, 0.05)), seed).unwrap()
    }

    #[test]
    fn selection_examples() {
        let mut rng = rng_for(1, &[]);
        assert_eq!(select_clients(24, 1.0, &mut rng), (0..24).collect::<Vec<_>>());
        assert_eq!(select_clients(10, 0.05, &mut rng).len(), 1);
        let a = select_clients(10, 0.5, &mut rng_for(4, &[]));
        let b = select_clients(10, 0.5, &mut rng_for(4, &[]));
        assert_eq!(a, b);
        assert_eq!(a.len(), 5);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        // round-half-up: 0.25 * 10 = 2.5 -> 3
        assert_eq!(select_clients(10, 0.25, &mut rng).len(), 3);
    }

    #[test]
    fn aggregate_examples() {
        let m = ModelParams { weights: vec![0.3, -1.7], bias: 0.1 };
        assert_eq!(aggregate(std::slice::from_ref(&m), &[7]).unwrap(), m);
        assert_eq!(aggregate(&[m.clone(), m.clone(), m.clone()], &[1, 5, 3]).unwrap(), m);
        let a = ModelParams { weights: vec![2.0], bias: 0.0 };
        let b = ModelParams { weights: vec![6.0], bias: 0.0 };
        let out = aggregate(&[a, b], &[100, 300]).unwrap();
        assert!((out.weights[0] - 5.0_f64).abs() < 1e-15);
        assert_eq!(out.bias, 0.0);
        assert!(matches!(aggregate::<f64>(&[], &[]), Err(Error::EmptyInput(_))));
        let short = ModelParams { weights: vec![1.0], bias: 0.0 };
        assert!(matches!(aggregate(&[m, short], &[1, 1]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn zero_epochs_returns_global_and_factors_are_cached() {
        let mut client = ClientState::new(0, toy_data(3, 9, 0.0));
        let open = toy_data(4, 5, 0.1);
        let global = ModelParams { weights: vec![0.1, 0.2, 0.3], bias: -0.1 };
        let mut c = cfg(Mode::FedDp);
        c.local_epochs = 0;
        let first = client.update(&global, &c, Some(&open), &mut rng_for(0, &[])).unwrap();
        assert_eq!(first.params, global);
        c.local_epochs = 2;
        let second = client.update(&global, &c, Some(&open), &mut rng_for(1, &[])).unwrap();
        let (a, b) = (first.correlation.unwrap(), second.correlation.unwrap());
        assert!(Arc::ptr_eq(&a, &b));
    }

    #[test]
    fn factors_for_client_holding_the_open_data_match_double_loop() {
        let open = toy_data(5, 6, 0.0);
        let mut client = ClientState::new(0, open.clone());
        let up = client.update(&ModelParams::zeros(3), &cfg(Mode::FedDp), Some(&open), &mut rng_for(0, &[])).unwrap();
        let factors = up.correlation.unwrap();
        for (i, s) in open.instances().iter().enumerate() {
            let mut acc = 0.0;
            for l in open.instances() {
                acc += crate::dataset::cosine_similarity(&s.features, &l.features).unwrap();
            }
            assert!((factors[i] - acc / open.len() as f64).abs() < 1e-12);
        }
    }

    #[test]
    fn feddp_without_steps_equals_flr() {
        let mut a = toy_server(7);
        let mut b = toy_server(7);
        let mut feddp = cfg(Mode::FedDp);
        feddp.distill_steps = 0;
        for _ in 0..3 {
            a.run_round(&cfg(Mode::Flr)).unwrap();
            b.run_round(&feddp).unwrap();
        }
        assert_eq!(a.global, b.global);
    }

    #[test]
    fn openflr_with_zero_server_rate_equals_flr() {
        let mut a = toy_server(8);
        let mut b = toy_server(8);
        b.open_data = Some(toy_data(10, 12, 0.0));
        let mut open = cfg(Mode::OpenFlr);
        open.server_learning_rate = 0.0;
        for _ in 0..3 {
            a.run_round(&cfg(Mode::Flr)).unwrap();
            b.run_round(&open).unwrap();
        }
        assert_eq!(a.global, b.global);
    }

    #[test]
    fn flr_round_equals_external_weighted_mean() {
        let mut server = toy_server(9);
        let start = server.global.clone();
        let record = server.run_round(&cfg(Mode::Flr)).unwrap();
        assert_eq!(record.round, 1);
        assert_eq!(record.participants, vec![0, 1, 2]);
        let mut total = 0.0;
        let mut acc = [0.0; 4];
        for c in &server.clients {
            let n = c.sample_count() as f64;
            // the client's cached params were produced this round from `start`
            let flat = c.params().unwrap().to_flat();
            acc.iter_mut().zip(&flat).for_each(|(a, v)| *a += n * v);
            total += n;
        }
        let expect: Vec<f64> = acc.iter().map(|v| v / total).collect();
        for (a, b) in server.global.to_flat().iter().zip(expect) {
            assert!((a - b).abs() < 1e-12);
        }
        assert_ne!(server.global, start);
    }

    #[test]
    fn client_order_does_not_change_result() {
        let mut forward = toy_server(12);
        let mut shuffled = toy_server(12);
        shuffled.clients.reverse();
        for _ in 0..2 {
            forward.run_round(&cfg(Mode::FedDp)).unwrap();
            shuffled.run_round(&cfg(Mode::FedDp)).unwrap();
        }
        assert_eq!(forward.global, shuffled.global);
    }

    #[test]
    fn rounds_count_up_and_log_participants() {
        let mut server = toy_server(13);
        let mut c = cfg(Mode::FedDp);
        c.participation_ratio = 0.5;
        for expected in 1..=4 {
            let rec = server.run_round(&c).unwrap();
            assert_eq!(rec.round, expected);
            assert_eq!(rec.participants.len(), 2);
            assert!(rec.kl_before.is_some());
        }
    }

    #[test]
    fn feddp_requires_steps_in_validation() {
        let mut c = cfg(Mode::FedDp);
        c.distill_steps = 0;
        assert!(c.validate().is_err());
        assert!(cfg(Mode::Flr).validate().is_ok());
    }

    proptest! {
        #[test]
        fn aggregate_matches_weighted_mean(
            flat in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 4), 1..8),
            sizes in prop::collection::vec(1usize..1000, 8),
        ) {
            let models: Vec<_> = flat.iter().map(|f| ModelParams::from_flat(f).unwrap()).collect();
            let sizes = &sizes[..models.len()];
            let out = aggregate(&models, sizes).unwrap().to_flat();
            let w = aggregation_weights(sizes);
            prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
            for j in 0..4 {
                let expect: f64 = flat.iter().zip(&w).map(|(f, p)| f[j] * p).sum();
                prop_assert!((out[j] - expect).abs() < 1e-12);
            }
        }
    }
}
