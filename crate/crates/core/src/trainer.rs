//! Joint optimization: negative-sampled BPR minibatches, Adam, periodic
//! validation and early stopping on the best-validation snapshot.

use alloc::boxed::Box;
use alloc::vec;
use alloc::vec::Vec;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Interaction, InteractionGraph};
use crate::eval::{evaluate, EvalOptions, NdcgVariant};
use crate::lfa::{train_lfa, LatentFactors, LfaConfig, LfaError, ObservedEntries};
use crate::linalg::Matrix;
use crate::objectives::{
    joint_loss_and_gradients, ClNegatives, JointHyper, LossBreakdown, Minibatch, ObjectiveError,
};
use crate::propagation::{eval_embeddings, EmbeddingTables};

/// Negative draws per triplet before it is skipped.
pub const MAX_NEGATIVE_ATTEMPTS: usize = 100;

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum TrainError {
    #[error("invalid training configuration: {0}")]
    BadConfig(&'static str),
    #[error("LFA pretraining failed: {0}")]
    Lfa(#[from] LfaError),
    #[error("factor shapes ({f_users}×·, {f_items}×·) do not match the graph ({users} users, {items} items)")]
    FactorShape {
        f_users: usize,
        f_items: usize,
        users: usize,
        items: usize,
    },
    #[error("training diverged at epoch {epoch}: {cause}")]
    Diverged {
        epoch: usize,
        cause: ObjectiveError,
        last_good: Box<Model>,
    },
    #[error("non-finite optimizer update")]
    NonFiniteUpdate,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub batch_size: usize,
    pub epochs_max: usize,
    pub lambda1: f64,
    pub lambda2: f64,
    pub tau: f64,
    pub dropout_rate: f64,
    pub layers: usize,
    pub embed_dim: usize,
    pub lfa: LfaConfig,
    pub seed: u64,
    pub validate_every: usize,
    pub patience: usize,
    pub eval_k: Vec<usize>,
    pub cl_negatives: ClNegatives,
    pub ndcg: NdcgVariant,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            batch_size: 2048,
            epochs_max: 1000,
            lambda1: 0.01,
            lambda2: 1e-6,
            tau: 0.5,
            dropout_rate: 0.1,
            layers: 2,
            embed_dim: 32,
            lfa: LfaConfig::default(),
            seed: 2024,
            validate_every: 2,
            patience: 10,
            eval_k: vec![20, 40],
            cl_negatives: ClNegatives::Batch,
            ndcg: NdcgVariant::Literal,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let non_negative = [
            self.learning_rate,
            self.lambda1,
            self.lambda2,
            self.dropout_rate,
        ];
        if non_negative.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(TrainError::BadConfig("rates and coefficients must be finite and non-negative"));
        }
        if self.tau.is_nan() || self.tau <= 0.0 {
            return Err(TrainError::BadConfig("tau must be positive"));
        }
        if self.dropout_rate >= 1.0 {
            return Err(TrainError::BadConfig("dropout rate must be below 1"));
        }
        if self.batch_size < 2 {
            return Err(TrainError::BadConfig("batch size must be at least 2"));
        }
        if self.layers == 0 {
            return Err(TrainError::BadConfig("at least one propagation layer is required"));
        }
        if self.embed_dim == 0 {
            return Err(TrainError::BadConfig("embedding dimension must be positive"));
        }
        if self.validate_every == 0 {
            return Err(TrainError::BadConfig("validate_every must be at least 1"));
        }
        if self.eval_k.is_empty() || self.eval_k.contains(&0) {
            return Err(TrainError::BadConfig("eval_k must list positive cutoffs"));
        }
        self.lfa.validate()?;
        Ok(())
    }

    pub fn hyper(&self) -> JointHyper {
        JointHyper {
            lambda1: self.lambda1,
            lambda2: self.lambda2,
            tau: self.tau,
            layers: self.layers,
            dropout_rate: self.dropout_rate,
            cl_negatives: self.cl_negatives,
        }
    }
}

/// Trainable embeddings together with the frozen factors they are paired with.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub embeddings: EmbeddingTables,
    pub factors: LatentFactors,
    pub layers: usize,
}

impl Model {
    /// Final main-channel embeddings with dropout bypassed.
    pub fn final_embeddings(&self, graph: &InteractionGraph) -> (Matrix, Matrix) {
        eval_embeddings(graph, &self.embeddings, self.layers)
    }
}

/// Bias-corrected Adam over a fixed list of parameter tables.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub step: u64,
    pub first_moment: Vec<Vec<f64>>,
    pub second_moment: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new(table_sizes: &[usize]) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step: 0,
            first_moment: table_sizes.iter().map(|&n| vec![0.0; n]).collect(),
            second_moment: table_sizes.iter().map(|&n| vec![0.0; n]).collect(),
        }
    }

    pub fn for_embeddings(emb: &EmbeddingTables) -> Self {
        Self::new(&[emb.user.as_slice().len(), emb.item.as_slice().len()])
    }

    /// One Adam update of every table. Shapes must match the moments.
    pub fn update(
        &mut self,
        params: &mut [&mut [f64]],
        grads: &[&[f64]],
        learning_rate: f64,
    ) -> Result<(), TrainError> {
        assert_eq!(params.len(), self.first_moment.len());
        assert_eq!(grads.len(), self.first_moment.len());
        self.step += 1;
        let t = self.step as i32;
        let correction1 = 1.0 - libm::pow(self.beta1, t as f64);
        let correction2 = 1.0 - libm::pow(self.beta2, t as f64);
        for (table, (param, grad)) in params.iter_mut().zip(grads).enumerate() {
            let m = &mut self.first_moment[table];
            let v = &mut self.second_moment[table];
            assert_eq!(param.len(), m.len());
            assert_eq!(grad.len(), m.len());
            for k in 0..m.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / correction1;
                let v_hat = v[k] / correction2;
                let next = param[k] - learning_rate * m_hat / (libm::sqrt(v_hat) + self.epsilon);
                if !next.is_finite() {
                    return Err(TrainError::NonFiniteUpdate);
                }
                param[k] = next;
            }
        }
        Ok(())
    }

    pub fn update_embeddings(
        &mut self,
        emb: &mut EmbeddingTables,
        grads: &EmbeddingTables,
        learning_rate: f64,
    ) -> Result<(), TrainError> {
        let EmbeddingTables { user, item } = emb;
        self.update(
            &mut [user.as_mut_slice(), item.as_mut_slice()],
            &[grads.user.as_slice(), grads.item.as_slice()],
            learning_rate,
        )
    }
}

/// Draws `batch_size` training edges uniformly (with replacement) and pairs
/// each with a uniformly drawn item the user has not interacted with.
/// Returns the batch and the number of triplets skipped because no negative
/// was found within [`MAX_NEGATIVE_ATTEMPTS`].
pub fn sample_minibatch(
    graph: &InteractionGraph,
    batch_size: usize,
    rng: &mut impl Rng,
) -> (Minibatch, usize) {
    let adjacency = &graph.adjacency;
    let nnz = adjacency.nnz();
    let mut triplets = Vec::with_capacity(batch_size);
    let mut skipped = 0;
    if nnz == 0 {
        return (Minibatch::default(), 0);
    }
    for _ in 0..batch_size {
        let slot = rng.gen_range(0..nnz);
        let user = adjacency.indptr().partition_point(|&p| p <= slot) - 1;
        let pos = adjacency.indices()[slot];
        let mut negative = None;
        for _ in 0..MAX_NEGATIVE_ATTEMPTS {
            let cand = rng.gen_range(0..graph.n_items as u32);
            if !adjacency.contains(user, cand) {
                negative = Some(cand);
                break;
            }
        }
        match negative {
            Some(neg) => triplets.push((user as u32, pos, neg)),
            None => skipped += 1,
        }
    }
    if skipped > 0 {
        log::warn!("skipped {skipped} triplets without a negative item");
    }
    (Minibatch::new(triplets), skipped)
}

/// Early-stopping bookkeeping. Any validation that does not strictly improve
/// on the best so far counts as a drop.
#[derive(Clone, Debug)]
pub struct EarlyStopState {
    pub best_metric: f64,
    pub best_epoch: Option<usize>,
    pub consecutive_drops: usize,
    pub best_snapshot: Option<EmbeddingTables>,
    patience: usize,
}

impl EarlyStopState {
    pub fn new(patience: usize) -> Self {
        Self {
            best_metric: f64::NEG_INFINITY,
            best_epoch: None,
            consecutive_drops: 0,
            best_snapshot: None,
            patience,
        }
    }

    /// Records one validation; returns `true` when training should stop.
    pub fn observe(&mut self, epoch: usize, metric: f64, emb: &EmbeddingTables) -> bool {
        if metric > self.best_metric {
            self.best_metric = metric;
            self.best_epoch = Some(epoch);
            self.consecutive_drops = 0;
            self.best_snapshot = Some(emb.clone());
        } else {
            self.consecutive_drops += 1;
        }
        self.consecutive_drops >= self.patience
    }
}

/// Per-epoch training log entry.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Means over the epoch's steps.
    pub losses: LossBreakdown,
    /// `(recall, ndcg)` at the first cutoff, on validation epochs.
    pub validation: Option<(f64, f64)>,
    pub skipped_triplets: usize,
}

/// Source of the monitored validation metric.
pub trait Validator {
    /// Returns `(recall, ndcg)`; recall is the monitored value.
    fn validate(&mut self, epoch: usize, model: &Model, graph: &InteractionGraph) -> (f64, f64);
}

/// Validation on held-out edges at one cutoff.
pub struct SplitValidator<'a> {
    pub edges: &'a [Interaction],
    pub k: usize,
    pub ndcg: NdcgVariant,
}

impl Validator for SplitValidator<'_> {
    fn validate(&mut self, _epoch: usize, model: &Model, graph: &InteractionGraph) -> (f64, f64) {
        let (eu, ei) = model.final_embeddings(graph);
        let options = EvalOptions { ndcg: self.ndcg };
        match evaluate(&eu, &ei, graph, self.edges, &[self.k], None, None, &options) {
            Ok(report) => (report.metrics[0].recall, report.metrics[0].ndcg),
            Err(_) => (0.0, 0.0),
        }
    }
}

/// Inputs to [`fit`].
#[derive(Clone, Copy)]
pub struct TrainingData<'a> {
    pub graph: &'a InteractionGraph,
    /// Training edges with ratings, used if LFA has to be pretrained here.
    pub train: &'a [Interaction],
    pub validation: &'a [Interaction],
}

#[derive(Clone, Debug)]
pub struct FitOutcome {
    pub model: Model,
    pub adam: AdamState,
    pub log: Vec<EpochRecord>,
    pub best_epoch: Option<usize>,
    pub best_metric: f64,
    pub validations: usize,
    /// Epoch of each validation, in order.
    pub validation_epochs: Vec<usize>,
    pub stopped_early: bool,
}

fn rng_stream(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Seeded initial model; pretrains LFA when `factors` is `None`.
pub fn init_model(
    data: &TrainingData<'_>,
    factors: Option<LatentFactors>,
    config: &TrainConfig,
) -> Result<Model, TrainError> {
    let graph = data.graph;
    let factors = match factors {
        Some(f) => f,
        None => {
            let entries = ObservedEntries::new(graph.n_users, graph.n_items, data.train);
            train_lfa(&entries, &config.lfa)?.0
        }
    };
    if factors.n_users() != graph.n_users || factors.n_items() != graph.n_items {
        return Err(TrainError::FactorShape {
            f_users: factors.n_users(),
            f_items: factors.n_items(),
            users: graph.n_users,
            items: graph.n_items,
        });
    }
    let mut init_rng = rng_stream(config.seed, 0);
    let embeddings =
        EmbeddingTables::xavier(graph.n_users, graph.n_items, config.embed_dim, &mut init_rng);
    Ok(Model {
        embeddings,
        factors,
        layers: config.layers,
    })
}

/// Trains with validation on `data.validation` at the first cutoff.
pub fn fit(
    data: &TrainingData<'_>,
    factors: Option<LatentFactors>,
    config: &TrainConfig,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    let mut validator = SplitValidator {
        edges: data.validation,
        k: config.eval_k[0],
        ndcg: config.ndcg,
    };
    fit_with_validator(data, factors, config, &mut validator, observer)
}

/// Training loop with a pluggable validation metric.
pub fn fit_with_validator(
    data: &TrainingData<'_>,
    factors: Option<LatentFactors>,
    config: &TrainConfig,
    validator: &mut dyn Validator,
    observer: &mut dyn FnMut(&EpochRecord),
) -> Result<FitOutcome, TrainError> {
    config.validate()?;
    let graph = data.graph;
    let mut model = init_model(data, factors, config)?;
    let mut adam = AdamState::for_embeddings(&model.embeddings);
    let hyper = config.hyper();
    let mut sample_rng = rng_stream(config.seed, 1);
    let mut dropout_rng = rng_stream(config.seed, 2);
    let steps_per_epoch = graph.n_edges().div_ceil(config.batch_size);

    let mut early = EarlyStopState::new(config.patience);
    let mut log = Vec::new();
    let mut validation_epochs = Vec::new();
    let mut stopped_early = false;

    for epoch in 1..=config.epochs_max {
        let mut sums = LossBreakdown::default();
        let mut skipped_total = 0;
        for _ in 0..steps_per_epoch {
            let (batch, skipped) = sample_minibatch(graph, config.batch_size, &mut sample_rng);
            skipped_total += skipped;
            let (losses, grads) = joint_loss_and_gradients(
                graph,
                &model.factors,
                &model.embeddings,
                &batch,
                &hyper,
                &mut dropout_rng,
            )
            .map_err(|cause| TrainError::Diverged {
                epoch,
                cause,
                last_good: Box::new(model.clone()),
            })?;
            let before = model.embeddings.clone();
            if let Err(e) = adam.update_embeddings(&mut model.embeddings, &grads, config.learning_rate) {
                log::error!("optimizer produced a non-finite parameter at epoch {epoch}");
                model.embeddings = before;
                return Err(e);
            }
            sums.bpr += losses.bpr;
            sums.cl_user += losses.cl_user;
            sums.cl_item += losses.cl_item;
            sums.l2 += losses.l2;
            sums.total += losses.total;
        }
        let n = steps_per_epoch.max(1) as f64;
        let means = LossBreakdown {
            bpr: sums.bpr / n,
            cl_user: sums.cl_user / n,
            cl_item: sums.cl_item / n,
            l2: sums.l2 / n,
            total: sums.total / n,
            lambda1: hyper.lambda1,
            lambda2: hyper.lambda2,
            tau: hyper.tau,
        };

        let mut record = EpochRecord {
            epoch,
            losses: means,
            validation: None,
            skipped_triplets: skipped_total,
        };
        let mut stop = false;
        if epoch % config.validate_every == 0 {
            let (recall, ndcg) = validator.validate(epoch, &model, graph);
            record.validation = Some((recall, ndcg));
            validation_epochs.push(epoch);
            stop = early.observe(epoch, recall, &model.embeddings);
            log::debug!("epoch {epoch}: validation recall {recall:.6}, ndcg {ndcg:.6}");
        }
        observer(&record);
        log.push(record);
        if stop {
            stopped_early = true;
            log::info!(
                "early stop at epoch {epoch}; best epoch {:?}",
                early.best_epoch
            );
            break;
        }
    }

    if let Some(best) = early.best_snapshot.take() {
        model.embeddings = best;
    }
    Ok(FitOutcome {
        model,
        adam,
        log,
        best_epoch: early.best_epoch,
        best_metric: early.best_metric,
        validations: validation_epochs.len(),
        validation_epochs,
        stopped_early,
    })
}
