//! Negative sampling, Adam, and the early-stopped epoch loop.

use std::collections::BTreeMap;
use std::io::Write;
use std::time::Instant;

use log::{debug, warn};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::cascade::{cascade_forward_with, init_params, CascadeParams, ModelConfig};
use crate::data::SplitDataset;
use crate::error::{Error, Result};
use crate::eval::evaluate_embeddings;
use crate::grad::{backward_batch_with, bpr_loss, Gradients, Triplet, TripletBatch};
use crate::graph::{build_normalized_adjacency, BehaviorGraph};
use crate::par::Exec;
use crate::real::Real;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub lambda: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without validation improvement before stopping.
    pub patience: usize,
    /// Cutoff of the monitored validation Recall@K.
    pub eval_k: usize,
    pub seed: u64,
    pub adam: AdamConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            learning_rate: 1e-3,
            lambda: 1e-4,
            batch_size: 1024,
            max_epochs: 200,
            patience: 10,
            eval_k: 20,
            seed: 2023,
            adam: AdamConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be at least 1".into()));
        }
        if self.patience == 0 {
            return Err(Error::Config("patience must be at least 1".into()));
        }
        if self.max_epochs == 0 {
            return Err(Error::Config("max epochs must be at least 1".into()));
        }
        if self.eval_k == 0 {
            return Err(Error::Config("monitoring cutoff must be at least 1".into()));
        }
        // Zero is allowed: it freezes the parameters.
        if !self.learning_rate.is_finite() || self.learning_rate < 0.0 {
            return Err(Error::Config(format!("invalid learning rate {}", self.learning_rate)));
        }
        if !self.lambda.is_finite() || self.lambda < 0.0 {
            return Err(Error::Config(format!("invalid lambda {}", self.lambda)));
        }
        let a = &self.adam;
        if !(0.0..1.0).contains(&a.beta1) || !(0.0..1.0).contains(&a.beta2) || a.epsilon.is_nan() || a.epsilon <= 0.0 {
            return Err(Error::Config("Adam constants out of range".into()));
        }
        Ok(())
    }
}

/// Uniformly samples one negative per positive pair, rejecting the user's
/// own positives. Users whose positives cover every item are skipped.
///
/// `positives_by_user[u]` must be sorted.
pub fn sample_triplets<R: Rng + ?Sized>(
    pairs: &[(u32, u32)],
    positives_by_user: &[Vec<u32>],
    num_items: usize,
    rng: &mut R,
) -> TripletBatch {
    let mut triplets = Vec::with_capacity(pairs.len());
    let mut skipped = 0usize;
    for &(u, i) in pairs {
        let pos = &positives_by_user[u as usize];
        if pos.len() >= num_items {
            skipped += 1;
            continue;
        }
        let j = loop {
            let j = rng.random_range(0..num_items as u32);
            if pos.binary_search(&j).is_err() {
                break j;
            }
        };
        triplets.push(Triplet::new(u, i, j));
    }
    if skipped > 0 {
        warn!("skipped {skipped} positives of users who interacted with every item");
    }
    TripletBatch::new(triplets)
}

/// First and second moment estimates shaped like the parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T> {
    pub first: Gradients<T>,
    pub second: Gradients<T>,
    pub step: u64,
}

impl<T: Real> AdamState<T> {
    pub fn new(params: &CascadeParams<T>) -> Self {
        AdamState {
            first: params.zeros_like(),
            second: params.zeros_like(),
            step: 0,
        }
    }
}

/// One bias-corrected Adam update. Nothing is modified if any gradient
/// entry is non-finite.
pub fn adam_step<T: Real>(
    params: &mut CascadeParams<T>,
    grads: &Gradients<T>,
    state: &mut AdamState<T>,
    config: &TrainConfig,
) -> Result<()> {
    let shapes = |p: &CascadeParams<T>| p.tensors().iter().map(|m| m.shape()).collect::<Vec<_>>();
    if shapes(params) != shapes(grads) || shapes(params) != shapes(&state.first) {
        return Err(Error::Contract(
            "gradient or optimizer state shape differs from parameters".into(),
        ));
    }
    for (t, g) in grads.tensors().iter().enumerate() {
        if let Some(index) = g.as_slice().iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFiniteGradient {
                tensor: grads.tensor_name(t),
                index,
            });
        }
    }

    state.step += 1;
    let AdamConfig { beta1, beta2, epsilon } = config.adam;
    let t = state.step as i32;
    let b1 = T::from_f64_lossy(beta1);
    let b2 = T::from_f64_lossy(beta2);
    let one = T::one();
    let correction1 = T::from_f64_lossy(1.0 - beta1.powi(t));
    let correction2 = T::from_f64_lossy(1.0 - beta2.powi(t));
    let lr = T::from_f64_lossy(config.learning_rate);
    let eps = T::from_f64_lossy(epsilon);

    let tensors = params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first.tensors_mut())
        .zip(state.second.tensors_mut());
    for (((p, g), m), v) in tensors {
        let iter = p
            .as_mut_slice()
            .iter_mut()
            .zip(g.as_slice())
            .zip(m.as_mut_slice().iter_mut())
            .zip(v.as_mut_slice().iter_mut());
        for (((theta, &g), m), v) in iter {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let m_hat = *m / correction1;
            let v_hat = *v / correction2;
            *theta -= lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

/// Supplies the early-stopping signal after each epoch.
pub trait Validator<T: Real> {
    /// Higher is better. `None` disables early stopping for this epoch.
    fn score(
        &mut self,
        graphs: &[BehaviorGraph],
        params: &CascadeParams<T>,
        config: &ModelConfig,
    ) -> Result<Option<f64>>;
}

/// Validation Recall@K with train positives excluded.
pub struct RecallValidator<'a> {
    pub held_out: &'a BTreeMap<u32, u32>,
    pub exclusions: Vec<Vec<u32>>,
    pub k: usize,
    pub exec: Exec,
}

impl<'a> RecallValidator<'a> {
    pub fn new(split: &'a SplitDataset, k: usize) -> Self {
        RecallValidator {
            held_out: &split.validation,
            exclusions: split.train_positives(),
            k,
            exec: Exec::default(),
        }
    }
}

impl<T: Real> Validator<T> for RecallValidator<'_> {
    fn score(
        &mut self,
        graphs: &[BehaviorGraph],
        params: &CascadeParams<T>,
        config: &ModelConfig,
    ) -> Result<Option<f64>> {
        if self.held_out.is_empty() {
            return Ok(None);
        }
        let trace = cascade_forward_with(self.exec, graphs, params, config)?;
        let report = evaluate_embeddings(
            &trace.final_users,
            &trace.final_items,
            self.held_out,
            &self.exclusions,
            &[self.k],
            self.exec,
        )?;
        Ok(Some(report.recall[0]))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Objective summed over the epoch's batches, divided by the number of
    /// positives.
    pub mean_loss: f64,
    pub validation: Option<f64>,
    pub steps: usize,
    pub elapsed_secs: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub records: Vec<EpochRecord>,
    /// Epoch whose parameters were returned.
    pub best_epoch: usize,
    pub monitor: String,
}

impl TrainingLog {
    /// One tab-separated line per epoch after a header.
    pub fn write_lines<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "epoch\tloss\t{}\tsteps\telapsed_secs", self.monitor)?;
        for r in &self.records {
            let val = r.validation.map_or_else(|| "-".to_string(), |v| format!("{v:.6}"));
            writeln!(
                w,
                "{}\t{:.6}\t{}\t{}\t{:.3}",
                r.epoch, r.mean_loss, val, r.steps, r.elapsed_secs
            )?;
        }
        Ok(())
    }

    /// The log without wall-clock times, for reproducibility checks.
    pub fn timeless(&self) -> Vec<(usize, u64, Option<u64>, usize)> {
        self.records
            .iter()
            .map(|r| (r.epoch, r.mean_loss.to_bits(), r.validation.map(f64::to_bits), r.steps))
            .collect()
    }
}

#[derive(Debug, Clone)]
pub struct FitOutcome<T> {
    pub params: CascadeParams<T>,
    pub log: TrainingLog,
    pub graphs: Vec<BehaviorGraph>,
}

/// One graph per behavior of the train split.
pub fn build_graphs(split: &SplitDataset) -> Result<Vec<BehaviorGraph>> {
    split
        .train
        .sets
        .iter()
        .map(|set| build_normalized_adjacency(set, split.num_users(), split.num_items()))
        .collect()
}

pub fn fit<T: Real>(split: &SplitDataset, model: &ModelConfig, train: &TrainConfig) -> Result<FitOutcome<T>> {
    let mut validator = RecallValidator::new(split, train.eval_k);
    fit_with_validator(split, model, train, &mut validator, Exec::default())
}

pub fn fit_with_validator<T: Real, V: Validator<T>>(
    split: &SplitDataset,
    model: &ModelConfig,
    train: &TrainConfig,
    validator: &mut V,
    exec: Exec,
) -> Result<FitOutcome<T>> {
    model.validate()?;
    train.validate()?;
    if model.num_behaviors() != split.train.num_behaviors() {
        return Err(Error::Config(format!(
            "model has {} layer settings for {} behaviors",
            model.num_behaviors(),
            split.train.num_behaviors()
        )));
    }
    let mut positives: Vec<(u32, u32)> = split.train.target().pairs().collect();
    if positives.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let graphs = build_graphs(split)?;
    let positives_by_user = split.train_positives();
    let (m, n) = (split.num_users(), split.num_items());

    let mut params: CascadeParams<T> = init_params(model, m, n, train.seed);
    let mut state = AdamState::new(&params);
    let mut rng = ChaCha8Rng::seed_from_u64(train.seed);
    rng.set_stream(1);
    let lambda = T::from_f64_lossy(train.lambda);

    let mut log = TrainingLog {
        monitor: format!("val_recall@{}", train.eval_k),
        ..Default::default()
    };
    let mut best: Option<(f64, CascadeParams<T>)> = None;
    let mut stale = 0usize;
    let started = Instant::now();

    for epoch in 1..=train.max_epochs {
        positives.shuffle(&mut rng);
        let mut total = 0.0f64;
        let mut steps = 0usize;
        for chunk in positives.chunks(train.batch_size) {
            let batch = sample_triplets(chunk, &positives_by_user, n, &mut rng);
            let trace = cascade_forward_with(exec, &graphs, &params, model)?;
            total += bpr_loss(&trace, &batch, &params, lambda)?.as_f64();
            let grads = backward_batch_with(exec, &trace, &graphs, &batch, &params, model, lambda)?;
            adam_step(&mut params, &grads, &mut state, train)?;
            steps += 1;
        }
        let mean_loss = total / positives.len() as f64;
        let validation = validator.score(&graphs, &params, model)?;
        debug!("epoch {epoch}: loss {mean_loss:.6} validation {validation:?}");
        log.records.push(EpochRecord {
            epoch,
            mean_loss,
            validation,
            steps,
            elapsed_secs: started.elapsed().as_secs_f64(),
        });

        match validation {
            Some(v) if best.as_ref().is_none_or(|(b, _)| v > *b) => {
                best = Some((v, params.clone()));
                log.best_epoch = epoch;
                stale = 0;
            }
            Some(_) => {
                stale += 1;
                if stale >= train.patience {
                    break;
                }
            }
            None => {
                best = None;
                log.best_epoch = epoch;
            }
        }
    }

    let params = match best {
        Some((_, p)) => p,
        None => params,
    };
    Ok(FitOutcome { params, log, graphs })
}
