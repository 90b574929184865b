//! Supervised training with Adam, seeded shuffling and best-on-validation
//! model selection.

use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::data::{split_by_date, DailySample, Hemisphere, NormStats};
use crate::error::{Error, Result};
use crate::eval::{self, KnnK, MethodPredictions, SeasonMetrics, SeasonReport};
use crate::model::{loss_and_grads, Disaggregator, ModelConfig, ModelInputs, ModelParams};
use crate::numerics::Matrix;
use crate::optim::{adam_step, AdamConfig, AdamState};

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    pub repeats: usize,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Stop after this many epochs without a validation improvement; 0 disables.
    pub patience: usize,
    /// Share of the latest training dates held out for model selection.
    pub val_fraction: f64,
    /// Worker threads for per-sample gradients; 0 uses the global pool.
    pub threads: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            epochs: 100,
            batch_size: 32,
            seed: 0,
            repeats: 5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            patience: 15,
            val_fraction: 0.1,
            threads: 0,
        }
    }
}

impl TrainConfig {
    /// Checks the invariants. A learning rate of exactly zero is accepted as a
    /// null-update audit run.
    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(Error::Config(msg));
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return bad(format!("train.learning_rate must be a finite value >= 0, got {}", self.learning_rate));
        }
        if self.epochs < 1 {
            return bad("train.epochs must be >= 1".into());
        }
        if self.batch_size < 1 {
            return bad("train.batch_size must be >= 1".into());
        }
        if self.repeats < 1 {
            return bad("train.repeats must be >= 1".into());
        }
        for (name, b) in [("train.beta1", self.beta1), ("train.beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return bad(format!("{name} must lie in [0, 1), got {b}"));
            }
        }
        if !(self.epsilon > 0.0) {
            return bad(format!("train.epsilon must be > 0, got {}", self.epsilon));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return bad(format!("train.val_fraction must lie in [0, 1), got {}", self.val_fraction));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            beta1: self.beta1,
            beta2: self.beta2,
            epsilon: self.epsilon,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct TrainHistory {
    pub train_loss: Vec<f64>,
    pub val_mae: Vec<f64>,
    pub val_rmse: Vec<f64>,
    pub epoch_seconds: Vec<f64>,
    /// Zero-based epoch whose parameters were kept.
    pub best_epoch: usize,
}

impl TrainHistory {
    pub fn epochs(&self) -> usize {
        self.train_loss.len()
    }

    /// History CSV. Wall-clock time is left out so reruns compare equal.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("epoch,train_loss,val_mae,val_rmse\n");
        for i in 0..self.epochs() {
            out.push_str(&format!(
                "{},{},{},{}\n",
                i + 1,
                self.train_loss[i],
                self.val_mae[i],
                self.val_rmse[i]
            ));
        }
        out
    }
}

/// Runs `f` on a pool of `threads` workers, or the global pool for 0.
pub fn with_threads<T: Send>(threads: usize, f: impl FnOnce() -> T + Send) -> Result<T> {
    if threads == 0 {
        return Ok(f());
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::Config(format!("cannot start {threads} worker threads: {e}")))?;
    Ok(pool.install(f))
}

fn targets(samples: &[DailySample]) -> Result<Vec<&[f64]>> {
    samples
        .iter()
        .map(|s| {
            s.pv_truth.as_deref().ok_or_else(|| {
                Error::Validation(format!("training day {} {} has no PV truth", s.prosumer_id, s.date))
            })
        })
        .collect()
}

/// Mean per-day MAE and RMSE of `model` on `samples`.
pub fn validation_metrics(model: &Disaggregator, samples: &[DailySample]) -> Result<(f64, f64)> {
    let per_day = samples
        .par_iter()
        .map(|s| {
            let p = model.predict_day(s)?;
            let t = targets(std::slice::from_ref(s))?[0];
            Ok((eval::mae(&p.ghat, t)?, eval::rmse(&p.ghat, t)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let n = per_day.len().max(1) as f64;
    let (m, r) = per_day.iter().fold((0.0, 0.0), |(a, b), (m, r)| (a + m, b + r));
    Ok((m / n, r / n))
}

/// Seeded initialization with the output bias set to the slot-wise mean
/// target of `fit`, so no output slot starts below the final ReLU on every day.
pub fn initial_params(model_cfg: &ModelConfig, fit: &[DailySample], seed: u64) -> Result<ModelParams<f64>> {
    let mut params = ModelParams::init(model_cfg, seed)?;
    let mean = eval::mean_baseline(fit)?;
    if let Some(last) = params.pred.layers.last_mut() {
        last.bias = Matrix::row_vector(mean);
    }
    Ok(params)
}

/// Trains on type-1 days.
///
/// The last `val_fraction` of dates is held out; normalization is fit on the
/// remainder. Returns the parameters from the epoch with the lowest validation
/// MAE (training MAE when nothing is held out).
pub fn train(dataset: &[DailySample], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Disaggregator, TrainHistory)> {
    cfg.validate()?;
    model_cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::EmptyDataset("training needs at least one day with PV truth".into()));
    }
    for s in dataset {
        s.validate()?;
    }
    targets(dataset)?;
    with_threads(cfg.threads, || train_inner(dataset, model_cfg, cfg))?
}

fn train_inner(dataset: &[DailySample], model_cfg: &ModelConfig, cfg: &TrainConfig) -> Result<(Disaggregator, TrainHistory)> {
    let (fit, val) = split_by_date(dataset, cfg.val_fraction);
    let (fit, val) = if fit.is_empty() { (val, Vec::new()) } else { (fit, val) };
    let truth = targets(&fit)?;
    if truth.windows(2).all(|w| w[0] == w[1]) && truth[0].windows(2).all(|w| w[0] == w[1]) {
        log::warn!("every training target is identical; the model can only learn a constant");
    }
    let norm = NormStats::fit(&fit)?;
    let inputs: Vec<ModelInputs<f64>> = fit
        .iter()
        .map(|s| ModelInputs::from_sample(s, &norm, model_cfg))
        .collect::<Result<_>>()?;
    let mut model = Disaggregator {
        config: model_cfg.clone(),
        norm,
        params: initial_params(model_cfg, &fit, cfg.seed)?,
    };
    let names: Vec<String> = model.params.named_tensors().into_iter().map(|(n, _)| n).collect();
    let mut state = AdamState::new(model.params.named_tensors().iter().map(|(_, t)| t.shape()));
    let adam = cfg.adam();
    let selection = if val.is_empty() { &fit } else { &val };

    let mut history = TrainHistory::default();
    let mut best: Option<(f64, ModelParams<f64>)> = None;
    let mut since_best = 0;
    for epoch in 0..cfg.epochs {
        let started = Instant::now();
        let mut order: Vec<usize> = (0..fit.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64);
        order.shuffle(&mut rng);

        let mut day_loss = vec![0.0; fit.len()];
        for batch in order.chunks(cfg.batch_size) {
            let per_sample = batch
                .par_iter()
                .map(|&i| loss_and_grads(model_cfg, &model.params, &inputs[i], truth[i]))
                .collect::<Result<Vec<_>>>()?;
            let scale = 1.0 / batch.len() as f64;
            let mut grads: Vec<Matrix<f64>> = per_sample[0].1.iter().map(|g| Matrix::zeros(g.rows(), g.cols())).collect();
            for (&i, (loss, g)) in batch.iter().zip(&per_sample) {
                day_loss[i] = *loss;
                for (acc, gi) in grads.iter_mut().zip(g) {
                    acc.add_assign(gi);
                }
            }
            for g in &mut grads {
                g.scale_in_place(scale);
            }
            adam_step(&mut model.params.tensors_mut(), &grads, &names, &mut state, &adam)?;
        }

        let (vm, vr) = validation_metrics(&model, selection)?;
        // Summed in sample order so the value does not depend on the shuffle.
        history.train_loss.push(day_loss.iter().sum::<f64>() / fit.len() as f64);
        history.val_mae.push(vm);
        history.val_rmse.push(vr);
        history.epoch_seconds.push(started.elapsed().as_secs_f64());
        log::debug!("epoch {} loss {:.6} val mae {:.6}", epoch + 1, history.train_loss[epoch], vm);

        if best.as_ref().is_none_or(|(b, _)| vm < *b) {
            best = Some((vm, model.params.clone()));
            history.best_epoch = epoch;
            since_best = 0;
        } else {
            since_best += 1;
            if cfg.patience > 0 && since_best >= cfg.patience {
                log::info!("early stop after epoch {}", epoch + 1);
                break;
            }
        }
    }
    if let Some((_, params)) = best {
        model.params = params;
    }
    Ok((model, history))
}

/// One seeded train + evaluate cycle.
#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub seed: u64,
    pub model: Disaggregator,
    pub history: TrainHistory,
    pub predictions: MethodPredictions,
    pub metrics: Vec<SeasonMetrics>,
}

/// Trains and evaluates `cfg.repeats` times with seeds `seed, seed+1, ...`,
/// then aggregates the season metrics.
pub fn repeated_runs(
    train_set: &[DailySample],
    test_set: &[DailySample],
    model_cfg: &ModelConfig,
    cfg: &TrainConfig,
    knn_k: KnnK,
    hemisphere: Hemisphere,
    dataset_id: &str,
) -> Result<(SeasonReport, Vec<RunOutcome>)> {
    cfg.validate()?;
    let mut runs = Vec::with_capacity(cfg.repeats);
    for i in 0..cfg.repeats {
        let seed = cfg.seed.wrapping_add(i as u64);
        let run_cfg = TrainConfig { seed, ..cfg.clone() };
        let (model, history) = train(train_set, model_cfg, &run_cfg)?;
        let predictions = with_threads(cfg.threads, || {
            eval::predict_all(&model, train_set, test_set, knn_k, cfg.val_fraction)
        })??;
        let metrics = eval::season_metrics(test_set, &predictions, hemisphere)?;
        log::info!("repeat {}/{} (seed {seed}) done after {} epochs", i + 1, cfg.repeats, history.epochs());
        runs.push(RunOutcome { seed, model, history, predictions, metrics });
    }
    let cells: Vec<Vec<SeasonMetrics>> = runs.iter().map(|r| r.metrics.clone()).collect();
    let report = SeasonReport::from_runs(&cells, cfg.seed, dataset_id)?;
    Ok((report, runs))
}
