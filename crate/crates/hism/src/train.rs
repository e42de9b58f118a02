//! Mini-batch Adam training with plateau learning-rate decay, early
//! stopping and best-validation restore.

use std::io::Write;

use attnlab_core::rng;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::dataset::{split_trials, Dataset, Split};
use crate::model::{HismModel, Mode, ModelConfig, Variant};
use crate::HismError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub lr: f64,
    pub lr_factor: f64,
    pub plateau_epochs: usize,
    pub early_stop_epochs: usize,
    pub max_epochs: usize,
    /// Train, validation and test fractions.
    pub split: [f64; 3],
    pub beta1: f64,
    pub beta2: f64,
    pub adam_eps: f64,
    /// Relative decrease a validation loss needs to count as improvement.
    pub rel_threshold: f64,
    pub model: ModelConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 32,
            lr: 1e-4,
            lr_factor: 0.8,
            plateau_epochs: 5,
            early_stop_epochs: 10,
            max_epochs: 200,
            split: [0.6, 0.1, 0.3],
            beta1: 0.9,
            beta2: 0.999,
            adam_eps: 1e-8,
            rel_threshold: 1e-4,
            model: ModelConfig::default(),
        }
    }
}

pub struct Adam {
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl Adam {
    pub fn new(model: &HismModel, beta1: f64, beta2: f64, eps: f64) -> Self {
        let zeros: Vec<Vec<f64>> = model.params.iter().map(|p| vec![0.0; p.len()]).collect();
        Adam {
            beta1,
            beta2,
            eps,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn update(&mut self, model: &mut HismModel, grads: &[Vec<f64>], lr: f64) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (k, p) in model.params.iter_mut().enumerate() {
            let (m, v) = (&mut self.m[k], &mut self.v[k]);
            for (j, w) in p.data.iter_mut().enumerate() {
                let g = grads[k][j];
                m[j] = self.beta1 * m[j] + (1.0 - self.beta1) * g;
                v[j] = self.beta2 * v[j] + (1.0 - self.beta2) * g * g;
                *w -= lr * (m[j] / c1) / ((v[j] / c2).sqrt() + self.eps);
            }
        }
    }
}

/// Tracks the best value seen and how many evaluations since it improved.
#[derive(Debug, Clone)]
pub struct Plateau {
    rel_threshold: f64,
    pub best: f64,
    pub stale: usize,
}

impl Plateau {
    pub fn new(rel_threshold: f64) -> Self {
        Plateau {
            rel_threshold,
            best: f64::INFINITY,
            stale: 0,
        }
    }

    /// Returns true when `value` improves on the best.
    pub fn observe(&mut self, value: f64) -> bool {
        if value < self.best * (1.0 - self.rel_threshold) || self.best.is_infinite() {
            self.best = value;
            self.stale = 0;
            true
        } else {
            self.stale += 1;
            false
        }
    }
}

/// Multiplies the learning rate by `factor` after `patience` consecutive
/// non-improving epochs, then starts counting again.
#[derive(Debug, Clone)]
pub struct PlateauScheduler {
    pub lr: f64,
    factor: f64,
    patience: usize,
    plateau: Plateau,
}

impl PlateauScheduler {
    pub fn new(lr: f64, factor: f64, patience: usize, rel_threshold: f64) -> Self {
        PlateauScheduler {
            lr,
            factor,
            patience,
            plateau: Plateau::new(rel_threshold),
        }
    }

    /// Feeds one validation loss; returns true if the rate was reduced.
    pub fn step(&mut self, val: f64) -> bool {
        self.plateau.observe(val);
        if self.plateau.stale >= self.patience {
            self.plateau.stale = 0;
            self.lr *= self.factor;
            true
        } else {
            false
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub lr: f64,
}

#[derive(Debug, Clone)]
pub struct TrainResult {
    pub model: HismModel,
    pub history: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val: f64,
    pub splits: Vec<Split>,
}

/// Trains `variant` on `data`. Streams: init `(seed, variant, 1)`, shuffling
/// `(seed, variant, 2)`, dropout `(seed, variant, 3)`; the split uses the
/// seed directly so every variant sees the same partition.
pub fn train(data: &Dataset, variant: Variant, cfg: &TrainConfig, seed: u64) -> Result<TrainResult, HismError> {
    if data.samples.is_empty() {
        return Err(HismError::EmptySplit("dataset"));
    }
    if cfg.batch_size == 0 {
        return Err(HismError::Shape("batch size must be positive".into()));
    }
    let splits = split_trials(&data.trials, cfg.split, seed)?;
    let train_idx = data.indices(&splits, Split::Train);
    let val_idx = data.indices(&splits, Split::Val);
    let tag = variant.tag() as u64;
    let mcfg = ModelConfig {
        variant,
        ..cfg.model.clone()
    };
    let mut model = HismModel::new(mcfg, &mut rng::stream(seed, rng::label(&[tag, 1])))?;
    let mut shuffle_rng = rng::stream(seed, rng::label(&[tag, 2]));
    let mut dropout_rng = rng::stream(seed, rng::label(&[tag, 3]));
    let mut adam = Adam::new(&model, cfg.beta1, cfg.beta2, cfg.adam_eps);
    let mut sched = PlateauScheduler::new(cfg.lr, cfg.lr_factor, cfg.plateau_epochs, cfg.rel_threshold);
    let mut stop = Plateau::new(cfg.rel_threshold);
    let mut best = (model.params.clone(), 0usize, f64::INFINITY);
    let mut history = Vec::new();
    let mut order = train_idx.clone();
    for epoch in 1..=cfg.max_epochs {
        order.shuffle(&mut shuffle_rng);
        let lr = sched.lr;
        let mut sum = 0.0;
        for chunk in order.chunks(cfg.batch_size) {
            let (loss, grads) = model.loss_and_grad(
                &data.images,
                &data.items(chunk),
                &data.targets(chunk),
                Mode::Train(&mut dropout_rng),
            )?;
            sum += loss * chunk.len() as f64;
            adam.update(&mut model, &grads, lr);
        }
        let train_mse = sum / order.len() as f64;
        let val_mse = data.mse(&model, &val_idx)?;
        history.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            lr,
        });
        if val_mse < best.2 {
            best = (model.params.clone(), epoch, val_mse);
        }
        sched.step(val_mse);
        stop.observe(val_mse);
        if stop.stale >= cfg.early_stop_epochs {
            break;
        }
    }
    model.params = best.0;
    Ok(TrainResult {
        model,
        history,
        best_epoch: best.1,
        best_val: best.2,
        splits,
    })
}

pub fn write_history_csv<W: Write>(history: &[EpochRecord], mut out: W) -> std::io::Result<()> {
    writeln!(out, "epoch,train_mse,val_mse,lr")?;
    for r in history {
        writeln!(out, "{},{},{},{}", r.epoch, r.train_mse, r.val_mse, r.lr)?;
    }
    Ok(())
}
