use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::arcface::{arcface_grad, ArcFaceConfig, HeadParams};
use crate::error::{Error, Result};
use crate::hash::split_seed;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainSchedule {
    pub lr_init: f64,
    pub epochs: usize,
    pub momentum: f64,
    pub batch_size: usize,
    pub seed: u64,
}

impl Default for TrainSchedule {
    fn default() -> Self {
        Self {
            lr_init: 0.1,
            epochs: 200,
            momentum: 0.9,
            batch_size: 64,
            seed: 0,
        }
    }
}

impl TrainSchedule {
    /// Pre-training defaults: lr 0.1 for 200 epochs.
    pub fn pretrain(seed: u64) -> Self {
        Self {
            seed,
            ..Self::default()
        }
    }

    /// Fine-tuning defaults: lr 0.01 for 50 epochs.
    pub fn finetune(seed: u64) -> Self {
        Self {
            lr_init: 0.01,
            epochs: 50,
            seed,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_init >= 0.0 && self.lr_init.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be >= 0", self.lr_init)));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch size must be positive".into()));
        }
        Ok(())
    }

    /// Cosine decay from `lr_init` at step 0 to zero at `total`.
    pub fn lr_at(&self, step: usize, total: usize) -> f64 {
        if total == 0 {
            return self.lr_init;
        }
        let progress = step as f64 / total as f64;
        0.5 * self.lr_init * (1.0 + (std::f64::consts::PI * progress).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainOutcome {
    pub head: HeadParams,
    /// Mean training loss of each epoch, measured during that epoch.
    pub loss_trace: Vec<f64>,
}

impl TrainOutcome {
    pub fn accuracy(&self, examples: &[(Vec<f64>, usize)]) -> Result<f64> {
        let mut hits = 0usize;
        for (emb, label) in examples {
            hits += usize::from(self.head.predict(emb)? == *label);
        }
        Ok(hits as f64 / examples.len().max(1) as f64)
    }
}

fn check_task(examples: &[(Vec<f64>, usize)], cfg: &ArcFaceConfig) -> Result<()> {
    if cfg.num_classes < 2 {
        return Err(Error::DegenerateTask(format!(
            "need at least 2 classes, got {}",
            cfg.num_classes
        )));
    }
    let mut seen = vec![false; cfg.num_classes];
    for (emb, label) in examples {
        if emb.len() != cfg.embed_dim {
            return Err(Error::Domain(format!(
                "example of dimension {} for a {}-dimensional head",
                emb.len(),
                cfg.embed_dim
            )));
        }
        *seen.get_mut(*label).ok_or_else(|| {
            Error::Domain(format!("label {label} out of range for {} classes", cfg.num_classes))
        })? = true;
    }
    if let Some(missing) = seen.iter().position(|s| !s) {
        return Err(Error::DegenerateTask(format!("class {missing} has no examples")));
    }
    Ok(())
}

/// Trains a fresh head initialized from `schedule.seed`.
pub fn train_head(
    examples: &[(Vec<f64>, usize)],
    cfg: &ArcFaceConfig,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    let init = HeadParams::init(
        split_seed(schedule.seed, "head-init"),
        cfg.num_classes,
        cfg.embed_dim,
    );
    train_head_from(init, examples, cfg, schedule)
}

/// Mini-batch SGD with momentum and cosine learning-rate decay.
///
/// Batches are drawn from a per-epoch shuffle seeded by `schedule.seed`, and
/// the batch gradient is summed in batch order, so a given seed reproduces
/// the same parameters bit for bit.
pub fn train_head_from(
    init: HeadParams,
    examples: &[(Vec<f64>, usize)],
    cfg: &ArcFaceConfig,
    schedule: &TrainSchedule,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    schedule.validate()?;
    check_task(examples, cfg)?;
    if init.num_classes != cfg.num_classes || init.dim != cfg.embed_dim {
        return Err(Error::Domain("initial head does not match the classifier config".into()));
    }

    let mut head = init;
    let mut velocity = vec![0.0; head.weights.len()];
    let mut grad = vec![0.0; head.weights.len()];
    let mut order: Vec<usize> = (0..examples.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(split_seed(schedule.seed, "head-shuffle"));
    let steps_per_epoch = examples.len().div_ceil(schedule.batch_size);
    let total_steps = steps_per_epoch * schedule.epochs;
    let mut step = 0;
    let mut loss_trace = Vec::with_capacity(schedule.epochs);

    for _ in 0..schedule.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(schedule.batch_size) {
            grad.fill(0.0);
            for &i in batch {
                let (emb, label) = &examples[i];
                let g = arcface_grad(emb, *label, &head, cfg)?;
                epoch_loss += g.loss;
                grad.iter_mut().zip(&g.d_weights).for_each(|(a, b)| *a += b);
            }
            let lr = schedule.lr_at(step, total_steps);
            let inv = 1.0 / batch.len() as f64;
            for ((w, v), g) in head.weights.iter_mut().zip(&mut velocity).zip(&grad) {
                *v = schedule.momentum * *v + g * inv;
                *w -= lr * *v;
            }
            step += 1;
        }
        loss_trace.push(epoch_loss / examples.len() as f64);
    }

    if !head.is_finite() {
        return Err(Error::Domain("training diverged to non-finite weights".into()));
    }
    Ok(TrainOutcome { head, loss_trace })
}
