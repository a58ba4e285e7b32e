use serde::{Deserialize, Serialize};

use super::net::training_step;
use super::{EpisodeClip, ModelConfig, ModelParams};
use crate::diffcore::{cosine_lr, Rng, Sgd, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    /// Cosine decay of the learning rate to zero over the run.
    pub cosine: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 4,
            lr: 0.001,
            momentum: 0.9,
            weight_decay: 1e-4,
            cosine: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainRecord {
    pub step: usize,
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
    pub lr: f64,
}

impl TrainRecord {
    /// One line of the training log.
    pub fn to_line(&self) -> String {
        format!(
            "step={} loss={:.9} ce={:.9} kl={:.9} lr={:.9}",
            self.step, self.loss, self.ce, self.kl, self.lr
        )
    }
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<TrainRecord>,
}

/// Batch-size-1 SGD over shuffled epochs. Each record is passed to
/// `on_record` as it is produced.
pub fn train(
    episodes: &[EpisodeClip],
    env: &Tensor,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    tcfg: &TrainConfig,
    mut on_record: impl FnMut(&TrainRecord),
) -> Result<TrainLog> {
    cfg.validate()?;
    if episodes.is_empty() {
        return Err(Error::Invalid("no training episodes".into()));
    }
    for ep in episodes {
        ep.validate(cfg)?;
    }
    let mut order_rng = Rng::new(tcfg.seed).fork(1);
    let mut noise_rng = Rng::new(tcfg.seed).fork(2);
    let opt = Sgd {
        lr: tcfg.lr,
        momentum: tcfg.momentum,
        weight_decay: tcfg.weight_decay,
    };
    let total = tcfg.epochs * episodes.len();
    let mut order: Vec<usize> = (0..episodes.len()).collect();
    let mut log = TrainLog::default();
    params.zero_grad();
    for _ in 0..tcfg.epochs {
        order_rng.shuffle(&mut order);
        for &i in &order {
            let step = log.records.len();
            let lr = if tcfg.cosine { cosine_lr(tcfg.lr, step, total) } else { tcfg.lr };
            let loss = training_step(&episodes[i], env, params, cfg, &mut noise_rng)?;
            if !loss.loss.is_finite() {
                return Err(Error::NonFinite { step });
            }
            opt.step_with_lr(params.params_mut(), lr);
            let rec = TrainRecord {
                step,
                loss: loss.loss,
                ce: loss.ce,
                kl: loss.kl,
                lr,
            };
            on_record(&rec);
            log.records.push(rec);
        }
    }
    Ok(log)
}
