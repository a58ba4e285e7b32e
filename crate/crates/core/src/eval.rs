//! Recognition accuracy and binarized-heatmap localization metrics.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::location_prior::{downsample_distribution, LocationDistribution};
use crate::model::{infer, EpisodeClip, ModelConfig, ModelParams};

/// Heatmap downsampling applied before localization scoring, relative to the
/// parent grid.
pub const HEATMAP_FACTORS: [usize; 3] = [4, 4, 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassAccuracy {
    pub class: usize,
    pub correct: usize,
    pub total: usize,
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Recognition {
    pub mean_class_acc: f64,
    pub top1_acc: f64,
    /// Classes that occur in the labels, ascending.
    pub per_class: Vec<ClassAccuracy>,
}

/// Top-1 accuracy and the unweighted mean of per-class accuracies over the
/// classes present in `labels`.
pub fn recognition_metrics(preds: &[usize], labels: &[usize], num_classes: usize) -> Result<Recognition> {
    if preds.is_empty() || preds.len() != labels.len() {
        return Err(Error::Invalid(format!(
            "need equal, non-empty prediction and label lists ({} vs {})",
            preds.len(),
            labels.len()
        )));
    }
    let mut correct = vec![0usize; num_classes];
    let mut total = vec![0usize; num_classes];
    for (&p, &y) in preds.iter().zip(labels) {
        if y >= num_classes || p >= num_classes {
            return Err(Error::Invalid(format!("class id out of range [0, {num_classes})")));
        }
        total[y] += 1;
        if p == y {
            correct[y] += 1;
        }
    }
    let per_class: Vec<ClassAccuracy> = (0..num_classes)
        .filter(|&c| total[c] > 0)
        .map(|c| ClassAccuracy {
            class: c,
            correct: correct[c],
            total: total[c],
            accuracy: correct[c] as f64 / total[c] as f64,
        })
        .collect();
    let mean_class_acc = per_class.iter().map(|c| c.accuracy).sum::<f64>() / per_class.len() as f64;
    let top1_acc = correct.iter().sum::<usize>() as f64 / labels.len() as f64;
    Ok(Recognition {
        mean_class_acc,
        top1_acc,
        per_class,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LocScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

pub fn f1(precision: f64, recall: f64) -> f64 {
    if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    }
}

/// Default binarization threshold: the uniform density of the downsampled grid.
pub fn uniform_tau(dims: [usize; 3], factors: [usize; 3]) -> f64 {
    let cells: usize = (0..3).map(|a| dims[a] / factors[a].max(1)).product();
    1.0 / cells as f64
}

/// Sum-pools both maps by `factors`, marks cells strictly above `tau`, and
/// scores the predicted set against the ground-truth set.
pub fn localization_metrics(
    pred: &LocationDistribution,
    gt: &LocationDistribution,
    factors: [usize; 3],
    tau: Option<f64>,
) -> Result<LocScore> {
    if pred.dims != gt.dims {
        return Err(Error::Shape(format!(
            "prediction {:?} and ground truth {:?} differ",
            pred.dims, gt.dims
        )));
    }
    let tau = tau.unwrap_or_else(|| uniform_tau(pred.dims, factors));
    let p = downsample_distribution(pred, factors)?;
    let g = downsample_distribution(gt, factors)?;
    let (mut tp, mut np, mut ng) = (0usize, 0usize, 0usize);
    for (&a, &b) in p.probs.iter().zip(&g.probs) {
        let (a, b) = (a > tau, b > tau);
        np += a as usize;
        ng += b as usize;
        tp += (a && b) as usize;
    }
    let precision = if np > 0 { tp as f64 / np as f64 } else { 0.0 };
    let recall = if ng > 0 { tp as f64 / ng as f64 } else { 0.0 };
    Ok(LocScore {
        precision,
        recall,
        f1: f1(precision, recall),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub mean_class_acc: f64,
    pub top1_acc: f64,
    pub loc_precision: f64,
    pub loc_recall: f64,
    pub loc_f1: f64,
    pub per_class: Vec<ClassAccuracy>,
    pub episodes: usize,
}

impl EvalReport {
    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        writeln!(s, "episodes = {}", self.episodes).unwrap();
        writeln!(s, "mean_class_acc = {:.6}", self.mean_class_acc).unwrap();
        writeln!(s, "top1_acc = {:.6}", self.top1_acc).unwrap();
        writeln!(s, "loc_precision = {:.6}", self.loc_precision).unwrap();
        writeln!(s, "loc_recall = {:.6}", self.loc_recall).unwrap();
        writeln!(s, "loc_f1 = {:.6}", self.loc_f1).unwrap();
        for c in &self.per_class {
            writeln!(s, "class_{}_acc = {:.6} ({}/{})", c.class, c.accuracy, c.correct, c.total).unwrap();
        }
        s
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodePrediction {
    pub id: usize,
    pub label: usize,
    pub pred: usize,
    /// Flat index of the most probable location cell.
    pub top_voxel: usize,
    pub loc: LocScore,
}

impl EpisodePrediction {
    pub fn csv_header() -> &'static str {
        "episode,label,pred,top_voxel"
    }

    pub fn to_csv(&self) -> String {
        format!("{},{},{},{}", self.id, self.label, self.pred, self.top_voxel)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalOptions {
    /// Downsampling of the location map before scoring.
    pub factors: [usize; 3],
    /// Binarization threshold; `None` means [`uniform_tau`].
    pub tau: Option<f64>,
    pub workers: usize,
}

impl EvalOptions {
    /// Factors that bring a location map pooled by `env_pool` to the standard
    /// heatmap resolution.
    pub fn for_model(cfg: &ModelConfig) -> Self {
        let factors = std::array::from_fn(|a| {
            let (h, p) = (HEATMAP_FACTORS[a], cfg.env_pool[a]);
            if h % p == 0 && cfg.loc_dims[a] % (h / p) == 0 {
                h / p
            } else {
                1
            }
        });
        Self {
            factors,
            tau: None,
            workers: 1,
        }
    }
}

/// Runs deterministic inference on every episode and aggregates recognition
/// and localization metrics. Dataset precision and recall are per-clip
/// means; F1 is computed from them.
pub fn evaluate(
    params: &ModelParams,
    cfg: &ModelConfig,
    episodes: &[EpisodeClip],
    env: &Tensor,
    opts: &EvalOptions,
) -> Result<(EvalReport, Vec<EpisodePrediction>)> {
    if episodes.is_empty() {
        return Err(Error::Invalid("no episodes to evaluate".into()));
    }
    let score = |id: usize| -> Result<EpisodePrediction> {
        let ep = &episodes[id];
        let out = infer(ep, env, params, cfg)?;
        let loc = localization_metrics(&out.location, &ep.q, opts.factors, opts.tau)?;
        Ok(EpisodePrediction {
            id,
            label: ep.label,
            pred: out.label,
            top_voxel: out.location.argmax(),
            loc,
        })
    };

    let workers = opts.workers.clamp(1, episodes.len());
    let preds: Vec<EpisodePrediction> = if workers == 1 {
        (0..episodes.len()).map(score).collect::<Result<_>>()?
    } else {
        let chunk = episodes.len().div_ceil(workers);
        std::thread::scope(|s| {
            let handles: Vec<_> = (0..workers)
                .map(|w| {
                    let score = &score;
                    s.spawn(move || {
                        (w * chunk..((w + 1) * chunk).min(episodes.len()))
                            .map(score)
                            .collect::<Result<Vec<_>>>()
                    })
                })
                .collect();
            let mut all = Vec::with_capacity(episodes.len());
            for h in handles {
                all.extend(h.join().expect("evaluation worker panicked")?);
            }
            Ok::<_, Error>(all)
        })?
    };

    let labels: Vec<usize> = preds.iter().map(|p| p.label).collect();
    let predicted: Vec<usize> = preds.iter().map(|p| p.pred).collect();
    let rec = recognition_metrics(&predicted, &labels, cfg.num_actions)?;
    let n = preds.len() as f64;
    let precision = preds.iter().map(|p| p.loc.precision).sum::<f64>() / n;
    let recall = preds.iter().map(|p| p.loc.recall).sum::<f64>() / n;
    let report = EvalReport {
        mean_class_acc: rec.mean_class_acc,
        top1_acc: rec.top1_acc,
        loc_precision: precision,
        loc_recall: recall,
        loc_f1: f1(precision, recall),
        per_class: rec.per_class,
        episodes: preds.len(),
    };
    Ok((report, preds))
}
