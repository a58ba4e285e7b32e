//! The joint recognition and localization model.
//!
//! A video branch and an environment branch each produce a feature map on
//! the location grid. A per-cell linear head over their concatenation gives
//! the location distribution `p(r|x,e)`; a Gumbel-Softmax sample of it
//! weights the environment features, which are pooled, joined with the
//! pooled video features, and classified.

mod net;
mod params;
mod train;

use serde::{Deserialize, Serialize};

pub use net::{
    classify, encode_env, encode_env_input, encode_video, infer, loss_with_noise, predict_location,
    prepare_env, training_step, training_step_with_noise, Inference, StepLoss,
};
pub use params::{ConvLayer, EnvBranch, LinearLayer, ModelParams, VideoBranch};
pub use train::{train, TrainConfig, TrainLog, TrainRecord};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};
use crate::location_prior::{CameraTrack, LocationDistribution};
use crate::mesh_env::{DescriptorKind, EnvDescriptor};

/// Ablations of the full model used as baselines.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    /// Stochastic location sample weights the environment features.
    Full,
    /// Environment branch output is zero; only video features are used.
    VideoOnly,
    /// Environment features are pooled with fixed uniform weights.
    GlobalEnv,
    /// The location distribution itself weights the environment features,
    /// with no sampling.
    Deterministic,
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Variant::Full,
            "video-only" => Variant::VideoOnly,
            "global-env" => Variant::GlobalEnv,
            "deterministic" => Variant::Deterministic,
            _ => return Err(Error::Invalid(format!("unknown model variant {s:?}"))),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    /// Location map dims (W, D, H); the parent grid divided by `env_pool`.
    pub loc_dims: [usize; 3],
    /// Block-average factors taking environment features from the parent
    /// grid to the location grid.
    pub env_pool: [usize; 3],
    /// Channels of the observation volume.
    pub obs_channels: usize,
    /// Input channels of the environment branch (see [`env_input_channels`]).
    pub env_channels: usize,
    pub c_phi: usize,
    pub c_psi: usize,
    /// Gumbel-Softmax temperature.
    pub theta: f64,
    pub num_actions: usize,
    /// Weight of the KL term.
    pub lambda_kl: f64,
    pub variant: Variant,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.theta > 0.0) {
            return Err(Error::Invalid(format!("theta must be positive, got {}", self.theta)));
        }
        if self.num_actions < 2 {
            return Err(Error::Invalid("need at least two action classes".into()));
        }
        if !(self.lambda_kl >= 0.0) {
            return Err(Error::Invalid("lambda_kl must be >= 0".into()));
        }
        if self.loc_dims.contains(&0) || self.env_pool.contains(&0) {
            return Err(Error::Invalid("grid dims and pool factors must be positive".into()));
        }
        if self.obs_channels == 0 || self.env_channels == 0 || self.c_phi == 0 || self.c_psi == 0 {
            return Err(Error::Invalid("channel counts must be positive".into()));
        }
        Ok(())
    }

    pub fn loc_cells(&self) -> usize {
        self.loc_dims.iter().product()
    }

    /// Parent grid dims implied by the location grid and pooling.
    pub fn parent_dims(&self) -> [usize; 3] {
        std::array::from_fn(|a| self.loc_dims[a] * self.env_pool[a])
    }

    pub fn obs_dims(&self, frames: usize) -> Vec<usize> {
        let [w, d, h] = self.loc_dims;
        vec![frames, w, d, h, self.obs_channels]
    }
}

/// Environment branch input channels for a descriptor: HVR class ids are
/// one-hot expanded per child slot (M³·C); probability descriptors are used
/// as they are.
pub fn env_input_channels(e: &EnvDescriptor) -> usize {
    match e.kind {
        DescriptorKind::Hvr => e.grid.children_per_parent() * e.num_classes,
        _ => e.channels(),
    }
}

/// One trimmed clip: an observation volume of T frames on the location grid,
/// its action label, and the location prior supervising it.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeClip {
    /// T×W×D×H×C_f observation volume.
    pub obs: Tensor,
    pub label: usize,
    pub q: LocationDistribution,
    pub track: CameraTrack,
    /// Ground-truth camera position; used for evaluation and affordance maps
    /// only.
    pub true_position: Option<[f64; 3]>,
}

impl EpisodeClip {
    pub fn validate(&self, cfg: &ModelConfig) -> Result<()> {
        let o = &self.obs.dims;
        if o.len() != 5 || o[1..4] != cfg.loc_dims || o[4] != cfg.obs_channels || o[0] == 0 {
            return Err(Error::Shape(format!(
                "observation dims {o:?} do not match location grid {:?} with {} channels",
                cfg.loc_dims, cfg.obs_channels
            )));
        }
        if !self.obs.is_finite() {
            return Err(Error::Invalid("observation has non-finite values".into()));
        }
        if self.q.dims != cfg.loc_dims {
            return Err(Error::Shape(format!(
                "prior dims {:?} differ from location grid {:?}",
                self.q.dims, cfg.loc_dims
            )));
        }
        if self.label >= cfg.num_actions {
            return Err(Error::Invalid(format!("label {} out of range", self.label)));
        }
        Ok(())
    }

    #[cfg(test)]
    pub(crate) fn label_only(label: usize, true_position: Option<[f64; 3]>) -> Self {
        Self {
            obs: Tensor::zeros(&[1, 1, 1, 1, 1]),
            label,
            q: LocationDistribution::uniform([1, 1, 1]),
            track: CameraTrack::default(),
            true_position,
        }
    }
}
