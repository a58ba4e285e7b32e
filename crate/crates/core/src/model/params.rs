use super::ModelConfig;
use crate::diffcore::checkpoint::{decode_checkpoint, encode_checkpoint};
use crate::diffcore::{Param, Rng, Tensor};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ConvLayer {
    pub w: Param,
    pub b: Param,
}

impl ConvLayer {
    fn new(name: &str, k: usize, cin: usize, cout: usize) -> Self {
        Self {
            w: Param::new(format!("{name}.w"), Tensor::zeros(&[k, k, k, cin, cout])),
            b: Param::new(format!("{name}.b"), Tensor::zeros(&[cout])),
        }
    }

    fn fan_in(&self) -> usize {
        let d = &self.w.value.dims;
        d[0] * d[1] * d[2] * d[3]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinearLayer {
    pub w: Param,
    pub b: Param,
}

/// Video branch φ: 3³ conv + relu, 1³ conv + relu, then a 1³ projection.
#[derive(Debug, Clone, PartialEq)]
pub struct VideoBranch {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
    pub proj: ConvLayer,
}

/// Environment branch ψ: 1³ conv + relu on the parent grid, block pooling to
/// the location grid, then 3³ conv + relu.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvBranch {
    pub conv1: ConvLayer,
    pub conv2: ConvLayer,
}

/// All learnable weights: φ, ψ, the location head w_r and the classifier w_p.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub phi: VideoBranch,
    pub psi: EnvBranch,
    pub w_r: ConvLayer,
    pub w_p: LinearLayer,
}

impl ModelParams {
    /// All-zero parameters.
    pub fn zeros(cfg: &ModelConfig) -> Self {
        let fused = cfg.c_phi + cfg.c_psi;
        Self {
            phi: VideoBranch {
                conv1: ConvLayer::new("phi.conv1", 3, cfg.obs_channels, cfg.c_phi),
                conv2: ConvLayer::new("phi.conv2", 1, cfg.c_phi, cfg.c_phi),
                proj: ConvLayer::new("phi.proj", 1, cfg.c_phi, cfg.c_phi),
            },
            psi: EnvBranch {
                conv1: ConvLayer::new("psi.conv1", 1, cfg.env_channels, cfg.c_psi),
                conv2: ConvLayer::new("psi.conv2", 3, cfg.c_psi, cfg.c_psi),
            },
            w_r: ConvLayer::new("w_r", 1, fused, 1),
            w_p: LinearLayer {
                w: Param::new("w_p.w", Tensor::zeros(&[fused, cfg.num_actions])),
                b: Param::new("w_p.b", Tensor::zeros(&[cfg.num_actions])),
            },
        }
    }

    /// He-normal initialization for the relu layers, Xavier-style for the
    /// linear heads; biases start at zero.
    pub fn init(cfg: &ModelConfig, rng: &mut Rng) -> Self {
        let mut p = Self::zeros(cfg);
        for layer in [&mut p.phi.conv1, &mut p.phi.conv2, &mut p.psi.conv1, &mut p.psi.conv2] {
            let std = (2.0 / layer.fan_in() as f64).sqrt();
            fill_normal(&mut layer.w.value, std, rng);
        }
        let std = (1.0 / p.phi.proj.fan_in() as f64).sqrt();
        fill_normal(&mut p.phi.proj.w.value, std, rng);
        let std = (1.0 / p.w_r.fan_in() as f64).sqrt();
        fill_normal(&mut p.w_r.w.value, std, rng);
        let std = (1.0 / p.w_p.w.value.dims[0] as f64).sqrt();
        fill_normal(&mut p.w_p.w.value, std, rng);
        p
    }

    pub fn params_mut(&mut self) -> Vec<&mut Param> {
        vec![
            &mut self.phi.conv1.w,
            &mut self.phi.conv1.b,
            &mut self.phi.conv2.w,
            &mut self.phi.conv2.b,
            &mut self.phi.proj.w,
            &mut self.phi.proj.b,
            &mut self.psi.conv1.w,
            &mut self.psi.conv1.b,
            &mut self.psi.conv2.w,
            &mut self.psi.conv2.b,
            &mut self.w_r.w,
            &mut self.w_r.b,
            &mut self.w_p.w,
            &mut self.w_p.b,
        ]
    }

    pub fn zero_grad(&mut self) {
        self.params_mut().into_iter().for_each(Param::zero_grad);
    }

    pub fn num_values(&self) -> usize {
        self.params_iter().map(|p| p.value.len()).sum()
    }

    pub fn params_iter(&self) -> impl Iterator<Item = &Param> {
        [
            &self.phi.conv1.w,
            &self.phi.conv1.b,
            &self.phi.conv2.w,
            &self.phi.conv2.b,
            &self.phi.proj.w,
            &self.phi.proj.b,
            &self.psi.conv1.w,
            &self.psi.conv1.b,
            &self.psi.conv2.w,
            &self.psi.conv2.b,
            &self.w_r.w,
            &self.w_r.b,
            &self.w_p.w,
            &self.w_p.b,
        ]
        .into_iter()
    }

    pub fn to_checkpoint(&self) -> Vec<u8> {
        encode_checkpoint(self.params_iter().map(|p| (p.name.as_str(), &p.value)))
    }

    /// Loads weights saved by [`ModelParams::to_checkpoint`]; names and shapes
    /// must match the configuration exactly.
    pub fn from_checkpoint(bytes: &[u8], cfg: &ModelConfig) -> Result<Self> {
        let tensors = decode_checkpoint(bytes)?;
        let mut p = Self::zeros(cfg);
        let mut slots = p.params_mut();
        if tensors.len() != slots.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} tensors, model expects {}",
                tensors.len(),
                slots.len()
            )));
        }
        for (slot, (name, t)) in slots.iter_mut().zip(tensors) {
            if slot.name != name || slot.value.dims != t.dims {
                return Err(Error::Format(format!(
                    "checkpoint tensor {name} {:?} does not match {} {:?}",
                    t.dims, slot.name, slot.value.dims
                )));
            }
            slot.value = t;
        }
        Ok(p)
    }
}

fn fill_normal(t: &mut Tensor, std: f64, rng: &mut Rng) {
    t.data.iter_mut().for_each(|v| *v = std * rng.normal());
}
