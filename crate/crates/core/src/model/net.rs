use super::params::{ConvLayer, EnvBranch, ModelParams, VideoBranch};
use super::{EpisodeClip, ModelConfig, Variant};
use crate::diffcore::{self as dc, Rng, Tensor};
use crate::error::{Error, Result};
use crate::location_prior::{argmax, LocationDistribution};
use crate::mesh_env::{DescriptorKind, EnvDescriptor};

const UNIT: [usize; 3] = [1, 1, 1];

fn conv(x: &Tensor, layer: &ConvLayer) -> Result<Tensor> {
    dc::conv3d(x, &layer.w.value, &layer.b.value, UNIT)
}

/// Backward through a stride-1 conv, accumulating weight gradients into the
/// layer. Returns the input gradient when requested.
fn conv_back(x: &Tensor, layer: &mut ConvLayer, g: &Tensor, want_input: bool) -> Result<Option<Tensor>> {
    let grads = dc::conv3d_backward(x, &layer.w.value, &layer.b.value, UNIT, g, want_input)?;
    layer.w.accumulate(&grads.weights.data);
    layer.b.accumulate(&grads.bias.data);
    Ok(grads.input)
}

/// Converts a descriptor into the environment branch input on the parent
/// grid: HVR class ids become M³·C one-hot channels and a ground-plane map is
/// repeated along the vertical axis.
pub fn prepare_env(e: &EnvDescriptor, cfg: &ModelConfig) -> Result<Tensor> {
    let parent = cfg.parent_dims();
    if e.grid.dims != parent {
        return Err(Error::Shape(format!(
            "descriptor grid {:?} does not pool to location grid {:?} by {:?}",
            e.grid.dims, cfg.loc_dims, cfg.env_pool
        )));
    }
    let cells: usize = parent.iter().product();
    let t = match e.kind {
        DescriptorKind::Hvr => {
            let slots = e.channels();
            let c = e.num_classes;
            let mut data = vec![0.0; cells * slots * c];
            for (i, &class) in e.data.iter().enumerate() {
                data[i * c + class as usize] = 1.0;
            }
            Tensor::new(vec![parent[0], parent[1], parent[2], slots * c], data)?
        }
        DescriptorKind::GroundPlane2D => {
            let c = e.channels();
            let mut data = Vec::with_capacity(cells * c);
            for column in e.data.chunks(c) {
                for _ in 0..parent[2] {
                    data.extend_from_slice(column);
                }
            }
            Tensor::new(vec![parent[0], parent[1], parent[2], c], data)?
        }
        DescriptorKind::SemVoxel | DescriptorKind::Affordance => {
            Tensor::new(vec![parent[0], parent[1], parent[2], e.channels()], e.data.clone())?
        }
    };
    if t.channels() != cfg.env_channels {
        return Err(Error::Shape(format!(
            "environment input has {} channels, model expects {}",
            t.channels(),
            cfg.env_channels
        )));
    }
    Ok(t)
}

struct VideoCache {
    x: Tensor,
    a1: Tensor,
    a2: Tensor,
    feat: Tensor,
}

fn video_forward(obs: &Tensor, phi: &VideoBranch, cfg: &ModelConfig) -> Result<VideoCache> {
    let od = &obs.dims;
    if od.len() != 5 || od[1..4] != cfg.loc_dims || od[4] != cfg.obs_channels {
        return Err(Error::Shape(format!(
            "observation dims {od:?} do not match grid {:?} × {} channels",
            cfg.loc_dims, cfg.obs_channels
        )));
    }
    let x = dc::mean_frames(obs);
    let a1 = dc::relu(&conv(&x, &phi.conv1)?);
    let a2 = dc::relu(&conv(&a1, &phi.conv2)?);
    let feat = conv(&a2, &phi.proj)?;
    Ok(VideoCache { x, a1, a2, feat })
}

fn video_backward(c: &VideoCache, phi: &mut VideoBranch, g_feat: &Tensor) -> Result<()> {
    let g = conv_back(&c.a2, &mut phi.proj, g_feat, true)?.unwrap();
    let g = dc::relu_backward(&c.a2, &g);
    let g = conv_back(&c.a1, &mut phi.conv2, &g, true)?.unwrap();
    let g = dc::relu_backward(&c.a1, &g);
    conv_back(&c.x, &mut phi.conv1, &g, false)?;
    Ok(())
}

struct EnvCache {
    b1: Tensor,
    pooled: Tensor,
    feat: Tensor,
}

fn env_forward(env: &Tensor, psi: &EnvBranch, cfg: &ModelConfig) -> Result<EnvCache> {
    let b1 = dc::relu(&conv(env, &psi.conv1)?);
    let pooled = dc::block_avg_pool(&b1, cfg.env_pool)?;
    let feat = dc::relu(&conv(&pooled, &psi.conv2)?);
    Ok(EnvCache { b1, pooled, feat })
}

fn env_backward(env: &Tensor, c: &EnvCache, psi: &mut EnvBranch, cfg: &ModelConfig, g_feat: &Tensor) -> Result<()> {
    let g = dc::relu_backward(&c.feat, g_feat);
    let g = conv_back(&c.pooled, &mut psi.conv2, &g, true)?.unwrap();
    let g = dc::block_avg_pool_backward(&c.b1.dims, cfg.env_pool, &g);
    let g = dc::relu_backward(&c.b1, &g);
    conv_back(env, &mut psi.conv1, &g, false)?;
    Ok(())
}

/// Video features φ(x) on the location grid, W×D×H×C_φ.
pub fn encode_video(obs: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    Ok(video_forward(obs, &params.phi, cfg)?.feat)
}

/// Environment features ψ(e) on the location grid, W×D×H×C_ψ.
pub fn encode_env(e: &EnvDescriptor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    encode_env_input(&prepare_env(e, cfg)?, params, cfg)
}

/// [`encode_env`] on an input already built by [`prepare_env`].
pub fn encode_env_input(env: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Tensor> {
    if cfg.variant == Variant::VideoOnly {
        return Ok(zero_env(cfg));
    }
    Ok(env_forward(env, &params.psi, cfg)?.feat)
}

fn zero_env(cfg: &ModelConfig) -> Tensor {
    let [w, d, h] = cfg.loc_dims;
    Tensor::zeros(&[w, d, h, cfg.c_psi])
}

fn location_logits(fused: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let mut logits = conv(fused, &params.w_r)?;
    logits.dims.pop();
    Ok(logits)
}

/// `p(r|x,e) = softmax(w_rᵀ(φ(x) ⊕ ψ(e)))` normalized over every cell.
pub fn predict_location(video: &Tensor, env: &Tensor, params: &ModelParams) -> Result<LocationDistribution> {
    let fused = dc::concat_channels(video, env)?;
    dc::softmax_grid(&location_logits(&fused, params)?)
}

/// Class logits `w_pᵀ(avg φ(x) ⊕ Σ r̃·ψ(e))`; softmax is left to the loss and
/// to inference.
pub fn classify(sample: &[f64], video: &Tensor, env: &Tensor, params: &ModelParams) -> Result<Tensor> {
    let pooled = dc::concat_channels(&dc::avg_pool_spatial(video), &dc::weighted_avg_pool(env, sample)?)?;
    dc::linear(&pooled, &params.w_p.w.value, &params.w_p.b.value)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepLoss {
    pub loss: f64,
    pub ce: f64,
    pub kl: f64,
}

/// The environment weights used by the classifier for a variant.
fn selection(cfg: &ModelConfig, p: &LocationDistribution, noise: Option<&[f64]>) -> Result<Vec<f64>> {
    Ok(match (cfg.variant, noise) {
        (Variant::GlobalEnv, _) => vec![1.0 / p.len() as f64; p.len()],
        (Variant::Deterministic, _) | (_, None) => p.probs.clone(),
        (Variant::Full | Variant::VideoOnly, Some(g)) => dc::gumbel_softmax_with_noise(&p.probs, cfg.theta, g)?,
    })
}

struct Forward {
    video: VideoCache,
    env: Option<EnvCache>,
    env_feat: Tensor,
    fused: Tensor,
    p: LocationDistribution,
    sample: Vec<f64>,
    pooled: Tensor,
    logits: Tensor,
}

fn forward(
    obs: &Tensor,
    env: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    noise: Option<&[f64]>,
) -> Result<Forward> {
    let video = video_forward(obs, &params.phi, cfg)?;
    let (env_cache, env_feat) = if cfg.variant == Variant::VideoOnly {
        (None, zero_env(cfg))
    } else {
        let c = env_forward(env, &params.psi, cfg)?;
        let f = c.feat.clone();
        (Some(c), f)
    };
    let fused = dc::concat_channels(&video.feat, &env_feat)?;
    let p = dc::softmax_grid(&location_logits(&fused, params)?)?;
    let sample = selection(cfg, &p, noise)?;
    let pooled = dc::concat_channels(
        &dc::avg_pool_spatial(&video.feat),
        &dc::weighted_avg_pool(&env_feat, &sample)?,
    )?;
    let logits = dc::linear(&pooled, &params.w_p.w.value, &params.w_p.b.value)?;
    Ok(Forward {
        video,
        env: env_cache,
        env_feat,
        fused,
        p,
        sample,
        pooled,
        logits,
    })
}

fn step_loss(f: &Forward, clip: &EpisodeClip, cfg: &ModelConfig) -> Result<(StepLoss, Vec<f64>)> {
    let (ce, g_logits) = dc::cross_entropy(&f.logits.data, clip.label)?;
    let kl = dc::kl_divergence(&f.p, &clip.q)?;
    Ok((
        StepLoss {
            loss: ce + cfg.lambda_kl * kl,
            ce,
            kl,
        },
        g_logits,
    ))
}

/// Forward pass of the training objective for a fixed Gumbel draw, without
/// touching gradients.
pub fn loss_with_noise(
    clip: &EpisodeClip,
    env: &Tensor,
    params: &ModelParams,
    cfg: &ModelConfig,
    noise: &[f64],
) -> Result<StepLoss> {
    let f = forward(&clip.obs, env, params, cfg, Some(noise))?;
    Ok(step_loss(&f, clip, cfg)?.0)
}

/// One training step with a single location sample: loss = CE + λ·KL(p ‖ q).
/// Gradients are accumulated into `params`.
pub fn training_step(
    clip: &EpisodeClip,
    env: &Tensor,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    rng: &mut Rng,
) -> Result<StepLoss> {
    let noise = dc::gumbel_noise(cfg.loc_cells(), rng);
    training_step_with_noise(clip, env, params, cfg, &noise)
}

/// [`training_step`] with the Gumbel noise supplied by the caller.
pub fn training_step_with_noise(
    clip: &EpisodeClip,
    env: &Tensor,
    params: &mut ModelParams,
    cfg: &ModelConfig,
    noise: &[f64],
) -> Result<StepLoss> {
    let f = forward(&clip.obs, env, params, cfg, Some(noise))?;
    let (loss, g_logits) = step_loss(&f, clip, cfg)?;
    let g_logits = Tensor::new(vec![g_logits.len()], g_logits)?;

    let (g_pooled, g_wp, g_bp) = dc::linear_backward(&f.pooled, &params.w_p.w.value, &params.w_p.b.value, &g_logits)?;
    params.w_p.w.accumulate(&g_wp.data);
    params.w_p.b.accumulate(&g_bp.data);
    let (g_vpool, g_epool) = dc::concat_channels_backward(&g_pooled, cfg.c_phi);
    let mut g_video = dc::avg_pool_spatial_backward(&f.video.feat.dims, &g_vpool);
    let (mut g_env, g_sample) = dc::weighted_avg_pool_backward(&f.env_feat, &f.sample, &g_epool);

    let mut g_p = match cfg.variant {
        Variant::Full | Variant::VideoOnly => dc::gumbel_softmax_backward(&f.p.probs, &f.sample, cfg.theta, &g_sample),
        Variant::Deterministic => g_sample,
        Variant::GlobalEnv => vec![0.0; f.p.len()],
    };
    for (g, k) in g_p.iter_mut().zip(dc::kl_grad_p(&f.p.probs, &clip.q.probs)) {
        *g += cfg.lambda_kl * k;
    }
    let g_loc = dc::softmax_backward(&f.p.probs, &g_p);
    let [w, d, h] = cfg.loc_dims;
    let g_loc = Tensor::new(vec![w, d, h, 1], g_loc)?;
    let g_fused = conv_back(&f.fused, &mut params.w_r, &g_loc, true)?.unwrap();
    let (gv, ge) = dc::concat_channels_backward(&g_fused, cfg.c_phi);
    add_into(&mut g_video, &gv);
    add_into(&mut g_env, &ge);

    video_backward(&f.video, &mut params.phi, &g_video)?;
    if let Some(cache) = &f.env {
        env_backward(env, cache, &mut params.psi, cfg, &g_env)?;
    }
    Ok(loss)
}

fn add_into(a: &mut Tensor, b: &Tensor) {
    for (x, y) in a.data.iter_mut().zip(&b.data) {
        *x += y;
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Inference {
    pub label: usize,
    pub scores: Vec<f64>,
    pub location: LocationDistribution,
}

/// Deterministic inference: the expected location r replaces the sample.
pub fn infer(clip: &EpisodeClip, env: &Tensor, params: &ModelParams, cfg: &ModelConfig) -> Result<Inference> {
    let f = forward(&clip.obs, env, params, cfg, None)?;
    let scores = dc::softmax(&f.logits.data);
    Ok(Inference {
        label: argmax(&scores),
        scores,
        location: f.p,
    })
}
