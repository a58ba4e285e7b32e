//! Finite-difference checks for every differentiable op and model stage.
//! Each check returns the worst relative error over its random instances.

use hvr::diffcore::{self as dc, Rng, Tensor};
use hvr::location_prior::LocationDistribution;
use hvr::model::{
    classify, encode_env_input, encode_video, loss_with_noise, predict_location, training_step_with_noise,
    EpisodeClip, ModelConfig, ModelParams, Variant,
};

use super::{dot, numeric_grad, random_dims, random_simplex, random_tensor, rel_err, sample_coords};

pub struct Check {
    pub name: &'static str,
    pub worst: f64,
    pub tol: f64,
    pub instances: usize,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.worst < self.tol
    }
}

const OP_TOL: f64 = 1e-4;
const E2E_TOL: f64 = 1e-3;
const COORDS: usize = 24;

fn worst_of(name: &'static str, tol: f64, instances: usize, seed: u64, mut one: impl FnMut(&mut Rng) -> f64) -> Check {
    let root = Rng::new(seed);
    let worst = (0..instances)
        .map(|i| one(&mut root.fork(i as u64)))
        .fold(0.0, f64::max);
    Check {
        name,
        worst,
        tol,
        instances,
    }
}

/// Compares an analytic gradient with central differences of `f` on a random
/// subset of coordinates.
fn compare(analytic: &[f64], x: &[f64], f: &mut dyn FnMut(&[f64]) -> f64, rng: &mut Rng) -> f64 {
    let coords = sample_coords(x.len(), COORDS, rng);
    let numeric = numeric_grad(f, x, &coords);
    let picked: Vec<f64> = coords.iter().map(|&i| analytic[i]).collect();
    rel_err(&picked, &numeric)
}

fn with(t: &Tensor, data: &[f64]) -> Tensor {
    Tensor::new(t.dims.clone(), data.to_vec()).unwrap()
}

pub fn op_checks(instances: usize, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();

    out.push(worst_of("concat_channels", OP_TOL, instances, seed, |rng| {
        let s = random_dims(rng, 4);
        let (ca, cb) = (1 + rng.below(4), 1 + rng.below(4));
        let a = random_tensor(&[s[0], s[1], s[2], ca], rng);
        let b = random_tensor(&[s[0], s[1], s[2], cb], rng);
        let up = random_tensor(&[s[0], s[1], s[2], ca + cb], rng);
        let (ga, gb) = dc::concat_channels_backward(&up, ca);
        let ea = compare(&ga.data, &a.data, &mut |x| dot(&dc::concat_channels(&with(&a, x), &b).unwrap().data, &up.data), rng);
        let eb = compare(&gb.data, &b.data, &mut |x| dot(&dc::concat_channels(&a, &with(&b, x)).unwrap().data, &up.data), rng);
        ea.max(eb)
    }));

    out.push(worst_of("conv3d", OP_TOL, instances, seed + 1, |rng| {
        let s = random_dims(rng, 5);
        let (cin, cout) = (1 + rng.below(3), 1 + rng.below(3));
        let k = [1, 3][rng.below(2)];
        let stride = [1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)];
        let x = random_tensor(&[s[0], s[1], s[2], cin], rng);
        let w = random_tensor(&[k, k, k, cin, cout], rng);
        let b = random_tensor(&[cout], rng);
        let y = dc::conv3d(&x, &w, &b, stride).unwrap();
        let up = random_tensor(&y.dims, rng);
        let g = dc::conv3d_backward(&x, &w, &b, stride, &up, true).unwrap();
        let ex = compare(&g.input.unwrap().data, &x.data, &mut |v| dot(&dc::conv3d(&with(&x, v), &w, &b, stride).unwrap().data, &up.data), rng);
        let ew = compare(&g.weights.data, &w.data, &mut |v| dot(&dc::conv3d(&x, &with(&w, v), &b, stride).unwrap().data, &up.data), rng);
        let eb = compare(&g.bias.data, &b.data, &mut |v| dot(&dc::conv3d(&x, &w, &with(&b, v), stride).unwrap().data, &up.data), rng);
        ex.max(ew).max(eb)
    }));

    out.push(worst_of("linear", OP_TOL, instances, seed + 2, |rng| {
        let (cin, cout) = (1 + rng.below(6), 1 + rng.below(6));
        let x = random_tensor(&[cin], rng);
        let w = random_tensor(&[cin, cout], rng);
        let b = random_tensor(&[cout], rng);
        let up = random_tensor(&[cout], rng);
        let (gx, gw, gb) = dc::linear_backward(&x, &w, &b, &up).unwrap();
        let ex = compare(&gx.data, &x.data, &mut |v| dot(&dc::linear(&with(&x, v), &w, &b).unwrap().data, &up.data), rng);
        let ew = compare(&gw.data, &w.data, &mut |v| dot(&dc::linear(&x, &with(&w, v), &b).unwrap().data, &up.data), rng);
        let eb = compare(&gb.data, &b.data, &mut |v| dot(&dc::linear(&x, &w, &with(&b, v)).unwrap().data, &up.data), rng);
        ex.max(ew).max(eb)
    }));

    out.push(worst_of("relu", OP_TOL, instances, seed + 3, |rng| {
        let s = random_dims(rng, 6);
        let mut x = random_tensor(&[s[0], s[1], s[2], 2], rng);
        // keep inputs away from the kink
        x.data.iter_mut().for_each(|v| *v += 0.01f64.copysign(*v));
        let up = random_tensor(&x.dims, rng);
        let g = dc::relu_backward(&dc::relu(&x), &up);
        compare(&g.data, &x.data, &mut |v| dot(&dc::relu(&with(&x, v)).data, &up.data), rng)
    }));

    out.push(worst_of("avg_pool_spatial", OP_TOL, instances, seed + 4, |rng| {
        let s = random_dims(rng, 6);
        let x = random_tensor(&[s[0], s[1], s[2], 1 + rng.below(4)], rng);
        let up = random_tensor(&[x.channels()], rng);
        let g = dc::avg_pool_spatial_backward(&x.dims, &up);
        compare(&g.data, &x.data, &mut |v| dot(&dc::avg_pool_spatial(&with(&x, v)).data, &up.data), rng)
    }));

    out.push(worst_of("weighted_avg_pool", OP_TOL, instances, seed + 5, |rng| {
        let s = random_dims(rng, 6);
        let x = random_tensor(&[s[0], s[1], s[2], 1 + rng.below(4)], rng);
        let w = random_simplex(x.cells(), rng);
        let up = random_tensor(&[x.channels()], rng);
        let (gx, gw) = dc::weighted_avg_pool_backward(&x, &w, &up);
        let ex = compare(&gx.data, &x.data, &mut |v| dot(&dc::weighted_avg_pool(&with(&x, v), &w).unwrap().data, &up.data), rng);
        let ew = compare(&gw, &w, &mut |v| dot(&dc::weighted_avg_pool(&x, v).unwrap().data, &up.data), rng);
        ex.max(ew)
    }));

    out.push(worst_of("block_avg_pool", OP_TOL, instances, seed + 6, |rng| {
        let f = [1 + rng.below(2), 1 + rng.below(2), 1 + rng.below(2)];
        let s = random_dims(rng, 3);
        let x = random_tensor(&[s[0] * f[0], s[1] * f[1], s[2] * f[2], 1 + rng.below(3)], rng);
        let y = dc::block_avg_pool(&x, f).unwrap();
        let up = random_tensor(&y.dims, rng);
        let g = dc::block_avg_pool_backward(&x.dims, f, &up);
        compare(&g.data, &x.data, &mut |v| dot(&dc::block_avg_pool(&with(&x, v), f).unwrap().data, &up.data), rng)
    }));

    out.push(worst_of("softmax_grid", OP_TOL, instances, seed + 7, |rng| {
        let s = random_dims(rng, 6);
        let logits = random_tensor(&s, rng);
        let up = random_tensor(&s, rng);
        let p = dc::softmax_grid(&logits).unwrap();
        let g = dc::softmax_backward(&p.probs, &up.data);
        compare(&g, &logits.data, &mut |v| dot(&dc::softmax_grid(&with(&logits, v)).unwrap().probs, &up.data), rng)
    }));

    out.push(worst_of("gumbel_softmax", OP_TOL, instances, seed + 8, |rng| {
        let n = 2 + rng.below(40);
        // ln r is steep near zero, so keep the finite-difference step small relative to r
        let r: Vec<f64> = random_simplex(n, rng).iter().map(|x| 0.5 * x + 0.5 / n as f64).collect();
        let noise = dc::gumbel_noise(n, rng);
        let theta = 0.5 + 2.0 * rng.uniform();
        let up: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let s = dc::gumbel_softmax_with_noise(&r, theta, &noise).unwrap();
        let g = dc::gumbel_softmax_backward(&r, &s, theta, &up);
        compare(&g, &r, &mut |v| dot(&dc::gumbel_softmax_with_noise(v, theta, &noise).unwrap(), &up), rng)
    }));

    out.push(worst_of("kl_divergence", OP_TOL, instances, seed + 9, |rng| {
        let s = random_dims(rng, 5);
        let logits = random_tensor(&s, rng);
        let q = LocationDistribution {
            dims: s,
            probs: random_simplex(logits.len(), rng),
        };
        let p = dc::softmax_grid(&logits).unwrap();
        let g = dc::kl_grad_logits(&p.probs, &q.probs);
        compare(&g, &logits.data, &mut |v| dc::kl_divergence(&dc::softmax_grid(&with(&logits, v)).unwrap(), &q).unwrap(), rng)
    }));

    out.push(worst_of("cross_entropy", OP_TOL, instances, seed + 10, |rng| {
        let n = 2 + rng.below(34);
        let logits: Vec<f64> = (0..n).map(|_| 3.0 * rng.normal()).collect();
        let label = rng.below(n);
        let (_, g) = dc::cross_entropy(&logits, label).unwrap();
        compare(&g, &logits, &mut |v| dc::cross_entropy(v, label).unwrap().0, rng)
    }));

    out
}

/// Small random model, clip and environment input.
pub struct Instance {
    pub cfg: ModelConfig,
    pub params: ModelParams,
    pub clip: EpisodeClip,
    pub env: Tensor,
    pub noise: Vec<f64>,
}

pub fn random_instance(rng: &mut Rng, variant: Variant) -> Instance {
    let loc = random_dims(rng, 3);
    let pool = [1 + rng.below(2), 1 + rng.below(2), 1];
    let cfg = ModelConfig {
        loc_dims: loc,
        env_pool: pool,
        obs_channels: 1 + rng.below(3),
        env_channels: 2 + rng.below(4),
        c_phi: 2 + rng.below(3),
        c_psi: 2 + rng.below(3),
        theta: 2.0,
        num_actions: 2 + rng.below(4),
        lambda_kl: 0.5 + rng.uniform(),
        variant,
    };
    let mut params = ModelParams::init(&cfg, rng);
    // nonzero biases make relu kinks less likely to sit at exactly zero input
    for p in params.params_mut() {
        if p.value.rank() == 1 {
            p.value.data.iter_mut().for_each(|v| *v = 0.1 * rng.normal());
        }
    }
    let parent = cfg.parent_dims();
    let env = random_tensor(&[parent[0], parent[1], parent[2], cfg.env_channels], rng);
    let obs = random_tensor(&cfg.obs_dims(1 + rng.below(3)), rng);
    let q = LocationDistribution {
        dims: loc,
        probs: random_simplex(cfg.loc_cells(), rng),
    };
    let clip = EpisodeClip {
        obs,
        label: rng.below(cfg.num_actions),
        q,
        track: Default::default(),
        true_position: None,
    };
    let noise = dc::gumbel_noise(cfg.loc_cells(), rng);
    Instance {
        cfg,
        params,
        clip,
        env,
        noise,
    }
}

fn param_slot(params: &mut ModelParams, idx: usize) -> &mut hvr::diffcore::Param {
    params.params_mut().into_iter().nth(idx).unwrap()
}

pub fn model_checks(instances: usize, seed: u64) -> Vec<Check> {
    let mut out = Vec::new();

    out.push(worst_of("encode_video (phi weights)", OP_TOL, instances, seed + 20, |rng| {
        let inst = random_instance(rng, Variant::Full);
        let feat = encode_video(&inst.clip.obs, &inst.params, &inst.cfg).unwrap();
        let up = random_tensor(&feat.dims, rng);
        // route the upstream gradient through the full backward by making it
        // the only consumer: compare against a fresh forward
        let mut worst: f64 = 0.0;
        for idx in 0..6 {
            let analytic = phi_grad(&inst, &up, idx);
            let base = param_slot(&mut inst.params.clone(), idx).value.data.clone();
            let mut f = |v: &[f64]| {
                let mut p = inst.params.clone();
                param_slot(&mut p, idx).value.data.copy_from_slice(v);
                dot(&encode_video(&inst.clip.obs, &p, &inst.cfg).unwrap().data, &up.data)
            };
            worst = worst.max(compare(&analytic, &base, &mut f, rng));
        }
        worst
    }));

    out.push(worst_of("encode_env (psi weights)", OP_TOL, instances, seed + 21, |rng| {
        let inst = random_instance(rng, Variant::Full);
        let feat = encode_env_input(&inst.env, &inst.params, &inst.cfg).unwrap();
        let up = random_tensor(&feat.dims, rng);
        let mut worst: f64 = 0.0;
        for idx in 6..10 {
            let analytic = psi_grad(&inst, &up, idx);
            let base = param_slot(&mut inst.params.clone(), idx).value.data.clone();
            let mut f = |v: &[f64]| {
                let mut p = inst.params.clone();
                param_slot(&mut p, idx).value.data.copy_from_slice(v);
                dot(&encode_env_input(&inst.env, &p, &inst.cfg).unwrap().data, &up.data)
            };
            worst = worst.max(compare(&analytic, &base, &mut f, rng));
        }
        worst
    }));

    out.push(worst_of("predict_location", OP_TOL, instances, seed + 22, |rng| {
        let inst = random_instance(rng, Variant::Full);
        let [w, d, h] = inst.cfg.loc_dims;
        let video = random_tensor(&[w, d, h, inst.cfg.c_phi], rng);
        let env = random_tensor(&[w, d, h, inst.cfg.c_psi], rng);
        let up: Vec<f64> = (0..inst.cfg.loc_cells()).map(|_| rng.normal()).collect();
        let objective = |v: &Tensor, e: &Tensor, p: &ModelParams| dot(&predict_location(v, e, p).unwrap().probs, &up);
        // analytic: softmax backward, then the 1³ head is a per-cell dot product
        let p = predict_location(&video, &env, &inst.params).unwrap();
        let g_logits = dc::softmax_backward(&p.probs, &up);
        let fused = dc::concat_channels(&video, &env).unwrap();
        let g = dc::conv3d_backward(
            &fused,
            &inst.params.w_r.w.value,
            &inst.params.w_r.b.value,
            [1, 1, 1],
            &Tensor::new(vec![w, d, h, 1], g_logits).unwrap(),
            true,
        )
        .unwrap();
        let (gv, ge) = dc::concat_channels_backward(&g.input.unwrap(), inst.cfg.c_phi);
        let ew = compare(&g.weights.data, &inst.params.w_r.w.value.data, &mut |x| {
            let mut p = inst.params.clone();
            p.w_r.w.value.data.copy_from_slice(x);
            objective(&video, &env, &p)
        }, rng);
        let ev = compare(&gv.data, &video.data, &mut |x| objective(&with(&video, x), &env, &inst.params), rng);
        let ee = compare(&ge.data, &env.data, &mut |x| objective(&video, &with(&env, x), &inst.params), rng);
        ew.max(ev).max(ee)
    }));

    out.push(worst_of("classify (sample r~)", OP_TOL, instances, seed + 23, |rng| {
        let inst = random_instance(rng, Variant::Full);
        let [w, d, h] = inst.cfg.loc_dims;
        let video = random_tensor(&[w, d, h, inst.cfg.c_phi], rng);
        let env = random_tensor(&[w, d, h, inst.cfg.c_psi], rng);
        let sample = random_simplex(inst.cfg.loc_cells(), rng);
        let up: Vec<f64> = (0..inst.cfg.num_actions).map(|_| rng.normal()).collect();
        let (gf, _, _) = dc::linear_backward(
            &dc::concat_channels(&dc::avg_pool_spatial(&video), &dc::weighted_avg_pool(&env, &sample).unwrap()).unwrap(),
            &inst.params.w_p.w.value,
            &inst.params.w_p.b.value,
            &Tensor::new(vec![up.len()], up.clone()).unwrap(),
        )
        .unwrap();
        let (_, ge) = dc::concat_channels_backward(&gf, inst.cfg.c_phi);
        let (_, gs) = dc::weighted_avg_pool_backward(&env, &sample, &ge);
        compare(&gs, &sample, &mut |x| dot(&classify(x, &video, &env, &inst.params).unwrap().data, &up), rng)
    }));

    for (name, variant, seed_off) in [
        ("training_step end-to-end (full)", Variant::Full, 24),
        ("training_step end-to-end (deterministic)", Variant::Deterministic, 25),
        ("training_step end-to-end (global-env)", Variant::GlobalEnv, 26),
        ("training_step end-to-end (video-only)", Variant::VideoOnly, 27),
    ] {
        out.push(worst_of(name, E2E_TOL, instances, seed + seed_off, |rng| {
            let inst = random_instance(rng, variant);
            end_to_end_error(&inst, rng)
        }));
    }
    out
}

/// Worst relative error over every parameter tensor of one instance.
pub fn end_to_end_error(inst: &Instance, rng: &mut Rng) -> f64 {
    let mut params = inst.params.clone();
    params.zero_grad();
    training_step_with_noise(&inst.clip, &inst.env, &mut params, &inst.cfg, &inst.noise).unwrap();
    let grads: Vec<Vec<f64>> = params.params_iter().map(|p| p.grad.clone()).collect();
    let mut worst: f64 = 0.0;
    for (idx, analytic) in grads.iter().enumerate() {
        let base = param_slot(&mut inst.params.clone(), idx).value.data.clone();
        let mut f = |v: &[f64]| {
            let mut p = inst.params.clone();
            param_slot(&mut p, idx).value.data.copy_from_slice(v);
            loss_with_noise(&inst.clip, &inst.env, &p, &inst.cfg, &inst.noise).unwrap().loss
        };
        worst = worst.max(compare(analytic, &base, &mut f, rng));
    }
    worst
}

/// Gradient of ⟨up, φ(x)⟩ w.r.t. one video-branch parameter, via the same
/// layer backward passes the model uses.
fn phi_grad(inst: &Instance, up: &Tensor, idx: usize) -> Vec<f64> {
    let phi = &inst.params.phi;
    let x = dc::mean_frames(&inst.clip.obs);
    let h1 = dc::conv3d(&x, &phi.conv1.w.value, &phi.conv1.b.value, [1; 3]).unwrap();
    let a1 = dc::relu(&h1);
    let h2 = dc::conv3d(&a1, &phi.conv2.w.value, &phi.conv2.b.value, [1; 3]).unwrap();
    let a2 = dc::relu(&h2);
    let g3 = dc::conv3d_backward(&a2, &phi.proj.w.value, &phi.proj.b.value, [1; 3], up, true).unwrap();
    let g = dc::relu_backward(&a2, &g3.input.unwrap());
    let g2 = dc::conv3d_backward(&a1, &phi.conv2.w.value, &phi.conv2.b.value, [1; 3], &g, true).unwrap();
    let g = dc::relu_backward(&a1, &g2.input.unwrap());
    let g1 = dc::conv3d_backward(&x, &phi.conv1.w.value, &phi.conv1.b.value, [1; 3], &g, false).unwrap();
    match idx {
        0 => g1.weights.data,
        1 => g1.bias.data,
        2 => g2.weights.data,
        3 => g2.bias.data,
        4 => g3.weights.data,
        _ => g3.bias.data,
    }
}

fn psi_grad(inst: &Instance, up: &Tensor, idx: usize) -> Vec<f64> {
    let psi = &inst.params.psi;
    let pool = inst.cfg.env_pool;
    let b1 = dc::relu(&dc::conv3d(&inst.env, &psi.conv1.w.value, &psi.conv1.b.value, [1; 3]).unwrap());
    let pooled = dc::block_avg_pool(&b1, pool).unwrap();
    let feat = dc::relu(&dc::conv3d(&pooled, &psi.conv2.w.value, &psi.conv2.b.value, [1; 3]).unwrap());
    let g = dc::relu_backward(&feat, up);
    let g2 = dc::conv3d_backward(&pooled, &psi.conv2.w.value, &psi.conv2.b.value, [1; 3], &g, true).unwrap();
    let g = dc::block_avg_pool_backward(&b1.dims, pool, &g2.input.unwrap());
    let g = dc::relu_backward(&b1, &g);
    let g1 = dc::conv3d_backward(&inst.env, &psi.conv1.w.value, &psi.conv1.b.value, [1; 3], &g, false).unwrap();
    match idx {
        6 => g1.weights.data,
        7 => g1.bias.data,
        8 => g2.weights.data,
        _ => g2.bias.data,
    }
}
