//! The fixed differentiable op set. Every op has a forward function and a
//! matching `*_backward` that maps an upstream gradient to input gradients.

use super::rng::Rng;
use super::tensor::Tensor;
use crate::error::{Error, Result};
use crate::location_prior::LocationDistribution;

/// Log-clamp used wherever a probability is passed through `ln`.
pub const EPS: f64 = 1e-12;

fn shape_err(msg: impl Into<String>) -> Error {
    Error::Shape(msg.into())
}

/// Concatenates two tensors along the last axis.
pub fn concat_channels(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    if a.rank() == 0 || a.spatial_dims() != b.spatial_dims() {
        return Err(shape_err(format!("cannot concat {:?} with {:?}", a.dims, b.dims)));
    }
    let (ca, cb) = (a.channels(), b.channels());
    let mut data = Vec::with_capacity(a.len() + b.len());
    for (sa, sb) in a.data.chunks(ca).zip(b.data.chunks(cb)) {
        data.extend_from_slice(sa);
        data.extend_from_slice(sb);
    }
    let mut dims = a.dims.clone();
    *dims.last_mut().unwrap() = ca + cb;
    Ok(Tensor { dims, data })
}

/// Splits the output gradient back into the two inputs' gradients.
pub fn concat_channels_backward(grad: &Tensor, channels_a: usize) -> (Tensor, Tensor) {
    let c = grad.channels();
    let cb = c - channels_a;
    let cells = grad.cells();
    let mut ga = Vec::with_capacity(cells * channels_a);
    let mut gb = Vec::with_capacity(cells * cb);
    for s in grad.data.chunks(c) {
        ga.extend_from_slice(&s[..channels_a]);
        gb.extend_from_slice(&s[channels_a..]);
    }
    let mut da = grad.dims.clone();
    *da.last_mut().unwrap() = channels_a;
    let mut db = grad.dims.clone();
    *db.last_mut().unwrap() = cb;
    (Tensor { dims: da, data: ga }, Tensor { dims: db, data: gb })
}

/// Geometry shared by the conv3d forward and backward passes.
struct ConvShape {
    input: [usize; 3],
    cin: usize,
    kernel: [usize; 3],
    cout: usize,
    stride: [usize; 3],
    output: [usize; 3],
    pad: [usize; 3],
}

impl ConvShape {
    fn new(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: [usize; 3]) -> Result<Self> {
        if input.rank() != 4 || weights.rank() != 5 {
            return Err(shape_err(format!(
                "conv3d expects input W×D×H×C and weights k×k×k×Cin×Cout, got {:?} and {:?}",
                input.dims, weights.dims
            )));
        }
        let cin = input.dims[3];
        if weights.dims[3] != cin {
            return Err(shape_err(format!(
                "conv3d input has {cin} channels, weights expect {}",
                weights.dims[3]
            )));
        }
        let cout = weights.dims[4];
        if bias.dims != [cout] {
            return Err(shape_err(format!("conv3d bias {:?}, expected [{cout}]", bias.dims)));
        }
        let kernel = [weights.dims[0], weights.dims[1], weights.dims[2]];
        if kernel.iter().any(|k| k % 2 == 0) || stride.iter().any(|&s| s == 0) {
            return Err(shape_err("conv3d needs odd kernels and positive strides"));
        }
        let inp = [input.dims[0], input.dims[1], input.dims[2]];
        Ok(Self {
            input: inp,
            cin,
            kernel,
            cout,
            stride,
            output: std::array::from_fn(|a| inp[a].div_ceil(stride[a])),
            pad: kernel.map(|k| k / 2),
        })
    }

    fn in_index(&self, x: usize, y: usize, z: usize) -> usize {
        (x * self.input[1] + y) * self.input[2] + z
    }

    /// Calls `f(out_cell, in_cell, tap)` for every in-bounds (output, tap) pair.
    fn for_each_tap(&self, mut f: impl FnMut(usize, usize, usize)) {
        let [kx, ky, kz] = self.kernel;
        let mut out_cell = 0;
        for ox in 0..self.output[0] {
            for oy in 0..self.output[1] {
                for oz in 0..self.output[2] {
                    for dx in 0..kx {
                        let Some(ix) = (ox * self.stride[0] + dx).checked_sub(self.pad[0]) else { continue };
                        if ix >= self.input[0] {
                            continue;
                        }
                        for dy in 0..ky {
                            let Some(iy) = (oy * self.stride[1] + dy).checked_sub(self.pad[1]) else { continue };
                            if iy >= self.input[1] {
                                continue;
                            }
                            for dz in 0..kz {
                                let Some(iz) = (oz * self.stride[2] + dz).checked_sub(self.pad[2]) else { continue };
                                if iz >= self.input[2] {
                                    continue;
                                }
                                let tap = (dx * ky + dy) * kz + dz;
                                f(out_cell, self.in_index(ix, iy, iz), tap);
                            }
                        }
                    }
                    out_cell += 1;
                }
            }
        }
    }
}

/// 3D convolution with zero "same" padding (kernel/2 per side) and bias.
/// Input W×D×H×Cin, weights kx×ky×kz×Cin×Cout, output ⌈W/s⌉×⌈D/s⌉×⌈H/s⌉×Cout.
pub fn conv3d(input: &Tensor, weights: &Tensor, bias: &Tensor, stride: [usize; 3]) -> Result<Tensor> {
    let s = ConvShape::new(input, weights, bias, stride)?;
    let (cin, cout) = (s.cin, s.cout);
    let n_out: usize = s.output.iter().product();
    let mut out = Vec::with_capacity(n_out * cout);
    for _ in 0..n_out {
        out.extend_from_slice(&bias.data);
    }
    s.for_each_tap(|o, i, tap| {
        let acc = &mut out[o * cout..(o + 1) * cout];
        let x = &input.data[i * cin..(i + 1) * cin];
        let w = &weights.data[tap * cin * cout..(tap + 1) * cin * cout];
        for (ci, &a) in x.iter().enumerate() {
            if a == 0.0 {
                continue;
            }
            for (acc, &wv) in acc.iter_mut().zip(&w[ci * cout..(ci + 1) * cout]) {
                *acc += a * wv;
            }
        }
    });
    Ok(Tensor {
        dims: vec![s.output[0], s.output[1], s.output[2], cout],
        data: out,
    })
}

pub struct ConvGrads {
    /// `None` when the input gradient was not requested.
    pub input: Option<Tensor>,
    pub weights: Tensor,
    pub bias: Tensor,
}

pub fn conv3d_backward(
    input: &Tensor,
    weights: &Tensor,
    bias: &Tensor,
    stride: [usize; 3],
    grad_out: &Tensor,
    want_input_grad: bool,
) -> Result<ConvGrads> {
    let s = ConvShape::new(input, weights, bias, stride)?;
    let (cin, cout) = (s.cin, s.cout);
    if grad_out.dims != [s.output[0], s.output[1], s.output[2], cout] {
        return Err(shape_err(format!("conv3d grad {:?} does not match output", grad_out.dims)));
    }
    let mut gw = vec![0.0; weights.len()];
    let mut gb = vec![0.0; cout];
    for g in grad_out.data.chunks(cout) {
        for (a, b) in gb.iter_mut().zip(g) {
            *a += b;
        }
    }
    let mut gi = want_input_grad.then(|| vec![0.0; input.len()]);
    s.for_each_tap(|o, i, tap| {
        let g = &grad_out.data[o * cout..(o + 1) * cout];
        let x = &input.data[i * cin..(i + 1) * cin];
        let base = tap * cin * cout;
        for (ci, &a) in x.iter().enumerate() {
            if a != 0.0 {
                for (gw, &gv) in gw[base + ci * cout..base + (ci + 1) * cout].iter_mut().zip(g) {
                    *gw += a * gv;
                }
            }
        }
        if let Some(gi) = gi.as_mut() {
            let w = &weights.data[base..base + cin * cout];
            for (ci, gi) in gi[i * cin..(i + 1) * cin].iter_mut().enumerate() {
                let row = &w[ci * cout..(ci + 1) * cout];
                *gi += row.iter().zip(g).map(|(w, g)| w * g).sum::<f64>();
            }
        }
    });
    Ok(ConvGrads {
        input: gi.map(|data| Tensor {
            dims: input.dims.clone(),
            data,
        }),
        weights: Tensor {
            dims: weights.dims.clone(),
            data: gw,
        },
        bias: Tensor {
            dims: bias.dims.clone(),
            data: gb,
        },
    })
}

/// `y = Wᵀx + b` for a vector x of length Cin and W of shape Cin×Cout.
pub fn linear(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (cin, cout) = linear_shape(input, weights, bias)?;
    let mut out = bias.data.clone();
    for (ci, &a) in input.data.iter().enumerate().take(cin) {
        for (o, &w) in out.iter_mut().zip(&weights.data[ci * cout..(ci + 1) * cout]) {
            *o += a * w;
        }
    }
    Ok(Tensor {
        dims: vec![cout],
        data: out,
    })
}

fn linear_shape(input: &Tensor, weights: &Tensor, bias: &Tensor) -> Result<(usize, usize)> {
    if weights.rank() != 2 || input.dims != [weights.dims[0]] || bias.dims != [weights.dims[1]] {
        return Err(shape_err(format!(
            "linear: input {:?}, weights {:?}, bias {:?}",
            input.dims, weights.dims, bias.dims
        )));
    }
    Ok((weights.dims[0], weights.dims[1]))
}

/// Returns (grad input, grad weights, grad bias).
pub fn linear_backward(input: &Tensor, weights: &Tensor, bias: &Tensor, grad_out: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    let (cin, cout) = linear_shape(input, weights, bias)?;
    let mut gi = vec![0.0; cin];
    let mut gw = vec![0.0; cin * cout];
    for ci in 0..cin {
        let row = &weights.data[ci * cout..(ci + 1) * cout];
        gi[ci] = row.iter().zip(&grad_out.data).map(|(w, g)| w * g).sum();
        for (gw, &g) in gw[ci * cout..(ci + 1) * cout].iter_mut().zip(&grad_out.data) {
            *gw = input.data[ci] * g;
        }
    }
    Ok((
        Tensor {
            dims: input.dims.clone(),
            data: gi,
        },
        Tensor {
            dims: weights.dims.clone(),
            data: gw,
        },
        grad_out.clone(),
    ))
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor {
        dims: input.dims.clone(),
        data: input.data.iter().map(|&v| v.max(0.0)).collect(),
    }
}

/// Gradient through relu, given the forward output.
pub fn relu_backward(output: &Tensor, grad: &Tensor) -> Tensor {
    Tensor {
        dims: grad.dims.clone(),
        data: output
            .data
            .iter()
            .zip(&grad.data)
            .map(|(&y, &g)| if y > 0.0 { g } else { 0.0 })
            .collect(),
    }
}

/// Mean over all cells, giving one value per channel.
pub fn avg_pool_spatial(input: &Tensor) -> Tensor {
    let c = input.channels();
    let n = input.cells();
    let mut out = vec![0.0; c];
    for s in input.data.chunks(c) {
        for (o, v) in out.iter_mut().zip(s) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= n as f64);
    Tensor { dims: vec![c], data: out }
}

pub fn avg_pool_spatial_backward(input_dims: &[usize], grad: &Tensor) -> Tensor {
    let c = *input_dims.last().unwrap();
    let n = input_dims.iter().product::<usize>() / c;
    let scale = 1.0 / n as f64;
    let cell: Vec<f64> = grad.data.iter().map(|g| g * scale).collect();
    Tensor {
        dims: input_dims.to_vec(),
        data: cell.iter().copied().cycle().take(n * c).collect(),
    }
}

/// Σ_cells w(cell)·feat(cell). With weights summing to one this is a weighted
/// average of the per-cell feature vectors.
pub fn weighted_avg_pool(input: &Tensor, weights: &[f64]) -> Result<Tensor> {
    if input.rank() < 2 || weights.len() != input.cells() {
        return Err(shape_err(format!(
            "weighted pool: {} weights for input {:?}",
            weights.len(),
            input.dims
        )));
    }
    let c = input.channels();
    let mut out = vec![0.0; c];
    for (s, &w) in input.data.chunks(c).zip(weights) {
        if w == 0.0 {
            continue;
        }
        for (o, v) in out.iter_mut().zip(s) {
            *o += w * v;
        }
    }
    Ok(Tensor { dims: vec![c], data: out })
}

/// Returns (grad input, grad weights).
pub fn weighted_avg_pool_backward(input: &Tensor, weights: &[f64], grad: &Tensor) -> (Tensor, Vec<f64>) {
    let c = input.channels();
    let mut gi = Vec::with_capacity(input.len());
    let mut gw = Vec::with_capacity(weights.len());
    for (s, &w) in input.data.chunks(c).zip(weights) {
        gi.extend(grad.data.iter().map(|g| g * w));
        gw.push(s.iter().zip(&grad.data).map(|(v, g)| v * g).sum());
    }
    (
        Tensor {
            dims: input.dims.clone(),
            data: gi,
        },
        gw,
    )
}

/// Average-pools a W×D×H×C tensor over non-overlapping spatial blocks.
pub fn block_avg_pool(input: &Tensor, factors: [usize; 3]) -> Result<Tensor> {
    let (in_dims, out_dims) = block_dims(input, factors)?;
    let c = input.channels();
    let scale = 1.0 / factors.iter().product::<usize>() as f64;
    let mut out = vec![0.0; out_dims.iter().product::<usize>() * c];
    for_each_block_cell(in_dims, factors, |i, o| {
        for (a, b) in out[o * c..(o + 1) * c].iter_mut().zip(&input.data[i * c..(i + 1) * c]) {
            *a += b * scale;
        }
    });
    Ok(Tensor {
        dims: vec![out_dims[0], out_dims[1], out_dims[2], c],
        data: out,
    })
}

pub fn block_avg_pool_backward(input_dims: &[usize], factors: [usize; 3], grad: &Tensor) -> Tensor {
    let in_dims = [input_dims[0], input_dims[1], input_dims[2]];
    let c = input_dims[3];
    let scale = 1.0 / factors.iter().product::<usize>() as f64;
    let mut gi = vec![0.0; input_dims.iter().product()];
    for_each_block_cell(in_dims, factors, |i, o| {
        for (a, b) in gi[i * c..(i + 1) * c].iter_mut().zip(&grad.data[o * c..(o + 1) * c]) {
            *a = b * scale;
        }
    });
    Tensor {
        dims: input_dims.to_vec(),
        data: gi,
    }
}

fn block_dims(input: &Tensor, factors: [usize; 3]) -> Result<([usize; 3], [usize; 3])> {
    if input.rank() != 4 {
        return Err(shape_err(format!("block pool expects rank 4, got {:?}", input.dims)));
    }
    let d = [input.dims[0], input.dims[1], input.dims[2]];
    if (0..3).any(|a| factors[a] == 0 || d[a] % factors[a] != 0) {
        return Err(shape_err(format!("pool factors {factors:?} do not divide {d:?}")));
    }
    Ok((d, std::array::from_fn(|a| d[a] / factors[a])))
}

fn for_each_block_cell(d: [usize; 3], f: [usize; 3], mut visit: impl FnMut(usize, usize)) {
    let od = [d[0] / f[0], d[1] / f[1], d[2] / f[2]];
    for x in 0..d[0] {
        for y in 0..d[1] {
            for z in 0..d[2] {
                let i = (x * d[1] + y) * d[2] + z;
                let o = ((x / f[0]) * od[1] + y / f[1]) * od[2] + z / f[2];
                visit(i, o);
            }
        }
    }
}

fn softmax_in_place(v: &mut [f64]) {
    let max = v.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut total = 0.0;
    for x in v.iter_mut() {
        *x = (*x - max).exp();
        total += *x;
    }
    v.iter_mut().for_each(|x| *x /= total);
}

pub fn softmax(logits: &[f64]) -> Vec<f64> {
    let mut v = logits.to_vec();
    softmax_in_place(&mut v);
    v
}

/// Gradient w.r.t. logits of any function of `p = softmax(logits)`, given
/// the gradient w.r.t. `p`.
pub fn softmax_backward(p: &[f64], grad_p: &[f64]) -> Vec<f64> {
    let dot: f64 = p.iter().zip(grad_p).map(|(p, g)| p * g).sum();
    p.iter().zip(grad_p).map(|(p, g)| p * (g - dot)).collect()
}

/// Normalizes a W×D×H logit grid jointly over all cells.
pub fn softmax_grid(logits: &Tensor) -> Result<LocationDistribution> {
    if logits.rank() != 3 {
        return Err(shape_err(format!("softmax_grid expects W×D×H logits, got {:?}", logits.dims)));
    }
    Ok(LocationDistribution {
        dims: [logits.dims[0], logits.dims[1], logits.dims[2]],
        probs: softmax(&logits.data),
    })
}

/// A Gumbel-Softmax draw and the noise it used.
#[derive(Debug, Clone, PartialEq)]
pub struct GumbelSample {
    pub sample: Vec<f64>,
    pub noise: Vec<f64>,
}

pub fn gumbel_noise(n: usize, rng: &mut Rng) -> Vec<f64> {
    (0..n).map(|_| rng.gumbel()).collect()
}

/// Soft categorical sample `softmax((log r + G) / θ)` with i.i.d. Gumbel(0,1)
/// noise G.
pub fn gumbel_softmax(r: &LocationDistribution, theta: f64, rng: &mut Rng) -> Result<GumbelSample> {
    let noise = gumbel_noise(r.len(), rng);
    let sample = gumbel_softmax_with_noise(&r.probs, theta, &noise)?;
    Ok(GumbelSample { sample, noise })
}

/// Deterministic core of [`gumbel_softmax`] for a given noise draw.
pub fn gumbel_softmax_with_noise(r: &[f64], theta: f64, noise: &[f64]) -> Result<Vec<f64>> {
    if !(theta > 0.0) {
        return Err(Error::Invalid(format!("temperature must be positive, got {theta}")));
    }
    if noise.len() != r.len() {
        return Err(shape_err("gumbel noise length differs from distribution"));
    }
    let mut v: Vec<f64> = r
        .iter()
        .zip(noise)
        .map(|(&p, &g)| (p.max(EPS).ln() + g) / theta)
        .collect();
    softmax_in_place(&mut v);
    Ok(v)
}

/// Gradient w.r.t. r of a function of the sample, given the gradient w.r.t.
/// the sample. Cells clamped at EPS receive no gradient.
pub fn gumbel_softmax_backward(r: &[f64], sample: &[f64], theta: f64, grad: &[f64]) -> Vec<f64> {
    let g_logits = softmax_backward(sample, grad);
    r.iter()
        .zip(g_logits)
        .map(|(&p, g)| if p > EPS { g / (theta * p) } else { 0.0 })
        .collect()
}

/// KL(p ‖ q) = Σ p·ln(max(p,ε)/max(q,ε)).
pub fn kl_divergence(p: &LocationDistribution, q: &LocationDistribution) -> Result<f64> {
    if p.dims != q.dims {
        return Err(shape_err(format!("KL between {:?} and {:?}", p.dims, q.dims)));
    }
    Ok(p.probs
        .iter()
        .zip(&q.probs)
        .map(|(&p, &q)| if p == 0.0 { 0.0 } else { p * (p.max(EPS) / q.max(EPS)).ln() })
        .sum())
}

/// Gradient of KL(p ‖ q) w.r.t. p.
pub fn kl_grad_p(p: &[f64], q: &[f64]) -> Vec<f64> {
    p.iter()
        .zip(q)
        .map(|(&p, &q)| {
            if p > EPS {
                (p / q.max(EPS)).ln() + 1.0
            } else {
                (EPS / q.max(EPS)).ln()
            }
        })
        .collect()
}

/// Gradient of KL(softmax(logits) ‖ q) w.r.t. the logits, given p.
pub fn kl_grad_logits(p: &[f64], q: &[f64]) -> Vec<f64> {
    softmax_backward(p, &kl_grad_p(p, q))
}

/// −log softmax(logits)[label] and its gradient w.r.t. the logits.
pub fn cross_entropy(logits: &[f64], label: usize) -> Result<(f64, Vec<f64>)> {
    if label >= logits.len() {
        return Err(Error::Invalid(format!(
            "label {label} out of range for {} classes",
            logits.len()
        )));
    }
    let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
    let loss = lse - logits[label];
    let mut grad: Vec<f64> = logits.iter().map(|l| (l - lse).exp()).collect();
    grad[label] -= 1.0;
    Ok((loss, grad))
}

/// Mean over the leading (frame) axis: T×rest → rest.
pub fn mean_frames(input: &Tensor) -> Tensor {
    let t = input.dims[0];
    let per = input.len() / t;
    let mut out = vec![0.0; per];
    for frame in input.data.chunks(per) {
        for (o, v) in out.iter_mut().zip(frame) {
            *o += v;
        }
    }
    out.iter_mut().for_each(|o| *o /= t as f64);
    Tensor {
        dims: input.dims[1..].to_vec(),
        data: out,
    }
}
