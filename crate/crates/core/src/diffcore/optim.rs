use super::tensor::Param;

/// SGD with classical momentum: `v ← μ·v + g; w ← w − lr·v`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub momentum: f64,
    pub weight_decay: f64,
}

impl Sgd {
    pub fn new(lr: f64, momentum: f64) -> Self {
        Self {
            lr,
            momentum,
            weight_decay: 0.0,
        }
    }

    /// Applies one update with the given learning rate and zeroes the
    /// gradient buffers.
    pub fn step_with_lr<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>, lr: f64) {
        for p in params {
            for ((w, g), v) in p.value.data.iter_mut().zip(&mut p.grad).zip(&mut p.velocity) {
                let grad = *g + self.weight_decay * *w;
                *v = self.momentum * *v + grad;
                *w -= lr * *v;
                *g = 0.0;
            }
        }
    }

    pub fn step<'a>(&self, params: impl IntoIterator<Item = &'a mut Param>) {
        self.step_with_lr(params, self.lr)
    }
}

/// Cosine decay from `lr0` at t = 0 to zero at t = `total`.
pub fn cosine_lr(lr0: f64, t: usize, total: usize) -> f64 {
    if total == 0 {
        return lr0;
    }
    let frac = (t.min(total) as f64) / total as f64;
    lr0 * 0.5 * (1.0 + (std::f64::consts::PI * frac).cos())
}
