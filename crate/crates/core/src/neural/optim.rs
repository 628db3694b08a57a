//! AdamW and the warmup + cosine learning-rate schedule.

/// Linear warmup from 0 to `peak` over `warmup_steps`, then cosine decay to 0
/// at `total_steps`.
pub fn lr_at(step: usize, total_steps: usize, warmup_steps: usize, peak: f64) -> f64 {
    if total_steps == 0 {
        return 0.0;
    }
    if step < warmup_steps {
        return peak * step as f64 / warmup_steps as f64;
    }
    let decay_len = total_steps.saturating_sub(warmup_steps);
    if decay_len == 0 {
        return peak;
    }
    let t = ((step - warmup_steps) as f64 / decay_len as f64).min(1.0);
    0.5 * peak * (1.0 + (std::f64::consts::PI * t).cos())
}

pub fn warmup_steps(total_steps: usize, warmup_ratio: f64) -> usize {
    (warmup_ratio * total_steps as f64).ceil() as usize
}

#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl AdamW {
    pub fn new(n_params: usize, weight_decay: f64) -> AdamW {
        AdamW {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    /// One update. Weight decay is applied directly to the parameters
    /// (decoupled from the gradient) except where `decay_mask` is false.
    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64, decay_mask: impl Fn(usize) -> bool) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t);
        let bc2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            let g = grad[i];
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * g;
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * g * g;
            if decay_mask(i) {
                params[i] -= lr * self.weight_decay * params[i];
            }
            let m_hat = self.m[i] / bc1;
            let v_hat = self.v[i] / bc2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + self.eps);
        }
    }
}
