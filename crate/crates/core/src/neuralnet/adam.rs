use super::NetworkParams;

/// Adam with bias correction. Moments are stored in `NetworkParams` shaped
/// buffers so the parameter ordering is shared with checkpoints.
#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub t: u64,
    pub m: NetworkParams,
    pub v: NetworkParams,
}

impl Adam {
    pub fn new(params: &NetworkParams) -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            t: 0,
            m: NetworkParams::zeros(params.topology),
            v: NetworkParams::zeros(params.topology),
        }
    }

    pub fn step(&mut self, params: &mut NetworkParams, grad: &NetworkParams, lr: f64) {
        self.t += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.epsilon);
        let c1 = 1.0 - b1.powi(self.t.min(i32::MAX as u64) as i32);
        let c2 = 1.0 - b2.powi(self.t.min(i32::MAX as u64) as i32);
        let tensors = params
            .tensors_mut()
            .into_iter()
            .zip(grad.tensors())
            .zip(self.m.tensors_mut())
            .zip(self.v.tensors_mut());
        for (((p, g), m), v) in tensors {
            for i in 0..p.len() {
                m[i] = b1 * m[i] + (1.0 - b1) * g[i];
                v[i] = b2 * v[i] + (1.0 - b2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}

/// Rescales `grad` so its global L2 norm is at most `max_norm`. Returns the
/// norm before clipping.
pub fn clip_global_norm(grad: &mut NetworkParams, max_norm: f64) -> f64 {
    let norm = grad.squared_norm().sqrt();
    if norm > max_norm && norm > 0.0 {
        grad.scale(max_norm / norm);
    }
    norm
}
