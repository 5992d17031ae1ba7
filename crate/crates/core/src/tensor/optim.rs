use super::{Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        AdamWConfig { lr: 5e-4, beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay: 0.01 }
    }
}

/// AdamW with decoupled weight decay.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(config: AdamWConfig, params: &[Tensor]) -> Self {
        let zeros = || params.iter().map(|p| vec![0.0; p.numel()]).collect::<Vec<_>>();
        AdamW { config, step: 0, m: zeros(), v: zeros() }
    }

    /// One update: `p ← p − lr·wd·p`, then the bias-corrected Adam step.
    pub fn update<'a, I>(&mut self, params: I, grads: &[Vec<f64>]) -> Result<(), TensorError>
    where
        I: IntoIterator<Item = &'a mut Tensor>,
    {
        let params: Vec<&mut Tensor> = params.into_iter().collect();
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(TensorError::ShapeMismatch { op: "adamw", expected: vec![self.m.len()], got: vec![params.len(), grads.len()] });
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.numel() != m.len() || g.len() != m.len() {
                return Err(TensorError::ShapeMismatch { op: "adamw", expected: vec![m.len()], got: vec![p.numel(), g.len()] });
            }
        }
        self.step += 1;
        let AdamWConfig { lr, beta1, beta2, eps, weight_decay } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (((p, g), m), v) in params.into_iter().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..g.len() {
                let mut w = p.data[i];
                w -= lr * weight_decay * w;
                m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                p.data[i] = w - lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
