use super::{mismatch, ParamSet, Scalar, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter tensor in the
/// order of the [`ParamSet`] it was created for.
#[derive(Debug, Clone)]
pub struct Adam<T: Scalar = f32> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Scalar> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamSet<T>) -> Self {
        let zeros: Vec<Vec<T>> = params
            .iter()
            .map(|(_, t)| vec![T::zero(); t.len()])
            .collect();
        Self {
            config,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update. `grads[i]` belongs to the i-th tensor of `params`.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Vec<T>]) -> Result<(), TensorError> {
        if grads.len() != self.m.len() || params.len() != self.m.len() {
            return Err(mismatch("adam_step", &[self.m.len()], &[grads.len()]));
        }
        for ((t, g), m) in params.tensors_mut().zip(grads).zip(&self.m) {
            if t.len() != g.len() || m.len() != g.len() {
                return Err(mismatch("adam_step", t.shape(), &[g.len()]));
            }
        }
        self.step += 1;
        let c = self.config;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let corr1 = T::of(1.0 - c.beta1.powi(self.step as i32));
        let corr2 = T::of(1.0 - c.beta2.powi(self.step as i32));
        let (lr, eps) = (T::of(c.lr), T::of(c.eps));
        for (((t, g), m), v) in params
            .tensors_mut()
            .zip(grads)
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            for (i, p) in t.data_mut().iter_mut().enumerate() {
                let gi = g[i];
                m[i] = b1 * m[i] + (T::one() - b1) * gi;
                v[i] = b2 * v[i] + (T::one() - b2) * gi * gi;
                let mh = m[i] / corr1;
                let vh = v[i] / corr2;
                *p -= lr * mh / (vh.sqrt() + eps);
            }
        }
        Ok(())
    }
}
