use super::params::ParamStore;
use super::tensor::Tensor;

/// Adam over every non-frozen parameter of a store.
#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Self {
        let zeros = || store.iter().map(|p| Tensor::zeros(p.value.shape())).collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Apply one update from the current grad buffers. Grad buffers are left
    /// untouched; call [`ParamStore::zero_grads`] afterwards.
    pub fn step(&mut self, store: &mut ParamStore) {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for ((p, m), v) in store.iter_mut().zip(&mut self.m).zip(&mut self.v) {
            if p.frozen {
                continue;
            }
            let g = p.grad.data();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for (k, w) in p.value.data_mut().iter_mut().enumerate() {
                md[k] = self.beta1 * md[k] + (1.0 - self.beta1) * g[k];
                vd[k] = self.beta2 * vd[k] + (1.0 - self.beta2) * g[k] * g[k];
                let mhat = md[k] / bc1;
                let vhat = vd[k] / bc2;
                *w -= self.lr * mhat / (vhat.sqrt() + self.eps);
            }
        }
    }
}
