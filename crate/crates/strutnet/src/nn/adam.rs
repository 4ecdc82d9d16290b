//! Adam optimizer with per-parameter state keyed by parameter path.

use std::collections::BTreeMap;

use super::tensor::Tensor;

struct Slot {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    slots: BTreeMap<String, Slot>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            slots: BTreeMap::new(),
        }
    }

    /// Advance the shared step counter. Call once per optimization step,
    /// before updating the step's parameters.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Update one parameter tensor in the current step.
    pub fn update(&mut self, path: &str, param: &mut Tensor, grad: &Tensor) {
        assert!(self.step > 0, "begin_step before update");
        assert_eq!(param.shape(), grad.shape(), "grad shape mismatch for {}", path);
        let t = self.step as f64;
        let bc1 = 1.0 - self.beta1.powf(t);
        let bc2 = 1.0 - self.beta2.powf(t);
        let slot = self.slots.entry(path.to_string()).or_insert_with(|| Slot {
            m: vec![0.0; param.len()],
            v: vec![0.0; param.len()],
        });
        let pd = param.data_mut();
        let gd = grad.data();
        for i in 0..pd.len() {
            slot.m[i] = self.beta1 * slot.m[i] + (1.0 - self.beta1) * gd[i];
            slot.v[i] = self.beta2 * slot.v[i] + (1.0 - self.beta2) * gd[i] * gd[i];
            let mhat = slot.m[i] / bc1;
            let vhat = slot.v[i] / bc2;
            pd[i] -= self.lr * mhat / (vhat.sqrt() + self.eps);
        }
    }
}
