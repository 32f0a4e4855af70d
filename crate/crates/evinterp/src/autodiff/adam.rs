//! Adam with bias correction. Moment buffers align with the parameter
//! store's registration order and round-trip through checkpoints so that a
//! resumed run continues bit-identically.

use ndarray::ArrayD;

use super::{ParamGrads, ParamStore};

#[derive(Clone, Debug)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<ArrayD<f64>>,
    v: Vec<ArrayD<f64>>,
}

impl Adam {
    pub fn new(store: &ParamStore, lr: f64) -> Adam {
        let zeros: Vec<ArrayD<f64>> = (0..store.len())
            .map(|i| ArrayD::zeros(store.by_index(i).1.shape()))
            .collect();
        Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update from summed gradients. Parameters without a gradient
    /// entry (unreached by this loss) are left untouched, moments included,
    /// so unused branches do not decay.
    pub fn step(&mut self, store: &mut ParamStore, grads: &ParamGrads) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (idx, g) in grads {
            let m = &mut self.m[*idx];
            let v = &mut self.v[*idx];
            ndarray::Zip::from(m.view_mut())
                .and(v.view_mut())
                .and(g)
                .for_each(|m, v, &g| {
                    *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                    *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                });
            let param = store.by_index_mut(*idx);
            ndarray::Zip::from(param.view_mut())
                .and(m.view())
                .and(v.view())
                .for_each(|p, &m, &v| {
                    let mhat = m / bc1;
                    let vhat = v / bc2;
                    *p -= self.lr * mhat / (vhat.sqrt() + self.eps);
                });
        }
    }

    /// Optimizer state as named arrays for checkpointing; `state[i].0`
    /// follows the parameter name it belongs to.
    pub fn export_state(&self, store: &ParamStore) -> Vec<(String, ArrayD<f64>)> {
        let mut out = Vec::with_capacity(2 * self.m.len());
        for i in 0..self.m.len() {
            let name = store.by_index(i).0;
            out.push((format!("opt.m.{name}"), self.m[i].clone()));
            out.push((format!("opt.v.{name}"), self.v[i].clone()));
        }
        out
    }

    /// Restores moments exported by [`Adam::export_state`].
    pub fn import_state(
        &mut self,
        store: &ParamStore,
        arrays: &[(String, ArrayD<f64>)],
        step: u64,
    ) {
        self.step = step;
        for (name, value) in arrays {
            if let Some(rest) = name.strip_prefix("opt.m.") {
                if let Some(id) = store.id(rest) {
                    self.m[id.index()] = value.clone();
                }
            } else if let Some(rest) = name.strip_prefix("opt.v.") {
                if let Some(id) = store.id(rest) {
                    self.v[id.index()] = value.clone();
                }
            }
        }
    }
}
