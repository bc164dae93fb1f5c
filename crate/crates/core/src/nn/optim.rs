//! Adaptive moment estimation with decoupled weight decay, plus
//! global-norm gradient clipping.

use indexmap::IndexMap;
use ndarray::ArrayD;

use super::ParamStore;

/// Scale all gradients so their joint L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut IndexMap<String, ArrayD<f64>>, max_norm: f64) -> f64 {
    let sq: f64 = grads.values().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.values_mut() {
            g.mapv_inplace(|x| x * scale);
        }
    }
    norm
}

/// First/second moment state for one parameter.
struct Moments {
    m: ArrayD<f64>,
    v: ArrayD<f64>,
}

pub struct AdamW {
    beta1: f64,
    beta2: f64,
    eps: f64,
    weight_decay: f64,
    step: u64,
    state: IndexMap<String, Moments>,
}

impl AdamW {
    pub fn new(weight_decay: f64) -> Self {
        AdamW { beta1: 0.9, beta2: 0.999, eps: 1e-8, weight_decay, step: 0, state: IndexMap::new() }
    }

    /// Apply one update. Parameters without a gradient this step keep
    /// their value and their moment state.
    pub fn step(
        &mut self,
        store: &mut ParamStore,
        grads: &IndexMap<String, ArrayD<f64>>,
        lr: f64,
    ) {
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (name, grad) in grads {
            let param = store.get_mut(name);
            assert!(param.trainable, "gradient for non-trainable parameter `{name}`");
            let entry = self.state.entry(name.clone()).or_insert_with(|| Moments {
                m: ArrayD::zeros(grad.raw_dim()),
                v: ArrayD::zeros(grad.raw_dim()),
            });
            let value = param.value.as_slice_mut().unwrap();
            let m = entry.m.as_slice_mut().unwrap();
            let v = entry.v.as_slice_mut().unwrap();
            let g = grad.as_slice().unwrap();
            for i in 0..value.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                value[i] -= lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * value[i]);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_leaves_small_gradients_alone() {
        let mut grads = IndexMap::new();
        grads.insert("a".to_string(), ndarray::arr1(&[3.0, 4.0]).into_dyn());
        let norm = clip_global_norm(&mut grads, 10.0);
        assert!((norm - 5.0).abs() < 1e-12);
        assert_eq!(grads["a"].as_slice().unwrap(), &[3.0, 4.0]);
    }

    #[test]
    fn clip_rescales_to_max_norm() {
        let mut grads = IndexMap::new();
        grads.insert("a".to_string(), ndarray::arr1(&[30.0, 40.0]).into_dyn());
        grads.insert("b".to_string(), ndarray::arr1(&[0.0]).into_dyn());
        let norm = clip_global_norm(&mut grads, 10.0);
        assert!((norm - 50.0).abs() < 1e-12);
        let after: f64 = grads.values().map(|g| g.iter().map(|x| x * x).sum::<f64>()).sum();
        assert!((after.sqrt() - 10.0).abs() < 1e-9);
    }

    #[test]
    fn adamw_first_step_moves_by_lr_against_gradient_sign() {
        let mut store = ParamStore::new();
        store.insert("w", ndarray::arr1(&[1.0, -1.0]).into_dyn(), true);
        let mut opt = AdamW::new(0.0);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), ndarray::arr1(&[0.5, -0.5]).into_dyn());
        opt.step(&mut store, &grads, 0.1);
        let w = &store.get("w").value;
        // bias-corrected first step is lr * g/|g| (up to eps)
        assert!((w[[0]] - 0.9).abs() < 1e-6);
        assert!((w[[1]] + 0.9).abs() < 1e-6);
    }

    #[test]
    fn weight_decay_is_decoupled_from_moments() {
        let mut store = ParamStore::new();
        store.insert("w", ndarray::arr1(&[2.0]).into_dyn(), true);
        let mut opt = AdamW::new(0.5);
        let mut grads = IndexMap::new();
        grads.insert("w".to_string(), ndarray::arr1(&[0.0]).into_dyn());
        opt.step(&mut store, &grads, 0.1);
        // zero gradient: the only movement is -lr * wd * w = -0.1
        let w = store.get("w").value[[0]];
        assert!((w - 1.9).abs() < 1e-12, "got {w}");
    }

    #[test]
    fn converges_on_a_quadratic() {
        let mut store = ParamStore::new();
        store.insert("w", ndarray::arr1(&[5.0]).into_dyn(), true);
        let mut opt = AdamW::new(0.0);
        for _ in 0..2000 {
            let w = store.get("w").value[[0]];
            let mut grads = IndexMap::new();
            grads.insert("w".to_string(), ndarray::arr1(&[2.0 * w]).into_dyn());
            opt.step(&mut store, &grads, 0.01);
        }
        assert!(store.get("w").value[[0]].abs() < 0.05);
    }
}
