//! Optimizers (Adam, LARS) and the early-stopping counter shared by the
//! training loops.
//!
//! Both optimizers read the gradient slots of the parameter tensors (see
//! `ParameterSet::load_grads`) and skip frozen paths entirely, which is
//! what makes freezing a hard guarantee rather than a convention.

use std::collections::BTreeMap;

use super::tensor::ParameterSet;

/// Adam with bias correction.
#[derive(Debug, Clone)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    t: u64,
    m: BTreeMap<String, Vec<f64>>,
    v: BTreeMap<String, Vec<f64>>,
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            t: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.t
    }

    /// One update from the tensors' gradient slots. Paths without a
    /// gradient keep their state untouched.
    pub fn step(&mut self, params: &mut ParameterSet) {
        self.t += 1;
        let t = self.t as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        let (beta1, beta2, lr, eps) = (self.beta1, self.beta2, self.lr, self.eps);
        let (m_store, v_store) = (&mut self.m, &mut self.v);
        params.for_each_unfrozen_mut(|path, tensor| {
            let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else {
                return;
            };
            let n = grad.len();
            let m = m_store.entry(path.to_string()).or_insert_with(|| vec![0.0; n]);
            let v = v_store.entry(path.to_string()).or_insert_with(|| vec![0.0; n]);
            let data = tensor.data_mut();
            for i in 0..n {
                m[i] = beta1 * m[i] + (1.0 - beta1) * grad[i];
                v[i] = beta2 * v[i] + (1.0 - beta2) * grad[i] * grad[i];
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                data[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        });
    }
}

/// Layer-wise adaptive rate scaling with momentum.
///
/// The trust ratio ‖w‖ / (‖g‖ + wd·‖w‖ + ε) is computed per parameter
/// tensor; bias vectors keep a ratio of 1 (in this architecture the 1-D
/// parameters are exactly the biases).
#[derive(Debug, Clone)]
pub struct Lars {
    pub momentum: f64,
    pub weight_decay: f64,
    pub eps: f64,
    velocity: BTreeMap<String, Vec<f64>>,
}

impl Default for Lars {
    fn default() -> Self {
        Self::new(0.9, 0.0)
    }
}

impl Lars {
    pub fn new(momentum: f64, weight_decay: f64) -> Self {
        Self {
            momentum,
            weight_decay,
            eps: 1e-9,
            velocity: BTreeMap::new(),
        }
    }

    fn excluded(path: &str) -> bool {
        path.ends_with("bias")
    }

    /// One update at the given learning rate from the tensors' gradient
    /// slots.
    pub fn step(&mut self, params: &mut ParameterSet, lr: f64) {
        let (momentum, wd, eps) = (self.momentum, self.weight_decay, self.eps);
        let velocity = &mut self.velocity;
        params.for_each_unfrozen_mut(|path, tensor| {
            let Some(grad) = tensor.grad().map(<[f64]>::to_vec) else {
                return;
            };
            let n = grad.len();
            let data = tensor.data_mut();
            let w_norm = data.iter().map(|w| w * w).sum::<f64>().sqrt();
            let g_norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            let trust = if Self::excluded(path) {
                1.0
            } else {
                w_norm / (g_norm + wd * w_norm + eps)
            };
            let v = velocity.entry(path.to_string()).or_insert_with(|| vec![0.0; n]);
            for i in 0..n {
                v[i] = momentum * v[i] + trust * lr * (grad[i] + wd * data[i]);
                data[i] -= v[i];
            }
        });
    }
}

/// Verdict after reporting one validation loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EarlyStop {
    Improved,
    NoImprovement,
    Stop,
}

/// Patience counter over validation losses; tracks the best epoch so the
/// caller can restore its snapshot.
#[derive(Debug, Clone)]
pub struct EarlyStopper {
    patience: usize,
    best: f64,
    best_epoch: Option<usize>,
    since_best: usize,
    epoch: usize,
}

impl EarlyStopper {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: None,
            since_best: 0,
            epoch: 0,
        }
    }

    /// Report the validation loss of the next epoch.
    pub fn push(&mut self, val_loss: f64) -> EarlyStop {
        let epoch = self.epoch;
        self.epoch += 1;
        if val_loss < self.best {
            self.best = val_loss;
            self.best_epoch = Some(epoch);
            self.since_best = 0;
            EarlyStop::Improved
        } else {
            self.since_best += 1;
            if self.since_best >= self.patience {
                EarlyStop::Stop
            } else {
                EarlyStop::NoImprovement
            }
        }
    }

    pub fn best_epoch(&self) -> Option<usize> {
        self.best_epoch
    }

    pub fn best_loss(&self) -> f64 {
        self.best
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::Tensor;

    fn single_param(value: Vec<f64>) -> ParameterSet {
        let mut p = ParameterSet::new();
        let n = value.len();
        p.insert("w", Tensor::new(vec![n], value).unwrap());
        p
    }

    fn with_grad(params: &mut ParameterSet, path: &str, grad: Vec<f64>) {
        params.get_mut(path).unwrap().set_grad(grad).unwrap();
    }

    #[test]
    fn adam_zero_gradient_leaves_fresh_params_unchanged() {
        let mut params = single_param(vec![1.0, -2.0, 3.0]);
        with_grad(&mut params, "w", vec![0.0; 3]);
        let before = params.get("w").unwrap().data().to_vec();
        let mut adam = Adam::new(1e-4);
        adam.step(&mut params);
        assert_eq!(params.get("w").unwrap().data(), before.as_slice());
    }

    #[test]
    fn adam_first_step_matches_closed_form() {
        // w = 0, g = 1, t = 1: update = -lr * m_hat / (sqrt(v_hat) + eps)
        // with m_hat = v_hat = 1.
        let mut params = single_param(vec![0.0]);
        with_grad(&mut params, "w", vec![1.0]);
        let mut adam = Adam::new(1e-4);
        adam.step(&mut params);
        let w = params.get("w").unwrap().data()[0];
        let expected = -1e-4 / (1.0 + 1e-8);
        assert!((w - expected).abs() < 1e-9, "{w} vs {expected}");
    }

    #[test]
    fn adam_skips_frozen_paths() {
        let mut params = single_param(vec![1.0]);
        params.freeze_prefix("w");
        with_grad(&mut params, "w", vec![5.0]);
        let mut adam = Adam::new(0.1);
        for _ in 0..100 {
            adam.step(&mut params);
        }
        assert_eq!(params.get("w").unwrap().data(), &[1.0]);
    }

    #[test]
    fn lars_hand_example() {
        // w = [3, 4], g = [0, 10], momentum 0, wd 0, lr 0.1:
        // trust = 5/10 = 0.5, update = -[0, 0.5].
        let mut params = single_param(vec![3.0, 4.0]);
        with_grad(&mut params, "w", vec![0.0, 10.0]);
        let mut lars = Lars::new(0.0, 0.0);
        lars.eps = 0.0;
        lars.step(&mut params, 0.1);
        let w = params.get("w").unwrap().data();
        assert_eq!(w, &[3.0, 3.5]);
    }

    #[test]
    fn lars_zero_gradient_is_a_fixed_point() {
        let mut params = single_param(vec![3.0, 4.0]);
        with_grad(&mut params, "w", vec![0.0, 0.0]);
        let mut lars = Lars::default();
        lars.step(&mut params, 0.1);
        assert_eq!(params.get("w").unwrap().data(), &[3.0, 4.0]);
    }

    #[test]
    fn lars_trust_ratio_scales_with_weight_norm() {
        let grad = vec![1.0, 2.0, -0.5];
        let base = vec![0.3, -0.8, 0.1];
        let mut small = single_param(base.clone());
        let mut large = single_param(base.iter().map(|v| 10.0 * v).collect());
        with_grad(&mut small, "w", grad.clone());
        with_grad(&mut large, "w", grad.clone());
        let mut lars = Lars::new(0.0, 0.0);
        let before_small = small.get("w").unwrap().data().to_vec();
        let before_large = large.get("w").unwrap().data().to_vec();
        lars.step(&mut small, 0.01);
        lars.step(&mut large, 0.01);
        let delta_small: Vec<f64> = small
            .get("w")
            .unwrap()
            .data()
            .iter()
            .zip(&before_small)
            .map(|(a, b)| a - b)
            .collect();
        let delta_large: Vec<f64> = large
            .get("w")
            .unwrap()
            .data()
            .iter()
            .zip(&before_large)
            .map(|(a, b)| a - b)
            .collect();
        for (s, l) in delta_small.iter().zip(&delta_large) {
            assert!((l / s - 10.0).abs() < 1e-6, "{l} vs {s}");
        }
    }

    #[test]
    fn lars_excludes_biases_from_trust_adaptation() {
        let mut params = ParameterSet::new();
        params.insert("layer.bias", Tensor::new(vec![2], vec![3.0, 4.0]).unwrap());
        with_grad(&mut params, "layer.bias", vec![0.0, 10.0]);
        let mut lars = Lars::new(0.0, 0.0);
        lars.step(&mut params, 0.1);
        // trust = 1: update is plain SGD.
        assert_eq!(params.get("layer.bias").unwrap().data(), &[3.0, 3.0]);
    }

    #[test]
    fn lr_zero_step_is_bit_identical() {
        let mut params = single_param(vec![0.5, -0.25]);
        with_grad(&mut params, "w", vec![1.0, 1.0]);
        let before = params.clone();
        let mut lars = Lars::default();
        lars.step(&mut params, 0.0);
        // Gradient slots survive the step; compare values only.
        assert_eq!(
            params.get("w").unwrap().data(),
            before.get("w").unwrap().data()
        );
    }

    #[test]
    fn frozen_paths_survive_100_steps_of_both_optimizers() {
        let mut params = ParameterSet::new();
        params.insert(
            "backbone.block0.conv.weight",
            Tensor::new(vec![2, 2], vec![1.0, 2.0, 3.0, 4.0]).unwrap(),
        );
        params.insert("head.fc0.weight", Tensor::new(vec![2], vec![1.0, 1.0]).unwrap());
        params.freeze_prefix("backbone.");
        let frozen_before = params.snapshot_prefix("backbone.");

        let mut adam = Adam::new(0.01);
        let mut lars = Lars::default();
        for _ in 0..100 {
            with_grad(&mut params, "backbone.block0.conv.weight", vec![1.0; 4]);
            with_grad(&mut params, "head.fc0.weight", vec![1.0; 2]);
            adam.step(&mut params);
            lars.step(&mut params, 0.05);
        }
        assert_eq!(params.snapshot_prefix("backbone."), frozen_before);
        assert_ne!(params.get("head.fc0.weight").unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn early_stopper_counts_like_the_contract() {
        let mut stopper = EarlyStopper::new(5);
        let losses = [1.0, 0.9, 0.91, 0.92, 0.93, 0.94, 0.95];
        let mut stopped_at = None;
        for (epoch, &loss) in losses.iter().enumerate() {
            if stopper.push(loss) == EarlyStop::Stop {
                stopped_at = Some(epoch);
                break;
            }
        }
        assert_eq!(stopped_at, Some(6)); // 0-based: the 7th epoch
        assert_eq!(stopper.best_epoch(), Some(1)); // the 2nd epoch
    }

    #[test]
    fn early_stopper_never_stops_while_improving() {
        let mut stopper = EarlyStopper::new(20);
        for i in 0..200 {
            let loss = 1.0 / (1.0 + i as f64);
            assert_eq!(stopper.push(loss), EarlyStop::Improved);
        }
        assert_eq!(stopper.best_epoch(), Some(199));
    }
}
