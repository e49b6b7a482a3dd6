//! Bias-corrected Adam.

use crate::matrix::Matrix;
use crate::params::ParamStore;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
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

/// Per-tensor moment state.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub m: Matrix,
    pub v: Matrix,
    /// Number of updates this tensor has received.
    pub step: u64,
}

/// Optimizer state aligned with the tensors of a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    pub moments: Vec<Moments>,
}

impl Adam {
    pub fn new(config: AdamConfig, store: &ParamStore) -> Self {
        let moments = store
            .entries()
            .iter()
            .map(|e| Moments {
                m: Matrix::zeros(e.value.rows(), e.value.cols()),
                v: Matrix::zeros(e.value.rows(), e.value.cols()),
                step: 0,
            })
            .collect();
        Self { config, moments }
    }

    /// Applies one update. `None` gradients leave both the tensor and its
    /// moments untouched, so frozen tensors stay bit-identical.
    pub fn step(&mut self, store: &mut ParamStore, grads: &[Option<Matrix>]) {
        assert_eq!(grads.len(), self.moments.len(), "gradient count");
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        for (i, g) in grads.iter().enumerate() {
            let Some(g) = g else { continue };
            let st = &mut self.moments[i];
            let p = store.get_mut(crate::ParamId(i));
            assert_eq!(p.shape(), g.shape(), "gradient shape for tensor {i}");
            st.step += 1;
            let bc1 = 1.0 - beta1.powi(st.step as i32);
            let bc2 = 1.0 - beta2.powi(st.step as i32);
            let (m, v) = (st.m.data_mut(), st.v.data_mut());
            for (((p, &g), m), v) in p.data_mut().iter_mut().zip(g.data()).zip(m).zip(v) {
                *m = beta1 * *m + (1.0 - beta1) * g;
                *v = beta2 * *v + (1.0 - beta2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
    }
}
