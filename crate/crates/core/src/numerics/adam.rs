use super::params::Params;
use super::tensor::{Real, Tensor};
use crate::error::{PunError, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 5e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias correction. Moments are kept per parameter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Real> Adam<T> {
    pub fn new(config: AdamConfig, params: &Params<T>) -> Self {
        Adam {
            config,
            step: 0,
            m: params.zeros_like(),
            v: params.zeros_like(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One update of every non-frozen parameter.
    pub fn step(&mut self, params: &mut Params<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(PunError::arg(format!(
                "adam got {} gradients for {} parameters ({} moments)",
                grads.len(),
                params.len(),
                self.m.len()
            )));
        }
        for (id, g) in params.ids().zip(grads) {
            if params.get(id).shape() != g.shape() {
                return Err(PunError::shape(
                    "adam_step",
                    params.get(id).shape(),
                    g.shape(),
                ));
            }
        }
        self.step += 1;
        let AdamConfig {
            lr,
            beta1,
            beta2,
            eps,
        } = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        let (b1, b2) = (T::lit(beta1), T::lit(beta2));
        let (lr_t, eps_t) = (T::lit(lr), T::lit(eps));
        let (bc1, bc2) = (T::lit(bc1), T::lit(bc2));

        let ids: Vec<_> = params.ids().collect();
        for id in ids {
            if params.is_frozen(id) {
                continue;
            }
            let i = id.index();
            let g = grads[i].data();
            let m = self.m[i].data_mut();
            let v = self.v[i].data_mut();
            let p = params.get_mut(id).data_mut();
            for j in 0..p.len() {
                m[j] = b1 * m[j] + (T::one() - b1) * g[j];
                v[j] = b2 * v[j] + (T::one() - b2) * g[j] * g[j];
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                p[j] = p[j] - lr_t * mhat / (vhat.sqrt() + eps_t);
            }
        }
        Ok(())
    }
}
