use serde::{Deserialize, Serialize};

use super::{Array, Gradients, NumResult, NumericsError, ParamStore, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            weight_decay: 1e-5,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam moments with decoupled weight decay.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<F> {
    pub config: AdamConfig,
    pub step: u64,
    pub m: Vec<Array<F>>,
    pub v: Vec<Array<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(config: AdamConfig, params: &ParamStore<F>) -> Self {
        let zeros = || {
            params
                .arrays()
                .iter()
                .map(|a| Array::zeros(a.rows(), a.cols()))
                .collect::<Vec<_>>()
        };
        AdamState {
            config,
            step: 0,
            m: zeros(),
            v: zeros(),
        }
    }

    /// One update. A non-finite gradient aborts the step before any
    /// parameter is touched.
    pub fn step(&mut self, params: &mut ParamStore<F>, grads: &Gradients<F>) -> NumResult<()> {
        for (i, g) in grads.grads.iter().enumerate() {
            if !g.is_finite() {
                return Err(NumericsError::NonFiniteGradient {
                    param: params.name(super::ParamId(i)).to_string(),
                });
            }
        }
        self.step += 1;
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let (b1, b2) = (F::lit(c.beta1), F::lit(c.beta2));
        let (one_b1, one_b2) = (F::lit(1.0 - c.beta1), F::lit(1.0 - c.beta2));
        let step_size = F::lit(c.lr / bc1);
        let inv_sqrt_bc2 = F::lit(1.0 / bc2.sqrt());
        let eps = F::lit(c.eps);
        let decay = F::lit(1.0 - c.lr * c.weight_decay);
        for (((p, g), m), v) in params
            .arrays_mut()
            .iter_mut()
            .zip(&grads.grads)
            .zip(&mut self.m)
            .zip(&mut self.v)
        {
            for (((p, &g), m), v) in p
                .data_mut()
                .iter_mut()
                .zip(g.data())
                .zip(m.data_mut())
                .zip(v.data_mut())
            {
                *m = b1 * *m + one_b1 * g;
                *v = b2 * *v + one_b2 * g * g;
                *p = *p * decay - step_size * *m / ((*v).sqrt() * inv_sqrt_bc2 + eps);
            }
        }
        Ok(())
    }
}

pub fn global_norm<F: Scalar>(grads: &Gradients<F>) -> f64 {
    grads
        .grads
        .iter()
        .map(|g| {
            g.data()
                .iter()
                .map(|&x| x.as_f64() * x.as_f64())
                .sum::<f64>()
        })
        .sum::<f64>()
        .sqrt()
}

/// Rescales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_global_norm<F: Scalar>(grads: &mut Gradients<F>, max_norm: f64) -> f64 {
    let norm = global_norm(grads);
    if norm > max_norm {
        grads.scale(F::lit(max_norm / norm));
    }
    norm
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grads_of(values: &[f64]) -> Gradients<f64> {
        Gradients {
            grads: vec![Array::row_vector(values.to_vec())],
        }
    }

    #[test]
    fn small_norm_is_unchanged() {
        let mut g = grads_of(&[0.3, 0.4]);
        let before = g.clone();
        assert!((clip_global_norm(&mut g, 1.0) - 0.5).abs() < 1e-12);
        assert_eq!(g, before);
    }

    #[test]
    fn norm_four_is_scaled_by_quarter() {
        let mut g = grads_of(&[0.0, 4.0]);
        g.grads.push(Array::row_vector(vec![0.0]));
        assert_eq!(clip_global_norm(&mut g, 1.0), 4.0);
        assert_eq!(g.grads[0].data(), &[0.0, 1.0]);
        assert!((global_norm(&g) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn one_step_descends_on_quadratic() {
        let mut params = ParamStore::<f64>::new();
        let id = params.insert("theta", Array::scalar(1.0));
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let f = |p: &ParamStore<f64>| 0.5 * p.get(id).item().powi(2);
        let before = f(&params);
        let g = grads_of(&[params.get(id).item()]);
        adam.step(&mut params, &g).unwrap();
        assert!(f(&params) < before);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn nan_gradient_aborts_with_name() {
        let mut params = ParamStore::<f32>::new();
        params.insert("enc.0.wq", Array::scalar(1.0));
        let mut adam = AdamState::new(AdamConfig::default(), &params);
        let g = Gradients {
            grads: vec![Array::scalar(f32::NAN)],
        };
        let err = adam.step(&mut params, &g).unwrap_err();
        assert!(err.to_string().contains("enc.0.wq"));
        assert_eq!(params.get(super::super::ParamId(0)).item(), 1.0);
        assert_eq!(adam.step, 0);
    }
}
