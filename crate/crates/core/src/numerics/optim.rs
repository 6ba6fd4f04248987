use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{ParamSet, Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { lr: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Adam with bias correction. Moments are kept per parameter in [`ParamSet`] order.
#[derive(Clone, Debug)]
pub struct AdamState<T> {
    pub config: AdamConfig,
    pub t: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Scalar> AdamState<T> {
    pub fn new(params: &ParamSet<T>, config: AdamConfig) -> Self {
        let zeros = || params.iter().map(|(_, p)| Tensor::zeros(p.value.shape())).collect();
        Self { config, t: 0, m: zeros(), v: zeros() }
    }

    pub fn first_moments(&self) -> &[Tensor<T>] {
        &self.m
    }

    /// One update. Frozen parameters are left untouched; the step counter
    /// always advances by one.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Tensor<T>]) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Shape(format!(
                "{} gradients / {} moments for {} parameters",
                grads.len(),
                self.m.len(),
                params.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.1.value.shape() != g.shape() || m.shape() != g.shape() {
                return Err(Error::Shape(format!(
                    "gradient {:?} for parameter {} {:?}",
                    g.shape(),
                    p.1.name,
                    p.1.value.shape()
                )));
            }
        }
        self.t += 1;
        let c = self.config;
        let (b1, b2) = (T::lit(c.beta1), T::lit(c.beta2));
        let bc1 = T::lit(1.0 - c.beta1.powi(self.t as i32));
        let bc2 = T::lit(1.0 - c.beta2.powi(self.t as i32));
        let (lr, eps) = (T::lit(c.lr), T::lit(c.eps));
        for (((p, g), m), v) in params.values_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            if !p.trainable {
                continue;
            }
            let it = p.value.data_mut().iter_mut().zip(g.data()).zip(m.data_mut()).zip(v.data_mut());
            for (((w, &gi), mi), vi) in it {
                *mi = b1 * *mi + (T::one() - b1) * gi;
                *vi = b2 * *vi + (T::one() - b2) * gi * gi;
                let m_hat = *mi / bc1;
                let v_hat = *vi / bc2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Global L2 norm over a gradient list.
pub fn global_norm<T: Scalar>(grads: &[Tensor<T>]) -> T {
    grads.iter().map(Tensor::sq_norm).sum::<T>().sqrt()
}

/// Rescales all gradients by `max_norm / g` when the global norm `g` exceeds
/// `max_norm`. Returns the norm before clipping.
pub fn clip_global_norm<T: Scalar>(grads: &mut [Tensor<T>], max_norm: T) -> Result<T> {
    if max_norm.partial_cmp(&T::zero()) != Some(std::cmp::Ordering::Greater) {
        return Err(Error::InvalidArgument(format!("max_norm must be positive, got {max_norm}")));
    }
    let norm = global_norm(grads);
    if norm > max_norm {
        let s = max_norm / norm;
        for g in grads.iter_mut() {
            g.scale_assign(s);
        }
    }
    Ok(norm)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{ParamId, SeededRng};
    use rand::Rng;

    fn one_param(values: &[f64]) -> ParamSet<f64> {
        let mut p = ParamSet::new();
        p.add("x", Tensor::vector(values.to_vec()));
        p
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = one_param(&[1.0, -2.0]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(&mut p, &[Tensor::zeros(&[2])]).unwrap();
        assert_eq!(p.get(ParamId(0)).data(), &[1.0, -2.0]);
        assert_eq!(adam.t, 1);
    }

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let mut p = one_param(&[0.5, 0.5, 0.5]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        adam.step(&mut p, &[Tensor::vector(vec![3.0, -0.01, 250.0])]).unwrap();
        let expected = [0.5 - 1e-3, 0.5 + 1e-3, 0.5 - 1e-3];
        for (a, b) in p.get(ParamId(0)).data().iter().zip(expected) {
            assert!((a - b).abs() < 1e-8, "{a} vs {b}");
        }
    }

    #[test]
    fn minimizes_square() {
        let mut p = one_param(&[1.0]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        let mut last = 1.0;
        for _ in 0..3 {
            let x = p.get(ParamId(0)).data()[0];
            adam.step(&mut p, &[Tensor::vector(vec![2.0 * x])]).unwrap();
            let x = p.get(ParamId(0)).data()[0];
            assert!(x * x < last);
            last = x * x;
        }
    }

    #[test]
    fn frozen_and_masked_entries_stay_put() {
        let mut p = ParamSet::new();
        let a = p.add("a", Tensor::vector(vec![f64::NEG_INFINITY, 1.0]));
        let b = p.add("b", Tensor::vector(vec![1.0]));
        p.set_trainable(b, false);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        for _ in 0..5 {
            adam.step(&mut p, &[Tensor::vector(vec![0.0, 1.0]), Tensor::vector(vec![1.0])]).unwrap();
        }
        assert_eq!(p.get(a).data()[0], f64::NEG_INFINITY);
        assert!(p.get(a).data()[1] < 1.0);
        assert_eq!(p.get(b).data()[0], 1.0);
        assert_eq!(adam.t, 5);
    }

    #[test]
    fn shape_mismatch_is_error() {
        let mut p = one_param(&[1.0, 2.0]);
        let mut adam = AdamState::new(&p, AdamConfig::default());
        assert!(adam.step(&mut p, &[Tensor::zeros(&[3])]).is_err());
        assert_eq!(adam.t, 0);
    }

    #[test]
    fn clip_examples() {
        let mut g: Vec<Tensor<f64>> = vec![Tensor::vector(vec![0.6, 0.8])];
        clip_global_norm(&mut g, 5.0).unwrap();
        assert_eq!(g[0].data(), &[0.6, 0.8]);

        let mut g: Vec<Tensor<f64>> = vec![Tensor::vector(vec![30.0, 40.0])];
        let pre = clip_global_norm(&mut g, 5.0).unwrap();
        assert_eq!(pre, 50.0);
        assert!((g[0].data()[0] - 3.0).abs() < 1e-12 && (g[0].data()[1] - 4.0).abs() < 1e-12);

        assert!(clip_global_norm(&mut g, 0.0).is_err());
    }

    #[test]
    fn clip_random_is_min_and_idempotent() {
        let mut rng = SeededRng::new(9);
        for _ in 0..200 {
            let mut grads: Vec<Tensor<f64>> = (0..3)
                .map(|_| {
                    let scale = rng.gen_range(0.01..10.0);
                    Tensor::vector((0..4).map(|_| rng.gen_range(-scale..scale)).collect())
                })
                .collect();
            let pre = global_norm(&grads);
            clip_global_norm(&mut grads, 5.0).unwrap();
            let post = global_norm(&grads);
            assert!((post - pre.min(5.0)).abs() < 1e-9);
            let once = grads.clone();
            clip_global_norm(&mut grads, 5.0).unwrap();
            for (a, b) in once.iter().zip(&grads) {
                assert!(a.max_abs_diff(b) < 1e-15);
            }
        }
    }
}
