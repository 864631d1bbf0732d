//! Adam with bias correction.

use gaqn_autograd::{Scalar, Tensor};
use serde::{Deserialize, Serialize};

use crate::params::ParamSet;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// First and second moment estimates for one parameter set.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam<T = f32> {
    pub m: Vec<Tensor<T>>,
    pub v: Vec<Tensor<T>>,
    /// Number of updates applied so far.
    pub t: u64,
}

impl<T: Scalar> Adam<T> {
    pub fn new(params: &ParamSet<T>) -> Self {
        let zeros = || params.tensors().iter().map(|p| Tensor::zeros(p.shape())).collect();
        Adam { m: zeros(), v: zeros(), t: 0 }
    }

    /// One update. A missing gradient counts as zero.
    pub fn step(&mut self, params: &mut ParamSet<T>, grads: &[Option<Tensor<T>>], lr: f64, cfg: &AdamConfig) {
        assert_eq!(grads.len(), params.len(), "one gradient slot per parameter");
        self.t += 1;
        let c1 = 1.0 - cfg.beta1.powi(self.t as i32);
        let c2 = 1.0 - cfg.beta2.powi(self.t as i32);
        for (i, p) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v) = (self.m[i].data_mut(), self.v[i].data_mut());
            let g = grads[i].as_ref().map(|g| g.data());
            for (j, w) in p.data_mut().iter_mut().enumerate() {
                let gj = g.map_or(0.0, |g| g[j].to_f64().unwrap_or(f64::NAN));
                let mj = cfg.beta1 * m[j].to_f64().unwrap() + (1.0 - cfg.beta1) * gj;
                let vj = cfg.beta2 * v[j].to_f64().unwrap() + (1.0 - cfg.beta2) * gj * gj;
                m[j] = T::lit(mj);
                v[j] = T::lit(vj);
                let update = lr * (mj / c1) / ((vj / c2).sqrt() + cfg.eps);
                *w = T::lit(w.to_f64().unwrap() - update);
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_hand_computed_two_parameter_case() {
        let mut p = ParamSet::<f64>::new();
        p.push("w", Tensor::from_vec(&[2], vec![1.0, -2.0]).unwrap());
        let mut adam = Adam::new(&p);
        let cfg = AdamConfig::default();
        let g1 = Tensor::from_vec(&[2], vec![0.5, -1.0]).unwrap();
        let g2 = Tensor::from_vec(&[2], vec![-0.25, 2.0]).unwrap();
        adam.step(&mut p, &[Some(g1)], 0.1, &cfg);
        // Step 1: m̂ = g, v̂ = g², so each parameter moves by lr·g/(|g| + ε).
        let e1 = [1.0 - 0.1 * 0.5 / (0.5 + 1e-8), -2.0 + 0.1 * 1.0 / (1.0 + 1e-8)];
        for (a, e) in p.get("w").unwrap().data().iter().zip(e1) {
            assert!((a - e).abs() < 1e-10);
        }
        adam.step(&mut p, &[Some(g2)], 0.1, &cfg);
        let expected = |w: f64, ga: f64, gb: f64| {
            let m = 0.9 * 0.1 * ga + 0.1 * gb;
            let v = 0.999 * 0.001 * ga * ga + 0.001 * gb * gb;
            let (mh, vh) = (m / (1.0 - 0.81), v / (1.0 - 0.998001));
            w - 0.1 * mh / (vh.sqrt() + 1e-8)
        };
        let e2 = [expected(e1[0], 0.5, -0.25), expected(e1[1], -1.0, 2.0)];
        for (a, e) in p.get("w").unwrap().data().iter().zip(e2) {
            assert!((a - e).abs() < 1e-10, "{a} vs {e}");
        }
        assert_eq!(adam.t, 2);
    }

    #[test]
    fn missing_gradient_is_zero() {
        let mut p = ParamSet::<f64>::new();
        p.push("w", Tensor::from_vec(&[1], vec![3.0]).unwrap());
        let mut adam = Adam::new(&p);
        adam.step(&mut p, &[None], 0.1, &AdamConfig::default());
        assert_eq!(p.get("w").unwrap().data(), &[3.0]);
    }
}
