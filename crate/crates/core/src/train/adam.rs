use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::Weights;
use crate::tensor::Tensor;

/// Bias-corrected Adam. Moments are stored in `f32`, updates computed in `f64`.
#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub m: BTreeMap<String, Tensor>,
    pub v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }
}

impl Adam {
    /// One update of every parameter. A parameter without a gradient is
    /// treated as having a zero gradient.
    pub fn step(&mut self, params: &mut Weights, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params
                .get(name)
                .ok_or_else(|| Error::MissingWeight(format!("{name} (gradient without parameter)")))?;
            p.expect_same_shape(g, &format!("gradient of {name}"))?;
            if !g.is_finite() {
                return Err(Error::NonFinite {
                    context: format!("gradient of {name}"),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, p) in params.iter_mut() {
            let shape = p.shape();
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(shape));
            let g = grads.get(name);
            let pd = p.data_mut();
            let (md, vd) = (m.data_mut(), v.data_mut());
            for i in 0..pd.len() {
                let gi = g.map_or(0.0, |g| g.data()[i] as f64);
                let mi = self.beta1 * md[i] as f64 + (1.0 - self.beta1) * gi;
                let vi = self.beta2 * vd[i] as f64 + (1.0 - self.beta2) * gi * gi;
                md[i] = mi as f32;
                vd[i] = vi as f32;
                let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + self.eps);
                pd[i] = (pd[i] as f64 - update) as f32;
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn one(name: &str, v: f32) -> BTreeMap<String, Tensor> {
        [(name.to_string(), Tensor::scalar(v))].into_iter().collect()
    }

    #[test]
    fn zero_grad_leaves_params() {
        let mut p = one("a", 1.5);
        let mut adam = Adam::default();
        adam.step(&mut p, &one("a", 0.0), 0.1).unwrap();
        assert_eq!(p["a"].data(), &[1.5]);
        assert_eq!(adam.step, 1);
    }

    #[test]
    fn constant_gradient_hand_trace() {
        // With constant g, m_hat = g and v_hat = g^2 at every step, so each
        // step moves by lr * g / (|g| + eps).
        let (g, lr, eps) = (0.5f64, 0.01f64, 1e-8f64);
        let mut p = one("a", 1.0);
        let mut adam = Adam::default();
        let mut expect = 1.0f64;
        for _ in 0..3 {
            adam.step(&mut p, &one("a", g as f32), lr).unwrap();
            expect -= lr * g / (g + eps);
        }
        assert!((p["a"].data()[0] as f64 - expect).abs() < 1e-6);
    }

    #[test]
    fn params_update_independently() {
        let mut p: Weights = [
            ("a".to_string(), Tensor::scalar(1.0)),
            ("b".to_string(), Tensor::full(Shape::new(1, 1, 1, 2), 2.0)),
        ]
        .into_iter()
        .collect();
        let mut adam = Adam::default();
        adam.step(&mut p, &one("a", 1.0), 0.1).unwrap();
        assert_eq!(p["b"].data(), &[2.0, 2.0]);
        assert!(p["a"].data()[0] < 1.0);
    }

    #[test]
    fn nan_gradient_names_parameter() {
        let mut p = one("w", 1.0);
        let err = Adam::default().step(&mut p, &one("w", f32::NAN), 0.1).unwrap_err();
        assert!(err.to_string().contains("gradient of w"));
    }
}
