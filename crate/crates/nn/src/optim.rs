use std::collections::BTreeMap;

use crate::error::{shape_err, NnError, Result};
use crate::params::{ParamKind, ParamSet};
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.90;
pub const ADAM_BETA2: f64 = 0.99;
pub const ADAM_EPS: f64 = 1e-8;

/// Bias-corrected Adam with per-parameter moment buffers.
#[derive(Debug, Clone)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Default for Adam {
    fn default() -> Self {
        Self::new(ADAM_BETA1, ADAM_BETA2, ADAM_EPS)
    }
}

impl Adam {
    pub fn new(beta1: f64, beta2: f64, eps: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// One update of every trainable parameter that has a gradient.
    ///
    /// Every gradient is checked before anything is modified, so a
    /// divergence error leaves parameters and moments untouched.
    pub fn step(&mut self, params: &mut ParamSet, grads: &BTreeMap<String, Tensor>, lr: f64) -> Result<()> {
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.tensor.shape() != g.shape() {
                return shape_err(
                    "adam",
                    format!("`{name}` is {:?}, gradient {:?}", p.tensor.shape(), g.shape()),
                );
            }
            if !g.is_finite() {
                return Err(NnError::Divergence { param: name.clone() });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.beta1.powi(t);
        let bc2 = 1.0 - self.beta2.powi(t);
        for (name, g) in grads {
            let p = params.get(name)?;
            if p.kind != ParamKind::Trainable {
                continue;
            }
            let shape = p.tensor.shape().to_vec();
            let m = self.m.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
            let v = self.v.entry(name.clone()).or_insert_with(|| Tensor::zeros(&shape));
            let mut w = p.tensor.as_ref().clone();
            for (((wi, mi), vi), gi) in w
                .data_mut()
                .iter_mut()
                .zip(m.data_mut())
                .zip(v.data_mut())
                .zip(g.data())
            {
                *mi = self.beta1 * *mi + (1.0 - self.beta1) * gi;
                *vi = self.beta2 * *vi + (1.0 - self.beta2) * gi * gi;
                let mhat = *mi / bc1;
                let vhat = *vi / bc2;
                *wi -= lr * mhat / (vhat.sqrt() + self.eps);
            }
            params.set(name, w)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_set(v: f64) -> ParamSet {
        let mut p = ParamSet::new();
        p.insert("p", Tensor::scalar(v), ParamKind::Trainable).unwrap();
        p
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_set(0.0);
        let mut opt = Adam::default();
        let g = BTreeMap::from([("p".to_string(), Tensor::scalar(1.0))]);
        opt.step(&mut p, &g, 0.1).unwrap();
        let x = p.tensor("p").unwrap().data()[0];
        assert!((x + 0.1).abs() < 1e-8, "{x}");
    }

    #[test]
    fn zero_gradient_leaves_value() {
        let mut p = scalar_set(0.75);
        let mut opt = Adam::default();
        let g = BTreeMap::from([("p".to_string(), Tensor::scalar(0.0))]);
        for _ in 0..3 {
            opt.step(&mut p, &g, 0.1).unwrap();
        }
        assert_eq!(p.tensor("p").unwrap().data()[0], 0.75);
    }

    #[test]
    fn quadratic_descends_monotonically() {
        let mut p = scalar_set(1.0);
        let mut opt = Adam::default();
        let mut prev = 1.0;
        for _ in 0..10 {
            let x = p.tensor("p").unwrap().data()[0];
            let g = BTreeMap::from([("p".to_string(), Tensor::scalar(2.0 * x))]);
            opt.step(&mut p, &g, 0.05).unwrap();
            let x = p.tensor("p").unwrap().data()[0];
            assert!(x * x < prev);
            prev = x * x;
        }
    }

    #[test]
    fn non_finite_gradient_names_parameter() {
        let mut p = scalar_set(1.0);
        p.insert("q", Tensor::scalar(2.0), ParamKind::Trainable).unwrap();
        let mut opt = Adam::default();
        let g = BTreeMap::from([
            ("p".to_string(), Tensor::scalar(1.0)),
            ("q".to_string(), Tensor::scalar(f64::NAN)),
        ]);
        match opt.step(&mut p, &g, 0.1) {
            Err(NnError::Divergence { param }) => assert_eq!(param, "q"),
            other => panic!("{other:?}"),
        }
        assert_eq!(p.tensor("p").unwrap().data()[0], 1.0);
        assert_eq!(opt.step_count(), 0);
    }
}
