use indexmap::IndexMap;

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

/// First and second moment estimates per named parameter, plus the step
/// counter used for bias correction.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState<T> {
    pub step: u64,
    pub moments: IndexMap<String, (Tensor<T>, Tensor<T>)>,
}

impl<T: Real> Default for AdamState<T> {
    fn default() -> Self {
        AdamState { step: 0, moments: IndexMap::new() }
    }
}

impl<T: Real> AdamState<T> {
    pub fn new() -> Self {
        Self::default()
    }

    /// One bias-corrected Adam update of every `(name, param, grad)`.
    /// Nothing is modified if any gradient is non-finite or mis-shaped.
    pub fn step<'a, I>(&mut self, cfg: &AdamConfig, items: I) -> Result<()>
    where
        I: IntoIterator<Item = (&'a str, &'a mut Tensor<T>, &'a Tensor<T>)>,
    {
        let items: Vec<_> = items.into_iter().collect();
        for (name, p, g) in &items {
            if p.shape() != g.shape() {
                return Err(Error::shape(
                    "adam_step",
                    format!("{name}: parameter {:?} vs gradient {:?}", p.shape(), g.shape()),
                ));
            }
            if let Some(i) = g.data().iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFinite {
                    context: "adam_step".into(),
                    detail: format!("gradient of {name} at index {i} is {}", g.data()[i]),
                });
            }
        }
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::c(cfg.beta1), T::c(cfg.beta2));
        let c1 = T::one() - b1.powi(t);
        let c2 = T::one() - b2.powi(t);
        let lr = T::c(cfg.learning_rate);
        let eps = T::c(cfg.epsilon);
        for (name, p, g) in items {
            let (m, v) = self
                .moments
                .entry(name.to_string())
                .or_insert_with(|| (Tensor::zeros(g.shape().to_vec()), Tensor::zeros(g.shape().to_vec())));
            for (((pv, &gv), mv), vv) in
                p.data_mut().iter_mut().zip(g.data()).zip(m.data_mut().iter_mut()).zip(v.data_mut().iter_mut())
            {
                *mv = b1 * *mv + (T::one() - b1) * gv;
                *vv = b2 * *vv + (T::one() - b2) * gv * gv;
                let mhat = *mv / c1;
                let vhat = *vv / c2;
                *pv -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
