//! Named parameter storage with Adam moment state.

use std::collections::HashMap;
use std::sync::Arc;

use rand::Rng;

use crate::array::Array;
use crate::error::{Result, TensorError};
use crate::tape::{Gradients, Tape, Var};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Parameter {
    pub name: String,
    pub value: Arc<Array>,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

/// All trainable arrays of a model plus the optimizer state.
#[derive(Clone, Debug, Default)]
pub struct ParameterStore {
    params: Vec<Parameter>,
    index: HashMap<String, usize>,
    step: u64,
    pub adam: AdamConfig,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: Array) -> Result<()> {
        if self.index.contains_key(name) {
            return Err(TensorError::DuplicateParameter(name.to_string()));
        }
        let n = value.len();
        self.index.insert(name.to_string(), self.params.len());
        self.params.push(Parameter {
            name: name.to_string(),
            value: Arc::new(value),
            first_moment: vec![0.0; n],
            second_moment: vec![0.0; n],
        });
        Ok(())
    }

    /// Glorot-uniform weight of shape `[fan_in, fan_out]`.
    pub fn insert_glorot<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut R,
    ) -> Result<()> {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let data = (0..fan_in * fan_out)
            .map(|_| rng.random_range(-limit..limit))
            .collect();
        self.insert(name, Array::new(vec![fan_in, fan_out], data)?)
    }

    pub fn insert_zeros(&mut self, name: &str, shape: &[usize]) -> Result<()> {
        self.insert(name, Array::zeros(shape))
    }

    pub fn get(&self, name: &str) -> Option<&Arc<Array>> {
        self.index.get(name).map(|&i| &self.params[i].value)
    }

    pub fn require(&self, name: &str) -> Result<&Arc<Array>> {
        self.get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))
    }

    /// Replaces the value of an existing parameter, keeping its moments.
    pub fn set(&mut self, name: &str, value: Array) -> Result<()> {
        let &i = self
            .index
            .get(name)
            .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
        if value.shape() != self.params[i].value.shape() {
            return Err(TensorError::Shape(format!("set `{name}`: shape changed")));
        }
        self.params[i].value = Arc::new(value);
        Ok(())
    }

    pub fn iter(&self) -> impl Iterator<Item = &Parameter> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Records a parameter on `tape` as a named leaf.
    pub fn bind(&self, tape: &Tape, name: &str) -> Result<Var> {
        Ok(tape.param(name, self.require(name)?.clone()))
    }

    pub(crate) fn restore(&mut self, params: Vec<Parameter>, step: u64) -> Result<()> {
        self.params.clear();
        self.index.clear();
        for p in params {
            if self.index.contains_key(&p.name) {
                return Err(TensorError::DuplicateParameter(p.name));
            }
            self.index.insert(p.name.clone(), self.params.len());
            self.params.push(p);
        }
        self.step = step;
        Ok(())
    }

    /// One bias-corrected Adam update. Parameters without an entry in
    /// `grads` are treated as having a zero gradient.
    pub fn adam_step(&mut self, grads: &Gradients, lr: f64) -> Result<()> {
        for (name, g) in grads.iter() {
            let &i = self
                .index
                .get(name)
                .ok_or_else(|| TensorError::UnknownParameter(name.to_string()))?;
            if g.shape() != self.params[i].value.shape() {
                return Err(TensorError::Shape(format!(
                    "gradient for `{name}` has shape {:?}, parameter {:?}",
                    g.shape(),
                    self.params[i].value.shape()
                )));
            }
        }
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.adam;
        let t = self.step as i32;
        let bc1 = 1.0 - beta1.powi(t);
        let bc2 = 1.0 - beta2.powi(t);
        for p in &mut self.params {
            let g = grads.get(&p.name);
            let value = Arc::make_mut(&mut p.value);
            let data = value.data_mut();
            for j in 0..data.len() {
                let gj = g.map_or(0.0, |g| g.data()[j]);
                let m = beta1 * p.first_moment[j] + (1.0 - beta1) * gj;
                let v = beta2 * p.second_moment[j] + (1.0 - beta2) * gj * gj;
                p.first_moment[j] = m;
                p.second_moment[j] = v;
                data[j] -= lr * (m / bc1) / ((v / bc2).sqrt() + eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn store() -> ParameterStore {
        let mut s = ParameterStore::new();
        s.insert("a", Array::vector(vec![1.0, -2.0, 3.0])).unwrap();
        s.insert("b", Array::new(vec![2, 2], vec![0.5; 4]).unwrap()).unwrap();
        s
    }

    #[test]
    fn duplicate_names_rejected() {
        let mut s = store();
        assert!(matches!(
            s.insert("a", Array::scalar(0.0)),
            Err(TensorError::DuplicateParameter(_))
        ));
    }

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut s = store();
        let before: Vec<Array> = s.iter().map(|p| (*p.value).clone()).collect();
        let mut g = Gradients::default();
        g.insert("a", Array::zeros(&[3]));
        s.adam_step(&g, 5e-4).unwrap();
        let after: Vec<Array> = s.iter().map(|p| (*p.value).clone()).collect();
        assert_eq!(before, after);
        assert_eq!(s.step(), 1);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        // m = 0.1, v = 0.001; bias correction gives m_hat = v_hat = 1 so the
        // update is lr / (1 + eps).
        let mut s = store();
        let mut g = Gradients::default();
        g.insert("a", Array::full(&[3], 1.0));
        g.insert("b", Array::full(&[2, 2], 1.0));
        s.adam_step(&g, 5e-4).unwrap();
        let expected = 5e-4 / (1.0 + 1e-8);
        let a = s.get("a").unwrap();
        for (x, x0) in a.data().iter().zip([1.0, -2.0, 3.0]) {
            assert!((x0 - x - expected).abs() < 1e-15);
        }
        for x in s.get("b").unwrap().data() {
            assert!((0.5 - x - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn unknown_gradient_key_is_rejected() {
        let mut s = store();
        let mut g = Gradients::default();
        g.insert("zzz", Array::scalar(1.0));
        assert!(s.adam_step(&g, 1e-3).is_err());
        assert_eq!(s.step(), 0);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = crate::rng::stream(7, &[1]);
        let mut s = ParameterStore::new();
        s.insert_glorot("w", 10, 20, &mut rng).unwrap();
        let limit = (6.0f64 / 30.0).sqrt();
        assert!(s.get("w").unwrap().data().iter().all(|x| x.abs() <= limit));
    }
}
