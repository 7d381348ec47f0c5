use std::collections::HashMap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::num::{s, Scalar};

/// Named parameter tensors with matching gradient buffers. Iteration order is
/// registration order, which makes optimizer state and serialization
/// deterministic.
#[derive(Debug, Clone)]
pub struct ParamStore<S> {
    names: Vec<String>,
    by_name: HashMap<String, usize>,
    values: Vec<Matrix<S>>,
    grads: Vec<Matrix<S>>,
    pub step: u64,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            by_name: HashMap::new(),
            values: Vec::new(),
            grads: Vec::new(),
            step: 0,
        }
    }

    pub fn register(&mut self, name: &str, value: Matrix<S>) -> Result<()> {
        if self.by_name.contains_key(name) {
            return Err(Error::Config(format!("duplicate parameter '{name}'")));
        }
        self.by_name.insert(name.to_string(), self.values.len());
        self.names.push(name.to_string());
        self.grads.push(Matrix::zeros(value.rows(), value.cols()));
        self.values.push(value);
        Ok(())
    }

    /// Registers a matrix initialized uniformly in [-1/sqrt(fan_in), +1/sqrt(fan_in)].
    pub fn register_init(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        fan_in: usize,
        rng: &mut ChaCha8Rng,
    ) -> Result<()> {
        let bound: S = s::<S>(1.0 / (fan_in.max(1) as f64).sqrt());
        let mut m = Matrix::zeros(rows, cols);
        for v in m.data_mut() {
            *v = rng.gen_range(-bound..=bound);
        }
        self.register(name, m)
    }

    fn idx(&self, name: &str) -> Result<usize> {
        self.by_name
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("unknown parameter '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Matrix<S>> {
        Ok(&self.values[self.idx(name)?])
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Matrix<S>> {
        let i = self.idx(name)?;
        Ok(&mut self.values[i])
    }

    pub fn grad(&self, name: &str) -> Result<&Matrix<S>> {
        Ok(&self.grads[self.idx(name)?])
    }

    pub fn add_grad(&mut self, name: &str, delta: &Matrix<S>) -> Result<()> {
        let i = self.idx(name)?;
        self.grads[i].add_assign(delta)
    }

    pub fn zero_grads(&mut self) {
        for g in &mut self.grads {
            g.fill(S::zero());
        }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub(crate) fn value_at(&self, i: usize) -> &Matrix<S> {
        &self.values[i]
    }

    pub(crate) fn value_at_mut(&mut self, i: usize) -> &mut Matrix<S> {
        &mut self.values[i]
    }

    pub(crate) fn grad_at(&self, i: usize) -> &Matrix<S> {
        &self.grads[i]
    }

    /// Total scalar coordinate count across all parameters.
    pub fn coordinate_count(&self) -> usize {
        self.values.iter().map(|m| m.data().len()).sum()
    }

    pub fn cast<T: Scalar>(&self) -> ParamStore<T> {
        let mut out = ParamStore::new();
        for (name, value) in self.names.iter().zip(&self.values) {
            out.register(name, value.cast()).unwrap();
        }
        out.step = self.step;
        out
    }
}

impl<S: Scalar> Default for ParamStore<S> {
    fn default() -> Self {
        Self::new()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;

    #[test]
    fn grads_are_shaped_like_values() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from(1);
        ps.register_init("w", 3, 4, 4, &mut rng).unwrap();
        assert_eq!(ps.grad("w").unwrap().rows(), 3);
        assert_eq!(ps.grad("w").unwrap().cols(), 4);
    }

    #[test]
    fn duplicate_name_rejected() {
        let mut ps = ParamStore::<f64>::new();
        ps.register("w", Matrix::zeros(1, 1)).unwrap();
        assert!(ps.register("w", Matrix::zeros(1, 1)).is_err());
    }

    #[test]
    fn init_respects_fan_in_bound() {
        let mut ps = ParamStore::<f64>::new();
        let mut rng = rng_from(5);
        ps.register_init("w", 10, 16, 16, &mut rng).unwrap();
        let bound = 0.25;
        assert!(ps
            .value("w")
            .unwrap()
            .data()
            .iter()
            .all(|v| v.abs() <= bound));
    }
}
