use std::collections::BTreeMap;

use crate::error::{EdmError, Result};

/// Dense tensor with an optional same-shape gradient accumulator.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub values: Vec<f64>,
    pub grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, values: Vec<f64>) -> Self {
        let numel: usize = shape.iter().product();
        assert_eq!(numel, values.len(), "tensor: {} values do not fill shape {shape:?}", values.len());
        Tensor { shape, values, grad: None }
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Tensor { shape, values: vec![0.0; numel], grad: None }
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }
}

/// Named map from parameter path to [`Tensor`] with deterministic
/// (lexicographic) iteration order. Paths are unique.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    entries: BTreeMap<String, Tensor>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: &str, tensor: Tensor) {
        let prev = self.entries.insert(path.to_string(), tensor);
        assert!(prev.is_none(), "duplicate parameter path `{path}`");
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.entries.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.entries.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.entries.contains_key(path)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.entries.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.entries.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Total scalar count across all parameters.
    pub fn numel(&self) -> usize {
        self.entries.values().map(Tensor::numel).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in self.entries.values_mut() {
            t.grad = None;
        }
    }

    pub(crate) fn accumulate_grad(&mut self, path: &str, g: &[f64]) {
        let t = self
            .entries
            .get_mut(path)
            .unwrap_or_else(|| panic!("gradient for unknown parameter `{path}`"));
        assert_eq!(t.values.len(), g.len(), "gradient length mismatch for `{path}`");
        match &mut t.grad {
            Some(acc) => {
                for (a, b) in acc.iter_mut().zip(g) {
                    *a += b;
                }
            }
            None => t.grad = Some(g.to_vec()),
        }
    }

    /// All gradients must be populated; returns the first offending path
    /// otherwise.
    pub fn require_grads(&self) -> Result<()> {
        for (path, t) in &self.entries {
            if t.grad.is_none() {
                return Err(EdmError::MissingGrad { path: path.clone() });
            }
        }
        Ok(())
    }
}
