//! Dense n-dimensional f64 arrays and the named parameter collection.

use std::collections::{BTreeMap, BTreeSet};

use super::NnError;

/// Row-major n-dimensional array with an optional gradient slot of the same
/// shape. A scalar is `shape == []`.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
    grad: Option<Vec<f64>>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self, NnError> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "shape {shape:?} holds {numel} elements but data has {}",
                data.len()
            )));
        }
        Ok(Self {
            shape,
            data,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let numel = shape.iter().product();
        Self {
            shape,
            data: vec![0.0; numel],
            grad: None,
        }
    }

    pub fn scalar(value: f64) -> Self {
        Self {
            shape: Vec::new(),
            data: vec![value],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn ndim(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn grad(&self) -> Option<&[f64]> {
        self.grad.as_deref()
    }

    /// Replace the gradient slot; the length must match the tensor.
    pub fn set_grad(&mut self, grad: Vec<f64>) -> Result<(), NnError> {
        if grad.len() != self.data.len() {
            return Err(NnError::ShapeMismatch(format!(
                "gradient length {} does not match tensor of {} elements",
                grad.len(),
                self.data.len()
            )));
        }
        self.grad = Some(grad);
        Ok(())
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn item(&self) -> f64 {
        debug_assert_eq!(self.numel(), 1);
        self.data[0]
    }
}

/// Named parameter collection with a frozen-path set.
///
/// Freezing is enforced by the optimizers: a frozen path receives zero
/// updates from any step regardless of its gradient.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    params: BTreeMap<String, Tensor>,
    frozen: BTreeSet<String>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, path: impl Into<String>, tensor: Tensor) {
        self.params.insert(path.into(), tensor);
    }

    pub fn get(&self, path: &str) -> Option<&Tensor> {
        self.params.get(path)
    }

    pub fn get_mut(&mut self, path: &str) -> Option<&mut Tensor> {
        self.params.get_mut(path)
    }

    pub fn contains(&self, path: &str) -> bool {
        self.params.contains_key(path)
    }

    pub fn paths(&self) -> impl Iterator<Item = &String> {
        self.params.keys()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.params.iter()
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn total_values(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    /// Mark every path with the given prefix as frozen; returns how many.
    pub fn freeze_prefix(&mut self, prefix: &str) -> usize {
        let mut n = 0;
        for path in self.params.keys() {
            if path.starts_with(prefix) {
                self.frozen.insert(path.clone());
                n += 1;
            }
        }
        n
    }

    pub fn is_frozen(&self, path: &str) -> bool {
        self.frozen.contains(path)
    }

    pub fn frozen_paths(&self) -> impl Iterator<Item = &String> {
        self.frozen.iter()
    }

    pub fn set_frozen(&mut self, paths: BTreeSet<String>) {
        self.frozen = paths;
    }

    /// Drop every parameter with the given prefix; returns how many.
    pub fn remove_prefix(&mut self, prefix: &str) -> usize {
        let doomed: Vec<String> = self
            .params
            .keys()
            .filter(|p| p.starts_with(prefix))
            .cloned()
            .collect();
        for path in &doomed {
            self.params.remove(path);
            self.frozen.remove(path);
        }
        doomed.len()
    }

    /// Install gradients from a backward pass into the tensors' grad slots.
    /// Paths absent from the store get their slot cleared.
    pub fn load_grads(&mut self, grads: &super::GradStore) -> Result<(), NnError> {
        for (path, tensor) in &mut self.params {
            match grads.get(path) {
                Some(g) => tensor.set_grad(g.to_vec())?,
                None => tensor.clear_grad(),
            }
        }
        Ok(())
    }

    pub fn clear_grads(&mut self) {
        for tensor in self.params.values_mut() {
            tensor.clear_grad();
        }
    }

    /// Visit every non-frozen parameter mutably.
    pub(crate) fn for_each_unfrozen_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for (path, tensor) in &mut self.params {
            if !self.frozen.contains(path) {
                f(path, tensor);
            }
        }
    }

    /// Clone the values under a prefix (used for freeze audits and
    /// best-epoch snapshots).
    pub fn snapshot_prefix(&self, prefix: &str) -> BTreeMap<String, Vec<f64>> {
        self.params
            .iter()
            .filter(|(p, _)| p.starts_with(prefix))
            .map(|(p, t)| (p.clone(), t.data().to_vec()))
            .collect()
    }

    /// Restore values captured by [`Self::snapshot_prefix`].
    pub fn restore_snapshot(&mut self, snapshot: &BTreeMap<String, Vec<f64>>) {
        for (path, values) in snapshot {
            if let Some(t) = self.params.get_mut(path) {
                t.data_mut().copy_from_slice(values);
            }
        }
    }

    /// Merge another set's parameters (overwriting on collision) and union
    /// the frozen paths.
    pub fn merge(&mut self, other: ParameterSet) {
        for (path, tensor) in other.params {
            self.params.insert(path, tensor);
        }
        self.frozen.extend(other.frozen);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tensor_shape_must_match_data() {
        assert!(Tensor::new(vec![2, 3], vec![0.0; 6]).is_ok());
        assert!(Tensor::new(vec![2, 3], vec![0.0; 5]).is_err());
        assert_eq!(Tensor::scalar(4.0).numel(), 1);
        assert_eq!(Tensor::scalar(4.0).ndim(), 0);
    }

    #[test]
    fn grad_slot_requires_matching_length() {
        let mut t = Tensor::zeros(vec![4]);
        assert!(t.set_grad(vec![1.0; 4]).is_ok());
        assert!(t.set_grad(vec![1.0; 3]).is_err());
        assert_eq!(t.grad().unwrap(), &[1.0; 4]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn freeze_and_remove_by_prefix() {
        let mut p = ParameterSet::new();
        p.insert("backbone.block0.conv.weight", Tensor::zeros(vec![2]));
        p.insert("backbone.block0.conv.bias", Tensor::zeros(vec![2]));
        p.insert("projection.weight", Tensor::zeros(vec![2]));
        assert_eq!(p.freeze_prefix("backbone."), 2);
        assert!(p.is_frozen("backbone.block0.conv.weight"));
        assert!(!p.is_frozen("projection.weight"));
        assert_eq!(p.remove_prefix("projection."), 1);
        assert!(!p.contains("projection.weight"));
    }
}
