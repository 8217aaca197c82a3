use indexmap::IndexMap;
use rand::Rng;

use crate::array::DenseArray;
use crate::error::{NnError, Result};
use crate::tape::Gradients;

#[derive(Debug, Clone, PartialEq)]
pub struct Parameter {
    pub value: DenseArray,
    pub grad: DenseArray,
    /// Included in the L2 penalty (weights yes, biases no).
    pub regularizable: bool,
    /// Frozen parameters receive no updates and are skipped by gradient checks.
    pub frozen: bool,
}

/// Named trainable arrays, iterated in insertion order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterStore {
    params: IndexMap<String, Parameter>,
}

impl ParameterStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, value: DenseArray, regularizable: bool) -> Result<()> {
        if self.params.contains_key(name) {
            return Err(NnError::DuplicateParameter(name.to_string()));
        }
        let grad = DenseArray::zeros(value.shape());
        self.params.insert(
            name.to_string(),
            Parameter {
                value,
                grad,
                regularizable,
                frozen: false,
            },
        );
        Ok(())
    }

    /// Weight matrix `(rows, cols)` drawn uniformly in ±1/√cols.
    pub fn add_matrix<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        rng: &mut R,
    ) -> Result<()> {
        let value = fan_in_uniform(&[rows, cols], cols, rng)?;
        self.insert(name, value, true)
    }

    /// `name.weight` of shape `(out, in)` plus a zero `name.bias`.
    pub fn add_linear<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        input: usize,
        output: usize,
        rng: &mut R,
    ) -> Result<()> {
        self.add_matrix(&format!("{name}.weight"), output, input, rng)?;
        self.insert(&format!("{name}.bias"), DenseArray::zeros(&[output]), false)
    }

    /// Lookup table with `rows` entries of width `dim`. Fan-in is the
    /// one-hot width, i.e. `rows`.
    pub fn add_embedding<R: Rng + ?Sized>(
        &mut self,
        name: &str,
        rows: usize,
        dim: usize,
        rng: &mut R,
    ) -> Result<()> {
        let value = fan_in_uniform(&[rows, dim], rows, rng)?;
        self.insert(name, value, true)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn get(&self, name: &str) -> Result<&Parameter> {
        self.params
            .get(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Parameter> {
        self.params
            .get_mut(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn value(&self, name: &str) -> Result<&DenseArray> {
        self.get(name).map(|p| &p.value)
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        self.params
            .get_index_of(name)
            .ok_or_else(|| NnError::UnknownParameter(name.to_string()))
    }

    pub fn by_index(&self, index: usize) -> (&str, &Parameter) {
        let (k, v) = self.params.get_index(index).expect("parameter index");
        (k.as_str(), v)
    }

    pub fn by_index_mut(&mut self, index: usize) -> (&str, &mut Parameter) {
        let (k, v) = self.params.get_index_mut(index).expect("parameter index");
        (k.as_str(), v)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Parameter)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Parameter)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn set_frozen(&mut self, name: &str, frozen: bool) -> Result<()> {
        self.get_mut(name)?.frozen = frozen;
        Ok(())
    }

    /// Freezes every parameter whose name starts with `prefix`.
    pub fn freeze_prefix(&mut self, prefix: &str) {
        for (name, p) in self.params.iter_mut() {
            if name.starts_with(prefix) {
                p.frozen = true;
            }
        }
    }

    pub fn zero_grad(&mut self) {
        for p in self.params.values_mut() {
            p.grad.fill(0.0);
        }
    }

    /// Adds tape gradients into the gradient slots, scaled by `scale`.
    pub fn accumulate(&mut self, grads: &Gradients, scale: f64) {
        for (index, g) in grads.param_grads() {
            let (_, p) = self.by_index_mut(index);
            for (slot, v) in p.grad.values_mut().iter_mut().zip(g) {
                *slot += scale * v;
            }
        }
    }

    /// Σ of squared entries over regularizable parameters.
    pub fn l2_penalty(&self) -> f64 {
        self.params
            .values()
            .filter(|p| p.regularizable)
            .flat_map(|p| p.value.values())
            .map(|v| v * v)
            .sum()
    }

    /// Adds the gradient of `weight · l2_penalty()`.
    pub fn add_l2_grad(&mut self, weight: f64) {
        for p in self.params.values_mut().filter(|p| p.regularizable) {
            let values = p.value.values().to_vec();
            for (g, v) in p.grad.values_mut().iter_mut().zip(values) {
                *g += 2.0 * weight * v;
            }
        }
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Copies values of every parameter in `other` that exists here with the same shape.
    pub fn load_values_from(&mut self, other: &ParameterStore) -> Result<()> {
        for (name, p) in other.iter() {
            let mine = self.get_mut(name)?;
            if mine.value.shape() != p.value.shape() {
                return Err(NnError::Dimension(format!(
                    "parameter `{name}` has shape {:?}, checkpoint has {:?}",
                    mine.value.shape(),
                    p.value.shape()
                )));
            }
            mine.value = p.value.clone();
        }
        Ok(())
    }
}

fn fan_in_uniform<R: Rng + ?Sized>(shape: &[usize], fan_in: usize, rng: &mut R) -> Result<DenseArray> {
    if fan_in == 0 {
        return Err(NnError::Dimension("fan-in must be positive".into()));
    }
    let bound = 1.0 / (fan_in as f64).sqrt();
    let n: usize = shape.iter().product();
    let values = (0..n).map(|_| rng.gen_range(-bound..=bound)).collect();
    DenseArray::new(shape.to_vec(), values)
}
