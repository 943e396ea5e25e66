//! Named arrays for model parameters and their gradients.

use ndarray::{Array1, Array2, ArrayD, ArrayView1, ArrayView2, ArrayViewD};
use std::collections::BTreeMap;

/// Named real arrays with shapes fixed after initialization. Iteration
/// order is the sorted name order, which keeps every consumer
/// (optimizer, checkpoints, finite differences) deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParameterSet {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl ParameterSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert1(&mut self, name: &str, value: Array1<f64>) {
        self.map.insert(name.to_string(), value.into_dyn());
    }

    pub fn insert2(&mut self, name: &str, value: Array2<f64>) {
        self.map.insert(name.to_string(), value.into_dyn());
    }

    pub fn insert_dyn(&mut self, name: &str, value: ArrayD<f64>) {
        self.map.insert(name.to_string(), value);
    }

    /// View of a vector parameter. Panics if the name is missing or the
    /// stored array is not one-dimensional; parameter names are internal
    /// to the model specs, so a miss is a programming error.
    pub fn a1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter {name} is not 1-d"))
    }

    /// View of a matrix parameter; panics like [`Self::a1`].
    pub fn a2(&self, name: &str) -> ArrayView2<'_, f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing parameter {name}"))
            .view()
            .into_dimensionality()
            .unwrap_or_else(|_| panic!("parameter {name} is not 2-d"))
    }

    pub fn get(&self, name: &str) -> Option<ArrayViewD<'_, f64>> {
        self.map.get(name).map(|a| a.view())
    }

    pub fn contains(&self, name: &str) -> bool {
        self.map.contains_key(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub(crate) fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut ArrayD<f64>)> {
        self.map.iter_mut()
    }

    pub(crate) fn get_mut(&mut self, name: &str) -> Option<&mut ArrayD<f64>> {
        self.map.get_mut(name)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.map.keys().map(|s| s.as_str())
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    /// Total number of scalar values across all arrays.
    pub fn num_values(&self) -> usize {
        self.map.values().map(|a| a.len()).sum()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|a| a.iter().all(|v| v.is_finite()))
    }

    /// Exact equality of names, shapes, and every bit of every value.
    pub fn bitwise_eq(&self, other: &Self) -> bool {
        self.map.len() == other.map.len()
            && self.map.iter().zip(other.map.iter()).all(|((na, a), (nb, b))| {
                na == nb
                    && a.shape() == b.shape()
                    && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
            })
    }
}

/// One gradient array per parameter name, shape-congruent with its
/// [`ParameterSet`]. Accumulation is in-place addition.
#[derive(Debug, Clone, Default)]
pub struct GradientMap {
    map: BTreeMap<String, ArrayD<f64>>,
}

impl GradientMap {
    pub fn new() -> Self {
        Self::default()
    }

    /// Zero gradients for every parameter in `params`.
    pub fn zeros_like(params: &ParameterSet) -> Self {
        let map = params
            .iter()
            .map(|(name, value)| (name.clone(), ArrayD::zeros(value.raw_dim())))
            .collect();
        Self { map }
    }

    pub fn get(&self, name: &str) -> Option<ArrayViewD<'_, f64>> {
        self.map.get(name).map(|a| a.view())
    }

    pub fn a1(&self, name: &str) -> ArrayView1<'_, f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing gradient {name}"))
            .view()
            .into_dimensionality()
            .unwrap()
    }

    pub fn a2(&self, name: &str) -> ArrayView2<'_, f64> {
        self.map
            .get(name)
            .unwrap_or_else(|| panic!("missing gradient {name}"))
            .view()
            .into_dimensionality()
            .unwrap()
    }

    /// Adds `delta` into the gradient for `name`, creating it if absent.
    /// Stored arrays are kept in standard layout.
    pub fn accumulate1(&mut self, name: &str, delta: ArrayView1<f64>) {
        self.accumulate_dyn(name, delta.to_owned().into_dyn());
    }

    pub fn accumulate2(&mut self, name: &str, delta: ArrayView2<f64>) {
        self.accumulate_dyn(name, delta.to_owned().into_dyn());
    }

    pub fn accumulate_dyn(&mut self, name: &str, delta: ArrayD<f64>) {
        match self.map.get_mut(name) {
            Some(g) => *g += &delta,
            None => {
                self.map.insert(name.to_string(), delta.as_standard_layout().into_owned());
            }
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &ArrayD<f64>)> {
        self.map.iter()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }

    pub fn all_finite(&self) -> bool {
        self.map.values().all(|a| a.iter().all(|v| v.is_finite()))
    }

    pub fn max_abs(&self) -> f64 {
        self.map
            .values()
            .flat_map(|a| a.iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }
}
