use std::collections::BTreeMap;

use super::NumericsError;
use crate::scalar::Scalar;

/// Dense row-major n-dimensional array with an optional gradient buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    requires_grad: bool,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self, NumericsError> {
        if shape.contains(&0) {
            return Err(NumericsError::InvalidArgument(format!(
                "tensor extents must be positive, got {shape:?}"
            )));
        }
        let n: usize = shape.iter().product();
        if n != values.len() {
            return Err(NumericsError::LengthMismatch {
                expected: n,
                actual: values.len(),
            });
        }
        Ok(Self {
            shape,
            values,
            requires_grad: false,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self::new(shape, vec![T::zero(); n]).expect("zeros shape")
    }

    pub fn from_fn(shape: Vec<usize>, mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
        Self::new(shape, (0..n).map(&mut f).collect()).expect("from_fn shape")
    }

    pub fn scalar(v: T) -> Self {
        Self::new(vec![1], vec![v]).expect("scalar")
    }

    /// Marks the tensor as a trainable parameter.
    pub fn into_param(mut self) -> Self {
        self.requires_grad = true;
        self
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<T> {
        self.values
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    /// Adds `scale * g` into the gradient buffer, allocating it on first use.
    pub fn accumulate_grad(&mut self, g: &[T], scale: T) -> Result<(), NumericsError> {
        if g.len() != self.values.len() {
            return Err(NumericsError::LengthMismatch {
                expected: self.values.len(),
                actual: g.len(),
            });
        }
        let buf = self.grad.get_or_insert_with(|| vec![T::zero(); g.len()]);
        for (b, &v) in buf.iter_mut().zip(g) {
            *b += scale * v;
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<(), NumericsError> {
        match self.values.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(NumericsError::NonFinite {
                context: format!("tensor {:?} entry {i}", self.shape),
            }),
        }
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            values: self.values.iter().map(|v| U::of(v.to_f64_lossy())).collect(),
            requires_grad: self.requires_grad,
            grad: self
                .grad
                .as_ref()
                .map(|g| g.iter().map(|v| U::of(v.to_f64_lossy())).collect()),
        }
    }
}

/// Named collection of trainable tensors, iterated in lexicographic id order.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGroup<T> {
    params: BTreeMap<String, Tensor<T>>,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new() -> Self {
        Self {
            params: BTreeMap::new(),
        }
    }

    pub fn insert(&mut self, id: impl Into<String>, tensor: Tensor<T>) -> Result<(), NumericsError> {
        let id = id.into();
        if self.params.contains_key(&id) {
            return Err(NumericsError::DuplicateParam(id));
        }
        self.params.insert(id, tensor.into_param());
        Ok(())
    }

    pub fn get(&self, id: &str) -> Option<&Tensor<T>> {
        self.params.get(id)
    }

    pub fn get_mut(&mut self, id: &str) -> Option<&mut Tensor<T>> {
        self.params.get_mut(id)
    }

    pub fn require(&self, id: &str) -> Result<&Tensor<T>, NumericsError> {
        self.params
            .get(id)
            .ok_or_else(|| NumericsError::MissingParam(id.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Tensor<T>)> {
        self.params.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn ids(&self) -> impl Iterator<Item = &str> {
        self.params.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn num_values(&self) -> usize {
        self.params.values().map(Tensor::len).sum()
    }

    pub fn zero_grad(&mut self) {
        self.params.values_mut().for_each(Tensor::zero_grad);
    }

    /// Adds `scale * grads[id]` into every matching parameter's gradient.
    pub fn accumulate(&mut self, grads: &ParamGrads<T>, scale: T) -> Result<(), NumericsError> {
        for (id, g) in grads.iter() {
            let p = self
                .params
                .get_mut(id)
                .ok_or_else(|| NumericsError::MissingParam(id.to_string()))?;
            p.accumulate_grad(g, scale)?;
        }
        Ok(())
    }

    /// Euclidean norm over every populated gradient entry.
    pub fn grad_norm(&self) -> T {
        self.params
            .values()
            .filter_map(|p| p.grad())
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }

    pub fn cast<U: Scalar>(&self) -> ParamGroup<U> {
        ParamGroup {
            params: self.params.iter().map(|(k, v)| (k.clone(), v.cast())).collect(),
        }
    }
}

/// Gradients keyed by parameter id; entries absent for parameters the output never reached.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamGrads<T> {
    grads: BTreeMap<String, Vec<T>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn new() -> Self {
        Self { grads: BTreeMap::new() }
    }

    pub fn get(&self, id: &str) -> Option<&[T]> {
        self.grads.get(id).map(Vec::as_slice)
    }

    pub fn insert(&mut self, id: String, g: Vec<T>) {
        self.grads.insert(id, g);
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &[T])> {
        self.grads.iter().map(|(k, v)| (k.as_str(), v.as_slice()))
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn scale(&mut self, s: T) {
        for g in self.grads.values_mut() {
            g.iter_mut().for_each(|v| *v *= s);
        }
    }

    /// `self += scale * other`, entry by entry.
    pub fn add_scaled(&mut self, other: &ParamGrads<T>, scale: T) {
        for (id, g) in &other.grads {
            match self.grads.get_mut(id) {
                Some(acc) => {
                    for (a, &v) in acc.iter_mut().zip(g) {
                        *a += scale * v;
                    }
                }
                None => {
                    self.grads.insert(id.clone(), g.iter().map(|&v| scale * v).collect());
                }
            }
        }
    }

    pub fn norm(&self) -> T {
        self.grads
            .values()
            .flat_map(|g| g.iter())
            .map(|&v| v * v)
            .sum::<T>()
            .sqrt()
    }
}
