//! Dense row-major tensors. Values are immutable and cheaply shareable;
//! a tensor optionally carries a handle into the tape that produced it.

use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;

/// Handle of a node (leaf or op output) on a [`crate::autodiff::Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(pub(crate) usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug, Clone)]
pub struct Tensor<S> {
    shape: Vec<usize>,
    values: Arc<[S]>,
    node: Option<NodeId>,
}

impl<S: Scalar> Tensor<S> {
    /// Build a tensor, validating the shape/value-count agreement and
    /// rejecting non-finite values.
    pub fn new(shape: Vec<usize>, values: Vec<S>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != values.len() {
            return Err(Error::ShapeMismatch {
                op: "tensor-new".into(),
                shapes: format!("shape {:?} vs {} values", shape, values.len()),
            });
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite);
        }
        Ok(Self {
            shape,
            values: values.into(),
            node: None,
        })
    }

    pub(crate) fn from_parts(shape: Vec<usize>, values: Vec<S>, node: Option<NodeId>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), values.len());
        Self {
            shape,
            values: values.into(),
            node,
        }
    }

    pub fn scalar(v: S) -> Self {
        Self::new(vec![1], vec![v]).expect("scalar tensor")
    }

    pub fn full(shape: Vec<usize>, v: S) -> Self {
        let numel = shape.iter().product();
        Self::new(shape, vec![v; numel]).expect("full tensor")
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        Self::full(shape, S::zero())
    }

    pub fn vector(values: Vec<S>) -> Result<Self> {
        let n = values.len();
        Self::new(vec![n], values)
    }

    /// N x 3 matrix from a list of 3-vectors.
    pub fn from_rows3(rows: &[[S; 3]]) -> Result<Self> {
        let mut v = Vec::with_capacity(rows.len() * 3);
        for r in rows {
            v.extend_from_slice(r);
        }
        Self::new(vec![rows.len(), 3], v)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn numel(&self) -> usize {
        self.values.len()
    }

    pub fn values(&self) -> &[S] {
        &self.values
    }

    pub(crate) fn values_arc(&self) -> Arc<[S]> {
        Arc::clone(&self.values)
    }

    pub fn node(&self) -> Option<NodeId> {
        self.node
    }

    pub(crate) fn with_node(mut self, node: NodeId) -> Self {
        self.node = Some(node);
        self
    }

    /// Drop the tape handle, leaving a plain constant with the same values.
    pub fn detach(&self) -> Self {
        Self {
            shape: self.shape.clone(),
            values: Arc::clone(&self.values),
            node: None,
        }
    }

    /// Extract the single element of a scalar tensor.
    pub fn item(&self) -> S {
        assert_eq!(self.numel(), 1, "item() on non-scalar tensor");
        self.values[0]
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }

    /// Row-major element access for 2-D tensors.
    pub fn at2(&self, i: usize, j: usize) -> S {
        debug_assert_eq!(self.shape.len(), 2);
        self.values[i * self.shape[1] + j]
    }

    pub fn to_vec(&self) -> Vec<S> {
        self.values.to_vec()
    }
}

impl Tensor<f64> {
    /// Rows of an N x 3 tensor as arrays.
    pub fn rows3(&self) -> Vec<[f64; 3]> {
        assert_eq!(self.shape.len(), 2);
        assert_eq!(self.shape[1], 3);
        self.values
            .chunks_exact(3)
            .map(|c| [c[0], c[1], c[2]])
            .collect()
    }
}
