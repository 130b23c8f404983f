use std::fmt;

use crate::error::{Error, Result};
use crate::numerics::Scalar;

/// Ordered list of positive extents, outermost first.
#[derive(Clone, PartialEq, Eq, Hash, Default)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.iter().any(|&d| d == 0) {
            return Err(Error::shape("shape", format!("zero extent in {dims:?}")));
        }
        Ok(Shape(dims))
    }

    pub fn scalar() -> Self {
        Shape(vec![1])
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    pub fn last(&self) -> usize {
        *self.0.last().unwrap_or(&1)
    }

    /// Row-major strides in elements.
    pub fn strides(&self) -> Vec<usize> {
        let mut strides = vec![1; self.0.len()];
        for i in (0..self.0.len().saturating_sub(1)).rev() {
            strides[i] = strides[i + 1] * self.0[i + 1];
        }
        strides
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("×"))
    }
}

/// Dense row-major buffer with a shape.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::shape(
                "tensor",
                format!("{} needs {} elements, got {}", shape, shape.numel(), data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![T::zero(); shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: T) -> Self {
        Tensor {
            shape: Shape::scalar(),
            data: vec![value],
        }
    }

    /// Converts an `f64` buffer, e.g. from the data pipeline.
    pub fn from_f64(dims: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(dims, data.iter().map(|&v| T::lit(v)).collect())
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn to_f64(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element at a multi-index; panics when out of range.
    pub fn at(&self, index: &[usize]) -> T {
        assert_eq!(index.len(), self.shape.rank());
        let offset: usize = index
            .iter()
            .zip(self.shape.strides())
            .zip(self.dims())
            .map(|((&i, s), &d)| {
                assert!(i < d, "index {index:?} out of range for {}", self.shape);
                i * s
            })
            .sum();
        self.data[offset]
    }

    pub fn permute(&self, axes: &[usize]) -> Result<Self> {
        let out_shape = permuted_shape(&self.shape, axes)?;
        let data = permute_copy(&self.data, &self.shape, axes);
        Ok(Tensor::from_parts(out_shape, data))
    }

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.numel() {
            return Err(Error::shape(
                "reshape",
                format!("cannot reshape {} into {}", self.shape, shape),
            ));
        }
        Ok(Tensor::from_parts(shape, self.data.clone()))
    }
}

impl<T: Scalar> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor{}", self.shape)?;
        let head: Vec<String> = self.data.iter().take(PREVIEW).map(|v| format!("{v}")).collect();
        write!(f, " [{}", head.join(", "))?;
        if self.data.len() > PREVIEW {
            write!(f, ", …")?;
        }
        write!(f, "]")
    }
}

pub(crate) fn permuted_shape(shape: &Shape, axes: &[usize]) -> Result<Shape> {
    let rank = shape.rank();
    if axes.len() != rank {
        return Err(Error::shape(
            "permute",
            format!("{} axes given for {}", axes.len(), shape),
        ));
    }
    let mut seen = vec![false; rank];
    for &a in axes {
        if a >= rank {
            return Err(Error::Axis {
                op: "permute",
                axis: a,
                rank,
            });
        }
        if seen[a] {
            return Err(Error::shape("permute", format!("repeated axis {a} in {axes:?}")));
        }
        seen[a] = true;
    }
    Ok(Shape(axes.iter().map(|&a| shape.dims()[a]).collect()))
}

/// Materializes `src` (with `src_shape`) permuted so that output axis `i` is input axis `axes[i]`.
pub(crate) fn permute_copy<T: Copy>(src: &[T], src_shape: &Shape, axes: &[usize]) -> Vec<T> {
    let rank = axes.len();
    let in_strides = src_shape.strides();
    let out_dims: Vec<usize> = axes.iter().map(|&a| src_shape.dims()[a]).collect();
    let strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let mut out = Vec::with_capacity(src.len());
    if src.is_empty() {
        return out;
    }
    // Innermost output axis is copied in a tight strided loop.
    let inner = out_dims[rank - 1];
    let inner_stride = strides[rank - 1];
    let mut counter = vec![0usize; rank - 1];
    let mut base = 0usize;
    loop {
        if inner_stride == 1 {
            out.extend_from_slice(&src[base..base + inner]);
        } else {
            out.extend((0..inner).map(|j| src[base + j * inner_stride]));
        }
        // advance the odometer over the outer axes
        let mut axis = rank - 1;
        loop {
            if axis == 0 {
                return out;
            }
            axis -= 1;
            counter[axis] += 1;
            base += strides[axis];
            if counter[axis] < out_dims[axis] {
                break;
            }
            base -= strides[axis] * out_dims[axis];
            counter[axis] = 0;
        }
    }
}

pub(crate) fn inverse_permutation(axes: &[usize]) -> Vec<usize> {
    let mut inv = vec![0; axes.len()];
    for (i, &a) in axes.iter().enumerate() {
        inv[a] = i;
    }
    inv
}
