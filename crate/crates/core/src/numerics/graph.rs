use std::fmt::Write as _;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::scalar::{gemm, MatView};
use crate::numerics::tensor::{inverse_permutation, permute_copy, permuted_shape};
use crate::numerics::{Scalar, Shape, Tensor};

/// Handle to a node of a [`Graph`]. Only meaningful for the graph that issued it.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Pointwise nonlinearity used inside feed-forward and residual MLP blocks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Activation {
    #[default]
    Relu,
    /// tanh approximation
    Gelu,
}

impl Activation {
    pub fn name(self) -> &'static str {
        match self {
            Activation::Relu => "relu",
            Activation::Gelu => "gelu",
        }
    }
}

impl FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "relu" => Ok(Activation::Relu),
            "gelu" => Ok(Activation::Gelu),
            other => Err(Error::Contract(format!("unknown activation '{other}'"))),
        }
    }
}

/// Deliberate backward corruption, used as a negative control for gradient checks.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum GradFault {
    #[default]
    None,
    /// Scales the left-operand gradient of every matmul by 1.5.
    MatmulLhs,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Pointwise {
    Relu,
    Gelu,
    SmoothL1,
}

impl Pointwise {
    fn name(self) -> &'static str {
        match self {
            Pointwise::Relu => "relu",
            Pointwise::Gelu => "gelu",
            Pointwise::SmoothL1 => "smooth_l1",
        }
    }
}

enum Op<T> {
    Param,
    Constant,
    MatMul {
        lhs: usize,
        rhs: usize,
        batch: usize,
        m: usize,
        k: usize,
        n: usize,
        shared_rhs: bool,
    },
    Add {
        lhs: usize,
        rhs: usize,
    },
    Sub {
        lhs: usize,
        rhs: usize,
    },
    Mul {
        lhs: usize,
        rhs: usize,
    },
    Scale {
        input: usize,
        factor: T,
    },
    AddScalar {
        input: usize,
    },
    Pointwise {
        input: usize,
        kind: Pointwise,
    },
    Permute {
        input: usize,
        axes: Vec<usize>,
    },
    Reshape {
        input: usize,
    },
    Concat {
        inputs: Vec<usize>,
        extents: Vec<usize>,
        outer: usize,
        inner: usize,
    },
    Slice {
        input: usize,
        outer: usize,
        extent: usize,
        start: usize,
        len: usize,
        inner: usize,
    },
    Repeat {
        input: usize,
        outer: usize,
        count: usize,
        inner: usize,
    },
    Sum {
        input: usize,
    },
    Mean {
        input: usize,
    },
    Softmax {
        input: usize,
    },
    LayerNorm {
        input: usize,
        gamma: usize,
        beta: usize,
        xhat: Vec<T>,
        inv_std: Vec<T>,
    },
    Gather {
        table: usize,
        indices: Vec<usize>,
    },
}

impl<T> Op<T> {
    fn name(&self) -> &'static str {
        match self {
            Op::Param => "param",
            Op::Constant => "constant",
            Op::MatMul { .. } => "matmul",
            Op::Add { .. } => "add",
            Op::Sub { .. } => "sub",
            Op::Mul { .. } => "mul",
            Op::Scale { .. } => "scale",
            Op::AddScalar { .. } => "add_scalar",
            Op::Pointwise { kind, .. } => kind.name(),
            Op::Permute { .. } => "permute",
            Op::Reshape { .. } => "reshape",
            Op::Concat { .. } => "concat",
            Op::Slice { .. } => "slice",
            Op::Repeat { .. } => "repeat",
            Op::Sum { .. } => "sum",
            Op::Mean { .. } => "mean",
            Op::Softmax { .. } => "softmax",
            Op::LayerNorm { .. } => "layer_norm",
            Op::Gather { .. } => "gather",
        }
    }

    fn parents(&self) -> Vec<usize> {
        match self {
            Op::Param | Op::Constant => vec![],
            Op::MatMul { lhs, rhs, .. }
            | Op::Add { lhs, rhs }
            | Op::Sub { lhs, rhs }
            | Op::Mul { lhs, rhs } => vec![*lhs, *rhs],
            Op::Scale { input, .. }
            | Op::AddScalar { input }
            | Op::Pointwise { input, .. }
            | Op::Permute { input, .. }
            | Op::Reshape { input }
            | Op::Slice { input, .. }
            | Op::Repeat { input, .. }
            | Op::Sum { input }
            | Op::Mean { input }
            | Op::Softmax { input } => vec![*input],
            Op::Concat { inputs, .. } => inputs.clone(),
            Op::LayerNorm {
                input, gamma, beta, ..
            } => vec![*input, *gamma, *beta],
            Op::Gather { table, .. } => vec![*table],
        }
    }
}

struct Node<T> {
    value: Tensor<T>,
    op: Op<T>,
    requires_grad: bool,
}

/// Reverse-mode autodiff tape over dense tensors.
///
/// Nodes are appended in construction order, so every parent index is smaller
/// than its child's and the reverse sweep in [`Graph::backward`] is already a
/// topological order. Values are immutable once recorded; only gradient
/// buffers change.
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    grads: Vec<Vec<T>>,
    fault: GradFault,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Graph {
            nodes: Vec::new(),
            grads: Vec::new(),
            fault: GradFault::None,
        }
    }

    pub fn with_fault(fault: GradFault) -> Self {
        Graph {
            fault,
            ..Self::new()
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor<T>, op: Op<T>) -> Var {
        let requires_grad = match &op {
            Op::Param => true,
            Op::Constant => false,
            other => other.parents().iter().any(|&p| self.nodes[p].requires_grad),
        };
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    /// Leaf that receives a gradient.
    pub fn param(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Param)
    }

    /// Leaf that never receives a gradient.
    pub fn constant(&mut self, value: Tensor<T>) -> Var {
        self.push(value, Op::Constant)
    }

    pub fn value(&self, v: Var) -> &Tensor<T> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> &Shape {
        self.nodes[v.0].value.shape()
    }

    pub fn dims(&self, v: Var) -> &[usize] {
        self.nodes[v.0].value.dims()
    }

    pub fn requires_grad(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    /// Accumulated gradient after [`Graph::backward`]; `None` if the node was
    /// unreachable from the root or does not require a gradient.
    pub fn grad(&self, v: Var) -> Option<&[T]> {
        self.grads
            .get(v.0)
            .filter(|g| !g.is_empty())
            .map(|g| g.as_slice())
    }

    /// Gradient as a tensor, zeros when nothing flowed into `v`.
    pub fn grad_tensor(&self, v: Var) -> Tensor<T> {
        let shape = self.shape(v).clone();
        match self.grad(v) {
            Some(g) => Tensor::from_parts(shape, g.to_vec()),
            None => Tensor::from_parts(shape.clone(), vec![T::zero(); shape.numel()]),
        }
    }

    /// Text edge list, one node per line: `id op shape <- parents`.
    pub fn dump_edges(&self) -> String {
        let mut out = String::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let parents: Vec<String> = node.op.parents().iter().map(|p| p.to_string()).collect();
            let _ = writeln!(
                out,
                "{i}\t{}\t{}\t<- {}",
                node.op.name(),
                node.value.shape(),
                parents.join(",")
            );
        }
        out
    }

    // ---------------------------------------------------------------- ops

    /// Batched matrix product `[.., m, k] · [.., k, n]`.
    ///
    /// The right operand either has the same leading extents as the left one
    /// or is a plain `[k, n]` matrix shared across the batch.
    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ad, bd) = (self.dims(a).to_vec(), self.dims(b).to_vec());
        let mismatch = || {
            Error::shape(
                "matmul",
                format!(
                    "cannot multiply {} by {}",
                    Shape::new(ad.clone()).unwrap_or_default(),
                    Shape::new(bd.clone()).unwrap_or_default()
                ),
            )
        };
        if ad.len() < 2 || bd.len() < 2 {
            return Err(mismatch());
        }
        let (m, k) = (ad[ad.len() - 2], ad[ad.len() - 1]);
        let (k2, n) = (bd[bd.len() - 2], bd[bd.len() - 1]);
        if k != k2 {
            return Err(mismatch());
        }
        let shared_rhs = bd.len() == 2;
        if !shared_rhs && ad[..ad.len() - 2] != bd[..bd.len() - 2] {
            return Err(mismatch());
        }
        let batch: usize = ad[..ad.len() - 2].iter().product();
        let mut out_dims = ad[..ad.len() - 2].to_vec();
        out_dims.extend([m, n]);

        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![T::zero(); batch * m * n];
        if shared_rhs {
            // one tall GEMM over all batch rows
            gemm(
                batch * m,
                k,
                n,
                MatView::row_major(av, k),
                MatView::row_major(bv, n),
                T::zero(),
                &mut out,
            );
        } else {
            for i in 0..batch {
                gemm(
                    m,
                    k,
                    n,
                    MatView::row_major(&av[i * m * k..(i + 1) * m * k], k),
                    MatView::row_major(&bv[i * k * n..(i + 1) * k * n], n),
                    T::zero(),
                    &mut out[i * m * n..(i + 1) * m * n],
                );
            }
        }
        let value = Tensor::from_parts(Shape::new(out_dims)?, out);
        Ok(self.push(
            value,
            Op::MatMul {
                lhs: a.0,
                rhs: b.0,
                batch,
                m,
                k,
                n,
                shared_rhs,
            },
        ))
    }

    fn check_suffix(&self, op: &'static str, a: Var, b: Var) -> Result<()> {
        let (ad, bd) = (self.dims(a), self.dims(b));
        if bd.len() > ad.len() || ad[ad.len() - bd.len()..] != *bd {
            return Err(Error::shape(
                op,
                format!("{} does not broadcast onto {}", self.shape(b), self.shape(a)),
            ));
        }
        Ok(())
    }

    /// Elementwise sum; the smaller operand broadcasts if its shape is a
    /// suffix of the larger one (bias add).
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = if self.value(a).numel() >= self.value(b).numel() {
            (a, b)
        } else {
            (b, a)
        };
        self.check_suffix("add", a, b)?;
        let rhs = self.value(b).data();
        let r = rhs.len();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(r) {
            chunk.iter_mut().zip(rhs).for_each(|(o, &x)| *o += x);
        }
        let value = Tensor::from_parts(self.shape(a).clone(), out);
        Ok(self.push(value, Op::Add { lhs: a.0, rhs: b.0 }))
    }

    /// `a - b`, with `b` broadcast as in [`Graph::add`].
    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_suffix("sub", a, b)?;
        let rhs = self.value(b).data();
        let r = rhs.len();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(r) {
            chunk.iter_mut().zip(rhs).for_each(|(o, &x)| *o -= x);
        }
        let value = Tensor::from_parts(self.shape(a).clone(), out);
        Ok(self.push(value, Op::Sub { lhs: a.0, rhs: b.0 }))
    }

    /// Elementwise product with suffix broadcasting.
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (a, b) = if self.value(a).numel() >= self.value(b).numel() {
            (a, b)
        } else {
            (b, a)
        };
        self.check_suffix("mul", a, b)?;
        let rhs = self.value(b).data();
        let r = rhs.len();
        let mut out = self.value(a).data().to_vec();
        for chunk in out.chunks_mut(r) {
            chunk.iter_mut().zip(rhs).for_each(|(o, &x)| *o *= x);
        }
        let value = Tensor::from_parts(self.shape(a).clone(), out);
        Ok(self.push(value, Op::Mul { lhs: a.0, rhs: b.0 }))
    }

    pub fn scale(&mut self, a: Var, factor: f64) -> Var {
        let factor = T::lit(factor);
        let out = self.value(a).data().iter().map(|&x| x * factor).collect();
        let value = Tensor::from_parts(self.shape(a).clone(), out);
        self.push(value, Op::Scale { input: a.0, factor })
    }

    pub fn add_scalar(&mut self, a: Var, offset: f64) -> Var {
        let offset = T::lit(offset);
        let out = self.value(a).data().iter().map(|&x| x + offset).collect();
        let value = Tensor::from_parts(self.shape(a).clone(), out);
        self.push(value, Op::AddScalar { input: a.0 })
    }

    fn pointwise(&mut self, a: Var, kind: Pointwise) -> Var {
        let out = self
            .value(a)
            .data()
            .iter()
            .map(|&x| pointwise_forward(kind, x))
            .collect();
        let value = Tensor::from_parts(self.shape(a).clone(), out);
        self.push(value, Op::Pointwise { input: a.0, kind })
    }

    pub fn relu(&mut self, a: Var) -> Var {
        self.pointwise(a, Pointwise::Relu)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        self.pointwise(a, Pointwise::Gelu)
    }

    pub fn activation(&mut self, a: Var, act: Activation) -> Var {
        match act {
            Activation::Relu => self.relu(a),
            Activation::Gelu => self.gelu(a),
        }
    }

    /// Elementwise smooth-L1 (Huber with unit threshold): `0.5e²` for `|e| < 1`, `|e| − 0.5` otherwise.
    pub fn smooth_l1(&mut self, a: Var) -> Var {
        self.pointwise(a, Pointwise::SmoothL1)
    }

    pub fn permute(&mut self, a: Var, axes: &[usize]) -> Result<Var> {
        let shape = permuted_shape(self.shape(a), axes)?;
        let out = permute_copy(self.value(a).data(), self.shape(a), axes);
        let value = Tensor::from_parts(shape, out);
        Ok(self.push(
            value,
            Op::Permute {
                input: a.0,
                axes: axes.to_vec(),
            },
        ))
    }

    /// Swaps two axes.
    pub fn transpose(&mut self, a: Var, i: usize, j: usize) -> Result<Var> {
        let rank = self.shape(a).rank();
        for axis in [i, j] {
            if axis >= rank {
                return Err(Error::Axis {
                    op: "transpose",
                    axis,
                    rank,
                });
            }
        }
        let mut axes: Vec<usize> = (0..rank).collect();
        axes.swap(i, j);
        self.permute(a, &axes)
    }

    pub fn reshape(&mut self, a: Var, dims: &[usize]) -> Result<Var> {
        let value = self.value(a).reshape(dims.to_vec())?;
        Ok(self.push(value, Op::Reshape { input: a.0 }))
    }

    /// Joins tensors along `axis`; all other extents must agree.
    pub fn concat(&mut self, parts: &[Var], axis: usize) -> Result<Var> {
        let first = *parts
            .first()
            .ok_or_else(|| Error::shape("concat", "no inputs"))?;
        let base = self.dims(first).to_vec();
        if axis >= base.len() {
            return Err(Error::Axis {
                op: "concat",
                axis,
                rank: base.len(),
            });
        }
        let mut extents = Vec::with_capacity(parts.len());
        for &p in parts {
            let d = self.dims(p);
            let compatible = d.len() == base.len()
                && d.iter()
                    .zip(&base)
                    .enumerate()
                    .all(|(i, (x, y))| i == axis || x == y);
            if !compatible {
                return Err(Error::shape(
                    "concat",
                    format!(
                        "{} and {} differ off axis {axis}",
                        self.shape(first),
                        self.shape(p)
                    ),
                ));
            }
            extents.push(d[axis]);
        }
        let outer: usize = base[..axis].iter().product();
        let inner: usize = base[axis + 1..].iter().product();
        let total: usize = extents.iter().sum();
        let mut out = Vec::with_capacity(outer * total * inner);
        for o in 0..outer {
            for (&p, &e) in parts.iter().zip(&extents) {
                let chunk = e * inner;
                out.extend_from_slice(&self.value(p).data()[o * chunk..(o + 1) * chunk]);
            }
        }
        let mut dims = base;
        dims[axis] = total;
        let value = Tensor::from_parts(Shape::new(dims)?, out);
        Ok(self.push(
            value,
            Op::Concat {
                inputs: parts.iter().map(|p| p.0).collect(),
                extents,
                outer,
                inner,
            },
        ))
    }

    /// Contiguous range `[start, start + len)` along `axis`.
    pub fn slice(&mut self, a: Var, axis: usize, start: usize, len: usize) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        if axis >= dims.len() {
            return Err(Error::Axis {
                op: "slice",
                axis,
                rank: dims.len(),
            });
        }
        if len == 0 || start + len > dims[axis] {
            return Err(Error::shape(
                "slice",
                format!("range {start}..{} outside extent {}", start + len, dims[axis]),
            ));
        }
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let extent = dims[axis];
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * len * inner);
        for o in 0..outer {
            let from = (o * extent + start) * inner;
            out.extend_from_slice(&src[from..from + len * inner]);
        }
        let mut out_dims = dims;
        out_dims[axis] = len;
        let value = Tensor::from_parts(Shape::new(out_dims)?, out);
        Ok(self.push(
            value,
            Op::Slice {
                input: a.0,
                outer,
                extent,
                start,
                len,
                inner,
            },
        ))
    }

    /// Broadcasts a unit-extent `axis` to `count` copies.
    pub fn repeat_axis(&mut self, a: Var, axis: usize, count: usize) -> Result<Var> {
        let dims = self.dims(a).to_vec();
        if axis >= dims.len() {
            return Err(Error::Axis {
                op: "repeat_axis",
                axis,
                rank: dims.len(),
            });
        }
        if dims[axis] != 1 || count == 0 {
            return Err(Error::shape(
                "repeat_axis",
                format!("axis {axis} of {} must have extent 1", self.shape(a)),
            ));
        }
        let outer: usize = dims[..axis].iter().product();
        let inner: usize = dims[axis + 1..].iter().product();
        let src = self.value(a).data();
        let mut out = Vec::with_capacity(outer * count * inner);
        for o in 0..outer {
            let row = &src[o * inner..(o + 1) * inner];
            for _ in 0..count {
                out.extend_from_slice(row);
            }
        }
        let mut out_dims = dims;
        out_dims[axis] = count;
        let value = Tensor::from_parts(Shape::new(out_dims)?, out);
        Ok(self.push(
            value,
            Op::Repeat {
                input: a.0,
                outer,
                count,
                inner,
            },
        ))
    }

    /// Sum of all elements, shape `[1]`.
    pub fn sum(&mut self, a: Var) -> Var {
        let s: T = self.value(a).data().iter().copied().sum();
        self.push(Tensor::scalar(s), Op::Sum { input: a.0 })
    }

    /// Mean of all elements, shape `[1]`.
    pub fn mean(&mut self, a: Var) -> Var {
        let v = self.value(a);
        let s: T = v.data().iter().copied().sum();
        let m = s / T::lit(v.numel() as f64);
        self.push(Tensor::scalar(m), Op::Mean { input: a.0 })
    }

    /// Softmax over the last axis, stabilized by subtracting the row maximum.
    pub fn softmax_lastdim(&mut self, a: Var) -> Var {
        let width = self.shape(a).last();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(width) {
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let mut total = T::zero();
            for x in row.iter_mut() {
                *x = (*x - max).exp();
                total += *x;
            }
            for x in row.iter_mut() {
                *x /= total;
            }
        }
        let value = Tensor::from_parts(self.shape(a).clone(), out);
        self.push(value, Op::Softmax { input: a.0 })
    }

    /// Standardizes each last-axis slice (population variance) then applies `gamma`, `beta`.
    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var, eps: f64) -> Result<Var> {
        let width = self.shape(x).last();
        for p in [gamma, beta] {
            if self.dims(p) != [width] {
                return Err(Error::shape(
                    "layer_norm",
                    format!("affine {} does not match width {width}", self.shape(p)),
                ));
            }
        }
        if eps <= 0.0 {
            return Err(Error::Contract("layer_norm eps must be positive".into()));
        }
        let eps = T::lit(eps);
        let n = T::lit(width as f64);
        let src = self.value(x).data();
        let (g, b) = (self.value(gamma).data(), self.value(beta).data());
        let rows = src.len() / width;
        let mut xhat = Vec::with_capacity(src.len());
        let mut inv_std = Vec::with_capacity(rows);
        let mut out = Vec::with_capacity(src.len());
        for row in src.chunks(width) {
            let mean = row.iter().copied().sum::<T>() / n;
            let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() / n;
            let inv = T::one() / (var + eps).sqrt();
            inv_std.push(inv);
            for (j, &v) in row.iter().enumerate() {
                let h = (v - mean) * inv;
                xhat.push(h);
                out.push(g[j] * h + b[j]);
            }
        }
        let value = Tensor::from_parts(self.shape(x).clone(), out);
        Ok(self.push(
            value,
            Op::LayerNorm {
                input: x.0,
                gamma: gamma.0,
                beta: beta.0,
                xhat,
                inv_std,
            },
        ))
    }

    /// Row lookup into a `[rows, width]` table. The output has shape `lead ++ [width]`
    /// where `lead` multiplies out to `indices.len()`.
    pub fn gather_rows(&mut self, table: Var, indices: &[usize], lead: &[usize]) -> Result<Var> {
        let td = self.dims(table).to_vec();
        if td.len() != 2 {
            return Err(Error::shape(
                "gather_rows",
                format!("table must be rank 2, got {}", self.shape(table)),
            ));
        }
        if lead.iter().product::<usize>() != indices.len() {
            return Err(Error::shape(
                "gather_rows",
                format!("{} indices do not fill {lead:?}", indices.len()),
            ));
        }
        let (rows, width) = (td[0], td[1]);
        if let Some(&bad) = indices.iter().find(|&&i| i >= rows) {
            return Err(Error::Index {
                table: format!("table node {}", table.0),
                index: bad,
                len: rows,
            });
        }
        let src = self.value(table).data();
        let mut out = Vec::with_capacity(indices.len() * width);
        for &i in indices {
            out.extend_from_slice(&src[i * width..(i + 1) * width]);
        }
        let mut dims = lead.to_vec();
        dims.push(width);
        let value = Tensor::from_parts(Shape::new(dims)?, out);
        Ok(self.push(
            value,
            Op::Gather {
                table: table.0,
                indices: indices.to_vec(),
            },
        ))
    }

    // ----------------------------------------------------------- backward

    /// Fills the gradient of every node reachable from `root` with d(root)/d(node).
    ///
    /// Previous gradients are discarded. `root` must hold a single element.
    pub fn backward(&mut self, root: Var) -> Result<()> {
        if self.value(root).numel() != 1 {
            return Err(Error::Contract(format!(
                "backward needs a scalar root, got {}",
                self.shape(root)
            )));
        }
        let mut reachable = vec![false; root.0 + 1];
        reachable[root.0] = true;
        for i in (0..=root.0).rev() {
            if reachable[i] {
                for p in self.nodes[i].op.parents() {
                    reachable[p] = true;
                }
            }
        }
        self.grads.clear();
        self.grads.resize_with(self.nodes.len(), Vec::new);
        if !self.nodes[root.0].requires_grad {
            return Ok(());
        }
        self.grads[root.0] = vec![T::one()];
        for i in (0..=root.0).rev() {
            if !reachable[i] || !self.nodes[i].requires_grad {
                continue;
            }
            let g = std::mem::take(&mut self.grads[i]);
            if !g.is_empty() {
                self.propagate(i, &g);
            }
            self.grads[i] = g;
        }
        Ok(())
    }

    fn propagate(&mut self, i: usize, g: &[T]) {
        let Graph {
            nodes,
            grads,
            fault,
        } = self;
        let nodes = &*nodes;
        let node = &nodes[i];
        match &node.op {
            Op::Param | Op::Constant => {}
            &Op::MatMul {
                lhs,
                rhs,
                batch,
                m,
                k,
                n,
                shared_rhs,
            } => {
                let (av, bv) = (nodes[lhs].value.data(), nodes[rhs].value.data());
                if let Some(da) = slot(grads, nodes, lhs) {
                    let before = if *fault == GradFault::MatmulLhs {
                        Some(da.to_vec())
                    } else {
                        None
                    };
                    for bi in 0..batch {
                        let bb = if shared_rhs { 0 } else { bi };
                        gemm(
                            m,
                            n,
                            k,
                            MatView::row_major(&g[bi * m * n..(bi + 1) * m * n], n),
                            MatView::transposed(&bv[bb * k * n..(bb + 1) * k * n], n),
                            T::one(),
                            &mut da[bi * m * k..(bi + 1) * m * k],
                        );
                    }
                    if let Some(before) = before {
                        let f = T::lit(1.5);
                        for (d, b0) in da.iter_mut().zip(before) {
                            *d = b0 + (*d - b0) * f;
                        }
                    }
                }
                if let Some(db) = slot(grads, nodes, rhs) {
                    if shared_rhs {
                        gemm(
                            k,
                            batch * m,
                            n,
                            MatView::transposed(av, k),
                            MatView::row_major(g, n),
                            T::one(),
                            db,
                        );
                    } else {
                        for bi in 0..batch {
                            gemm(
                                k,
                                m,
                                n,
                                MatView::transposed(&av[bi * m * k..(bi + 1) * m * k], k),
                                MatView::row_major(&g[bi * m * n..(bi + 1) * m * n], n),
                                T::one(),
                                &mut db[bi * k * n..(bi + 1) * k * n],
                            );
                        }
                    }
                }
            }
            &Op::Add { lhs, rhs } => {
                if let Some(da) = slot(grads, nodes, lhs) {
                    add_into(da, g);
                }
                if let Some(db) = slot(grads, nodes, rhs) {
                    for chunk in g.chunks(db.len()) {
                        add_into(db, chunk);
                    }
                }
            }
            &Op::Sub { lhs, rhs } => {
                if let Some(da) = slot(grads, nodes, lhs) {
                    add_into(da, g);
                }
                if let Some(db) = slot(grads, nodes, rhs) {
                    for chunk in g.chunks(db.len()) {
                        db.iter_mut().zip(chunk).for_each(|(d, &x)| *d -= x);
                    }
                }
            }
            &Op::Mul { lhs, rhs } => {
                let (av, bv) = (nodes[lhs].value.data(), nodes[rhs].value.data());
                let r = bv.len();
                if let Some(da) = slot(grads, nodes, lhs) {
                    for (dc, gc) in da.chunks_mut(r).zip(g.chunks(r)) {
                        for ((d, &gx), &b) in dc.iter_mut().zip(gc).zip(bv) {
                            *d += gx * b;
                        }
                    }
                }
                if let Some(db) = slot(grads, nodes, rhs) {
                    for (gc, ac) in g.chunks(r).zip(av.chunks(r)) {
                        for ((d, &gx), &a) in db.iter_mut().zip(gc).zip(ac) {
                            *d += gx * a;
                        }
                    }
                }
            }
            &Op::Scale { input, factor } => {
                if let Some(d) = slot(grads, nodes, input) {
                    d.iter_mut().zip(g).for_each(|(d, &x)| *d += x * factor);
                }
            }
            &Op::AddScalar { input } | &Op::Reshape { input } => {
                if let Some(d) = slot(grads, nodes, input) {
                    add_into(d, g);
                }
            }
            &Op::Pointwise { input, kind } => {
                let xv = nodes[input].value.data();
                if let Some(d) = slot(grads, nodes, input) {
                    for ((d, &gx), &x) in d.iter_mut().zip(g).zip(xv) {
                        *d += gx * pointwise_derivative(kind, x);
                    }
                }
            }
            Op::Permute { input, axes } => {
                if let Some(d) = slot(grads, nodes, *input) {
                    let back = permute_copy(g, node.value.shape(), &inverse_permutation(axes));
                    add_into(d, &back);
                }
            }
            Op::Concat {
                inputs,
                extents,
                outer,
                inner,
            } => {
                let total: usize = extents.iter().sum::<usize>() * inner;
                let mut offset = 0;
                for (&p, &e) in inputs.iter().zip(extents) {
                    let chunk = e * inner;
                    if let Some(d) = slot(grads, nodes, p) {
                        for o in 0..*outer {
                            let src = &g[o * total + offset..o * total + offset + chunk];
                            add_into(&mut d[o * chunk..(o + 1) * chunk], src);
                        }
                    }
                    offset += chunk;
                }
            }
            &Op::Slice {
                input,
                outer,
                extent,
                start,
                len,
                inner,
            } => {
                if let Some(d) = slot(grads, nodes, input) {
                    for o in 0..outer {
                        let to = (o * extent + start) * inner;
                        let from = o * len * inner;
                        add_into(&mut d[to..to + len * inner], &g[from..from + len * inner]);
                    }
                }
            }
            &Op::Repeat {
                input,
                outer,
                count,
                inner,
            } => {
                if let Some(d) = slot(grads, nodes, input) {
                    for o in 0..outer {
                        let dst = &mut d[o * inner..(o + 1) * inner];
                        for r in 0..count {
                            let from = (o * count + r) * inner;
                            add_into(dst, &g[from..from + inner]);
                        }
                    }
                }
            }
            &Op::Sum { input } => {
                if let Some(d) = slot(grads, nodes, input) {
                    d.iter_mut().for_each(|d| *d += g[0]);
                }
            }
            &Op::Mean { input } => {
                if let Some(d) = slot(grads, nodes, input) {
                    let share = g[0] / T::lit(d.len() as f64);
                    d.iter_mut().for_each(|d| *d += share);
                }
            }
            &Op::Softmax { input } => {
                let y = node.value.data();
                let width = node.value.shape().last();
                if let Some(d) = slot(grads, nodes, input) {
                    for ((dr, gr), yr) in d.chunks_mut(width).zip(g.chunks(width)).zip(y.chunks(width)) {
                        let dot: T = gr.iter().zip(yr).map(|(&a, &b)| a * b).sum();
                        for ((d, &gx), &yx) in dr.iter_mut().zip(gr).zip(yr) {
                            *d += yx * (gx - dot);
                        }
                    }
                }
            }
            Op::LayerNorm {
                input,
                gamma,
                beta,
                xhat,
                inv_std,
            } => {
                let width = node.value.shape().last();
                let gv = nodes[*gamma].value.data();
                if let Some(dg) = slot(grads, nodes, *gamma) {
                    for (gr, hr) in g.chunks(width).zip(xhat.chunks(width)) {
                        for ((d, &gx), &h) in dg.iter_mut().zip(gr).zip(hr) {
                            *d += gx * h;
                        }
                    }
                }
                if let Some(db) = slot(grads, nodes, *beta) {
                    for gr in g.chunks(width) {
                        add_into(db, gr);
                    }
                }
                if let Some(dx) = slot(grads, nodes, *input) {
                    let n = T::lit(width as f64);
                    let mut dxhat = vec![T::zero(); width];
                    for (r, (dr, gr)) in dx.chunks_mut(width).zip(g.chunks(width)).enumerate() {
                        let hr = &xhat[r * width..(r + 1) * width];
                        let mut sum = T::zero();
                        let mut sum_h = T::zero();
                        for j in 0..width {
                            dxhat[j] = gr[j] * gv[j];
                            sum += dxhat[j];
                            sum_h += dxhat[j] * hr[j];
                        }
                        let scale = inv_std[r] / n;
                        for j in 0..width {
                            dr[j] += scale * (n * dxhat[j] - sum - hr[j] * sum_h);
                        }
                    }
                }
            }
            Op::Gather { table, indices } => {
                let width = nodes[*table].value.shape().last();
                if let Some(d) = slot(grads, nodes, *table) {
                    for (r, &row) in indices.iter().enumerate() {
                        add_into(
                            &mut d[row * width..(row + 1) * width],
                            &g[r * width..(r + 1) * width],
                        );
                    }
                }
            }
        }
    }
}

/// Gradient buffer of node `p`, allocated on first use; `None` if `p` takes no gradient.
fn slot<'a, T: Scalar>(grads: &'a mut [Vec<T>], nodes: &[Node<T>], p: usize) -> Option<&'a mut [T]> {
    if !nodes[p].requires_grad {
        return None;
    }
    let buf = &mut grads[p];
    if buf.is_empty() {
        *buf = vec![T::zero(); nodes[p].value.numel()];
    }
    Some(buf.as_mut_slice())
}

fn add_into<T: Scalar>(dst: &mut [T], src: &[T]) {
    dst.iter_mut().zip(src).for_each(|(d, &s)| *d += s);
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

fn pointwise_forward<T: Scalar>(kind: Pointwise, x: T) -> T {
    match kind {
        Pointwise::Relu => x.max(T::zero()),
        Pointwise::Gelu => {
            let inner = T::lit(GELU_C) * (x + T::lit(GELU_A) * x * x * x);
            T::lit(0.5) * x * (T::one() + inner.tanh())
        }
        Pointwise::SmoothL1 => {
            let a = x.abs();
            if a < T::one() {
                T::lit(0.5) * x * x
            } else {
                a - T::lit(0.5)
            }
        }
    }
}

fn pointwise_derivative<T: Scalar>(kind: Pointwise, x: T) -> T {
    match kind {
        Pointwise::Relu => {
            if x > T::zero() {
                T::one()
            } else {
                T::zero()
            }
        }
        Pointwise::Gelu => {
            let c = T::lit(GELU_C);
            let a = T::lit(GELU_A);
            let half = T::lit(0.5);
            let t = (c * (x + a * x * x * x)).tanh();
            let dinner = c * (T::one() + T::lit(3.0) * a * x * x);
            half * (T::one() + t) + half * x * (T::one() - t * t) * dinner
        }
        Pointwise::SmoothL1 => {
            if x.abs() < T::one() {
                x
            } else {
                x.signum()
            }
        }
    }
}
