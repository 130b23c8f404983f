//! Building blocks shared by the embeddings and both transformer blocks.
//!
//! Each function reads its weights from `p` under a name prefix laid out by
//! [`crate::model::param_specs`].

use crate::error::{Error, Result};
use crate::numerics::{Activation, BoundParams, Graph, Scalar, Var};

pub const LN_EPS: f64 = 1e-5;

/// `x·W + b` over the last axis.
pub fn linear<T: Scalar>(g: &mut Graph<T>, p: &BoundParams<'_, T>, prefix: &str, x: Var) -> Result<Var> {
    let w = p.get(&format!("{prefix}.w"))?;
    let b = p.get(&format!("{prefix}.b"))?;
    let y = g.matmul(x, w)?;
    g.add(y, b)
}

/// `fc2(act(fc1(x))) + skip(x)`, where the skip is the identity or an affine
/// projection when the widths differ.
pub fn residual_mlp<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    prefix: &str,
    x: Var,
    act: Activation,
) -> Result<Var> {
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.activation(h, act);
    let h = linear(g, p, &format!("{prefix}.fc2"), h)?;
    let proj = format!("{prefix}.proj");
    let skip = if p.get(&format!("{proj}.w")).is_ok() {
        linear(g, p, &proj, x)?
    } else {
        x
    };
    g.add(h, skip)
}

/// Position-wise `fc2(act(fc1(x)))`; the residual and norm live at the call site.
pub fn feed_forward<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    prefix: &str,
    x: Var,
    act: Activation,
) -> Result<Var> {
    let h = linear(g, p, &format!("{prefix}.fc1"), x)?;
    let h = g.activation(h, act);
    linear(g, p, &format!("{prefix}.fc2"), h)
}

/// `LN(x + sub)` with the affine pair under `prefix`.
pub fn add_norm<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    prefix: &str,
    x: Var,
    sub: Var,
) -> Result<Var> {
    let gamma = p.get(&format!("{prefix}.gamma"))?;
    let beta = p.get(&format!("{prefix}.beta"))?;
    let s = g.add(x, sub)?;
    g.layer_norm(s, gamma, beta, LN_EPS)
}

/// Multi-head scaled dot-product attention.
///
/// `query` is `[M, Sq, D]`, `context` is `[M, Sk, D]`; each of the `M`
/// groups attends independently. Returns `[M, Sq, D]`.
pub fn attention<T: Scalar>(
    g: &mut Graph<T>,
    p: &BoundParams<'_, T>,
    prefix: &str,
    query: Var,
    context: Var,
    heads: usize,
) -> Result<Var> {
    let (qd, kd) = (g.dims(query).to_vec(), g.dims(context).to_vec());
    if qd.len() != 3 || kd.len() != 3 || qd[0] != kd[0] || qd[2] != kd[2] || qd[2] % heads != 0 {
        return Err(Error::shape(
            "attention",
            format!("query {qd:?} and context {kd:?} are not [M, S, D] with {heads} heads dividing D"),
        ));
    }
    let (m, sq, sk, d) = (qd[0], qd[1], kd[1], qd[2]);
    let dh = d / heads;

    let q = linear(g, p, &format!("{prefix}.q"), query)?;
    // a key bias shifts every score of a query equally and cancels in the softmax
    let wk = p.get(&format!("{prefix}.k.w"))?;
    let k = g.matmul(context, wk)?;
    let v = linear(g, p, &format!("{prefix}.v"), context)?;

    let q = g.reshape(q, &[m, sq, heads, dh])?;
    let q = g.permute(q, &[0, 2, 1, 3])?;
    let q = g.reshape(q, &[m * heads, sq, dh])?;
    let k = g.reshape(k, &[m, sk, heads, dh])?;
    let k = g.permute(k, &[0, 2, 3, 1])?;
    let k = g.reshape(k, &[m * heads, dh, sk])?;
    let v = g.reshape(v, &[m, sk, heads, dh])?;
    let v = g.permute(v, &[0, 2, 1, 3])?;
    let v = g.reshape(v, &[m * heads, sk, dh])?;

    let scores = g.matmul(q, k)?;
    let scores = g.scale(scores, 1.0 / (dh as f64).sqrt());
    let weights = g.softmax_lastdim(scores);
    let ctx = g.matmul(weights, v)?;
    let ctx = g.reshape(ctx, &[m, heads, sq, dh])?;
    let ctx = g.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = g.reshape(ctx, &[m, sq, d])?;
    linear(g, p, &format!("{prefix}.o"), ctx)
}
