use crate::error::{Error, Result};
use crate::numerics::{Graph, Scalar, Tensor, Var};

/// Smooth-L1 of one error: `0.5e²` inside the unit band, `|e| − 0.5` outside.
pub fn smooth_l1_value(e: f64) -> f64 {
    let a = e.abs();
    if a < 1.0 {
        0.5 * e * e
    } else {
        a - 0.5
    }
}

/// Mean smooth-L1 between a forecast and kW targets of the same size.
pub fn smooth_l1<T: Scalar>(g: &mut Graph<T>, y_hat: Var, y: &[f64]) -> Result<Var> {
    let dims = g.dims(y_hat).to_vec();
    if g.value(y_hat).numel() != y.len() {
        return Err(Error::shape(
            "smooth_l1",
            format!("forecast {dims:?} against {} targets", y.len()),
        ));
    }
    let target = g.constant(Tensor::from_f64(dims, y)?);
    let e = g.sub(y_hat, target)?;
    let l = g.smooth_l1(e);
    Ok(g.mean(l))
}
