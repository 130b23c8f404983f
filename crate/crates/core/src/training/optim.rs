use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numerics::{ParamStore, Scalar, Tensor};

/// Adam with bias correction (β1 = 0.9, β2 = 0.999, ε = 1e-8 by default).
#[derive(Clone, Debug)]
pub struct AdamState<T: Scalar> {
    pub m: ParamStore<T>,
    pub v: ParamStore<T>,
    pub step: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl<T: Scalar> AdamState<T> {
    /// Zero moments shaped like `params`.
    pub fn new(params: &ParamStore<T>) -> Result<Self> {
        let mut m = ParamStore::new();
        for (name, t) in params.iter() {
            m.insert(name, Tensor::zeros(t.dims().to_vec())?)?;
        }
        Ok(AdamState {
            v: m.clone(),
            m,
            step: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        })
    }

    /// One update of every parameter that has a gradient.
    ///
    /// Gradients are checked for finiteness first; on failure nothing is
    /// modified and the offending parameter is named. With `clip`, the global
    /// gradient norm is scaled down to at most that value.
    pub fn update(
        &mut self,
        params: &mut ParamStore<T>,
        grads: &[(String, Tensor<T>)],
        lr: f64,
        clip: Option<f64>,
    ) -> Result<()> {
        for (name, g) in grads {
            if !g.is_finite() {
                return Err(Error::NonFinite(format!("gradient of '{name}'")));
            }
        }
        let scale = match clip {
            Some(max_norm) => {
                let norm = grads
                    .iter()
                    .flat_map(|(_, g)| g.data().iter().map(|v| v.as_f64().powi(2)))
                    .sum::<f64>()
                    .sqrt();
                if norm > max_norm {
                    max_norm / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        self.step += 1;
        let (b1, b2) = (T::lit(self.beta1), T::lit(self.beta2));
        let (one, eps) = (T::one(), T::lit(self.eps));
        let bc1 = T::lit(1.0 - self.beta1.powi(self.step as i32));
        let bc2 = T::lit(1.0 - self.beta2.powi(self.step as i32));
        let (lr, scale) = (T::lit(lr), T::lit(scale));
        for (name, g) in grads {
            let missing = || Error::Contract(format!("no optimizer slot for '{name}'"));
            let p = params.get_mut(name).ok_or_else(missing)?.data_mut();
            let m = self.m.get_mut(name).ok_or_else(missing)?.data_mut();
            let v = self.v.get_mut(name).ok_or_else(missing)?.data_mut();
            if p.len() != g.numel() {
                return Err(Error::shape("adam", format!("gradient of '{name}' has the wrong size")));
            }
            for i in 0..p.len() {
                let gi = g.data()[i] * scale;
                m[i] = b1 * m[i] + (one - b1) * gi;
                v[i] = b2 * v[i] + (one - b2) * gi * gi;
                let m_hat = m[i] / bc1;
                let v_hat = v[i] / bc2;
                p[i] -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Learning rate as a function of the epoch.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum LrSchedule {
    /// `lr0 · γ^epoch`
    Exponential { gamma: f64 },
    /// `lr0 · γ^⌊epoch / every⌋`
    Step { every: usize, gamma: f64 },
    /// Half cosine from `lr0` at epoch 0 to `lr0 · floor` at `epochs`.
    Cosine { epochs: usize, floor: f64 },
    Constant,
}

impl Default for LrSchedule {
    fn default() -> Self {
        LrSchedule::Exponential { gamma: 0.95 }
    }
}

impl LrSchedule {
    pub fn lr(&self, lr0: f64, epoch: usize) -> f64 {
        match *self {
            LrSchedule::Exponential { gamma } => lr0 * gamma.powi(epoch as i32),
            LrSchedule::Step { every, gamma } => lr0 * gamma.powi((epoch / every.max(1)) as i32),
            LrSchedule::Cosine { epochs, floor } => {
                let t = (epoch as f64 / epochs.max(1) as f64).min(1.0);
                lr0 * (floor + (1.0 - floor) * 0.5 * (1.0 + (std::f64::consts::PI * t).cos()))
            }
            LrSchedule::Constant => lr0,
        }
    }
}

/// `exponential:0.95`, `step:10:0.5`, `cosine:50:0.01`, `constant`.
impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let bad = || Error::Contract(format!("cannot parse schedule '{s}'"));
        let f = |i: usize| parts.get(i).and_then(|v| v.parse::<f64>().ok()).ok_or_else(bad);
        let u = |i: usize| parts.get(i).and_then(|v| v.parse::<usize>().ok()).ok_or_else(bad);
        let sched = match parts[0] {
            "exponential" => LrSchedule::Exponential {
                gamma: if parts.len() > 1 { f(1)? } else { 0.95 },
            },
            "step" => LrSchedule::Step { every: u(1)?, gamma: f(2)? },
            "cosine" => LrSchedule::Cosine {
                epochs: u(1)?,
                floor: if parts.len() > 2 { f(2)? } else { 0.0 },
            },
            "constant" => LrSchedule::Constant,
            _ => return Err(bad()),
        };
        Ok(sched)
    }
}

impl fmt::Display for LrSchedule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            LrSchedule::Exponential { gamma } => write!(f, "exponential:{gamma:?}"),
            LrSchedule::Step { every, gamma } => write!(f, "step:{every}:{gamma:?}"),
            LrSchedule::Cosine { epochs, floor } => write!(f, "cosine:{epochs}:{floor:?}"),
            LrSchedule::Constant => f.write_str("constant"),
        }
    }
}
