use crate::error::Result;
use crate::model::{forward, toy_batch, toy_norm, Model, ModelConfig};
use crate::numerics::{grad_check, GradFault, GradReport};
use crate::training::loss::smooth_l1;

/// Where and how the whole network is checked against central differences.
#[derive(Clone, Debug)]
pub struct EndToEndCheck {
    pub config: ModelConfig,
    pub seed: u64,
    pub batch: usize,
    pub batch_seed: u64,
    pub tol: f64,
}

impl Default for EndToEndCheck {
    /// Toy scale, GELU, three windows. ReLU kinks break the finite-difference
    /// oracle, and `batch · turbines` is odd so the output-bias gradient (a sum
    /// of error signs in the L1 regime) cannot cancel to an exact zero.
    fn default() -> Self {
        EndToEndCheck {
            config: ModelConfig {
                activation: crate::numerics::Activation::Gelu,
                ..ModelConfig::toy()
            },
            seed: 21,
            batch: 3,
            batch_seed: 22,
            tol: 1e-3,
        }
    }
}

/// Checks the training loss gradient of every named parameter in 64-bit.
pub fn end_to_end_gradcheck(check: &EndToEndCheck, fault: GradFault) -> Result<GradReport> {
    let cfg = &check.config;
    let model = Model::<f64>::new(cfg.clone(), toy_norm(cfg), check.seed)?;
    let batch = toy_batch(cfg, check.batch, check.batch_seed);
    grad_check(&model.params, None, check.tol, fault, |g, p| {
        let y = forward(g, p, cfg, &model.norm.power, &batch)?;
        smooth_l1(g, y, &batch.y)
    })
}
