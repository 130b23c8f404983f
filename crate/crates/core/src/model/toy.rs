use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::data::{ColumnStats, NormStats, WindowBatch, MONTHS, YEAR_DAYS};
use crate::model::ModelConfig;

/// Scaling with a kW-like power column and unit exogenous columns.
pub fn toy_norm(cfg: &ModelConfig) -> NormStats {
    let mut norm = NormStats::identity((0..cfg.exo).map(|i| format!("exo_{i}")).collect());
    norm.power = ColumnStats {
        mean: 600.0,
        std: 450.0,
        zero_variance: false,
    };
    norm
}

/// Random batch shaped for `cfg`: standard-normal inputs, in-range calendar
/// indices and targets uniform in [0, 1500] kW.
pub fn toy_batch(cfg: &ModelConfig, batch: usize, seed: u64) -> WindowBatch {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (h, n, c, p) = (cfg.lookback, cfg.turbines, cfg.exo, cfg.horizon);
    let time_len = cfg.time_len();
    let mut normal = |count: usize| -> Vec<f64> { (0..count).map(|_| rng.sample(StandardNormal)).collect() };
    let x = normal(batch * h * n);
    let z_static = normal(batch * h * n * c);
    let mut t_idx = Vec::with_capacity(batch * time_len * 3);
    for _ in 0..batch {
        let slot0 = rng.random_range(0..cfg.slots_per_day);
        let month = rng.random_range(0..MONTHS);
        let day = rng.random_range(0..YEAR_DAYS);
        for k in 0..time_len {
            t_idx.extend([(slot0 + k) % cfg.slots_per_day, month, day]);
        }
    }
    let y = (0..batch * p * n).map(|_| rng.random_range(0.0..1500.0)).collect();
    WindowBatch {
        batch,
        lookback: h,
        horizon: p,
        turbines: n,
        exo: c,
        time_len,
        x,
        z_static,
        t_idx,
        y,
        origins: (0..batch).collect(),
    }
}
