use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{MONTHS, YEAR_DAYS};
use crate::error::Result;
use crate::model::config::{ModelConfig, Variant};
use crate::numerics::{ParamStore, Scalar, Tensor};

/// How a parameter is initialized.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    /// Uniform in ±1/√fan_in.
    Uniform { fan_in: usize },
    Zeros,
    Ones,
    /// Normal(0, 0.02) for lookup tables.
    Table,
}

/// Name, shape and initializer of one parameter.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub dims: Vec<usize>,
    pub init: Init,
}

struct Specs(Vec<ParamSpec>);

impl Specs {
    fn push(&mut self, name: String, dims: Vec<usize>, init: Init) {
        self.0.push(ParamSpec { name, dims, init });
    }

    fn linear(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        self.push(format!("{prefix}.w"), vec![d_in, d_out], Init::Uniform { fan_in: d_in });
        self.push(format!("{prefix}.b"), vec![d_out], Init::Zeros);
    }

    fn layer_norm(&mut self, prefix: &str, d: usize) {
        self.push(format!("{prefix}.gamma"), vec![d], Init::Ones);
        self.push(format!("{prefix}.beta"), vec![d], Init::Zeros);
    }

    /// Two affine layers (hidden width `d_out`) plus a projection skip when widths differ.
    fn residual_mlp(&mut self, prefix: &str, d_in: usize, d_out: usize) {
        self.linear(&format!("{prefix}.fc1"), d_in, d_out);
        self.linear(&format!("{prefix}.fc2"), d_out, d_out);
        if d_in != d_out {
            self.linear(&format!("{prefix}.proj"), d_in, d_out);
        }
    }

    fn feed_forward(&mut self, prefix: &str, d: usize, hidden: usize) {
        self.linear(&format!("{prefix}.fc1"), d, hidden);
        self.linear(&format!("{prefix}.fc2"), hidden, d);
    }

    /// Query/key/value/output projections. The key has no bias: it would add
    /// the same amount to every score of a query and cancel in the softmax.
    fn attention(&mut self, prefix: &str, d: usize) {
        self.linear(&format!("{prefix}.q"), d, d);
        self.push(format!("{prefix}.k.w"), vec![d, d], Init::Uniform { fan_in: d });
        self.linear(&format!("{prefix}.v"), d, d);
        self.linear(&format!("{prefix}.o"), d, d);
    }
}

/// Every parameter of a configuration, in a fixed order.
pub fn param_specs(cfg: &ModelConfig) -> Vec<ParamSpec> {
    let d = cfg.d_model;
    let mut s = Specs(Vec::new());
    s.residual_mlp("emb.en", cfg.lookback, d);
    s.residual_mlp("emb.sex", cfg.lookback, d);
    if cfg.variant.uses_dynamic() {
        if cfg.variant != Variant::NoDev {
            s.residual_mlp("emb.dex", cfg.time_len(), d);
        }
        s.push("time.diurnal".into(), vec![cfg.slots_per_day, cfg.time_emb], Init::Table);
        s.push("time.monthly".into(), vec![MONTHS, cfg.time_emb], Init::Table);
        s.push("time.yearly".into(), vec![YEAR_DAYS, cfg.time_emb], Init::Table);
    }
    let hidden = cfg.ffn_mult * d;
    for l in 0..cfg.layers {
        let ext = format!("layers.{l}.ext");
        if cfg.variant.uses_variable_attention() {
            s.attention(&format!("{ext}.var_attn"), d);
            s.layer_norm(&format!("{ext}.var_ln"), d);
        }
        if cfg.variant.uses_spatial_attention() {
            s.attention(&format!("{ext}.spatial_attn"), d);
            s.layer_norm(&format!("{ext}.spatial_ln"), d);
        }
        s.feed_forward(&format!("{ext}.ffn"), d, hidden);
        s.layer_norm(&format!("{ext}.ffn_ln"), d);

        let ent = format!("layers.{l}.ent");
        s.attention(&format!("{ent}.spatial_attn"), d);
        s.layer_norm(&format!("{ent}.spatial_ln"), d);
        if cfg.variant == Variant::RepByAttn {
            s.attention(&format!("{ent}.cross_attn"), d);
            s.layer_norm(&format!("{ent}.cross_ln"), d);
        } else {
            s.residual_mlp(&format!("{ent}.fusion"), (1 + cfg.exo_tokens()) * d, d);
        }
        s.feed_forward(&format!("{ent}.ffn"), d, hidden);
        s.layer_norm(&format!("{ent}.ffn_ln"), d);
    }
    s.linear("head.fc1", d, d);
    s.linear("head.fc2", d, cfg.horizon);
    s.0
}

/// Seeded initialization of every parameter in [`param_specs`] order.
pub fn init_params<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let table = Normal::new(0.0, 0.02).expect("valid normal");
    let mut store = ParamStore::new();
    for spec in param_specs(cfg) {
        let n: usize = spec.dims.iter().product();
        let data: Vec<f64> = match spec.init {
            Init::Uniform { fan_in } => {
                let bound = 1.0 / (fan_in as f64).sqrt();
                (0..n).map(|_| rng.random_range(-bound..bound)).collect()
            }
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Table => (0..n).map(|_| table.sample(&mut rng)).collect(),
        };
        store.insert(spec.name, Tensor::from_f64(spec.dims, &data)?)?;
    }
    Ok(store)
}
