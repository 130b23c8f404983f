//! The forecasting network: three variable embeddings, `L` pairs of
//! exogenous/endogenous transformer blocks and a multi-step head.
//!
//! Tokens are whole series ("variable tokens"). Each turbine carries one
//! power token plus `C` static and `C_d` calendar tokens; attention runs over
//! variables within a turbine and over turbines within a variable.

mod checkpoint;
mod config;
mod forward;
mod layers;
mod params;
mod toy;

#[cfg(test)]
mod tests;

use std::path::Path;

pub use checkpoint::{load_archive, manifest_path, payload_path, save_archive};
pub use config::{ModelConfig, Variant};
pub use forward::{
    build_dynamic_features, dex_var_emb, en_var_emb, ent_block_forward, ext_block_forward, forward,
    forward_detailed, sex_var_emb, ForwardVars, LedgerEntry, ShapeLedger,
};
pub use layers::{add_norm, attention, feed_forward, linear, residual_mlp, LN_EPS};
pub use params::{init_params, param_specs, Init, ParamSpec};
pub use toy::{toy_batch, toy_norm};

use crate::data::{ColumnStats, NormStats, WindowBatch};
use crate::error::{Error, Result};
use crate::numerics::{Graph, ParamStore, Scalar, Tensor};

/// Architecture, weights and the scaling the weights were trained under.
#[derive(Clone, Debug)]
pub struct Model<T: Scalar> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    pub norm: NormStats,
}

const STEM: &str = "model";

impl<T: Scalar> Model<T> {
    /// Freshly initialized model.
    pub fn new(config: ModelConfig, norm: NormStats, seed: u64) -> Result<Self> {
        if norm.exo.len() != config.exo {
            return Err(Error::Contract(format!(
                "scaling covers {} exogenous columns, model expects {}",
                norm.exo.len(),
                config.exo
            )));
        }
        let params = init_params(&config, seed)?;
        Ok(Model { config, params, norm })
    }

    /// Forecast in kW, `[B × P × N × 1]`. Fails on non-finite output.
    pub fn predict(&self, batch: &WindowBatch) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let y = forward(&mut g, &p, &self.config, &self.norm.power, batch)?;
        let out = g.value(y).clone();
        if !out.is_finite() {
            return Err(Error::NonFinite(format!(
                "forecast for windows starting {:?}",
                &batch.origins[..batch.origins.len().min(4)]
            )));
        }
        Ok(out)
    }

    /// Runs one forward pass recording every intermediate shape.
    pub fn trace(&self, batch: &WindowBatch) -> Result<ShapeLedger> {
        let mut g = Graph::new();
        let p = self.params.bind_frozen(&mut g);
        let mut ledger = ShapeLedger::recording();
        forward_detailed(&mut g, &p, &self.config, &self.norm.power, batch, &mut ledger)?;
        Ok(ledger)
    }

    /// Writes `model.manifest` and `model.bin` into `dir`.
    pub fn save(&self, dir: &Path) -> Result<()> {
        save_archive(dir, STEM, &model_meta(&self.config, &self.norm), &self.params)
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let (meta, params) = load_archive::<T>(dir, STEM)?;
        let (config, norm) = parse_model_meta(&meta)?;
        let expected = param_specs(&config);
        if expected.len() != params.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, configuration needs {}",
                params.len(),
                expected.len()
            )));
        }
        for spec in expected {
            match params.get(&spec.name) {
                Some(t) if t.dims() == spec.dims.as_slice() => {}
                Some(t) => {
                    return Err(Error::Checkpoint(format!(
                        "'{}' has shape {:?}, expected {:?}",
                        spec.name,
                        t.dims(),
                        spec.dims
                    )))
                }
                None => return Err(Error::Checkpoint(format!("missing tensor '{}'", spec.name))),
            }
        }
        Ok(Model { config, params, norm })
    }
}

fn stats_text(s: &ColumnStats) -> String {
    format!("{:?} {:?} {}", s.mean, s.std, s.zero_variance)
}

fn parse_stats(text: &str) -> Result<(ColumnStats, &str)> {
    let mut it = text.splitn(4, ' ');
    let bad = || Error::Checkpoint(format!("malformed scaling entry '{text}'"));
    let mean = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let std = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    let zero_variance = it.next().and_then(|v| v.parse().ok()).ok_or_else(bad)?;
    Ok((
        ColumnStats {
            mean,
            std,
            zero_variance,
        },
        it.next().unwrap_or(""),
    ))
}

/// Manifest entries describing a model: architecture and scaling.
pub fn model_meta(cfg: &ModelConfig, norm: &NormStats) -> Vec<(String, String)> {
    let mut meta: Vec<(String, String)> = cfg
        .to_pairs()
        .into_iter()
        .map(|(k, v)| (format!("config.{k}"), v))
        .collect();
    meta.push(("norm.power".into(), stats_text(&norm.power)));
    for (i, (name, s)) in norm.exo_names.iter().zip(&norm.exo).enumerate() {
        meta.push((format!("norm.exo.{i}"), format!("{} {name}", stats_text(s))));
    }
    meta
}

pub fn parse_model_meta(meta: &[(String, String)]) -> Result<(ModelConfig, NormStats)> {
    let mut cfg = ModelConfig::default();
    let mut power = None;
    let mut exo = Vec::new();
    for (k, v) in meta {
        if let Some(key) = k.strip_prefix("config.") {
            cfg.set(key, v).map_err(|e| Error::Checkpoint(e.to_string()))?;
        } else if k == "norm.power" {
            power = Some(parse_stats(v)?.0);
        } else if let Some(i) = k.strip_prefix("norm.exo.") {
            let i: usize = i
                .parse()
                .map_err(|_| Error::Checkpoint(format!("bad scaling key '{k}'")))?;
            let (s, name) = parse_stats(v)?;
            exo.push((i, name.to_string(), s));
        }
    }
    exo.sort_by_key(|e| e.0);
    if exo.iter().enumerate().any(|(i, e)| e.0 != i) {
        return Err(Error::Checkpoint("exogenous scaling entries are not contiguous".into()));
    }
    let power = power.ok_or_else(|| Error::Checkpoint("missing power scaling".into()))?;
    cfg.validate().map_err(|e| Error::Checkpoint(e.to_string()))?;
    let norm = NormStats {
        power,
        exo_names: exo.iter().map(|e| e.1.clone()).collect(),
        exo: exo.iter().map(|e| e.2).collect(),
    };
    if norm.exo.len() != cfg.exo {
        return Err(Error::Checkpoint(format!(
            "scaling covers {} exogenous columns, model expects {}",
            norm.exo.len(),
            cfg.exo
        )));
    }
    Ok((cfg, norm))
}
