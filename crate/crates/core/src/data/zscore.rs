use log::warn;

use crate::data::FarmSeries;
use crate::error::{Error, Result};

/// Mean and population standard deviation of one column, pooled over time and turbines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ColumnStats {
    pub mean: f64,
    pub std: f64,
    /// Set when the column was constant and `std` was forced to 1.
    pub zero_variance: bool,
}

impl ColumnStats {
    fn fit(values: impl Iterator<Item = f64> + Clone) -> Result<Self> {
        let mut count = 0usize;
        let mut sum = 0.0;
        for v in values.clone() {
            if !v.is_finite() {
                return Err(Error::Data("cannot fit z-score on non-finite values; fill first".into()));
            }
            sum += v;
            count += 1;
        }
        if count == 0 {
            return Err(Error::Data("cannot fit z-score on an empty column".into()));
        }
        let mean = sum / count as f64;
        let var = values.map(|v| (v - mean) * (v - mean)).sum::<f64>() / count as f64;
        let std = var.sqrt();
        if std > 0.0 {
            Ok(ColumnStats {
                mean,
                std,
                zero_variance: false,
            })
        } else {
            Ok(ColumnStats {
                mean,
                std: 1.0,
                zero_variance: true,
            })
        }
    }

    pub fn normalize(&self, v: f64) -> f64 {
        (v - self.mean) / self.std
    }

    pub fn denormalize(&self, z: f64) -> f64 {
        z * self.std + self.mean
    }
}

/// Z-score statistics: one pair for power plus one per exogenous column.
#[derive(Clone, Debug, PartialEq)]
pub struct NormStats {
    pub power: ColumnStats,
    pub exo_names: Vec<String>,
    pub exo: Vec<ColumnStats>,
}

impl NormStats {
    /// Identity scaling, handy for tests and synthetic toy batches.
    pub fn identity(exo_names: Vec<String>) -> Self {
        let unit = ColumnStats {
            mean: 0.0,
            std: 1.0,
            zero_variance: false,
        };
        NormStats {
            power: unit,
            exo: vec![unit; exo_names.len()],
            exo_names,
        }
    }

    pub fn flagged_columns(&self) -> Vec<&str> {
        let mut out = Vec::new();
        if self.power.zero_variance {
            out.push("power");
        }
        for (name, s) in self.exo_names.iter().zip(&self.exo) {
            if s.zero_variance {
                out.push(name.as_str());
            }
        }
        out
    }
}

/// Fits statistics on a (training) split. Series must already be filled.
pub fn fit_zscore(train: &FarmSeries) -> Result<NormStats> {
    train.check_consistent()?;
    if train.scaling.is_some() {
        return Err(Error::Contract("fit_zscore expects an unscaled series".into()));
    }
    let c = train.n_exo();
    let power = ColumnStats::fit(train.power.iter().copied())?;
    let exo = (0..c)
        .map(|col| ColumnStats::fit(train.exo.iter().skip(col).step_by(c).copied()))
        .collect::<Result<Vec<_>>>()?;
    let stats = NormStats {
        power,
        exo_names: train.exo_names.clone(),
        exo,
    };
    let flagged = stats.flagged_columns();
    if !flagged.is_empty() {
        warn!("zero-variance columns scaled with std = 1: {}", flagged.join(", "));
    }
    Ok(stats)
}

/// Standardizes power-as-input and exogenous columns; labels stay in kW.
pub fn apply_zscore(fs: &FarmSeries, stats: &NormStats) -> Result<FarmSeries> {
    fs.check_consistent()?;
    if fs.scaling.is_some() {
        return Err(Error::Contract("series is already standardized".into()));
    }
    if stats.exo.len() != fs.n_exo() {
        return Err(Error::Contract(format!(
            "statistics cover {} exogenous columns, series has {}",
            stats.exo.len(),
            fs.n_exo()
        )));
    }
    let c = fs.n_exo();
    let mut out = fs.clone();
    out.power.iter_mut().for_each(|v| *v = stats.power.normalize(*v));
    for (i, v) in out.exo.iter_mut().enumerate() {
        *v = stats.exo[i % c].normalize(*v);
    }
    out.scaling = Some(stats.clone());
    Ok(out)
}

/// Undoes [`apply_zscore`].
pub fn invert_zscore(fs: &FarmSeries) -> Result<FarmSeries> {
    let stats = fs
        .scaling
        .as_ref()
        .ok_or_else(|| Error::Contract("series is not standardized".into()))?;
    let c = fs.n_exo();
    let mut out = fs.clone();
    out.power.iter_mut().for_each(|v| *v = stats.power.denormalize(*v));
    for (i, v) in out.exo.iter_mut().enumerate() {
        *v = stats.exo[i % c].denormalize(*v);
    }
    out.scaling = None;
    Ok(out)
}
