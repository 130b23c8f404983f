//! Farm telemetry: ingest, imputation, scaling, chronological splits and
//! sliding windows.
//!
//! Series are stored as flat row-major buffers indexed `[time][turbine][..]`.
//! All turbines share one regular timestamp grid; cells absent from the
//! source are marked in `missing` until [`fill_missing`] imputes them.

mod csv_io;
mod fill;
mod split;
mod synth;
mod temporal;
mod window;
mod zscore;

use chrono::NaiveDateTime;

pub use csv_io::{parse_csv, parse_csv_reader, write_csv, CsvSchema, TimeColumns};
pub use fill::fill_missing;
pub use split::{split_7_2_1, SplitBounds};
pub use synth::{generate_synthetic, SynthConfig};
pub use temporal::{slots_per_day, temporal_index, temporal_indices, TemporalIndex, MONTHS, YEAR_DAYS};
pub use window::{make_windows, WindowBatch, WindowSpec};
pub use zscore::{apply_zscore, fit_zscore, invert_zscore, ColumnStats, NormStats};

use crate::error::{Error, Result};

/// Aligned per-turbine power and exogenous series on a shared time axis.
#[derive(Clone, Debug, PartialEq)]
pub struct FarmSeries {
    pub timestamps: Vec<NaiveDateTime>,
    /// Seconds between consecutive timestamps.
    pub cadence_secs: i64,
    pub turbines: Vec<String>,
    pub exo_names: Vec<String>,
    /// `[T × N]` power used as model input; standardized once `scaling` is set.
    pub power: Vec<f64>,
    /// `[T × N × C]` exogenous static covariates.
    pub exo: Vec<f64>,
    /// `[T × N × (C+1)]`, channel 0 is power.
    pub missing: Vec<bool>,
    /// `[T × N]` power labels in kW. Never standardized.
    pub target_kw: Vec<f64>,
    /// Statistics applied to `power`/`exo`, if any.
    pub scaling: Option<NormStats>,
}

impl FarmSeries {
    pub fn len(&self) -> usize {
        self.timestamps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.timestamps.is_empty()
    }

    pub fn n_turbines(&self) -> usize {
        self.turbines.len()
    }

    pub fn n_exo(&self) -> usize {
        self.exo_names.len()
    }

    pub fn power_at(&self, t: usize, turbine: usize) -> f64 {
        self.power[t * self.n_turbines() + turbine]
    }

    pub fn exo_at(&self, t: usize, turbine: usize, column: usize) -> f64 {
        let (n, c) = (self.n_turbines(), self.n_exo());
        self.exo[(t * n + turbine) * c + column]
    }

    pub fn is_missing(&self, t: usize, turbine: usize, channel: usize) -> bool {
        let (n, c) = (self.n_turbines(), self.n_exo());
        self.missing[(t * n + turbine) * (c + 1) + channel]
    }

    pub fn missing_count(&self) -> usize {
        self.missing.iter().filter(|&&m| m).count()
    }

    /// Column name of channel `ch` (0 = power).
    pub fn channel_name(&self, ch: usize) -> &str {
        if ch == 0 {
            "power"
        } else {
            &self.exo_names[ch - 1]
        }
    }

    /// Time range `[start, end)` as a new series.
    pub fn slice_time(&self, start: usize, end: usize) -> Result<FarmSeries> {
        if start >= end || end > self.len() {
            return Err(Error::Contract(format!(
                "time slice {start}..{end} outside series of length {}",
                self.len()
            )));
        }
        let (n, c) = (self.n_turbines(), self.n_exo());
        Ok(FarmSeries {
            timestamps: self.timestamps[start..end].to_vec(),
            cadence_secs: self.cadence_secs,
            turbines: self.turbines.clone(),
            exo_names: self.exo_names.clone(),
            power: self.power[start * n..end * n].to_vec(),
            exo: self.exo[start * n * c..end * n * c].to_vec(),
            missing: self.missing[start * n * (c + 1)..end * n * (c + 1)].to_vec(),
            target_kw: self.target_kw[start * n..end * n].to_vec(),
            scaling: self.scaling.clone(),
        })
    }

    pub(crate) fn check_consistent(&self) -> Result<()> {
        let (t, n, c) = (self.len(), self.n_turbines(), self.n_exo());
        let ok = self.power.len() == t * n
            && self.target_kw.len() == t * n
            && self.exo.len() == t * n * c
            && self.missing.len() == t * n * (c + 1);
        if !ok {
            return Err(Error::Contract(format!(
                "farm series buffers inconsistent with T={t}, N={n}, C={c}"
            )));
        }
        Ok(())
    }
}

/// Chronological train/val/test segments, standardized with train-only statistics.
#[derive(Clone, Debug)]
pub struct PreparedData {
    pub train: FarmSeries,
    pub val: FarmSeries,
    pub test: FarmSeries,
    pub stats: NormStats,
}

/// Fill, split, fit on train, standardize all three splits.
pub fn prepare(raw: &FarmSeries, lookback: usize, horizon: usize) -> Result<PreparedData> {
    let filled = fill_missing(raw)?;
    let (train, val, test) = split_7_2_1(&filled, lookback, horizon)?;
    let stats = fit_zscore(&train)?;
    Ok(PreparedData {
        train: apply_zscore(&train, &stats)?,
        val: apply_zscore(&val, &stats)?,
        test: apply_zscore(&test, &stats)?,
        stats,
    })
}

#[cfg(test)]
pub(crate) mod testing {
    use chrono::NaiveDate;

    use super::*;

    /// Small hand-built series: `power[t][i]` from `values`, one exogenous column equal to `t`.
    pub fn series(values: &[Vec<f64>]) -> FarmSeries {
        let t = values.len();
        let n = values[0].len();
        let start = NaiveDate::from_ymd_opt(2021, 1, 1).unwrap().and_hms_opt(0, 0, 0).unwrap();
        let timestamps = (0..t)
            .map(|k| start + chrono::Duration::seconds(600 * k as i64))
            .collect();
        let power: Vec<f64> = values.iter().flatten().copied().collect();
        let exo: Vec<f64> = (0..t).flat_map(|k| vec![k as f64; n]).collect();
        let mut missing = vec![false; t * n * 2];
        for (k, v) in power.iter().enumerate() {
            missing[k * 2] = v.is_nan();
        }
        FarmSeries {
            timestamps,
            cadence_secs: 600,
            turbines: (0..n).map(|i| format!("T{i}")).collect(),
            exo_names: vec!["step".into()],
            target_kw: power.clone(),
            power,
            exo,
            missing,
            scaling: None,
        }
    }
}
