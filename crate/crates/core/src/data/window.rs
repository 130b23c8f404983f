use chrono::Duration;

use crate::data::{temporal_index, FarmSeries};
use crate::error::{Error, Result};

/// Window geometry shared by training, evaluation and inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct WindowSpec {
    pub lookback: usize,
    pub horizon: usize,
    pub stride: usize,
    /// Extend the calendar features over the forecast horizon (H' = H + P)
    /// instead of the lookback only (H' = H).
    pub future_time_features: bool,
}

impl WindowSpec {
    pub fn new(lookback: usize, horizon: usize) -> Self {
        WindowSpec {
            lookback,
            horizon,
            stride: 1,
            future_time_features: false,
        }
    }

    /// Length H' of the calendar-feature sequence.
    pub fn time_len(&self) -> usize {
        if self.future_time_features {
            self.lookback + self.horizon
        } else {
            self.lookback
        }
    }

    fn validate(&self) -> Result<()> {
        if self.lookback == 0 || self.horizon == 0 || self.stride == 0 {
            return Err(Error::Contract(format!(
                "lookback, horizon and stride must be positive, got {self:?}"
            )));
        }
        Ok(())
    }
}

/// Enumerates window origins `t` (index of the last lookback step). Lookback
/// covers `[t−H+1, t]` and targets `[t+1, t+P]`.
pub fn make_windows(fs: &FarmSeries, spec: &WindowSpec) -> Result<Vec<usize>> {
    spec.validate()?;
    let need = spec.lookback + spec.horizon;
    if fs.len() < need {
        return Err(Error::Data(format!(
            "series of length {} is shorter than lookback + horizon = {need}",
            fs.len()
        )));
    }
    Ok((spec.lookback - 1..=fs.len() - spec.horizon - 1)
        .step_by(spec.stride)
        .collect())
}

/// A batch of samples in model layout.
#[derive(Clone, Debug, PartialEq)]
pub struct WindowBatch {
    pub batch: usize,
    pub lookback: usize,
    pub horizon: usize,
    pub turbines: usize,
    pub exo: usize,
    pub time_len: usize,
    /// `[B × H × N × 1]` standardized power.
    pub x: Vec<f64>,
    /// `[B × H × N × C]` standardized exogenous statics.
    pub z_static: Vec<f64>,
    /// `[B × H' × 3]` (slot of day, month, day of year).
    pub t_idx: Vec<usize>,
    /// `[B × P × N × 1]` labels in kW; empty for inference batches.
    pub y: Vec<f64>,
    /// Window origin per sample.
    pub origins: Vec<usize>,
}

impl WindowBatch {
    /// Training/evaluation batch with targets.
    pub fn gather(fs: &FarmSeries, origins: &[usize], spec: &WindowSpec) -> Result<Self> {
        for &t in origins {
            if t + spec.horizon >= fs.len() {
                return Err(Error::Contract(format!(
                    "window at {t} needs targets beyond the series end {}",
                    fs.len()
                )));
            }
        }
        let mut batch = Self::inputs(fs, origins, spec)?;
        let n = fs.n_turbines();
        batch.y.reserve(origins.len() * spec.horizon * n);
        for &t in origins {
            batch
                .y
                .extend_from_slice(&fs.target_kw[(t + 1) * n..(t + 1 + spec.horizon) * n]);
        }
        Ok(batch)
    }

    /// Inputs only; origins may reach the last step of the series.
    pub fn inputs(fs: &FarmSeries, origins: &[usize], spec: &WindowSpec) -> Result<Self> {
        spec.validate()?;
        if fs.scaling.is_none() {
            return Err(Error::Contract("window inputs must come from a standardized series".into()));
        }
        if origins.is_empty() {
            return Err(Error::Contract("empty batch".into()));
        }
        let (n, c, h) = (fs.n_turbines(), fs.n_exo(), spec.lookback);
        let time_len = spec.time_len();
        let b = origins.len();
        let mut x = Vec::with_capacity(b * h * n);
        let mut z_static = Vec::with_capacity(b * h * n * c);
        let mut t_idx = Vec::with_capacity(b * time_len * 3);
        for &t in origins {
            if t + 1 < h || t >= fs.len() {
                return Err(Error::Contract(format!(
                    "window origin {t} needs {h} lookback steps inside a series of length {}",
                    fs.len()
                )));
            }
            let start = t + 1 - h;
            x.extend_from_slice(&fs.power[start * n..(t + 1) * n]);
            z_static.extend_from_slice(&fs.exo[start * n * c..(t + 1) * n * c]);
            for k in 0..time_len {
                let ts = fs.timestamps[start] + Duration::seconds(fs.cadence_secs * k as i64);
                t_idx.extend(temporal_index(ts, fs.cadence_secs)?.as_array());
            }
        }
        Ok(WindowBatch {
            batch: b,
            lookback: h,
            horizon: spec.horizon,
            turbines: n,
            exo: c,
            time_len,
            x,
            z_static,
            t_idx,
            y: Vec::new(),
            origins: origins.to_vec(),
        })
    }

    pub fn has_targets(&self) -> bool {
        !self.y.is_empty()
    }

    /// Target for sample `b`, step `p`, turbine `i`.
    pub fn target(&self, b: usize, p: usize, i: usize) -> f64 {
        self.y[(b * self.horizon + p) * self.turbines + i]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::testing::series;
    use crate::data::{apply_zscore, fit_zscore};

    fn scaled(t: usize, n: usize) -> FarmSeries {
        let fs = series(&(0..t).map(|k| vec![k as f64; n]).collect::<Vec<_>>());
        let stats = fit_zscore(&fs).unwrap();
        apply_zscore(&fs, &stats).unwrap()
    }

    #[test]
    fn window_counts() {
        let fs = scaled(100, 1);
        assert_eq!(make_windows(&fs, &WindowSpec::new(36, 12)).unwrap().len(), 53);
        let fs = scaled(48, 1);
        assert_eq!(make_windows(&fs, &WindowSpec::new(36, 12)).unwrap(), vec![35]);
        let mut spec = WindowSpec::new(4, 2);
        spec.stride = 3;
        let fs = scaled(20, 1);
        assert_eq!(make_windows(&fs, &spec).unwrap(), vec![3, 6, 9, 12, 15]);
    }

    #[test]
    fn non_positive_geometry_rejected() {
        let fs = scaled(20, 1);
        assert!(make_windows(&fs, &WindowSpec::new(0, 2)).is_err());
        assert!(make_windows(&fs, &WindowSpec::new(4, 0)).is_err());
        assert!(make_windows(&scaled(5, 1), &WindowSpec::new(4, 2)).is_err());
    }

    #[test]
    fn targets_follow_lookback() {
        let fs = scaled(30, 2);
        let spec = WindowSpec::new(5, 3);
        let origins = make_windows(&fs, &spec).unwrap();
        let batch = WindowBatch::gather(&fs, &origins, &spec).unwrap();
        assert_eq!(batch.x.len(), origins.len() * 5 * 2);
        assert_eq!(batch.y.len(), origins.len() * 3 * 2);
        for (b, &t) in origins.iter().enumerate() {
            // labels are raw kW equal to the time index
            assert_eq!(batch.target(b, 0, 1), (t + 1) as f64);
            assert_eq!(batch.target(b, 2, 0), (t + 3) as f64);
            let lookback_last = fs.target_kw[t * 2];
            assert!(lookback_last < batch.target(b, 0, 0));
        }
    }

    #[test]
    fn time_indices_cover_lookback_or_horizon() {
        let fs = scaled(300, 1);
        let mut spec = WindowSpec::new(4, 2);
        let batch = WindowBatch::gather(&fs, &[200], &spec).unwrap();
        assert_eq!(batch.t_idx.len(), 4 * 3);
        // origin 200 → lookback starts at step 197 = slot 197 - 144 = 53 on day 1
        assert_eq!(&batch.t_idx[..3], &[53, 0, 1]);
        spec.future_time_features = true;
        let batch = WindowBatch::inputs(&fs, &[299], &spec).unwrap();
        assert_eq!(batch.time_len, 6);
        // horizon steps run past the end of the series but stay on the grid
        assert_eq!(batch.t_idx[5 * 3], (296 + 5 - 288) % 144);
    }
}
