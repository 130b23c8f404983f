use std::fmt::Write as _;
use std::io::Write;

use crate::data::{make_windows, FarmSeries, WindowBatch, WindowSpec};
use crate::error::{Error, Result};
use crate::model::Model;
use crate::numerics::Scalar;

/// Error of one forecast step, pooled over samples and turbines.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HorizonMetric {
    /// 1-based forecast step.
    pub step: usize,
    pub mae: f64,
    pub rmse: f64,
}

/// MAE and RMSE in kW over all (sample, step, turbine) elements.
#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub mae: f64,
    pub rmse: f64,
    pub per_horizon: Vec<HorizonMetric>,
    /// Number of forecast windows.
    pub count: usize,
}

/// Running sums for a [`MetricReport`].
#[derive(Clone, Debug)]
pub struct MetricAccumulator {
    abs: Vec<f64>,
    sq: Vec<f64>,
    elements: Vec<usize>,
    windows: usize,
}

impl MetricAccumulator {
    pub fn new(horizon: usize) -> Self {
        MetricAccumulator {
            abs: vec![0.0; horizon],
            sq: vec![0.0; horizon],
            elements: vec![0; horizon],
            windows: 0,
        }
    }

    /// Adds one error at forecast step `p` (0-based).
    pub fn push(&mut self, p: usize, err: f64) {
        self.abs[p] += err.abs();
        self.sq[p] += err * err;
        self.elements[p] += 1;
    }

    /// Adds `[B × P × N]` forecasts against a batch's targets.
    pub fn push_batch(&mut self, pred: &[f64], batch: &WindowBatch) -> Result<()> {
        if pred.len() != batch.y.len() || batch.horizon != self.abs.len() {
            return Err(Error::shape(
                "metrics",
                format!("{} forecasts against {} targets", pred.len(), batch.y.len()),
            ));
        }
        let n = batch.turbines;
        for (k, (&yh, &y)) in pred.iter().zip(&batch.y).enumerate() {
            self.push((k / n) % batch.horizon, yh - y);
        }
        self.windows += batch.batch;
        Ok(())
    }

    pub fn add_windows(&mut self, count: usize) {
        self.windows += count;
    }

    pub fn finish(&self) -> Result<MetricReport> {
        let total: usize = self.elements.iter().sum();
        if total == 0 {
            return Err(Error::Data("cannot compute metrics over an empty evaluation set".into()));
        }
        let per_horizon = (0..self.abs.len())
            .map(|p| {
                let n = self.elements[p].max(1) as f64;
                HorizonMetric {
                    step: p + 1,
                    mae: self.abs[p] / n,
                    rmse: (self.sq[p] / n).sqrt(),
                }
            })
            .collect();
        Ok(MetricReport {
            mae: self.abs.iter().sum::<f64>() / total as f64,
            rmse: (self.sq.iter().sum::<f64>() / total as f64).sqrt(),
            per_horizon,
            count: self.windows,
        })
    }
}

impl MetricReport {
    /// Report over `(step, error)` pairs; handy for small hand-built cases.
    pub fn from_errors(horizon: usize, errors: impl IntoIterator<Item = (usize, f64)>) -> Result<Self> {
        let mut acc = MetricAccumulator::new(horizon);
        for (p, e) in errors {
            if p >= horizon {
                return Err(Error::Contract(format!("step {p} outside horizon {horizon}")));
            }
            acc.push(p, e);
        }
        acc.add_windows(1);
        acc.finish()
    }

    /// `horizon_step,mae,rmse`, one row per step.
    pub fn write_horizon_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["horizon_step", "mae", "rmse"])?;
        for h in &self.per_horizon {
            w.write_record([h.step.to_string(), format!("{:?}", h.mae), format!("{:?}", h.rmse)])?;
        }
        w.flush().map_err(|e| Error::io("<csv>", e))
    }

    /// Human-readable summary with the per-step breakdown.
    pub fn table(&self, title: &str) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "{title}: MAE {:.3} kW, RMSE {:.3} kW over {} windows", self.mae, self.rmse, self.count);
        let _ = writeln!(s, "  step      MAE     RMSE");
        for h in &self.per_horizon {
            let _ = writeln!(s, "  {:>4} {:>8.3} {:>8.3}", h.step, h.mae, h.rmse);
        }
        s
    }
}

/// Writes `name,mae,rmse,count` rows for several reports.
pub fn write_summary_csv<W: Write>(rows: &[(String, MetricReport)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["name", "mae", "rmse", "count"])?;
    for (name, r) in rows {
        w.write_record([name.clone(), format!("{:?}", r.mae), format!("{:?}", r.rmse), r.count.to_string()])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Window layout a model consumes, with stride 1.
pub fn eval_spec(model_cfg: &crate::model::ModelConfig) -> WindowSpec {
    WindowSpec {
        future_time_features: model_cfg.future_time_features,
        ..WindowSpec::new(model_cfg.lookback, model_cfg.horizon)
    }
}

/// Forecast error of `model` over every window of `fs`, in kW.
pub fn evaluate<T: Scalar>(model: &Model<T>, fs: &FarmSeries, batch_size: usize) -> Result<MetricReport> {
    let spec = eval_spec(&model.config);
    let origins = make_windows(fs, &spec)?;
    evaluate_windows(model, fs, &origins, batch_size)
}

/// Forecast error over the given window origins.
pub fn evaluate_windows<T: Scalar>(
    model: &Model<T>,
    fs: &FarmSeries,
    origins: &[usize],
    batch_size: usize,
) -> Result<MetricReport> {
    if origins.is_empty() {
        return Err(Error::Data("evaluation set has no windows".into()));
    }
    let spec = eval_spec(&model.config);
    let mut acc = MetricAccumulator::new(spec.horizon);
    for chunk in origins.chunks(batch_size.max(1)) {
        let batch = WindowBatch::gather(fs, chunk, &spec)?;
        let pred = model.predict(&batch)?.to_f64();
        acc.push_batch(&pred, &batch)?;
    }
    acc.finish()
}

/// Last observed power repeated over the horizon.
pub fn persistence(fs: &FarmSeries, spec: &WindowSpec) -> Result<MetricReport> {
    let n = fs.n_turbines();
    let mut acc = MetricAccumulator::new(spec.horizon);
    let origins = make_windows(fs, &WindowSpec { stride: 1, ..*spec })?;
    for &t in &origins {
        for p in 0..spec.horizon {
            for i in 0..n {
                acc.push(p, fs.target_kw[t * n + i] - fs.target_kw[(t + 1 + p) * n + i]);
            }
        }
    }
    acc.add_windows(origins.len());
    acc.finish()
}

/// A constant forecast equal to the mean training power.
pub fn training_mean(train: &FarmSeries, fs: &FarmSeries, spec: &WindowSpec) -> Result<MetricReport> {
    if train.target_kw.is_empty() {
        return Err(Error::Data("training split is empty".into()));
    }
    let mean = train.target_kw.iter().sum::<f64>() / train.target_kw.len() as f64;
    let n = fs.n_turbines();
    let mut acc = MetricAccumulator::new(spec.horizon);
    let origins = make_windows(fs, &WindowSpec { stride: 1, ..*spec })?;
    for &t in &origins {
        for p in 0..spec.horizon {
            for i in 0..n {
                acc.push(p, mean - fs.target_kw[(t + 1 + p) * n + i]);
            }
        }
    }
    acc.add_windows(origins.len());
    acc.finish()
}

/// Both reference predictors on `fs`, labeled `persistence` and `train_mean`.
pub fn baselines(train: &FarmSeries, fs: &FarmSeries, spec: &WindowSpec) -> Result<Vec<(String, MetricReport)>> {
    Ok(vec![
        ("persistence".to_string(), persistence(fs, spec)?),
        ("train_mean".to_string(), training_mean(train, fs, spec)?),
    ])
}
