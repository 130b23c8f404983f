use std::fs::{self, File};
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{bail, Context, Result};
use chrono::Duration;
use log::{info, warn};

use dxformer::data::{
    apply_zscore, fill_missing, generate_synthetic, parse_csv, prepare, slots_per_day, split_7_2_1, write_csv,
    CsvSchema, FarmSeries, PreparedData, WindowBatch, WindowSpec,
};
use dxformer::model::{Model, Variant};
use dxformer::numerics::{GradFault, GradReport, Scalar};
use dxformer::training::{
    baselines, end_to_end_gradcheck, eval_spec, evaluate, layout, write_summary_csv, EndToEndCheck, MetricReport,
    Precision, TrainOutcome, Trainer,
};

use crate::config::{ConfigError, RunConfig, Source};

/// Command-line settings that take precedence over the config file.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub variant: Option<Variant>,
    pub horizon: Option<usize>,
    pub out: Option<PathBuf>,
}

/// Failures that are neither configuration nor data problems.
#[derive(Debug, thiserror::Error)]
pub enum CommandError {
    #[error("gradient check failed for {failed} of {total} parameters (max relative error {max:.3e})")]
    GradCheckFailed { failed: usize, total: usize, max: f64 },
}

/// Reads the config file and applies the overrides.
pub fn resolve(path: &Path, ov: &Overrides) -> Result<RunConfig> {
    let mut cfg = RunConfig::load(path)?;
    if let Some(s) = ov.seed {
        cfg.train.seed = s;
    }
    if let Some(v) = ov.variant {
        cfg.model.variant = v;
    }
    if let Some(h) = ov.horizon {
        cfg.model.horizon = h;
    }
    if let Some(o) = &ov.out {
        cfg.out = o.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Telemetry in kW as configured, before imputation.
pub fn load_raw(cfg: &RunConfig) -> Result<FarmSeries> {
    match cfg.data.source {
        Source::Synthetic => Ok(generate_synthetic(&cfg.data.synth)?),
        Source::Csv => {
            let path = cfg.data.path.as_ref().ok_or_else(|| ConfigError::Invalid("csv source without a path".into()))?;
            Ok(parse_csv(path, &cfg.data.schema)?)
        }
    }
}

/// Takes farm size, exogenous width and day length from the data.
pub fn fit_to_data(cfg: &mut RunConfig, fs: &FarmSeries) -> Result<()> {
    let m = &mut cfg.model;
    m.turbines = fs.n_turbines();
    m.exo = fs.n_exo();
    m.slots_per_day = slots_per_day(fs.cadence_secs)?;
    m.validate()?;
    Ok(())
}

/// Writes the synthetic farm as `synthetic.csv` under the run directory.
pub fn synth(cfg: &RunConfig) -> Result<PathBuf> {
    let fs = generate_synthetic(&cfg.data.synth)?;
    cfg.write_resolved()?;
    let path = cfg.out.join("synthetic.csv");
    let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    write_csv(&fs, &CsvSchema::synthetic(fs.exo_names.clone()), BufWriter::new(file))?;
    info!(
        "wrote {} ({} turbines × {} steps, {} missing cells)",
        path.display(),
        fs.n_turbines(),
        fs.len(),
        fs.missing_count()
    );
    Ok(path)
}

/// What a finished training run produced.
#[derive(Clone, Debug)]
pub struct TrainReport {
    pub outcome: TrainOutcome,
    pub params: usize,
    pub test: MetricReport,
    pub baselines: Vec<(String, MetricReport)>,
    pub seconds: f64,
}

/// Trains, keeps the best-on-validation weights and scores them on test.
///
/// Writes `config.ini`, the training log, `checkpoint/`, `state/`,
/// `test_metrics.csv` and `test_per_horizon.csv` into the run directory.
pub fn train(cfg: &mut RunConfig, resume: bool) -> Result<TrainReport> {
    let raw = load_raw(cfg)?;
    fit_to_data(cfg, &raw)?;
    cfg.write_resolved()?;
    let data = prepare(&raw, cfg.model.lookback, cfg.model.horizon)?;
    match cfg.train.precision {
        Precision::F64 => train_with::<f64>(cfg, &data, resume),
        Precision::F32 => train_with::<f32>(cfg, &data, resume),
    }
}

fn train_with<T: Scalar>(cfg: &RunConfig, data: &PreparedData, resume: bool) -> Result<TrainReport> {
    let start = Instant::now();
    let mut trainer = if resume {
        let state = cfg.out.join(layout::STATE);
        let mut t = Trainer::<T>::load_state(&state).with_context(|| format!("resuming from {}", state.display()))?;
        if t.model.config != cfg.model {
            bail!(ConfigError::Invalid("the saved state was trained with a different [model] section".into()));
        }
        t.config.max_epochs = cfg.train.max_epochs;
        t.config.patience = cfg.train.patience;
        info!("resuming at epoch {}", t.epoch);
        t
    } else {
        let model = Model::<T>::new(cfg.model.clone(), data.stats.clone(), cfg.train.seed)?;
        Trainer::new(model, cfg.train.clone())?
    };
    let params = trainer.model.params.numel();
    info!("{} parameters, variant {}", params, cfg.model.variant);
    let outcome = trainer.fit(data, Some(&cfg.out))?;
    if outcome.stopped_early {
        info!("stopped early after epoch {}", outcome.history.len() - 1);
    }
    let test = evaluate(&trainer.model, &data.test, cfg.train.batch_size)?;
    let refs = baselines(&data.train, &data.test, &eval_spec(&cfg.model))?;
    let mut rows = vec![("model".to_string(), test.clone())];
    rows.extend(refs.iter().cloned());
    write_metrics(&cfg.out, "test", &rows)?;
    println!("{}", test.table("test"));
    for (name, r) in &refs {
        println!("{name}: MAE {:.3} kW, RMSE {:.3} kW", r.mae, r.rmse);
    }
    Ok(TrainReport {
        outcome,
        params,
        test,
        baselines: refs,
        seconds: start.elapsed().as_secs_f64(),
    })
}

fn write_metrics(dir: &Path, stem: &str, rows: &[(String, MetricReport)]) -> Result<()> {
    fs::create_dir_all(dir)?;
    let summary = dir.join(format!("{stem}_metrics.csv"));
    write_summary_csv(rows, File::create(&summary)?)?;
    let horizon = dir.join(format!("{stem}_per_horizon.csv"));
    rows[0].1.write_horizon_csv(File::create(&horizon)?)?;
    Ok(())
}

/// Chronological segment selected for evaluation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, clap::ValueEnum)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

/// Scores a checkpoint (default: the run's best) on one split.
pub fn eval(cfg: &RunConfig, checkpoint: Option<&Path>, split: Split) -> Result<MetricReport> {
    match cfg.train.precision {
        Precision::F64 => eval_with::<f64>(cfg, checkpoint, split),
        Precision::F32 => eval_with::<f32>(cfg, checkpoint, split),
    }
}

fn load_model<T: Scalar>(cfg: &RunConfig, checkpoint: Option<&Path>) -> Result<Model<T>> {
    let dir = checkpoint.map_or_else(|| cfg.out.join(layout::CHECKPOINT), Path::to_path_buf);
    Model::<T>::load(&dir).with_context(|| format!("loading checkpoint {}", dir.display()))
}

fn eval_with<T: Scalar>(cfg: &RunConfig, checkpoint: Option<&Path>, split: Split) -> Result<MetricReport> {
    let model = load_model::<T>(cfg, checkpoint)?;
    let raw = load_raw(cfg)?;
    check_farm(&model, &raw)?;
    let filled = fill_missing(&raw)?;
    let (train, val, test) = split_7_2_1(&filled, model.config.lookback, model.config.horizon)?;
    let train = apply_zscore(&train, &model.norm)?;
    let segment = match split {
        Split::Train => train.clone(),
        Split::Val => apply_zscore(&val, &model.norm)?,
        Split::Test => apply_zscore(&test, &model.norm)?,
    };
    let report = evaluate(&model, &segment, cfg.train.batch_size)?;
    let mut rows = vec![("model".to_string(), report.clone())];
    rows.extend(baselines(&train, &segment, &eval_spec(&model.config))?);
    write_metrics(&cfg.out, &format!("eval_{}", split.name()), &rows)?;
    println!("{}", report.table(split.name()));
    Ok(report)
}

fn check_farm<T: Scalar>(model: &Model<T>, fs: &FarmSeries) -> Result<()> {
    if fs.n_turbines() != model.config.turbines || fs.exo_names != model.norm.exo_names {
        bail!(dxformer::Error::Data(format!(
            "data has {} turbines and columns {:?}; the checkpoint expects {} turbines and {:?}",
            fs.n_turbines(),
            fs.exo_names,
            model.config.turbines,
            model.norm.exo_names
        )));
    }
    Ok(())
}

/// Forecasts from the last window of `input` (or of the configured data),
/// or from every window with `all`. Writes `forecast.csv`.
pub fn predict(cfg: &RunConfig, checkpoint: Option<&Path>, input: Option<&Path>, all: bool) -> Result<PathBuf> {
    match cfg.train.precision {
        Precision::F64 => predict_with::<f64>(cfg, checkpoint, input, all),
        Precision::F32 => predict_with::<f32>(cfg, checkpoint, input, all),
    }
}

fn predict_with<T: Scalar>(cfg: &RunConfig, checkpoint: Option<&Path>, input: Option<&Path>, all: bool) -> Result<PathBuf> {
    let model = load_model::<T>(cfg, checkpoint)?;
    let raw = match input {
        Some(path) => parse_csv(path, &cfg.data.schema)?,
        None => load_raw(cfg)?,
    };
    check_farm(&model, &raw)?;
    let fs = apply_zscore(&fill_missing(&raw)?, &model.norm)?;
    let spec = WindowSpec {
        future_time_features: model.config.future_time_features,
        ..WindowSpec::new(model.config.lookback, model.config.horizon)
    };
    let (h, p, n) = (spec.lookback, spec.horizon, fs.n_turbines());
    if fs.len() < h {
        bail!(dxformer::Error::Data(format!("{} steps are fewer than the lookback {h}", fs.len())));
    }
    let origins: Vec<usize> = if all { (h - 1..fs.len()).collect() } else { vec![fs.len() - 1] };
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("forecast.csv");
    let mut w = csv::Writer::from_writer(BufWriter::new(File::create(&path)?));
    w.write_record(["turbine", "timestamp", "horizon_step", "power_kw"])?;
    for chunk in origins.chunks(cfg.train.batch_size) {
        let batch = WindowBatch::inputs(&fs, chunk, &spec)?;
        let y = model.predict(&batch)?.to_f64();
        for (b, &t) in chunk.iter().enumerate() {
            for i in 0..n {
                for step in 0..p {
                    let ts = fs.timestamps[t] + Duration::seconds(fs.cadence_secs * (step as i64 + 1));
                    w.write_record([
                        fs.turbines[i].clone(),
                        ts.format("%Y-%m-%d %H:%M:%S").to_string(),
                        (step + 1).to_string(),
                        format!("{:.3}", y[(b * p + step) * n + i]),
                    ])?;
                }
            }
        }
    }
    w.flush()?;
    info!("wrote {} windows × {n} turbines × {p} steps to {}", origins.len(), path.display());
    Ok(path)
}

/// End-to-end finite-difference check at toy scale; fails unless every
/// parameter is within tolerance. Writes `gradcheck.csv`.
pub fn gradcheck(cfg: &RunConfig, seed: Option<u64>, corrupt_backward: bool) -> Result<GradReport> {
    let mut check = EndToEndCheck::default();
    if let Some(s) = seed {
        check.seed = s;
    }
    let fault = if corrupt_backward { GradFault::MatmulLhs } else { GradFault::None };
    let start = Instant::now();
    let report = end_to_end_gradcheck(&check, fault)?;
    fs::create_dir_all(&cfg.out)?;
    let path = cfg.out.join("gradcheck.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(["parameter", "elements", "max_rel_error", "worst_index", "analytic", "numeric", "passed"])?;
    for p in &report.params {
        w.write_record([
            p.name.clone(),
            p.numel.to_string(),
            format!("{:e}", p.max_rel_error),
            p.worst_index.to_string(),
            format!("{:e}", p.worst_analytic),
            format!("{:e}", p.worst_numeric),
            p.passed(report.tol).to_string(),
        ])?;
    }
    w.flush()?;
    for p in &report.params {
        println!(
            "{:<40} {:>6} {:>10.3e} {}",
            p.name,
            p.numel,
            p.max_rel_error,
            if p.passed(report.tol) { "ok" } else { "FAIL" }
        );
    }
    println!(
        "{} parameters, max relative error {:.3e} (tolerance {:.0e}), {:.1}s",
        report.params.len(),
        report.max_rel_error(),
        report.tol,
        start.elapsed().as_secs_f64()
    );
    if !report.passed() {
        return Err(CommandError::GradCheckFailed {
            failed: report.failures().count(),
            total: report.params.len(),
            max: report.max_rel_error(),
        }
        .into());
    }
    Ok(report)
}

/// One row of the ablation table.
#[derive(Clone, Debug)]
pub struct AblationRow {
    pub variant: Variant,
    pub params: usize,
    pub epochs: usize,
    pub best_epoch: usize,
    pub val_mae: f64,
    pub test_mae: f64,
    pub test_rmse: f64,
    pub seconds: f64,
}

pub const ABLATION_HEADER: [&str; 8] =
    ["variant", "params", "epochs", "best_epoch", "val_mae", "test_mae", "test_rmse", "seconds"];

/// Trains every variant with the same seed and data; writes `ablation.csv`
/// and one run directory per variant under `ablation/`.
pub fn ablate(cfg: &RunConfig) -> Result<Vec<AblationRow>> {
    cfg.write_resolved()?;
    let mut rows = Vec::new();
    for variant in Variant::ALL {
        let mut run = cfg.clone();
        run.model.variant = variant;
        run.out = cfg.out.join("ablation").join(variant.name());
        info!("training {variant}");
        let r = train(&mut run, false)?;
        let h = &r.outcome.history;
        if h.iter().any(|e| !e.train_loss.is_finite() || !e.val_mae.is_finite()) {
            warn!("{variant} logged non-finite values");
        }
        rows.push(AblationRow {
            variant,
            params: r.params,
            epochs: h.len(),
            best_epoch: r.outcome.best_epoch.unwrap_or(0),
            val_mae: r.outcome.best_val_mae,
            test_mae: r.test.mae,
            test_rmse: r.test.rmse,
            seconds: r.seconds,
        });
    }
    let path = cfg.out.join("ablation.csv");
    let mut w = csv::Writer::from_path(&path)?;
    w.write_record(ABLATION_HEADER)?;
    for r in &rows {
        w.write_record([
            r.variant.name().to_string(),
            r.params.to_string(),
            r.epochs.to_string(),
            r.best_epoch.to_string(),
            format!("{:?}", r.val_mae),
            format!("{:?}", r.test_mae),
            format!("{:?}", r.test_rmse),
            format!("{:.1}", r.seconds),
        ])?;
    }
    w.flush()?;
    println!("{:<12} {:>8} {:>10} {:>10} {:>10}", "variant", "params", "val MAE", "test MAE", "test RMSE");
    for r in &rows {
        println!(
            "{:<12} {:>8} {:>10.3} {:>10.3} {:>10.3}",
            r.variant.name(),
            r.params,
            r.val_mae,
            r.test_mae,
            r.test_rmse
        );
    }
    Ok(rows)
}

/// Process exit status for a failed command: 2 configuration, 3 data,
/// 4 numerical failure, 1 anything else.
pub fn exit_code(err: &anyhow::Error) -> i32 {
    for cause in err.chain() {
        if cause.downcast_ref::<ConfigError>().is_some() || cause.downcast_ref::<clap::Error>().is_some() {
            return 2;
        }
        if cause.downcast_ref::<CommandError>().is_some() {
            return 4;
        }
        if let Some(e) = cause.downcast_ref::<dxformer::Error>() {
            return match e {
                dxformer::Error::NonFinite(_) => 4,
                dxformer::Error::Contract(_) => 2,
                e if e.is_data_error() => 3,
                dxformer::Error::Checkpoint(_) | dxformer::Error::Index { .. } => 3,
                _ => 1,
            };
        }
        if cause.downcast_ref::<std::io::Error>().is_some() || cause.downcast_ref::<csv::Error>().is_some() {
            return 3;
        }
    }
    1
}
