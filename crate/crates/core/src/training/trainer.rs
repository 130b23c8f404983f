use std::fmt;
use std::fs;
use std::path::Path;
use std::str::FromStr;
use std::time::Instant;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::data::{make_windows, PreparedData, WindowBatch, WindowSpec};
use crate::error::{Error, Result};
use crate::model::{forward, load_archive, save_archive, Model};
use crate::numerics::{Graph, ParamStore, Scalar};
use crate::training::loss::smooth_l1;
use crate::training::metrics::{eval_spec, evaluate, MetricReport};
use crate::training::optim::{AdamState, LrSchedule};

/// Floating-point width used for training.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Precision {
    F32,
    #[default]
    F64,
}

impl FromStr for Precision {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "f32" | "32" => Ok(Precision::F32),
            "f64" | "64" => Ok(Precision::F64),
            other => Err(Error::Contract(format!("unknown precision '{other}' (f32 or f64)"))),
        }
    }
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::F32 => "f32",
            Precision::F64 => "f64",
        })
    }
}

/// Optimization settings. Batch size, epoch count and patience are our own
/// defaults; only the initial rate of 5e-4 is taken from the reference setup.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub lr0: f64,
    pub schedule: LrSchedule,
    pub batch_size: usize,
    pub max_epochs: usize,
    /// Epochs without a validation improvement before stopping.
    pub patience: usize,
    /// Drives initialization and batch order.
    pub seed: u64,
    pub precision: Precision,
    /// Global gradient-norm ceiling; off by default.
    pub grad_clip: Option<f64>,
    /// Use every `train_stride`-th training window.
    pub train_stride: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 5e-4,
            schedule: LrSchedule::default(),
            batch_size: 32,
            max_epochs: 50,
            patience: 8,
            seed: 0,
            precision: Precision::F64,
            grad_clip: None,
            train_stride: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Contract(m.to_string()));
        if !(self.lr0 > 0.0 && self.lr0.is_finite()) {
            return bad("lr0 must be positive");
        }
        if self.batch_size == 0 || self.max_epochs == 0 || self.train_stride == 0 {
            return bad("batch_size, max_epochs and train_stride must be positive");
        }
        if let Some(c) = self.grad_clip {
            if !(c > 0.0) {
                return bad("grad_clip must be positive");
            }
        }
        Ok(())
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("lr0", format!("{:?}", self.lr0)),
            ("schedule", self.schedule.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("max_epochs", self.max_epochs.to_string()),
            ("patience", self.patience.to_string()),
            ("seed", self.seed.to_string()),
            ("precision", self.precision.to_string()),
            ("grad_clip", self.grad_clip.map_or("none".into(), |c| format!("{c:?}"))),
            ("train_stride", self.train_stride.to_string()),
        ]
    }

    /// Sets one field from its key/value form.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let v = value.trim();
        let bad = || Error::Contract(format!("invalid value '{v}' for '{key}'"));
        match key {
            "lr0" => self.lr0 = v.parse().map_err(|_| bad())?,
            "schedule" => self.schedule = v.parse()?,
            "batch_size" => self.batch_size = v.parse().map_err(|_| bad())?,
            "max_epochs" => self.max_epochs = v.parse().map_err(|_| bad())?,
            "patience" => self.patience = v.parse().map_err(|_| bad())?,
            "seed" => self.seed = v.parse().map_err(|_| bad())?,
            "precision" => self.precision = v.parse()?,
            "grad_clip" => {
                self.grad_clip = match v {
                    "none" | "" => None,
                    _ => Some(v.parse().map_err(|_| bad())?),
                }
            }
            "train_stride" => self.train_stride = v.parse().map_err(|_| bad())?,
            _ => return Err(Error::Contract(format!("unknown train key '{key}'"))),
        }
        Ok(())
    }
}

/// One row of the training log.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_mae: f64,
    pub val_rmse: f64,
    pub lr: f64,
    pub seconds: f64,
}

pub const LOG_HEADER: [&str; 6] = ["epoch", "train_loss", "val_mae", "val_rmse", "lr", "seconds"];

/// Writes the training log CSV.
pub fn write_log<W: std::io::Write>(rows: &[EpochLog], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.epoch.to_string(),
            format!("{:?}", r.train_loss),
            format!("{:?}", r.val_mae),
            format!("{:?}", r.val_rmse),
            format!("{:?}", r.lr),
            format!("{:.3}", r.seconds),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<csv>", e))
}

/// Stops once validation MAE has not improved for `patience` epochs.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    pub best: Option<f64>,
    pub bad_epochs: usize,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        EarlyStopping {
            patience,
            best: None,
            bad_epochs: 0,
        }
    }

    /// Records one validation score; true when it is a new best.
    pub fn observe(&mut self, val_mae: f64) -> bool {
        if self.best.is_none_or(|b| val_mae < b) {
            self.best = Some(val_mae);
            self.bad_epochs = 0;
            true
        } else {
            self.bad_epochs += 1;
            false
        }
    }

    pub fn exhausted(&self) -> bool {
        self.best.is_some() && self.bad_epochs >= self.patience
    }
}

/// Result of [`Trainer::fit`].
#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub history: Vec<EpochLog>,
    /// Epoch whose weights were kept, if any epoch completed.
    pub best_epoch: Option<usize>,
    pub best_val_mae: f64,
    pub stopped_early: bool,
}

/// Files inside a run directory.
pub mod layout {
    pub const LOG: &str = "train_log.csv";
    /// Best-on-validation model.
    pub const CHECKPOINT: &str = "checkpoint";
    /// Everything needed to continue after the last finished epoch.
    pub const STATE: &str = "state";
    pub const NAN_DUMP: &str = "nan_batch.txt";
}

/// Optimizer state plus the early-stopping bookkeeping around a model.
#[derive(Clone, Debug)]
pub struct Trainer<T: Scalar> {
    pub model: Model<T>,
    pub config: TrainConfig,
    pub adam: AdamState<T>,
    /// Next epoch to run.
    pub epoch: usize,
    pub best: Option<(usize, f64, ParamStore<T>)>,
    pub bad_epochs: usize,
    pub history: Vec<EpochLog>,
}

impl<T: Scalar> Trainer<T> {
    pub fn new(model: Model<T>, config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let adam = AdamState::new(&model.params)?;
        Ok(Trainer {
            model,
            config,
            adam,
            epoch: 0,
            best: None,
            bad_epochs: 0,
            history: Vec::new(),
        })
    }

    /// One optimizer step on `batch`; returns the loss before the update.
    pub fn step(&mut self, batch: &WindowBatch, lr: f64) -> Result<f64> {
        let mut g = Graph::new();
        let p = self.model.params.bind(&mut g);
        let y = forward(&mut g, &p, &self.model.config, &self.model.norm.power, batch)?;
        let l = smooth_l1(&mut g, y, &batch.y)?;
        let loss = g.value(l).data()[0].as_f64();
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("training loss {loss}")));
        }
        g.backward(l)?;
        let grads = p.grads(&g);
        self.adam.update(&mut self.model.params, &grads, lr, self.config.grad_clip)?;
        Ok(loss)
    }

    /// Training windows of this epoch in their seeded order.
    pub fn epoch_order(&self, data: &PreparedData, epoch: usize) -> Result<Vec<usize>> {
        let spec = WindowSpec {
            stride: self.config.train_stride,
            ..eval_spec(&self.model.config)
        };
        let mut origins = make_windows(&data.train, &spec)?;
        let mut rng = ChaCha8Rng::seed_from_u64(self.config.seed);
        rng.set_stream(epoch as u64 + 1);
        origins.shuffle(&mut rng);
        Ok(origins)
    }

    /// Runs one epoch and validates; does not touch early-stopping state.
    pub fn run_epoch(&mut self, data: &PreparedData, run_dir: Option<&Path>) -> Result<(EpochLog, MetricReport)> {
        let start = Instant::now();
        let epoch = self.epoch;
        let lr = self.config.schedule.lr(self.config.lr0, epoch);
        let spec = eval_spec(&self.model.config);
        let order = self.epoch_order(data, epoch)?;
        let mut total = 0.0;
        let mut batches = 0usize;
        for (b, chunk) in order.chunks(self.config.batch_size).enumerate() {
            let batch = WindowBatch::gather(&data.train, chunk, &spec)?;
            match self.step(&batch, lr) {
                Ok(loss) => total += loss,
                Err(Error::NonFinite(what)) => {
                    let msg = format!("{what} at epoch {epoch}, batch {b} (window origins {chunk:?})");
                    if let Some(dir) = run_dir {
                        dump_batch(dir, &msg, &batch)?;
                    }
                    return Err(Error::NonFinite(msg));
                }
                Err(e) => return Err(e),
            }
            batches += 1;
        }
        let val = evaluate(&self.model, &data.val, self.config.batch_size)?;
        let row = EpochLog {
            epoch,
            train_loss: total / batches.max(1) as f64,
            val_mae: val.mae,
            val_rmse: val.rmse,
            lr,
            seconds: start.elapsed().as_secs_f64(),
        };
        self.epoch += 1;
        self.history.push(row);
        Ok((row, val))
    }

    /// Epoch loop with best-on-validation checkpointing and early stopping.
    ///
    /// With a run directory, the log is rewritten after every epoch, the best
    /// model goes to `checkpoint/` and resumable state to `state/`. The kept
    /// (best) weights are left in `self.model`.
    pub fn fit(&mut self, data: &PreparedData, run_dir: Option<&Path>) -> Result<TrainOutcome> {
        let mut stopped_early = false;
        while self.epoch < self.config.max_epochs {
            if self.stopper().exhausted() {
                stopped_early = true;
                break;
            }
            let (row, _) = self.run_epoch(data, run_dir)?;
            let mut stopper = self.stopper();
            let improved = stopper.observe(row.val_mae);
            self.bad_epochs = stopper.bad_epochs;
            if improved {
                self.best = Some((row.epoch, row.val_mae, self.model.params.clone()));
            }
            info!(
                "epoch {} loss {:.4} val MAE {:.3} RMSE {:.3} lr {:.3e} ({:.1}s){}",
                row.epoch,
                row.train_loss,
                row.val_mae,
                row.val_rmse,
                row.lr,
                row.seconds,
                if improved { " *" } else { "" }
            );
            if let Some(dir) = run_dir {
                self.persist(dir, improved)?;
            }
        }
        if let Some((_, _, params)) = &self.best {
            self.model.params = params.clone();
        }
        Ok(TrainOutcome {
            history: self.history.clone(),
            best_epoch: self.best.as_ref().map(|b| b.0),
            best_val_mae: self.best.as_ref().map_or(f64::NAN, |b| b.1),
            stopped_early,
        })
    }

    fn stopper(&self) -> EarlyStopping {
        EarlyStopping {
            patience: self.config.patience,
            best: self.best.as_ref().map(|b| b.1),
            bad_epochs: self.bad_epochs,
        }
    }

    fn persist(&self, dir: &Path, improved: bool) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let log = dir.join(layout::LOG);
        let file = fs::File::create(&log).map_err(|e| Error::io(&log, e))?;
        write_log(&self.history, file)?;
        if improved {
            if let Some((_, _, params)) = &self.best {
                let best = Model {
                    config: self.model.config.clone(),
                    params: params.clone(),
                    norm: self.model.norm.clone(),
                };
                best.save(&dir.join(layout::CHECKPOINT))?;
            }
        }
        self.save_state(&dir.join(layout::STATE))
    }

    /// Writes the current weights, optimizer moments and bookkeeping.
    pub fn save_state(&self, dir: &Path) -> Result<()> {
        self.model.save(dir)?;
        let mut store = ParamStore::new();
        for (name, t) in self.adam.m.iter() {
            store.insert(format!("m.{name}"), t.clone())?;
        }
        for (name, t) in self.adam.v.iter() {
            store.insert(format!("v.{name}"), t.clone())?;
        }
        let mut meta: Vec<(String, String)> = self
            .config
            .to_pairs()
            .into_iter()
            .map(|(k, v)| (format!("train.{k}"), v))
            .collect();
        meta.push(("state.epoch".into(), self.epoch.to_string()));
        meta.push(("state.adam_step".into(), self.adam.step.to_string()));
        meta.push(("state.bad_epochs".into(), self.bad_epochs.to_string()));
        if let Some((epoch, mae, params)) = &self.best {
            meta.push(("state.best".into(), format!("{epoch} {mae:?}")));
            for (name, t) in params.iter() {
                store.insert(format!("best.{name}"), t.clone())?;
            }
        }
        for r in &self.history {
            meta.push((
                format!("state.history.{}", r.epoch),
                format!("{:?} {:?} {:?} {:?} {:?}", r.train_loss, r.val_mae, r.val_rmse, r.lr, r.seconds),
            ));
        }
        save_archive(dir, "trainer", &meta, &store)
    }

    /// Restores a trainer written by [`Trainer::save_state`].
    pub fn load_state(dir: &Path) -> Result<Self> {
        let model = Model::<T>::load(dir)?;
        let (meta, store) = load_archive::<T>(dir, "trainer")?;
        let mut config = TrainConfig::default();
        let bad = |k: &str| Error::Checkpoint(format!("malformed trainer state entry '{k}'"));
        let (mut epoch, mut step, mut bad_epochs, mut best_meta) = (None, None, 0, None);
        let mut history = Vec::new();
        for (k, v) in &meta {
            if let Some(key) = k.strip_prefix("train.") {
                config.set(key, v)?;
            } else if k == "state.epoch" {
                epoch = Some(v.parse::<usize>().map_err(|_| bad(k))?);
            } else if k == "state.adam_step" {
                step = Some(v.parse::<u64>().map_err(|_| bad(k))?);
            } else if k == "state.bad_epochs" {
                bad_epochs = v.parse().map_err(|_| bad(k))?;
            } else if k == "state.best" {
                let mut it = v.split(' ');
                let e: usize = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad(k))?;
                let m: f64 = it.next().and_then(|x| x.parse().ok()).ok_or_else(|| bad(k))?;
                best_meta = Some((e, m));
            } else if let Some(e) = k.strip_prefix("state.history.") {
                let e: usize = e.parse().map_err(|_| bad(k))?;
                let f: Vec<f64> = v.split(' ').map(|x| x.parse().map_err(|_| bad(k))).collect::<Result<_>>()?;
                if f.len() != 5 {
                    return Err(bad(k));
                }
                history.push(EpochLog {
                    epoch: e,
                    train_loss: f[0],
                    val_mae: f[1],
                    val_rmse: f[2],
                    lr: f[3],
                    seconds: f[4],
                });
            }
        }
        history.sort_by_key(|r| r.epoch);
        let mut adam = AdamState::new(&model.params)?;
        adam.step = step.ok_or_else(|| bad("state.adam_step"))?;
        let mut best_params = ParamStore::new();
        for (name, t) in store.iter() {
            if let Some(n) = name.strip_prefix("m.") {
                *adam.m.get_mut(n).ok_or_else(|| bad(name))? = t.clone();
            } else if let Some(n) = name.strip_prefix("v.") {
                *adam.v.get_mut(n).ok_or_else(|| bad(name))? = t.clone();
            } else if let Some(n) = name.strip_prefix("best.") {
                best_params.insert(n, t.clone())?;
            }
        }
        let best = match best_meta {
            Some((e, m)) if best_params.len() == model.params.len() => Some((e, m, best_params)),
            Some(_) => return Err(bad("best.*")),
            None => None,
        };
        Ok(Trainer {
            model,
            config,
            adam,
            epoch: epoch.ok_or_else(|| bad("state.epoch"))?,
            best,
            bad_epochs,
            history,
        })
    }
}

fn dump_batch(dir: &Path, msg: &str, batch: &WindowBatch) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let finite = |v: &[f64]| v.iter().filter(|x| !x.is_finite()).count();
    let text = format!(
        "{msg}\nbatch size {}\nnon-finite inputs: power {}, exogenous {}, targets {}\norigins {:?}\n",
        batch.batch,
        finite(&batch.x),
        finite(&batch.z_static),
        finite(&batch.y),
        batch.origins
    );
    let path = dir.join(layout::NAN_DUMP);
    fs::write(&path, text).map_err(|e| Error::io(&path, e))
}

/// Repeated Adam steps on one fixed batch.
///
/// The rate is held at `lr` and then decays geometrically to `lr / 20` over
/// the final `anneal` steps, which removes the sign-driven jitter of an
/// L1-like loss near its minimum. Returns `steps + 1` losses: the one before
/// every step followed by the loss after the last.
pub fn fit_batch<T: Scalar>(
    model: &mut Model<T>,
    batch: &WindowBatch,
    steps: usize,
    lr: f64,
    anneal: usize,
) -> Result<Vec<f64>> {
    let anneal = anneal.min(steps);
    let hold = steps - anneal;
    let decay = if anneal > 0 { 0.05f64.powf(1.0 / anneal as f64) } else { 1.0 };
    let config = TrainConfig {
        schedule: LrSchedule::Constant,
        lr0: lr,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(model.clone(), config)?;
    let mut losses = Vec::with_capacity(steps + 1);
    for s in 0..steps {
        let rate = lr * decay.powi(s.saturating_sub(hold) as i32);
        losses.push(trainer.step(batch, rate)?);
    }
    *model = trainer.model;
    losses.push(batch_loss(model, batch)?);
    Ok(losses)
}

/// Smooth-L1 loss of `model` on `batch` without updating anything.
pub fn batch_loss<T: Scalar>(model: &Model<T>, batch: &WindowBatch) -> Result<f64> {
    let mut g = Graph::new();
    let p = model.params.bind(&mut g);
    let y = forward(&mut g, &p, &model.config, &model.norm.power, batch)?;
    let l = smooth_l1(&mut g, y, &batch.y)?;
    Ok(g.value(l).data()[0].as_f64())
}
