//! Loss, Adam, learning-rate schedules, metrics, reference predictors and
//! the epoch loop with checkpointing.
//!
//! Everything is reported in kW: the model de-normalizes its own output, so
//! the loss and the metrics compare forecasts with raw power labels.

mod gradcheck;
mod loss;
mod metrics;
mod optim;
mod trainer;


pub use gradcheck::{end_to_end_gradcheck, EndToEndCheck};
pub use loss::{smooth_l1, smooth_l1_value};
pub use metrics::{
    baselines, eval_spec, evaluate, evaluate_windows, persistence, training_mean, write_summary_csv, HorizonMetric,
    MetricAccumulator, MetricReport,
};
pub use optim::{AdamState, LrSchedule};
pub use trainer::{
    batch_loss, fit_batch, layout, write_log, EarlyStopping, EpochLog, Precision, TrainConfig, TrainOutcome, Trainer, LOG_HEADER,
};
