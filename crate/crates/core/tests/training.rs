use dxformer::data::{generate_synthetic, prepare, PreparedData, SynthConfig};
use dxformer::model::{Model, ModelConfig};
use dxformer::training::{evaluate, layout, Precision, TrainConfig, Trainer};
use dxformer::Trainer32;

fn farm() -> PreparedData {
    let raw = generate_synthetic(&SynthConfig {
        turbines: 3,
        steps: 2500,
        ..SynthConfig::default()
    })
    .unwrap();
    prepare(&raw, 12, 4).unwrap()
}

fn config() -> ModelConfig {
    ModelConfig {
        turbines: 3,
        lookback: 12,
        horizon: 4,
        ..ModelConfig::desk()
    }
}

fn train_config() -> TrainConfig {
    TrainConfig {
        lr0: 2e-3,
        max_epochs: 3,
        train_stride: 4,
        seed: 3,
        ..TrainConfig::default()
    }
}

#[test]
fn checkpoint_holds_the_best_epoch() {
    let data = farm();
    let dir = tempfile::tempdir().unwrap();
    let model = Model::<f64>::new(config(), data.stats.clone(), 3).unwrap();
    let mut trainer = Trainer::new(model, train_config()).unwrap();
    let outcome = trainer.fit(&data, Some(dir.path())).unwrap();
    assert_eq!(outcome.history.len(), 3);
    let best = outcome.best_epoch.unwrap();
    assert_eq!(outcome.best_val_mae, outcome.history[best].val_mae);

    let loaded = Model::<f64>::load(&dir.path().join(layout::CHECKPOINT)).unwrap();
    let val = evaluate(&loaded, &data.val, 32).unwrap();
    assert_eq!(val.mae, outcome.best_val_mae);
    assert_eq!(val.per_horizon.len(), 4);
    // fit leaves the trainer holding the same weights
    let again = evaluate(&trainer.model, &data.val, 32).unwrap();
    assert_eq!(again.mae, val.mae);
}

#[test]
fn single_precision_training_learns() {
    let data = farm();
    let cfg = TrainConfig {
        precision: Precision::F32,
        ..train_config()
    };
    let model = Model::<f32>::new(config(), data.stats.clone(), 3).unwrap();
    let mut trainer: Trainer32 = Trainer::new(model, cfg).unwrap();
    let outcome = trainer.fit(&data, None).unwrap();
    let h = &outcome.history;
    assert!(h.iter().all(|e| e.train_loss.is_finite() && e.val_mae.is_finite()));
    assert!(h.last().unwrap().train_loss < h[0].train_loss);
}
