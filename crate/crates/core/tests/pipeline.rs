//! End-to-end shapes, error reporting and reproducibility.

use somo_core::config::ModelConfig;
use somo_core::model::{History, MotionModel};
use somo_core::motion::{generate_synthetic_scene, SceneSpec};
use somo_core::training::{loss_log_csv, EpochRecord, Sample, TrainConfig, Trainer};

#[test]
fn default_shapes() {
    let config = ModelConfig::default();
    let model = MotionModel::new(config.clone(), 0).unwrap();
    assert_eq!(model.encoded_windows(), 39);
    assert_eq!(model.window_starts().len(), 40);
    assert_eq!(*model.window_starts().last().unwrap(), 39);

    let scene = generate_synthetic_scene(&SceneSpec::default(), 1).unwrap();
    assert_eq!(scene.num_persons(), 3);
    let memory = model.encode(&scene.slice_frames(0, 50).unwrap()).unwrap();
    assert_eq!(memory.shape(), &[117, 128]);

    let history = History::from_scene(&scene, 50).unwrap();
    let mut tape = somo_core::numerics::Tape::with_params(&model.params);
    let rollout = model
        .rollout(&mut tape, &history, 25, &mut somo_core::layers::ForwardCtx::eval())
        .unwrap();
    assert_eq!(rollout.passes, 3);
    for d in &rollout.deltas {
        assert_eq!(tape.shape(*d), &[25, 45]);
    }
    let pred = model.predict_history(&history, 25).unwrap();
    assert_eq!(pred.poses.shape(), &[3, 25, 15, 3]);
    assert_eq!(pred.attention.shape(), &[3, 117]);
}

#[test]
fn short_scene_is_rejected() {
    let model = MotionModel::new(ModelConfig::toy(), 0).unwrap();
    let scene = generate_synthetic_scene(&SceneSpec::default(), 1).unwrap();
    let short = scene.slice_frames(0, 30).unwrap();
    let err = model.predict(&short, 10).unwrap_err();
    assert!(err.is_validation(), "{err}");
}

#[test]
fn horizon_beyond_limit_is_rejected() {
    let model = MotionModel::new(ModelConfig::toy(), 0).unwrap();
    let scene = generate_synthetic_scene(&SceneSpec::default(), 1).unwrap();
    assert!(model.predict(&scene, 31).is_err());
    assert!(model.predict(&scene, 0).is_err());
    assert_eq!(model.predict(&scene, 30).unwrap().poses.shape()[1], 30);
}

fn train_twice() -> (Vec<EpochRecord>, Vec<f64>) {
    let spec = SceneSpec::default();
    let samples: Vec<Sample> = (0..3)
        .map(|i| Sample::from_scene(&generate_synthetic_scene(&spec, i).unwrap(), 50, 10).unwrap())
        .collect();
    let config = TrainConfig {
        epochs: 2,
        batch_size: 2,
        learning_rate: 1e-3,
        horizon: 10,
        seed: 7,
        ..TrainConfig::default()
    };
    let model = MotionModel::new(ModelConfig::toy(), 7).unwrap();
    let mut trainer = Trainer::new(model, config).unwrap();
    let log = trainer.train(&samples[..2], &samples[2..], |_, _| Ok(())).unwrap();
    let scene = generate_synthetic_scene(&spec, 99).unwrap();
    let pred = trainer.model.predict(&scene, 10).unwrap();
    (log, pred.poses.into_data())
}

#[test]
fn training_is_reproducible() {
    let (log_a, pred_a) = train_twice();
    let (log_b, pred_b) = train_twice();
    assert_eq!(loss_log_csv(&log_a), loss_log_csv(&log_b));
    assert_eq!(log_a.len(), 2);
    let bits = |v: &[f64]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&pred_a), bits(&pred_b));
}
