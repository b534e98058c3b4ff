use timgcn_core::checkpoint::{format_history_csv, parse_history_csv};
use timgcn_core::data::{load_motion_csv, make_windows, save_motion_csv, synth_motion};
use timgcn_core::trainer::train;
use timgcn_core::{Checkpoint, ModelConfig, SynthSpec, TimConfig, TrainConfig};

#[test]
fn synth_train_checkpoint_predict_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let seq = synth_motion(&SynthSpec::periodic(3, 25.0, 6.0, 2, 0.5, 21)).unwrap();
    let csv = dir.path().join("motion.csv");
    save_motion_csv(&seq, &csv).unwrap();
    let loaded = load_motion_csv(&csv).unwrap();
    assert_eq!(loaded, seq);

    let windows = make_windows(&loaded, 10, 5, 3).unwrap();
    let cfg = ModelConfig::new(TimConfig::tim_5_10(), 9, 5, 8, 1).unwrap();
    let tcfg = TrainConfig {
        epochs: 3,
        batch_size: 4,
        seed: 2,
        ..TrainConfig::default()
    };
    let out = train(&windows, &cfg, &tcfg).unwrap();
    assert_eq!(out.history.len(), 3);
    assert!(out.history.iter().all(|r| r.mean_loss.is_finite()));

    let ck_path = dir.path().join("ck.json");
    Checkpoint::from_model(&out.model, &tcfg, "h").save(&ck_path).unwrap();
    let restored = Checkpoint::load(&ck_path).unwrap().to_model().unwrap();
    for w in &windows {
        let a = out.model.predict(&w.input).unwrap();
        let b = restored.predict(&w.input).unwrap();
        assert_eq!(a, b, "restored model predicts bit-identically");
    }

    let text = format_history_csv(&out.history);
    assert_eq!(parse_history_csv(&text).unwrap(), out.history);
}

#[test]
fn per_coordinate_model_trains() {
    let seq = synth_motion(&SynthSpec::periodic(2, 25.0, 3.0, 1, 0.0, 4)).unwrap();
    let windows = make_windows(&seq, 10, 5, 5).unwrap();
    let mut cfg = ModelConfig::new(TimConfig::tim_5_10(), 6, 5, 8, 1).unwrap();
    cfg.per_coordinate_params = true;
    let tcfg = TrainConfig {
        epochs: 2,
        ..TrainConfig::default()
    };
    let out = train(&windows, &cfg, &tcfg).unwrap();
    let shared = ModelConfig {
        per_coordinate_params: false,
        ..cfg.clone()
    };
    assert!(cfg.num_params() > shared.num_params());
    assert_eq!(out.model.num_params(), cfg.num_params());
}
