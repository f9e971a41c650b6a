use ccsi::charting::isomap_init;
use ccsi::datagen::{
    build_scene, generate_dataset, read_dataset, write_dataset, Area, ArrayGeometry, Placement, SceneConfig, Split,
    SplitCounts,
};
use ccsi::evaluate::{param_count, rho_stats, sum_rate_sweep, PrecoderKind};
use ccsi::model::{init_model, load_checkpoint, save_checkpoint, ModelConfig, ParamShape};
use ccsi::training::{subsample, train, StopReason, SubsampleConfig, TrainConfig};
use ccsi::{Complex64, Dataset32, Dataset64, Model32, Model64};

fn los_scene() -> SceneConfig {
    SceneConfig {
        carrier_frequency: 3.5e9,
        bandwidth: 20e6,
        subcarrier_count: 4,
        area: Area::new([-20.0, 30.0], [20.0, 70.0]),
        scatterer_count: 0,
        scatterer_reflectivity: 0.0,
        bs_position: [0.0, 0.0],
        rng_seed: 2,
    }
}

fn small_dataset(train_count: usize) -> Dataset64 {
    let scene = build_scene(&los_scene()).unwrap();
    let counts = SplitCounts {
        calibration: 60,
        train: train_count,
        test: 40,
    };
    generate_dataset(&scene, &ArrayGeometry::new(8), counts, Placement::UniformRandom).unwrap()
}

fn small_model(ds: &Dataset64) -> Model64 {
    let cal: Vec<&[Complex64]> = ds.split(Split::Calibration).map(|s| s.h.as_slice()).collect();
    let chart = isomap_init(&cal, 8, 2).unwrap();
    let cfg = ModelConfig {
        frequency_count: 16,
        hidden_width: 16,
        ..ModelConfig::new(4)
    };
    init_model(&cfg, &chart, &cal, 8).unwrap()
}

#[test]
fn training_halves_loss_on_los_data() {
    let ds = small_dataset(200);
    let config = TrainConfig {
        epochs: 200,
        patience: 200,
        ..TrainConfig::new(9)
    };
    let out = train(small_model(&ds), &ds.split_vec(Split::Train), &config).unwrap();
    assert_eq!(out.stop, StopReason::Completed);
    let last = out.log.last().unwrap().train_loss;
    assert!(
        last <= 0.5 * out.initial_train_loss,
        "{} -> {last}",
        out.initial_train_loss
    );
}

#[test]
fn library_pipeline_round_trips_artifacts() {
    let dir = tempfile::tempdir().unwrap();
    let ds: Dataset64 = read_dataset(&write_dataset(&small_dataset(80))).unwrap();
    let mut config = TrainConfig::new(1);
    config.epochs = 5;
    let out = train(small_model(&ds), &ds.split_vec(Split::Train), &config).unwrap();
    let path = dir.path().join("model.cckp");
    save_checkpoint(&out.model, &path).unwrap();
    let model: Model64 = load_checkpoint(&path).unwrap();
    assert_eq!(model, out.model);

    let test = ds.split_vec(Split::Test);
    let stats = rho_stats(&model, &test).unwrap();
    assert_eq!(stats.values.len(), 40);
    assert!(stats.values.iter().all(|r| (0.0..=1.0).contains(r)));
    let curve = sum_rate_sweep(&model, &test, 4, &[0.0, 10.0], 3).unwrap();
    assert_eq!(curve.group_count, 10);
    for kind in PrecoderKind::ALL {
        assert!(curve.rates(kind).iter().all(|p| p.1 >= 0.0));
    }
}

#[test]
fn single_precision_pipeline_tracks_double() {
    let ds = small_dataset(40);
    let m64 = small_model(&ds);
    let m32: Model32 = m64.cast();
    let ds32: Dataset32 = ds.cast();
    let a = rho_stats(&m64, &ds.split_vec(Split::Test)).unwrap();
    let b = rho_stats(&m32, &ds32.split_vec(Split::Test)).unwrap();
    assert!((a.mean - f64::from(b.mean)).abs() < 1e-4, "{} vs {}", a.mean, b.mean);
}

#[test]
fn subsampled_model_trains() {
    let ds = small_dataset(40);
    let (model, trace) = subsample(&small_model(&ds), &SubsampleConfig::new(12, 5)).unwrap();
    assert_eq!(model.encoder.len(), 12);
    assert_eq!(trace.kept.len(), 12);
    let mut config = TrainConfig::new(2);
    config.epochs = 3;
    let out = train(model, &ds.split_vec(Split::Train), &config).unwrap();
    assert_eq!(out.model.encoder.len(), 12);
}

#[test]
fn parameter_reduction_for_ten_kept_columns() {
    let shape = ParamShape {
        channel_dim: 1024,
        embedding_dim: 2,
        frequency_count: 200,
        hidden_width: 128,
        output_dim: 64,
    };
    let full = param_count(&shape, 5000, true);
    let reduced = param_count(&shape, 10, true);
    // Independent count: 2DN + dN + 1 encoder reals on top of the decoder.
    let decoder = 2 * 200 + 2 * (200 * 128 + 128) + 2 * (128 * 128 + 128) + 2 * (128 * 64 + 64);
    assert_eq!(full, decoder + 2 * 1024 * 5000 + 2 * 5000 + 1);
    assert_eq!(reduced, decoder + 2 * 1024 * 10 + 2 * 10 + 1);
    let factor = full as f64 / reduced as f64;
    assert!((84.9..85.0).contains(&factor), "{factor}");
}
