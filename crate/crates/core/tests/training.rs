use csi_recomp::metrics::{baseline_rmse, export_element_series, test_rmse, MetricsError};
use csi_recomp::model::{build_model, ArchConfig, ModelKind, Network};
use csi_recomp::preprocess::{fit_norm_stats, flatten_csi_amplitude};
use csi_recomp::sim::{generate_dataset, SceneConfig};
use csi_recomp::store::Dataset;
use csi_recomp::train::{
    evaluate_mse, predict, prepare_dataset, run_protocol, split_dataset, stopping_point, train, PreparedDataset,
    TrainConfig,
};

const IMAGE_HW: [usize; 2] = [24, 24];

fn prepared(n: usize, split_seed: u64) -> (Dataset, PreparedDataset) {
    let config = SceneConfig {
        subcarriers: 16,
        image_size: [48, 48],
        rng_seed: 5,
        ..SceneConfig::default()
    };
    let dataset = Dataset::from_simulation(&config, generate_dataset(&config, n).unwrap()).unwrap();
    let split = split_dataset(n, [0.72, 0.18, 0.10], split_seed).unwrap();
    let data = prepare_dataset(
        &dataset.csi,
        dataset.bfm.as_ref().unwrap(),
        dataset.images.as_deref(),
        split,
        IMAGE_HW,
    )
    .unwrap();
    (dataset, data)
}

fn quick(max_epochs: usize, seeds: Vec<u64>) -> TrainConfig {
    TrainConfig {
        batch_size: 16,
        max_epochs,
        patience: 3,
        seeds,
        ..TrainConfig::default()
    }
}

#[test]
fn normalization_is_fitted_on_training_indices_only() {
    let (dataset, data) = prepared(120, 0);
    let train_targets: Vec<_> = data
        .split
        .train
        .iter()
        .map(|&i| flatten_csi_amplitude(&dataset.csi[i]))
        .collect();
    assert_eq!(data.norm, fit_norm_stats(&train_targets).unwrap());
    let all: Vec<_> = dataset.csi.iter().map(flatten_csi_amplitude).collect();
    assert_ne!(data.norm, fit_norm_stats(&all).unwrap());
    for &i in &data.split.train {
        assert!(data.records[i].target.iter().all(|v| (0.0..=1.0).contains(v)));
    }
}

#[test]
fn norm_stats_match_an_independent_two_pass_scan() {
    let (dataset, data) = prepared(80, 2);
    let len = data.dims.k * data.dims.f_h;
    for c in 0..len {
        let values: Vec<f64> = data
            .split
            .train
            .iter()
            .map(|&i| {
                let csi = &dataset.csi[i];
                csi.data[c].norm()
            })
            .collect();
        let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
        let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        assert_eq!((data.norm.min[c], data.norm.max[c]), (lo, hi));
    }
}

#[test]
fn training_is_deterministic_and_restores_best_weights() {
    let (_, data) = prepared(120, 1);
    let config = quick(6, vec![4]);
    let arch = ArchConfig::default();
    let a = train(ModelKind::Mmi, &data, &config, 4, &arch).unwrap();
    let b = train(ModelKind::Mmi, &data, &config, 4, &arch).unwrap();
    assert_eq!(a.val_loss, b.val_loss);
    assert_eq!(a.params, b.params);

    assert_eq!(
        stopping_point(&a.val_loss, config.patience, config.max_epochs),
        (a.stop_epoch, a.best_epoch)
    );
    assert_eq!(a.best_val_loss, a.val_loss[a.best_epoch - 1]);
    let mut net = a.network().unwrap();
    let val = evaluate_mse(&mut net, &data, &data.split.val, config.batch_size).unwrap();
    assert_eq!(val, a.best_val_loss);
}

#[test]
fn protocol_covers_every_kind_and_seed() {
    let (_, data) = prepared(60, 0);
    let mut config = quick(2, vec![1, 2]);
    let outcomes = run_protocol(&data, &ModelKind::ALL, &config, &ArchConfig::default()).unwrap();
    assert_eq!(outcomes.len(), 6);
    config.deterministic = false;
    let parallel = run_protocol(&data, &ModelKind::ALL, &config, &ArchConfig::default()).unwrap();
    for (s, p) in outcomes.iter().zip(&parallel) {
        assert_eq!((s.kind, s.seed), (p.kind, p.seed));
        let (s, p) = (s.result.as_ref().unwrap(), p.result.as_ref().unwrap());
        assert_eq!(s.val_loss, p.val_loss);
        assert_eq!(s.split_seed, p.split_seed);
    }
}

#[test]
fn trained_models_beat_their_initialization() {
    let (_, data) = prepared(200, 0);
    let run = train(ModelKind::SmiBfm, &data, &quick(8, vec![1]), 1, &ArchConfig::default()).unwrap();
    assert!(run.train_loss.last().unwrap() < &run.train_loss[0]);
    let rmse = test_rmse(&run, &data, 32).unwrap();
    assert!(rmse.is_finite() && rmse > 0.0);
    assert!(baseline_rmse(&data) > 0.0);
}

#[test]
fn element_series_passes_truth_through_and_recomputes_prediction() {
    let (_, data) = prepared(60, 0);
    let run = train(ModelKind::Mmi, &data, &quick(1, vec![2]), 2, &ArchConfig::default()).unwrap();
    let sample = data.split.test[0];
    let rows = export_element_series(&run, &data, sample, (2, 3)).unwrap();
    assert_eq!(rows.len(), 16);
    let e = 3 + 2;
    let mut net = run.network().unwrap();
    let pred = predict(&mut net, &data, &[sample], 1).unwrap();
    for r in &rows {
        assert_eq!(r.truth, data.records[sample].target[r.k * 12 + e]);
        assert_eq!(r.pred, pred[r.k * 12 + e]);
    }
    assert!(matches!(
        export_element_series(&run, &data, sample, (5, 1)),
        Err(MetricsError::ElementOutOfRange { .. })
    ));
    assert!(matches!(
        export_element_series(&run, &data, 999, (1, 1)),
        Err(MetricsError::SampleOutOfRange { .. })
    ));
}

#[test]
fn image_path_influences_fused_output() {
    let (_, data) = prepared(40, 0);
    let spec = build_model(ModelKind::Mmi, data.dims).unwrap();
    let mut net = Network::<f32>::new(spec, 3).unwrap();
    let (a, b) = (data.split.train[0], data.split.train[1]);
    let mut input = data.batch_input(ModelKind::Mmi, &[a]);
    let first = net.forward(&input, false).unwrap();
    let again = net.forward(&input, false).unwrap();
    assert_eq!(first.data, again.data);
    input.image = data.batch_input(ModelKind::Mmi, &[b]).image;
    let swapped = net.forward(&input, false).unwrap();
    assert_ne!(first.data, swapped.data);
}
