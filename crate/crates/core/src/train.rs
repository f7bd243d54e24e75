//! Seeded training protocol: dataset split, mini-batch Adam on MSE, patience-based early
//! stopping with best-weight restoration, and paired multi-seed runs over model kinds.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfm::BfmSample;
use crate::model::{build_model_with, ArchConfig, ModelError, ModelInput, ModelKind, ModelParams, ModelSpec, Network};
use crate::nn::optim::Adam;
use crate::nn::Tensor;
use crate::preprocess::{
    build_record, fit_norm_stats, flatten_csi_amplitude, NormStats, PreprocessError, PreprocessedRecord, RecordDims,
};
use crate::sim::{CsiSample, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TrainError {
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("dataset of {n} samples is too small to give every split at least one sample")]
    SplitTooSmall { n: usize },
    #[error("{kind} needs the {modality} modality, which the dataset does not contain")]
    MissingModality { kind: ModelKind, modality: &'static str },
    #[error("{kind} seed {seed} diverged at epoch {epoch}: non-finite loss")]
    Diverged { kind: ModelKind, seed: u64, epoch: usize },
    #[error("dataset inconsistency: {0}")]
    Data(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Preprocess(#[from] PreprocessError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_epochs: usize,
    pub learning_rate: f64,
    /// Epochs without improving the best validation loss before stopping.
    pub patience: usize,
    /// `(train, validation, test)` fractions.
    pub split_ratio: [f64; 3],
    /// Initialization and shuffling seeds, one run per seed.
    pub seeds: Vec<u64>,
    /// Seed of the split permutation shared by every run.
    pub split_seed: u64,
    /// Runs execute one after another on the calling thread. When false, independent
    /// runs may execute concurrently; each run is sequential either way, so results
    /// do not depend on this flag.
    pub deterministic: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            max_epochs: 100,
            learning_rate: 0.001,
            patience: 10,
            split_ratio: [0.72, 0.18, 0.10],
            seeds: vec![1, 2, 3, 4, 5],
            split_seed: 0,
            deterministic: true,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        let bad = |msg: &str| Err(TrainError::InvalidConfig(msg.to_string()));
        if self.batch_size == 0 {
            return bad("batch_size must be positive");
        }
        if self.max_epochs == 0 {
            return bad("max_epochs must be positive");
        }
        if self.patience == 0 {
            return bad("patience must be at least 1");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning_rate must be positive and finite");
        }
        if self.split_ratio.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return bad("split ratios must be positive");
        }
        if (self.split_ratio.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad("split ratios must sum to 1");
        }
        if self.seeds.is_empty() {
            return bad("at least one seed is required");
        }
        Ok(())
    }
}

// ============================================================================
// Split
// ============================================================================

/// Disjoint sorted index sets covering `0..n`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

/// Seeded random-permutation split. Validation and test take `floor(n·r)` samples; the
/// remainder goes to training.
pub fn split_dataset(n: usize, ratio: [f64; 3], seed: u64) -> Result<Split, TrainError> {
    if n < 10 {
        return Err(TrainError::SplitTooSmall { n });
    }
    // The epsilon absorbs representation error, e.g. 2000 · 0.18.
    let take = |r: f64| ((n as f64) * r + 1e-9).floor() as usize;
    let (n_val, n_test) = (take(ratio[1]), take(ratio[2]));
    if n_val == 0 || n_test == 0 || n_val + n_test >= n {
        return Err(TrainError::SplitTooSmall { n });
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n - n_val - n_test;
    let sorted = |s: &[usize]| {
        let mut v = s.to_vec();
        v.sort_unstable();
        v
    };
    Ok(Split {
        seed,
        train: sorted(&perm[..n_train]),
        val: sorted(&perm[n_train..n_train + n_val]),
        test: sorted(&perm[n_train + n_val..]),
    })
}

// ============================================================================
// Early stopping
// ============================================================================

/// Running-best tracker. A loss equal to the best so far counts as an improvement.
#[derive(Debug, Clone, PartialEq)]
pub struct EarlyStopping {
    pub patience: usize,
    best: f64,
    best_epoch: usize,
    epoch: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Observation {
    pub improved: bool,
    pub stop: bool,
}

impl EarlyStopping {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            best: f64::INFINITY,
            best_epoch: 0,
            epoch: 0,
        }
    }

    /// Records the validation loss of the next epoch (epochs are 1-based).
    pub fn observe(&mut self, loss: f64) -> Observation {
        self.epoch += 1;
        let improved = loss <= self.best;
        if improved {
            self.best = loss;
            self.best_epoch = self.epoch;
        }
        Observation {
            improved,
            stop: self.epoch - self.best_epoch >= self.patience,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    pub fn best_epoch(&self) -> usize {
        self.best_epoch
    }

    pub fn epoch(&self) -> usize {
        self.epoch
    }
}

/// `(stop epoch, best epoch)` that training would produce for a validation-loss sequence.
pub fn stopping_point(losses: &[f64], patience: usize, max_epochs: usize) -> (usize, usize) {
    let mut es = EarlyStopping::new(patience);
    for &l in losses.iter().take(max_epochs) {
        if es.observe(l).stop {
            break;
        }
    }
    (es.epoch(), es.best_epoch())
}

// ============================================================================
// Prepared data
// ============================================================================

/// Model-ready records with normalization fitted on the training split only.
#[derive(Debug, Clone)]
pub struct PreparedDataset {
    pub dims: RecordDims,
    pub records: Vec<PreprocessedRecord>,
    pub norm: NormStats,
    pub split: Split,
    pub has_images: bool,
    /// `(N, M)`: receive and transmit antenna counts behind the `F_h = N·M` target elements.
    pub antennas: (usize, usize),
}

pub fn prepare_dataset(
    csi: &[CsiSample],
    bfm: &[BfmSample],
    images: Option<&[RgbImage]>,
    split: Split,
    image_hw: [usize; 2],
) -> Result<PreparedDataset, TrainError> {
    let n = csi.len();
    if bfm.len() != n || images.is_some_and(|im| im.len() != n) {
        return Err(TrainError::Data(format!(
            "{n} CSI samples, {} BFM samples, {} images",
            bfm.len(),
            images.map_or(0, |im| im.len())
        )));
    }
    if split.len() != n || split.train.iter().chain(&split.val).chain(&split.test).any(|&i| i >= n) {
        return Err(TrainError::Data(format!(
            "split covers {} indices, dataset has {n}",
            split.len()
        )));
    }
    let train_targets: Vec<_> = split.train.iter().map(|&i| flatten_csi_amplitude(&csi[i])).collect();
    let norm = fit_norm_stats(&train_targets)?;
    let records = (0..n)
        .into_par_iter()
        .map(|i| build_record(&bfm[i], &csi[i], images.map(|im| &im[i]), &norm, image_hw))
        .collect::<Result<Vec<_>, _>>()?;
    let dims = records[0].dims;
    Ok(PreparedDataset {
        dims,
        records,
        norm,
        split,
        has_images: images.is_some(),
        antennas: (csi[0].n, csi[0].m),
    })
}

impl PreparedDataset {
    pub fn check_modalities(&self, kind: ModelKind) -> Result<(), TrainError> {
        if kind.uses_image() && !self.has_images {
            return Err(TrainError::MissingModality {
                kind,
                modality: "image",
            });
        }
        Ok(())
    }

    /// NCHW network inputs for `indices`, only for the modalities `kind` consumes.
    pub fn batch_input(&self, kind: ModelKind, indices: &[usize]) -> ModelInput<f32> {
        let RecordDims { k, f_b, h, w, .. } = self.dims;
        let b = indices.len();
        let bfm = kind.uses_bfm().then(|| {
            let mut data = vec![0.0f32; b * 2 * k * f_b];
            for (s, &i) in indices.iter().enumerate() {
                let src = &self.records[i].bfm_features;
                let dst = &mut data[s * 2 * k * f_b..(s + 1) * 2 * k * f_b];
                for (e, pair) in src.chunks_exact(2).enumerate() {
                    dst[e] = pair[0];
                    dst[k * f_b + e] = pair[1];
                }
            }
            Tensor::from_vec([b, 2, k, f_b], data)
        });
        let image = kind.uses_image().then(|| {
            let plane = h * w;
            let mut data = vec![0.0f32; b * 3 * plane];
            for (s, &i) in indices.iter().enumerate() {
                let src = self.records[i].image.as_ref().expect("modality checked");
                let dst = &mut data[s * 3 * plane..(s + 1) * 3 * plane];
                for (p, px) in src.chunks_exact(3).enumerate() {
                    for c in 0..3 {
                        dst[c * plane + p] = px[c];
                    }
                }
            }
            Tensor::from_vec([b, 3, h, w], data)
        });
        ModelInput { bfm, image }
    }

    /// Normalized targets `(B, 1, K, F_h)` for `indices`.
    pub fn batch_target(&self, indices: &[usize]) -> Tensor<f32> {
        let len = self.dims.k * self.dims.f_h;
        let mut data = Vec::with_capacity(indices.len() * len);
        for &i in indices {
            data.extend_from_slice(&self.records[i].target);
        }
        Tensor::from_vec([indices.len(), 1, self.dims.k, self.dims.f_h], data)
    }
}

/// Eval-mode predictions for `indices`, concatenated in order, each `K·F_h` values.
pub fn predict(
    net: &mut Network<f32>,
    data: &PreparedDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<Vec<f32>, TrainError> {
    let kind = net.spec().kind;
    data.check_modalities(kind)?;
    let mut out = Vec::with_capacity(indices.len() * data.dims.k * data.dims.f_h);
    for chunk in indices.chunks(batch_size.max(1)) {
        let y = net.forward(&data.batch_input(kind, chunk), false)?;
        out.extend_from_slice(&y.data);
    }
    Ok(out)
}

/// Eval-mode mean squared error over `indices`.
pub fn evaluate_mse(
    net: &mut Network<f32>,
    data: &PreparedDataset,
    indices: &[usize],
    batch_size: usize,
) -> Result<f64, TrainError> {
    let pred = predict(net, data, indices, batch_size)?;
    let mut sum = 0.0;
    for (p, &i) in pred.chunks_exact(data.dims.k * data.dims.f_h).zip(indices) {
        for (a, b) in p.iter().zip(&data.records[i].target) {
            let d = (*a - *b) as f64;
            sum += d * d;
        }
    }
    Ok(sum / pred.len().max(1) as f64)
}

// ============================================================================
// Training
// ============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub kind: ModelKind,
    pub seed: u64,
    pub split_seed: u64,
    pub spec: ModelSpec,
    pub param_count: usize,
    /// Per-epoch sample-weighted mean of training-mode batch losses.
    pub train_loss: Vec<f64>,
    /// Per-epoch eval-mode validation MSE.
    pub val_loss: Vec<f64>,
    /// 1-based epoch whose weights were restored.
    pub best_epoch: usize,
    /// Number of epochs run.
    pub stop_epoch: usize,
    pub best_val_loss: f64,
    pub early_stopped: bool,
    /// Weights from `best_epoch`.
    #[serde(skip)]
    pub params: ModelParams,
}

impl RunRecord {
    /// Rebuilds the network with the restored weights.
    pub fn network(&self) -> Result<Network<f32>, TrainError> {
        let mut net = Network::new(self.spec.clone(), self.seed)?;
        net.load_params(&self.params)?;
        Ok(net)
    }
}

pub fn train(
    kind: ModelKind,
    data: &PreparedDataset,
    config: &TrainConfig,
    seed: u64,
    arch: &ArchConfig,
) -> Result<RunRecord, TrainError> {
    config.validate()?;
    data.check_modalities(kind)?;
    let spec = build_model_with(kind, data.dims, arch)?;
    let mut net = Network::<f32>::new(spec.clone(), seed)?;
    let param_count = net.param_count();
    let mut opt = Adam::new(config.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(1);
    let mut order = data.split.train.clone();
    let mut stopper = EarlyStopping::new(config.patience);
    let mut best = net.export_params();
    let (mut train_loss, mut val_loss) = (Vec::new(), Vec::new());
    let mut early_stopped = false;

    for epoch in 1..=config.max_epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let input = data.batch_input(kind, chunk);
            let target = data.batch_target(chunk);
            net.zero_grad();
            let pred = net.forward(&input, true)?;
            let count = pred.data.len() as f64;
            let scale = (2.0 / count) as f32;
            let mut sq = 0.0;
            let grad: Vec<f32> = pred
                .data
                .iter()
                .zip(&target.data)
                .map(|(p, t)| {
                    let d = *p - *t;
                    sq += (d as f64) * (d as f64);
                    scale * d
                })
                .collect();
            if !sq.is_finite() {
                return Err(TrainError::Diverged { kind, seed, epoch });
            }
            sum += sq / count * chunk.len() as f64;
            net.backward(Tensor::from_vec(pred.shape, grad));
            opt.step(net.params());
        }
        let tl = sum / order.len() as f64;
        let vl = evaluate_mse(&mut net, data, &data.split.val, config.batch_size)?;
        if !(tl.is_finite() && vl.is_finite()) {
            return Err(TrainError::Diverged { kind, seed, epoch });
        }
        train_loss.push(tl);
        val_loss.push(vl);
        log::info!("{kind} seed {seed} epoch {epoch}: train {tl:.6} val {vl:.6}");
        let obs = stopper.observe(vl);
        if obs.improved {
            best = net.export_params();
        }
        if obs.stop {
            early_stopped = true;
            break;
        }
    }
    Ok(RunRecord {
        kind,
        seed,
        split_seed: data.split.seed,
        spec,
        param_count,
        stop_epoch: train_loss.len(),
        train_loss,
        val_loss,
        best_epoch: stopper.best_epoch(),
        best_val_loss: stopper.best(),
        early_stopped,
        params: best,
    })
}

/// Result of one `(kind, seed)` run of the protocol.
#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub kind: ModelKind,
    pub seed: u64,
    pub result: Result<RunRecord, TrainError>,
}

/// Trains every kind with every seed on the shared split. Failed runs are reported in
/// place; the remaining runs still complete.
pub fn run_protocol(
    data: &PreparedDataset,
    kinds: &[ModelKind],
    config: &TrainConfig,
    arch: &ArchConfig,
) -> Result<Vec<RunOutcome>, TrainError> {
    config.validate()?;
    let jobs: Vec<(ModelKind, u64)> = kinds
        .iter()
        .flat_map(|&k| config.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let run = |&(kind, seed): &(ModelKind, u64)| RunOutcome {
        kind,
        seed,
        result: train(kind, data, config, seed, arch),
    };
    Ok(if config.deterministic {
        jobs.iter().map(run).collect()
    } else {
        jobs.par_iter().map(run).collect()
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn split_sizes() {
        let s = split_dataset(24_000, [0.72, 0.18, 0.10], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (17_280, 4_320, 2_400));
        let s = split_dataset(2_000, [0.72, 0.18, 0.10], 3).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (1_440, 360, 200));
    }

    #[test]
    fn split_partitions_and_repeats() {
        let a = split_dataset(137, [0.72, 0.18, 0.10], 9).unwrap();
        let mut all: Vec<usize> = a.train.iter().chain(&a.val).chain(&a.test).copied().collect();
        all.sort_unstable();
        assert_eq!(all, (0..137).collect::<Vec<_>>());
        assert_eq!(a, split_dataset(137, [0.72, 0.18, 0.10], 9).unwrap());
        assert_ne!(a.test, split_dataset(137, [0.72, 0.18, 0.10], 10).unwrap().test);
    }

    #[test]
    fn split_rejects_tiny() {
        assert_eq!(
            split_dataset(9, [0.72, 0.18, 0.10], 0),
            Err(TrainError::SplitTooSmall { n: 9 })
        );
        let s = split_dataset(10, [0.72, 0.18, 0.10], 0).unwrap();
        assert_eq!((s.train.len(), s.val.len(), s.test.len()), (8, 1, 1));
        assert!(split_dataset(10, [0.72, 0.27, 0.01], 0).is_err());
    }

    #[test]
    fn increasing_sequence_stops_after_eleven() {
        let losses: Vec<f64> = (0..100).map(|i| 1.0 + i as f64).collect();
        assert_eq!(stopping_point(&losses, 10, 100), (11, 1));
    }

    #[test]
    fn improving_sequence_runs_to_max() {
        let losses: Vec<f64> = (0..100).map(|i| 1.0 / (1.0 + i as f64)).collect();
        assert_eq!(stopping_point(&losses, 10, 100), (100, 100));
    }

    #[test]
    fn ties_count_as_improvement() {
        let mut losses = vec![1.0; 12];
        losses.extend([2.0; 20]);
        assert_eq!(stopping_point(&losses, 10, 100), (22, 12));
    }

    #[test]
    fn config_validation() {
        assert!(TrainConfig::default().validate().is_ok());
        let bad = TrainConfig {
            split_ratio: [0.7, 0.2, 0.2],
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let bad = TrainConfig {
            patience: 0,
            ..TrainConfig::default()
        };
        assert!(bad.validate().is_err());
        let long = TrainConfig {
            patience: 200,
            ..TrainConfig::default()
        };
        assert!(long.validate().is_ok());
    }
}
