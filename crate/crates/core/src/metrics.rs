//! Test-split scoring: RMSE in the normalized target domain, multi-seed summaries, the
//! predict-the-training-mean baseline and per-element frequency series.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::ModelKind;
use crate::nn::Tensor;
use crate::train::{predict, PreparedDataset, RunRecord, TrainError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum MetricsError {
    #[error("shape mismatch: prediction {pred:?}, truth {truth:?}")]
    ShapeMismatch { pred: Vec<usize>, truth: Vec<usize> },
    #[error("summaries need at least 2 seeds, got {0}")]
    TooFewSeeds(usize),
    #[error("element ({n}, {m}) outside 1..={rx} × 1..={tx}")]
    ElementOutOfRange { n: usize, m: usize, rx: usize, tx: usize },
    #[error("sample {index} outside dataset of {len}")]
    SampleOutOfRange { index: usize, len: usize },
    #[error(transparent)]
    Train(#[from] TrainError),
}

/// Root of the mean squared difference over every entry.
pub fn rmse(pred: &[f32], truth: &[f32]) -> Result<f64, MetricsError> {
    if pred.len() != truth.len() {
        return Err(MetricsError::ShapeMismatch {
            pred: vec![pred.len()],
            truth: vec![truth.len()],
        });
    }
    Ok((sum_sq_diff(pred, truth) / pred.len().max(1) as f64).sqrt())
}

/// [`rmse`] over whole tensors, which must share a shape.
pub fn rmse_tensor(pred: &Tensor<f32>, truth: &Tensor<f32>) -> Result<f64, MetricsError> {
    if pred.shape != truth.shape {
        return Err(MetricsError::ShapeMismatch {
            pred: pred.shape.to_vec(),
            truth: truth.shape.to_vec(),
        });
    }
    rmse(&pred.data, &truth.data)
}

/// `Σ (a − b)²` accumulated in `f64`.
pub fn sum_sq_diff(a: &[f32], b: &[f32]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let d = *x as f64 - *y as f64;
            d * d
        })
        .sum()
}

/// Per-kind test RMSE across seeds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub kind: ModelKind,
    /// `(seed, test RMSE)` in input order.
    pub per_seed: Vec<(u64, f64)>,
    pub mean: f64,
    /// Population standard deviation.
    pub std: f64,
    /// Test samples scored per seed.
    pub sample_count: usize,
}

/// Mean and population standard deviation. Sums run over the values in sorted order so
/// that the result does not depend on seed order.
pub fn summarize(kind: ModelKind, per_seed: &[(u64, f64)], sample_count: usize) -> Result<RunMetrics, MetricsError> {
    if per_seed.len() < 2 {
        return Err(MetricsError::TooFewSeeds(per_seed.len()));
    }
    let mut values: Vec<f64> = per_seed.iter().map(|(_, v)| *v).collect();
    values.sort_by(f64::total_cmp);
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    Ok(RunMetrics {
        kind,
        per_seed: per_seed.to_vec(),
        mean,
        std: var.sqrt(),
        sample_count,
    })
}

/// Test RMSE of a trained run with its restored best weights.
pub fn test_rmse(run: &RunRecord, data: &PreparedDataset, batch_size: usize) -> Result<f64, MetricsError> {
    let mut net = run.network()?;
    let pred = predict(&mut net, data, &data.split.test, batch_size)?;
    let truth = split_targets(data, &data.split.test);
    rmse(&pred, &truth)
}

/// Test RMSE of the constant predictor equal to the coordinate-wise training-split mean.
pub fn baseline_rmse(data: &PreparedDataset) -> f64 {
    let len = data.dims.k * data.dims.f_h;
    let mut mean = vec![0.0f64; len];
    for &i in &data.split.train {
        for (m, v) in mean.iter_mut().zip(&data.records[i].target) {
            *m += *v as f64;
        }
    }
    let n = data.split.train.len() as f64;
    let mean: Vec<f32> = mean.iter().map(|m| (m / n) as f32).collect();
    let pred: Vec<f32> = data.split.test.iter().flat_map(|_| mean.iter().copied()).collect();
    let truth = split_targets(data, &data.split.test);
    (sum_sq_diff(&pred, &truth) / truth.len() as f64).sqrt()
}

fn split_targets(data: &PreparedDataset, indices: &[usize]) -> Vec<f32> {
    indices
        .iter()
        .flat_map(|&i| data.records[i].target.iter().copied())
        .collect()
}

/// One subcarrier of a frequency series, normalized domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesRow {
    pub k: usize,
    pub truth: f32,
    pub pred: f32,
}

/// Ground truth and eval-mode prediction of element `(n, m)` (1-based) across subcarriers
/// for one sample.
pub fn export_element_series(
    run: &RunRecord,
    data: &PreparedDataset,
    sample: usize,
    element: (usize, usize),
) -> Result<Vec<SeriesRow>, MetricsError> {
    let (rx, tx) = data.antennas;
    let (n, m) = element;
    if n == 0 || m == 0 || n > rx || m > tx {
        return Err(MetricsError::ElementOutOfRange { n, m, rx, tx });
    }
    if sample >= data.records.len() {
        return Err(MetricsError::SampleOutOfRange {
            index: sample,
            len: data.records.len(),
        });
    }
    let e = (n - 1) * tx + (m - 1);
    let f_h = data.dims.f_h;
    let mut net = run.network()?;
    let pred = predict(&mut net, data, &[sample], 1)?;
    let truth = &data.records[sample].target;
    Ok((0..data.dims.k)
        .map(|k| SeriesRow {
            k,
            truth: truth[k * f_h + e],
            pred: pred[k * f_h + e],
        })
        .collect())
}

/// `k,truth,pred` CSV with a header line.
pub fn series_csv(rows: &[SeriesRow]) -> String {
    let mut out = String::from("k,truth,pred\n");
    for r in rows {
        out.push_str(&format!("{},{},{}\n", r.k, r.truth, r.pred));
    }
    out
}
