//! Model-ready tensors: flattened feedback matrices as (amplitude, argument) channels,
//! area-downsampled camera images and min–max normalized CSI amplitude targets.
//!
//! All element axes are flattened row-major: `(m, s)` for feedback matrices and
//! `(n, m)` for CSI, so element `e` of the CSI target is `H[n = e / M, m = e % M]`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bfm::BfmSample;
use crate::sim::{CsiSample, RgbImage};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PreprocessError {
    #[error("cannot fit normalization statistics on an empty training split")]
    EmptySplit,
    #[error("downsampling cannot enlarge {axis}: requested {requested}, source {source_len}")]
    Upsample {
        axis: &'static str,
        requested: usize,
        source_len: usize,
    },
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    Shape { expected: [usize; 3], actual: [usize; 3] },
}

/// Dense row-major 3-axis array.
#[derive(Debug, Clone, PartialEq)]
pub struct Array3 {
    pub shape: [usize; 3],
    pub data: Vec<f64>,
}

impl Array3 {
    pub fn zeros(shape: [usize; 3]) -> Self {
        Self {
            shape,
            data: vec![0.0; shape[0] * shape[1] * shape[2]],
        }
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize, c: usize) -> f64 {
        self.data[(i * self.shape[1] + j) * self.shape[2] + c]
    }

    #[inline]
    fn set(&mut self, i: usize, j: usize, c: usize, v: f64) {
        self.data[(i * self.shape[1] + j) * self.shape[2] + c] = v;
    }

    pub fn to_f32(&self) -> Vec<f32> {
        self.data.iter().map(|&v| v as f32).collect()
    }
}

/// Shape bookkeeping for one record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordDims {
    /// Subcarriers (K).
    pub k: usize,
    /// Flattened BFM elements, M · S_cols.
    pub f_b: usize,
    /// Flattened CSI elements, N · M.
    pub f_h: usize,
    /// Downsampled image height.
    pub h: usize,
    /// Downsampled image width.
    pub w: usize,
}

/// One model-ready sample. Layouts: `bfm_features` `[k][f_b][2]`, `image` `[h][w][3]`,
/// `target` `[k][f_h]` (single trailing channel).
#[derive(Debug, Clone, PartialEq)]
pub struct PreprocessedRecord {
    pub dims: RecordDims,
    pub bfm_features: Vec<f32>,
    pub image: Option<Vec<f32>>,
    pub target: Vec<f32>,
}

/// `|v|` and `arg v` of every feedback element; `arg 0 = 0`.
pub fn flatten_bfm(bfm: &BfmSample) -> Array3 {
    let f_b = bfm.m * bfm.s_cols;
    let mut out = Array3::zeros([bfm.k, f_b, 2]);
    for k in 0..bfm.k {
        for e in 0..f_b {
            let v = bfm.data[k * f_b + e];
            let arg = if v.re == 0.0 && v.im == 0.0 { 0.0 } else { v.arg() };
            out.set(k, e, 0, v.norm());
            out.set(k, e, 1, arg);
        }
    }
    out
}

/// `|H[k]|` per element, shape `(K, N·M, 1)`.
pub fn flatten_csi_amplitude(csi: &CsiSample) -> Array3 {
    Array3 {
        shape: [csi.k, csi.n * csi.m, 1],
        data: csi.data.iter().map(|z| z.norm()).collect(),
    }
}

/// Per-coordinate minimum and maximum of the CSI amplitude over a training split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub k: usize,
    pub f_h: usize,
    pub min: Vec<f64>,
    pub max: Vec<f64>,
}

impl NormStats {
    /// Flat indices of coordinates whose training range collapsed to a point.
    pub fn degenerate_coordinates(&self) -> Vec<usize> {
        self.min
            .iter()
            .zip(&self.max)
            .enumerate()
            .filter(|(_, (lo, hi))| lo == hi)
            .map(|(i, _)| i)
            .collect()
    }
}

pub fn fit_norm_stats<'a, I>(targets: I) -> Result<NormStats, PreprocessError>
where
    I: IntoIterator<Item = &'a Array3>,
{
    let mut iter = targets.into_iter();
    let first = iter.next().ok_or(PreprocessError::EmptySplit)?;
    let mut stats = NormStats {
        k: first.shape[0],
        f_h: first.shape[1],
        min: first.data.clone(),
        max: first.data.clone(),
    };
    for t in iter {
        if t.shape != first.shape {
            return Err(PreprocessError::Shape {
                expected: first.shape,
                actual: t.shape,
            });
        }
        for (i, &v) in t.data.iter().enumerate() {
            stats.min[i] = stats.min[i].min(v);
            stats.max[i] = stats.max[i].max(v);
        }
    }
    Ok(stats)
}

/// Min–max scaling to `[0, 1]`, clipping values outside the training range. Degenerate
/// coordinates map to 0.
pub fn normalize(target: &Array3, stats: &NormStats) -> Array3 {
    let data = target
        .data
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let (lo, hi) = (stats.min[i], stats.max[i]);
            if hi > lo {
                ((v - lo) / (hi - lo)).clamp(0.0, 1.0)
            } else {
                0.0
            }
        })
        .collect();
    Array3 {
        shape: target.shape,
        data,
    }
}

/// Overlap weights of a box filter mapping `src` samples onto `dst` bins.
fn area_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut taps = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < src {
                let overlap = (hi.min((i + 1) as f64) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    taps.push((i, overlap / scale));
                }
                i += 1;
            }
            taps
        })
        .collect()
}

/// Area-averaging resample to `(h, w)` with channels scaled from 8-bit to `[0, 1]`.
pub fn downsample_image(image: &RgbImage, h: usize, w: usize) -> Result<Array3, PreprocessError> {
    if h > image.height || h == 0 {
        return Err(PreprocessError::Upsample {
            axis: "height",
            requested: h,
            source_len: image.height,
        });
    }
    if w > image.width || w == 0 {
        return Err(PreprocessError::Upsample {
            axis: "width",
            requested: w,
            source_len: image.width,
        });
    }
    let rows = area_weights(image.height, h);
    let cols = area_weights(image.width, w);

    // Horizontal pass, then vertical.
    let mut tmp = vec![0.0f64; image.height * w * 3];
    for r in 0..image.height {
        for (oc, taps) in cols.iter().enumerate() {
            for c in 0..3 {
                let mut acc = 0.0;
                for &(ic, wt) in taps {
                    acc += wt * image.data[(r * image.width + ic) * 3 + c] as f64;
                }
                tmp[(r * w + oc) * 3 + c] = acc;
            }
        }
    }
    let mut out = Array3::zeros([h, w, 3]);
    for (or, taps) in rows.iter().enumerate() {
        for oc in 0..w {
            for c in 0..3 {
                let mut acc = 0.0;
                for &(ir, wt) in taps {
                    acc += wt * tmp[(ir * w + oc) * 3 + c];
                }
                out.set(or, oc, c, acc / 255.0);
            }
        }
    }
    Ok(out)
}

/// Assembles one model-ready record. The target is normalized with `stats`; the image,
/// when present, is area-resampled to `image_hw`.
pub fn build_record(
    bfm: &BfmSample,
    csi: &CsiSample,
    image: Option<&RgbImage>,
    stats: &NormStats,
    image_hw: [usize; 2],
) -> Result<PreprocessedRecord, PreprocessError> {
    let features = flatten_bfm(bfm);
    let amplitude = flatten_csi_amplitude(csi);
    let expected = [stats.k, stats.f_h, 1];
    if amplitude.shape != expected {
        return Err(PreprocessError::Shape {
            expected,
            actual: amplitude.shape,
        });
    }
    if features.shape[0] != amplitude.shape[0] {
        return Err(PreprocessError::Shape {
            expected: [amplitude.shape[0], features.shape[1], 2],
            actual: features.shape,
        });
    }
    let image = image
        .map(|img| downsample_image(img, image_hw[0], image_hw[1]).map(|a| a.to_f32()))
        .transpose()?;
    Ok(PreprocessedRecord {
        dims: RecordDims {
            k: amplitude.shape[0],
            f_b: features.shape[1],
            f_h: amplitude.shape[1],
            h: image_hw[0],
            w: image_hw[1],
        },
        bfm_features: features.to_f32(),
        image,
        target: normalize(&amplitude, stats).to_f32(),
    })
}
