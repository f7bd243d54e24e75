//! On-disk datasets, checkpoints and run directories.
//!
//! A dataset directory holds `manifest.json` plus flat little-endian arrays:
//! `csi.bin` (complex64 `[sample][k][n][m]`, interleaved re/im `f32`), `bfm.bin`
//! (complex64 `[sample][k][m][s]`) and `images.bin` (`u8` `[sample][h][w][3]`). The
//! manifest registers the byte length and SHA-256 of every array and is written last.

use std::collections::BTreeMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::bfm::{emulate_bfm, BfmError, BfmSample};
use crate::model::{ModelParams, ModelSpec};
use crate::preprocess::NormStats;
use crate::sim::{CsiSample, RgbImage, SceneConfig, SceneState};
use crate::train::{RunRecord, Split};

pub const SCHEMA_VERSION: u32 = 1;
pub const MANIFEST: &str = "manifest.json";
pub const CSI_FILE: &str = "csi.bin";
pub const BFM_FILE: &str = "bfm.bin";
pub const IMAGES_FILE: &str = "images.bin";
pub const CHECKPOINT_MANIFEST: &str = "checkpoint.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("missing file {0}")]
    MissingFile(PathBuf),
    #[error("checksum mismatch in {0}")]
    Checksum(String),
    #[error("length mismatch in {file}: expected {expected} bytes, found {actual}")]
    Length { file: String, expected: u64, actual: u64 },
    #[error("unsupported schema version {found} (supported: {SCHEMA_VERSION})")]
    Schema { found: u32 },
    #[error("malformed manifest {path}: {message}")]
    Manifest { path: PathBuf, message: String },
    #[error("inconsistent dataset: {0}")]
    Shape(String),
    #[error(transparent)]
    Bfm(#[from] BfmError),
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> StoreError + '_ {
    move |source| {
        if source.kind() == io::ErrorKind::NotFound {
            StoreError::MissingFile(path.to_path_buf())
        } else {
            StoreError::Io {
                path: path.to_path_buf(),
                source,
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FileEntry {
    pub byte_len: u64,
    pub sha256: String,
}

/// Provenance of a simulated dataset.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GeneratorInfo {
    /// SHA-256 of the compact JSON encoding of `config`.
    pub config_hash: String,
    pub seed: u64,
    pub config: SceneConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub schema_version: u32,
    /// Subcarriers.
    pub k: usize,
    /// Receive antennas.
    pub n: usize,
    /// Transmit antennas.
    pub m: usize,
    pub s_cols: usize,
    /// `(height, width)` of stored images, when present.
    pub image_hw: Option<[usize; 2]>,
    pub sample_count: usize,
    pub has_bfm: bool,
    pub has_images: bool,
    pub generator: Option<GeneratorInfo>,
    pub split: Option<Split>,
    pub norm_stats: Option<NormStats>,
    pub files: BTreeMap<String, FileEntry>,
}

impl DatasetManifest {
    fn record_bytes(&self, file: &str) -> Option<u64> {
        let (k, n, m, s) = (self.k as u64, self.n as u64, self.m as u64, self.s_cols as u64);
        match file {
            CSI_FILE => Some(k * n * m * 8),
            BFM_FILE => Some(k * m * s * 8),
            IMAGES_FILE => self.image_hw.map(|[h, w]| (h * w * 3) as u64),
            _ => None,
        }
    }
}

/// In-memory dataset. CSI and BFM values are complex64-representable, so a write/read
/// round trip is bit-exact.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub csi: Vec<CsiSample>,
    pub bfm: Option<Vec<BfmSample>>,
    pub images: Option<Vec<RgbImage>>,
}

/// Rounds every component to the nearest `f32`, the stored precision.
pub fn quantize(values: &mut [Complex64]) {
    for v in values {
        *v = Complex64::new(v.re as f32 as f64, v.im as f32 as f64);
    }
}

pub fn config_hash(config: &SceneConfig) -> String {
    let json = serde_json::to_vec(config).expect("scene config serializes");
    hex::encode(Sha256::digest(&json))
}

impl Dataset {
    /// Packages simulator output. CSI is quantized to complex64 before the feedback
    /// matrices are emulated from it, which are then quantized as well.
    pub fn from_simulation(config: &SceneConfig, pairs: Vec<(SceneState, CsiSample)>) -> Result<Self, StoreError> {
        let first = pairs.first().ok_or_else(|| StoreError::Shape("no samples".into()))?;
        let (k, n, m) = (first.1.k, first.1.n, first.1.m);
        let image_hw = [first.0.image.height, first.0.image.width];
        let mut csi = Vec::with_capacity(pairs.len());
        let mut images = Vec::with_capacity(pairs.len());
        for (state, mut sample) in pairs {
            quantize(&mut sample.data);
            csi.push(sample);
            images.push(state.image);
        }
        let bfm = emulate_all(&csi)?;
        let manifest = DatasetManifest {
            schema_version: SCHEMA_VERSION,
            k,
            n,
            m,
            s_cols: m.min(n),
            image_hw: Some(image_hw),
            sample_count: csi.len(),
            has_bfm: true,
            has_images: true,
            generator: Some(GeneratorInfo {
                config_hash: config_hash(config),
                seed: config.rng_seed,
                config: config.clone(),
            }),
            split: None,
            norm_stats: None,
            files: BTreeMap::new(),
        };
        Ok(Self {
            manifest,
            csi,
            bfm: Some(bfm),
            images: Some(images),
        })
    }

    /// Stored feedback matrices, or matrices emulated from the CSI when none are stored.
    pub fn bfm_or_emulate(&self) -> Result<Vec<BfmSample>, StoreError> {
        match &self.bfm {
            Some(b) => Ok(b.clone()),
            None => emulate_all(&self.csi),
        }
    }
}

fn emulate_all(csi: &[CsiSample]) -> Result<Vec<BfmSample>, StoreError> {
    use rayon::prelude::*;
    let mut bfm = csi.par_iter().map(emulate_bfm).collect::<Result<Vec<_>, _>>()?;
    for b in &mut bfm {
        quantize(&mut b.data);
    }
    Ok(bfm)
}

// ============================================================================
// Wire format
// ============================================================================

/// Interleaved little-endian `f32` (re, im) pairs.
pub fn encode_complex64(values: &[Complex64]) -> Vec<u8> {
    let mut out = Vec::with_capacity(values.len() * 8);
    for v in values {
        out.extend_from_slice(&(v.re as f32).to_le_bytes());
        out.extend_from_slice(&(v.im as f32).to_le_bytes());
    }
    out
}

pub fn decode_complex64(bytes: &[u8]) -> Vec<Complex64> {
    bytes
        .chunks_exact(8)
        .map(|c| {
            let re = f32::from_le_bytes([c[0], c[1], c[2], c[3]]);
            let im = f32::from_le_bytes([c[4], c[5], c[6], c[7]]);
            Complex64::new(re as f64, im as f64)
        })
        .collect()
}

pub fn encode_f32(values: &[f32]) -> Vec<u8> {
    values.iter().flat_map(|v| v.to_le_bytes()).collect()
}

pub fn decode_f32(bytes: &[u8]) -> Vec<f32> {
    bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect()
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    fs::write(path, bytes).map_err(io_err(path))
}

fn read_file(path: &Path) -> Result<Vec<u8>, StoreError> {
    fs::read(path).map_err(io_err(path))
}

/// Writes `bytes` to a sibling temporary file and renames it into place.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), StoreError> {
    let tmp = path.with_extension("tmp");
    write_file(&tmp, bytes)?;
    fs::rename(&tmp, path).map_err(io_err(path))
}

fn to_json<T: Serialize>(value: &T) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(value).expect("serializable");
    s.push('\n');
    s.into_bytes()
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, StoreError> {
    let bytes = read_file(path)?;
    serde_json::from_slice(&bytes).map_err(|e| StoreError::Manifest {
        path: path.to_path_buf(),
        message: e.to_string(),
    })
}

// ============================================================================
// Datasets
// ============================================================================

/// Writes the arrays, then the manifest. Any previous manifest is removed first, so an
/// interrupted write never leaves a loadable directory.
pub fn write_dataset(dir: &Path, dataset: &Dataset) -> Result<DatasetManifest, StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest_path = dir.join(MANIFEST);
    match fs::remove_file(&manifest_path) {
        Ok(()) => {}
        Err(e) if e.kind() == io::ErrorKind::NotFound => {}
        Err(e) => return Err(io_err(&manifest_path)(e)),
    }
    let mut manifest = dataset.manifest.clone();
    manifest.sample_count = dataset.csi.len();
    manifest.has_bfm = dataset.bfm.is_some();
    manifest.has_images = dataset.images.is_some();
    manifest.files.clear();
    check_shapes(&manifest, dataset)?;

    let mut arrays: Vec<(&str, Vec<u8>)> = Vec::new();
    let csi: Vec<Complex64> = dataset.csi.iter().flat_map(|c| c.data.iter().copied()).collect();
    arrays.push((CSI_FILE, encode_complex64(&csi)));
    if let Some(bfm) = &dataset.bfm {
        let flat: Vec<Complex64> = bfm.iter().flat_map(|b| b.data.iter().copied()).collect();
        arrays.push((BFM_FILE, encode_complex64(&flat)));
    }
    if let Some(images) = &dataset.images {
        arrays.push((
            IMAGES_FILE,
            images.iter().flat_map(|i| i.data.iter().copied()).collect(),
        ));
    }
    for name in [CSI_FILE, BFM_FILE, IMAGES_FILE] {
        if !arrays.iter().any(|(n, _)| *n == name) {
            let _ = fs::remove_file(dir.join(name));
        }
    }
    for (name, bytes) in &arrays {
        write_file(&dir.join(name), bytes)?;
        manifest.files.insert(
            name.to_string(),
            FileEntry {
                byte_len: bytes.len() as u64,
                sha256: sha256_hex(bytes),
            },
        );
    }
    write_atomic(&manifest_path, &to_json(&manifest))?;
    Ok(manifest)
}

fn check_shapes(manifest: &DatasetManifest, dataset: &Dataset) -> Result<(), StoreError> {
    let (k, n, m, s) = (manifest.k, manifest.n, manifest.m, manifest.s_cols);
    for c in &dataset.csi {
        if (c.k, c.n, c.m) != (k, n, m) || c.data.len() != k * n * m {
            return Err(StoreError::Shape(format!("CSI sample {} is not {k}×{n}×{m}", c.t)));
        }
    }
    if let Some(bfm) = &dataset.bfm {
        if bfm.len() != dataset.csi.len() {
            return Err(StoreError::Shape("BFM and CSI sample counts differ".into()));
        }
        if let Some(b) = bfm
            .iter()
            .find(|b| (b.k, b.m, b.s_cols) != (k, m, s) || b.data.len() != k * m * s)
        {
            return Err(StoreError::Shape(format!("BFM sample {} is not {k}×{m}×{s}", b.t)));
        }
    }
    if let Some(images) = &dataset.images {
        let [h, w] = manifest
            .image_hw
            .ok_or_else(|| StoreError::Shape("images present but image_hw unset".into()))?;
        if images.len() != dataset.csi.len() {
            return Err(StoreError::Shape("image and CSI sample counts differ".into()));
        }
        if images
            .iter()
            .any(|i| i.height != h || i.width != w || i.data.len() != h * w * 3)
        {
            return Err(StoreError::Shape(format!("an image is not {h}×{w}×3")));
        }
    }
    Ok(())
}

/// Replaces the manifest of an existing dataset, keeping its file registry.
pub fn update_manifest(dir: &Path, manifest: &DatasetManifest) -> Result<(), StoreError> {
    let current = read_manifest(dir)?;
    let mut next = manifest.clone();
    next.files = current.files;
    write_atomic(&dir.join(MANIFEST), &to_json(&next))
}

pub fn read_manifest(dir: &Path) -> Result<DatasetManifest, StoreError> {
    let manifest: DatasetManifest = read_json(&dir.join(MANIFEST))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(StoreError::Schema {
            found: manifest.schema_version,
        });
    }
    Ok(manifest)
}

/// Reads one registered array after verifying its checksum and its length against both
/// the registry and the manifest dimensions.
fn read_verified(dir: &Path, manifest: &DatasetManifest, name: &str) -> Result<Vec<u8>, StoreError> {
    let entry = manifest.files.get(name).ok_or_else(|| StoreError::Manifest {
        path: dir.join(MANIFEST),
        message: format!("{name} is not registered"),
    })?;
    let bytes = read_file(&dir.join(name))?;
    if sha256_hex(&bytes) != entry.sha256 {
        return Err(StoreError::Checksum(name.to_string()));
    }
    let actual = bytes.len() as u64;
    if actual != entry.byte_len {
        return Err(StoreError::Length {
            file: name.to_string(),
            expected: entry.byte_len,
            actual,
        });
    }
    let record = manifest.record_bytes(name).unwrap_or(0);
    let expected = record * manifest.sample_count as u64;
    if actual != expected {
        return Err(StoreError::Length {
            file: name.to_string(),
            expected,
            actual,
        });
    }
    Ok(bytes)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset, StoreError> {
    let manifest = read_manifest(dir)?;
    let (k, n, m, s) = (manifest.k, manifest.n, manifest.m, manifest.s_cols);
    let count = manifest.sample_count;

    let csi_bytes = read_verified(dir, &manifest, CSI_FILE)?;
    let bfm_bytes = manifest
        .has_bfm
        .then(|| read_verified(dir, &manifest, BFM_FILE))
        .transpose()?;
    let image_bytes = manifest
        .has_images
        .then(|| read_verified(dir, &manifest, IMAGES_FILE))
        .transpose()?;

    let csi_flat = decode_complex64(&csi_bytes);
    let per = k * n * m;
    let csi = (0..count)
        .map(|t| CsiSample {
            t: t as u64,
            k,
            n,
            m,
            data: csi_flat[t * per..(t + 1) * per].to_vec(),
        })
        .collect();
    let bfm = bfm_bytes.map(|bytes| {
        let flat = decode_complex64(&bytes);
        let per = k * m * s;
        (0..count)
            .map(|t| BfmSample {
                t: t as u64,
                k,
                m,
                s_cols: s,
                data: flat[t * per..(t + 1) * per].to_vec(),
            })
            .collect()
    });
    let images = match (image_bytes, manifest.image_hw) {
        (Some(bytes), Some([h, w])) => {
            let per = h * w * 3;
            Some(
                (0..count)
                    .map(|t| RgbImage {
                        height: h,
                        width: w,
                        data: bytes[t * per..(t + 1) * per].to_vec(),
                    })
                    .collect(),
            )
        }
        _ => None,
    };
    Ok(Dataset {
        manifest,
        csi,
        bfm,
        images,
    })
}

/// Shape declaration for [`import_external_csi`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ImportStub {
    pub k: usize,
    pub n: usize,
    pub m: usize,
}

/// Imports a raw `csi.bin` in the dataset wire format as a CSI-only dataset. Feedback
/// matrices are not stored; they are emulated on demand.
pub fn import_external_csi(csi_path: &Path, stub: ImportStub, out_dir: &Path) -> Result<DatasetManifest, StoreError> {
    let bytes = read_file(csi_path)?;
    let record = (stub.k * stub.n * stub.m * 8) as u64;
    if record == 0 || bytes.is_empty() || !(bytes.len() as u64).is_multiple_of(record) {
        return Err(StoreError::Length {
            file: csi_path.display().to_string(),
            expected: record * (bytes.len() as u64 / record.max(1)).max(1),
            actual: bytes.len() as u64,
        });
    }
    let count = (bytes.len() as u64 / record) as usize;
    let flat = decode_complex64(&bytes);
    let per = stub.k * stub.n * stub.m;
    let csi: Vec<CsiSample> = (0..count)
        .map(|t| CsiSample {
            t: t as u64,
            k: stub.k,
            n: stub.n,
            m: stub.m,
            data: flat[t * per..(t + 1) * per].to_vec(),
        })
        .collect();
    if let Some(c) = csi.iter().find(|c| c.data.iter().any(|z| !z.is_finite())) {
        return Err(StoreError::Shape(format!("sample {} holds non-finite CSI", c.t)));
    }
    let dataset = Dataset {
        manifest: DatasetManifest {
            schema_version: SCHEMA_VERSION,
            k: stub.k,
            n: stub.n,
            m: stub.m,
            s_cols: stub.m.min(stub.n),
            image_hw: None,
            sample_count: count,
            has_bfm: false,
            has_images: false,
            generator: None,
            split: None,
            norm_stats: None,
            files: BTreeMap::new(),
        },
        csi,
        bfm: None,
        images: None,
    };
    write_dataset(out_dir, &dataset)
}

// ============================================================================
// Checkpoints and runs
// ============================================================================

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CheckpointManifest {
    pub schema_version: u32,
    pub spec: ModelSpec,
    pub seed: u64,
    /// Epoch whose weights are stored.
    pub epoch: usize,
    pub best_val_loss: f64,
    pub layout: Vec<(String, usize)>,
    pub weights: FileEntry,
}

pub fn write_checkpoint(
    dir: &Path,
    spec: &ModelSpec,
    params: &ModelParams,
    epoch: usize,
    best_val_loss: f64,
) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let bytes = encode_f32(&params.values);
    write_file(&dir.join(WEIGHTS_FILE), &bytes)?;
    let manifest = CheckpointManifest {
        schema_version: SCHEMA_VERSION,
        spec: spec.clone(),
        seed: params.seed,
        epoch,
        best_val_loss,
        layout: params.layout.clone(),
        weights: FileEntry {
            byte_len: bytes.len() as u64,
            sha256: sha256_hex(&bytes),
        },
    };
    write_atomic(&dir.join(CHECKPOINT_MANIFEST), &to_json(&manifest))
}

pub fn read_checkpoint(dir: &Path) -> Result<(CheckpointManifest, ModelParams), StoreError> {
    let manifest: CheckpointManifest = read_json(&dir.join(CHECKPOINT_MANIFEST))?;
    if manifest.schema_version != SCHEMA_VERSION {
        return Err(StoreError::Schema {
            found: manifest.schema_version,
        });
    }
    let bytes = read_file(&dir.join(WEIGHTS_FILE))?;
    if sha256_hex(&bytes) != manifest.weights.sha256 {
        return Err(StoreError::Checksum(WEIGHTS_FILE.into()));
    }
    let expected = 4 * manifest.layout.iter().map(|(_, n)| *n as u64).sum::<u64>();
    if bytes.len() as u64 != manifest.weights.byte_len || bytes.len() as u64 != expected {
        return Err(StoreError::Length {
            file: WEIGHTS_FILE.into(),
            expected,
            actual: bytes.len() as u64,
        });
    }
    let params = ModelParams {
        seed: manifest.seed,
        layout: manifest.layout.clone(),
        values: decode_f32(&bytes),
    };
    Ok((manifest, params))
}

/// Per-run evaluation written next to the run record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunEvaluation {
    pub test_rmse: f64,
    pub baseline_rmse: f64,
    pub test_samples: usize,
}

pub const RUN_CONFIG: &str = "config.json";
pub const RUN_SPLIT: &str = "split.json";
pub const RUN_LOSS: &str = "loss.csv";
pub const RUN_RECORD: &str = "run.json";
pub const RUN_METRICS: &str = "metrics.json";
pub const RUN_CHECKPOINT_DIR: &str = "checkpoint";

/// Run directory: resolved config snapshot, split indices, per-epoch loss log, best
/// checkpoint, run record and evaluation.
pub fn write_run_dir<C: Serialize>(
    dir: &Path,
    config: &C,
    split: &Split,
    run: &RunRecord,
    evaluation: &RunEvaluation,
) -> Result<(), StoreError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    write_file(&dir.join(RUN_CONFIG), &to_json(config))?;
    write_file(&dir.join(RUN_SPLIT), &to_json(split))?;
    write_file(&dir.join(RUN_LOSS), loss_csv(run).as_bytes())?;
    write_checkpoint(
        &dir.join(RUN_CHECKPOINT_DIR),
        &run.spec,
        &run.params,
        run.best_epoch,
        run.best_val_loss,
    )?;
    write_file(&dir.join(RUN_METRICS), &to_json(evaluation))?;
    // The run record goes last and marks the directory complete.
    write_atomic(&dir.join(RUN_RECORD), &to_json(run))
}

pub fn loss_csv(run: &RunRecord) -> String {
    let mut out = String::from("epoch,train_loss,val_loss\n");
    for (i, (t, v)) in run.train_loss.iter().zip(&run.val_loss).enumerate() {
        out.push_str(&format!("{},{t},{v}\n", i + 1));
    }
    out
}

/// Loads a completed run directory with its restored weights.
pub fn read_run_dir(dir: &Path) -> Result<(RunRecord, RunEvaluation), StoreError> {
    let mut run: RunRecord = read_json(&dir.join(RUN_RECORD))?;
    let evaluation: RunEvaluation = read_json(&dir.join(RUN_METRICS))?;
    let (_, params) = read_checkpoint(&dir.join(RUN_CHECKPOINT_DIR))?;
    run.params = params;
    Ok((run, evaluation))
}

pub fn read_split(dir: &Path) -> Result<Split, StoreError> {
    read_json(&dir.join(RUN_SPLIT))
}
