//! Synthetic indoor scene: a 2×(M, N) MIMO-OFDM link in a rectangular room with a
//! pedestrian walking along one of several straight paths, observed by a top-down camera.
//!
//! The channel is a sum of discrete paths (line of sight, first-order wall reflections
//! via the image method, and a single scatter path off the pedestrian), each contributing
//! `g · a_rx a_txᵀ · exp(-j2π f_k τ)` on subcarrier `k`.

use std::f64::consts::PI;

use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::cmat::CMat;

const SPEED_OF_LIGHT: f64 = 299_792_458.0;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("invalid scene config: {0}")]
    InvalidConfig(String),
    #[error("transmitter and receiver coincide")]
    CoincidentAntennas,
}

/// Straight walk segment in room coordinates (meters).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub start: [f64; 2],
    pub end: [f64; 2],
}

impl Segment {
    pub fn length(&self) -> f64 {
        (self.end[0] - self.start[0]).hypot(self.end[1] - self.start[1])
    }
}

/// Which walk path(s) the pedestrian follows.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathSelection {
    /// Round-robin over every configured path.
    All,
    Single(usize),
}

impl Serialize for PathSelection {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        match self {
            PathSelection::All => s.serialize_str("all"),
            PathSelection::Single(i) => s.serialize_u64(*i as u64),
        }
    }
}

impl<'de> Deserialize<'de> for PathSelection {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Index(u64),
            Name(String),
        }
        match Raw::deserialize(d)? {
            Raw::Index(i) => Ok(PathSelection::Single(i as usize)),
            Raw::Name(s) if s == "all" => Ok(PathSelection::All),
            Raw::Name(s) => Err(serde::de::Error::custom(format!(
                "path must be \"all\" or a path index, got {s:?}"
            ))),
        }
    }
}

/// Switches for the individual channel contributions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelComponents {
    pub line_of_sight: bool,
    pub wall_reflections: bool,
    pub pedestrian_scatter: bool,
    pub blockage: bool,
    pub noise: bool,
}

impl Default for ChannelComponents {
    fn default() -> Self {
        Self {
            line_of_sight: true,
            wall_reflections: true,
            pedestrian_scatter: true,
            blockage: true,
            noise: true,
        }
    }
}

impl ChannelComponents {
    pub fn los_only() -> Self {
        Self {
            line_of_sight: true,
            wall_reflections: false,
            pedestrian_scatter: false,
            blockage: false,
            noise: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SceneConfig {
    /// Room width (x) and depth (y) in meters.
    pub room_size: [f64; 2],
    pub ap_position: [f64; 3],
    pub sta_position: [f64; 3],
    /// M
    pub tx_antennas: usize,
    /// N
    pub rx_antennas: usize,
    /// Element spacing of both arrays, in wavelengths.
    pub antenna_spacing: f64,
    pub carrier_freq_hz: f64,
    /// K
    pub subcarriers: usize,
    pub subcarrier_spacing_hz: f64,
    pub pedestrian_radius: f64,
    pub pedestrian_speed: f64,
    /// Scatter amplitude of the pedestrian, in meters (square root of the bistatic
    /// cross-section over 4π).
    pub pedestrian_scatter_coeff: f64,
    pub walk_paths: Vec<Segment>,
    pub path: PathSelection,
    pub sample_rate_hz: f64,
    pub snr_db: f64,
    pub wall_reflection_coeff: f64,
    pub blockage_atten_db: f64,
    /// Camera raster (height, width).
    pub image_size: [usize; 2],
    pub components: ChannelComponents,
    pub rng_seed: u64,
}

impl Default for SceneConfig {
    fn default() -> Self {
        Self {
            room_size: [6.0, 5.0],
            ap_position: [1.0, 2.5, 1.0],
            sta_position: [5.0, 2.5, 1.0],
            tx_antennas: 3,
            rx_antennas: 4,
            antenna_spacing: 0.5,
            carrier_freq_hz: 5.21e9,
            subcarriers: 64,
            subcarrier_spacing_hz: 312.5e3,
            pedestrian_radius: 0.3,
            pedestrian_speed: 1.0,
            pedestrian_scatter_coeff: 0.3,
            walk_paths: vec![
                Segment {
                    start: [2.0, 0.7],
                    end: [2.0, 4.3],
                },
                Segment {
                    start: [3.5, 4.3],
                    end: [3.5, 0.7],
                },
                Segment {
                    start: [0.8, 1.4],
                    end: [5.2, 1.4],
                },
                Segment {
                    start: [1.5, 4.3],
                    end: [4.5, 0.7],
                },
            ],
            path: PathSelection::All,
            sample_rate_hz: 20.0,
            snr_db: 25.0,
            wall_reflection_coeff: 0.4,
            blockage_atten_db: 10.0,
            image_size: [96, 96],
            components: ChannelComponents::default(),
            rng_seed: 0,
        }
    }
}

impl SceneConfig {
    /// Full-band setting with K = 256 subcarriers.
    pub fn full_band() -> Self {
        Self {
            subcarriers: 256,
            ..Self::default()
        }
    }

    /// Camera-resolution raster that has to be downsampled before training.
    pub fn camera_resolution() -> Self {
        Self {
            image_size: [480, 640],
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |msg: String| Err(SimError::InvalidConfig(msg));
        if self.tx_antennas == 0 || self.rx_antennas == 0 {
            return bad("antenna counts must be at least 1".into());
        }
        if self.subcarriers < 2 {
            return bad(format!("subcarriers must be >= 2, got {}", self.subcarriers));
        }
        let [w, d] = self.room_size;
        if !(w > 0.0 && d > 0.0 && w.is_finite() && d.is_finite()) {
            return bad("room_size must be positive and finite".into());
        }
        if !self.snr_db.is_finite() {
            return bad("snr_db must be finite".into());
        }
        if !(0.0..1.0).contains(&self.wall_reflection_coeff) {
            return bad("wall_reflection_coeff must lie in [0, 1)".into());
        }
        let positives = [
            ("antenna_spacing", self.antenna_spacing),
            ("carrier_freq_hz", self.carrier_freq_hz),
            ("subcarrier_spacing_hz", self.subcarrier_spacing_hz),
            ("pedestrian_radius", self.pedestrian_radius),
            ("sample_rate_hz", self.sample_rate_hz),
        ];
        for (name, v) in positives {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive and finite"));
            }
        }
        let non_negatives = [
            ("pedestrian_speed", self.pedestrian_speed),
            ("pedestrian_scatter_coeff", self.pedestrian_scatter_coeff),
            ("blockage_atten_db", self.blockage_atten_db),
        ];
        for (name, v) in non_negatives {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be non-negative and finite"));
            }
        }
        for (name, p) in [("ap_position", self.ap_position), ("sta_position", self.sta_position)] {
            if !inside_room(self, [p[0], p[1]]) || !p[2].is_finite() {
                return bad(format!("{name} lies outside the room"));
            }
        }
        if self.walk_paths.is_empty() {
            return bad("at least one walk path is required".into());
        }
        for (i, seg) in self.walk_paths.iter().enumerate() {
            if !inside_room(self, seg.start) || !inside_room(self, seg.end) {
                return bad(format!("walk path {i} leaves the room"));
            }
            if seg.length().partial_cmp(&0.0) != Some(std::cmp::Ordering::Greater) {
                return bad(format!("walk path {i} has zero length"));
            }
        }
        if let PathSelection::Single(i) = self.path {
            if i >= self.walk_paths.len() {
                return bad(format!(
                    "path {i} out of range ({} paths configured)",
                    self.walk_paths.len()
                ));
            }
        }
        if self.image_size[0] == 0 || self.image_size[1] == 0 {
            return bad("image_size must be nonzero".into());
        }
        if distance3(self.ap_position, self.sta_position) == 0.0 {
            return Err(SimError::CoincidentAntennas);
        }
        Ok(())
    }

    /// Subcarrier frequency `f_c + (k - K/2)·Δf`.
    pub fn subcarrier_freq(&self, k: usize) -> f64 {
        self.carrier_freq_hz + (k as f64 - (self.subcarriers / 2) as f64) * self.subcarrier_spacing_hz
    }
}

fn inside_room(config: &SceneConfig, p: [f64; 2]) -> bool {
    p[0].is_finite()
        && p[1].is_finite()
        && (0.0..=config.room_size[0]).contains(&p[0])
        && (0.0..=config.room_size[1]).contains(&p[1])
}

fn distance3(a: [f64; 3], b: [f64; 3]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2) + (a[2] - b[2]).powi(2)).sqrt()
}

// ---------------------------------------------------------------------------
// Samples
// ---------------------------------------------------------------------------

/// 8-bit RGB raster, layout `[row][col][channel]`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RgbImage {
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl RgbImage {
    pub fn filled(height: usize, width: usize, rgb: [u8; 3]) -> Self {
        let mut data = Vec::with_capacity(height * width * 3);
        for _ in 0..height * width {
            data.extend_from_slice(&rgb);
        }
        Self { height, width, data }
    }

    pub fn pixel(&self, row: usize, col: usize) -> [u8; 3] {
        let i = (row * self.width + col) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    fn put(&mut self, row: usize, col: usize, rgb: [u8; 3]) {
        let i = (row * self.width + col) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneState {
    pub t: u64,
    pub path_index: usize,
    pub pedestrian_xy: [f64; 2],
    pub image: RgbImage,
}

/// Complex CSI for one time instant, layout `[k][n][m]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CsiSample {
    pub t: u64,
    pub k: usize,
    pub n: usize,
    pub m: usize,
    pub data: Vec<Complex64>,
}

impl CsiSample {
    pub fn zeros(t: u64, k: usize, n: usize, m: usize) -> Self {
        Self {
            t,
            k,
            n,
            m,
            data: vec![Complex64::new(0.0, 0.0); k * n * m],
        }
    }

    /// The `N × M` channel matrix of subcarrier `k`.
    pub fn slice(&self, k: usize) -> CMat {
        let len = self.n * self.m;
        CMat::from_row_major(self.n, self.m, self.data[k * len..(k + 1) * len].to_vec())
    }

    pub fn scaled(&self, c: f64) -> Self {
        Self {
            data: self.data.iter().map(|z| z * c).collect(),
            ..self.clone()
        }
    }
}

// ---------------------------------------------------------------------------
// Pedestrian motion
// ---------------------------------------------------------------------------

/// Position after `t` samples of walking from the start of path `path`, clamped at the
/// end point.
pub fn pedestrian_position(config: &SceneConfig, path: usize, t: u64) -> [f64; 2] {
    let seg = &config.walk_paths[path];
    let len = seg.length();
    let travelled = (config.pedestrian_speed * t as f64 / config.sample_rate_hz).min(len);
    let frac = travelled / len;
    [
        seg.start[0] + frac * (seg.end[0] - seg.start[0]),
        seg.start[1] + frac * (seg.end[1] - seg.start[1]),
    ]
}

/// Number of sample steps needed to traverse a path once.
fn traversal_steps(config: &SceneConfig, path: usize) -> u64 {
    if config.pedestrian_speed == 0.0 {
        return 0;
    }
    let secs = config.walk_paths[path].length() / config.pedestrian_speed;
    (secs * config.sample_rate_hz).ceil() as u64
}

/// Maps dataset index `i` to (path, local walking time). Paths are visited round-robin
/// and the pedestrian walks each path back and forth.
pub fn sample_schedule(config: &SceneConfig, i: u64) -> (usize, u64) {
    let (path, j) = match config.path {
        PathSelection::All => {
            let p = config.walk_paths.len() as u64;
            ((i % p) as usize, i / p)
        }
        PathSelection::Single(p) => (p, i),
    };
    let steps = traversal_steps(config, path);
    if steps == 0 {
        return (path, 0);
    }
    let phase = j % (2 * steps);
    let local = if phase <= steps { phase } else { 2 * steps - phase };
    (path, local)
}

// ---------------------------------------------------------------------------
// Channel synthesis
// ---------------------------------------------------------------------------

/// ULA steering vector along the y axis for propagation direction `dir` (unit vector
/// pointing away from the array toward the far end of the path).
pub fn steering_vector(elements: usize, spacing_wavelengths: f64, dir: [f64; 3]) -> Vec<Complex64> {
    let sin_angle = dir[1];
    (0..elements)
        .map(|i| Complex64::from_polar(1.0, 2.0 * PI * spacing_wavelengths * i as f64 * sin_angle))
        .collect()
}

struct PropagationPath {
    gain: f64,
    length: f64,
    departure: [f64; 3],
    arrival: [f64; 3],
}

fn unit(from: [f64; 3], to: [f64; 3]) -> [f64; 3] {
    let d = distance3(from, to);
    [(to[0] - from[0]) / d, (to[1] - from[1]) / d, (to[2] - from[2]) / d]
}

/// True when the pedestrian disc touches the horizontal projection of the TX–RX segment.
pub fn blocks_line_of_sight(config: &SceneConfig, pedestrian_xy: [f64; 2]) -> bool {
    let a = [config.ap_position[0], config.ap_position[1]];
    let b = [config.sta_position[0], config.sta_position[1]];
    let ab = [b[0] - a[0], b[1] - a[1]];
    let ap = [pedestrian_xy[0] - a[0], pedestrian_xy[1] - a[1]];
    let len2 = ab[0] * ab[0] + ab[1] * ab[1];
    let s = if len2 > 0.0 {
        ((ap[0] * ab[0] + ap[1] * ab[1]) / len2).clamp(0.0, 1.0)
    } else {
        0.0
    };
    let closest = [a[0] + s * ab[0], a[1] + s * ab[1]];
    (pedestrian_xy[0] - closest[0]).hypot(pedestrian_xy[1] - closest[1]) <= config.pedestrian_radius
}

fn propagation_paths(config: &SceneConfig, pedestrian_xy: [f64; 2]) -> Vec<PropagationPath> {
    let tx = config.ap_position;
    let rx = config.sta_position;
    let comps = config.components;
    let mut paths = Vec::with_capacity(6);

    if comps.line_of_sight {
        let d = distance3(tx, rx);
        let mut gain = 1.0 / d;
        if comps.blockage && blocks_line_of_sight(config, pedestrian_xy) {
            gain *= 10f64.powf(-config.blockage_atten_db / 20.0);
        }
        paths.push(PropagationPath {
            gain,
            length: d,
            departure: unit(tx, rx),
            arrival: unit(rx, tx),
        });
    }

    if comps.wall_reflections {
        let [w, dpt] = config.room_size;
        let mirror = |p: [f64; 3], wall: usize| -> [f64; 3] {
            match wall {
                0 => [-p[0], p[1], p[2]],
                1 => [2.0 * w - p[0], p[1], p[2]],
                2 => [p[0], -p[1], p[2]],
                _ => [p[0], 2.0 * dpt - p[1], p[2]],
            }
        };
        for wall in 0..4 {
            let rx_img = mirror(rx, wall);
            let tx_img = mirror(tx, wall);
            let d = distance3(tx, rx_img);
            paths.push(PropagationPath {
                gain: config.wall_reflection_coeff / d,
                length: d,
                departure: unit(tx, rx_img),
                arrival: unit(rx, tx_img),
            });
        }
    }

    if comps.pedestrian_scatter {
        let height = 0.5 * (tx[2] + rx[2]);
        let ped = [pedestrian_xy[0], pedestrian_xy[1], height];
        let d1 = distance3(tx, ped);
        let d2 = distance3(ped, rx);
        if d1 > 0.0 && d2 > 0.0 {
            paths.push(PropagationPath {
                gain: config.pedestrian_scatter_coeff / (d1 * d2),
                length: d1 + d2,
                departure: unit(tx, ped),
                arrival: unit(rx, ped),
            });
        }
    }
    paths
}

fn noise_rng(seed: u64, t: u64) -> ChaCha8Rng {
    // splitmix64 finalizer over (seed, t)
    let mut z = seed ^ t.wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    ChaCha8Rng::seed_from_u64(z ^ (z >> 31))
}

/// Noise-free channel for the given pedestrian position.
pub fn synthesize_clean_csi(config: &SceneConfig, t: u64, pedestrian_xy: [f64; 2]) -> Result<CsiSample, SimError> {
    if distance3(config.ap_position, config.sta_position) == 0.0 {
        return Err(SimError::CoincidentAntennas);
    }
    let (k_count, n, m) = (config.subcarriers, config.rx_antennas, config.tx_antennas);
    let mut csi = CsiSample::zeros(t, k_count, n, m);
    let spacing = config.antenna_spacing;
    for path in propagation_paths(config, pedestrian_xy) {
        let a_tx = steering_vector(m, spacing, path.departure);
        let a_rx = steering_vector(n, spacing, path.arrival);
        let tau = path.length / SPEED_OF_LIGHT;
        for k in 0..k_count {
            let phase = Complex64::from_polar(path.gain, -2.0 * PI * config.subcarrier_freq(k) * tau);
            let base = k * n * m;
            for (r, ar) in a_rx.iter().enumerate() {
                let row = phase * ar;
                for (c, at) in a_tx.iter().enumerate() {
                    csi.data[base + r * m + c] += row * at;
                }
            }
        }
    }
    Ok(csi)
}

/// Channel for a scene state, including additive circular Gaussian noise at the
/// configured SNR (relative to the mean signal power of this sample).
pub fn synthesize_csi(config: &SceneConfig, state: &SceneState) -> Result<CsiSample, SimError> {
    let mut csi = synthesize_clean_csi(config, state.t, state.pedestrian_xy)?;
    if config.components.noise {
        let signal_power = csi.data.iter().map(|z| z.norm_sqr()).sum::<f64>() / csi.data.len() as f64;
        let noise_power = signal_power * 10f64.powf(-config.snr_db / 10.0);
        let sigma = (noise_power / 2.0).sqrt();
        let mut rng = noise_rng(config.rng_seed, state.t);
        for z in csi.data.iter_mut() {
            let re: f64 = rng.sample(StandardNormal);
            let im: f64 = rng.sample(StandardNormal);
            *z += Complex64::new(re * sigma, im * sigma);
        }
    }
    Ok(csi)
}

// ---------------------------------------------------------------------------
// Camera
// ---------------------------------------------------------------------------

pub const BACKGROUND: [u8; 3] = [235, 235, 235];
pub const WALL: [u8; 3] = [60, 60, 60];
pub const AP_MARKER: [u8; 3] = [220, 40, 40];
pub const STA_MARKER: [u8; 3] = [40, 40, 220];
pub const PEDESTRIAN: [u8; 3] = [30, 160, 60];

/// Raster coordinates (row, col) of a room point, in continuous pixel units.
pub fn room_to_raster(config: &SceneConfig, xy: [f64; 2]) -> [f64; 2] {
    let [h, w] = config.image_size;
    [
        xy[1] / config.room_size[1] * h as f64,
        xy[0] / config.room_size[0] * w as f64,
    ]
}

/// Inverse of [`room_to_raster`].
pub fn raster_to_room(config: &SceneConfig, rc: [f64; 2]) -> [f64; 2] {
    let [h, w] = config.image_size;
    [
        rc[1] / w as f64 * config.room_size[0],
        rc[0] / h as f64 * config.room_size[1],
    ]
}

/// Top-down schematic: walls, AP/STA markers and the pedestrian disc.
pub fn render_image(config: &SceneConfig, pedestrian_xy: [f64; 2]) -> RgbImage {
    let [h, w] = config.image_size;
    let mut img = RgbImage::filled(h, w, BACKGROUND);
    for col in 0..w {
        img.put(0, col, WALL);
        img.put(h - 1, col, WALL);
    }
    for row in 0..h {
        img.put(row, 0, WALL);
        img.put(row, w - 1, WALL);
    }

    let half = (w.max(h) / 48).max(1) as isize;
    for (pos, color) in [(config.ap_position, AP_MARKER), (config.sta_position, STA_MARKER)] {
        let [r, c] = room_to_raster(config, [pos[0], pos[1]]);
        let (r, c) = (r.floor() as isize, c.floor() as isize);
        for dr in -half..=half {
            for dc in -half..=half {
                let (rr, cc) = (r + dr, c + dc);
                if rr >= 0 && cc >= 0 && (rr as usize) < h && (cc as usize) < w {
                    img.put(rr as usize, cc as usize, color);
                }
            }
        }
    }

    let radius2 = config.pedestrian_radius * config.pedestrian_radius;
    let [rc_r, rc_c] = room_to_raster(config, pedestrian_xy);
    let [pitch_y, pitch_x] = [config.room_size[1] / h as f64, config.room_size[0] / w as f64];
    let span_r = (config.pedestrian_radius / pitch_y).ceil() as isize + 1;
    let span_c = (config.pedestrian_radius / pitch_x).ceil() as isize + 1;
    for row in (rc_r as isize - span_r).max(0)..=(rc_r as isize + span_r).min(h as isize - 1) {
        for col in (rc_c as isize - span_c).max(0)..=(rc_c as isize + span_c).min(w as isize - 1) {
            let p = raster_to_room(config, [row as f64 + 0.5, col as f64 + 0.5]);
            let d2 = (p[0] - pedestrian_xy[0]).powi(2) + (p[1] - pedestrian_xy[1]).powi(2);
            if d2 <= radius2 {
                img.put(row as usize, col as usize, PEDESTRIAN);
            }
        }
    }
    img
}

// ---------------------------------------------------------------------------
// Dataset generation
// ---------------------------------------------------------------------------

/// Scene state of dataset sample `i`.
pub fn scene_state(config: &SceneConfig, i: u64) -> SceneState {
    let (path_index, local_t) = sample_schedule(config, i);
    let pedestrian_xy = pedestrian_position(config, path_index, local_t);
    SceneState {
        t: i,
        path_index,
        pedestrian_xy,
        image: render_image(config, pedestrian_xy),
    }
}

/// Generates `n_samples` synchronized (scene, CSI) pairs. Samples are independent and
/// generated in parallel; the output equals sequential generation.
pub fn generate_dataset(config: &SceneConfig, n_samples: usize) -> Result<Vec<(SceneState, CsiSample)>, SimError> {
    if n_samples == 0 {
        return Err(SimError::InvalidConfig("n_samples must be at least 1".into()));
    }
    config.validate()?;
    (0..n_samples as u64)
        .into_par_iter()
        .map(|i| {
            let state = scene_state(config, i);
            let csi = synthesize_csi(config, &state)?;
            Ok((state, csi))
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn straight_config() -> SceneConfig {
        SceneConfig {
            room_size: [6.0, 6.0],
            walk_paths: vec![Segment {
                start: [0.0, 0.0],
                end: [4.0, 0.0],
            }],
            path: PathSelection::Single(0),
            ..SceneConfig::default()
        }
    }

    #[test]
    fn linear_motion() {
        let c = straight_config();
        assert_eq!(pedestrian_position(&c, 0, 40), [2.0, 0.0]);
        assert_eq!(pedestrian_position(&c, 0, 0), [0.0, 0.0]);
        assert_eq!(pedestrian_position(&c, 0, 10_000), [4.0, 0.0]);
    }

    #[test]
    fn schedule_walks_back_and_forth() {
        let c = straight_config();
        // 4 m at 1 m/s and 20 Hz: 80 steps per traversal.
        assert_eq!(sample_schedule(&c, 80), (0, 80));
        assert_eq!(sample_schedule(&c, 81), (0, 79));
        assert_eq!(sample_schedule(&c, 160), (0, 0));
    }

    #[test]
    fn round_robin_over_paths() {
        let c = SceneConfig::default();
        let mut counts = [0usize; 4];
        for i in 0..4000 {
            counts[sample_schedule(&c, i).0] += 1;
        }
        assert_eq!(counts, [1000; 4]);
    }

    #[test]
    fn steering_vectors_have_unit_modulus_entries() {
        for m in 1..6 {
            let v = steering_vector(m, 0.5, [0.6, 0.8, 0.0]);
            let norm = v.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
            assert!((norm - (m as f64).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn coincident_antennas_rejected() {
        let c = SceneConfig {
            sta_position: [1.0, 2.5, 1.0],
            ..SceneConfig::default()
        };
        assert_eq!(c.validate(), Err(SimError::CoincidentAntennas));
        assert_eq!(
            synthesize_clean_csi(&c, 0, [3.0, 1.0]).unwrap_err(),
            SimError::CoincidentAntennas
        );
    }

    #[test]
    fn invalid_configs_name_the_problem() {
        let c = SceneConfig {
            subcarriers: 1,
            ..SceneConfig::default()
        };
        assert!(matches!(c.validate(), Err(SimError::InvalidConfig(m)) if m.contains("subcarriers")));
        let c = SceneConfig {
            snr_db: f64::NAN,
            ..SceneConfig::default()
        };
        assert!(c.validate().is_err());
        let mut c = SceneConfig::default();
        c.walk_paths[2].end = [7.0, 1.0];
        assert!(matches!(c.validate(), Err(SimError::InvalidConfig(m)) if m.contains("walk path 2")));
    }

    #[test]
    fn path_selection_serde() {
        let all: PathSelection = serde_json::from_str("\"all\"").unwrap();
        assert_eq!(all, PathSelection::All);
        let one: PathSelection = serde_json::from_str("2").unwrap();
        assert_eq!(one, PathSelection::Single(2));
        assert!(serde_json::from_str::<PathSelection>("\"some\"").is_err());
    }

    #[test]
    fn centered_pedestrian_renders_at_raster_center() {
        let c = SceneConfig::default();
        let img = render_image(&c, [3.0, 2.5]);
        let (mut sr, mut sc, mut n) = (0.0, 0.0, 0.0);
        for r in 0..img.height {
            for col in 0..img.width {
                if img.pixel(r, col) == PEDESTRIAN {
                    sr += r as f64 + 0.5;
                    sc += col as f64 + 0.5;
                    n += 1.0;
                }
            }
        }
        assert!(n > 0.0);
        assert!((sr / n - 48.0).abs() < 1e-9);
        assert!((sc / n - 48.0).abs() < 1e-9);
    }

    #[test]
    fn blockage_geometry() {
        let c = SceneConfig::default();
        assert!(blocks_line_of_sight(&c, [3.0, 2.5]));
        assert!(blocks_line_of_sight(&c, [3.0, 2.79]));
        assert!(!blocks_line_of_sight(&c, [3.0, 2.81]));
        assert!(!blocks_line_of_sight(&c, [0.5, 2.5]));
    }
}
