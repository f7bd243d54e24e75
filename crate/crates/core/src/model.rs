//! Recomposition networks.
//!
//! Three variants share one CSI decoder:
//!
//! * `MMI`: BFM encoder and image encoder, concatenated on the channel axis.
//! * `SMI-BFM`: BFM encoder only.
//! * `SMI-image`: image encoder only.
//!
//! The BFM encoder treats the flattened feedback tensor as a `K × F_b` plane with
//! (amplitude, argument) channels; its kernels span subcarriers only (width 1 along the
//! element axis). The image encoder's feature map is bilinearly resized to the BFM
//! encoder's output plane so that both encoders emit `(C, K/4, F_b)`. The decoder
//! upsamples back to `K` subcarriers and finishes with an element-axis affine map
//! `F_b → F_h` shared across subcarriers.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::layers::{
    Activation, BatchNorm2d, Conv2d, ElementLinear, Layer, MaxPool2d, ParamRef, Resize, Upsample2d,
};
use crate::nn::{Real, Tensor};
use crate::preprocess::RecordDims;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("{dimension} = {value} must be divisible by {divisor}")]
    Divisibility {
        dimension: &'static str,
        value: usize,
        divisor: usize,
    },
    #[error("{input} input: {axis} axis has size {actual}, expected {expected}")]
    ShapeMismatch {
        input: &'static str,
        axis: &'static str,
        expected: usize,
        actual: usize,
    },
    #[error("{kind} needs the {modality} modality, which is missing")]
    MissingModality { kind: ModelKind, modality: &'static str },
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("checkpoint does not match the model: {0}")]
    ParamMismatch(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ModelKind {
    #[serde(rename = "mmi")]
    Mmi,
    #[serde(rename = "smi-bfm")]
    SmiBfm,
    #[serde(rename = "smi-image")]
    SmiImage,
}

impl ModelKind {
    pub const ALL: [ModelKind; 3] = [ModelKind::Mmi, ModelKind::SmiBfm, ModelKind::SmiImage];

    pub fn uses_bfm(self) -> bool {
        matches!(self, ModelKind::Mmi | ModelKind::SmiBfm)
    }

    pub fn uses_image(self) -> bool {
        matches!(self, ModelKind::Mmi | ModelKind::SmiImage)
    }

    /// Lower-case identifier used on the command line and in directory names.
    pub fn slug(self) -> &'static str {
        match self {
            ModelKind::Mmi => "mmi",
            ModelKind::SmiBfm => "smi-bfm",
            ModelKind::SmiImage => "smi-image",
        }
    }
}

impl fmt::Display for ModelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ModelKind::Mmi => "MMI",
            ModelKind::SmiBfm => "SMI-BFM",
            ModelKind::SmiImage => "SMI-image",
        })
    }
}

impl FromStr for ModelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "mmi" => Ok(ModelKind::Mmi),
            "smi-bfm" => Ok(ModelKind::SmiBfm),
            "smi-image" => Ok(ModelKind::SmiImage),
            other => Err(format!(
                "unknown model kind {other:?} (expected mmi, smi-bfm or smi-image)"
            )),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Same,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    Conv2d {
        in_channels: usize,
        out_channels: usize,
        /// (subcarrier axis, element axis) for feature planes; (rows, cols) for images.
        kernel: [usize; 2],
        padding: Padding,
        activation: Activation,
    },
    BatchNorm {
        channels: usize,
    },
    MaxPool2d {
        size: [usize; 2],
    },
    Upsample2d {
        scale: [usize; 2],
    },
    Resize {
        out_hw: [usize; 2],
    },
    ElementLinear {
        in_features: usize,
        out_features: usize,
        activation: Activation,
    },
}

impl LayerSpec {
    pub fn param_count(&self) -> usize {
        match self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => in_channels * kernel[0] * kernel[1] * out_channels + out_channels,
            LayerSpec::BatchNorm { channels } => 2 * channels,
            LayerSpec::ElementLinear {
                in_features,
                out_features,
                ..
            } => in_features * out_features + out_features,
            _ => 0,
        }
    }

    /// Output `(channels, height, width)` for the given input.
    fn output_shape(&self, [c, h, w]: [usize; 3]) -> Result<[usize; 3], ModelError> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                ..
            } => {
                if in_channels != c {
                    return Err(ModelError::InvalidSpec(format!(
                        "conv expects {in_channels} input channels, receives {c}"
                    )));
                }
                if kernel[0] % 2 == 0 || kernel[1] % 2 == 0 {
                    return Err(ModelError::InvalidSpec(format!(
                        "same padding needs odd kernels, got {kernel:?}"
                    )));
                }
                Ok([out_channels, h, w])
            }
            LayerSpec::BatchNorm { channels } => {
                if channels != c {
                    return Err(ModelError::InvalidSpec(format!(
                        "batchnorm over {channels} channels receives {c}"
                    )));
                }
                Ok([c, h, w])
            }
            LayerSpec::MaxPool2d { size } => {
                if h < size[0] || w < size[1] {
                    return Err(ModelError::InvalidSpec(format!("max pool {size:?} on a {h}×{w} plane")));
                }
                Ok([c, h / size[0], w / size[1]])
            }
            LayerSpec::Upsample2d { scale } => Ok([c, h * scale[0], w * scale[1]]),
            LayerSpec::Resize { out_hw } => Ok([c, out_hw[0], out_hw[1]]),
            LayerSpec::ElementLinear {
                in_features,
                out_features,
                ..
            } => {
                if in_features != w {
                    return Err(ModelError::InvalidSpec(format!(
                        "element map expects width {in_features}, receives {w}"
                    )));
                }
                Ok([c, h, out_features])
            }
        }
    }

    /// Fresh layer with zero parameters.
    pub fn instantiate<T: Real>(&self) -> Layer<T> {
        match *self {
            LayerSpec::Conv2d {
                in_channels,
                out_channels,
                kernel,
                activation,
                ..
            } => Layer::Conv2d(Conv2d::new(in_channels, out_channels, kernel, activation)),
            LayerSpec::BatchNorm { channels } => Layer::BatchNorm(BatchNorm2d::new(channels)),
            LayerSpec::MaxPool2d { size } => Layer::MaxPool(MaxPool2d::new(size)),
            LayerSpec::Upsample2d { scale } => Layer::Upsample(Upsample2d::new(scale)),
            LayerSpec::Resize { out_hw } => Layer::Resize(Resize::new(out_hw)),
            LayerSpec::ElementLinear {
                in_features,
                out_features,
                ..
            } => Layer::ElementLinear(ElementLinear::new(in_features, out_features)),
        }
    }
}

/// Channel widths of the default graph.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ArchConfig {
    /// One (conv 3×1, pool 2×1) stage per entry.
    pub bfm_channels: Vec<usize>,
    /// One (conv 3×3, pool 2×2) stage per entry.
    pub image_channels: Vec<usize>,
    /// Width of the 3×3 fusion conv, then of each (upsample, conv 3×1) stage but the last.
    pub decoder_channels: Vec<usize>,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            bfm_channels: vec![16, 32],
            image_channels: vec![16, 32, 32],
            decoder_channels: vec![64, 32],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub dims: RecordDims,
    pub bfm_encoder: Option<Vec<LayerSpec>>,
    pub image_encoder: Option<Vec<LayerSpec>>,
    /// Channel counts `(bfm, image)` joined by the concatenation layer (MMI only).
    pub concat: Option<[usize; 2]>,
    pub decoder: Vec<LayerSpec>,
}

fn conv(in_channels: usize, out_channels: usize, kernel: [usize; 2], activation: Activation) -> LayerSpec {
    LayerSpec::Conv2d {
        in_channels,
        out_channels,
        kernel,
        padding: Padding::Same,
        activation,
    }
}

pub fn build_model(kind: ModelKind, dims: RecordDims) -> Result<ModelSpec, ModelError> {
    build_model_with(kind, dims, &ArchConfig::default())
}

pub fn build_model_with(kind: ModelKind, dims: RecordDims, arch: &ArchConfig) -> Result<ModelSpec, ModelError> {
    let stages = arch.bfm_channels.len();
    if stages == 0 || arch.image_channels.is_empty() || arch.decoder_channels.len() != stages {
        return Err(ModelError::InvalidSpec(format!(
            "need >=1 BFM and image stages and one decoder width per BFM stage, got {arch:?}"
        )));
    }
    let k_div = 1usize << stages;
    if dims.k == 0 || !dims.k.is_multiple_of(k_div) {
        return Err(ModelError::Divisibility {
            dimension: "subcarriers (K)",
            value: dims.k,
            divisor: k_div,
        });
    }
    let img_div = 1usize << arch.image_channels.len();
    if kind.uses_image() {
        if dims.h < img_div {
            return Err(ModelError::InvalidSpec(format!(
                "image height {} below {img_div}",
                dims.h
            )));
        }
        if dims.w < img_div {
            return Err(ModelError::InvalidSpec(format!(
                "image width {} below {img_div}",
                dims.w
            )));
        }
    }
    let feature_hw = [dims.k / k_div, dims.f_b];

    let bfm_encoder = kind.uses_bfm().then(|| {
        let mut layers = Vec::new();
        let mut c_in = 2;
        for &c in &arch.bfm_channels {
            layers.push(conv(c_in, c, [3, 1], Activation::Relu));
            layers.push(LayerSpec::BatchNorm { channels: c });
            layers.push(LayerSpec::MaxPool2d { size: [2, 1] });
            c_in = c;
        }
        layers
    });
    let image_encoder = kind.uses_image().then(|| {
        let mut layers = Vec::new();
        let mut c_in = 3;
        for &c in &arch.image_channels {
            layers.push(conv(c_in, c, [3, 3], Activation::Relu));
            layers.push(LayerSpec::BatchNorm { channels: c });
            layers.push(LayerSpec::MaxPool2d { size: [2, 2] });
            c_in = c;
        }
        layers.push(LayerSpec::Resize { out_hw: feature_hw });
        layers
    });

    let bfm_c = *arch.bfm_channels.last().expect("non-empty");
    let img_c = *arch.image_channels.last().expect("non-empty");
    let (concat, decoder_in) = match kind {
        ModelKind::Mmi => (Some([bfm_c, img_c]), bfm_c + img_c),
        ModelKind::SmiBfm => (None, bfm_c),
        ModelKind::SmiImage => (None, img_c),
    };

    let mut decoder = Vec::new();
    let mut c_in = decoder_in;
    let first = arch.decoder_channels[0];
    decoder.push(conv(c_in, first, [3, 3], Activation::Relu));
    decoder.push(LayerSpec::BatchNorm { channels: first });
    c_in = first;
    for stage in 0..stages {
        decoder.push(LayerSpec::Upsample2d { scale: [2, 1] });
        if stage + 1 < stages {
            let c = arch.decoder_channels[stage + 1];
            decoder.push(conv(c_in, c, [3, 1], Activation::Relu));
            decoder.push(LayerSpec::BatchNorm { channels: c });
            c_in = c;
        } else {
            decoder.push(conv(c_in, 1, [3, 1], Activation::Linear));
        }
    }
    decoder.push(LayerSpec::ElementLinear {
        in_features: dims.f_b,
        out_features: dims.f_h,
        activation: Activation::Linear,
    });

    let spec = ModelSpec {
        kind,
        dims,
        bfm_encoder,
        image_encoder,
        concat,
        decoder,
    };
    spec.validate()?;
    Ok(spec)
}

fn propagate(layers: &[LayerSpec], mut shape: [usize; 3]) -> Result<[usize; 3], ModelError> {
    for l in layers {
        shape = l.output_shape(shape)?;
    }
    Ok(shape)
}

impl ModelSpec {
    pub fn bfm_input_shape(&self) -> [usize; 3] {
        [2, self.dims.k, self.dims.f_b]
    }

    pub fn image_input_shape(&self) -> [usize; 3] {
        [3, self.dims.h, self.dims.w]
    }

    pub fn bfm_encoder_output(&self) -> Result<Option<[usize; 3]>, ModelError> {
        self.bfm_encoder
            .as_deref()
            .map(|l| propagate(l, self.bfm_input_shape()))
            .transpose()
    }

    pub fn image_encoder_output(&self) -> Result<Option<[usize; 3]>, ModelError> {
        self.image_encoder
            .as_deref()
            .map(|l| propagate(l, self.image_input_shape()))
            .transpose()
    }

    /// Per-sample output shape `(1, K, F_h)`.
    pub fn output_shape(&self) -> Result<[usize; 3], ModelError> {
        let enc = match (self.bfm_encoder_output()?, self.image_encoder_output()?) {
            (Some(b), Some(i)) => [b[0] + i[0], b[1], b[2]],
            (Some(b), None) => b,
            (None, Some(i)) => i,
            (None, None) => return Err(ModelError::InvalidSpec("model has no encoder".into())),
        };
        propagate(&self.decoder, enc)
    }

    /// Checks the structural rules every recomposition graph must satisfy.
    pub fn validate(&self) -> Result<(), ModelError> {
        let invalid = |m: String| Err(ModelError::InvalidSpec(m));
        if self.bfm_encoder.is_some() != self.kind.uses_bfm() || self.image_encoder.is_some() != self.kind.uses_image()
        {
            return invalid(format!("encoders do not match kind {}", self.kind));
        }
        if let Some(bfm) = &self.bfm_encoder {
            for l in bfm {
                let element_extent = match l {
                    LayerSpec::Conv2d { kernel, .. } => kernel[1],
                    LayerSpec::MaxPool2d { size } => size[1],
                    _ => 1,
                };
                if element_extent != 1 {
                    return invalid("BFM encoder kernels must be 1 along the element axis".into());
                }
            }
        }
        let b = self.bfm_encoder_output()?;
        let i = self.image_encoder_output()?;
        match (self.kind, b, i) {
            (ModelKind::Mmi, Some(b), Some(i)) => {
                if b != i {
                    return invalid(format!("encoder outputs differ: BFM {b:?}, image {i:?}"));
                }
                if self.concat != Some([b[0], i[0]]) {
                    return invalid("concat channels do not match encoder outputs".into());
                }
            }
            (_, _, _) if self.concat.is_some() && self.kind != ModelKind::Mmi => {
                return invalid("only MMI has a concatenation layer".into());
            }
            _ => {}
        }
        // relu everywhere except the final conv and the final element map
        let convs: Vec<(usize, Activation)> = self
            .all_layers()
            .enumerate()
            .filter_map(|(idx, l)| match l {
                LayerSpec::Conv2d { activation, .. } => Some((idx, *activation)),
                _ => None,
            })
            .collect();
        let last_conv = convs.last().map(|c| c.0);
        for (idx, act) in &convs {
            let expected = if Some(*idx) == last_conv {
                Activation::Linear
            } else {
                Activation::Relu
            };
            if *act != expected {
                return invalid(format!(
                    "conv layer {idx} has activation {act:?}, expected {expected:?}"
                ));
            }
        }
        match self.decoder.last() {
            Some(LayerSpec::ElementLinear {
                activation: Activation::Linear,
                ..
            }) => {}
            _ => return invalid("decoder must end in a linear element map".into()),
        }
        let out = self.output_shape()?;
        if out != [1, self.dims.k, self.dims.f_h] {
            return invalid(format!(
                "output shape {out:?} differs from target (1, {}, {})",
                self.dims.k, self.dims.f_h
            ));
        }
        Ok(())
    }

    fn all_layers(&self) -> impl Iterator<Item = &LayerSpec> {
        self.bfm_encoder
            .iter()
            .flatten()
            .chain(self.image_encoder.iter().flatten())
            .chain(self.decoder.iter())
    }
}

/// Trainable parameter count (batch-norm scale and shift included, running statistics
/// excluded).
pub fn count_params(spec: &ModelSpec) -> usize {
    count_layer_params(spec.all_layers())
}

pub fn count_layer_params<'a>(layers: impl IntoIterator<Item = &'a LayerSpec>) -> usize {
    layers.into_iter().map(LayerSpec::param_count).sum()
}

// ============================================================================
// Runtime network
// ============================================================================

/// Flat snapshot of every weight and batch-norm statistic, in a fixed order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub seed: u64,
    /// `(name, length)` of each tensor in `values`.
    pub layout: Vec<(String, usize)>,
    #[serde(skip)]
    pub values: Vec<f32>,
}

/// Batched network inputs in NCHW layout: BFM `(B, 2, K, F_b)`, image `(B, 3, h, w)`.
#[derive(Debug, Clone)]
pub struct ModelInput<T> {
    pub bfm: Option<Tensor<T>>,
    pub image: Option<Tensor<T>>,
}

#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ModelSpec,
    seed: u64,
    bfm: Option<Vec<Layer<T>>>,
    image: Option<Vec<Layer<T>>>,
    decoder: Vec<Layer<T>>,
}

fn check_input<T: Real>(input: &'static str, t: &Tensor<T>, expected: [usize; 3]) -> Result<(), ModelError> {
    let axes = [
        "channel",
        if input == "bfm" { "subcarrier" } else { "height" },
        if input == "bfm" { "element" } else { "width" },
    ];
    for (i, axis) in axes.iter().enumerate() {
        if t.shape[i + 1] != expected[i] {
            return Err(ModelError::ShapeMismatch {
                input,
                axis,
                expected: expected[i],
                actual: t.shape[i + 1],
            });
        }
    }
    Ok(())
}

fn run_forward<T: Real>(layers: &mut [Layer<T>], x: &Tensor<T>, train: bool) -> Tensor<T> {
    let mut cur = layers[0].forward(x, train);
    for l in layers[1..].iter_mut() {
        cur = l.forward(&cur, train);
    }
    cur
}

/// Backpropagates through `layers`; the first layer skips its input gradient.
fn run_backward<T: Real>(layers: &mut [Layer<T>], grad: Tensor<T>) {
    let mut g = grad;
    for (idx, l) in layers.iter_mut().enumerate().rev() {
        if let Some(next) = l.backward(&g, idx > 0) {
            g = next;
        }
    }
}

fn run_backward_with_input<T: Real>(layers: &mut [Layer<T>], grad: Tensor<T>) -> Tensor<T> {
    let mut g = grad;
    for l in layers.iter_mut().rev() {
        g = l.backward(&g, true).expect("input gradient requested");
    }
    g
}

impl<T: Real> Network<T> {
    /// Instantiates the spec with seeded uniform fan-in initialization
    /// (`U(±1/√fan_in)` for weights and biases, batch-norm at identity).
    pub fn new(spec: ModelSpec, seed: u64) -> Result<Self, ModelError> {
        spec.validate()?;
        let build = |ls: &Vec<LayerSpec>| ls.iter().map(LayerSpec::instantiate::<T>).collect::<Vec<_>>();
        let mut net = Self {
            bfm: spec.bfm_encoder.as_ref().map(build),
            image: spec.image_encoder.as_ref().map(build),
            decoder: build(&spec.decoder),
            spec,
            seed,
        };
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for layer in net.layers_mut() {
            let fan_in = match layer {
                Layer::Conv2d(c) => c.fan_in(),
                Layer::ElementLinear(l) => l.in_features,
                _ => continue,
            };
            let bound = 1.0 / (fan_in as f64).sqrt();
            for (p, _) in layer.params() {
                for v in p.iter_mut() {
                    *v = T::of(rng.gen_range(-bound..bound));
                }
            }
        }
        Ok(net)
    }

    pub fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    fn layers_mut(&mut self) -> impl Iterator<Item = &mut Layer<T>> {
        self.bfm
            .iter_mut()
            .flatten()
            .chain(self.image.iter_mut().flatten())
            .chain(self.decoder.iter_mut())
    }

    /// Returns `(B, 1, K, F_h)`. In training mode batch-norm uses batch statistics and
    /// forward state is cached for [`Network::backward`].
    pub fn forward(&mut self, input: &ModelInput<T>, train: bool) -> Result<Tensor<T>, ModelError> {
        let kind = self.spec.kind;
        let bfm_feat = match (&mut self.bfm, &input.bfm) {
            (Some(layers), Some(x)) => {
                check_input("bfm", x, self.spec.bfm_input_shape())?;
                Some(run_forward(layers, x, train))
            }
            (Some(_), None) => return Err(ModelError::MissingModality { kind, modality: "bfm" }),
            (None, _) => None,
        };
        let img_feat = match (&mut self.image, &input.image) {
            (Some(layers), Some(x)) => {
                check_input("image", x, self.spec.image_input_shape())?;
                Some(run_forward(layers, x, train))
            }
            (Some(_), None) => {
                return Err(ModelError::MissingModality {
                    kind,
                    modality: "image",
                })
            }
            (None, _) => None,
        };
        if let (Some(b), Some(i)) = (&bfm_feat, &img_feat) {
            if b.batch() != i.batch() {
                return Err(ModelError::ShapeMismatch {
                    input: "image",
                    axis: "batch",
                    expected: b.batch(),
                    actual: i.batch(),
                });
            }
        }
        let fused = match (bfm_feat, img_feat) {
            (Some(b), Some(i)) => Tensor::concat_channels(&b, &i),
            (Some(b), None) => b,
            (None, Some(i)) => i,
            (None, None) => unreachable!("validated spec has an encoder"),
        };
        Ok(run_forward(&mut self.decoder, &fused, train))
    }

    /// Accumulates parameter gradients for `grad = ∂L/∂output` of the last training forward.
    pub fn backward(&mut self, grad: Tensor<T>) {
        let g = run_backward_with_input(&mut self.decoder, grad);
        match (&mut self.bfm, &mut self.image) {
            (Some(b), Some(i)) => {
                let split = self.spec.concat.expect("MMI has concat")[0];
                let (gb, gi) = g.split_channels(split);
                run_backward(b, gb);
                run_backward(i, gi);
            }
            (Some(b), None) => run_backward(b, g),
            (None, Some(i)) => run_backward(i, g),
            (None, None) => {}
        }
    }

    /// Like [`Network::backward`] but also returns input gradients `(bfm, image)`.
    pub fn backward_with_input(&mut self, grad: Tensor<T>) -> (Option<Tensor<T>>, Option<Tensor<T>>) {
        let g = run_backward_with_input(&mut self.decoder, grad);
        match (&mut self.bfm, &mut self.image) {
            (Some(b), Some(i)) => {
                let split = self.spec.concat.expect("MMI has concat")[0];
                let (gb, gi) = g.split_channels(split);
                (
                    Some(run_backward_with_input(b, gb)),
                    Some(run_backward_with_input(i, gi)),
                )
            }
            (Some(b), None) => (Some(run_backward_with_input(b, g)), None),
            (None, Some(i)) => (None, Some(run_backward_with_input(i, g))),
            (None, None) => (None, None),
        }
    }

    pub fn params(&mut self) -> Vec<ParamRef<'_, T>> {
        self.layers_mut().flat_map(|l| l.params()).collect()
    }

    pub fn zero_grad(&mut self) {
        for l in self.layers_mut() {
            l.zero_grad();
        }
    }

    pub fn param_count(&mut self) -> usize {
        self.params().iter().map(|(p, _)| p.len()).sum()
    }

    fn named_tensors(&mut self) -> Vec<(String, &mut Vec<T>)> {
        let mut out = Vec::new();
        let branches: [(&str, Option<&mut Vec<Layer<T>>>); 3] = [
            ("bfm", self.bfm.as_mut()),
            ("image", self.image.as_mut()),
            ("decoder", Some(&mut self.decoder)),
        ];
        for (branch, layers) in branches {
            let Some(layers) = layers else { continue };
            for (idx, layer) in layers.iter_mut().enumerate() {
                let tensors: Vec<(&str, &mut Vec<T>)> = match layer {
                    Layer::Conv2d(c) => vec![("weight", &mut c.weight), ("bias", &mut c.bias)],
                    Layer::ElementLinear(l) => vec![("weight", &mut l.weight), ("bias", &mut l.bias)],
                    Layer::BatchNorm(bn) => vec![
                        ("gamma", &mut bn.gamma),
                        ("beta", &mut bn.beta),
                        ("running_mean", &mut bn.running_mean),
                        ("running_var", &mut bn.running_var),
                    ],
                    _ => Vec::new(),
                };
                for (name, t) in tensors {
                    out.push((format!("{branch}.{idx}.{name}"), t));
                }
            }
        }
        out
    }

    pub fn export_params(&mut self) -> ModelParams {
        let seed = self.seed;
        let mut layout = Vec::new();
        let mut values = Vec::new();
        for (name, t) in self.named_tensors() {
            layout.push((name, t.len()));
            values.extend(t.iter().map(|v| v.to_f32().expect("finite parameter")));
        }
        ModelParams { seed, layout, values }
    }

    pub fn load_params(&mut self, params: &ModelParams) -> Result<(), ModelError> {
        let mut tensors = self.named_tensors();
        if tensors.len() != params.layout.len() {
            return Err(ModelError::ParamMismatch(format!(
                "{} tensors in checkpoint, {} in model",
                params.layout.len(),
                tensors.len()
            )));
        }
        let total: usize = params.layout.iter().map(|(_, n)| n).sum();
        if total != params.values.len() {
            return Err(ModelError::ParamMismatch(format!(
                "layout covers {total} values, blob holds {}",
                params.values.len()
            )));
        }
        let mut offset = 0;
        for ((name, t), (pname, len)) in tensors.iter_mut().zip(&params.layout) {
            if name != pname || t.len() != *len {
                return Err(ModelError::ParamMismatch(format!(
                    "expected {name} ({}), found {pname} ({len})",
                    t.len()
                )));
            }
            for (dst, src) in t.iter_mut().zip(&params.values[offset..offset + len]) {
                *dst = T::of(*src as f64);
            }
            offset += len;
        }
        self.seed = params.seed;
        Ok(())
    }
}
