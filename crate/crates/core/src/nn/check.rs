//! Central finite-difference checks of the hand-written backward passes.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::layers::{Activation, BatchNorm2d, Conv2d, ElementLinear, Layer, MaxPool2d, Resize, Upsample2d};
use super::Tensor;

/// Largest elementwise relative error between analytic and numeric gradients.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub input: f64,
    pub params: f64,
    /// Number of compared gradient entries.
    pub checked: usize,
}

impl GradCheck {
    pub fn max(&self) -> f64 {
        self.input.max(self.params)
    }
}

pub const STEP: f64 = 1e-5;

/// Gradient magnitude below which errors are measured absolutely. Central differences
/// carry roundoff near `|loss| · 1e-16 / STEP`, so exact zeros (a conv bias feeding a
/// batch norm) come back as ~1e-10.
pub const ZERO_FLOOR: f64 = 1e-5;

/// `|a - n| / max(|a|, |n|, ZERO_FLOOR)`
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(ZERO_FLOOR)
}

fn projected_loss(layer: &mut Layer<f64>, x: &Tensor<f64>, probe: &[f64]) -> f64 {
    let y = layer.forward(x, true);
    y.data.iter().zip(probe).map(|(a, b)| a * b).sum()
}

/// Checks `layer` in training mode on `x` against the loss `Σ r ⊙ y` for a random probe `r`.
pub fn check_layer(layer: &mut Layer<f64>, x: &Tensor<f64>, seed: u64) -> GradCheck {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let y = layer.forward(x, true);
    let probe: Vec<f64> = (0..y.data.len()).map(|_| rng.gen_range(-1.0..1.0)).collect();
    layer.zero_grad();
    let dx = layer
        .backward(&Tensor::from_vec(y.shape, probe.clone()), true)
        .expect("input gradient requested");
    let analytic_params: Vec<Vec<f64>> = layer.params().into_iter().map(|(_, g)| g.clone()).collect();

    let mut worst_input: f64 = 0.0;
    let mut checked = 0;
    let mut xp = x.clone();
    for i in 0..x.data.len() {
        let orig = xp.data[i];
        xp.data[i] = orig + STEP;
        let plus = projected_loss(layer, &xp, &probe);
        xp.data[i] = orig - STEP;
        let minus = projected_loss(layer, &xp, &probe);
        xp.data[i] = orig;
        worst_input = worst_input.max(relative_error(dx.data[i], (plus - minus) / (2.0 * STEP)));
        checked += 1;
    }

    let mut worst_params: f64 = 0.0;
    for (p, analytic) in analytic_params.iter().enumerate() {
        for (i, &grad) in analytic.iter().enumerate() {
            let orig = layer.params()[p].0[i];
            layer.params()[p].0[i] = orig + STEP;
            let plus = projected_loss(layer, x, &probe);
            layer.params()[p].0[i] = orig - STEP;
            let minus = projected_loss(layer, x, &probe);
            layer.params()[p].0[i] = orig;
            worst_params = worst_params.max(relative_error(grad, (plus - minus) / (2.0 * STEP)));
            checked += 1;
        }
    }
    GradCheck {
        input: worst_input,
        params: worst_params,
        checked,
    }
}

fn randomize(layer: &mut Layer<f64>, rng: &mut ChaCha8Rng) {
    for (p, _) in layer.params() {
        for v in p.iter_mut() {
            *v = rng.gen_range(-1.0..1.0);
        }
    }
}

/// One instance of every layer type with random parameters and a matching random
/// 4-D input, named for reporting.
pub fn layer_suite(seed: u64) -> Vec<(String, Layer<f64>, Tensor<f64>)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let input = |shape: [usize; 4], rng: &mut ChaCha8Rng| {
        let n = shape.iter().product();
        Tensor::from_vec(shape, (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect())
    };
    let mut suite: Vec<(String, Layer<f64>, [usize; 4])> = vec![
        (
            "conv 3x1 linear".into(),
            Layer::Conv2d(Conv2d::new(2, 3, [3, 1], Activation::Linear)),
            [2, 2, 8, 3],
        ),
        (
            "conv 3x1 relu".into(),
            Layer::Conv2d(Conv2d::new(2, 3, [3, 1], Activation::Relu)),
            [2, 2, 8, 3],
        ),
        (
            "conv 3x3 relu".into(),
            Layer::Conv2d(Conv2d::new(3, 4, [3, 3], Activation::Relu)),
            [2, 3, 6, 5],
        ),
        ("batch norm".into(), Layer::BatchNorm(BatchNorm2d::new(3)), [4, 3, 4, 3]),
        (
            "max pool 2x1".into(),
            Layer::MaxPool(MaxPool2d::new([2, 1])),
            [2, 2, 8, 3],
        ),
        (
            "max pool 2x2".into(),
            Layer::MaxPool(MaxPool2d::new([2, 2])),
            [2, 2, 6, 4],
        ),
        (
            "upsample 2x1".into(),
            Layer::Upsample(Upsample2d::new([2, 1])),
            [2, 2, 4, 3],
        ),
        ("resize".into(), Layer::Resize(Resize::new([4, 3])), [2, 2, 3, 3]),
        (
            "element linear".into(),
            Layer::ElementLinear(ElementLinear::new(9, 12)),
            [2, 3, 4, 9],
        ),
    ];
    suite
        .drain(..)
        .map(|(name, mut layer, shape)| {
            randomize(&mut layer, &mut rng);
            let x = input(shape, &mut rng);
            (name, layer, x)
        })
        .collect()
}
