//! Layers with cached forward state and explicit backward passes.
//!
//! `backward` consumes the gradient w.r.t. the layer output, accumulates parameter
//! gradients and returns the gradient w.r.t. the input when asked for it.

use serde::{Deserialize, Serialize};

use super::{gemm, Real, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Linear,
}

// ============================================================================
// Conv2d
// ============================================================================

/// Stride-1 convolution with "same" zero padding and an optional fused ReLU.
#[derive(Debug, Clone)]
pub struct Conv2d<T> {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub activation: Activation,
    /// `[out][in][kh][kw]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
    output: Option<Tensor<T>>,
    cols: Vec<T>,
    dcols: Vec<T>,
}

fn im2col<T: Real>(x: &[T], c: usize, h: usize, w: usize, kernel: [usize; 2], cols: &mut [T]) {
    let [kh, kw] = kernel;
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for ci in 0..c {
        let plane = &x[ci * hw..(ci + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (ci * kh + dy) * kw + dx;
                let dst = &mut cols[row * hw..(row + 1) * hw];
                let off_x = dx as isize - pw;
                let x_lo = (-off_x).max(0) as usize;
                let x_hi = (w as isize - off_x).min(w as isize).max(0) as usize;
                for y in 0..h {
                    let sy = y as isize + dy as isize - ph;
                    let out_row = &mut dst[y * w..(y + 1) * w];
                    if sy < 0 || sy >= h as isize || x_lo >= x_hi {
                        out_row.fill(T::zero());
                        continue;
                    }
                    let src = &plane[sy as usize * w..(sy as usize + 1) * w];
                    out_row[..x_lo].fill(T::zero());
                    out_row[x_hi..].fill(T::zero());
                    let s0 = (x_lo as isize + off_x) as usize;
                    out_row[x_lo..x_hi].copy_from_slice(&src[s0..s0 + (x_hi - x_lo)]);
                }
            }
        }
    }
}

fn col2im_add<T: Real>(cols: &[T], c: usize, h: usize, w: usize, kernel: [usize; 2], x: &mut [T]) {
    let [kh, kw] = kernel;
    let (ph, pw) = ((kh / 2) as isize, (kw / 2) as isize);
    let hw = h * w;
    for ci in 0..c {
        let plane = &mut x[ci * hw..(ci + 1) * hw];
        for dy in 0..kh {
            for dx in 0..kw {
                let row = (ci * kh + dy) * kw + dx;
                let src = &cols[row * hw..(row + 1) * hw];
                let off_x = dx as isize - pw;
                let x_lo = (-off_x).max(0) as usize;
                let x_hi = (w as isize - off_x).min(w as isize).max(0) as usize;
                if x_lo >= x_hi {
                    continue;
                }
                for y in 0..h {
                    let sy = y as isize + dy as isize - ph;
                    if sy < 0 || sy >= h as isize {
                        continue;
                    }
                    let s0 = (x_lo as isize + off_x) as usize;
                    let dst = &mut plane[sy as usize * w + s0..sy as usize * w + s0 + (x_hi - x_lo)];
                    for (d, s) in dst.iter_mut().zip(&src[y * w + x_lo..y * w + x_hi]) {
                        *d += *s;
                    }
                }
            }
        }
    }
}

impl<T: Real> Conv2d<T> {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 2], activation: Activation) -> Self {
        assert!(
            kernel[0] % 2 == 1 && kernel[1] % 2 == 1,
            "same padding needs odd kernels"
        );
        let fan = in_channels * kernel[0] * kernel[1];
        Self {
            in_channels,
            out_channels,
            kernel,
            activation,
            weight: vec![T::zero(); out_channels * fan],
            bias: vec![T::zero(); out_channels],
            grad_weight: vec![T::zero(); out_channels * fan],
            grad_bias: vec![T::zero(); out_channels],
            input: None,
            output: None,
            cols: Vec::new(),
            dcols: Vec::new(),
        }
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel[0] * self.kernel[1]
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.channels(), self.in_channels, "conv input channels");
        let [n, _, h, w] = x.shape;
        let hw = h * w;
        let fan = self.fan_in();
        self.cols.resize(fan * hw, T::zero());
        let mut out = Tensor::zeros([n, self.out_channels, h, w]);
        let out_len = self.out_channels * hw;
        for s in 0..n {
            let o = &mut out.data[s * out_len..(s + 1) * out_len];
            im2col(x.sample(s), self.in_channels, h, w, self.kernel, &mut self.cols);
            gemm(
                false,
                false,
                self.out_channels,
                hw,
                fan,
                T::one(),
                &self.weight,
                &self.cols,
                T::zero(),
                o,
            );
            for (co, b) in self.bias.iter().enumerate() {
                let row = &mut o[co * hw..(co + 1) * hw];
                match self.activation {
                    Activation::Relu => row.iter_mut().for_each(|v| *v = (*v + *b).max(T::zero())),
                    Activation::Linear => row.iter_mut().for_each(|v| *v += *b),
                }
            }
        }
        if train {
            self.input = Some(x.clone());
            self.output = (self.activation == Activation::Relu).then(|| out.clone());
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let x = self.input.take().expect("conv backward without forward");
        let [n, _, h, w] = x.shape;
        let hw = h * w;
        let fan = self.fan_in();
        let masked;
        let g = match self.output.take() {
            Some(mut out) => {
                for (ov, gv) in out.data.iter_mut().zip(&grad.data) {
                    *ov = if *ov > T::zero() { *gv } else { T::zero() };
                }
                masked = out;
                &masked
            }
            None => grad,
        };
        let mut dx = need_input_grad.then(|| Tensor::zeros(x.shape));
        self.cols.resize(fan * hw, T::zero());
        self.dcols.resize(fan * hw, T::zero());
        let g_len = self.out_channels * hw;
        for s in 0..n {
            let gs = &g.data[s * g_len..(s + 1) * g_len];
            let (cin, cout) = (self.in_channels, self.out_channels);
            im2col(x.sample(s), cin, h, w, self.kernel, &mut self.cols);
            gemm(
                false,
                true,
                cout,
                fan,
                hw,
                T::one(),
                gs,
                &self.cols,
                T::one(),
                &mut self.grad_weight,
            );
            for (co, gb) in self.grad_bias.iter_mut().enumerate() {
                let mut acc = T::zero();
                for v in &gs[co * hw..(co + 1) * hw] {
                    acc += *v;
                }
                *gb += acc;
            }
            if let Some(dx) = dx.as_mut() {
                let len = x.sample_len();
                let dxs = &mut dx.data[s * len..(s + 1) * len];
                gemm(
                    true,
                    false,
                    fan,
                    hw,
                    cout,
                    T::one(),
                    &self.weight,
                    gs,
                    T::zero(),
                    &mut self.dcols,
                );
                col2im_add(&self.dcols, cin, h, w, self.kernel, dxs);
            }
        }
        dx
    }
}

// ============================================================================
// BatchNorm2d
// ============================================================================

/// Per-channel batch normalization over (batch, height, width).
#[derive(Debug, Clone)]
pub struct BatchNorm2d<T> {
    pub channels: usize,
    pub gamma: Vec<T>,
    pub beta: Vec<T>,
    pub grad_gamma: Vec<T>,
    pub grad_beta: Vec<T>,
    pub running_mean: Vec<T>,
    pub running_var: Vec<T>,
    pub momentum: f64,
    pub eps: f64,
    x_hat: Vec<T>,
    inv_std: Vec<f64>,
    shape: Option<([usize; 4], bool)>,
}

impl<T: Real> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        Self {
            channels,
            gamma: vec![T::one(); channels],
            beta: vec![T::zero(); channels],
            grad_gamma: vec![T::zero(); channels],
            grad_beta: vec![T::zero(); channels],
            running_mean: vec![T::zero(); channels],
            running_var: vec![T::one(); channels],
            momentum: 0.1,
            eps: 1e-5,
            x_hat: Vec::new(),
            inv_std: vec![0.0; channels],
            shape: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.channels(), self.channels, "batchnorm channels");
        let [n, c, h, w] = x.shape;
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut out = Tensor::zeros(x.shape);
        if train {
            self.x_hat.resize(x.data.len(), T::zero());
        }
        for ch in 0..c {
            let planes = (0..n).map(|s| (s * c + ch) * plane);
            let (mean, inv_std) = if train {
                let sum: f64 = planes.clone().map(|off| lane_sum(&x.data[off..off + plane])).sum();
                let mean = sum / count;
                let mean_t = T::of(mean);
                let sq: f64 = planes
                    .clone()
                    .map(|off| lane_sum_sq_dev(&x.data[off..off + plane], mean_t))
                    .sum();
                let var = sq / count;
                let unbiased = if count > 1.0 { sq / (count - 1.0) } else { var };
                let mom = self.momentum;
                self.running_mean[ch] = T::of((1.0 - mom) * self.running_mean[ch].f64() + mom * mean);
                self.running_var[ch] = T::of((1.0 - mom) * self.running_var[ch].f64() + mom * unbiased);
                (mean, 1.0 / (var + self.eps).sqrt())
            } else {
                let var = self.running_var[ch].f64();
                (self.running_mean[ch].f64(), 1.0 / (var + self.eps).sqrt())
            };
            self.inv_std[ch] = inv_std;
            let (g, b) = (self.gamma[ch], self.beta[ch]);
            let (mean_t, inv_t) = (T::of(mean), T::of(inv_std));
            for off in planes {
                let src = &x.data[off..off + plane];
                let dst = &mut out.data[off..off + plane];
                if train {
                    let xh = &mut self.x_hat[off..off + plane];
                    for ((o, h), v) in dst.iter_mut().zip(xh.iter_mut()).zip(src) {
                        *h = (*v - mean_t) * inv_t;
                        *o = g * *h + b;
                    }
                } else {
                    let scale = g * inv_t;
                    let shift = b - mean_t * scale;
                    for (o, v) in dst.iter_mut().zip(src) {
                        *o = *v * scale + shift;
                    }
                }
            }
        }
        if train {
            self.shape = Some((x.shape, true));
        }
        out
    }

    /// Backward through the training-mode (batch statistics) transform.
    pub fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let (shape, _) = self.shape.take().expect("batchnorm backward without forward");
        let [n, c, h, w] = shape;
        let plane = h * w;
        let count = (n * plane) as f64;
        let mut dx = need_input_grad.then(|| Tensor::zeros(shape));
        for ch in 0..c {
            let planes = (0..n).map(|s| (s * c + ch) * plane);
            let mut sum_g = 0.0;
            let mut sum_gx = 0.0;
            for off in planes.clone() {
                sum_g += lane_sum(&grad.data[off..off + plane]);
                sum_gx += lane_dot(&grad.data[off..off + plane], &self.x_hat[off..off + plane]);
            }
            self.grad_beta[ch] += T::of(sum_g);
            self.grad_gamma[ch] += T::of(sum_gx);
            if let Some(dx) = dx.as_mut() {
                let scale = self.gamma[ch].f64() * self.inv_std[ch];
                let a = T::of(scale);
                let b = T::of(scale * sum_g / count);
                let cx = T::of(scale * sum_gx / count);
                for off in planes {
                    let dst = &mut dx.data[off..off + plane];
                    let g = &grad.data[off..off + plane];
                    let xh = &self.x_hat[off..off + plane];
                    for ((d, g), xh) in dst.iter_mut().zip(g).zip(xh) {
                        *d = a * *g - b - cx * *xh;
                    }
                }
            }
        }
        dx
    }
}

const LANES: usize = 8;

fn lane_sum<T: Real>(v: &[T]) -> f64 {
    let mut acc = [T::zero(); LANES];
    let chunks = v.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|x| x.f64()).sum();
    for ch in chunks {
        for (a, x) in acc.iter_mut().zip(ch) {
            *a += *x;
        }
    }
    acc.iter().map(|a| a.f64()).sum::<f64>() + tail
}

fn lane_sum_sq_dev<T: Real>(v: &[T], mean: T) -> f64 {
    let mut acc = [T::zero(); LANES];
    let chunks = v.chunks_exact(LANES);
    let tail: f64 = chunks.remainder().iter().map(|x| (*x - mean).f64().powi(2)).sum();
    for ch in chunks {
        for (a, x) in acc.iter_mut().zip(ch) {
            let d = *x - mean;
            *a += d * d;
        }
    }
    acc.iter().map(|a| a.f64()).sum::<f64>() + tail
}

fn lane_dot<T: Real>(a: &[T], b: &[T]) -> f64 {
    let mut acc = [T::zero(); LANES];
    let ca = a.chunks_exact(LANES);
    let cb = b.chunks_exact(LANES);
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (*x * *y).f64())
        .sum();
    for (xa, xb) in ca.zip(cb) {
        for ((s, x), y) in acc.iter_mut().zip(xa).zip(xb) {
            *s += *x * *y;
        }
    }
    acc.iter().map(|a| a.f64()).sum::<f64>() + tail
}

// ============================================================================
// Pooling and resampling
// ============================================================================

/// Non-overlapping max pooling; trailing rows/columns that do not fill a window are dropped.
#[derive(Debug, Clone)]
pub struct MaxPool2d {
    pub size: [usize; 2],
    argmax: Vec<u32>,
    input_shape: Option<[usize; 4]>,
}

impl MaxPool2d {
    pub fn new(size: [usize; 2]) -> Self {
        Self {
            size,
            argmax: Vec::new(),
            input_shape: None,
        }
    }

    pub fn output_hw(&self, h: usize, w: usize) -> [usize; 2] {
        [h / self.size[0], w / self.size[1]]
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let [oh, ow] = self.output_hw(h, w);
        let [sh, sw] = self.size;
        let mut out = Tensor::zeros([n, c, oh, ow]);
        if train {
            self.argmax.resize(out.data.len(), 0);
        }
        let plane_out = oh * ow;
        for p in 0..n * c {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * plane_out..(p + 1) * plane_out];
            let arg = if train {
                Some(&mut self.argmax[p * plane_out..(p + 1) * plane_out])
            } else {
                None
            };
            pool_plane(src, w, [oh, ow], [sh, sw], dst, arg);
        }
        if train {
            self.input_shape = Some(x.shape);
        }
        out
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self.input_shape.take().expect("maxpool backward without forward");
        let [_, _, h, w] = shape;
        let mut dx = Tensor::zeros(shape);
        let plane_out = grad.plane();
        for ((gp, ap), dp) in grad
            .data
            .chunks_exact(plane_out)
            .zip(self.argmax.chunks_exact(plane_out))
            .zip(dx.data.chunks_exact_mut(h * w))
        {
            for (g, a) in gp.iter().zip(ap) {
                dp[*a as usize] += *g;
            }
        }
        dx
    }
}

fn pool_plane<T: Real>(
    src: &[T],
    w: usize,
    [oh, ow]: [usize; 2],
    [sh, sw]: [usize; 2],
    dst: &mut [T],
    mut arg: Option<&mut [u32]>,
) {
    for oy in 0..oh {
        let drow = &mut dst[oy * ow..(oy + 1) * ow];
        for (ox, d) in drow.iter_mut().enumerate() {
            let mut best = oy * sh * w + ox * sw;
            let mut best_v = src[best];
            for dy in 0..sh {
                let base = (oy * sh + dy) * w + ox * sw;
                for (dx, v) in src[base..base + sw].iter().enumerate() {
                    if *v > best_v {
                        best_v = *v;
                        best = base + dx;
                    }
                }
            }
            *d = best_v;
            if let Some(a) = arg.as_deref_mut() {
                a[oy * ow + ox] = best as u32;
            }
        }
    }
}

/// Nearest-neighbour upsampling by integer factors.
#[derive(Debug, Clone)]
pub struct Upsample2d {
    pub scale: [usize; 2],
    input_shape: Option<[usize; 4]>,
}

impl Upsample2d {
    pub fn new(scale: [usize; 2]) -> Self {
        Self {
            scale,
            input_shape: None,
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let [sh, sw] = self.scale;
        let (oh, ow) = (h * sh, w * sw);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for oy in 0..oh {
                for ox in 0..ow {
                    dst[oy * ow + ox] = src[(oy / sh) * w + ox / sw];
                }
            }
        }
        if train {
            self.input_shape = Some(x.shape);
        }
        out
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self.input_shape.take().expect("upsample backward without forward");
        let [n, c, h, w] = shape;
        let [sh, sw] = self.scale;
        let (oh, ow) = (h * sh, w * sw);
        let mut dx = Tensor::zeros(shape);
        for p in 0..n * c {
            let src = &grad.data[p * oh * ow..(p + 1) * oh * ow];
            let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
            for oy in 0..oh {
                for ox in 0..ow {
                    dst[(oy / sh) * w + ox / sw] += src[oy * ow + ox];
                }
            }
        }
        dx
    }
}

/// Two-tap linear interpolation weights with half-pixel centers.
fn linear_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (input - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Bilinear resize of every channel plane to a fixed spatial size.
#[derive(Debug, Clone)]
pub struct Resize {
    pub out_hw: [usize; 2],
    input_shape: Option<[usize; 4]>,
}

impl Resize {
    pub fn new(out_hw: [usize; 2]) -> Self {
        Self {
            out_hw,
            input_shape: None,
        }
    }

    pub fn forward<T: Real>(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        let [n, c, h, w] = x.shape;
        let [oh, ow] = self.out_hw;
        let rows = linear_taps(h, oh);
        let cols = linear_taps(w, ow);
        let mut out = Tensor::zeros([n, c, oh, ow]);
        for p in 0..n * c {
            let src = &x.data[p * h * w..(p + 1) * h * w];
            let dst = &mut out.data[p * oh * ow..(p + 1) * oh * ow];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let (wy0, wy1) = (T::of(1.0 - fy), T::of(fy));
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let (wx0, wx1) = (T::of(1.0 - fx), T::of(fx));
                    dst[oy * ow + ox] = wy0 * (wx0 * src[y0 * w + x0] + wx1 * src[y0 * w + x1])
                        + wy1 * (wx0 * src[y1 * w + x0] + wx1 * src[y1 * w + x1]);
                }
            }
        }
        if train {
            self.input_shape = Some(x.shape);
        }
        out
    }

    pub fn backward<T: Real>(&mut self, grad: &Tensor<T>) -> Tensor<T> {
        let shape = self.input_shape.take().expect("resize backward without forward");
        let [n, c, h, w] = shape;
        let [oh, ow] = self.out_hw;
        let rows = linear_taps(h, oh);
        let cols = linear_taps(w, ow);
        let mut dx = Tensor::zeros(shape);
        for p in 0..n * c {
            let src = &grad.data[p * oh * ow..(p + 1) * oh * ow];
            let dst = &mut dx.data[p * h * w..(p + 1) * h * w];
            for (oy, &(y0, y1, fy)) in rows.iter().enumerate() {
                let (wy0, wy1) = (T::of(1.0 - fy), T::of(fy));
                for (ox, &(x0, x1, fx)) in cols.iter().enumerate() {
                    let (wx0, wx1) = (T::of(1.0 - fx), T::of(fx));
                    let g = src[oy * ow + ox];
                    dst[y0 * w + x0] += wy0 * wx0 * g;
                    dst[y0 * w + x1] += wy0 * wx1 * g;
                    dst[y1 * w + x0] += wy1 * wx0 * g;
                    dst[y1 * w + x1] += wy1 * wx1 * g;
                }
            }
        }
        dx
    }
}

// ============================================================================
// ElementLinear
// ============================================================================

/// Affine map over the last (element) axis, shared across batch, channel and row.
#[derive(Debug, Clone)]
pub struct ElementLinear<T> {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out][in]`
    pub weight: Vec<T>,
    pub bias: Vec<T>,
    pub grad_weight: Vec<T>,
    pub grad_bias: Vec<T>,
    input: Option<Tensor<T>>,
}

impl<T: Real> ElementLinear<T> {
    pub fn new(in_features: usize, out_features: usize) -> Self {
        Self {
            in_features,
            out_features,
            weight: vec![T::zero(); in_features * out_features],
            bias: vec![T::zero(); out_features],
            grad_weight: vec![T::zero(); in_features * out_features],
            grad_bias: vec![T::zero(); out_features],
            input: None,
        }
    }

    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        assert_eq!(x.shape[3], self.in_features, "element-linear input width");
        let rows = x.shape[0] * x.shape[1] * x.shape[2];
        let mut out = Tensor::zeros([x.shape[0], x.shape[1], x.shape[2], self.out_features]);
        gemm(
            false,
            true,
            rows,
            self.out_features,
            self.in_features,
            T::one(),
            &x.data,
            &self.weight,
            T::zero(),
            &mut out.data,
        );
        for row in out.data.chunks_mut(self.out_features) {
            for (v, b) in row.iter_mut().zip(&self.bias) {
                *v += *b;
            }
        }
        if train {
            self.input = Some(x.clone());
        }
        out
    }

    pub fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        let x = self.input.take().expect("element-linear backward without forward");
        let rows = x.shape[0] * x.shape[1] * x.shape[2];
        gemm(
            true,
            false,
            self.out_features,
            self.in_features,
            rows,
            T::one(),
            &grad.data,
            &x.data,
            T::one(),
            &mut self.grad_weight,
        );
        for row in grad.data.chunks(self.out_features) {
            for (gb, g) in self.grad_bias.iter_mut().zip(row) {
                *gb += *g;
            }
        }
        need_input_grad.then(|| {
            let mut dx = Tensor::zeros(x.shape);
            gemm(
                false,
                false,
                rows,
                self.in_features,
                self.out_features,
                T::one(),
                &grad.data,
                &self.weight,
                T::zero(),
                &mut dx.data,
            );
            dx
        })
    }
}

// ============================================================================
// Layer
// ============================================================================

#[derive(Debug, Clone)]
pub enum Layer<T> {
    Conv2d(Conv2d<T>),
    BatchNorm(BatchNorm2d<T>),
    MaxPool(MaxPool2d),
    Upsample(Upsample2d),
    Resize(Resize),
    ElementLinear(ElementLinear<T>),
}

/// A mutable parameter slice and its gradient accumulator.
pub type ParamRef<'a, T> = (&'a mut Vec<T>, &'a mut Vec<T>);

impl<T: Real> Layer<T> {
    pub fn forward(&mut self, x: &Tensor<T>, train: bool) -> Tensor<T> {
        match self {
            Layer::Conv2d(l) => l.forward(x, train),
            Layer::BatchNorm(l) => l.forward(x, train),
            Layer::MaxPool(l) => l.forward(x, train),
            Layer::Upsample(l) => l.forward(x, train),
            Layer::Resize(l) => l.forward(x, train),
            Layer::ElementLinear(l) => l.forward(x, train),
        }
    }

    pub fn backward(&mut self, grad: &Tensor<T>, need_input_grad: bool) -> Option<Tensor<T>> {
        match self {
            Layer::Conv2d(l) => l.backward(grad, need_input_grad),
            Layer::BatchNorm(l) => l.backward(grad, need_input_grad),
            Layer::MaxPool(l) => Some(l.backward(grad)),
            Layer::Upsample(l) => Some(l.backward(grad)),
            Layer::Resize(l) => Some(l.backward(grad)),
            Layer::ElementLinear(l) => l.backward(grad, need_input_grad),
        }
    }

    pub fn params(&mut self) -> Vec<ParamRef<'_, T>> {
        match self {
            Layer::Conv2d(l) => vec![(&mut l.weight, &mut l.grad_weight), (&mut l.bias, &mut l.grad_bias)],
            Layer::BatchNorm(l) => vec![(&mut l.gamma, &mut l.grad_gamma), (&mut l.beta, &mut l.grad_beta)],
            Layer::ElementLinear(l) => vec![(&mut l.weight, &mut l.grad_weight), (&mut l.bias, &mut l.grad_bias)],
            _ => Vec::new(),
        }
    }

    /// Non-trainable state (batch-norm running statistics).
    pub fn buffers(&mut self) -> Vec<&mut Vec<T>> {
        match self {
            Layer::BatchNorm(l) => vec![&mut l.running_mean, &mut l.running_var],
            _ => Vec::new(),
        }
    }

    pub fn zero_grad(&mut self) {
        for (_, g) in self.params() {
            g.fill(T::zero());
        }
    }
}
