use thiserror::Error;

use super::{
    conv_out_dim, Conv2d, DepthwiseSeparable, Layer, Linear, QuantizedModel, Tensor3, KERNEL,
    PADDING,
};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum InferError {
    #[error("input {got:?} does not match model input {expected:?}")]
    ShapeMismatch {
        expected: (usize, usize, usize),
        got: (usize, usize, usize),
    },
}

/// Round-half-up arithmetic right shift, clamped into `u8`.
#[inline]
pub fn requantize(acc: i64, shift: u32) -> u8 {
    let v = if shift == 0 {
        acc
    } else {
        (acc + (1i64 << (shift - 1))) >> shift
    };
    v.clamp(0, 255) as u8
}

/// Input rows/cols an output position reads, as `(kernel tap, input index)`.
#[inline]
fn taps(out: usize, stride: usize, dim: usize) -> impl Iterator<Item = (usize, usize)> {
    (0..KERNEL).filter_map(move |k| {
        let i = (out * stride + k).checked_sub(PADDING)?;
        (i < dim).then_some((k, i))
    })
}

fn conv2d_dense(input: &Tensor3, layer: &Conv2d) -> Tensor3 {
    let oh = conv_out_dim(input.height, layer.stride);
    let ow = conv_out_dim(input.width, layer.stride);
    let mut out = Tensor3::zeros(layer.out_ch, oh, ow);
    let mut o = 0;
    for oc in 0..layer.out_ch {
        let wk = &layer.weights[oc * layer.in_ch * 9..(oc + 1) * layer.in_ch * 9];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i32;
                for ic in 0..layer.in_ch {
                    for (ky, iy) in taps(oy, layer.stride, input.height) {
                        for (kx, ix) in taps(ox, layer.stride, input.width) {
                            acc += wk[ic * 9 + ky * 3 + kx] as i32 * input.at(ic, iy, ix) as i32;
                        }
                    }
                }
                out.data[o] = requantize(acc as i64 + layer.bias[oc] as i64, layer.shift);
                o += 1;
            }
        }
    }
    out
}

/// Scatter form: each non-zero input pixel adds its contribution to the
/// outputs it reaches, so zero activations cost nothing.
fn conv2d_sparse(input: &Tensor3, layer: &Conv2d) -> Tensor3 {
    let s = layer.stride;
    let oh = conv_out_dim(input.height, s);
    let ow = conv_out_dim(input.width, s);
    let oc_n = layer.out_ch;
    // [in_ch][ky][kx][out_ch] so the inner loop is contiguous
    let mut wt = vec![0i32; layer.in_ch * 9 * oc_n];
    for oc in 0..oc_n {
        for k in 0..layer.in_ch * 9 {
            wt[k * oc_n + oc] = layer.weights[oc * layer.in_ch * 9 + k] as i32;
        }
    }
    // [oy][ox][out_ch]
    let mut acc = vec![0i32; oh * ow * oc_n];
    for ic in 0..layer.in_ch {
        let plane = input.plane(ic);
        for iy in 0..input.height {
            for ix in 0..input.width {
                let v = plane[iy * input.width + ix] as i32;
                if v == 0 {
                    continue;
                }
                for ky in 0..KERNEL {
                    // oy * s + ky - PADDING == iy
                    let Some(num) = (iy + PADDING).checked_sub(ky) else { continue };
                    if num % s != 0 || num / s >= oh {
                        continue;
                    }
                    let oy = num / s;
                    for kx in 0..KERNEL {
                        let Some(num) = (ix + PADDING).checked_sub(kx) else { continue };
                        if num % s != 0 || num / s >= ow {
                            continue;
                        }
                        let ox = num / s;
                        let w = &wt[((ic * 3 + ky) * 3 + kx) * oc_n..][..oc_n];
                        let a = &mut acc[(oy * ow + ox) * oc_n..][..oc_n];
                        for (a, &w) in a.iter_mut().zip(w) {
                            *a += w * v;
                        }
                    }
                }
            }
        }
    }
    let mut out = Tensor3::zeros(oc_n, oh, ow);
    for oc in 0..oc_n {
        let bias = layer.bias[oc] as i64;
        for p in 0..oh * ow {
            out.data[oc * oh * ow + p] = requantize(acc[p * oc_n + oc] as i64 + bias, layer.shift);
        }
    }
    out
}

/// 3x3 convolution with zero padding, bias, ReLU and requantization.
pub fn conv2d_q8(input: &Tensor3, layer: &Conv2d) -> Tensor3 {
    Executor::default().conv2d(input, layer)
}

fn depthwise(input: &Tensor3, layer: &DepthwiseSeparable) -> Tensor3 {
    let s = layer.stride;
    let oh = conv_out_dim(input.height, s);
    let ow = conv_out_dim(input.width, s);
    let mut out = Tensor3::zeros(layer.in_ch, oh, ow);
    for c in 0..layer.in_ch {
        let w = &layer.dw_weights[c * 9..(c + 1) * 9];
        let plane = input.plane(c);
        let dst = &mut out.data[c * oh * ow..(c + 1) * oh * ow];
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0i32;
                for (ky, iy) in taps(oy, s, input.height) {
                    let row = &plane[iy * input.width..];
                    for (kx, ix) in taps(ox, s, input.width) {
                        acc += w[ky * 3 + kx] as i32 * row[ix] as i32;
                    }
                }
                dst[oy * ow + ox] = requantize(acc as i64 + layer.dw_bias[c] as i64, layer.dw_shift);
            }
        }
    }
    out
}

fn pointwise(mid: &Tensor3, layer: &DepthwiseSeparable, zero_skip: bool) -> Tensor3 {
    let n = mid.height * mid.width;
    let mut acc = vec![0i32; layer.out_ch * n];
    for ic in 0..layer.in_ch {
        let src = mid.plane(ic);
        for oc in 0..layer.out_ch {
            let w = layer.pw_weights[oc * layer.in_ch + ic] as i32;
            if zero_skip && w == 0 {
                continue;
            }
            let dst = &mut acc[oc * n..(oc + 1) * n];
            for (a, &v) in dst.iter_mut().zip(src) {
                *a += w * v as i32;
            }
        }
    }
    let mut out = Tensor3::zeros(layer.out_ch, mid.height, mid.width);
    for oc in 0..layer.out_ch {
        let bias = layer.pw_bias[oc] as i64;
        for p in 0..n {
            out.data[oc * n + p] = requantize(acc[oc * n + p] as i64 + bias, layer.pw_shift);
        }
    }
    out
}

/// Depthwise 3x3 then pointwise 1x1, each with bias, ReLU and requantization.
pub fn dwsep_conv_q8(input: &Tensor3, layer: &DepthwiseSeparable) -> Tensor3 {
    Executor::default().dwsep(input, layer)
}

/// Per-channel mean, rounded half up. Returns a `C x 1 x 1` tensor.
pub fn global_avg_pool(input: &Tensor3) -> Tensor3 {
    let n = (input.height * input.width) as u64;
    let data = (0..input.channels)
        .map(|c| {
            let sum: u64 = input.plane(c).iter().map(|&v| v as u64).sum();
            ((sum + n / 2) / n) as u8
        })
        .collect();
    Tensor3::from_vec(input.channels, 1, 1, data)
}

/// Dot products plus bias, kept at 32 bits. Saturates on overflow.
pub fn linear_q8(input: &[u8], layer: &Linear) -> Vec<i32> {
    (0..layer.out_features)
        .map(|o| {
            let w = &layer.weights[o * layer.in_features..(o + 1) * layer.in_features];
            let dot: i64 = w.iter().zip(input).map(|(&w, &x)| w as i64 * x as i64).sum();
            (dot + layer.bias[o] as i64).clamp(i32::MIN as i64, i32::MAX as i64) as i32
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Prediction {
    pub class_id: usize,
    pub logits: Vec<i32>,
}

/// Lowest index wins ties.
pub fn argmax(logits: &[i32]) -> usize {
    let mut best = 0;
    for (i, &v) in logits.iter().enumerate() {
        if v > logits[best] {
            best = i;
        }
    }
    best
}

/// Layer-by-layer executor. Stateless; safe to share across threads.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Executor {
    /// Skip multiply-accumulates on zero activations and zero weights.
    pub zero_skip: bool,
}

impl Default for Executor {
    fn default() -> Self {
        Self { zero_skip: true }
    }
}

impl Executor {
    pub fn dense() -> Self {
        Self { zero_skip: false }
    }

    pub fn conv2d(&self, input: &Tensor3, layer: &Conv2d) -> Tensor3 {
        if self.zero_skip {
            conv2d_sparse(input, layer)
        } else {
            conv2d_dense(input, layer)
        }
    }

    pub fn dwsep(&self, input: &Tensor3, layer: &DepthwiseSeparable) -> Tensor3 {
        let mid = depthwise(input, layer);
        pointwise(&mid, layer, self.zero_skip)
    }

    pub fn infer(&self, model: &QuantizedModel, input: &Tensor3) -> Result<Prediction, InferError> {
        let expected = (model.input_channels, model.input_height, model.input_width);
        let got = (input.channels, input.height, input.width);
        if expected != got {
            return Err(InferError::ShapeMismatch { expected, got });
        }
        let mut act: Option<Tensor3> = None;
        let mut logits = Vec::new();
        for layer in &model.layers {
            let x = act.as_ref().unwrap_or(input);
            match layer {
                Layer::Conv2d(c) => act = Some(self.conv2d(x, c)),
                Layer::DepthwiseSeparable(d) => act = Some(self.dwsep(x, d)),
                Layer::GlobalAvgPool => act = Some(global_avg_pool(x)),
                Layer::Linear(l) => logits = linear_q8(&x.data, l),
            }
        }
        Ok(Prediction {
            class_id: argmax(&logits),
            logits,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_conv(ch: usize) -> Conv2d {
        let mut weights = vec![0i8; ch * ch * 9];
        for c in 0..ch {
            weights[(c * ch + c) * 9 + 4] = 1;
        }
        Conv2d {
            in_ch: ch,
            out_ch: ch,
            stride: 1,
            weights,
            bias: vec![0; ch],
            shift: 0,
        }
    }

    fn ramp(c: usize, h: usize, w: usize) -> Tensor3 {
        Tensor3::from_vec(c, h, w, (0..c * h * w).map(|i| (i * 37 % 256) as u8).collect())
    }

    #[test]
    fn requantize_rounds_half_up() {
        assert_eq!(requantize(5, 1), 3);
        assert_eq!(requantize(4, 1), 2);
        assert_eq!(requantize(-5, 1), 0);
        assert_eq!(requantize(1000, 0), 255);
        assert_eq!(requantize(383, 1), 192);
        assert_eq!(requantize(-1, 0), 0);
    }

    #[test]
    fn identity_kernel_copies_input() {
        let x = ramp(2, 5, 7);
        let layer = identity_conv(2);
        assert_eq!(Executor::default().conv2d(&x, &layer), x);
        assert_eq!(Executor::dense().conv2d(&x, &layer), x);
    }

    #[test]
    fn conv_output_shape() {
        let layer = Conv2d {
            in_ch: 2,
            out_ch: 16,
            stride: 2,
            weights: vec![1; 2 * 16 * 9],
            bias: vec![0; 16],
            shift: 4,
        };
        let y = conv2d_q8(&Tensor3::zeros(2, 128, 128), &layer);
        assert_eq!((y.channels, y.height, y.width), (16, 64, 64));
    }

    #[test]
    fn dwsep_shape_and_zero_pointwise() {
        let layer = DepthwiseSeparable {
            in_ch: 16,
            out_ch: 32,
            stride: 2,
            dw_weights: vec![3; 16 * 9],
            dw_bias: vec![0; 16],
            dw_shift: 2,
            pw_weights: vec![0; 32 * 16],
            pw_bias: vec![0; 32],
            pw_shift: 0,
        };
        let y = dwsep_conv_q8(&ramp(16, 64, 64), &layer);
        assert_eq!((y.channels, y.height, y.width), (32, 32, 32));
        assert!(y.data.iter().all(|&v| v == 0));
    }

    #[test]
    fn average_pool() {
        let x = Tensor3::from_vec(1, 2, 2, vec![9; 4]);
        assert_eq!(global_avg_pool(&x).data, vec![9]);
        let x = Tensor3::from_vec(1, 2, 2, vec![0, 255, 255, 0]);
        assert_eq!(global_avg_pool(&x).data, vec![128]);
    }

    #[test]
    fn linear_layer() {
        let layer = Linear {
            in_features: 3,
            out_features: 2,
            weights: vec![1, -2, 3, 4, 5, -6],
            bias: vec![10, -10],
        };
        assert_eq!(linear_q8(&[0, 0, 0], &layer), vec![10, -10]);
        assert_eq!(linear_q8(&[0, 1, 0], &layer), vec![8, -5]);
    }

    #[test]
    fn argmax_prefers_lowest_index() {
        assert_eq!(argmax(&[1, 5, 5, 2]), 1);
        assert_eq!(argmax(&[-3, -3]), 0);
    }
}
