//! Functional 8-bit integer executor.
//!
//! Activations are unsigned 8-bit, weights symmetric signed 8-bit, biases and
//! accumulators 32-bit. Every convolution stage requantizes with
//! `(acc + 2^(s-1)) >> s` (arithmetic shift, round half up), then clamps into
//! `[0, 255]`, which is where ReLU happens. BatchNorm is folded into the
//! weights and biases before export.

mod manifest;
mod model;
mod ops;

pub use manifest::{load_model, save_model, LayerEntry, Manifest, MANIFEST_FILE};
pub use model::{homi_net16, homi_net70, LayerShape, ModelError, QuantizedModel, Topology};
pub use ops::{
    argmax, conv2d_q8, dwsep_conv_q8, global_avg_pool, linear_q8, requantize, Executor,
    InferError, Prediction,
};

use crate::framer::Frame;

/// Kernel size of every convolution.
pub const KERNEL: usize = 3;
/// Zero padding of every convolution.
pub const PADDING: usize = 1;
/// Gesture classes.
pub const CLASS_COUNT: usize = 11;

/// Channel-major activation tensor.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tensor3 {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<u8>,
}

impl Tensor3 {
    pub fn zeros(channels: usize, height: usize, width: usize) -> Self {
        Self {
            channels,
            height,
            width,
            data: vec![0; channels * height * width],
        }
    }

    pub fn from_vec(channels: usize, height: usize, width: usize, data: Vec<u8>) -> Self {
        assert_eq!(data.len(), channels * height * width, "tensor data length");
        Self {
            channels,
            height,
            width,
            data,
        }
    }

    #[inline]
    pub fn at(&self, c: usize, y: usize, x: usize) -> u8 {
        self.data[(c * self.height + y) * self.width + x]
    }

    pub fn plane(&self, c: usize) -> &[u8] {
        let n = self.height * self.width;
        &self.data[c * n..(c + 1) * n]
    }
}

impl From<&Frame> for Tensor3 {
    fn from(frame: &Frame) -> Self {
        Tensor3::from_vec(
            frame.channels as usize,
            frame.height as usize,
            frame.width as usize,
            frame.data.clone(),
        )
    }
}

impl From<Frame> for Tensor3 {
    fn from(frame: Frame) -> Self {
        Tensor3::from_vec(
            frame.channels as usize,
            frame.height as usize,
            frame.width as usize,
            frame.data,
        )
    }
}

/// Output side length of a 3x3, padding-1 convolution.
pub fn conv_out_dim(dim: usize, stride: usize) -> usize {
    (dim + 2 * PADDING - KERNEL) / stride + 1
}

/// Standard 3x3 convolution with folded BatchNorm.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2d {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// `[out_ch][in_ch][3][3]`
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
    pub shift: u32,
}

/// 3x3 depthwise stage followed by a 1x1 pointwise stage.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DepthwiseSeparable {
    pub in_ch: usize,
    pub out_ch: usize,
    pub stride: usize,
    /// `[in_ch][3][3]`
    pub dw_weights: Vec<i8>,
    pub dw_bias: Vec<i32>,
    pub dw_shift: u32,
    /// `[out_ch][in_ch]`
    pub pw_weights: Vec<i8>,
    pub pw_bias: Vec<i32>,
    pub pw_shift: u32,
}

/// Fully connected classifier producing 32-bit logits.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Linear {
    pub in_features: usize,
    pub out_features: usize,
    /// `[out_features][in_features]`
    pub weights: Vec<i8>,
    pub bias: Vec<i32>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Layer {
    Conv2d(Conv2d),
    DepthwiseSeparable(DepthwiseSeparable),
    GlobalAvgPool,
    Linear(Linear),
}

impl Layer {
    pub fn kind_name(&self) -> &'static str {
        match self {
            Layer::Conv2d(_) => "conv2d",
            Layer::DepthwiseSeparable(_) => "dwsep",
            Layer::GlobalAvgPool => "avgpool",
            Layer::Linear(_) => "linear",
        }
    }

    pub fn shape(&self) -> LayerShape {
        match self {
            Layer::Conv2d(c) => LayerShape::Conv2d {
                in_ch: c.in_ch,
                out_ch: c.out_ch,
                stride: c.stride,
            },
            Layer::DepthwiseSeparable(d) => LayerShape::DepthwiseSeparable {
                in_ch: d.in_ch,
                out_ch: d.out_ch,
                stride: d.stride,
            },
            Layer::GlobalAvgPool => LayerShape::GlobalAvgPool,
            Layer::Linear(l) => LayerShape::Linear {
                in_features: l.in_features,
                out_features: l.out_features,
            },
        }
    }
}
