use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use super::{
    conv_out_dim, Conv2d, DepthwiseSeparable, Layer, Linear, CLASS_COUNT, KERNEL,
};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("manifest: {0}")]
    Parse(String),
    #[error("layer {layer}: {detail}")]
    ShapeMismatch { layer: usize, detail: String },
    #[error("layer {layer}: checksum mismatch for blob {blob}")]
    ChecksumMismatch { layer: usize, blob: String },
    #[error("layer {layer}: unsupported {what}")]
    UnsupportedKind { layer: usize, what: String },
}

/// Shape-only description of a layer.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerShape {
    Conv2d { in_ch: usize, out_ch: usize, stride: usize },
    DepthwiseSeparable { in_ch: usize, out_ch: usize, stride: usize },
    GlobalAvgPool,
    Linear { in_features: usize, out_features: usize },
}

impl LayerShape {
    /// Weights and biases stored after BatchNorm folding.
    pub fn stored_params(&self) -> usize {
        let k = KERNEL * KERNEL;
        match *self {
            LayerShape::Conv2d { in_ch, out_ch, .. } => in_ch * out_ch * k + out_ch,
            LayerShape::DepthwiseSeparable { in_ch, out_ch, .. } => {
                in_ch * k + in_ch + in_ch * out_ch + out_ch
            }
            LayerShape::GlobalAvgPool => 0,
            LayerShape::Linear {
                in_features,
                out_features,
            } => in_features * out_features + out_features,
        }
    }

    /// Trainable parameters before folding: the stored count plus the
    /// BatchNorm scale and offset closing each convolutional block.
    pub fn trainable_params(&self) -> usize {
        let bn = match *self {
            LayerShape::Conv2d { out_ch, .. } | LayerShape::DepthwiseSeparable { out_ch, .. } => {
                2 * out_ch
            }
            _ => 0,
        };
        self.stored_params() + bn
    }
}

/// A network topology: input shape plus the ordered layer shapes.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Topology {
    pub name: String,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<LayerShape>,
}

fn blocks(
    name: &str,
    input_channels: usize,
    dw: &[(usize, usize, usize)],
    features: usize,
) -> Topology {
    let mut layers = vec![LayerShape::Conv2d {
        in_ch: input_channels,
        out_ch: 16,
        stride: 2,
    }];
    layers.extend(dw.iter().map(|&(in_ch, out_ch, stride)| {
        LayerShape::DepthwiseSeparable {
            in_ch,
            out_ch,
            stride,
        }
    }));
    layers.push(LayerShape::GlobalAvgPool);
    layers.push(LayerShape::Linear {
        in_features: features,
        out_features: CLASS_COUNT,
    });
    Topology {
        name: name.to_string(),
        input_channels,
        input_height: 128,
        input_width: 128,
        layers,
    }
}

/// The compact network: one stride-2 convolution and five separable blocks.
pub fn homi_net16(input_channels: usize) -> Topology {
    blocks(
        "homi-net16",
        input_channels,
        &[(16, 16, 2), (16, 32, 2), (32, 32, 2), (32, 64, 1), (64, 128, 2)],
        128,
    )
}

/// The larger network: seven separable blocks ending at 256 channels.
pub fn homi_net70(input_channels: usize) -> Topology {
    blocks(
        "homi-net70",
        input_channels,
        &[
            (16, 16, 1),
            (16, 32, 2),
            (32, 32, 1),
            (32, 64, 2),
            (64, 128, 1),
            (128, 128, 1),
            (128, 256, 2),
        ],
        256,
    )
}

impl Topology {
    pub fn param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::trainable_params).sum()
    }

    pub fn stored_param_count(&self) -> usize {
        self.layers.iter().map(LayerShape::stored_params).sum()
    }

    /// Walks the shape chain, returning `(channels, height, width)` after
    /// every layer. The classifier reports `(classes, 1, 1)`.
    pub fn shape_chain(&self) -> Result<Vec<(usize, usize, usize)>, ModelError> {
        let mut shape = (self.input_channels, self.input_height, self.input_width);
        let mut out = Vec::with_capacity(self.layers.len());
        let mismatch = |layer: usize, detail: String| ModelError::ShapeMismatch { layer, detail };
        let last = self.layers.len().checked_sub(1).ok_or_else(|| mismatch(0, "empty model".into()))?;
        for (i, layer) in self.layers.iter().enumerate() {
            let (c, h, w) = shape;
            shape = match *layer {
                LayerShape::Conv2d { in_ch, out_ch, stride }
                | LayerShape::DepthwiseSeparable { in_ch, out_ch, stride } => {
                    if in_ch != c {
                        return Err(mismatch(i, format!("expects {in_ch} input channels, got {c}")));
                    }
                    if !(1..=2).contains(&stride) {
                        return Err(ModelError::UnsupportedKind {
                            layer: i,
                            what: format!("stride {stride}"),
                        });
                    }
                    if h == 0 || w == 0 || out_ch == 0 {
                        return Err(mismatch(i, "empty tensor".into()));
                    }
                    (out_ch, conv_out_dim(h, stride), conv_out_dim(w, stride))
                }
                LayerShape::GlobalAvgPool => (c, 1, 1),
                LayerShape::Linear {
                    in_features,
                    out_features,
                } => {
                    if (h, w) != (1, 1) || in_features != c {
                        return Err(mismatch(
                            i,
                            format!("linear expects {in_features}x1x1, got {c}x{h}x{w}"),
                        ));
                    }
                    if i != last {
                        return Err(mismatch(i, "linear must be the final layer".into()));
                    }
                    (out_features, 1, 1)
                }
            };
            out.push(shape);
        }
        if !matches!(self.layers[last], LayerShape::Linear { .. }) {
            return Err(mismatch(last, "model must end in a linear classifier".into()));
        }
        Ok(out)
    }
}

/// A loaded, validated integer model.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct QuantizedModel {
    pub name: String,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub layers: Vec<Layer>,
}

impl QuantizedModel {
    pub fn topology(&self) -> Topology {
        Topology {
            name: self.name.clone(),
            input_channels: self.input_channels,
            input_height: self.input_height,
            input_width: self.input_width,
            layers: self.layers.iter().map(Layer::shape).collect(),
        }
    }

    /// Trainable parameter count of the source network.
    pub fn param_count(&self) -> usize {
        self.topology().param_count()
    }

    pub fn class_count(&self) -> usize {
        match self.layers.last() {
            Some(Layer::Linear(l)) => l.out_features,
            _ => 0,
        }
    }

    /// Checks the shape chain and every weight array length.
    pub fn validate(&self) -> Result<(), ModelError> {
        self.topology().shape_chain()?;
        for (i, layer) in self.layers.iter().enumerate() {
            let bad = |what: &str, got: usize, want: usize| ModelError::ShapeMismatch {
                layer: i,
                detail: format!("{what} has {got} entries, expected {want}"),
            };
            let check = |what: &str, got: usize, want: usize| {
                if got == want {
                    Ok(())
                } else {
                    Err(bad(what, got, want))
                }
            };
            match layer {
                Layer::Conv2d(c) => {
                    check("weights", c.weights.len(), c.in_ch * c.out_ch * 9)?;
                    check("bias", c.bias.len(), c.out_ch)?;
                }
                Layer::DepthwiseSeparable(d) => {
                    check("depthwise weights", d.dw_weights.len(), d.in_ch * 9)?;
                    check("depthwise bias", d.dw_bias.len(), d.in_ch)?;
                    check("pointwise weights", d.pw_weights.len(), d.in_ch * d.out_ch)?;
                    check("pointwise bias", d.pw_bias.len(), d.out_ch)?;
                }
                Layer::GlobalAvgPool => {}
                Layer::Linear(l) => {
                    check("weights", l.weights.len(), l.in_features * l.out_features)?;
                    check("bias", l.bias.len(), l.out_features)?;
                }
            }
            let shifts: &[u32] = match layer {
                Layer::Conv2d(c) => &[c.shift],
                Layer::DepthwiseSeparable(d) => &[d.dw_shift, d.pw_shift],
                _ => &[],
            };
            if shifts.iter().any(|&s| s > 31) {
                return Err(ModelError::UnsupportedKind {
                    layer: i,
                    what: "rescale shift above 31".into(),
                });
            }
        }
        Ok(())
    }

    /// Random but well-scaled weights for a topology. Deterministic in `seed`.
    pub fn random(topology: &Topology, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let weights = |n: usize, rng: &mut ChaCha8Rng| -> Vec<i8> {
            (0..n).map(|_| rng.gen_range(-64i8..=64)).collect()
        };
        // keeps the typical accumulator magnitude near the u8 range
        let shift_for = |fan_in: usize| -> u32 {
            let spread = (fan_in as f64).sqrt() * 64.0 * 0.5;
            spread.log2().round().max(0.0) as u32
        };
        let layers = topology
            .layers
            .iter()
            .map(|shape| match *shape {
                LayerShape::Conv2d { in_ch, out_ch, stride } => Layer::Conv2d(Conv2d {
                    in_ch,
                    out_ch,
                    stride,
                    weights: weights(in_ch * out_ch * 9, &mut rng),
                    bias: (0..out_ch).map(|_| rng.gen_range(-256..=512)).collect(),
                    shift: shift_for(in_ch * 9),
                }),
                LayerShape::DepthwiseSeparable { in_ch, out_ch, stride } => {
                    Layer::DepthwiseSeparable(DepthwiseSeparable {
                        in_ch,
                        out_ch,
                        stride,
                        dw_weights: weights(in_ch * 9, &mut rng),
                        dw_bias: (0..in_ch).map(|_| rng.gen_range(-256..=512)).collect(),
                        dw_shift: shift_for(9),
                        pw_weights: weights(in_ch * out_ch, &mut rng),
                        pw_bias: (0..out_ch).map(|_| rng.gen_range(-256..=512)).collect(),
                        pw_shift: shift_for(in_ch),
                    })
                }
                LayerShape::GlobalAvgPool => Layer::GlobalAvgPool,
                LayerShape::Linear {
                    in_features,
                    out_features,
                } => Layer::Linear(Linear {
                    in_features,
                    out_features,
                    weights: weights(in_features * out_features, &mut rng),
                    bias: (0..out_features).map(|_| rng.gen_range(-2000..=2000)).collect(),
                }),
            })
            .collect();
        Self {
            name: topology.name.clone(),
            input_channels: topology.input_channels,
            input_height: topology.input_height,
            input_width: topology.input_width,
            layers,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_chains_of_both_networks() {
        let chain = homi_net16(2).shape_chain().unwrap();
        assert_eq!(chain[0], (16, 64, 64));
        assert_eq!(chain[5], (128, 4, 4));
        assert_eq!(*chain.last().unwrap(), (11, 1, 1));

        let chain = homi_net70(2).shape_chain().unwrap();
        assert_eq!(chain[7], (256, 8, 8));
        assert_eq!(*chain.last().unwrap(), (11, 1, 1));
    }

    #[test]
    fn broken_chain_is_rejected() {
        let mut t = homi_net16(2);
        t.layers[2] = LayerShape::DepthwiseSeparable {
            in_ch: 32,
            out_ch: 64,
            stride: 2,
        };
        assert!(matches!(
            t.shape_chain(),
            Err(ModelError::ShapeMismatch { layer: 2, .. })
        ));
    }

    #[test]
    fn random_models_validate() {
        for t in [homi_net16(2), homi_net70(2), homi_net16(8)] {
            let m = QuantizedModel::random(&t, 1);
            m.validate().unwrap();
            assert_eq!(m.param_count(), t.param_count());
            assert_eq!(m.class_count(), 11);
        }
        assert_eq!(QuantizedModel::random(&homi_net16(2), 9), QuantizedModel::random(&homi_net16(2), 9));
    }

    #[test]
    fn weight_length_mismatch() {
        let mut m = QuantizedModel::random(&homi_net16(2), 1);
        if let Layer::Conv2d(c) = &mut m.layers[0] {
            c.weights.pop();
        }
        assert!(matches!(m.validate(), Err(ModelError::ShapeMismatch { layer: 0, .. })));
    }
}
