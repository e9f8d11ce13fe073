//! Model bundles: a TOML manifest plus one little-endian blob per layer.
//!
//! Blob layouts (`i8` weights first, then `i32` LE biases):
//! - `conv2d`: weights `[out][in][3][3]`, bias `[out]`
//! - `dwsep`: depthwise weights `[in][3][3]`, depthwise bias `[in]`,
//!   pointwise weights `[out][in]`, pointwise bias `[out]`
//! - `linear`: weights `[out][in]`, bias `[out]`
//!
//! `avgpool` layers have no blob.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::model::{ModelError, QuantizedModel};
use super::{Conv2d, DepthwiseSeparable, Layer, Linear, KERNEL, PADDING};

pub const MANIFEST_FILE: &str = "manifest.toml";
const FORMAT_NAME: &str = "homi-model";
const FORMAT_VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub name: String,
    pub input_channels: usize,
    pub input_height: usize,
    pub input_width: usize,
    pub classes: usize,
    /// Informational; recomputed and checked on load.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_count: Option<usize>,
    #[serde(rename = "layer")]
    pub layers: Vec<LayerEntry>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerEntry {
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub in_ch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub out_ch: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kernel: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub stride: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub padding: Option<usize>,
    #[serde(default)]
    pub relu: bool,
    /// Requantization shift; for `dwsep` this is the pointwise stage.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub shift: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub dw_shift: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub blob: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sha256: Option<String>,
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn push_i32s(out: &mut Vec<u8>, values: &[i32]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

fn push_i8s(out: &mut Vec<u8>, values: &[i8]) {
    out.extend(values.iter().map(|&v| v as u8));
}

struct BlobReader<'a> {
    bytes: &'a [u8],
    layer: usize,
}

impl BlobReader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8], ModelError> {
        if self.bytes.len() < n {
            return Err(ModelError::ShapeMismatch {
                layer: self.layer,
                detail: "blob shorter than the declared shape".into(),
            });
        }
        let (head, tail) = self.bytes.split_at(n);
        self.bytes = tail;
        Ok(head)
    }

    fn i8s(&mut self, n: usize) -> Result<Vec<i8>, ModelError> {
        Ok(self.take(n)?.iter().map(|&b| b as i8).collect())
    }

    fn i32s(&mut self, n: usize) -> Result<Vec<i32>, ModelError> {
        Ok(self
            .take(n * 4)?
            .chunks_exact(4)
            .map(|c| i32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    fn finish(self) -> Result<(), ModelError> {
        if self.bytes.is_empty() {
            Ok(())
        } else {
            Err(ModelError::ShapeMismatch {
                layer: self.layer,
                detail: format!("{} trailing blob bytes", self.bytes.len()),
            })
        }
    }
}

fn layer_blob(layer: &Layer) -> Option<Vec<u8>> {
    let mut out = Vec::new();
    match layer {
        Layer::Conv2d(c) => {
            push_i8s(&mut out, &c.weights);
            push_i32s(&mut out, &c.bias);
        }
        Layer::DepthwiseSeparable(d) => {
            push_i8s(&mut out, &d.dw_weights);
            push_i32s(&mut out, &d.dw_bias);
            push_i8s(&mut out, &d.pw_weights);
            push_i32s(&mut out, &d.pw_bias);
        }
        Layer::GlobalAvgPool => return None,
        Layer::Linear(l) => {
            push_i8s(&mut out, &l.weights);
            push_i32s(&mut out, &l.bias);
        }
    }
    Some(out)
}

/// Writes `manifest.toml` and the layer blobs into `dir`.
pub fn save_model(model: &QuantizedModel, dir: impl AsRef<Path>) -> Result<Manifest, ModelError> {
    let dir = dir.as_ref();
    model.validate()?;
    fs::create_dir_all(dir)?;
    let mut layers = Vec::with_capacity(model.layers.len());
    for (i, layer) in model.layers.iter().enumerate() {
        let blob = layer_blob(layer);
        let blob_name = blob.as_ref().map(|_| format!("{i:02}_{}.bin", layer.kind_name()));
        if let (Some(bytes), Some(name)) = (&blob, &blob_name) {
            fs::write(dir.join(name), bytes)?;
        }
        let mut entry = LayerEntry {
            kind: layer.kind_name().to_string(),
            in_ch: None,
            out_ch: None,
            kernel: None,
            stride: None,
            padding: None,
            relu: false,
            shift: None,
            dw_shift: None,
            sha256: blob.as_deref().map(sha256_hex),
            blob: blob_name,
        };
        match layer {
            Layer::Conv2d(c) => {
                entry.in_ch = Some(c.in_ch);
                entry.out_ch = Some(c.out_ch);
                entry.kernel = Some(KERNEL);
                entry.stride = Some(c.stride);
                entry.padding = Some(PADDING);
                entry.relu = true;
                entry.shift = Some(c.shift);
            }
            Layer::DepthwiseSeparable(d) => {
                entry.in_ch = Some(d.in_ch);
                entry.out_ch = Some(d.out_ch);
                entry.kernel = Some(KERNEL);
                entry.stride = Some(d.stride);
                entry.padding = Some(PADDING);
                entry.relu = true;
                entry.shift = Some(d.pw_shift);
                entry.dw_shift = Some(d.dw_shift);
            }
            Layer::GlobalAvgPool => {}
            Layer::Linear(l) => {
                entry.in_ch = Some(l.in_features);
                entry.out_ch = Some(l.out_features);
            }
        }
        layers.push(entry);
    }
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        name: model.name.clone(),
        input_channels: model.input_channels,
        input_height: model.input_height,
        input_width: model.input_width,
        classes: model.class_count(),
        param_count: Some(model.param_count()),
        layers,
    };
    let text = toml::to_string(&manifest).map_err(|e| ModelError::Parse(e.to_string()))?;
    fs::write(dir.join(MANIFEST_FILE), text)?;
    Ok(manifest)
}

fn required<T: Copy>(value: Option<T>, layer: usize, field: &str) -> Result<T, ModelError> {
    value.ok_or_else(|| ModelError::Parse(format!("layer {layer}: missing '{field}'")))
}

fn conv_fields(entry: &LayerEntry, i: usize) -> Result<(usize, usize, usize), ModelError> {
    let kernel = entry.kernel.unwrap_or(KERNEL);
    let padding = entry.padding.unwrap_or(PADDING);
    if kernel != KERNEL || padding != PADDING {
        return Err(ModelError::UnsupportedKind {
            layer: i,
            what: format!("kernel {kernel} / padding {padding}"),
        });
    }
    if !entry.relu {
        return Err(ModelError::UnsupportedKind {
            layer: i,
            what: "convolution without ReLU (activations are unsigned)".into(),
        });
    }
    Ok((
        required(entry.in_ch, i, "in_ch")?,
        required(entry.out_ch, i, "out_ch")?,
        required(entry.stride, i, "stride")?,
    ))
}

/// Loads and validates a bundle from the directory holding `manifest.toml`
/// (or from the manifest path itself).
pub fn load_model(path: impl AsRef<Path>) -> Result<QuantizedModel, ModelError> {
    let path = path.as_ref();
    let (dir, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join(MANIFEST_FILE))
    } else {
        (
            path.parent().map(Path::to_path_buf).unwrap_or_default(),
            path.to_path_buf(),
        )
    };
    let text = fs::read_to_string(&manifest_path)?;
    let manifest: Manifest = toml::from_str(&text).map_err(|e| ModelError::Parse(e.to_string()))?;
    if manifest.format != FORMAT_NAME || manifest.version != FORMAT_VERSION {
        return Err(ModelError::Parse(format!(
            "unsupported format {} v{}",
            manifest.format, manifest.version
        )));
    }

    let mut layers = Vec::with_capacity(manifest.layers.len());
    for (i, entry) in manifest.layers.iter().enumerate() {
        let blob = match (&entry.blob, &entry.sha256) {
            (Some(name), Some(sum)) => {
                let bytes = fs::read(dir.join(name))?;
                if !sha256_hex(&bytes).eq_ignore_ascii_case(sum) {
                    return Err(ModelError::ChecksumMismatch {
                        layer: i,
                        blob: name.clone(),
                    });
                }
                Some(bytes)
            }
            (Some(_), None) => {
                return Err(ModelError::Parse(format!("layer {i}: blob without sha256")))
            }
            _ => None,
        };
        let reader = |bytes: &Option<Vec<u8>>| -> Result<Vec<u8>, ModelError> {
            bytes
                .clone()
                .ok_or_else(|| ModelError::Parse(format!("layer {i}: missing blob")))
        };
        let layer = match entry.kind.as_str() {
            "conv2d" => {
                let (in_ch, out_ch, stride) = conv_fields(entry, i)?;
                let bytes = reader(&blob)?;
                let mut r = BlobReader { bytes: &bytes, layer: i };
                let layer = Conv2d {
                    in_ch,
                    out_ch,
                    stride,
                    weights: r.i8s(in_ch * out_ch * 9)?,
                    bias: r.i32s(out_ch)?,
                    shift: required(entry.shift, i, "shift")?,
                };
                r.finish()?;
                Layer::Conv2d(layer)
            }
            "dwsep" => {
                let (in_ch, out_ch, stride) = conv_fields(entry, i)?;
                let bytes = reader(&blob)?;
                let mut r = BlobReader { bytes: &bytes, layer: i };
                let layer = DepthwiseSeparable {
                    in_ch,
                    out_ch,
                    stride,
                    dw_weights: r.i8s(in_ch * 9)?,
                    dw_bias: r.i32s(in_ch)?,
                    dw_shift: required(entry.dw_shift, i, "dw_shift")?,
                    pw_weights: r.i8s(in_ch * out_ch)?,
                    pw_bias: r.i32s(out_ch)?,
                    pw_shift: required(entry.shift, i, "shift")?,
                };
                r.finish()?;
                Layer::DepthwiseSeparable(layer)
            }
            "avgpool" => Layer::GlobalAvgPool,
            "linear" => {
                let in_features = required(entry.in_ch, i, "in_ch")?;
                let out_features = required(entry.out_ch, i, "out_ch")?;
                let bytes = reader(&blob)?;
                let mut r = BlobReader { bytes: &bytes, layer: i };
                let layer = Linear {
                    in_features,
                    out_features,
                    weights: r.i8s(in_features * out_features)?,
                    bias: r.i32s(out_features)?,
                };
                r.finish()?;
                Layer::Linear(layer)
            }
            other => {
                return Err(ModelError::UnsupportedKind {
                    layer: i,
                    what: format!("layer kind '{other}'"),
                })
            }
        };
        layers.push(layer);
    }

    let model = QuantizedModel {
        name: manifest.name,
        input_channels: manifest.input_channels,
        input_height: manifest.input_height,
        input_width: manifest.input_width,
        layers,
    };
    model.validate()?;
    if model.class_count() == 0 || model.class_count() != manifest.classes {
        return Err(ModelError::ShapeMismatch {
            layer: model.layers.len() - 1,
            detail: format!(
                "classifier has {} outputs, manifest declares {}",
                model.class_count(),
                manifest.classes
            ),
        });
    }
    if let Some(declared) = manifest.param_count {
        if declared != model.param_count() {
            return Err(ModelError::Parse(format!(
                "declared param_count {declared} but layers give {}",
                model.param_count()
            )));
        }
    }
    Ok(model)
}
