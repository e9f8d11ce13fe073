//! Coordinate downsampling and representation-memory addressing.
//!
//! Each axis owns a lookup table of `(slope, bias)` pairs with the slope
//! restricted to `{0, 1}`, so mapping a coordinate is a two-way select plus an
//! add: `out = if m[i] == 1 { i + b[i] } else { b[i] }`. Downsampling tables use
//! the `m = 0` branch with `b[i] = floor(i * out / in)`; identity tables use the
//! `m = 1` branch with zero bias.

use thiserror::Error;

use crate::evt::{SENSOR_HEIGHT, SENSOR_WIDTH};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GeometryError {
    #[error("axis dimension must be positive")]
    ZeroDimension,
    #[error("output dimension {out_dim} exceeds input dimension {in_dim}")]
    Upsampling { in_dim: usize, out_dim: usize },
    #[error("coordinate {0} out of range")]
    OutOfRange(usize),
    #[error("invalid resolution '{0}', expected WxH")]
    BadResolution(String),
}

/// Per-axis slope/bias lookup table.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MapLut {
    in_dim: usize,
    out_dim: usize,
    slope: Vec<u8>,
    bias: Vec<u16>,
}

impl MapLut {
    /// Builds the table realizing `i -> floor(i * out_dim / in_dim)`.
    pub fn build(in_dim: usize, out_dim: usize) -> Result<Self, GeometryError> {
        if in_dim == 0 || out_dim == 0 {
            return Err(GeometryError::ZeroDimension);
        }
        if out_dim > in_dim {
            return Err(GeometryError::Upsampling { in_dim, out_dim });
        }
        let (slope, bias) = if in_dim == out_dim {
            (vec![1; in_dim], vec![0; in_dim])
        } else {
            (
                vec![0; in_dim],
                (0..in_dim).map(|i| (i * out_dim / in_dim) as u16).collect(),
            )
        };
        Ok(Self {
            in_dim,
            out_dim,
            slope,
            bias,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.in_dim
    }

    pub fn out_dim(&self) -> usize {
        self.out_dim
    }

    pub fn slope(&self) -> &[u8] {
        &self.slope
    }

    pub fn bias(&self) -> &[u16] {
        &self.bias
    }

    /// Maps an input coordinate, failing on out-of-range input.
    pub fn map_coord(&self, i: usize) -> Result<usize, GeometryError> {
        if i >= self.in_dim {
            return Err(GeometryError::OutOfRange(i));
        }
        Ok(self.map_unchecked(i))
    }

    /// Maps an input coordinate already known to be below `in_dim`.
    #[inline]
    pub fn map_unchecked(&self, i: usize) -> usize {
        let b = self.bias[i] as usize;
        if self.slope[i] == 1 {
            i + b
        } else {
            b
        }
    }
}

/// Row-major address of an output cell.
///
/// Uses a shift when the width is a power of two.
#[inline]
pub fn address(x_out: usize, y_out: usize, out_width: usize) -> usize {
    if out_width.is_power_of_two() {
        (y_out << out_width.trailing_zeros()) + x_out
    } else {
        y_out * out_width + x_out
    }
}

/// Input and output grids together with both axis tables.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridGeometry {
    pub in_width: usize,
    pub in_height: usize,
    pub out_width: usize,
    pub out_height: usize,
    x_lut: MapLut,
    y_lut: MapLut,
}

impl Default for GridGeometry {
    fn default() -> Self {
        Self::new((SENSOR_WIDTH as usize, SENSOR_HEIGHT as usize), (128, 128))
            .expect("default geometry is valid")
    }
}

impl GridGeometry {
    pub fn new(input: (usize, usize), output: (usize, usize)) -> Result<Self, GeometryError> {
        let x_lut = MapLut::build(input.0, output.0)?;
        let y_lut = MapLut::build(input.1, output.1)?;
        Ok(Self {
            in_width: input.0,
            in_height: input.1,
            out_width: output.0,
            out_height: output.1,
            x_lut,
            y_lut,
        })
    }

    /// Number of cells in one representation plane.
    pub fn depth(&self) -> usize {
        self.out_width * self.out_height
    }

    pub fn x_lut(&self) -> &MapLut {
        &self.x_lut
    }

    pub fn y_lut(&self) -> &MapLut {
        &self.y_lut
    }

    pub fn contains(&self, x: u16, y: u16) -> bool {
        (x as usize) < self.in_width && (y as usize) < self.in_height
    }

    /// Memory address of a sensor pixel, or `None` outside the input grid.
    #[inline]
    pub fn address_of(&self, x: u16, y: u16) -> Option<usize> {
        if !self.contains(x, y) {
            return None;
        }
        let xo = self.x_lut.map_unchecked(x as usize);
        let yo = self.y_lut.map_unchecked(y as usize);
        Some(address(xo, yo, self.out_width))
    }
}

/// Parses a `WxH` resolution string.
pub fn parse_resolution(s: &str) -> Result<(usize, usize), GeometryError> {
    let bad = || GeometryError::BadResolution(s.to_string());
    let (w, h) = s.split_once(['x', 'X']).ok_or_else(bad)?;
    let w = w.trim().parse().map_err(|_| bad())?;
    let h = h.trim().parse().map_err(|_| bad())?;
    Ok((w, h))
}
