//! Reference implementations used by the integration and acceptance tests.
//! They are written from the definitions and share no code with the
//! library paths they check.

#![allow(dead_code)]

use homi::evt::{Event, Polarity};
use homi::inference::{Conv2d, DepthwiseSeparable, Layer, Linear, QuantizedModel, Tensor3};
use homi::surfaces::Representation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

// ---------------------------------------------------------------- events

/// Sorted in-bounds events, half clustered around a moving centre.
pub fn random_stream(rng: &mut ChaCha8Rng, n: usize, max_step: u32) -> Vec<Event> {
    let mut t = rng.gen_range(0..1000u32);
    let (mut cx, mut cy) = (rng.gen_range(100..1180i32), rng.gen_range(100..620i32));
    (0..n)
        .map(|_| {
            t += rng.gen_range(0..=max_step);
            let (x, y) = if rng.gen_bool(0.5) {
                cx = (cx + rng.gen_range(-2..=2)).clamp(60, 1219);
                cy = (cy + rng.gen_range(-2..=2)).clamp(60, 659);
                (cx + rng.gen_range(-60..=60), cy + rng.gen_range(-60..=60))
            } else {
                (rng.gen_range(0..1280), rng.gen_range(0..720))
            };
            let p = if rng.gen_bool(0.5) { Polarity::Positive } else { Polarity::Negative };
            Event::new(x as u16, y as u16, p, t)
        })
        .collect()
}

// --------------------------------------------------------------- surfaces

pub struct SurfaceOracle {
    pub kind: Representation,
    pub tau_shift: u32,
    pub scale: u32,
    pub shift: u32,
    pub in_w: usize,
    pub in_h: usize,
    pub out_w: usize,
    pub out_h: usize,
}

impl SurfaceOracle {
    pub fn sensor_128(kind: Representation, tau_shift: u32, scale: u32, shift: u32) -> Self {
        Self {
            kind,
            tau_shift,
            scale,
            shift,
            in_w: 1280,
            in_h: 720,
            out_w: 128,
            out_h: 128,
        }
    }

    fn cell(&self, e: &Event) -> usize {
        let x = e.x as usize * self.out_w / self.in_w;
        let y = e.y as usize * self.out_h / self.in_h;
        y * self.out_w + x
    }

    /// Two-channel frame (positive plane, then negative) for one window of
    /// events, computed cell by cell.
    pub fn frame(&self, events: &[Event]) -> Vec<u8> {
        let cells = self.out_w * self.out_h;
        let mut per_cell: Vec<Vec<(Polarity, u32)>> = vec![Vec::new(); cells];
        for e in events {
            per_cell[self.cell(e)].push((e.p, e.t));
        }
        let mut out = vec![0u8; 2 * cells];
        for (cell, history) in per_cell.iter().enumerate() {
            let (pos, neg) = self.replay(history);
            out[cell] = self.quantize(pos);
            out[cells + cell] = self.quantize(neg);
        }
        out
    }

    fn replay(&self, history: &[(Polarity, u32)]) -> (u64, u64) {
        let mut values = [0u64; 2];
        let mut previous: Option<u32> = None;
        for &(p, t) in history {
            let slot = &mut values[(p == Polarity::Positive) as usize];
            *slot = match self.kind {
                Representation::Binary => 255,
                Representation::Histogram => (*slot + 1).min(u16::MAX as u64),
                Representation::Sets | Representation::Slts => {
                    let elapsed = match previous {
                        Some(tp) => ((t >> self.tau_shift) - (tp >> self.tau_shift)) as u64,
                        None => u64::MAX,
                    };
                    if self.kind == Representation::Sets {
                        if elapsed < 16 {
                            (*slot / 2u64.pow(elapsed as u32)) + 1
                        } else {
                            1
                        }
                    } else if elapsed < *slot {
                        *slot - elapsed + 1
                    } else {
                        1
                    }
                }
            };
            previous = Some(t);
        }
        (values[1], values[0])
    }

    fn quantize(&self, v: u64) -> u8 {
        ((v * self.scale as u64) / 2u64.pow(self.shift)).min(255) as u8
    }
}

/// Splits in-bounds events into constant-count windows, keeping a trailing
/// partial window.
pub fn constant_event_windows(events: &[Event], n: usize) -> Vec<&[Event]> {
    events.chunks(n).collect()
}

// ---------------------------------------------------------------- executor

fn requant(acc: i64, shift: u32) -> u8 {
    let scaled = if shift == 0 {
        acc
    } else {
        let d = 1i64 << shift;
        (acc + d / 2).div_euclid(d)
    };
    scaled.clamp(0, 255) as u8
}

fn pixel(t: &Tensor3, c: usize, y: i64, x: i64) -> i64 {
    if y < 0 || x < 0 || y >= t.height as i64 || x >= t.width as i64 {
        0
    } else {
        t.data[(c * t.height + y as usize) * t.width + x as usize] as i64
    }
}

fn out_dim(d: usize, stride: usize) -> usize {
    (d - 1) / stride + 1
}

pub fn naive_conv(input: &Tensor3, layer: &Conv2d) -> Tensor3 {
    let (oh, ow) = (out_dim(input.height, layer.stride), out_dim(input.width, layer.stride));
    let mut out = Tensor3::zeros(layer.out_ch, oh, ow);
    for o in 0..layer.out_ch {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.bias[o] as i64;
                for i in 0..layer.in_ch {
                    for ky in 0..3 {
                        for kx in 0..3 {
                            let w = layer.weights[((o * layer.in_ch + i) * 3 + ky) * 3 + kx] as i64;
                            let iy = (y * layer.stride + ky) as i64 - 1;
                            let ix = (x * layer.stride + kx) as i64 - 1;
                            acc += w * pixel(input, i, iy, ix);
                        }
                    }
                }
                out.data[(o * oh + y) * ow + x] = requant(acc, layer.shift);
            }
        }
    }
    out
}

pub fn naive_dwsep(input: &Tensor3, layer: &DepthwiseSeparable) -> Tensor3 {
    let (oh, ow) = (out_dim(input.height, layer.stride), out_dim(input.width, layer.stride));
    let mut mid = Tensor3::zeros(layer.in_ch, oh, ow);
    for c in 0..layer.in_ch {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.dw_bias[c] as i64;
                for ky in 0..3 {
                    for kx in 0..3 {
                        let w = layer.dw_weights[(c * 3 + ky) * 3 + kx] as i64;
                        let iy = (y * layer.stride + ky) as i64 - 1;
                        let ix = (x * layer.stride + kx) as i64 - 1;
                        acc += w * pixel(input, c, iy, ix);
                    }
                }
                mid.data[(c * oh + y) * ow + x] = requant(acc, layer.dw_shift);
            }
        }
    }
    let mut out = Tensor3::zeros(layer.out_ch, oh, ow);
    for o in 0..layer.out_ch {
        for y in 0..oh {
            for x in 0..ow {
                let mut acc = layer.pw_bias[o] as i64;
                for c in 0..layer.in_ch {
                    acc += layer.pw_weights[o * layer.in_ch + c] as i64 * pixel(&mid, c, y as i64, x as i64);
                }
                out.data[(o * oh + y) * ow + x] = requant(acc, layer.pw_shift);
            }
        }
    }
    out
}

pub fn naive_pool(input: &Tensor3) -> Tensor3 {
    let n = (input.height * input.width) as u64;
    let data = (0..input.channels)
        .map(|c| {
            let sum: u64 = input.plane(c).iter().map(|&v| v as u64).sum();
            ((sum + n / 2) / n) as u8
        })
        .collect();
    Tensor3::from_vec(input.channels, 1, 1, data)
}

pub fn naive_linear(input: &[u8], layer: &Linear) -> Vec<i32> {
    (0..layer.out_features)
        .map(|o| {
            let mut acc = layer.bias[o] as i64;
            for i in 0..layer.in_features {
                acc += layer.weights[o * layer.in_features + i] as i64 * input[i] as i64;
            }
            acc.clamp(i32::MIN as i64, i32::MAX as i64) as i32
        })
        .collect()
}

/// Returns the logits and the lowest index holding the maximum.
pub fn naive_forward(model: &QuantizedModel, input: &Tensor3) -> (Vec<i32>, usize) {
    let mut act = input.clone();
    let mut logits = Vec::new();
    for layer in &model.layers {
        match layer {
            Layer::Conv2d(c) => act = naive_conv(&act, c),
            Layer::DepthwiseSeparable(d) => act = naive_dwsep(&act, d),
            Layer::GlobalAvgPool => act = naive_pool(&act),
            Layer::Linear(l) => logits = naive_linear(&act.data, l),
        }
    }
    let max = *logits.iter().max().unwrap();
    let class = logits.iter().position(|&v| v == max).unwrap();
    (logits, class)
}

/// Tensor with roughly `density` of its entries non-zero.
pub fn random_tensor(rng: &mut ChaCha8Rng, c: usize, h: usize, w: usize, density: f64) -> Tensor3 {
    let data = (0..c * h * w)
        .map(|_| if rng.gen_bool(density) { rng.gen_range(1..=255) } else { 0 })
        .collect();
    Tensor3::from_vec(c, h, w, data)
}

pub fn random_weights(rng: &mut ChaCha8Rng, n: usize) -> Vec<i8> {
    (0..n)
        .map(|_| if rng.gen_bool(0.2) { 0 } else { rng.gen_range(i8::MIN..=i8::MAX) })
        .collect()
}

pub fn random_bias(rng: &mut ChaCha8Rng, n: usize, spread: i32) -> Vec<i32> {
    (0..n).map(|_| rng.gen_range(-spread..=spread)).collect()
}
