//! Constant-event and constant-time accumulation with ping-pong buffers.
//!
//! Events are integrated into the active buffer. When the accumulation
//! boundary fires, the active buffer is quantized into an owned [`Frame`],
//! the buffers swap, and the retired buffer is zeroed before it is used
//! again.

mod pipeline;

pub use pipeline::{
    run_pipeline, ChannelSource, EventSource, FrameSink, IterSource, PipelineError, SinkClosed,
    SourcePoll, VecSink,
};

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use crate::evt::{Event, Polarity, TIMESTAMP_BITS, TIMESTAMP_MASK};
use crate::geometry::GridGeometry;
use crate::surfaces::{default_histogram_shift, Representation, SurfaceConfig, SurfaceState};

/// Default events per frame in constant-event mode.
pub const DEFAULT_EVENTS_PER_FRAME: usize = 20_000;
/// Highest constant-time frame rate the hardware transfer path supports.
pub const MAX_TIME_MODE_FPS: u32 = 12_200;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccumulationMode {
    /// Seal after this many integrated events.
    ConstantEvent(usize),
    /// Seal on fixed half-open windows of this many timestamp ticks (µs).
    ConstantTime(u32),
}

impl AccumulationMode {
    /// Byte code used in frame file headers.
    pub fn code(self) -> u8 {
        match self {
            AccumulationMode::ConstantEvent(_) => 0,
            AccumulationMode::ConstantTime(_) => 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DropPolicy {
    /// Wait for space in the output queue.
    #[default]
    Block,
    /// Discard the newly sealed frame when the queue is still full.
    DropFrame,
}

impl FromStr for DropPolicy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "block" => Ok(DropPolicy::Block),
            "drop" | "drop-frame" => Ok(DropPolicy::DropFrame),
            other => Err(format!("unknown drop policy '{other}'")),
        }
    }
}

impl fmt::Display for DropPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            DropPolicy::Block => "block",
            DropPolicy::DropFrame => "drop-frame",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FramerConfig {
    pub mode: AccumulationMode,
    pub surface: SurfaceConfig,
    /// 1 (positive polarity only) or an even count `2k`: both polarities for
    /// each of `k` consecutive sub-windows of the frame.
    pub channels: usize,
    pub queue_capacity: usize,
    pub drop_policy: DropPolicy,
    /// Zero the last-timestamp grid along with the memories at every swap.
    pub reset_timestamps: bool,
    /// Empty constant-time windows emitted per gap before the rest are skipped.
    pub max_empty_windows: usize,
}

impl Default for FramerConfig {
    fn default() -> Self {
        Self {
            mode: AccumulationMode::ConstantEvent(DEFAULT_EVENTS_PER_FRAME),
            surface: SurfaceConfig::new(Representation::Sets),
            channels: 2,
            queue_capacity: 4,
            drop_policy: DropPolicy::Block,
            reset_timestamps: false,
            max_empty_windows: 1024,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum ConfigError {
    #[error("channel count must be 1 or even, got {0}")]
    Channels(usize),
    #[error("events per frame must be positive")]
    ZeroEvents,
    #[error("time window must be positive")]
    ZeroWindow,
    #[error("tau shift must be at least 1")]
    ZeroTau,
    #[error("queue capacity must be at least 1")]
    ZeroQueue,
}

impl FramerConfig {
    /// Config with the quantizer shift defaulted for histograms.
    pub fn with_default_quantizer(mut self, geometry: &GridGeometry) -> Self {
        self.surface.scale = 1;
        self.surface.shift = match (self.surface.kind, self.mode) {
            (Representation::Histogram, AccumulationMode::ConstantEvent(n)) => {
                default_histogram_shift(n, geometry.depth())
            }
            _ => 0,
        };
        self
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        if self.channels == 0 || (self.channels != 1 && self.channels % 2 != 0) {
            return Err(ConfigError::Channels(self.channels));
        }
        match self.mode {
            AccumulationMode::ConstantEvent(0) => return Err(ConfigError::ZeroEvents),
            AccumulationMode::ConstantTime(0) => return Err(ConfigError::ZeroWindow),
            _ => {}
        }
        if self.surface.tau_shift == 0 {
            return Err(ConfigError::ZeroTau);
        }
        if self.queue_capacity == 0 {
            return Err(ConfigError::ZeroQueue);
        }
        Ok(())
    }

    /// Non-fatal configuration warnings.
    pub fn warnings(&self, geometry: &GridGeometry) -> Vec<String> {
        let mut out = Vec::new();
        match self.mode {
            AccumulationMode::ConstantEvent(n) if n < geometry.depth() => out.push(format!(
                "{n} events per frame is below the {} cells of one plane",
                geometry.depth()
            )),
            AccumulationMode::ConstantTime(w) if (w as u64) * (MAX_TIME_MODE_FPS as u64) < 1_000_000 => {
                out.push(format!(
                    "{w} us windows exceed {MAX_TIME_MODE_FPS} frames per second"
                ))
            }
            _ => {}
        }
        out
    }

    fn slices(&self) -> usize {
        (self.channels / 2).max(1)
    }
}

/// A sealed, quantized frame. Planes are channel-major, each row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub index: u32,
    pub width: u16,
    pub height: u16,
    pub channels: u8,
    pub kind: Representation,
    pub mode: u8,
    pub t_start: u32,
    pub t_end: u32,
    pub event_count: u32,
    /// Set when frames immediately preceding this one were dropped.
    pub dropped: bool,
    pub data: Vec<u8>,
}

impl Frame {
    pub fn plane_len(&self) -> usize {
        self.width as usize * self.height as usize
    }

    pub fn plane(&self, channel: usize) -> &[u8] {
        let n = self.plane_len();
        &self.data[channel * n..(channel + 1) * n]
    }

    /// FNV-1a over the payload; used to check frames stay untouched.
    pub fn checksum(&self) -> u64 {
        self.data.iter().fold(0xcbf29ce484222325u64, |h, &b| {
            (h ^ b as u64).wrapping_mul(0x100000001b3)
        })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct FramerStats {
    /// Frames handed to the output queue.
    pub frames_emitted: u64,
    pub frames_dropped: u64,
    pub events_in_dropped_frames: u64,
    pub frames_sealed: u64,
    pub partial_frames: u64,
    pub events_integrated: u64,
    pub events_out_of_bounds: u64,
    /// Events integrated while a sealed frame waited for queue space.
    pub events_while_blocked: u64,
    pub holds_input_empty: u64,
    pub holds_output_full: u64,
    pub empty_windows_skipped: u64,
}

/// Widens 24-bit timestamps to 64 bits by counting counter wraps.
#[derive(Debug, Clone, Copy, Default)]
struct Unwrapper {
    last: Option<u32>,
    epoch: u64,
}

impl Unwrapper {
    fn widen(&mut self, t: u32) -> u64 {
        let t = t & TIMESTAMP_MASK;
        if let Some(last) = self.last {
            if t < last {
                self.epoch += 1;
            }
        }
        self.last = Some(t);
        (self.epoch << TIMESTAMP_BITS) | t as u64
    }
}

/// Streaming accumulation controller.
#[derive(Debug, Clone)]
pub struct Framer {
    config: FramerConfig,
    geometry: GridGeometry,
    buffers: [Vec<SurfaceState>; 2],
    active: usize,
    next_index: u32,
    /// Integrated events in the active buffer.
    count: usize,
    first_t: Option<u64>,
    last_t: u64,
    window_start: Option<u64>,
    clock: Unwrapper,
    stats: FramerStats,
    seal_time: Duration,
}

impl Framer {
    pub fn new(config: FramerConfig, geometry: GridGeometry) -> Result<Self, ConfigError> {
        config.validate()?;
        let make = || {
            (0..config.slices())
                .map(|_| SurfaceState::new(geometry.depth(), &config.surface))
                .collect::<Vec<_>>()
        };
        Ok(Self {
            buffers: [make(), make()],
            config,
            geometry,
            active: 0,
            next_index: 0,
            count: 0,
            first_t: None,
            last_t: 0,
            window_start: None,
            clock: Unwrapper::default(),
            stats: FramerStats::default(),
            seal_time: Duration::ZERO,
        })
    }

    pub fn config(&self) -> &FramerConfig {
        &self.config
    }

    pub fn geometry(&self) -> &GridGeometry {
        &self.geometry
    }

    pub fn stats(&self) -> &FramerStats {
        &self.stats
    }

    pub(crate) fn stats_mut(&mut self) -> &mut FramerStats {
        &mut self.stats
    }

    /// Time spent quantizing and swapping buffers at frame boundaries.
    pub fn seal_time(&self) -> Duration {
        self.seal_time
    }

    /// Events integrated into the frame currently accumulating.
    pub fn pending_events(&self) -> usize {
        self.count
    }

    /// Integrates one event. Returns the frames sealed by it: usually none,
    /// one at a boundary, and more when a constant-time gap spans empty
    /// windows.
    pub fn push_event(&mut self, event: Event) -> Vec<Frame> {
        let t = self.clock.widen(event.t);
        let Some(addr) = self.geometry.address_of(event.x, event.y) else {
            self.stats.events_out_of_bounds += 1;
            return Vec::new();
        };
        let mut sealed = Vec::new();
        let slice = match self.config.mode {
            AccumulationMode::ConstantEvent(n) => self.count * self.buffers[0].len() / n,
            AccumulationMode::ConstantTime(window) => {
                let window = window as u64;
                let start = *self
                    .window_start
                    .get_or_insert(t - t % window);
                if t >= start + window {
                    let crossed = (t - start) / window;
                    sealed.push(self.seal(start, start + window, false));
                    let empties = (crossed - 1).min(self.config.max_empty_windows as u64);
                    for k in 1..=empties {
                        let s = start + k * window;
                        sealed.push(self.seal(s, s + window, false));
                    }
                    self.stats.empty_windows_skipped += crossed - 1 - empties;
                    self.window_start = Some(start + crossed * window);
                }
                let start = self.window_start.unwrap_or(t);
                ((t - start) * self.buffers[0].len() as u64 / window) as usize
            }
        };
        let buffer = &mut self.buffers[self.active];
        buffer[slice].apply_at(addr, event.p, event.t, self.config.surface.tau_shift);
        self.count += 1;
        self.stats.events_integrated += 1;
        self.first_t.get_or_insert(t);
        self.last_t = t;

        if let AccumulationMode::ConstantEvent(n) = self.config.mode {
            if self.count == n {
                let (s, e) = (self.first_t.unwrap_or(t), t);
                sealed.push(self.seal(s, e, false));
            }
        }
        sealed
    }

    /// Seals the partially filled frame, if any events are pending.
    pub fn flush(&mut self) -> Option<Frame> {
        if self.count == 0 {
            return None;
        }
        let (start, end) = match (self.config.mode, self.window_start) {
            (AccumulationMode::ConstantTime(w), Some(s)) => (s, s + w as u64),
            _ => (self.first_t.unwrap_or(0), self.last_t),
        };
        let frame = self.seal(start, end, true);
        if let Some(s) = self.window_start.as_mut() {
            *s = end;
        }
        Some(frame)
    }

    /// Zeroes both buffers and forgets the accumulation state.
    pub fn reset(&mut self) {
        for state in self.buffers.iter_mut().flatten() {
            state.reset();
        }
        self.count = 0;
        self.first_t = None;
        self.window_start = None;
        self.clock = Unwrapper::default();
    }

    fn seal(&mut self, t_start: u64, t_end: u64, partial: bool) -> Frame {
        let started = Instant::now();
        let plane = self.geometry.depth();
        let channels = self.config.channels;
        let mut data = vec![0u8; plane * channels];
        let SurfaceConfig { scale, shift, .. } = self.config.surface;
        let buffer = &self.buffers[self.active];
        let polarities: &[Polarity] = if channels == 1 {
            &[Polarity::Positive]
        } else {
            &[Polarity::Positive, Polarity::Negative]
        };
        let planes = buffer
            .iter()
            .flat_map(|state| polarities.iter().map(move |&p| (state, p)));
        for ((state, p), out) in planes.zip(data.chunks_exact_mut(plane)) {
            state.quantize_into(p, scale, shift, out);
        }

        let frame = Frame {
            index: self.next_index,
            width: self.geometry.out_width as u16,
            height: self.geometry.out_height as u16,
            channels: channels as u8,
            kind: self.config.surface.kind,
            mode: self.config.mode.code(),
            t_start: t_start as u32 & TIMESTAMP_MASK,
            t_end: t_end as u32 & TIMESTAMP_MASK,
            event_count: self.count as u32,
            dropped: false,
            data,
        };
        self.next_index = self.next_index.wrapping_add(1);
        self.stats.frames_sealed += 1;
        if partial {
            self.stats.partial_frames += 1;
        }

        // swap, then clear the retired buffer before it comes back around
        let retired = self.active;
        self.active ^= 1;
        for state in &mut self.buffers[retired] {
            state.clear_mem();
            if self.config.reset_timestamps {
                state.clear_timestamps();
            }
        }
        self.count = 0;
        self.first_t = None;
        self.seal_time += started.elapsed();
        frame
    }
}
