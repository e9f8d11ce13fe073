//! Per-event representation updates on 16-bit grids.
//!
//! Four representations are supported: binary frames, histograms, and the
//! shift-based exponential (SETS) and linear (SLTS) time surfaces. The time
//! surfaces replace the decay function with an integer right shift of the
//! elapsed time: `shift = dt >> tau`. SETS then computes
//! `1 + (S >> shift)` (or `1` once `shift >= 16`), SLTS computes
//! `1 + max(0, S - shift)`.
//!
//! The floating-point [`reference`] surfaces are comparison oracles only.

use std::fmt;
use std::str::FromStr;

use crate::evt::{Event, Polarity, TIMESTAMP_MASK};
use crate::geometry::GridGeometry;

/// SETS overwrites the cell with 1 once the shift reaches this value.
pub const SETS_SHIFT_LIMIT: u32 = 16;
/// Default decay shift; with 24-bit timestamps it compares the upper bytes.
pub const DEFAULT_TAU_SHIFT: u32 = 16;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Representation {
    Binary,
    Histogram,
    Sets,
    Slts,
}

impl Representation {
    pub const ALL: [Representation; 4] = [
        Representation::Binary,
        Representation::Histogram,
        Representation::Sets,
        Representation::Slts,
    ];

    /// Byte code used in frame file headers.
    pub fn code(self) -> u8 {
        match self {
            Representation::Binary => 0,
            Representation::Histogram => 1,
            Representation::Sets => 2,
            Representation::Slts => 3,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Self::ALL.into_iter().find(|r| r.code() == code)
    }

    pub fn uses_timestamps(self) -> bool {
        matches!(self, Representation::Sets | Representation::Slts)
    }
}

impl fmt::Display for Representation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Representation::Binary => "binary",
            Representation::Histogram => "hist",
            Representation::Sets => "sets",
            Representation::Slts => "slts",
        })
    }
}

impl FromStr for Representation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "binary" => Ok(Representation::Binary),
            "hist" | "histogram" => Ok(Representation::Histogram),
            "sets" => Ok(Representation::Sets),
            "slts" => Ok(Representation::Slts),
            other => Err(format!("unknown representation '{other}'")),
        }
    }
}

/// Representation parameters plus the 16-to-8-bit quantizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SurfaceConfig {
    pub kind: Representation,
    pub tau_shift: u32,
    pub scale: u32,
    pub shift: u32,
    /// Keep one last-timestamp grid per polarity instead of a shared one.
    pub per_polarity_timestamps: bool,
}

impl Default for SurfaceConfig {
    fn default() -> Self {
        Self::new(Representation::Sets)
    }
}

impl SurfaceConfig {
    pub fn new(kind: Representation) -> Self {
        Self {
            kind,
            tau_shift: DEFAULT_TAU_SHIFT,
            scale: 1,
            shift: 0,
            per_polarity_timestamps: false,
        }
    }
}

/// Smallest right shift that keeps an average histogram cell of
/// `events / depth` counts below 255 after quantization.
pub fn default_histogram_shift(events: usize, depth: usize) -> u32 {
    let mut shift = 0;
    while depth << shift < events {
        shift += 1;
    }
    shift
}

/// Decay shift between two 24-bit timestamps.
///
/// Both timestamps are reduced by `tau_shift` first. When the past value is
/// larger the counter has wrapped, and the present value alone is used. At
/// `tau_shift = 16` this is the difference of the timestamps' upper bytes.
#[inline]
pub fn compute_shift(t_present: u32, t_past: u32, tau_shift: u32) -> u32 {
    let present = (t_present & TIMESTAMP_MASK).checked_shr(tau_shift).unwrap_or(0);
    let past = (t_past & TIMESTAMP_MASK).checked_shr(tau_shift).unwrap_or(0);
    if past <= present {
        present - past
    } else {
        present
    }
}

/// Ratio between the shift-based decay `2^-(dt >> tau)` and the continuous
/// decay `2^(-dt / 2^tau)` it approximates.
///
/// Evaluated through the exponent difference, which is exact for
/// `dt < 2^53`; the decays themselves underflow long before that.
pub fn decay_ratio(dt: u64, tau_shift: u32) -> f64 {
    let scale = (tau_shift as f64).exp2();
    let continuous = dt as f64 / scale;
    let stepped = (dt >> tau_shift) as f64;
    (continuous - stepped).exp2()
}

/// 16-to-8-bit scale-shift quantizer: `clamp((v * scale) >> shift, 0, 255)`.
#[inline]
pub fn scale_shift_u8(v: u16, scale: u32, shift: u32) -> u8 {
    let scaled = (v as u64 * scale as u64).checked_shr(shift).unwrap_or(0);
    scaled.min(255) as u8
}

/// Representation memories for both polarities plus the last-timestamp grid.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SurfaceState {
    depth: usize,
    kind: Representation,
    /// Indexed by [`Polarity::index`].
    mem: [Vec<u16>; 2],
    /// One grid of `depth`, or two stacked grids when timestamps are kept
    /// per polarity.
    t_last: Vec<u32>,
    per_polarity_timestamps: bool,
}

impl SurfaceState {
    pub fn new(depth: usize, config: &SurfaceConfig) -> Self {
        let grids = if config.per_polarity_timestamps { 2 } else { 1 };
        Self {
            depth,
            kind: config.kind,
            mem: [vec![0; depth], vec![0; depth]],
            t_last: vec![0; depth * grids],
            per_polarity_timestamps: config.per_polarity_timestamps,
        }
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn kind(&self) -> Representation {
        self.kind
    }

    pub fn mem(&self, p: Polarity) -> &[u16] {
        &self.mem[p.index()]
    }

    pub fn mem_pos(&self) -> &[u16] {
        &self.mem[1]
    }

    pub fn mem_neg(&self) -> &[u16] {
        &self.mem[0]
    }

    pub fn set_mem(&mut self, p: Polarity, addr: usize, value: u16) {
        self.mem[p.index()][addr] = value;
    }

    #[inline]
    fn t_index(&self, addr: usize, p: Polarity) -> usize {
        if self.per_polarity_timestamps {
            p.index() * self.depth + addr
        } else {
            addr
        }
    }

    pub fn t_last(&self, addr: usize, p: Polarity) -> u32 {
        self.t_last[self.t_index(addr, p)]
    }

    pub fn t_last_grid(&self) -> &[u32] {
        &self.t_last
    }

    /// Zeroes both representation planes.
    pub fn clear_mem(&mut self) {
        self.mem[0].fill(0);
        self.mem[1].fill(0);
    }

    pub fn clear_timestamps(&mut self) {
        self.t_last.fill(0);
    }

    /// Zeroes every memory cell and timestamp.
    pub fn reset(&mut self) {
        self.clear_mem();
        self.clear_timestamps();
    }

    /// Exchanges last-timestamp grids with another state of the same shape.
    pub fn swap_timestamps(&mut self, other: &mut SurfaceState) {
        std::mem::swap(&mut self.t_last, &mut other.t_last);
    }

    #[inline]
    pub fn update_binary(&mut self, addr: usize, p: Polarity) {
        self.mem[p.index()][addr] = 255;
    }

    #[inline]
    pub fn update_histogram(&mut self, addr: usize, p: Polarity) {
        let cell = &mut self.mem[p.index()][addr];
        *cell = cell.saturating_add(1);
    }

    #[inline]
    pub fn update_sets(&mut self, addr: usize, p: Polarity, shift: u32) {
        let cell = &mut self.mem[p.index()][addr];
        *cell = if shift < SETS_SHIFT_LIMIT {
            (*cell >> shift).saturating_add(1)
        } else {
            1
        };
    }

    #[inline]
    pub fn update_slts(&mut self, addr: usize, p: Polarity, shift: u32) {
        let cell = &mut self.mem[p.index()][addr];
        *cell = if shift < *cell as u32 {
            // shift < cell, so the result never exceeds the old value
            1 + *cell - shift as u16
        } else {
            1
        };
    }

    /// Applies one event at a precomputed address.
    #[inline]
    pub fn apply_at(&mut self, addr: usize, p: Polarity, t: u32, tau_shift: u32) {
        match self.kind {
            Representation::Binary => self.update_binary(addr, p),
            Representation::Histogram => self.update_histogram(addr, p),
            Representation::Sets | Representation::Slts => {
                let ti = self.t_index(addr, p);
                let shift = compute_shift(t, self.t_last[ti], tau_shift);
                if self.kind == Representation::Sets {
                    self.update_sets(addr, p, shift);
                } else {
                    self.update_slts(addr, p, shift);
                }
                self.t_last[ti] = t & TIMESTAMP_MASK;
            }
        }
    }

    /// Maps the event through the geometry and updates its cell. Returns
    /// `false` for events outside the input grid.
    #[inline]
    pub fn apply_event(
        &mut self,
        config: &SurfaceConfig,
        event: &Event,
        geometry: &GridGeometry,
    ) -> bool {
        match geometry.address_of(event.x, event.y) {
            Some(addr) => {
                self.apply_at(addr, event.p, event.t, config.tau_shift);
                true
            }
            None => false,
        }
    }

    /// Quantizes one polarity plane into `out`.
    pub fn quantize_into(&self, p: Polarity, scale: u32, shift: u32, out: &mut [u8]) {
        for (dst, &v) in out.iter_mut().zip(self.mem(p)) {
            *dst = scale_shift_u8(v, scale, shift);
        }
    }
}

/// Floating-point exponential and linear time surfaces.
pub mod reference {
    use super::*;

    /// Real-valued surface, one plane per polarity.
    #[derive(Debug, Clone, PartialEq)]
    pub struct RealSurface {
        pub width: usize,
        pub height: usize,
        /// Indexed by [`Polarity::index`].
        pub planes: [Vec<f64>; 2],
    }

    impl RealSurface {
        fn new(geometry: &GridGeometry) -> Self {
            let depth = geometry.depth();
            Self {
                width: geometry.out_width,
                height: geometry.out_height,
                planes: [vec![0.0; depth], vec![0.0; depth]],
            }
        }

        pub fn plane(&self, p: Polarity) -> &[f64] {
            &self.planes[p.index()]
        }
    }

    /// Decay constant matching a decay shift: `2^tau / ln 2`.
    pub fn tau_float_for_shift(tau_shift: u32) -> f64 {
        (tau_shift as f64).exp2() / std::f64::consts::LN_2
    }

    fn replay(
        events: &[Event],
        geometry: &GridGeometry,
        mut decay: impl FnMut(f64, f64) -> f64,
    ) -> RealSurface {
        let mut surface = RealSurface::new(geometry);
        let mut t_last = vec![0u32; geometry.depth()];
        for e in events {
            let Some(addr) = geometry.address_of(e.x, e.y) else {
                continue;
            };
            let dt = e.t.wrapping_sub(t_last[addr]) as f64;
            let cell = &mut surface.planes[e.p.index()][addr];
            *cell = 1.0 + decay(*cell, dt);
            t_last[addr] = e.t;
        }
        surface
    }

    /// Exponential time surface: each event sets `S = 1 + S * exp(-dt / tau)`.
    pub fn reference_ets(events: &[Event], tau_float: f64, geometry: &GridGeometry) -> RealSurface {
        replay(events, geometry, |s, dt| s * (-dt / tau_float).exp())
    }

    /// Linear time surface: each event sets `S = 1 + max(0, S - dt / 2^tau)`.
    pub fn reference_lts(events: &[Event], tau_shift: u32, geometry: &GridGeometry) -> RealSurface {
        let scale = (tau_shift as f64).exp2();
        replay(events, geometry, |s, dt| (s - dt / scale).max(0.0))
    }
}

#[cfg(test)]
mod tests {
    use super::reference::*;
    use super::*;
    use proptest::prelude::*;

    const P: Polarity = Polarity::Positive;
    const N: Polarity = Polarity::Negative;

    fn state(kind: Representation) -> SurfaceState {
        SurfaceState::new(16, &SurfaceConfig::new(kind))
    }

    #[test]
    fn binary_overrides_to_255() {
        let mut s = state(Representation::Binary);
        s.update_binary(3, P);
        assert_eq!(s.mem_pos()[3], 255);
        s.update_binary(3, P);
        assert_eq!(s.mem_pos()[3], 255);
        assert_eq!(s.mem_neg()[3], 0);
        s.update_binary(3, N);
        assert_eq!(s.mem_neg()[3], 255);
    }

    #[test]
    fn histogram_counts_and_saturates() {
        let mut s = state(Representation::Histogram);
        s.update_histogram(0, P);
        assert_eq!(s.mem_pos()[0], 1);
        for _ in 0..20000 {
            s.update_histogram(1, N);
        }
        assert_eq!(s.mem_neg()[1], 20000);
        s.set_mem(P, 2, 65535);
        s.update_histogram(2, P);
        assert_eq!(s.mem_pos()[2], 65535);
    }

    #[test]
    fn shift_calculation() {
        assert_eq!(compute_shift(0x020000, 0x010000, 16), 1);
        assert_eq!(compute_shift(0x00FFFF, 0x000000, 16), 0);
        // counter reset: past compares as zero
        assert_eq!(compute_shift(0x010000, 0xFF0000, 16), 1);
        assert_eq!(compute_shift(1 << 12, 0, 8), 16);
        assert_eq!(compute_shift(5, 0, 32), 0);
    }

    #[test]
    fn sets_update() {
        let mut s = state(Representation::Sets);
        s.update_sets(0, P, 0);
        assert_eq!(s.mem_pos()[0], 1);
        s.set_mem(P, 1, 100);
        s.update_sets(1, P, 2);
        assert_eq!(s.mem_pos()[1], 26);
        s.set_mem(P, 2, 5000);
        s.update_sets(2, P, 16);
        assert_eq!(s.mem_pos()[2], 1);
        s.set_mem(P, 3, 65535);
        s.update_sets(3, P, 0);
        assert_eq!(s.mem_pos()[3], 65535);
    }

    #[test]
    fn slts_update() {
        let mut s = state(Representation::Slts);
        s.set_mem(P, 0, 10);
        s.update_slts(0, P, 3);
        assert_eq!(s.mem_pos()[0], 8);
        s.set_mem(P, 1, 10);
        s.update_slts(1, P, 10);
        assert_eq!(s.mem_pos()[1], 1);
        s.update_slts(2, P, 0);
        assert_eq!(s.mem_pos()[2], 1);
    }

    #[test]
    fn apply_event_sets() {
        let g = GridGeometry::default();
        let cfg = SurfaceConfig::new(Representation::Sets);
        let mut s = SurfaceState::new(g.depth(), &cfg);
        let e = Event::new(100, 200, P, 12345);
        assert!(s.apply_event(&cfg, &e, &g));
        let addr = g.address_of(100, 200).unwrap();
        assert_eq!(s.mem_pos()[addr], 1);
        assert_eq!(s.t_last(addr, P), 12345);

        let mut s = SurfaceState::new(g.depth(), &cfg);
        s.apply_event(&cfg, &Event::new(0, 0, P, 0), &g);
        s.apply_event(&cfg, &Event::new(0, 0, P, 1 << 16), &g);
        assert_eq!(s.mem_pos()[0], 1);

        assert!(!s.apply_event(&cfg, &Event::new(1280, 0, P, 0), &g));
    }

    #[test]
    fn shared_versus_per_polarity_timestamps() {
        let g = GridGeometry::default();
        let events = [
            Event::new(0, 0, P, 0),
            Event::new(0, 0, N, 3 << 16),
            Event::new(0, 0, P, 3 << 16),
        ];
        let shared = SurfaceConfig::new(Representation::Sets);
        let mut s = SurfaceState::new(g.depth(), &shared);
        for e in &events {
            s.apply_event(&shared, e, &g);
        }
        // last positive update saw shift 0 against the negative event's time
        assert_eq!(s.mem_pos()[0], 2);

        let split = SurfaceConfig {
            per_polarity_timestamps: true,
            ..shared
        };
        let mut s = SurfaceState::new(g.depth(), &split);
        for e in &events {
            s.apply_event(&split, e, &g);
        }
        assert_eq!(s.mem_pos()[0], 1);
        assert_eq!(s.t_last(0, N), 3 << 16);
    }

    #[test]
    fn reset_zeroes_everything() {
        let g = GridGeometry::default();
        let cfg = SurfaceConfig::new(Representation::Slts);
        let mut s = SurfaceState::new(g.depth(), &cfg);
        s.apply_event(&cfg, &Event::new(5, 5, N, 99), &g);
        s.reset();
        assert!(s.mem_pos().iter().chain(s.mem_neg()).all(|&v| v == 0));
        assert!(s.t_last_grid().iter().all(|&t| t == 0));
    }

    #[test]
    fn quantizer() {
        assert_eq!(scale_shift_u8(0x1234, 1, 5), 145);
        assert_eq!(scale_shift_u8(65535, 1, 0), 255);
        for (scale, shift) in [(0, 0), (1, 0), (7, 3), (u32::MAX, 70)] {
            assert_eq!(scale_shift_u8(0, scale, shift), 0);
        }
    }

    #[test]
    fn histogram_shift_default() {
        assert_eq!(default_histogram_shift(20000, 16384), 1);
        assert_eq!(default_histogram_shift(16384, 16384), 0);
        assert_eq!(default_histogram_shift(100, 16384), 0);
        assert_eq!(default_histogram_shift(16384 * 5, 16384), 3);
    }

    #[test]
    fn reference_surfaces() {
        let g = GridGeometry::default();
        let tau = tau_float_for_shift(16);
        let one = [Event::new(10, 10, P, 500)];
        let addr = g.address_of(10, 10).unwrap();
        assert_eq!(reference_ets(&one, tau, &g).plane(P)[addr], 1.0);
        assert_eq!(reference_lts(&one, 16, &g).plane(P)[addr], 1.0);

        let two = [Event::new(10, 10, P, 500), Event::new(10, 10, P, 500 + (1 << 16))];
        let ets = reference_ets(&two, tau, &g).plane(P)[addr];
        assert!((ets - 1.5).abs() < 1e-12);
        // linear decay of one full unit per 2^tau
        let lts = reference_lts(&two, 16, &g).plane(P)[addr];
        assert!((lts - 1.0).abs() < 1e-12);
        let half = [Event::new(10, 10, P, 0), Event::new(10, 10, P, 1 << 15)];
        let lts = reference_lts(&half, 16, &g).plane(P)[addr];
        assert!((lts - 1.5).abs() < 1e-12);
    }

    #[test]
    fn sets_decay_tracks_reference_ets() {
        let g = GridGeometry::default();
        for tau in [8u32, 12, 16] {
            let tau_f = tau_float_for_shift(tau);
            let mut dt = 0u32;
            while dt <= 1 << 22 {
                let events = [Event::new(0, 0, P, 0), Event::new(0, 0, P, dt)];
                let continuous = reference_ets(&events, tau_f, &g).plane(P)[0] - 1.0;
                let shift = compute_shift(dt, 0, tau);
                let stepped = (-(shift as f64)).exp2();
                // beyond this the sum 1 + d no longer resolves d precisely
                if continuous > 1e-6 {
                    let ratio = stepped / continuous;
                    assert!((1.0 - 1e-6..2.0 + 1e-6).contains(&ratio), "tau={tau} dt={dt} ratio={ratio}");
                }
                dt = dt * 3 / 2 + 1;
            }
        }
    }

    proptest! {
        #[test]
        fn decay_ratio_bound(dt in 0u64..(1 << 24), tau in 1u32..24) {
            let r = decay_ratio(dt, tau);
            prop_assert!((1.0..2.0).contains(&r));
        }

        #[test]
        fn sets_monotone_recency(gaps in proptest::collection::vec(0u32..(1 << 18), 1..8), extra in 1u32..(1 << 20)) {
            let g = GridGeometry::default();
            let cfg = SurfaceConfig::new(Representation::Sets);
            let run = |last_gap_extra: u32| {
                let mut s = SurfaceState::new(g.depth(), &cfg);
                let mut t = 0u32;
                s.apply_event(&cfg, &Event::new(0, 0, P, t), &g);
                for (i, gap) in gaps.iter().enumerate() {
                    t += gap + if i + 1 == gaps.len() { last_gap_extra } else { 0 };
                    s.apply_event(&cfg, &Event::new(0, 0, P, t), &g);
                }
                s.mem_pos()[0]
            };
            prop_assert!(run(extra) <= run(0));
        }
    }
}
