//! EVT 3.0 word stream codec.
//!
//! The wire format is a flat sequence of little-endian 16-bit words. Each word
//! carries a 4-bit type code in bits `[15:12]` and a 12-bit payload in bits
//! `[11:0]`. Row, timestamp and vector base are latched by the decoder, so a
//! word only needs to carry what changed since the previous event. See
//! `FORMAT.md` at the repository root for the bit-exact layouts.

use std::fmt;

use thiserror::Error;

/// Sensor width of the IMX636 (40 banks of 32 pixels).
pub const SENSOR_WIDTH: u16 = 1280;
/// Sensor height of the IMX636.
pub const SENSOR_HEIGHT: u16 = 720;
/// Pixels covered by one vector bank.
pub const BANK_WIDTH: u16 = 32;
/// Timestamps are carried as a 24-bit microsecond counter.
pub const TIMESTAMP_BITS: u32 = 24;
pub const TIMESTAMP_MASK: u32 = (1 << TIMESTAMP_BITS) - 1;

/// Type codes of the EVT 3.0 word classes.
///
/// Kept in one table so the decoder and encoder cannot drift apart.
pub mod codes {
    pub const ADDR_Y: u8 = 0x0;
    pub const ADDR_X: u8 = 0x2;
    pub const VECT_BASE_X: u8 = 0x3;
    pub const VECT_12: u8 = 0x4;
    pub const VECT_8: u8 = 0x5;
    pub const TIME_LOW: u8 = 0x6;
    pub const CONTINUED_4: u8 = 0x7;
    pub const TIME_HIGH: u8 = 0x8;
    pub const EXT_TRIGGER: u8 = 0xA;
    pub const OTHERS: u8 = 0xE;
    pub const CONTINUED_12: u8 = 0xF;
}

const POLARITY_BIT: u16 = 1 << 11;
const COORD_MASK: u16 = 0x07FF;
const PAYLOAD_MASK: u16 = 0x0FFF;

/// Event sign.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
#[repr(u8)]
pub enum Polarity {
    Negative = 0,
    Positive = 1,
}

impl Polarity {
    #[inline]
    pub fn from_bit(bit: bool) -> Self {
        if bit {
            Polarity::Positive
        } else {
            Polarity::Negative
        }
    }

    #[inline]
    pub fn index(self) -> usize {
        self as usize
    }
}

/// A decoded sensor event. `t` is a 24-bit microsecond timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Event {
    pub x: u16,
    pub y: u16,
    pub p: Polarity,
    pub t: u32,
}

impl Event {
    pub fn new(x: u16, y: u16, p: Polarity, t: u32) -> Self {
        Self { x, y, p, t }
    }
}

/// One raw 16-bit EVT 3.0 word.
#[derive(Clone, Copy, PartialEq, Eq, Hash)]
pub struct EventWord(pub u16);

impl EventWord {
    #[inline]
    pub fn new(type_code: u8, payload: u16) -> Self {
        EventWord(((type_code as u16 & 0xF) << 12) | (payload & PAYLOAD_MASK))
    }

    #[inline]
    pub fn type_code(self) -> u8 {
        (self.0 >> 12) as u8
    }

    #[inline]
    pub fn payload(self) -> u16 {
        self.0 & PAYLOAD_MASK
    }

    pub fn time_high(t: u32) -> Self {
        Self::new(codes::TIME_HIGH, ((t >> 12) & 0xFFF) as u16)
    }

    pub fn time_low(t: u32) -> Self {
        Self::new(codes::TIME_LOW, (t & 0xFFF) as u16)
    }

    pub fn addr_y(y: u16) -> Self {
        Self::new(codes::ADDR_Y, y & COORD_MASK)
    }

    pub fn addr_x(x: u16, p: Polarity) -> Self {
        Self::new(codes::ADDR_X, (x & COORD_MASK) | polarity_bits(p))
    }

    pub fn vect_base_x(x: u16, p: Polarity) -> Self {
        Self::new(codes::VECT_BASE_X, (x & COORD_MASK) | polarity_bits(p))
    }

    pub fn vect_12(bits: u16) -> Self {
        Self::new(codes::VECT_12, bits & 0xFFF)
    }

    pub fn vect_8(bits: u8) -> Self {
        Self::new(codes::VECT_8, bits as u16)
    }
}

impl fmt::Debug for EventWord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "EventWord({:#x}: {:#05x})", self.type_code(), self.payload())
    }
}

#[inline]
fn polarity_bits(p: Polarity) -> u16 {
    match p {
        Polarity::Positive => POLARITY_BIT,
        Polarity::Negative => 0,
    }
}

/// Counters accumulated over a decoded stream.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, serde::Serialize)]
pub struct DecodeStats {
    pub words_consumed: u64,
    pub events_emitted: u64,
    pub vectorized_events: u64,
    pub single_events: u64,
    pub trigger_count: u64,
    pub unknown_word_count: u64,
    pub wrap_count: u64,
    /// Events whose coordinates fell outside the sensor and were discarded.
    pub out_of_bounds: u64,
}

/// Latched decoder registers.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct DecoderState {
    pub current_y: u16,
    pub time_high: u16,
    pub time_low: u16,
    pub vect_base_x: u16,
    pub vect_polarity: Option<Polarity>,
}

impl DecoderState {
    /// The 24-bit timestamp composed from the latched halves.
    #[inline]
    pub fn current_time(&self) -> u32 {
        ((self.time_high as u32) << 12) | self.time_low as u32
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum DecodeError {
    #[error("truncated stream: dangling byte at offset {offset}")]
    OddLength { offset: u64 },
}

/// Streaming EVT 3.0 decoder.
///
/// Decoding is a fold over words; feeding a stream in arbitrary byte chunks
/// yields the same events as decoding it in one piece.
#[derive(Debug, Clone)]
pub struct Decoder {
    state: DecoderState,
    stats: DecodeStats,
    width: u16,
    height: u16,
    pending_byte: Option<u8>,
    bytes_seen: u64,
}

impl Default for Decoder {
    fn default() -> Self {
        Self::new()
    }
}

impl Decoder {
    pub fn new() -> Self {
        Self::with_dimensions(SENSOR_WIDTH, SENSOR_HEIGHT)
    }

    pub fn with_dimensions(width: u16, height: u16) -> Self {
        Self {
            state: DecoderState::default(),
            stats: DecodeStats::default(),
            width,
            height,
            pending_byte: None,
            bytes_seen: 0,
        }
    }

    pub fn state(&self) -> &DecoderState {
        &self.state
    }

    pub fn stats(&self) -> &DecodeStats {
        &self.stats
    }

    #[inline]
    fn emit(&mut self, x: u16, p: Polarity, vectorized: bool, out: &mut Vec<Event>) {
        if x >= self.width || self.state.current_y >= self.height {
            self.stats.out_of_bounds += 1;
            return;
        }
        out.push(Event {
            x,
            y: self.state.current_y,
            p,
            t: self.state.current_time(),
        });
        self.stats.events_emitted += 1;
        if vectorized {
            self.stats.vectorized_events += 1;
        } else {
            self.stats.single_events += 1;
        }
    }

    #[inline]
    fn emit_vector(&mut self, mut bits: u16, len: u16, out: &mut Vec<Event>) {
        let base = self.state.vect_base_x;
        match self.state.vect_polarity {
            Some(p) => {
                // Only set bits are visited.
                while bits != 0 {
                    let offset = bits.trailing_zeros() as u16;
                    self.emit(base.wrapping_add(offset), p, true, out);
                    bits &= bits - 1;
                }
            }
            // A vector word with no preceding base word carries no usable address.
            None => self.stats.unknown_word_count += 1,
        }
        self.state.vect_base_x = base.wrapping_add(len);
    }

    /// Applies one word to the latched state, appending any events to `out`.
    #[inline]
    pub fn decode_word(&mut self, word: EventWord, out: &mut Vec<Event>) {
        self.stats.words_consumed += 1;
        let payload = word.payload();
        match word.type_code() {
            codes::ADDR_Y => self.state.current_y = payload & COORD_MASK,
            codes::ADDR_X => {
                let p = Polarity::from_bit(payload & POLARITY_BIT != 0);
                self.emit(payload & COORD_MASK, p, false, out);
            }
            codes::VECT_BASE_X => {
                self.state.vect_base_x = payload & COORD_MASK;
                self.state.vect_polarity = Some(Polarity::from_bit(payload & POLARITY_BIT != 0));
            }
            codes::VECT_12 => self.emit_vector(payload, 12, out),
            codes::VECT_8 => self.emit_vector(payload & 0xFF, 8, out),
            codes::TIME_LOW => self.state.time_low = payload,
            codes::TIME_HIGH => {
                if payload < self.state.time_high {
                    self.stats.wrap_count += 1;
                }
                self.state.time_high = payload;
            }
            codes::EXT_TRIGGER => self.stats.trigger_count += 1,
            codes::CONTINUED_4 | codes::CONTINUED_12 | codes::OTHERS => {
                self.stats.unknown_word_count += 1
            }
            _ => self.stats.unknown_word_count += 1,
        }
    }

    /// Decodes a chunk of raw bytes. A trailing odd byte is held until the
    /// next chunk.
    pub fn feed(&mut self, bytes: &[u8], out: &mut Vec<Event>) {
        let mut rest = bytes;
        if let Some(lo) = self.pending_byte.take() {
            match rest.split_first() {
                Some((&hi, tail)) => {
                    self.decode_word(EventWord(u16::from_le_bytes([lo, hi])), out);
                    rest = tail;
                }
                None => {
                    self.pending_byte = Some(lo);
                    return;
                }
            }
        }
        let mut chunks = rest.chunks_exact(2);
        for pair in &mut chunks {
            self.decode_word(EventWord(u16::from_le_bytes([pair[0], pair[1]])), out);
        }
        if let [b] = chunks.remainder() {
            self.pending_byte = Some(*b);
        }
        self.bytes_seen += bytes.len() as u64;
    }

    /// Ends the stream, failing if a dangling byte is left over.
    pub fn finish(&self) -> Result<DecodeStats, DecodeError> {
        match self.pending_byte {
            Some(_) => Err(DecodeError::OddLength {
                offset: self.bytes_seen - 1,
            }),
            None => Ok(self.stats),
        }
    }
}

/// Decodes a complete stream from a fresh decoder state.
pub fn decode_stream(bytes: &[u8]) -> Result<(Vec<Event>, DecodeStats), DecodeError> {
    if bytes.len() % 2 != 0 {
        return Err(DecodeError::OddLength {
            offset: bytes.len() as u64 - 1,
        });
    }
    let mut decoder = Decoder::new();
    // Every word yields at most 12 events; most yield at most one.
    let mut events = Vec::with_capacity(bytes.len() / 2);
    decoder.feed(bytes, &mut events);
    let stats = decoder.finish()?;
    Ok((events, stats))
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum EncodeError {
    #[error("event {index} out of range: x={x} y={y} t={t}")]
    CoordOutOfRange { index: usize, x: u16, y: u16, t: u32 },
    #[error("event {index} has timestamp {t} earlier than its predecessor ({prev})")]
    UnsortedTimestamps { index: usize, t: u32, prev: u32 },
}

/// Encodes time-sorted events into EVT 3.0 words.
///
/// Time and row words are only emitted when their value changes. A run of
/// consecutive events sharing `(t, y, p)` and one 32-pixel bank, with strictly
/// increasing `x`, is packed into a vector base word followed by the 12/12/8
/// bit vectors when that is shorter than sending each address on its own.
/// Event order is preserved, so decoding the output reproduces the input.
pub fn encode_words(events: &[Event]) -> Result<Vec<EventWord>, EncodeError> {
    let mut words = Vec::with_capacity(events.len() + events.len() / 4 + 3);
    let mut time_high: Option<u16> = None;
    let mut time_low: Option<u16> = None;
    let mut row: Option<u16> = None;
    let mut prev_t = 0u32;

    for (index, e) in events.iter().enumerate() {
        if e.x >= SENSOR_WIDTH || e.y >= SENSOR_HEIGHT || e.t > TIMESTAMP_MASK {
            return Err(EncodeError::CoordOutOfRange {
                index,
                x: e.x,
                y: e.y,
                t: e.t,
            });
        }
        if e.t < prev_t {
            return Err(EncodeError::UnsortedTimestamps {
                index,
                t: e.t,
                prev: prev_t,
            });
        }
        prev_t = e.t;
    }

    let mut i = 0;
    while i < events.len() {
        let head = events[i];
        let bank = head.x / BANK_WIDTH;
        let mut end = i + 1;
        while end < events.len() {
            let e = events[end];
            if e.t != head.t
                || e.y != head.y
                || e.p != head.p
                || e.x / BANK_WIDTH != bank
                || e.x <= events[end - 1].x
            {
                break;
            }
            end += 1;
        }
        let run = &events[i..end];

        let high = ((head.t >> 12) & 0xFFF) as u16;
        let low = (head.t & 0xFFF) as u16;
        if time_high != Some(high) {
            words.push(EventWord::time_high(head.t));
            time_high = Some(high);
        }
        if time_low != Some(low) {
            words.push(EventWord::time_low(head.t));
            time_low = Some(low);
        }
        if row != Some(head.y) {
            words.push(EventWord::addr_y(head.y));
            row = Some(head.y);
        }

        let base = bank * BANK_WIDTH;
        let mask = run
            .iter()
            .fold(0u32, |m, e| m | 1u32 << (e.x - base));
        let chunks = if mask >> 24 != 0 {
            3
        } else if mask >> 12 != 0 {
            2
        } else {
            1
        };
        if 1 + chunks < run.len() {
            words.push(EventWord::vect_base_x(base, head.p));
            words.push(EventWord::vect_12((mask & 0xFFF) as u16));
            if chunks >= 2 {
                words.push(EventWord::vect_12(((mask >> 12) & 0xFFF) as u16));
            }
            if chunks == 3 {
                words.push(EventWord::vect_8((mask >> 24) as u8));
            }
        } else {
            words.extend(run.iter().map(|e| EventWord::addr_x(e.x, e.p)));
        }
        i = end;
    }
    Ok(words)
}

/// Encodes events into little-endian wire bytes.
pub fn encode_events(events: &[Event]) -> Result<Vec<u8>, EncodeError> {
    Ok(words_to_bytes(&encode_words(events)?))
}

pub fn words_to_bytes(words: &[EventWord]) -> Vec<u8> {
    words.iter().flat_map(|w| w.0.to_le_bytes()).collect()
}
