//! `EVF1` frame files: concatenated frames, each with a fixed 29-byte
//! little-endian header followed by channel-planar row-major `u8` payload.
//!
//! | offset | size | field |
//! |-------:|-----:|-------|
//! | 0 | 4 | magic `"EVF1"` |
//! | 4 | 1 | version (1) |
//! | 5 | 2 | width |
//! | 7 | 2 | height |
//! | 9 | 1 | channels |
//! | 10 | 1 | dtype (0 = u8) |
//! | 11 | 1 | representation kind |
//! | 12 | 1 | accumulation mode |
//! | 13 | 4 | frame index |
//! | 17 | 4 | t_start |
//! | 21 | 4 | t_end |
//! | 25 | 4 | event count |

use std::io::{self, Read, Write};

use thiserror::Error;

use crate::framer::Frame;
use crate::surfaces::Representation;

pub const MAGIC: &[u8; 4] = b"EVF1";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 29;
const DTYPE_U8: u8 = 0;

#[derive(Debug, Error)]
pub enum FrameFileError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("bad magic at byte {offset}")]
    BadMagic { offset: u64 },
    #[error("unsupported version {0}")]
    Version(u8),
    #[error("unsupported dtype {0}")]
    Dtype(u8),
    #[error("unknown representation code {0}")]
    Kind(u8),
    #[error("truncated frame at byte {offset}")]
    Truncated { offset: u64 },
}

pub fn write_frame<W: Write>(w: &mut W, frame: &Frame) -> io::Result<()> {
    let mut header = [0u8; HEADER_LEN];
    header[0..4].copy_from_slice(MAGIC);
    header[4] = VERSION;
    header[5..7].copy_from_slice(&frame.width.to_le_bytes());
    header[7..9].copy_from_slice(&frame.height.to_le_bytes());
    header[9] = frame.channels;
    header[10] = DTYPE_U8;
    header[11] = frame.kind.code();
    header[12] = frame.mode;
    header[13..17].copy_from_slice(&frame.index.to_le_bytes());
    header[17..21].copy_from_slice(&frame.t_start.to_le_bytes());
    header[21..25].copy_from_slice(&frame.t_end.to_le_bytes());
    header[25..29].copy_from_slice(&frame.event_count.to_le_bytes());
    w.write_all(&header)?;
    w.write_all(&frame.data)
}

pub fn encode_frames(frames: &[Frame]) -> Vec<u8> {
    let mut out = Vec::new();
    for f in frames {
        write_frame(&mut out, f).expect("writing to a Vec cannot fail");
    }
    out
}

/// Sequential reader over a stream of concatenated frames.
pub struct FrameReader<R> {
    inner: R,
    offset: u64,
}

impl<R: Read> FrameReader<R> {
    pub fn new(inner: R) -> Self {
        Self { inner, offset: 0 }
    }

    /// Reads the next frame, or `None` at a clean end of stream.
    pub fn next_frame(&mut self) -> Result<Option<Frame>, FrameFileError> {
        let start = self.offset;
        let mut header = [0u8; HEADER_LEN];
        let got = read_full(&mut self.inner, &mut header)?;
        if got == 0 {
            return Ok(None);
        }
        if got < HEADER_LEN {
            return Err(FrameFileError::Truncated { offset: start });
        }
        if &header[0..4] != MAGIC {
            return Err(FrameFileError::BadMagic { offset: start });
        }
        if header[4] != VERSION {
            return Err(FrameFileError::Version(header[4]));
        }
        if header[10] != DTYPE_U8 {
            return Err(FrameFileError::Dtype(header[10]));
        }
        let kind = Representation::from_code(header[11]).ok_or(FrameFileError::Kind(header[11]))?;
        let u16_at = |i: usize| u16::from_le_bytes([header[i], header[i + 1]]);
        let u32_at = |i: usize| u32::from_le_bytes(header[i..i + 4].try_into().unwrap());
        let width = u16_at(5);
        let height = u16_at(7);
        let channels = header[9];
        let mut data = vec![0u8; width as usize * height as usize * channels as usize];
        if read_full(&mut self.inner, &mut data)? < data.len() {
            return Err(FrameFileError::Truncated { offset: start });
        }
        self.offset += (HEADER_LEN + data.len()) as u64;
        Ok(Some(Frame {
            index: u32_at(13),
            width,
            height,
            channels,
            kind,
            mode: header[12],
            t_start: u32_at(17),
            t_end: u32_at(21),
            event_count: u32_at(25),
            dropped: false,
            data,
        }))
    }
}

impl<R: Read> Iterator for FrameReader<R> {
    type Item = Result<Frame, FrameFileError>;

    fn next(&mut self) -> Option<Self::Item> {
        self.next_frame().transpose()
    }
}

fn read_full<R: Read>(r: &mut R, buf: &mut [u8]) -> io::Result<usize> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) => break,
            Ok(n) => filled += n,
            Err(e) if e.kind() == io::ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(filled)
}

pub fn decode_frames(bytes: &[u8]) -> Result<Vec<Frame>, FrameFileError> {
    FrameReader::new(bytes).collect()
}
