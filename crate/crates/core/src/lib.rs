#![doc = include_str!("../README.md")]

pub mod evt;
pub mod frame_file;
pub mod framer;
pub mod geometry;
pub mod inference;
pub mod runner;
pub mod surfaces;
pub mod synth;

pub use evt::{decode_stream, encode_events, Decoder, Event, Polarity};
pub use framer::{AccumulationMode, DropPolicy, Frame, Framer, FramerConfig};
pub use geometry::GridGeometry;
pub use inference::{load_model, Executor, QuantizedModel};
pub use runner::{run_stream, RunOptions};
pub use surfaces::{Representation, SurfaceConfig};
