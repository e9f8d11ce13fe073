use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use homi::framer::DropPolicy;
use homi::surfaces::Representation;
use homi::synth::Pattern;

#[derive(Debug, Parser)]
#[command(name = "homi", version, about = "Event stream decoding, framing and integer inference")]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ModeArg {
    ConstEvent,
    ConstTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum ReprArg {
    Binary,
    Hist,
    Sets,
    Slts,
}

impl From<ReprArg> for Representation {
    fn from(r: ReprArg) -> Self {
        match r {
            ReprArg::Binary => Representation::Binary,
            ReprArg::Hist => Representation::Histogram,
            ReprArg::Sets => Representation::Sets,
            ReprArg::Slts => Representation::Slts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum DropArg {
    Block,
    #[value(alias = "drop-frame")]
    Drop,
}

impl From<DropArg> for DropPolicy {
    fn from(d: DropArg) -> Self {
        match d {
            DropArg::Block => DropPolicy::Block,
            DropArg::Drop => DropPolicy::DropFrame,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PatternArg {
    MovingBar,
    BlobOrbit,
    UniformNoise,
}

impl From<PatternArg> for Pattern {
    fn from(p: PatternArg) -> Self {
        match p {
            PatternArg::MovingBar => Pattern::MovingBar,
            PatternArg::BlobOrbit => Pattern::BlobOrbit,
            PatternArg::UniformNoise => Pattern::UniformNoise,
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Sensor resolution, WxH.
    #[arg(long, global = true, default_value = "1280x720")]
    pub in_res: String,
    /// Representation resolution, WxH.
    #[arg(long, global = true, default_value = "128x128")]
    pub out_res: String,
    #[arg(long, global = true, value_enum, default_value_t = ModeArg::ConstEvent)]
    pub mode: ModeArg,
    /// Events per frame in const-event mode [default: 20000].
    #[arg(long, global = true)]
    pub n_events: Option<usize>,
    /// Window length in microseconds in const-time mode [default: 10000].
    #[arg(long, global = true)]
    pub window: Option<u32>,
    #[arg(long, global = true, value_enum, default_value_t = ReprArg::Sets)]
    pub repr: ReprArg,
    /// Decay shift for sets and slts.
    #[arg(long, global = true, default_value_t = 16)]
    pub tau: u32,
    /// Quantizer multiplier [default: 1].
    #[arg(long, global = true)]
    pub scale: Option<u32>,
    /// Quantizer right shift [default: 0, or the histogram fit for hist].
    #[arg(long, global = true)]
    pub shift: Option<u32>,
    /// 1 for the positive plane only, or 2k for k sub-windows of both polarities.
    #[arg(long, global = true, default_value_t = 2)]
    pub channels: usize,
    #[arg(long, global = true, default_value_t = 4)]
    pub queue_cap: usize,
    #[arg(long, global = true, value_enum, default_value_t = DropArg::Block)]
    pub drop_policy: DropArg,
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    /// Write the run report here as JSON lines.
    #[arg(long, global = true)]
    pub report: Option<PathBuf>,
    /// Run every stage on the calling thread.
    #[arg(long, global = true)]
    pub single_thread: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum EventFormat {
    Csv,
    Bin,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum InputKind {
    Auto,
    Frames,
    Raw,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Workload {
    DecodeOnly,
    FrameOnly,
    Full,
    All,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Decode an EVT 3.0 stream into events.
    Decode {
        input: PathBuf,
        /// Event output; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[arg(long, value_enum, default_value_t = EventFormat::Csv)]
        format: EventFormat,
    },
    /// Accumulate a stream into EVF1 frames.
    Frame {
        input: PathBuf,
        #[arg(short, long)]
        output: PathBuf,
    },
    /// Classify frames from an EVF1 file or a raw stream.
    Infer {
        /// Model bundle directory or manifest.
        #[arg(long)]
        model: PathBuf,
        input: PathBuf,
        #[arg(long, value_enum, default_value_t = InputKind::Auto)]
        input_kind: InputKind,
        /// Prediction lines; stdout when omitted.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Use the dense executor instead of the zero-skipping one.
        #[arg(long)]
        dense: bool,
    },
    /// Write a deterministic synthetic stream and its ground-truth sidecar.
    Synth {
        #[arg(long, value_enum, default_value_t = PatternArg::MovingBar)]
        pattern: PatternArg,
        /// Events per second.
        #[arg(long, default_value_t = 1_000_000.0)]
        rate: f64,
        /// Seconds.
        #[arg(long, default_value_t = 0.1)]
        duration: f64,
        #[arg(short, long)]
        output: PathBuf,
        /// Sidecar path [default: OUTPUT.json].
        #[arg(long)]
        sidecar: Option<PathBuf>,
        /// Sidecar window width in microseconds.
        #[arg(long, default_value_t = 10_000)]
        sidecar_window: u32,
    },
    /// Run pinned workloads and report throughput and latency.
    Bench {
        #[arg(long, value_enum, default_value_t = Workload::All)]
        workload: Workload,
        /// Events in the generated workload stream.
        #[arg(long, default_value_t = 10_000_000)]
        events: usize,
        /// Model for the full workload; random weights when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        /// Repetitions per workload.
        #[arg(long, default_value_t = 1)]
        runs: usize,
    },
}
