use std::collections::BTreeMap;
use std::fs::File;
use std::io::{self, Write};
use std::path::Path;
use std::time::Duration;

use homi::evt::DecodeStats;
use homi::framer::FramerStats;
use homi::runner::{FrameRecord, RunOutput, StageTimings};
use serde::Serialize;

#[derive(Debug, Default, Serialize)]
pub struct TimingsMs {
    pub decode: f64,
    pub frame: f64,
    pub quantize: f64,
    pub infer: f64,
    pub wall: f64,
}

fn ms(d: Duration) -> f64 {
    d.as_secs_f64() * 1e3
}

impl From<StageTimings> for TimingsMs {
    fn from(t: StageTimings) -> Self {
        Self {
            decode: ms(t.decode),
            frame: ms(t.frame),
            quantize: ms(t.quantize),
            infer: ms(t.infer),
            wall: ms(t.wall),
        }
    }
}

#[derive(Debug, Serialize)]
pub struct Percentiles {
    pub p50: f64,
    pub p90: f64,
    pub p99: f64,
    pub max: f64,
}

impl Percentiles {
    /// Nearest-rank percentiles in milliseconds.
    pub fn of(samples: &[Duration]) -> Option<Self> {
        if samples.is_empty() {
            return None;
        }
        let mut sorted: Vec<f64> = samples.iter().map(|&d| ms(d)).collect();
        sorted.sort_by(f64::total_cmp);
        let rank = |q: f64| sorted[((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len()) - 1];
        Some(Self {
            p50: rank(0.5),
            p90: rank(0.9),
            p99: rank(0.99),
            max: *sorted.last().unwrap(),
        })
    }
}

/// One JSON line per command run or bench workload.
#[derive(Debug, Default, Serialize)]
pub struct RunReport {
    pub command: &'static str,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workload: Option<&'static str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub run: Option<usize>,
    pub timings_ms: TimingsMs,
    pub events: u64,
    pub frames: u64,
    pub events_per_sec: f64,
    pub frames_per_sec: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub infer_latency_ms: Option<Percentiles>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub decode: Option<DecodeStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub framer: Option<FramerStats>,
    pub predictions: BTreeMap<usize, u64>,
}

pub fn per_second(count: u64, wall: Duration) -> f64 {
    count as f64 / wall.as_secs_f64().max(1e-9)
}

impl RunReport {
    pub fn from_run(command: &'static str, out: &RunOutput) -> Self {
        let wall = out.timings.wall;
        let latencies: Vec<Duration> = out
            .records
            .iter()
            .filter(|r| r.prediction.is_some())
            .map(|r| r.infer_time)
            .collect();
        Self {
            command,
            timings_ms: out.timings.into(),
            events: out.decode.events_emitted,
            frames: out.records.len() as u64,
            events_per_sec: per_second(out.decode.events_emitted, wall),
            frames_per_sec: per_second(out.records.len() as u64, wall),
            infer_latency_ms: Percentiles::of(&latencies),
            decode: Some(out.decode),
            framer: Some(out.framer),
            predictions: histogram(&out.records),
            ..Self::default()
        }
    }
}

pub fn histogram(records: &[FrameRecord]) -> BTreeMap<usize, u64> {
    let mut h = BTreeMap::new();
    for p in records.iter().filter_map(|r| r.prediction.as_ref()) {
        *h.entry(p.class_id).or_insert(0) += 1;
    }
    h
}

/// Destination for report lines.
pub enum ReportSink {
    File(File),
    Stdout,
    Stderr,
}

impl ReportSink {
    /// The `--report` file when given, otherwise stdout unless stdout
    /// already carries command output.
    pub fn open(path: Option<&Path>, stdout_busy: bool) -> io::Result<Self> {
        Ok(match path {
            Some(p) => ReportSink::File(File::create(p)?),
            None if stdout_busy => ReportSink::Stderr,
            None => ReportSink::Stdout,
        })
    }

    pub fn emit<T: Serialize>(&mut self, record: &T) -> io::Result<()> {
        let line = serde_json::to_string(record).map_err(io::Error::other)?;
        match self {
            ReportSink::File(f) => writeln!(f, "{line}"),
            ReportSink::Stdout => writeln!(io::stdout().lock(), "{line}"),
            ReportSink::Stderr => writeln!(io::stderr().lock(), "{line}"),
        }
    }
}
