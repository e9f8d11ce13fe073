use std::fs;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use homi::evt::{DecodeError, Decoder, Event};
use homi::frame_file::{decode_frames, write_frame, FrameFileError, MAGIC};
use homi::framer::{AccumulationMode, Framer, FramerConfig};
use homi::geometry::{parse_resolution, GridGeometry};
use homi::inference::{
    homi_net16, load_model, Executor, InferError, ModelError, Prediction, QuantizedModel, Tensor3,
};
use homi::runner::{run_stream, RunError, RunOptions, RunOutput};
use homi::surfaces::SurfaceConfig;
use homi::synth::{synth_stream, SynthConfig};
use serde::Serialize;

use crate::args::{Cli, Command, EventFormat, GlobalArgs, InputKind, ModeArg, Workload};
use crate::report::{histogram, per_second, Percentiles, ReportSink, RunReport, TimingsMs};
use crate::{CliError, Exit};

pub fn run(cli: Cli) -> Result<(), CliError> {
    let g = &cli.global;
    match cli.command {
        Command::Decode {
            ref input,
            ref output,
            format,
        } => decode(g, input, output.as_deref(), format),
        Command::Frame {
            ref input,
            ref output,
        } => frame(g, input, output),
        Command::Infer {
            ref model,
            ref input,
            input_kind,
            ref output,
            dense,
        } => infer(g, model, input, input_kind, output.as_deref(), dense),
        Command::Synth {
            pattern,
            rate,
            duration,
            ref output,
            ref sidecar,
            sidecar_window,
        } => {
            let config = SynthConfig {
                pattern: pattern.into(),
                rate,
                duration,
                seed: g.seed,
                window_us: sidecar_window,
            };
            synth(g, &config, output, sidecar.clone())
        }
        Command::Bench {
            workload,
            events,
            ref model,
            runs,
        } => bench(g, workload, events, model.as_deref(), runs),
    }
}

fn read_input(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::new(Exit::Io, format!("{}: {e}", path.display())))
}

fn create(path: &Path) -> Result<BufWriter<fs::File>, CliError> {
    fs::File::create(path)
        .map(BufWriter::new)
        .map_err(|e| CliError::new(Exit::Io, format!("{}: {e}", path.display())))
}

fn decode_error(e: DecodeError) -> CliError {
    CliError::new(Exit::Decode, e.to_string())
}

fn run_error(e: RunError) -> CliError {
    match e {
        RunError::Decode(e) => decode_error(e),
        RunError::Infer(e) => CliError::new(Exit::Shape, e.to_string()),
        RunError::SinkClosed => CliError::new(Exit::Io, e.to_string()),
    }
}

fn model_error(e: ModelError) -> CliError {
    match e {
        ModelError::Io(_) => CliError::new(Exit::Io, format!("model: {e}")),
        _ => CliError::new(Exit::Format, format!("model: {e}")),
    }
}

fn frame_file_error(e: FrameFileError) -> CliError {
    match e {
        FrameFileError::Io(e) => e.into(),
        e => CliError::new(Exit::Format, e.to_string()),
    }
}

/// Builds the framer configuration and geometry from the global flags.
pub fn framer_setup(g: &GlobalArgs) -> Result<(FramerConfig, GridGeometry), CliError> {
    let usage = |m: String| CliError::new(Exit::Usage, m);
    let in_res = parse_resolution(&g.in_res).map_err(|e| usage(e.to_string()))?;
    let out_res = parse_resolution(&g.out_res).map_err(|e| usage(e.to_string()))?;
    let geometry = GridGeometry::new(in_res, out_res)
        .map_err(|e| CliError::new(Exit::Config, e.to_string()))?;
    let mode = match g.mode {
        ModeArg::ConstEvent => {
            if g.window.is_some() {
                return Err(usage("--window applies only to --mode const-time".into()));
            }
            AccumulationMode::ConstantEvent(g.n_events.unwrap_or(homi::framer::DEFAULT_EVENTS_PER_FRAME))
        }
        ModeArg::ConstTime => {
            if g.n_events.is_some() {
                return Err(usage("--n-events applies only to --mode const-event".into()));
            }
            AccumulationMode::ConstantTime(g.window.unwrap_or(10_000))
        }
    };
    let mut config = FramerConfig {
        mode,
        surface: SurfaceConfig {
            tau_shift: g.tau,
            ..SurfaceConfig::new(g.repr.into())
        },
        channels: g.channels,
        queue_capacity: g.queue_cap,
        drop_policy: g.drop_policy.into(),
        ..FramerConfig::default()
    }
    .with_default_quantizer(&geometry);
    if let Some(scale) = g.scale {
        config.surface.scale = scale;
    }
    if let Some(shift) = g.shift {
        config.surface.shift = shift;
    }
    config
        .validate()
        .map_err(|e| CliError::new(Exit::Config, e.to_string()))?;
    for w in config.warnings(&geometry) {
        eprintln!("warning: {w}");
    }
    Ok((config, geometry))
}

fn run_options(g: &GlobalArgs, keep_frames: bool) -> RunOptions {
    RunOptions {
        threaded: !g.single_thread,
        keep_frames,
        ..RunOptions::default()
    }
}

fn decode(
    g: &GlobalArgs,
    input: &Path,
    output: Option<&Path>,
    format: EventFormat,
) -> Result<(), CliError> {
    let bytes = read_input(input)?;
    let started = Instant::now();
    let mut decoder = Decoder::new();
    let mut events = Vec::with_capacity(bytes.len() / 2);
    decoder.feed(&bytes, &mut events);
    let stats = decoder.finish().map_err(decode_error)?;
    let elapsed = started.elapsed();

    let mut sink: Box<dyn Write> = match output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    match format {
        EventFormat::Csv => write_csv(&mut sink, &events)?,
        EventFormat::Bin => write_bin(&mut sink, &events)?,
    }
    sink.flush()?;
    drop(sink);

    let report = RunReport {
        command: "decode",
        timings_ms: TimingsMs {
            decode: elapsed.as_secs_f64() * 1e3,
            wall: elapsed.as_secs_f64() * 1e3,
            ..TimingsMs::default()
        },
        events: stats.events_emitted,
        events_per_sec: per_second(stats.events_emitted, elapsed),
        decode: Some(stats),
        ..RunReport::default()
    };
    ReportSink::open(g.report.as_deref(), output.is_none())?.emit(&report)?;
    Ok(())
}

fn write_csv(w: &mut dyn Write, events: &[Event]) -> io::Result<()> {
    writeln!(w, "x,y,p,t")?;
    for e in events {
        writeln!(w, "{},{},{},{}", e.x, e.y, e.p.index(), e.t)?;
    }
    Ok(())
}

/// Nine bytes per event: x u16, y u16, p u8, t u32, little-endian.
fn write_bin(w: &mut dyn Write, events: &[Event]) -> io::Result<()> {
    for e in events {
        w.write_all(&e.x.to_le_bytes())?;
        w.write_all(&e.y.to_le_bytes())?;
        w.write_all(&[e.p.index() as u8])?;
        w.write_all(&e.t.to_le_bytes())?;
    }
    Ok(())
}

fn stream(
    g: &GlobalArgs,
    bytes: &[u8],
    model: Option<&QuantizedModel>,
    executor: Executor,
    keep_frames: bool,
) -> Result<RunOutput, CliError> {
    let (config, geometry) = framer_setup(g)?;
    let mut framer = Framer::new(config, geometry).map_err(|e| CliError::new(Exit::Config, e.to_string()))?;
    run_stream(bytes, &mut framer, model, executor, run_options(g, keep_frames)).map_err(run_error)
}

fn frame(g: &GlobalArgs, input: &Path, output: &Path) -> Result<(), CliError> {
    let bytes = read_input(input)?;
    let out = stream(g, &bytes, None, Executor::default(), true)?;
    let mut file = create(output)?;
    for f in &out.frames {
        write_frame(&mut file, f)?;
    }
    file.flush()?;
    ReportSink::open(g.report.as_deref(), false)?.emit(&RunReport::from_run("frame", &out))?;
    Ok(())
}

#[derive(Serialize)]
struct PredictionLine<'a> {
    index: u32,
    t_start: u32,
    t_end: u32,
    event_count: u32,
    dropped: bool,
    class: usize,
    logits: &'a [i32],
}

fn infer(
    g: &GlobalArgs,
    model_path: &Path,
    input: &Path,
    kind: InputKind,
    output: Option<&Path>,
    dense: bool,
) -> Result<(), CliError> {
    let model = load_model(model_path).map_err(model_error)?;
    let executor = if dense { Executor::dense() } else { Executor::default() };
    let bytes = read_input(input)?;
    let frames_input = match kind {
        InputKind::Frames => true,
        InputKind::Raw => false,
        InputKind::Auto => bytes.starts_with(MAGIC),
    };

    let mut lines: Box<dyn Write> = match output {
        Some(p) => Box::new(create(p)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    let mut emit = |index, t_start, t_end, event_count, dropped, p: &Prediction| {
        let line = PredictionLine {
            index,
            t_start,
            t_end,
            event_count,
            dropped,
            class: p.class_id,
            logits: &p.logits,
        };
        serde_json::to_writer(&mut lines, &line).map_err(io::Error::other)?;
        writeln!(lines)
    };

    let report = if frames_input {
        let frames = decode_frames(&bytes).map_err(frame_file_error)?;
        let started = Instant::now();
        let mut latencies = Vec::with_capacity(frames.len());
        let mut classes = std::collections::BTreeMap::new();
        let mut events = 0u64;
        for f in &frames {
            let t = Instant::now();
            let p = executor
                .infer(&model, &Tensor3::from(f))
                .map_err(|e: InferError| CliError::new(Exit::Shape, e.to_string()))?;
            latencies.push(t.elapsed());
            *classes.entry(p.class_id).or_insert(0) += 1;
            events += f.event_count as u64;
            emit(f.index, f.t_start, f.t_end, f.event_count, f.dropped, &p)?;
        }
        let wall = started.elapsed();
        let infer_total: Duration = latencies.iter().sum();
        RunReport {
            command: "infer",
            timings_ms: TimingsMs {
                infer: infer_total.as_secs_f64() * 1e3,
                wall: wall.as_secs_f64() * 1e3,
                ..TimingsMs::default()
            },
            events,
            frames: frames.len() as u64,
            events_per_sec: per_second(events, wall),
            frames_per_sec: per_second(frames.len() as u64, wall),
            infer_latency_ms: Percentiles::of(&latencies),
            predictions: classes,
            ..RunReport::default()
        }
    } else {
        let out = stream(g, &bytes, Some(&model), executor, false)?;
        for r in &out.records {
            let p = r.prediction.as_ref().expect("model attached");
            emit(r.index, r.t_start, r.t_end, r.event_count, r.dropped, p)?;
        }
        RunReport::from_run("infer", &out)
    };
    lines.flush()?;
    drop(lines);
    ReportSink::open(g.report.as_deref(), output.is_none())?.emit(&report)?;
    Ok(())
}

fn synth(
    g: &GlobalArgs,
    config: &SynthConfig,
    output: &Path,
    sidecar: Option<PathBuf>,
) -> Result<(), CliError> {
    let (bytes, report) = synth_stream(config).map_err(|e| CliError::new(Exit::Usage, e.to_string()))?;
    fs::write(output, &bytes)?;
    let sidecar = sidecar.unwrap_or_else(|| {
        let mut name = output.as_os_str().to_owned();
        name.push(".json");
        PathBuf::from(name)
    });
    let json = serde_json::to_string_pretty(&report).map_err(io::Error::other)?;
    fs::write(&sidecar, json + "\n")?;
    ReportSink::open(g.report.as_deref(), false)?.emit(&report)?;
    Ok(())
}

#[derive(Serialize)]
struct BenchSummary {
    command: &'static str,
    workload: &'static str,
    runs: usize,
    events_per_sec_min: f64,
    events_per_sec_max: f64,
    /// Relative spread between the slowest and fastest run.
    spread: f64,
}

fn bench(
    g: &GlobalArgs,
    workload: Workload,
    events: usize,
    model_path: Option<&Path>,
    runs: usize,
) -> Result<(), CliError> {
    let (config, geometry) = framer_setup(g)?;
    // keep the stream inside one 24-bit timestamp period
    let rate = (events as f64 / 16.0).max(5e6);
    let synth = SynthConfig {
        pattern: homi::synth::Pattern::MovingBar,
        rate,
        duration: events as f64 / rate,
        seed: g.seed,
        window_us: 100_000,
    };
    let (bytes, _) = synth_stream(&synth).map_err(|e| CliError::new(Exit::Usage, e.to_string()))?;
    let model = match model_path {
        Some(p) => load_model(p).map_err(model_error)?,
        None => {
            let mut topology = homi_net16(config.channels);
            topology.input_height = geometry.out_height;
            topology.input_width = geometry.out_width;
            QuantizedModel::random(&topology, g.seed)
        }
    };
    let workloads: &[Workload] = match workload {
        Workload::All => &[Workload::DecodeOnly, Workload::FrameOnly, Workload::Full],
        Workload::DecodeOnly => &[Workload::DecodeOnly],
        Workload::FrameOnly => &[Workload::FrameOnly],
        Workload::Full => &[Workload::Full],
    };
    let mut sink = ReportSink::open(g.report.as_deref(), false)?;
    for &w in workloads {
        let name = match w {
            Workload::DecodeOnly => "decode-only",
            Workload::FrameOnly => "frame-only",
            _ => "full",
        };
        let mut rates = Vec::with_capacity(runs);
        for run in 0..runs.max(1) {
            let mut report = match w {
                Workload::DecodeOnly => bench_decode(&bytes)?,
                _ => {
                    let mut framer = Framer::new(config.clone(), geometry.clone())
                        .map_err(|e| CliError::new(Exit::Config, e.to_string()))?;
                    let model = (w == Workload::Full).then_some(&model);
                    let out = run_stream(&bytes, &mut framer, model, Executor::default(), run_options(g, false))
                        .map_err(run_error)?;
                    let mut r = RunReport::from_run("bench", &out);
                    r.predictions = histogram(&out.records);
                    r
                }
            };
            report.command = "bench";
            report.workload = Some(name);
            report.run = Some(run);
            rates.push(report.events_per_sec);
            sink.emit(&report)?;
        }
        if rates.len() > 1 {
            let min = rates.iter().copied().fold(f64::INFINITY, f64::min);
            let max = rates.iter().copied().fold(0.0, f64::max);
            sink.emit(&BenchSummary {
                command: "bench",
                workload: name,
                runs: rates.len(),
                events_per_sec_min: min,
                events_per_sec_max: max,
                spread: (max - min) / max.max(1e-9),
            })?;
        }
    }
    Ok(())
}

fn bench_decode(bytes: &[u8]) -> Result<RunReport, CliError> {
    let started = Instant::now();
    let mut decoder = Decoder::new();
    let mut batch = Vec::new();
    for chunk in bytes.chunks(64 * 1024) {
        batch.clear();
        decoder.feed(chunk, &mut batch);
    }
    let stats = decoder.finish().map_err(decode_error)?;
    let wall = started.elapsed();
    Ok(RunReport {
        command: "bench",
        timings_ms: TimingsMs {
            decode: wall.as_secs_f64() * 1e3,
            wall: wall.as_secs_f64() * 1e3,
            ..TimingsMs::default()
        },
        events: stats.events_emitted,
        events_per_sec: per_second(stats.events_emitted, wall),
        decode: Some(stats),
        ..RunReport::default()
    })
}
