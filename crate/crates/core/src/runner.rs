//! End-to-end execution: wire bytes in, frames and predictions out.
//!
//! The threaded mode runs decode, framing and inference on three threads
//! joined by bounded channels. The inline mode runs the same stages on the
//! calling thread. With the `Block` drop policy both produce identical
//! frames and predictions.

use std::time::{Duration, Instant};

use crossbeam_channel::bounded;
use thiserror::Error;

use crate::evt::{DecodeError, DecodeStats, Decoder, Event};
use crate::framer::{
    run_pipeline, ChannelSource, EventSource, Frame, FrameSink, Framer, FramerStats,
    IterSource, PipelineError, SinkClosed, SourcePoll,
};
use crate::inference::{Executor, InferError, Prediction, QuantizedModel, Tensor3};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RunOptions {
    pub threaded: bool,
    /// Bytes handed to the decoder per batch.
    pub chunk_bytes: usize,
    /// Keep every emitted frame in [`RunOutput::frames`].
    pub keep_frames: bool,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            threaded: true,
            chunk_bytes: 64 * 1024,
            keep_frames: false,
        }
    }
}

/// Busy time per stage, excluding time spent waiting on neighbouring
/// stages. Quantization is part of framing.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct StageTimings {
    pub decode: Duration,
    pub frame: Duration,
    pub quantize: Duration,
    pub infer: Duration,
    pub wall: Duration,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrameRecord {
    pub index: u32,
    pub t_start: u32,
    pub t_end: u32,
    pub event_count: u32,
    pub dropped: bool,
    pub checksum: u64,
    pub prediction: Option<Prediction>,
    pub infer_time: Duration,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub decode: DecodeStats,
    pub framer: FramerStats,
    pub timings: StageTimings,
    pub records: Vec<FrameRecord>,
    pub frames: Vec<Frame>,
}

impl RunOutput {
    pub fn events_per_second(&self) -> f64 {
        self.decode.events_emitted as f64 / self.timings.wall.as_secs_f64().max(1e-12)
    }

    pub fn frames_per_second(&self) -> f64 {
        self.records.len() as f64 / self.timings.wall.as_secs_f64().max(1e-12)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RunError {
    #[error(transparent)]
    Decode(#[from] DecodeError),
    #[error(transparent)]
    Infer(#[from] InferError),
    #[error("frame consumer stopped early")]
    SinkClosed,
}

struct Consumer<'a> {
    model: Option<&'a QuantizedModel>,
    executor: Executor,
    keep_frames: bool,
    records: Vec<FrameRecord>,
    frames: Vec<Frame>,
    infer_time: Duration,
}

impl Consumer<'_> {
    fn take(&mut self, frame: Frame) -> Result<(), InferError> {
        let started = Instant::now();
        let prediction = match self.model {
            Some(model) => Some(self.executor.infer(model, &Tensor3::from(&frame))?),
            None => None,
        };
        let infer_time = started.elapsed();
        self.infer_time += infer_time;
        self.records.push(FrameRecord {
            index: frame.index,
            t_start: frame.t_start,
            t_end: frame.t_end,
            event_count: frame.event_count,
            dropped: frame.dropped,
            checksum: frame.checksum(),
            prediction,
            infer_time,
        });
        if self.keep_frames {
            self.frames.push(frame);
        }
        Ok(())
    }
}

struct InlineSink<'c, 'a> {
    consumer: &'c mut Consumer<'a>,
    error: Option<InferError>,
}

impl FrameSink for InlineSink<'_, '_> {
    fn try_push(&mut self, frame: Frame) -> Result<(), Frame> {
        // an error here surfaces through push_blocking on the next frame
        if self.error.is_none() {
            if let Err(e) = self.consumer.take(frame) {
                self.error = Some(e);
            }
        }
        Ok(())
    }

    fn push_blocking(&mut self, frame: Frame) -> Result<(), SinkClosed> {
        let _ = self.try_push(frame);
        match self.error {
            Some(_) => Err(SinkClosed),
            None => Ok(()),
        }
    }
}

struct TimedSource<S> {
    inner: S,
    waited: Duration,
}

impl<S: EventSource> EventSource for TimedSource<S> {
    type Error = S::Error;

    fn poll_event(&mut self) -> SourcePoll<S::Error> {
        self.inner.poll_event()
    }

    fn wait(&mut self) {
        let started = Instant::now();
        self.inner.wait();
        self.waited += started.elapsed();
    }
}

struct TimedSink<K> {
    inner: K,
    blocked: Duration,
}

impl<K: FrameSink> FrameSink for TimedSink<K> {
    fn try_push(&mut self, frame: Frame) -> Result<(), Frame> {
        self.inner.try_push(frame)
    }

    fn push_blocking(&mut self, frame: Frame) -> Result<(), SinkClosed> {
        let started = Instant::now();
        let result = self.inner.push_blocking(frame);
        self.blocked += started.elapsed();
        result
    }
}

fn check_shape(framer: &Framer, model: Option<&QuantizedModel>) -> Result<(), InferError> {
    if let Some(model) = model {
        let g = framer.geometry();
        let expected = (model.input_channels, model.input_height, model.input_width);
        let got = (framer.config().channels, g.out_height, g.out_width);
        if expected != got {
            return Err(InferError::ShapeMismatch { expected, got });
        }
    }
    Ok(())
}

/// Decodes `bytes`, frames the events and optionally classifies every frame.
pub fn run_stream(
    bytes: &[u8],
    framer: &mut Framer,
    model: Option<&QuantizedModel>,
    executor: Executor,
    options: RunOptions,
) -> Result<RunOutput, RunError> {
    check_shape(framer, model)?;
    if bytes.len() % 2 == 1 {
        return Err(DecodeError::OddLength {
            offset: bytes.len() as u64 - 1,
        }
        .into());
    }
    let mut consumer = Consumer {
        model,
        executor,
        keep_frames: options.keep_frames,
        records: Vec::new(),
        frames: Vec::new(),
        infer_time: Duration::ZERO,
    };
    let seal_before = framer.seal_time();
    let started = Instant::now();
    let chunk = options.chunk_bytes.max(2);

    let (decode, decode_time, framer_stats, frame_time) = if options.threaded {
        run_threaded(bytes, chunk, framer, &mut consumer)?
    } else {
        let t0 = Instant::now();
        let mut decoder = Decoder::new();
        let mut events = Vec::with_capacity(bytes.len() / 2);
        decoder.feed(bytes, &mut events);
        let decode = decoder.finish()?;
        let decode_time = t0.elapsed();

        let t1 = Instant::now();
        let mut source = IterSource(events.into_iter().map(Ok::<Event, std::convert::Infallible>));
        let mut sink = InlineSink {
            consumer: &mut consumer,
            error: None,
        };
        let result = run_pipeline(&mut source, framer, &mut sink);
        if let Some(e) = sink.error.take() {
            return Err(e.into());
        }
        let stats = match result {
            Ok(stats) => stats,
            Err(PipelineError::Source { error, .. }) => match error {},
            Err(PipelineError::SinkClosed { .. }) => return Err(RunError::SinkClosed),
        };
        let frame_time = t1.elapsed().saturating_sub(consumer.infer_time);
        (decode, decode_time, stats, frame_time)
    };

    let timings = StageTimings {
        decode: decode_time,
        frame: frame_time,
        quantize: framer.seal_time() - seal_before,
        infer: consumer.infer_time,
        wall: started.elapsed(),
    };
    Ok(RunOutput {
        decode,
        framer: framer_stats,
        timings,
        records: consumer.records,
        frames: consumer.frames,
    })
}

type StageResult = (DecodeStats, Duration, FramerStats, Duration);

fn run_threaded(
    bytes: &[u8],
    chunk: usize,
    framer: &mut Framer,
    consumer: &mut Consumer<'_>,
) -> Result<StageResult, RunError> {
    let (event_tx, event_rx) = bounded::<Vec<Event>>(8);
    let (frame_tx, frame_rx) = bounded::<Frame>(framer.config().queue_capacity);

    std::thread::scope(|scope| {
        let decoder = scope.spawn(move || {
            let mut decoder = Decoder::new();
            let mut busy = Duration::ZERO;
            for piece in bytes.chunks(chunk) {
                let t = Instant::now();
                let mut batch = Vec::with_capacity(piece.len() / 2);
                decoder.feed(piece, &mut batch);
                busy += t.elapsed();
                if event_tx.send(batch).is_err() {
                    break;
                }
            }
            (decoder.finish(), busy)
        });

        let framing = scope.spawn(move || {
            let started = Instant::now();
            let mut source = TimedSource {
                inner: ChannelSource::new(event_rx),
                waited: Duration::ZERO,
            };
            let mut sink = TimedSink {
                inner: frame_tx,
                blocked: Duration::ZERO,
            };
            let result = run_pipeline(&mut source, framer, &mut sink);
            let busy = started
                .elapsed()
                .saturating_sub(source.waited + sink.blocked);
            (result, busy)
        });

        let mut infer_error = None;
        for frame in frame_rx.iter() {
            if let Err(e) = consumer.take(frame) {
                infer_error = Some(e);
                break;
            }
        }
        drop(frame_rx);

        let (framed, frame_time) = framing.join().expect("framer thread panicked");
        let (decoded, decode_time) = decoder.join().expect("decoder thread panicked");
        if let Some(e) = infer_error {
            return Err(e.into());
        }
        let decode = decoded?;
        let stats = match framed {
            Ok(stats) => stats,
            Err(PipelineError::Source { error, .. }) => match error {},
            Err(PipelineError::SinkClosed { .. }) => return Err(RunError::SinkClosed),
        };
        Ok((decode, decode_time, stats, frame_time))
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::framer::{AccumulationMode, FramerConfig};
    use crate::geometry::GridGeometry;
    use crate::inference::homi_net16;
    use crate::synth::{synth_stream, Pattern, SynthConfig};

    fn framer(channels: usize) -> Framer {
        let geometry = GridGeometry::default();
        let config = FramerConfig {
            mode: AccumulationMode::ConstantEvent(5_000),
            channels,
            ..FramerConfig::default()
        }
        .with_default_quantizer(&geometry);
        Framer::new(config, geometry).unwrap()
    }

    #[test]
    fn threaded_matches_inline() {
        let (bytes, _) = synth_stream(&SynthConfig {
            pattern: Pattern::BlobOrbit,
            duration: 0.05,
            ..SynthConfig::default()
        })
        .unwrap();
        let model = QuantizedModel::random(&homi_net16(2), 3);
        let run = |threaded| {
            let options = RunOptions {
                threaded,
                chunk_bytes: 4096,
                keep_frames: true,
            };
            run_stream(&bytes, &mut framer(2), Some(&model), Executor::default(), options)
                .unwrap()
        };
        let (a, b) = (run(true), run(false));
        assert_eq!(a.records.len(), 10);
        assert_eq!(a.decode, b.decode);
        assert_eq!(a.framer.frames_emitted, b.framer.frames_emitted);
        assert_eq!(a.framer.events_integrated, b.framer.events_integrated);
        assert_eq!(a.frames, b.frames);
        let strip = |r: &FrameRecord| (r.index, r.checksum, r.prediction.clone());
        assert_eq!(
            a.records.iter().map(strip).collect::<Vec<_>>(),
            b.records.iter().map(strip).collect::<Vec<_>>()
        );
    }

    #[test]
    fn shape_mismatch_is_reported_before_running() {
        let model = QuantizedModel::random(&homi_net16(2), 0);
        let err = run_stream(&[], &mut framer(8), Some(&model), Executor::default(), RunOptions::default())
            .unwrap_err();
        assert!(matches!(err, RunError::Infer(InferError::ShapeMismatch { .. })));
    }

    #[test]
    fn odd_length_is_rejected() {
        let err = run_stream(&[0; 3], &mut framer(2), None, Executor::default(), RunOptions::default())
            .unwrap_err();
        assert_eq!(err, RunError::Decode(DecodeError::OddLength { offset: 2 }));
    }
}
