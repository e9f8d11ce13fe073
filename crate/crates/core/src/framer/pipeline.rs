//! Driving a [`Framer`] from an event source into a bounded frame queue.

use std::collections::VecDeque;
use std::fmt;

use crossbeam_channel::{Receiver, Sender, TryRecvError, TrySendError};

use super::{DropPolicy, Frame, Framer, FramerStats};
use crate::evt::Event;

/// Outcome of polling an [`EventSource`].
#[derive(Debug)]
pub enum SourcePoll<E> {
    Ready(Event),
    /// Nothing available right now; the source is not finished.
    Pending,
    Done,
    Failed(E),
}

pub trait EventSource {
    type Error;

    fn poll_event(&mut self) -> SourcePoll<Self::Error>;

    /// Blocks until the next poll can make progress.
    fn wait(&mut self) {}
}

/// Adapts an iterator of fallible events. Never pending.
pub struct IterSource<I>(pub I);

impl<I, E> EventSource for IterSource<I>
where
    I: Iterator<Item = Result<Event, E>>,
{
    type Error = E;

    fn poll_event(&mut self) -> SourcePoll<E> {
        match self.0.next() {
            Some(Ok(e)) => SourcePoll::Ready(e),
            Some(Err(e)) => SourcePoll::Failed(e),
            None => SourcePoll::Done,
        }
    }
}

/// Receives event batches from another thread.
pub struct ChannelSource {
    rx: Receiver<Vec<Event>>,
    batch: std::vec::IntoIter<Event>,
    closed: bool,
}

impl ChannelSource {
    pub fn new(rx: Receiver<Vec<Event>>) -> Self {
        Self {
            rx,
            batch: Vec::new().into_iter(),
            closed: false,
        }
    }
}

impl EventSource for ChannelSource {
    type Error = std::convert::Infallible;

    fn poll_event(&mut self) -> SourcePoll<Self::Error> {
        loop {
            if let Some(e) = self.batch.next() {
                return SourcePoll::Ready(e);
            }
            if self.closed {
                return SourcePoll::Done;
            }
            match self.rx.try_recv() {
                Ok(batch) => self.batch = batch.into_iter(),
                Err(TryRecvError::Empty) => return SourcePoll::Pending,
                Err(TryRecvError::Disconnected) => self.closed = true,
            }
        }
    }

    fn wait(&mut self) {
        match self.rx.recv() {
            Ok(batch) => self.batch = batch.into_iter(),
            Err(_) => self.closed = true,
        }
    }
}

/// The consumer side went away.
#[derive(Debug, Clone, Copy, PartialEq, Eq, thiserror::Error)]
#[error("frame sink closed")]
pub struct SinkClosed;

pub trait FrameSink {
    /// Hands the frame back when there is no room.
    fn try_push(&mut self, frame: Frame) -> Result<(), Frame>;

    fn push_blocking(&mut self, frame: Frame) -> Result<(), SinkClosed>;
}

impl FrameSink for Sender<Frame> {
    fn try_push(&mut self, frame: Frame) -> Result<(), Frame> {
        match self.try_send(frame) {
            Ok(()) => Ok(()),
            Err(TrySendError::Full(f)) | Err(TrySendError::Disconnected(f)) => Err(f),
        }
    }

    fn push_blocking(&mut self, frame: Frame) -> Result<(), SinkClosed> {
        self.send(frame).map_err(|_| SinkClosed)
    }
}

/// Unbounded in-memory sink.
#[derive(Debug, Default)]
pub struct VecSink(pub Vec<Frame>);

impl FrameSink for VecSink {
    fn try_push(&mut self, frame: Frame) -> Result<(), Frame> {
        self.0.push(frame);
        Ok(())
    }

    fn push_blocking(&mut self, frame: Frame) -> Result<(), SinkClosed> {
        self.0.push(frame);
        Ok(())
    }
}

impl FrameSink for VecDeque<Frame> {
    fn try_push(&mut self, frame: Frame) -> Result<(), Frame> {
        self.push_back(frame);
        Ok(())
    }

    fn push_blocking(&mut self, frame: Frame) -> Result<(), SinkClosed> {
        self.push_back(frame);
        Ok(())
    }
}

#[derive(Debug)]
pub enum PipelineError<E> {
    Source { error: E, stats: FramerStats },
    SinkClosed { stats: FramerStats },
}

impl<E> PipelineError<E> {
    /// Statistics up to the failure.
    pub fn stats(&self) -> &FramerStats {
        match self {
            PipelineError::Source { stats, .. } | PipelineError::SinkClosed { stats } => stats,
        }
    }
}

impl<E: fmt::Display> fmt::Display for PipelineError<E> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PipelineError::Source { error, .. } => write!(f, "event source failed: {error}"),
            PipelineError::SinkClosed { .. } => f.write_str("frame sink closed"),
        }
    }
}

impl<E: fmt::Debug + fmt::Display> std::error::Error for PipelineError<E> {}

/// The sealed frame waiting for queue space, i.e. the retired half of the
/// ping-pong pair.
struct Outbox<'a, S> {
    sink: &'a mut S,
    policy: DropPolicy,
    waiting: Option<Frame>,
    gap: bool,
}

impl<S: FrameSink> Outbox<'_, S> {
    fn try_deliver(&mut self, stats: &mut FramerStats) {
        if let Some(frame) = self.waiting.take() {
            match self.sink.try_push(frame) {
                Ok(()) => stats.frames_emitted += 1,
                Err(frame) => self.waiting = Some(frame),
            }
        }
    }

    fn accept(&mut self, frame: Frame, stats: &mut FramerStats) -> Result<(), SinkClosed> {
        self.try_deliver(stats);
        if let Some(waiting) = self.waiting.take() {
            match self.policy {
                DropPolicy::Block => {
                    stats.holds_output_full += 1;
                    self.sink.push_blocking(waiting)?;
                    stats.frames_emitted += 1;
                }
                DropPolicy::DropFrame => {
                    self.waiting = Some(waiting);
                    stats.frames_dropped += 1;
                    stats.events_in_dropped_frames += frame.event_count as u64;
                    self.gap = true;
                    return Ok(());
                }
            }
        }
        let mut frame = frame;
        frame.dropped = std::mem::take(&mut self.gap);
        self.waiting = Some(frame);
        self.try_deliver(stats);
        Ok(())
    }

    fn finish(&mut self, stats: &mut FramerStats) -> Result<(), SinkClosed> {
        self.try_deliver(stats);
        if let Some(frame) = self.waiting.take() {
            match self.policy {
                DropPolicy::Block => {
                    stats.holds_output_full += 1;
                    self.sink.push_blocking(frame)?;
                    stats.frames_emitted += 1;
                }
                DropPolicy::DropFrame => {
                    stats.frames_dropped += 1;
                    stats.events_in_dropped_frames += frame.event_count as u64;
                }
            }
        }
        Ok(())
    }
}

/// Feeds every event from `source` through `framer` into `sink`, then flushes.
///
/// A sealed frame that does not fit waits while the next frame accumulates.
/// If another frame seals before it leaves, the drop policy decides: `Block`
/// waits for the consumer, `DropFrame` discards the newly sealed frame.
pub fn run_pipeline<S, K>(
    source: &mut S,
    framer: &mut Framer,
    sink: &mut K,
) -> Result<FramerStats, PipelineError<S::Error>>
where
    S: EventSource,
    K: FrameSink,
{
    let mut stats = *framer.stats();
    let mut outbox = Outbox {
        sink,
        policy: framer.config().drop_policy,
        waiting: None,
        gap: false,
    };

    let sealed_stats = |framer: &Framer, stats: &mut FramerStats| {
        let f = framer.stats();
        stats.frames_sealed = f.frames_sealed;
        stats.partial_frames = f.partial_frames;
        stats.events_integrated = f.events_integrated;
        stats.events_out_of_bounds = f.events_out_of_bounds;
        stats.empty_windows_skipped = f.empty_windows_skipped;
    };

    loop {
        match source.poll_event() {
            SourcePoll::Ready(event) => {
                if outbox.waiting.is_some() {
                    outbox.try_deliver(&mut stats);
                    if outbox.waiting.is_some() {
                        stats.events_while_blocked += 1;
                    }
                }
                for frame in framer.push_event(event) {
                    if outbox.accept(frame, &mut stats).is_err() {
                        sealed_stats(framer, &mut stats);
                        *framer.stats_mut() = stats;
                        return Err(PipelineError::SinkClosed { stats });
                    }
                }
            }
            SourcePoll::Pending => {
                stats.holds_input_empty += 1;
                outbox.try_deliver(&mut stats);
                source.wait();
            }
            SourcePoll::Done => break,
            SourcePoll::Failed(error) => {
                sealed_stats(framer, &mut stats);
                *framer.stats_mut() = stats;
                return Err(PipelineError::Source { error, stats });
            }
        }
    }

    let mut closed = false;
    if let Some(frame) = framer.flush() {
        closed |= outbox.accept(frame, &mut stats).is_err();
    }
    closed |= !closed && outbox.finish(&mut stats).is_err();
    sealed_stats(framer, &mut stats);
    *framer.stats_mut() = stats;
    if closed {
        return Err(PipelineError::SinkClosed { stats });
    }
    Ok(stats)
}
