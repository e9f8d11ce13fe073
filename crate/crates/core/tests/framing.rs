mod common;

use common::*;
use homi::evt::Event;
use homi::frame_file::{decode_frames, encode_frames};
use homi::framer::{AccumulationMode, Frame, Framer, FramerConfig};
use homi::geometry::GridGeometry;
use homi::surfaces::{Representation, SurfaceConfig};
use proptest::prelude::*;
use rand::Rng;

fn framer(mode: AccumulationMode, kind: Representation, tau: u32, channels: usize) -> Framer {
    let geometry = GridGeometry::default();
    let config = FramerConfig {
        mode,
        surface: SurfaceConfig {
            tau_shift: tau,
            ..SurfaceConfig::new(kind)
        },
        channels,
        ..FramerConfig::default()
    }
    .with_default_quantizer(&geometry);
    Framer::new(config, geometry).unwrap()
}

fn run(framer: &mut Framer, events: &[Event]) -> Vec<Frame> {
    let mut frames: Vec<Frame> = events.iter().flat_map(|&e| framer.push_event(e)).collect();
    frames.extend(framer.flush());
    frames
}

#[test]
fn constant_time_windows_match_oracle() {
    let mut rng = rng(11);
    for case in 0..12 {
        let step = rng.gen_range(1..400);
        let events = random_stream(&mut rng, 8_000, step);
        let window = rng.gen_range(5_000..200_000u32);
        let kind = Representation::ALL[case % 4];
        let tau = rng.gen_range(8..=18);
        let mut f = framer(AccumulationMode::ConstantTime(window), kind, tau, 2);
        let frames = run(&mut f, &events);

        let first = events[0].t / window;
        let last = events.last().unwrap().t / window;
        assert_eq!(frames.len() as u32, last - first + 1, "case {case}");
        let (scale, shift) = (f.config().surface.scale, f.config().surface.shift);
        let oracle = SurfaceOracle::sensor_128(kind, tau, scale, shift);
        for (k, frame) in frames.iter().enumerate() {
            let start = (first + k as u32) * window;
            let in_window: Vec<Event> =
                events.iter().copied().filter(|e| e.t >= start && e.t < start + window).collect();
            assert_eq!((frame.t_start, frame.t_end), (start, start + window));
            assert_eq!(frame.event_count as usize, in_window.len());
            assert_eq!(frame.data, oracle.frame(&in_window), "case {case} frame {k}");
        }
    }
}

#[test]
fn sub_window_channels_match_oracle() {
    let mut rng = rng(12);
    let events = random_stream(&mut rng, 12_000, 50);
    let n = 4_000;
    for kind in Representation::ALL {
        let oracle = |f: &Framer| {
            SurfaceOracle::sensor_128(kind, 16, f.config().surface.scale, f.config().surface.shift)
        };
        let mut four = framer(AccumulationMode::ConstantEvent(n), kind, 16, 4);
        let mut one = framer(AccumulationMode::ConstantEvent(n), kind, 16, 1);
        let plane = 128 * 128;
        let (o4, o1) = (oracle(&four), oracle(&one));
        for ((a, b), window) in run(&mut four, &events).iter().zip(run(&mut one, &events)).zip(events.chunks(n)) {
            let (early, late) = window.split_at(n / 2);
            let mut expected = o4.frame(early);
            expected.extend(o4.frame(late));
            assert_eq!(a.channels, 4);
            assert_eq!(a.data, expected, "{kind}");
            assert_eq!(b.channels, 1);
            assert_eq!(b.data, o1.frame(window)[..plane], "{kind}");
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn frame_files_round_trip(seed in any::<u64>(), n in 500usize..4_000, kind in 0u8..4) {
        let mut rng = rng(seed);
        let events = random_stream(&mut rng, 6_000, 20);
        let kind = Representation::from_code(kind).unwrap();
        let mut f = framer(AccumulationMode::ConstantEvent(n), kind, 12, 2);
        let frames = run(&mut f, &events);
        let bytes = encode_frames(&frames);
        prop_assert_eq!(decode_frames(&bytes).unwrap(), frames);
    }

    #[test]
    fn integrated_events_are_conserved(seed in any::<u64>(), n in 1usize..3_000) {
        let mut rng = rng(seed);
        let events = random_stream(&mut rng, 5_000, 100);
        let mut f = framer(AccumulationMode::ConstantEvent(n), Representation::Sets, 16, 2);
        let frames = run(&mut f, &events);
        let total: u64 = frames.iter().map(|f| f.event_count as u64).sum();
        prop_assert_eq!(total, 5_000);
        prop_assert_eq!(f.stats().events_integrated, 5_000);
        prop_assert!(frames.iter().rev().skip(1).all(|fr| fr.event_count as usize == n));
    }
}
