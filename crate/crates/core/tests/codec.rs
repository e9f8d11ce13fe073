use homi::evt::{decode_stream, encode_events, Decoder, Event, Polarity};
use proptest::prelude::*;

fn sorted_events() -> impl Strategy<Value = Vec<Event>> {
    prop::collection::vec((0u16..1280, 0u16..720, any::<bool>(), 0u32..50, 0u8..4), 0..400).prop_map(
        |raw| {
            let mut t = 0u32;
            let mut out = Vec::new();
            for (x, y, p, dt, run) in raw {
                t += dt;
                // short runs on one row so vector words appear
                for k in 0..=run as u16 {
                    if x + k * 2 < 1280 {
                        out.push(Event::new(x + k * 2, y, Polarity::from_bit(p), t));
                    }
                }
            }
            out
        },
    )
}

proptest! {
    #[test]
    fn round_trip(events in sorted_events()) {
        let bytes = encode_events(&events).unwrap();
        let (decoded, stats) = decode_stream(&bytes).unwrap();
        prop_assert_eq!(stats.events_emitted as usize, events.len());
        prop_assert_eq!(decoded, events);
    }

    #[test]
    fn chunked_feed_equals_whole(bytes in prop::collection::vec(any::<u8>(), 0..600), cuts in prop::collection::vec(any::<prop::sample::Index>(), 0..8)) {
        let whole = decode_stream(&bytes);
        let mut points: Vec<usize> = cuts.iter().map(|c| c.index(bytes.len() + 1)).collect();
        points.sort_unstable();
        let mut decoder = Decoder::new();
        let mut events = Vec::new();
        let mut start = 0;
        for p in points.into_iter().chain([bytes.len()]) {
            decoder.feed(&bytes[start..p], &mut events);
            start = p;
        }
        match (whole, decoder.finish()) {
            (Ok((expected, s1)), Ok(s2)) => {
                prop_assert_eq!(events, expected);
                prop_assert_eq!(s1, s2);
            }
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "whole {:?} chunked {:?}", a.map(|x| x.1), b),
        }
    }

    #[test]
    fn arbitrary_words_stay_in_bounds(bytes in prop::collection::vec(any::<u8>(), 0..2000)) {
        let even = &bytes[..bytes.len() & !1];
        let (events, stats) = decode_stream(even).unwrap();
        prop_assert_eq!(stats.words_consumed as usize, even.len() / 2);
        prop_assert!(events.iter().all(|e| e.x < 1280 && e.y < 720 && e.t < 1 << 24));
    }
}
