use insitu_stream::frame::{encode_payload, read_frame, write_frame};
use insitu_stream::{Frame, FrameDecoder, FrameType};
use proptest::prelude::*;

const KINDS: [FrameType; 9] = [
    FrameType::Hello,
    FrameType::StepBegin,
    FrameType::Geometry,
    FrameType::Similarity,
    FrameType::PruneProposal,
    FrameType::PruneCommand,
    FrameType::PruneAck,
    FrameType::StepEnd,
    FrameType::Bye,
];

fn frame_strategy() -> impl Strategy<Value = Frame> {
    (
        0..KINDS.len(),
        any::<u32>(),
        any::<u32>(),
        prop::collection::vec(-1e6f32..1e6, 0..50),
        "[a-z \\\\\"é✓]{0,20}",
    )
        .prop_map(|(k, step, seq, values, text)| {
            let body = serde_json::json!({ "values": values, "text": text });
            Frame::new(KINDS[k], step as u64, seq as u64, &body).unwrap()
        })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn concatenated_frames_split_back_exactly(
        frames in prop::collection::vec(frame_strategy(), 0..12),
        cuts in prop::collection::vec(1usize..64, 1..20),
    ) {
        let payloads: Vec<Vec<u8>> = frames.iter().map(|f| f.to_payload().unwrap()).collect();
        let mut wire = Vec::new();
        for p in &payloads {
            wire.extend(encode_payload(p).unwrap());
        }

        // Feed the wire in arbitrary chunk sizes.
        let mut decoder = FrameDecoder::new();
        let mut got = Vec::new();
        let mut at = 0;
        let mut i = 0;
        while at < wire.len() {
            let end = (at + cuts[i % cuts.len()]).min(wire.len());
            decoder.feed(&wire[at..end]);
            while let Some(p) = decoder.next_payload().unwrap() {
                got.push(p);
            }
            at = end;
            i += 1;
        }
        prop_assert_eq!(decoder.pending(), 0);
        prop_assert_eq!(&got, &payloads);
        for (p, f) in got.iter().zip(&frames) {
            prop_assert_eq!(&Frame::from_payload(p).unwrap(), f);
        }

        let mut reader = &wire[..];
        for f in &frames {
            let next = read_frame(&mut reader).unwrap();
            prop_assert_eq!(next.as_ref(), Some(f));
        }
        prop_assert!(read_frame(&mut reader).unwrap().is_none());
    }
}

#[test]
fn prefix_counts_payload_bytes_not_chars() {
    let f = Frame::new(FrameType::Bye, 1, 2, &serde_json::json!({"reason": "ünïcode"})).unwrap();
    let mut wire = Vec::new();
    write_frame(&mut wire, &f).unwrap();
    let n = u32::from_be_bytes(wire[..4].try_into().unwrap()) as usize;
    assert_eq!(n, wire.len() - 4);
    assert_eq!(n, f.to_payload().unwrap().len());
}
