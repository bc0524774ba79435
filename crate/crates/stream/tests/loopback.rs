use std::time::{Duration, Instant};

use insitu_core::cnn::NetworkSpec;
use insitu_core::view::{build_image_grid, build_weight_grid, TrajectoryTrace};
use insitu_core::{grid_layout, PolyData, PrunePlan, Merge, Tensor3, Tensor4, ViewKind};
use insitu_stream::client::Viewer;
use insitu_stream::frame::{read_frame, write_frame};
use insitu_stream::{
    serve, Bye, ClientHello, Frame, FrameType, GeometryMessage, PruneAck, PruneAction, PruneProposal, Published,
    ServerHello, Session, SessionConfig, StepContent,
};

fn hello() -> ServerHello {
    ServerHello {
        protocol_version: 1,
        network: NetworkSpec::simplified_lenet(),
        instrumented_layers: vec![0],
        views: vec![ViewKind::WeightGrid, ViewKind::Trajectory],
    }
}

fn start() -> Session {
    serve("127.0.0.1:0", SessionConfig::new(hello())).unwrap()
}

fn connect(session: &Session) -> Viewer {
    let (viewer, reply) = Viewer::connect(session.local_addr()).unwrap();
    assert_eq!(reply, hello());
    assert!(session.wait_for_viewer(Duration::from_secs(5)));
    viewer
}

fn weights(step: u64) -> Tensor4<f64> {
    Tensor4::from_fn([3, 3, 1, 16], |[p, q, _, k]| ((step as f64 + 1.0) * 0.013 * (p + 2 * q + k) as f64).sin() * 0.1)
}

#[test]
fn handshake_replies_with_layer_list() {
    let session = start();
    let (viewer, reply) = Viewer::connect(session.local_addr()).unwrap();
    assert_eq!(reply.network.layers.len(), 6);
    assert_eq!(reply.protocol_version, 1);
    viewer.bye().unwrap();
}

#[test]
fn wrong_version_gets_bye() {
    let session = start();
    let mut v = Viewer::connect_raw(session.local_addr()).unwrap();
    v.send(FrameType::Hello, &ClientHello { protocol_version: 2 }).unwrap();
    let f = v.next_frame().unwrap().unwrap();
    assert_eq!(f.kind, FrameType::Bye);
    assert_eq!(f.body::<Bye>().unwrap().reason, "unsupported version");
    assert!(v.next_frame().unwrap().is_none());
    assert!(!session.is_connected());
}

#[test]
fn headless_publish_discards() {
    let session = start();
    let content = StepContent::default();
    for step in 1..=50 {
        assert_eq!(session.publish_step(step, &content).unwrap(), Published::Headless);
    }
    let stats = session.finish();
    assert_eq!(stats.frames_sent, 0);
}

#[test]
fn weight_grid_and_trajectory_make_four_frames() {
    let session = start();
    let mut viewer = connect(&session);
    let w = weights(0);
    let pd = build_weight_grid(&w, &grid_layout(16).unwrap()).unwrap();
    let mut trace = TrajectoryTrace::new([0, 1, 2]).unwrap();
    trace.append(&w, 0).unwrap();
    let content = StepContent {
        filter_counts: vec![(0, 16), (2, 32)],
        geometry: vec![
            GeometryMessage::new(ViewKind::WeightGrid, 0, &pd),
            GeometryMessage::new(ViewKind::Trajectory, 0, &trace.to_polydata()),
        ],
        ..StepContent::default()
    };
    assert_eq!(session.publish_step(1, &content).unwrap(), Published::Queued { frames: 4 });
    let mut kinds = Vec::new();
    let mut last_seq = 0;
    while kinds.last() != Some(&FrameType::StepEnd) {
        let f = viewer.next_frame().unwrap().unwrap();
        assert!(f.seq > last_seq);
        last_seq = f.seq;
        assert_eq!(f.step, 1);
        kinds.push(f.kind);
    }
    assert_eq!(
        kinds,
        [FrameType::StepBegin, FrameType::Geometry, FrameType::Geometry, FrameType::StepEnd]
    );
}

#[test]
fn hundred_steps_arrive_intact() {
    let session = start();
    let mut viewer = connect(&session);
    let layout = grid_layout(16).unwrap();
    let mut trace = TrajectoryTrace::new([3, 4, 5]).unwrap();
    let mut sent: Vec<(PolyData, PolyData, PolyData)> = Vec::new();
    let reader = std::thread::spawn(move || {
        let mut groups = Vec::new();
        while let Some(g) = viewer.next_step().unwrap() {
            groups.push(g);
        }
        groups
    });
    for step in 0..100u64 {
        let w = weights(step);
        trace.append(&w, step).unwrap();
        let summed = Tensor3::from_fn([26, 26, 16], |[i, j, k]| ((i * 26 + j) as f64 * 0.01 + k as f64 + step as f64).cos());
        let wg = build_weight_grid(&w, &layout).unwrap();
        let ig = build_image_grid(&summed, &layout).unwrap();
        let tr = trace.to_polydata();
        let content = StepContent {
            filter_counts: vec![(0, 16)],
            geometry: vec![
                GeometryMessage::new(ViewKind::WeightGrid, 0, &wg),
                GeometryMessage::new(ViewKind::ImageGrid, 0, &ig),
                GeometryMessage::new(ViewKind::Trajectory, 0, &tr),
            ],
            ..StepContent::default()
        };
        session.publish_step(step, &content).unwrap();
        sent.push((wg, ig, tr));
        // keep within the queue bound so nothing is dropped
        while session.stats().steps_sent + 4 < step + 1 {
            std::thread::sleep(Duration::from_millis(1));
        }
    }
    let stats = session.finish();
    let groups = reader.join().unwrap();
    assert_eq!(stats.steps_dropped, 0);
    assert_eq!(groups.len(), 100);
    for (g, (wg, ig, tr)) in groups.iter().zip(&sent) {
        assert_eq!(g.geometry(ViewKind::WeightGrid, 0), Some(wg));
        assert_eq!(g.geometry(ViewKind::ImageGrid, 0), Some(ig));
        assert_eq!(g.geometry(ViewKind::Trajectory, 0), Some(tr));
        assert_eq!(g.end.frames, 5);
    }
    assert_eq!(groups.iter().map(|g| g.step).collect::<Vec<_>>(), (0..100).collect::<Vec<_>>());
}

fn proposal(id: u64) -> PruneProposal {
    PruneProposal {
        proposal_id: id,
        plan: PrunePlan {
            layer_id: 0,
            merges: vec![Merge { keep: 3, remove: vec![4] }],
            created_at_step: 10,
        },
        groups: vec![],
        filter_count: 16,
    }
}

#[test]
fn commands_reach_the_trainer_and_acks_come_back() {
    let session = start();
    let mut viewer = connect(&session);
    let content = StepContent {
        proposal: Some(proposal(1)),
        ..StepContent::default()
    };
    session.publish_step(10, &content).unwrap();
    let group = viewer.next_step().unwrap().unwrap();
    assert_eq!(group.proposals.iter().map(|p| p.proposal_id).collect::<Vec<_>>(), [1]);

    viewer.command(1, PruneAction::Apply).unwrap();
    let deadline = Instant::now() + Duration::from_secs(5);
    let mut commands = Vec::new();
    while commands.is_empty() && Instant::now() < deadline {
        commands = session.poll_commands();
        std::thread::sleep(Duration::from_millis(2));
    }
    assert_eq!(commands.len(), 1);
    assert_eq!(commands[0].action, PruneAction::Apply);
    let ack = PruneAck {
        proposal_id: 1,
        applied: true,
        new_filter_count: 15,
        reason: None,
    };
    session.ack(11, &ack).unwrap();
    let (got, _) = viewer.await_ack(1).unwrap();
    assert_eq!(got, ack);
}

#[test]
fn second_viewer_is_turned_away() {
    let session = start();
    let _first = connect(&session);
    let mut second = Viewer::connect_raw(session.local_addr()).unwrap();
    let f = second.next_frame().unwrap().unwrap();
    assert_eq!(f.kind, FrameType::Bye);
    assert_eq!(f.body::<Bye>().unwrap().reason, "viewer already connected");
    assert!(session.is_connected());
}

#[test]
fn lost_viewer_reverts_to_headless() {
    let session = start();
    let viewer = connect(&session);
    drop(viewer);
    let deadline = Instant::now() + Duration::from_secs(5);
    while session.is_connected() && Instant::now() < deadline {
        std::thread::sleep(Duration::from_millis(5));
    }
    assert_eq!(session.publish_step(1, &StepContent::default()).unwrap(), Published::Headless);
    // a new viewer can take over
    let mut next = connect(&session);
    session.publish_step(2, &StepContent::default()).unwrap();
    assert_eq!(next.next_step().unwrap().unwrap().step, 2);
}

#[test]
fn stalled_viewer_never_blocks_publish() {
    let session = start();
    // handshake by hand, then stop reading
    let mut raw = std::net::TcpStream::connect(session.local_addr()).unwrap();
    let hello = Frame::new(FrameType::Hello, 0, 0, &ClientHello { protocol_version: 1 }).unwrap();
    write_frame(&mut raw, &hello).unwrap();
    assert_eq!(read_frame(&mut raw).unwrap().unwrap().kind, FrameType::Hello);
    assert!(session.wait_for_viewer(Duration::from_secs(5)));

    let big = Tensor3::from_fn([64, 64, 64], |[i, j, k]| (i + j + k) as f64);
    let pd = build_image_grid(&big, &grid_layout(64).unwrap()).unwrap();
    let content = StepContent {
        geometry: vec![GeometryMessage::new(ViewKind::ImageGrid, 0, &pd)],
        ..StepContent::default()
    };
    let mut worst = Duration::ZERO;
    for step in 0..60 {
        let t = Instant::now();
        session.publish_step(step, &content).unwrap();
        worst = worst.max(t.elapsed());
    }
    let stats = session.stats();
    assert!(stats.steps_dropped > 0, "{stats:?}");
    assert!(worst < Duration::from_secs(2), "publish took {worst:?}");

    // step_end reports drops once the viewer catches up
    let mut reader = std::io::BufReader::new(raw);
    let mut dropped_seen = 0;
    let mut ends = 0;
    while ends < 8 {
        match read_frame(&mut reader).unwrap() {
            Some(f) if f.kind == FrameType::StepEnd => {
                ends += 1;
                dropped_seen = dropped_seen.max(f.body::<insitu_stream::StepEnd>().unwrap().dropped);
            }
            Some(_) => {}
            None => break,
        }
    }
    assert!(dropped_seen > 0);
}

#[test]
fn proposals_survive_dropped_steps() {
    let session = start();
    let mut raw = std::net::TcpStream::connect(session.local_addr()).unwrap();
    let hello = Frame::new(FrameType::Hello, 0, 0, &ClientHello { protocol_version: 1 }).unwrap();
    write_frame(&mut raw, &hello).unwrap();
    assert_eq!(read_frame(&mut raw).unwrap().unwrap().kind, FrameType::Hello);
    assert!(session.wait_for_viewer(Duration::from_secs(5)));

    let big = Tensor3::from_fn([64, 64, 64], |[i, j, k]| (i * j + k) as f64);
    let pd = build_image_grid(&big, &grid_layout(64).unwrap()).unwrap();
    let geometry = vec![GeometryMessage::new(ViewKind::ImageGrid, 0, &pd)];
    for step in 0..40 {
        let content = StepContent {
            geometry: geometry.clone(),
            proposal: (step == 20).then(|| proposal(5)),
            ..StepContent::default()
        };
        session.publish_step(step, &content).unwrap();
    }
    assert!(session.stats().steps_dropped > 0);

    let mut reader = std::io::BufReader::new(raw);
    let reader = std::thread::spawn(move || {
        let mut seen = 0;
        while let Some(f) = read_frame(&mut reader).unwrap() {
            match f.kind {
                FrameType::PruneProposal => {
                    assert_eq!(f.body::<PruneProposal>().unwrap().proposal_id, 5);
                    seen += 1;
                }
                FrameType::Bye => break,
                _ => {}
            }
        }
        seen
    });
    session.finish();
    assert_eq!(reader.join().unwrap(), 1);
}
