mod common;

use std::thread;
use std::time::{Duration, Instant};

use common::{copy_3_to_4, small_config, tree};
use insitu_cli::run::{SNAPSHOT_DIR, VIEW_DIR};
use insitu_cli::{convert, run, NoViewer, PruneMode, Replay, ReplayOptions};
use insitu_core::{read_vtp, Format, ViewKind, VtpMode};
use insitu_stream::client::Viewer;
use insitu_stream::PruneAction;

fn formats() -> Vec<Format> {
    vec![Format::Csv, Format::Vtp(VtpMode::Binary), Format::Vtp(VtpMode::Ascii)]
}

#[test]
fn live_files_match_offline_conversion() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("run"));
    c.formats = formats();
    c.accumulate_images = true;
    c.prune_mode = PruneMode::Auto;
    c.prune_interval = 7;
    c.init_copies = copy_3_to_4();
    run(c).unwrap();

    let offline = dir.path().join("offline");
    let written = convert(&dir.path().join("run").join(SNAPSHOT_DIR), &ViewKind::ALL, &formats(), &offline).unwrap();
    let live = tree(&dir.path().join("run").join(VIEW_DIR));
    assert_eq!(written.len(), live.len());
    assert_eq!(tree(&offline), live);
}

#[test]
fn csv_columns_follow_the_view() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("run"));
    c.max_steps = Some(5);
    c.prune_mode = PruneMode::Interactive;
    c.prune_interval = 5;
    run(c).unwrap();

    let out = dir.path().join("csv");
    convert(&dir.path().join("run").join(SNAPSHOT_DIR), &ViewKind::ALL, &[Format::Csv], &out).unwrap();
    for (name, header, rows) in [
        ("weight_grid_0_00000005.csv", "x,y,z,weight", 8 * 9 * 4),
        ("image_grid_0_00000005.csv", "x,y,z,intensity", 8 * 100),
        ("distribution_grid_0_00000005.csv", "x,y,z,group", 8 * 100),
        ("trajectory_0_00000005.csv", "x,y,z,step", 6),
    ] {
        let text = std::fs::read_to_string(out.join(name)).unwrap();
        let mut lines = text.lines();
        assert_eq!(lines.next(), Some(header), "{name}");
        assert_eq!(lines.count(), rows, "{name}");
    }
}

#[test]
fn convert_needs_snapshots() {
    let dir = tempfile::tempdir().unwrap();
    let err = convert(dir.path(), &ViewKind::ALL, &[Format::Csv], &dir.path().join("o")).unwrap_err();
    assert!(err.to_string().contains("no snapshot files"), "{err}");
}

fn options(rate: f64, wait: Duration) -> ReplayOptions {
    ReplayOptions {
        listen: "127.0.0.1:0".into(),
        rate,
        wait,
        views: ViewKind::ALL.to_vec(),
    }
}

#[test]
fn replay_paces_steps_and_matches_conversion() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("run"));
    c.snapshot_interval = 2;
    run(c).unwrap();
    let snaps = dir.path().join("run").join(SNAPSHOT_DIR);

    let replay = Replay::prepare(&snaps, options(5.0, Duration::from_secs(10))).unwrap();
    let addr = replay.local_addr();
    let viewer = thread::spawn(move || {
        let (mut v, hello) = Viewer::connect(addr).unwrap();
        assert_eq!(hello.instrumented_layers, [0]);
        let mut groups = Vec::new();
        while let Some(g) = v.next_step().unwrap() {
            groups.push(g);
        }
        groups
    });
    let start = Instant::now();
    let report = replay.execute().unwrap();
    let elapsed = start.elapsed();
    let groups = viewer.join().unwrap();

    assert_eq!(report.steps, 10);
    assert!(elapsed >= Duration::from_secs(2), "{elapsed:?}");
    assert_eq!(groups.len(), 10);
    let steps: Vec<u64> = groups.iter().map(|g| g.step).collect();
    assert_eq!(steps, (1..=10).map(|i| 2 * i).collect::<Vec<_>>());

    let vtp = dir.path().join("vtp");
    convert(&snaps, &ViewKind::ALL, &[Format::Vtp(VtpMode::Binary)], &vtp).unwrap();
    for g in &groups {
        for view in ViewKind::ALL {
            let file = vtp.join(insitu_core::emit::file_name(view, 0, g.step, Format::Vtp(VtpMode::Binary)));
            assert_eq!(g.geometry(view, 0), Some(&read_vtp(&file).unwrap()), "{view} at {}", g.step);
        }
    }
}

#[test]
fn replay_without_viewer_gives_up() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("run"));
    c.max_steps = Some(5);
    run(c).unwrap();
    let replay = Replay::prepare(&dir.path().join("run").join(SNAPSHOT_DIR), options(5.0, Duration::from_millis(200)))
        .unwrap();
    let err = replay.execute().unwrap_err();
    assert!(err.is::<NoViewer>(), "{err:#}");
}

#[test]
fn replayed_proposals_can_be_applied() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(&dir.path().join("run"));
    c.init_copies = copy_3_to_4();
    c.prune_mode = PruneMode::Interactive;
    c.prune_interval = 5;
    c.snapshot_interval = 1;
    run(c).unwrap();

    let replay = Replay::prepare(&dir.path().join("run").join(SNAPSHOT_DIR), options(50.0, Duration::from_secs(10)))
        .unwrap();
    let addr = replay.local_addr();
    let viewer = thread::spawn(move || {
        let (mut v, _) = Viewer::connect(addr).unwrap();
        let proposal = loop {
            let g = v.next_step().unwrap().expect("a proposal before the end");
            if let Some(p) = g.proposals.first() {
                assert_eq!(g.step, 5);
                break p.clone();
            }
        };
        assert!(proposal.plan.merges.iter().any(|m| m.remove.contains(&4)));
        let after = proposal.filter_count - proposal.plan.removed_count();

        v.command(proposal.proposal_id + 100, PruneAction::Apply).unwrap();
        let (ack, _) = v.await_ack(proposal.proposal_id + 100).unwrap();
        assert_eq!(ack.reason.as_deref(), Some("unknown proposal"));

        v.command(proposal.proposal_id, PruneAction::Apply).unwrap();
        let (ack, _) = v.await_ack(proposal.proposal_id).unwrap();
        assert!(ack.applied);
        assert_eq!(ack.new_filter_count, after);

        v.command(proposal.proposal_id, PruneAction::Dismiss).unwrap();
        let (ack, _) = v.await_ack(proposal.proposal_id).unwrap();
        assert_eq!(ack.reason.as_deref(), Some("already resolved"));

        let mut narrowed = Vec::new();
        while let Some(g) = v.next_step().unwrap() {
            if g.begin.filter_counts[0] == (0, after) {
                narrowed.push(g);
            }
        }
        (after, narrowed)
    });
    let report = replay.execute().unwrap();
    let (after, narrowed) = viewer.join().unwrap();
    assert_eq!(report.acks.iter().filter(|a| a.applied).count(), 1);
    assert!(!narrowed.is_empty());
    for g in &narrowed {
        let grid = g.geometry(ViewKind::WeightGrid, 0).unwrap();
        assert_eq!(grid.quads.len(), after * 9);
        let image = g.geometry(ViewKind::ImageGrid, 0).unwrap();
        assert_eq!(image.num_points(), after * 100);
    }
}
