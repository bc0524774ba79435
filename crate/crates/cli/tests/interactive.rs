mod common;

use std::thread;

use common::{copy_3_to_4, small_config};
use insitu_cli::{PruneMode, Run};
use insitu_core::ViewKind;
use insitu_stream::client::Viewer;
use insitu_stream::PruneAction;

#[test]
fn viewer_drives_pruning_of_a_live_run() {
    let dir = tempfile::tempdir().unwrap();
    let mut c = small_config(dir.path());
    c.init_copies = copy_3_to_4();
    c.prune_mode = PruneMode::Interactive;
    c.prune_interval = 5;
    c.max_steps = Some(4000);
    c.snapshot_interval = 0;
    c.listen = Some("127.0.0.1:0".into());
    c.wait_for_viewer = 10.0;

    let run = Run::prepare(c).unwrap().with_progress(false);
    let addr = run.local_addr().unwrap();
    let viewer = thread::spawn(move || {
        let (mut v, hello) = Viewer::connect(addr).unwrap();
        assert_eq!(hello.views, ViewKind::ALL);
        let (first, proposal) = loop {
            let g = v.next_step().unwrap().expect("a proposal");
            if let Some(p) = g.proposals.first().cloned() {
                break (g, p);
            }
        };
        assert_eq!(first.begin.filter_counts[0], (0, 8));
        assert_eq!(first.similarity.as_ref().unwrap().filters(), 8);
        assert!(proposal.plan.merges.iter().any(|m| m.remove.contains(&4)));
        let after = proposal.filter_count - proposal.plan.removed_count();

        v.command(999, PruneAction::Apply).unwrap();
        let (ack, _) = v.await_ack(999).unwrap();
        assert!(!ack.applied);
        assert_eq!(ack.reason.as_deref(), Some("unknown proposal"));

        v.command(proposal.proposal_id, PruneAction::Apply).unwrap();
        let (ack, _) = v.await_ack(proposal.proposal_id).unwrap();
        assert!(ack.applied, "{ack:?}");
        assert_eq!(ack.new_filter_count, after);

        v.command(proposal.proposal_id, PruneAction::Apply).unwrap();
        let (ack, _) = v.await_ack(proposal.proposal_id).unwrap();
        assert_eq!(ack.reason.as_deref(), Some("already resolved"));

        let narrowed = loop {
            let g = v.next_step().unwrap().expect("a narrowed step");
            if g.begin.filter_counts[0] == (0, after) {
                break g;
            }
        };
        assert_eq!(narrowed.geometry(ViewKind::WeightGrid, 0).unwrap().quads.len(), after * 9);
        assert_eq!(narrowed.geometry(ViewKind::ImageGrid, 0).unwrap().num_points(), after * 100);

        let next = loop {
            let g = v.next_step().unwrap().expect("a second proposal");
            if let Some(p) = g.proposals.first().cloned() {
                break p;
            }
        };
        assert_eq!(next.filter_count, after);
        v.command(next.proposal_id, PruneAction::Dismiss).unwrap();
        let (ack, _) = v.await_ack(next.proposal_id).unwrap();
        assert!(!ack.applied);
        assert_eq!(ack.reason.as_deref(), Some("dismissed"));
        assert_eq!(ack.new_filter_count, after);
        v.bye().unwrap();
        (proposal.proposal_id, after)
    });

    let summary = run.execute().unwrap();
    let (id, after) = viewer.join().unwrap();
    assert_eq!(id, 1);
    assert_eq!(summary.prunes_applied, 1);
    assert_eq!(summary.prunes[0].via, PruneMode::Interactive);
    assert_eq!(summary.prunes[0].filters_after, after);
    assert_eq!(summary.final_filter_counts[0], (0, after));
    assert!(summary.frames_sent > 0);
}
