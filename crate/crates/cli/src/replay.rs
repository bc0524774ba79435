use std::fmt;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use anyhow::{ensure, Result};
use insitu_core::{apply_prune, PrunePlan, Snapshotf, ViewKind};
use insitu_stream::{
    serve, GeometryMessage, PruneAck, ServerHello, Session, SessionConfig, SessionStats, StepContent,
    PROTOCOL_VERSION,
};

use crate::book::{ProposalBook, Resolution};
use crate::convert::snapshot_files;
use crate::views::{build_views, drop_planes};

/// Nobody connected within the wait time.
#[derive(Debug)]
pub struct NoViewer;

impl fmt::Display for NoViewer {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("no viewer connected")
    }
}

impl std::error::Error for NoViewer {}

#[derive(Clone, Debug)]
pub struct ReplayOptions {
    pub listen: String,
    /// Steps per second.
    pub rate: f64,
    pub wait: Duration,
    pub views: Vec<ViewKind>,
}

#[derive(Clone, Debug, Default)]
pub struct ReplayReport {
    pub steps: usize,
    pub stats: SessionStats,
    pub acks: Vec<PruneAck>,
}

/// Streams recorded snapshots to one viewer. Recorded similarity groups are
/// offered as proposals; applied plans are carried onto later snapshots.
pub struct Replay {
    files: Vec<PathBuf>,
    session: Session,
    options: ReplayOptions,
}

impl Replay {
    pub fn prepare(snapshot_dir: &Path, options: ReplayOptions) -> Result<Replay> {
        ensure!(options.rate > 0.0 && options.rate.is_finite(), "rate must be positive");
        let files = snapshot_files(snapshot_dir)?;
        let first = Snapshotf::load(&files[0])?;
        let hello = ServerHello {
            protocol_version: PROTOCOL_VERSION,
            network: first.network.spec().clone(),
            instrumented_layers: first.layers.iter().map(|l| l.layer).collect(),
            views: options.views.clone(),
        };
        let session = serve(&options.listen, SessionConfig::new(hello))?;
        Ok(Replay {
            files,
            session,
            options,
        })
    }

    pub fn local_addr(&self) -> SocketAddr {
        self.session.local_addr()
    }

    pub fn execute(self) -> Result<ReplayReport> {
        if !self.session.wait_for_viewer(self.options.wait) {
            return Err(NoViewer.into());
        }
        let period = Duration::from_secs_f64(1.0 / self.options.rate);
        let start = Instant::now();
        let mut book = ProposalBook::new();
        let mut applied: Vec<(PrunePlan, usize)> = Vec::new();
        let mut offered: Vec<(usize, u64)> = Vec::new();
        let mut acks = Vec::new();

        for (i, path) in self.files.iter().enumerate() {
            let mut snap = Snapshotf::load(path)?;
            for (plan, width) in &applied {
                carry_plan(&mut snap, plan, *width)?;
            }
            let step = snap.network.step();
            let mut widths = snap.network.filter_counts();

            let mut content = StepContent {
                filter_counts: widths.clone(),
                ..StepContent::default()
            };
            for state in &snap.layers {
                for (view, pd) in build_views(&snap.network, state, &self.options.views)? {
                    content.geometry.push(GeometryMessage::new(view, state.layer, &pd));
                }
                let Some(report) = &state.report else { continue };
                let key = (state.layer, report.step);
                if offered.contains(&key) {
                    continue;
                }
                offered.push(key);
                let current = snap.network.conv(state.layer).map(|c| c.filters());
                if content.similarity.is_none() {
                    content.similarity = Some(report.clone());
                }
                if content.proposal.is_none()
                    && !report.groups.is_empty()
                    && current == Some(report.filters())
                    && !book.has_pending(state.layer)
                {
                    let plan = insitu_core::plan_prune(report)?;
                    content.proposal = Some(book.propose(plan, report));
                }
            }
            self.session.publish_step(step, &content)?;

            let due = start + period * (i as u32 + 1);
            loop {
                for cmd in self.session.poll_commands() {
                    let ack = match book.resolve(&cmd, |l| width_of(&widths, l)) {
                        Resolution::Apply(p) => {
                            let after = p.filter_count - p.plan.removed_count();
                            if let Some(entry) = widths.iter_mut().find(|(l, _)| *l == p.plan.layer_id) {
                                entry.1 = after;
                            }
                            applied.push((p.plan, p.filter_count));
                            PruneAck {
                                proposal_id: cmd.proposal_id,
                                applied: true,
                                new_filter_count: after,
                                reason: None,
                            }
                        }
                        Resolution::Dismissed(p) => PruneAck {
                            proposal_id: cmd.proposal_id,
                            applied: false,
                            new_filter_count: width_of(&widths, p.plan.layer_id).unwrap_or(0),
                            reason: Some("dismissed".into()),
                        },
                        Resolution::Rejected(reason, layer) => PruneAck {
                            proposal_id: cmd.proposal_id,
                            applied: false,
                            new_filter_count: layer.and_then(|l| width_of(&widths, l)).unwrap_or(0),
                            reason: Some(reason.into()),
                        },
                    };
                    self.session.ack(step, &ack)?;
                    acks.push(ack);
                }
                let now = Instant::now();
                if now >= due {
                    break;
                }
                std::thread::sleep((due - now).min(Duration::from_millis(10)));
            }
        }
        let steps = self.files.len();
        let stats = self.session.finish();
        Ok(ReplayReport { steps, stats, acks })
    }
}

fn width_of(widths: &[(usize, usize)], layer: usize) -> Option<usize> {
    widths.iter().find(|(l, _)| *l == layer).map(|(_, f)| *f)
}

/// Applies a plan accepted during replay to a later recorded snapshot whose
/// layer still has the width the plan was made for.
fn carry_plan(snap: &mut Snapshotf, plan: &PrunePlan, width: usize) -> Result<()> {
    let layer = plan.layer_id;
    if snap.network.conv(layer).map(|c| c.filters()) != Some(width) {
        return Ok(());
    }
    snap.network = apply_prune(&snap.network, plan)?;
    let removed = plan.removed();
    for state in snap.layers.iter_mut().filter(|s| s.layer == layer) {
        if let Some(map) = &state.summed {
            state.summed = Some(drop_planes(map, &removed)?);
        }
        if let Some(map) = &state.accumulated {
            state.accumulated = Some(drop_planes(map, &removed)?);
        }
        if state.report.as_ref().is_some_and(|r| r.filters() == width) {
            state.report = None;
        }
    }
    Ok(())
}

pub fn replay(snapshot_dir: &Path, options: ReplayOptions) -> Result<ReplayReport> {
    Replay::prepare(snapshot_dir, options)?.execute()
}
