use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::time::Duration;

use anyhow::{anyhow, bail, Context, Result};
use insitu_core::cnn::data::{epoch_order, load_mnist, synthetic_blobs};
use insitu_core::cnn::{Network, Sgd, Split};
use insitu_core::snapshot::snapshot_name;
use insitu_core::view::accumulate;
use insitu_core::{
    apply_prune, batch_sum, plan_prune, Datasetf, Group, LayerState, Merge, Networkf, PrunePlan, SimilarityReport,
    Snapshotf, TrajectoryTrace,
};
use insitu_stream::{
    serve, GeometryMessage, ProposalGroup, PruneAck, ServerHello, Session, SessionConfig, StepContent,
    PROTOCOL_VERSION,
};
use serde::{Deserialize, Serialize};

use crate::book::{proposal_groups, ProposalBook, Resolution};
use crate::config::{steps_per_epoch, DatasetSource, PruneMode, RunConfig};
use crate::views::{build_views, drop_planes, emit_snapshot};

pub const SUMMARY_FILE: &str = "summary.json";
pub const FINAL_CHECKPOINT: &str = "network_final.ckpt";
pub const SNAPSHOT_DIR: &str = "snapshots";
pub const VIEW_DIR: &str = "views";
pub const SIMILARITY_DIR: &str = "similarity";
pub const PRUNE_DIR: &str = "prunes";

/// One similarity evaluation of one layer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub step: u64,
    pub layer: usize,
    /// Largest correlation between two distinct filters.
    pub max_pcc: f64,
    pub groups: Vec<Group>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneEvent {
    /// Step after which the merge took effect.
    pub step: u64,
    pub layer: usize,
    pub via: PruneMode,
    pub merges: Vec<Merge>,
    pub groups: Vec<ProposalGroup>,
    pub filters_before: usize,
    pub filters_after: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub steps: u64,
    pub epochs_completed: usize,
    pub samples_per_epoch: usize,
    pub steps_per_epoch: u64,
    pub final_loss: f64,
    pub final_accuracy: f64,
    pub epoch_accuracy: Vec<f64>,
    pub parameter_count: usize,
    pub initial_filter_counts: Vec<(usize, usize)>,
    pub final_filter_counts: Vec<(usize, usize)>,
    pub evaluations: Vec<Evaluation>,
    pub prunes: Vec<PruneEvent>,
    pub prunes_applied: usize,
    pub frames_sent: u64,
    pub steps_dropped: u64,
    pub files_written: usize,
    pub bytes_written: u64,
    /// Written files relative to the output directory, sorted.
    pub files: Vec<String>,
}

impl RunSummary {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        Ok(serde_json::from_str(&text)?)
    }
}

pub fn load_data(config: &RunConfig) -> Result<(Datasetf, Datasetf)> {
    match &config.dataset {
        DatasetSource::Mnist {
            path,
            train_limit,
            test_limit,
        } => {
            if !path.is_dir() {
                bail!("dataset not found: {}", path.display());
            }
            let train = load_mnist(path, Split::Train, *train_limit, config.pixel_norm)?;
            let test = load_mnist(path, Split::Test, *test_limit, config.pixel_norm)?;
            Ok((train, test))
        }
        DatasetSource::Synthetic(spec) => Ok(synthetic_blobs(spec, config.seed)?),
    }
}

/// An instrumented training run, prepared but not yet started.
pub struct Run {
    config: RunConfig,
    train: Datasetf,
    test: Datasetf,
    net: Networkf,
    sgd: Sgd,
    states: Vec<LayerState<f64>>,
    session: Option<Session>,
    book: ProposalBook,
    evaluations: Vec<Evaluation>,
    prunes: Vec<PruneEvent>,
    epoch_accuracy: Vec<f64>,
    last_loss: f64,
    files: Vec<PathBuf>,
    bytes: u64,
    progress: bool,
}

impl Run {
    /// Validates the config, loads data, initializes the network and opens
    /// the stream listener. Nothing is trained yet.
    pub fn prepare(config: RunConfig) -> Result<Run> {
        config.validate()?;
        let (train, test) = load_data(&config)?;
        let [h, w, c] = config.network.input_shape;
        if train.sample_shape() != [h, w, c] || test.sample_shape() != [h, w, c] {
            bail!(
                "dataset samples are {:?} but the network expects {:?}",
                train.sample_shape(),
                config.network.input_shape
            );
        }
        let mut net = Network::init(&config.network, config.seed)?;
        for copy in &config.init_copies {
            net.conv_mut(copy.layer)
                .ok_or_else(|| anyhow!("layer {} is not a convolution", copy.layer))?
                .copy_filter(copy.from, copy.to)?;
        }
        let mut states = Vec::new();
        for &layer in &config.instrumented_layers {
            let mut trace = TrajectoryTrace::new(config.trajectory_dims)?;
            trace.append(net.conv(layer).expect("validated").kernel(), 0)?;
            states.push(LayerState {
                trajectory: Some(trace),
                ..LayerState::empty(layer)
            });
        }
        std::fs::create_dir_all(&config.out).with_context(|| format!("creating {}", config.out.display()))?;

        let session = match &config.listen {
            Some(addr) => {
                let hello = ServerHello {
                    protocol_version: PROTOCOL_VERSION,
                    network: config.network.clone(),
                    instrumented_layers: config.instrumented_layers.clone(),
                    views: config.views.clone(),
                };
                let mut sc = SessionConfig::new(hello);
                sc.queue_steps = config.queue_steps;
                Some(serve(addr, sc)?)
            }
            None => None,
        };

        Ok(Run {
            sgd: Sgd::new(config.lr).with_reduction(config.reduction),
            config,
            train,
            test,
            net,
            states,
            session,
            book: ProposalBook::new(),
            evaluations: Vec::new(),
            prunes: Vec::new(),
            epoch_accuracy: Vec::new(),
            last_loss: f64::NAN,
            files: Vec::new(),
            bytes: 0,
            progress: false,
        })
    }

    /// Print a line per epoch to stderr.
    pub fn with_progress(mut self, on: bool) -> Self {
        self.progress = on;
        self
    }

    pub fn local_addr(&self) -> Option<SocketAddr> {
        self.session.as_ref().map(|s| s.local_addr())
    }

    pub fn network(&self) -> &Networkf {
        &self.net
    }

    pub fn execute(mut self) -> Result<RunSummary> {
        if let Some(session) = &self.session {
            if self.config.wait_for_viewer > 0.0 {
                session.wait_for_viewer(Duration::from_secs_f64(self.config.wait_for_viewer));
            }
        }
        let initial_filter_counts = self.net.filter_counts();
        let n = self.train.len();
        let bs = self.config.batch_size;
        let per_epoch = steps_per_epoch(n, bs);
        let total = self
            .config
            .max_steps
            .unwrap_or(per_epoch * self.config.epochs as u64);

        let mut epoch = 0u64;
        let mut completed = 0;
        while self.net.step() < total {
            let order = if self.config.shuffle {
                epoch_order(n, self.config.seed, epoch)
            } else {
                (0..n).collect()
            };
            for chunk in order.chunks(bs) {
                if self.net.step() >= total {
                    break;
                }
                self.step(chunk)?;
            }
            if self.net.step().is_multiple_of(per_epoch) {
                completed += 1;
                if self.config.evaluate_each_epoch {
                    let acc = self.net.evaluate(&self.test)?;
                    self.epoch_accuracy.push(acc);
                    if self.progress {
                        eprintln!(
                            "epoch {completed}: step {} loss {:.4} test accuracy {acc:.4}",
                            self.net.step(),
                            self.last_loss
                        );
                    }
                }
            }
            epoch += 1;
        }

        let final_accuracy = self.net.evaluate(&self.test)?;
        let out = self.config.out.clone();
        let final_state = Snapshotf {
            network: self.net.clone(),
            layers: self.states.clone(),
        };
        let ckpt = out.join(FINAL_CHECKPOINT);
        self.bytes += final_state.save(&ckpt)?;
        self.files.push(ckpt);

        let stats = self.session.take().map(|s| s.finish()).unwrap_or_default();
        let mut files: Vec<String> = self
            .files
            .iter()
            .map(|p| p.strip_prefix(&out).unwrap_or(p).to_string_lossy().into_owned())
            .collect();
        files.sort();
        let summary = RunSummary {
            steps: self.net.step(),
            epochs_completed: completed,
            samples_per_epoch: n,
            steps_per_epoch: per_epoch,
            final_loss: self.last_loss,
            final_accuracy,
            epoch_accuracy: self.epoch_accuracy,
            parameter_count: self.net.parameter_count(),
            initial_filter_counts,
            final_filter_counts: self.net.filter_counts(),
            evaluations: self.evaluations,
            prunes_applied: self.prunes.len(),
            prunes: self.prunes,
            frames_sent: stats.frames_sent,
            steps_dropped: stats.steps_dropped,
            files_written: files.len(),
            bytes_written: self.bytes,
            files,
        };
        std::fs::write(out.join(SUMMARY_FILE), serde_json::to_string_pretty(&summary)?)?;
        Ok(summary)
    }

    fn step(&mut self, chunk: &[usize]) -> Result<()> {
        let batch = self.train.batch(chunk)?;
        let record = self.net.train_step(&batch, &self.sgd)?;
        let step = record.step;
        self.last_loss = record.loss;
        for state in &mut self.states {
            let acts = record
                .activation(state.layer)
                .ok_or_else(|| anyhow!("no activations recorded for layer {}", state.layer))?;
            let summed = batch_sum(acts)?;
            if self.config.accumulate_images {
                state.accumulated = Some(match state.accumulated.take() {
                    Some(running) => accumulate(&running, &summed)?,
                    None => summed.clone(),
                });
            }
            state.summed = Some(summed);
            let kernel = record.kernel(state.layer).expect("instrumented layers are convolutions");
            state.trajectory.as_mut().expect("set at start").append(kernel, step)?;
        }

        let live = self.session.as_ref().is_some_and(|s| s.is_connected());
        let mut content = StepContent::default();
        if self.config.prune_mode != PruneMode::Off && step % self.config.prune_interval == 0 {
            self.evaluate(step, live, &mut content)?;
        }
        if live {
            content.filter_counts = self.net.filter_counts();
            for state in &self.states {
                for (view, pd) in build_views(&self.net, state, &self.config.views)? {
                    content.geometry.push(GeometryMessage::new(view, state.layer, &pd));
                }
            }
            self.session.as_ref().expect("live").publish_step(step, &content)?;
        }
        if self.config.snapshot_interval > 0 && step % self.config.snapshot_interval == 0 {
            self.write_snapshot()?;
        }
        if self.config.prune_mode == PruneMode::Interactive {
            self.handle_commands(step)?;
        }
        Ok(())
    }

    fn evaluate(&mut self, step: u64, live: bool, content: &mut StepContent) -> Result<()> {
        let mut chosen: Option<SimilarityReport> = None;
        for state in &mut self.states {
            let Some(summed) = &state.summed else { continue };
            if summed.planes() < 2 {
                continue;
            }
            let report = SimilarityReport::compute(step, state.layer, summed, self.config.pcc_threshold)?;
            self.evaluations.push(Evaluation {
                step,
                layer: state.layer,
                max_pcc: report.max_off_diagonal(),
                groups: report.groups.clone(),
            });
            let dir = self.config.out.join(SIMILARITY_DIR);
            std::fs::create_dir_all(&dir)?;
            let path = dir.join(format!("similarity_{}_{step:08}.csv", state.layer));
            let csv = report.heatmap_csv();
            std::fs::write(&path, &csv)?;
            self.bytes += csv.len() as u64;
            self.files.push(path);

            if content.similarity.is_none() {
                content.similarity = Some(report.clone());
            }
            if chosen.is_none() && !report.groups.is_empty() {
                chosen = Some(report.clone());
            }
            state.report = Some(report);
        }
        let Some(report) = chosen else { return Ok(()) };
        content.similarity = Some(report.clone());
        let plan = plan_prune(&report)?;
        match self.config.prune_mode {
            PruneMode::Auto => {
                self.apply(plan, proposal_groups(&report), step, PruneMode::Auto)?;
            }
            PruneMode::Interactive if live && !self.book.has_pending(report.layer_id) => {
                content.proposal = Some(self.book.propose(plan, &report));
            }
            _ => {}
        }
        Ok(())
    }

    fn apply(&mut self, plan: PrunePlan, groups: Vec<ProposalGroup>, step: u64, via: PruneMode) -> Result<usize> {
        let layer = plan.layer_id;
        let before = self.filters(layer).unwrap_or(0);
        self.net = apply_prune(&self.net, &plan)?;
        let removed = plan.removed();
        for state in self.states.iter_mut().filter(|s| s.layer == layer) {
            if let Some(map) = &state.summed {
                state.summed = Some(drop_planes(map, &removed)?);
            }
            if let Some(map) = &state.accumulated {
                state.accumulated = Some(drop_planes(map, &removed)?);
            }
        }
        let after = self.filters(layer).unwrap_or(0);
        let dir = self.config.out.join(PRUNE_DIR);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(format!("prune_{layer}_{step:08}.json"));
        let json = serde_json::to_string_pretty(&plan)?;
        std::fs::write(&path, &json)?;
        self.bytes += json.len() as u64;
        self.files.push(path);
        if self.progress {
            eprintln!("step {step}: layer {layer} pruned {before} -> {after} filters");
        }
        self.prunes.push(PruneEvent {
            step,
            layer,
            via,
            merges: plan.merges,
            groups,
            filters_before: before,
            filters_after: after,
        });
        Ok(after)
    }

    fn filters(&self, layer: usize) -> Option<usize> {
        self.net.conv(layer).map(|c| c.filters())
    }

    fn handle_commands(&mut self, step: u64) -> Result<()> {
        let Some(session) = &self.session else { return Ok(()) };
        for cmd in session.poll_commands() {
            let net = &self.net;
            let resolution = self.book.resolve(&cmd, |l| net.conv(l).map(|c| c.filters()));
            let ack = match resolution {
                Resolution::Apply(p) => {
                    let after = self.apply(p.plan, p.groups, step, PruneMode::Interactive)?;
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
                    new_filter_count: self.filters(p.plan.layer_id).unwrap_or(0),
                    reason: Some("dismissed".into()),
                },
                Resolution::Rejected(reason, layer) => PruneAck {
                    proposal_id: cmd.proposal_id,
                    applied: false,
                    new_filter_count: layer.and_then(|l| self.filters(l)).unwrap_or(0),
                    reason: Some(reason.into()),
                },
            };
            self.session.as_ref().expect("checked above").ack(step, &ack)?;
        }
        Ok(())
    }

    fn write_snapshot(&mut self) -> Result<()> {
        let snapshot = Snapshotf {
            network: self.net.clone(),
            layers: self.states.clone(),
        };
        let dir = self.config.out.join(SNAPSHOT_DIR);
        std::fs::create_dir_all(&dir)?;
        let path = dir.join(snapshot_name(self.net.step()));
        self.bytes += snapshot.save(&path)?;
        self.files.push(path);
        let (written, bytes) = emit_snapshot(
            &snapshot,
            &self.config.views,
            &self.config.formats,
            &self.config.out.join(VIEW_DIR),
        )?;
        self.bytes += bytes;
        self.files.extend(written);
        Ok(())
    }
}

/// Prepares and executes a run.
pub fn run(config: RunConfig) -> Result<RunSummary> {
    Run::prepare(config)?.execute()
}
