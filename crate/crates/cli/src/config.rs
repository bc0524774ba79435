use std::path::{Path, PathBuf};

use anyhow::{bail, ensure, Context, Result};
use insitu_core::cnn::{LayerSpec, NetworkSpec, PixelNorm, Reduction, SyntheticSpec};
use insitu_core::similarity::DEFAULT_THRESHOLD;
use insitu_core::{Format, ViewKind};
use serde::{Deserialize, Serialize};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DatasetSource {
    /// A directory holding the four IDX files.
    Mnist {
        path: PathBuf,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        train_limit: Option<usize>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        test_limit: Option<usize>,
    },
    Synthetic(SyntheticSpec),
}

impl Default for DatasetSource {
    fn default() -> Self {
        DatasetSource::Mnist {
            path: PathBuf::from("data/mnist-subset"),
            train_limit: None,
            test_limit: None,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PruneMode {
    #[default]
    Off,
    /// Apply every plan as soon as it is found.
    Auto,
    /// Offer plans to a connected viewer and apply them on its command.
    /// Without a viewer only the similarity reports are recorded.
    Interactive,
}

/// Copy one filter over another right after initialization.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCopy {
    pub layer: usize,
    pub from: usize,
    pub to: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub dataset: DatasetSource,
    pub pixel_norm: PixelNorm,
    pub network: NetworkSpec,
    pub lr: f64,
    pub batch_size: usize,
    pub epochs: usize,
    /// Stop after this many steps, running as many epochs as needed.
    pub max_steps: Option<u64>,
    pub seed: u64,
    pub reduction: Reduction,
    pub shuffle: bool,
    pub init_copies: Vec<FilterCopy>,
    pub instrumented_layers: Vec<usize>,
    pub views: Vec<ViewKind>,
    /// Flat indices into an instrumented layer's `[w, w, c, f]` kernel.
    pub trajectory_dims: [usize; 3],
    /// Image grids show the running sum of activations instead of the
    /// current batch.
    pub accumulate_images: bool,
    pub pcc_threshold: f64,
    pub prune_mode: PruneMode,
    pub prune_interval: u64,
    /// Steps between snapshots; 0 turns snapshots off.
    pub snapshot_interval: u64,
    /// Formats of the view files written next to each snapshot.
    pub formats: Vec<Format>,
    /// Test accuracy after every epoch, not only at the end.
    pub evaluate_each_epoch: bool,
    pub out: PathBuf,
    pub listen: Option<String>,
    /// Seconds to wait for a viewer before training starts.
    pub wait_for_viewer: f64,
    pub queue_steps: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            dataset: DatasetSource::default(),
            pixel_norm: PixelNorm::default(),
            network: NetworkSpec::simplified_lenet(),
            lr: 0.001,
            batch_size: 50,
            epochs: 5,
            max_steps: None,
            seed: 0,
            reduction: Reduction::Sum,
            shuffle: true,
            init_copies: Vec::new(),
            instrumented_layers: vec![0],
            views: ViewKind::ALL.to_vec(),
            trajectory_dims: [0, 1, 2],
            accumulate_images: false,
            pcc_threshold: DEFAULT_THRESHOLD,
            prune_mode: PruneMode::Off,
            prune_interval: 600,
            snapshot_interval: 500,
            formats: vec![Format::Vtp(insitu_core::VtpMode::Binary)],
            evaluate_each_epoch: true,
            out: PathBuf::from("runs/latest"),
            listen: None,
            wait_for_viewer: 0.0,
            queue_steps: insitu_stream::DEFAULT_QUEUE_STEPS,
        }
    }
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        Ok(toml::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        RunConfig::from_toml(&text).with_context(|| format!("parsing {}", path.display()))
    }

    pub fn validate(&self) -> Result<()> {
        ensure!(self.lr > 0.0 && self.lr.is_finite(), "lr must be positive, got {}", self.lr);
        ensure!(self.batch_size > 0, "batch_size must be positive");
        ensure!(
            self.epochs > 0 || self.max_steps.is_some_and(|s| s > 0),
            "nothing to train: epochs is 0"
        );
        ensure!(self.prune_interval > 0, "prune_interval must be positive");
        ensure!(
            self.pcc_threshold > 0.0 && self.pcc_threshold <= 1.0,
            "pcc_threshold must be in (0, 1], got {}",
            self.pcc_threshold
        );
        let [a, b, c] = self.trajectory_dims;
        ensure!(a != b && b != c && a != c, "trajectory dims must be distinct, got {:?}", self.trajectory_dims);
        ensure!(self.queue_steps > 0, "queue_steps must be positive");
        ensure!(
            self.wait_for_viewer >= 0.0 && self.wait_for_viewer.is_finite(),
            "wait_for_viewer must be a non-negative number of seconds"
        );

        let resolved = self.network.resolve()?;
        let mut seen = Vec::new();
        for &l in &self.instrumented_layers {
            let Some(layer) = resolved.get(l) else {
                bail!("instrumented layer {l} does not exist");
            };
            let LayerSpec::Conv { filters, window } = layer.spec else {
                bail!("instrumented layer {l} is not a convolution");
            };
            ensure!(!seen.contains(&l), "layer {l} listed twice");
            seen.push(l);
            let channels = match layer.input {
                insitu_core::cnn::Shape::Spatial { channels, .. } => channels,
                insitu_core::cnn::Shape::Flat(_) => bail!("layer {l} has flat input"),
            };
            let size = window * window * channels * filters;
            if let Some(&d) = self.trajectory_dims.iter().find(|&&d| d >= size) {
                bail!("trajectory dim {d} outside layer {l}'s {size} weights");
            }
        }
        if self.prune_mode != PruneMode::Off {
            ensure!(!self.instrumented_layers.is_empty(), "pruning needs an instrumented layer");
        }
        for copy in &self.init_copies {
            match resolved.get(copy.layer).map(|r| r.spec) {
                Some(LayerSpec::Conv { filters, .. }) => ensure!(
                    copy.from < filters && copy.to < filters,
                    "filter copy {copy:?} outside layer of {filters} filters"
                ),
                _ => bail!("filter copy into layer {} which is not a convolution", copy.layer),
            }
        }
        Ok(())
    }
}

/// Steps in one pass over `samples` with a final short batch.
pub fn steps_per_epoch(samples: usize, batch_size: usize) -> u64 {
    samples.div_ceil(batch_size) as u64
}
