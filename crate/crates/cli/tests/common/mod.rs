#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use insitu_cli::{DatasetSource, FilterCopy, RunConfig};
use insitu_core::cnn::{LayerSpec, NetworkSpec, SyntheticSpec};

/// A 12x12 blob task with 8 first-layer filters; 10 steps per epoch.
pub fn small_config(out: &Path) -> RunConfig {
    RunConfig {
        dataset: DatasetSource::Synthetic(SyntheticSpec {
            classes: 4,
            train_per_class: 50,
            test_per_class: 10,
            shape: [12, 12, 1],
            noise: 0.3,
        }),
        network: NetworkSpec {
            input_shape: [12, 12, 1],
            layers: vec![
                LayerSpec::Conv { filters: 8, window: 3 },
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv { filters: 6, window: 2 },
                LayerSpec::Dense { units: 16 },
                LayerSpec::SoftmaxOutput { classes: 4 },
            ],
        },
        lr: 0.01,
        batch_size: 20,
        epochs: 2,
        snapshot_interval: 5,
        out: out.to_path_buf(),
        ..RunConfig::default()
    }
}

pub fn copy_3_to_4() -> Vec<FilterCopy> {
    vec![FilterCopy { layer: 0, from: 3, to: 4 }]
}

/// Every file below `root`, keyed by its relative path.
pub fn tree(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    fn walk(root: &Path, dir: &Path, out: &mut BTreeMap<PathBuf, Vec<u8>>) {
        for entry in std::fs::read_dir(dir).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                walk(root, &path, out);
            } else {
                out.insert(path.strip_prefix(root).unwrap().to_path_buf(), std::fs::read(&path).unwrap());
            }
        }
    }
    let mut out = BTreeMap::new();
    walk(root, root, &mut out);
    out
}
