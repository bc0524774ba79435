use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use insitu_core::{Format, Snapshotf, ViewKind};

use crate::views::emit_snapshot;

/// Snapshot files in `dir`, in step order.
pub fn snapshot_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files = Vec::new();
    for entry in std::fs::read_dir(dir).with_context(|| format!("reading {}", dir.display()))? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if name.starts_with("snapshot_") && name.ends_with(".snap") {
            files.push(path);
        }
    }
    files.sort();
    if files.is_empty() {
        bail!("no snapshot files in {}", dir.display());
    }
    Ok(files)
}

/// Re-derives views from recorded snapshots, one file per snapshot, view,
/// layer and format, named as during the live run.
pub fn convert(snapshot_dir: &Path, views: &[ViewKind], formats: &[Format], out: &Path) -> Result<Vec<PathBuf>> {
    let mut written = Vec::new();
    for path in snapshot_files(snapshot_dir)? {
        let snapshot = Snapshotf::load(&path)?;
        let (files, _) = emit_snapshot(&snapshot, views, formats, out)?;
        written.extend(files);
    }
    Ok(written)
}
