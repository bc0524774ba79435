//! View construction shared by live runs, `convert` and `replay`.

use std::path::{Path, PathBuf};

use anyhow::{anyhow, Result};
use insitu_core::emit::{file_name, vtp_bytes};
use insitu_core::view::{build_distribution_grid, build_image_grid, build_weight_grid};
use insitu_core::{grid_layout, Format, LayerState, Networkf, PolyData, Snapshotf, Tensor3, ViewKind};

/// Builds the requested views of one instrumented layer. Views whose inputs
/// are missing (no activations yet, no trajectory) are skipped.
pub fn build_views(net: &Networkf, state: &LayerState<f64>, views: &[ViewKind]) -> Result<Vec<(ViewKind, PolyData)>> {
    let conv = net
        .conv(state.layer)
        .ok_or_else(|| anyhow!("layer {} is not a convolution", state.layer))?;
    let filters = conv.filters();
    let mut out = Vec::with_capacity(views.len());
    for &view in views {
        let pd = match view {
            ViewKind::WeightGrid => {
                let layout = grid_layout(filters * conv.channels())?;
                Some(build_weight_grid(conv.kernel(), &layout)?)
            }
            ViewKind::ImageGrid => match state.accumulated.as_ref().or(state.summed.as_ref()) {
                Some(map) => Some(build_image_grid(map, &grid_layout(filters)?)?),
                None => None,
            },
            ViewKind::DistributionGrid => match &state.summed {
                Some(map) => {
                    let report = state.report.as_ref().filter(|r| r.filters() == filters);
                    Some(build_distribution_grid(map, &grid_layout(filters)?, report)?)
                }
                None => None,
            },
            ViewKind::Trajectory => state.trajectory.as_ref().map(|t| t.to_polydata()),
        };
        if let Some(pd) = pd {
            out.push((view, pd));
        }
    }
    Ok(out)
}

pub fn encode(pd: &PolyData, format: Format) -> Result<Vec<u8>> {
    Ok(match format {
        Format::Csv => {
            let mut buf = Vec::new();
            insitu_core::emit::csv_to(pd, &mut buf)?;
            buf
        }
        Format::Vtp(mode) => vtp_bytes(pd, mode)?,
    })
}

/// Writes every view of every instrumented layer in `snapshot` into `dir`.
/// Returns the written paths and their total size.
pub fn emit_snapshot(
    snapshot: &Snapshotf,
    views: &[ViewKind],
    formats: &[Format],
    dir: &Path,
) -> Result<(Vec<PathBuf>, u64)> {
    std::fs::create_dir_all(dir)?;
    let step = snapshot.network.step();
    let mut written = Vec::new();
    let mut bytes = 0;
    for state in &snapshot.layers {
        for (view, pd) in build_views(&snapshot.network, state, views)? {
            for &format in formats {
                let path = dir.join(file_name(view, state.layer, step, format));
                let data = encode(&pd, format)?;
                std::fs::write(&path, &data)?;
                bytes += data.len() as u64;
                written.push(path);
            }
        }
    }
    Ok((written, bytes))
}

/// Drops the feature maps of removed filters so stored activations match a
/// pruned layer.
pub fn drop_planes(map: &Tensor3<f64>, removed: &[usize]) -> Result<Tensor3<f64>> {
    let [h, w, f] = map.shape();
    let kept: Vec<usize> = (0..f).filter(|k| !removed.contains(k)).collect();
    let data = map.data();
    let mut out = Vec::with_capacity(h * w * kept.len());
    for px in 0..h * w {
        out.extend(kept.iter().map(|&k| data[px * f + k]));
    }
    Ok(Tensor3::new([h, w, kept.len()], out)?)
}
