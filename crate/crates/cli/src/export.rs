use std::path::Path;

use anyhow::{anyhow, Result};
use insitu_core::{apply_prune, plan_prune, PrunePlan, SimilarityReport, Snapshotf};
use serde::Serialize;

use crate::views::drop_planes;

#[derive(Clone, Debug, Serialize)]
pub struct PruneExport {
    pub plan: PrunePlan,
    pub filters_before: usize,
    pub filters_after: usize,
    pub parameters_before: usize,
    pub parameters_after: usize,
}

/// Evaluates `layer` of a recorded snapshot at `threshold`, merges its
/// groups and writes the pruned network in snapshot format to `out`.
/// `heatmap` receives the correlation matrix as CSV when given.
pub fn prune_snapshot(
    snapshot: &Path,
    layer: usize,
    threshold: f64,
    out: &Path,
    heatmap: Option<&Path>,
) -> Result<PruneExport> {
    let mut snap = Snapshotf::load(snapshot)?;
    let step = snap.network.step();
    let state = snap
        .layers
        .iter_mut()
        .find(|s| s.layer == layer)
        .ok_or_else(|| anyhow!("layer {layer} is not instrumented in {}", snapshot.display()))?;
    let summed = state
        .summed
        .as_ref()
        .ok_or_else(|| anyhow!("no activations recorded for layer {layer}"))?;
    let report = SimilarityReport::compute(step, layer, summed, threshold)?;
    if let Some(path) = heatmap {
        std::fs::write(path, report.heatmap_csv())?;
    }
    let plan = plan_prune(&report)?;
    let removed = plan.removed();
    state.summed = Some(drop_planes(summed, &removed)?);
    if let Some(map) = &state.accumulated {
        state.accumulated = Some(drop_planes(map, &removed)?);
    }
    state.report = None;

    let before = snap.network.clone();
    snap.network = apply_prune(&before, &plan)?;
    snap.save(out)?;
    Ok(PruneExport {
        filters_before: report.filters(),
        filters_after: report.filters() - plan.removed_count(),
        parameters_before: before.parameter_count(),
        parameters_after: snap.network.parameter_count(),
        plan,
    })
}
