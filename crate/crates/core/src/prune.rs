//! Filter merging: drop redundant filters of a convolution and fold their
//! downstream weights into the filter that stays.

use serde::{Deserialize, Serialize};

use crate::cnn::{ConvLayer, DenseLayer, Layer, LayerSpec, Network};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::similarity::SimilarityReport;
use crate::tensor::{Matrix, Tensor4};

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Merge {
    pub keep: usize,
    /// Sorted, never contains `keep`.
    pub remove: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrunePlan {
    pub layer_id: usize,
    pub merges: Vec<Merge>,
    pub created_at_step: u64,
}

impl PrunePlan {
    /// Every removed filter, ascending.
    pub fn removed(&self) -> Vec<usize> {
        let mut all: Vec<usize> = self.merges.iter().flat_map(|m| m.remove.iter().copied()).collect();
        all.sort_unstable();
        all
    }

    pub fn removed_count(&self) -> usize {
        self.merges.iter().map(|m| m.remove.len()).sum()
    }

    /// Checks disjointness and bounds against a layer of `filters` filters.
    pub fn validate(&self, filters: usize) -> Result<()> {
        if self.merges.is_empty() || self.removed_count() == 0 {
            return Err(Error::NothingToPrune);
        }
        let mut seen = vec![false; filters];
        for m in &self.merges {
            if m.remove.windows(2).any(|w| w[1] <= w[0]) {
                return Err(Error::Invalid(format!("merge into {} has unsorted removals", m.keep)));
            }
            for &i in std::iter::once(&m.keep).chain(&m.remove) {
                if i >= filters {
                    return Err(Error::Index {
                        what: "filter",
                        index: i,
                        len: filters,
                    });
                }
                if seen[i] {
                    return Err(Error::Invalid(format!("filter {i} appears in more than one merge")));
                }
                seen[i] = true;
            }
        }
        Ok(())
    }
}

/// One merge per similarity group: keep its smallest member, remove the rest.
pub fn plan_prune(report: &SimilarityReport) -> Result<PrunePlan> {
    if report.groups.is_empty() {
        return Err(Error::NothingToPrune);
    }
    let merges = report
        .groups
        .iter()
        .map(|g| Merge {
            keep: g.keep,
            remove: g.members.iter().copied().filter(|&m| m != g.keep).collect(),
        })
        .collect();
    Ok(PrunePlan {
        layer_id: report.layer_id,
        merges,
        created_at_step: report.step,
    })
}

/// Returns a copy of `net` with the plan's filters removed.
///
/// The next parametric layer absorbs each removed filter's outgoing weights
/// into the kept filter's: input channels for a convolution, and for a dense
/// layer the flattened rows `p * c + r` at every spatial position `p`.
pub fn apply_prune<T: Scalar>(net: &Network<T>, plan: &PrunePlan) -> Result<Network<T>> {
    let l = plan.layer_id;
    let conv = match net.layer(l) {
        Some(Layer::Conv(c)) => c,
        Some(Layer::Output(_)) => return Err(Error::CannotPruneClassifier),
        Some(_) => return Err(Error::Invalid(format!("layer {l} is not a convolution"))),
        None => {
            return Err(Error::Index {
                what: "layer",
                index: l,
                len: net.layers().len(),
            })
        }
    };
    let f = conv.filters();
    plan.validate(f)?;
    let removed = plan.removed();
    let mut kept_at = vec![None; f];
    let mut next = 0;
    for (i, slot) in kept_at.iter_mut().enumerate() {
        if removed.binary_search(&i).is_err() {
            *slot = Some(next);
            next += 1;
        }
    }
    let kept: Vec<usize> = (0..f).filter(|i| kept_at[*i].is_some()).collect();
    let f_new = kept.len();

    let mut layers = net.layers().to_vec();
    let [w, _, c, _] = conv.kernel.shape();
    let kernel = Tensor4::from_raw([w, w, c, f_new], {
        let src = conv.kernel.data();
        let mut out = Vec::with_capacity(w * w * c * f_new);
        for base in (0..src.len()).step_by(f) {
            out.extend(kept.iter().map(|&k| src[base + k]));
        }
        out
    });
    let bias = kept.iter().map(|&k| conv.bias[k]).collect();
    layers[l] = Layer::Conv(ConvLayer { kernel, bias });

    let downstream = (l + 1..layers.len())
        .find(|&i| !matches!(layers[i], Layer::MaxPool { .. }))
        .ok_or_else(|| Error::Invalid(format!("convolution {l} has no downstream layer")))?;
    match &mut layers[downstream] {
        Layer::Conv(next) => {
            *next = merge_channels(next, plan, &kept);
        }
        Layer::Dense(d) | Layer::Output(d) => {
            *d = merge_rows(d, plan, &kept, f)?;
        }
        Layer::MaxPool { .. } => unreachable!("pooling layers are skipped"),
    }

    let mut spec = net.spec().clone();
    match &mut spec.layers[l] {
        LayerSpec::Conv { filters, .. } => *filters = f_new,
        other => return Err(Error::shape(format!("spec layer {l} is {other:?}"))),
    }
    Network::from_parts(spec, layers, net.step())
}

fn merge_channels<T: Scalar>(next: &ConvLayer<T>, plan: &PrunePlan, kept: &[usize]) -> ConvLayer<T> {
    let [w, _, c, f2] = next.kernel.shape();
    let mut src = next.kernel.data().to_vec();
    for pos in 0..w * w {
        let base = pos * c * f2;
        for m in &plan.merges {
            for &r in &m.remove {
                for o in 0..f2 {
                    src[base + m.keep * f2 + o] = src[base + m.keep * f2 + o] + src[base + r * f2 + o];
                }
            }
        }
    }
    let mut out = Vec::with_capacity(w * w * kept.len() * f2);
    for pos in 0..w * w {
        for &k in kept {
            let at = (pos * c + k) * f2;
            out.extend_from_slice(&src[at..at + f2]);
        }
    }
    ConvLayer {
        kernel: Tensor4::from_raw([w, w, kept.len(), f2], out),
        bias: next.bias.clone(),
    }
}

fn merge_rows<T: Scalar>(d: &DenseLayer<T>, plan: &PrunePlan, kept: &[usize], c: usize) -> Result<DenseLayer<T>> {
    let rows = d.weights.rows();
    if !rows.is_multiple_of(c) {
        return Err(Error::shape(format!("{rows} dense inputs do not split into {c} channels")));
    }
    let positions = rows / c;
    let units = d.weights.cols();
    let mut w = d.weights.clone();
    for p in 0..positions {
        for m in &plan.merges {
            for &r in &m.remove {
                for u in 0..units {
                    let v = w.get(p * c + m.keep, u) + w.get(p * c + r, u);
                    w.set(p * c + m.keep, u, v);
                }
            }
        }
    }
    let mut out = Vec::with_capacity(positions * kept.len() * units);
    for p in 0..positions {
        for &k in kept {
            out.extend_from_slice(w.row(p * c + k));
        }
    }
    Ok(DenseLayer {
        weights: Matrix::from_raw(positions * kept.len(), units, out),
        bias: d.bias.clone(),
    })
}
