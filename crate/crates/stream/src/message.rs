//! Typed frame bodies.

use indexmap::IndexMap;
use insitu_core::cnn::NetworkSpec;
use insitu_core::{PolyData, PrunePlan, ViewKind};
use serde::{Deserialize, Serialize};

use crate::error::{Result, StreamError};

pub const PROTOCOL_VERSION: u32 = 1;

/// First frame from a viewer.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClientHello {
    pub protocol_version: u32,
}

/// Server reply to a valid [`ClientHello`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ServerHello {
    pub protocol_version: u32,
    pub network: NetworkSpec,
    pub instrumented_layers: Vec<usize>,
    pub views: Vec<ViewKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GeometryMessage {
    pub view: ViewKind,
    pub layer: usize,
    /// `x, y, z` per point.
    pub points: Vec<f32>,
    /// Four point indices per quad.
    pub quads: Vec<usize>,
    pub verts: Vec<usize>,
    pub scalars: IndexMap<String, Vec<f32>>,
}

impl GeometryMessage {
    pub fn new(view: ViewKind, layer: usize, pd: &PolyData) -> Self {
        GeometryMessage {
            view,
            layer,
            points: pd.points.iter().flatten().copied().collect(),
            quads: pd.quads.iter().flatten().copied().collect(),
            verts: pd.verts.clone(),
            scalars: pd.point_scalars.clone(),
        }
    }

    pub fn to_polydata(&self) -> Result<PolyData> {
        if !self.points.len().is_multiple_of(3) || !self.quads.len().is_multiple_of(4) {
            return Err(StreamError::Protocol("ragged geometry arrays".into()));
        }
        let pd = PolyData {
            points: self.points.chunks_exact(3).map(|c| [c[0], c[1], c[2]]).collect(),
            verts: self.verts.clone(),
            quads: self.quads.chunks_exact(4).map(|c| [c[0], c[1], c[2], c[3]]).collect(),
            point_scalars: self.scalars.clone(),
        };
        pd.validate()?;
        Ok(pd)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProposalGroup {
    pub members: Vec<usize>,
    pub keep: usize,
    /// Smallest pairwise PCC inside the group.
    pub min_pcc: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PruneProposal {
    pub proposal_id: u64,
    pub plan: PrunePlan,
    pub groups: Vec<ProposalGroup>,
    pub filter_count: usize,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PruneAction {
    Apply,
    Dismiss,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneCommand {
    pub proposal_id: u64,
    pub action: PruneAction,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PruneAck {
    pub proposal_id: u64,
    pub applied: bool,
    pub new_filter_count: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reason: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepBegin {
    pub filter_counts: Vec<(usize, usize)>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct StepEnd {
    /// Frames in this step group, including `step_begin` and this one.
    pub frames: usize,
    /// Whole step groups dropped on this connection so far.
    pub dropped: u64,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Bye {
    pub reason: String,
}
