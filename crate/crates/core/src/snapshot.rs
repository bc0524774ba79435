//! Self-describing binary snapshots of a training run.
//!
//! Layout: the 8-byte magic `INSITU\x00\x01`, a little-endian `u32` header
//! length, a JSON header, then every tensor listed in the header as
//! little-endian `f64` values in header order.

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::cnn::{ConvLayer, DenseLayer, Layer, LayerSpec, Network, NetworkSpec};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::similarity::SimilarityReport;
use crate::tensor::{Matrix, Tensor3, Tensor4};
use crate::view::TrajectoryTrace;

pub const MAGIC: [u8; 8] = *b"INSITU\x00\x01";

/// Instrumentation state of one convolutional layer.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerState<T> {
    pub layer: usize,
    /// Batch-summed activations of the snapshot's step.
    pub summed: Option<Tensor3<T>>,
    /// Running sum of batch-summed activations.
    pub accumulated: Option<Tensor3<T>>,
    pub trajectory: Option<TrajectoryTrace>,
    /// Latest similarity evaluation of this layer.
    pub report: Option<SimilarityReport>,
}

impl<T> LayerState<T> {
    pub fn empty(layer: usize) -> Self {
        LayerState {
            layer,
            summed: None,
            accumulated: None,
            trajectory: None,
            report: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Snapshot<T> {
    pub network: Network<T>,
    pub layers: Vec<LayerState<T>>,
}

impl<T> Snapshot<T> {
    pub fn layer(&self, layer: usize) -> Option<&LayerState<T>> {
        self.layers.iter().find(|l| l.layer == layer)
    }
}

#[derive(Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
}

#[derive(Serialize, Deserialize)]
struct LayerHeader {
    layer: usize,
    trajectory_dims: Option<[usize; 3]>,
    report: Option<SimilarityReport>,
}

#[derive(Serialize, Deserialize)]
struct Header {
    step: u64,
    spec: NetworkSpec,
    layers: Vec<LayerHeader>,
    tensors: Vec<TensorEntry>,
}

struct Writer {
    entries: Vec<TensorEntry>,
    data: Vec<u8>,
}

impl Writer {
    fn push<T: Scalar>(&mut self, name: String, shape: &[usize], values: impl IntoIterator<Item = T>) {
        self.entries.push(TensorEntry {
            name,
            shape: shape.to_vec(),
        });
        for v in values {
            self.data.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
}

impl<T: Scalar> Snapshot<T> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = Writer {
            entries: Vec::new(),
            data: Vec::new(),
        };
        for (i, layer) in self.network.layers().iter().enumerate() {
            match layer {
                Layer::Conv(c) => {
                    w.push(format!("layer{i}.kernel"), &c.kernel().shape(), c.kernel().data().iter().copied());
                    w.push(format!("layer{i}.bias"), &[c.bias().len()], c.bias().iter().copied());
                }
                Layer::Dense(d) | Layer::Output(d) => {
                    let m = d.weights();
                    w.push(format!("layer{i}.weights"), &[m.rows(), m.cols()], m.data().iter().copied());
                    w.push(format!("layer{i}.bias"), &[d.bias().len()], d.bias().iter().copied());
                }
                Layer::MaxPool { .. } => {}
            }
        }
        let mut layers = Vec::new();
        for state in &self.layers {
            let l = state.layer;
            if let Some(s) = &state.summed {
                w.push(format!("act{l}.summed"), &s.shape(), s.data().iter().copied());
            }
            if let Some(a) = &state.accumulated {
                w.push(format!("act{l}.accumulated"), &a.shape(), a.data().iter().copied());
            }
            if let Some(t) = &state.trajectory {
                w.push(
                    format!("traj{l}.points"),
                    &[t.len(), 3],
                    t.points().iter().flatten().copied(),
                );
                w.push(format!("traj{l}.steps"), &[t.len()], t.steps().iter().map(|&s| s as f64));
            }
            layers.push(LayerHeader {
                layer: l,
                trajectory_dims: state.trajectory.as_ref().map(TrajectoryTrace::dims),
                report: state.report.clone(),
            });
        }
        let header = Header {
            step: self.network.step(),
            spec: self.network.spec().clone(),
            layers,
            tensors: w.entries,
        };
        let json = serde_json::to_vec(&header).map_err(|e| Error::Parse(e.to_string()))?;
        let mut out = Vec::with_capacity(12 + json.len() + w.data.len());
        out.extend_from_slice(&MAGIC);
        out.extend_from_slice(&(json.len() as u32).to_le_bytes());
        out.extend_from_slice(&json);
        out.extend_from_slice(&w.data);
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 12 || bytes[..8] != MAGIC {
            return Err(Error::Parse("not a snapshot file".into()));
        }
        let len = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes")) as usize;
        let json = bytes
            .get(12..12 + len)
            .ok_or_else(|| Error::Parse("truncated snapshot header".into()))?;
        let header: Header = serde_json::from_slice(json).map_err(|e| Error::Parse(format!("snapshot header: {e}")))?;
        let mut tensors: Tensors<T> = HashMap::new();
        let mut at = 12 + len;
        for entry in header.tensors {
            let n: usize = entry.shape.iter().product();
            let raw = bytes
                .get(at..at + 8 * n)
                .ok_or_else(|| Error::Parse(format!("truncated tensor '{}'", entry.name)))?;
            let values: Vec<T> = raw
                .chunks_exact(8)
                .map(|c| T::of(f64::from_le_bytes(c.try_into().expect("8 bytes"))))
                .collect();
            at += 8 * n;
            tensors.insert(entry.name, (entry.shape, values));
        }
        if at != bytes.len() {
            return Err(Error::Parse(format!("{} trailing bytes in snapshot", bytes.len() - at)));
        }
        let mut layers = Vec::new();
        for (i, spec) in header.spec.layers.iter().enumerate() {
            layers.push(match spec {
                LayerSpec::Conv { .. } => {
                    let (s, k) = take(&mut tensors, format!("layer{i}.kernel"), 4)?;
                    let (_, b) = take(&mut tensors, format!("layer{i}.bias"), 1)?;
                    Layer::Conv(ConvLayer::new(Tensor4::new([s[0], s[1], s[2], s[3]], k)?, b)?)
                }
                LayerSpec::MaxPool { size } => Layer::MaxPool { size: *size },
                LayerSpec::Dense { .. } | LayerSpec::SoftmaxOutput { .. } => {
                    let (s, wt) = take(&mut tensors, format!("layer{i}.weights"), 2)?;
                    let (_, b) = take(&mut tensors, format!("layer{i}.bias"), 1)?;
                    let d = DenseLayer::new(Matrix::new(s[0], s[1], wt)?, b)?;
                    if matches!(spec, LayerSpec::Dense { .. }) {
                        Layer::Dense(d)
                    } else {
                        Layer::Output(d)
                    }
                }
            });
        }
        let network = Network::from_parts(header.spec, layers, header.step)?;
        let mut states = Vec::new();
        for lh in header.layers {
            let l = lh.layer;
            let summed = tensor3(&mut tensors, format!("act{l}.summed"))?;
            let accumulated = tensor3(&mut tensors, format!("act{l}.accumulated"))?;
            let trajectory = match lh.trajectory_dims {
                Some(dims) => {
                    let (_, pts) = take(&mut tensors, format!("traj{l}.points"), 2)?;
                    let (_, steps) = take(&mut tensors, format!("traj{l}.steps"), 1)?;
                    let points = pts.chunks_exact(3).map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()]).collect();
                    let steps = steps.iter().map(|s| s.as_f64() as u64).collect();
                    Some(TrajectoryTrace::from_parts(dims, points, steps)?)
                }
                None => None,
            };
            states.push(LayerState {
                layer: l,
                summed,
                accumulated,
                trajectory,
                report: lh.report,
            });
        }
        Ok(Snapshot {
            network,
            layers: states,
        })
    }

    pub fn save(&self, path: &Path) -> Result<u64> {
        let bytes = self.to_bytes()?;
        fs::write(path, &bytes).map_err(|e| Error::io(path, e))?;
        Ok(bytes.len() as u64)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

type Tensors<T> = HashMap<String, (Vec<usize>, Vec<T>)>;

fn take<T>(tensors: &mut Tensors<T>, name: String, rank: usize) -> Result<(Vec<usize>, Vec<T>)> {
    let (shape, values) = tensors
        .remove(&name)
        .ok_or_else(|| Error::Parse(format!("snapshot lacks tensor '{name}'")))?;
    if shape.len() != rank {
        return Err(Error::Parse(format!("tensor '{name}' has rank {}", shape.len())));
    }
    Ok((shape, values))
}

fn tensor3<T: Scalar>(tensors: &mut Tensors<T>, name: String) -> Result<Option<Tensor3<T>>> {
    match tensors.remove(&name) {
        Some((s, v)) if s.len() == 3 => Ok(Some(Tensor3::new([s[0], s[1], s[2]], v)?)),
        Some(_) => Err(Error::Parse(format!("tensor '{name}' is not rank 3"))),
        None => Ok(None),
    }
}

/// `snapshot_{step:08}.snap`
pub fn snapshot_name(step: u64) -> String {
    format!("snapshot_{step:08}.snap")
}
