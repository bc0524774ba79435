//! Geometry views of weights and activations.
//!
//! Every view is a [`PolyData`] carrying raw scalars; colouring is left to the
//! renderer. Windows are laid out on a [`GridLayout`] whose window 0 sits in
//! the lower-left corner, filling each row left to right before moving up.

use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::similarity::SimilarityReport;
use crate::tensor::{Tensor3, Tensor4};

/// Polygonal geometry: points, single-point vertex cells, quads and named
/// per-point scalars. The first scalar array is the active one.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolyData {
    pub points: Vec<[f32; 3]>,
    pub verts: Vec<usize>,
    pub quads: Vec<[usize; 4]>,
    pub point_scalars: IndexMap<String, Vec<f32>>,
}

impl PolyData {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn num_points(&self) -> usize {
        self.points.len()
    }

    /// Checks cell indices and scalar lengths against the point count.
    pub fn validate(&self) -> Result<()> {
        let n = self.points.len();
        if let Some(&bad) = self
            .verts
            .iter()
            .chain(self.quads.iter().flatten())
            .find(|&&i| i >= n)
        {
            return Err(Error::Index {
                what: "cell point",
                index: bad,
                len: n,
            });
        }
        for (name, values) in &self.point_scalars {
            if values.len() != n {
                return Err(Error::shape(format!(
                    "scalar '{name}' has {} values for {n} points",
                    values.len()
                )));
            }
        }
        Ok(())
    }

    fn scalar_mut(&mut self, name: &str) -> &mut Vec<f32> {
        self.point_scalars.entry(name.to_string()).or_default()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ViewKind {
    WeightGrid,
    ImageGrid,
    DistributionGrid,
    Trajectory,
}

impl ViewKind {
    pub const ALL: [ViewKind; 4] = [
        ViewKind::WeightGrid,
        ViewKind::ImageGrid,
        ViewKind::DistributionGrid,
        ViewKind::Trajectory,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ViewKind::WeightGrid => "weight_grid",
            ViewKind::ImageGrid => "image_grid",
            ViewKind::DistributionGrid => "distribution_grid",
            ViewKind::Trajectory => "trajectory",
        }
    }
}

impl fmt::Display for ViewKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for ViewKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        ViewKind::ALL
            .into_iter()
            .find(|v| v.as_str() == s)
            .ok_or_else(|| Error::Invalid(format!("unknown view '{s}'")))
    }
}

/// Arrangement of windows into rows and columns.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridLayout {
    pub rows: usize,
    pub cols: usize,
    pub window_count: usize,
}

impl GridLayout {
    /// `(row, col)` of window `k`; row 0 is the bottom row.
    pub fn position(&self, k: usize) -> (usize, usize) {
        (k / self.cols, k % self.cols)
    }

    fn expect_windows(&self, count: usize) -> Result<()> {
        if self.window_count != count || self.rows * self.cols < count {
            return Err(Error::shape(format!(
                "layout for {} windows ({}x{}) cannot hold {count}",
                self.window_count, self.rows, self.cols
            )));
        }
        Ok(())
    }
}

/// `rows = 2^floor(log2(floor(sqrt(f))))`, `cols = ceil(f / rows)`.
///
/// Gives 4x4 for 16 windows, 4x8 for 32 and 8x8 for 64.
pub fn grid_layout(f: usize) -> Result<GridLayout> {
    if f == 0 {
        return Err(Error::Invalid("grid layout for zero windows".into()));
    }
    let root = f.isqrt();
    let rows = 1usize << root.ilog2();
    Ok(GridLayout {
        rows,
        cols: f.div_ceil(rows),
        window_count: f,
    })
}

/// Spacing between image/distribution window origins: a unit cell plus gap.
pub const CELL_PITCH: f32 = 1.125;

/// Weight-grid window `(row, col)` origin for `w`-wide windows separated by
/// one block.
fn weight_window_origin(row: usize, col: usize, w: usize) -> (f64, f64) {
    let pitch = (w + 1) as f64;
    (col as f64 * pitch, row as f64 * pitch)
}

/// One unit quad per weight value, lifted to `z = weight`.
///
/// Window `k = filter * channels + channel`; inside a window the kernel's
/// first row is drawn at the top.
pub fn build_weight_grid<T: Scalar>(weights: &Tensor4<T>, layout: &GridLayout) -> Result<PolyData> {
    let [w, w2, c, f] = weights.shape();
    if w != w2 {
        return Err(Error::shape("weight windows must be square"));
    }
    layout.expect_windows(c * f)?;
    let blocks = w * w * c * f;
    let mut pd = PolyData {
        points: Vec::with_capacity(blocks * 4),
        quads: Vec::with_capacity(blocks),
        ..PolyData::default()
    };
    let mut scalars = Vec::with_capacity(blocks * 4);
    for filter in 0..f {
        for channel in 0..c {
            let (row, col) = layout.position(filter * c + channel);
            let (x0, y0) = weight_window_origin(row, col, w);
            for p in 0..w {
                for q in 0..w {
                    let value = weights.get([p, q, channel, filter]).as_f32();
                    let x = (x0 + q as f64) as f32;
                    let y = (y0 + (w - 1 - p) as f64) as f32;
                    let base = pd.points.len();
                    pd.points.extend_from_slice(&[
                        [x, y, value],
                        [x + 1.0, y, value],
                        [x + 1.0, y + 1.0, value],
                        [x, y + 1.0, value],
                    ]);
                    pd.quads.push([base, base + 1, base + 2, base + 3]);
                    scalars.extend_from_slice(&[value; 4]);
                }
            }
        }
    }
    pd.point_scalars.insert("weight".into(), scalars);
    Ok(pd)
}

/// One point per pixel of every batch-summed feature map, scalar `intensity`.
///
/// Points carry no cells.
pub fn build_image_grid<T: Scalar>(summed: &Tensor3<T>, layout: &GridLayout) -> Result<PolyData> {
    let [h, w, f] = summed.shape();
    layout.expect_windows(f)?;
    let n = h * w * f;
    let mut pd = PolyData {
        points: Vec::with_capacity(n),
        ..PolyData::default()
    };
    let mut intensity = Vec::with_capacity(n);
    let (sx, sy) = (1.0 / w as f64, 1.0 / h as f64);
    for k in 0..f {
        let (row, col) = layout.position(k);
        let (x0, y0) = (col as f64 * CELL_PITCH as f64, row as f64 * CELL_PITCH as f64);
        for i in 0..h {
            let y = (y0 + ((h - 1 - i) as f64 + 0.5) * sy) as f32;
            for j in 0..w {
                let x = (x0 + (j as f64 + 0.5) * sx) as f32;
                pd.points.push([x, y, 0.0]);
                intensity.push(summed.get([i, j, k]).as_f32());
            }
        }
    }
    pd.point_scalars.insert("intensity".into(), intensity);
    Ok(pd)
}

/// Flattened feature maps as value-over-pixel-index plots, coloured by group.
///
/// Window-local `x = i / (m*m - 1)` and `y = value / max`, where `max` is
/// taken over the whole grid. Scalar `group` is the 1-based group of the
/// window's filter in `report` (0 when ungrouped).
/// An all-zero grid yields `y = 0` and an extra `degenerate = 1` scalar.
pub fn build_distribution_grid<T: Scalar>(
    summed: &Tensor3<T>,
    layout: &GridLayout,
    report: Option<&SimilarityReport>,
) -> Result<PolyData> {
    let [h, w, f] = summed.shape();
    layout.expect_windows(f)?;
    let groups = match report {
        Some(r) => {
            if r.filters() != f {
                return Err(Error::shape(format!(
                    "similarity report covers {} filters, grid has {f}",
                    r.filters()
                )));
            }
            r.group_ids()
        }
        None => vec![0; f],
    };
    let len = h * w;
    let global_max = summed.max_value();
    let degenerate = !(global_max > T::zero());
    let mut pd = PolyData {
        points: Vec::with_capacity(len * f),
        verts: Vec::with_capacity(len * f),
        ..PolyData::default()
    };
    let mut group = Vec::with_capacity(len * f);
    for k in 0..f {
        let (row, col) = layout.position(k);
        let (x0, y0) = (col as f64 * CELL_PITCH as f64, row as f64 * CELL_PITCH as f64);
        let values = summed.window(k)?;
        for (i, v) in values.into_iter().enumerate() {
            let lx = if len > 1 {
                i as f64 / (len - 1) as f64
            } else {
                0.0
            };
            let ly = if degenerate {
                0.0
            } else {
                (v / global_max).as_f64()
            };
            pd.verts.push(pd.points.len());
            pd.points.push([(x0 + lx) as f32, (y0 + ly) as f32, 0.0]);
            group.push(groups[k] as f32);
        }
    }
    pd.point_scalars.insert("group".into(), group);
    if degenerate {
        let n = pd.points.len();
        pd.scalar_mut("degenerate").extend(std::iter::repeat_n(1.0, n));
    }
    Ok(pd)
}

/// Path of three chosen weight coordinates over training steps.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryTrace {
    dims: [usize; 3],
    points: Vec<[f64; 3]>,
    steps: Vec<u64>,
}

impl TrajectoryTrace {
    /// `dims` index the row-major flattened kernel and must be distinct.
    pub fn new(dims: [usize; 3]) -> Result<Self> {
        if dims[0] == dims[1] || dims[1] == dims[2] || dims[0] == dims[2] {
            return Err(Error::Invalid(format!("trajectory dims {dims:?} are not distinct")));
        }
        Ok(TrajectoryTrace {
            dims,
            points: Vec::new(),
            steps: Vec::new(),
        })
    }

    /// Rebuilds a trace from stored parts.
    pub fn from_parts(dims: [usize; 3], points: Vec<[f64; 3]>, steps: Vec<u64>) -> Result<Self> {
        let mut trace = TrajectoryTrace::new(dims)?;
        if points.len() != steps.len() {
            return Err(Error::shape(format!(
                "{} trajectory points for {} steps",
                points.len(),
                steps.len()
            )));
        }
        if steps.windows(2).any(|s| s[1] <= s[0]) {
            return Err(Error::Invalid("trajectory steps must increase".into()));
        }
        trace.points = points;
        trace.steps = steps;
        Ok(trace)
    }

    pub fn dims(&self) -> [usize; 3] {
        self.dims
    }

    pub fn points(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn steps(&self) -> &[u64] {
        &self.steps
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn append<T: Scalar>(&mut self, weights: &Tensor4<T>, step: u64) -> Result<()> {
        if let Some(&last) = self.steps.last() {
            if step <= last {
                return Err(Error::Invalid(format!(
                    "trajectory step {step} does not follow {last}"
                )));
            }
        }
        let data = weights.data();
        for &d in &self.dims {
            if d >= data.len() {
                return Err(Error::Index {
                    what: "weight dimension",
                    index: d,
                    len: data.len(),
                });
            }
        }
        self.points.push(self.dims.map(|d| data[d].as_f64()));
        self.steps.push(step);
        Ok(())
    }

    /// Sum of segment lengths between consecutive points whose later
    /// endpoint is recorded after `after_step`.
    pub fn path_length_after(&self, after_step: u64) -> f64 {
        self.points
            .windows(2)
            .zip(self.steps.windows(2))
            .filter(|(_, s)| s[0] >= after_step)
            .map(|(p, _)| {
                let d: f64 = (0..3).map(|a| (p[1][a] - p[0][a]).powi(2)).sum();
                d.sqrt()
            })
            .sum()
    }

    /// One vertex per recorded step, scalar `step`.
    pub fn to_polydata(&self) -> PolyData {
        let mut pd = PolyData {
            points: self
                .points
                .iter()
                .map(|p| p.map(|v| v as f32))
                .collect(),
            verts: (0..self.points.len()).collect(),
            ..PolyData::default()
        };
        pd.point_scalars.insert(
            "step".into(),
            self.steps.iter().map(|&s| s as f32).collect(),
        );
        pd
    }
}

/// Elementwise running sum of batch-summed maps across batches.
pub fn accumulate<T: Scalar>(running: &Tensor3<T>, summed: &Tensor3<T>) -> Result<Tensor3<T>> {
    if running.shape() != summed.shape() {
        return Err(Error::shape(format!(
            "cannot accumulate {:?} into {:?}",
            summed.shape(),
            running.shape()
        )));
    }
    let data = running
        .data()
        .iter()
        .zip(summed.data())
        .map(|(&a, &b)| a + b)
        .collect();
    Tensor3::new(running.shape(), data)
}
