use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// One stage of a network description.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LayerSpec {
    /// Valid-padding, stride-1 convolution followed by ReLU.
    Conv { filters: usize, window: usize },
    /// Non-overlapping max pooling; trailing rows/columns are dropped.
    MaxPool { size: usize },
    /// Fully connected layer followed by ReLU. Flattens spatial input.
    Dense { units: usize },
    /// Fully connected classifier with softmax.
    SoftmaxOutput { classes: usize },
}

/// Activation shape flowing between layers (batch axis omitted).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Shape {
    Spatial { height: usize, width: usize, channels: usize },
    Flat(usize),
}

impl Shape {
    pub fn size(&self) -> usize {
        match *self {
            Shape::Spatial {
                height,
                width,
                channels,
            } => height * width * channels,
            Shape::Flat(n) => n,
        }
    }
}

/// A layer with its input and output shapes resolved.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ResolvedLayer {
    pub spec: LayerSpec,
    pub input: Shape,
    pub output: Shape,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkSpec {
    /// `[height, width, channels]`
    pub input_shape: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl Default for NetworkSpec {
    fn default() -> Self {
        NetworkSpec::simplified_lenet()
    }
}

impl NetworkSpec {
    /// conv(16, 3x3) -> pool(2) -> conv(32, 3x3) -> pool(2) -> dense(512) -> softmax(10)
    /// over 28x28 grayscale input.
    pub fn simplified_lenet() -> Self {
        NetworkSpec {
            input_shape: [28, 28, 1],
            layers: vec![
                LayerSpec::Conv {
                    filters: 16,
                    window: 3,
                },
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Conv {
                    filters: 32,
                    window: 3,
                },
                LayerSpec::MaxPool { size: 2 },
                LayerSpec::Dense { units: 512 },
                LayerSpec::SoftmaxOutput { classes: 10 },
            ],
        }
    }

    /// Chains shapes through every layer, rejecting inconsistent stacks.
    pub fn resolve(&self) -> Result<Vec<ResolvedLayer>> {
        let [h, w, c] = self.input_shape;
        if h == 0 || w == 0 || c == 0 {
            return Err(Error::shape(format!(
                "input shape {:?} has a zero extent",
                self.input_shape
            )));
        }
        if !matches!(self.layers.last(), Some(LayerSpec::SoftmaxOutput { .. })) {
            return Err(Error::shape("network must end with a softmax output layer"));
        }
        let mut shape = Shape::Spatial {
            height: h,
            width: w,
            channels: c,
        };
        let mut out = Vec::with_capacity(self.layers.len());
        for (i, &spec) in self.layers.iter().enumerate() {
            let input = shape;
            let output = match (spec, input) {
                (
                    LayerSpec::Conv { filters, window },
                    Shape::Spatial {
                        height, width, ..
                    },
                ) => {
                    if filters == 0 || window == 0 {
                        return Err(Error::shape(format!("layer {i}: empty convolution")));
                    }
                    if height < window || width < window {
                        return Err(Error::shape(format!(
                            "layer {i}: {height}x{width} input smaller than {window}x{window} window"
                        )));
                    }
                    Shape::Spatial {
                        height: height - window + 1,
                        width: width - window + 1,
                        channels: filters,
                    }
                }
                (
                    LayerSpec::MaxPool { size },
                    Shape::Spatial {
                        height,
                        width,
                        channels,
                    },
                ) => {
                    if size == 0 || height < size || width < size {
                        return Err(Error::shape(format!(
                            "layer {i}: cannot pool {height}x{width} by {size}"
                        )));
                    }
                    Shape::Spatial {
                        height: height / size,
                        width: width / size,
                        channels,
                    }
                }
                (LayerSpec::Dense { units }, _) => {
                    if units == 0 {
                        return Err(Error::shape(format!("layer {i}: dense layer with no units")));
                    }
                    Shape::Flat(units)
                }
                (LayerSpec::SoftmaxOutput { classes }, _) => {
                    if i + 1 != self.layers.len() {
                        return Err(Error::shape("softmax output must be the last layer"));
                    }
                    if classes < 2 {
                        return Err(Error::shape("softmax output needs at least two classes"));
                    }
                    Shape::Flat(classes)
                }
                (spec, Shape::Flat(_)) => {
                    return Err(Error::shape(format!(
                        "layer {i}: {spec:?} cannot follow a flattened layer"
                    )))
                }
            };
            out.push(ResolvedLayer {
                spec,
                input,
                output,
            });
            shape = output;
        }
        Ok(out)
    }

    pub fn classes(&self) -> usize {
        match self.layers.last() {
            Some(LayerSpec::SoftmaxOutput { classes }) => *classes,
            _ => 0,
        }
    }

    /// Indices of the convolutional layers.
    pub fn conv_layers(&self) -> Vec<usize> {
        self.layers
            .iter()
            .enumerate()
            .filter(|(_, l)| matches!(l, LayerSpec::Conv { .. }))
            .map(|(i, _)| i)
            .collect()
    }
}
