use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::data::{Batch, Dataset};
use super::ops;
use super::spec::{LayerSpec, NetworkSpec, ResolvedLayer, Shape};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor4};

/// Half-width of the uniform initialization interval.
pub const INIT_SCALE: f64 = 0.1;

#[derive(Clone, Debug, PartialEq)]
pub struct ConvLayer<T> {
    pub(crate) kernel: Tensor4<T>,
    pub(crate) bias: Vec<T>,
}

impl<T: Scalar> ConvLayer<T> {
    pub fn new(kernel: Tensor4<T>, bias: Vec<T>) -> Result<Self> {
        let [kh, kw, _, f] = kernel.shape();
        if kh != kw || bias.len() != f {
            return Err(Error::shape(format!(
                "kernel {:?} does not match {} biases",
                kernel.shape(),
                bias.len()
            )));
        }
        Ok(ConvLayer { kernel, bias })
    }

    /// `[w, w, c, f]` weights.
    pub fn kernel(&self) -> &Tensor4<T> {
        &self.kernel
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn kernel_data_mut(&mut self) -> &mut [T] {
        self.kernel.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }

    pub fn window(&self) -> usize {
        self.kernel.shape()[0]
    }

    pub fn channels(&self) -> usize {
        self.kernel.shape()[2]
    }

    pub fn filters(&self) -> usize {
        self.kernel.shape()[3]
    }

    /// Copies kernel slice and bias of filter `from` over filter `to`.
    pub fn copy_filter(&mut self, from: usize, to: usize) -> Result<()> {
        let f = self.filters();
        for idx in [from, to] {
            if idx >= f {
                return Err(Error::Index {
                    what: "filter",
                    index: idx,
                    len: f,
                });
            }
        }
        let data = self.kernel.data_mut();
        for chunk in data.chunks_exact_mut(f) {
            chunk[to] = chunk[from];
        }
        self.bias[to] = self.bias[from];
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DenseLayer<T> {
    /// `[inputs, units]`
    pub(crate) weights: Matrix<T>,
    pub(crate) bias: Vec<T>,
}

impl<T: Scalar> DenseLayer<T> {
    pub fn new(weights: Matrix<T>, bias: Vec<T>) -> Result<Self> {
        if bias.len() != weights.cols() {
            return Err(Error::shape(format!(
                "{}x{} weights do not match {} biases",
                weights.rows(),
                weights.cols(),
                bias.len()
            )));
        }
        Ok(DenseLayer { weights, bias })
    }

    pub fn weights(&self) -> &Matrix<T> {
        &self.weights
    }

    pub fn bias(&self) -> &[T] {
        &self.bias
    }

    pub fn weights_data_mut(&mut self) -> &mut [T] {
        self.weights.data_mut()
    }

    pub fn bias_mut(&mut self) -> &mut [T] {
        &mut self.bias
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum Layer<T> {
    Conv(ConvLayer<T>),
    MaxPool { size: usize },
    Dense(DenseLayer<T>),
    Output(DenseLayer<T>),
}

impl<T: Scalar> Layer<T> {
    pub fn parameter_count(&self) -> usize {
        match self {
            Layer::Conv(c) => c.kernel.len() + c.bias.len(),
            Layer::MaxPool { .. } => 0,
            Layer::Dense(d) | Layer::Output(d) => d.weights.data().len() + d.bias.len(),
        }
    }
}

/// How per-sample losses are combined into the training objective.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Reduction {
    /// Sum over the batch (gradient magnitude grows with batch size).
    #[default]
    Sum,
    Mean,
}

/// Plain stochastic gradient descent: `w <- w - lr * grad`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Sgd {
    pub lr: f64,
    pub reduction: Reduction,
}

impl Sgd {
    pub fn new(lr: f64) -> Self {
        Sgd {
            lr,
            reduction: Reduction::default(),
        }
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }
}

/// Layer output kept for the backward pass.
#[derive(Clone, Debug)]
pub enum Activation<T> {
    Spatial(Tensor4<T>),
    Flat(Matrix<T>),
}

impl<T: Scalar> Activation<T> {
    fn flat(&self) -> Matrix<T> {
        match self {
            Activation::Flat(m) => m.clone(),
            Activation::Spatial(t) => {
                let b = t.shape()[0];
                let n = t.len() / b.max(1);
                Matrix::from_raw(b, n, t.data().to_vec())
            }
        }
    }

    fn spatial(&self) -> &Tensor4<T> {
        match self {
            Activation::Spatial(t) => t,
            Activation::Flat(_) => unreachable!("spatial layer after flatten"),
        }
    }
}

struct ForwardTrace<T> {
    /// `outputs[i]` is the output of layer `i` (post-ReLU; logits for the head).
    outputs: Vec<Activation<T>>,
    argmax: Vec<Option<Vec<usize>>>,
}

/// Per-parameter gradients, shaped like the network's layers.
#[derive(Clone, Debug)]
pub enum LayerGradient<T> {
    Conv { kernel: Tensor4<T>, bias: Vec<T> },
    Dense { weights: Matrix<T>, bias: Vec<T> },
    None,
}

#[derive(Clone, Debug)]
pub struct Gradients<T> {
    pub layers: Vec<LayerGradient<T>>,
}

impl<T: Scalar> Gradients<T> {
    /// Gradient slices in the same order as [`Network::parameters_mut`].
    pub fn slices(&self) -> Vec<(ParamId, &[T])> {
        let mut out = Vec::new();
        for (layer, g) in self.layers.iter().enumerate() {
            match g {
                LayerGradient::Conv { kernel, bias } => {
                    out.push((ParamId::new(layer, ParamKind::ConvKernel), kernel.data()));
                    out.push((ParamId::new(layer, ParamKind::ConvBias), bias.as_slice()));
                }
                LayerGradient::Dense { weights, bias } => {
                    out.push((ParamId::new(layer, ParamKind::DenseWeight), weights.data()));
                    out.push((ParamId::new(layer, ParamKind::DenseBias), bias.as_slice()));
                }
                LayerGradient::None => {}
            }
        }
        out
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvKernel,
    ConvBias,
    DenseWeight,
    DenseBias,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId {
    pub layer: usize,
    pub kind: ParamKind,
}

impl ParamId {
    fn new(layer: usize, kind: ParamKind) -> Self {
        ParamId { layer, kind }
    }
}

/// What the training loop hands to the visualization side after each step.
#[derive(Clone, Debug)]
pub struct StepRecord<T> {
    /// 1-based index of the step that produced this record.
    pub step: u64,
    /// Mean cross-entropy over the batch, before the update.
    pub loss: f64,
    /// Post-ReLU output `[b, m, m, f]` of each convolutional layer, by layer index.
    pub activations: Vec<(usize, Tensor4<T>)>,
    /// Convolution kernels after the update, by layer index.
    pub weights: Vec<(usize, Tensor4<T>)>,
}

impl<T: Scalar> StepRecord<T> {
    pub fn activation(&self, layer: usize) -> Option<&Tensor4<T>> {
        self.activations
            .iter()
            .find(|(l, _)| *l == layer)
            .map(|(_, t)| t)
    }

    pub fn kernel(&self, layer: usize) -> Option<&Tensor4<T>> {
        self.weights.iter().find(|(l, _)| *l == layer).map(|(_, t)| t)
    }
}

/// A trainable convolutional network.
#[derive(Clone, Debug, PartialEq)]
pub struct Network<T> {
    spec: NetworkSpec,
    layers: Vec<Layer<T>>,
    step: u64,
}

impl<T: Scalar> Network<T> {
    /// Parameters drawn uniformly from `[-0.1, 0.1)`, layer by layer, weights
    /// before biases.
    pub fn init(spec: &NetworkSpec, seed: u64) -> Result<Self> {
        let resolved = spec.resolve()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut draw = |n: usize| -> Vec<T> {
            (0..n)
                .map(|_| T::of(rng.random_range(-INIT_SCALE..INIT_SCALE)))
                .collect()
        };
        let layers = resolved
            .iter()
            .map(|r| match (r.spec, r.input) {
                (LayerSpec::Conv { filters, window }, Shape::Spatial { channels, .. }) => {
                    let shape = [window, window, channels, filters];
                    let kernel = Tensor4::from_raw(shape, draw(shape.iter().product()));
                    Layer::Conv(ConvLayer {
                        kernel,
                        bias: draw(filters),
                    })
                }
                (LayerSpec::MaxPool { size }, _) => Layer::MaxPool { size },
                (LayerSpec::Dense { units }, input) => {
                    let n = input.size();
                    Layer::Dense(DenseLayer {
                        weights: Matrix::from_raw(n, units, draw(n * units)),
                        bias: draw(units),
                    })
                }
                (LayerSpec::SoftmaxOutput { classes }, input) => {
                    let n = input.size();
                    Layer::Output(DenseLayer {
                        weights: Matrix::from_raw(n, classes, draw(n * classes)),
                        bias: draw(classes),
                    })
                }
                (LayerSpec::Conv { .. }, Shape::Flat(_)) => unreachable!("rejected by resolve"),
            })
            .collect();
        Ok(Network {
            spec: spec.clone(),
            layers,
            step: 0,
        })
    }

    /// Assembles a network from explicit layers, checking them against `spec`.
    pub fn from_parts(spec: NetworkSpec, layers: Vec<Layer<T>>, step: u64) -> Result<Self> {
        let net = Network { spec, layers, step };
        net.check_consistency()?;
        Ok(net)
    }

    pub(crate) fn check_consistency(&self) -> Result<()> {
        let resolved = self.spec.resolve()?;
        if resolved.len() != self.layers.len() {
            return Err(Error::shape(format!(
                "spec has {} layers, network has {}",
                resolved.len(),
                self.layers.len()
            )));
        }
        for (i, (r, layer)) in resolved.iter().zip(&self.layers).enumerate() {
            let ok = match (r.spec, layer) {
                (LayerSpec::Conv { filters, window }, Layer::Conv(c)) => {
                    let channels = match r.input {
                        Shape::Spatial { channels, .. } => channels,
                        Shape::Flat(_) => 0,
                    };
                    c.kernel.shape() == [window, window, channels, filters]
                        && c.bias.len() == filters
                }
                (LayerSpec::MaxPool { size }, Layer::MaxPool { size: s }) => size == *s,
                (LayerSpec::Dense { units }, Layer::Dense(d))
                | (LayerSpec::SoftmaxOutput { classes: units }, Layer::Output(d)) => {
                    d.weights.rows() == r.input.size()
                        && d.weights.cols() == units
                        && d.bias.len() == units
                }
                _ => false,
            };
            if !ok {
                return Err(Error::shape(format!("layer {i} does not match {:?}", r.spec)));
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> &NetworkSpec {
        &self.spec
    }

    pub fn resolved(&self) -> Vec<ResolvedLayer> {
        self.spec.resolve().expect("network spec validated at construction")
    }

    pub fn layers(&self) -> &[Layer<T>] {
        &self.layers
    }

    pub fn layer(&self, index: usize) -> Option<&Layer<T>> {
        self.layers.get(index)
    }

    pub fn conv(&self, index: usize) -> Option<&ConvLayer<T>> {
        match self.layers.get(index) {
            Some(Layer::Conv(c)) => Some(c),
            _ => None,
        }
    }

    /// Mutable access to a convolution's values; shapes stay fixed.
    pub fn conv_mut(&mut self, index: usize) -> Option<&mut ConvLayer<T>> {
        match self.layers.get_mut(index) {
            Some(Layer::Conv(c)) => Some(c),
            _ => None,
        }
    }

    pub fn dense_mut(&mut self, index: usize) -> Option<&mut DenseLayer<T>> {
        match self.layers.get_mut(index) {
            Some(Layer::Dense(d)) | Some(Layer::Output(d)) => Some(d),
            _ => None,
        }
    }

    /// Number of completed training steps.
    pub fn step(&self) -> u64 {
        self.step
    }

    pub fn parameter_count(&self) -> usize {
        self.layers.iter().map(Layer::parameter_count).sum()
    }

    /// Current filter count of every convolutional layer, by layer index.
    pub fn filter_counts(&self) -> Vec<(usize, usize)> {
        self.layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::Conv(c) => Some((i, c.filters())),
                _ => None,
            })
            .collect()
    }

    /// Mutable parameter slices in a fixed order (kernel/weights before bias).
    pub fn parameters_mut(&mut self) -> Vec<(ParamId, &mut [T])> {
        let mut out = Vec::new();
        for (layer, l) in self.layers.iter_mut().enumerate() {
            match l {
                Layer::Conv(c) => {
                    out.push((ParamId::new(layer, ParamKind::ConvKernel), c.kernel.data_mut()));
                    out.push((ParamId::new(layer, ParamKind::ConvBias), c.bias.as_mut_slice()));
                }
                Layer::Dense(d) | Layer::Output(d) => {
                    out.push((ParamId::new(layer, ParamKind::DenseWeight), d.weights.data_mut()));
                    out.push((ParamId::new(layer, ParamKind::DenseBias), d.bias.as_mut_slice()));
                }
                Layer::MaxPool { .. } => {}
            }
        }
        out
    }

    fn check_input(&self, images: &Tensor4<T>) -> Result<()> {
        let [b, h, w, c] = images.shape();
        if b == 0 {
            return Err(Error::EmptyBatch);
        }
        if [h, w, c] != self.spec.input_shape {
            return Err(Error::shape(format!(
                "input {:?} does not match network input {:?}",
                [h, w, c],
                self.spec.input_shape
            )));
        }
        Ok(())
    }

    fn forward_trace(&self, images: &Tensor4<T>) -> Result<ForwardTrace<T>> {
        self.check_input(images)?;
        let mut outputs: Vec<Activation<T>> = Vec::with_capacity(self.layers.len());
        let mut argmax = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let input = if i == 0 {
                None
            } else {
                Some(&outputs[i - 1])
            };
            let (out, arg) = match layer {
                Layer::Conv(c) => {
                    let x = input.map_or(images, Activation::spatial);
                    let mut y = ops::conv2d(x, &c.kernel, &c.bias)?;
                    ops::relu_in_place(y.data_mut());
                    (Activation::Spatial(y), None)
                }
                Layer::MaxPool { size } => {
                    let x = input.map_or(images, Activation::spatial);
                    let (y, arg) = ops::maxpool_with_argmax(x, *size)?;
                    (Activation::Spatial(y), Some(arg))
                }
                Layer::Dense(d) | Layer::Output(d) => {
                    let x = match input {
                        Some(a) => a.flat(),
                        None => Activation::Spatial(images.clone()).flat(),
                    };
                    let mut y = ops::dense(&x, &d.weights, &d.bias)?;
                    if matches!(layer, Layer::Dense(_)) {
                        ops::relu_in_place(y.data_mut());
                    }
                    (Activation::Flat(y), None)
                }
            };
            outputs.push(out);
            argmax.push(arg);
        }
        Ok(ForwardTrace { outputs, argmax })
    }

    /// Raw classifier scores `[b, classes]`.
    pub fn logits(&self, images: &Tensor4<T>) -> Result<Matrix<T>> {
        let mut trace = self.forward_trace(images)?;
        match trace.outputs.pop() {
            Some(Activation::Flat(m)) => Ok(m),
            _ => unreachable!("network ends with a dense head"),
        }
    }

    pub fn probabilities(&self, images: &Tensor4<T>) -> Result<Matrix<T>> {
        self.logits(images).map(|l| ops::softmax(&l))
    }

    /// Post-ReLU outputs of every convolutional layer.
    pub fn conv_activations(&self, images: &Tensor4<T>) -> Result<Vec<(usize, Tensor4<T>)>> {
        let trace = self.forward_trace(images)?;
        Ok(self.take_conv_outputs(trace.outputs))
    }

    fn take_conv_outputs(&self, outputs: Vec<Activation<T>>) -> Vec<(usize, Tensor4<T>)> {
        outputs
            .into_iter()
            .enumerate()
            .filter(|(i, _)| matches!(self.layers[*i], Layer::Conv(_)))
            .map(|(i, a)| match a {
                Activation::Spatial(t) => (i, t),
                Activation::Flat(_) => unreachable!("conv output is spatial"),
            })
            .collect()
    }

    fn check_labels(&self, batch: &Batch<T>) -> Result<()> {
        let b = batch.images.shape()[0];
        if batch.labels.len() != b {
            return Err(Error::shape(format!(
                "{} labels for {b} images",
                batch.labels.len()
            )));
        }
        let classes = self.spec.classes();
        if let Some(&bad) = batch.labels.iter().find(|&&l| l >= classes) {
            return Err(Error::Index {
                what: "class label",
                index: bad,
                len: classes,
            });
        }
        Ok(())
    }

    /// Training objective for `batch` under `reduction`.
    pub fn objective(&self, batch: &Batch<T>, reduction: Reduction) -> Result<T> {
        self.check_labels(batch)?;
        let logits = self.logits(&batch.images)?;
        let losses = ops::cross_entropy(&logits, &batch.labels);
        Ok(reduce(&losses, reduction))
    }

    /// Objective value and its gradient with respect to every parameter.
    pub fn gradients(&self, batch: &Batch<T>, reduction: Reduction) -> Result<(T, Gradients<T>)> {
        let (objective, grads, _) = self.backprop(batch, reduction)?;
        Ok((objective, grads))
    }

    fn backprop(
        &self,
        batch: &Batch<T>,
        reduction: Reduction,
    ) -> Result<(T, Gradients<T>, ForwardTrace<T>)> {
        self.check_labels(batch)?;
        let trace = self.forward_trace(&batch.images)?;
        let logits = match trace.outputs.last() {
            Some(Activation::Flat(m)) => m,
            _ => unreachable!("network ends with a dense head"),
        };
        let losses = ops::cross_entropy(logits, &batch.labels);
        let objective = reduce(&losses, reduction);

        let b = batch.labels.len();
        let scale = match reduction {
            Reduction::Sum => T::one(),
            Reduction::Mean => T::one() / T::of(b as f64),
        };
        let mut grad_logits = ops::softmax(logits);
        for (s, &label) in batch.labels.iter().enumerate() {
            let row = grad_logits.row_mut(s);
            row[label] = row[label] - T::one();
            for v in row.iter_mut() {
                *v = *v * scale;
            }
        }

        let mut grads = vec![LayerGradient::None; self.layers.len()];
        let images = Activation::Spatial(batch.images.clone());
        let mut upstream = Activation::Flat(grad_logits);
        for i in (0..self.layers.len()).rev() {
            let need_input = i > 0;
            let input_act = if i == 0 {
                &images
            } else {
                &trace.outputs[i - 1]
            };
            upstream = match &self.layers[i] {
                Layer::Dense(d) | Layer::Output(d) => {
                    let mut g = match upstream {
                        Activation::Flat(m) => m,
                        Activation::Spatial(_) => unreachable!("dense gradient is flat"),
                    };
                    if matches!(self.layers[i], Layer::Dense(_)) {
                        if let Activation::Flat(out) = &trace.outputs[i] {
                            ops::relu_backward(g.data_mut(), out.data());
                        }
                    }
                    let x = input_act.flat();
                    let dg = ops::dense_backward(&x, &d.weights, &g, need_input);
                    grads[i] = LayerGradient::Dense {
                        weights: dg.weights,
                        bias: dg.bias,
                    };
                    match (dg.input, input_act) {
                        (Some(gx), Activation::Spatial(t)) => Activation::Spatial(
                            Tensor4::from_raw(t.shape(), gx.data().to_vec()),
                        ),
                        (Some(gx), Activation::Flat(_)) => Activation::Flat(gx),
                        (None, _) => break,
                    }
                }
                Layer::MaxPool { .. } => {
                    let g = match &upstream {
                        Activation::Spatial(t) => t.data(),
                        Activation::Flat(m) => m.data(),
                    };
                    let arg = trace.argmax[i].as_ref().expect("pool records argmax");
                    let x = input_act.spatial();
                    Activation::Spatial(ops::maxpool_backward(x.shape(), arg, g))
                }
                Layer::Conv(c) => {
                    let mut g = match upstream {
                        Activation::Spatial(t) => t,
                        Activation::Flat(_) => unreachable!("conv gradient is spatial"),
                    };
                    ops::relu_backward(g.data_mut(), trace.outputs[i].spatial().data());
                    let cg = ops::conv2d_backward(input_act.spatial(), &c.kernel, &g, need_input);
                    grads[i] = LayerGradient::Conv {
                        kernel: cg.kernel,
                        bias: cg.bias,
                    };
                    match cg.input {
                        Some(gx) => Activation::Spatial(gx),
                        None => break,
                    }
                }
            };
        }
        Ok((objective, Gradients { layers: grads }, trace))
    }

    /// One SGD step on `batch`. Leaves the network untouched on error.
    pub fn train_step(&mut self, batch: &Batch<T>, sgd: &Sgd) -> Result<StepRecord<T>> {
        if batch.labels.is_empty() {
            return Err(Error::EmptyBatch);
        }
        if !(sgd.lr >= 0.0) || !sgd.lr.is_finite() {
            return Err(Error::Invalid(format!("learning rate {}", sgd.lr)));
        }
        let (objective, grads, trace) = self.backprop(batch, sgd.reduction)?;
        let lr = T::of(sgd.lr);
        let finite_update = self.layers.iter().zip(&grads.layers).all(|(layer, g)| {
            match (layer, g) {
                (Layer::Conv(c), LayerGradient::Conv { kernel, bias }) => {
                    stays_finite(c.kernel.data(), kernel.data(), lr)
                        && stays_finite(&c.bias, bias, lr)
                }
                (Layer::Dense(d) | Layer::Output(d), LayerGradient::Dense { weights, bias }) => {
                    stays_finite(d.weights.data(), weights.data(), lr)
                        && stays_finite(&d.bias, bias, lr)
                }
                _ => true,
            }
        });
        if !objective.is_finite() || !finite_update {
            return Err(Error::NumericalDivergence {
                step: self.step + 1,
            });
        }
        let mean_loss = match sgd.reduction {
            Reduction::Sum => objective.as_f64() / batch.labels.len() as f64,
            Reduction::Mean => objective.as_f64(),
        };

        for (layer, g) in self.layers.iter_mut().zip(&grads.layers) {
            match (layer, g) {
                (Layer::Conv(c), LayerGradient::Conv { kernel, bias }) => {
                    descend(c.kernel.data_mut(), kernel.data(), lr);
                    descend(&mut c.bias, bias, lr);
                }
                (Layer::Dense(d) | Layer::Output(d), LayerGradient::Dense { weights, bias }) => {
                    descend(d.weights.data_mut(), weights.data(), lr);
                    descend(&mut d.bias, bias, lr);
                }
                _ => {}
            }
        }
        self.step += 1;

        let activations = self.take_conv_outputs(trace.outputs);
        let weights = self
            .layers
            .iter()
            .enumerate()
            .filter_map(|(i, l)| match l {
                Layer::Conv(c) => Some((i, c.kernel.clone())),
                _ => None,
            })
            .collect();
        Ok(StepRecord {
            step: self.step,
            loss: mean_loss,
            activations,
            weights,
        })
    }

    /// Index of the largest logit per sample (first on ties).
    pub fn predict(&self, images: &Tensor4<T>) -> Result<Vec<usize>> {
        let logits = self.logits(images)?;
        Ok((0..logits.rows()).map(|s| argmax(logits.row(s))).collect())
    }

    /// Fraction of correctly classified samples.
    pub fn evaluate(&self, data: &Dataset<T>) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        const CHUNK: usize = 250;
        let mut predictions = Vec::with_capacity(data.len());
        let mut start = 0;
        while start < data.len() {
            let end = (start + CHUNK).min(data.len());
            let images = data.images().slice_outer(start..end)?;
            predictions.extend(self.predict(&images)?);
            start = end;
        }
        Ok(accuracy(&predictions, data.labels()))
    }
}

fn reduce<T: Scalar>(losses: &[T], reduction: Reduction) -> T {
    let total: T = losses.iter().copied().sum();
    match reduction {
        Reduction::Sum => total,
        Reduction::Mean => total / T::of(losses.len() as f64),
    }
}

fn stays_finite<T: Scalar>(params: &[T], grad: &[T], lr: T) -> bool {
    params.iter().zip(grad).all(|(&p, &g)| (p - lr * g).is_finite())
}

fn descend<T: Scalar>(params: &mut [T], grad: &[T], lr: T) {
    for (p, &g) in params.iter_mut().zip(grad) {
        *p = *p - lr * g;
    }
}

pub(crate) fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of positions where `predictions` equals `labels`.
pub fn accuracy(predictions: &[usize], labels: &[usize]) -> f64 {
    if labels.is_empty() {
        return 0.0;
    }
    let correct = predictions
        .iter()
        .zip(labels)
        .filter(|(p, l)| p == l)
        .count();
    correct as f64 / labels.len() as f64
}
