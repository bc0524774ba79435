//! Forward and backward kernels for the layer types.
//!
//! All kernels work on whole batches with the channel axis innermost.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{Matrix, Tensor4};

#[inline]
pub fn relu<T: Scalar>(x: T) -> T {
    if x > T::zero() {
        x
    } else {
        T::zero()
    }
}

pub fn relu_in_place<T: Scalar>(xs: &mut [T]) {
    for x in xs {
        *x = relu(*x);
    }
}

/// Elementwise ReLU of a tensor.
pub fn relu_tensor<T: Scalar>(t: &Tensor4<T>) -> Tensor4<T> {
    let mut out = t.clone();
    relu_in_place(out.data_mut());
    out
}

/// Zeroes gradient entries whose forward output was clipped.
pub(crate) fn relu_backward<T: Scalar>(grad: &mut [T], output: &[T]) {
    for (g, &o) in grad.iter_mut().zip(output) {
        if o <= T::zero() {
            *g = T::zero();
        }
    }
}

#[inline]
fn axpy<T: Scalar>(acc: &mut [T], a: T, x: &[T]) {
    for (y, &v) in acc.iter_mut().zip(x) {
        *y = *y + a * v;
    }
}

#[inline]
fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    a.iter()
        .zip(b)
        .fold(T::zero(), |acc, (&x, &y)| acc + x * y)
}

/// Valid, stride-1 convolution (no activation).
///
/// `input` is `[b, h, w, c]`, `kernel` `[k, k, c, f]`, `bias` has `f` entries;
/// the result is `[b, h - k + 1, w - k + 1, f]`.
pub fn conv2d<T: Scalar>(input: &Tensor4<T>, kernel: &Tensor4<T>, bias: &[T]) -> Result<Tensor4<T>> {
    let [b, h, w, c] = input.shape();
    let [kh, kw, kc, f] = kernel.shape();
    if kc != c {
        return Err(Error::shape(format!(
            "kernel expects {kc} channels, input has {c}"
        )));
    }
    if kh != kw {
        return Err(Error::shape("kernel windows must be square"));
    }
    if bias.len() != f {
        return Err(Error::shape(format!(
            "bias has {} entries for {f} filters",
            bias.len()
        )));
    }
    if h < kh || w < kw {
        return Err(Error::shape(format!(
            "{h}x{w} input smaller than {kh}x{kw} kernel"
        )));
    }
    let (oh, ow) = (h - kh + 1, w - kw + 1);
    let x = input.data();
    let k = kernel.data();
    let mut out = vec![T::zero(); b * oh * ow * f];
    for s in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                let o = ((s * oh + i) * ow + j) * f;
                let acc = &mut out[o..o + f];
                acc.copy_from_slice(bias);
                for p in 0..kh {
                    for q in 0..kw {
                        let base = ((s * h + i + p) * w + j + q) * c;
                        let kbase = (p * kw + q) * c * f;
                        for r in 0..c {
                            let v = x[base + r];
                            if v != T::zero() {
                                axpy(acc, v, &k[kbase + r * f..kbase + (r + 1) * f]);
                            }
                        }
                    }
                }
            }
        }
    }
    Ok(Tensor4::from_raw([b, oh, ow, f], out))
}

/// Gradients of a convolution given the gradient of its (pre-activation) output.
pub(crate) struct ConvGrads<T> {
    pub input: Option<Tensor4<T>>,
    pub kernel: Tensor4<T>,
    pub bias: Vec<T>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    input: &Tensor4<T>,
    kernel: &Tensor4<T>,
    grad_out: &Tensor4<T>,
    need_input: bool,
) -> ConvGrads<T> {
    let [b, h, w, c] = input.shape();
    let [kh, kw, _, f] = kernel.shape();
    let [_, oh, ow, _] = grad_out.shape();
    let x = input.data();
    let k = kernel.data();
    let g = grad_out.data();

    let mut gk = vec![T::zero(); kernel.len()];
    let mut gb = vec![T::zero(); f];
    let mut gx = need_input.then(|| vec![T::zero(); input.len()]);

    for s in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                let o = ((s * oh + i) * ow + j) * f;
                let go = &g[o..o + f];
                if go.iter().all(|v| *v == T::zero()) {
                    continue;
                }
                axpy(&mut gb, T::one(), go);
                for p in 0..kh {
                    for q in 0..kw {
                        let base = ((s * h + i + p) * w + j + q) * c;
                        let kbase = (p * kw + q) * c * f;
                        for r in 0..c {
                            let krow = kbase + r * f..kbase + (r + 1) * f;
                            let v = x[base + r];
                            if v != T::zero() {
                                axpy(&mut gk[krow.clone()], v, go);
                            }
                            if let Some(gx) = gx.as_mut() {
                                gx[base + r] = gx[base + r] + dot(&k[krow], go);
                            }
                        }
                    }
                }
            }
        }
    }
    ConvGrads {
        input: gx.map(|d| Tensor4::from_raw(input.shape(), d)),
        kernel: Tensor4::from_raw(kernel.shape(), gk),
        bias: gb,
    }
}

/// Non-overlapping `size`x`size` max pooling.
pub fn maxpool<T: Scalar>(input: &Tensor4<T>, size: usize) -> Result<Tensor4<T>> {
    maxpool_with_argmax(input, size).map(|(out, _)| out)
}

/// Max pooling that also returns, per output element, the flat input offset
/// of the selected maximum (first in scan order on ties).
pub(crate) fn maxpool_with_argmax<T: Scalar>(
    input: &Tensor4<T>,
    size: usize,
) -> Result<(Tensor4<T>, Vec<usize>)> {
    let [b, h, w, c] = input.shape();
    if size < 2 || h < size || w < size {
        return Err(Error::shape(format!(
            "cannot max-pool {h}x{w} input with window {size}"
        )));
    }
    let (oh, ow) = (h / size, w / size);
    let x = input.data();
    let mut out = Vec::with_capacity(b * oh * ow * c);
    let mut arg = Vec::with_capacity(b * oh * ow * c);
    for s in 0..b {
        for i in 0..oh {
            for j in 0..ow {
                for r in 0..c {
                    let mut best = ((s * h + i * size) * w + j * size) * c + r;
                    for p in 0..size {
                        for q in 0..size {
                            let idx = ((s * h + i * size + p) * w + j * size + q) * c + r;
                            if x[idx] > x[best] {
                                best = idx;
                            }
                        }
                    }
                    out.push(x[best]);
                    arg.push(best);
                }
            }
        }
    }
    Ok((Tensor4::from_raw([b, oh, ow, c], out), arg))
}

pub(crate) fn maxpool_backward<T: Scalar>(
    input_shape: [usize; 4],
    argmax: &[usize],
    grad_out: &[T],
) -> Tensor4<T> {
    let mut gx = vec![T::zero(); input_shape.iter().product()];
    for (&idx, &g) in argmax.iter().zip(grad_out) {
        gx[idx] = gx[idx] + g;
    }
    Tensor4::from_raw(input_shape, gx)
}

/// `x [b, n] * w [n, u] + bias`.
pub fn dense<T: Scalar>(x: &Matrix<T>, weights: &Matrix<T>, bias: &[T]) -> Result<Matrix<T>> {
    if x.cols() != weights.rows() || bias.len() != weights.cols() {
        return Err(Error::shape(format!(
            "dense layer {}x{} (bias {}) cannot take {} inputs",
            weights.rows(),
            weights.cols(),
            bias.len(),
            x.cols()
        )));
    }
    let u = weights.cols();
    let mut out = Vec::with_capacity(x.rows() * u);
    for s in 0..x.rows() {
        let mut acc = bias.to_vec();
        for (i, &v) in x.row(s).iter().enumerate() {
            if v != T::zero() {
                axpy(&mut acc, v, weights.row(i));
            }
        }
        out.extend_from_slice(&acc);
    }
    Ok(Matrix::from_raw(x.rows(), u, out))
}

pub(crate) struct DenseGrads<T> {
    pub input: Option<Matrix<T>>,
    pub weights: Matrix<T>,
    pub bias: Vec<T>,
}

pub(crate) fn dense_backward<T: Scalar>(
    x: &Matrix<T>,
    weights: &Matrix<T>,
    grad_out: &Matrix<T>,
    need_input: bool,
) -> DenseGrads<T> {
    let (n, u) = (weights.rows(), weights.cols());
    let mut gw = Matrix::zeros(n, u);
    let mut gb = vec![T::zero(); u];
    let mut gx = need_input.then(|| Matrix::zeros(x.rows(), n));
    for s in 0..x.rows() {
        let go = grad_out.row(s);
        axpy(&mut gb, T::one(), go);
        for (i, &v) in x.row(s).iter().enumerate() {
            if v != T::zero() {
                axpy(gw.row_mut(i), v, go);
            }
        }
        if let Some(gx) = gx.as_mut() {
            let row = gx.row_mut(s);
            for (i, slot) in row.iter_mut().enumerate() {
                *slot = dot(weights.row(i), go);
            }
        }
    }
    DenseGrads {
        input: gx,
        weights: gw,
        bias: gb,
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax<T: Scalar>(logits: &Matrix<T>) -> Matrix<T> {
    let mut out = logits.clone();
    for s in 0..out.rows() {
        let row = out.row_mut(s);
        let max = row.iter().copied().fold(T::neg_infinity(), T::max);
        let mut total = T::zero();
        for v in row.iter_mut() {
            *v = (*v - max).exp();
            total = total + *v;
        }
        for v in row.iter_mut() {
            *v = *v / total;
        }
    }
    out
}

/// Per-sample cross-entropy `logsumexp(z) - z[label]`.
pub fn cross_entropy<T: Scalar>(logits: &Matrix<T>, labels: &[usize]) -> Vec<T> {
    (0..logits.rows())
        .map(|s| {
            let row = logits.row(s);
            let max = row.iter().copied().fold(T::neg_infinity(), T::max);
            let lse = row.iter().map(|&v| (v - max).exp()).sum::<T>().ln() + max;
            lse - row[labels[s]]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random4(shape: [usize; 4], rng: &mut ChaCha8Rng) -> Tensor4<f64> {
        Tensor4::from_fn(shape, |_| rng.random_range(-1.0..1.0))
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(-1.5), 0.0);
        assert_eq!(relu(0.0), 0.0);
        assert_eq!(relu(2.25), 2.25);
        let t = Tensor4::new([1, 1, 1, 3], vec![-1.0, 0.5, 0.0]).unwrap();
        assert_eq!(relu_tensor(&t).data(), &[0.0, 0.5, 0.0]);
    }

    #[test]
    fn conv_all_ones_sums_to_nine() {
        let input = Tensor4::new([1, 3, 3, 1], vec![1.0; 9]).unwrap();
        let kernel = Tensor4::new([3, 3, 1, 1], vec![1.0; 9]).unwrap();
        let out = conv2d(&input, &kernel, &[0.0]).unwrap();
        assert_eq!(out.shape(), [1, 1, 1, 1]);
        assert_eq!(out.data(), &[9.0]);
    }

    #[test]
    fn conv_delta_kernel_crops() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let input = random4([2, 5, 5, 1], &mut rng);
        let mut kernel = Tensor4::zeros([3, 3, 1, 1]);
        kernel.set([0, 0, 0, 0], 1.0);
        let out = conv2d(&input, &kernel, &[0.0]).unwrap();
        assert_eq!(out.shape(), [2, 3, 3, 1]);
        for s in 0..2 {
            for i in 0..3 {
                for j in 0..3 {
                    assert_eq!(out.get([s, i, j, 0]), input.get([s, i, j, 0]));
                }
            }
        }
    }

    #[test]
    fn conv_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let input = random4([1, 4, 4, 2], &mut rng);
        let kernel = random4([3, 3, 2, 2], &mut rng);
        let bias = [0.3, -0.2];
        let out = conv2d(&input, &kernel, &bias).unwrap();
        for i in 0..2 {
            for j in 0..2 {
                for k in 0..2 {
                    let mut want = bias[k];
                    for p in 0..3 {
                        for q in 0..3 {
                            for r in 0..2 {
                                want += input.get([0, i + p, j + q, r]) * kernel.get([p, q, r, k]);
                            }
                        }
                    }
                    assert!((out.get([0, i, j, k]) - want).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn conv_channel_mismatch_is_shape_error() {
        let input = Tensor4::<f64>::zeros([1, 4, 4, 2]);
        let kernel = Tensor4::<f64>::zeros([3, 3, 1, 1]);
        assert!(matches!(conv2d(&input, &kernel, &[0.0]), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_examples() {
        let t = Tensor4::new([1, 2, 2, 1], vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(maxpool(&t, 2).unwrap().data(), &[4.0]);

        let c = Tensor4::new([1, 5, 5, 2], vec![0.25; 50]).unwrap();
        let pooled = maxpool(&c, 2).unwrap();
        assert_eq!(pooled.shape(), [1, 2, 2, 2]);
        assert!(pooled.data().iter().all(|&v| v == 0.25));

        let tiny = Tensor4::<f64>::zeros([1, 1, 1, 1]);
        assert!(matches!(maxpool(&tiny, 2), Err(Error::Shape(_))));
    }

    #[test]
    fn maxpool_matches_naive_loops() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let input = random4([1, 6, 6, 3], &mut rng);
        let out = maxpool(&input, 2).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    let mut want = f64::NEG_INFINITY;
                    for p in 0..2 {
                        for q in 0..2 {
                            want = want.max(input.get([0, 2 * i + p, 2 * j + q, k]));
                        }
                    }
                    assert_eq!(out.get([0, i, j, k]), want);
                }
            }
        }
    }

    #[test]
    fn softmax_rows_sum_to_one() {
        let logits = Matrix::new(2, 3, vec![1.0, 2.0, 3.0, 1000.0, -1000.0, 0.0]).unwrap();
        let p = softmax(&logits);
        for s in 0..2 {
            let total: f64 = p.row(s).iter().sum();
            assert!((total - 1.0).abs() < 1e-12);
        }
        let ce = cross_entropy(&logits, &[2, 0]);
        assert!((ce[0] - (1.0f64.exp() + 2.0f64.exp() + 3.0f64.exp()).ln() + 3.0).abs() < 1e-12);
        assert!(ce[1].abs() < 1e-12);
    }
}
