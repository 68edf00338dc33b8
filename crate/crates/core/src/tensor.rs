//! Dense row-major `f64` tensors and the numerical kernels used by the model
//! graph: 2-D cross-correlation, fully connected layers, ReLU, average
//! pooling and softmax cross-entropy, each with an analytic backward pass.
//!
//! Kernels operate on single samples (`[channels, height, width]` feature
//! maps, `[features]` vectors). They are pure functions: identical inputs give
//! bit-identical outputs.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use crate::error::{Error, Result};

/// A dense n-dimensional array stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl fmt::Debug for Tensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("len", &self.data.len())
            .finish()
    }
}

impl Tensor {
    /// Builds a tensor, checking that `shape` is non-empty, has positive
    /// dimensions and matches the number of values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::Input(format!(
                "tensor shape must have positive dimensions, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::dim(
                "tensor construction",
                format!("{expected} values for shape {shape:?}"),
                format!("{} values", data.len()),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, 0.0)
    }

    pub fn filled(shape: &[usize], value: f64) -> Self {
        assert!(
            !shape.is_empty() && shape.iter().all(|&d| d > 0),
            "tensor shape must have positive dimensions, got {shape:?}"
        );
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a tensor whose `i`-th flat element is `f(i)`.
    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> f64) -> Self {
        let mut t = Self::zeros(shape);
        for (i, v) in t.data.iter_mut().enumerate() {
            *v = f(i);
        }
        t
    }

    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// Returns the same values under a new shape with equal element count.
    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        let expected: usize = shape.iter().product();
        if expected != self.data.len() || shape.contains(&0) {
            return Err(Error::dim(
                "reshape",
                format!("{} elements", self.data.len()),
                format!("shape {shape:?}"),
            ));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Element-wise `self += other`.
    pub fn add_assign(&mut self, other: &Tensor) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::dim(
                "tensor addition",
                format!("{:?}", self.shape),
                format!("{:?}", other.shape),
            ));
        }
        for (a, b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn scale(&mut self, factor: f64) {
        for v in &mut self.data {
            *v *= factor;
        }
    }

    /// Index of the largest element; ties resolve to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.data.iter().enumerate() {
            if v > self.data[best] {
                best = i;
            }
        }
        best
    }
}

fn expect_rank(t: &Tensor, rank: usize, what: &str) -> Result<()> {
    if t.rank() != rank {
        return Err(Error::dim(
            what,
            format!("rank {rank}"),
            format!("rank {} (shape {:?})", t.rank(), t.shape()),
        ));
    }
    Ok(())
}

/// Spatial output length of a convolution along one axis.
pub fn conv_output_len(input: usize, kernel: usize, stride: usize, padding: usize) -> Option<usize> {
    if stride == 0 {
        return None;
    }
    let padded = input + 2 * padding;
    if padded < kernel {
        return None;
    }
    Some((padded - kernel) / stride + 1)
}

struct ConvGeometry {
    in_ch: usize,
    h: usize,
    w: usize,
    out_ch: usize,
    k: usize,
    out_h: usize,
    out_w: usize,
}

fn conv_geometry(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<ConvGeometry> {
    expect_rank(input, 3, "conv2d input [channels, height, width]")?;
    expect_rank(kernel, 4, "conv2d kernel [out, in, k, k]")?;
    let (in_ch, h, w) = (input.shape[0], input.shape[1], input.shape[2]);
    let (out_ch, k_in, kh, kw) = (kernel.shape[0], kernel.shape[1], kernel.shape[2], kernel.shape[3]);
    if k_in != in_ch {
        return Err(Error::dim(
            "conv2d channel axis (kernel axis 1 vs input axis 0)",
            format!("{in_ch} input channels"),
            format!("kernel expects {k_in}"),
        ));
    }
    if kh != kw {
        return Err(Error::dim(
            "conv2d kernel spatial axes (2, 3)",
            "square kernel",
            format!("{kh}x{kw}"),
        ));
    }
    if stride == 0 {
        return Err(Error::Input("conv2d stride must be positive".into()));
    }
    let out_h = conv_output_len(h, kh, stride, padding).ok_or_else(|| {
        Error::dim(
            "conv2d height axis",
            format!("input height >= {kh} - 2*{padding}"),
            format!("{h}"),
        )
    })?;
    let out_w = conv_output_len(w, kw, stride, padding).ok_or_else(|| {
        Error::dim(
            "conv2d width axis",
            format!("input width >= {kw} - 2*{padding}"),
            format!("{w}"),
        )
    })?;
    Ok(ConvGeometry {
        in_ch,
        h,
        w,
        out_ch,
        k: kh,
        out_h,
        out_w,
    })
}

/// Valid output index range `[lo, hi)` for kernel tap `tap` along an axis:
/// the output positions whose input coordinate `o*stride + tap - padding`
/// lands inside `[0, input_len)`.
fn tap_range(tap: usize, stride: usize, padding: usize, input_len: usize, out_len: usize) -> (usize, usize) {
    // o*stride + tap >= padding
    let lo = if tap >= padding {
        0
    } else {
        (padding - tap).div_ceil(stride)
    };
    // o*stride + tap - padding <= input_len - 1
    let limit = input_len + padding - 1;
    let hi = if tap > limit {
        0
    } else {
        ((limit - tap) / stride + 1).min(out_len)
    };
    (lo, hi.max(lo))
}

/// Cross-correlates `input` `[m, h, w]` with `kernel` `[n, m, s, s]`.
pub fn conv2d_forward(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    let mut out = Tensor::zeros(&[g.out_ch, g.out_h, g.out_w]);
    let (x, wt) = (&input.data, &kernel.data);
    let plane = g.out_h * g.out_w;
    for j in 0..g.out_ch {
        let o = &mut out.data[j * plane..(j + 1) * plane];
        for c in 0..g.in_ch {
            let xin = &x[c * g.h * g.w..(c + 1) * g.h * g.w];
            for ky in 0..g.k {
                let (oy0, oy1) = tap_range(ky, stride, padding, g.h, g.out_h);
                for kx in 0..g.k {
                    let wv = wt[((j * g.in_ch + c) * g.k + ky) * g.k + kx];
                    if wv == 0.0 {
                        continue;
                    }
                    let (ox0, ox1) = tap_range(kx, stride, padding, g.w, g.out_w);
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        let row = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut o[oy * g.out_w..(oy + 1) * g.out_w];
                        for ox in ox0..ox1 {
                            orow[ox] += wv * row[ox * stride + kx - padding];
                        }
                    }
                }
            }
        }
    }
    Ok(out)
}

/// Gradients of [`conv2d_forward`] with respect to its input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_output: &Tensor,
    stride: usize,
    padding: usize,
) -> Result<(Tensor, Tensor)> {
    let g = conv_geometry(input, kernel, stride, padding)?;
    if grad_output.shape() != [g.out_ch, g.out_h, g.out_w] {
        return Err(Error::dim(
            "conv2d grad_output",
            format!("{:?}", [g.out_ch, g.out_h, g.out_w]),
            format!("{:?}", grad_output.shape()),
        ));
    }
    let mut gx = Tensor::zeros(input.shape());
    let mut gw = Tensor::zeros(kernel.shape());
    let plane = g.out_h * g.out_w;
    for j in 0..g.out_ch {
        let go = &grad_output.data[j * plane..(j + 1) * plane];
        for c in 0..g.in_ch {
            let base = c * g.h * g.w;
            for ky in 0..g.k {
                let (oy0, oy1) = tap_range(ky, stride, padding, g.h, g.out_h);
                for kx in 0..g.k {
                    let widx = ((j * g.in_ch + c) * g.k + ky) * g.k + kx;
                    let wv = kernel.data[widx];
                    let (ox0, ox1) = tap_range(kx, stride, padding, g.w, g.out_w);
                    let mut acc = 0.0;
                    for oy in oy0..oy1 {
                        let iy = oy * stride + ky - padding;
                        for ox in ox0..ox1 {
                            let ix = ox * stride + kx - padding;
                            let gov = go[oy * g.out_w + ox];
                            acc += gov * input.data[base + iy * g.w + ix];
                            gx.data[base + iy * g.w + ix] += gov * wv;
                        }
                    }
                    gw.data[widx] += acc;
                }
            }
        }
    }
    Ok((gx, gw))
}

/// `weight · x + bias` for `x: [in]`, `weight: [out, in]`, `bias: [out]`.
pub fn dense_forward(x: &Tensor, weight: &Tensor, bias: Option<&Tensor>) -> Result<Tensor> {
    expect_rank(weight, 2, "dense weight [out, in]")?;
    let (out_f, in_f) = (weight.shape[0], weight.shape[1]);
    if x.len() != in_f {
        return Err(Error::dim(
            "dense input features (weight axis 1)",
            format!("{in_f}"),
            format!("{}", x.len()),
        ));
    }
    if let Some(b) = bias {
        if b.len() != out_f {
            return Err(Error::dim("dense bias", format!("{out_f}"), format!("{}", b.len())));
        }
    }
    let mut out = Tensor::zeros(&[out_f]);
    for o in 0..out_f {
        let row = &weight.data[o * in_f..(o + 1) * in_f];
        let mut acc = 0.0;
        for (wv, xv) in row.iter().zip(&x.data) {
            acc += wv * xv;
        }
        out.data[o] = acc + bias.map_or(0.0, |b| b.data[o]);
    }
    Ok(out)
}

/// Returns `(grad_x, grad_weight, grad_bias)`; `grad_x` keeps the shape of `x`.
pub fn dense_backward(x: &Tensor, weight: &Tensor, grad_output: &Tensor) -> Result<(Tensor, Tensor, Tensor)> {
    expect_rank(weight, 2, "dense weight [out, in]")?;
    let (out_f, in_f) = (weight.shape[0], weight.shape[1]);
    if x.len() != in_f || grad_output.len() != out_f {
        return Err(Error::dim(
            "dense backward",
            format!("x of {in_f}, grad of {out_f}"),
            format!("x of {}, grad of {}", x.len(), grad_output.len()),
        ));
    }
    let mut gx = Tensor::zeros(x.shape());
    let mut gw = Tensor::zeros(weight.shape());
    for o in 0..out_f {
        let g = grad_output.data[o];
        let row = &weight.data[o * in_f..(o + 1) * in_f];
        let grow = &mut gw.data[o * in_f..(o + 1) * in_f];
        for i in 0..in_f {
            gx.data[i] += g * row[i];
            grow[i] = g * x.data[i];
        }
    }
    let gb = Tensor::new(vec![out_f], grad_output.data.clone())?;
    Ok((gx, gw, gb))
}

pub fn relu_forward(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    for v in &mut out.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
    out
}

/// The derivative at the kink (`x == 0`) is taken as one, so a unit whose
/// pre-activation is exactly zero (a zeroed filter) still passes gradient.
pub fn relu_backward(x: &Tensor, grad_output: &Tensor) -> Result<Tensor> {
    if x.shape() != grad_output.shape() {
        return Err(Error::dim(
            "relu backward",
            format!("{:?}", x.shape()),
            format!("{:?}", grad_output.shape()),
        ));
    }
    let data = x
        .data
        .iter()
        .zip(&grad_output.data)
        .map(|(&xv, &g)| if xv >= 0.0 { g } else { 0.0 })
        .collect();
    Ok(Tensor {
        shape: x.shape.clone(),
        data,
    })
}

/// Non-overlapping `k × k` average pooling of `[c, h, w]`; `h` and `w` must
/// be multiples of `k`.
pub fn avgpool_forward(x: &Tensor, k: usize) -> Result<Tensor> {
    expect_rank(x, 3, "avgpool input [channels, height, width]")?;
    let (c, h, w) = (x.shape[0], x.shape[1], x.shape[2]);
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::dim(
            "avgpool spatial axes (1, 2)",
            format!("multiples of window {k}"),
            format!("{h}x{w}"),
        ));
    }
    let (oh, ow) = (h / k, w / k);
    let inv = 1.0 / (k * k) as f64;
    let mut out = Tensor::zeros(&[c, oh, ow]);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for dy in 0..k {
                    let row = ((ch * h) + oy * k + dy) * w + ox * k;
                    for dx in 0..k {
                        acc += x.data[row + dx];
                    }
                }
                out.data[(ch * oh + oy) * ow + ox] = acc * inv;
            }
        }
    }
    Ok(out)
}

pub fn avgpool_backward(input_shape: &[usize], k: usize, grad_output: &Tensor) -> Result<Tensor> {
    if input_shape.len() != 3 || k == 0 {
        return Err(Error::dim(
            "avgpool backward",
            "rank-3 input shape",
            format!("{input_shape:?}"),
        ));
    }
    let (c, h, w) = (input_shape[0], input_shape[1], input_shape[2]);
    let (oh, ow) = (h / k, w / k);
    if grad_output.shape() != [c, oh, ow] {
        return Err(Error::dim(
            "avgpool grad_output",
            format!("{:?}", [c, oh, ow]),
            format!("{:?}", grad_output.shape()),
        ));
    }
    let inv = 1.0 / (k * k) as f64;
    let mut gx = Tensor::zeros(input_shape);
    for ch in 0..c {
        for oy in 0..oh {
            for ox in 0..ow {
                let g = grad_output.data[(ch * oh + oy) * ow + ox] * inv;
                for dy in 0..k {
                    let row = ((ch * h) + oy * k + dy) * w + ox * k;
                    for dx in 0..k {
                        gx.data[row + dx] = g;
                    }
                }
            }
        }
    }
    Ok(gx)
}

/// Softmax cross-entropy of `logits` against the class `label`, returning the
/// loss and its gradient with respect to the logits. Uses max-subtraction.
pub fn softmax_cross_entropy(logits: &Tensor, label: usize) -> Result<(f64, Tensor)> {
    let classes = logits.len();
    if label >= classes {
        return Err(Error::Input(format!(
            "label {label} out of range for {classes} classes"
        )));
    }
    let max = logits.data.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut grad = logits.clone();
    let mut sum = 0.0;
    for v in &mut grad.data {
        *v = libm::exp(*v - max);
        sum += *v;
    }
    let loss = libm::log(sum) - (logits.data[label] - max);
    for v in &mut grad.data {
        *v /= sum;
    }
    grad.data[label] -= 1.0;
    Ok((loss, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_rejects_mismatched_length() {
        assert!(matches!(
            Tensor::new(vec![2, 3], vec![0.0; 5]),
            Err(Error::Dimension { .. })
        ));
        assert!(Tensor::new(vec![2, 0], vec![]).is_err());
    }

    #[test]
    fn conv_zero_input_gives_zero_output() {
        let x = Tensor::zeros(&[2, 5, 5]);
        let k = Tensor::from_fn(&[3, 2, 3, 3], |i| i as f64 * 0.1 - 1.0);
        let y = conv2d_forward(&x, &k, 1, 1).unwrap();
        assert_eq!(y.shape(), &[3, 5, 5]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn conv_scalar_product() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        assert_eq!(conv2d_forward(&x, &k, 1, 0).unwrap().data(), &[6.0]);
    }

    #[test]
    fn conv_backward_scalar_product_rule() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        let go = Tensor::new(vec![1, 1, 1], vec![1.0]).unwrap();
        let (gx, gk) = conv2d_backward(&x, &k, &go, 1, 0).unwrap();
        assert_eq!(gx.data(), &[3.0]);
        assert_eq!(gk.data(), &[2.0]);
    }

    #[test]
    fn conv_backward_zero_cotangent() {
        let x = Tensor::from_fn(&[2, 4, 4], |i| (i as f64).sin());
        let k = Tensor::from_fn(&[3, 2, 3, 3], |i| (i as f64).cos());
        let go = Tensor::zeros(&[3, 2, 2]);
        let (gx, gk) = conv2d_backward(&x, &k, &go, 2, 1).unwrap();
        assert!(gx.data().iter().chain(gk.data()).all(|&v| v == 0.0));
    }

    #[test]
    fn conv_channel_mismatch_names_axes() {
        let x = Tensor::zeros(&[2, 4, 4]);
        let k = Tensor::zeros(&[1, 3, 3, 3]);
        let err = conv2d_forward(&x, &k, 1, 1).unwrap_err();
        let msg = alloc::string::ToString::to_string(&err);
        assert!(msg.contains("channel axis"), "{msg}");
    }

    #[test]
    fn conv_kernel_larger_than_padded_input() {
        let x = Tensor::zeros(&[1, 2, 2]);
        let k = Tensor::zeros(&[1, 1, 5, 5]);
        assert!(matches!(conv2d_forward(&x, &k, 1, 0), Err(Error::Dimension { .. })));
    }

    #[test]
    fn tap_range_matches_brute_force() {
        for input_len in 1..7 {
            for k in 1..4 {
                for stride in 1..3 {
                    for pad in 0..3 {
                        let Some(out_len) = conv_output_len(input_len, k, stride, pad) else {
                            continue;
                        };
                        for tap in 0..k {
                            let valid: Vec<usize> = (0..out_len)
                                .filter(|&o| {
                                    let pos = (o * stride + tap) as isize - pad as isize;
                                    pos >= 0 && (pos as usize) < input_len
                                })
                                .collect();
                            let (lo, hi) = tap_range(tap, stride, pad, input_len, out_len);
                            let got: Vec<usize> = (lo..hi).collect();
                            assert_eq!(got, valid, "len {input_len} k {k} s {stride} p {pad} tap {tap}");
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn relu_definition() {
        let x = Tensor::new(vec![3], vec![-1.0, 0.0, 2.0]).unwrap();
        assert_eq!(relu_forward(&x).data(), &[0.0, 0.0, 2.0]);
        let g = Tensor::new(vec![3], vec![5.0, 5.0, 5.0]).unwrap();
        assert_eq!(relu_backward(&x, &g).unwrap().data(), &[0.0, 5.0, 5.0]);
    }

    #[test]
    fn uniform_logits_give_log_classes() {
        for classes in [2usize, 3, 10] {
            let logits = Tensor::filled(&[classes], 0.7);
            for label in 0..classes {
                let (loss, grad) = softmax_cross_entropy(&logits, label).unwrap();
                assert!((loss - libm::log(classes as f64)).abs() < 1e-15);
                let s: f64 = grad.data().iter().sum();
                assert!(s.abs() < 1e-15);
            }
        }
    }

    #[test]
    fn cross_entropy_is_stable_for_large_logits() {
        let logits = Tensor::new(vec![3], vec![1000.0, -1000.0, 999.0]).unwrap();
        let (loss, grad) = softmax_cross_entropy(&logits, 0).unwrap();
        assert!(loss.is_finite() && grad.all_finite());
    }

    #[test]
    fn cross_entropy_rejects_bad_label() {
        let logits = Tensor::zeros(&[3]);
        assert!(matches!(softmax_cross_entropy(&logits, 3), Err(Error::Input(_))));
    }

    #[test]
    fn avgpool_roundtrip_shapes() {
        let x = Tensor::from_fn(&[2, 4, 4], |i| i as f64);
        let y = avgpool_forward(&x, 2).unwrap();
        assert_eq!(y.shape(), &[2, 2, 2]);
        assert_eq!(y.data()[0], (0.0 + 1.0 + 4.0 + 5.0) / 4.0);
        let gx = avgpool_backward(x.shape(), 2, &Tensor::filled(&[2, 2, 2], 4.0)).unwrap();
        assert!(gx.data().iter().all(|&v| v == 1.0));
        assert!(avgpool_forward(&Tensor::zeros(&[1, 3, 3]), 2).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest_index() {
        let t = Tensor::new(vec![4], vec![1.0, 3.0, 3.0, 0.0]).unwrap();
        assert_eq!(t.argmax(), 1);
    }
}
