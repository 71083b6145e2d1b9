//! Forward and backward kernels shared by the differentiable tape and the
//! tape-free inference path. Both paths call the same forward code, so their
//! outputs agree bit for bit.

use super::tensor::{split_axis, Tensor};
use crate::error::{Error, Result};

pub fn conv_output_size(size: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (size + 2 * padding - kernel) / stride + 1
}

struct ConvGeom {
    n: usize,
    c: usize,
    h: usize,
    w: usize,
    o: usize,
    kh: usize,
    kw: usize,
    ho: usize,
    wo: usize,
    stride: usize,
    padding: usize,
}

impl ConvGeom {
    fn new(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Self> {
        let [n, c, h, w] = input.dims4()?;
        let [o, kc, kh, kw] = kernel.dims4()?;
        if stride == 0 {
            return Err(Error::Parameter("conv2d stride must be positive".into()));
        }
        if kc != c {
            return Err(Error::Shape(format!(
                "conv2d: input has {} channels, kernel expects {}",
                c, kc
            )));
        }
        if kh > h + 2 * padding || kw > w + 2 * padding {
            return Err(Error::Shape(format!(
                "conv2d: kernel {}x{} larger than padded input {}x{}",
                kh,
                kw,
                h + 2 * padding,
                w + 2 * padding
            )));
        }
        Ok(ConvGeom {
            n,
            c,
            h,
            w,
            o,
            kh,
            kw,
            ho: conv_output_size(h, kh, stride, padding),
            wo: conv_output_size(w, kw, stride, padding),
            stride,
            padding,
        })
    }

    fn patch_len(&self) -> usize {
        self.c * self.kh * self.kw
    }

    fn positions(&self) -> usize {
        self.ho * self.wo
    }

    /// Unfolds one image into a `[C*kh*kw, Ho*Wo]` column matrix.
    fn im2col(&self, image: &[f64], col: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c {
            let plane = &image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    let dst = &mut col[row..row + p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        let out_row = &mut dst[oy * self.wo..(oy + 1) * self.wo];
                        if iy < 0 || iy >= self.h as isize {
                            out_row.iter_mut().for_each(|v| *v = 0.0);
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in out_row.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                0.0
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Folds a column matrix back onto an image, accumulating overlaps.
    fn col2im(&self, col: &[f64], image: &mut [f64]) {
        let p = self.positions();
        for c in 0..self.c {
            let plane = &mut image[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ki in 0..self.kh {
                for kj in 0..self.kw {
                    let row = ((c * self.kh + ki) * self.kw + kj) * p;
                    let src = &col[row..row + p];
                    for oy in 0..self.ho {
                        let iy = (oy * self.stride + ki) as isize - self.padding as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for ox in 0..self.wo {
                            let ix = (ox * self.stride + kj) as isize - self.padding as isize;
                            if ix >= 0 && ix < self.w as isize {
                                dst[ix as usize] += src[oy * self.wo + ox];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// Row-major `c = alpha * op(a) * op(b) + beta * c`.
#[allow(clippy::too_many_arguments)]
fn gemm(
    m: usize,
    k: usize,
    n: usize,
    a: &[f64],
    a_transposed: bool,
    b: &[f64],
    b_transposed: bool,
    beta: f64,
    c: &mut [f64],
) {
    let (rsa, csa) = if a_transposed { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if b_transposed { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: slice lengths cover the strided extents described above.
    unsafe {
        matrixmultiply::dgemm(
            m,
            k,
            n,
            1.0,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

pub fn conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Result<Tensor> {
    let g = ConvGeom::new(input, kernel, stride, padding)?;
    let (k, p) = (g.patch_len(), g.positions());
    let mut out = vec![0.0; g.n * g.o * p];
    let mut col = vec![0.0; k * p];
    let image_len = g.c * g.h * g.w;
    for n in 0..g.n {
        g.im2col(&input.data()[n * image_len..(n + 1) * image_len], &mut col);
        gemm(
            g.o,
            k,
            p,
            kernel.data(),
            false,
            &col,
            false,
            0.0,
            &mut out[n * g.o * p..(n + 1) * g.o * p],
        );
    }
    Tensor::from_op(vec![g.n, g.o, g.ho, g.wo], out, "conv2d")
}

/// Gradients of a convolution with respect to its input and kernel.
pub fn conv2d_backward(
    input: &Tensor,
    kernel: &Tensor,
    grad_out: &Tensor,
    stride: usize,
    padding: usize,
    need_input: bool,
    need_kernel: bool,
) -> Result<(Option<Tensor>, Option<Tensor>)> {
    let g = ConvGeom::new(input, kernel, stride, padding)?;
    let (k, p) = (g.patch_len(), g.positions());
    let image_len = g.c * g.h * g.w;
    let mut col = vec![0.0; k * p];
    let mut dcol = vec![0.0; k * p];
    let mut gin = need_input.then(|| vec![0.0; input.numel()]);
    let mut gk = need_kernel.then(|| vec![0.0; kernel.numel()]);
    for n in 0..g.n {
        let gout = &grad_out.data()[n * g.o * p..(n + 1) * g.o * p];
        if let Some(gk) = gk.as_mut() {
            g.im2col(&input.data()[n * image_len..(n + 1) * image_len], &mut col);
            // [O,P] x [P,K]
            gemm(g.o, p, k, gout, false, &col, true, 1.0, gk);
        }
        if let Some(gin) = gin.as_mut() {
            // [K,O] x [O,P]
            gemm(k, g.o, p, kernel.data(), true, gout, false, 0.0, &mut dcol);
            g.col2im(&dcol, &mut gin[n * image_len..(n + 1) * image_len]);
        }
    }
    Ok((
        gin.map(|d| Tensor::from_parts(input.shape().to_vec(), d)),
        gk.map(|d| Tensor::from_parts(kernel.shape().to_vec(), d)),
    ))
}

/// Adds a per-channel bias `[C]` to an `[N,C,H,W]` tensor.
pub fn bias_add(input: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    if bias.shape() != [c] {
        return Err(Error::Shape(format!(
            "bias of shape {:?} does not match {} channels",
            bias.shape(),
            c
        )));
    }
    let mut out = input.data().to_vec();
    let plane = h * w;
    for (i, chunk) in out.chunks_mut(plane).enumerate().take(n * c) {
        let b = bias.data()[i % c];
        chunk.iter_mut().for_each(|v| *v += b);
    }
    Tensor::from_op(input.shape().to_vec(), out, "bias_add")
}

pub fn bias_grad(grad_out: &Tensor) -> Result<Tensor> {
    let [_, c, h, w] = grad_out.dims4()?;
    let mut g = vec![0.0; c];
    for (i, chunk) in grad_out.data().chunks(h * w).enumerate() {
        g[i % c] += chunk.iter().sum::<f64>();
    }
    Ok(Tensor::from_parts(vec![c], g))
}

/// Source taps along one axis for align-corners-false bilinear sampling.
fn resize_taps(input: usize, output: usize) -> Vec<(usize, usize, f64)> {
    let scale = input as f64 / output as f64;
    (0..output)
        .map(|d| {
            let src = ((d as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(input - 1);
            let i1 = (i0 + 1).min(input - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

pub fn bilinear_resize(input: &Tensor, out_h: usize, out_w: usize) -> Result<Tensor> {
    let [n, c, h, w] = input.dims4()?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::Parameter("resize target must be at least 1x1".into()));
    }
    if out_h == h && out_w == w {
        return Ok(input.clone());
    }
    let ty = resize_taps(h, out_h);
    let tx = resize_taps(w, out_w);
    let mut out = vec![0.0; n * c * out_h * out_w];
    for plane in 0..n * c {
        let src = &input.data()[plane * h * w..(plane + 1) * h * w];
        let dst = &mut out[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let top = src[y0 * w + x0] * (1.0 - lx) + src[y0 * w + x1] * lx;
                let bottom = src[y1 * w + x0] * (1.0 - lx) + src[y1 * w + x1] * lx;
                dst[oy * out_w + ox] = top * (1.0 - ly) + bottom * ly;
            }
        }
    }
    Tensor::from_op(vec![n, c, out_h, out_w], out, "bilinear_resize")
}

pub fn bilinear_resize_backward(input_shape: &[usize], grad_out: &Tensor) -> Result<Tensor> {
    let (n, c, h, w) = (input_shape[0], input_shape[1], input_shape[2], input_shape[3]);
    let [_, _, out_h, out_w] = grad_out.dims4()?;
    if out_h == h && out_w == w {
        return Ok(grad_out.clone());
    }
    let ty = resize_taps(h, out_h);
    let tx = resize_taps(w, out_w);
    let mut gin = vec![0.0; n * c * h * w];
    for plane in 0..n * c {
        let g = &grad_out.data()[plane * out_h * out_w..(plane + 1) * out_h * out_w];
        let dst = &mut gin[plane * h * w..(plane + 1) * h * w];
        for (oy, &(y0, y1, ly)) in ty.iter().enumerate() {
            for (ox, &(x0, x1, lx)) in tx.iter().enumerate() {
                let v = g[oy * out_w + ox];
                dst[y0 * w + x0] += v * (1.0 - ly) * (1.0 - lx);
                dst[y0 * w + x1] += v * (1.0 - ly) * lx;
                dst[y1 * w + x0] += v * ly * (1.0 - lx);
                dst[y1 * w + x1] += v * ly * lx;
            }
        }
    }
    Ok(Tensor::from_parts(input_shape.to_vec(), gin))
}

fn check_temperature(temperature: f64) -> Result<()> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(Error::Parameter(format!(
            "temperature must be positive and finite, got {}",
            temperature
        )));
    }
    Ok(())
}

/// Temperature-scaled log-softmax along `axis`, computed with max subtraction.
pub fn log_softmax(input: &Tensor, axis: usize, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let (outer, k, inner) = split_axis(input.shape(), axis)?;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        let base = o * k * inner;
        for i in 0..inner {
            let idx = |c: usize| base + c * inner + i;
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                max = max.max(x[idx(c)] / temperature);
            }
            let mut sum = 0.0;
            for c in 0..k {
                sum += (x[idx(c)] / temperature - max).exp();
            }
            let lse = max + sum.ln();
            for c in 0..k {
                out[idx(c)] = x[idx(c)] / temperature - lse;
            }
        }
    }
    Tensor::from_op(input.shape().to_vec(), out, "log_softmax")
}

pub fn softmax(input: &Tensor, axis: usize, temperature: f64) -> Result<Tensor> {
    check_temperature(temperature)?;
    let (outer, k, inner) = split_axis(input.shape(), axis)?;
    let x = input.data();
    let mut out = vec![0.0; x.len()];
    for o in 0..outer {
        let base = o * k * inner;
        for i in 0..inner {
            let idx = |c: usize| base + c * inner + i;
            let mut max = f64::NEG_INFINITY;
            for c in 0..k {
                max = max.max(x[idx(c)] / temperature);
            }
            let mut sum = 0.0;
            for c in 0..k {
                let e = (x[idx(c)] / temperature - max).exp();
                out[idx(c)] = e;
                sum += e;
            }
            for c in 0..k {
                out[idx(c)] /= sum;
            }
        }
    }
    Tensor::from_op(input.shape().to_vec(), out, "softmax")
}

/// Backward of [`softmax`] given its output `y`.
pub fn softmax_backward(y: &Tensor, grad: &Tensor, axis: usize, temperature: f64) -> Result<Tensor> {
    let (outer, k, inner) = split_axis(y.shape(), axis)?;
    let (yd, gd) = (y.data(), grad.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        let base = o * k * inner;
        for i in 0..inner {
            let idx = |c: usize| base + c * inner + i;
            let dot: f64 = (0..k).map(|c| gd[idx(c)] * yd[idx(c)]).sum();
            for c in 0..k {
                out[idx(c)] = yd[idx(c)] * (gd[idx(c)] - dot) / temperature;
            }
        }
    }
    Ok(Tensor::from_parts(y.shape().to_vec(), out))
}

/// Backward of [`log_softmax`] given its output `y`.
pub fn log_softmax_backward(
    y: &Tensor,
    grad: &Tensor,
    axis: usize,
    temperature: f64,
) -> Result<Tensor> {
    let (outer, k, inner) = split_axis(y.shape(), axis)?;
    let (yd, gd) = (y.data(), grad.data());
    let mut out = vec![0.0; yd.len()];
    for o in 0..outer {
        let base = o * k * inner;
        for i in 0..inner {
            let idx = |c: usize| base + c * inner + i;
            let total: f64 = (0..k).map(|c| gd[idx(c)]).sum();
            for c in 0..k {
                out[idx(c)] = (gd[idx(c)] - yd[idx(c)].exp() * total) / temperature;
            }
        }
    }
    Ok(Tensor::from_parts(y.shape().to_vec(), out))
}

/// Maps every flat input index to its flat index in the keep-dim reduction.
fn reduction_map(shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<usize>) {
    let out_shape: Vec<usize> = shape
        .iter()
        .enumerate()
        .map(|(d, &s)| if axes.contains(&d) { 1 } else { s })
        .collect();
    let mut out_strides = vec![0usize; shape.len()];
    let mut acc = 1;
    for d in (0..shape.len()).rev() {
        out_strides[d] = if axes.contains(&d) { 0 } else { acc };
        acc *= out_shape[d];
    }
    let numel: usize = shape.iter().product();
    let mut map = Vec::with_capacity(numel);
    let mut index = vec![0usize; shape.len()];
    for _ in 0..numel {
        map.push(index.iter().zip(&out_strides).map(|(i, s)| i * s).sum());
        for d in (0..shape.len()).rev() {
            index[d] += 1;
            if index[d] < shape[d] {
                break;
            }
            index[d] = 0;
        }
    }
    (out_shape, map)
}

pub(crate) fn normalize_axes(shape: &[usize], axes: &[usize]) -> Result<Vec<usize>> {
    let mut axes = axes.to_vec();
    axes.sort_unstable();
    axes.dedup();
    if let Some(&a) = axes.iter().find(|&&a| a >= shape.len()) {
        return Err(Error::Shape(format!("axis {} out of range for {:?}", a, shape)));
    }
    Ok(axes)
}

/// Sum over `axes`, keeping reduced dimensions with extent 1.
pub fn sum_axes(input: &Tensor, axes: &[usize]) -> Result<Tensor> {
    let axes = normalize_axes(input.shape(), axes)?;
    let (out_shape, map) = reduction_map(input.shape(), &axes);
    let mut out = vec![0.0; out_shape.iter().product()];
    for (v, &o) in input.data().iter().zip(&map) {
        out[o] += v;
    }
    Tensor::from_op(out_shape, out, "sum")
}

pub fn sum_axes_backward(input_shape: &[usize], axes: &[usize], grad: &Tensor) -> Result<Tensor> {
    let axes = normalize_axes(input_shape, axes)?;
    let (_, map) = reduction_map(input_shape, &axes);
    let data = map.iter().map(|&o| grad.data()[o]).collect();
    Ok(Tensor::from_parts(input_shape.to_vec(), data))
}

/// Concatenates `[N,C_i,H,W]` tensors along the channel axis.
pub fn concat_channels(inputs: &[&Tensor]) -> Result<Tensor> {
    let first = inputs
        .first()
        .ok_or_else(|| Error::Shape("concat of no tensors".into()))?;
    let [n, _, h, w] = first.dims4()?;
    let mut channels = Vec::with_capacity(inputs.len());
    for t in inputs {
        let [tn, tc, th, tw] = t.dims4()?;
        if (tn, th, tw) != (n, h, w) {
            return Err(Error::Shape(format!(
                "concat: {:?} incompatible with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        channels.push(tc);
    }
    let total: usize = channels.iter().sum();
    let plane = h * w;
    let mut out = Vec::with_capacity(n * total * plane);
    for b in 0..n {
        for (t, &c) in inputs.iter().zip(&channels) {
            out.extend_from_slice(&t.data()[b * c * plane..(b + 1) * c * plane]);
        }
    }
    Ok(Tensor::from_parts(vec![n, total, h, w], out))
}

/// Splits a channel-concatenated gradient back into its parts.
pub fn split_channels(grad: &Tensor, channels: &[usize]) -> Result<Vec<Tensor>> {
    let [n, total, h, w] = grad.dims4()?;
    let plane = h * w;
    let mut parts: Vec<Vec<f64>> = channels.iter().map(|c| Vec::with_capacity(n * c * plane)).collect();
    for b in 0..n {
        let mut offset = b * total * plane;
        for (part, &c) in parts.iter_mut().zip(channels) {
            part.extend_from_slice(&grad.data()[offset..offset + c * plane]);
            offset += c * plane;
        }
    }
    Ok(parts
        .into_iter()
        .zip(channels)
        .map(|(d, &c)| Tensor::from_parts(vec![n, c, h, w], d))
        .collect())
}

pub fn relu(input: &Tensor) -> Tensor {
    Tensor::from_parts(
        input.shape().to_vec(),
        input.data().iter().map(|&v| v.max(0.0)).collect(),
    )
}

pub fn add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b, "add")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x + y).collect();
    Tensor::from_op(a.shape().to_vec(), data, "add")
}

pub fn sub(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b, "sub")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x - y).collect();
    Tensor::from_op(a.shape().to_vec(), data, "sub")
}

pub fn mul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    a.same_shape(b, "mul")?;
    let data = a.data().iter().zip(b.data()).map(|(x, y)| x * y).collect();
    Tensor::from_op(a.shape().to_vec(), data, "mul")
}

pub fn scale(a: &Tensor, factor: f64) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x * factor).collect();
    Tensor::from_op(a.shape().to_vec(), data, "scale")
}

pub fn log(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x.ln()).collect();
    Tensor::from_op(a.shape().to_vec(), data, "log")
}

pub fn exp(a: &Tensor) -> Result<Tensor> {
    let data = a.data().iter().map(|x| x.exp()).collect();
    Tensor::from_op(a.shape().to_vec(), data, "exp")
}
