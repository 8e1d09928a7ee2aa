//! Dense NCHW tensor math: the handful of kernels the detector graph needs.
//!
//! Convolutions use "same" padding: the output spatial size is `ceil(d / s)`
//! and any odd padding remainder goes to the bottom/right edge. Full and
//! grouped convolutions are lowered to im2col + sgemm, depthwise convolutions
//! run as a direct loop.

use rayon::prelude::*;

use crate::error::{Error, Result};

/// Batch, channels, height, width.
pub type Shape4 = [usize; 4];

/// A 4-D NCHW tensor of `f32` stored row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor4 {
    shape: Shape4,
    data: Vec<f32>,
}

impl Tensor4 {
    pub fn new(shape: Shape4, data: Vec<f32>) -> Result<Self> {
        if shape.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "tensor dimensions must be >= 1, got {shape:?}"
            )));
        }
        let expected: usize = shape.iter().product();
        if data.len() != expected {
            return Err(Error::shape("tensor", expected, data.len()));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Shape4) -> Result<Self> {
        Self::new(shape, vec![0.0; shape.iter().product()])
    }

    pub fn from_fn(shape: Shape4, mut f: impl FnMut(usize, usize, usize, usize) -> f32) -> Result<Self> {
        let [n, c, h, w] = shape;
        let mut data = Vec::with_capacity(n * c * h * w);
        for ni in 0..n {
            for ci in 0..c {
                for yi in 0..h {
                    for xi in 0..w {
                        data.push(f(ni, ci, yi, xi));
                    }
                }
            }
        }
        Self::new(shape, data)
    }

    pub fn shape(&self) -> Shape4 {
        self.shape
    }

    pub fn batch(&self) -> usize {
        self.shape[0]
    }

    pub fn channels(&self) -> usize {
        self.shape[1]
    }

    pub fn height(&self) -> usize {
        self.shape[2]
    }

    pub fn width(&self) -> usize {
        self.shape[3]
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    #[inline]
    pub fn index(&self, n: usize, c: usize, y: usize, x: usize) -> usize {
        ((n * self.shape[1] + c) * self.shape[2] + y) * self.shape[3] + x
    }

    #[inline]
    pub fn get(&self, n: usize, c: usize, y: usize, x: usize) -> f32 {
        self.data[self.index(n, c, y, x)]
    }

    /// The `h * w` plane of channel `c` in batch item `n`.
    pub fn plane(&self, n: usize, c: usize) -> &[f32] {
        let hw = self.shape[2] * self.shape[3];
        let start = (n * self.shape[1] + c) * hw;
        &self.data[start..start + hw]
    }

    pub fn map(&self, f: impl Fn(f32) -> f32 + Sync) -> Self {
        Self {
            shape: self.shape,
            data: self.data.par_iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Output size and leading pad for "same" padding.
pub fn same_padding(input: usize, kernel: usize, stride: usize) -> (usize, usize) {
    let out = input.div_ceil(stride);
    let total = ((out - 1) * stride + kernel).saturating_sub(input);
    (out, total / 2)
}

/// Kernel, bias and geometry of one convolution layer.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvParams {
    name: String,
    kernel: Vec<f32>,
    bias: Vec<f32>,
    out_channels: usize,
    in_channels: usize,
    kernel_size: usize,
    stride: usize,
    groups: usize,
}

impl ConvParams {
    /// `kernel_shape` is `[out_ch, in_ch / groups, k, k]` with `k` 1 or 3.
    pub fn new(
        name: impl Into<String>,
        kernel: Vec<f32>,
        kernel_shape: [usize; 4],
        bias: Vec<f32>,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        let name = name.into();
        let [oc, icg, kh, kw] = kernel_shape;
        if stride != 1 && stride != 2 {
            return Err(Error::InvalidStride(stride));
        }
        if kh != kw || !(kh == 1 || kh == 3) {
            return Err(Error::shape(&name, "1x1 or 3x3 kernel", [kh, kw]));
        }
        if groups == 0 || oc == 0 || icg == 0 || oc % groups != 0 {
            return Err(Error::InvalidGroups(format!(
                "layer `{name}`: {oc} output channels not divisible into {groups} groups"
            )));
        }
        if kernel.len() != oc * icg * kh * kw {
            return Err(Error::shape(&name, kernel_shape, kernel.len()));
        }
        if bias.len() != oc {
            return Err(Error::shape(format!("{name}.bias"), oc, bias.len()));
        }
        Ok(Self {
            name,
            kernel,
            bias,
            out_channels: oc,
            in_channels: icg * groups,
            kernel_size: kh,
            stride,
            groups,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kernel(&self) -> &[f32] {
        &self.kernel
    }

    pub fn bias(&self) -> &[f32] {
        &self.bias
    }

    pub fn out_channels(&self) -> usize {
        self.out_channels
    }

    pub fn in_channels(&self) -> usize {
        self.in_channels
    }

    pub fn kernel_size(&self) -> usize {
        self.kernel_size
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn kernel_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups,
            self.kernel_size,
            self.kernel_size,
        ]
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups > 1 && self.groups == self.in_channels && self.groups == self.out_channels
    }

    /// Output shape for an input of the given shape.
    pub fn output_shape(&self, input: Shape4) -> Shape4 {
        let (oh, _) = same_padding(input[2], self.kernel_size, self.stride);
        let (ow, _) = same_padding(input[3], self.kernel_size, self.stride);
        [input[0], self.out_channels, oh, ow]
    }
}

/// Per-channel batch normalisation statistics.
#[derive(Clone, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: Vec<f32>,
    pub beta: Vec<f32>,
    pub mean: Vec<f32>,
    pub var: Vec<f32>,
}

impl BatchNorm {
    pub fn identity(channels: usize) -> Self {
        Self {
            gamma: vec![1.0; channels],
            beta: vec![0.0; channels],
            mean: vec![0.0; channels],
            var: vec![1.0; channels],
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }
}

/// Folds inference-mode batch norm into the preceding convolution.
pub fn batchnorm_fold(params: &ConvParams, bn: &BatchNorm, eps: f32) -> Result<ConvParams> {
    let oc = params.out_channels;
    for (what, len) in [
        ("gamma", bn.gamma.len()),
        ("beta", bn.beta.len()),
        ("mean", bn.mean.len()),
        ("var", bn.var.len()),
    ] {
        if len != oc {
            return Err(Error::shape(format!("{}.bn.{what}", params.name), oc, len));
        }
    }
    if let Some(v) = bn.var.iter().find(|v| !(**v >= 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "layer `{}`: negative batch-norm variance {v}",
            params.name
        )));
    }

    let per_out = params.kernel.len() / oc;
    let mut kernel = params.kernel.clone();
    let mut bias = params.bias.clone();
    for o in 0..oc {
        let scale = f64::from(bn.gamma[o]) / (f64::from(bn.var[o]) + f64::from(eps)).sqrt();
        for k in &mut kernel[o * per_out..(o + 1) * per_out] {
            *k = (f64::from(*k) * scale) as f32;
        }
        bias[o] = ((f64::from(bias[o]) - f64::from(bn.mean[o])) * scale + f64::from(bn.beta[o])) as f32;
    }
    Ok(ConvParams { kernel, bias, ..params.clone() })
}

/// 2-D convolution with "same" padding.
pub fn conv2d(input: &Tensor4, params: &ConvParams) -> Result<Tensor4> {
    if input.channels() != params.in_channels {
        return Err(Error::shape(
            &params.name,
            format!("{} input channels", params.in_channels),
            input.shape(),
        ));
    }
    if params.is_depthwise() {
        Ok(depthwise(input, params))
    } else {
        Ok(grouped_gemm(input, params))
    }
}

fn depthwise(input: &Tensor4, params: &ConvParams) -> Tensor4 {
    let [n, c, h, w] = input.shape();
    let out_shape = params.output_shape(input.shape());
    let [_, _, oh, ow] = out_shape;
    let k = params.kernel_size;
    let s = params.stride;
    let (_, pad_y) = same_padding(h, k, s);
    let (_, pad_x) = same_padding(w, k, s);
    let mut out = vec![0.0f32; n * c * oh * ow];

    out.par_chunks_mut(oh * ow).enumerate().for_each(|(plane_idx, dst)| {
        let ch = plane_idx % c;
        let src = input.plane(plane_idx / c, ch);
        let taps = &params.kernel[ch * k * k..(ch + 1) * k * k];
        let b = params.bias[ch];
        for oy in 0..oh {
            let iy0 = (oy * s) as isize - pad_y as isize;
            for ox in 0..ow {
                let ix0 = (ox * s) as isize - pad_x as isize;
                let mut acc = 0.0f32;
                for ky in 0..k {
                    let iy = iy0 + ky as isize;
                    if iy < 0 || iy >= h as isize {
                        continue;
                    }
                    let row = &src[iy as usize * w..(iy as usize + 1) * w];
                    for kx in 0..k {
                        let ix = ix0 + kx as isize;
                        if ix < 0 || ix >= w as isize {
                            continue;
                        }
                        acc += taps[ky * k + kx] * row[ix as usize];
                    }
                }
                dst[oy * ow + ox] = acc + b;
            }
        }
    });

    Tensor4 { shape: out_shape, data: out }
}

fn grouped_gemm(input: &Tensor4, params: &ConvParams) -> Tensor4 {
    let [n, c, h, w] = input.shape();
    let out_shape = params.output_shape(input.shape());
    let [_, oc, oh, ow] = out_shape;
    let k = params.kernel_size;
    let s = params.stride;
    let g = params.groups;
    let icg = c / g;
    let ocg = oc / g;
    let ohw = oh * ow;
    let depth = icg * k * k;
    let direct = k == 1 && s == 1;
    let mut out = vec![0.0f32; n * oc * ohw];
    let mut cols = if direct { Vec::new() } else { vec![0.0f32; depth * ohw] };

    for ni in 0..n {
        for gi in 0..g {
            let in_start = (ni * c + gi * icg) * h * w;
            let group_in = &input.data[in_start..in_start + icg * h * w];
            let rhs: &[f32] = if direct {
                group_in
            } else {
                im2col(group_in, h, w, k, s, oh, ow, &mut cols);
                &cols
            };
            let lhs = &params.kernel[gi * ocg * depth..(gi + 1) * ocg * depth];
            let out_start = (ni * oc + gi * ocg) * ohw;
            let dst = &mut out[out_start..out_start + ocg * ohw];
            par_matmul(lhs, rhs, dst, ocg, depth, ohw);
            for (o, plane) in dst.chunks_mut(ohw).enumerate() {
                let b = params.bias[gi * ocg + o];
                plane.iter_mut().for_each(|v| *v += b);
            }
        }
    }

    Tensor4 { shape: out_shape, data: out }
}

#[allow(clippy::too_many_arguments)]
fn im2col(
    src: &[f32],
    h: usize,
    w: usize,
    k: usize,
    s: usize,
    oh: usize,
    ow: usize,
    cols: &mut [f32],
) {
    let (_, pad_y) = same_padding(h, k, s);
    let (_, pad_x) = same_padding(w, k, s);
    cols.par_chunks_mut(oh * ow).enumerate().for_each(|(row, dst)| {
        let ch = row / (k * k);
        let ky = (row / k) % k;
        let kx = row % k;
        let plane = &src[ch * h * w..(ch + 1) * h * w];
        for oy in 0..oh {
            let iy = (oy * s + ky) as isize - pad_y as isize;
            let out_row = &mut dst[oy * ow..(oy + 1) * ow];
            if iy < 0 || iy >= h as isize {
                out_row.fill(0.0);
                continue;
            }
            let in_row = &plane[iy as usize * w..(iy as usize + 1) * w];
            for (ox, v) in out_row.iter_mut().enumerate() {
                let ix = (ox * s + kx) as isize - pad_x as isize;
                *v = if ix < 0 || ix >= w as isize { 0.0 } else { in_row[ix as usize] };
            }
        }
    });
}

/// `dst[m x n] = lhs[m x k] * rhs[k x n]`, split across threads by output rows.
fn par_matmul(lhs: &[f32], rhs: &[f32], dst: &mut [f32], m: usize, k: usize, n: usize) {
    assert_eq!(lhs.len(), m * k);
    assert_eq!(rhs.len(), k * n);
    assert_eq!(dst.len(), m * n);
    let threads = rayon::current_num_threads().max(1);
    let rows_per_task = m.div_ceil(threads).max(8);
    dst.par_chunks_mut(rows_per_task * n)
        .zip(lhs.par_chunks(rows_per_task * k))
        .for_each(|(d, l)| {
            let rows = d.len() / n;
            // SAFETY: slice lengths were checked above; strides describe
            // dense row-major matrices of exactly those sizes.
            unsafe {
                matrixmultiply::sgemm(
                    rows,
                    k,
                    n,
                    1.0,
                    l.as_ptr(),
                    k as isize,
                    1,
                    rhs.as_ptr(),
                    n as isize,
                    1,
                    0.0,
                    d.as_mut_ptr(),
                    n as isize,
                    1,
                );
            }
        });
}

pub fn relu6(input: &Tensor4) -> Tensor4 {
    input.map(|v| v.clamp(0.0, 6.0))
}

pub fn add(a: &Tensor4, b: &Tensor4) -> Result<Tensor4> {
    if a.shape != b.shape {
        return Err(Error::shape("add", a.shape, b.shape));
    }
    Ok(Tensor4 {
        shape: a.shape,
        data: a.data.par_iter().zip(&b.data).map(|(x, y)| x + y).collect(),
    })
}

/// Max-stabilised two-way softmax.
#[inline]
pub fn softmax2(a: f32, b: f32) -> (f32, f32) {
    let m = a.max(b);
    let ea = (a - m).exp();
    let eb = (b - m).exp();
    let z = ea + eb;
    (ea / z, eb / z)
}

/// Replaces channels `pair_offset` and `pair_offset + 1` with their two-way
/// softmax at every pixel.
pub fn channel_pair_softmax(input: &Tensor4, pair_offset: usize) -> Result<Tensor4> {
    let [n, c, h, w] = input.shape();
    if pair_offset + 1 >= c {
        return Err(Error::ChannelOutOfRange { index: pair_offset + 1, channels: c });
    }
    let mut out = input.clone();
    let hw = h * w;
    for ni in 0..n {
        let a0 = input.index(ni, pair_offset, 0, 0);
        let b0 = input.index(ni, pair_offset + 1, 0, 0);
        for i in 0..hw {
            let (pa, pb) = softmax2(input.data[a0 + i], input.data[b0 + i]);
            out.data[a0 + i] = pa;
            out.data[b0 + i] = pb;
        }
    }
    Ok(out)
}
