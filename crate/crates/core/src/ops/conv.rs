//! 2-D cross-correlation and its transpose, lowered to GEMM through
//! im2col/col2im on bounded row chunks.

use serde::{Deserialize, Serialize};

use super::matmul::gemm;
use crate::error::{Error, Result};
use crate::real::Real;
use crate::tensor::Tensor;

/// Upper bound on im2col buffer elements; larger images are processed in
/// horizontal bands.
const COL_BUDGET: usize = 1 << 22;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel_h: usize,
    pub kernel_w: usize,
    pub stride: usize,
    pub padding: usize,
    /// Channel groups; `groups == in_channels == out_channels` is depthwise.
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: usize, stride: usize, padding: usize) -> Self {
        Self {
            in_channels,
            out_channels,
            kernel_h: kernel,
            kernel_w: kernel,
            stride,
            padding,
            groups: 1,
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn weight_dims(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups.max(1),
            self.kernel_h,
            self.kernel_w,
        ]
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.kernel_h == 0 || self.kernel_w == 0 {
            return Err(Error::Config(format!("degenerate conv spec {self:?}")));
        }
        if self.groups == 0
            || !self.in_channels.is_multiple_of(self.groups)
            || !self.out_channels.is_multiple_of(self.groups)
        {
            return Err(Error::Config(format!(
                "groups {} must divide in={} and out={}",
                self.groups, self.in_channels, self.out_channels
            )));
        }
        Ok(())
    }

    /// `floor((in + 2·padding − kernel)/stride) + 1` along one axis.
    pub fn output_extent(&self, input: usize, kernel: usize) -> Result<usize> {
        let padded = input + 2 * self.padding;
        if padded < kernel {
            return Err(Error::shape(
                "conv2d",
                format!("spatial extent {input} with padding {} is smaller than kernel {kernel}", self.padding),
            ));
        }
        Ok((padded - kernel) / self.stride + 1)
    }

    pub fn output_hw(&self, h: usize, w: usize) -> Result<(usize, usize)> {
        Ok((self.output_extent(h, self.kernel_h)?, self.output_extent(w, self.kernel_w)?))
    }
}

fn check_nchw<T: Real>(op: &'static str, x: &Tensor<T>) -> Result<[usize; 4]> {
    match *x.dims() {
        [n, c, h, w] => Ok([n, c, h, w]),
        ref d => Err(Error::shape(op, format!("expected rank-4 N,C,H,W input, got {d:?}"))),
    }
}

fn check_conv_args<T: Real>(
    op: &'static str,
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<[usize; 4]> {
    spec.validate()?;
    let dims = check_nchw(op, x)?;
    if dims[1] != spec.in_channels {
        return Err(Error::shape(
            op,
            format!("channel axis (1): input has {} channels, spec expects {}", dims[1], spec.in_channels),
        ));
    }
    let wd = spec.weight_dims();
    if weight.dims() != wd {
        let axis = weight
            .dims()
            .iter()
            .zip(wd.iter())
            .position(|(a, b)| a != b)
            .unwrap_or(0);
        return Err(Error::shape(
            op,
            format!("weight axis {axis}: got dims {:?}, expected {wd:?}", weight.dims()),
        ));
    }
    if let Some(b) = bias {
        if b.dims() != [spec.out_channels] {
            return Err(Error::shape(
                op,
                format!("bias dims {:?}, expected [{}]", b.dims(), spec.out_channels),
            ));
        }
    }
    Ok(dims)
}

/// Geometry of one image/group lowering.
struct Lowering {
    cin_g: usize,
    h: usize,
    w: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    pad: usize,
    ho: usize,
    wo: usize,
}

impl Lowering {
    fn k(&self) -> usize {
        self.cin_g * self.kh * self.kw
    }

    fn rows_per_band(&self) -> usize {
        (COL_BUDGET / (self.k() * self.wo).max(1)).clamp(1, self.ho)
    }

    /// Fills `cols` (K × rows·wo) for output rows `[r0, r0+rows)`.
    fn im2col<T: Real>(&self, x: &[T], r0: usize, rows: usize, cols: &mut [T]) {
        let p = rows * self.wo;
        for c in 0..self.cin_g {
            let plane = &x[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let dst = &mut cols[row * p..(row + 1) * p];
                    for (ry, oy) in (r0..r0 + rows).enumerate() {
                        let seg = &mut dst[ry * self.wo..(ry + 1) * self.wo];
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            seg.fill(T::zero());
                            continue;
                        }
                        let src = &plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, v) in seg.iter_mut().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            *v = if ix < 0 || ix >= self.w as isize {
                                T::zero()
                            } else {
                                src[ix as usize]
                            };
                        }
                    }
                }
            }
        }
    }

    /// Scatter-adds `cols` back into the input-shaped buffer `dx`.
    fn col2im<T: Real>(&self, cols: &[T], r0: usize, rows: usize, dx: &mut [T]) {
        let p = rows * self.wo;
        for c in 0..self.cin_g {
            let plane = &mut dx[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.kh {
                for kx in 0..self.kw {
                    let row = (c * self.kh + ky) * self.kw + kx;
                    let src = &cols[row * p..(row + 1) * p];
                    for (ry, oy) in (r0..r0 + rows).enumerate() {
                        let iy = (oy * self.stride + ky) as isize - self.pad as isize;
                        if iy < 0 || iy >= self.h as isize {
                            continue;
                        }
                        let dst = &mut plane[iy as usize * self.w..(iy as usize + 1) * self.w];
                        for (ox, &v) in src[ry * self.wo..(ry + 1) * self.wo].iter().enumerate() {
                            let ix = (ox * self.stride + kx) as isize - self.pad as isize;
                            if ix >= 0 && (ix as usize) < self.w {
                                dst[ix as usize] += v;
                            }
                        }
                    }
                }
            }
        }
    }
}

fn lowering(spec: &ConvSpec, h: usize, w: usize) -> Result<Lowering> {
    let (ho, wo) = spec.output_hw(h, w)?;
    Ok(Lowering {
        cin_g: spec.in_channels / spec.groups,
        h,
        w,
        kh: spec.kernel_h,
        kw: spec.kernel_w,
        stride: spec.stride,
        pad: spec.padding,
        ho,
        wo,
    })
}

/// Cross-correlation of `x` (N,Cin,H,W) with `weight` (Cout,Cin/groups,kh,kw).
pub fn conv2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    spec: &ConvSpec,
) -> Result<Tensor<T>> {
    let [n, cin, h, w] = check_conv_args("conv2d", x, weight, bias, spec)?;
    let lw = lowering(spec, h, w)?;
    let cout = spec.out_channels;
    let cout_g = cout / spec.groups;
    let k = lw.k();
    let plane_out = lw.ho * lw.wo;
    let mut out = Tensor::zeros(&[n, cout, lw.ho, lw.wo]);
    let band = lw.rows_per_band();
    let mut cols = vec![T::zero(); k * band * lw.wo];
    for img in 0..n {
        for g in 0..spec.groups {
            let xin = &x.data()[(img * cin + g * lw.cin_g) * h * w..][..lw.cin_g * h * w];
            let wg = &weight.data()[g * cout_g * k..(g + 1) * cout_g * k];
            let out_g = &mut out.data_mut()[(img * cout + g * cout_g) * plane_out..][..cout_g * plane_out];
            let mut r0 = 0;
            while r0 < lw.ho {
                let rows = band.min(lw.ho - r0);
                let p = rows * lw.wo;
                lw.im2col(xin, r0, rows, &mut cols[..k * p]);
                gemm(
                    cout_g,
                    k,
                    p,
                    wg,
                    (k, 1),
                    &cols[..k * p],
                    (p, 1),
                    &mut out_g[r0 * lw.wo..],
                    plane_out,
                    false,
                );
                r0 += rows;
            }
        }
    }
    if let Some(b) = bias {
        add_channel_bias(&mut out, b);
    }
    Ok(out)
}

fn add_channel_bias<T: Real>(out: &mut Tensor<T>, bias: &Tensor<T>) {
    let d = out.dims().to_vec();
    let plane = d[2] * d[3];
    for (i, chunk) in out.data_mut().chunks_mut(plane).enumerate() {
        let b = bias.data()[i % d[1]];
        chunk.iter_mut().for_each(|v| *v += b);
    }
}

fn channel_sums<T: Real>(dy: &Tensor<T>) -> Tensor<T> {
    let d = dy.dims();
    let plane = d[2] * d[3];
    let mut db = Tensor::zeros(&[d[1]]);
    for (i, chunk) in dy.data().chunks(plane).enumerate() {
        db.data_mut()[i % d[1]] += chunk.iter().copied().sum();
    }
    db
}

/// Gradients of [`conv2d`] for input, weight, and bias.
pub struct ConvGrads<T: Real> {
    pub input: Option<Tensor<T>>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

/// Gradient of conv2d with respect to its input, given the input extents.
fn conv2d_input_grad<T: Real>(
    dy: &Tensor<T>,
    weight: &Tensor<T>,
    spec: &ConvSpec,
    n: usize,
    h: usize,
    w: usize,
) -> Result<Tensor<T>> {
    let lw = lowering(spec, h, w)?;
    let cin = spec.in_channels;
    let cout = spec.out_channels;
    let cout_g = cout / spec.groups;
    let k = lw.k();
    let plane_out = lw.ho * lw.wo;
    if dy.dims() != [n, cout, lw.ho, lw.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("output grad dims {:?}, expected {:?}", dy.dims(), [n, cout, lw.ho, lw.wo]),
        ));
    }
    let mut dx = Tensor::zeros(&[n, cin, h, w]);
    let band = lw.rows_per_band();
    let mut cols = vec![T::zero(); k * band * lw.wo];
    for img in 0..n {
        for g in 0..spec.groups {
            let wg = &weight.data()[g * cout_g * k..(g + 1) * cout_g * k];
            let dy_g = &dy.data()[(img * cout + g * cout_g) * plane_out..][..cout_g * plane_out];
            let dx_g = &mut dx.data_mut()[(img * cin + g * lw.cin_g) * h * w..][..lw.cin_g * h * w];
            let mut r0 = 0;
            while r0 < lw.ho {
                let rows = band.min(lw.ho - r0);
                let p = rows * lw.wo;
                // cols (K×p) = Wgᵀ (K×cout_g) · dy_g[:, band]
                gemm(
                    k,
                    cout_g,
                    p,
                    wg,
                    (1, k),
                    &dy_g[r0 * lw.wo..],
                    (plane_out, 1),
                    &mut cols[..k * p],
                    p,
                    false,
                );
                lw.col2im(&cols[..k * p], r0, rows, dx_g);
                r0 += rows;
            }
        }
    }
    Ok(dx)
}

/// Gradient of conv2d with respect to its weight.
fn conv2d_weight_grad<T: Real>(x: &Tensor<T>, dy: &Tensor<T>, spec: &ConvSpec) -> Result<Tensor<T>> {
    let [n, cin, h, w] = check_nchw("conv2d_backward", x)?;
    let lw = lowering(spec, h, w)?;
    let cout = spec.out_channels;
    let cout_g = cout / spec.groups;
    let k = lw.k();
    let plane_out = lw.ho * lw.wo;
    if dy.dims() != [n, cout, lw.ho, lw.wo] {
        return Err(Error::shape(
            "conv2d_backward",
            format!("output grad dims {:?}, expected {:?}", dy.dims(), [n, cout, lw.ho, lw.wo]),
        ));
    }
    let mut dw = Tensor::zeros(&spec.weight_dims());
    let band = lw.rows_per_band();
    let mut cols = vec![T::zero(); k * band * lw.wo];
    for img in 0..n {
        for g in 0..spec.groups {
            let xin = &x.data()[(img * cin + g * lw.cin_g) * h * w..][..lw.cin_g * h * w];
            let dy_g = &dy.data()[(img * cout + g * cout_g) * plane_out..][..cout_g * plane_out];
            let dw_g = &mut dw.data_mut()[g * cout_g * k..(g + 1) * cout_g * k];
            let mut r0 = 0;
            while r0 < lw.ho {
                let rows = band.min(lw.ho - r0);
                let p = rows * lw.wo;
                lw.im2col(xin, r0, rows, &mut cols[..k * p]);
                // dW (cout_g×K) += dy_g[:, band] · colsᵀ
                gemm(
                    cout_g,
                    p,
                    k,
                    &dy_g[r0 * lw.wo..],
                    (plane_out, 1),
                    &cols[..k * p],
                    (1, p),
                    dw_g,
                    k,
                    true,
                );
                r0 += rows;
            }
        }
    }
    Ok(dw)
}

pub fn conv2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    spec: &ConvSpec,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let [n, _, h, w] = check_conv_args("conv2d_backward", x, weight, None, spec)?;
    let input = if need_input {
        Some(conv2d_input_grad(dy, weight, spec, n, h, w)?)
    } else {
        None
    };
    Ok(ConvGrads {
        input,
        weight: conv2d_weight_grad(x, dy, spec)?,
        bias: channel_sums(dy),
    })
}

fn transpose_spec<T: Real>(x: &Tensor<T>, weight: &Tensor<T>, stride: usize) -> Result<ConvSpec> {
    let [_, cin, _, _] = check_nchw("conv_transpose2d", x)?;
    let [wc_in, wc_out, kh, kw] = match *weight.dims() {
        [a, b, c, d] => [a, b, c, d],
        ref d => return Err(Error::shape("conv_transpose2d", format!("weight must be rank 4, got {d:?}"))),
    };
    if wc_in != cin {
        return Err(Error::shape(
            "conv_transpose2d",
            format!("channel axis (1): input has {cin} channels, weight axis 0 has {wc_in}"),
        ));
    }
    if stride == 0 {
        return Err(Error::Config("conv_transpose2d stride must be positive".into()));
    }
    // The equivalent forward convolution maps the transposed output back to
    // the input: Cout_t → Cin_t.
    Ok(ConvSpec {
        in_channels: wc_out,
        out_channels: wc_in,
        kernel_h: kh,
        kernel_w: kw,
        stride,
        padding: 0,
        groups: 1,
    })
}

/// Output extent of a padding-free transposed convolution.
pub fn conv_transpose_extent(input: usize, kernel: usize, stride: usize) -> usize {
    (input - 1) * stride + kernel
}

/// Transposed convolution, the exact adjoint of a padding-free [`conv2d`]
/// sharing the same weight tensor. `weight` is (Cin, Cout, kh, kw).
pub fn conv_transpose2d<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
) -> Result<Tensor<T>> {
    let fwd = transpose_spec(x, weight, stride)?;
    let [n, _, h, w] = check_nchw("conv_transpose2d", x)?;
    if let Some(b) = bias {
        if b.dims() != [fwd.in_channels] {
            return Err(Error::shape(
                "conv_transpose2d",
                format!("bias dims {:?}, expected [{}]", b.dims(), fwd.in_channels),
            ));
        }
    }
    let ho = conv_transpose_extent(h, fwd.kernel_h, stride);
    let wo = conv_transpose_extent(w, fwd.kernel_w, stride);
    let mut out = conv2d_input_grad(x, weight, &fwd, n, ho, wo)?;
    if let Some(b) = bias {
        add_channel_bias(&mut out, b);
    }
    Ok(out)
}

pub fn conv_transpose2d_backward<T: Real>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    dy: &Tensor<T>,
    stride: usize,
    need_input: bool,
) -> Result<ConvGrads<T>> {
    let fwd = transpose_spec(x, weight, stride)?;
    let input = if need_input {
        Some(conv2d(dy, weight, None, &fwd)?)
    } else {
        None
    };
    // dW[ci_t, co_t, ..] = Σ x[ci_t] ⋆ dy[co_t], i.e. the forward conv's
    // weight gradient with the roles of input and output swapped.
    let weight_grad = conv2d_weight_grad(dy, x, &fwd)?;
    Ok(ConvGrads {
        input,
        weight: weight_grad,
        bias: channel_sums(dy),
    })
}
