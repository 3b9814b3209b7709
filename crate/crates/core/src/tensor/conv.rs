//! Convolution kernels (stride 1, dilated, zero padded) used by the graph's
//! conv ops. Both paths lower onto GEMM with separate unfolding code: the
//! 1-D path uses plain im2col, the 2-D path unfolds only the width and runs
//! one GEMM per kernel row over a contiguous row range.

use super::{Float, Tensor};
use crate::error::{Error, Result};

/// Dilation and zero padding of a stride-1 2-D cross-correlation.
///
/// Kernel size comes from the weight tensor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv2dGeometry {
    pub dilation: (usize, usize),
    pub pad_top: usize,
    pub pad_bottom: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv2dGeometry {
    /// Symmetric padding `(ph, pw)`.
    pub fn new(dilation: (usize, usize), padding: (usize, usize)) -> Self {
        Conv2dGeometry {
            dilation,
            pad_top: padding.0,
            pad_bottom: padding.0,
            pad_left: padding.1,
            pad_right: padding.1,
        }
    }

    /// Size-preserving padding for `kernel` at `dilation`.
    ///
    /// When `causal` is set the depth padding is placed entirely above the
    /// input, so output row `t` only sees input rows `<= t`. Width padding is
    /// always symmetric.
    pub fn same(kernel: (usize, usize), dilation: (usize, usize), causal: bool) -> Result<Self> {
        let (kh, kw) = kernel;
        let (dh, dw) = dilation;
        if kh == 0 || kw == 0 || dh == 0 || dw == 0 {
            return Err(Error::config(
                "kernel",
                "kernel sizes and dilations must be positive",
            ));
        }
        if kw % 2 == 0 {
            return Err(Error::config(
                "kernel",
                format!("\"same\" padding needs an odd kernel width, got {kw}"),
            ));
        }
        let reach_h = dh * (kh - 1);
        let pw = dw * (kw - 1) / 2;
        let (top, bottom) = if causal {
            (reach_h, 0)
        } else {
            if kh % 2 == 0 {
                return Err(Error::config(
                    "kernel",
                    format!("non-causal \"same\" padding needs an odd kernel height, got {kh}"),
                ));
            }
            (reach_h / 2, reach_h / 2)
        };
        Ok(Conv2dGeometry {
            dilation,
            pad_top: top,
            pad_bottom: bottom,
            pad_left: pw,
            pad_right: pw,
        })
    }

    /// No padding, unit dilation.
    pub fn valid() -> Self {
        Self::new((1, 1), (0, 0))
    }

    pub fn output_size(
        &self,
        input: (usize, usize),
        kernel: (usize, usize),
    ) -> Result<(usize, usize)> {
        let oh = (input.0 + self.pad_top + self.pad_bottom) as isize
            - (self.dilation.0 * (kernel.0 - 1)) as isize;
        let ow = (input.1 + self.pad_left + self.pad_right) as isize
            - (self.dilation.1 * (kernel.1 - 1)) as isize;
        if oh < 1 || ow < 1 {
            return Err(Error::config(
                "conv2d",
                format!(
                    "input {input:?} with kernel {kernel:?} and {self:?} gives non-positive output {oh}x{ow}"
                ),
            ));
        }
        Ok((oh as usize, ow as usize))
    }
}

/// Dilation and zero padding of a stride-1 1-D cross-correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Conv1dGeometry {
    pub dilation: usize,
    pub pad_left: usize,
    pub pad_right: usize,
}

impl Conv1dGeometry {
    pub fn same(kernel: usize, dilation: usize, causal: bool) -> Result<Self> {
        if kernel == 0 || dilation == 0 {
            return Err(Error::config(
                "kernel",
                "kernel size and dilation must be positive",
            ));
        }
        let reach = dilation * (kernel - 1);
        if causal {
            return Ok(Conv1dGeometry {
                dilation,
                pad_left: reach,
                pad_right: 0,
            });
        }
        if kernel.is_multiple_of(2) {
            return Err(Error::config(
                "kernel",
                format!("non-causal \"same\" padding needs an odd kernel, got {kernel}"),
            ));
        }
        Ok(Conv1dGeometry {
            dilation,
            pad_left: reach / 2,
            pad_right: reach / 2,
        })
    }

    pub fn output_len(&self, input: usize, kernel: usize) -> Result<usize> {
        let out = (input + self.pad_left + self.pad_right) as isize
            - (self.dilation * (kernel - 1)) as isize;
        if out < 1 {
            return Err(Error::config(
                "conv1d",
                format!(
                    "input length {input} with kernel {kernel} and {self:?} gives output {out}"
                ),
            ));
        }
        Ok(out as usize)
    }
}

pub(crate) struct Conv2dDims {
    batch: usize,
    c_in: usize,
    h: usize,
    w: usize,
    c_out: usize,
    kernel: (usize, usize),
    oh: usize,
    ow: usize,
}

impl Conv2dDims {
    /// Rows of the width-unfolded input, one per (input channel, width tap).
    fn taps(&self) -> usize {
        self.c_in * self.kernel.1
    }
    /// Columns of the width-unfolded input: every input row at output width.
    fn span(&self) -> usize {
        self.h * self.ow
    }
    fn p(&self) -> usize {
        self.oh * self.ow
    }
}

pub(crate) fn conv2d_dims<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &Conv2dGeometry,
) -> Result<Conv2dDims> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 4 || ws.len() != 4 {
        return Err(Error::shape("conv2d", xs, ws));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape("conv2d (input channels)", xs, ws));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::shape("conv2d (bias)", bias.shape(), &ws[..1]));
    }
    if geom.dilation.0 == 0 || geom.dilation.1 == 0 {
        return Err(Error::config("dilation", "must be positive"));
    }
    let kernel = (ws[2], ws[3]);
    let (oh, ow) = geom.output_size((xs[2], xs[3]), kernel)?;
    Ok(Conv2dDims {
        batch: xs[0],
        c_in: xs[1],
        h: xs[2],
        w: xs[3],
        c_out: ws[0],
        kernel,
        oh,
        ow,
    })
}

/// Output rows `[lo, hi)` that kernel row `i` maps inside the input, and
/// the input-row offset of that tap.
fn row_range(d: &Conv2dDims, g: &Conv2dGeometry, i: usize) -> (usize, isize, usize) {
    let off = (i * g.dilation.0) as isize - g.pad_top as isize;
    let lo = ((-off).max(0) as usize).min(d.oh);
    let hi = ((d.h as isize - off).max(0) as usize).clamp(lo, d.oh);
    (lo, off, hi)
}

/// Same for width tap `j` and output columns.
fn col_range(d: &Conv2dDims, g: &Conv2dGeometry, j: usize) -> (usize, isize, usize) {
    let off = (j * g.dilation.1) as isize - g.pad_left as isize;
    let lo = ((-off).max(0) as usize).min(d.ow);
    let hi = ((d.w as isize - off).max(0) as usize).clamp(lo, d.ow);
    (lo, off, hi)
}

/// The input already is its own width unfolding.
fn unfold_is_identity(d: &Conv2dDims, g: &Conv2dGeometry) -> bool {
    d.kernel.1 == 1 && g.pad_left == 0 && g.pad_right == 0
}

/// `xw[ci * kw + j][y * ow + ox] = x[ci][y][ox + j * dw - pad_left]`, zero
/// outside the input. Each kernel row then reads a contiguous slice.
fn unfold_width<T: Float>(x: &[T], d: &Conv2dDims, g: &Conv2dGeometry, xw: &mut [T]) {
    let kw = d.kernel.1;
    let span = d.span();
    for ci in 0..d.c_in {
        for j in 0..kw {
            let row = &mut xw[(ci * kw + j) * span..][..span];
            let (lo, off, hi) = col_range(d, g, j);
            for y in 0..d.h {
                let dst = &mut row[y * d.ow..][..d.ow];
                let src = &x[(ci * d.h + y) * d.w..][..d.w];
                dst[..lo].fill(T::zero());
                if hi > lo {
                    let s0 = (lo as isize + off) as usize;
                    dst[lo..hi].copy_from_slice(&src[s0..s0 + (hi - lo)]);
                }
                dst[hi..].fill(T::zero());
            }
        }
    }
}

/// Adjoint of [`unfold_width`], accumulating into `dx`.
fn fold_width<T: Float>(xw: &[T], d: &Conv2dDims, g: &Conv2dGeometry, dx: &mut [T]) {
    let kw = d.kernel.1;
    let span = d.span();
    for ci in 0..d.c_in {
        for j in 0..kw {
            let row = &xw[(ci * kw + j) * span..][..span];
            let (lo, off, hi) = col_range(d, g, j);
            if hi == lo {
                continue;
            }
            let s0 = (lo as isize + off) as usize;
            for y in 0..d.h {
                let src = &row[y * d.ow + lo..y * d.ow + hi];
                let dst = &mut dx[(ci * d.h + y) * d.w + s0..][..hi - lo];
                for (a, &b) in dst.iter_mut().zip(src) {
                    *a += b;
                }
            }
        }
    }
}

/// Regroups `w[o][ci][i][j]` as `packed[i][o][ci * kw + j]`.
fn pack_weight<T: Float>(w: &[T], d: &Conv2dDims) -> Vec<T> {
    let (kh, kw) = d.kernel;
    let taps = d.taps();
    let mut packed = vec![T::zero(); w.len()];
    for o in 0..d.c_out {
        for ci in 0..d.c_in {
            for i in 0..kh {
                let src = &w[((o * d.c_in + ci) * kh + i) * kw..][..kw];
                packed[(i * d.c_out + o) * taps + ci * kw..][..kw].copy_from_slice(src);
            }
        }
    }
    packed
}

fn unpack_weight<T: Float>(packed: &[T], d: &Conv2dDims) -> Vec<T> {
    let (kh, kw) = d.kernel;
    let taps = d.taps();
    let mut w = vec![T::zero(); packed.len()];
    for o in 0..d.c_out {
        for ci in 0..d.c_in {
            for i in 0..kh {
                w[((o * d.c_in + ci) * kh + i) * kw..][..kw]
                    .copy_from_slice(&packed[(i * d.c_out + o) * taps + ci * kw..][..kw]);
            }
        }
    }
    w
}

pub(crate) fn conv2d_forward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &Conv2dGeometry,
) -> Result<Tensor<T>> {
    let d = conv2d_dims(x, weight, bias, geom)?;
    let (taps, span, p) = (d.taps(), d.span(), d.p());
    let identity = unfold_is_identity(&d, geom);
    let packed = pack_weight(weight.data(), &d);
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * p;
    let mut out = vec![T::zero(); d.batch * out_len];
    let mut xw = vec![T::zero(); if identity { 0 } else { taps * span }];
    for b in 0..d.batch {
        let xb = &x.data()[b * in_len..][..in_len];
        let ob = &mut out[b * out_len..][..out_len];
        for (row, &bv) in ob.chunks_exact_mut(p).zip(bias.data()) {
            row.fill(bv);
        }
        let src: &[T] = if identity {
            xb
        } else {
            unfold_width(xb, &d, geom, &mut xw);
            &xw
        };
        for i in 0..d.kernel.0 {
            let (lo, off, hi) = row_range(&d, geom, i);
            if hi == lo {
                continue;
            }
            let start = (lo as isize + off) as usize * d.ow;
            T::gemm_strided(
                d.c_out,
                taps,
                (hi - lo) * d.ow,
                T::one(),
                &packed[i * d.c_out * taps..][..d.c_out * taps],
                (taps, 1),
                &src[start..],
                (span, 1),
                T::one(),
                &mut ob[lo * d.ow..],
                p,
            );
        }
    }
    Tensor::new([d.batch, d.c_out, d.oh, d.ow], out)
}

pub(crate) struct ConvGrads<T> {
    pub input: Option<Vec<T>>,
    pub weight: Option<Vec<T>>,
    pub bias: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &Conv2dGeometry,
    dout: &[T],
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let d = conv2d_dims(x, weight, bias, geom)?;
    let (taps, span, p) = (d.taps(), d.span(), d.p());
    let identity = unfold_is_identity(&d, geom);
    let packed = pack_weight(weight.data(), &d);
    let in_len = d.c_in * d.h * d.w;
    let out_len = d.c_out * p;
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dpacked = need.1.then(|| vec![T::zero(); weight.len()]);
    let mut db = need.2.then(|| vec![T::zero(); d.c_out]);
    let unfold_len = if identity { 0 } else { taps * span };
    let mut xw = vec![T::zero(); if need.1 { unfold_len } else { 0 }];
    let mut dxw = vec![T::zero(); if need.0 { unfold_len } else { 0 }];
    for b in 0..d.batch {
        let xb = &x.data()[b * in_len..][..in_len];
        let gb = &dout[b * out_len..][..out_len];
        if let Some(dpacked) = dpacked.as_mut() {
            let src: &[T] = if identity {
                xb
            } else {
                unfold_width(xb, &d, geom, &mut xw);
                &xw
            };
            // dW_i += dOut[:, rows] * unfolded[:, shifted rows]^T
            for i in 0..d.kernel.0 {
                let (lo, off, hi) = row_range(&d, geom, i);
                if hi == lo {
                    continue;
                }
                let start = (lo as isize + off) as usize * d.ow;
                T::gemm(
                    d.c_out,
                    (hi - lo) * d.ow,
                    taps,
                    T::one(),
                    &gb[lo * d.ow..],
                    (p, 1),
                    &src[start..],
                    (1, span),
                    T::one(),
                    &mut dpacked[i * d.c_out * taps..][..d.c_out * taps],
                );
            }
        }
        if let Some(db) = db.as_mut() {
            for (acc, row) in db.iter_mut().zip(gb.chunks_exact(p)) {
                *acc += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            let dxb = &mut dx[b * in_len..][..in_len];
            let dst: &mut [T] = if identity {
                dxb
            } else {
                dxw.fill(T::zero());
                &mut dxw
            };
            // d(unfolded)[:, shifted rows] += W_i^T * dOut[:, rows]
            for i in 0..d.kernel.0 {
                let (lo, off, hi) = row_range(&d, geom, i);
                if hi == lo {
                    continue;
                }
                let start = (lo as isize + off) as usize * d.ow;
                T::gemm_strided(
                    taps,
                    d.c_out,
                    (hi - lo) * d.ow,
                    T::one(),
                    &packed[i * d.c_out * taps..][..d.c_out * taps],
                    (1, taps),
                    &gb[lo * d.ow..],
                    (p, 1),
                    T::one(),
                    &mut dst[start..],
                    span,
                );
            }
            if !identity {
                fold_width(&dxw, &d, geom, &mut dx[b * in_len..][..in_len]);
            }
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dpacked.map(|p| unpack_weight(&p, &d)),
        bias: db,
    })
}

pub(crate) struct Conv1dDims {
    batch: usize,
    c_in: usize,
    len: usize,
    c_out: usize,
    kernel: usize,
    out_len: usize,
}

pub(crate) fn conv1d_dims<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &Conv1dGeometry,
) -> Result<Conv1dDims> {
    let (xs, ws) = (x.shape(), weight.shape());
    if xs.len() != 3 || ws.len() != 3 {
        return Err(Error::shape("conv1d", xs, ws));
    }
    if xs[1] != ws[1] {
        return Err(Error::shape("conv1d (input channels)", xs, ws));
    }
    if bias.shape() != [ws[0]] {
        return Err(Error::shape("conv1d (bias)", bias.shape(), &ws[..1]));
    }
    if geom.dilation == 0 {
        return Err(Error::config("dilation", "must be positive"));
    }
    let out_len = geom.output_len(xs[2], ws[2])?;
    Ok(Conv1dDims {
        batch: xs[0],
        c_in: xs[1],
        len: xs[2],
        c_out: ws[0],
        kernel: ws[2],
        out_len,
    })
}

/// Valid output positions `[lo, hi)` for kernel tap `i`.
fn tap_range1d(d: &Conv1dDims, g: &Conv1dGeometry, i: usize) -> (usize, isize, usize) {
    let off = (i * g.dilation) as isize - g.pad_left as isize;
    let lo = ((-off).max(0) as usize).min(d.out_len);
    let hi = ((d.len as isize - off).max(0) as usize).clamp(lo, d.out_len);
    (lo, off, hi)
}

fn im2col1d<T: Float>(x: &[T], d: &Conv1dDims, g: &Conv1dGeometry, cols: &mut [T]) {
    let p = d.out_len;
    for ci in 0..d.c_in {
        let src = &x[ci * d.len..][..d.len];
        for i in 0..d.kernel {
            let row = &mut cols[(ci * d.kernel + i) * p..][..p];
            let (lo, off, hi) = tap_range1d(d, g, i);
            row[..lo].fill(T::zero());
            for t in lo..hi {
                row[t] = src[(t as isize + off) as usize];
            }
            row[hi..].fill(T::zero());
        }
    }
}

fn col2im1d<T: Float>(cols: &[T], d: &Conv1dDims, g: &Conv1dGeometry, dx: &mut [T]) {
    let p = d.out_len;
    for ci in 0..d.c_in {
        let dst = &mut dx[ci * d.len..][..d.len];
        for i in 0..d.kernel {
            let row = &cols[(ci * d.kernel + i) * p..][..p];
            let (lo, off, hi) = tap_range1d(d, g, i);
            for t in lo..hi {
                dst[(t as isize + off) as usize] += row[t];
            }
        }
    }
}

pub(crate) fn conv1d_forward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &Conv1dGeometry,
) -> Result<Tensor<T>> {
    let d = conv1d_dims(x, weight, bias, geom)?;
    let k = d.c_in * d.kernel;
    let p = d.out_len;
    let in_len = d.c_in * d.len;
    let out_len = d.c_out * p;
    let mut out = vec![T::zero(); d.batch * out_len];
    let mut cols = vec![T::zero(); k * p];
    for b in 0..d.batch {
        im2col1d(&x.data()[b * in_len..][..in_len], &d, geom, &mut cols);
        let ob = &mut out[b * out_len..][..out_len];
        T::gemm(
            d.c_out,
            k,
            p,
            T::one(),
            weight.data(),
            (k, 1),
            &cols,
            (p, 1),
            T::zero(),
            ob,
        );
        for (row, &bv) in ob.chunks_exact_mut(p).zip(bias.data()) {
            row.iter_mut().for_each(|v| *v += bv);
        }
    }
    Tensor::new([d.batch, d.c_out, p], out)
}

pub(crate) fn conv1d_backward<T: Float>(
    x: &Tensor<T>,
    weight: &Tensor<T>,
    bias: &Tensor<T>,
    geom: &Conv1dGeometry,
    dout: &[T],
    need: (bool, bool, bool),
) -> Result<ConvGrads<T>> {
    let d = conv1d_dims(x, weight, bias, geom)?;
    let k = d.c_in * d.kernel;
    let p = d.out_len;
    let in_len = d.c_in * d.len;
    let out_len = d.c_out * p;
    let mut dx = need.0.then(|| vec![T::zero(); x.len()]);
    let mut dw = need.1.then(|| vec![T::zero(); weight.len()]);
    let mut db = need.2.then(|| vec![T::zero(); d.c_out]);
    let mut cols = vec![T::zero(); k * p];
    for b in 0..d.batch {
        let gb = &dout[b * out_len..][..out_len];
        if let Some(dw) = dw.as_mut() {
            im2col1d(&x.data()[b * in_len..][..in_len], &d, geom, &mut cols);
            T::gemm(
                d.c_out,
                p,
                k,
                T::one(),
                gb,
                (p, 1),
                &cols,
                (1, p),
                T::one(),
                dw,
            );
        }
        if let Some(db) = db.as_mut() {
            for (acc, row) in db.iter_mut().zip(gb.chunks_exact(p)) {
                *acc += row.iter().copied().sum::<T>();
            }
        }
        if let Some(dx) = dx.as_mut() {
            T::gemm(
                k,
                d.c_out,
                p,
                T::one(),
                weight.data(),
                (1, k),
                gb,
                (p, 1),
                T::zero(),
                &mut cols,
            );
            col2im1d(&cols, &d, geom, &mut dx[b * in_len..][..in_len]);
        }
    }
    Ok(ConvGrads {
        input: dx,
        weight: dw,
        bias: db,
    })
}
