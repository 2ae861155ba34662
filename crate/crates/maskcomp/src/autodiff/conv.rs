//! Dense 2-D convolution kernels over `[T, F, C]` maps.
//!
//! Weight layout is `[Cout, kt, kf, Cin]` so the innermost loop runs over
//! contiguous input channels. Index convention, shared by all kernels:
//!
//! ```text
//!   t_in = t_out * stride.0 + kt * dilation.0 - padding.0
//!   f_in = f_out * stride.1 + kf * dilation.1 - padding.1
//! ```
//!
//! The transposed convolution uses the same equation with input/output
//! roles swapped, which makes it the exact shape inverse (and linear-map
//! adjoint) of the matching forward convolution.

use thiserror::Error;

use crate::num::Real;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ConvSpecError {
    #[error("zero-size field in convolution spec")]
    ZeroField,
    #[error("input {input:?} too small for effective kernel {extent:?}")]
    InputTooSmall { input: (usize, usize), extent: (usize, usize) },
    #[error("output padding {0} must be smaller than stride {1}")]
    BadOutputPadding(usize, usize),
    #[error("convolution produces an empty output")]
    EmptyOutput,
}

/// Geometry of a forward 2-D convolution (cross-correlation).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    /// (time, frequency)
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    /// Symmetric zero padding per axis.
    pub padding: (usize, usize),
}

impl Conv2dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: (usize, usize),
    ) -> Result<Self, ConvSpecError> {
        let spec = Conv2dSpec { in_channels, out_channels, kernel, stride, dilation, padding };
        if in_channels == 0
            || out_channels == 0
            || kernel.0 == 0
            || kernel.1 == 0
            || stride.0 == 0
            || stride.1 == 0
            || dilation.0 == 0
            || dilation.1 == 0
        {
            return Err(ConvSpecError::ZeroField);
        }
        Ok(spec)
    }

    /// Effective kernel extent per axis, `dilation * (kernel - 1) + 1`.
    pub fn extent(&self) -> (usize, usize) {
        (
            self.dilation.0 * (self.kernel.0 - 1) + 1,
            self.dilation.1 * (self.kernel.1 - 1) + 1,
        )
    }

    pub fn out_size(&self, input: (usize, usize)) -> Result<(usize, usize), ConvSpecError> {
        let ext = self.extent();
        let pt = input.0 + 2 * self.padding.0;
        let pf = input.1 + 2 * self.padding.1;
        if pt < ext.0 || pf < ext.1 {
            return Err(ConvSpecError::InputTooSmall { input, extent: ext });
        }
        let ot = (pt - ext.0) / self.stride.0 + 1;
        let of = (pf - ext.1) / self.stride.1 + 1;
        if ot == 0 || of == 0 {
            return Err(ConvSpecError::EmptyOutput);
        }
        Ok((ot, of))
    }

    pub fn weight_numel(&self) -> usize {
        self.out_channels * self.kernel.0 * self.kernel.1 * self.in_channels
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }
}

/// Geometry of a transposed 2-D convolution. `output_padding` grows the
/// output on the high side to disambiguate strided inverses.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConvT2dSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: (usize, usize),
    pub stride: (usize, usize),
    pub dilation: (usize, usize),
    pub padding: (usize, usize),
    pub output_padding: (usize, usize),
}

impl ConvT2dSpec {
    pub fn new(
        in_channels: usize,
        out_channels: usize,
        kernel: (usize, usize),
        stride: (usize, usize),
        dilation: (usize, usize),
        padding: (usize, usize),
        output_padding: (usize, usize),
    ) -> Result<Self, ConvSpecError> {
        if in_channels == 0
            || out_channels == 0
            || kernel.0 == 0
            || kernel.1 == 0
            || stride.0 == 0
            || stride.1 == 0
            || dilation.0 == 0
            || dilation.1 == 0
        {
            return Err(ConvSpecError::ZeroField);
        }
        if output_padding.0 >= stride.0 {
            return Err(ConvSpecError::BadOutputPadding(output_padding.0, stride.0));
        }
        if output_padding.1 >= stride.1 {
            return Err(ConvSpecError::BadOutputPadding(output_padding.1, stride.1));
        }
        Ok(ConvT2dSpec {
            in_channels,
            out_channels,
            kernel,
            stride,
            dilation,
            padding,
            output_padding,
        })
    }

    /// Inverse of the matching forward conv: maps that conv's output size
    /// back to its input size. `target` picks the output_padding.
    pub fn inverting(
        forward: &Conv2dSpec,
        forward_in: (usize, usize),
    ) -> Result<Self, ConvSpecError> {
        let out = forward.out_size(forward_in)?;
        let ext = (
            forward.dilation.0 * (forward.kernel.0 - 1) + 1,
            forward.dilation.1 * (forward.kernel.1 - 1) + 1,
        );
        let base_t = (out.0 - 1) * forward.stride.0 + ext.0;
        let base_f = (out.1 - 1) * forward.stride.1 + ext.1;
        let need_t = forward_in.0 + 2 * forward.padding.0;
        let need_f = forward_in.1 + 2 * forward.padding.1;
        // out_size computed by floor division, so base <= need < base + stride
        let op_t = need_t - base_t;
        let op_f = need_f - base_f;
        ConvT2dSpec::new(
            forward.out_channels,
            forward.in_channels,
            forward.kernel,
            forward.stride,
            forward.dilation,
            forward.padding,
            (op_t, op_f),
        )
    }

    pub fn out_size(&self, input: (usize, usize)) -> Result<(usize, usize), ConvSpecError> {
        let ext_t = self.dilation.0 * (self.kernel.0 - 1) + 1;
        let ext_f = self.dilation.1 * (self.kernel.1 - 1) + 1;
        let full_t = (input.0 - 1) * self.stride.0 + ext_t + self.output_padding.0;
        let full_f = (input.1 - 1) * self.stride.1 + ext_f + self.output_padding.1;
        if full_t < 2 * self.padding.0 + 1 || full_f < 2 * self.padding.1 + 1 {
            return Err(ConvSpecError::EmptyOutput);
        }
        Ok((full_t - 2 * self.padding.0, full_f - 2 * self.padding.1))
    }

    pub fn weight_numel(&self) -> usize {
        self.out_channels * self.kernel.0 * self.kernel.1 * self.in_channels
    }

    pub fn fan_in(&self) -> usize {
        self.in_channels * self.kernel.0 * self.kernel.1
    }
}

#[inline]
fn in_coord(out: usize, k: usize, stride: usize, dilation: usize, pad: usize) -> Option<usize> {
    (out * stride + k * dilation).checked_sub(pad)
}

pub(crate) fn conv2d_forward<R: Real>(
    x: &[R],
    w: &[R],
    out: &mut [R],
    spec: &Conv2dSpec,
    in_size: (usize, usize),
    out_size: (usize, usize),
) {
    let (it, if_) = in_size;
    let (ot, of) = out_size;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let (kt, kf) = spec.kernel;
    for to in 0..ot {
        for fo in 0..of {
            let orow = &mut out[(to * of + fo) * co..(to * of + fo + 1) * co];
            for kti in 0..kt {
                let Some(ti) = in_coord(to, kti, spec.stride.0, spec.dilation.0, spec.padding.0)
                else {
                    continue;
                };
                if ti >= it {
                    continue;
                }
                for kfi in 0..kf {
                    let Some(fi) =
                        in_coord(fo, kfi, spec.stride.1, spec.dilation.1, spec.padding.1)
                    else {
                        continue;
                    };
                    if fi >= if_ {
                        continue;
                    }
                    let xrow = &x[(ti * if_ + fi) * ci..(ti * if_ + fi + 1) * ci];
                    for (c, o) in orow.iter_mut().enumerate() {
                        let wrow = &w[((c * kt + kti) * kf + kfi) * ci
                            ..((c * kt + kti) * kf + kfi + 1) * ci];
                        let mut acc = R::zero();
                        for (&xx, &ww) in xrow.iter().zip(wrow) {
                            acc += xx * ww;
                        }
                        *o += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_input<R: Real>(
    grad_out: &[R],
    w: &[R],
    grad_in: &mut [R],
    spec: &Conv2dSpec,
    in_size: (usize, usize),
    out_size: (usize, usize),
) {
    let (it, if_) = in_size;
    let (ot, of) = out_size;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let (kt, kf) = spec.kernel;
    for to in 0..ot {
        for fo in 0..of {
            let grow = &grad_out[(to * of + fo) * co..(to * of + fo + 1) * co];
            for kti in 0..kt {
                let Some(ti) = in_coord(to, kti, spec.stride.0, spec.dilation.0, spec.padding.0)
                else {
                    continue;
                };
                if ti >= it {
                    continue;
                }
                for kfi in 0..kf {
                    let Some(fi) =
                        in_coord(fo, kfi, spec.stride.1, spec.dilation.1, spec.padding.1)
                    else {
                        continue;
                    };
                    if fi >= if_ {
                        continue;
                    }
                    let drow =
                        &mut grad_in[(ti * if_ + fi) * ci..(ti * if_ + fi + 1) * ci];
                    for (c, &gg) in grow.iter().enumerate() {
                        if gg == R::zero() {
                            continue;
                        }
                        let wrow = &w[((c * kt + kti) * kf + kfi) * ci
                            ..((c * kt + kti) * kf + kfi + 1) * ci];
                        for (d, &ww) in drow.iter_mut().zip(wrow) {
                            *d += gg * ww;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv2d_backward_weight<R: Real>(
    grad_out: &[R],
    x: &[R],
    grad_w: &mut [R],
    spec: &Conv2dSpec,
    in_size: (usize, usize),
    out_size: (usize, usize),
) {
    let (it, if_) = in_size;
    let (ot, of) = out_size;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let (kt, kf) = spec.kernel;
    for to in 0..ot {
        for fo in 0..of {
            let grow = &grad_out[(to * of + fo) * co..(to * of + fo + 1) * co];
            for kti in 0..kt {
                let Some(ti) = in_coord(to, kti, spec.stride.0, spec.dilation.0, spec.padding.0)
                else {
                    continue;
                };
                if ti >= it {
                    continue;
                }
                for kfi in 0..kf {
                    let Some(fi) =
                        in_coord(fo, kfi, spec.stride.1, spec.dilation.1, spec.padding.1)
                    else {
                        continue;
                    };
                    if fi >= if_ {
                        continue;
                    }
                    let xrow = &x[(ti * if_ + fi) * ci..(ti * if_ + fi + 1) * ci];
                    for (c, &gg) in grow.iter().enumerate() {
                        if gg == R::zero() {
                            continue;
                        }
                        let wrow = &mut grad_w[((c * kt + kti) * kf + kfi) * ci
                            ..((c * kt + kti) * kf + kfi + 1) * ci];
                        for (d, &xx) in wrow.iter_mut().zip(xrow) {
                            *d += gg * xx;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_t2d_forward<R: Real>(
    x: &[R],
    w: &[R],
    out: &mut [R],
    spec: &ConvT2dSpec,
    in_size: (usize, usize),
    out_size: (usize, usize),
) {
    let (it, if_) = in_size;
    let (ot, of) = out_size;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let (kt, kf) = spec.kernel;
    for ti in 0..it {
        for fi in 0..if_ {
            let xrow = &x[(ti * if_ + fi) * ci..(ti * if_ + fi + 1) * ci];
            for kti in 0..kt {
                let Some(to) = in_coord(ti, kti, spec.stride.0, spec.dilation.0, spec.padding.0)
                else {
                    continue;
                };
                if to >= ot {
                    continue;
                }
                for kfi in 0..kf {
                    let Some(fo) =
                        in_coord(fi, kfi, spec.stride.1, spec.dilation.1, spec.padding.1)
                    else {
                        continue;
                    };
                    if fo >= of {
                        continue;
                    }
                    let orow = &mut out[(to * of + fo) * co..(to * of + fo + 1) * co];
                    for (c, o) in orow.iter_mut().enumerate() {
                        let wrow = &w[((c * kt + kti) * kf + kfi) * ci
                            ..((c * kt + kti) * kf + kfi + 1) * ci];
                        let mut acc = R::zero();
                        for (&xx, &ww) in xrow.iter().zip(wrow) {
                            acc += xx * ww;
                        }
                        *o += acc;
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_t2d_backward_input<R: Real>(
    grad_out: &[R],
    w: &[R],
    grad_in: &mut [R],
    spec: &ConvT2dSpec,
    in_size: (usize, usize),
    out_size: (usize, usize),
) {
    let (it, if_) = in_size;
    let (ot, of) = out_size;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let (kt, kf) = spec.kernel;
    for ti in 0..it {
        for fi in 0..if_ {
            let drow = &mut grad_in[(ti * if_ + fi) * ci..(ti * if_ + fi + 1) * ci];
            for kti in 0..kt {
                let Some(to) = in_coord(ti, kti, spec.stride.0, spec.dilation.0, spec.padding.0)
                else {
                    continue;
                };
                if to >= ot {
                    continue;
                }
                for kfi in 0..kf {
                    let Some(fo) =
                        in_coord(fi, kfi, spec.stride.1, spec.dilation.1, spec.padding.1)
                    else {
                        continue;
                    };
                    if fo >= of {
                        continue;
                    }
                    let grow = &grad_out[(to * of + fo) * co..(to * of + fo + 1) * co];
                    for (c, &gg) in grow.iter().enumerate() {
                        if gg == R::zero() {
                            continue;
                        }
                        let wrow = &w[((c * kt + kti) * kf + kfi) * ci
                            ..((c * kt + kti) * kf + kfi + 1) * ci];
                        for (d, &ww) in drow.iter_mut().zip(wrow) {
                            *d += gg * ww;
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn conv_t2d_backward_weight<R: Real>(
    grad_out: &[R],
    x: &[R],
    grad_w: &mut [R],
    spec: &ConvT2dSpec,
    in_size: (usize, usize),
    out_size: (usize, usize),
) {
    let (it, if_) = in_size;
    let (ot, of) = out_size;
    let ci = spec.in_channels;
    let co = spec.out_channels;
    let (kt, kf) = spec.kernel;
    for ti in 0..it {
        for fi in 0..if_ {
            let xrow = &x[(ti * if_ + fi) * ci..(ti * if_ + fi + 1) * ci];
            for kti in 0..kt {
                let Some(to) = in_coord(ti, kti, spec.stride.0, spec.dilation.0, spec.padding.0)
                else {
                    continue;
                };
                if to >= ot {
                    continue;
                }
                for kfi in 0..kf {
                    let Some(fo) =
                        in_coord(fi, kfi, spec.stride.1, spec.dilation.1, spec.padding.1)
                    else {
                        continue;
                    };
                    if fo >= of {
                        continue;
                    }
                    let grow = &grad_out[(to * of + fo) * co..(to * of + fo + 1) * co];
                    for (c, &gg) in grow.iter().enumerate() {
                        if gg == R::zero() {
                            continue;
                        }
                        let wrow = &mut grad_w[((c * kt + kti) * kf + kfi) * ci
                            ..((c * kt + kti) * kf + kfi + 1) * ci];
                        for (d, &xx) in wrow.iter_mut().zip(xrow) {
                            *d += gg * xx;
                        }
                    }
                }
            }
        }
    }
}
