//! Cross-correlation kernels on single 2-D planes.
//!
//! Three primitives cover both convolution directions:
//! `correlate` (forward conv, backward-data of transposed conv),
//! `scatter` (backward-data of conv, forward transposed conv) and
//! `weight_grad` (weight gradient of either).

use super::{Float, Result, TensorError};

/// Per-side zero padding of the two spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Padding2d {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Padding2d {
    pub fn symmetric(ph: usize, pw: usize) -> Self {
        Self {
            top: ph,
            bottom: ph,
            left: pw,
            right: pw,
        }
    }

    /// Padding that keeps extents unchanged at stride 1. Even kernels put the
    /// extra sample on the trailing side.
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            top: (kh - 1) / 2,
            bottom: kh - 1 - (kh - 1) / 2,
            left: (kw - 1) / 2,
            right: kw - 1 - (kw - 1) / 2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Conv2dSpec {
    pub stride: (usize, usize),
    pub padding: Padding2d,
    pub groups: usize,
}

impl Default for Conv2dSpec {
    fn default() -> Self {
        Self {
            stride: (1, 1),
            padding: Padding2d::default(),
            groups: 1,
        }
    }
}

impl Conv2dSpec {
    pub fn same(kh: usize, kw: usize) -> Self {
        Self {
            padding: Padding2d::same(kh, kw),
            ..Self::default()
        }
    }

    pub fn with_groups(mut self, groups: usize) -> Self {
        self.groups = groups;
        self
    }

    pub fn with_stride(mut self, sh: usize, sw: usize) -> Self {
        self.stride = (sh, sw);
        self
    }

    pub fn with_padding(mut self, padding: Padding2d) -> Self {
        self.padding = padding;
        self
    }

    /// Output extents of a forward convolution.
    pub fn conv_out(&self, h: usize, w: usize, kh: usize, kw: usize) -> Result<(usize, usize)> {
        let (sh, sw) = self.stride;
        if sh == 0 || sw == 0 || self.groups == 0 {
            return Err(TensorError::Parameter("stride and groups must be >= 1".into()));
        }
        let ph = h + self.padding.top + self.padding.bottom;
        let pw = w + self.padding.left + self.padding.right;
        if ph < kh || pw < kw {
            return Err(TensorError::Shape(format!(
                "padded input {ph}x{pw} smaller than kernel {kh}x{kw}"
            )));
        }
        Ok(((ph - kh) / sh + 1, (pw - kw) / sw + 1))
    }

    /// Output extents of a transposed convolution.
    pub fn conv_transpose_out(
        &self,
        h: usize,
        w: usize,
        kh: usize,
        kw: usize,
    ) -> Result<(usize, usize)> {
        let (sh, sw) = self.stride;
        if sh == 0 || sw == 0 || self.groups == 0 {
            return Err(TensorError::Parameter("stride and groups must be >= 1".into()));
        }
        let full_h = (h - 1) * sh + kh;
        let full_w = (w - 1) * sw + kw;
        let cut_h = self.padding.top + self.padding.bottom;
        let cut_w = self.padding.left + self.padding.right;
        if full_h <= cut_h || full_w <= cut_w {
            return Err(TensorError::Shape(format!(
                "transposed output {full_h}x{full_w} vanishes under padding"
            )));
        }
        Ok((full_h - cut_h, full_w - cut_w))
    }
}

/// Geometry linking an "input" plane to an "output" plane of a forward
/// cross-correlation: `out[oy, ox] += k[ky, kx] * in[oy*sh + ky - pt, ox*sw + kx - pl]`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct PlaneGeom {
    pub hi: usize,
    pub wi: usize,
    pub ho: usize,
    pub wo: usize,
    pub kh: usize,
    pub kw: usize,
    pub sh: usize,
    pub sw: usize,
    pub pt: usize,
    pub pl: usize,
}

impl PlaneGeom {
    /// Range of output indices whose tap `k` lands inside `[0, n_in)`.
    #[inline]
    fn valid(k: usize, pad: usize, stride: usize, n_in: usize, n_out: usize) -> (usize, usize) {
        // in = o*stride + k - pad must satisfy 0 <= in < n_in
        let lo = if pad > k {
            (pad - k).div_ceil(stride)
        } else {
            0
        };
        let hi = if n_in + pad > k {
            ((n_in - 1 + pad - k) / stride + 1).min(n_out)
        } else {
            0
        };
        (lo, hi.max(lo))
    }

    #[inline]
    fn rows(&self, ky: usize) -> (usize, usize) {
        Self::valid(ky, self.pt, self.sh, self.hi, self.ho)
    }

    #[inline]
    fn cols(&self, kx: usize) -> (usize, usize) {
        Self::valid(kx, self.pl, self.sw, self.wi, self.wo)
    }
}

/// `acc += w * x` over equal-length slices.
#[inline]
fn axpy<T: Float>(acc: &mut [T], w: T, x: &[T]) {
    for (a, &v) in acc.iter_mut().zip(x) {
        *a += w * v;
    }
}

/// Dot product with eight independent lanes; the summation order is fixed.
#[inline]
pub(crate) fn dot<T: Float>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut lanes = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for j in 0..8 {
            lanes[j] += x[j] * y[j];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((lanes[0] + lanes[4]) + (lanes[1] + lanes[5]))
        + ((lanes[2] + lanes[6]) + (lanes[3] + lanes[7]))
        + tail
}

/// `out[o] += k * in[...]` (forward cross-correlation).
pub(crate) fn correlate<T: Float>(inp: &[T], out: &mut [T], kernel: &[T], g: &PlaneGeom) {
    for ky in 0..g.kh {
        let (oy0, oy1) = g.rows(ky);
        for kx in 0..g.kw {
            let w = kernel[ky * g.kw + kx];
            if w == T::zero() {
                continue;
            }
            let (ox0, ox1) = g.cols(kx);
            if ox0 >= ox1 {
                continue;
            }
            for oy in oy0..oy1 {
                let iy = oy * g.sh + ky - g.pt;
                let in_row = &inp[iy * g.wi..(iy + 1) * g.wi];
                let out_row = &mut out[oy * g.wo + ox0..oy * g.wo + ox1];
                let ix0 = ox0 * g.sw + kx - g.pl;
                if g.sw == 1 {
                    axpy(out_row, w, &in_row[ix0..ix0 + (ox1 - ox0)]);
                } else {
                    for (j, o) in out_row.iter_mut().enumerate() {
                        *o += w * in_row[ix0 + j * g.sw];
                    }
                }
            }
        }
    }
}

/// `in[...] += k * out[o]` (adjoint of [`correlate`] with respect to its input).
pub(crate) fn scatter<T: Float>(out: &[T], inp: &mut [T], kernel: &[T], g: &PlaneGeom) {
    for ky in 0..g.kh {
        let (oy0, oy1) = g.rows(ky);
        for kx in 0..g.kw {
            let w = kernel[ky * g.kw + kx];
            if w == T::zero() {
                continue;
            }
            let (ox0, ox1) = g.cols(kx);
            if ox0 >= ox1 {
                continue;
            }
            for oy in oy0..oy1 {
                let iy = oy * g.sh + ky - g.pt;
                let out_row = &out[oy * g.wo + ox0..oy * g.wo + ox1];
                let ix0 = ox0 * g.sw + kx - g.pl;
                let in_row = &mut inp[iy * g.wi..(iy + 1) * g.wi];
                if g.sw == 1 {
                    axpy(&mut in_row[ix0..ix0 + (ox1 - ox0)], w, out_row);
                } else {
                    for (j, &o) in out_row.iter().enumerate() {
                        in_row[ix0 + j * g.sw] += w * o;
                    }
                }
            }
        }
    }
}

/// `dk[ky, kx] += Σ out[o] * in[...]` (adjoint of [`correlate`] with respect to its kernel).
pub(crate) fn weight_grad<T: Float>(out: &[T], inp: &[T], dk: &mut [T], g: &PlaneGeom) {
    for ky in 0..g.kh {
        let (oy0, oy1) = g.rows(ky);
        for kx in 0..g.kw {
            let (ox0, ox1) = g.cols(kx);
            if ox0 >= ox1 {
                continue;
            }
            let mut acc = T::zero();
            for oy in oy0..oy1 {
                let iy = oy * g.sh + ky - g.pt;
                let out_row = &out[oy * g.wo + ox0..oy * g.wo + ox1];
                let ix0 = ox0 * g.sw + kx - g.pl;
                let in_row = &inp[iy * g.wi..(iy + 1) * g.wi];
                if g.sw == 1 {
                    acc += dot(out_row, &in_row[ix0..ix0 + (ox1 - ox0)]);
                } else {
                    for (j, &o) in out_row.iter().enumerate() {
                        acc += o * in_row[ix0 + j * g.sw];
                    }
                }
            }
            dk[ky * g.kw + kx] += acc;
        }
    }
}
