//! Slice-level convolution and matrix kernels.
//!
//! Every convolution is expressed through one correlation geometry between a
//! "wide" side (conv input, deconv output) and a "narrow" side (conv output,
//! deconv input). Forward conv, its input gradient, and its kernel gradient are
//! the three contractions over that geometry; the transposed convolution reuses
//! them with the roles swapped, so the two operators are exact adjoints.

use crate::scalar::{gemm, Scalar};

/// Geometry of a strided, zero-padded correlation over up to three spatial axes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CorrGeom {
    pub wide_channels: usize,
    pub narrow_channels: usize,
    pub wide: [usize; 3],
    pub narrow: [usize; 3],
    pub kernel: [usize; 3],
    pub pad: [usize; 3],
    pub stride: usize,
}

impl CorrGeom {
    pub fn wide_len(&self) -> usize {
        self.wide_channels * self.wide.iter().product::<usize>()
    }

    pub fn narrow_len(&self) -> usize {
        self.narrow_channels * self.narrow.iter().product::<usize>()
    }

    pub fn kernel_len(&self) -> usize {
        self.narrow_channels * self.wide_channels * self.kernel.iter().product::<usize>()
    }

    /// Output extent of a correlation along one axis.
    pub fn narrow_extent(wide: usize, kernel: usize, pad: usize, stride: usize) -> Option<usize> {
        let padded = wide + 2 * pad;
        if padded < kernel || stride == 0 {
            return None;
        }
        Some((padded - kernel) / stride + 1)
    }

    /// Range of narrow indices `o` whose tap `k` lands inside the wide axis.
    #[inline]
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let s = self.stride;
        let p = self.pad[axis];
        let lo = if p > k { (p - k).div_ceil(s) } else { 0 };
        let wide = self.wide[axis];
        // o * s + k - p <= wide - 1
        let hi = if wide + p < k + 1 {
            0
        } else {
            ((wide - 1 + p - k) / s + 1).min(self.narrow[axis])
        };
        (lo, hi.max(lo))
    }
}

/// Visits every (tap row, narrow row) pair of the correlation.
///
/// The callback receives the im2col row `r = cw·|k| + tap`, the offset of the
/// first valid element inside the narrow plane, the absolute wide offset of the
/// matching element, and the number of valid elements along the fastest axis.
#[inline]
fn for_each_tap_row(g: &CorrGeom, mut f: impl FnMut(usize, usize, usize, usize)) {
    let [_, nh, nw] = g.narrow;
    let [wd, wh, ww] = g.wide;
    let [kd, kh, kw] = g.kernel;
    let s = g.stride;
    let wide_plane = wd * wh * ww;
    for cw in 0..g.wide_channels {
        for kz in 0..kd {
            let (z_lo, z_hi) = g.valid_range(0, kz);
            for ky in 0..kh {
                let (y_lo, y_hi) = g.valid_range(1, ky);
                for kx in 0..kw {
                    let (x_lo, x_hi) = g.valid_range(2, kx);
                    if x_lo >= x_hi {
                        continue;
                    }
                    let r = ((cw * kd + kz) * kh + ky) * kw + kx;
                    let count = x_hi - x_lo;
                    let ix0 = x_lo * s + kx - g.pad[2];
                    for oz in z_lo..z_hi {
                        let iz = oz * s + kz - g.pad[0];
                        for oy in y_lo..y_hi {
                            let iy = oy * s + ky - g.pad[1];
                            let n_off = (oz * nh + oy) * nw + x_lo;
                            let w_off = cw * wide_plane + (iz * wh + iy) * ww + ix0;
                            f(r, n_off, w_off, count);
                        }
                    }
                }
            }
        }
    }
}

fn plane(g: &CorrGeom) -> usize {
    g.narrow.iter().product()
}

fn taps(g: &CorrGeom) -> usize {
    g.wide_channels * g.kernel.iter().product::<usize>()
}

/// Column matrix `[wide_c·|k|, narrow plane]` of the wide tensor; padding reads as zero.
fn im2col<T: Scalar>(g: &CorrGeom, wide: &[T]) -> Vec<T> {
    let p = plane(g);
    let s = g.stride;
    let mut cols = vec![T::zero(); taps(g) * p];
    for_each_tap_row(g, |r, n_off, w_off, count| {
        let dst = &mut cols[r * p + n_off..r * p + n_off + count];
        if s == 1 {
            dst.copy_from_slice(&wide[w_off..w_off + count]);
        } else {
            for (d, &x) in dst.iter_mut().zip(wide[w_off..].iter().step_by(s)) {
                *d = x;
            }
        }
    });
    cols
}

/// Scatter-adds a column matrix back onto the wide tensor; adjoint of [`im2col`].
fn col2im<T: Scalar>(g: &CorrGeom, cols: &[T], wide: &mut [T]) {
    let p = plane(g);
    let s = g.stride;
    for_each_tap_row(g, |r, n_off, w_off, count| {
        let src = &cols[r * p + n_off..r * p + n_off + count];
        if s == 1 {
            for (o, &x) in wide[w_off..w_off + count].iter_mut().zip(src) {
                *o += x;
            }
        } else {
            for (o, &x) in wide[w_off..].iter_mut().step_by(s).zip(src) {
                *o += x;
            }
        }
    });
}

/// `narrow += correlate(wide, kernel)`; kernel layout `[narrow_c, wide_c, kd, kh, kw]`.
pub fn corr_forward<T: Scalar>(g: &CorrGeom, wide: &[T], kernel: &[T], narrow: &mut [T]) {
    debug_assert_eq!(wide.len(), g.wide_len());
    debug_assert_eq!(narrow.len(), g.narrow_len());
    debug_assert_eq!(kernel.len(), g.kernel_len());
    let (p, r) = (plane(g), taps(g));
    let cols = im2col(g, wide);
    gemm(g.narrow_channels, r, p, kernel, [r, 1], &cols, [p, 1], narrow, [p, 1]);
}

/// `wide += correlateᵀ(narrow, kernel)`: the adjoint of [`corr_forward`].
pub fn corr_adjoint<T: Scalar>(g: &CorrGeom, narrow: &[T], kernel: &[T], wide: &mut [T]) {
    debug_assert_eq!(wide.len(), g.wide_len());
    debug_assert_eq!(narrow.len(), g.narrow_len());
    let (p, r) = (plane(g), taps(g));
    let mut cols = vec![T::zero(); r * p];
    gemm(
        r,
        g.narrow_channels,
        p,
        kernel,
        [1, r],
        narrow,
        [p, 1],
        &mut cols,
        [p, 1],
    );
    col2im(g, &cols, wide);
}

/// `kernel_grad[k] += Σ narrow[o] · wide[o·s + k − p]`.
pub fn corr_kernel_grad<T: Scalar>(g: &CorrGeom, wide: &[T], narrow: &[T], kernel_grad: &mut [T]) {
    debug_assert_eq!(kernel_grad.len(), g.kernel_len());
    let (p, r) = (plane(g), taps(g));
    let cols = im2col(g, wide);
    gemm(
        g.narrow_channels,
        p,
        r,
        narrow,
        [p, 1],
        &cols,
        [1, p],
        kernel_grad,
        [r, 1],
    );
}

/// Dot product with eight independent accumulators.
pub fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = [T::zero(); 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ra, rb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for i in 0..8 {
            acc[i] += x[i] * y[i];
        }
    }
    let mut tail = T::zero();
    for (&x, &y) in ra.iter().zip(rb) {
        tail += x * y;
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// `y += a · x`.
#[inline]
pub fn axpy<T: Scalar>(a: T, x: &[T], y: &mut [T]) {
    for (o, &v) in y.iter_mut().zip(x) {
        *o += a * v;
    }
}

/// `out[o] += Σ_i w[o, i] · x[i]` with `w` row-major `[rows, x.len()]`.
pub fn matvec<T: Scalar>(w: &[T], x: &[T], out: &mut [T]) {
    let cols = x.len();
    for (o, row) in out.iter_mut().zip(w.chunks_exact(cols)) {
        *o += dot(row, x);
    }
}

/// `out[i] += Σ_o w[o, i] · y[o]`.
pub fn matvec_transposed<T: Scalar>(w: &[T], y: &[T], out: &mut [T]) {
    let cols = out.len();
    for (&yo, row) in y.iter().zip(w.chunks_exact(cols)) {
        if yo != T::zero() {
            axpy(yo, row, out);
        }
    }
}

/// `w_grad[o, i] += y[o] · x[i]`.
pub fn outer_accumulate<T: Scalar>(y: &[T], x: &[T], w_grad: &mut [T]) {
    let cols = x.len();
    for (&yo, row) in y.iter().zip(w_grad.chunks_exact_mut(cols)) {
        if yo != T::zero() {
            axpy(yo, x, row);
        }
    }
}
