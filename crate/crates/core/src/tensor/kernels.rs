//! Loop kernels behind the graph ops. All accumulate into their output.

use super::Scalar;

/// `c[m,n] += a[m,k] * b[k,n]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let crow = &mut c[i * n..(i + 1) * n];
        let arow = &a[i * k..(i + 1) * k];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[k,m]^T * b[k,n]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for p in 0..k {
        let brow = &b[p * n..(p + 1) * n];
        for i in 0..m {
            let av = a[p * m + i];
            let crow = &mut c[i * n..(i + 1) * n];
            for (cv, &bv) in crow.iter_mut().zip(brow) {
                *cv += av * bv;
            }
        }
    }
}

/// `c[m,n] += a[m,k] * b[n,k]^T`
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], c: &mut [T], m: usize, k: usize, n: usize) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        for j in 0..n {
            c[i * n + j] += dot(arow, &b[j * k..(j + 1) * k]);
        }
    }
}

/// Eight-lane dot product; fixed summation order.
pub(crate) fn dot<T: Scalar>(a: &[T], b: &[T]) -> T {
    let mut acc = [T::zero(); 8];
    let chunks = a.len() / 8;
    for c in 0..chunks {
        let (xa, xb) = (&a[c * 8..c * 8 + 8], &b[c * 8..c * 8 + 8]);
        for l in 0..8 {
            acc[l] += xa[l] * xb[l];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..a.len() {
        tail += a[i] * b[i];
    }
    ((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7])) + tail
}

/// Geometry of a strided patch extraction: an image of `channels x h x w`
/// visited by a `gh x gw` grid of `k x k` windows with the given stride and
/// zero padding. Window `(gy, gx)`, tap `(ky, kx)` reads image pixel
/// `(gy * stride + ky - pad, gx * stride + kx - pad)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) struct PatchGeom {
    pub channels: usize,
    pub h: usize,
    pub w: usize,
    pub gh: usize,
    pub gw: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
}

impl PatchGeom {
    pub fn rows(&self) -> usize {
        self.channels * self.k * self.k
    }

    pub fn cols(&self) -> usize {
        self.gh * self.gw
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.h * self.w
    }

    /// For tap offset `kk` and grid index `g`, the image index or `None`
    /// when the tap falls in the padding.
    #[inline]
    fn source(&self, g: usize, kk: usize, stride: usize, pad: usize, n: usize) -> Option<usize> {
        (g * stride + kk).checked_sub(pad).filter(|&v| v < n)
    }

    /// Patch matrix `[channels * k * k, gh * gw]` from `img`.
    pub fn im2col<T: Scalar>(&self, img: &[T], cols: &mut [T]) {
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let out = &mut cols[row * n..(row + 1) * n];
                    for gy in 0..self.gh {
                        let dst = &mut out[gy * self.gw..(gy + 1) * self.gw];
                        match self.source(gy, ky, self.stride, self.pad, self.h) {
                            None => dst.iter_mut().for_each(|v| *v = T::zero()),
                            Some(iy) => {
                                let src = &plane[iy * self.w..(iy + 1) * self.w];
                                for (gx, d) in dst.iter_mut().enumerate() {
                                    *d = match self.source(gx, kx, self.stride, self.pad, self.w) {
                                        Some(ix) => src[ix],
                                        None => T::zero(),
                                    };
                                }
                            }
                        }
                    }
                }
            }
        }
    }

    /// Adjoint of [`im2col`](Self::im2col): scatter-adds patches into `img`.
    pub fn col2im<T: Scalar>(&self, cols: &[T], img: &mut [T]) {
        let n = self.cols();
        for c in 0..self.channels {
            let plane = &mut img[c * self.h * self.w..(c + 1) * self.h * self.w];
            for ky in 0..self.k {
                for kx in 0..self.k {
                    let row = (c * self.k + ky) * self.k + kx;
                    let src = &cols[row * n..(row + 1) * n];
                    for gy in 0..self.gh {
                        let Some(iy) = self.source(gy, ky, self.stride, self.pad, self.h) else {
                            continue;
                        };
                        let dst = &mut plane[iy * self.w..(iy + 1) * self.w];
                        for gx in 0..self.gw {
                            if let Some(ix) = self.source(gx, kx, self.stride, self.pad, self.w) {
                                dst[ix] += src[gy * self.gw + gx];
                            }
                        }
                    }
                }
            }
        }
    }
}
