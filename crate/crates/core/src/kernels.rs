//! Slice-level compute kernels shared by forward and backward passes.

use crate::real::Real;

/// Output columns kept in registers by the matmul kernels.
const TILE: usize = 16;

/// `out[p×r] += a[p×q] · b[q×r]`
pub(crate) fn matmul_acc<T: Real>(a: &[T], b: &[T], out: &mut [T], p: usize, q: usize, r: usize) {
    let full = r / TILE * TILE;
    for i in 0..p {
        let a_row = &a[i * q..(i + 1) * q];
        let out_row = &mut out[i * r..(i + 1) * r];
        for j in (0..full).step_by(TILE) {
            let mut acc = [T::ZERO; TILE];
            acc.copy_from_slice(&out_row[j..j + TILE]);
            for (k, &aik) in a_row.iter().enumerate() {
                let seg = &b[k * r + j..k * r + j + TILE];
                for l in 0..TILE {
                    acc[l] += aik * seg[l];
                }
            }
            out_row[j..j + TILE].copy_from_slice(&acc);
        }
        if full < r {
            for (k, &aik) in a_row.iter().enumerate() {
                axpy(aik, &b[k * r + full..(k + 1) * r], &mut out_row[full..]);
            }
        }
    }
}

/// `out[p×q] += g[p×r] · b[q×r]ᵀ`
pub(crate) fn matmul_acc_bt<T: Real>(g: &[T], b: &[T], out: &mut [T], p: usize, q: usize, r: usize) {
    if q >= TILE {
        // Wide outputs: transpose once and reuse the tiled kernel.
        let mut bt = alloc::vec![T::ZERO; q * r];
        for k in 0..q {
            for (j, &v) in b[k * r..(k + 1) * r].iter().enumerate() {
                bt[j * q + k] = v;
            }
        }
        matmul_acc(g, &bt, out, p, r, q);
        return;
    }
    for i in 0..p {
        let g_row = &g[i * r..(i + 1) * r];
        for k in 0..q {
            out[i * q + k] += dot(g_row, &b[k * r..(k + 1) * r]);
        }
    }
}

/// `out[q×r] += a[p×q]ᵀ · g[p×r]`
pub(crate) fn matmul_acc_at<T: Real>(a: &[T], g: &[T], out: &mut [T], p: usize, q: usize, r: usize) {
    let full = r / TILE * TILE;
    for k in 0..q {
        let out_row = &mut out[k * r..(k + 1) * r];
        for j in (0..full).step_by(TILE) {
            let mut acc = [T::ZERO; TILE];
            acc.copy_from_slice(&out_row[j..j + TILE]);
            for i in 0..p {
                let aik = a[i * q + k];
                let seg = &g[i * r + j..i * r + j + TILE];
                for l in 0..TILE {
                    acc[l] += aik * seg[l];
                }
            }
            out_row[j..j + TILE].copy_from_slice(&acc);
        }
        if full < r {
            for i in 0..p {
                axpy(a[i * q + k], &g[i * r + full..(i + 1) * r], &mut out_row[full..]);
            }
        }
    }
}

#[inline]
pub(crate) fn axpy<T: Real>(alpha: T, x: &[T], y: &mut [T]) {
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += alpha * xi;
    }
}

#[inline]
pub(crate) fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    let n = a.len().min(b.len());
    let (a, b) = (&a[..n], &b[..n]);
    let mut acc = [T::ZERO; 8];
    let ca = a.chunks_exact(8);
    let cb = b.chunks_exact(8);
    let (ta, tb) = (ca.remainder(), cb.remainder());
    for (x, y) in ca.zip(cb) {
        for l in 0..8 {
            acc[l] += x[l] * y[l];
        }
    }
    let mut tail = T::ZERO;
    for (&x, &y) in ta.iter().zip(tb) {
        tail += x * y;
    }
    ((acc[0] + acc[4]) + (acc[1] + acc[5])) + ((acc[2] + acc[6]) + (acc[3] + acc[7])) + tail
}

pub(crate) fn add_into<T: Real>(dst: &mut [T], src: &[T]) {
    for (d, &s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}

/// Geometry of one 2-D convolution.
#[derive(Debug, Clone, Copy)]
pub(crate) struct ConvGeom {
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub padding: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn col_rows(&self) -> usize {
        self.cin * self.kh * self.kw
    }

    pub fn col_cols(&self) -> usize {
        self.ho * self.wo
    }
}

/// Unfolds one `[cin, h, w]` image into `[cin·kh·kw, ho·wo]` columns.
pub(crate) fn im2col<T: Real>(input: &[T], g: &ConvGeom, col: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.cin {
        let plane = &input[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut col[row * cols..(row + 1) * cols];
                let (lo, hi) = valid_range(kx, g.padding, g.stride, g.w, g.wo);
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    let dst_row = &mut dst[oy * g.wo..(oy + 1) * g.wo];
                    if iy < 0 || iy >= g.h as isize || lo >= hi {
                        dst_row.fill(T::ZERO);
                        continue;
                    }
                    let src = &plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    dst_row[..lo].fill(T::ZERO);
                    dst_row[hi..].fill(T::ZERO);
                    let first = lo * g.stride + kx - g.padding;
                    if g.stride == 1 {
                        dst_row[lo..hi].copy_from_slice(&src[first..first + (hi - lo)]);
                    } else {
                        for (d, &v) in dst_row[lo..hi].iter_mut().zip(src[first..].iter().step_by(g.stride)) {
                            *d = v;
                        }
                    }
                }
            }
        }
    }
}

/// Output columns `lo..hi` whose input column `ox·stride + kx − padding` lies in `0..w`.
fn valid_range(kx: usize, padding: usize, stride: usize, w: usize, wo: usize) -> (usize, usize) {
    let lo = if kx >= padding { 0 } else { (padding - kx).div_ceil(stride) };
    // Largest ox with ox·stride + kx < w + padding.
    let hi = if w + padding > kx { (w + padding - kx - 1) / stride + 1 } else { 0 };
    (lo.min(wo), hi.min(wo).max(lo.min(wo)))
}

/// Scatters column gradients back onto a `[cin, h, w]` image gradient.
pub(crate) fn col2im_acc<T: Real>(col: &[T], g: &ConvGeom, out: &mut [T]) {
    let cols = g.col_cols();
    for c in 0..g.cin {
        let plane = &mut out[c * g.h * g.w..(c + 1) * g.h * g.w];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &col[row * cols..(row + 1) * cols];
                for oy in 0..g.ho {
                    let iy = (oy * g.stride + ky) as isize - g.padding as isize;
                    if iy < 0 || iy >= g.h as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.w..(iy as usize + 1) * g.w];
                    for ox in 0..g.wo {
                        let ix = (ox * g.stride + kx) as isize - g.padding as isize;
                        if ix >= 0 && ix < g.w as isize {
                            dst[ix as usize] += src[oy * g.wo + ox];
                        }
                    }
                }
            }
        }
    }
}

/// Half-open input window covered by output cell `i` of an adaptive pool.
#[inline]
pub(crate) fn pool_window(i: usize, input: usize, output: usize) -> (usize, usize) {
    let start = (i * input) / output;
    let end = ((i + 1) * input).div_ceil(output);
    (start, end)
}

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
const GELU_A: f64 = 0.044_715;

#[inline]
pub(crate) fn gelu<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    half * x * (T::ONE + t)
}

#[inline]
pub(crate) fn gelu_grad<T: Real>(x: T) -> T {
    let c = T::from_f64(GELU_C);
    let a = T::from_f64(GELU_A);
    let half = T::from_f64(0.5);
    let t = (c * (x + a * x * x * x)).tanh();
    let du = c * (T::ONE + T::from_f64(3.0) * a * x * x);
    half * (T::ONE + t) + half * x * (T::ONE - t * t) * du
}
