//! Convolution kernels: batched im2col + GEMM, and the non-overlapping
//! transposed convolution used for canvas upsampling.

use crate::scalar::{gemm, MatLayout};
use crate::Scalar;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct ConvGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub k: usize,
    pub stride: usize,
    pub pad: usize,
    pub ho: usize,
    pub wo: usize,
}

impl ConvGeom {
    pub fn new(n: usize, c: usize, h: usize, w: usize, o: usize, k: usize, stride: usize, pad: usize) -> Option<Self> {
        if stride == 0 || k == 0 || h + 2 * pad < k || w + 2 * pad < k {
            return None;
        }
        let ho = (h + 2 * pad - k) / stride + 1;
        let wo = (w + 2 * pad - k) / stride + 1;
        Some(ConvGeom { n, c, h, w, o, k, stride, pad, ho, wo })
    }

    fn patch(&self) -> usize {
        self.c * self.k * self.k
    }

    fn columns(&self) -> usize {
        self.n * self.ho * self.wo
    }

    fn is_pointwise(&self) -> bool {
        self.k == 1 && self.stride == 1 && self.pad == 0
    }
}

/// Output columns `lo..hi` whose input column `ox·stride + kj − pad` lies
/// inside the image.
fn valid_columns(g: &ConvGeom, kj: usize) -> (usize, usize) {
    let lo = g.pad.saturating_sub(kj).div_ceil(g.stride).min(g.wo);
    let hi = if g.w + g.pad <= kj { 0 } else { (g.w + g.pad - kj - 1) / g.stride + 1 };
    (lo, hi.clamp(lo, g.wo))
}

/// Unfolds `x` (NCHW) into a `[C·k·k, N·Ho·Wo]` matrix.
fn im2col<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    let p = g.ho * g.wo;
    let np = g.n * p;
    let mut cols = vec![T::zero(); g.patch() * np];
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let dst_row = &mut cols[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let src = &x[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let src_row = &src[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let dst = &mut dst_row[ni * p + oy * g.wo..ni * p + (oy + 1) * g.wo];
                        let (lo, hi) = valid_columns(g, kj);
                        if g.stride == 1 {
                            let start = lo + kj - g.pad;
                            dst[lo..hi].copy_from_slice(&src_row[start..start + hi - lo]);
                        } else {
                            for (ox, d) in dst.iter_mut().enumerate().take(hi).skip(lo) {
                                *d = src_row[ox * g.stride + kj - g.pad];
                            }
                        }
                    }
                }
            }
        }
    }
    cols
}

/// Adjoint of [`im2col`]: accumulates columns back into `dx` (NCHW).
fn col2im<T: Scalar>(cols: &[T], g: &ConvGeom, dx: &mut [T]) {
    let p = g.ho * g.wo;
    let np = g.n * p;
    for ci in 0..g.c {
        for ki in 0..g.k {
            for kj in 0..g.k {
                let row = (ci * g.k + ki) * g.k + kj;
                let src_row = &cols[row * np..(row + 1) * np];
                for ni in 0..g.n {
                    let dst = &mut dx[(ni * g.c + ci) * g.h * g.w..(ni * g.c + ci + 1) * g.h * g.w];
                    for oy in 0..g.ho {
                        let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                        if iy < 0 || iy >= g.h as isize {
                            continue;
                        }
                        let dst_row = &mut dst[iy as usize * g.w..(iy as usize + 1) * g.w];
                        let src = &src_row[ni * p + oy * g.wo..ni * p + (oy + 1) * g.wo];
                        let (lo, hi) = valid_columns(g, kj);
                        if g.stride == 1 {
                            let start = lo + kj - g.pad;
                            for (d, &s) in dst_row[start..start + hi - lo].iter_mut().zip(&src[lo..hi]) {
                                *d += s;
                            }
                        } else {
                            for (ox, &s) in src.iter().enumerate().take(hi).skip(lo) {
                                dst_row[ox * g.stride + kj - g.pad] += s;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// `[N, C, P]` → `[C, N·P]`.
fn to_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[ci * n * p + ni * p..ci * n * p + (ni + 1) * p].copy_from_slice(&x[(ni * c + ci) * p..(ni * c + ci + 1) * p]);
        }
    }
    out
}

/// `[C, N·P]` → `[N, C, P]`.
fn from_channel_major<T: Scalar>(x: &[T], n: usize, c: usize, p: usize) -> Vec<T> {
    let mut out = vec![T::zero(); x.len()];
    for ni in 0..n {
        for ci in 0..c {
            out[(ni * c + ci) * p..(ni * c + ci + 1) * p].copy_from_slice(&x[ci * n * p + ni * p..ci * n * p + (ni + 1) * p]);
        }
    }
    out
}

fn unfold<T: Scalar>(x: &[T], g: &ConvGeom) -> Vec<T> {
    if g.is_pointwise() {
        to_channel_major(x, g.n, g.c, g.h * g.w)
    } else {
        im2col(x, g)
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, g: &ConvGeom) -> Vec<T> {
    let cols = unfold(x, g);
    let np = g.columns();
    let mut out = vec![T::zero(); g.o * np];
    gemm(
        T::one(),
        w,
        MatLayout::row_major(g.o, g.patch()),
        &cols,
        MatLayout::row_major(g.patch(), np),
        T::zero(),
        &mut out,
        MatLayout::row_major(g.o, np),
    );
    if let Some(b) = b {
        for (row, &bias) in out.chunks_mut(np).zip(b) {
            row.iter_mut().for_each(|v| *v += bias);
        }
    }
    from_channel_major(&out, g.n, g.o, g.ho * g.wo)
}

/// Gradients of a convolution. Each output is only computed when requested.
pub(crate) struct ConvGrads<T> {
    pub dx: Option<Vec<T>>,
    pub dw: Option<Vec<T>>,
    pub db: Option<Vec<T>>,
}

pub(crate) fn conv2d_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &ConvGeom,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (want_dx, want_dw, want_db) = want;
    let np = g.columns();
    let dy_cm = to_channel_major(dy, g.n, g.o, g.ho * g.wo);
    let db = want_db.then(|| dy_cm.chunks(np).map(|row| row.iter().copied().sum()).collect());
    let dw = want_dw.then(|| {
        let cols = unfold(x, g);
        let mut dw = vec![T::zero(); g.o * g.patch()];
        gemm(
            T::one(),
            &dy_cm,
            MatLayout::row_major(g.o, np),
            &cols,
            MatLayout::row_major(g.patch(), np).transposed(),
            T::zero(),
            &mut dw,
            MatLayout::row_major(g.o, g.patch()),
        );
        dw
    });
    let dx = want_dx.then(|| {
        let mut dcols = vec![T::zero(); g.patch() * np];
        gemm(
            T::one(),
            w,
            MatLayout::row_major(g.o, g.patch()).transposed(),
            &dy_cm,
            MatLayout::row_major(g.o, np),
            T::zero(),
            &mut dcols,
            MatLayout::row_major(g.patch(), np),
        );
        if g.is_pointwise() {
            from_channel_major(&dcols, g.n, g.c, g.h * g.w)
        } else {
            let mut dx = vec![T::zero(); g.n * g.c * g.h * g.w];
            col2im(&dcols, g, &mut dx);
            dx
        }
    });
    ConvGrads { dx, dw, db }
}

/// Transposed convolution whose kernel equals its stride `f`: every input
/// pixel expands into its own `f×f` output block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) struct UpGeom {
    pub n: usize,
    pub c: usize,
    pub h: usize,
    pub w: usize,
    pub o: usize,
    pub f: usize,
}

impl UpGeom {
    fn expanded(&self) -> usize {
        self.o * self.f * self.f
    }
}

/// `w` has shape `[C, O, f, f]`.
pub(crate) fn upconv_forward<T: Scalar>(x: &[T], w: &[T], b: Option<&[T]>, g: &UpGeom) -> Vec<T> {
    let p = g.h * g.w;
    let np = g.n * p;
    let xc = to_channel_major(x, g.n, g.c, p);
    let mut blocks = vec![T::zero(); g.expanded() * np];
    gemm(
        T::one(),
        w,
        MatLayout::row_major(g.c, g.expanded()).transposed(),
        &xc,
        MatLayout::row_major(g.c, np),
        T::zero(),
        &mut blocks,
        MatLayout::row_major(g.expanded(), np),
    );
    let (ho, wo) = (g.h * g.f, g.w * g.f);
    let mut out = vec![T::zero(); g.n * g.o * ho * wo];
    for oi in 0..g.o {
        let bias = b.map_or(T::zero(), |b| b[oi]);
        for a in 0..g.f {
            for bb in 0..g.f {
                let row = &blocks[((oi * g.f + a) * g.f + bb) * np..((oi * g.f + a) * g.f + bb + 1) * np];
                for ni in 0..g.n {
                    let dst = &mut out[(ni * g.o + oi) * ho * wo..(ni * g.o + oi + 1) * ho * wo];
                    for i in 0..g.h {
                        for j in 0..g.w {
                            dst[(i * g.f + a) * wo + j * g.f + bb] = row[ni * p + i * g.w + j] + bias;
                        }
                    }
                }
            }
        }
    }
    out
}

pub(crate) fn upconv_backward<T: Scalar>(
    x: &[T],
    w: &[T],
    dy: &[T],
    g: &UpGeom,
    want: (bool, bool, bool),
) -> ConvGrads<T> {
    let (want_dx, want_dw, want_db) = want;
    let p = g.h * g.w;
    let np = g.n * p;
    let (ho, wo) = (g.h * g.f, g.w * g.f);
    let mut dblocks = vec![T::zero(); g.expanded() * np];
    for oi in 0..g.o {
        for a in 0..g.f {
            for bb in 0..g.f {
                let row = &mut dblocks[((oi * g.f + a) * g.f + bb) * np..((oi * g.f + a) * g.f + bb + 1) * np];
                for ni in 0..g.n {
                    let src = &dy[(ni * g.o + oi) * ho * wo..(ni * g.o + oi + 1) * ho * wo];
                    for i in 0..g.h {
                        for j in 0..g.w {
                            row[ni * p + i * g.w + j] = src[(i * g.f + a) * wo + j * g.f + bb];
                        }
                    }
                }
            }
        }
    }
    let db = want_db.then(|| {
        let ff = g.f * g.f;
        (0..g.o)
            .map(|oi| dblocks[oi * ff * np..(oi + 1) * ff * np].iter().copied().sum())
            .collect()
    });
    let dw = want_dw.then(|| {
        let xc = to_channel_major(x, g.n, g.c, p);
        let mut dw = vec![T::zero(); g.c * g.expanded()];
        gemm(
            T::one(),
            &xc,
            MatLayout::row_major(g.c, np),
            &dblocks,
            MatLayout::row_major(g.expanded(), np).transposed(),
            T::zero(),
            &mut dw,
            MatLayout::row_major(g.c, g.expanded()),
        );
        dw
    });
    let dx = want_dx.then(|| {
        let mut dxc = vec![T::zero(); g.c * np];
        gemm(
            T::one(),
            w,
            MatLayout::row_major(g.c, g.expanded()),
            &dblocks,
            MatLayout::row_major(g.expanded(), np),
            T::zero(),
            &mut dxc,
            MatLayout::row_major(g.c, np),
        );
        from_channel_major(&dxc, g.n, g.c, p)
    });
    ConvGrads { dx, dw, db }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Direct nested-loop convolution.
    fn naive_conv(x: &[f64], w: &[f64], b: &[f64], g: &ConvGeom) -> Vec<f64> {
        let mut out = vec![0.0; g.n * g.o * g.ho * g.wo];
        for n in 0..g.n {
            for o in 0..g.o {
                for oy in 0..g.ho {
                    for ox in 0..g.wo {
                        let mut acc = b[o];
                        for c in 0..g.c {
                            for ki in 0..g.k {
                                for kj in 0..g.k {
                                    let iy = (oy * g.stride + ki) as isize - g.pad as isize;
                                    let ix = (ox * g.stride + kj) as isize - g.pad as isize;
                                    if iy >= 0 && ix >= 0 && (iy as usize) < g.h && (ix as usize) < g.w {
                                        acc += x[((n * g.c + c) * g.h + iy as usize) * g.w + ix as usize]
                                            * w[((o * g.c + c) * g.k + ki) * g.k + kj];
                                    }
                                }
                            }
                        }
                        out[((n * g.o + o) * g.ho + oy) * g.wo + ox] = acc;
                    }
                }
            }
        }
        out
    }

    fn seq(len: usize, scale: f64) -> Vec<f64> {
        (0..len).map(|i| ((i * 37 % 23) as f64 - 11.0) * scale).collect()
    }

    #[test]
    fn im2col_conv_matches_direct_loops() {
        for &(k, stride, pad) in &[(3, 1, 1), (5, 1, 2), (2, 2, 0), (1, 1, 0), (3, 2, 1), (3, 1, 3), (3, 3, 2)] {
            let g = ConvGeom::new(2, 3, 7, 6, 4, k, stride, pad).unwrap();
            let x = seq(2 * 3 * 7 * 6, 0.1);
            let w = seq(4 * 3 * k * k, 0.05);
            let b = vec![0.1, -0.2, 0.3, 0.0];
            let fast = conv2d_forward(&x, &w, Some(&b), &g);
            let slow = naive_conv(&x, &w, &b, &g);
            for (a, e) in fast.iter().zip(&slow) {
                assert!((a - e).abs() < 1e-12, "k={k} s={stride} p={pad}: {a} vs {e}");
            }
        }
    }

    #[test]
    fn conv_input_gradient_is_adjoint_of_forward() {
        // <conv(x), dy> == <x, conv_backward_x(dy)> for a bias-free convolution.
        for (stride, pad) in [(2, 1), (1, 2)] {
            let g = ConvGeom::new(2, 3, 6, 6, 4, 3, stride, pad).unwrap();
            let x = seq(2 * 3 * 36, 0.1);
            let w = seq(4 * 3 * 9, 0.07);
            let y = conv2d_forward(&x, &w, None, &g);
            let dy = seq(y.len(), 0.03);
            let lhs: f64 = y.iter().zip(&dy).map(|(a, b)| a * b).sum();
            let grads = conv2d_backward(&x, &w, &dy, &g, (true, true, false));
            let rhs: f64 = x.iter().zip(grads.dx.as_ref().unwrap()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs).abs() < 1e-9);
            let rhs_w: f64 = w.iter().zip(grads.dw.as_ref().unwrap()).map(|(a, b)| a * b).sum();
            assert!((lhs - rhs_w).abs() < 1e-9);
        }
    }

    #[test]
    fn upconv_places_blocks() {
        let g = UpGeom { n: 1, c: 1, h: 1, w: 2, o: 1, f: 2 };
        let x = vec![1.0, 2.0];
        let w = vec![1.0, 2.0, 3.0, 4.0];
        let y = upconv_forward(&x, &w, Some(&[0.5]), &g);
        assert_eq!(y, vec![1.5, 2.5, 2.5, 4.5, 3.5, 4.5, 6.5, 8.5]);
        let grads = upconv_backward(&x, &w, &[1.0; 8], &g, (true, true, true));
        assert_eq!(grads.dx.unwrap(), vec![10.0, 10.0]);
        assert_eq!(grads.dw.unwrap(), vec![3.0; 4]);
        assert_eq!(grads.db.unwrap(), vec![8.0]);
    }
}
