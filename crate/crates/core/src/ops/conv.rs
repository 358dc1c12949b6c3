//! Direct convolution kernels (forward + adjoints) for standard and
//! transposed 2-D convolution, NCHW layout, zero padding.
//!
//! The stride-1 paths copy the input into an explicitly padded buffer once
//! per call, which removes all bounds logic from the inner loops and lets
//! each pass over an output row apply a whole kernel row of taps. Strided or
//! over-padded cases fall back to a general bounds-checked path. All
//! accumulation orders are fixed, so results are bit-identical run to run.

use crate::scalar::Scalar;
use crate::tape::Pad;

/// Output rows/cols `o` in `[lo, hi)` satisfy
/// `0 <= o*stride + k_off - pad_before < in_extent`.
#[inline]
fn valid_range(
    k_off: usize,
    pad_before: usize,
    in_extent: usize,
    stride: usize,
    out_extent: usize,
) -> (usize, usize) {
    let lo = if pad_before > k_off {
        (pad_before - k_off).div_ceil(stride)
    } else {
        0
    };
    let upper = in_extent + pad_before;
    if k_off >= upper {
        return (0, 0);
    }
    let hi = ((upper - 1 - k_off) / stride + 1).min(out_extent);
    (lo, hi.max(lo))
}

/// Dot product with eight independent accumulators folded in a fixed order.
/// Deterministic, and vectorizable without floating-point reassociation.
#[inline]
fn dot8<T: Scalar>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let n = a.len();
    let mut acc = [T::zero(); 8];
    let chunks = n / 8;
    for i in 0..chunks {
        let ai = &a[i * 8..i * 8 + 8];
        let bi = &b[i * 8..i * 8 + 8];
        for j in 0..8 {
            acc[j] = acc[j] + ai[j] * bi[j];
        }
    }
    let mut tail = T::zero();
    for i in chunks * 8..n {
        tail = tail + a[i] * b[i];
    }
    (((acc[0] + acc[1]) + (acc[2] + acc[3])) + ((acc[4] + acc[5]) + (acc[6] + acc[7]))) + tail
}

/// `out[j] += sum_s w[s] * x[j+s]` over a full row; the hot inner loop of
/// every stride-1 convolution. Specialized on the strip widths the network
/// uses so the tap weights live in registers.
#[inline]
fn add_taps_row<T: Scalar>(out: &mut [T], x: &[T], w: &[T]) {
    let n = out.len();
    debug_assert!(x.len() >= n + w.len() - 1);
    match w.len() {
        1 => {
            let w0 = w[0];
            for (o, xv) in out.iter_mut().zip(&x[..n]) {
                *o = *o + w0 * *xv;
            }
        }
        3 => {
            let (w0, w1, w2) = (w[0], w[1], w[2]);
            let (x0, x1, x2) = (&x[..n], &x[1..n + 1], &x[2..n + 2]);
            for j in 0..n {
                out[j] = out[j] + w0 * x0[j] + w1 * x1[j] + w2 * x2[j];
            }
        }
        5 => {
            let (w0, w1, w2, w3, w4) = (w[0], w[1], w[2], w[3], w[4]);
            let (x0, x1, x2, x3, x4) =
                (&x[..n], &x[1..n + 1], &x[2..n + 2], &x[3..n + 3], &x[4..n + 4]);
            for j in 0..n {
                out[j] = out[j]
                    + w0 * x0[j]
                    + w1 * x1[j]
                    + w2 * x2[j]
                    + w3 * x3[j]
                    + w4 * x4[j];
            }
        }
        7 => {
            let w7: [T; 7] = [w[0], w[1], w[2], w[3], w[4], w[5], w[6]];
            for j in 0..n {
                let xs = &x[j..j + 7];
                out[j] = out[j]
                    + w7[0] * xs[0]
                    + w7[1] * xs[1]
                    + w7[2] * xs[2]
                    + w7[3] * xs[3]
                    + w7[4] * xs[4]
                    + w7[5] * xs[5]
                    + w7[6] * xs[6];
            }
        }
        _ => {
            for (s, &wv) in w.iter().enumerate() {
                let xs = &x[s..s + n];
                for (o, xv) in out.iter_mut().zip(xs) {
                    *o = *o + wv * *xv;
                }
            }
        }
    }
}

/// Copies `[N,C,H,W]` into a zero-padded `[N,C,H+pt+pb,W+pl+pr]` buffer.
fn pad_input<T: Scalar>(
    x: &[T],
    (n, c, h, w): (usize, usize, usize, usize),
    pad: Pad,
) -> (Vec<T>, usize, usize) {
    let hp = h + pad.top + pad.bottom;
    let wp = w + pad.left + pad.right;
    let mut out = vec![T::zero(); n * c * hp * wp];
    for p in 0..n * c {
        let src = &x[p * h * w..][..h * w];
        let dst = &mut out[p * hp * wp..][..hp * wp];
        for r in 0..h {
            dst[(r + pad.top) * wp + pad.left..][..w].copy_from_slice(&src[r * w..][..w]);
        }
    }
    (out, hp, wp)
}

/// Unrolls one padded image into `[K, M]` columns: `k = ci*kh*kw + r*kw + s`,
/// `m = o*ow + q`, `cols[k][m] = xp[ci][(o+r)][q+s]`. Every kernel tap then
/// acts on a contiguous plane-length row, which keeps deep stages with tiny
/// spatial extents vector-friendly.
#[allow(clippy::too_many_arguments)]
fn im2col<T: Scalar>(
    xp: &[T],
    hp: usize,
    wp: usize,
    cin: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    cols: &mut [T],
) {
    let m = oh * ow;
    let mut k = 0;
    for ci in 0..cin {
        let plane = &xp[ci * hp * wp..][..hp * wp];
        for r in 0..kh {
            for s in 0..kw {
                let dst = &mut cols[k * m..][..m];
                for o in 0..oh {
                    dst[o * ow..][..ow].copy_from_slice(&plane[(o + r) * wp + s..][..ow]);
                }
                k += 1;
            }
        }
    }
}

/// `acc[:] += sum_k weights[k] * cols[k*m..][..m]`, four taps per pass.
fn axpy_accumulate<T: Scalar>(acc: &mut [T], cols: &[T], weights: &[T], m: usize) {
    let kk = weights.len();
    let mut k = 0;
    while k + 4 <= kk {
        let (w0, w1, w2, w3) = (weights[k], weights[k + 1], weights[k + 2], weights[k + 3]);
        let c0 = &cols[k * m..][..m];
        let c1 = &cols[(k + 1) * m..][..m];
        let c2 = &cols[(k + 2) * m..][..m];
        let c3 = &cols[(k + 3) * m..][..m];
        for j in 0..m {
            acc[j] = acc[j] + w0 * c0[j] + w1 * c1[j] + w2 * c2[j] + w3 * c3[j];
        }
        k += 4;
    }
    while k < kk {
        let wv = weights[k];
        let c = &cols[k * m..][..m];
        for (a, cv) in acc.iter_mut().zip(c) {
            *a = *a + wv * *cv;
        }
        k += 1;
    }
}

/// Small output planes lose too much to per-row overhead; hand them to the
/// im2col path. 1x1 kernels always take it (the input already is the column
/// matrix, no copy needed).
fn use_im2col(g: &ConvGeom) -> bool {
    g.kh == 1 && g.kw == 1 && g.pad == Pad::ZERO || g.ow <= 16
}

pub(crate) struct ConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub pad: Pad,
    pub oh: usize,
    pub ow: usize,
}

impl ConvGeom {
    /// The padded fast path covers every configuration the network uses.
    fn fast(&self) -> bool {
        self.stride == 1
    }

    /// The gradient-side fast path additionally needs the padding to stay
    /// inside the kernel extent (true for all real layers).
    fn fast_grad(&self) -> bool {
        self.stride == 1
            && self.pad.top < self.kh
            && self.pad.bottom < self.kh
            && self.pad.left < self.kw
            && self.pad.right < self.kw
    }
}

pub(crate) fn conv2d_forward<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    wgt: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    if g.fast() {
        conv2d_forward_fast(g, x, wgt, bias, out)
    } else {
        conv2d_forward_general(g, x, wgt, bias, out)
    }
}

fn conv2d_forward_fast<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    wgt: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let no_pad = g.pad == Pad::ZERO;
    let (xp_store, hp, wp);
    let xp: &[T] = if no_pad {
        hp = g.h;
        wp = g.w;
        x
    } else {
        let (buf, a, b) = pad_input(x, (g.n, g.cin, g.h, g.w), g.pad);
        xp_store = buf;
        hp = a;
        wp = b;
        &xp_store
    };
    let o_plane = g.oh * g.ow;
    let x_plane = hp * wp;
    let k_total = g.cin * g.kh * g.kw;

    if use_im2col(g) {
        let pointwise = g.kh == 1 && g.kw == 1 && no_pad;
        let mut cols_buf = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k_total * o_plane]
        };
        for ni in 0..g.n {
            let cols: &[T] = if pointwise {
                &xp[ni * g.cin * x_plane..][..g.cin * x_plane]
            } else {
                im2col(
                    &xp[ni * g.cin * x_plane..][..g.cin * x_plane],
                    hp,
                    wp,
                    g.cin,
                    g.kh,
                    g.kw,
                    g.oh,
                    g.ow,
                    &mut cols_buf,
                );
                &cols_buf
            };
            for co in 0..g.cout {
                let out_plane = &mut out[(ni * g.cout + co) * o_plane..][..o_plane];
                let b = bias.map_or(T::zero(), |bb| bb[co]);
                out_plane.iter_mut().for_each(|v| *v = b);
                axpy_accumulate(out_plane, cols, &wgt[co * k_total..][..k_total], o_plane);
            }
        }
        return;
    }

    for ni in 0..g.n {
        for co in 0..g.cout {
            let out_plane = &mut out[(ni * g.cout + co) * o_plane..][..o_plane];
            let b = bias.map_or(T::zero(), |bb| bb[co]);
            out_plane.iter_mut().for_each(|v| *v = b);
            for ci in 0..g.cin {
                let xpp = &xp[(ni * g.cin + ci) * x_plane..][..x_plane];
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for r in 0..g.kh {
                    let wrow = &wgt[wbase + r * g.kw..][..g.kw];
                    for o in 0..g.oh {
                        let xrow = &xpp[(o + r) * wp..][..wp];
                        let orow = &mut out_plane[o * g.ow..][..g.ow];
                        add_taps_row(orow, xrow, wrow);
                    }
                }
            }
        }
    }
}

fn conv2d_forward_general<T: Scalar>(
    g: &ConvGeom,
    x: &[T],
    wgt: &[T],
    bias: Option<&[T]>,
    out: &mut [T],
) {
    let x_plane = g.h * g.w;
    let o_plane = g.oh * g.ow;
    for ni in 0..g.n {
        for co in 0..g.cout {
            let out_plane = &mut out[(ni * g.cout + co) * o_plane..][..o_plane];
            let b = bias.map_or(T::zero(), |bb| bb[co]);
            out_plane.iter_mut().for_each(|v| *v = b);
            for ci in 0..g.cin {
                let xp = &x[(ni * g.cin + ci) * x_plane..][..x_plane];
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for r in 0..g.kh {
                    let (olo, ohi) = valid_range(r, g.pad.top, g.h, g.stride, g.oh);
                    for s in 0..g.kw {
                        let wv = wgt[wbase + r * g.kw + s];
                        let (qlo, qhi) = valid_range(s, g.pad.left, g.w, g.stride, g.ow);
                        if qhi <= qlo {
                            continue;
                        }
                        for o in olo..ohi {
                            let ih = o * g.stride + r - g.pad.top;
                            let orow = &mut out_plane[o * g.ow + qlo..o * g.ow + qhi];
                            for (j, ov) in orow.iter_mut().enumerate() {
                                let iw = (qlo + j) * g.stride + s - g.pad.left;
                                *ov = *ov + wv * xp[ih * g.w + iw];
                            }
                        }
                    }
                }
            }
        }
    }
}

/// d(loss)/dx, accumulated into `dx` (same layout as `x`).
pub(crate) fn conv2d_backward_x<T: Scalar>(g: &ConvGeom, wgt: &[T], gout: &[T], dx: &mut [T]) {
    if g.fast_grad() {
        conv2d_backward_x_fast(g, wgt, gout, dx)
    } else {
        conv2d_backward_x_general(g, wgt, gout, dx)
    }
}

/// Stride-1 input gradient as a full correlation: pad the output gradient by
/// `k-1-p` per side and gather with the 180-degree-rotated kernel.
fn conv2d_backward_x_fast<T: Scalar>(g: &ConvGeom, wgt: &[T], gout: &[T], dx: &mut [T]) {
    let gpad = Pad {
        top: g.kh - 1 - g.pad.top,
        bottom: g.kh - 1 - g.pad.bottom,
        left: g.kw - 1 - g.pad.left,
        right: g.kw - 1 - g.pad.right,
    };
    let pointwise = g.kh == 1 && g.kw == 1 && gpad == Pad::ZERO;
    let (gp_store, wp);
    let gp: &[T] = if pointwise {
        wp = g.ow;
        gout
    } else {
        let (buf, _, b) = pad_input(gout, (g.n, g.cout, g.oh, g.ow), gpad);
        gp_store = buf;
        wp = b;
        &gp_store
    };
    let g_plane = (g.oh + gpad.top + gpad.bottom) * wp;
    let x_plane = g.h * g.w;
    let k_total = g.cout * g.kh * g.kw;

    if pointwise || g.w <= 16 {
        // dx[ci] += sum_k wflip_k * cols_k over the whole plane, where cols
        // unrolls the padded gradient and wflip reindexes the kernel as
        // [co][r][s] -> w[co][ci][kh-1-r][kw-1-s].
        let mut cols_buf = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k_total * x_plane]
        };
        let mut wvec = vec![T::zero(); k_total];
        for ni in 0..g.n {
            let cols: &[T] = if pointwise {
                &gp[ni * g.cout * g_plane..][..g.cout * g_plane]
            } else {
                im2col(
                    &gp[ni * g.cout * g_plane..][..g.cout * g_plane],
                    g.oh + gpad.top + gpad.bottom,
                    wp,
                    g.cout,
                    g.kh,
                    g.kw,
                    g.h,
                    g.w,
                    &mut cols_buf,
                );
                &cols_buf
            };
            for ci in 0..g.cin {
                for co in 0..g.cout {
                    let wbase = (co * g.cin + ci) * g.kh * g.kw;
                    for r in 0..g.kh {
                        for s in 0..g.kw {
                            wvec[(co * g.kh + r) * g.kw + s] =
                                wgt[wbase + (g.kh - 1 - r) * g.kw + (g.kw - 1 - s)];
                        }
                    }
                }
                let dxp = &mut dx[(ni * g.cin + ci) * x_plane..][..x_plane];
                axpy_accumulate(dxp, cols, &wvec, x_plane);
            }
        }
        return;
    }

    let mut wflip = vec![T::zero(); g.kh * g.kw];
    for ni in 0..g.n {
        for ci in 0..g.cin {
            let dxp = &mut dx[(ni * g.cin + ci) * x_plane..][..x_plane];
            for co in 0..g.cout {
                let gpp = &gp[(ni * g.cout + co) * g_plane..][..g_plane];
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        wflip[r * g.kw + s] =
                            wgt[wbase + (g.kh - 1 - r) * g.kw + (g.kw - 1 - s)];
                    }
                }
                for r in 0..g.kh {
                    let wrow = &wflip[r * g.kw..][..g.kw];
                    for ih in 0..g.h {
                        let grow = &gpp[(ih + r) * wp..][..wp];
                        let dxrow = &mut dxp[ih * g.w..][..g.w];
                        add_taps_row(dxrow, grow, wrow);
                    }
                }
            }
        }
    }
}


fn conv2d_backward_x_general<T: Scalar>(g: &ConvGeom, wgt: &[T], gout: &[T], dx: &mut [T]) {
    let x_plane = g.h * g.w;
    let o_plane = g.oh * g.ow;
    for ni in 0..g.n {
        for ci in 0..g.cin {
            let dxp = &mut dx[(ni * g.cin + ci) * x_plane..][..x_plane];
            for co in 0..g.cout {
                let gp = &gout[(ni * g.cout + co) * o_plane..][..o_plane];
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for r in 0..g.kh {
                    let (olo, ohi) = valid_range(r, g.pad.top, g.h, g.stride, g.oh);
                    for s in 0..g.kw {
                        let wv = wgt[wbase + r * g.kw + s];
                        let (qlo, qhi) = valid_range(s, g.pad.left, g.w, g.stride, g.ow);
                        if qhi <= qlo {
                            continue;
                        }
                        for o in olo..ohi {
                            let ih = o * g.stride + r - g.pad.top;
                            let grow = &gp[o * g.ow + qlo..o * g.ow + qhi];
                            for (j, gv) in grow.iter().enumerate() {
                                let iw = (qlo + j) * g.stride + s - g.pad.left;
                                dxp[ih * g.w + iw] = dxp[ih * g.w + iw] + wv * *gv;
                            }
                        }
                    }
                }
            }
        }
    }
}

/// d(loss)/dw, accumulated into `dw` (same layout as the kernel).
pub(crate) fn conv2d_backward_w<T: Scalar>(g: &ConvGeom, x: &[T], gout: &[T], dw: &mut [T]) {
    if g.fast() {
        conv2d_backward_w_fast(g, x, gout, dw)
    } else {
        conv2d_backward_w_general(g, x, gout, dw)
    }
}

fn conv2d_backward_w_fast<T: Scalar>(g: &ConvGeom, x: &[T], gout: &[T], dw: &mut [T]) {
    let no_pad = g.pad == Pad::ZERO;
    let (xp_store, hp, wp);
    let xp: &[T] = if no_pad {
        hp = g.h;
        wp = g.w;
        x
    } else {
        let (buf, a, b) = pad_input(x, (g.n, g.cin, g.h, g.w), g.pad);
        xp_store = buf;
        hp = a;
        wp = b;
        &xp_store
    };
    let x_plane = hp * wp;
    let o_plane = g.oh * g.ow;
    let k_total = g.cin * g.kh * g.kw;

    if use_im2col(g) {
        // dw[co][k] += dot(g[co], cols[k]) over whole-plane rows.
        let pointwise = g.kh == 1 && g.kw == 1 && no_pad;
        let mut cols_buf = if pointwise {
            Vec::new()
        } else {
            vec![T::zero(); k_total * o_plane]
        };
        for ni in 0..g.n {
            let cols: &[T] = if pointwise {
                &xp[ni * g.cin * x_plane..][..g.cin * x_plane]
            } else {
                im2col(
                    &xp[ni * g.cin * x_plane..][..g.cin * x_plane],
                    hp,
                    wp,
                    g.cin,
                    g.kh,
                    g.kw,
                    g.oh,
                    g.ow,
                    &mut cols_buf,
                );
                &cols_buf
            };
            for co in 0..g.cout {
                let gp = &gout[(ni * g.cout + co) * o_plane..][..o_plane];
                let dwrow = &mut dw[co * k_total..][..k_total];
                for (k, dv) in dwrow.iter_mut().enumerate() {
                    *dv = *dv + dot8(gp, &cols[k * o_plane..][..o_plane]);
                }
            }
        }
        return;
    }

    for ni in 0..g.n {
        for co in 0..g.cout {
            let gp = &gout[(ni * g.cout + co) * o_plane..][..o_plane];
            for ci in 0..g.cin {
                let xpp = &xp[(ni * g.cin + ci) * x_plane..][..x_plane];
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        let mut acc = T::zero();
                        for o in 0..g.oh {
                            let grow = &gp[o * g.ow..][..g.ow];
                            let xrow = &xpp[(o + r) * wp + s..][..g.ow];
                            acc = acc + dot8(grow, xrow);
                        }
                        dw[wbase + r * g.kw + s] = dw[wbase + r * g.kw + s] + acc;
                    }
                }
            }
        }
    }
}

fn conv2d_backward_w_general<T: Scalar>(g: &ConvGeom, x: &[T], gout: &[T], dw: &mut [T]) {
    let x_plane = g.h * g.w;
    let o_plane = g.oh * g.ow;
    for ni in 0..g.n {
        for co in 0..g.cout {
            let gp = &gout[(ni * g.cout + co) * o_plane..][..o_plane];
            for ci in 0..g.cin {
                let xp = &x[(ni * g.cin + ci) * x_plane..][..x_plane];
                let wbase = (co * g.cin + ci) * g.kh * g.kw;
                for r in 0..g.kh {
                    let (olo, ohi) = valid_range(r, g.pad.top, g.h, g.stride, g.oh);
                    for s in 0..g.kw {
                        let (qlo, qhi) = valid_range(s, g.pad.left, g.w, g.stride, g.ow);
                        if qhi <= qlo {
                            continue;
                        }
                        let mut acc = T::zero();
                        for o in olo..ohi {
                            let ih = o * g.stride + r - g.pad.top;
                            let grow = &gp[o * g.ow + qlo..o * g.ow + qhi];
                            for (j, gv) in grow.iter().enumerate() {
                                let iw = (qlo + j) * g.stride + s - g.pad.left;
                                acc = acc + *gv * xp[ih * g.w + iw];
                            }
                        }
                        dw[wbase + r * g.kw + s] = dw[wbase + r * g.kw + s] + acc;
                    }
                }
            }
        }
    }
}

/// d(loss)/db, accumulated into `db`.
pub(crate) fn conv2d_backward_b<T: Scalar>(g: &ConvGeom, gout: &[T], db: &mut [T]) {
    let o_plane = g.oh * g.ow;
    for ni in 0..g.n {
        for co in 0..g.cout {
            let gp = &gout[(ni * g.cout + co) * o_plane..][..o_plane];
            let mut acc = T::zero();
            for gv in gp {
                acc = acc + *gv;
            }
            db[co] = db[co] + acc;
        }
    }
}

/// Transposed-convolution geometry: `x` is `[N,Cin,H,W]`, the kernel is
/// `[Cin,Cout,kh,kw]`, the output is `[N,Cout,(H-1)*stride+kh,(W-1)*stride+kw]`.
pub(crate) struct TConvGeom {
    pub n: usize,
    pub cin: usize,
    pub h: usize,
    pub w: usize,
    pub cout: usize,
    pub kh: usize,
    pub kw: usize,
    pub stride: usize,
    pub oh: usize,
    pub ow: usize,
}

/// Scatter-accumulate forward: the adjoint of a strided convolution.
pub(crate) fn tconv2d_forward<T: Scalar>(g: &TConvGeom, x: &[T], wgt: &[T], out: &mut [T]) {
    let x_plane = g.h * g.w;
    let o_plane = g.oh * g.ow;
    out.iter_mut().for_each(|v| *v = T::zero());
    for ni in 0..g.n {
        for co in 0..g.cout {
            let op = &mut out[(ni * g.cout + co) * o_plane..][..o_plane];
            for ci in 0..g.cin {
                let xp = &x[(ni * g.cin + ci) * x_plane..][..x_plane];
                let wbase = (ci * g.cout + co) * g.kh * g.kw;
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        let wv = wgt[wbase + r * g.kw + s];
                        for ih in 0..g.h {
                            let obase = (ih * g.stride + r) * g.ow + s;
                            let xrow = &xp[ih * g.w..][..g.w];
                            for (iw, xv) in xrow.iter().enumerate() {
                                let oi = obase + iw * g.stride;
                                op[oi] = op[oi] + wv * *xv;
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn tconv2d_backward_x<T: Scalar>(g: &TConvGeom, wgt: &[T], gout: &[T], dx: &mut [T]) {
    let x_plane = g.h * g.w;
    let o_plane = g.oh * g.ow;
    for ni in 0..g.n {
        for ci in 0..g.cin {
            let dxp = &mut dx[(ni * g.cin + ci) * x_plane..][..x_plane];
            for co in 0..g.cout {
                let gp = &gout[(ni * g.cout + co) * o_plane..][..o_plane];
                let wbase = (ci * g.cout + co) * g.kh * g.kw;
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        let wv = wgt[wbase + r * g.kw + s];
                        for ih in 0..g.h {
                            let gbase = (ih * g.stride + r) * g.ow + s;
                            let dxrow = &mut dxp[ih * g.w..][..g.w];
                            for (iw, dv) in dxrow.iter_mut().enumerate() {
                                *dv = *dv + wv * gp[gbase + iw * g.stride];
                            }
                        }
                    }
                }
            }
        }
    }
}

pub(crate) fn tconv2d_backward_w<T: Scalar>(g: &TConvGeom, x: &[T], gout: &[T], dw: &mut [T]) {
    let x_plane = g.h * g.w;
    let o_plane = g.oh * g.ow;
    for ni in 0..g.n {
        for ci in 0..g.cin {
            let xp = &x[(ni * g.cin + ci) * x_plane..][..x_plane];
            for co in 0..g.cout {
                let gp = &gout[(ni * g.cout + co) * o_plane..][..o_plane];
                let wbase = (ci * g.cout + co) * g.kh * g.kw;
                for r in 0..g.kh {
                    for s in 0..g.kw {
                        let mut acc = T::zero();
                        for ih in 0..g.h {
                            let gbase = (ih * g.stride + r) * g.ow + s;
                            let xrow = &xp[ih * g.w..][..g.w];
                            for (iw, xv) in xrow.iter().enumerate() {
                                acc = acc + *xv * gp[gbase + iw * g.stride];
                            }
                        }
                        dw[wbase + r * g.kw + s] = dw[wbase + r * g.kw + s] + acc;
                    }
                }
            }
        }
    }
}
