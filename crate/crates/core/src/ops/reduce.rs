//! Pooling and reduction kernels: 2x2 max pooling, channel-wise and
//! spatial reductions. Max reductions record the first-encountered argmax in
//! scan order, so tie-breaking is deterministic and the gradient mask has
//! exactly one entry per window.

use crate::scalar::Scalar;

/// 2x2/stride-2 max pooling. `argmax` receives one flat input index per
/// output cell (first max in row-major window order).
pub(crate) fn max_pool2d_forward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    out: &mut [T],
    argmax: &mut Vec<u32>,
    record: bool,
) {
    let oh = h / 2;
    let ow = w / 2;
    if record {
        argmax.reserve(n * c * oh * ow);
    }
    let mut oi = 0;
    for plane in 0..n * c {
        let xp = &x[plane * h * w..][..h * w];
        let plane_base = plane * h * w;
        for o in 0..oh {
            for q in 0..ow {
                let i0 = (2 * o) * w + 2 * q;
                let i1 = i0 + 1;
                let i2 = i0 + w;
                let i3 = i2 + 1;
                // First strict max in row-major scan wins ties.
                let mut best = xp[i0];
                let mut best_i = i0;
                if xp[i1] > best {
                    best = xp[i1];
                    best_i = i1;
                }
                if xp[i2] > best {
                    best = xp[i2];
                    best_i = i2;
                }
                if xp[i3] > best {
                    best = xp[i3];
                    best_i = i3;
                }
                out[oi] = best;
                oi += 1;
                if record {
                    argmax.push((plane_base + best_i) as u32);
                }
            }
        }
    }
}

pub(crate) fn max_pool2d_backward<T: Scalar>(argmax: &[u32], gout: &[T], dx: &mut [T]) {
    for (gi, &ai) in gout.iter().zip(argmax) {
        let i = ai as usize;
        dx[i] = dx[i] + *gi;
    }
}

/// Per-pixel mean across channels: `[N,C,H,W] -> [N,1,H,W]`.
pub(crate) fn reduce_channels_avg_forward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    out: &mut [T],
) {
    let plane = h * w;
    let inv_c = T::one() / T::from_f64(c as f64);
    for ni in 0..n {
        let op = &mut out[ni * plane..][..plane];
        let xbase = ni * c * plane;
        op.copy_from_slice(&x[xbase..xbase + plane]);
        for ci in 1..c {
            let xp = &x[xbase + ci * plane..][..plane];
            for (ov, xv) in op.iter_mut().zip(xp) {
                *ov = *ov + *xv;
            }
        }
        for ov in op.iter_mut() {
            *ov = *ov * inv_c;
        }
    }
}

pub(crate) fn reduce_channels_avg_backward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    gout: &[T],
    dx: &mut [T],
) {
    let plane = h * w;
    let inv_c = T::one() / T::from_f64(c as f64);
    for ni in 0..n {
        let gp = &gout[ni * plane..][..plane];
        for ci in 0..c {
            let dxp = &mut dx[(ni * c + ci) * plane..][..plane];
            for (dv, gv) in dxp.iter_mut().zip(gp) {
                *dv = *dv + *gv * inv_c;
            }
        }
    }
}

/// Per-pixel max across channels; `argmax` stores the winning channel.
pub(crate) fn reduce_channels_max_forward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    out: &mut [T],
    argmax: &mut Vec<u32>,
    record: bool,
) {
    let plane = h * w;
    if record {
        argmax.resize(n * plane, 0);
    }
    for ni in 0..n {
        let xbase = ni * c * plane;
        let op = &mut out[ni * plane..][..plane];
        op.copy_from_slice(&x[xbase..xbase + plane]);
        if record {
            argmax[ni * plane..(ni + 1) * plane].iter_mut().for_each(|a| *a = 0);
        }
        for ci in 1..c {
            let xp = &x[xbase + ci * plane..][..plane];
            for (j, (ov, xv)) in op.iter_mut().zip(xp).enumerate() {
                if *xv > *ov {
                    *ov = *xv;
                    if record {
                        argmax[ni * plane + j] = ci as u32;
                    }
                }
            }
        }
    }
}

pub(crate) fn reduce_channels_max_backward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    argmax: &[u32],
    gout: &[T],
    dx: &mut [T],
) {
    let plane = h * w;
    for ni in 0..n {
        for j in 0..plane {
            let ci = argmax[ni * plane + j] as usize;
            let idx = (ni * c + ci) * plane + j;
            dx[idx] = dx[idx] + gout[ni * plane + j];
        }
    }
}

/// Global per-channel mean: `[N,C,H,W] -> [N,C,1,1]`.
pub(crate) fn reduce_spatial_avg_forward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    out: &mut [T],
) {
    let plane = h * w;
    let inv = T::one() / T::from_f64(plane as f64);
    for pi in 0..n * c {
        let xp = &x[pi * plane..][..plane];
        let mut acc = T::zero();
        for xv in xp {
            acc = acc + *xv;
        }
        out[pi] = acc * inv;
    }
}

pub(crate) fn reduce_spatial_avg_backward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    gout: &[T],
    dx: &mut [T],
) {
    let plane = h * w;
    let inv = T::one() / T::from_f64(plane as f64);
    for pi in 0..n * c {
        let g = gout[pi] * inv;
        let dxp = &mut dx[pi * plane..][..plane];
        for dv in dxp.iter_mut() {
            *dv = *dv + g;
        }
    }
}

/// Global per-channel max; `argmax` stores the flat in-plane index of the
/// first max in row-major order.
pub(crate) fn reduce_spatial_max_forward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    out: &mut [T],
    argmax: &mut Vec<u32>,
    record: bool,
) {
    let plane = h * w;
    for pi in 0..n * c {
        let xp = &x[pi * plane..][..plane];
        let mut best = xp[0];
        let mut best_i = 0usize;
        for (j, xv) in xp.iter().enumerate().skip(1) {
            if *xv > best {
                best = *xv;
                best_i = j;
            }
        }
        out[pi] = best;
        if record {
            argmax.push(best_i as u32);
        }
    }
}

pub(crate) fn reduce_spatial_max_backward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    argmax: &[u32],
    gout: &[T],
    dx: &mut [T],
) {
    let plane = h * w;
    for pi in 0..n * c {
        let idx = pi * plane + argmax[pi] as usize;
        dx[idx] = dx[idx] + gout[pi];
    }
}
