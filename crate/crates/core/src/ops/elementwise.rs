//! Elementwise kernels: arithmetic (with the two supported broadcast forms),
//! activations, channel concatenation, scalar scaling, global sum.

use crate::scalar::Scalar;
use crate::tape::Bcast;

#[inline(always)]
pub(crate) fn sigmoid_scalar<T: Scalar>(x: T) -> T {
    // Split on sign so exp never overflows.
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `out = a (op) broadcast(b)`; `f` is the scalar op. `a` always carries the
/// full `[N,C,H,W]` shape, `b` is full, `[N,1,H,W]` or `[N,C,1,1]`.
pub(crate) fn binary_forward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    bcast: Bcast,
    a: &[T],
    b: &[T],
    out: &mut [T],
    f: impl Fn(T, T) -> T,
) {
    let plane = h * w;
    match bcast {
        Bcast::None => {
            for ((ov, av), bv) in out.iter_mut().zip(a).zip(b) {
                *ov = f(*av, *bv);
            }
        }
        Bcast::Channel => {
            for ni in 0..n {
                let bp = &b[ni * plane..][..plane];
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let ap = &a[base..base + plane];
                    let op = &mut out[base..base + plane];
                    for ((ov, av), bv) in op.iter_mut().zip(ap).zip(bp) {
                        *ov = f(*av, *bv);
                    }
                }
            }
        }
        Bcast::Spatial => {
            for pi in 0..n * c {
                let bv = b[pi];
                let ap = &a[pi * plane..][..plane];
                let op = &mut out[pi * plane..][..plane];
                for (ov, av) in op.iter_mut().zip(ap) {
                    *ov = f(*av, bv);
                }
            }
        }
    }
}

/// Accumulates `g * scale_per_element` into the small operand of a broadcast
/// op by summing over the broadcast dimensions in a fixed order.
pub(crate) fn reduce_to_bcast<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    bcast: Bcast,
    full: &[T],
    small: &mut [T],
) {
    let plane = h * w;
    match bcast {
        Bcast::None => {
            for (sv, fv) in small.iter_mut().zip(full) {
                *sv = *sv + *fv;
            }
        }
        Bcast::Channel => {
            for ni in 0..n {
                let sp = &mut small[ni * plane..][..plane];
                for ci in 0..c {
                    let fp = &full[(ni * c + ci) * plane..][..plane];
                    for (sv, fv) in sp.iter_mut().zip(fp) {
                        *sv = *sv + *fv;
                    }
                }
            }
        }
        Bcast::Spatial => {
            for pi in 0..n * c {
                let fp = &full[pi * plane..][..plane];
                let mut acc = T::zero();
                for fv in fp {
                    acc = acc + *fv;
                }
                small[pi] = small[pi] + acc;
            }
        }
    }
}

/// Expands the small operand of a broadcast op to full shape one element at a
/// time, combining with `full` through `f`, accumulating into `dst`.
pub(crate) fn accumulate_with_bcast<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    bcast: Bcast,
    full: &[T],
    small: &[T],
    dst: &mut [T],
    f: impl Fn(T, T) -> T,
) {
    let plane = h * w;
    match bcast {
        Bcast::None => {
            for ((dv, fv), sv) in dst.iter_mut().zip(full).zip(small) {
                *dv = *dv + f(*fv, *sv);
            }
        }
        Bcast::Channel => {
            for ni in 0..n {
                let sp = &small[ni * plane..][..plane];
                for ci in 0..c {
                    let base = (ni * c + ci) * plane;
                    let fp = &full[base..base + plane];
                    let dp = &mut dst[base..base + plane];
                    for ((dv, fv), sv) in dp.iter_mut().zip(fp).zip(sp) {
                        *dv = *dv + f(*fv, *sv);
                    }
                }
            }
        }
        Bcast::Spatial => {
            for pi in 0..n * c {
                let sv = small[pi];
                let base = pi * plane;
                let fp = &full[base..base + plane];
                let dp = &mut dst[base..base + plane];
                for (dv, fv) in dp.iter_mut().zip(fp) {
                    *dv = *dv + f(*fv, sv);
                }
            }
        }
    }
}

pub(crate) fn concat_forward<T: Scalar>(
    (n, ca, cb, h, w): (usize, usize, usize, usize, usize),
    a: &[T],
    b: &[T],
    out: &mut [T],
) {
    let plane = h * w;
    for ni in 0..n {
        let oa = ni * (ca + cb) * plane;
        out[oa..oa + ca * plane].copy_from_slice(&a[ni * ca * plane..][..ca * plane]);
        out[oa + ca * plane..oa + (ca + cb) * plane]
            .copy_from_slice(&b[ni * cb * plane..][..cb * plane]);
    }
}

pub(crate) fn concat_backward_into<T: Scalar>(
    (n, ca, cb, h, w): (usize, usize, usize, usize, usize),
    gout: &[T],
    da: Option<&mut [T]>,
    db: Option<&mut [T]>,
) {
    let plane = h * w;
    if let Some(da) = da {
        for ni in 0..n {
            let g = &gout[ni * (ca + cb) * plane..][..ca * plane];
            let d = &mut da[ni * ca * plane..][..ca * plane];
            for (dv, gv) in d.iter_mut().zip(g) {
                *dv = *dv + *gv;
            }
        }
    }
    if let Some(db) = db {
        for ni in 0..n {
            let g = &gout[ni * (ca + cb) * plane + ca * plane..][..cb * plane];
            let d = &mut db[ni * cb * plane..][..cb * plane];
            for (dv, gv) in d.iter_mut().zip(g) {
                *dv = *dv + *gv;
            }
        }
    }
}
