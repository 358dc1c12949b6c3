//! Batch normalization over NCHW: per-channel statistics across (N, H, W).
//!
//! Training mode normalizes with biased batch statistics; inference mode uses
//! the running buffers. The backward pass differentiates through the batch
//! statistics in training mode.

use crate::scalar::Scalar;

/// Computes per-channel batch mean and `1/sqrt(var+eps)` (biased variance).
pub(crate) fn batch_stats<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    eps: T,
) -> (Vec<T>, Vec<T>) {
    let plane = h * w;
    let m = T::from_f64((n * plane) as f64);
    let mut mean = vec![T::zero(); c];
    let mut inv_std = vec![T::zero(); c];
    for ci in 0..c {
        let mut acc = T::zero();
        for ni in 0..n {
            let xp = &x[(ni * c + ci) * plane..][..plane];
            for xv in xp {
                acc = acc + *xv;
            }
        }
        mean[ci] = acc / m;
    }
    for ci in 0..c {
        let mu = mean[ci];
        let mut acc = T::zero();
        for ni in 0..n {
            let xp = &x[(ni * c + ci) * plane..][..plane];
            for xv in xp {
                let d = *xv - mu;
                acc = acc + d * d;
            }
        }
        inv_std[ci] = T::one() / (acc / m + eps).sqrt();
    }
    (mean, inv_std)
}

/// `out = gamma * (x - mean) * inv_std + beta`, channel-wise.
pub(crate) fn bn_forward<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    gamma: &[T],
    beta: &[T],
    mean: &[T],
    inv_std: &[T],
    out: &mut [T],
) {
    let plane = h * w;
    for ni in 0..n {
        for ci in 0..c {
            let scale = gamma[ci] * inv_std[ci];
            let shift = beta[ci] - gamma[ci] * mean[ci] * inv_std[ci];
            let base = (ni * c + ci) * plane;
            let xp = &x[base..base + plane];
            let op = &mut out[base..base + plane];
            for (ov, xv) in op.iter_mut().zip(xp) {
                *ov = scale * *xv + shift;
            }
        }
    }
}

/// Per-channel sums of `g` and `g*xhat`, needed by every backward variant.
pub(crate) fn bn_grad_sums<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    mean: &[T],
    inv_std: &[T],
    gout: &[T],
    sum_g: &mut [T],
    sum_g_xhat: &mut [T],
) {
    let plane = h * w;
    for ci in 0..c {
        let mu = mean[ci];
        let istd = inv_std[ci];
        let mut sg = T::zero();
        let mut sgx = T::zero();
        for ni in 0..n {
            let base = (ni * c + ci) * plane;
            let xp = &x[base..base + plane];
            let gp = &gout[base..base + plane];
            for (xv, gv) in xp.iter().zip(gp) {
                sg = sg + *gv;
                sgx = sgx + *gv * (*xv - mu) * istd;
            }
        }
        sum_g[ci] = sg;
        sum_g_xhat[ci] = sgx;
    }
}

/// Training-mode input gradient:
/// `dx = gamma*inv_std * (g - sum_g/m - xhat * sum_g_xhat/m)`.
pub(crate) fn bn_backward_x_training<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    x: &[T],
    gamma: &[T],
    mean: &[T],
    inv_std: &[T],
    gout: &[T],
    sum_g: &[T],
    sum_g_xhat: &[T],
    dx: &mut [T],
) {
    let plane = h * w;
    let inv_m = T::one() / T::from_f64((n * plane) as f64);
    for ni in 0..n {
        for ci in 0..c {
            let mu = mean[ci];
            let istd = inv_std[ci];
            let k = gamma[ci] * istd;
            let mg = sum_g[ci] * inv_m;
            let mgx = sum_g_xhat[ci] * inv_m;
            let base = (ni * c + ci) * plane;
            let xp = &x[base..base + plane];
            let gp = &gout[base..base + plane];
            let dp = &mut dx[base..base + plane];
            for ((dv, gv), xv) in dp.iter_mut().zip(gp).zip(xp) {
                let xhat = (*xv - mu) * istd;
                *dv = *dv + k * (*gv - mg - xhat * mgx);
            }
        }
    }
}

/// Inference-mode input gradient: the running statistics are constants, so
/// the op is a per-channel affine map.
pub(crate) fn bn_backward_x_inference<T: Scalar>(
    (n, c, h, w): (usize, usize, usize, usize),
    gamma: &[T],
    inv_std: &[T],
    gout: &[T],
    dx: &mut [T],
) {
    let plane = h * w;
    for ni in 0..n {
        for ci in 0..c {
            let k = gamma[ci] * inv_std[ci];
            let base = (ni * c + ci) * plane;
            let gp = &gout[base..base + plane];
            let dp = &mut dx[base..base + plane];
            for (dv, gv) in dp.iter_mut().zip(gp) {
                *dv = *dv + k * *gv;
            }
        }
    }
}
