//! Independent oracles for the integration tests: straight-line
//! implementations kept deliberately separate from the library's kernels.

#![allow(dead_code)]

use sanet_core::metrics::Mask;
use sanet_core::Pad;

/// Six-nested-loop sliding-window convolution with zero padding.
/// Returns the output buffer and its spatial size.
pub fn conv2d_oracle(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: Pad,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + pad.top + pad.bottom - kh) / stride + 1;
    let ow = (w + pad.left + pad.right - kw) / stride + 1;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for co in 0..cout {
            for o in 0..oh {
                for q in 0..ow {
                    let mut acc = bias.map_or(0.0, |b| b[co]);
                    for ci in 0..cin {
                        for r in 0..kh {
                            for s in 0..kw {
                                let ih = (o * stride + r) as isize - pad.top as isize;
                                let iw = (q * stride + s) as isize - pad.left as isize;
                                if ih < 0 || iw < 0 || ih >= h as isize || iw >= w as isize {
                                    continue; // zero padding
                                }
                                let xv = x[((ni * cin + ci) * h + ih as usize) * w + iw as usize];
                                let wv = wgt[((co * cin + ci) * kh + r) * kw + s];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((ni * cout + co) * oh + o) * ow + q] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Direct scatter-accumulate transposed convolution oracle.
pub fn tconv2d_oracle(
    x: &[f64],
    (n, cin, h, w): (usize, usize, usize, usize),
    wgt: &[f64],
    (cout, kh, kw): (usize, usize, usize),
    stride: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h - 1) * stride + kh;
    let ow = (w - 1) * stride + kw;
    let mut out = vec![0.0; n * cout * oh * ow];
    for ni in 0..n {
        for ci in 0..cin {
            for co in 0..cout {
                for ih in 0..h {
                    for iw in 0..w {
                        let xv = x[((ni * cin + ci) * h + ih) * w + iw];
                        for r in 0..kh {
                            for s in 0..kw {
                                let oi = ((ni * cout + co) * oh + ih * stride + r) * ow
                                    + iw * stride
                                    + s;
                                out[oi] += xv * wgt[((ci * cout + co) * kh + r) * kw + s];
                            }
                        }
                    }
                }
            }
        }
    }
    (out, oh, ow)
}

/// Window-scan max pooling oracle (2x2, stride 2).
pub fn max_pool_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
) -> Vec<f64> {
    let (oh, ow) = (h / 2, w / 2);
    let mut out = vec![0.0; n * c * oh * ow];
    for p in 0..n * c {
        for o in 0..oh {
            for q in 0..ow {
                let mut best = f64::NEG_INFINITY;
                for dy in 0..2 {
                    for dx in 0..2 {
                        best = best.max(x[p * h * w + (2 * o + dy) * w + 2 * q + dx]);
                    }
                }
                out[(p * oh + o) * ow + q] = best;
            }
        }
    }
    out
}

/// Per-pixel channel reductions oracle: (avg, max).
pub fn reduce_channels_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
) -> (Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut avg = vec![0.0; n * plane];
    let mut mx = vec![f64::NEG_INFINITY; n * plane];
    for ni in 0..n {
        for j in 0..plane {
            let mut acc = 0.0;
            let mut best = f64::NEG_INFINITY;
            for ci in 0..c {
                let v = x[(ni * c + ci) * plane + j];
                acc += v;
                best = best.max(v);
            }
            avg[ni * plane + j] = acc / c as f64;
            mx[ni * plane + j] = best;
        }
    }
    (avg, mx)
}

/// Per-channel global reductions oracle: (avg, max).
pub fn reduce_spatial_oracle(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
) -> (Vec<f64>, Vec<f64>) {
    let plane = h * w;
    let mut avg = vec![0.0; n * c];
    let mut mx = vec![f64::NEG_INFINITY; n * c];
    for p in 0..n * c {
        let mut acc = 0.0;
        let mut best = f64::NEG_INFINITY;
        for j in 0..plane {
            let v = x[p * plane + j];
            acc += v;
            best = best.max(v);
        }
        avg[p] = acc / plane as f64;
        mx[p] = best;
    }
    (avg, mx)
}

/// Stack-based 8-connectivity flood fill. Returns each component's pixel set
/// sorted, components ordered by their smallest pixel.
pub fn flood_fill_oracle(mask: &Mask) -> Vec<Vec<(usize, usize)>> {
    let (h, w) = (mask.h, mask.w);
    let mut seen = vec![false; h * w];
    let mut comps = Vec::new();
    for start in 0..h * w {
        if !mask.data[start] || seen[start] {
            continue;
        }
        let mut stack = vec![start];
        seen[start] = true;
        let mut comp = Vec::new();
        while let Some(i) = stack.pop() {
            let (r, c) = (i / w, i % w);
            comp.push((r, c));
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    if dr == 0 && dc == 0 {
                        continue;
                    }
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if nr < 0 || nc < 0 || nr >= h as i64 || nc >= w as i64 {
                        continue;
                    }
                    let ni = nr as usize * w + nc as usize;
                    if mask.data[ni] && !seen[ni] {
                        seen[ni] = true;
                        stack.push(ni);
                    }
                }
            }
        }
        comp.sort_unstable();
        comps.push(comp);
    }
    comps.sort_by_key(|c| c[0]);
    comps
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}
