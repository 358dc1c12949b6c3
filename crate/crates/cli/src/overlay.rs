//! Overlay rendering: the input as 8-bit gray, predicted pixels tinted red,
//! ground-truth contours traced in green. Written as binary PPM.

use std::path::Path;

use sanet_core::metrics::Mask;

pub fn write_overlay(
    path: &Path,
    h: usize,
    w: usize,
    image: &[f32],
    pred: &Mask,
    gt: Option<&Mask>,
) -> anyhow::Result<()> {
    let mut rgb = vec![0u8; h * w * 3];
    for (i, &v) in image.iter().enumerate() {
        let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
        rgb[3 * i] = g;
        rgb[3 * i + 1] = g;
        rgb[3 * i + 2] = g;
    }
    for (i, &on) in pred.data.iter().enumerate() {
        if on {
            rgb[3 * i] = 255;
            rgb[3 * i + 1] /= 2;
            rgb[3 * i + 2] /= 2;
        }
    }
    if let Some(gt) = gt {
        for r in 0..h {
            for c in 0..w {
                if gt.get(r, c) && is_contour(gt, r, c) {
                    let i = r * w + c;
                    rgb[3 * i] = 0;
                    rgb[3 * i + 1] = 255;
                    rgb[3 * i + 2] = 0;
                }
            }
        }
    }
    let mut out = format!("P6\n{} {}\n255\n", w, h).into_bytes();
    out.extend_from_slice(&rgb);
    std::fs::write(path, out)?;
    Ok(())
}

/// A mask pixel with at least one off 4-neighbor (or on the border).
fn is_contour(m: &Mask, r: usize, c: usize) -> bool {
    if r == 0 || c == 0 || r + 1 == m.h || c + 1 == m.w {
        return true;
    }
    !(m.get(r - 1, c) && m.get(r + 1, c) && m.get(r, c - 1) && m.get(r, c + 1))
}
