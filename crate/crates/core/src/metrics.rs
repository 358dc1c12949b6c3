//! IRSTD evaluation metrics: pixel IoU (global tallies), instance-normalized
//! IoU, probability of detection and false-alarm rate, built on 8-connected
//! component labeling with centroid matching.
//!
//! Conventions fixed by this artifact (the source papers leave them open):
//! binarization threshold defaults to 0.5, target matching is greedy by
//! predicted-component label order with a 3 px centroid radius, nIoU averages
//! per ground-truth instance, and dataset IoU uses global pixel tallies.

use serde::Serialize;

use crate::error::{Result, SanetError};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Dense binary mask, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    pub data: Vec<bool>,
}

impl Mask {
    pub fn new(h: usize, w: usize, data: Vec<bool>) -> Result<Self> {
        if data.len() != h * w {
            return Err(SanetError::ShapeMismatch(format!(
                "mask buffer {} does not match {}x{}",
                data.len(),
                h,
                w
            )));
        }
        Ok(Mask { h, w, data })
    }

    pub fn empty(h: usize, w: usize) -> Self {
        Mask {
            h,
            w,
            data: vec![false; h * w],
        }
    }

    #[inline]
    pub fn get(&self, r: usize, c: usize) -> bool {
        self.data[r * self.w + c]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn flip_horizontal(&self) -> Mask {
        let mut out = self.data.clone();
        for r in 0..self.h {
            out[r * self.w..(r + 1) * self.w].reverse();
        }
        Mask {
            h: self.h,
            w: self.w,
            data: out,
        }
    }

    pub fn flip_vertical(&self) -> Mask {
        let mut out = vec![false; self.data.len()];
        for r in 0..self.h {
            out[(self.h - 1 - r) * self.w..(self.h - r) * self.w]
                .copy_from_slice(&self.data[r * self.w..(r + 1) * self.w]);
        }
        Mask {
            h: self.h,
            w: self.w,
            data: out,
        }
    }
}

/// `pred >= threshold`, one mask per batch image of a `[N,1,H,W]` tensor.
pub fn binarize<T: Scalar>(pred: &Tensor<T>, threshold: f64) -> Result<Vec<Mask>> {
    let (n, c, h, w) = pred.dims4()?;
    if c != 1 {
        return Err(SanetError::ShapeMismatch(format!(
            "binarize expects single-channel predictions, got {} channels",
            c
        )));
    }
    let thr = T::from_f64(threshold);
    let data = pred.data();
    let plane = h * w;
    Ok((0..n)
        .map(|ni| Mask {
            h,
            w,
            data: data[ni * plane..(ni + 1) * plane]
                .iter()
                .map(|&v| v >= thr)
                .collect(),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct Component {
    /// 1-based label; 0 in the label map means background.
    pub label: u32,
    pub count: usize,
    /// (row, col) mean of the member pixels.
    pub centroid: (f64, f64),
    pub pixels: Vec<(u32, u32)>,
}

#[derive(Debug, Clone)]
pub struct ComponentSet {
    pub h: usize,
    pub w: usize,
    /// Per-pixel labels, 0 = background, components numbered 1..=K in order
    /// of their first pixel in row-major scan.
    pub labels: Vec<u32>,
    pub components: Vec<Component>,
}

impl ComponentSet {
    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }
}

/// Two-pass 8-connectivity labeling with union-find. Deterministic: labels
/// are assigned in row-major order of each component's first pixel.
pub fn connected_components(mask: &Mask) -> ComponentSet {
    let (h, w) = (mask.h, mask.w);
    let mut provisional = vec![0u32; h * w];
    // parent[i] for provisional labels; index 0 reserved for background.
    let mut parent: Vec<u32> = vec![0];

    fn find(parent: &mut [u32], mut x: u32) -> u32 {
        while parent[x as usize] != x {
            let up = parent[parent[x as usize] as usize];
            parent[x as usize] = up;
            x = up;
        }
        x
    }

    for r in 0..h {
        for c in 0..w {
            if !mask.get(r, c) {
                continue;
            }
            // Previously-scanned 8-neighbors: W, NW, N, NE.
            let mut neigh = [0u32; 4];
            let mut nn = 0;
            if c > 0 && provisional[r * w + c - 1] != 0 {
                neigh[nn] = provisional[r * w + c - 1];
                nn += 1;
            }
            if r > 0 {
                if c > 0 && provisional[(r - 1) * w + c - 1] != 0 {
                    neigh[nn] = provisional[(r - 1) * w + c - 1];
                    nn += 1;
                }
                if provisional[(r - 1) * w + c] != 0 {
                    neigh[nn] = provisional[(r - 1) * w + c];
                    nn += 1;
                }
                if c + 1 < w && provisional[(r - 1) * w + c + 1] != 0 {
                    neigh[nn] = provisional[(r - 1) * w + c + 1];
                    nn += 1;
                }
            }
            if nn == 0 {
                let fresh = parent.len() as u32;
                parent.push(fresh);
                provisional[r * w + c] = fresh;
            } else {
                let mut root = find(&mut parent, neigh[0]);
                for &other in &neigh[1..nn] {
                    let o = find(&mut parent, other);
                    if o != root {
                        // Union toward the smaller root to keep scan order.
                        if o < root {
                            parent[root as usize] = o;
                            root = o;
                        } else {
                            parent[o as usize] = root;
                        }
                    }
                }
                provisional[r * w + c] = root;
            }
        }
    }

    // Second pass: resolve roots, relabel by first appearance, gather stats.
    let mut remap = vec![0u32; parent.len()];
    let mut labels = vec![0u32; h * w];
    let mut components: Vec<Component> = Vec::new();
    for r in 0..h {
        for c in 0..w {
            let p = provisional[r * w + c];
            if p == 0 {
                continue;
            }
            let root = find(&mut parent, p);
            let label = if remap[root as usize] == 0 {
                let fresh = components.len() as u32 + 1;
                remap[root as usize] = fresh;
                components.push(Component {
                    label: fresh,
                    count: 0,
                    centroid: (0.0, 0.0),
                    pixels: Vec::new(),
                });
                fresh
            } else {
                remap[root as usize]
            };
            labels[r * w + c] = label;
            let comp = &mut components[(label - 1) as usize];
            comp.count += 1;
            comp.centroid.0 += r as f64;
            comp.centroid.1 += c as f64;
            comp.pixels.push((r as u32, c as u32));
        }
    }
    for comp in &mut components {
        comp.centroid.0 /= comp.count as f64;
        comp.centroid.1 /= comp.count as f64;
    }
    ComponentSet {
        h,
        w,
        labels,
        components,
    }
}

/// (intersection, pred pixels, gt pixels).
pub fn pixel_counts(pred: &Mask, gt: &Mask) -> Result<(usize, usize, usize)> {
    if pred.h != gt.h || pred.w != gt.w {
        return Err(SanetError::ShapeMismatch(format!(
            "mask sizes differ: {}x{} vs {}x{}",
            pred.h, pred.w, gt.h, gt.w
        )));
    }
    let mut inter = 0;
    let mut p = 0;
    let mut g = 0;
    for (a, b) in pred.data.iter().zip(&gt.data) {
        if *a {
            p += 1;
        }
        if *b {
            g += 1;
        }
        if *a && *b {
            inter += 1;
        }
    }
    Ok((inter, p, g))
}

/// Whole-image pixel IoU; the empty-vs-empty case is defined as 1.
pub fn pixel_iou(pred: &Mask, gt: &Mask) -> Result<f64> {
    let (inter, p, g) = pixel_counts(pred, gt)?;
    let union = p + g - inter;
    Ok(if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    })
}

/// Greedy one-to-one matching: predicted components in label order each take
/// the nearest unmatched ground-truth component with centroid distance
/// <= `radius` (ties broken toward the smaller ground-truth label).
#[derive(Debug, Clone)]
pub struct Matching {
    /// (pred label, gt label) accepted pairs.
    pub pairs: Vec<(u32, u32)>,
    /// Predicted labels that matched nothing (their pixels are false alarms).
    pub unmatched_pred: Vec<u32>,
}

pub fn match_components(pred: &ComponentSet, gt: &ComponentSet, radius: f64) -> Matching {
    let mut gt_taken = vec![false; gt.components.len()];
    let mut pairs = Vec::new();
    let mut unmatched_pred = Vec::new();
    for pc in &pred.components {
        let mut best: Option<(f64, usize)> = None;
        for (gi, gc) in gt.components.iter().enumerate() {
            if gt_taken[gi] {
                continue;
            }
            let dr = pc.centroid.0 - gc.centroid.0;
            let dc = pc.centroid.1 - gc.centroid.1;
            let dist = (dr * dr + dc * dc).sqrt();
            if dist > radius {
                continue;
            }
            // Strictly-less keeps the smaller gt label on exact ties because
            // candidates are visited in label order.
            if best.map_or(true, |(bd, _)| dist < bd) {
                best = Some((dist, gi));
            }
        }
        match best {
            Some((_, gi)) => {
                gt_taken[gi] = true;
                pairs.push((pc.label, gt.components[gi].label));
            }
            None => unmatched_pred.push(pc.label),
        }
    }
    Matching {
        pairs,
        unmatched_pred,
    }
}

/// Per-image metric row. `pd` is `None` when the image holds no ground-truth
/// targets (the ratio is undefined).
#[derive(Debug, Clone, Serialize)]
pub struct ImageMetrics {
    pub id: String,
    pub iou: f64,
    pub niou: f64,
    pub pd: Option<f64>,
    pub fa: f64,
    pub gt_targets: usize,
    pub pred_targets: usize,
    pub matched_targets: usize,
    pub false_pixels: usize,
    pub intersection_px: usize,
    pub pred_px: usize,
    pub gt_px: usize,
    /// `H*W - gt_px`, the false-alarm denominator.
    pub non_target_px: usize,
    /// Sum of matched-instance IoU ratios, for exact dataset aggregation.
    #[serde(skip)]
    pub niou_sum: f64,
}

/// Evaluates one prediction/ground-truth mask pair.
pub fn evaluate_pair(
    id: &str,
    pred: &Mask,
    gt: &Mask,
    match_radius: f64,
) -> Result<ImageMetrics> {
    let (inter, pred_px, gt_px) = pixel_counts(pred, gt)?;
    let union = pred_px + gt_px - inter;
    let iou = if union == 0 {
        1.0
    } else {
        inter as f64 / union as f64
    };

    let pred_cs = connected_components(pred);
    let gt_cs = connected_components(gt);
    let matching = match_components(&pred_cs, &gt_cs, match_radius);

    // Instance IoU per matched ground-truth component.
    let mut niou_sum = 0.0;
    for &(pl, gl) in &matching.pairs {
        let pc = &pred_cs.components[(pl - 1) as usize];
        let gc = &gt_cs.components[(gl - 1) as usize];
        let mut tp = 0usize;
        for &(r, c) in &pc.pixels {
            if gt_cs.labels[r as usize * gt.w + c as usize] == gl {
                tp += 1;
            }
        }
        let denom = gc.count + pc.count - tp;
        if denom > 0 {
            niou_sum += tp as f64 / denom as f64;
        }
    }
    let gt_targets = gt_cs.len();
    let niou = if gt_targets == 0 {
        if pred_px == 0 {
            1.0
        } else {
            0.0
        }
    } else {
        niou_sum / gt_targets as f64
    };

    let matched = matching.pairs.len();
    let pd = if gt_targets == 0 {
        eprintln!("warning: image {id} has no ground-truth targets; Pd undefined");
        None
    } else {
        Some(matched as f64 / gt_targets as f64)
    };

    let false_pixels: usize = matching
        .unmatched_pred
        .iter()
        .map(|&pl| pred_cs.components[(pl - 1) as usize].count)
        .sum();
    let non_target = pred.h * pred.w - gt_px;
    let fa = if non_target == 0 {
        0.0
    } else {
        false_pixels as f64 / non_target as f64
    };

    Ok(ImageMetrics {
        id: id.to_string(),
        iou,
        niou,
        pd,
        fa,
        gt_targets,
        pred_targets: pred_cs.len(),
        matched_targets: matched,
        false_pixels,
        intersection_px: inter,
        pred_px,
        gt_px,
        non_target_px: non_target,
        niou_sum,
    })
}

#[derive(Debug, Clone, Serialize)]
pub struct AggregateMetrics {
    pub iou: f64,
    pub niou: f64,
    pub pd: Option<f64>,
    pub fa: f64,
    /// `fa` expressed in units of 1e-6.
    pub fa_x1e6: f64,
    pub gt_targets: usize,
    pub matched_targets: usize,
    pub missed_targets: usize,
    pub false_alarm_targets: usize,
    pub intersection_px: usize,
    pub union_px: usize,
    pub false_pixels: usize,
    pub pred_px: usize,
    pub gt_px: usize,
}

/// Full evaluation report: per-image rows plus dataset aggregates.
/// Dataset IoU uses global pixel tallies; nIoU averages over all
/// ground-truth instances in the set.
#[derive(Debug, Clone, Serialize)]
pub struct MetricReport {
    pub threshold: f64,
    pub match_radius: f64,
    pub iou_aggregation: String,
    pub per_image: Vec<ImageMetrics>,
    pub aggregate: AggregateMetrics,
}

impl MetricReport {
    pub fn from_images(per_image: Vec<ImageMetrics>, threshold: f64, match_radius: f64) -> Self {
        let mut inter = 0usize;
        let mut pred_px = 0usize;
        let mut gt_px = 0usize;
        let mut non_target = 0usize;
        let mut gt_targets = 0usize;
        let mut matched = 0usize;
        let mut pred_targets = 0usize;
        let mut false_px = 0usize;
        let mut niou_sum = 0.0;
        for m in &per_image {
            inter += m.intersection_px;
            pred_px += m.pred_px;
            gt_px += m.gt_px;
            non_target += m.non_target_px;
            gt_targets += m.gt_targets;
            matched += m.matched_targets;
            pred_targets += m.pred_targets;
            false_px += m.false_pixels;
            niou_sum += m.niou_sum;
        }
        let union = pred_px + gt_px - inter;
        let fa = if non_target > 0 {
            false_px as f64 / non_target as f64
        } else {
            0.0
        };
        let aggregate = AggregateMetrics {
            iou: if union == 0 {
                1.0
            } else {
                inter as f64 / union as f64
            },
            niou: if gt_targets == 0 {
                if pred_px == 0 {
                    1.0
                } else {
                    0.0
                }
            } else {
                niou_sum / gt_targets as f64
            },
            pd: if gt_targets == 0 {
                None
            } else {
                Some(matched as f64 / gt_targets as f64)
            },
            fa,
            fa_x1e6: fa * 1e6,
            gt_targets,
            matched_targets: matched,
            missed_targets: gt_targets - matched,
            false_alarm_targets: pred_targets - matched,
            intersection_px: inter,
            union_px: union,
            false_pixels: false_px,
            pred_px,
            gt_px,
        };
        MetricReport {
            threshold,
            match_radius,
            iou_aggregation: "global-pixel-tally".to_string(),
            per_image,
            aggregate,
        }
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serialization cannot fail")
    }

    /// One row per image plus a final aggregate row.
    pub fn to_csv(&self) -> String {
        let mut out = String::from(
            "id,iou,niou,pd,fa,fa_x1e6,gt_targets,pred_targets,matched_targets,\
             false_pixels,intersection_px,pred_px,gt_px\n",
        );
        let fmt_pd = |pd: Option<f64>| match pd {
            Some(v) => format!("{v:.6}"),
            None => "nan".to_string(),
        };
        for m in &self.per_image {
            out.push_str(&format!(
                "{},{:.6},{:.6},{},{:.8},{:.4},{},{},{},{},{},{},{}\n",
                m.id,
                m.iou,
                m.niou,
                fmt_pd(m.pd),
                m.fa,
                m.fa * 1e6,
                m.gt_targets,
                m.pred_targets,
                m.matched_targets,
                m.false_pixels,
                m.intersection_px,
                m.pred_px,
                m.gt_px
            ));
        }
        let a = &self.aggregate;
        out.push_str(&format!(
            "AGGREGATE,{:.6},{:.6},{},{:.8},{:.4},{},{},{},{},{},{},{}\n",
            a.iou,
            a.niou,
            fmt_pd(a.pd),
            a.fa,
            a.fa_x1e6,
            a.gt_targets,
            a.matched_targets + a.false_alarm_targets,
            a.matched_targets,
            a.false_pixels,
            a.intersection_px,
            a.pred_px,
            a.gt_px
        ));
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mask_from(h: usize, w: usize, ones: &[(usize, usize)]) -> Mask {
        let mut m = Mask::empty(h, w);
        for &(r, c) in ones {
            m.data[r * w + c] = true;
        }
        m
    }

    #[test]
    fn diagonal_pixels_are_one_component() {
        let m = mask_from(4, 4, &[(1, 1), (2, 2)]);
        let cs = connected_components(&m);
        assert_eq!(cs.len(), 1);
        assert_eq!(cs.components[0].count, 2);
    }

    #[test]
    fn empty_mask_has_no_components() {
        let cs = connected_components(&Mask::empty(5, 5));
        assert!(cs.is_empty());
    }

    #[test]
    fn labels_partition_the_foreground() {
        let m = mask_from(6, 6, &[(0, 0), (0, 1), (3, 3), (5, 0), (4, 1)]);
        let cs = connected_components(&m);
        let labeled: usize = cs.labels.iter().filter(|&&l| l != 0).count();
        assert_eq!(labeled, m.count_ones());
        let total: usize = cs.components.iter().map(|c| c.count).sum();
        assert_eq!(total, m.count_ones());
        // Label order follows first pixel in row-major scan.
        assert_eq!(cs.labels[0], 1);
        assert_eq!(cs.labels[3 * 6 + 3], 2);
        // (4,1) and (5,0) touch diagonally: one component, discovered third.
        assert_eq!(cs.labels[4 * 6 + 1], 3);
        assert_eq!(cs.labels[5 * 6], 3);
    }

    #[test]
    fn identical_masks_give_unit_scores() {
        let m = mask_from(8, 8, &[(2, 2), (2, 3), (6, 6)]);
        let report = MetricReport::from_images(
            vec![evaluate_pair("a", &m, &m, 3.0).unwrap()],
            0.5,
            3.0,
        );
        assert_eq!(report.aggregate.iou, 1.0);
        assert_eq!(report.aggregate.niou, 1.0);
        assert_eq!(report.aggregate.pd, Some(1.0));
        assert_eq!(report.aggregate.fa, 0.0);
    }

    #[test]
    fn half_covered_two_pixel_target() {
        // gt has 2 pixels, pred covers exactly one of them:
        // instance IoU = 1/(2+1-1) = 0.5.
        let gt = mask_from(8, 8, &[(3, 3), (3, 4)]);
        let pred = mask_from(8, 8, &[(3, 3)]);
        let m = evaluate_pair("x", &pred, &gt, 3.0).unwrap();
        assert_eq!(m.iou, 0.5);
        assert_eq!(m.niou, 0.5);
        assert_eq!(m.pd, Some(1.0));
        assert_eq!(m.fa, 0.0);
    }

    #[test]
    fn disjoint_masks_give_zero_iou() {
        let gt = mask_from(8, 8, &[(1, 1)]);
        let pred = mask_from(8, 8, &[(6, 6)]);
        let m = evaluate_pair("x", &pred, &gt, 3.0).unwrap();
        assert_eq!(m.iou, 0.0);
        assert_eq!(m.niou, 0.0);
        assert_eq!(m.pd, Some(0.0));
        // The stray prediction is a false alarm: 1 px over 63 non-target px.
        assert!((m.fa - 1.0 / 63.0).abs() < 1e-12);
    }

    #[test]
    fn nearby_centroid_counts_as_detection() {
        // gt centroid (10,10), pred centroid (11,10): distance 1 <= 3.
        let gt = mask_from(32, 32, &[(10, 10)]);
        let pred = mask_from(32, 32, &[(11, 10)]);
        let m = evaluate_pair("x", &pred, &gt, 3.0).unwrap();
        assert_eq!(m.pd, Some(1.0));
        assert_eq!(m.fa, 0.0);
        assert_eq!(m.matched_targets, 1);
    }

    #[test]
    fn far_prediction_is_a_false_alarm() {
        // 5-pixel predicted blob at (20,20), 4-pixel gt at (10,10) on 64x64:
        // Pd = 0, Fa = 5/(4096-4).
        let gt = mask_from(64, 64, &[(10, 10), (10, 11), (11, 10), (11, 11)]);
        let pred = mask_from(
            64,
            64,
            &[(20, 20), (20, 21), (21, 20), (21, 21), (20, 19)],
        );
        let m = evaluate_pair("x", &pred, &gt, 3.0).unwrap();
        assert_eq!(m.pd, Some(0.0));
        assert_eq!(m.false_pixels, 5);
        assert!((m.fa - 5.0 / 4092.0).abs() < 1e-15);
    }

    #[test]
    fn empty_prediction_gives_zero_pd_zero_fa() {
        let gt = mask_from(16, 16, &[(8, 8)]);
        let pred = Mask::empty(16, 16);
        let m = evaluate_pair("x", &pred, &gt, 3.0).unwrap();
        assert_eq!(m.pd, Some(0.0));
        assert_eq!(m.fa, 0.0);
    }

    #[test]
    fn no_ground_truth_reports_pd_sentinel() {
        let gt = Mask::empty(16, 16);
        let pred = mask_from(16, 16, &[(3, 3)]);
        let m = evaluate_pair("x", &pred, &gt, 3.0).unwrap();
        assert_eq!(m.pd, None);
        assert!(m.fa > 0.0);
    }

    #[test]
    fn binarize_uses_geq_convention() {
        use crate::tensor::Tensor;
        let p = Tensor::<f32>::new(&[1, 1, 1, 3], vec![0.49, 0.5, 0.51]).unwrap();
        let masks = binarize(&p, 0.5).unwrap();
        assert_eq!(masks[0].data, vec![false, true, true]);
        // All below the threshold: empty mask.
        let p = Tensor::<f32>::new(&[1, 1, 1, 3], vec![0.1, 0.2, 0.3]).unwrap();
        assert_eq!(binarize(&p, 0.5).unwrap()[0].count_ones(), 0);
    }

    #[test]
    fn threshold_sweep_is_monotone() {
        use crate::tensor::Tensor;
        let vals: Vec<f32> = (0..64).map(|i| (i as f32) / 64.0).collect();
        let p = Tensor::<f32>::new(&[1, 1, 8, 8], vals).unwrap();
        let mut prev = binarize(&p, 0.0).unwrap()[0].clone();
        for t in [0.2, 0.4, 0.6, 0.8, 1.01] {
            let cur = binarize(&p, t).unwrap()[0].clone();
            for (c, pv) in cur.data.iter().zip(&prev.data) {
                assert!(!c | pv, "higher threshold must give a subset mask");
            }
            prev = cur;
        }
    }

    #[test]
    fn metrics_are_invariant_to_flip() {
        let gt = mask_from(16, 16, &[(3, 3), (3, 4), (10, 12), (11, 12)]);
        let pred = mask_from(16, 16, &[(3, 3), (9, 12), (14, 1)]);
        let a = evaluate_pair("x", &pred, &gt, 3.0).unwrap();
        let b = evaluate_pair(
            "x",
            &pred.flip_horizontal(),
            &gt.flip_horizontal(),
            3.0,
        )
        .unwrap();
        assert_eq!(a.iou, b.iou);
        assert_eq!(a.niou, b.niou);
        assert_eq!(a.pd, b.pd);
        assert_eq!(a.fa, b.fa);
    }
}
