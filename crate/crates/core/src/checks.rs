//! The gradient-check suite: every differentiable layer, checked against
//! central finite differences in 64-bit, plus an end-to-end pass through a
//! tiny network. Shared by the `gradcheck` CLI command and the acceptance
//! tests.

use crate::attention::{CbamOrder, ChannelAttention, Cbam, SpatialAttention};
use crate::dsm::Dsm;
use crate::error::Result;
use crate::gradcheck::{gradcheck, GradcheckReport, DEFAULT_EPS, DEFAULT_RTOL};
use crate::init::{rng_from_seed, uniform_symmetric, SeedRng};
use crate::layers::BatchNorm2d;
use crate::loss::{soft_iou_loss, SOFT_IOU_EPS};
use crate::network::{build, SANetConfig};
use crate::pinwheel::PinwheelConv;
use crate::safm::Safm;
use crate::tape::{Pad, Reduce, Tape};
use crate::tensor::Tensor;

pub struct CheckResult {
    pub name: String,
    pub report: GradcheckReport,
}

fn rand_tensor(rng: &mut SeedRng, shape: &[usize], scale: f64) -> Tensor<f64> {
    let numel: usize = shape.iter().product();
    let data: Vec<f64> = (0..numel).map(|_| uniform_symmetric(rng, scale)).collect();
    Tensor::new(shape, data).unwrap().requires_grad()
}

/// Checks `d(sum(f(..) * r))/d(wrt)` for a fixed random cotangent `r`, so
/// tensor-valued ops reduce to a scalar without collapsing the Jacobian onto
/// the all-ones direction.
fn check<F>(name: &str, f: F, wrt: &[&Tensor<f64>]) -> Result<CheckResult>
where
    F: Fn(&mut Tape<f64>) -> Result<Tensor<f64>>,
{
    let probe = f(&mut Tape::no_grad())?;
    let mut seed = 0xc07a_c07au64;
    for b in name.bytes() {
        seed = seed.wrapping_mul(0x100000001b3) ^ b as u64;
    }
    let mut rrng = rng_from_seed(seed);
    let cotangent = rand_tensor(&mut rrng, probe.shape(), 1.0).detached();
    let report = gradcheck(
        |t| {
            let y = f(t)?;
            let weighted = t.mul(&y, &cotangent)?;
            Ok(t.sum_all(&weighted))
        },
        wrt,
        DEFAULT_EPS,
        DEFAULT_RTOL,
    )?;
    Ok(CheckResult {
        name: name.to_string(),
        report,
    })
}

/// Runs the whole per-layer suite plus the end-to-end tiny-network check.
pub fn run_gradcheck_suite() -> Result<Vec<CheckResult>> {
    let mut results = Vec::new();
    let mut rng = rng_from_seed(0x5eed);

    // conv2d, symmetric and the four one-sided paddings the pinwheel uses.
    {
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5], 1.0);
        let w = rand_tensor(&mut rng, &[3, 2, 3, 3], 0.5);
        let b = rand_tensor(&mut rng, &[3], 0.5);
        results.push(check(
            "conv2d_3x3_sym",
            |t| t.conv2d(&x, &w, Some(&b), 1, Pad::symmetric(1)),
            &[&x, &w, &b],
        )?);

        let ws = rand_tensor(&mut rng, &[2, 2, 1, 3], 0.5);
        for (name, pad) in [
            ("conv2d_strip_left", Pad::new(0, 0, 2, 0)),
            ("conv2d_strip_right", Pad::new(0, 0, 0, 2)),
        ] {
            results.push(check(
                name,
                |t| t.conv2d(&x, &ws, None, 1, pad),
                &[&x, &ws],
            )?);
        }
        let wv = rand_tensor(&mut rng, &[2, 2, 3, 1], 0.5);
        for (name, pad) in [
            ("conv2d_strip_top", Pad::new(2, 0, 0, 0)),
            ("conv2d_strip_bottom", Pad::new(0, 2, 0, 0)),
        ] {
            results.push(check(
                name,
                |t| t.conv2d(&x, &wv, None, 1, pad),
                &[&x, &wv],
            )?);
        }
        let w2 = rand_tensor(&mut rng, &[2, 2, 2, 2], 0.5);
        results.push(check(
            "conv2d_stride2",
            |t| t.conv2d(&x, &w2, None, 2, Pad::new(1, 0, 1, 0)),
            &[&x, &w2],
        )?);
    }

    // Pooling, reductions, activations, elementwise.
    {
        let x = rand_tensor(&mut rng, &[1, 3, 6, 6], 1.0);
        results.push(check("max_pool2d", |t| t.max_pool2d(&x), &[&x])?);
        results.push(check(
            "reduce_channels_avg",
            |t| t.reduce_channels(&x, Reduce::Avg),
            &[&x],
        )?);
        results.push(check(
            "reduce_channels_max",
            |t| t.reduce_channels(&x, Reduce::Max),
            &[&x],
        )?);
        results.push(check(
            "reduce_spatial_avg",
            |t| t.reduce_spatial(&x, Reduce::Avg),
            &[&x],
        )?);
        results.push(check(
            "reduce_spatial_max",
            |t| t.reduce_spatial(&x, Reduce::Max),
            &[&x],
        )?);
        results.push(check("sigmoid", |t| Ok(t.sigmoid(&x)), &[&x])?);
        results.push(check("relu", |t| Ok(t.relu(&x)), &[&x])?);

        let y = rand_tensor(&mut rng, &[1, 3, 6, 6], 1.0);
        results.push(check("mul_same_shape", |t| t.mul(&x, &y), &[&x, &y])?);
        let g1 = rand_tensor(&mut rng, &[1, 1, 6, 6], 1.0);
        results.push(check(
            "mul_channel_broadcast",
            |t| t.mul(&x, &g1),
            &[&x, &g1],
        )?);
        let gc = rand_tensor(&mut rng, &[1, 3, 1, 1], 1.0);
        results.push(check(
            "mul_spatial_broadcast",
            |t| t.mul(&x, &gc),
            &[&x, &gc],
        )?);
        let s = rand_tensor(&mut rng, &[1], 1.0);
        results.push(check("mul_scalar", |t| t.mul_scalar(&x, &s), &[&x, &s])?);
        results.push(check(
            "concat_channels",
            |t| t.concat_channels(&x, &y),
            &[&x, &y],
        )?);
    }

    // Transposed convolution.
    {
        let x = rand_tensor(&mut rng, &[1, 2, 3, 3], 1.0);
        let w = rand_tensor(&mut rng, &[2, 3, 2, 2], 0.5);
        results.push(check(
            "transposed_conv2d",
            |t| t.transposed_conv2d(&x, &w, 2),
            &[&x, &w],
        )?);
    }

    // Batch norm, training and inference modes.
    {
        let x = rand_tensor(&mut rng, &[2, 3, 4, 4], 1.0);
        let bn = BatchNorm2d::<f64>::new(3);
        // Shift running stats off their init so inference mode is nontrivial.
        bn.running_mean.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 0.1 * i as f64);
        bn.running_var.data_mut().iter_mut().enumerate().for_each(|(i, v)| *v = 1.0 + 0.2 * i as f64);
        results.push(check(
            "batch_norm_training",
            |t| bn.forward(t, &x, true),
            &[&x, &bn.gamma, &bn.beta],
        )?);
        results.push(check(
            "batch_norm_inference",
            |t| bn.forward(t, &x, false),
            &[&x, &bn.gamma, &bn.beta],
        )?);
    }

    // Pinwheel layer (all four branches + fusion).
    {
        let mut prng = rng_from_seed(0x9177);
        let pc = PinwheelConv::<f64>::new(&mut prng, 2, 4, 3)?;
        let x = rand_tensor(&mut rng, &[1, 2, 5, 5], 1.0);
        let wrt: Vec<&Tensor<f64>> = vec![
            &x,
            &pc.horiz_left.weight,
            &pc.horiz_right.weight,
            &pc.vert_top.weight,
            &pc.vert_bottom.weight,
            &pc.fuse.weight,
        ];
        results.push(check("pinwheel_conv", |t| pc.forward(t, &x), &wrt)?);
    }

    // CBAM sub-modules and the combined block.
    {
        let mut prng = rng_from_seed(0xcba1);
        let ca = ChannelAttention::<f64>::new(&mut prng, 8, 8);
        let sa = SpatialAttention::<f64>::new(&mut prng);
        let x = rand_tensor(&mut rng, &[1, 8, 7, 7], 1.0);
        results.push(check(
            "cbam_channel_gate",
            |t| {
                let g = ca.gate(t, &x)?;
                t.mul(&x, &g)
            },
            &[&x, &ca.reduce.weight, &ca.expand.weight],
        )?);
        results.push(check(
            "cbam_spatial_gate",
            |t| {
                let g = sa.gate(t, &x)?;
                t.mul(&x, &g)
            },
            &[&x, &sa.conv7.weight],
        )?);
        let cbam = Cbam::<f64>::new(&mut prng, 8, 8, CbamOrder::ChannelFirst);
        results.push(check("cbam_full", |t| cbam.apply(t, &x), &[&x])?);
    }

    // SAFM including the residual-strength scalar.
    {
        let mut prng = rng_from_seed(0x5af3);
        let safm = Safm::<f64>::new(&mut prng, 4, true, true);
        // Move lambda off its 0 init so the product path carries signal.
        safm.lambda.data_mut()[0] = 0.7;
        let e = rand_tensor(&mut rng, &[1, 4, 7, 7], 1.0);
        let d = rand_tensor(&mut rng, &[1, 4, 7, 7], 1.0);
        results.push(check(
            "safm",
            |t| safm.forward(t, &e, &d),
            &[
                &e,
                &d,
                &safm.conv7.weight,
                &safm.conv1.weight,
                &safm.lambda,
            ],
        )?);
    }

    // Full encoder block.
    {
        let mut prng = rng_from_seed(0xd5a0);
        let dsm = Dsm::<f64>::new(&mut prng, 4, 8, true, true, CbamOrder::ChannelFirst)?;
        let x = rand_tensor(&mut rng, &[1, 4, 8, 8], 1.0);
        results.push(check("dsm_block", |t| dsm.forward(t, &x, true), &[&x])?);
    }

    // Soft-IoU loss.
    {
        let logits = rand_tensor(&mut rng, &[1, 1, 4, 4], 2.0);
        let mut target = vec![0.0f64; 16];
        target[3] = 1.0;
        target[7] = 1.0;
        let y = Tensor::new(&[1, 1, 4, 4], target).unwrap();
        results.push(check(
            "soft_iou_loss",
            |t| {
                let p = t.sigmoid(&logits);
                soft_iou_loss(t, &p, &y, SOFT_IOU_EPS)
            },
            &[&logits],
        )?);
    }

    // End-to-end: tiny network, loss gradients w.r.t. the input image, every
    // residual weight, and the detection head.
    {
        let cfg = SANetConfig {
            base_channels: 8,
            stages: 3,
            ..SANetConfig::default()
        };
        let model = build::<f64>(&cfg, 0xe2e)?;
        for l in model.lambdas() {
            l.data_mut()[0] = 0.3;
        }
        let x = rand_tensor(&mut rng, &[1, 1, 28, 28], 0.5);
        let mut target = vec![0.0f64; 28 * 28];
        for (r, c) in [(5usize, 6usize), (5, 7), (20, 21), (14, 3)] {
            target[r * 28 + c] = 1.0;
        }
        let y = Tensor::new(&[1, 1, 28, 28], target).unwrap();
        let lambdas = model.lambdas();
        let mut wrt: Vec<&Tensor<f64>> = vec![&x];
        wrt.extend(lambdas.iter());
        wrt.push(&model.head.weight);
        wrt.push(model.head.bias.as_ref().unwrap());
        results.push(check(
            "end_to_end_tiny_network",
            |t| {
                let p = model.forward(t, &x, true)?;
                soft_iou_loss(t, &p, &y, SOFT_IOU_EPS)
            },
            &wrt,
        )?);
    }

    Ok(results)
}

#[cfg(test)]
mod tests {
    use super::*;

    // The full suite runs in the acceptance tests; this smoke test keeps a
    // fast signal on the cheap members.
    #[test]
    fn elementwise_members_pass() {
        let mut rng = rng_from_seed(1);
        let x = rand_tensor(&mut rng, &[1, 2, 4, 4], 1.0);
        let r = check("sigmoid", |t| Ok(t.sigmoid(&x)), &[&x]).unwrap();
        assert!(r.report.passed, "{}", r.report);
    }
}
