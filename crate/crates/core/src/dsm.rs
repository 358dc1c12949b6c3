//! Dual-path semantic-aware encoder block: a standard-convolution branch for
//! local detail, a pinwheel cascade for direction-sensitive context, a 3x3
//! fusion, and optional spatial-channel recalibration.

use crate::attention::{Cbam, CbamOrder};
use crate::error::Result;
use crate::init::SeedRng;
use crate::layers::{BatchNorm2d, ConvBnRelu, ParamEntry};
use crate::pinwheel::PinwheelConv;
use crate::scalar::Scalar;
use crate::tape::Tape;
use crate::tensor::Tensor;

/// Channel-attention bottleneck ratio shared by all stages.
pub const CBAM_RATIO: usize = 8;

/// One pinwheel cascade stage: pinwheel conv -> batch norm -> relu.
pub struct PinwheelStage<T: Scalar> {
    pub pconv: PinwheelConv<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> PinwheelStage<T> {
    fn new(rng: &mut SeedRng, cin: usize, cout: usize, k: usize) -> Result<Self> {
        Ok(PinwheelStage {
            pconv: PinwheelConv::new(rng, cin, cout, k)?,
            bn: BatchNorm2d::new(cout),
        })
    }

    fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let y = self.pconv.forward(tape, x)?;
        let y = self.bn.forward(tape, &y, training)?;
        Ok(tape.relu(&y))
    }

    fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.pconv.collect_params(prefix, out);
        self.bn.collect_params(prefix, out);
    }

    fn param_count(&self) -> usize {
        self.pconv.param_count() + self.bn.param_count()
    }

    fn macs(&self, h: usize, w: usize) -> u64 {
        self.pconv.macs(h, w)
    }
}

/// Context branch: the pinwheel 3-5-3 cascade, or a single standard 3x3 unit
/// when the pinwheel path is ablated away.
pub enum ContextBranch<T: Scalar> {
    Pinwheel(Vec<PinwheelStage<T>>),
    Plain(ConvBnRelu<T>),
}

pub struct Dsm<T: Scalar> {
    pub a0: ConvBnRelu<T>,
    pub a1: ConvBnRelu<T>,
    pub b: ContextBranch<T>,
    pub fuse: ConvBnRelu<T>,
    pub cbam: Option<Cbam<T>>,
}

impl<T: Scalar> Dsm<T> {
    pub fn new(
        rng: &mut SeedRng,
        cin: usize,
        cout: usize,
        use_pinwheel: bool,
        use_cbam: bool,
        cbam_order: CbamOrder,
    ) -> Result<Self> {
        let a0 = ConvBnRelu::new(rng, cin, cout, 3);
        let a1 = ConvBnRelu::new(rng, cout, cout, 3);
        let b = if use_pinwheel {
            ContextBranch::Pinwheel(vec![
                PinwheelStage::new(rng, cin, cout, 3)?,
                PinwheelStage::new(rng, cout, cout, 5)?,
                PinwheelStage::new(rng, cout, cout, 3)?,
            ])
        } else {
            ContextBranch::Plain(ConvBnRelu::new(rng, cin, cout, 3))
        };
        let fuse = ConvBnRelu::new(rng, 2 * cout, cout, 3);
        let cbam = use_cbam.then(|| Cbam::new(rng, cout, CBAM_RATIO, cbam_order));
        Ok(Dsm {
            a0,
            a1,
            b,
            fuse,
            cbam,
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let a = self.a0.forward(tape, x, training)?;
        let a = self.a1.forward(tape, &a, training)?;
        let b = match &self.b {
            ContextBranch::Pinwheel(stages) => {
                let mut cur = x.clone();
                for st in stages {
                    cur = st.forward(tape, &cur, training)?;
                }
                cur
            }
            ContextBranch::Plain(unit) => unit.forward(tape, x, training)?,
        };
        let cat = tape.concat_channels(&a, &b)?;
        let f = self.fuse.forward(tape, &cat, training)?;
        match &self.cbam {
            Some(cbam) => cbam.apply(tape, &f),
            None => Ok(f),
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.a0.collect_params(&format!("{prefix}.a0"), out);
        self.a1.collect_params(&format!("{prefix}.a1"), out);
        match &self.b {
            ContextBranch::Pinwheel(stages) => {
                for (i, st) in stages.iter().enumerate() {
                    st.collect_params(&format!("{prefix}.b{i}"), out);
                }
            }
            ContextBranch::Plain(unit) => unit.collect_params(&format!("{prefix}.b0"), out),
        }
        self.fuse.collect_params(&format!("{prefix}.fuse"), out);
        if let Some(cbam) = &self.cbam {
            cbam.collect_params(&format!("{prefix}.cbam"), out);
        }
    }

    pub fn param_count(&self) -> usize {
        let b = match &self.b {
            ContextBranch::Pinwheel(stages) => stages.iter().map(|s| s.param_count()).sum(),
            ContextBranch::Plain(unit) => unit.param_count(),
        };
        self.a0.param_count()
            + self.a1.param_count()
            + b
            + self.fuse.param_count()
            + self.cbam.as_ref().map_or(0, |c| c.param_count())
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let b = match &self.b {
            ContextBranch::Pinwheel(stages) => stages.iter().map(|s| s.macs(h, w)).sum(),
            ContextBranch::Plain(unit) => unit.macs(h, w),
        };
        self.a0.macs(h, w)
            + self.a1.macs(h, w)
            + b
            + self.fuse.macs(h, w)
            + self.cbam.as_ref().map_or(0, |c| c.macs(h, w))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng_from_seed;

    #[test]
    fn zero_input_zero_biases_stays_zero_through_cbam() {
        let mut rng = rng_from_seed(0);
        let dsm = Dsm::<f64>::new(&mut rng, 2, 8, true, true, CbamOrder::ChannelFirst).unwrap();
        let x = Tensor::zeros(&[1, 2, 8, 8]);
        // Inference mode: batch norm uses the initial running stats
        // (mean 0, var 1), so a zero pre-activation stays zero and the
        // attention gates multiply into zero.
        let y = dsm.forward(&mut Tape::no_grad(), &x, false).unwrap();
        assert_eq!(y.shape(), &[1, 8, 8, 8]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zeroed_cbam_scales_fused_feature_by_quarter() {
        let mut rng = rng_from_seed(1);
        let with = Dsm::<f64>::new(&mut rng, 2, 8, true, true, CbamOrder::ChannelFirst).unwrap();
        // Zero every attention parameter: both gates are sigmoid(0) = 0.5.
        let cbam = with.cbam.as_ref().unwrap();
        for conv in [
            &cbam.channel.reduce,
            &cbam.channel.expand,
            &cbam.spatial.conv7,
        ] {
            conv.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
            if let Some(b) = &conv.bias {
                b.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }
        let x = Tensor::from_f64_slice(
            &[1, 2, 8, 8],
            &(0..128).map(|i| (i as f64) * 0.01 - 0.5).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut tape = Tape::no_grad();
        let a = with.a0.forward(&mut tape, &x, false).unwrap();
        let a = with.a1.forward(&mut tape, &a, false).unwrap();
        let b = match &with.b {
            ContextBranch::Pinwheel(stages) => {
                let mut cur = x.clone();
                for st in stages {
                    cur = st.forward(&mut tape, &cur, false).unwrap();
                }
                cur
            }
            ContextBranch::Plain(u) => u.forward(&mut tape, &x, false).unwrap(),
        };
        let cat = tape.concat_channels(&a, &b).unwrap();
        let fused = with.fuse.forward(&mut tape, &cat, false).unwrap();
        let quarter = tape.scale(&fused, 0.25);

        let y = with.forward(&mut Tape::no_grad(), &x, false).unwrap();
        assert!(y.approx_eq(&quarter, 1e-12));
    }

    #[test]
    fn cbam_disabled_returns_pre_attention_feature_exactly() {
        // Same seed: the non-CBAM module draws identical branch weights, so
        // its output must equal the fused feature of the CBAM module bit for
        // bit when the CBAM module's attention is bypassed.
        let build = |use_cbam: bool| {
            let mut rng = rng_from_seed(7);
            Dsm::<f64>::new(&mut rng, 2, 8, true, use_cbam, CbamOrder::ChannelFirst).unwrap()
        };
        let without = build(false);
        let x = Tensor::from_f64_slice(
            &[1, 2, 8, 8],
            &(0..128).map(|i| ((i * 37 % 64) as f64) * 0.02 - 0.6).collect::<Vec<_>>(),
        )
        .unwrap();
        let mut tape = Tape::no_grad();
        let a = without.a0.forward(&mut tape, &x, false).unwrap();
        let a = without.a1.forward(&mut tape, &a, false).unwrap();
        let b = match &without.b {
            ContextBranch::Pinwheel(stages) => {
                let mut cur = x.clone();
                for st in stages {
                    cur = st.forward(&mut tape, &cur, false).unwrap();
                }
                cur
            }
            ContextBranch::Plain(u) => u.forward(&mut tape, &x, false).unwrap(),
        };
        let cat = tape.concat_channels(&a, &b).unwrap();
        let fused = without.fuse.forward(&mut tape, &cat, false).unwrap();

        let y = without.forward(&mut Tape::no_grad(), &x, false).unwrap();
        assert!(y.bits_eq(&fused));
    }

    #[test]
    fn plain_branch_spatial_shape_preserved() {
        let mut rng = rng_from_seed(2);
        let dsm = Dsm::<f32>::new(&mut rng, 4, 8, false, false, CbamOrder::ChannelFirst).unwrap();
        let x = Tensor::full(&[2, 4, 12, 8], 0.1);
        let y = dsm.forward(&mut Tape::no_grad(), &x, false).unwrap();
        assert_eq!(y.shape(), &[2, 8, 12, 8]);
    }
}
