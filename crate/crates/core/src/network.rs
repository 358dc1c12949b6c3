//! Full network assembly: encoder stages with max-pooling between them, a
//! decoder that upsamples, fuses through the selective-attention skip, and
//! reduces channels, and a sigmoid detection head.

use serde::{Deserialize, Serialize};

use crate::attention::CbamOrder;
use crate::dsm::Dsm;
use crate::error::{Result, SanetError};
use crate::init::rng_from_seed;
use crate::layers::{Conv2d, ConvBnRelu, ParamEntry, ParamKind, TransposedConv2d};
use crate::safm::Safm;
use crate::scalar::Scalar;
use crate::tape::{Pad, Tape};
use crate::tensor::Tensor;

/// Architecture hyperparameters. The channel schedule doubles from
/// `base_channels` per stage; inputs must be divisible by `2^(stages-1)` and
/// leave at least 7 px at the bottleneck for the 7x7 attention kernels.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SANetConfig {
    pub base_channels: usize,
    pub stages: usize,
    pub use_pinwheel: bool,
    pub use_cbam: bool,
    pub cbam_order: CbamOrder,
    pub safm_residual: bool,
    pub lambda_learnable: bool,
}

impl Default for SANetConfig {
    fn default() -> Self {
        SANetConfig {
            base_channels: 16,
            stages: 5,
            use_pinwheel: true,
            use_cbam: true,
            cbam_order: CbamOrder::ChannelFirst,
            safm_residual: true,
            lambda_learnable: true,
        }
    }
}

impl SANetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels < 4 || self.base_channels % 4 != 0 {
            return Err(SanetError::InvalidArg(format!(
                "base_channels must be a positive multiple of 4 (pinwheel branches \
                 split channels four ways), got {}",
                self.base_channels
            )));
        }
        if !(2..=6).contains(&self.stages) {
            return Err(SanetError::InvalidArg(format!(
                "stages must be in 2..=6, got {}",
                self.stages
            )));
        }
        Ok(())
    }

    /// Per-stage channel widths: `[C, 2C, 4C, ...]`.
    pub fn channel_schedule(&self) -> Vec<usize> {
        (0..self.stages).map(|i| self.base_channels << i).collect()
    }

    /// Spatial divisibility demanded of inputs.
    pub fn divisor(&self) -> usize {
        1 << (self.stages - 1)
    }

    pub fn validate_input(&self, h: usize, w: usize) -> Result<()> {
        let d = self.divisor();
        if h % d != 0 || w % d != 0 {
            return Err(SanetError::InvalidArg(format!(
                "input {}x{} not divisible by {} (stages={})",
                h, w, d, self.stages
            )));
        }
        if h / d < 7 || w / d < 7 {
            return Err(SanetError::InvalidArg(format!(
                "bottleneck {}x{} smaller than the 7x7 attention kernels \
                 (input {}x{}, stages={})",
                h / d,
                w / d,
                h,
                w,
                self.stages
            )));
        }
        Ok(())
    }
}

/// One decoder step: upsample the deeper feature, fuse with the encoder skip,
/// reduce channels back down.
pub struct DecoderStage<T: Scalar> {
    pub up: TransposedConv2d<T>,
    pub safm: Safm<T>,
    pub fuse: ConvBnRelu<T>,
}

pub struct SANet<T: Scalar> {
    pub config: SANetConfig,
    pub enc: Vec<Dsm<T>>,
    /// Decoder stages indexed by the encoder stage they fuse with (0-based);
    /// `dec[i]` runs at the resolution of `enc[i]`.
    pub dec: Vec<DecoderStage<T>>,
    pub head: Conv2d<T>,
}

/// Builds a model with Kaiming-uniform conv weights, zero biases, unit
/// batch-norm scale and zero residual strengths, fully determined by `seed`.
pub fn build<T: Scalar>(config: &SANetConfig, seed: u64) -> Result<SANet<T>> {
    config.validate()?;
    let mut rng = rng_from_seed(seed);
    let sched = config.channel_schedule();
    let mut enc = Vec::with_capacity(config.stages);
    let mut cin = 1;
    for &c in &sched {
        enc.push(Dsm::new(
            &mut rng,
            cin,
            c,
            config.use_pinwheel,
            config.use_cbam,
            config.cbam_order,
        )?);
        cin = c;
    }
    let mut dec = Vec::with_capacity(config.stages - 1);
    for i in 0..config.stages - 1 {
        let c = sched[i];
        dec.push(DecoderStage {
            up: TransposedConv2d::new(&mut rng, sched[i + 1], c),
            safm: Safm::new(&mut rng, c, config.safm_residual, config.lambda_learnable),
            fuse: ConvBnRelu::new(&mut rng, 2 * c, c, 3),
        });
    }
    let head = Conv2d::new(&mut rng, sched[0], 1, 3, 3, Pad::symmetric(1), true);
    Ok(SANet {
        config: config.clone(),
        enc,
        dec,
        head,
    })
}

impl<T: Scalar> SANet<T> {
    /// Full forward pass: `[N,1,H,W] -> [N,1,H,W]`, outputs in (0,1).
    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let (_, c, h, w) = x.dims4()?;
        if c != 1 {
            return Err(SanetError::ShapeMismatch(format!(
                "expected single-channel input, got {} channels",
                c
            )));
        }
        self.config.validate_input(h, w)?;

        let stages = self.config.stages;
        let mut skips = Vec::with_capacity(stages);
        let mut cur = x.clone();
        for (i, stage) in self.enc.iter().enumerate() {
            let e = stage.forward(tape, &cur, training)?;
            if i + 1 < stages {
                cur = tape.max_pool2d(&e)?;
            }
            skips.push(e);
        }

        let mut d = skips[stages - 1].clone();
        for i in (0..stages - 1).rev() {
            let step = &self.dec[i];
            let u = step.up.forward(tape, &d)?;
            let f = step.safm.forward(tape, &skips[i], &u)?;
            d = step.fuse.forward(tape, &f, training)?;
        }
        let logits = self.head.forward(tape, &d)?;
        Ok(tape.sigmoid(&logits))
    }

    /// All named parameters in deterministic registry order. The order fixes
    /// the optimizer state layout and the checkpoint manifest.
    pub fn params(&self) -> Vec<ParamEntry<T>> {
        let mut out = Vec::new();
        for (i, stage) in self.enc.iter().enumerate() {
            stage.collect_params(&format!("enc{}.dsm", i + 1), out.as_mut());
        }
        for (i, step) in self.dec.iter().enumerate() {
            let p = format!("dec{}", i + 1);
            step.up.collect_params(&format!("{p}.up"), &mut out);
            step.safm.collect_params(&format!("{p}.safm"), &mut out);
            step.fuse.collect_params(&format!("{p}.fuse"), &mut out);
        }
        self.head.collect_params("head", &mut out);
        out
    }

    /// Clears gradients on every trainable parameter.
    pub fn zero_grads(&self) {
        for p in self.params() {
            if p.kind == ParamKind::Trainable {
                p.tensor.clear_grad();
            }
        }
    }

    /// Number of trainable scalars.
    pub fn count_params(&self) -> usize {
        self.params()
            .iter()
            .filter(|p| p.kind == ParamKind::Trainable)
            .map(|p| p.tensor.numel())
            .sum()
    }

    /// FLOPs for one forward pass at the given input size, counted as 2x the
    /// multiply-accumulates of every convolution-like layer (standard,
    /// strip, 1x1, transposed, attention MLPs). Elementwise work, pooling,
    /// normalization and activations are not MACs and are excluded.
    pub fn count_flops(&self, h: usize, w: usize) -> u64 {
        let mut macs: u64 = 0;
        for (i, stage) in self.enc.iter().enumerate() {
            let (sh, sw) = (h >> i, w >> i);
            macs += stage.macs(sh, sw);
        }
        for (i, step) in self.dec.iter().enumerate() {
            let (sh, sw) = (h >> i, w >> i);
            // The up-conv consumes the deeper stage's resolution.
            macs += step.up.macs(sh / 2, sw / 2);
            macs += step.safm.macs(sh, sw);
            macs += step.fuse.macs(sh, sw);
        }
        macs += self.head.macs(h, w);
        2 * macs
    }

    /// Residual-strength tensors, shallowest decoder stage first.
    pub fn lambdas(&self) -> Vec<Tensor<T>> {
        self.dec.iter().map(|d| d.safm.lambda.clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_config() -> SANetConfig {
        SANetConfig {
            base_channels: 8,
            stages: 3,
            ..SANetConfig::default()
        }
    }

    #[test]
    fn bad_configs_are_rejected() {
        let mut c = tiny_config();
        c.base_channels = 6;
        assert!(c.validate().is_err());
        let mut c = tiny_config();
        c.stages = 1;
        assert!(c.validate().is_err());
    }

    #[test]
    fn same_seed_builds_bit_identical_models() {
        let cfg = tiny_config();
        let a = build::<f32>(&cfg, 42).unwrap();
        let b = build::<f32>(&cfg, 42).unwrap();
        let (pa, pb) = (a.params(), b.params());
        assert_eq!(pa.len(), pb.len());
        for (x, y) in pa.iter().zip(&pb) {
            assert_eq!(x.name, y.name);
            assert!(x.tensor.bits_eq(&y.tensor), "{} differs", x.name);
        }
    }

    #[test]
    fn lambdas_start_at_zero() {
        let model = build::<f32>(&tiny_config(), 1).unwrap();
        for l in model.lambdas() {
            assert_eq!(l.item(), 0.0);
        }
    }

    #[test]
    fn forward_shape_and_range() {
        let model = build::<f32>(&tiny_config(), 3).unwrap();
        let x = Tensor::full(&[1, 1, 28, 28], 0.4);
        let y = model.forward(&mut Tape::no_grad(), &x, false).unwrap();
        assert_eq!(y.shape(), &[1, 1, 28, 28]);
        assert!(y.data().iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn zeroed_head_outputs_exactly_half() {
        let model = build::<f32>(&tiny_config(), 3).unwrap();
        model.head.weight.data_mut().iter_mut().for_each(|v| *v = 0.0);
        if let Some(b) = &model.head.bias {
            b.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::full(&[1, 1, 28, 28], 0.4);
        let y = model.forward(&mut Tape::no_grad(), &x, false).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn forward_is_deterministic() {
        let model = build::<f32>(&tiny_config(), 9).unwrap();
        let x = Tensor::full(&[1, 1, 28, 28], 0.25);
        let y1 = model.forward(&mut Tape::no_grad(), &x, false).unwrap();
        let y2 = model.forward(&mut Tape::no_grad(), &x, false).unwrap();
        assert!(y1.bits_eq(&y2));
    }

    #[test]
    fn invalid_inputs_are_rejected() {
        let model = build::<f32>(&tiny_config(), 3).unwrap();
        // Not divisible by 4.
        let x = Tensor::full(&[1, 1, 30, 30], 0.0);
        assert!(model.forward(&mut Tape::no_grad(), &x, false).is_err());
        // Bottleneck under 7 px.
        let x = Tensor::full(&[1, 1, 24, 24], 0.0);
        assert!(model.forward(&mut Tape::no_grad(), &x, false).is_err());
        // Two input channels.
        let x = Tensor::full(&[1, 2, 28, 28], 0.0);
        assert!(model.forward(&mut Tape::no_grad(), &x, false).is_err());
    }

    #[test]
    fn ablation_flags_strictly_nest_parameter_counts() {
        let full = build::<f32>(&tiny_config(), 0).unwrap().count_params();
        let mut cfg = tiny_config();
        cfg.use_cbam = false;
        let no_cbam = build::<f32>(&cfg, 0).unwrap().count_params();
        cfg.use_pinwheel = false;
        let baseline = build::<f32>(&cfg, 0).unwrap().count_params();
        assert!(baseline < no_cbam, "{baseline} vs {no_cbam}");
        assert!(no_cbam < full, "{no_cbam} vs {full}");
    }

    #[test]
    fn params_increase_with_base_channels() {
        let mut cfg = tiny_config();
        let small = build::<f32>(&cfg, 0).unwrap().count_params();
        cfg.base_channels = 16;
        let large = build::<f32>(&cfg, 0).unwrap().count_params();
        assert!(small < large);
    }

    #[test]
    fn single_conv_flops_formula() {
        // A lone 3x3 conv, Cin=1, Cout=1, 8x8, pad 1: 10 params and
        // 2*(9*64) = 1152 FLOPs.
        let mut rng = rng_from_seed(0);
        let conv = Conv2d::<f32>::new(&mut rng, 1, 1, 3, 3, Pad::symmetric(1), true);
        assert_eq!(conv.param_count(), 10);
        assert_eq!(2 * conv.macs(8, 8), 1152);
    }
}
