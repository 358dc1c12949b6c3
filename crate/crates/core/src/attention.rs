//! Spatial-channel recalibration (CBAM-style): a channel gate driven by
//! global pooled statistics through a shared bottleneck MLP, and a spatial
//! gate driven by channel-pooled maps through a 7x7 convolution.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::init::SeedRng;
use crate::layers::{Conv2d, ParamEntry};
use crate::scalar::Scalar;
use crate::tape::{Pad, Reduce, Tape};
use crate::tensor::Tensor;

/// Which gate is applied first. The cited design is channel-first; the flag
/// exists so the ablation can test both orders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CbamOrder {
    ChannelFirst,
    SpatialFirst,
}

/// Channel gate: `sigmoid(MLP(avg_pool(f)) + MLP(max_pool(f)))` with a shared
/// two-layer bottleneck MLP (realized as 1x1 convolutions on `[N,C,1,1]`).
pub struct ChannelAttention<T: Scalar> {
    pub reduce: Conv2d<T>,
    pub expand: Conv2d<T>,
}

impl<T: Scalar> ChannelAttention<T> {
    /// Hidden width is `C/ratio`, clamped to at least 4 for the narrow
    /// desk-scale channel counts.
    pub fn new(rng: &mut SeedRng, channels: usize, ratio: usize) -> Self {
        let hidden = (channels / ratio).max(4);
        ChannelAttention {
            reduce: Conv2d::new(rng, channels, hidden, 1, 1, Pad::ZERO, true),
            expand: Conv2d::new(rng, hidden, channels, 1, 1, Pad::ZERO, true),
        }
    }

    fn mlp(&self, tape: &mut Tape<T>, v: &Tensor<T>) -> Result<Tensor<T>> {
        let h = self.reduce.forward(tape, v)?;
        let h = tape.relu(&h);
        self.expand.forward(tape, &h)
    }

    /// Gate of shape `[N,C,1,1]`; the caller applies it as `f * gate`.
    pub fn gate(&self, tape: &mut Tape<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        let avg = tape.reduce_spatial(f, Reduce::Avg)?;
        let mx = tape.reduce_spatial(f, Reduce::Max)?;
        let sum = {
            let a = self.mlp(tape, &avg)?;
            let m = self.mlp(tape, &mx)?;
            tape.add(&a, &m)?
        };
        Ok(tape.sigmoid(&sum))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.reduce.collect_params(&format!("{prefix}.reduce"), out);
        self.expand.collect_params(&format!("{prefix}.expand"), out);
    }

    pub fn param_count(&self) -> usize {
        self.reduce.param_count() + self.expand.param_count()
    }

    pub fn macs(&self) -> u64 {
        // Two pooled vectors through the shared MLP, spatial extent 1.
        2 * (self.reduce.macs(1, 1) + self.expand.macs(1, 1))
    }
}

/// Spatial gate: `sigmoid(conv7(concat(avg_c(f), max_c(f))))` with symmetric
/// padding 3.
pub struct SpatialAttention<T: Scalar> {
    pub conv7: Conv2d<T>,
}

impl<T: Scalar> SpatialAttention<T> {
    pub fn new(rng: &mut SeedRng) -> Self {
        SpatialAttention {
            conv7: Conv2d::new(rng, 2, 1, 7, 7, Pad::symmetric(3), true),
        }
    }

    /// Gate of shape `[N,1,H,W]`; the caller applies it with channel
    /// broadcast.
    pub fn gate(&self, tape: &mut Tape<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        let avg = tape.reduce_channels(f, Reduce::Avg)?;
        let mx = tape.reduce_channels(f, Reduce::Max)?;
        let cat = tape.concat_channels(&avg, &mx)?;
        let s = self.conv7.forward(tape, &cat)?;
        Ok(tape.sigmoid(&s))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.conv7.collect_params(&format!("{prefix}.conv7"), out);
    }

    pub fn param_count(&self) -> usize {
        self.conv7.param_count()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv7.macs(h, w)
    }
}

pub struct Cbam<T: Scalar> {
    pub channel: ChannelAttention<T>,
    pub spatial: SpatialAttention<T>,
    pub order: CbamOrder,
}

impl<T: Scalar> Cbam<T> {
    pub fn new(rng: &mut SeedRng, channels: usize, ratio: usize, order: CbamOrder) -> Self {
        Cbam {
            channel: ChannelAttention::new(rng, channels, ratio),
            spatial: SpatialAttention::new(rng),
            order,
        }
    }

    /// Sequential recalibration; the second gate is computed from the output
    /// of the first.
    pub fn apply(&self, tape: &mut Tape<T>, f: &Tensor<T>) -> Result<Tensor<T>> {
        match self.order {
            CbamOrder::ChannelFirst => {
                let g = self.channel.gate(tape, f)?;
                let f = tape.mul(f, &g)?;
                let g = self.spatial.gate(tape, &f)?;
                tape.mul(&f, &g)
            }
            CbamOrder::SpatialFirst => {
                let g = self.spatial.gate(tape, f)?;
                let f = tape.mul(f, &g)?;
                let g = self.channel.gate(tape, &f)?;
                tape.mul(&f, &g)
            }
        }
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.channel.collect_params(&format!("{prefix}.ch"), out);
        self.spatial.collect_params(&format!("{prefix}.sp"), out);
    }

    pub fn param_count(&self) -> usize {
        self.channel.param_count() + self.spatial.param_count()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.channel.macs() + self.spatial.macs(h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng_from_seed;

    fn zero_params<T: Scalar>(c: &Conv2d<T>) {
        c.weight.data_mut().iter_mut().for_each(|v| *v = T::zero());
        if let Some(b) = &c.bias {
            b.data_mut().iter_mut().for_each(|v| *v = T::zero());
        }
    }

    #[test]
    fn zero_mlp_gives_half_gate() {
        let mut rng = rng_from_seed(0);
        let ca = ChannelAttention::<f64>::new(&mut rng, 8, 8);
        zero_params(&ca.reduce);
        zero_params(&ca.expand);
        let f = Tensor::from_f64_slice(&[1, 8, 4, 4], &vec![0.3; 128]).unwrap();
        let g = ca.gate(&mut Tape::no_grad(), &f).unwrap();
        assert_eq!(g.shape(), &[1, 8, 1, 1]);
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn constant_channels_make_avg_and_max_paths_agree() {
        // Per-channel constant input: avg-pooled and max-pooled vectors are
        // equal, so the pre-sigmoid sum is exactly 2*MLP(v).
        let mut rng = rng_from_seed(1);
        let ca = ChannelAttention::<f64>::new(&mut rng, 4, 8);
        let mut data = vec![0.0; 4 * 9];
        for c in 0..4 {
            data[c * 9..(c + 1) * 9].iter_mut().for_each(|v| *v = c as f64 * 0.25);
        }
        let f = Tensor::new(&[1, 4, 3, 3], data).unwrap();
        let mut tape = Tape::no_grad();
        let avg = tape.reduce_spatial(&f, Reduce::Avg).unwrap();
        let single = ca.mlp(&mut tape, &avg).unwrap();
        let doubled = tape.scale(&single, 2.0);
        let expect = tape.sigmoid(&doubled);
        let gate = ca.gate(&mut tape, &f).unwrap();
        assert!(gate.approx_eq(&expect, 1e-12));
    }

    #[test]
    fn zero_conv7_gives_half_spatial_gate() {
        let mut rng = rng_from_seed(2);
        let sa = SpatialAttention::<f64>::new(&mut rng);
        zero_params(&sa.conv7);
        let f = Tensor::from_f64_slice(&[1, 3, 8, 8], &vec![0.7; 192]).unwrap();
        let g = sa.gate(&mut Tape::no_grad(), &f).unwrap();
        assert_eq!(g.shape(), &[1, 1, 8, 8]);
        assert!(g.data().iter().all(|&v| v == 0.5));
    }

    #[test]
    fn gates_lie_strictly_inside_unit_interval() {
        let mut rng = rng_from_seed(3);
        let cbam = Cbam::<f64>::new(&mut rng, 8, 8, CbamOrder::ChannelFirst);
        let f = crate::init::kaiming_uniform::<f64>(&mut rng, &[2, 8, 8, 8], 8).detached();
        let mut tape = Tape::no_grad();
        let cg = cbam.channel.gate(&mut tape, &f).unwrap();
        let sg = cbam.spatial.gate(&mut tape, &f).unwrap();
        for g in [cg, sg] {
            assert!(g.data().iter().all(|&v| v > 0.0 && v < 1.0));
        }
    }
}
