//! Selective attention fusion: the dynamic skip connection.
//!
//! Given same-shaped encoder and decoder features E and D:
//!
//! ```text
//! X    = concat(E, D)                          (channel dim)
//! SF   = concat(avg_c(X), max_c(X))            (two pooled maps)
//! SAF  = conv7(SF)                             (1-channel saliency map)
//! Y    = E*sigmoid(SAF) + D*sigmoid(1 - SAF)   (broadcast over channels)
//! out  = lambda * (conv1(Y) * X) + X           (lambda a learnable scalar)
//! ```
//!
//! The two fusion weights are deliberately non-complementary:
//! `sigmoid(SAF) + sigmoid(1-SAF)` is not constrained to 1, and the weights
//! coincide exactly at SAF = 0.5. With lambda = 0 the module is a bit-exact
//! channel concatenation.

use crate::error::{Result, SanetError};
use crate::init::SeedRng;
use crate::layers::{Conv2d, ParamEntry, ParamKind};
use crate::scalar::Scalar;
use crate::tape::{Pad, Reduce, Tape};
use crate::tensor::Tensor;

pub struct Safm<T: Scalar> {
    /// Saliency generator over the two pooled maps: `[1,2,7,7]` + bias.
    pub conv7: Conv2d<T>,
    /// Channel expansion C -> 2C so the Hadamard product against X is
    /// well-formed: `[2C,C,1,1]` + bias.
    pub conv1: Conv2d<T>,
    /// Residual strength; starts at 0 when learnable, pinned to 1 otherwise.
    pub lambda: Tensor<T>,
    pub lambda_learnable: bool,
    /// With the residual disabled the module returns `conv1(Y) * X` alone.
    pub residual: bool,
}

impl<T: Scalar> Safm<T> {
    pub fn new(
        rng: &mut SeedRng,
        channels: usize,
        residual: bool,
        lambda_learnable: bool,
    ) -> Self {
        let conv7 = Conv2d::new(rng, 2, 1, 7, 7, Pad::symmetric(3), true);
        let conv1 = Conv2d::new(rng, channels, 2 * channels, 1, 1, Pad::ZERO, true);
        let lambda = if lambda_learnable {
            Tensor::scalar(T::zero()).requires_grad()
        } else {
            Tensor::scalar(T::one())
        };
        Safm {
            conv7,
            conv1,
            lambda,
            lambda_learnable,
            residual,
        }
    }

    pub fn forward(
        &self,
        tape: &mut Tape<T>,
        enc: &Tensor<T>,
        dec: &Tensor<T>,
    ) -> Result<Tensor<T>> {
        if enc.shape() != dec.shape() {
            return Err(SanetError::ShapeMismatch(format!(
                "safm expects same-shaped encoder/decoder features, got {:?} vs {:?}",
                enc.shape(),
                dec.shape()
            )));
        }
        let x = tape.concat_channels(enc, dec)?;
        let sf_avg = tape.reduce_channels(&x, Reduce::Avg)?;
        let sf_max = tape.reduce_channels(&x, Reduce::Max)?;
        let sf = tape.concat_channels(&sf_avg, &sf_max)?;
        let saf = self.conv7.forward(tape, &sf)?;

        let w_enc = tape.sigmoid(&saf);
        let one_minus = tape.affine(&saf, -T::one(), T::one());
        let w_dec = tape.sigmoid(&one_minus);
        let e_part = tape.mul(enc, &w_enc)?;
        let d_part = tape.mul(dec, &w_dec)?;
        let y = tape.add(&e_part, &d_part)?;

        let expanded = self.conv1.forward(tape, &y)?;
        let gated = tape.mul(&expanded, &x)?;
        if !self.residual {
            return Ok(gated);
        }
        let scaled = tape.mul_scalar(&gated, &self.lambda)?;
        tape.add(&scaled, &x)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.conv7.collect_params(&format!("{prefix}.conv7"), out);
        self.conv1.collect_params(&format!("{prefix}.conv1"), out);
        out.push(ParamEntry {
            name: format!("{prefix}.lambda"),
            tensor: self.lambda.clone(),
            kind: if self.lambda_learnable {
                ParamKind::Trainable
            } else {
                ParamKind::Buffer
            },
        });
    }

    pub fn param_count(&self) -> usize {
        self.conv7.param_count()
            + self.conv1.param_count()
            + if self.lambda_learnable { 1 } else { 0 }
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv7.macs(h, w) + self.conv1.macs(h, w)
    }
}
