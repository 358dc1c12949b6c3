//! Pinwheel-shaped convolution: four direction-sensitive strip kernels with
//! one-sided zero padding, concatenated and fused by a 1x1 convolution.
//!
//! Each branch produces a quarter of the output channels with spatial shape
//! preserved (`H' = H + (k-1) - k + 1 = H`). Branch order is fixed
//! (left, right, top, bottom) so checkpoints stay portable.

use crate::error::{Result, SanetError};
use crate::init::SeedRng;
use crate::layers::{Conv2d, ParamEntry};
use crate::scalar::Scalar;
use crate::tape::{Pad, Tape};
use crate::tensor::Tensor;

pub struct PinwheelConv<T: Scalar> {
    pub k: usize,
    /// 1xk kernel, padded (k-1) on the left.
    pub horiz_left: Conv2d<T>,
    /// 1xk kernel, padded (k-1) on the right.
    pub horiz_right: Conv2d<T>,
    /// kx1 kernel, padded (k-1) on the top.
    pub vert_top: Conv2d<T>,
    /// kx1 kernel, padded (k-1) on the bottom.
    pub vert_bottom: Conv2d<T>,
    /// 1x1 fusion across the concatenated branches; bias-free (branch biases
    /// already cover the affine term).
    pub fuse: Conv2d<T>,
}

impl<T: Scalar> PinwheelConv<T> {
    pub fn new(rng: &mut SeedRng, cin: usize, cout: usize, k: usize) -> Result<Self> {
        if cout % 4 != 0 {
            return Err(SanetError::InvalidArg(format!(
                "pinwheel conv out_channels must be divisible by 4, got {}",
                cout
            )));
        }
        if k % 2 == 0 || k < 3 {
            return Err(SanetError::InvalidArg(format!(
                "pinwheel conv kernel extent must be odd and >= 3, got {}",
                k
            )));
        }
        let q = cout / 4;
        Ok(PinwheelConv {
            k,
            horiz_left: Conv2d::new(rng, cin, q, 1, k, Pad::new(0, 0, k - 1, 0), true),
            horiz_right: Conv2d::new(rng, cin, q, 1, k, Pad::new(0, 0, 0, k - 1), true),
            vert_top: Conv2d::new(rng, cin, q, k, 1, Pad::new(k - 1, 0, 0, 0), true),
            vert_bottom: Conv2d::new(rng, cin, q, k, 1, Pad::new(0, k - 1, 0, 0), true),
            fuse: Conv2d::new(rng, cout, cout, 1, 1, Pad::ZERO, false),
        })
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        let hl = self.horiz_left.forward(tape, x)?;
        let hr = self.horiz_right.forward(tape, x)?;
        let vt = self.vert_top.forward(tape, x)?;
        let vb = self.vert_bottom.forward(tape, x)?;
        let horiz = tape.concat_channels(&hl, &hr)?;
        let vert = tape.concat_channels(&vt, &vb)?;
        let cat = tape.concat_channels(&horiz, &vert)?;
        self.fuse.forward(tape, &cat)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.horiz_left.collect_params(&format!("{prefix}.pconv.hl"), out);
        self.horiz_right.collect_params(&format!("{prefix}.pconv.hr"), out);
        self.vert_top.collect_params(&format!("{prefix}.pconv.vt"), out);
        self.vert_bottom.collect_params(&format!("{prefix}.pconv.vb"), out);
        self.fuse.collect_params(&format!("{prefix}.pconv.fuse"), out);
    }

    /// Total parameter count: `in*out*k + out + out^2` (strip weights, branch
    /// biases, fusion weights).
    pub fn param_count(&self) -> usize {
        self.horiz_left.param_count()
            + self.horiz_right.param_count()
            + self.vert_top.param_count()
            + self.vert_bottom.param_count()
            + self.fuse.param_count()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.horiz_left.macs(h, w)
            + self.horiz_right.macs(h, w)
            + self.vert_top.macs(h, w)
            + self.vert_bottom.macs(h, w)
            + self.fuse.macs(h, w)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::init::rng_from_seed;

    #[test]
    fn out_channels_not_divisible_by_4_is_rejected() {
        let mut rng = rng_from_seed(0);
        assert!(PinwheelConv::<f32>::new(&mut rng, 2, 6, 3).is_err());
    }

    #[test]
    fn zero_input_gives_zero_output_with_zero_biases() {
        let mut rng = rng_from_seed(1);
        let pc = PinwheelConv::<f64>::new(&mut rng, 2, 8, 3).unwrap();
        let x = Tensor::zeros(&[1, 2, 6, 6]);
        let y = pc
            .forward(&mut Tape::no_grad(), &x)
            .unwrap();
        assert_eq!(y.shape(), &[1, 8, 6, 6]);
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spatial_shape_preserved_for_all_configured_sizes() {
        let mut rng = rng_from_seed(2);
        for k in [3usize, 5] {
            let pc = PinwheelConv::<f32>::new(&mut rng, 1, 4, k).unwrap();
            for hw in 4..=16usize {
                let x = Tensor::full(&[1, 1, hw, hw], 1.0);
                let y = pc.forward(&mut Tape::no_grad(), &x).unwrap();
                assert_eq!(y.shape(), &[1, 4, hw, hw], "k={k} hw={hw}");
            }
        }
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let mut rng = rng_from_seed(3);
        for (cin, cout, k) in [(1usize, 16usize, 3usize), (16, 32, 5), (8, 8, 3)] {
            let pc = PinwheelConv::<f32>::new(&mut rng, cin, cout, k).unwrap();
            assert_eq!(pc.param_count(), cin * cout * k + cout + cout * cout);
        }
    }

    #[test]
    fn direction_sensitivity_with_equalized_weights() {
        // All branch weights set to one and biases zero: a horizontal line
        // input must excite the horizontal branches strictly more than the
        // vertical ones, and symmetrically for a vertical line.
        let mut rng = rng_from_seed(4);
        let pc = PinwheelConv::<f64>::new(&mut rng, 1, 8, 3).unwrap();
        for conv in [
            &pc.horiz_left,
            &pc.horiz_right,
            &pc.vert_top,
            &pc.vert_bottom,
        ] {
            conv.weight.data_mut().iter_mut().for_each(|v| *v = 1.0);
            if let Some(b) = &conv.bias {
                b.data_mut().iter_mut().for_each(|v| *v = 0.0);
            }
        }

        let branch_abs = |pc: &PinwheelConv<f64>, x: &Tensor<f64>| -> (f64, f64) {
            let mut tape = Tape::no_grad();
            let hl = pc.horiz_left.forward(&mut tape, x).unwrap();
            let hr = pc.horiz_right.forward(&mut tape, x).unwrap();
            let vt = pc.vert_top.forward(&mut tape, x).unwrap();
            let vb = pc.vert_bottom.forward(&mut tape, x).unwrap();
            let sum_abs =
                |t: &Tensor<f64>| t.data().iter().map(|v| v.abs()).sum::<f64>();
            (sum_abs(&hl) + sum_abs(&hr), sum_abs(&vt) + sum_abs(&vb))
        };

        // A full-width line on the top border of an 8x8 frame. For interior
        // lines the total response is conserved across orientations (equal
        // kernel sums), so the strict inequality comes from the one-sided
        // padding: border-adjacent structure is where the branches disagree.
        let mut img = vec![0.0; 64];
        for c in 0..8 {
            img[c] = 1.0;
        }
        let x = Tensor::new(&[1, 1, 8, 8], img).unwrap();
        let (h_resp, v_resp) = branch_abs(&pc, &x);
        assert!(
            h_resp > v_resp,
            "horizontal line: horiz {} <= vert {}",
            h_resp,
            v_resp
        );

        // Full-height line on the left border.
        let mut img = vec![0.0; 64];
        for r in 0..8 {
            img[r * 8] = 1.0;
        }
        let x = Tensor::new(&[1, 1, 8, 8], img).unwrap();
        let (h_resp, v_resp) = branch_abs(&pc, &x);
        assert!(
            v_resp > h_resp,
            "vertical line: vert {} <= horiz {}",
            v_resp,
            h_resp
        );
    }
}
