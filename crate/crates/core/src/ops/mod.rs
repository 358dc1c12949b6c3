//! Differentiable tensor operations.
//!
//! Each public method validates shapes, runs the forward kernel, and pushes a
//! record onto the tape when any input tracks gradients. The backward pass
//! dispatches through [`backward_op`].

mod conv;
mod elementwise;
mod norm;
mod reduce;

use crate::error::{Result, SanetError};
use crate::scalar::Scalar;
use crate::tape::{Bcast, Op, Pad, Reduce, Tape};
use crate::tensor::Tensor;

use conv::{ConvGeom, TConvGeom};

pub(crate) use elementwise::sigmoid_scalar;

/// Elementwise binary op selector, matching the two ops the fusion modules
/// need. Kept as an enum so call sites read like the math.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Mul,
}

fn bcast_of(a: &[usize], b: &[usize]) -> Result<(Bcast, bool)> {
    if a == b {
        return Ok((Bcast::None, false));
    }
    if a.len() == 4 && b.len() == 4 && a[0] == b[0] {
        if a[2] == b[2] && a[3] == b[3] {
            if b[1] == 1 {
                return Ok((Bcast::Channel, false));
            }
            if a[1] == 1 {
                return Ok((Bcast::Channel, true));
            }
        }
        if a[1] == b[1] {
            if b[2] == 1 && b[3] == 1 {
                return Ok((Bcast::Spatial, false));
            }
            if a[2] == 1 && a[3] == 1 {
                return Ok((Bcast::Spatial, true));
            }
        }
    }
    Err(SanetError::ShapeMismatch(format!(
        "elementwise operands {:?} and {:?} are neither equal-shaped nor a \
         supported broadcast (1-channel over C, or 1x1 spatial over HxW)",
        a, b
    )))
}

impl<T: Scalar> Tape<T> {
    /// 2-D convolution with zero padding.
    ///
    /// `x` is `[N,Cin,H,W]`, `weight` is `[Cout,Cin,kh,kw]`, `bias` is
    /// `[Cout]`. Output spatial size follows
    /// `H' = (H + top + bottom - kh)/stride + 1`.
    pub fn conv2d(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        bias: Option<&Tensor<T>>,
        stride: usize,
        pad: Pad,
    ) -> Result<Tensor<T>> {
        let (n, cin, h, w) = x.dims4()?;
        let (cout, wcin, kh, kw) = weight.dims4()?;
        if stride == 0 {
            return Err(SanetError::InvalidArg("conv2d stride must be >= 1".into()));
        }
        if cin != wcin {
            return Err(SanetError::ShapeMismatch(format!(
                "conv2d channel mismatch: input has Cin={} (shape {:?}) but weight \
                 expects Cin={} (shape {:?})",
                cin,
                x.shape(),
                wcin,
                weight.shape()
            )));
        }
        if h + pad.top + pad.bottom < kh || w + pad.left + pad.right < kw {
            return Err(SanetError::InvalidArg(format!(
                "conv2d kernel {}x{} larger than padded input {}x{} (pad {:?})",
                kh,
                kw,
                h + pad.top + pad.bottom,
                w + pad.left + pad.right,
                pad
            )));
        }
        if let Some(b) = bias {
            if b.shape() != [cout] {
                return Err(SanetError::ShapeMismatch(format!(
                    "conv2d bias shape {:?} does not match Cout={}",
                    b.shape(),
                    cout
                )));
            }
        }
        let oh = (h + pad.top + pad.bottom - kh) / stride + 1;
        let ow = (w + pad.left + pad.right - kw) / stride + 1;
        let geom = ConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            pad,
            oh,
            ow,
        };
        let mut buf = vec![T::zero(); n * cout * oh * ow];
        conv::conv2d_forward(
            &geom,
            &x.data(),
            &weight.data(),
            bias.map(|b| b.data()).as_deref().map(|v| v.as_slice()),
            &mut buf,
        );
        let out = Tensor::new(&[n, cout, oh, ow], buf)?;
        let mut tracked: Vec<&Tensor<T>> = vec![x, weight];
        if let Some(b) = bias {
            tracked.push(b);
        }
        if self.tracks(&tracked) {
            let out = out.requires_grad();
            self.push(Op::Conv2d {
                x: x.clone(),
                w: weight.clone(),
                b: bias.cloned(),
                out: out.clone(),
                stride,
                pad,
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// Transposed 2-D convolution (adjoint of a strided convolution).
    ///
    /// `x` is `[N,Cin,H,W]`, `weight` is `[Cin,Cout,kh,kw]`; output spatial
    /// size is `(H-1)*stride + kh`. With a 2x2 kernel and stride 2 this is an
    /// exact spatial doubling.
    pub fn transposed_conv2d(
        &mut self,
        x: &Tensor<T>,
        weight: &Tensor<T>,
        stride: usize,
    ) -> Result<Tensor<T>> {
        let (n, cin, h, w) = x.dims4()?;
        let (wcin, cout, kh, kw) = weight.dims4()?;
        if stride == 0 {
            return Err(SanetError::InvalidArg(
                "transposed_conv2d stride must be >= 1".into(),
            ));
        }
        if cin != wcin {
            return Err(SanetError::ShapeMismatch(format!(
                "transposed_conv2d channel mismatch: input has Cin={} (shape {:?}) \
                 but weight expects Cin={} (shape {:?})",
                cin,
                x.shape(),
                wcin,
                weight.shape()
            )));
        }
        let oh = (h - 1) * stride + kh;
        let ow = (w - 1) * stride + kw;
        let geom = TConvGeom {
            n,
            cin,
            h,
            w,
            cout,
            kh,
            kw,
            stride,
            oh,
            ow,
        };
        let mut buf = vec![T::zero(); n * cout * oh * ow];
        conv::tconv2d_forward(&geom, &x.data(), &weight.data(), &mut buf);
        let out = Tensor::new(&[n, cout, oh, ow], buf)?;
        if self.tracks(&[x, weight]) {
            let out = out.requires_grad();
            self.push(Op::TConv2d {
                x: x.clone(),
                w: weight.clone(),
                out: out.clone(),
                stride,
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// 2x2 max pooling with stride 2. Requires even H and W; the gradient
    /// routes to the first max of each window in row-major scan order.
    pub fn max_pool2d(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if h % 2 != 0 || w % 2 != 0 {
            return Err(SanetError::InvalidArg(format!(
                "max_pool2d requires even spatial dims, got {}x{}",
                h, w
            )));
        }
        let record = self.tracks(&[x]);
        let mut buf = vec![T::zero(); n * c * (h / 2) * (w / 2)];
        let mut argmax = Vec::new();
        reduce::max_pool2d_forward((n, c, h, w), &x.data(), &mut buf, &mut argmax, record);
        let out = Tensor::new(&[n, c, h / 2, w / 2], buf)?;
        if record {
            let out = out.requires_grad();
            self.push(Op::MaxPool2d {
                x: x.clone(),
                out: out.clone(),
                argmax,
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// Channel-wise reduction `[N,C,H,W] -> [N,1,H,W]` (mean or max per pixel).
    pub fn reduce_channels(&mut self, x: &Tensor<T>, mode: Reduce) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if c == 0 {
            return Err(SanetError::InvalidArg(
                "reduce_channels requires C >= 1".into(),
            ));
        }
        let record = self.tracks(&[x]);
        let mut buf = vec![T::zero(); n * h * w];
        let mut argmax = Vec::new();
        match mode {
            Reduce::Avg => reduce::reduce_channels_avg_forward((n, c, h, w), &x.data(), &mut buf),
            Reduce::Max => reduce::reduce_channels_max_forward(
                (n, c, h, w),
                &x.data(),
                &mut buf,
                &mut argmax,
                record,
            ),
        }
        let out = Tensor::new(&[n, 1, h, w], buf)?;
        if record {
            let out = out.requires_grad();
            self.push(Op::ReduceChannels {
                x: x.clone(),
                out: out.clone(),
                mode,
                argmax,
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// Global spatial reduction `[N,C,H,W] -> [N,C,1,1]` (mean or max per
    /// channel).
    pub fn reduce_spatial(&mut self, x: &Tensor<T>, mode: Reduce) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        if h == 0 || w == 0 {
            return Err(SanetError::InvalidArg(
                "reduce_spatial requires H, W >= 1".into(),
            ));
        }
        let record = self.tracks(&[x]);
        let mut buf = vec![T::zero(); n * c];
        let mut argmax = Vec::new();
        match mode {
            Reduce::Avg => reduce::reduce_spatial_avg_forward((n, c, h, w), &x.data(), &mut buf),
            Reduce::Max => reduce::reduce_spatial_max_forward(
                (n, c, h, w),
                &x.data(),
                &mut buf,
                &mut argmax,
                record,
            ),
        }
        let out = Tensor::new(&[n, c, 1, 1], buf)?;
        if record {
            let out = out.requires_grad();
            self.push(Op::ReduceSpatial {
                x: x.clone(),
                out: out.clone(),
                mode,
                argmax,
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// Elementwise add/mul of equal shapes, or with one operand broadcast
    /// from `[N,1,H,W]` across channels or `[N,C,1,1]` across space.
    pub fn elementwise(
        &mut self,
        a: &Tensor<T>,
        b: &Tensor<T>,
        op: BinaryOp,
    ) -> Result<Tensor<T>> {
        let (bcast, swapped) = bcast_of(a.shape(), b.shape())?;
        let (full, small) = if swapped { (b, a) } else { (a, b) };
        let dims = match *full.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => (1, 1, 1, full.numel()),
        };
        let mut buf = vec![T::zero(); full.numel()];
        match op {
            BinaryOp::Add => elementwise::binary_forward(
                dims,
                bcast,
                &full.data(),
                &small.data(),
                &mut buf,
                |x, y| x + y,
            ),
            BinaryOp::Mul => elementwise::binary_forward(
                dims,
                bcast,
                &full.data(),
                &small.data(),
                &mut buf,
                |x, y| x * y,
            ),
        }
        let out = Tensor::new(full.shape(), buf)?;
        if self.tracks(&[a, b]) {
            let out = out.requires_grad();
            let rec = match op {
                BinaryOp::Add => Op::Add {
                    a: full.clone(),
                    b: small.clone(),
                    out: out.clone(),
                    bcast,
                },
                BinaryOp::Mul => Op::Mul {
                    a: full.clone(),
                    b: small.clone(),
                    out: out.clone(),
                    bcast,
                },
            };
            self.push(rec);
            return Ok(out);
        }
        Ok(out)
    }

    pub fn add(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(a, b, BinaryOp::Add)
    }

    pub fn mul(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        self.elementwise(a, b, BinaryOp::Mul)
    }

    /// Elementwise subtraction; equal shapes only.
    pub fn sub(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(SanetError::ShapeMismatch(format!(
                "sub operands differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let buf = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| *x - *y)
            .collect();
        let out = Tensor::new(a.shape(), buf)?;
        if self.tracks(&[a, b]) {
            let out = out.requires_grad();
            self.push(Op::Sub {
                a: a.clone(),
                b: b.clone(),
                out: out.clone(),
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// Elementwise division; equal shapes only.
    pub fn div(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        if a.shape() != b.shape() {
            return Err(SanetError::ShapeMismatch(format!(
                "div operands differ: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let buf = a
            .data()
            .iter()
            .zip(b.data().iter())
            .map(|(x, y)| *x / *y)
            .collect();
        let out = Tensor::new(a.shape(), buf)?;
        if self.tracks(&[a, b]) {
            let out = out.requires_grad();
            self.push(Op::Div {
                a: a.clone(),
                b: b.clone(),
                out: out.clone(),
            });
            return Ok(out);
        }
        Ok(out)
    }

    pub fn sigmoid(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let buf = x.data().iter().map(|&v| sigmoid_scalar(v)).collect();
        let out = Tensor::new(x.shape(), buf).unwrap();
        if self.tracks(&[x]) {
            let out = out.requires_grad();
            self.push(Op::Sigmoid {
                x: x.clone(),
                out: out.clone(),
            });
            return out;
        }
        out
    }

    pub fn relu(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let buf = x
            .data()
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        let out = Tensor::new(x.shape(), buf).unwrap();
        if self.tracks(&[x]) {
            let out = out.requires_grad();
            self.push(Op::Relu {
                x: x.clone(),
                out: out.clone(),
            });
            return out;
        }
        out
    }

    /// Concatenates along the channel dimension, `a` first then `b`.
    pub fn concat_channels(&mut self, a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, ca, h, w) = a.dims4()?;
        let (nb, cb, hb, wb) = b.dims4()?;
        if n != nb || h != hb || w != wb {
            return Err(SanetError::ShapeMismatch(format!(
                "concat_channels operands differ outside the channel dim: {:?} vs {:?}",
                a.shape(),
                b.shape()
            )));
        }
        let mut buf = vec![T::zero(); n * (ca + cb) * h * w];
        elementwise::concat_forward((n, ca, cb, h, w), &a.data(), &b.data(), &mut buf);
        let out = Tensor::new(&[n, ca + cb, h, w], buf)?;
        if self.tracks(&[a, b]) {
            let out = out.requires_grad();
            self.push(Op::Concat {
                a: a.clone(),
                b: b.clone(),
                out: out.clone(),
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// `y = mul*x + add` with scalar constants.
    pub fn affine(&mut self, x: &Tensor<T>, mul: T, add: T) -> Tensor<T> {
        let buf = x.data().iter().map(|&v| mul * v + add).collect();
        let out = Tensor::new(x.shape(), buf).unwrap();
        if self.tracks(&[x]) {
            let out = out.requires_grad();
            self.push(Op::Affine {
                x: x.clone(),
                out: out.clone(),
                mul,
            });
            return out;
        }
        out
    }

    /// `y = s*x` with a scalar constant.
    pub fn scale(&mut self, x: &Tensor<T>, s: T) -> Tensor<T> {
        self.affine(x, s, T::zero())
    }

    /// `y = s*x` where `s` is a single-element tensor (e.g. a learnable
    /// residual weight). Differentiable in both `x` and `s`.
    pub fn mul_scalar(&mut self, x: &Tensor<T>, s: &Tensor<T>) -> Result<Tensor<T>> {
        if s.numel() != 1 {
            return Err(SanetError::ShapeMismatch(format!(
                "mul_scalar expects a single-element scalar tensor, got shape {:?}",
                s.shape()
            )));
        }
        let sv = s.item();
        let buf = x.data().iter().map(|&v| sv * v).collect();
        let out = Tensor::new(x.shape(), buf)?;
        if self.tracks(&[x, s]) {
            let out = out.requires_grad();
            self.push(Op::MulScalar {
                x: x.clone(),
                s: s.clone(),
                out: out.clone(),
            });
            return Ok(out);
        }
        Ok(out)
    }

    /// Sum of all elements, as a shape-`[1]` tensor.
    pub fn sum_all(&mut self, x: &Tensor<T>) -> Tensor<T> {
        let mut acc = T::zero();
        for v in x.data().iter() {
            acc = acc + *v;
        }
        let out = Tensor::scalar(acc);
        if self.tracks(&[x]) {
            let out = out.requires_grad();
            self.push(Op::SumAll {
                x: x.clone(),
                out: out.clone(),
            });
            return out;
        }
        out
    }

    /// Batch normalization over `[N,C,H,W]` with per-channel statistics.
    ///
    /// In training mode the op normalizes with biased batch statistics and
    /// folds them into `running_mean`/`running_var` with the given momentum;
    /// in inference mode the running buffers are used as constants.
    #[allow(clippy::too_many_arguments)]
    pub fn batch_norm(
        &mut self,
        x: &Tensor<T>,
        gamma: &Tensor<T>,
        beta: &Tensor<T>,
        running_mean: &Tensor<T>,
        running_var: &Tensor<T>,
        training: bool,
        momentum: f64,
        eps: f64,
    ) -> Result<Tensor<T>> {
        let (n, c, h, w) = x.dims4()?;
        for (name, t) in [
            ("gamma", gamma),
            ("beta", beta),
            ("running_mean", running_mean),
            ("running_var", running_var),
        ] {
            if t.numel() != c {
                return Err(SanetError::ShapeMismatch(format!(
                    "batch_norm {} has {} elements, expected C={}",
                    name,
                    t.numel(),
                    c
                )));
            }
        }
        let eps_t = T::from_f64(eps);
        let (mean, inv_std) = if training {
            let (mean, inv_std) = norm::batch_stats((n, c, h, w), &x.data(), eps_t);
            let mom = T::from_f64(momentum);
            let keep = T::one() - mom;
            {
                let mut rm = running_mean.data_mut();
                let mut rv = running_var.data_mut();
                for ci in 0..c {
                    rm[ci] = keep * rm[ci] + mom * mean[ci];
                    let var = T::one() / (inv_std[ci] * inv_std[ci]) - eps_t;
                    rv[ci] = keep * rv[ci] + mom * var;
                }
            }
            (mean, inv_std)
        } else {
            let mean = running_mean.to_vec();
            let inv_std = running_var
                .data()
                .iter()
                .map(|&v| T::one() / (v + eps_t).sqrt())
                .collect();
            (mean, inv_std)
        };
        let mut buf = vec![T::zero(); x.numel()];
        norm::bn_forward(
            (n, c, h, w),
            &x.data(),
            &gamma.data(),
            &beta.data(),
            &mean,
            &inv_std,
            &mut buf,
        );
        let out = Tensor::new(x.shape(), buf)?;
        if self.tracks(&[x, gamma, beta]) {
            let out = out.requires_grad();
            self.push(Op::BatchNorm {
                x: x.clone(),
                gamma: gamma.clone(),
                beta: beta.clone(),
                out: out.clone(),
                mean,
                inv_std,
                training,
            });
            return Ok(out);
        }
        Ok(out)
    }
}

/// Propagates `grad_out` through one recorded op, accumulating into the
/// gradients of every tracked input.
pub(crate) fn backward_op<T: Scalar>(op: &Op<T>, grad_out: &[T]) {
    match op {
        Op::Conv2d {
            x,
            w,
            b,
            out,
            stride,
            pad,
        } => {
            let (n, cin, h, wd) = x.dims4().unwrap();
            let (cout, _, kh, kw) = w.dims4().unwrap();
            let (_, _, oh, ow) = out.dims4().unwrap();
            let geom = ConvGeom {
                n,
                cin,
                h,
                w: wd,
                cout,
                kh,
                kw,
                stride: *stride,
                pad: *pad,
                oh,
                ow,
            };
            if x.tracks_grad() {
                conv::conv2d_backward_x(&geom, &w.data(), grad_out, &mut x.grad_buf_mut());
            }
            if w.tracks_grad() {
                conv::conv2d_backward_w(&geom, &x.data(), grad_out, &mut w.grad_buf_mut());
            }
            if let Some(b) = b {
                if b.tracks_grad() {
                    conv::conv2d_backward_b(&geom, grad_out, &mut b.grad_buf_mut());
                }
            }
        }
        Op::TConv2d { x, w, out, stride } => {
            let (n, cin, h, wd) = x.dims4().unwrap();
            let (_, cout, kh, kw) = w.dims4().unwrap();
            let (_, _, oh, ow) = out.dims4().unwrap();
            let geom = TConvGeom {
                n,
                cin,
                h,
                w: wd,
                cout,
                kh,
                kw,
                stride: *stride,
                oh,
                ow,
            };
            if x.tracks_grad() {
                conv::tconv2d_backward_x(&geom, &w.data(), grad_out, &mut x.grad_buf_mut());
            }
            if w.tracks_grad() {
                conv::tconv2d_backward_w(&geom, &x.data(), grad_out, &mut w.grad_buf_mut());
            }
        }
        Op::MaxPool2d { x, argmax, .. } => {
            if x.tracks_grad() {
                reduce::max_pool2d_backward(argmax, grad_out, &mut x.grad_buf_mut());
            }
        }
        Op::ReduceChannels {
            x, mode, argmax, ..
        } => {
            if x.tracks_grad() {
                let dims = x.dims4().unwrap();
                match mode {
                    Reduce::Avg => {
                        reduce::reduce_channels_avg_backward(dims, grad_out, &mut x.grad_buf_mut())
                    }
                    Reduce::Max => reduce::reduce_channels_max_backward(
                        dims,
                        argmax,
                        grad_out,
                        &mut x.grad_buf_mut(),
                    ),
                }
            }
        }
        Op::ReduceSpatial {
            x, mode, argmax, ..
        } => {
            if x.tracks_grad() {
                let dims = x.dims4().unwrap();
                match mode {
                    Reduce::Avg => {
                        reduce::reduce_spatial_avg_backward(dims, grad_out, &mut x.grad_buf_mut())
                    }
                    Reduce::Max => reduce::reduce_spatial_max_backward(
                        dims,
                        argmax,
                        grad_out,
                        &mut x.grad_buf_mut(),
                    ),
                }
            }
        }
        Op::Add { a, b, out: _, bcast } => {
            let dims = dims_or_flat(a);
            if a.tracks_grad() {
                let mut da = a.grad_buf_mut();
                for (dv, gv) in da.iter_mut().zip(grad_out) {
                    *dv = *dv + *gv;
                }
            }
            if b.tracks_grad() {
                elementwise::reduce_to_bcast(dims, *bcast, grad_out, &mut b.grad_buf_mut());
            }
        }
        Op::Sub { a, b, .. } => {
            if a.tracks_grad() {
                let mut da = a.grad_buf_mut();
                for (dv, gv) in da.iter_mut().zip(grad_out) {
                    *dv = *dv + *gv;
                }
            }
            if b.tracks_grad() {
                let mut db = b.grad_buf_mut();
                for (dv, gv) in db.iter_mut().zip(grad_out) {
                    *dv = *dv - *gv;
                }
            }
        }
        Op::Mul { a, b, out: _, bcast } => {
            let dims = dims_or_flat(a);
            if a.tracks_grad() {
                elementwise::accumulate_with_bcast(
                    dims,
                    *bcast,
                    grad_out,
                    &b.data(),
                    &mut a.grad_buf_mut(),
                    |g, bv| g * bv,
                );
            }
            if b.tracks_grad() {
                // d_b = sum over broadcast dims of g * a
                let a_data = a.data();
                let prod: Vec<T> = grad_out
                    .iter()
                    .zip(a_data.iter())
                    .map(|(g, av)| *g * *av)
                    .collect();
                elementwise::reduce_to_bcast(dims, *bcast, &prod, &mut b.grad_buf_mut());
            }
        }
        Op::Div { a, b, .. } => {
            if a.tracks_grad() {
                let b_data = b.data();
                let mut da = a.grad_buf_mut();
                for ((dv, gv), bv) in da.iter_mut().zip(grad_out).zip(b_data.iter()) {
                    *dv = *dv + *gv / *bv;
                }
            }
            if b.tracks_grad() {
                let a_data = a.data();
                let b_data = b.data();
                let mut db = b.grad_buf_mut();
                for (((dv, gv), av), bv) in
                    db.iter_mut().zip(grad_out).zip(a_data.iter()).zip(b_data.iter())
                {
                    *dv = *dv - *gv * *av / (*bv * *bv);
                }
            }
        }
        Op::Sigmoid { x, out } => {
            if x.tracks_grad() {
                let y = out.data();
                let mut dx = x.grad_buf_mut();
                for ((dv, gv), yv) in dx.iter_mut().zip(grad_out).zip(y.iter()) {
                    *dv = *dv + *gv * *yv * (T::one() - *yv);
                }
            }
        }
        Op::Relu { x, .. } => {
            if x.tracks_grad() {
                let xd = x.data();
                let mut dx = x.grad_buf_mut();
                for ((dv, gv), xv) in dx.iter_mut().zip(grad_out).zip(xd.iter()) {
                    if *xv > T::zero() {
                        *dv = *dv + *gv;
                    }
                }
            }
        }
        Op::Concat { a, b, .. } => {
            let (n, ca, h, w) = a.dims4().unwrap();
            let (_, cb, _, _) = b.dims4().unwrap();
            let da = if a.tracks_grad() {
                Some(a.grad_buf_mut())
            } else {
                None
            };
            let db = if b.tracks_grad() {
                Some(b.grad_buf_mut())
            } else {
                None
            };
            let mut da = da;
            let mut db = db;
            elementwise::concat_backward_into(
                (n, ca, cb, h, w),
                grad_out,
                da.as_deref_mut().map(|v| v.as_mut_slice()),
                db.as_deref_mut().map(|v| v.as_mut_slice()),
            );
        }
        Op::Affine { x, mul, .. } => {
            if x.tracks_grad() {
                let m = *mul;
                let mut dx = x.grad_buf_mut();
                for (dv, gv) in dx.iter_mut().zip(grad_out) {
                    *dv = *dv + m * *gv;
                }
            }
        }
        Op::MulScalar { x, s, .. } => {
            if x.tracks_grad() {
                let sv = s.item();
                let mut dx = x.grad_buf_mut();
                for (dv, gv) in dx.iter_mut().zip(grad_out) {
                    *dv = *dv + sv * *gv;
                }
            }
            if s.tracks_grad() {
                let xd = x.data();
                let mut acc = T::zero();
                for (gv, xv) in grad_out.iter().zip(xd.iter()) {
                    acc = acc + *gv * *xv;
                }
                s.accumulate_grad(&[acc]);
            }
        }
        Op::SumAll { x, .. } => {
            if x.tracks_grad() {
                let g = grad_out[0];
                let mut dx = x.grad_buf_mut();
                for dv in dx.iter_mut() {
                    *dv = *dv + g;
                }
            }
        }
        Op::BatchNorm {
            x,
            gamma,
            beta,
            out: _,
            mean,
            inv_std,
            training,
        } => {
            let dims = x.dims4().unwrap();
            let c = dims.1;
            let mut sum_g = vec![T::zero(); c];
            let mut sum_g_xhat = vec![T::zero(); c];
            norm::bn_grad_sums(
                dims,
                &x.data(),
                mean,
                inv_std,
                grad_out,
                &mut sum_g,
                &mut sum_g_xhat,
            );
            if gamma.tracks_grad() {
                gamma.accumulate_grad(&sum_g_xhat);
            }
            if beta.tracks_grad() {
                beta.accumulate_grad(&sum_g);
            }
            if x.tracks_grad() {
                if *training {
                    norm::bn_backward_x_training(
                        dims,
                        &x.data(),
                        &gamma.data(),
                        mean,
                        inv_std,
                        grad_out,
                        &sum_g,
                        &sum_g_xhat,
                        &mut x.grad_buf_mut(),
                    );
                } else {
                    norm::bn_backward_x_inference(
                        dims,
                        &gamma.data(),
                        inv_std,
                        grad_out,
                        &mut x.grad_buf_mut(),
                    );
                }
            }
        }
    }
}

fn dims_or_flat<T: Scalar>(t: &Tensor<T>) -> (usize, usize, usize, usize) {
    match *t.shape() {
        [n, c, h, w] => (n, c, h, w),
        _ => (1, 1, 1, t.numel()),
    }
}
