//! Building-block layers: convolution, batch norm, conv-bn-relu units,
//! transposed convolution, and the parameter registry they feed.

use crate::error::Result;
use crate::init::{kaiming_uniform, SeedRng};
use crate::scalar::Scalar;
use crate::tape::{Pad, Tape};
use crate::tensor::Tensor;

/// Whether a registered tensor is optimized or just persisted (batch-norm
/// running statistics, fixed residual weights).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Trainable,
    Buffer,
}

/// One named tensor of a model, in deterministic registry order. The name is
/// the checkpoint key.
pub struct ParamEntry<T: Scalar> {
    pub name: String,
    pub tensor: Tensor<T>,
    pub kind: ParamKind,
}

impl<T: Scalar> ParamEntry<T> {
    pub fn trainable(name: String, tensor: &Tensor<T>) -> Self {
        ParamEntry {
            name,
            tensor: tensor.clone(),
            kind: ParamKind::Trainable,
        }
    }

    pub fn buffer(name: String, tensor: &Tensor<T>) -> Self {
        ParamEntry {
            name,
            tensor: tensor.clone(),
            kind: ParamKind::Buffer,
        }
    }
}

pub struct Conv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub pad: Pad,
}

impl<T: Scalar> Conv2d<T> {
    pub fn new(
        rng: &mut SeedRng,
        cin: usize,
        cout: usize,
        kh: usize,
        kw: usize,
        pad: Pad,
        with_bias: bool,
    ) -> Self {
        let weight = kaiming_uniform(rng, &[cout, cin, kh, kw], cin * kh * kw);
        let bias = with_bias.then(|| Tensor::zeros(&[cout]).requires_grad());
        Conv2d {
            weight,
            bias,
            stride: 1,
            pad,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        tape.conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.pad)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        out.push(ParamEntry::trainable(format!("{prefix}.w"), &self.weight));
        if let Some(b) = &self.bias {
            out.push(ParamEntry::trainable(format!("{prefix}.b"), b));
        }
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel() + self.bias.as_ref().map_or(0, |b| b.numel())
    }

    /// MACs for one forward pass at the given input spatial size.
    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (cout, cin, kh, kw) = self.weight.dims4().unwrap();
        let oh = (h + self.pad.top + self.pad.bottom - kh) / self.stride + 1;
        let ow = (w + self.pad.left + self.pad.right - kw) / self.stride + 1;
        (cout * cin * kh * kw * oh * ow) as u64
    }
}

pub struct BatchNorm2d<T: Scalar> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Scalar> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: Tensor::full(&[channels], T::one()).requires_grad(),
            beta: Tensor::zeros(&[channels]).requires_grad(),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::full(&[channels], T::one()),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        tape.batch_norm(
            x,
            &self.gamma,
            &self.beta,
            &self.running_mean,
            &self.running_var,
            training,
            self.momentum,
            self.eps,
        )
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        out.push(ParamEntry::trainable(format!("{prefix}.bn.gamma"), &self.gamma));
        out.push(ParamEntry::trainable(format!("{prefix}.bn.beta"), &self.beta));
        out.push(ParamEntry::buffer(format!("{prefix}.bn.mean"), &self.running_mean));
        out.push(ParamEntry::buffer(format!("{prefix}.bn.var"), &self.running_var));
    }

    pub fn param_count(&self) -> usize {
        self.gamma.numel() + self.beta.numel()
    }
}

/// conv 3x3 -> batch norm -> relu, the standard encoder/decoder unit.
pub struct ConvBnRelu<T: Scalar> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
}

impl<T: Scalar> ConvBnRelu<T> {
    pub fn new(rng: &mut SeedRng, cin: usize, cout: usize, k: usize) -> Self {
        ConvBnRelu {
            conv: Conv2d::new(rng, cin, cout, k, k, Pad::symmetric(k / 2), true),
            bn: BatchNorm2d::new(cout),
        }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>, training: bool) -> Result<Tensor<T>> {
        let y = self.conv.forward(tape, x)?;
        let y = self.bn.forward(tape, &y, training)?;
        Ok(tape.relu(&y))
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        self.conv.collect_params(prefix, out);
        self.bn.collect_params(prefix, out);
    }

    pub fn param_count(&self) -> usize {
        self.conv.param_count() + self.bn.param_count()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        self.conv.macs(h, w)
    }
}

/// Stride-2 2x2 transposed convolution: exact spatial doubling, used by the
/// decoder's upsampling path. Kernel layout `[Cin,Cout,2,2]`, no bias.
pub struct TransposedConv2d<T: Scalar> {
    pub weight: Tensor<T>,
    pub stride: usize,
}

impl<T: Scalar> TransposedConv2d<T> {
    pub fn new(rng: &mut SeedRng, cin: usize, cout: usize) -> Self {
        let weight = kaiming_uniform(rng, &[cin, cout, 2, 2], cin * 4);
        TransposedConv2d { weight, stride: 2 }
    }

    pub fn forward(&self, tape: &mut Tape<T>, x: &Tensor<T>) -> Result<Tensor<T>> {
        tape.transposed_conv2d(x, &self.weight, self.stride)
    }

    pub fn collect_params(&self, prefix: &str, out: &mut Vec<ParamEntry<T>>) {
        out.push(ParamEntry::trainable(format!("{prefix}.w"), &self.weight));
    }

    pub fn param_count(&self) -> usize {
        self.weight.numel()
    }

    pub fn macs(&self, h: usize, w: usize) -> u64 {
        let (cin, cout, kh, kw) = self.weight.dims4().unwrap();
        (cin * cout * kh * kw * h * w) as u64
    }
}
