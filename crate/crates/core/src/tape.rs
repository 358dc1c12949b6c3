//! Gradient tape: an ordered record of executed operations, replayed in
//! reverse to propagate adjoints.
//!
//! Ops append a record when the tape is recording and at least one input is
//! gradient-tracked. The tape is confined to a single thread; there is no
//! concurrent backward.

use crate::error::{Result, SanetError};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Per-side zero padding for convolution, in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Pad {
    pub top: usize,
    pub bottom: usize,
    pub left: usize,
    pub right: usize,
}

impl Pad {
    pub const ZERO: Pad = Pad {
        top: 0,
        bottom: 0,
        left: 0,
        right: 0,
    };

    pub fn symmetric(p: usize) -> Pad {
        Pad {
            top: p,
            bottom: p,
            left: p,
            right: p,
        }
    }

    pub fn new(top: usize, bottom: usize, left: usize, right: usize) -> Pad {
        Pad {
            top,
            bottom,
            left,
            right,
        }
    }
}

/// Reduction flavor for the pooling-style ops.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Reduce {
    Avg,
    Max,
}

/// Broadcast form of a binary elementwise op. `b` is always the small
/// operand; only the two shapes the architecture needs are supported.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub(crate) enum Bcast {
    /// Identical shapes.
    None,
    /// `b` is `[N,1,H,W]`, broadcast across channels.
    Channel,
    /// `b` is `[N,C,1,1]`, broadcast across spatial positions.
    Spatial,
}

pub(crate) enum Op<T: Scalar> {
    Conv2d {
        x: Tensor<T>,
        w: Tensor<T>,
        b: Option<Tensor<T>>,
        out: Tensor<T>,
        stride: usize,
        pad: Pad,
    },
    TConv2d {
        x: Tensor<T>,
        w: Tensor<T>,
        out: Tensor<T>,
        stride: usize,
    },
    MaxPool2d {
        x: Tensor<T>,
        out: Tensor<T>,
        argmax: Vec<u32>,
    },
    ReduceChannels {
        x: Tensor<T>,
        out: Tensor<T>,
        mode: Reduce,
        argmax: Vec<u32>,
    },
    ReduceSpatial {
        x: Tensor<T>,
        out: Tensor<T>,
        mode: Reduce,
        argmax: Vec<u32>,
    },
    Add {
        a: Tensor<T>,
        b: Tensor<T>,
        out: Tensor<T>,
        bcast: Bcast,
    },
    Sub {
        a: Tensor<T>,
        b: Tensor<T>,
        out: Tensor<T>,
    },
    Mul {
        a: Tensor<T>,
        b: Tensor<T>,
        out: Tensor<T>,
        bcast: Bcast,
    },
    Div {
        a: Tensor<T>,
        b: Tensor<T>,
        out: Tensor<T>,
    },
    Sigmoid {
        x: Tensor<T>,
        out: Tensor<T>,
    },
    Relu {
        x: Tensor<T>,
        out: Tensor<T>,
    },
    Concat {
        a: Tensor<T>,
        b: Tensor<T>,
        out: Tensor<T>,
    },
    Affine {
        x: Tensor<T>,
        out: Tensor<T>,
        mul: T,
    },
    MulScalar {
        x: Tensor<T>,
        s: Tensor<T>,
        out: Tensor<T>,
    },
    SumAll {
        x: Tensor<T>,
        out: Tensor<T>,
    },
    BatchNorm {
        x: Tensor<T>,
        gamma: Tensor<T>,
        beta: Tensor<T>,
        out: Tensor<T>,
        mean: Vec<T>,
        inv_std: Vec<T>,
        training: bool,
    },
}

impl<T: Scalar> Op<T> {
    fn output(&self) -> &Tensor<T> {
        match self {
            Op::Conv2d { out, .. }
            | Op::TConv2d { out, .. }
            | Op::MaxPool2d { out, .. }
            | Op::ReduceChannels { out, .. }
            | Op::ReduceSpatial { out, .. }
            | Op::Add { out, .. }
            | Op::Sub { out, .. }
            | Op::Mul { out, .. }
            | Op::Div { out, .. }
            | Op::Sigmoid { out, .. }
            | Op::Relu { out, .. }
            | Op::Concat { out, .. }
            | Op::Affine { out, .. }
            | Op::MulScalar { out, .. }
            | Op::SumAll { out, .. }
            | Op::BatchNorm { out, .. } => out,
        }
    }
}

/// Ordered record of executed ops. Backward visits each op exactly once, in
/// reverse execution order.
pub struct Tape<T: Scalar> {
    pub(crate) records: Vec<Op<T>>,
    recording: bool,
}

impl<T: Scalar> Default for Tape<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Tape {
            records: Vec::new(),
            recording: true,
        }
    }

    /// A tape that never records; use for pure inference.
    pub fn no_grad() -> Self {
        Tape {
            records: Vec::new(),
            recording: false,
        }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// True when the op producing an output from these inputs must go on the
    /// tape (and the output therefore tracks gradients).
    pub(crate) fn tracks(&self, inputs: &[&Tensor<T>]) -> bool {
        self.recording && inputs.iter().any(|t| t.tracks_grad())
    }

    pub(crate) fn push(&mut self, op: Op<T>) {
        self.records.push(op);
    }

    /// Propagates `d(output)/d(leaf)` into the gradient buffer of every
    /// tracked leaf reachable from `output`. Repeated calls accumulate into
    /// leaf gradients; intermediate gradients are reset on each call.
    pub fn backward(&self, output: &Tensor<T>) -> Result<()> {
        if output.numel() != 1 {
            return Err(SanetError::InvalidArg(format!(
                "backward requires a scalar output, got shape {:?}",
                output.shape()
            )));
        }
        if !output.tracks_grad() {
            return Err(SanetError::InvalidArg(
                "backward output does not track gradients (nothing on the tape feeds it)".into(),
            ));
        }

        // Intermediates (op outputs) restart from scratch; true leaves are
        // never an op output, so their gradients accumulate across calls.
        for op in &self.records {
            op.output().clear_grad();
        }
        output.accumulate_grad(&[T::one()]);

        for op in self.records.iter().rev() {
            // Borrow rather than clone: the adjoint kernels only write the
            // *inputs'* gradient cells, never the output's.
            let guard = op.output().grad_ref();
            let Some(grad_out) = guard.as_ref() else {
                continue; // no gradient flowed to this op's output
            };
            ops::backward_op(op, grad_out);
        }
        Ok(())
    }
}
