//! Dense N-dimensional tensor with optional gradient storage.
//!
//! Layout is row-major and contiguous; activations use NCHW. A `Tensor` is a
//! cheap handle (`Rc`) onto shared storage, so tape records and model structs
//! can alias the same buffer. Data and gradient live in separate cells so the
//! backward pass can read an operand's values while accumulating into its
//! gradient.

use std::cell::{Ref, RefCell, RefMut};
use std::rc::Rc;

use crate::error::{Result, SanetError};
use crate::scalar::Scalar;

struct TensorCell<T: Scalar> {
    shape: Vec<usize>,
    requires_grad: bool,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
}

/// Shared handle onto a dense tensor. Cloning is O(1) and aliases storage.
pub struct Tensor<T: Scalar> {
    cell: Rc<TensorCell<T>>,
}

impl<T: Scalar> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            cell: Rc::clone(&self.cell),
        }
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(SanetError::ShapeMismatch(format!(
                "shape {:?} implies {} elements, buffer holds {}",
                shape,
                numel,
                data.len()
            )));
        }
        Ok(Tensor {
            cell: Rc::new(TensorCell {
                shape: shape.to_vec(),
                requires_grad: false,
                data: RefCell::new(data),
                grad: RefCell::new(None),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            cell: Rc::new(TensorCell {
                shape: shape.to_vec(),
                requires_grad: false,
                data: RefCell::new(vec![value; numel]),
                grad: RefCell::new(None),
            }),
        }
    }

    /// Shape-`[1]` tensor holding a single value.
    pub fn scalar(value: T) -> Self {
        Tensor::full(&[1], value)
    }

    pub fn from_f64_slice(shape: &[usize], data: &[f64]) -> Result<Self> {
        Tensor::new(shape, data.iter().map(|&v| T::from_f64(v)).collect())
    }

    /// Marks the tensor as gradient-tracked. Consumes and returns the handle
    /// so construction reads as `Tensor::zeros(..).requires_grad()`. Leaves
    /// get this from the caller; op outputs get it when they land on a tape.
    pub fn requires_grad(self) -> Self {
        // Grad tracking is fixed at creation; aliased handles must not flip
        // it after the fact.
        match Rc::try_unwrap(self.cell) {
            Ok(mut cell) => {
                cell.requires_grad = true;
                Tensor {
                    cell: Rc::new(cell),
                }
            }
            Err(_) => panic!("requires_grad must be set before the tensor is shared"),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.cell.shape
    }

    pub fn numel(&self) -> usize {
        self.cell.shape.iter().product()
    }

    pub fn tracks_grad(&self) -> bool {
        self.cell.requires_grad
    }

    /// Interprets the shape as NCHW, failing on any other rank.
    pub fn dims4(&self) -> Result<(usize, usize, usize, usize)> {
        match *self.cell.shape.as_slice() {
            [n, c, h, w] => Ok((n, c, h, w)),
            ref s => Err(SanetError::ShapeMismatch(format!(
                "expected a rank-4 NCHW tensor, got shape {:?}",
                s
            ))),
        }
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.cell.data.borrow()
    }

    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.cell.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.cell.data.borrow().clone()
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.numel(), 1, "item() on a non-scalar tensor");
        self.cell.data.borrow()[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.cell.grad.borrow().clone()
    }

    pub fn grad_ref(&self) -> Ref<'_, Option<Vec<T>>> {
        self.cell.grad.borrow()
    }

    pub fn clear_grad(&self) {
        *self.cell.grad.borrow_mut() = None;
    }

    /// Adds `delta` into the gradient buffer, allocating zeros on first use.
    pub fn accumulate_grad(&self, delta: &[T]) {
        debug_assert_eq!(delta.len(), self.numel());
        let mut slot = self.cell.grad.borrow_mut();
        match slot.as_mut() {
            Some(g) => {
                for (gi, di) in g.iter_mut().zip(delta) {
                    *gi = *gi + *di;
                }
            }
            None => *slot = Some(delta.to_vec()),
        }
    }

    /// Hands the backward kernels a zero-filled gradient buffer to write into.
    pub(crate) fn grad_buf_mut(&self) -> RefMut<'_, Vec<T>> {
        {
            let mut slot = self.cell.grad.borrow_mut();
            if slot.is_none() {
                *slot = Some(vec![T::zero(); self.numel()]);
            }
        }
        RefMut::map(self.cell.grad.borrow_mut(), |o| o.as_mut().unwrap())
    }

    /// Same-valued copy that does not track gradients.
    pub fn detached(&self) -> Tensor<T> {
        Tensor::new(self.shape(), self.to_vec()).unwrap()
    }

    /// Two handles referencing the same storage.
    pub fn same_storage(&self, other: &Tensor<T>) -> bool {
        Rc::ptr_eq(&self.cell, &other.cell)
    }

    pub fn all_finite(&self) -> bool {
        self.cell.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Exact comparison on shape and element bit patterns.
    pub fn bits_eq(&self, other: &Tensor<T>) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data().iter())
                .all(|(a, b)| a.to_bits_u64() == b.to_bits_u64())
    }

    pub fn approx_eq(&self, other: &Tensor<T>, tol: f64) -> bool {
        self.shape() == other.shape()
            && self
                .data()
                .iter()
                .zip(other.data().iter())
                .all(|(a, b)| (a.as_f64() - b.as_f64()).abs() <= tol)
    }

    /// Copies out channels `[from, to)` of an NCHW tensor.
    pub fn slice_channels(&self, from: usize, to: usize) -> Result<Tensor<T>> {
        let (n, c, h, w) = self.dims4()?;
        if from >= to || to > c {
            return Err(SanetError::InvalidArg(format!(
                "channel slice {}..{} out of range for {} channels",
                from, to, c
            )));
        }
        let cs = to - from;
        let data = self.data();
        let mut out = Vec::with_capacity(n * cs * h * w);
        for ni in 0..n {
            let base = (ni * c + from) * h * w;
            out.extend_from_slice(&data[base..base + cs * h * w]);
        }
        Tensor::new(&[n, cs, h, w], out)
    }

    /// Element-type conversion (f32 <-> f64).
    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        let data = self
            .data()
            .iter()
            .map(|&v| U::from_f64(v.as_f64()))
            .collect();
        let t = Tensor::new(self.shape(), data).unwrap();
        if self.tracks_grad() {
            t.requires_grad()
        } else {
            t
        }
    }
}

impl<T: Scalar> std::fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(
            f,
            "Tensor{:?}(requires_grad={})",
            self.shape(),
            self.tracks_grad()
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_buffer_mismatch_is_rejected() {
        let err = Tensor::<f32>::new(&[2, 3], vec![0.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("6 elements"), "{msg}");
        assert!(msg.contains("5"), "{msg}");
    }

    #[test]
    fn grad_accumulates_until_cleared() {
        let t = Tensor::<f64>::zeros(&[3]).requires_grad();
        t.accumulate_grad(&[1.0, 2.0, 3.0]);
        t.accumulate_grad(&[1.0, 1.0, 1.0]);
        assert_eq!(t.grad().unwrap(), vec![2.0, 3.0, 4.0]);
        t.clear_grad();
        assert!(t.grad().is_none());
    }

    #[test]
    fn channel_slice_recovers_block() {
        let t = Tensor::<f32>::new(&[1, 3, 1, 2], vec![0., 1., 10., 11., 20., 21.]).unwrap();
        let mid = t.slice_channels(1, 2).unwrap();
        assert_eq!(mid.shape(), &[1, 1, 1, 2]);
        assert_eq!(mid.to_vec(), vec![10., 11.]);
    }

    #[test]
    fn cast_round_trip_preserves_f32_values() {
        let t = Tensor::<f32>::new(&[2], vec![0.1, -3.5]).unwrap();
        let back: Tensor<f32> = t.cast::<f64>().cast::<f32>();
        assert!(t.bits_eq(&back));
    }
}
