//! Minimal reverse-mode automatic differentiation over dense arrays.
//!
//! A [`Tensor`] is a dense row-major array with an optional gradient buffer.
//! A [`Graph`] records every executed operation onto a tape; [`Graph::backward`]
//! replays the tape in reverse to populate gradients. The operation set is
//! exactly what the decoder architectures need — no broadcasting machinery,
//! no fusion, no device abstraction.

mod gradcheck;
mod ops;

pub use gradcheck::{grad_check, grad_check_params};
pub use ops::Activation;
pub(crate) use ops::{sigmoid, softplus};

use std::cell::{Cell, RefCell};
use std::fmt;
use std::rc::Rc;

use crate::error::{Error, Result};

/// Scalar element type: `f32` by default, `f64` for gradient verification.
pub trait Scalar:
    num_traits::Float
    + num_traits::FromPrimitive
    + num_traits::ToPrimitive
    + std::iter::Sum
    + fmt::Debug
    + fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
}

impl Scalar for f32 {}
impl Scalar for f64 {}

/// Shorthand for lifting an `f64` literal into the scalar type.
pub(crate) fn lit<F: Scalar>(x: f64) -> F {
    F::from_f64(x).expect("literal representable in scalar type")
}

struct TensorInner<F: Scalar> {
    shape: Vec<usize>,
    data: RefCell<Vec<F>>,
    grad: RefCell<Option<Vec<F>>>,
    requires_grad: Cell<bool>,
}

/// Dense numeric array participating in a differentiation graph.
///
/// Cloning a `Tensor` is cheap and aliases the same storage; parameters stay
/// alive across optimizer steps while tapes come and go.
pub struct Tensor<F: Scalar> {
    inner: Rc<TensorInner<F>>,
}

impl<F: Scalar> Clone for Tensor<F> {
    fn clone(&self) -> Self {
        Tensor { inner: Rc::clone(&self.inner) }
    }
}

impl<F: Scalar> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("requires_grad", &self.inner.requires_grad.get())
            .finish()
    }
}

impl<F: Scalar> Tensor<F> {
    pub fn from_data(shape: &[usize], data: Vec<F>) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != data.len() {
            return Err(Error::shape(
                "Tensor::from_data",
                format!("shape {:?} implies {} elements, got {}", shape, numel, data.len()),
            ));
        }
        Ok(Tensor {
            inner: Rc::new(TensorInner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                requires_grad: Cell::new(false),
            }),
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor::from_data(shape, vec![F::zero(); numel]).expect("consistent by construction")
    }

    pub fn scalar(x: F) -> Self {
        Tensor::from_data(&[1], vec![x]).expect("consistent by construction")
    }

    /// Marks this tensor as a learnable parameter.
    pub fn requires_grad(self) -> Self {
        self.inner.requires_grad.set(true);
        self
    }

    pub fn is_param(&self) -> bool {
        self.inner.requires_grad.get()
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn numel(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn to_vec(&self) -> Vec<F> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> F {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on non-scalar tensor");
        d[0]
    }

    /// Runs `f` over an immutable view of the data.
    pub fn with_data<R>(&self, f: impl FnOnce(&[F]) -> R) -> R {
        f(&self.inner.data.borrow())
    }

    /// Replaces the stored values; the shape must not change.
    pub fn set_data(&self, data: Vec<F>) {
        assert_eq!(data.len(), self.numel(), "set_data length mismatch");
        *self.inner.data.borrow_mut() = data;
    }

    /// In-place update of the stored values.
    pub fn update_data(&self, f: impl FnOnce(&mut [F])) {
        f(&mut self.inner.data.borrow_mut());
    }

    pub fn grad(&self) -> Option<Vec<F>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    pub fn accumulate_grad(&self, delta: &[F]) {
        assert_eq!(delta.len(), self.numel(), "gradient length mismatch");
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            Some(buf) => {
                for (b, d) in buf.iter_mut().zip(delta) {
                    *b = *b + *d;
                }
            }
            None => *g = Some(delta.to_vec()),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.inner.data.borrow().iter().all(|v| v.is_finite())
    }

    /// Converts element type (e.g. f32 checkpoint → f64 verification).
    pub fn cast<G: Scalar>(&self) -> Tensor<G> {
        let data = self
            .inner
            .data
            .borrow()
            .iter()
            .map(|v| G::from_f64(v.to_f64().unwrap()).unwrap())
            .collect();
        let t = Tensor::from_data(self.shape(), data).expect("same shape");
        if self.is_param() {
            t.requires_grad()
        } else {
            t
        }
    }

    /// True when both tensors alias the same storage.
    pub fn same_storage(&self, other: &Tensor<F>) -> bool {
        Rc::ptr_eq(&self.inner, &other.inner)
    }
}

/// Train/eval switch for operations with mode-dependent semantics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Running mean/variance for batch normalization, updated in train mode.
#[derive(Debug, Clone)]
pub struct BatchNormState<F: Scalar> {
    pub running_mean: Vec<F>,
    pub running_var: Vec<F>,
    pub momentum: F,
    pub eps: F,
    pub updates: u64,
    /// When set, train-mode forwards stop updating the running statistics.
    pub frozen: bool,
}

impl<F: Scalar> BatchNormState<F> {
    pub fn new(features: usize) -> Self {
        BatchNormState {
            running_mean: vec![F::zero(); features],
            running_var: vec![F::one(); features],
            momentum: lit(0.1),
            eps: lit(1e-5),
            updates: 0,
            frozen: false,
        }
    }
}

type TapeOp = Box<dyn FnMut()>;

/// Execution context recording operations for reverse-mode differentiation.
///
/// One graph is owned by one execution context; a tape built by a sequence of
/// forward calls is consumed by the next [`Graph::backward`]. Gradients
/// accumulate across forward/backward cycles until explicitly zeroed, which is
/// how minibatch accumulation works.
pub struct Graph<F: Scalar> {
    tape: RefCell<Vec<TapeOp>>,
    recording: bool,
    _marker: std::marker::PhantomData<F>,
}

impl<F: Scalar> Default for Graph<F> {
    fn default() -> Self {
        Self::new()
    }
}

impl<F: Scalar> Graph<F> {
    /// A recording graph for training and gradient checks.
    pub fn new() -> Self {
        Graph { tape: RefCell::new(Vec::new()), recording: true, _marker: Default::default() }
    }

    /// A non-recording graph: forward only, no tape, no gradient buffers.
    pub fn inference() -> Self {
        Graph { tape: RefCell::new(Vec::new()), recording: false, _marker: Default::default() }
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    pub(crate) fn record(&self, op: impl FnMut() + 'static) {
        if self.recording {
            self.tape.borrow_mut().push(Box::new(op));
        }
    }

    pub fn tape_len(&self) -> usize {
        self.tape.borrow().len()
    }

    /// Propagates adjoints from a scalar loss back through every recorded
    /// operation. The tape recorded since the previous backward is consumed;
    /// gradients on leaf tensors accumulate until zeroed.
    pub fn backward(&self, loss: &Tensor<F>) -> Result<()> {
        if loss.numel() != 1 {
            return Err(Error::arg(
                "backward",
                format!("expected scalar loss, got shape {:?}", loss.shape()),
            ));
        }
        if !self.recording {
            return Err(Error::arg("backward", "graph is in inference mode"));
        }
        loss.accumulate_grad(&[F::one()]);
        let mut tape = std::mem::take(&mut *self.tape.borrow_mut());
        for op in tape.iter_mut().rev() {
            op();
        }
        Ok(())
    }
}
