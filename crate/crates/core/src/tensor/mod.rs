//! Dense tensor engine with reverse-mode automatic differentiation.
//!
//! Tensors are reference-counted graph nodes. Every operation produces a new
//! tensor recording its parents and a backward rule; calling [`Tensor::backward`]
//! on a scalar walks the graph in reverse topological order and accumulates
//! gradients into every tensor that needs them. Gradients accumulate additively
//! until [`Tensor::zero_grad`] is called.
//!
//! Training runs in `f32`; gradient-check tests instantiate the same code at
//! `f64`, where central finite differences are reliable.

mod conv;
mod linalg;
mod loss;
mod norm;
mod pool;

pub use conv::conv_out_dim;
pub use norm::{batch_norm, group_norm};

use std::cell::{Ref, RefCell, RefMut};
use std::collections::HashSet;
use std::fmt;
use std::rc::Rc;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite input to {0}")]
    NonFiniteInput(&'static str),
    #[error("backward requires a scalar tensor, got shape {0:?}")]
    NotScalar(Vec<usize>),
}

/// Raise glibc's mmap/trim thresholds once per process so the multi-megabyte
/// scratch buffers conv and matmul allocate every call stay in the malloc
/// arena. With the defaults each one is a fresh mmap/munmap cycle and the
/// page-fault churn rivals the arithmetic itself.
pub fn tune_allocator() {
    static ONCE: std::sync::Once = std::sync::Once::new();
    ONCE.call_once(|| unsafe {
        libc::mallopt(libc::M_MMAP_THRESHOLD, 512 << 20);
        libc::mallopt(libc::M_TRIM_THRESHOLD, 512 << 20);
    });
}

/// Scalar element type of a tensor. Implemented for `f32` and `f64`.
pub trait Real:
    num_traits::Float + num_traits::NumAssign + std::iter::Sum + fmt::Debug + fmt::Display + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;

    /// Padé(7,6) approximation of tanh on a [-4, 4]-clamped argument.
    /// Branch-free, so activation layers autovectorize instead of paying a
    /// libm call per element; absolute error stays under 7e-4 and the
    /// clamp makes it flat (saturated) outside the fitted range.
    fn fast_tanh(self) -> Self {
        let four = Self::from_f64(4.0);
        let z = self.max(-four).min(four);
        let z2 = z * z;
        let p = z
            * (Self::from_f64(10395.0)
                + z2 * (Self::from_f64(1260.0) + z2 * Self::from_f64(21.0)));
        let q = Self::from_f64(10395.0)
            + z2 * (Self::from_f64(4725.0) + z2 * (Self::from_f64(210.0) + z2));
        p / q
    }

    /// Exact derivative of [`Real::fast_tanh`] (quotient rule on the Padé
    /// form, zero in the clamped region) — not the analytic sech²; backward
    /// passes must differentiate what the forward actually computed.
    fn fast_tanh_grad(self) -> Self {
        let four = Self::from_f64(4.0);
        if self.abs() >= four {
            return Self::zero();
        }
        let z = self;
        let z2 = z * z;
        let p = z
            * (Self::from_f64(10395.0)
                + z2 * (Self::from_f64(1260.0) + z2 * Self::from_f64(21.0)));
        let q = Self::from_f64(10395.0)
            + z2 * (Self::from_f64(4725.0) + z2 * (Self::from_f64(210.0) + z2));
        let dp = Self::from_f64(10395.0)
            + z2 * (Self::from_f64(3780.0) + z2 * Self::from_f64(105.0));
        let dq = z
            * (Self::from_f64(9450.0)
                + z2 * (Self::from_f64(840.0) + z2 * Self::from_f64(6.0)));
        (dp * q - p * dq) / (q * q)
    }
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

type BackwardFn<T> = Box<dyn Fn(&[T], &[Tensor<T>])>;

struct Node<T: Real> {
    parents: Vec<Tensor<T>>,
    backward: BackwardFn<T>,
}

struct Inner<T: Real> {
    shape: Vec<usize>,
    data: RefCell<Vec<T>>,
    grad: RefCell<Option<Vec<T>>>,
    needs_grad: bool,
    node: Option<Node<T>>,
}

/// Dense multi-dimensional array participating in an autodiff graph.
pub struct Tensor<T: Real> {
    inner: Rc<Inner<T>>,
}

impl<T: Real> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Rc::clone(&self.inner),
        }
    }
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.inner.shape)
            .field("needs_grad", &self.inner.needs_grad)
            .finish()
    }
}

impl<T: Real> Tensor<T> {
    /// Constant leaf tensor (no gradient).
    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(
            shape.iter().product::<usize>(),
            data.len(),
            "data length must equal product of shape"
        );
        Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                needs_grad: false,
                node: None,
            }),
        }
    }

    /// Trainable leaf tensor.
    pub fn param(shape: &[usize], data: Vec<T>) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        Tensor {
            inner: Rc::new(Inner {
                shape: shape.to_vec(),
                data: RefCell::new(data),
                grad: RefCell::new(None),
                needs_grad: true,
                node: None,
            }),
        }
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::from_vec(shape, vec![T::zero(); shape.iter().product()])
    }

    pub fn scalar(v: T) -> Self {
        Tensor::from_vec(&[1], vec![v])
    }

    /// Interior node produced by an op. Prunes the backward rule when no
    /// parent needs a gradient.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        backward: BackwardFn<T>,
    ) -> Self {
        assert_eq!(shape.iter().product::<usize>(), data.len());
        let needs_grad = parents.iter().any(|p| p.inner.needs_grad);
        let node = if needs_grad {
            Some(Node { parents, backward })
        } else {
            None
        };
        Tensor {
            inner: Rc::new(Inner {
                shape,
                data: RefCell::new(data),
                grad: RefCell::new(None),
                needs_grad,
                node,
            }),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn len(&self) -> usize {
        self.inner.shape.iter().product()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn needs_grad(&self) -> bool {
        self.inner.needs_grad
    }

    pub fn data(&self) -> Ref<'_, Vec<T>> {
        self.inner.data.borrow()
    }

    /// Mutable access to raw values. Used by the optimizer; never call while
    /// a forward graph built from this tensor is still pending backward.
    pub fn data_mut(&self) -> RefMut<'_, Vec<T>> {
        self.inner.data.borrow_mut()
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.inner.data.borrow().clone()
    }

    pub fn item(&self) -> T {
        let d = self.inner.data.borrow();
        assert_eq!(d.len(), 1, "item() on non-scalar");
        d[0]
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.inner.grad.borrow().clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.borrow_mut() = None;
    }

    /// Gradient buffer, allocated as zeros on first access.
    pub(crate) fn grad_mut(&self) -> RefMut<'_, Vec<T>> {
        {
            let mut g = self.inner.grad.borrow_mut();
            if g.is_none() {
                *g = Some(vec![T::zero(); self.len()]);
            }
        }
        RefMut::map(self.inner.grad.borrow_mut(), |g| g.as_mut().unwrap())
    }

    pub(crate) fn accum_grad(&self, contrib: &[T]) {
        let mut g = self.grad_mut();
        for (gi, ci) in g.iter_mut().zip(contrib) {
            *gi += *ci;
        }
    }

    /// Like [`Tensor::accum_grad`] but takes ownership: the first
    /// contribution becomes the gradient buffer directly, skipping the
    /// zero-fill and add pass. Most interior nodes receive exactly one.
    pub(crate) fn accum_grad_owned(&self, contrib: Vec<T>) {
        debug_assert_eq!(contrib.len(), self.len());
        let mut g = self.inner.grad.borrow_mut();
        match g.as_mut() {
            None => *g = Some(contrib),
            Some(gv) => {
                for (gi, ci) in gv.iter_mut().zip(&contrib) {
                    *gi += *ci;
                }
            }
        }
    }

    fn ptr_id(&self) -> *const () {
        Rc::as_ptr(&self.inner) as *const ()
    }

    /// Reverse-mode sweep from a scalar. Every tensor with `needs_grad` that
    /// participated in producing `self` receives (accumulates) its gradient.
    pub fn backward(&self) -> Result<(), TensorError> {
        if self.len() != 1 {
            return Err(TensorError::NotScalar(self.inner.shape.clone()));
        }
        // Iterative post-order DFS; recursion would overflow on deep graphs.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<*const ()> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, usize)> = vec![(self.clone(), 0)];
        visited.insert(self.ptr_id());
        while let Some((t, child_idx)) = stack.pop() {
            let nparents = t.inner.node.as_ref().map_or(0, |n| n.parents.len());
            if child_idx < nparents {
                let parent = t.inner.node.as_ref().unwrap().parents[child_idx].clone();
                stack.push((t, child_idx + 1));
                if parent.inner.needs_grad && visited.insert(parent.ptr_id()) {
                    stack.push((parent, 0));
                }
            } else {
                order.push(t);
            }
        }
        // Interior-node grads are scratch space for this sweep; only leaf
        // grads accumulate across backward calls.
        for t in &order {
            if t.inner.node.is_some() {
                *t.inner.grad.borrow_mut() = None;
            }
        }
        self.accum_grad(&[T::one()]);
        for t in order.iter().rev() {
            if let Some(node) = &t.inner.node {
                let g = t.inner.grad.borrow().clone().unwrap_or_else(|| vec![T::zero(); t.len()]);
                (node.backward)(&g, &node.parents);
            }
        }
        Ok(())
    }

    // ---- elementwise ops ----

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "add: {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(a, b)| *a + *b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents| {
                for p in parents {
                    if p.needs_grad() {
                        p.accum_grad(g);
                    }
                }
            }),
        ))
    }

    /// Row-broadcast bias add: `(B, F) + (F,)`.
    pub fn add_row_bias(&self, bias: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        let (b, f) = match self.shape() {
            [b, f] => (*b, *f),
            s => return Err(TensorError::ShapeMismatch(format!("add_row_bias lhs {s:?}"))),
        };
        if bias.shape() != [f] {
            return Err(TensorError::ShapeMismatch(format!(
                "add_row_bias bias {:?}, want [{f}]",
                bias.shape()
            )));
        }
        let mut out = self.to_vec();
        {
            let bd = bias.data();
            for row in out.chunks_mut(f) {
                for (o, bv) in row.iter_mut().zip(bd.iter()) {
                    *o += *bv;
                }
            }
        }
        Ok(Tensor::from_op(
            vec![b, f],
            out,
            vec![self.clone(), bias.clone()],
            Box::new(move |g, parents| {
                if parents[0].needs_grad() {
                    parents[0].accum_grad(g);
                }
                if parents[1].needs_grad() {
                    let mut bg = vec![T::zero(); f];
                    for row in g.chunks(f) {
                        for (acc, gv) in bg.iter_mut().zip(row) {
                            *acc += *gv;
                        }
                    }
                    parents[1].accum_grad_owned(bg);
                }
            }),
        ))
    }

    pub fn mul_scalar(&self, s: T) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|v| *v * s).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].needs_grad() {
                    let contrib: Vec<T> = g.iter().map(|v| *v * s).collect();
                    parents[0].accum_grad_owned(contrib);
                }
            }),
        )
    }

    pub fn mul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>, TensorError> {
        if self.shape() != rhs.shape() {
            return Err(TensorError::ShapeMismatch(format!(
                "mul: {:?} vs {:?}",
                self.shape(),
                rhs.shape()
            )));
        }
        let out: Vec<T> = self
            .data()
            .iter()
            .zip(rhs.data().iter())
            .map(|(a, b)| *a * *b)
            .collect();
        Ok(Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone(), rhs.clone()],
            Box::new(|g, parents| {
                if parents[0].needs_grad() {
                    let rd = parents[1].data();
                    let contrib: Vec<T> = g.iter().zip(rd.iter()).map(|(gv, b)| *gv * *b).collect();
                    drop(rd);
                    parents[0].accum_grad_owned(contrib);
                }
                if parents[1].needs_grad() {
                    let ld = parents[0].data();
                    let contrib: Vec<T> = g.iter().zip(ld.iter()).map(|(gv, a)| *gv * *a).collect();
                    drop(ld);
                    parents[1].accum_grad_owned(contrib);
                }
            }),
        ))
    }

    pub fn relu(&self) -> Tensor<T> {
        let out: Vec<T> = self
            .data()
            .iter()
            .map(|v| if *v > T::zero() { *v } else { T::zero() })
            .collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, parents| {
                if parents[0].needs_grad() {
                    let x = parents[0].data();
                    let contrib: Vec<T> = g
                        .iter()
                        .zip(x.iter())
                        .map(|(gv, xv)| if *xv > T::zero() { *gv } else { T::zero() })
                        .collect();
                    drop(x);
                    parents[0].accum_grad_owned(contrib);
                }
            }),
        )
    }

    /// Tanh-approximation GELU, differentiated exactly as implemented.
    pub fn gelu(&self) -> Tensor<T> {
        let out: Vec<T> = self.data().iter().map(|v| gelu_val(*v)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            out,
            vec![self.clone()],
            Box::new(|g, parents| {
                if parents[0].needs_grad() {
                    let x = parents[0].data();
                    let contrib: Vec<T> = g
                        .iter()
                        .zip(x.iter())
                        .map(|(gv, xv)| *gv * gelu_grad(*xv))
                        .collect();
                    drop(x);
                    parents[0].accum_grad_owned(contrib);
                }
            }),
        )
    }

    pub fn sum(&self) -> Tensor<T> {
        let s: T = self.data().iter().copied().sum();
        let n = self.len();
        Tensor::from_op(
            vec![1],
            vec![s],
            vec![self.clone()],
            Box::new(move |g, parents| {
                if parents[0].needs_grad() {
                    let contrib = vec![g[0]; n];
                    parents[0].accum_grad_owned(contrib);
                }
            }),
        )
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>, TensorError> {
        if shape.iter().product::<usize>() != self.len() {
            return Err(TensorError::ShapeMismatch(format!(
                "reshape {:?} -> {shape:?}",
                self.shape()
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            Box::new(|g, parents| {
                if parents[0].needs_grad() {
                    parents[0].accum_grad(g);
                }
            }),
        ))
    }
}

fn gelu_val<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.797_884_560_802_865_4); // sqrt(2/pi)
    let a = T::from_f64(0.044715);
    let inner = c * (x + a * x * x * x);
    half * x * (T::one() + inner.fast_tanh())
}

fn gelu_grad<T: Real>(x: T) -> T {
    let half = T::from_f64(0.5);
    let c = T::from_f64(0.797_884_560_802_865_4);
    let a = T::from_f64(0.044715);
    let three = T::from_f64(3.0);
    let inner = c * (x + a * x * x * x);
    let t = inner.fast_tanh();
    let dt = inner.fast_tanh_grad();
    half * (T::one() + t) + half * x * dt * c * (T::one() + three * a * x * x)
}
