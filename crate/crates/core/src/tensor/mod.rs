//! Dense tensors with tape-free reverse-mode differentiation.
//!
//! Every tensor produced by an operation keeps an `Arc` to its inputs and a
//! boxed backward rule, so the graph is the set of tensors reachable from the
//! loss. Leaves created with `requires_grad` accumulate gradients across
//! `backward` calls until [`Tensor::zero_grad`] is called. Intermediate
//! gradients live only for the duration of one `backward` call.
//!
//! Layout is row-major; image tensors use `N × C × H × W`.

mod conv;
mod elementwise;
mod filter;
mod gemm;
mod gradcheck;
mod linalg;
mod sample;
mod shuffle;

use std::cell::Cell;
use std::collections::{HashMap, HashSet};
use std::fmt;
use std::iter::Sum;
use std::ops::{AddAssign, MulAssign, SubAssign};
use std::sync::{Arc, Mutex, RwLock, RwLockReadGuard};

use num_traits::{Float, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

pub use conv::{conv2d, conv_transpose2d};
pub use elementwise::Activation;
pub use gemm::{gemm, gemm_strided, MatRef};
pub use gradcheck::{gradcheck, gradcheck_mixed, gradcheck_sampled, GradcheckReport, ScalarFn, FLOOR_FRACTION};
pub use sample::grid_sample_bilinear;
pub use shuffle::{pixel_shuffle, pixel_unshuffle};

/// Floating-point element type usable in a [`Tensor`].
pub trait Element:
    Float
    + FromPrimitive
    + ToPrimitive
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + Sum
{
    /// `c = a · b (+ c if accumulate)`; all three matrices given by strides.
    fn gemm_raw(
        m: usize,
        k: usize,
        n: usize,
        a: MatRef<'_, Self>,
        b: MatRef<'_, Self>,
        c: &mut [Self],
        c_strides: (usize, usize),
        accumulate: bool,
    );

    fn from_f64_lossy(v: f64) -> Self {
        Self::from_f64(v).expect("f64 conversion")
    }

    fn to_f64_lossy(self) -> f64 {
        self.to_f64().expect("f64 conversion")
    }
}

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Runs `f` without recording any backward graph.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            GRAD_ENABLED.with(|g| g.set(self.0));
        }
    }
    let prev = GRAD_ENABLED.with(|g| g.replace(false));
    let _restore = Restore(prev);
    f()
}

fn grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Everything a backward rule may look at.
pub(crate) struct BackwardCtx<'a, T: Element> {
    pub parents: &'a [Tensor<T>],
    pub output: &'a [T],
    pub grad: &'a [T],
}

/// Returns one gradient per parent, `None` when the parent needs none.
pub(crate) trait Backward<T: Element>: Send + Sync {
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>>;
}

impl<T: Element, F> Backward<T> for F
where
    F: Fn(&BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> + Send + Sync,
{
    fn backward(&self, ctx: &BackwardCtx<'_, T>) -> Vec<Option<Vec<T>>> {
        self(ctx)
    }
}

struct Node<T: Element> {
    shape: Vec<usize>,
    data: RwLock<Vec<T>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<T>>>,
    parents: Vec<Tensor<T>>,
    op: Option<Box<dyn Backward<T>>>,
}

pub struct Tensor<T: Element = f32> {
    node: Arc<Node<T>>,
}

impl<T: Element> Clone for Tensor<T> {
    fn clone(&self) -> Self {
        Tensor {
            node: Arc::clone(&self.node),
        }
    }
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.node.shape)
            .field("requires_grad", &self.node.requires_grad)
            .finish()
    }
}

fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

impl<T: Element> Tensor<T> {
    fn leaf_unchecked(shape: Vec<usize>, data: Vec<T>, requires_grad: bool) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            node: Arc::new(Node {
                shape,
                data: RwLock::new(data),
                requires_grad,
                grad: Mutex::new(None),
                parents: Vec::new(),
                op: None,
            }),
        }
    }

    /// Output of an operation; the graph link is kept only if some parent needs gradients.
    pub(crate) fn from_op(
        shape: Vec<usize>,
        data: Vec<T>,
        parents: Vec<Tensor<T>>,
        op: impl Backward<T> + 'static,
    ) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        let requires_grad = grad_enabled() && parents.iter().any(|p| p.requires_grad());
        if !requires_grad {
            return Self::leaf_unchecked(shape, data, false);
        }
        Tensor {
            node: Arc::new(Node {
                shape,
                data: RwLock::new(data),
                requires_grad: true,
                grad: Mutex::new(None),
                parents,
                op: Some(Box::new(op)),
            }),
        }
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if numel_of(shape) != data.len() {
            return Err(Error::shape(format!(
                "shape {:?} holds {} values, got {}",
                shape,
                numel_of(shape),
                data.len()
            )));
        }
        Ok(Self::leaf_unchecked(shape.to_vec(), data, false))
    }

    /// A trainable leaf.
    pub fn param(shape: &[usize], data: Vec<T>) -> Result<Self> {
        let t = Self::from_vec(shape, data)?;
        Ok(t.with_requires_grad(true))
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        Self::leaf_unchecked(shape.to_vec(), vec![value; numel_of(shape)], false)
    }

    pub fn scalar(value: T) -> Self {
        Self::leaf_unchecked(Vec::new(), vec![value], false)
    }

    /// Fresh leaf sharing the values of `self` with the given flag.
    pub fn with_requires_grad(&self, requires_grad: bool) -> Self {
        Self::leaf_unchecked(self.node.shape.clone(), self.to_vec(), requires_grad)
    }

    pub fn detach(&self) -> Self {
        self.with_requires_grad(false)
    }

    pub fn shape(&self) -> &[usize] {
        &self.node.shape
    }

    pub fn ndim(&self) -> usize {
        self.node.shape.len()
    }

    pub fn numel(&self) -> usize {
        numel_of(&self.node.shape)
    }

    pub fn requires_grad(&self) -> bool {
        self.node.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.node.op.is_none()
    }

    pub fn values(&self) -> RwLockReadGuard<'_, Vec<T>> {
        self.node.data.read().expect("tensor data lock poisoned")
    }

    pub fn to_vec(&self) -> Vec<T> {
        self.values().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.values().iter().map(|v| v.to_f64_lossy()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> T {
        let v = self.values();
        assert_eq!(v.len(), 1, "item() on tensor of shape {:?}", self.shape());
        v[0]
    }

    pub fn all_finite(&self) -> bool {
        self.values().iter().all(|v| v.is_finite())
    }

    /// Overwrites a leaf's values in place (optimizer steps, checkpoint loads).
    pub fn update_values(&self, f: impl FnOnce(&mut [T])) {
        assert!(self.is_leaf(), "update_values on a non-leaf tensor");
        let mut data = self.node.data.write().expect("tensor data lock poisoned");
        f(&mut data);
    }

    pub fn set_values(&self, values: &[T]) -> Result<()> {
        if values.len() != self.numel() {
            return Err(Error::shape(format!(
                "cannot assign {} values to tensor of shape {:?}",
                values.len(),
                self.shape()
            )));
        }
        self.update_values(|d| d.copy_from_slice(values));
        Ok(())
    }

    pub fn grad(&self) -> Option<Vec<T>> {
        self.node.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.node.grad.lock().expect("grad lock poisoned") = None;
    }

    pub fn cast<U: Element>(&self) -> Tensor<U> {
        let data = self
            .values()
            .iter()
            .map(|v| U::from_f64_lossy(v.to_f64_lossy()))
            .collect();
        Tensor::leaf_unchecked(self.node.shape.clone(), data, self.requires_grad() && self.is_leaf())
    }

    fn id(&self) -> usize {
        Arc::as_ptr(&self.node) as *const () as usize
    }

    /// Accumulates `d self / d leaf` into every reachable leaf that requires gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::arg(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Ok(());
        }

        // Iterative post-order DFS so deep graphs don't overflow the stack.
        let mut order: Vec<Tensor<T>> = Vec::new();
        let mut visited: HashSet<usize> = HashSet::new();
        let mut stack: Vec<(Tensor<T>, bool)> = vec![(self.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            for p in &t.node.parents {
                if p.requires_grad() && !visited.contains(&p.id()) {
                    stack.push((p.clone(), false));
                }
            }
        }

        let mut grads: HashMap<usize, Vec<T>> = HashMap::new();
        grads.insert(self.id(), vec![T::one()]);
        for t in order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match &t.node.op {
                None => {
                    let mut slot = t.node.grad.lock().expect("grad lock poisoned");
                    match slot.as_mut() {
                        Some(acc) => acc.iter_mut().zip(&g).for_each(|(a, b)| *a += *b),
                        None => *slot = Some(g),
                    }
                }
                Some(op) => {
                    let output = t.values();
                    let ctx = BackwardCtx {
                        parents: &t.node.parents,
                        output: &output,
                        grad: &g,
                    };
                    let parent_grads = op.backward(&ctx);
                    debug_assert_eq!(parent_grads.len(), t.node.parents.len());
                    for (p, pg) in t.node.parents.iter().zip(parent_grads) {
                        let Some(pg) = pg else { continue };
                        if !p.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(pg.len(), p.numel());
                        match grads.get_mut(&p.id()) {
                            Some(acc) => acc.iter_mut().zip(&pg).for_each(|(a, b)| *a += *b),
                            None => {
                                grads.insert(p.id(), pg);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

/// A named trainable tensor.
#[derive(Clone, Debug)]
pub struct Param<T: Element = f32> {
    pub name: String,
    pub tensor: Tensor<T>,
}

impl<T: Element> Param<T> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<T>) -> Result<Self> {
        Ok(Param {
            name: name.into(),
            tensor: Tensor::param(shape, data)?,
        })
    }

    pub fn numel(&self) -> usize {
        self.tensor.numel()
    }
}

/// Zero-filled gradient buffer for a parent, or `None` if it needs none.
pub(crate) fn grad_buf<T: Element>(p: &Tensor<T>) -> Option<Vec<T>> {
    p.requires_grad().then(|| vec![T::zero(); p.numel()])
}
