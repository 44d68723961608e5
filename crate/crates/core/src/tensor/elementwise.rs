//! Elementwise arithmetic, activations, reductions and shape plumbing.

use serde::{Deserialize, Serialize};

use super::{grad_buf, BackwardCtx, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum BinaryKind {
    Add,
    Sub,
    Mul,
    Div,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Broadcast {
    None,
    Lhs,
    Rhs,
}

impl BinaryKind {
    fn apply<T: Element>(self, a: T, b: T) -> T {
        match self {
            BinaryKind::Add => a + b,
            BinaryKind::Sub => a - b,
            BinaryKind::Mul => a * b,
            BinaryKind::Div => a / b,
        }
    }

    /// (d/da, d/db) at (a, b).
    fn partials<T: Element>(self, a: T, b: T) -> (T, T) {
        match self {
            BinaryKind::Add => (T::one(), T::one()),
            BinaryKind::Sub => (T::one(), -T::one()),
            BinaryKind::Mul => (b, a),
            BinaryKind::Div => (T::one() / b, -a / (b * b)),
        }
    }
}

impl<T: Element> Tensor<T> {
    fn binary(&self, other: &Tensor<T>, kind: BinaryKind) -> Result<Tensor<T>> {
        let mode = if self.shape() == other.shape() {
            Broadcast::None
        } else if other.numel() == 1 {
            Broadcast::Rhs
        } else if self.numel() == 1 {
            Broadcast::Lhs
        } else {
            return Err(Error::shape(format!(
                "elementwise operands {:?} and {:?} differ",
                self.shape(),
                other.shape()
            )));
        };
        let out_shape = if mode == Broadcast::Lhs {
            other.shape().to_vec()
        } else {
            self.shape().to_vec()
        };
        let n = out_shape.iter().product::<usize>();
        let data = {
            let a = self.values();
            let b = other.values();
            let at = |i: usize| if mode == Broadcast::Lhs { a[0] } else { a[i] };
            let bt = |i: usize| if mode == Broadcast::Rhs { b[0] } else { b[i] };
            (0..n).map(|i| kind.apply(at(i), bt(i))).collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone(), other.clone()],
            move |ctx: &BackwardCtx<'_, T>| {
                let a = ctx.parents[0].values();
                let b = ctx.parents[1].values();
                let mut ga = grad_buf(&ctx.parents[0]);
                let mut gb = grad_buf(&ctx.parents[1]);
                for (i, &g) in ctx.grad.iter().enumerate() {
                    let ai = if mode == Broadcast::Lhs { 0 } else { i };
                    let bi = if mode == Broadcast::Rhs { 0 } else { i };
                    let (da, db) = kind.partials(a[ai], b[bi]);
                    if let Some(ga) = ga.as_mut() {
                        ga[ai] += g * da;
                    }
                    if let Some(gb) = gb.as_mut() {
                        gb[bi] += g * db;
                    }
                }
                vec![ga, gb]
            },
        ))
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Add)
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Sub)
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Mul)
    }

    pub fn div(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        self.binary(other, BinaryKind::Div)
    }

    /// `f` forward, `df(x, y)` the derivative given input `x` and output `y`.
    fn unary(&self, f: impl Fn(T) -> T, df: impl Fn(T, T) -> T + Send + Sync + 'static) -> Tensor<T> {
        let data = self.values().iter().map(|&x| f(x)).collect();
        Tensor::from_op(
            self.shape().to_vec(),
            data,
            vec![self.clone()],
            move |ctx: &BackwardCtx<'_, T>| {
                let x = ctx.parents[0].values();
                let g = x
                    .iter()
                    .zip(ctx.output)
                    .zip(ctx.grad)
                    .map(|((&x, &y), &g)| g * df(x, y))
                    .collect();
                vec![Some(g)]
            },
        )
    }

    pub fn add_scalar(&self, s: T) -> Tensor<T> {
        self.unary(move |x| x + s, |_, _| T::one())
    }

    pub fn mul_scalar(&self, s: T) -> Tensor<T> {
        self.unary(move |x| x * s, move |_, _| s)
    }

    pub fn relu(&self) -> Tensor<T> {
        self.unary(
            |x| if x > T::zero() { x } else { T::zero() },
            |x, _| if x > T::zero() { T::one() } else { T::zero() },
        )
    }

    pub fn sigmoid(&self) -> Tensor<T> {
        self.unary(|x| T::one() / (T::one() + (-x).exp()), |_, y| y * (T::one() - y))
    }

    pub fn activation(&self, kind: Activation) -> Tensor<T> {
        match kind {
            Activation::Relu => self.relu(),
            Activation::Sigmoid => self.sigmoid(),
        }
    }

    /// Clamp to `[0, 1]`; gradient is zero outside the interval.
    pub fn clamp01(&self) -> Tensor<T> {
        self.unary(
            |x| {
                if x < T::zero() {
                    T::zero()
                } else if x > T::one() {
                    T::one()
                } else {
                    x
                }
            },
            |x, _| {
                if x >= T::zero() && x <= T::one() {
                    T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    /// `|x|` with subgradient 0 at 0.
    pub fn abs(&self) -> Tensor<T> {
        self.unary(
            |x| x.abs(),
            |x, _| {
                if x > T::zero() {
                    T::one()
                } else if x < T::zero() {
                    -T::one()
                } else {
                    T::zero()
                }
            },
        )
    }

    pub fn square(&self) -> Tensor<T> {
        self.unary(|x| x * x, |x, _| x + x)
    }

    pub fn sum(&self) -> Tensor<T> {
        let total = self.values().iter().copied().sum();
        Tensor::from_op(
            Vec::new(),
            vec![total],
            vec![self.clone()],
            |ctx: &BackwardCtx<'_, T>| vec![Some(vec![ctx.grad[0]; ctx.parents[0].numel()])],
        )
    }

    pub fn mean(&self) -> Tensor<T> {
        let n = T::from_usize(self.numel().max(1)).unwrap();
        self.sum().mul_scalar(T::one() / n)
    }

    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<T>> {
        if shape.iter().product::<usize>() != self.numel() {
            return Err(Error::shape(format!(
                "cannot reshape {:?} into {:?}",
                self.shape(),
                shape
            )));
        }
        Ok(Tensor::from_op(
            shape.to_vec(),
            self.to_vec(),
            vec![self.clone()],
            |ctx: &BackwardCtx<'_, T>| vec![Some(ctx.grad.to_vec())],
        ))
    }

    /// Axis permutation: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<T>> {
        let nd = self.ndim();
        let mut seen = vec![false; nd];
        if axes.len() != nd || axes.iter().any(|&a| a >= nd || std::mem::replace(&mut seen[a], true)) {
            return Err(Error::arg(format!("{axes:?} is not a permutation of {nd} axes")));
        }
        let in_shape = self.shape().to_vec();
        let out_shape: Vec<usize> = axes.iter().map(|&a| in_shape[a]).collect();
        let mut in_strides = vec![1usize; nd];
        for i in (0..nd.saturating_sub(1)).rev() {
            in_strides[i] = in_strides[i + 1] * in_shape[i + 1];
        }
        // Source offset for every output position.
        let n = self.numel();
        let mut src = Vec::with_capacity(n);
        let mut idx = vec![0usize; nd];
        for _ in 0..n {
            src.push(idx.iter().zip(axes).map(|(&i, &a)| i * in_strides[a]).sum::<usize>());
            for d in (0..nd).rev() {
                idx[d] += 1;
                if idx[d] < out_shape[d] {
                    break;
                }
                idx[d] = 0;
            }
        }
        let data = {
            let x = self.values();
            src.iter().map(|&s| x[s]).collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            data,
            vec![self.clone()],
            move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); ctx.grad.len()];
                for (o, &s) in src.iter().enumerate() {
                    g[s] = ctx.grad[o];
                }
                vec![Some(g)]
            },
        ))
    }

    /// Tiles a batch-1 tensor `n` times along axis 0; gradients are summed back.
    pub fn repeat_batch(&self, n: usize) -> Result<Tensor<T>> {
        if self.ndim() == 0 || self.shape()[0] != 1 {
            return Err(Error::shape(format!(
                "repeat_batch needs a leading axis of 1, got {:?}",
                self.shape()
            )));
        }
        if n == 1 {
            return Ok(self.clone());
        }
        let mut shape = self.shape().to_vec();
        shape[0] = n;
        let per = self.numel();
        let data = {
            let x = self.values();
            let mut d = Vec::with_capacity(per * n);
            for _ in 0..n {
                d.extend_from_slice(&x);
            }
            d
        };
        Ok(Tensor::from_op(
            shape,
            data,
            vec![self.clone()],
            move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); per];
                for chunk in ctx.grad.chunks(per) {
                    g.iter_mut().zip(chunk).for_each(|(a, &b)| *a += b);
                }
                vec![Some(g)]
            },
        ))
    }
}
