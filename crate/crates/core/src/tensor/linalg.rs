use super::gemm::{gemm, MatRef};
use super::{BackwardCtx, Element, Tensor};
use crate::error::{Error, Result};

impl<T: Element> Tensor<T> {
    /// `(m×k) · (k×n)` for 2-D tensors.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (m, k, n) = match (self.shape(), other.shape()) {
            (&[m, k], &[k2, n]) if k == k2 => (m, k, n),
            (a, b) => return Err(Error::shape(format!("cannot multiply {a:?} by {b:?}"))),
        };
        let mut out = vec![T::zero(); m * n];
        gemm(
            m,
            k,
            n,
            MatRef::rows(&self.values(), k),
            MatRef::rows(&other.values(), n),
            &mut out,
            false,
        );
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            move |ctx: &BackwardCtx<'_, T>| {
                let a = ctx.parents[0].values();
                let b = ctx.parents[1].values();
                let ga = ctx.parents[0].requires_grad().then(|| {
                    let mut g = vec![T::zero(); m * k];
                    gemm(
                        m,
                        n,
                        k,
                        MatRef::rows(ctx.grad, n),
                        MatRef::transposed(&b, n),
                        &mut g,
                        false,
                    );
                    g
                });
                let gb = ctx.parents[1].requires_grad().then(|| {
                    let mut g = vec![T::zero(); k * n];
                    gemm(
                        k,
                        m,
                        n,
                        MatRef::transposed(&a, k),
                        MatRef::rows(ctx.grad, n),
                        &mut g,
                        false,
                    );
                    g
                });
                vec![ga, gb]
            },
        ))
    }
}
