//! Per-channel 1-D "valid" correlations, used for separable window statistics.

use std::sync::Arc;

use super::{BackwardCtx, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
enum Axis {
    Width,
    Height,
}

impl<T: Element> Tensor<T> {
    /// Correlates each row of an N×C×H×W tensor with `kernel`, keeping only full windows.
    pub fn filter_width_valid(&self, kernel: &[T]) -> Result<Tensor<T>> {
        self.filter_valid(kernel, Axis::Width)
    }

    /// Same as [`Tensor::filter_width_valid`] along the height axis.
    pub fn filter_height_valid(&self, kernel: &[T]) -> Result<Tensor<T>> {
        self.filter_valid(kernel, Axis::Height)
    }

    fn filter_valid(&self, kernel: &[T], axis: Axis) -> Result<Tensor<T>> {
        let (n, c, h, w) = match *self.shape() {
            [n, c, h, w] => (n, c, h, w),
            _ => return Err(Error::shape(format!("filter needs N×C×H×W, got {:?}", self.shape()))),
        };
        let k = kernel.len();
        let len = match axis {
            Axis::Width => w,
            Axis::Height => h,
        };
        if k == 0 || len < k {
            return Err(Error::arg(format!("window of {k} does not fit extent {len}")));
        }
        let (oh, ow) = match axis {
            Axis::Width => (h, w - k + 1),
            Axis::Height => (h - k + 1, w),
        };
        // Input stride between successive kernel taps.
        let step = match axis {
            Axis::Width => 1,
            Axis::Height => w,
        };
        let planes = n * c;
        let kernel: Arc<[T]> = kernel.into();
        let mut out = vec![T::zero(); planes * oh * ow];
        {
            let x = self.values();
            for p in 0..planes {
                let src = &x[p * h * w..(p + 1) * h * w];
                let dst = &mut out[p * oh * ow..(p + 1) * oh * ow];
                for y in 0..oh {
                    for xo in 0..ow {
                        let base = y * w + xo;
                        let mut acc = T::zero();
                        for (t, &kv) in kernel.iter().enumerate() {
                            acc += kv * src[base + t * step];
                        }
                        dst[y * ow + xo] = acc;
                    }
                }
            }
        }
        Ok(Tensor::from_op(
            vec![n, c, oh, ow],
            out,
            vec![self.clone()],
            move |ctx: &BackwardCtx<'_, T>| {
                let mut g = vec![T::zero(); planes * h * w];
                for p in 0..planes {
                    let go = &ctx.grad[p * oh * ow..(p + 1) * oh * ow];
                    let gi = &mut g[p * h * w..(p + 1) * h * w];
                    for y in 0..oh {
                        for xo in 0..ow {
                            let base = y * w + xo;
                            let gv = go[y * ow + xo];
                            for (t, &kv) in kernel.iter().enumerate() {
                                gi[base + t * step] += kv * gv;
                            }
                        }
                    }
                }
                vec![Some(g)]
            },
        ))
    }
}
