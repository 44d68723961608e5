//! Space-to-channel rearrangements.
//!
//! Channel order: source channel `c` at in-block offset `(dy, dx)` maps to
//! output channel `c·k² + dy·k + dx`.

use super::{BackwardCtx, Element, Tensor};
use crate::error::{Error, Result};

/// Index map from unshuffled position to source position, and the output shape.
fn unshuffle_map(n: usize, c: usize, h: usize, w: usize, k: usize) -> (Vec<usize>, Vec<usize>) {
    let (oh, ow) = (h / k, w / k);
    let oc = c * k * k;
    let mut map = Vec::with_capacity(n * c * h * w);
    for s in 0..n {
        for ch in 0..oc {
            let src_c = ch / (k * k);
            let dy = (ch / k) % k;
            let dx = ch % k;
            let base = (s * c + src_c) * h * w;
            for y in 0..oh {
                let row = base + (y * k + dy) * w;
                for x in 0..ow {
                    map.push(row + x * k + dx);
                }
            }
        }
    }
    (map, vec![n, oc, oh, ow])
}

fn gather<T: Element>(src: &[T], map: &[usize]) -> Vec<T> {
    map.iter().map(|&i| src[i]).collect()
}

fn scatter<T: Element>(src: &[T], map: &[usize]) -> Vec<T> {
    let mut out = vec![T::zero(); src.len()];
    for (o, &i) in map.iter().enumerate() {
        out[i] = src[o];
    }
    out
}

fn dims4<T: Element>(t: &Tensor<T>, op: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(format!("{op} needs N×C×H×W, got {:?}", t.shape()))),
    }
}

/// `N×C×H×W → N×(C·k²)×(H/k)×(W/k)`.
pub fn pixel_unshuffle<T: Element>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, c, h, w) = dims4(input, "pixel_unshuffle")?;
    if k == 0 || h % k != 0 || w % k != 0 {
        return Err(Error::shape(format!("{h}×{w} is not divisible by factor {k}")));
    }
    let (map, shape) = unshuffle_map(n, c, h, w, k);
    let data = gather(&input.values(), &map);
    Ok(Tensor::from_op(
        shape,
        data,
        vec![input.clone()],
        move |ctx: &BackwardCtx<'_, T>| vec![Some(scatter(ctx.grad, &map))],
    ))
}

/// `N×(C·k²)×H×W → N×C×(H·k)×(W·k)`, the inverse of [`pixel_unshuffle`].
pub fn pixel_shuffle<T: Element>(input: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
    let (n, ck, h, w) = dims4(input, "pixel_shuffle")?;
    if k == 0 || ck % (k * k) != 0 {
        return Err(Error::shape(format!("{ck} channels not divisible by {k}²")));
    }
    let c = ck / (k * k);
    let (map, _) = unshuffle_map(n, c, h * k, w * k, k);
    let data = scatter(&input.values(), &map);
    Ok(Tensor::from_op(
        vec![n, c, h * k, w * k],
        data,
        vec![input.clone()],
        move |ctx: &BackwardCtx<'_, T>| vec![Some(gather(ctx.grad, &map))],
    ))
}
