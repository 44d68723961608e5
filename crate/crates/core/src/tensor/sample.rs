//! Bilinear grid sampling with border clamping.
//!
//! Normalized coordinates: `(-1, -1)` is the center of the top-left pixel and
//! `(1, 1)` the center of the bottom-right one. Coordinates outside that range
//! are clamped to the border, which also zeroes their coordinate gradient.

use rayon::prelude::*;

use super::{BackwardCtx, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy)]
struct Tap<T> {
    x0: usize,
    x1: usize,
    y0: usize,
    y1: usize,
    wx: T,
    wy: T,
    /// d(pixel x)/d(normalized x), zero when clamped.
    sx: T,
    sy: T,
}

fn axis<T: Element>(coord: T, size: usize) -> (usize, usize, T, T) {
    if !coord.is_finite() {
        // propagates as NaN instead of indexing with it
        return (0, 1.min(size - 1), T::nan(), T::zero());
    }
    if size == 1 {
        return (0, 0, T::zero(), T::zero());
    }
    let max = (size - 1) as f64;
    let half = max / 2.0;
    let mut p = (coord.to_f64_lossy() + 1.0) * half;
    // A coordinate cannot locate a pixel more finely than its own precision,
    // so positions that close to a pixel center are taken as exactly on it.
    let nearest = p.round();
    if (p - nearest).abs() <= T::epsilon().to_f64_lossy() * max {
        p = nearest;
    }
    let (p, scale) = if p < 0.0 {
        (0.0, 0.0)
    } else if p > max {
        (max, 0.0)
    } else {
        (p, half)
    };
    let i0 = (p.floor() as usize).min(size - 1);
    let i1 = (i0 + 1).min(size - 1);
    let frac = T::from_f64_lossy(p - i0 as f64);
    let scale = T::from_f64_lossy(scale);
    (i0, i1, frac, scale)
}

fn tap<T: Element>(gx: T, gy: T, h: usize, w: usize) -> Tap<T> {
    let (x0, x1, wx, sx) = axis(gx, w);
    let (y0, y1, wy, sy) = axis(gy, h);
    Tap {
        x0,
        x1,
        y0,
        y1,
        wx,
        wy,
        sx,
        sy,
    }
}

/// Samples `image` (N×C×H×W) at `grid` (G×Ho×Wo×2, `G ∈ {1, N}`, last axis `(x, y)`).
pub fn grid_sample_bilinear<T: Element>(image: &Tensor<T>, grid: &Tensor<T>) -> Result<Tensor<T>> {
    let (n, c, h, w) = match *image.shape() {
        [n, c, h, w] => (n, c, h, w),
        _ => {
            return Err(Error::shape(format!(
                "grid_sample image must be N×C×H×W, got {:?}",
                image.shape()
            )))
        }
    };
    let (gn, oh, ow) = match *grid.shape() {
        [gn, oh, ow, 2] => (gn, oh, ow),
        _ => {
            return Err(Error::shape(format!(
                "sampling grid must be G×H×W×2, got {:?}",
                grid.shape()
            )))
        }
    };
    if gn != 1 && gn != n {
        return Err(Error::shape(format!(
            "grid batch {gn} incompatible with image batch {n}"
        )));
    }
    let plane_in = h * w;
    let plane_out = oh * ow;
    let grid_stride = if gn == 1 { 0 } else { plane_out * 2 };

    let mut out = vec![T::zero(); n * c * plane_out];
    {
        let img = image.values();
        let g = grid.values();
        out.par_chunks_mut(c * plane_out).enumerate().for_each(|(s, dst)| {
            let gs = &g[s * grid_stride..s * grid_stride + plane_out * 2];
            let src = &img[s * c * plane_in..(s + 1) * c * plane_in];
            for p in 0..plane_out {
                let t = tap(gs[2 * p], gs[2 * p + 1], h, w);
                let one = T::one();
                for ch in 0..c {
                    let pl = &src[ch * plane_in..(ch + 1) * plane_in];
                    let top = pl[t.y0 * w + t.x0] * (one - t.wx) + pl[t.y0 * w + t.x1] * t.wx;
                    let bot = pl[t.y1 * w + t.x0] * (one - t.wx) + pl[t.y1 * w + t.x1] * t.wx;
                    dst[ch * plane_out + p] = top * (one - t.wy) + bot * t.wy;
                }
            }
        });
    }

    Ok(Tensor::from_op(
        vec![n, c, oh, ow],
        out,
        vec![image.clone(), grid.clone()],
        move |ctx: &BackwardCtx<'_, T>| {
            let img = ctx.parents[0].values();
            let g = ctx.parents[1].values();
            let want_img = ctx.parents[0].requires_grad();
            let want_grid = ctx.parents[1].requires_grad();
            let parts: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
                .into_par_iter()
                .map(|s| {
                    let gs = &g[s * grid_stride..s * grid_stride + plane_out * 2];
                    let src = &img[s * c * plane_in..(s + 1) * c * plane_in];
                    let go = &ctx.grad[s * c * plane_out..(s + 1) * c * plane_out];
                    let mut gimg = want_img.then(|| vec![T::zero(); c * plane_in]);
                    let mut ggrid = want_grid.then(|| vec![T::zero(); plane_out * 2]);
                    let one = T::one();
                    for p in 0..plane_out {
                        let t = tap(gs[2 * p], gs[2 * p + 1], h, w);
                        let (i00, i01, i10, i11) = (t.y0 * w + t.x0, t.y0 * w + t.x1, t.y1 * w + t.x0, t.y1 * w + t.x1);
                        let mut dx = T::zero();
                        let mut dy = T::zero();
                        for ch in 0..c {
                            let gv = go[ch * plane_out + p];
                            if let Some(gi) = gimg.as_mut() {
                                let gi = &mut gi[ch * plane_in..(ch + 1) * plane_in];
                                gi[i00] += gv * (one - t.wx) * (one - t.wy);
                                gi[i01] += gv * t.wx * (one - t.wy);
                                gi[i10] += gv * (one - t.wx) * t.wy;
                                gi[i11] += gv * t.wx * t.wy;
                            }
                            if want_grid {
                                let pl = &src[ch * plane_in..(ch + 1) * plane_in];
                                let (v00, v01, v10, v11) = (pl[i00], pl[i01], pl[i10], pl[i11]);
                                dx += gv * ((v01 - v00) * (one - t.wy) + (v11 - v10) * t.wy);
                                dy += gv * ((v10 - v00) * (one - t.wx) + (v11 - v01) * t.wx);
                            }
                        }
                        if let Some(gg) = ggrid.as_mut() {
                            gg[2 * p] = dx * t.sx;
                            gg[2 * p + 1] = dy * t.sy;
                        }
                    }
                    (gimg, ggrid)
                })
                .collect();
            let (gimgs, ggrids): (Vec<_>, Vec<_>) = parts.into_iter().unzip();
            let gimg = want_img.then(|| gimgs.into_iter().flatten().flatten().collect::<Vec<T>>());
            let ggrid = want_grid.then(|| {
                if gn == 1 {
                    let mut acc = vec![T::zero(); plane_out * 2];
                    for part in ggrids.into_iter().flatten() {
                        acc.iter_mut().zip(&part).for_each(|(a, &b)| *a += b);
                    }
                    acc
                } else {
                    ggrids.into_iter().flatten().flatten().collect()
                }
            });
            vec![gimg, ggrid]
        },
    ))
}
