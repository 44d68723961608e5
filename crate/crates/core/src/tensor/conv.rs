//! 2-D convolution and transposed convolution via im2col + GEMM.
//!
//! Work is split over batch samples; per-sample weight gradients are summed
//! in sample order afterwards so results do not depend on the thread count.

use rayon::prelude::*;

use super::gemm::{gemm, gemm_strided, MatRef};
use super::{BackwardCtx, Element, Tensor};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug)]
struct Geometry {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    stride: usize,
    padding: usize,
    out_h: usize,
    out_w: usize,
}

impl Geometry {
    fn col_rows(&self) -> usize {
        self.channels * self.kh * self.kw
    }

    fn col_cols(&self) -> usize {
        self.out_h * self.out_w
    }

    fn is_pointwise(&self) -> bool {
        self.kh == 1 && self.kw == 1 && self.stride == 1 && self.padding == 0
    }
}

/// Unfolds `image` (C×H×W) into `cols` (C·kh·kw × out_h·out_w).
fn im2col<T: Element>(image: &[T], g: &Geometry, cols: &mut [T]) {
    let ow = g.out_w;
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let dst = &mut cols[row * g.col_cols()..(row + 1) * g.col_cols()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    let line = &mut dst[oy * ow..(oy + 1) * ow];
                    if iy < 0 || iy >= g.height as isize {
                        line.iter_mut().for_each(|v| *v = T::zero());
                        continue;
                    }
                    let src = &plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, v) in line.iter_mut().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        *v = if ix < 0 || ix >= g.width as isize {
                            T::zero()
                        } else {
                            src[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Adjoint of [`im2col`]: scatters `cols` back, adding into `image`.
fn col2im<T: Element>(cols: &[T], g: &Geometry, image: &mut [T]) {
    let ow = g.out_w;
    let pad = g.padding as isize;
    for c in 0..g.channels {
        let plane = &mut image[c * g.height * g.width..(c + 1) * g.height * g.width];
        for ky in 0..g.kh {
            for kx in 0..g.kw {
                let row = (c * g.kh + ky) * g.kw + kx;
                let src = &cols[row * g.col_cols()..(row + 1) * g.col_cols()];
                for oy in 0..g.out_h {
                    let iy = (oy * g.stride + ky) as isize - pad;
                    if iy < 0 || iy >= g.height as isize {
                        continue;
                    }
                    let dst = &mut plane[iy as usize * g.width..(iy as usize + 1) * g.width];
                    for (ox, &v) in src[oy * ow..(oy + 1) * ow].iter().enumerate() {
                        let ix = (ox * g.stride + kx) as isize - pad;
                        if ix >= 0 && ix < g.width as isize {
                            dst[ix as usize] += v;
                        }
                    }
                }
            }
        }
    }
}

/// Stride-1 convolution evaluated as `kh·kw` shifted GEMMs over a zero-padded
/// copy of the input. Outputs are produced on rows of the padded width; the
/// trailing `kw - 1` columns of each row are scratch.
#[derive(Clone, Copy, Debug)]
struct Shifted {
    channels: usize,
    height: usize,
    width: usize,
    kh: usize,
    kw: usize,
    padding: usize,
    padded_h: usize,
    padded_w: usize,
    out_h: usize,
    out_w: usize,
}

impl Shifted {
    fn new(g: &Geometry) -> Self {
        let padded_h = g.height + 2 * g.padding;
        let padded_w = g.width + 2 * g.padding;
        Shifted {
            channels: g.channels,
            height: g.height,
            width: g.width,
            kh: g.kh,
            kw: g.kw,
            padding: g.padding,
            padded_h,
            padded_w,
            out_h: padded_h - g.kh + 1,
            out_w: padded_w - g.kw + 1,
        }
    }

    fn padded_plane(&self) -> usize {
        self.padded_h * self.padded_w
    }

    fn wide_plane(&self) -> usize {
        self.out_h * self.padded_w
    }

    fn taps(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        (0..self.kh).flat_map(move |ky| (0..self.kw).map(move |kx| (ky * self.kw + kx, ky * self.padded_w + kx)))
    }

    fn pad<T: Element>(&self, sample: &[T]) -> Vec<T> {
        // trailing slack keeps the last shifted view in bounds
        let mut xp = vec![T::zero(); self.channels * self.padded_plane() + self.kw];
        for c in 0..self.channels {
            for y in 0..self.height {
                let src = &sample[(c * self.height + y) * self.width..][..self.width];
                let off = c * self.padded_plane() + (y + self.padding) * self.padded_w + self.padding;
                xp[off..off + self.width].copy_from_slice(src);
            }
        }
        xp
    }

    fn unpad<T: Element>(&self, xp: &[T]) -> Vec<T> {
        let mut out = Vec::with_capacity(self.channels * self.height * self.width);
        for c in 0..self.channels {
            for y in 0..self.height {
                let off = c * self.padded_plane() + (y + self.padding) * self.padded_w + self.padding;
                out.extend_from_slice(&xp[off..off + self.width]);
            }
        }
        out
    }

    fn compact<T: Element>(&self, wide: &[T], rows: usize, dst: &mut [T]) {
        for r in 0..rows {
            for y in 0..self.out_h {
                let src = &wide[r * self.wide_plane() + y * self.padded_w..][..self.out_w];
                dst[(r * self.out_h + y) * self.out_w..][..self.out_w].copy_from_slice(src);
            }
        }
    }

    fn widen<T: Element>(&self, compact: &[T], rows: usize) -> Vec<T> {
        let mut wide = vec![T::zero(); rows * self.wide_plane()];
        for r in 0..rows {
            for y in 0..self.out_h {
                let src = &compact[(r * self.out_h + y) * self.out_w..][..self.out_w];
                wide[r * self.wide_plane() + y * self.padded_w..][..self.out_w].copy_from_slice(src);
            }
        }
        wide
    }

    fn forward<T: Element>(&self, xp: &[T], weight: &[T], out_ch: usize) -> Vec<T> {
        let c = self.channels;
        let kk = self.kh * self.kw;
        let mut wide = vec![T::zero(); out_ch * self.wide_plane()];
        for (i, (tap, off)) in self.taps().enumerate() {
            gemm(
                out_ch,
                c,
                self.wide_plane(),
                MatRef::strided(&weight[tap..], c * kk, kk),
                MatRef::strided(&xp[off..], self.padded_plane(), 1),
                &mut wide,
                i > 0,
            );
        }
        wide
    }

    fn weight_grad<T: Element>(&self, xp: &[T], gwide: &[T], out_ch: usize) -> Vec<T> {
        let c = self.channels;
        let kk = self.kh * self.kw;
        let mut gw = vec![T::zero(); out_ch * c * kk];
        for (tap, off) in self.taps() {
            gemm_strided(
                out_ch,
                self.wide_plane(),
                c,
                MatRef::rows(gwide, self.wide_plane()),
                MatRef::strided(&xp[off..], 1, self.padded_plane()),
                &mut gw[tap..],
                c * kk,
                kk,
                false,
            );
        }
        gw
    }

    fn input_grad<T: Element>(&self, weight: &[T], gwide: &[T], out_ch: usize) -> Vec<T> {
        let c = self.channels;
        let kk = self.kh * self.kw;
        let mut gxp = vec![T::zero(); c * self.padded_plane() + self.kw];
        for (tap, off) in self.taps() {
            gemm_strided(
                c,
                out_ch,
                self.wide_plane(),
                MatRef::strided(&weight[tap..], kk, c * kk),
                MatRef::rows(gwide, self.wide_plane()),
                &mut gxp[off..],
                self.padded_plane(),
                1,
                true,
            );
        }
        self.unpad(&gxp)
    }
}

fn check_image<T: Element>(t: &Tensor<T>, what: &str) -> Result<(usize, usize, usize, usize)> {
    match *t.shape() {
        [n, c, h, w] => Ok((n, c, h, w)),
        _ => Err(Error::shape(format!("{what} must be N×C×H×W, got {:?}", t.shape()))),
    }
}

fn check_bias<T: Element>(bias: Option<&Tensor<T>>, channels: usize) -> Result<()> {
    if let Some(b) = bias {
        if b.shape() != [channels] {
            return Err(Error::shape(format!(
                "bias shape {:?} does not match {channels} output channels",
                b.shape()
            )));
        }
    }
    Ok(())
}

fn bias_grad<T: Element>(grad: &[T], n: usize, channels: usize, plane: usize) -> Vec<T> {
    let mut gb = vec![T::zero(); channels];
    for s in 0..n {
        for (c, gbc) in gb.iter_mut().enumerate() {
            let off = (s * channels + c) * plane;
            *gbc += grad[off..off + plane].iter().copied().sum::<T>();
        }
    }
    gb
}

fn sum_in_order<T: Element>(parts: Vec<Vec<T>>) -> Vec<T> {
    let mut it = parts.into_iter();
    let mut acc = it.next().unwrap_or_default();
    for p in it {
        acc.iter_mut().zip(&p).for_each(|(a, &b)| *a += b);
    }
    acc
}

/// Cross-correlation of `input` (N×C×H×W) with `weight` (O×C×kh×kw).
pub fn conv2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, c, h, w) = check_image(input, "conv2d input")?;
    let (o, wc, kh, kw) = match *weight.shape() {
        [o, wc, kh, kw] => (o, wc, kh, kw),
        _ => {
            return Err(Error::shape(format!(
                "conv2d weight must be 4-D, got {:?}",
                weight.shape()
            )))
        }
    };
    if wc != c {
        return Err(Error::shape(format!(
            "conv2d weight expects {wc} input channels, input has {c}"
        )));
    }
    if stride == 0 {
        return Err(Error::arg("conv2d stride must be at least 1"));
    }
    check_bias(bias, o)?;
    if h + 2 * padding < kh || w + 2 * padding < kw {
        return Err(Error::shape(format!(
            "kernel {kh}×{kw} larger than padded input {}×{}",
            h + 2 * padding,
            w + 2 * padding
        )));
    }
    let g = Geometry {
        channels: c,
        height: h,
        width: w,
        kh,
        kw,
        stride,
        padding,
        out_h: (h + 2 * padding - kh) / stride + 1,
        out_w: (w + 2 * padding - kw) / stride + 1,
    };
    let in_size = c * h * w;
    let out_plane = g.col_cols();
    let k = g.col_rows();
    let shifted = (stride == 1 && !g.is_pointwise()).then(|| Shifted::new(&g));

    let mut out = vec![T::zero(); n * o * out_plane];
    {
        let x = input.values();
        let wv = weight.values();
        let bv = bias.map(|b| b.values());
        out.par_chunks_mut(o * out_plane).enumerate().for_each(|(s, dst)| {
            let sample = &x[s * in_size..(s + 1) * in_size];
            if let Some(sh) = shifted {
                let wide = sh.forward(&sh.pad(sample), &wv, o);
                sh.compact(&wide, o, dst);
                if let Some(bv) = &bv {
                    for (ch, row) in dst.chunks_mut(out_plane).enumerate() {
                        row.iter_mut().for_each(|v| *v += bv[ch]);
                    }
                }
                return;
            }
            let mut scratch = Vec::new();
            let cols: &[T] = if g.is_pointwise() {
                sample
            } else {
                scratch.resize(k * out_plane, T::zero());
                im2col(sample, &g, &mut scratch);
                &scratch
            };
            gemm(
                o,
                k,
                out_plane,
                MatRef::rows(&wv, k),
                MatRef::rows(cols, out_plane),
                dst,
                false,
            );
            if let Some(bv) = &bv {
                for (ch, row) in dst.chunks_mut(out_plane).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[ch]);
                }
            }
        });
    }

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, o, g.out_h, g.out_w],
        out,
        parents,
        move |ctx: &BackwardCtx<'_, T>| {
            let gout = ctx.grad;
            let x = ctx.parents[0].values();
            let wv = ctx.parents[1].values();
            let want_x = ctx.parents[0].requires_grad();
            let want_w = ctx.parents[1].requires_grad();

            let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
                .into_par_iter()
                .map(|s| {
                    let go = &gout[s * o * out_plane..(s + 1) * o * out_plane];
                    let sample = &x[s * in_size..(s + 1) * in_size];
                    if let Some(sh) = shifted {
                        let gwide = sh.widen(go, o);
                        let gw = want_w.then(|| sh.weight_grad(&sh.pad(sample), &gwide, o));
                        let gx = want_x.then(|| sh.input_grad(&wv, &gwide, o));
                        return (gx, gw);
                    }
                    let gw = want_w.then(|| {
                        let mut gw = vec![T::zero(); o * k];
                        if g.is_pointwise() {
                            gemm(
                                o,
                                out_plane,
                                k,
                                MatRef::rows(go, out_plane),
                                MatRef::transposed(sample, out_plane),
                                &mut gw,
                                false,
                            );
                        } else {
                            let mut cols = vec![T::zero(); k * out_plane];
                            im2col(sample, &g, &mut cols);
                            gemm(
                                o,
                                out_plane,
                                k,
                                MatRef::rows(go, out_plane),
                                MatRef::transposed(&cols, out_plane),
                                &mut gw,
                                false,
                            );
                        }
                        gw
                    });
                    let gx = want_x.then(|| {
                        let mut gcols = vec![T::zero(); k * out_plane];
                        gemm(
                            k,
                            o,
                            out_plane,
                            MatRef::transposed(&wv, k),
                            MatRef::rows(go, out_plane),
                            &mut gcols,
                            false,
                        );
                        if g.is_pointwise() {
                            gcols
                        } else {
                            let mut gx = vec![T::zero(); in_size];
                            col2im(&gcols, &g, &mut gx);
                            gx
                        }
                    });
                    (gx, gw)
                })
                .collect();

            let (gxs, gws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
            let gx = want_x.then(|| gxs.into_iter().flatten().flatten().collect::<Vec<T>>());
            let gw = want_w.then(|| sum_in_order(gws.into_iter().flatten().collect()));
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(ctx.parents[2].requires_grad().then(|| bias_grad(gout, n, o, out_plane)));
            }
            grads
        },
    ))
}

/// Transposed convolution (adjoint of [`conv2d`] w.r.t. its input).
/// `weight` is `C_in × C_out × kh × kw`.
pub fn conv_transpose2d<T: Element>(
    input: &Tensor<T>,
    weight: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Result<Tensor<T>> {
    let (n, cin, h, w) = check_image(input, "conv_transpose2d input")?;
    let (wcin, cout, kh, kw) = match *weight.shape() {
        [a, b, kh, kw] => (a, b, kh, kw),
        _ => {
            return Err(Error::shape(format!(
                "conv_transpose2d weight must be 4-D, got {:?}",
                weight.shape()
            )))
        }
    };
    if wcin != cin {
        return Err(Error::shape(format!(
            "conv_transpose2d weight expects {wcin} input channels, input has {cin}"
        )));
    }
    if stride == 0 {
        return Err(Error::arg("conv_transpose2d stride must be at least 1"));
    }
    check_bias(bias, cout)?;
    let full_h = (h - 1) * stride + kh;
    let full_w = (w - 1) * stride + kw;
    if full_h <= 2 * padding || full_w <= 2 * padding {
        return Err(Error::shape("conv_transpose2d padding consumes the whole output"));
    }
    // Geometry of the forward conv whose input is our output.
    let g = Geometry {
        channels: cout,
        height: full_h - 2 * padding,
        width: full_w - 2 * padding,
        kh,
        kw,
        stride,
        padding,
        out_h: h,
        out_w: w,
    };
    let in_plane = h * w;
    let in_size = cin * in_plane;
    let out_plane = g.height * g.width;
    let out_size = cout * out_plane;
    let k = g.col_rows();

    let mut out = vec![T::zero(); n * out_size];
    {
        let x = input.values();
        let wv = weight.values();
        let bv = bias.map(|b| b.values());
        out.par_chunks_mut(out_size).enumerate().for_each(|(s, dst)| {
            let sample = &x[s * in_size..(s + 1) * in_size];
            let mut cols = vec![T::zero(); k * in_plane];
            gemm(
                k,
                cin,
                in_plane,
                MatRef::transposed(&wv, k),
                MatRef::rows(sample, in_plane),
                &mut cols,
                false,
            );
            col2im(&cols, &g, dst);
            if let Some(bv) = &bv {
                for (ch, row) in dst.chunks_mut(out_plane).enumerate() {
                    row.iter_mut().for_each(|v| *v += bv[ch]);
                }
            }
        });
    }

    let mut parents = vec![input.clone(), weight.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![n, cout, g.height, g.width],
        out,
        parents,
        move |ctx: &BackwardCtx<'_, T>| {
            let gout = ctx.grad;
            let x = ctx.parents[0].values();
            let wv = ctx.parents[1].values();
            let want_x = ctx.parents[0].requires_grad();
            let want_w = ctx.parents[1].requires_grad();

            let per_sample: Vec<(Option<Vec<T>>, Option<Vec<T>>)> = (0..n)
                .into_par_iter()
                .map(|s| {
                    let go = &gout[s * out_size..(s + 1) * out_size];
                    let mut gcols = vec![T::zero(); k * in_plane];
                    im2col(go, &g, &mut gcols);
                    let gx = want_x.then(|| {
                        let mut gx = vec![T::zero(); in_size];
                        gemm(
                            cin,
                            k,
                            in_plane,
                            MatRef::rows(&wv, k),
                            MatRef::rows(&gcols, in_plane),
                            &mut gx,
                            false,
                        );
                        gx
                    });
                    let gw = want_w.then(|| {
                        let sample = &x[s * in_size..(s + 1) * in_size];
                        let mut gw = vec![T::zero(); cin * k];
                        gemm(
                            cin,
                            in_plane,
                            k,
                            MatRef::rows(sample, in_plane),
                            MatRef::transposed(&gcols, in_plane),
                            &mut gw,
                            false,
                        );
                        gw
                    });
                    (gx, gw)
                })
                .collect();

            let (gxs, gws): (Vec<_>, Vec<_>) = per_sample.into_iter().unzip();
            let gx = want_x.then(|| gxs.into_iter().flatten().flatten().collect::<Vec<T>>());
            let gw = want_w.then(|| sum_in_order(gws.into_iter().flatten().collect()));
            let mut grads = vec![gx, gw];
            if ctx.parents.len() == 3 {
                grads.push(
                    ctx.parents[2]
                        .requires_grad()
                        .then(|| bias_grad(gout, n, cout, out_plane)),
                );
            }
            grads
        },
    ))
}
