//! Photometric compensation in unshuffled space.
//!
//! Both the warped capture and the warped surface image are pixel-unshuffled,
//! gated by pixel attention and passed through one shared encoder. The decoder
//! works on the feature differences, with two convolutional skips, and the
//! result is shuffled back to full resolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d, Init, Module, PixelAttention};
use crate::tensor::{pixel_shuffle, pixel_unshuffle, Element, Param, Tensor};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PanetConfig {
    /// Encoder output widths per level.
    pub widths: [usize; 3],
    /// Attention right after unshuffling, on both branches.
    pub p1: bool,
    /// Attention after the first encoder conv, on the captured branch.
    pub p2: bool,
}

impl Default for PanetConfig {
    fn default() -> Self {
        PanetConfig {
            widths: [32, 64, 128],
            p1: true,
            p2: true,
        }
    }
}

/// Encoder features, finest level first.
#[derive(Clone, Debug)]
pub struct FeaturePyramid<T: Element = f32> {
    pub levels: [Tensor<T>; 3],
}

impl<T: Element> FeaturePyramid<T> {
    fn repeat_batch(&self, n: usize) -> Result<Self> {
        let [a, b, c] = &self.levels;
        Ok(FeaturePyramid {
            levels: [a.repeat_batch(n)?, b.repeat_batch(n)?, c.repeat_batch(n)?],
        })
    }
}

#[derive(Clone, Debug)]
pub struct Panet<T: Element = f32> {
    pub p1: Option<PixelAttention<T>>,
    pub p2: Option<PixelAttention<T>>,
    pub enc: [Conv2d<T>; 3],
    pub dec1: Conv2d<T>,
    pub up1: ConvTranspose2d<T>,
    pub dec2: Conv2d<T>,
    pub up2: ConvTranspose2d<T>,
    pub dec3: Conv2d<T>,
    /// Level-1 skip: 1×1 then 3×3.
    pub green: [Conv2d<T>; 2],
    /// Level-0 skip: 1×1 then two 3×3.
    pub yellow: [Conv2d<T>; 3],
}

impl<T: Element> Panet<T> {
    /// `channels` is the unshuffled channel count `C·k²`.
    pub fn new<R: Rng>(channels: usize, cfg: &PanetConfig, init: Init, rng: &mut R) -> Result<Self> {
        let [w0, w1, w2] = cfg.widths;
        if channels == 0 || cfg.widths.contains(&0) {
            return Err(Error::arg("PANet widths must be positive"));
        }
        let n = |s: &str| format!("panet.{s}");
        Ok(Panet {
            p1: cfg
                .p1
                .then(|| PixelAttention::new(&n("p1"), channels, init, rng))
                .transpose()?,
            enc: [
                Conv2d::same(&n("enc1"), channels, w0, 3, init, rng)?,
                Conv2d::new(&n("enc2"), w0, w1, 3, 2, 1, init, rng)?,
                Conv2d::new(&n("enc3"), w1, w2, 3, 2, 1, init, rng)?,
            ],
            p2: cfg
                .p2
                .then(|| PixelAttention::new(&n("p2"), w0, init, rng))
                .transpose()?,
            dec1: Conv2d::same(&n("dec1"), w2, w2, 3, init, rng)?,
            up1: ConvTranspose2d::upsample2(&n("up1"), w2, w1, init, rng)?,
            dec2: Conv2d::same(&n("dec2"), w1, w1, 3, init, rng)?,
            up2: ConvTranspose2d::upsample2(&n("up2"), w1, w0, init, rng)?,
            dec3: Conv2d::same(&n("dec3"), w0, channels, 3, init, rng)?,
            green: [
                Conv2d::same(&n("green1"), w1, w1, 1, init, rng)?,
                Conv2d::same(&n("green2"), w1, w1, 3, init, rng)?,
            ],
            yellow: [
                Conv2d::same(&n("yellow1"), w0, w0, 1, init, rng)?,
                Conv2d::same(&n("yellow2"), w0, w0, 3, init, rng)?,
                Conv2d::same(&n("yellow3"), w0, w0, 3, init, rng)?,
            ],
        })
    }

    pub fn in_channels(&self) -> usize {
        self.enc[0].in_channels()
    }

    /// Shared encoder; `captured` selects the branch that carries `p2`.
    pub fn encode(&self, m0: &Tensor<T>, captured: bool) -> Result<FeaturePyramid<T>> {
        if m0.ndim() != 4 || m0.shape()[1] != self.in_channels() {
            return Err(Error::shape(format!(
                "encoder expects N×{}×H×W, got {:?}",
                self.in_channels(),
                m0.shape()
            )));
        }
        if m0.shape()[2] % 4 != 0 || m0.shape()[3] % 4 != 0 {
            return Err(Error::shape(format!(
                "encoder needs sides divisible by 4, got {:?}",
                m0.shape()
            )));
        }
        let mut l0 = self.enc[0].forward(m0)?.relu();
        if captured {
            if let Some(p2) = &self.p2 {
                l0 = p2.forward(&l0)?;
            }
        }
        let l1 = self.enc[1].forward(&l0)?.relu();
        let l2 = self.enc[2].forward(&l1)?;
        Ok(FeaturePyramid { levels: [l0, l1, l2] })
    }

    /// Decodes `feat_x − feat_s` back to `C·k²` channels at level-0 resolution.
    pub fn decode(&self, feat_x: &FeaturePyramid<T>, feat_s: &FeaturePyramid<T>) -> Result<Tensor<T>> {
        for (a, b) in feat_x.levels.iter().zip(&feat_s.levels) {
            if a.shape() != b.shape() {
                return Err(Error::shape(format!(
                    "pyramid levels differ: {:?} vs {:?}",
                    a.shape(),
                    b.shape()
                )));
            }
        }
        let d0 = feat_x.levels[0].sub(&feat_s.levels[0])?;
        let d1 = feat_x.levels[1].sub(&feat_s.levels[1])?;
        let d2 = feat_x.levels[2].sub(&feat_s.levels[2])?;

        let green = self.green[1].forward(&self.green[0].forward(&d1)?.relu())?;
        let yellow = {
            let h = self.yellow[0].forward(&d0)?.relu();
            let h = self.yellow[1].forward(&h)?.relu();
            self.yellow[2].forward(&h)?
        };

        let h = self.dec1.forward(&d2)?.relu();
        let h = self.up1.forward(&h)?.relu().add(&green)?;
        let h = self.dec2.forward(&h)?.relu();
        let h = self.up2.forward(&h)?.relu().add(&yellow)?;
        self.dec3.forward(&h)
    }

    /// Compensation on unshuffled inputs; `ms` may have batch 1.
    pub fn forward_unshuffled(&self, mx: &Tensor<T>, ms: &Tensor<T>) -> Result<Tensor<T>> {
        let gate = |m: &Tensor<T>| match &self.p1 {
            Some(p1) => p1.forward(m),
            None => Ok(m.clone()),
        };
        let fx = self.encode(&gate(mx)?, true)?;
        let mut fs = self.encode(&gate(ms)?, false)?;
        let n = mx.shape()[0];
        if ms.shape()[0] != n {
            fs = fs.repeat_batch(n)?;
        }
        self.decode(&fx, &fs)
    }

    /// `U_k(F(D_k(x); D_k(s)))`, clamped to `[0, 1]`.
    pub fn forward(&self, x_warped: &Tensor<T>, s_warped: &Tensor<T>, k: usize) -> Result<Tensor<T>> {
        unshuffled_pipeline(x_warped, s_warped, k, |mx, ms| self.forward_unshuffled(mx, ms))
    }
}

/// Unshuffles both inputs, applies `f`, shuffles back and clamps.
///
/// `s` must match `x` except that its batch may be 1.
pub fn unshuffled_pipeline<T, F>(x: &Tensor<T>, s: &Tensor<T>, k: usize, f: F) -> Result<Tensor<T>>
where
    T: Element,
    F: FnOnce(&Tensor<T>, &Tensor<T>) -> Result<Tensor<T>>,
{
    let same = match (x.shape(), s.shape()) {
        ([n, c, h, w], [sn, sc, sh, sw]) => (*sn == 1 || sn == n) && c == sc && h == sh && w == sw,
        _ => false,
    };
    if !same {
        return Err(Error::shape(format!(
            "captured {:?} and surface {:?} are incompatible",
            x.shape(),
            s.shape()
        )));
    }
    let mx = pixel_unshuffle(x, k)?;
    let ms = pixel_unshuffle(s, k)?;
    let out = f(&mx, &ms)?;
    if out.shape() != mx.shape() {
        return Err(Error::shape(format!(
            "compensation produced {:?}, expected {:?}",
            out.shape(),
            mx.shape()
        )));
    }
    Ok(pixel_shuffle(&out, k)?.clamp01())
}

impl<T: Element> Module<T> for Panet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = Vec::new();
        p.extend(self.p1.iter().flat_map(|a| a.params()));
        p.extend(self.enc[0].params());
        p.extend(self.p2.iter().flat_map(|a| a.params()));
        p.extend(self.enc[1].params());
        p.extend(self.enc[2].params());
        p.extend(self.dec1.params());
        p.extend(self.up1.params());
        p.extend(self.dec2.params());
        p.extend(self.up2.params());
        p.extend(self.dec3.params());
        p.extend(self.green.iter().flat_map(|c| c.params()));
        p.extend(self.yellow.iter().flat_map(|c| c.params()));
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = Vec::new();
        if let Some(a) = &mut self.p1 {
            p.extend(a.params_mut());
        }
        let [e0, e1, e2] = &mut self.enc;
        p.extend(e0.params_mut());
        if let Some(a) = &mut self.p2 {
            p.extend(a.params_mut());
        }
        p.extend(e1.params_mut());
        p.extend(e2.params_mut());
        p.extend(self.dec1.params_mut());
        p.extend(self.up1.params_mut());
        p.extend(self.dec2.params_mut());
        p.extend(self.up2.params_mut());
        p.extend(self.dec3.params_mut());
        p.extend(self.green.iter_mut().flat_map(|c| c.params_mut()));
        p.extend(self.yellow.iter_mut().flat_map(|c| c.params_mut()));
        p
    }
}
