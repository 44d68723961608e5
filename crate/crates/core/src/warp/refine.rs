//! Residual grid refinement: six 3×3 convolutions (the first and third with
//! stride 2), pixel attention after the second and fourth, and two
//! transposed convolutions back to full resolution.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::SamplingGrid;
use crate::error::{Error, Result};
use crate::nn::{Conv2d, ConvTranspose2d, Init, InitMode, Module, PixelAttention};
use crate::tensor::{Element, Param};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub widths: [usize; 6],
    /// Pixel attention `r1`, `r2`.
    pub attention: bool,
    /// Std of the last layer's weights under [`InitMode::Scaled`].
    pub final_std: f64,
    /// Fixed factor on the predicted residual.
    pub residual_scale: f64,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            widths: [32, 32, 64, 64, 64, 64],
            attention: true,
            final_std: 0.01,
            residual_scale: 0.01,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RefineNet<T: Element = f32> {
    pub convs: Vec<Conv2d<T>>,
    pub r1: Option<PixelAttention<T>>,
    pub r2: Option<PixelAttention<T>>,
    pub up1: ConvTranspose2d<T>,
    pub up2: ConvTranspose2d<T>,
    pub residual_scale: f64,
}

impl<T: Element> RefineNet<T> {
    pub fn new<R: Rng>(name: &str, cfg: &RefineConfig, mode: InitMode, rng: &mut R) -> Result<Self> {
        let (body, last) = match mode {
            InitMode::Scaled => (Init::He, Init::Normal { std: cfg.final_std }),
            InitMode::StandardNormal => (Init::Normal { std: 1.0 }, Init::Normal { std: 1.0 }),
        };
        Self::build(name, cfg, body, last, rng)
    }

    /// Every weight and bias zero, so the output equals the input grid.
    pub fn zeroed(name: &str, cfg: &RefineConfig) -> Result<Self> {
        let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(0);
        Self::build(name, cfg, Init::Zeros, Init::Zeros, &mut rng)
    }

    fn build<R: Rng>(name: &str, cfg: &RefineConfig, body: Init, last: Init, rng: &mut R) -> Result<Self> {
        let w = cfg.widths;
        if w.contains(&0) {
            return Err(Error::arg("refinement widths must be positive"));
        }
        let inputs = [2, w[0], w[1], w[2], w[3], w[4]];
        let mut convs = Vec::with_capacity(6);
        for (i, (&cin, &cout)) in inputs.iter().zip(&w).enumerate() {
            let stride = if i == 0 || i == 2 { 2 } else { 1 };
            convs.push(Conv2d::new(
                &format!("{name}.conv{}", i + 1),
                cin,
                cout,
                3,
                stride,
                1,
                body,
                rng,
            )?);
        }
        let r1 = cfg
            .attention
            .then(|| PixelAttention::new(&format!("{name}.r1"), w[1], body, rng))
            .transpose()?;
        let r2 = cfg
            .attention
            .then(|| PixelAttention::new(&format!("{name}.r2"), w[3], body, rng))
            .transpose()?;
        Ok(RefineNet {
            convs,
            r1,
            r2,
            up1: ConvTranspose2d::upsample2(&format!("{name}.up1"), w[5], w[1], body, rng)?,
            up2: ConvTranspose2d::upsample2(&format!("{name}.up2"), w[1], 2, last, rng)?,
            residual_scale: cfg.residual_scale,
        })
    }

    /// `g + W(g)`; the grid's height and width must be multiples of 4.
    pub fn forward(&self, g: &SamplingGrid<T>) -> Result<SamplingGrid<T>> {
        if g.height() % 4 != 0 || g.width() % 4 != 0 {
            return Err(Error::shape(format!(
                "refinement needs grid sides divisible by 4, got {}×{}",
                g.height(),
                g.width()
            )));
        }
        let x = g.as_image()?;
        let mut h = x.clone();
        for (i, conv) in self.convs.iter().enumerate() {
            h = conv.forward(&h)?.relu();
            let gate = match i {
                1 => self.r1.as_ref(),
                3 => self.r2.as_ref(),
                _ => None,
            };
            if let Some(pa) = gate {
                h = pa.forward(&h)?;
            }
        }
        let h = self.up1.forward(&h)?.relu();
        let residual = self.up2.forward(&h)?.mul_scalar(T::from_f64_lossy(self.residual_scale));
        SamplingGrid::from_image(&x.add(&residual)?)
    }
}

impl<T: Element> Module<T> for RefineNet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p: Vec<&Param<T>> = Vec::new();
        for (i, c) in self.convs.iter().enumerate() {
            p.extend(c.params());
            match i {
                1 => p.extend(self.r1.iter().flat_map(|a| a.params())),
                3 => p.extend(self.r2.iter().flat_map(|a| a.params())),
                _ => {}
            }
        }
        p.extend(self.up1.params());
        p.extend(self.up2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p: Vec<&mut Param<T>> = Vec::new();
        let (head, tail) = self.convs.split_at_mut(2);
        let (mid, rest) = tail.split_at_mut(2);
        for c in head {
            p.extend(c.params_mut());
        }
        if let Some(a) = &mut self.r1 {
            p.extend(a.params_mut());
        }
        for c in mid {
            p.extend(c.params_mut());
        }
        if let Some(a) = &mut self.r2 {
            p.extend(a.params_mut());
        }
        for c in rest {
            p.extend(c.params_mut());
        }
        p.extend(self.up1.params_mut());
        p.extend(self.up2.params_mut());
        p
    }
}
