//! Convolution layers, pixel attention and weight initialization.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{conv2d, conv_transpose2d, Element, Param, Tensor};

/// How freshly created weights are drawn.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Init {
    Zeros,
    /// Kaiming normal, fan-in, ReLU gain.
    He,
    Normal {
        std: f64,
    },
}

impl Init {
    fn sample<T: Element, R: Rng>(self, rng: &mut R, len: usize, fan_in: usize) -> Vec<T> {
        let std = match self {
            Init::Zeros => return vec![T::zero(); len],
            Init::He => (2.0 / fan_in.max(1) as f64).sqrt(),
            Init::Normal { std } => std,
        };
        (0..len)
            .map(|_| T::from_f64_lossy(std * rng.sample::<f64, _>(StandardNormal)))
            .collect()
    }
}

/// Weight initialization policy for the refinement network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    /// Standard normal weights throughout.
    StandardNormal,
    /// He initialization with a small final layer, so the residual starts near zero.
    Scaled,
}

/// Anything that owns named parameters.
pub trait Module<T: Element> {
    fn params(&self) -> Vec<&Param<T>>;

    /// Same order as [`Module::params`].
    fn params_mut(&mut self) -> Vec<&mut Param<T>>;

    fn param_count(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    fn zero_grad(&self) {
        self.params().iter().for_each(|p| p.tensor.zero_grad());
    }

    /// Replaces every parameter tensor, in [`Module::params`] order, so that
    /// gradients flow to externally owned leaves.
    fn bind(&mut self, tensors: &[Tensor<T>]) -> Result<()> {
        let mut params = self.params_mut();
        if params.len() != tensors.len() {
            return Err(Error::arg(format!(
                "bind expects {} tensors, got {}",
                params.len(),
                tensors.len()
            )));
        }
        for (p, t) in params.iter_mut().zip(tensors) {
            if p.tensor.shape() != t.shape() {
                return Err(Error::shape(format!(
                    "{} has shape {:?}, got {:?}",
                    p.name,
                    p.tensor.shape(),
                    t.shape()
                )));
            }
            p.tensor = t.clone();
        }
        Ok(())
    }
}

#[derive(Clone, Debug)]
pub struct Conv2d<T: Element = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> Conv2d<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        let fan_in = in_ch * kernel * kernel;
        let w = init.sample(rng, out_ch * fan_in, fan_in);
        Ok(Conv2d {
            weight: Param::new(format!("{name}.weight"), &[out_ch, in_ch, kernel, kernel], w)?,
            bias: Param::new(format!("{name}.bias"), &[out_ch], vec![T::zero(); out_ch])?,
            stride,
            padding,
        })
    }

    /// Same-size 3×3 / 1×1 convolution.
    pub fn same<R: Rng>(
        name: &str,
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        init: Init,
        rng: &mut R,
    ) -> Result<Self> {
        Self::new(name, in_ch, out_ch, kernel, 1, kernel / 2, init, rng)
    }

    pub fn in_channels(&self) -> usize {
        self.weight.tensor.shape()[1]
    }

    pub fn out_channels(&self) -> usize {
        self.weight.tensor.shape()[0]
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv2d(
            x,
            &self.weight.tensor,
            Some(&self.bias.tensor),
            self.stride,
            self.padding,
        )
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Clone, Debug)]
pub struct ConvTranspose2d<T: Element = f32> {
    pub weight: Param<T>,
    pub bias: Param<T>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> ConvTranspose2d<T> {
    /// Kernel 4, stride 2, padding 1: exactly doubles the spatial size.
    pub fn upsample2<R: Rng>(name: &str, in_ch: usize, out_ch: usize, init: Init, rng: &mut R) -> Result<Self> {
        let kernel = 4;
        // fan-in follows the weight's second axis, as for transposed convs elsewhere
        let fan_in = out_ch * kernel * kernel;
        let w = init.sample(rng, in_ch * fan_in, fan_in);
        Ok(ConvTranspose2d {
            weight: Param::new(format!("{name}.weight"), &[in_ch, out_ch, kernel, kernel], w)?,
            bias: Param::new(format!("{name}.bias"), &[out_ch], vec![T::zero(); out_ch])?,
            stride: 2,
            padding: 1,
        })
    }

    pub fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv_transpose2d(
            x,
            &self.weight.tensor,
            Some(&self.bias.tensor),
            self.stride,
            self.padding,
        )
    }
}

impl<T: Element> Module<T> for ConvTranspose2d<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

/// `M' = σ(C(M)) ⊗ M` with `C` a 1×1 convolution.
#[derive(Clone, Debug)]
pub struct PixelAttention<T: Element = f32> {
    pub conv: Conv2d<T>,
}

impl<T: Element> PixelAttention<T> {
    pub fn new<R: Rng>(name: &str, channels: usize, init: Init, rng: &mut R) -> Result<Self> {
        Ok(PixelAttention {
            conv: Conv2d::same(name, channels, channels, 1, init, rng)?,
        })
    }

    pub fn forward(&self, m: &Tensor<T>) -> Result<Tensor<T>> {
        let ch = m.shape().get(1).copied().unwrap_or(0);
        if m.ndim() != 4 || ch != self.conv.in_channels() {
            return Err(Error::shape(format!(
                "pixel attention over {} channels given {:?}",
                self.conv.in_channels(),
                m.shape()
            )));
        }
        self.conv.forward(m)?.sigmoid().mul(m)
    }
}

impl<T: Element> Module<T> for PixelAttention<T> {
    fn params(&self) -> Vec<&Param<T>> {
        self.conv.params()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        self.conv.params_mut()
    }
}
