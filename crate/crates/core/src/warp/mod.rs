//! Geometric correction: an affine grid and a thin-plate-spline grid are
//! composed into a coarse sampling grid, which a small residual network then
//! refines before the captured image is resampled.

mod refine;
mod tps;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{InitMode, Module};
use crate::tensor::{grid_sample_bilinear, Element, Param, Tensor};

pub use refine::{RefineConfig, RefineNet};
pub use tps::{default_control_points, tps_fit, tps_grid, TpsCoefficients, TpsParams};

/// Per-output-pixel normalized source coordinates, stored as `1×H×W×2` with
/// the last axis `(x, y)`.
#[derive(Clone, Debug)]
pub struct SamplingGrid<T: Element = f32>(Tensor<T>);

impl<T: Element> SamplingGrid<T> {
    pub fn new(coords: Tensor<T>) -> Result<Self> {
        match *coords.shape() {
            [1, h, w, 2] if h > 0 && w > 0 => Ok(SamplingGrid(coords)),
            _ => Err(Error::shape(format!(
                "sampling grid must be 1×H×W×2, got {:?}",
                coords.shape()
            ))),
        }
    }

    /// The regular mesh over `[-1, 1]²`.
    pub fn identity(h: usize, w: usize) -> Self {
        let mut data = Vec::with_capacity(h * w * 2);
        for i in 0..h {
            for j in 0..w {
                data.push(T::from_f64_lossy(mesh_coord(j, w)));
                data.push(T::from_f64_lossy(mesh_coord(i, h)));
            }
        }
        SamplingGrid(Tensor::from_vec(&[1, h, w, 2], data).expect("mesh shape"))
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.0
    }

    pub fn into_tensor(self) -> Tensor<T> {
        self.0
    }

    pub fn height(&self) -> usize {
        self.0.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.0.shape()[2]
    }

    /// The grid viewed as a `1×2×H×W` image.
    pub(crate) fn as_image(&self) -> Result<Tensor<T>> {
        self.0.permute(&[0, 3, 1, 2])
    }

    pub(crate) fn from_image(image: &Tensor<T>) -> Result<Self> {
        SamplingGrid::new(image.permute(&[0, 2, 3, 1])?)
    }
}

/// Normalized coordinate of pixel center `i` along an axis of `n` pixels.
pub fn mesh_coord(i: usize, n: usize) -> f64 {
    if n <= 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Learnable 2×3 affine matrix acting on `(x, y, 1)`.
#[derive(Clone, Debug)]
pub struct AffineParams<T: Element = f32> {
    pub theta: Param<T>,
}

impl<T: Element> AffineParams<T> {
    pub fn identity(name: &str) -> Self {
        let one = T::one();
        let zero = T::zero();
        AffineParams {
            theta: Param::new(format!("{name}.theta"), &[2, 3], vec![one, zero, zero, zero, one, zero]).expect("2×3"),
        }
    }
}

impl<T: Element> Module<T> for AffineParams<T> {
    fn params(&self) -> Vec<&Param<T>> {
        vec![&self.theta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        vec![&mut self.theta]
    }
}

/// Homogeneous mesh `(x_j, y_i, 1)` as an `(H·W)×3` constant.
fn homogeneous_mesh<T: Element>(h: usize, w: usize) -> Tensor<T> {
    let mut data = Vec::with_capacity(h * w * 3);
    for i in 0..h {
        for j in 0..w {
            data.push(T::from_f64_lossy(mesh_coord(j, w)));
            data.push(T::from_f64_lossy(mesh_coord(i, h)));
            data.push(T::one());
        }
    }
    Tensor::from_vec(&[h * w, 3], data).expect("mesh shape")
}

/// `grid(i, j) = θ · (x_j, y_i, 1)ᵀ`.
pub fn affine_grid<T: Element>(theta: &Tensor<T>, h: usize, w: usize) -> Result<SamplingGrid<T>> {
    if theta.shape() != [2, 3] {
        return Err(Error::shape(format!(
            "affine theta must be 2×3, got {:?}",
            theta.shape()
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::arg("affine grid needs a non-empty size"));
    }
    let coords = homogeneous_mesh::<T>(h, w).matmul(&theta.permute(&[1, 0])?)?;
    SamplingGrid::new(coords.reshape(&[1, h, w, 2])?)
}

/// Samples `g_aff`, seen as a two-channel image, at the coordinates of `g_tps`.
pub fn compose_coarse_grid<T: Element>(g_aff: &SamplingGrid<T>, g_tps: &SamplingGrid<T>) -> Result<SamplingGrid<T>> {
    if g_aff.height() != g_tps.height() || g_aff.width() != g_tps.width() {
        return Err(Error::shape(format!(
            "cannot compose a {}×{} grid with a {}×{} grid",
            g_aff.height(),
            g_aff.width(),
            g_tps.height(),
            g_tps.width()
        )));
    }
    let sampled = grid_sample_bilinear(&g_aff.as_image()?, g_tps.tensor())?;
    SamplingGrid::from_image(&sampled)
}

/// Resamples `image` (N×C×H×W) at `grid`; one grid serves the whole batch.
pub fn warp_image<T: Element>(image: &Tensor<T>, grid: &SamplingGrid<T>) -> Result<Tensor<T>> {
    grid_sample_bilinear(image, grid.tensor())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GanetConfig {
    /// TPS anchors in normalized coordinates.
    pub ctrl_points: Vec<[f64; 2]>,
    /// Disable to keep only the coarse affine + TPS grid.
    pub refine: bool,
    pub refine_net: RefineConfig,
}

impl Default for GanetConfig {
    fn default() -> Self {
        GanetConfig {
            ctrl_points: default_control_points(),
            refine: true,
            refine_net: RefineConfig::default(),
        }
    }
}

/// Learned inverse geometric mapping from the camera frame to the projector frame.
#[derive(Clone, Debug)]
pub struct Ganet<T: Element = f32> {
    pub affine: AffineParams<T>,
    pub tps: TpsParams<T>,
    pub refine: Option<RefineNet<T>>,
}

impl<T: Element> Ganet<T> {
    pub fn new<R: Rng>(cfg: &GanetConfig, init: InitMode, rng: &mut R) -> Result<Self> {
        Ok(Ganet {
            affine: AffineParams::identity("ganet.affine"),
            tps: TpsParams::new("ganet.tps", &cfg.ctrl_points)?,
            refine: cfg
                .refine
                .then(|| RefineNet::new("ganet.refine", &cfg.refine_net, init, rng))
                .transpose()?,
        })
    }

    /// Identity affine, zero TPS offsets and an all-zero refinement net.
    pub fn identity(cfg: &GanetConfig) -> Result<Self> {
        Ok(Ganet {
            affine: AffineParams::identity("ganet.affine"),
            tps: TpsParams::new("ganet.tps", &cfg.ctrl_points)?,
            refine: cfg
                .refine
                .then(|| RefineNet::zeroed("ganet.refine", &cfg.refine_net))
                .transpose()?,
        })
    }

    pub fn coarse_grid(&self, h: usize, w: usize) -> Result<SamplingGrid<T>> {
        let g_aff = affine_grid(&self.affine.theta.tensor, h, w)?;
        let g_tps = tps_grid(&self.tps, h, w)?;
        compose_coarse_grid(&g_aff, &g_tps)
    }

    /// The final sampling grid for an `h×w` output.
    pub fn grid(&self, h: usize, w: usize) -> Result<SamplingGrid<T>> {
        let coarse = self.coarse_grid(h, w)?;
        match &self.refine {
            Some(net) => net.forward(&coarse),
            None => Ok(coarse),
        }
    }

    pub fn forward(&self, image: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = match *image.shape() {
            [_, _, h, w] => (h, w),
            _ => {
                return Err(Error::shape(format!(
                    "GANet input must be N×C×H×W, got {:?}",
                    image.shape()
                )))
            }
        };
        warp_image(image, &self.grid(h, w)?)
    }
}

impl<T: Element> Module<T> for Ganet<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.affine.params();
        p.extend(self.tps.params());
        if let Some(net) = &self.refine {
            p.extend(net.params());
        }
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.affine.params_mut();
        p.extend(self.tps.params_mut());
        if let Some(net) = &mut self.refine {
            p.extend(net.params_mut());
        }
        p
    }
}
