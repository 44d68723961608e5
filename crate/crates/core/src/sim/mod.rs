//! Synthetic projector-camera system.
//!
//! A projector image `x` is turned into a camera capture by a photometric
//! response in the projector frame, a geometric warp into the camera frame,
//! and a camera response with sensor noise:
//!
//! ```text
//! r  = reflectance ⊙ clamp01(M · x^γp + ambient)
//! r' = bilinear(r, camera → projector map)
//! x̃  = clamp01(clamp01(r')^(1/γc) + noise)
//! ```

mod dataset;
mod geometry;
mod images;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{grid_sample_bilinear, no_grad, Tensor};
use crate::warp::mesh_coord;

pub use dataset::{gen_dataset, Dataset, DatasetManifest, PairFiles, Split, DEFAULT_PROBE, MANIFEST_FILE};
pub use geometry::{apply_homography, homography_from_points, invert_homography, Homography};

const STREAM_NOISE: u64 = 1 << 32;
const STREAM_IMAGE: u64 = 2 << 32;

/// One sinusoid `a · sin(π (f_x x + f_y y) + φ)` in normalized coordinates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Wave {
    pub amplitude: f64,
    pub freq: [f64; 2],
    pub phase: f64,
}

impl Wave {
    fn at(&self, p: [f64; 2]) -> f64 {
        self.amplitude * (std::f64::consts::PI * (self.freq[0] * p[0] + self.freq[1] * p[1]) + self.phase).sin()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SceneSetup {
    /// The recipe this setup was built from.
    pub spec: SceneSpec,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Planar `3×H×W`, in the projector frame.
    pub surface_texture: Vec<f64>,
    /// Camera → projector, normalized coordinates.
    pub homography: Homography,
    /// Two waves per output axis, added after the homography.
    pub displacement: [[Wave; 2]; 2],
    /// Row `c` mixes projector channels into surface channel `c`.
    pub color_mix: [[f64; 3]; 3],
    pub reflectance_blend: f64,
    pub projector_gamma: [f64; 3],
    pub camera_gamma: [f64; 3],
    pub ambient: [f64; 3],
    pub noise_sigma: f64,
}

/// Everything needed to rebuild a [`SceneSetup`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    /// Replaces the drawn noise level; ignored by ideal scenes.
    #[serde(default)]
    pub noise_sigma: Option<f64>,
    /// Disables every distortion: identity warp, unit reflectance, linear
    /// responses, no ambient light, no noise.
    #[serde(default)]
    pub ideal: bool,
}

impl SceneSpec {
    pub fn new(seed: u64, size: usize) -> Self {
        SceneSpec {
            seed,
            height: size,
            width: size,
            noise_sigma: None,
            ideal: false,
        }
    }

    pub fn build(&self) -> Result<SceneSetup> {
        let mut scene = gen_setup(self.seed, (self.height, self.width))?;
        if self.ideal {
            scene.make_ideal();
        }
        scene.spec = self.clone();
        if let Some(sigma) = self.noise_sigma {
            if !(0.0..=1.0).contains(&sigma) {
                return Err(Error::arg(format!("noise sigma {sigma} outside [0, 1]")));
            }
            if !self.ideal {
                scene.noise_sigma = sigma;
            }
        }
        Ok(scene)
    }
}

/// Minimum side length accepted by [`gen_setup`].
pub const MIN_SIZE: usize = 32;

/// Draws a random but reproducible setup.
pub fn gen_setup(seed: u64, size: (usize, usize)) -> Result<SceneSetup> {
    let (height, width) = size;
    if height < MIN_SIZE || width < MIN_SIZE {
        return Err(Error::arg(format!(
            "scene size {height}×{width} is below {MIN_SIZE}×{MIN_SIZE}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let surface_texture = images::surface_texture(&mut rng, height, width);

    // Camera corners land inside the projector image, 3–10% of the side in.
    let square = [[-1.0, -1.0], [1.0, -1.0], [1.0, 1.0], [-1.0, 1.0]];
    let mut corners: [[f64; 2]; 4] = square;
    for c in corners.iter_mut() {
        for v in c.iter_mut() {
            *v -= v.signum() * 2.0 * rng.random_range(0.03..0.10);
        }
    }
    let homography = homography_from_points(&square, &corners)?;

    let wave = |rng: &mut ChaCha8Rng, max_amp: f64| Wave {
        amplitude: rng.random_range(0.2..1.0) * max_amp,
        freq: [rng.random_range(0.5..2.0), rng.random_range(0.5..2.0)],
        phase: rng.random_range(0.0..std::f64::consts::TAU),
    };
    // Peak displacement stays below the smallest corner inset.
    let displacement = [
        [wave(&mut rng, 0.02), wave(&mut rng, 0.01)],
        [wave(&mut rng, 0.02), wave(&mut rng, 0.01)],
    ];

    let mut color_mix = [[0.0; 3]; 3];
    for (i, row) in color_mix.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            *v = if i == j {
                rng.random_range(0.8..1.0)
            } else {
                rng.random_range(0.0..0.12)
            };
        }
    }
    let gamma = |rng: &mut ChaCha8Rng| [0; 3].map(|_| rng.random_range(1.8..2.4));
    let projector_gamma = gamma(&mut rng);
    let camera_gamma = gamma(&mut rng);
    Ok(SceneSetup {
        spec: SceneSpec {
            seed,
            height,
            width,
            noise_sigma: None,
            ideal: false,
        },
        seed,
        height,
        width,
        surface_texture,
        homography,
        displacement,
        color_mix,
        reflectance_blend: rng.random_range(0.35..0.65),
        projector_gamma,
        camera_gamma,
        ambient: [0; 3].map(|_| rng.random_range(0.005..0.05)),
        noise_sigma: rng.random_range(0.002..0.01),
    })
}

impl SceneSetup {
    fn make_ideal(&mut self) {
        self.homography = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        for axis in self.displacement.iter_mut() {
            for w in axis.iter_mut() {
                w.amplitude = 0.0;
            }
        }
        self.color_mix = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
        self.reflectance_blend = 0.0;
        self.projector_gamma = [1.0; 3];
        self.camera_gamma = [1.0; 3];
        self.ambient = [0.0; 3];
        self.noise_sigma = 0.0;
    }

    /// Per-pixel reflectance `(1 − b) + b · texture`.
    pub fn reflectance(&self) -> Vec<f64> {
        let b = self.reflectance_blend;
        self.surface_texture.iter().map(|t| (1.0 - b) + b * t).collect()
    }

    /// Projector coordinate seen by a camera pixel at normalized `p`.
    pub fn camera_to_projector(&self, p: [f64; 2]) -> [f64; 2] {
        let q = apply_homography(&self.homography, p);
        let [dx, dy] = self.displacement.map(|axis| axis[0].at(p) + axis[1].at(p));
        [q[0] + dx, q[1] + dy]
    }

    /// The camera → projector map as a `1×H×W×2` sampling grid.
    pub fn camera_grid(&self) -> Tensor<f64> {
        let (h, w) = (self.height, self.width);
        let mut data = Vec::with_capacity(h * w * 2);
        for i in 0..h {
            for j in 0..w {
                data.extend(self.camera_to_projector([mesh_coord(j, w), mesh_coord(i, h)]));
            }
        }
        Tensor::from_vec(&[1, h, w, 2], data).expect("grid shape")
    }

    fn check_input(&self, x: &Tensor<f32>) -> Result<usize> {
        let n = match *x.shape() {
            [n, 3, h, w] if h == self.height && w == self.width => n,
            _ => {
                return Err(Error::shape(format!(
                    "scene renders N×3×{}×{}, got {:?}",
                    self.height,
                    self.width,
                    x.shape()
                )))
            }
        };
        if x.values().iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::arg("projector input must lie in [0, 1]"));
        }
        Ok(n)
    }

    /// Pre-warp response `reflectance ⊙ clamp01(M · x^γp + ambient)` in the projector frame.
    pub fn photometric(&self, x: &Tensor<f32>) -> Result<Tensor<f64>> {
        let n = self.check_input(x)?;
        let plane = self.height * self.width;
        let refl = self.reflectance();
        let xv = x.values();
        let mut out = vec![0.0; xv.len()];
        for b in 0..n {
            let base = b * 3 * plane;
            for p in 0..plane {
                let lin: [f64; 3] =
                    std::array::from_fn(|c| (xv[base + c * plane + p] as f64).powf(self.projector_gamma[c]));
                for c in 0..3 {
                    let mixed: f64 = (0..3).map(|j| self.color_mix[c][j] * lin[j]).sum::<f64>() + self.ambient[c];
                    out[base + c * plane + p] = refl[c * plane + p] * mixed.clamp(0.0, 1.0);
                }
            }
        }
        Tensor::from_vec(x.shape(), out)
    }

    /// Resamples a projector-frame image into the camera frame.
    pub fn warp_to_camera(&self, r: &Tensor<f64>) -> Result<Tensor<f64>> {
        no_grad(|| grid_sample_bilinear(r, &self.camera_grid()))
    }

    /// Simulated capture of `x` (N×3×H×W in `[0, 1]`). Image `b` of the batch
    /// draws its noise from stream `index + b`.
    pub fn render_capture(&self, x: &Tensor<f32>, index: u64) -> Result<Tensor<f32>> {
        let seen = self.warp_to_camera(&self.photometric(x)?)?;
        let plane = self.height * self.width;
        let mut out: Vec<f32> = Vec::with_capacity(seen.numel());
        for (b, img) in seen.values().chunks(3 * plane).enumerate() {
            let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
            rng.set_stream(STREAM_NOISE + index + b as u64);
            for (c, chan) in img.chunks(plane).enumerate() {
                let inv = 1.0 / self.camera_gamma[c];
                for &v in chan {
                    let mut y = v.clamp(0.0, 1.0).powf(inv);
                    if self.noise_sigma > 0.0 {
                        y += self.noise_sigma * rng.sample::<f64, _>(StandardNormal);
                    }
                    out.push(y.clamp(0.0, 1.0) as f32);
                }
            }
        }
        Tensor::from_vec(x.shape(), out)
    }

    /// Uniform gray probe used to capture the surface image.
    pub fn probe(&self, level: f32) -> Tensor<f32> {
        Tensor::full(&[1, 3, self.height, self.width], level)
    }

    /// Procedural projector image number `index`, `1×3×H×W`.
    pub fn sampling_image(&self, index: u64) -> Tensor<f32> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(STREAM_IMAGE + index);
        let img = images::sampling_image(&mut rng, self.height, self.width);
        Tensor::from_vec(
            &[1, 3, self.height, self.width],
            img.into_iter().map(|v| v as f32).collect(),
        )
        .expect("image shape")
    }
}

/// Free-function form of [`SceneSetup::render_capture`].
pub fn render_capture(x: &Tensor<f32>, scene: &SceneSetup, index: u64) -> Result<Tensor<f32>> {
    scene.render_capture(x, index)
}
