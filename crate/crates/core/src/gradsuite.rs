//! Finite-difference gradient suite over every differentiable operation,
//! from single tensor ops up to the full GANet and PANet at toy size.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss, LossTerms};
use crate::metrics::ssim_tensor;
use crate::nn::{Init, InitMode, Module, PixelAttention};
use crate::panet::{Panet, PanetConfig};
use crate::tensor::{
    conv2d, conv_transpose2d, gradcheck_mixed, gradcheck_sampled, grid_sample_bilinear, pixel_shuffle, pixel_unshuffle,
    Element, ScalarFn, Tensor,
};
use crate::warp::{
    affine_grid, compose_coarse_grid, tps_grid, warp_image, Ganet, GanetConfig, RefineConfig, SamplingGrid, TpsParams,
};

/// Coordinates checked per input tensor and seed.
const COORDS_PER_INPUT: usize = 8;
const EPS: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Op {
    Conv2d,
    Conv2dStrided,
    ConvTranspose2d,
    Relu,
    Sigmoid,
    Clamp01,
    Elementwise,
    Reductions,
    Layout,
    Matmul,
    GridSample,
    PixelShuffle,
    PixelAttention,
    AffineGrid,
    TpsGrid,
    CoarseGrid,
    Ssim,
    Loss,
    Ganet,
    Panet,
}

impl Op {
    pub const ALL: [Op; 20] = [
        Op::Conv2d,
        Op::Conv2dStrided,
        Op::ConvTranspose2d,
        Op::Relu,
        Op::Sigmoid,
        Op::Clamp01,
        Op::Elementwise,
        Op::Reductions,
        Op::Layout,
        Op::Matmul,
        Op::GridSample,
        Op::PixelShuffle,
        Op::PixelAttention,
        Op::AffineGrid,
        Op::TpsGrid,
        Op::CoarseGrid,
        Op::Ssim,
        Op::Loss,
        Op::Ganet,
        Op::Panet,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Op::Conv2d => "conv2d",
            Op::Conv2dStrided => "conv2d_strided",
            Op::ConvTranspose2d => "conv_transpose2d",
            Op::Relu => "relu",
            Op::Sigmoid => "sigmoid",
            Op::Clamp01 => "clamp01",
            Op::Elementwise => "elementwise",
            Op::Reductions => "reductions",
            Op::Layout => "layout",
            Op::Matmul => "matmul",
            Op::GridSample => "grid_sample",
            Op::PixelShuffle => "pixel_shuffle",
            Op::PixelAttention => "pixel_attention",
            Op::AffineGrid => "affine_grid",
            Op::TpsGrid => "tps_grid",
            Op::CoarseGrid => "coarse_grid",
            Op::Ssim => "ssim",
            Op::Loss => "loss",
            Op::Ganet => "ganet",
            Op::Panet => "panet",
        }
    }

    /// Ops selected by `scope`: `all`, `tensor`, `nets` or one op name.
    pub fn scope(scope: &str) -> Result<Vec<Op>> {
        match scope {
            "all" => Ok(Op::ALL.to_vec()),
            "tensor" => Ok(Op::ALL
                .into_iter()
                .filter(|op| !matches!(op, Op::Ganet | Op::Panet))
                .collect()),
            "nets" => Ok(vec![Op::Ganet, Op::Panet]),
            name => Ok(vec![name.parse()?]),
        }
    }
}

impl fmt::Display for Op {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Op {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Op::ALL
            .into_iter()
            .find(|op| op.name() == s)
            .ok_or_else(|| Error::arg(format!("unknown gradcheck op {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Precision {
    /// f32 analytic gradients against f64 central differences.
    Single,
    Double,
}

impl fmt::Display for Precision {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Precision::Single => "f32",
            Precision::Double => "f64",
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Thresholds {
    pub single: f64,
    pub double: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            single: 1e-3,
            double: 1e-5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OpReport {
    pub op: Op,
    pub precision: Precision,
    /// Worst over all seeds.
    pub max_rel_error: f64,
    pub worst_seed: u64,
    pub threshold: f64,
    pub seeds: usize,
    pub checked: usize,
}

impl OpReport {
    pub fn passed(&self) -> bool {
        self.max_rel_error < self.threshold
    }
}

/// Checks each op in both precisions over `seeds`.
pub fn run(ops: &[Op], seeds: &[u64], thresholds: Thresholds) -> Result<Vec<OpReport>> {
    let mut reports = Vec::new();
    for &op in ops {
        for precision in [Precision::Single, Precision::Double] {
            let threshold = match precision {
                Precision::Single => thresholds.single,
                Precision::Double => thresholds.double,
            };
            let mut report = OpReport {
                op,
                precision,
                max_rel_error: 0.0,
                worst_seed: seeds.first().copied().unwrap_or(0),
                threshold,
                seeds: seeds.len(),
                checked: 0,
            };
            for &seed in seeds {
                let case = Case::new(op, seed)?;
                let r = match precision {
                    Precision::Single => gradcheck_mixed(&case, &case.inputs, EPS, COORDS_PER_INPUT, seed)?,
                    Precision::Double => {
                        let wide: Vec<Tensor<f64>> = case.inputs.iter().map(|t| t.cast::<f64>()).collect();
                        gradcheck_sampled(|xs| case.eval(xs), &wide, EPS, COORDS_PER_INPUT, seed)?
                    }
                };
                report.checked += r.checked;
                if r.max_rel_error > report.max_rel_error || r.max_rel_error.is_nan() {
                    report.max_rel_error = if r.max_rel_error.is_nan() {
                        f64::INFINITY
                    } else {
                        r.max_rel_error
                    };
                    report.worst_seed = seed;
                }
            }
            reports.push(report);
        }
    }
    Ok(reports)
}

/// One op at one seed: fixed inputs plus a function of any precision.
pub struct Case {
    pub op: Op,
    pub seed: u64,
    pub inputs: Vec<Tensor<f32>>,
}

fn ganet_config() -> GanetConfig {
    GanetConfig {
        refine_net: RefineConfig {
            widths: [4, 4, 6, 6, 6, 6],
            ..RefineConfig::default()
        },
        ..GanetConfig::default()
    }
}

fn panet_config() -> PanetConfig {
    PanetConfig {
        widths: [4, 6, 8],
        ..PanetConfig::default()
    }
}

const NET_SIZE: usize = 8;
const PANET_K: usize = 2;

fn uniform(rng: &mut ChaCha8Rng, n: usize, lo: f32, hi: f32) -> Vec<f32> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Values bounded away from zero, so kinks at 0 are never crossed.
fn off_zero(rng: &mut ChaCha8Rng, n: usize) -> Vec<f32> {
    (0..n)
        .map(|_| {
            let v: f32 = rng.random_range(0.05..1.0);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        })
        .collect()
}

fn param(shape: &[usize], data: Vec<f32>) -> Result<Tensor<f32>> {
    Tensor::param(shape, data)
}

fn constant<T: Element>(shape: &[usize], data: Vec<f32>) -> Result<Tensor<T>> {
    Ok(Tensor::<f32>::from_vec(shape, data)?.cast())
}

fn params_of<M: Module<f32>>(m: &M) -> Result<Vec<Tensor<f32>>> {
    m.params()
        .iter()
        .map(|p| param(p.tensor.shape(), p.tensor.to_vec()))
        .collect()
}

/// Zero biases put ReLUs fed by dead regions exactly on their kink.
fn randomize_biases<M: Module<f32>>(m: &mut M, rng: &mut ChaCha8Rng) -> Result<()> {
    for p in m.params_mut() {
        if p.name.ends_with(".bias") {
            let n = p.numel();
            p.tensor.set_values(&uniform(rng, n, -0.1, 0.1))?;
        }
    }
    Ok(())
}

impl Case {
    pub fn new(op: Op, seed: u64) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(op as u64);
        let r = &mut rng;
        let inputs = match op {
            Op::Conv2d | Op::Conv2dStrided => vec![
                param(&[2, 2, 5, 5], uniform(r, 100, -1.0, 1.0))?,
                param(&[3, 2, 3, 3], uniform(r, 54, -1.0, 1.0))?,
                param(&[3], uniform(r, 3, -1.0, 1.0))?,
            ],
            Op::ConvTranspose2d => vec![
                param(&[2, 2, 3, 3], uniform(r, 36, -1.0, 1.0))?,
                param(&[2, 3, 4, 4], uniform(r, 96, -1.0, 1.0))?,
                param(&[3], uniform(r, 3, -1.0, 1.0))?,
            ],
            Op::Relu | Op::Sigmoid => vec![param(&[2, 3, 4], off_zero(r, 24))?],
            Op::Clamp01 => {
                let v = uniform(r, 24, -0.5, 1.5)
                    .into_iter()
                    .map(|x| {
                        if (x.abs() < 0.05) || ((x - 1.0).abs() < 0.05) {
                            x + 0.1
                        } else {
                            x
                        }
                    })
                    .collect();
                vec![param(&[24], v)?]
            }
            Op::Elementwise => vec![
                param(&[2, 3, 4], off_zero(r, 24))?,
                param(&[2, 3, 4], uniform(r, 24, 0.5, 2.0))?,
            ],
            Op::Reductions | Op::Layout => vec![param(&[2, 3, 4], off_zero(r, 24))?],
            Op::Matmul => vec![
                param(&[3, 4], uniform(r, 12, -1.0, 1.0))?,
                param(&[4, 5], uniform(r, 20, -1.0, 1.0))?,
            ],
            Op::GridSample => vec![
                param(&[2, 2, 6, 6], uniform(r, 144, 0.0, 1.0))?,
                param(&[2, 5, 5, 2], uniform(r, 100, -0.9, 0.9))?,
            ],
            Op::PixelShuffle => vec![param(&[1, 8, 3, 3], uniform(r, 72, -1.0, 1.0))?],
            Op::PixelAttention => {
                let pa = PixelAttention::<f32>::new("p", 3, Init::Normal { std: 0.7 }, r)?;
                let mut v = vec![param(&[2, 3, 4, 4], uniform(r, 96, -1.0, 1.0))?];
                v.extend(params_of(&pa)?);
                v[2].set_values(&uniform(r, 3, -0.5, 0.5))?;
                v
            }
            Op::AffineGrid => vec![param(&[2, 3], uniform(r, 6, -1.0, 1.0))?],
            Op::TpsGrid => vec![param(&[5, 2], uniform(r, 10, -0.2, 0.2))?],
            Op::CoarseGrid => {
                let mut theta = vec![1.0f32, 0.0, 0.0, 0.0, 1.0, 0.0];
                theta.iter_mut().for_each(|t| *t += r.random_range(-0.1..0.1));
                vec![param(&[2, 3], theta)?, param(&[5, 2], uniform(r, 10, -0.1, 0.1))?]
            }
            Op::Ssim | Op::Loss => vec![
                param(&[1, 3, 12, 12], uniform(r, 432, 0.0, 1.0))?,
                param(&[1, 3, 12, 12], uniform(r, 432, 0.0, 1.0))?,
            ],
            Op::Ganet => {
                let mut net = Ganet::<f32>::new(&ganet_config(), InitMode::Scaled, r)?;
                randomize_biases(&mut net, r)?;
                let mut v = vec![param(
                    &[1, 3, NET_SIZE, NET_SIZE],
                    uniform(r, 3 * NET_SIZE * NET_SIZE, 0.0, 1.0),
                )?];
                v.extend(params_of(&net)?);
                let theta = [0.9, 0.05, 0.02, -0.05, 0.95, -0.03].map(|t: f32| t + r.random_range(-0.02..0.02));
                v[1].set_values(&theta)?;
                v[2].set_values(&uniform(r, 10, -0.05, 0.05))?;
                // a visible residual so every refinement layer matters
                let last = v.len() - 2;
                let n = v[last].numel();
                v[last].set_values(&uniform(r, n, -0.1, 0.1))?;
                v
            }
            Op::Panet => {
                let c = 3 * PANET_K * PANET_K;
                let mut net = Panet::<f32>::new(c, &panet_config(), Init::He, r)?;
                randomize_biases(&mut net, r)?;
                let n = 3 * NET_SIZE * NET_SIZE;
                let mut v = vec![
                    param(&[2, 3, NET_SIZE, NET_SIZE], uniform(r, 2 * n, 0.0, 1.0))?,
                    param(&[1, 3, NET_SIZE, NET_SIZE], uniform(r, n, 0.0, 1.0))?,
                ];
                v.extend(params_of(&net)?);
                v
            }
        };
        Ok(Case { op, seed, inputs })
    }

    /// Fixed random weights that turn a tensor output into a scalar.
    fn project<T: Element>(&self, out: &Tensor<T>) -> Result<Tensor<T>> {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed ^ 0x5eed);
        let w = constant::<T>(out.shape(), uniform(&mut rng, out.numel(), -1.0, 1.0))?;
        Ok(out.mul(&w)?.sum())
    }
}

impl ScalarFn for Case {
    fn eval<T: Element>(&self, x: &[Tensor<T>]) -> Result<Tensor<T>> {
        let out = match self.op {
            Op::Conv2d => conv2d(&x[0], &x[1], Some(&x[2]), 1, 1)?,
            Op::Conv2dStrided => conv2d(&x[0], &x[1], Some(&x[2]), 2, 1)?,
            Op::ConvTranspose2d => conv_transpose2d(&x[0], &x[1], Some(&x[2]), 2, 1)?,
            Op::Relu => x[0].relu(),
            Op::Sigmoid => x[0].mul_scalar(T::from_f64_lossy(3.0)).sigmoid(),
            Op::Clamp01 => x[0].clamp01(),
            Op::Elementwise => {
                let (a, b) = (&x[0], &x[1]);
                let half = T::from_f64_lossy(0.5);
                a.add(b)?
                    .mul(&a.sub(b)?)?
                    .div(b)?
                    .add(&a.abs())?
                    .add(&b.square().mul_scalar(half))?
                    .add_scalar(half)
            }
            Op::Reductions => {
                let s = x[0].square();
                s.sum().add(&x[0].mean().square())?.mul(&s.mean())?
            }
            Op::Layout => x[0].permute(&[2, 0, 1])?.reshape(&[1, 4, 6])?.repeat_batch(3)?,
            Op::Matmul => x[0].matmul(&x[1])?,
            Op::GridSample => grid_sample_bilinear(&x[0], &x[1])?,
            Op::PixelShuffle => pixel_unshuffle(&pixel_shuffle(&x[0], 2)?.mul(&pixel_shuffle(&x[0], 2)?)?, 2)?,
            Op::PixelAttention => {
                let mut pa = PixelAttention::<T>::new("p", 3, Init::Zeros, &mut ChaCha8Rng::seed_from_u64(0))?;
                pa.bind(&x[1..])?;
                pa.forward(&x[0])?
            }
            Op::AffineGrid => affine_grid(&x[0], 5, 4)?.into_tensor(),
            Op::TpsGrid => {
                let mut tps = TpsParams::<T>::new("t", &ganet_config().ctrl_points)?;
                tps.bind(&x[..1])?;
                tps_grid(&tps, 5, 4)?.into_tensor()
            }
            Op::CoarseGrid => {
                let mut tps = TpsParams::<T>::new("t", &ganet_config().ctrl_points)?;
                tps.bind(&x[1..2])?;
                let g_aff = affine_grid(&x[0], 6, 5)?;
                compose_coarse_grid(&g_aff, &tps_grid(&tps, 6, 5)?)?.into_tensor()
            }
            Op::Ssim => return ssim_tensor(&x[0], &x[1]),
            Op::Loss => return Ok(loss(&x[0], &x[1], LossTerms::FULL)?.total),
            Op::Ganet => {
                let mut net = Ganet::<T>::identity(&ganet_config())?;
                net.bind(&x[1..])?;
                let g: SamplingGrid<T> = net.grid(NET_SIZE, NET_SIZE)?;
                warp_image(&x[0], &g)?
            }
            Op::Panet => {
                let c = 3 * PANET_K * PANET_K;
                let mut net = Panet::<T>::new(c, &panet_config(), Init::Zeros, &mut ChaCha8Rng::seed_from_u64(0))?;
                net.bind(&x[2..])?;
                net.forward(&x[0], &x[1], PANET_K)?
            }
        };
        self.project(&out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn names_round_trip() {
        for op in Op::ALL {
            assert_eq!(op.name().parse::<Op>().unwrap(), op);
        }
        assert_eq!(Op::scope("all").unwrap().len(), Op::ALL.len());
        assert_eq!(
            Op::scope("tensor").unwrap().len() + Op::scope("nets").unwrap().len(),
            Op::ALL.len()
        );
        assert!(Op::scope("bogus").is_err());
    }

    #[test]
    fn every_op_passes_one_seed() {
        let reports = run(&Op::ALL, &[0], Thresholds::default()).unwrap();
        let failed: Vec<_> = reports.iter().filter(|r| !r.passed()).collect();
        assert!(failed.is_empty(), "{failed:#?}");
    }
}
