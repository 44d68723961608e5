//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use compenkit::tensor::Element;
use compenkit::Tensor;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Uniform values in `[lo, hi)`.
pub fn random<T: Element>(shape: &[usize], seed: u64, lo: f64, hi: f64) -> Tensor<T> {
    let mut r = rng(seed);
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::from_f64_lossy(r.random_range(lo..hi))).collect();
    Tensor::from_vec(shape, data).unwrap()
}

pub fn random_image(seed: u64, h: usize, w: usize) -> Tensor<f32> {
    random(&[1, 3, h, w], seed, 0.0, 1.0)
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Direct-loop cross-correlation, `N×C×H×W` input and `O×C×kh×kw` weight.
#[allow(clippy::too_many_arguments)]
pub fn conv2d_naive(
    x: &[f64],
    (n, c, h, w): (usize, usize, usize, usize),
    k: &[f64],
    (o, kh, kw): (usize, usize, usize),
    bias: Option<&[f64]>,
    stride: usize,
    pad: usize,
) -> (Vec<f64>, usize, usize) {
    let oh = (h + 2 * pad - kh) / stride + 1;
    let ow = (w + 2 * pad - kw) / stride + 1;
    let mut out = vec![0.0; n * o * oh * ow];
    for b in 0..n {
        for oc in 0..o {
            for i in 0..oh {
                for j in 0..ow {
                    let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                    for ic in 0..c {
                        for di in 0..kh {
                            for dj in 0..kw {
                                let y = (i * stride + di) as isize - pad as isize;
                                let xx = (j * stride + dj) as isize - pad as isize;
                                if y < 0 || xx < 0 || y >= h as isize || xx >= w as isize {
                                    continue;
                                }
                                acc += x[((b * c + ic) * h + y as usize) * w + xx as usize]
                                    * k[((oc * c + ic) * kh + di) * kw + dj];
                            }
                        }
                    }
                    out[((b * o + oc) * oh + i) * ow + j] = acc;
                }
            }
        }
    }
    (out, oh, ow)
}

/// Normalized coordinate of mesh index `i` on an `n`-point axis (corners at ±1).
pub fn mesh(i: usize, n: usize) -> f64 {
    if n == 1 {
        0.0
    } else {
        -1.0 + 2.0 * i as f64 / (n - 1) as f64
    }
}

/// Bilinear lookup in an `h×w` plane at normalized `(x, y)`, clamped to the border.
pub fn bilinear(plane: &[f64], h: usize, w: usize, x: f64, y: f64) -> f64 {
    let axis = |v: f64, n: usize| -> (usize, usize, f64) {
        let u = ((v + 1.0) / 2.0 * (n - 1) as f64).clamp(0.0, (n - 1) as f64);
        let i0 = u.floor() as usize;
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, u - i0 as f64)
    };
    let (x0, x1, fx) = axis(x, w);
    let (y0, y1, fy) = axis(y, h);
    let at = |i: usize, j: usize| plane[i * w + j];
    (1.0 - fy) * ((1.0 - fx) * at(y0, x0) + fx * at(y0, x1)) + fy * ((1.0 - fx) * at(y1, x0) + fx * at(y1, x1))
}

/// Brute-force SSIM: for every full 11×11 window, weighted statistics under
/// a directly evaluated 2-D Gaussian (σ = 1.5), averaged over windows,
/// channels and batch.
pub fn ssim_reference(a: &[f64], b: &[f64], shape: [usize; 4]) -> f64 {
    let [n, c, h, w] = shape;
    const WIN: usize = 11;
    let sigma: f64 = 1.5;
    let mut g = [[0.0; WIN]; WIN];
    let mut total = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (di, dj) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(di * di + dj * dj) / (2.0 * sigma * sigma)).exp();
            total += *v;
        }
    }
    let (c1, c2) = (0.01f64.powi(2), 0.03f64.powi(2));
    let mut sum = 0.0;
    let mut count = 0usize;
    for plane in 0..n * c {
        let pa = &a[plane * h * w..(plane + 1) * h * w];
        let pb = &b[plane * h * w..(plane + 1) * h * w];
        for i in 0..=h - WIN {
            for j in 0..=w - WIN {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for di in 0..WIN {
                    for dj in 0..WIN {
                        let wt = g[di][dj] / total;
                        let (va, vb) = (pa[(i + di) * w + j + dj], pb[(i + di) * w + j + dj]);
                        ma += wt * va;
                        mb += wt * vb;
                        saa += wt * va * va;
                        sbb += wt * vb * vb;
                        sab += wt * va * vb;
                    }
                }
                let (va, vb, cov) = (saa - ma * ma, sbb - mb * mb, sab - ma * mb);
                sum += ((2.0 * ma * mb + c1) * (2.0 * cov + c2)) / ((ma * ma + mb * mb + c1) * (va + vb + c2));
                count += 1;
            }
        }
    }
    sum / count as f64
}

/// The CIEDE2000 verification pairs of Sharma, Wu and Dalal (2005):
/// `(Lab₁, Lab₂, ΔE₀₀)`.
pub const SHARMA_PAIRS: [([f64; 3], [f64; 3], f64); 34] = [
    ([50.0000, 2.6772, -79.7751], [50.0000, 0.0000, -82.7485], 2.0425),
    ([50.0000, 3.1571, -77.2803], [50.0000, 0.0000, -82.7485], 2.8615),
    ([50.0000, 2.8361, -74.0200], [50.0000, 0.0000, -82.7485], 3.4412),
    ([50.0000, -1.3802, -84.2814], [50.0000, 0.0000, -82.7485], 1.0000),
    ([50.0000, -1.1848, -84.8006], [50.0000, 0.0000, -82.7485], 1.0000),
    ([50.0000, -0.9009, -85.5211], [50.0000, 0.0000, -82.7485], 1.0000),
    ([50.0000, 0.0000, 0.0000], [50.0000, -1.0000, 2.0000], 2.3669),
    ([50.0000, -1.0000, 2.0000], [50.0000, 0.0000, 0.0000], 2.3669),
    ([50.0000, 2.4900, -0.0010], [50.0000, -2.4900, 0.0009], 7.1792),
    ([50.0000, 2.4900, -0.0010], [50.0000, -2.4900, 0.0010], 7.1792),
    ([50.0000, 2.4900, -0.0010], [50.0000, -2.4900, 0.0011], 7.2195),
    ([50.0000, 2.4900, -0.0010], [50.0000, -2.4900, 0.0012], 7.2195),
    ([50.0000, -0.0010, 2.4900], [50.0000, 0.0009, -2.4900], 4.8045),
    ([50.0000, -0.0010, 2.4900], [50.0000, 0.0010, -2.4900], 4.8045),
    ([50.0000, -0.0010, 2.4900], [50.0000, 0.0011, -2.4900], 4.7461),
    ([50.0000, 2.5000, 0.0000], [50.0000, 0.0000, -2.5000], 4.3065),
    ([50.0000, 2.5000, 0.0000], [73.0000, 25.0000, -18.0000], 27.1492),
    ([50.0000, 2.5000, 0.0000], [61.0000, -5.0000, 29.0000], 22.8977),
    ([50.0000, 2.5000, 0.0000], [56.0000, -27.0000, -3.0000], 31.9030),
    ([50.0000, 2.5000, 0.0000], [58.0000, 24.0000, 15.0000], 19.4535),
    ([50.0000, 2.5000, 0.0000], [50.0000, 3.1736, 0.5854], 1.0000),
    ([50.0000, 2.5000, 0.0000], [50.0000, 3.2972, 0.0000], 1.0000),
    ([50.0000, 2.5000, 0.0000], [50.0000, 1.8634, 0.5757], 1.0000),
    ([50.0000, 2.5000, 0.0000], [50.0000, 3.2592, 0.3350], 1.0000),
    ([60.2574, -34.0099, 36.2677], [60.4626, -34.1751, 39.4387], 1.2644),
    ([63.0109, -31.0961, -5.8663], [62.8187, -29.7946, -4.0864], 1.2630),
    ([61.2901, 3.7196, -5.3901], [61.4292, 2.2480, -4.9620], 1.8731),
    ([35.0831, -44.1164, 3.7933], [35.0232, -40.0716, 1.5901], 1.8645),
    ([22.7233, 20.0904, -46.6940], [23.0331, 14.9730, -42.5619], 2.0373),
    ([36.4612, 47.8580, 18.3852], [36.2715, 50.5065, 21.2231], 1.4146),
    ([90.8027, -2.0831, 1.4410], [91.1528, -1.6435, 0.0447], 1.4441),
    ([90.9257, -0.5406, -0.9208], [88.6381, -0.8985, -0.7239], 1.5381),
    ([6.7747, -0.2908, -2.4247], [5.8714, -0.0985, -2.2286], 0.6377),
    ([2.0776, 0.0795, -1.1350], [0.9033, -0.0636, -0.5514], 0.9082),
];

/// A named measurement against its tolerance.
#[derive(Debug)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub tolerance: f64,
}

impl Check {
    pub fn passed(&self) -> bool {
        self.value <= self.tolerance
    }
}

impl std::fmt::Display for Check {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let verdict = if self.passed() { "ok" } else { "FAIL" };
        write!(
            f,
            "{:<34} {:>10.3e}  (tolerance {:.0e})  {verdict}",
            self.name, self.value, self.tolerance
        )
    }
}

const SHAPE_SEED: u64 = 0x5AFE;

/// Random `(shape, k)` pairs meeting the shuffle divisibility rule.
pub fn shuffle_shapes(count: usize) -> Vec<([usize; 4], usize)> {
    let mut r = rng(SHAPE_SEED);
    (0..count)
        .map(|_| {
            let k = r.random_range(1..=4);
            let shape = [
                r.random_range(1..=3),
                r.random_range(1..=4),
                k * r.random_range(1..=6),
                k * r.random_range(1..=6),
            ];
            (shape, k)
        })
        .collect()
}

/// Number of shapes where either shuffle composition is not bit-exact.
pub fn shuffle_mismatches(count: usize) -> usize {
    use compenkit::tensor::{pixel_shuffle, pixel_unshuffle};
    let bits = |t: &Tensor<f32>| t.to_vec().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    shuffle_shapes(count)
        .into_iter()
        .enumerate()
        .filter(|(i, (shape, k))| {
            let x: Tensor<f32> = random(shape, 100 + *i as u64, -1.0, 1.0);
            let there = pixel_shuffle(&pixel_unshuffle(&x, *k).unwrap(), *k).unwrap();
            let [n, c, h, w] = *shape;
            let m: Tensor<f32> = random(&[n, c * k * k, h / k, w / k], 200 + *i as u64, -1.0, 1.0);
            let back = pixel_unshuffle(&pixel_shuffle(&m, *k).unwrap(), *k).unwrap();
            bits(&there) != bits(&x) || bits(&back) != bits(&m)
        })
        .count()
}

/// Largest deviation of an identity-grid warp from its input.
pub fn identity_warp_error() -> f64 {
    use compenkit::warp::{warp_image, SamplingGrid};
    [(1, 17, 23), (2, 32, 32), (3, 5, 64)]
        .into_iter()
        .enumerate()
        .map(|(i, (n, h, w))| {
            let x: Tensor<f32> = random(&[n, 3, h, w], 300 + i as u64, 0.0, 1.0);
            let out = warp_image(&x, &SamplingGrid::identity(h, w)).unwrap();
            max_abs_diff(&out.to_f64_vec(), &x.to_f64_vec())
        })
        .fold(0.0, f64::max)
}

/// Largest deviation of the zero-offset TPS grid from the identity mesh.
pub fn zero_tps_error() -> f64 {
    use compenkit::warp::{default_control_points, tps_grid, SamplingGrid, TpsParams};
    let ring: Vec<[f64; 2]> = (0..9)
        .map(|i| {
            let a = i as f64 * std::f64::consts::TAU / 9.0;
            [0.8 * a.cos(), 0.7 * a.sin()]
        })
        .collect();
    [default_control_points(), ring]
        .iter()
        .flat_map(|ctrl| [(16, 16), (33, 20)].map(|hw| (ctrl.clone(), hw)))
        .map(|(ctrl, (h, w))| {
            let tps = TpsParams::<f32>::new("t", &ctrl).unwrap();
            let grid = tps_grid(&tps, h, w).unwrap();
            max_abs_diff(
                &grid.tensor().to_f64_vec(),
                &SamplingGrid::<f32>::identity(h, w).tensor().to_f64_vec(),
            )
        })
        .fold(0.0, f64::max)
}

/// Largest deviation of an all-zero refinement net from its input grid.
pub fn zero_refine_error() -> f64 {
    use compenkit::warp::{RefineConfig, RefineNet, SamplingGrid};
    let net = RefineNet::<f32>::zeroed("r", &RefineConfig::default()).unwrap();
    [(16, 16), (64, 48)]
        .into_iter()
        .enumerate()
        .map(|(i, (h, w))| {
            let g: Tensor<f32> = random(&[1, h, w, 2], 400 + i as u64, -1.0, 1.0);
            let out = net.forward(&SamplingGrid::new(g.clone()).unwrap()).unwrap();
            max_abs_diff(&out.tensor().to_f64_vec(), &g.to_f64_vec())
        })
        .fold(0.0, f64::max)
}

/// Largest relative gap in `⟨conv2d(x, w), y⟩ = ⟨x, conv_transpose2d(y, w)⟩`.
pub fn conv_adjoint_error() -> f64 {
    use compenkit::tensor::{conv2d, conv_transpose2d};
    // (n, c, o, y_h, y_w, kernel, stride, pad); x takes the transpose's output shape.
    let cases = [
        (1, 1, 1, 3, 3, 3, 1, 0),
        (2, 3, 4, 9, 7, 3, 1, 1),
        (1, 2, 3, 4, 4, 3, 2, 1),
        (2, 4, 2, 6, 5, 2, 2, 0),
        (1, 3, 5, 4, 3, 5, 3, 2),
        (3, 2, 6, 6, 6, 1, 1, 0),
    ];
    cases
        .into_iter()
        .enumerate()
        .map(|(i, (n, c, o, yh, yw, k, s, p))| {
            let seed = 500 + 3 * i as u64;
            let wt: Tensor<f64> = random(&[o, c, k, k], seed, -1.0, 1.0);
            let y: Tensor<f64> = random(&[n, o, yh, yw], seed + 1, -1.0, 1.0);
            let back = conv_transpose2d(&y, &wt, None, s, p).unwrap();
            let x: Tensor<f64> = random(back.shape(), seed + 2, -1.0, 1.0);
            let fwd = conv2d(&x, &wt, None, s, p).unwrap();
            assert_eq!(fwd.shape(), y.shape());
            let lhs = dot(&fwd.to_f64_vec(), &y.to_f64_vec());
            let rhs = dot(&x.to_f64_vec(), &back.to_f64_vec());
            (lhs - rhs).abs() / lhs.abs().max(rhs.abs()).max(1.0)
        })
        .fold(0.0, f64::max)
}

/// The exactness suite: shuffle round trips, identity warps and the adjoint identity.
pub fn exactness_checks() -> Vec<Check> {
    vec![
        Check {
            name: "shuffle round trips (20 shapes)",
            value: shuffle_mismatches(20) as f64,
            tolerance: 0.0,
        },
        Check {
            name: "identity-grid warp",
            value: identity_warp_error(),
            tolerance: 1e-6,
        },
        Check {
            name: "zero-offset TPS grid",
            value: zero_tps_error(),
            tolerance: 1e-6,
        },
        Check {
            name: "zero-weight refinement",
            value: zero_refine_error(),
            tolerance: 0.0,
        },
        Check {
            name: "conv/conv-transpose adjoint",
            value: conv_adjoint_error(),
            tolerance: 1e-5,
        },
    ]
}

fn metric_pairs(count: usize) -> Vec<(Tensor<f32>, Tensor<f32>)> {
    (0..count as u64)
        .map(|i| {
            let (h, w) = (16 + 3 * i as usize, 24 - i as usize);
            let a = random_image(600 + i, h, w);
            // Correlated second image: a blend with independent noise.
            let noise = random_image(700 + i, h, w).to_vec();
            let t = 0.15 + 0.08 * i as f32;
            let b: Vec<f32> = a
                .to_vec()
                .iter()
                .zip(noise)
                .map(|(x, n)| (1.0 - t) * x + t * n)
                .collect();
            (a, Tensor::from_vec(&[1, 3, h, w], b).unwrap())
        })
        .collect()
}

/// Largest `|SSIM(x, x) − 1|`.
pub fn ssim_identity_error() -> f64 {
    metric_pairs(10)
        .iter()
        .map(|(a, _)| (compenkit::metrics::ssim(a, a).unwrap() - 1.0).abs())
        .fold(0.0, f64::max)
}

/// Largest gap to the brute-force SSIM over ten correlated pairs.
pub fn ssim_reference_error() -> f64 {
    metric_pairs(10)
        .iter()
        .map(|(a, b)| {
            let s = a.shape();
            let reference = ssim_reference(&a.to_f64_vec(), &b.to_f64_vec(), [s[0], s[1], s[2], s[3]]);
            (compenkit::metrics::ssim(a, b).unwrap() - reference).abs()
        })
        .fold(0.0, f64::max)
}

/// Largest gap between the library's RMSE / PSNR and the textbook formulas.
pub fn psnr_rmse_error() -> f64 {
    use compenkit::metrics::{psnr, rmse};
    metric_pairs(10)
        .iter()
        .map(|(a, b)| {
            let (va, vb) = (a.to_f64_vec(), b.to_f64_vec());
            let mse = va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / va.len() as f64;
            let r = rmse(a, b).unwrap();
            let p = psnr(a, b).unwrap();
            (r - mse.sqrt()).abs().max((p - 20.0 * (1.0 / r).log10()).abs())
        })
        .fold(0.0, f64::max)
}

/// Largest gap to the published CIEDE2000 verification values.
pub fn ciede2000_error() -> f64 {
    SHARMA_PAIRS
        .iter()
        .flat_map(|(a, b, de)| {
            [
                (compenkit::metrics::ciede2000(*a, *b) - de).abs(),
                (compenkit::metrics::ciede2000(*b, *a) - de).abs(),
            ]
        })
        .fold(0.0, f64::max)
}

pub fn metric_checks() -> Vec<Check> {
    vec![
        Check {
            name: "SSIM(x, x) = 1",
            value: ssim_identity_error(),
            tolerance: 1e-6,
        },
        Check {
            name: "SSIM vs brute-force reference",
            value: ssim_reference_error(),
            tolerance: 1e-4,
        },
        Check {
            name: "PSNR/RMSE formulas",
            value: psnr_rmse_error(),
            tolerance: 1e-9,
        },
        Check {
            name: "CIEDE2000 verification pairs",
            value: ciede2000_error(),
            tolerance: 1e-4,
        },
    ]
}
