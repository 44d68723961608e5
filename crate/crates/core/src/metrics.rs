//! Image quality metrics: RMSE, PSNR, SSIM and CIEDE2000 color difference.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{no_grad, Element, Tensor};

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_C1: f64 = 0.01 * 0.01;
pub const SSIM_C2: f64 = 0.03 * 0.03;
/// PSNR reported when the RMSE falls below [`PSNR_FLOOR_RMSE`].
pub const PSNR_CAP: f64 = 100.0;
pub const PSNR_FLOOR_RMSE: f64 = 1e-5;

fn same_shape<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<()> {
    if a.shape() != b.shape() {
        return Err(Error::shape(format!(
            "cannot compare {:?} with {:?}",
            a.shape(),
            b.shape()
        )));
    }
    Ok(())
}

pub fn rmse(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape(a, b)?;
    let (x, y) = (a.values(), b.values());
    if x.is_empty() {
        return Err(Error::arg("cannot compare empty images"));
    }
    let se: f64 = x
        .iter()
        .zip(y.iter())
        .map(|(&p, &q)| (p as f64 - q as f64).powi(2))
        .sum();
    Ok((se / x.len() as f64).sqrt())
}

/// `20 log10(1 / rmse)` on unit-range images.
pub fn psnr_from_rmse(rmse: f64) -> f64 {
    if rmse < PSNR_FLOOR_RMSE {
        PSNR_CAP
    } else {
        20.0 * (1.0 / rmse).log10()
    }
}

pub fn psnr(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    Ok(psnr_from_rmse(rmse(a, b)?))
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let mid = (size as f64 - 1.0) / 2.0;
    let taps: Vec<f64> = (0..size)
        .map(|i| (-(i as f64 - mid).powi(2) / (2.0 * sigma * sigma)).exp())
        .collect();
    let total: f64 = taps.iter().sum();
    taps.into_iter().map(|t| t / total).collect()
}

/// Mean SSIM over all full windows, channels and batch items; differentiable.
pub fn ssim_tensor<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    same_shape(a, b)?;
    if a.ndim() != 4 {
        return Err(Error::shape(format!("SSIM needs N×C×H×W, got {:?}", a.shape())));
    }
    let taps: Vec<T> = gaussian_window(SSIM_WINDOW, SSIM_SIGMA)
        .into_iter()
        .map(T::from_f64_lossy)
        .collect();
    let blur = |t: &Tensor<T>| t.filter_width_valid(&taps)?.filter_height_valid(&taps);
    let mu_a = blur(a)?;
    let mu_b = blur(b)?;
    let mu_aa = mu_a.square();
    let mu_bb = mu_b.square();
    let mu_ab = mu_a.mul(&mu_b)?;
    let var_a = blur(&a.square())?.sub(&mu_aa)?;
    let var_b = blur(&b.square())?.sub(&mu_bb)?;
    let cov = blur(&a.mul(b)?)?.sub(&mu_ab)?;
    let two = T::from_f64_lossy(2.0);
    let c1 = T::from_f64_lossy(SSIM_C1);
    let c2 = T::from_f64_lossy(SSIM_C2);
    let num = mu_ab
        .mul_scalar(two)
        .add_scalar(c1)
        .mul(&cov.mul_scalar(two).add_scalar(c2))?;
    let den = mu_aa
        .add(&mu_bb)?
        .add_scalar(c1)
        .mul(&var_a.add(&var_b)?.add_scalar(c2))?;
    Ok(num.div(&den)?.mean())
}

/// SSIM with an 11×11 Gaussian window (σ = 1.5), averaged over channels.
pub fn ssim(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    same_shape(a, b)?;
    let (a, b) = (a.cast::<f64>(), b.cast::<f64>());
    Ok(no_grad(|| ssim_tensor(&a, &b))?.item())
}

fn srgb_to_linear(v: f64) -> f64 {
    if v <= 0.04045 {
        v / 12.92
    } else {
        ((v + 0.055) / 1.055).powf(2.4)
    }
}

/// sRGB in `[0, 1]` to CIELAB under D65.
pub fn srgb_to_lab(rgb: [f64; 3]) -> [f64; 3] {
    let [r, g, b] = rgb.map(srgb_to_linear);
    let x = 0.4124564 * r + 0.3575761 * g + 0.1804375 * b;
    let y = 0.2126729 * r + 0.7151522 * g + 0.0721750 * b;
    let z = 0.0193339 * r + 0.1191920 * g + 0.9503041 * b;
    let white = [0.95047, 1.0, 1.08883];
    let delta: f64 = 6.0 / 29.0;
    let f = |t: f64| {
        if t > delta.powi(3) {
            t.cbrt()
        } else {
            t / (3.0 * delta * delta) + 4.0 / 29.0
        }
    };
    let (fx, fy, fz) = (f(x / white[0]), f(y / white[1]), f(z / white[2]));
    [116.0 * fy - 16.0, 500.0 * (fx - fy), 200.0 * (fy - fz)]
}

/// CIEDE2000 difference between two CIELAB colors (`k_L = k_C = k_H = 1`).
pub fn ciede2000(lab1: [f64; 3], lab2: [f64; 3]) -> f64 {
    let [l1, a1, b1] = lab1;
    let [l2, a2, b2] = lab2;
    let c_bar = (a1.hypot(b1) + a2.hypot(b2)) / 2.0;
    let c7 = c_bar.powi(7);
    let g = 0.5 * (1.0 - (c7 / (c7 + 25f64.powi(7))).sqrt());
    let (a1p, a2p) = ((1.0 + g) * a1, (1.0 + g) * a2);
    let (c1p, c2p) = (a1p.hypot(b1), a2p.hypot(b2));
    let hue = |b: f64, a: f64| {
        if a == 0.0 && b == 0.0 {
            0.0
        } else {
            b.atan2(a).to_degrees().rem_euclid(360.0)
        }
    };
    let (h1p, h2p) = (hue(b1, a1p), hue(b2, a2p));

    let dl = l2 - l1;
    let dc = c2p - c1p;
    let dh = if c1p * c2p == 0.0 {
        0.0
    } else if (h2p - h1p).abs() <= 180.0 {
        h2p - h1p
    } else if h2p - h1p > 180.0 {
        h2p - h1p - 360.0
    } else {
        h2p - h1p + 360.0
    };
    let d_big_h = 2.0 * (c1p * c2p).sqrt() * (dh / 2.0).to_radians().sin();

    let l_bar = (l1 + l2) / 2.0;
    let c_bar_p = (c1p + c2p) / 2.0;
    let h_bar = if c1p * c2p == 0.0 {
        h1p + h2p
    } else if (h1p - h2p).abs() <= 180.0 {
        (h1p + h2p) / 2.0
    } else if h1p + h2p < 360.0 {
        (h1p + h2p + 360.0) / 2.0
    } else {
        (h1p + h2p - 360.0) / 2.0
    };
    let t = 1.0 - 0.17 * (h_bar - 30.0).to_radians().cos()
        + 0.24 * (2.0 * h_bar).to_radians().cos()
        + 0.32 * (3.0 * h_bar + 6.0).to_radians().cos()
        - 0.20 * (4.0 * h_bar - 63.0).to_radians().cos();
    let d_theta = 30.0 * (-((h_bar - 275.0) / 25.0).powi(2)).exp();
    let cp7 = c_bar_p.powi(7);
    let r_c = 2.0 * (cp7 / (cp7 + 25f64.powi(7))).sqrt();
    let l50 = (l_bar - 50.0).powi(2);
    let s_l = 1.0 + 0.015 * l50 / (20.0 + l50).sqrt();
    let s_c = 1.0 + 0.045 * c_bar_p;
    let s_h = 1.0 + 0.015 * c_bar_p * t;
    let r_t = -(2.0 * d_theta).to_radians().sin() * r_c;
    let (tl, tc, th) = (dl / s_l, dc / s_c, d_big_h / s_h);
    (tl * tl + tc * tc + th * th + r_t * tc * th).sqrt()
}

/// Per-pixel CIEDE2000 between two sRGB images, `N×3×H×W`.
pub fn delta_e_map(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Vec<f64>> {
    same_shape(a, b)?;
    let (n, h, w) = match *a.shape() {
        [n, 3, h, w] => (n, h, w),
        _ => return Err(Error::arg(format!("ΔE needs 3-channel images, got {:?}", a.shape()))),
    };
    let plane = h * w;
    let (x, y) = (a.values(), b.values());
    let mut out = Vec::with_capacity(n * plane);
    for img in 0..n {
        let base = img * 3 * plane;
        for p in 0..plane {
            let px = |v: &[f32]| std::array::from_fn(|c| v[base + c * plane + p] as f64);
            out.push(ciede2000(srgb_to_lab(px(&x)), srgb_to_lab(px(&y))));
        }
    }
    Ok(out)
}

/// Mean CIEDE2000 over all pixels.
pub fn delta_e(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<f64> {
    let map = delta_e_map(a, b)?;
    if map.is_empty() {
        return Err(Error::arg("cannot compare empty images"));
    }
    Ok(map.iter().sum::<f64>() / map.len() as f64)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub psnr: f64,
    pub rmse: f64,
    pub ssim: f64,
    pub delta_e: f64,
}

impl ImageMetrics {
    pub fn between(a: &Tensor<f32>, b: &Tensor<f32>) -> Result<Self> {
        let rmse = rmse(a, b)?;
        Ok(ImageMetrics {
            psnr: psnr_from_rmse(rmse),
            rmse,
            ssim: ssim(a, b)?,
            delta_e: delta_e(a, b)?,
        })
    }

    /// Unweighted mean of each field.
    pub fn mean(items: &[ImageMetrics]) -> Result<Self> {
        if items.is_empty() {
            return Err(Error::arg("no metrics to average"));
        }
        let n = items.len() as f64;
        let avg = |f: fn(&ImageMetrics) -> f64| items.iter().map(f).sum::<f64>() / n;
        Ok(ImageMetrics {
            psnr: avg(|m| m.psnr),
            rmse: avg(|m| m.rmse),
            ssim: avg(|m| m.ssim),
            delta_e: avg(|m| m.delta_e),
        })
    }
}

/// Published full-size averages over 19 real projector-camera setups. They
/// need physical rigs and are kept for reference only.
pub const PUBLISHED_COMPENSATED: ImageMetrics = ImageMetrics {
    psnr: 20.9496,
    rmse: 0.1554,
    ssim: 0.6012,
    delta_e: 7.5901,
};

pub const PUBLISHED_UNCOMPENSATED: ImageMetrics = ImageMetrics {
    psnr: 11.4813,
    rmse: 0.4676,
    ssim: 0.2384,
    delta_e: 21.7226,
};

/// Per-image and aggregate metrics of one evaluation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsRecord {
    pub per_image: Vec<ImageMetrics>,
    pub mean: ImageMetrics,
}

impl MetricsRecord {
    pub fn from_images(per_image: Vec<ImageMetrics>) -> Result<Self> {
        let mean = ImageMetrics::mean(&per_image)?;
        Ok(MetricsRecord { per_image, mean })
    }
}
