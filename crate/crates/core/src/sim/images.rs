//! Procedural surface textures and projector sampling images.

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Planar `3×H×W` image with values in `[0, 1]`.
pub(crate) type Planar = Vec<f64>;

fn smoothstep(t: f64) -> f64 {
    t * t * (3.0 - 2.0 * t)
}

/// Single-channel value noise on a `cells×cells` lattice.
fn value_noise(rng: &mut ChaCha8Rng, cells: usize, h: usize, w: usize) -> Vec<f64> {
    let n = cells + 1;
    let lattice: Vec<f64> = (0..n * n).map(|_| rng.random::<f64>()).collect();
    let mut out = Vec::with_capacity(h * w);
    for y in 0..h {
        let fy = y as f64 / h as f64 * cells as f64;
        let (iy, ty) = (fy.floor() as usize, smoothstep(fy.fract()));
        for x in 0..w {
            let fx = x as f64 / w as f64 * cells as f64;
            let (ix, tx) = (fx.floor() as usize, smoothstep(fx.fract()));
            let at = |i: usize, j: usize| lattice[i.min(cells) * n + j.min(cells)];
            let top = at(iy, ix) * (1.0 - tx) + at(iy, ix + 1) * tx;
            let bottom = at(iy + 1, ix) * (1.0 - tx) + at(iy + 1, ix + 1) * tx;
            out.push(top * (1.0 - ty) + bottom * ty);
        }
    }
    out
}

/// Octave sum normalized to `[0, 1]`.
fn fractal_noise(rng: &mut ChaCha8Rng, octaves: usize, base_cells: usize, h: usize, w: usize) -> Vec<f64> {
    let mut acc = vec![0.0; h * w];
    let mut total = 0.0;
    for o in 0..octaves {
        let weight = 0.5f64.powi(o as i32);
        let layer = value_noise(rng, base_cells << o, h, w);
        acc.iter_mut().zip(layer).for_each(|(a, v)| *a += weight * v);
        total += weight;
    }
    acc.iter_mut().for_each(|a| *a /= total);
    acc
}

fn random_color(rng: &mut ChaCha8Rng) -> [f64; 3] {
    [rng.random(), rng.random(), rng.random()]
}

/// Blends `color` into `img` with per-pixel coverage from `alpha`.
fn paint(img: &mut Planar, h: usize, w: usize, color: [f64; 3], alpha: impl Fn(f64, f64) -> f64) {
    for y in 0..h {
        for x in 0..w {
            let a = alpha(x as f64 / w as f64, y as f64 / h as f64).clamp(0.0, 1.0);
            if a == 0.0 {
                continue;
            }
            for (c, col) in color.iter().enumerate() {
                let v = &mut img[(c * h + y) * w + x];
                *v = *v * (1.0 - a) + col * a;
            }
        }
    }
}

/// Soft-edged ellipse coverage with radii `(rx, ry)` rotated by `angle`.
fn ellipse(cx: f64, cy: f64, rx: f64, ry: f64, angle: f64, softness: f64) -> impl Fn(f64, f64) -> f64 {
    let (s, c) = angle.sin_cos();
    move |x, y| {
        let (dx, dy) = (x - cx, y - cy);
        let u = (c * dx + s * dy) / rx;
        let v = (-s * dx + c * dy) / ry;
        let r = (u * u + v * v).sqrt();
        ((1.0 - r) / softness).clamp(0.0, 1.0)
    }
}

/// Surface texture: tinted fractal noise overlaid with a few soft color patches.
pub(crate) fn surface_texture(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Planar {
    let tint = random_color(rng);
    let grain = fractal_noise(rng, 4, 3, h, w);
    let mut img = Vec::with_capacity(3 * h * w);
    for t in tint {
        img.extend(grain.iter().map(|g| (0.35 + 0.65 * g) * (0.6 + 0.4 * t)));
    }
    for _ in 0..rng.random_range(3..=5) {
        let color = random_color(rng);
        let (x0, y0) = (rng.random_range(0.0..0.8), rng.random_range(0.0..0.8));
        let (x1, y1) = (x0 + rng.random_range(0.1..0.4), y0 + rng.random_range(0.1..0.4));
        let strength = rng.random_range(0.4..0.8);
        paint(&mut img, h, w, color, move |x, y| {
            let edge = (x - x0).min(x1 - x).min(y - y0).min(y1 - y);
            strength * (edge / 0.02).clamp(0.0, 1.0)
        });
    }
    img
}

/// A colorful synthetic photograph stand-in: gradient background, colored
/// noise, soft shapes and an optional stripe pattern.
pub(crate) fn sampling_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> Planar {
    let c0 = random_color(rng);
    let cu = random_color(rng).map(|v| v - 0.5);
    let cv = random_color(rng).map(|v| v - 0.5);
    let mut img = vec![0.0; 3 * h * w];
    for c in 0..3 {
        let cells = rng.random_range(2..5);
        let noise = fractal_noise(rng, 3, cells, h, w);
        let amount = rng.random_range(0.2..0.6);
        for y in 0..h {
            for x in 0..w {
                let (u, v) = (x as f64 / w as f64, y as f64 / h as f64);
                let i = y * w + x;
                let base = c0[c] + cu[c] * u + cv[c] * v;
                img[c * h * w + i] = base * (1.0 - amount) + noise[i] * amount;
            }
        }
    }
    for _ in 0..rng.random_range(2..7) {
        let color = random_color(rng);
        let shape = ellipse(
            rng.random(),
            rng.random(),
            rng.random_range(0.05..0.35),
            rng.random_range(0.05..0.35),
            rng.random_range(0.0..std::f64::consts::PI),
            rng.random_range(0.02..0.5),
        );
        paint(&mut img, h, w, color, shape);
    }
    if rng.random_bool(0.5) {
        let color = random_color(rng);
        let freq = rng.random_range(3.0..12.0) * std::f64::consts::TAU;
        let (s, c) = rng.random_range(0.0..std::f64::consts::PI).sin_cos();
        let strength = rng.random_range(0.2..0.6);
        paint(&mut img, h, w, color, move |x, y| {
            strength * (0.5 + 0.5 * (freq * (c * x + s * y)).sin())
        });
    }
    img.iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    img
}
