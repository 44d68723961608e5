mod common;

use common::{bilinear, max_abs_diff, mesh, random};
use compenkit::nn::{InitMode, Module};
use compenkit::tensor::{gradcheck_mixed, Element, ScalarFn};
use compenkit::warp::{
    affine_grid, compose_coarse_grid, default_control_points, tps_fit, tps_grid, warp_image, Ganet, GanetConfig,
    RefineConfig, RefineNet, SamplingGrid, TpsParams,
};
use compenkit::{Result, Tensor};
use proptest::prelude::*;

/// Dense Gaussian elimination with partial pivoting.
fn solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = a[row][col] / a[col][col];
            for k in col..n {
                a[row][k] -= f * a[col][k];
            }
            b[row] -= f * b[col];
        }
    }
    let mut x = vec![0.0; n];
    for i in (0..n).rev() {
        let s: f64 = (i + 1..n).map(|k| a[i][k] * x[k]).sum();
        x[i] = (b[i] - s) / a[i][i];
    }
    x
}

fn radial(a: [f64; 2], b: [f64; 2]) -> f64 {
    let r2 = (a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2);
    if r2 > 0.0 {
        r2 * r2.ln()
    } else {
        0.0
    }
}

#[test]
fn tps_coefficients_match_a_dense_solve() {
    let ctrl = default_control_points();
    let n = ctrl.len();
    for moved in 0..n {
        let mut offsets = vec![[0.0; 2]; n];
        offsets[moved] = [0.07, -0.04];
        let fit = tps_fit(&ctrl, &offsets).unwrap();
        let mut l = vec![vec![0.0; n + 3]; n + 3];
        for i in 0..n {
            for j in 0..n {
                l[i][j] = radial(ctrl[i], ctrl[j]);
            }
            let p = [1.0, ctrl[i][0], ctrl[i][1]];
            for j in 0..3 {
                l[i][n + j] = p[j];
                l[n + j][i] = p[j];
            }
        }
        for d in 0..2 {
            let mut rhs = vec![0.0; n + 3];
            for i in 0..n {
                rhs[i] = ctrl[i][d] + offsets[i][d];
            }
            let sol = solve(l.clone(), rhs);
            for i in 0..n {
                assert!((fit.weights[i][d] - sol[i]).abs() < 1e-8);
            }
            for j in 0..3 {
                assert!((fit.affine[j][d] - sol[n + j]).abs() < 1e-8);
            }
        }
    }
}

#[test]
fn tps_grid_translation_and_interpolation() {
    let ctrl = default_control_points();
    let tps = TpsParams::<f64>::new("t", &ctrl).unwrap();
    let (dx, dy) = (0.05, -0.03);
    tps.offsets
        .tensor
        .update_values(|v| v.chunks_mut(2).for_each(|c| c.copy_from_slice(&[dx, dy])));
    let (h, w) = (9, 13);
    let grid = tps_grid(&tps, h, w).unwrap().tensor().to_f64_vec();
    let want: Vec<f64> = SamplingGrid::<f64>::identity(h, w)
        .tensor()
        .to_f64_vec()
        .chunks(2)
        .flat_map(|p| [p[0] + dx, p[1] + dy])
        .collect();
    assert!(max_abs_diff(&grid, &want) < 1e-6);

    // Corners are control points and mesh nodes, so the grid must hit their targets.
    let offsets = [[0.03, 0.01], [-0.02, 0.04], [0.05, -0.05], [0.0, 0.02], [-0.01, -0.03]];
    tps.offsets.tensor.set_values(&offsets.concat()).unwrap();
    let grid = tps_grid(&tps, h, w).unwrap().tensor().to_f64_vec();
    for (c, o) in ctrl.iter().zip(&offsets).take(4) {
        let i = if c[1] < 0.0 { 0 } else { h - 1 };
        let j = if c[0] < 0.0 { 0 } else { w - 1 };
        let at = 2 * (i * w + j);
        assert!((grid[at] - (c[0] + o[0])).abs() < 1e-6 && (grid[at + 1] - (c[1] + o[1])).abs() < 1e-6);
    }
}

#[test]
fn composition_with_identity_on_either_side() {
    let (h, w) = (12, 10);
    let id = SamplingGrid::<f64>::identity(h, w);
    let theta = Tensor::from_vec(&[2, 3], vec![0.9, 0.05, 0.02, -0.04, 0.95, -0.01]).unwrap();
    let g_aff = affine_grid(&theta, h, w).unwrap();
    let left = compose_coarse_grid(&g_aff, &id).unwrap();
    assert!(max_abs_diff(&left.tensor().to_f64_vec(), &g_aff.tensor().to_f64_vec()) < 1e-6);

    let tps = TpsParams::<f64>::new("t", &default_control_points()).unwrap();
    tps.offsets
        .tensor
        .set_values(&[0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.04, -0.03])
        .unwrap();
    let g_tps = tps_grid(&tps, h, w).unwrap();
    let right = compose_coarse_grid(&id, &g_tps).unwrap().tensor().to_f64_vec();
    let tv = g_tps.tensor().to_f64_vec();
    for (a, b) in right.chunks(2).zip(tv.chunks(2)) {
        if b.iter().all(|v| v.abs() < 1.0) {
            assert!((a[0] - b[0]).abs() < 1e-6 && (a[1] - b[1]).abs() < 1e-6);
        }
    }
    let both = compose_coarse_grid(&id, &id).unwrap();
    assert!(max_abs_diff(&both.tensor().to_f64_vec(), &id.tensor().to_f64_vec()) < 1e-12);
}

#[test]
fn identity_ganet_is_the_identity_warp() {
    let net = Ganet::<f32>::identity(&GanetConfig::default()).unwrap();
    for (i, (h, w)) in [(32, 32), (64, 48)].into_iter().enumerate() {
        let x = common::random_image(i as u64, h, w);
        let out = net.forward(&x).unwrap();
        assert!(max_abs_diff(&out.to_f64_vec(), &x.to_f64_vec()) <= 1e-6);
    }
}

#[test]
fn homography_grid_matches_direct_resampling() {
    let hm = [[0.92, 0.04, 0.03], [-0.03, 0.95, -0.02], [0.04, -0.03, 1.0]];
    let (h, w) = (40, 56);
    let mut coords = Vec::with_capacity(h * w * 2);
    for i in 0..h {
        for j in 0..w {
            let (x, y) = (mesh(j, w), mesh(i, h));
            let d = hm[2][0] * x + hm[2][1] * y + hm[2][2];
            coords.push((hm[0][0] * x + hm[0][1] * y + hm[0][2]) / d);
            coords.push((hm[1][0] * x + hm[1][1] * y + hm[1][2]) / d);
        }
    }
    let img = common::random_image(5, h, w);
    let grid = SamplingGrid::new(Tensor::from_vec(&[1, h, w, 2], coords.iter().map(|&v| v as f32).collect()).unwrap());
    let out = warp_image(&img, &grid.unwrap()).unwrap().to_f64_vec();
    let src = img.to_f64_vec();
    for c in 0..3 {
        let plane = &src[c * h * w..(c + 1) * h * w];
        for p in 0..h * w {
            let want = bilinear(plane, h, w, coords[2 * p], coords[2 * p + 1]);
            assert!((out[c * h * w + p] - want).abs() <= 2.0 / 255.0);
        }
    }
}

struct RefineLoss {
    cfg: RefineConfig,
}

impl ScalarFn for RefineLoss {
    fn eval<T: Element>(&self, xs: &[Tensor<T>]) -> Result<Tensor<T>> {
        let mut rng = common::rng(0);
        let mut net = RefineNet::<T>::new("r", &self.cfg, InitMode::Scaled, &mut rng)?;
        net.bind(xs)?;
        let g = SamplingGrid::<T>::identity(16, 16);
        let out = net.forward(&g)?.into_tensor();
        let proj: Tensor<T> = random(out.shape(), 9, -1.0, 1.0);
        Ok(out.mul(&proj)?.sum())
    }
}

#[test]
fn refinement_gradients_match_finite_differences() {
    let cfg = RefineConfig {
        widths: [4, 4, 6, 6, 6, 6],
        // Unit residual scale keeps the residual the dominant signal.
        residual_scale: 1.0,
        ..RefineConfig::default()
    };
    let mut rng = common::rng(0);
    let net = RefineNet::<f32>::new("r", &cfg, InitMode::Scaled, &mut rng).unwrap();
    let leaves: Vec<Tensor<f32>> = net
        .params()
        .iter()
        .enumerate()
        .map(|(i, p)| {
            // Non-zero biases keep every ReLU off its kink.
            let v = if p.name.ends_with(".bias") {
                random::<f32>(p.tensor.shape(), 50 + i as u64, -0.1, 0.1)
            } else {
                p.tensor.detach()
            };
            v.with_requires_grad(true)
        })
        .collect();
    let r = gradcheck_mixed(&RefineLoss { cfg }, &leaves, 1e-6, 8, 3).unwrap();
    assert!(r.max_rel_error < 1e-3, "{r:?}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn tps_reproduces_control_targets(seed in 0u64..10_000) {
        let ctrl = default_control_points();
        let offsets: Vec<[f64; 2]> = random::<f64>(&[ctrl.len(), 2], seed, -0.1, 0.1)
            .to_f64_vec()
            .chunks(2)
            .map(|c| [c[0], c[1]])
            .collect();
        let fit = tps_fit(&ctrl, &offsets).unwrap();
        for (c, o) in ctrl.iter().zip(&offsets) {
            let p = fit.eval(*c);
            prop_assert!((p[0] - c[0] - o[0]).abs() <= 1e-6 && (p[1] - c[1] - o[1]).abs() <= 1e-6);
        }
    }

    #[test]
    fn refined_grid_keeps_its_shape(hb in 1usize..5, wb in 1usize..5) {
        let (h, w) = (4 * hb, 4 * wb);
        let cfg = RefineConfig { widths: [4, 4, 4, 4, 4, 4], ..RefineConfig::default() };
        let net = RefineNet::<f32>::new("r", &cfg, InitMode::Scaled, &mut common::rng(1)).unwrap();
        let out = net.forward(&SamplingGrid::identity(h, w)).unwrap();
        prop_assert_eq!(out.tensor().shape(), &[1, h, w, 2]);
    }
}
