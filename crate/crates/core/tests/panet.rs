mod common;

use common::random;
use compenkit::nn::{Init, Module};
use compenkit::panet::{unshuffled_pipeline, Panet, PanetConfig};
use compenkit::Tensor;
use proptest::prelude::*;

fn panet(seed: u64, cfg: &PanetConfig, channels: usize) -> Panet {
    Panet::new(channels, cfg, Init::He, &mut common::rng(seed)).unwrap()
}

#[test]
fn no_dead_parameters_at_initialization() {
    let cfg = PanetConfig::default();
    for seed in 0..5 {
        let net = panet(seed, &cfg, 12);
        let x: Tensor<f32> = random(&[2, 3, 32, 32], 100 + seed, 0.0, 1.0);
        let s: Tensor<f32> = random(&[1, 3, 32, 32], 200 + seed, 0.0, 1.0);
        let target: Tensor<f32> = random(&[2, 3, 32, 32], 300 + seed, 0.0, 1.0);
        net.zero_grad();
        let out = net.forward(&x, &s, 2).unwrap();
        out.sub(&target).unwrap().square().mean().backward().unwrap();
        for p in net.params() {
            let g = p.tensor.grad().unwrap_or_default();
            assert!(g.iter().any(|v| *v != 0.0), "seed {seed}: {} gets no gradient", p.name);
        }
    }
}

#[test]
fn both_branches_share_the_encoder() {
    let net = panet(0, &PanetConfig::default(), 12);
    let m: Tensor<f32> = random(&[1, 12, 16, 16], 1, 0.0, 1.0);
    let before = [net.encode(&m, true).unwrap(), net.encode(&m, false).unwrap()];
    net.enc[0].weight.tensor.update_values(|v| v[0] += 0.5);
    let after = [net.encode(&m, true).unwrap(), net.encode(&m, false).unwrap()];
    for (b, a) in before.iter().zip(&after) {
        assert_ne!(b.levels[2].to_vec(), a.levels[2].to_vec());
    }
}

#[test]
fn desk_scale_shapes() {
    let cfg = PanetConfig {
        widths: [8, 8, 8],
        ..PanetConfig::default()
    };
    let net = panet(0, &cfg, 12);
    let x: Tensor<f32> = random(&[1, 3, 128, 128], 0, 0.0, 1.0);
    let feats = net
        .encode(&compenkit::tensor::pixel_unshuffle(&x, 2).unwrap(), true)
        .unwrap();
    assert_eq!(feats.levels[0].shape(), [1, 8, 64, 64]);
    let out = net.forward(&x, &x, 2).unwrap();
    assert_eq!(out.shape(), [1, 3, 128, 128]);
    assert!(out.to_vec().iter().all(|v| (0.0..=1.0).contains(v)));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn passthrough_fixture_gives_clamped_input(k in 1usize..4, hb in 1usize..4, wb in 1usize..4, seed in 0u64..1000) {
        let (h, w) = (4 * k * hb, 4 * k * wb);
        let x: Tensor<f32> = random(&[2, 3, h, w], seed, -0.5, 1.5);
        let s: Tensor<f32> = random(&[1, 3, h, w], seed + 1, 0.0, 1.0);
        let out = unshuffled_pipeline(&x, &s, k, |mx, _| Ok(mx.clone())).unwrap();
        prop_assert_eq!(out.to_vec(), x.clamp01().to_vec());
    }

    #[test]
    fn output_shape_matches_input(k in 1usize..3, hb in 1usize..3, wb in 1usize..3, seed in 0u64..1000) {
        let (h, w) = (4 * k * hb, 4 * k * wb);
        let cfg = PanetConfig { widths: [4, 4, 4], ..PanetConfig::default() };
        let net = panet(seed, &cfg, 3 * k * k);
        let x: Tensor<f32> = random(&[2, 3, h, w], seed, 0.0, 1.0);
        let s: Tensor<f32> = random(&[1, 3, h, w], seed + 1, 0.0, 1.0);
        let a = net.forward(&x, &s, k).unwrap();
        prop_assert_eq!(a.shape(), x.shape());
        prop_assert_eq!(a.to_vec(), net.forward(&x, &s, k).unwrap().to_vec());
    }
}
