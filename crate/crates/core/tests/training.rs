mod common;

use common::{random, ssim_reference};
use compenkit::ablation::{ablate_on, Variant};
use compenkit::config::RunConfig;
use compenkit::loss::{loss, LossTerms};
use compenkit::metrics::PSNR_CAP;
use compenkit::model::{CompensationModel, ModelConfig};
use compenkit::nn::{Conv2d, Init, InitMode, Module};
use compenkit::sim::{Dataset, SceneSpec};
use compenkit::train::{evaluate, train, TrainConfig};
use compenkit::{Param, Tensor};
use proptest::prelude::*;

fn small_model() -> ModelConfig {
    let mut m = ModelConfig::default();
    m.panet.widths = [8, 12, 16];
    m.ganet.refine_net.widths = [4, 4, 6, 6, 6, 6];
    m
}

fn small_run(iters: usize) -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.size = 32;
    cfg.data.n_train = 8;
    cfg.data.n_test = 3;
    cfg.model = small_model();
    cfg.train.iters = iters;
    cfg
}

fn small_data(cfg: &RunConfig) -> Dataset {
    Dataset::generate(&cfg.data.scene(), cfg.data.n_train, cfg.data.n_test, cfg.model.k).unwrap()
}

fn fresh(cfg: &RunConfig) -> CompensationModel {
    CompensationModel::new(&cfg.model, cfg.train.init_mode, cfg.train.seed).unwrap()
}

fn single_threaded<R: Send>(f: impl FnOnce() -> R + Send) -> R {
    rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .unwrap()
        .install(f)
}

#[test]
fn constant_images_l1() {
    let a = Tensor::<f64>::full(&[1, 3, 16, 16], 0.2);
    let b = Tensor::<f64>::full(&[1, 3, 16, 16], 0.5);
    let l1 = LossTerms {
        l1: true,
        l2: false,
        ssim: false,
    };
    assert!((loss(&a, &b, l1).unwrap().total.item() - 0.3).abs() < 1e-12);
}

#[test]
fn full_loss_is_the_sum_of_independent_terms() {
    for seed in 0..4 {
        let a: Tensor<f64> = random(&[2, 3, 16, 16], seed, 0.0, 1.0);
        let b: Tensor<f64> = random(&[2, 3, 16, 16], seed + 50, 0.0, 1.0);
        let (va, vb) = (a.to_f64_vec(), b.to_f64_vec());
        let n = va.len() as f64;
        let l1 = va.iter().zip(&vb).map(|(x, y)| (x - y).abs()).sum::<f64>() / n;
        let l2 = va.iter().zip(&vb).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / n;
        let s = ssim_reference(&va, &vb, [2, 3, 16, 16]);
        let got = loss(&a, &b, LossTerms::FULL).unwrap().total.item();
        assert!((got - (l1 + l2 + 1.0 - s)).abs() < 1e-6);
    }
}

#[test]
fn learning_rate_schedule() {
    let cfg = TrainConfig::default();
    assert_eq!(cfg.lr_at(0), 1e-3);
    assert_eq!(cfg.lr_at(1499), 1e-3);
    assert!((cfg.lr_at(1500) - 1e-3 / 5.0).abs() < 1e-18);
    assert!((cfg.lr_at(3000) - 1e-3 / 25.0).abs() < 1e-18);
}

#[test]
fn training_is_bit_reproducible_single_threaded() {
    let cfg = small_run(6);
    let data = small_data(&cfg);
    let run = || {
        let model = fresh(&cfg);
        let log = train(&model, &data, &cfg.train).unwrap();
        (log, model.to_bytes().unwrap(), evaluate(&model, &data).unwrap())
    };
    let a = single_threaded(run);
    let b = single_threaded(run);
    assert_eq!(a.0, b.0);
    assert_eq!(a.1, b.1);
    assert_eq!(a.2, b.2);
    // Summation order is fixed, so the default pool agrees as well.
    assert_eq!(run().1, a.1);
}

#[test]
fn checkpoint_round_trip_preserves_metrics() {
    let cfg = small_run(4);
    let data = small_data(&cfg);
    let model = fresh(&cfg);
    train(&model, &data, &cfg.train).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("m.cmpk");
    model.save(&path).unwrap();
    let back = CompensationModel::load(&path).unwrap();
    assert_eq!(evaluate(&model, &data).unwrap(), evaluate(&back, &data).unwrap());
}

#[test]
fn zero_iterations_keep_the_initialization() {
    let cfg = small_run(0);
    let data = small_data(&cfg);
    let model = fresh(&cfg);
    let log = train(&model, &data, &cfg.train).unwrap();
    assert!(log.rows.is_empty());
    assert_eq!(model.to_bytes().unwrap(), fresh(&cfg).to_bytes().unwrap());
}

#[test]
fn training_lowers_the_loss() {
    let cfg = small_run(40);
    let data = small_data(&cfg);
    let log = train(&fresh(&cfg), &data, &cfg.train).unwrap();
    assert_eq!(log.rows.len(), 40);
    let head: f64 = log.rows[..5].iter().map(|r| r.loss).sum();
    let tail: f64 = log.rows[35..].iter().map(|r| r.loss).sum();
    assert!(tail < head, "{head} -> {tail}");
}

fn mean_abs_error(model: &CompensationModel, data: &Dataset) -> f64 {
    let errs: Vec<f64> = data
        .test
        .prj
        .iter()
        .map(|y| {
            let out = model.compensate(y, &data.surface).unwrap();
            let (a, b) = (out.to_f64_vec(), y.to_f64_vec());
            a.iter().zip(&b).map(|(p, q)| (p - q).abs()).sum::<f64>() / a.len() as f64
        })
        .collect();
    errs.iter().sum::<f64>() / errs.len() as f64
}

#[test]
fn ideal_scene_output_approaches_the_target() {
    let mut cfg = small_run(25);
    cfg.data.ideal = true;
    let data = small_data(&cfg);
    let model = fresh(&cfg);
    let mut errors = vec![mean_abs_error(&model, &data)];
    for round in 0..3 {
        let mut step = cfg.train.clone();
        step.seed = round;
        train(&model, &data, &step).unwrap();
        errors.push(mean_abs_error(&model, &data));
    }
    assert!(errors.windows(2).all(|w| w[1] < w[0]), "{errors:?}");
}

#[test]
fn ideal_scene_needs_no_compensation() {
    let cfg = small_run(0);
    let spec = SceneSpec {
        ideal: true,
        ..cfg.data.scene()
    };
    let data = Dataset::generate(&spec, cfg.data.n_train, cfg.data.n_test, cfg.model.k).unwrap();
    let eval = evaluate(&fresh(&cfg), &data).unwrap();
    assert!(eval
        .uncompensated
        .per_image
        .iter()
        .all(|m| m.psnr == PSNR_CAP && m.rmse < 1e-5));
    assert_eq!(eval.uncompensated.mean.psnr, PSNR_CAP);
}

#[test]
fn evaluation_means_are_per_image_means() {
    let cfg = small_run(2);
    let data = small_data(&cfg);
    let model = fresh(&cfg);
    train(&model, &data, &cfg.train).unwrap();
    let eval = evaluate(&model, &data).unwrap();
    assert_eq!(eval.compensated.per_image.len(), cfg.data.n_test);
    let n = eval.compensated.per_image.len() as f64;
    let psnr = eval.compensated.per_image.iter().map(|m| m.psnr).sum::<f64>() / n;
    let de = eval.compensated.per_image.iter().map(|m| m.delta_e).sum::<f64>() / n;
    assert!((eval.compensated.mean.psnr - psnr).abs() < 1e-9);
    assert!((eval.compensated.mean.delta_e - de).abs() < 1e-9);
}

struct Empty;

impl Module<f32> for Empty {
    fn params(&self) -> Vec<&Param<f32>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<f32>> {
        Vec::new()
    }
}

#[test]
fn parameter_counts() {
    assert_eq!(Empty.param_count(), 0);
    let conv = Conv2d::<f32>::same("c", 2, 4, 3, Init::He, &mut common::rng(0)).unwrap();
    assert_eq!(conv.param_count(), 4 * 2 * 9 + 4);
    // Frozen from the first build of the desk-scale default model.
    let desk = CompensationModel::<f32>::new(&ModelConfig::default(), InitMode::Scaled, 0).unwrap();
    assert_eq!(desk.count_params(), 687_802);
}

#[test]
fn single_variant_table_equals_a_plain_run() {
    let cfg = small_run(5);
    let data = small_data(&cfg);
    let table = ablate_on(&data, &cfg, &[Variant::Full]).unwrap();
    assert_eq!(table.rows.len(), 1);
    let model = fresh(&cfg);
    let log = train(&model, &data, &cfg.train).unwrap();
    let eval = evaluate(&model, &data).unwrap();
    let row = &table.rows[0];
    assert_eq!(row.metrics, eval.compensated.mean);
    assert_eq!(row.uncompensated, eval.uncompensated.mean);
    assert_eq!(row.final_loss, log.rows.last().unwrap().loss);
    assert_eq!(row.params, model.count_params());
}

#[test]
fn ablation_tables_have_the_expected_rows() {
    let cfg = small_run(1);
    let data = small_data(&cfg);
    let attention = ablate_on(&data, &cfg, &Variant::group("attention").unwrap()).unwrap();
    let names: Vec<&str> = attention.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(names, ["full", "no-p1", "no-p2", "no-p1p2"]);
    let params: Vec<usize> = attention.rows.iter().map(|r| r.params).collect();
    assert!(params[0] > params[1] && params[0] > params[2] && params[1] > params[3] && params[2] > params[3]);

    let losses = ablate_on(&data, &cfg, &Variant::group("loss").unwrap()).unwrap();
    let names: Vec<&str> = losses.rows.iter().map(|r| r.variant.as_str()).collect();
    assert_eq!(
        names,
        [
            "loss:l1",
            "loss:l2",
            "loss:ssim",
            "loss:l1+l2",
            "loss:l1+ssim",
            "loss:l2+ssim",
            "loss:l1+l2+ssim"
        ]
    );
    assert_eq!(losses.to_csv().lines().count(), 8);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn losses_are_nonnegative_and_vanish_on_equal_images(seed in 0u64..10_000, mask in 1u8..8) {
        let terms = LossTerms { l1: mask & 1 != 0, l2: mask & 2 != 0, ssim: mask & 4 != 0 };
        let a: Tensor<f64> = random(&[1, 3, 12, 12], seed, 0.0, 1.0);
        let b: Tensor<f64> = random(&[1, 3, 12, 12], seed + 1, 0.0, 1.0);
        prop_assert!(loss(&a, &b, terms).unwrap().total.item() >= 0.0);
        prop_assert!(loss(&a, &a, terms).unwrap().total.item().abs() < 1e-12);
    }
}
