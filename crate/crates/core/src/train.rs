//! Surrogate training, compensation and closed-loop evaluation.

use std::fmt::Write as _;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::loss::{loss, LossTerms};
use crate::metrics::{ImageMetrics, MetricsRecord};
use crate::model::CompensationModel;
use crate::nn::{InitMode, Module};
use crate::optim::{step_decay, Adam};
use crate::sim::Dataset;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr: f64,
    pub decay_factor: f64,
    pub decay_every: usize,
    pub iters: usize,
    pub batch: usize,
    pub loss_terms: LossTerms,
    /// Drives weight initialization and batch order.
    pub seed: u64,
    pub init_mode: InitMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 1e-3,
            decay_factor: 5.0,
            decay_every: 1500,
            iters: 2000,
            batch: 4,
            loss_terms: LossTerms::FULL,
            seed: 0,
            init_mode: InitMode::Scaled,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::arg(format!("learning rate must be positive, got {}", self.lr)));
        }
        if !(self.decay_factor > 0.0 && self.decay_factor.is_finite()) {
            return Err(Error::arg(format!(
                "decay factor must be positive, got {}",
                self.decay_factor
            )));
        }
        if self.batch == 0 {
            return Err(Error::arg("batch must be at least 1"));
        }
        Ok(())
    }

    pub fn lr_at(&self, iter: usize) -> f64 {
        step_decay(self.lr, self.decay_factor, self.decay_every, iter)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub iter: usize,
    pub loss: f64,
    pub l1: f64,
    pub l2: f64,
    pub ssim_term: f64,
    pub lr: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
}

impl TrainLog {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,loss,l1,l2,ssim_term,lr\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:e},{:e},{:e},{:e},{:e}",
                r.iter, r.loss, r.l1, r.l2, r.ssim_term, r.lr
            );
        }
        s
    }
}

/// Stacks `1×C×H×W` images into one `N×C×H×W` batch.
pub fn stack(images: &[&Tensor<f32>]) -> Result<Tensor<f32>> {
    let first = images.first().ok_or_else(|| Error::arg("cannot stack zero images"))?;
    let mut shape = first.shape().to_vec();
    if shape.first() != Some(&1) {
        return Err(Error::shape(format!("stack expects batch-1 images, got {:?}", shape)));
    }
    let mut data = Vec::with_capacity(first.numel() * images.len());
    for t in images {
        if t.shape() != first.shape() {
            return Err(Error::shape(format!(
                "cannot stack {:?} with {:?}",
                t.shape(),
                first.shape()
            )));
        }
        data.extend_from_slice(&t.values());
    }
    shape[0] = images.len();
    Tensor::from_vec(&shape, data)
}

/// Deterministic batch order: reshuffled permutations of the training set.
struct Batches {
    rng: ChaCha8Rng,
    order: Vec<usize>,
    pos: usize,
    n: usize,
}

impl Batches {
    fn new(n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(1);
        Batches {
            rng,
            order: Vec::new(),
            pos: 0,
            n,
        }
    }

    fn next(&mut self, size: usize) -> Vec<usize> {
        (0..size)
            .map(|_| {
                if self.pos == self.order.len() {
                    self.order = (0..self.n).collect();
                    self.order.shuffle(&mut self.rng);
                    self.pos = 0;
                }
                self.pos += 1;
                self.order[self.pos - 1]
            })
            .collect()
    }
}

/// Minimizes the surrogate objective `Σ L(π(x̃_i; s̃), x_i)` with Adam.
pub fn train(model: &CompensationModel, data: &Dataset, cfg: &TrainConfig) -> Result<TrainLog> {
    train_with(model, data, cfg, |_| {})
}

/// [`train`] with a callback after every iteration.
pub fn train_with(
    model: &CompensationModel,
    data: &Dataset,
    cfg: &TrainConfig,
    mut on_iter: impl FnMut(&LogRow),
) -> Result<TrainLog> {
    cfg.validate()?;
    let n = data.train.len();
    if n == 0 {
        return Err(Error::arg("training set is empty"));
    }
    if n < cfg.batch {
        return Err(Error::arg(format!(
            "{n} training pairs cannot fill a batch of {}",
            cfg.batch
        )));
    }
    let params = model.params();
    let mut opt = Adam::new(&params);
    let mut batches = Batches::new(n, cfg.seed);
    let mut log = TrainLog::default();
    for iter in 0..cfg.iters {
        let idx = batches.next(cfg.batch);
        let cam = stack(&idx.iter().map(|&i| &data.train.cam[i]).collect::<Vec<_>>())?;
        let prj = stack(&idx.iter().map(|&i| &data.train.prj[i]).collect::<Vec<_>>())?;
        model.zero_grad();
        let x_hat = model.forward(&cam, &data.surface)?;
        let value = loss(&x_hat, &prj, cfg.loss_terms)?;
        let total = value.total.item() as f64;
        if !total.is_finite() {
            return Err(Error::TrainingDiverged {
                iteration: iter,
                loss: total,
            });
        }
        value.total.backward()?;
        let lr = cfg.lr_at(iter);
        opt.step(&params, lr)?;
        let row = LogRow {
            iter,
            loss: total,
            l1: value.l1,
            l2: value.l2,
            ssim_term: value.ssim_term,
            lr,
        };
        on_iter(&row);
        log.rows.push(row);
    }
    Ok(log)
}

/// Compensated and uncompensated metrics over the test split.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Evaluation {
    pub compensated: MetricsRecord,
    pub uncompensated: MetricsRecord,
}

/// Projects `compensate(y)` and `y` through the dataset's simulator and
/// compares both captures with the desired `y`.
pub fn evaluate(model: &CompensationModel, data: &Dataset) -> Result<Evaluation> {
    if data.test.is_empty() {
        return Err(Error::arg("test set is empty"));
    }
    let scene = data.scene()?;
    let base = 1 + data.manifest.n_train as u64;
    let pairs = data
        .test
        .prj
        .par_iter()
        .enumerate()
        .map(|(i, y)| {
            let index = base + i as u64;
            let x_star = model.compensate(y, &data.surface)?;
            let comp = scene.render_capture(&x_star, index)?;
            let plain = scene.render_capture(y, index)?;
            Ok((ImageMetrics::between(&comp, y)?, ImageMetrics::between(&plain, y)?))
        })
        .collect::<Result<Vec<_>>>()?;
    let (comp, plain): (Vec<_>, Vec<_>) = pairs.into_iter().unzip();
    Ok(Evaluation {
        compensated: MetricsRecord::from_images(comp)?,
        uncompensated: MetricsRecord::from_images(plain)?,
    })
}

impl Evaluation {
    /// One row per test image plus a final mean row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("image,psnr,rmse,ssim,delta_e,uncomp_psnr,uncomp_rmse,uncomp_ssim,uncomp_delta_e\n");
        let row = |s: &mut String, label: &str, c: &ImageMetrics, u: &ImageMetrics| {
            let _ = writeln!(
                s,
                "{label},{},{},{},{},{},{},{},{}",
                c.psnr, c.rmse, c.ssim, c.delta_e, u.psnr, u.rmse, u.ssim, u.delta_e
            );
        };
        for (i, (c, u)) in self
            .compensated
            .per_image
            .iter()
            .zip(&self.uncompensated.per_image)
            .enumerate()
        {
            row(&mut s, &i.to_string(), c, u);
        }
        row(&mut s, "mean", &self.compensated.mean, &self.uncompensated.mean);
        s
    }
}
