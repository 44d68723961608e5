//! One function per verb.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::Args;
use compenkit::ablation::{ablate_with, Variant};
use compenkit::config::RunConfig;
use compenkit::gradsuite::{self, Op, Thresholds};
use compenkit::io::{read_png, write_png};
use compenkit::metrics::ImageMetrics;
use compenkit::model::CompensationModel;
use compenkit::sim::Dataset;
use compenkit::train::{evaluate, train_with};
use compenkit::{Error, Result};

use crate::Failure;

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset directory [default: config paths.dataset, "data"]
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Square image side in pixels [default: config data.size, 128]
    #[arg(long)]
    pub size: Option<usize>,
    /// Training pairs [default: config data.n_train, 32]
    #[arg(long)]
    pub train: Option<usize>,
    /// Test pairs [default: config data.n_test, 8]
    #[arg(long)]
    pub test: Option<usize>,
    /// Sensor noise standard deviation [default: config data.noise_sigma, 0.005]
    #[arg(long)]
    pub noise: Option<f64>,
    /// Distortion-free scene [default: config data.ideal, false]
    #[arg(long)]
    pub ideal: bool,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset directory [default: config paths.dataset, "data"]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Output checkpoint [default: config paths.checkpoint, "model.cmpk"]
    #[arg(short, long)]
    pub out: Option<PathBuf>,
    /// Iteration log CSV [default: checkpoint path with extension .log.csv]
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Training iterations [default: config train.iters, 300]
    #[arg(long)]
    pub iters: Option<usize>,
    /// Print progress every N iterations, 0 for never
    #[arg(long, default_value_t = 50)]
    pub progress: usize,
}

#[derive(Debug, Args)]
pub struct CompensateArgs {
    /// Trained checkpoint
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Surface capture PNG, for example a dataset's surface.png
    #[arg(long)]
    pub surface: PathBuf,
    /// Output directory; each output is named after its input
    #[arg(short, long, default_value = "out")]
    pub out: PathBuf,
    /// Desired images (PNG, same size as the surface)
    #[arg(required = true)]
    pub inputs: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Trained checkpoint [default: config paths.checkpoint, "model.cmpk"]
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Dataset directory [default: config paths.dataset, "data"]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Metrics CSV [default: config paths.out joined with eval.csv]
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    /// Comma-separated variants or groups: full, no-p1, no-p2, no-p1p2,
    /// coarse-only, no-r1r2, loss:<l1+l2+ssim>, size:<n>, attention, refine, loss, size
    #[arg(long, default_value = "attention")]
    pub variants: String,
    /// Existing dataset directory instead of generating one from the config [default: generate]
    #[arg(long)]
    pub data: Option<PathBuf>,
    /// Table CSV; an aligned .txt copy is written beside it [default: config paths.out joined with ablation.csv]
    #[arg(short, long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradcheckArgs {
    /// all, tensor, nets or a single op name
    #[arg(long, default_value = "all")]
    pub scope: String,
    /// Number of random seeds per op
    #[arg(long, default_value_t = 10)]
    pub seeds: u64,
    /// Maximum relative error for single precision
    #[arg(long, default_value_t = 1e-3)]
    pub single: f64,
    /// Maximum relative error for double precision
    #[arg(long, default_value_t = 1e-5)]
    pub double: f64,
}

fn create_parent(path: &Path) -> Result<()> {
    match path.parent() {
        Some(dir) if !dir.as_os_str().is_empty() => fs::create_dir_all(dir).map_err(|e| Error::Io {
            path: dir.to_path_buf(),
            source: e,
        }),
        _ => Ok(()),
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    create_parent(path)?;
    fs::write(path, text).map_err(|e| Error::Io {
        path: path.to_path_buf(),
        source: e,
    })
}

fn summary(m: &ImageMetrics) -> String {
    format!("{:.4} / {:.4} / {:.4} / {:.4}", m.psnr, m.rmse, m.ssim, m.delta_e)
}

pub fn gen(mut cfg: RunConfig, seed: Option<u64>, a: &GenArgs) -> Result<(), Failure> {
    if let Some(s) = seed {
        cfg.data.seed = s;
    }
    cfg.data.size = a.size.unwrap_or(cfg.data.size);
    cfg.data.n_train = a.train.unwrap_or(cfg.data.n_train);
    cfg.data.n_test = a.test.unwrap_or(cfg.data.n_test);
    if a.noise.is_some() {
        cfg.data.noise_sigma = a.noise;
    }
    cfg.data.ideal |= a.ideal;
    cfg.validate()?;
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.dataset.clone().into());
    let data = Dataset::generate(&cfg.data.scene(), cfg.data.n_train, cfg.data.n_test, cfg.model.k)?;
    let manifest = data.write(&out)?;
    println!("{}", manifest.display());
    Ok(())
}

fn initial_model(cfg: &RunConfig) -> Result<CompensationModel> {
    match &cfg.paths.warm_start {
        Some(path) => {
            let model = CompensationModel::load(Path::new(path))?;
            if model.config != cfg.model {
                return Err(Error::InvalidArgument(format!(
                    "warm-start checkpoint {path} was built with a different model config"
                )));
            }
            Ok(model)
        }
        None => CompensationModel::new(&cfg.model, cfg.train.init_mode, cfg.train.seed),
    }
}

fn check_compatible(cfg: &RunConfig, data: &Dataset) -> Result<()> {
    if data.manifest.k != cfg.model.k {
        return Err(Error::InvalidArgument(format!(
            "dataset was generated for k = {}, config has k = {}",
            data.manifest.k, cfg.model.k
        )));
    }
    Ok(())
}

pub fn train(mut cfg: RunConfig, seed: Option<u64>, a: &TrainArgs) -> Result<(), Failure> {
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    cfg.train.iters = a.iters.unwrap_or(cfg.train.iters);
    cfg.validate()?;
    let data_dir = a.data.clone().unwrap_or_else(|| cfg.paths.dataset.clone().into());
    let out = a.out.clone().unwrap_or_else(|| cfg.paths.checkpoint.clone().into());
    let log_path = a.log.clone().unwrap_or_else(|| out.with_extension("log.csv"));
    let data = Dataset::load(&data_dir)?;
    check_compatible(&cfg, &data)?;
    let model = initial_model(&cfg)?;
    let start = Instant::now();
    let iters = cfg.train.iters;
    let log = train_with(&model, &data, &cfg.train, |r| {
        if a.progress > 0 && (r.iter + 1) % a.progress == 0 {
            eprintln!("iter {}/{iters}  loss {:.6}  lr {:e}", r.iter + 1, r.loss, r.lr);
        }
    })?;
    let elapsed = start.elapsed().as_secs_f64();
    create_parent(&out)?;
    model.save(&out)?;
    write_text(&log_path, &log.to_csv())?;
    match log.rows.last() {
        Some(r) => println!(
            "final loss {:.6} after {} iterations in {elapsed:.1} s",
            r.loss,
            log.rows.len()
        ),
        None => println!("no iterations run; saved initialization"),
    }
    println!("checkpoint {}", out.display());
    Ok(())
}

pub fn compensate(a: &CompensateArgs) -> Result<(), Failure> {
    let model = CompensationModel::load(&a.checkpoint)?;
    let surface = read_png(&a.surface)?;
    fs::create_dir_all(&a.out).map_err(|e| Error::Io {
        path: a.out.clone(),
        source: e,
    })?;
    for input in &a.inputs {
        let desired = read_png(input)?;
        if desired.shape() != surface.shape() {
            return Err(Error::InvalidShape(format!(
                "{} is {:?} but the surface is {:?}",
                input.display(),
                desired.shape(),
                surface.shape()
            ))
            .into());
        }
        let x_star = model.compensate(&desired, &surface)?;
        let name = input.file_stem().map(PathBuf::from).unwrap_or_else(|| "image".into());
        let path = a.out.join(name).with_extension("png");
        write_png(&path, &x_star)?;
        println!("{}", path.display());
    }
    Ok(())
}

pub fn eval(cfg: RunConfig, a: &EvalArgs) -> Result<(), Failure> {
    let checkpoint = a
        .checkpoint
        .clone()
        .unwrap_or_else(|| cfg.paths.checkpoint.clone().into());
    let data_dir = a.data.clone().unwrap_or_else(|| cfg.paths.dataset.clone().into());
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&cfg.paths.out).join("eval.csv"));
    let model = CompensationModel::load(&checkpoint)?;
    let data = Dataset::load(&data_dir)?;
    let report = evaluate(&model, &data)?;
    write_text(&out, &report.to_csv())?;
    println!("PSNR/RMSE/SSIM/ΔE: {}", summary(&report.compensated.mean));
    println!(
        "uncompensated PSNR/RMSE/SSIM/ΔE: {}",
        summary(&report.uncompensated.mean)
    );
    Ok(())
}

pub fn ablate(mut cfg: RunConfig, seed: Option<u64>, a: &AblateArgs) -> Result<(), Failure> {
    if let Some(s) = seed {
        cfg.train.seed = s;
    }
    let variants = Variant::parse_list(&a.variants)?;
    let data = match &a.data {
        Some(dir) => {
            let data = Dataset::load(dir)?;
            check_compatible(&cfg, &data)?;
            data
        }
        None => {
            let n_train = variants
                .iter()
                .map(|v| v.apply(&cfg).data.n_train)
                .max()
                .unwrap_or(cfg.data.n_train);
            Dataset::generate(&cfg.data.scene(), n_train, cfg.data.n_test, cfg.model.k)?
        }
    };
    let table = ablate_with(&data, &cfg, &variants, |r| {
        eprintln!("{}: PSNR {:.4} in {:.1} s", r.variant, r.metrics.psnr, r.seconds)
    })?;
    let out = a
        .out
        .clone()
        .unwrap_or_else(|| Path::new(&cfg.paths.out).join("ablation.csv"));
    write_text(&out, &table.to_csv())?;
    let text = table.to_text();
    write_text(&out.with_extension("txt"), &text)?;
    print!("{text}");
    Ok(())
}

pub fn gradcheck(a: &GradcheckArgs) -> Result<(), Failure> {
    let ops = Op::scope(&a.scope)?;
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let thresholds = Thresholds {
        single: a.single,
        double: a.double,
    };
    let reports = gradsuite::run(&ops, &seeds, thresholds)?;
    let mut failed = 0;
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "{:<18} {}  max rel error {:.3e}  (threshold {:.0e}, {} seeds)  {verdict}",
            r.op.name(),
            r.precision,
            r.max_rel_error,
            r.threshold,
            r.seeds
        );
        failed += usize::from(!r.passed());
    }
    if failed > 0 {
        return Err(Failure::Checks(format!("{failed} gradient checks over threshold")));
    }
    Ok(())
}
