//! Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

mod common;

use std::process::ExitCode;
use std::time::Instant;

use compenkit::ablation::{ablate_with, AblationRow, AblationTable, Variant};
use compenkit::config::RunConfig;
use compenkit::gradsuite::{self, Op, Thresholds};
use compenkit::model::CompensationModel;
use compenkit::sim::Dataset;
use compenkit::train::{evaluate, train, Evaluation, TrainLog};

struct Outcome {
    passed: bool,
    summary: String,
}

impl Outcome {
    fn new(passed: bool, summary: impl Into<String>) -> Self {
        Outcome {
            passed,
            summary: summary.into(),
        }
    }
}

/// The trained model and artifacts of the end-to-end run, reused downstream.
struct EndToEnd {
    cfg: RunConfig,
    model: CompensationModel,
    log: TrainLog,
    eval: Evaluation,
    seconds: f64,
}

fn desk_data(cfg: &RunConfig) -> Dataset {
    Dataset::generate(&cfg.data.scene(), cfg.data.n_train, cfg.data.n_test, cfg.model.k).expect("dataset")
}

fn run_end_to_end(cfg: &RunConfig) -> EndToEnd {
    let start = Instant::now();
    let data = desk_data(cfg);
    let model = CompensationModel::new(&cfg.model, cfg.train.init_mode, cfg.train.seed).expect("model");
    let log = train(&model, &data, &cfg.train).expect("training");
    let eval = evaluate(&model, &data).expect("evaluation");
    EndToEnd {
        cfg: cfg.clone(),
        model,
        log,
        eval,
        seconds: start.elapsed().as_secs_f64(),
    }
}

fn gradient_suite() -> Outcome {
    let start = Instant::now();
    let seeds: Vec<u64> = (0..10).collect();
    let reports = match gradsuite::run(&Op::ALL, &seeds, Thresholds::default()) {
        Ok(r) => r,
        Err(e) => return Outcome::new(false, format!("suite error: {e}")),
    };
    let seconds = start.elapsed().as_secs_f64();
    for r in &reports {
        let verdict = if r.passed() { "ok" } else { "FAIL" };
        println!(
            "    {:<18} {}  max rel error {:.3e}  (threshold {:.0e})  {verdict}",
            r.op.name(),
            r.precision,
            r.max_rel_error,
            r.threshold
        );
    }
    let failed = reports.iter().filter(|r| !r.passed()).count();
    Outcome::new(
        failed == 0 && seconds < 120.0,
        format!(
            "{} op/precision checks, {failed} failed, {seconds:.1} s (limit 120 s)",
            reports.len()
        ),
    )
}

fn check_list(checks: Vec<common::Check>) -> Outcome {
    for c in &checks {
        println!("    {c}");
    }
    let failed = checks.iter().filter(|c| !c.passed()).count();
    Outcome::new(failed == 0, format!("{} checks, {failed} failed", checks.len()))
}

fn end_to_end(run: &EndToEnd) -> Outcome {
    let (c, u) = (&run.eval.compensated.mean, &run.eval.uncompensated.mean);
    let gain = c.psnr - u.psnr;
    let first = run.log.rows.first().map_or(f64::NAN, |r| r.loss);
    let last = run.log.rows.last().map_or(f64::NAN, |r| r.loss);
    println!(
        "    compensated    psnr {:.4}  rmse {:.4}  ssim {:.4}  delta_e {:.4}",
        c.psnr, c.rmse, c.ssim, c.delta_e
    );
    println!(
        "    uncompensated  psnr {:.4}  rmse {:.4}  ssim {:.4}  delta_e {:.4}",
        u.psnr, u.rmse, u.ssim, u.delta_e
    );
    println!(
        "    train loss {first:.5} -> {last:.5} over {} iterations",
        run.log.rows.len()
    );
    Outcome::new(
        gain >= 3.0 && c.delta_e < u.delta_e && run.seconds < 600.0 && last < first,
        format!(
            "psnr gain {gain:.2} dB (need >= 3), delta_e {:.3} vs {:.3}, {:.0} s (limit 600 s)",
            c.delta_e, u.delta_e, run.seconds
        ),
    )
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

fn ablation_direction(run: &EndToEnd) -> Outcome {
    let data = desk_data(&run.cfg);
    let variants = [
        Variant::Full,
        Variant::NoP1,
        Variant::NoP2,
        Variant::NoP1P2,
        Variant::CoarseOnly,
        Variant::NoR1R2,
    ];
    let mut tables = Vec::new();
    for seed in 0..3u64 {
        let mut cfg = run.cfg.clone();
        cfg.train.seed = seed;
        let mut table = AblationTable::default();
        let mut todo: &[Variant] = &variants;
        if seed == run.cfg.train.seed {
            table.rows.push(AblationRow {
                variant: Variant::Full.to_string(),
                n_train: data.train.len(),
                params: run.model.count_params(),
                final_loss: run.log.rows.last().map_or(f64::NAN, |r| r.loss),
                seconds: run.seconds,
                metrics: run.eval.compensated.mean,
                uncompensated: run.eval.uncompensated.mean,
            });
            todo = &variants[1..];
        }
        match ablate_with(&data, &cfg, todo, |_| {}) {
            Ok(t) => table.rows.extend(t.rows),
            Err(e) => return Outcome::new(false, format!("seed {seed}: {e}")),
        }
        println!("    training seed {seed}");
        for line in table.to_text().lines() {
            println!("      {line}");
        }
        tables.push(table);
    }
    let psnr = |name: &str| median(tables.iter().map(|t| t.row(name).expect("row").metrics.psnr).collect());
    let (full, plain, coarse) = (psnr("full"), psnr("no-p1p2"), psnr("coarse-only"));
    Outcome::new(
        full >= plain - 0.2 && full >= coarse - 0.2,
        format!("median psnr full {full:.3} dB, no-p1p2 {plain:.3} dB, coarse-only {coarse:.3} dB (margin 0.2 dB)"),
    )
}

/// Small setting for the loss and size tables.
fn toy_config() -> RunConfig {
    let mut cfg = RunConfig::default();
    cfg.data.size = 64;
    cfg.data.n_train = 32;
    cfg.data.n_test = 4;
    cfg.train.iters = 60;
    cfg
}

fn loss_and_size_tables() -> Outcome {
    let cfg = toy_config();
    let data = desk_data(&cfg);
    let run = |group: &str| {
        let variants = Variant::group(group).expect("group");
        ablate_with(&data, &cfg, &variants, |_| {})
    };
    let (losses, sizes) = match (run("loss"), run("size")) {
        (Ok(l), Ok(s)) => (l, s),
        (Err(e), _) | (_, Err(e)) => return Outcome::new(false, format!("harness error: {e}")),
    };
    for (label, table) in [("loss functions", &losses), ("training-set size", &sizes)] {
        println!("    {label}");
        for line in table.to_text().lines() {
            println!("      {line}");
        }
    }
    let per_pair: Vec<f64> = sizes.rows.iter().map(AblationRow::seconds_per_pair).collect();
    let monotone = per_pair.windows(2).all(|w| w[1] <= w[0]);
    let finite = losses
        .rows
        .iter()
        .chain(&sizes.rows)
        .all(|r| r.metrics.psnr.is_finite());
    Outcome::new(
        losses.rows.len() == 7 && sizes.rows.len() == 4 && monotone && finite,
        format!(
            "{} loss rows, {} size rows, seconds per pair {}",
            losses.rows.len(),
            sizes.rows.len(),
            per_pair
                .iter()
                .map(|s| format!("{s:.3}"))
                .collect::<Vec<_>>()
                .join(" >= ")
        ),
    )
}

fn reproducibility(run: &EndToEnd) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().expect("pool");
    let again = pool.install(|| run_end_to_end(&run.cfg));
    let same_log = again.log == run.log;
    let same_eval = again.eval == run.eval;
    let same_weights = again.model.to_bytes().ok() == run.model.to_bytes().ok();

    let dir = tempfile::tempdir().expect("tempdir");
    let path = dir.path().join("model.cmpk");
    let reloaded = run
        .model
        .save(&path)
        .and_then(|_| CompensationModel::load(&path))
        .and_then(|m| evaluate(&m, &desk_data(&run.cfg)));
    let same_reload = matches!(&reloaded, Ok(e) if *e == run.eval);
    Outcome::new(
        same_log && same_eval && same_weights && same_reload,
        format!(
            "single-threaded rerun: log {}, metrics {}, weights {}; checkpoint reload metrics {}",
            verdict(same_log),
            verdict(same_eval),
            verdict(same_weights),
            verdict(same_reload)
        ),
    )
}

fn verdict(same: bool) -> &'static str {
    if same {
        "identical"
    } else {
        "DIFFERENT"
    }
}

fn report(index: usize, name: &str, outcome: &Outcome) {
    let status = if outcome.passed { "PASS" } else { "FAIL" };
    println!("criterion {index} {name}: {status}: {}", outcome.summary);
}

fn main() -> ExitCode {
    if std::env::args().any(|a| a == "--list") {
        return ExitCode::SUCCESS;
    }
    let mut outcomes = Vec::new();
    let mut record = |index: usize, name: &'static str, outcome: Outcome| {
        report(index, name, &outcome);
        outcomes.push((index, name, outcome));
    };

    record(1, "gradient suite", gradient_suite());
    record(2, "exactness suite", check_list(common::exactness_checks()));
    record(3, "metric oracles", check_list(common::metric_checks()));

    let run = run_end_to_end(&RunConfig::default());
    record(4, "end-to-end compensation", end_to_end(&run));
    record(5, "ablation direction", ablation_direction(&run));
    record(6, "loss and size tables", loss_and_size_tables());
    record(7, "reproducibility", reproducibility(&run));

    println!();
    for (index, name, outcome) in &outcomes {
        report(*index, name, outcome);
    }
    if outcomes.iter().all(|(_, _, o)| o.passed) {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
