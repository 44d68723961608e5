//! Ablation harness: retrains model variants on shared data and tabulates
//! their test metrics.

use std::fmt::{self, Write as _};
use std::str::FromStr;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::loss::LossTerms;
use crate::metrics::ImageMetrics;
use crate::model::CompensationModel;
use crate::sim::Dataset;
use crate::train::{evaluate, train};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Full,
    NoP1,
    NoP2,
    NoP1P2,
    /// Affine + TPS grid without the refinement net.
    CoarseOnly,
    /// Refinement net without its attention layers.
    NoR1R2,
    Loss(LossTerms),
    /// Train on only the first `n` training pairs.
    Size(usize),
}

/// Desk-scale stand-ins for the training-set sizes of the size sweep.
pub const SIZE_SWEEP: [usize; 4] = [8, 16, 24, 32];

impl Variant {
    /// Named groups: `attention`, `refine`, `loss` and `size`.
    pub fn group(name: &str) -> Option<Vec<Variant>> {
        use Variant::*;
        Some(match name {
            "attention" => vec![Full, NoP1, NoP2, NoP1P2],
            "refine" => vec![Full, CoarseOnly, NoR1R2],
            "loss" => LossTerms::all_combinations().into_iter().map(Loss).collect(),
            "size" => SIZE_SWEEP.iter().map(|&n| Size(n)).collect(),
            _ => return None,
        })
    }

    /// Comma-separated variant and group names.
    pub fn parse_list(list: &str) -> Result<Vec<Variant>> {
        let mut out = Vec::new();
        for item in list.split(',').map(str::trim).filter(|s| !s.is_empty()) {
            match Self::group(item) {
                Some(g) => out.extend(g),
                None => out.push(item.parse()?),
            }
        }
        if out.is_empty() {
            return Err(Error::arg("no ablation variants given"));
        }
        Ok(out)
    }

    /// `base` with this variant's change applied.
    pub fn apply(&self, base: &RunConfig) -> RunConfig {
        let mut cfg = base.clone();
        match *self {
            Variant::Full => {}
            Variant::NoP1 => cfg.model.panet.p1 = false,
            Variant::NoP2 => cfg.model.panet.p2 = false,
            Variant::NoP1P2 => {
                cfg.model.panet.p1 = false;
                cfg.model.panet.p2 = false;
            }
            Variant::CoarseOnly => cfg.model.ganet.refine = false,
            Variant::NoR1R2 => cfg.model.ganet.refine_net.attention = false,
            Variant::Loss(terms) => cfg.train.loss_terms = terms,
            Variant::Size(n) => cfg.data.n_train = n,
        }
        cfg
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Variant::Full => f.write_str("full"),
            Variant::NoP1 => f.write_str("no-p1"),
            Variant::NoP2 => f.write_str("no-p2"),
            Variant::NoP1P2 => f.write_str("no-p1p2"),
            Variant::CoarseOnly => f.write_str("coarse-only"),
            Variant::NoR1R2 => f.write_str("no-r1r2"),
            Variant::Loss(t) => write!(f, "loss:{t}"),
            Variant::Size(n) => write!(f, "size:{n}"),
        }
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => Variant::Full,
            "no-p1" => Variant::NoP1,
            "no-p2" => Variant::NoP2,
            "no-p1p2" => Variant::NoP1P2,
            "coarse-only" => Variant::CoarseOnly,
            "no-r1r2" => Variant::NoR1R2,
            _ => {
                if let Some(terms) = s.strip_prefix("loss:") {
                    Variant::Loss(terms.parse()?)
                } else if let Some(n) = s.strip_prefix("size:") {
                    let n = n
                        .parse()
                        .map_err(|_| Error::arg(format!("bad training-set size in {s:?}")))?;
                    Variant::Size(n)
                } else {
                    return Err(Error::arg(format!("unknown ablation variant {s:?}")));
                }
            }
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub variant: String,
    pub n_train: usize,
    pub params: usize,
    pub final_loss: f64,
    pub seconds: f64,
    /// Mean compensated test metrics.
    pub metrics: ImageMetrics,
    pub uncompensated: ImageMetrics,
}

impl AblationRow {
    pub fn seconds_per_pair(&self) -> f64 {
        self.seconds / self.n_train as f64
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub rows: Vec<AblationRow>,
}

const COLUMNS: [&str; 10] = [
    "variant",
    "n_train",
    "params",
    "final_loss",
    "seconds",
    "sec_per_pair",
    "psnr",
    "rmse",
    "ssim",
    "delta_e",
];

impl AblationTable {
    fn cells(r: &AblationRow) -> [String; 10] {
        [
            r.variant.clone(),
            r.n_train.to_string(),
            r.params.to_string(),
            format!("{:.6}", r.final_loss),
            format!("{:.3}", r.seconds),
            format!("{:.4}", r.seconds_per_pair()),
            format!("{:.4}", r.metrics.psnr),
            format!("{:.4}", r.metrics.rmse),
            format!("{:.4}", r.metrics.ssim),
            format!("{:.4}", r.metrics.delta_e),
        ]
    }

    pub fn to_csv(&self) -> String {
        let mut s = COLUMNS.join(",") + "\n";
        for r in &self.rows {
            s += &Self::cells(r).join(",");
            s.push('\n');
        }
        s
    }

    /// Space-aligned columns for terminals.
    pub fn to_text(&self) -> String {
        let cells: Vec<[String; 10]> = self.rows.iter().map(Self::cells).collect();
        let widths: Vec<usize> = (0..COLUMNS.len())
            .map(|c| {
                cells
                    .iter()
                    .map(|r| r[c].len())
                    .chain([COLUMNS[c].len()])
                    .max()
                    .unwrap_or(0)
            })
            .collect();
        let mut s = String::new();
        let mut line = |items: Vec<&str>| {
            let padded: Vec<String> = items
                .iter()
                .zip(&widths)
                .enumerate()
                .map(|(c, (v, &w))| if c == 0 { format!("{v:<w$}") } else { format!("{v:>w$}") })
                .collect();
            let _ = writeln!(s, "{}", padded.join("  ").trim_end());
        };
        line(COLUMNS.to_vec());
        for r in &cells {
            line(r.iter().map(String::as_str).collect());
        }
        s
    }

    pub fn row(&self, variant: &str) -> Option<&AblationRow> {
        self.rows.iter().find(|r| r.variant == variant)
    }
}

/// Generates the base dataset, sized for the largest variant, and runs [`ablate_on`].
pub fn ablate(base: &RunConfig, variants: &[Variant]) -> Result<AblationTable> {
    base.validate()?;
    let n_train = variants
        .iter()
        .map(|v| v.apply(base).data.n_train)
        .max()
        .unwrap_or(base.data.n_train);
    let data = Dataset::generate(&base.data.scene(), n_train, base.data.n_test, base.model.k)?;
    ablate_on(&data, base, variants)
}

/// Trains and evaluates every variant from the same seed on `data`. Size
/// variants use a prefix of the training split; all share the test split.
pub fn ablate_on(data: &Dataset, base: &RunConfig, variants: &[Variant]) -> Result<AblationTable> {
    ablate_with(data, base, variants, |_| {})
}

/// [`ablate_on`] with a callback after each finished row.
pub fn ablate_with(
    data: &Dataset,
    base: &RunConfig,
    variants: &[Variant],
    mut on_row: impl FnMut(&AblationRow),
) -> Result<AblationTable> {
    if variants.is_empty() {
        return Err(Error::arg("no ablation variants given"));
    }
    let mut table = AblationTable::default();
    for v in variants {
        let cfg = v.apply(base);
        let n = cfg.data.n_train;
        if n > data.train.len() {
            return Err(Error::arg(format!(
                "variant {v} needs {n} training pairs, dataset has {}",
                data.train.len()
            )));
        }
        let mut subset = data.clone();
        subset.train.prj.truncate(n);
        subset.train.cam.truncate(n);
        let model = CompensationModel::new(&cfg.model, cfg.train.init_mode, cfg.train.seed)?;
        let start = Instant::now();
        let log = train(&model, &subset, &cfg.train)?;
        let seconds = start.elapsed().as_secs_f64();
        let eval = evaluate(&model, &subset)?;
        let row = AblationRow {
            variant: v.to_string(),
            n_train: n,
            params: model.count_params(),
            final_loss: log.rows.last().map_or(f64::NAN, |r| r.loss),
            seconds,
            metrics: eval.compensated.mean,
            uncompensated: eval.uncompensated.mean,
        };
        on_row(&row);
        table.rows.push(row);
    }
    Ok(table)
}
