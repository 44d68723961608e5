//! Training objective: any non-empty combination of `l1`, `l2` and `1 − SSIM`.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::metrics::ssim_tensor;
use crate::tensor::{Element, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossTerm {
    L1,
    L2,
    Ssim,
}

impl LossTerm {
    pub const ALL: [LossTerm; 3] = [LossTerm::L1, LossTerm::L2, LossTerm::Ssim];

    fn name(self) -> &'static str {
        match self {
            LossTerm::L1 => "l1",
            LossTerm::L2 => "l2",
            LossTerm::Ssim => "ssim",
        }
    }
}

/// A non-empty subset of [`LossTerm`], serialized as a list.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "Vec<LossTerm>", into = "Vec<LossTerm>")]
pub struct LossTerms {
    pub l1: bool,
    pub l2: bool,
    pub ssim: bool,
}

impl LossTerms {
    pub const FULL: LossTerms = LossTerms {
        l1: true,
        l2: true,
        ssim: true,
    };

    pub fn contains(&self, term: LossTerm) -> bool {
        match term {
            LossTerm::L1 => self.l1,
            LossTerm::L2 => self.l2,
            LossTerm::Ssim => self.ssim,
        }
    }

    /// All seven non-empty combinations, singles first.
    pub fn all_combinations() -> Vec<LossTerms> {
        [0b001, 0b010, 0b100, 0b011, 0b101, 0b110, 0b111]
            .into_iter()
            .map(|m: u8| LossTerms {
                l1: m & 1 != 0,
                l2: m & 2 != 0,
                ssim: m & 4 != 0,
            })
            .collect()
    }
}

impl Default for LossTerms {
    fn default() -> Self {
        LossTerms::FULL
    }
}

impl TryFrom<Vec<LossTerm>> for LossTerms {
    type Error = String;

    fn try_from(terms: Vec<LossTerm>) -> std::result::Result<Self, String> {
        if terms.is_empty() {
            return Err("at least one loss term is required".into());
        }
        let mut out = LossTerms {
            l1: false,
            l2: false,
            ssim: false,
        };
        for t in terms {
            let slot = match t {
                LossTerm::L1 => &mut out.l1,
                LossTerm::L2 => &mut out.l2,
                LossTerm::Ssim => &mut out.ssim,
            };
            if std::mem::replace(slot, true) {
                return Err(format!("loss term {} listed twice", t.name()));
            }
        }
        Ok(out)
    }
}

impl From<LossTerms> for Vec<LossTerm> {
    fn from(t: LossTerms) -> Self {
        LossTerm::ALL.into_iter().filter(|&x| t.contains(x)).collect()
    }
}

impl fmt::Display for LossTerms {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let names: Vec<&str> = Vec::<LossTerm>::from(*self).into_iter().map(LossTerm::name).collect();
        f.write_str(&names.join("+"))
    }
}

impl FromStr for LossTerms {
    type Err = Error;

    /// Parses `l1+ssim` style names.
    fn from_str(s: &str) -> Result<Self> {
        let terms = s
            .split('+')
            .map(|p| match p.trim() {
                "l1" => Ok(LossTerm::L1),
                "l2" => Ok(LossTerm::L2),
                "ssim" => Ok(LossTerm::Ssim),
                other => Err(Error::arg(format!("unknown loss term {other:?}"))),
            })
            .collect::<Result<Vec<_>>>()?;
        LossTerms::try_from(terms).map_err(Error::arg)
    }
}

/// The selected total plus every individual term, for logging.
#[derive(Clone, Debug)]
pub struct LossValue<T: Element = f32> {
    pub total: Tensor<T>,
    pub l1: f64,
    pub l2: f64,
    pub ssim_term: f64,
}

/// `Σ` of the selected terms among `mean|x̂ − x|`, `mean(x̂ − x)²` and `1 − SSIM(x̂, x)`.
pub fn loss<T: Element>(x_hat: &Tensor<T>, x: &Tensor<T>, terms: LossTerms) -> Result<LossValue<T>> {
    if x_hat.shape() != x.shape() {
        return Err(Error::shape(format!(
            "loss between {:?} and {:?}",
            x_hat.shape(),
            x.shape()
        )));
    }
    let diff = x_hat.sub(x)?;
    let l1 = diff.abs().mean();
    let l2 = diff.square().mean();
    let ssim_term = ssim_tensor(x_hat, x)?.mul_scalar(-T::one()).add_scalar(T::one());
    let mut total: Option<Tensor<T>> = None;
    for (on, t) in [(terms.l1, &l1), (terms.l2, &l2), (terms.ssim, &ssim_term)] {
        if on {
            total = Some(match total {
                None => t.clone(),
                Some(acc) => acc.add(t)?,
            });
        }
    }
    Ok(LossValue {
        total: total.expect("LossTerms is never empty"),
        l1: l1.item().to_f64_lossy(),
        l2: l2.item().to_f64_lossy(),
        ssim_term: ssim_term.item().to_f64_lossy(),
    })
}
