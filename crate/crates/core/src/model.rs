//! The full compensation model and its checkpoint format.
//!
//! Checkpoints are little-endian binary:
//!
//! ```text
//! b"CMPK" | u32 version | u32 len | ModelConfig JSON
//! u32 count | count × (u32 len | name | u32 ndim | ndim × u32 | f32 data)
//! ```

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Init, InitMode, Module};
use crate::panet::{Panet, PanetConfig};
use crate::tensor::{no_grad, Element, Param, Tensor};
use crate::warp::{warp_image, Ganet, GanetConfig};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ModelConfig {
    /// Image channels.
    pub channels: usize,
    /// Shuffle factor.
    pub k: usize,
    pub ganet: GanetConfig,
    pub panet: PanetConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            channels: 3,
            k: 2,
            ganet: GanetConfig::default(),
            panet: PanetConfig::default(),
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompensationModel<T: Element = f32> {
    pub config: ModelConfig,
    pub ganet: Ganet<T>,
    pub panet: Panet<T>,
}

impl<T: Element> CompensationModel<T> {
    /// Identity GANet start with the refinement net drawn per `init`; PANet uses He init.
    pub fn new(config: &ModelConfig, init: InitMode, seed: u64) -> Result<Self> {
        if config.k == 0 || config.channels == 0 {
            return Err(Error::arg("channels and k must be positive"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let ganet = Ganet::new(&config.ganet, init, &mut rng)?;
        let panet = Panet::new(config.channels * config.k * config.k, &config.panet, Init::He, &mut rng)?;
        Self::check_names(CompensationModel {
            config: config.clone(),
            ganet,
            panet,
        })
    }

    /// Every learnable value at its identity or zero value.
    pub fn zeroed(config: &ModelConfig) -> Result<Self> {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let ganet = Ganet::identity(&config.ganet)?;
        let panet = Panet::new(
            config.channels * config.k * config.k,
            &config.panet,
            Init::Zeros,
            &mut rng,
        )?;
        Self::check_names(CompensationModel {
            config: config.clone(),
            ganet,
            panet,
        })
    }

    fn check_names(model: Self) -> Result<Self> {
        let mut seen = std::collections::HashSet::new();
        for p in model.params() {
            if !seen.insert(p.name.clone()) {
                return Err(Error::arg(format!("duplicate parameter name {}", p.name)));
            }
        }
        Ok(model)
    }

    fn check_inputs(&self, captured: &Tensor<T>, surface: &Tensor<T>) -> Result<(usize, usize)> {
        let c = self.config.channels;
        let (h, w) = match *captured.shape() {
            [_, ch, h, w] if ch == c => (h, w),
            _ => {
                return Err(Error::shape(format!(
                    "model expects N×{c}×H×W, got {:?}",
                    captured.shape()
                )))
            }
        };
        match *surface.shape() {
            [1, ch, sh, sw] if ch == c && sh == h && sw == w => {}
            _ => {
                return Err(Error::shape(format!(
                    "surface {:?} does not match capture {:?}",
                    surface.shape(),
                    captured.shape()
                )))
            }
        }
        let unit = 4 * self.config.k;
        if h % unit != 0 || w % unit != 0 {
            return Err(Error::shape(format!(
                "image sides must be multiples of {unit}, got {h}×{w}"
            )));
        }
        Ok((h, w))
    }

    /// `π(x̃; s̃)`: warp both inputs into the projector frame, then compensate.
    pub fn forward(&self, captured: &Tensor<T>, surface: &Tensor<T>) -> Result<Tensor<T>> {
        let (h, w) = self.check_inputs(captured, surface)?;
        let grid = self.ganet.grid(h, w)?;
        let xw = warp_image(captured, &grid)?;
        let sw = warp_image(surface, &grid)?;
        self.panet.forward(&xw, &sw, self.config.k)
    }

    /// Inference without a backward graph.
    pub fn compensate(&self, desired: &Tensor<T>, surface: &Tensor<T>) -> Result<Tensor<T>> {
        no_grad(|| self.forward(desired, surface))
    }

    pub fn count_params(&self) -> usize {
        self.param_count()
    }
}

impl<T: Element> Module<T> for CompensationModel<T> {
    fn params(&self) -> Vec<&Param<T>> {
        let mut p = self.ganet.params();
        p.extend(self.panet.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<T>> {
        let mut p = self.ganet.params_mut();
        p.extend(self.panet.params_mut());
        p
    }
}

const MAGIC: &[u8; 4] = b"CMPK";
const VERSION: u32 = 1;

fn put_u32(buf: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    buf.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl Reader<'_> {
    fn take(&mut self, n: usize) -> Result<&[u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len());
        let end = end.ok_or_else(|| Error::Checkpoint("unexpected end of file".into()))?;
        let out = &self.buf[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }
}

impl CompensationModel<f32> {
    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut buf = Vec::new();
        buf.extend_from_slice(MAGIC);
        put_u32(&mut buf, VERSION as usize)?;
        let cfg = serde_json::to_vec(&self.config).map_err(|e| Error::Checkpoint(e.to_string()))?;
        put_u32(&mut buf, cfg.len())?;
        buf.extend_from_slice(&cfg);
        let params = self.params();
        put_u32(&mut buf, params.len())?;
        for p in params {
            put_u32(&mut buf, p.name.len())?;
            buf.extend_from_slice(p.name.as_bytes());
            put_u32(&mut buf, p.tensor.ndim())?;
            for &d in p.tensor.shape() {
                put_u32(&mut buf, d)?;
            }
            for v in p.tensor.values().iter() {
                buf.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(buf)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::Checkpoint("bad magic".into()));
        }
        let version = r.u32()?;
        if version != VERSION as usize {
            return Err(Error::Checkpoint(format!("unsupported version {version}")));
        }
        let len = r.u32()?;
        let config: ModelConfig =
            serde_json::from_slice(r.take(len)?).map_err(|e| Error::Checkpoint(format!("config: {e}")))?;
        let mut stored = HashMap::new();
        for _ in 0..r.u32()? {
            let len = r.u32()?;
            let name =
                String::from_utf8(r.take(len)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 name".into()))?;
            let ndim = r.u32()?;
            let shape = (0..ndim).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let raw = r.take(
                n.checked_mul(4)
                    .ok_or_else(|| Error::Checkpoint("tensor too large".into()))?,
            )?;
            let data: Vec<f32> = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                .collect();
            if stored.insert(name.clone(), (shape, data)).is_some() {
                return Err(Error::Checkpoint(format!("{name} stored twice")));
            }
        }
        if r.pos != bytes.len() {
            return Err(Error::Checkpoint("trailing bytes".into()));
        }
        let model = CompensationModel::zeroed(&config)?;
        let params = model.params();
        if params.len() != stored.len() {
            return Err(Error::Checkpoint(format!(
                "checkpoint has {} tensors, model has {}",
                stored.len(),
                params.len()
            )));
        }
        for p in params {
            let (shape, data) = stored
                .get(&p.name)
                .ok_or_else(|| Error::Checkpoint(format!("missing {}", p.name)))?;
            if shape.as_slice() != p.tensor.shape() {
                return Err(Error::Checkpoint(format!(
                    "{} has shape {:?}, expected {:?}",
                    p.name,
                    shape,
                    p.tensor.shape()
                )));
            }
            p.tensor.set_values(data)?;
        }
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&fs::read(path).map_err(|e| Error::io(path, e))?)
    }
}
