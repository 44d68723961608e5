//! Surrogate training sets: projector images, their simulated captures and
//! a surface capture, stored as 8-bit PNGs with a JSON manifest.
//!
//! ```text
//! dir/manifest.json
//! dir/surface.png
//! dir/train/{prj_0000.png, cam_0000.png, ...}
//! dir/test/{prj_0000.png, cam_0000.png, ...}
//! ```

use std::fs;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{SceneSetup, SceneSpec};
use crate::error::{Error, Result};
use crate::io::{quantize, read_png, write_png};
use crate::tensor::Tensor;

pub const MANIFEST_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PairFiles {
    pub prj: String,
    pub cam: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub version: u32,
    pub scene: SceneSpec,
    pub k: usize,
    /// Gray level projected for the surface capture.
    pub probe: f32,
    pub n_train: usize,
    pub n_test: usize,
    pub surface: String,
    pub train: Vec<PairFiles>,
    pub test: Vec<PairFiles>,
}

/// Projector images and their captures, each `1×3×H×W`.
#[derive(Clone, Debug, Default)]
pub struct Split {
    pub prj: Vec<Tensor<f32>>,
    pub cam: Vec<Tensor<f32>>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.prj.len()
    }

    pub fn is_empty(&self) -> bool {
        self.prj.is_empty()
    }
}

#[derive(Clone, Debug)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub surface: Tensor<f32>,
    pub train: Split,
    pub test: Split,
}

/// Default gray level of the surface probe.
pub const DEFAULT_PROBE: f32 = 0.5;

fn pair_names(split: &str, n: usize) -> Vec<PairFiles> {
    (0..n)
        .map(|i| PairFiles {
            prj: format!("{split}/prj_{i:04}.png"),
            cam: format!("{split}/cam_{i:04}.png"),
        })
        .collect()
}

impl Dataset {
    /// Captures `images` under `scene`: the first `n_train` become training
    /// pairs and the next `n_test` test pairs. All images are quantized to
    /// 8 bits, exactly as they would be on disk.
    pub fn capture(
        scene: &SceneSetup,
        images: &[Tensor<f32>],
        n_train: usize,
        n_test: usize,
        k: usize,
    ) -> Result<Dataset> {
        if images.len() < n_train + n_test {
            return Err(Error::arg(format!(
                "{} sampling images cannot cover {n_train} train + {n_test} test pairs",
                images.len()
            )));
        }
        let prj: Vec<Tensor<f32>> = images[..n_train + n_test].iter().map(quantize).collect();
        let cam = prj
            .par_iter()
            .enumerate()
            .map(|(i, x)| Ok(quantize(&scene.render_capture(x, 1 + i as u64)?)))
            .collect::<Result<Vec<_>>>()?;
        let surface = quantize(&scene.render_capture(&scene.probe(DEFAULT_PROBE), 0)?);
        let (train_prj, test_prj) = prj.split_at(n_train);
        let (train_cam, test_cam) = cam.split_at(n_train);
        Ok(Dataset {
            manifest: DatasetManifest {
                version: MANIFEST_VERSION,
                scene: scene.spec.clone(),
                k,
                probe: DEFAULT_PROBE,
                n_train,
                n_test,
                surface: "surface.png".into(),
                train: pair_names("train", n_train),
                test: pair_names("test", n_test),
            },
            surface,
            train: Split {
                prj: train_prj.to_vec(),
                cam: train_cam.to_vec(),
            },
            test: Split {
                prj: test_prj.to_vec(),
                cam: test_cam.to_vec(),
            },
        })
    }

    /// Builds the scene from `spec` and captures its procedural images.
    pub fn generate(spec: &SceneSpec, n_train: usize, n_test: usize, k: usize) -> Result<Dataset> {
        let scene = spec.build()?;
        let images: Vec<Tensor<f32>> = (0..(n_train + n_test) as u64)
            .map(|i| scene.sampling_image(i))
            .collect();
        Self::capture(&scene, &images, n_train, n_test, k)
    }

    pub fn scene(&self) -> Result<SceneSetup> {
        self.manifest.scene.build()
    }

    /// Writes every image and the manifest; returns the manifest path.
    pub fn write(&self, dir: &Path) -> Result<PathBuf> {
        for sub in ["train", "test"] {
            let d = dir.join(sub);
            fs::create_dir_all(&d).map_err(|e| Error::io(&d, e))?;
        }
        write_png(&dir.join(&self.manifest.surface), &self.surface)?;
        let jobs: Vec<(&PairFiles, &Tensor<f32>, &Tensor<f32>)> = self
            .manifest
            .train
            .iter()
            .zip(self.train.prj.iter().zip(&self.train.cam))
            .chain(self.manifest.test.iter().zip(self.test.prj.iter().zip(&self.test.cam)))
            .map(|(f, (p, c))| (f, p, c))
            .collect();
        jobs.par_iter().try_for_each(|(f, p, c)| {
            write_png(&dir.join(&f.prj), p)?;
            write_png(&dir.join(&f.cam), c)
        })?;
        let path = dir.join(MANIFEST_FILE);
        let json = serde_json::to_string_pretty(&self.manifest).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
        Ok(path)
    }

    /// Loads a dataset written by [`Dataset::write`].
    pub fn load(dir: &Path) -> Result<Dataset> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.clone(),
            source,
        })?;
        if manifest.version != MANIFEST_VERSION {
            return Err(Error::arg(format!("unsupported manifest version {}", manifest.version)));
        }
        if manifest.train.len() != manifest.n_train || manifest.test.len() != manifest.n_test {
            return Err(Error::arg("manifest file lists disagree with its counts"));
        }
        let read_split = |files: &[PairFiles]| -> Result<Split> {
            let pairs = files
                .par_iter()
                .map(|f| Ok((read_png(&dir.join(&f.prj))?, read_png(&dir.join(&f.cam))?)))
                .collect::<Result<Vec<_>>>()?;
            let (prj, cam) = pairs.into_iter().unzip();
            Ok(Split { prj, cam })
        };
        let surface = read_png(&dir.join(&manifest.surface))?;
        let train = read_split(&manifest.train)?;
        let test = read_split(&manifest.test)?;
        let expect = [1, 3, manifest.scene.height, manifest.scene.width];
        let all = std::iter::once(&surface)
            .chain(&train.prj)
            .chain(&train.cam)
            .chain(&test.prj)
            .chain(&test.cam);
        for t in all {
            if t.shape() != expect {
                return Err(Error::shape(format!(
                    "dataset image {:?} does not match {:?}",
                    t.shape(),
                    expect
                )));
            }
        }
        Ok(Dataset {
            manifest,
            surface,
            train,
            test,
        })
    }
}

/// Captures `images` under `scene` and writes the dataset to `out_dir`.
pub fn gen_dataset(
    scene: &SceneSetup,
    images: &[Tensor<f32>],
    n_train: usize,
    n_test: usize,
    k: usize,
    out_dir: &Path,
) -> Result<DatasetManifest> {
    let ds = Dataset::capture(scene, images, n_train, n_test, k)?;
    ds.write(out_dir)?;
    Ok(ds.manifest)
}
