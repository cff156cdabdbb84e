use std::path::Path;

use serde::{Deserialize, Serialize};

use super::blob::{self, BlobEntry};
use super::FORMAT_VERSION;
use crate::datagen::{Dataset, DatasetManifest};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Trajectory};
use crate::learn::OptState;
use crate::solver::{CoeffSet, TermKind, TermSpec};

pub const DATASET_MANIFEST: &str = "manifest.toml";
pub const MODEL_MANIFEST: &str = "model.toml";

/// Byte layout of every sample blob.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleLayout {
    /// Always `"f64-le"`.
    pub dtype: String,
    /// Always `"slice-major, row-major within a slice (axis 0 slowest)"`.
    pub order: String,
    pub slices: usize,
    pub points_per_slice: usize,
    pub bytes_per_sample: u64,
}

impl SampleLayout {
    fn for_grid(grid: &Grid) -> Self {
        let slices = grid.t_slices + 1;
        let points = grid.mesh.len();
        Self {
            dtype: "f64-le".into(),
            order: "slice-major, row-major within a slice (axis 0 slowest)".into(),
            slices,
            points_per_slice: points,
            bytes_per_sample: (slices * points * 8) as u64,
        }
    }
}

/// On-disk dataset manifest: the generating recipe plus the blob index.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredDataset {
    #[serde(flatten)]
    pub manifest: DatasetManifest,
    pub layout: SampleLayout,
    pub blobs: Vec<BlobEntry>,
}

pub fn sample_file(i: usize) -> String {
    format!("sample_{i:05}.bin")
}

fn encode_trajectory(t: &Trajectory) -> Vec<u8> {
    let mut out = Vec::with_capacity(t.len() * t.mesh().len() * 8);
    for s in t.slices() {
        out.extend(blob::encode_f64(s.values()));
    }
    out
}

/// Writes the sample blobs and then the manifest, each atomically.
pub fn save_dataset(dir: &Path, data: &Dataset, force: bool) -> Result<StoredDataset> {
    blob::prepare_dir(dir, force)?;
    let grid = data.manifest.grid;
    let mut blobs = Vec::with_capacity(data.samples.len());
    for (i, t) in data.samples.iter().enumerate() {
        if *t.mesh() != grid.mesh || t.len() != grid.t_slices + 1 {
            return Err(Error::Shape(format!(
                "sample {i} does not match the manifest grid"
            )));
        }
        let bytes = encode_trajectory(t);
        let name = sample_file(i);
        blob::atomic_write(&dir.join(&name), &bytes)?;
        blobs.push(BlobEntry::describe(&name, &bytes));
    }
    let mut manifest = data.manifest.clone();
    manifest.format_version = FORMAT_VERSION;
    manifest.samples = data.samples.len();
    let stored = StoredDataset {
        manifest,
        layout: SampleLayout::for_grid(&grid),
        blobs,
    };
    blob::atomic_write(
        &dir.join(DATASET_MANIFEST),
        blob::to_toml(&stored).as_bytes(),
    )?;
    Ok(stored)
}

pub fn load_dataset_manifest(dir: &Path) -> Result<StoredDataset> {
    let path = dir.join(DATASET_MANIFEST);
    let stored: StoredDataset = blob::parse_manifest(&path, FORMAT_VERSION)?;
    let expected = SampleLayout::for_grid(&stored.manifest.grid);
    let bad = |reason: String| Error::Manifest {
        path: path.clone(),
        reason,
    };
    stored
        .manifest
        .grid
        .validate()
        .map_err(|e| bad(e.to_string()))?;
    if stored.layout != expected {
        return Err(bad(format!(
            "layout {:?} does not match the grid (expected {:?})",
            stored.layout, expected
        )));
    }
    if stored.blobs.len() != stored.manifest.samples {
        return Err(bad(format!(
            "{} blobs listed for {} samples",
            stored.blobs.len(),
            stored.manifest.samples
        )));
    }
    if let Some(b) = stored
        .blobs
        .iter()
        .find(|b| b.bytes != expected.bytes_per_sample)
    {
        return Err(bad(format!(
            "blob {} has {} bytes, layout needs {}",
            b.file, b.bytes, expected.bytes_per_sample
        )));
    }
    Ok(stored)
}

/// Loads every sample, verifying checksums.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let stored = load_dataset_manifest(dir)?;
    let grid = stored.manifest.grid;
    let mut samples = Vec::with_capacity(stored.blobs.len());
    for entry in &stored.blobs {
        let bytes = blob::read(&dir.join(&entry.file))?;
        entry.verify(&bytes)?;
        let values = blob::decode_f64(&bytes);
        let slices = values
            .chunks_exact(grid.mesh.len())
            .map(|c| {
                Field::new(grid.mesh, c.to_vec()).map_err(|e| Error::Manifest {
                    path: dir.join(&entry.file),
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<Field>>>()?;
        samples.push(Trajectory::new(slices)?);
    }
    Ok(Dataset {
        manifest: stored.manifest,
        samples,
    })
}

/// Optimizer settings persisted next to a model (moments live in blobs).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StoredOptimizer {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    pub first_moment: Vec<BlobEntry>,
    pub second_moment: Vec<BlobEntry>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelManifest {
    pub format_version: u32,
    pub grid: Grid,
    pub terms: Vec<TermSpec>,
    pub parameter_count: usize,
    /// Epochs trained so far, across resumes.
    pub epochs: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub epochs_to_threshold: Option<usize>,
    /// One blob per raw parameter field, in canonical term order.
    pub theta: Vec<BlobEntry>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub optimizer: Option<StoredOptimizer>,
}

/// A trained (or initial) model with optional optimizer state for resuming.
#[derive(Clone, Debug, PartialEq)]
pub struct StoredModel {
    pub grid: Grid,
    pub coeffs: CoeffSet,
    pub state: Option<OptState>,
    pub epochs: usize,
    pub epochs_to_threshold: Option<usize>,
}

fn slot_name(kind: TermKind, axis: usize, dim: usize) -> String {
    if kind.components(dim) > 1 {
        format!("{}_{axis}", kind.name())
    } else {
        kind.name().to_string()
    }
}

fn write_blocks(
    dir: &Path,
    prefix: &str,
    names: &[String],
    blocks: &[Vec<f64>],
) -> Result<Vec<BlobEntry>> {
    names
        .iter()
        .zip(blocks)
        .map(|(name, block)| {
            let file = format!("{prefix}_{name}.bin");
            let bytes = blob::encode_f64(block);
            blob::atomic_write(&dir.join(&file), &bytes)?;
            Ok(BlobEntry::describe(&file, &bytes))
        })
        .collect()
}

fn read_blocks(dir: &Path, entries: &[BlobEntry], len: usize) -> Result<Vec<Vec<f64>>> {
    entries
        .iter()
        .map(|e| {
            let bytes = blob::read(&dir.join(&e.file))?;
            e.verify(&bytes)?;
            if bytes.len() != len * 8 {
                return Err(Error::Manifest {
                    path: dir.join(MODEL_MANIFEST),
                    reason: format!(
                        "blob {} holds {} values, grid has {len}",
                        e.file,
                        bytes.len() / 8
                    ),
                });
            }
            Ok(blob::decode_f64(&bytes))
        })
        .collect()
}

pub fn save_model(dir: &Path, model: &StoredModel, force: bool) -> Result<ModelManifest> {
    blob::prepare_dir(dir, force)?;
    let dim = model.grid.dim();
    let names: Vec<String> = model
        .coeffs
        .slots()
        .into_iter()
        .map(|(k, a)| slot_name(k, a, dim))
        .collect();
    let theta = write_blocks(dir, "theta", &names, model.coeffs.blocks())?;
    let optimizer = match &model.state {
        None => None,
        Some(s) => Some(StoredOptimizer {
            lr: s.lr,
            beta1: s.beta1,
            beta2: s.beta2,
            eps: s.eps,
            step: s.step,
            first_moment: write_blocks(dir, "adam_m", &names, &s.m)?,
            second_moment: write_blocks(dir, "adam_v", &names, &s.v)?,
        }),
    };
    let manifest = ModelManifest {
        format_version: FORMAT_VERSION,
        grid: model.grid,
        terms: model.coeffs.specs().to_vec(),
        parameter_count: model.coeffs.parameter_count(),
        epochs: model.epochs,
        epochs_to_threshold: model.epochs_to_threshold,
        theta,
        optimizer,
    };
    blob::atomic_write(
        &dir.join(MODEL_MANIFEST),
        blob::to_toml(&manifest).as_bytes(),
    )?;
    Ok(manifest)
}

pub fn load_model_manifest(dir: &Path) -> Result<ModelManifest> {
    blob::parse_manifest(&dir.join(MODEL_MANIFEST), FORMAT_VERSION)
}

pub fn load_model(dir: &Path) -> Result<StoredModel> {
    let m = load_model_manifest(dir)?;
    let path = dir.join(MODEL_MANIFEST);
    m.grid.validate().map_err(|e| Error::Manifest {
        path: path.clone(),
        reason: e.to_string(),
    })?;
    let len = m.grid.mesh.len();
    let theta = read_blocks(dir, &m.theta, len)?;
    let coeffs =
        CoeffSet::new(m.grid.mesh, m.terms.clone(), theta).map_err(|e| Error::Manifest {
            path: path.clone(),
            reason: e.to_string(),
        })?;
    let state = match &m.optimizer {
        None => None,
        Some(o) => {
            let mut s = OptState::with_betas(coeffs.blocks(), o.lr, o.beta1, o.beta2, o.eps);
            s.step = o.step;
            s.m = read_blocks(dir, &o.first_moment, len)?;
            s.v = read_blocks(dir, &o.second_moment, len)?;
            if s.m.len() != coeffs.blocks().len() || s.v.len() != coeffs.blocks().len() {
                return Err(Error::Manifest {
                    path,
                    reason: "optimizer moments do not match the parameter blocks".into(),
                });
            }
            Some(s)
        }
    };
    Ok(StoredModel {
        grid: m.grid,
        coeffs,
        state,
        epochs: m.epochs,
        epochs_to_threshold: m.epochs_to_threshold,
    })
}

/// Outcome of a load → save → load cycle.
#[derive(Clone, Debug, PartialEq)]
pub struct VerifyReport {
    pub kind: &'static str,
    pub blobs: usize,
    pub bytes: u64,
}

fn same_bytes(a: &Path, b: &Path, files: &[String]) -> Result<()> {
    for f in files {
        if blob::read(&a.join(f))? != blob::read(&b.join(f))? {
            return Err(Error::Corruption {
                blob: f.clone(),
                offset: 0,
            });
        }
    }
    Ok(())
}

/// Checks every checksum of the artifact in `dir`, then re-saves it into a scratch
/// directory and confirms the blobs come back byte for byte.
pub fn verify(dir: &Path) -> Result<VerifyReport> {
    let scratch = tempdir_in(dir)?;
    let result = (|| -> Result<VerifyReport> {
        if dir.join(DATASET_MANIFEST).exists() {
            let data = load_dataset(dir)?;
            let stored = save_dataset(&scratch, &data, true)?;
            let again = load_dataset(&scratch)?;
            if again != data {
                return Err(Error::Corruption {
                    blob: DATASET_MANIFEST.into(),
                    offset: 0,
                });
            }
            let files: Vec<String> = stored.blobs.iter().map(|b| b.file.clone()).collect();
            same_bytes(dir, &scratch, &files)?;
            Ok(VerifyReport {
                kind: "dataset",
                blobs: files.len(),
                bytes: stored.blobs.iter().map(|b| b.bytes).sum(),
            })
        } else if dir.join(MODEL_MANIFEST).exists() {
            let model = load_model(dir)?;
            let manifest = save_model(&scratch, &model, true)?;
            let again = load_model(&scratch)?;
            if again != model {
                return Err(Error::Corruption {
                    blob: MODEL_MANIFEST.into(),
                    offset: 0,
                });
            }
            let mut entries = manifest.theta.clone();
            if let Some(o) = &manifest.optimizer {
                entries.extend(o.first_moment.iter().cloned());
                entries.extend(o.second_moment.iter().cloned());
            }
            let files: Vec<String> = entries.iter().map(|b| b.file.clone()).collect();
            same_bytes(dir, &scratch, &files)?;
            Ok(VerifyReport {
                kind: "model",
                blobs: files.len(),
                bytes: entries.iter().map(|b| b.bytes).sum(),
            })
        } else {
            Err(Error::io(
                dir.join(DATASET_MANIFEST),
                std::io::Error::new(std::io::ErrorKind::NotFound, "no dataset or model manifest"),
            ))
        }
    })();
    let _ = std::fs::remove_dir_all(&scratch);
    result
}

/// Fresh scratch directory next to `dir` (same filesystem).
fn tempdir_in(dir: &Path) -> Result<std::path::PathBuf> {
    let parent = dir
        .parent()
        .filter(|p| !p.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    let base = dir
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    for i in 0..1000u32 {
        let p = parent.join(format!(".{base}.verify{}-{i}", std::process::id()));
        if std::fs::create_dir(&p).is_ok() {
            return Ok(p);
        }
    }
    Err(Error::io(
        parent,
        std::io::Error::other("could not create a scratch directory"),
    ))
}
