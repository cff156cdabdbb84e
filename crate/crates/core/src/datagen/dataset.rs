use std::time::{Duration, Instant};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::coeffs::CoeffFieldSpec;
use super::spectrum::{sample_initial, SpectrumSpec};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Mesh, Trajectory};
use crate::solver::{solve, validate_specs, Coefficients, TermKind, TermSpec};

/// Block mean over `factor^dim` fine cells.
///
/// Computed as `first + mean(v - first)` so a constant block comes back bit for bit.
pub fn coarsen(fine: &Field, factor: usize) -> Result<Field> {
    let fm = *fine.mesh();
    if factor == 0 || !fm.n().is_multiple_of(factor) {
        return Err(Error::validation(
            "factor",
            format!("coarsening factor {factor} does not divide n = {}", fm.n()),
        ));
    }
    if factor == 1 {
        return Ok(fine.clone());
    }
    let cm = Mesh::new(fm.dim(), fm.n() / factor)?;
    let mut first: Vec<Option<f64>> = vec![None; cm.len()];
    let mut sums = vec![0.0; cm.len()];
    for (i, &v) in fine.values().iter().enumerate() {
        let c = fm.coords(i);
        let mut j = 0;
        for (a, &ca) in c.iter().enumerate().take(fm.dim()) {
            j += (ca / factor) * cm.stride(a);
        }
        let base = *first[j].get_or_insert(v);
        sums[j] += v - base;
    }
    let inv = 1.0 / factor.pow(fm.dim() as u32) as f64;
    let values = first
        .into_iter()
        .zip(sums)
        .map(|(b, s)| b.unwrap_or(0.0) + s * inv)
        .collect();
    Field::new(cm, values)
}

/// Piecewise-constant refinement: each cell is copied into `factor^dim` cells.
pub fn refine(coarse: &Field, factor: usize) -> Result<Field> {
    let cm = *coarse.mesh();
    let fm = cm.refined(factor)?;
    let values = (0..fm.len())
        .map(|i| {
            let c = fm.coords(i);
            let mut j = 0;
            for (a, &ca) in c.iter().enumerate().take(fm.dim()) {
                j += (ca / factor) * cm.stride(a);
            }
            coarse.values()[j]
        })
        .collect();
    Field::new(fm, values)
}

/// Rescales fluctuations about the mean to unit discrete variance; the mean is kept.
#[allow(clippy::neg_cmp_op_on_partial_ord)]
pub fn normalize_variance(u0: &Field) -> Result<Field> {
    let mean = u0.mean();
    let var = u0.variance();
    let scale = u0.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let std = var.sqrt();
    if !(std > 64.0 * f64::EPSILON * scale) {
        return Err(Error::Degenerate(format!(
            "initial condition has zero variance (std {std:e}); cannot normalize"
        )));
    }
    let values = u0
        .values()
        .iter()
        .map(|&v| (v - mean) / std + mean)
        .collect();
    Field::new(*u0.mesh(), values)
}

/// Worst-case explicit-update rate `2D a3/c_x^2 + Σ|a2|/c_x + D |b2| u_max / c_x`.
fn max_rate(coeffs: &Coefficients, mesh: &Mesh, u_max: f64) -> f64 {
    let dx = mesh.dx();
    let d = mesh.dim() as f64;
    let mut rate: f64 = 0.0;
    for i in 0..mesh.len() {
        let mut r = 0.0;
        if let Some(a) = coeffs.get(TermKind::Diffusion) {
            r += 2.0 * d * a[0].values()[i] / (dx * dx);
        }
        if let Some(a) = coeffs.get(TermKind::Advection) {
            r += a.iter().map(|f| f.values()[i].abs()).sum::<f64>() / dx;
        }
        if let Some(b) = coeffs.get(TermKind::Burgers) {
            r += d * b[0].values()[i].abs() * u_max / dx;
        }
        rate = rate.max(r);
    }
    rate
}

/// Rejects an explicit fine substep count whose step exceeds the fine-mesh stability limit.
fn check_substeps(coarse_dt: f64, r: usize, rate: f64, fine_mesh: &Mesh) -> Result<()> {
    if r == 0 {
        return Err(Error::validation("fine_substeps", "must be at least 1"));
    }
    let dt = coarse_dt / r as f64;
    let load = dt * rate;
    if load > 1.0 {
        let dx = fine_mesh.dx();
        let d = fine_mesh.dim() as f64;
        return Err(Error::validation(
            "fine_substeps",
            format!(
                "fine-mesh CFL condition c_t (2D a3/c_x^2 + D|a2|/c_x) = {load} exceeds 1 \
                 (C_a = {}, C_adv = {})",
                dx * dx / (2.0 * d * dt),
                dx / (d * dt)
            ),
        ));
    }
    Ok(())
}

/// Solves on the fine mesh with the true coefficients, then coarsens every slice
/// onto `coarse`.
///
/// The fine step is `coarse.dt / substeps`. When `substeps` is `None` the smallest
/// count satisfying the fine-mesh stability condition is used.
pub fn reference_solve(
    u0_fine: &Field,
    coeffs_fine: &Coefficients,
    coarse: &Grid,
    factor: usize,
    substeps: Option<usize>,
) -> Result<Trajectory> {
    let fine_mesh = coarse.mesh.refined(factor)?;
    if *u0_fine.mesh() != fine_mesh {
        return Err(Error::Shape(format!(
            "initial condition lives on {:?}, expected the refined mesh {:?}",
            u0_fine.mesh(),
            fine_mesh
        )));
    }
    let u_max = u0_fine.values().iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let rate = max_rate(coeffs_fine, &fine_mesh, u_max);
    let r = match substeps {
        Some(r) => {
            check_substeps(coarse.dt, r, rate, &fine_mesh)?;
            r
        }
        None => ((coarse.dt * rate).ceil() as usize).max(1),
    };
    let fine = Grid::new(
        coarse.dim(),
        fine_mesh.n(),
        coarse.dt / r as f64,
        coarse.t_slices,
        coarse.steps_per_slice * r,
    )?;
    let traj = solve(u0_fine, coeffs_fine, &fine)?;
    let slices = traj
        .slices()
        .iter()
        .map(|s| coarsen(s, factor))
        .collect::<Result<Vec<Field>>>()?;
    Trajectory::new(slices)
}

/// Recipe for the initial-condition prior: a power-law spectrum with an optional
/// rescaled high-wavenumber band.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SpectrumConfig {
    pub max_mode: u32,
    /// `Σ_kk ∝ (1 + |k|²)^(-decay)`.
    pub decay: f64,
    pub variance: f64,
    /// Constant added to every sampled field.
    pub mean: f64,
    /// Multiplier applied to modes with `|k| > band_cutoff`.
    pub band_scale: f64,
    /// Defaults to `max_mode / 2`.
    pub band_cutoff: Option<f64>,
}

impl Default for SpectrumConfig {
    fn default() -> Self {
        Self {
            max_mode: 4,
            decay: 2.0,
            variance: 1.0,
            mean: 0.0,
            band_scale: 1.0,
            band_cutoff: None,
        }
    }
}

impl SpectrumConfig {
    pub fn cutoff(&self) -> f64 {
        self.band_cutoff.unwrap_or(self.max_mode as f64 / 2.0)
    }

    /// The spectrum without the band shift.
    pub fn base_spec(&self, dim: usize) -> SpectrumSpec {
        SpectrumSpec::power_law(dim, self.max_mode, self.decay, self.variance)
    }

    pub fn to_spec(&self, dim: usize) -> SpectrumSpec {
        self.base_spec(dim)
            .with_band_scale(self.band_scale, self.cutoff())
    }

    pub fn validate(&self) -> Result<()> {
        if self.max_mode < 1 {
            return Err(Error::validation("spectrum.max_mode", "must be at least 1"));
        }
        if !(self.decay.is_finite() && self.decay >= 0.0) {
            return Err(Error::validation(
                "spectrum.decay",
                "must be finite and >= 0",
            ));
        }
        if !(self.variance.is_finite() && self.variance > 0.0) {
            return Err(Error::validation(
                "spectrum.variance",
                "must be finite and > 0",
            ));
        }
        if !self.mean.is_finite() {
            return Err(Error::validation("spectrum.mean", "must be finite"));
        }
        if !(self.band_scale.is_finite() && self.band_scale > 0.0) {
            return Err(Error::validation(
                "spectrum.band_scale",
                "must be finite and > 0",
            ));
        }
        if !(self.cutoff().is_finite() && self.cutoff() >= 0.0) {
            return Err(Error::validation(
                "spectrum.band_cutoff",
                "must be finite and >= 0",
            ));
        }
        Ok(())
    }
}

/// Everything needed to regenerate a dataset bit for bit.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub grid: Grid,
    /// Fine mesh has `factor · n` cells per axis.
    pub factor: usize,
    /// Fine Euler steps per coarse step; chosen from the CFL condition when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fine_substeps: Option<usize>,
    pub spectrum: SpectrumConfig,
    /// Whether each initial condition is rescaled to unit variance.
    pub normalize: bool,
    /// Active terms and their model bounds.
    pub terms: Vec<TermSpec>,
    pub coefficients: CoeffFieldSpec,
    pub samples: usize,
    pub seed: u64,
}

impl DatasetManifest {
    pub fn validate(&self) -> Result<()> {
        self.grid.validate()?;
        if self.factor < 1 {
            return Err(Error::validation("factor", "must be at least 1"));
        }
        self.grid.mesh.refined(self.factor)?;
        if self.terms.is_empty() {
            return Err(Error::validation(
                "terms",
                "at least one term must be active",
            ));
        }
        validate_specs(&self.grid, &self.terms)?;
        self.coefficients.validate(&self.terms, self.grid.dim())?;
        self.spectrum.validate()?;
        if let Some(r) = self.fine_substeps {
            // The Burgers share depends on each sample and is checked per solve.
            let fine = self.fine_mesh()?;
            let rate = max_rate(&self.coefficients.realize(fine)?, &fine, 0.0);
            check_substeps(self.grid.dt, r, rate, &fine)?;
        }
        Ok(())
    }

    pub fn kinds(&self) -> Vec<TermKind> {
        let mut k: Vec<TermKind> = self.terms.iter().map(|s| s.kind).collect();
        k.sort();
        k
    }

    pub fn fine_mesh(&self) -> Result<Mesh> {
        self.grid.mesh.refined(self.factor)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    pub manifest: DatasetManifest,
    pub samples: Vec<Trajectory>,
}

/// RNG stream of sample `index`; independent of generation order.
pub fn sample_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64);
    rng
}

/// Initial condition of sample `index` on the fine mesh.
pub fn fine_initial(
    manifest: &DatasetManifest,
    spec: &SpectrumSpec,
    index: usize,
) -> Result<Field> {
    let mut rng = sample_rng(manifest.seed, index);
    let mut u0 = sample_initial(spec, manifest.fine_mesh()?, &mut rng)?;
    if manifest.spectrum.mean != 0.0 {
        u0 = Field::new(
            *u0.mesh(),
            u0.values()
                .iter()
                .map(|v| v + manifest.spectrum.mean)
                .collect(),
        )?;
    }
    if manifest.normalize {
        normalize_variance(&u0)
    } else {
        Ok(u0)
    }
}

pub fn build_dataset(manifest: &DatasetManifest) -> Result<Dataset> {
    build_dataset_timed(manifest).map(|(d, _)| d)
}

/// As [`build_dataset`], also returning the wall time spent on each sample.
pub fn build_dataset_timed(manifest: &DatasetManifest) -> Result<(Dataset, Vec<Duration>)> {
    manifest.validate()?;
    let truth = manifest.coefficients.realize(manifest.fine_mesh()?)?;
    let spec = manifest.spectrum.to_spec(manifest.grid.dim());
    let out = (0..manifest.samples)
        .into_par_iter()
        .map(|i| {
            let start = Instant::now();
            let u0 = fine_initial(manifest, &spec, i)?;
            let traj = reference_solve(
                &u0,
                &truth,
                &manifest.grid,
                manifest.factor,
                manifest.fine_substeps,
            )?;
            Ok((traj, start.elapsed()))
        })
        .collect::<Result<Vec<_>>>()?;
    let (samples, times) = out.into_iter().unzip();
    Ok((
        Dataset {
            manifest: manifest.clone(),
            samples,
        },
        times,
    ))
}
