//! Accuracy metrics and the evaluation protocols built on them.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::datagen::{
    build_dataset, hellinger2, solve_band_scale, CoeffFieldSpec, DatasetManifest,
};
use crate::error::{Error, Result};
use crate::grid::{grid_norm_sq, Grid, Trajectory};
use crate::learn::{init_theta, train, Split, TrainConfig};
use crate::solver::{solve, CoeffSet, TermKind};

fn output_energy(a: &Trajectory, b: Option<&Trajectory>, slices: std::ops::Range<usize>) -> f64 {
    let mesh = *a.mesh();
    slices
        .map(|s| {
            let x = a.slices()[s].values();
            match b {
                None => grid_norm_sq(&mesh, x),
                Some(b) => {
                    let y = b.slices()[s].values();
                    let d: Vec<f64> = x.iter().zip(y).map(|(p, q)| p - q).collect();
                    grid_norm_sq(&mesh, &d)
                }
            }
        })
        .sum()
}

fn check_pair(pred: &Trajectory, target: &Trajectory) -> Result<()> {
    if pred.mesh() != target.mesh() || pred.len() != target.len() {
        return Err(Error::Shape(format!(
            "prediction has {} slices on {:?}, target {} slices on {:?}",
            pred.len(),
            pred.mesh(),
            target.len(),
            target.mesh()
        )));
    }
    if target.len() < 2 {
        return Err(Error::Shape("trajectories have no output slices".into()));
    }
    Ok(())
}

/// Residual energy over target energy across output slices `1..=N_T`.
pub fn nmse(pred: &Trajectory, target: &Trajectory) -> Result<f64> {
    check_pair(pred, target)?;
    let n = target.len();
    ratio(
        output_energy(pred, Some(target), 1..n),
        output_energy(target, None, 1..n),
    )
}

/// As [`nmse`], restricted to the last slice.
pub fn nmse_final(pred: &Trajectory, target: &Trajectory) -> Result<f64> {
    check_pair(pred, target)?;
    let n = target.len();
    ratio(
        output_energy(pred, Some(target), n - 1..n),
        output_energy(target, None, n - 1..n),
    )
}

fn ratio(residual: f64, energy: f64) -> Result<f64> {
    if energy == 0.0 {
        return Err(Error::Degenerate("target trajectory has zero norm".into()));
    }
    Ok(residual / energy)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelativeError {
    /// Mean of `‖pred - target‖ / ‖target‖` over the included samples.
    pub value: f64,
    /// Samples skipped because their target has zero norm.
    pub excluded: usize,
}

/// Mean over samples of the relative trajectory error on slices `1..=N_T`.
pub fn relative_error(preds: &[Trajectory], targets: &[Trajectory]) -> Result<RelativeError> {
    if preds.len() != targets.len() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut sum = 0.0;
    let mut used = 0usize;
    for (p, t) in preds.iter().zip(targets) {
        check_pair(p, t)?;
        let n = t.len();
        let energy = output_energy(t, None, 1..n);
        if energy == 0.0 {
            continue;
        }
        sum += (output_energy(p, Some(t), 1..n) / energy).sqrt();
        used += 1;
    }
    let excluded = preds.len() - used;
    if used == 0 {
        return Err(Error::Degenerate("no sample with a nonzero target".into()));
    }
    Ok(RelativeError {
        value: sum / used as f64,
        excluded,
    })
}

/// Model rollouts from the initial condition of every sample, in sample order.
pub fn predict(model: &CoeffSet, grid: &Grid, samples: &[Trajectory]) -> Result<Vec<Trajectory>> {
    let realized = model.realize();
    samples
        .par_iter()
        .map(|s| solve(s.initial(), &realized, grid))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NmseSummary {
    /// Mean over samples of the all-slice NMSE (headline figure).
    pub nmse_mean_slices: f64,
    /// Mean over samples of the final-slice NMSE.
    pub nmse_final_slice: f64,
}

pub fn nmse_summary(preds: &[Trajectory], targets: &[Trajectory]) -> Result<NmseSummary> {
    if preds.len() != targets.len() || preds.is_empty() {
        return Err(Error::Shape(format!(
            "{} predictions for {} targets",
            preds.len(),
            targets.len()
        )));
    }
    let mut mean = 0.0;
    let mut last = 0.0;
    for (p, t) in preds.iter().zip(targets) {
        mean += nmse(p, t)?;
        last += nmse_final(p, t)?;
    }
    let m = preds.len() as f64;
    Ok(NmseSummary {
        nmse_mean_slices: mean / m,
        nmse_final_slice: last / m,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct OodPoint {
    pub target_h2: f64,
    /// Achieved squared Hellinger distance of the shifted prior.
    pub h2: f64,
    /// Band scale that produced the shift.
    pub scale: f64,
    pub relative_error: f64,
    pub excluded: usize,
}

/// Evaluates `model` on fresh normalized test sets drawn from priors shifted to
/// each requested squared Hellinger distance from the training prior.
pub fn ood_sweep(
    model: &CoeffSet,
    targets: &[f64],
    base: &DatasetManifest,
    samples: usize,
    seed: u64,
) -> Result<Vec<OodPoint>> {
    let dim = base.grid.dim();
    let base_spec = base.spectrum.to_spec(dim);
    let cutoff = base.spectrum.cutoff();
    let mut sorted = targets.to_vec();
    sorted.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(sorted.len());
    for target in sorted {
        let s = solve_band_scale(&base_spec, cutoff, target)?;
        let mut manifest = base.clone();
        manifest.spectrum.band_scale *= s;
        manifest.normalize = true;
        manifest.samples = samples;
        manifest.seed = seed;
        let h2 = hellinger2(&base_spec, &manifest.spectrum.to_spec(dim))?;
        let data = build_dataset(&manifest)?;
        let preds = predict(model, &base.grid, &data.samples)?;
        let rel = relative_error(&preds, &data.samples)?;
        out.push(OodPoint {
            target_h2: target,
            h2,
            scale: s,
            relative_error: rel.value,
            excluded: rel.excluded,
        });
    }
    Ok(out)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RecoveryError {
    pub kind: TermKind,
    /// Relative L² error, or the absolute one when the truth is identically zero.
    pub error: f64,
    pub absolute: bool,
}

/// `‖realized(θ̂) - a*‖_X / ‖a*‖_X` for every active term, all components pooled.
pub fn coeff_recovery_error(
    learned: &CoeffSet,
    truth: &CoeffFieldSpec,
) -> Result<Vec<RecoveryError>> {
    let mesh = *learned.mesh();
    if learned.kinds() != truth.kinds() {
        return Err(Error::MaskMismatch(format!(
            "model terms {:?} differ from ground-truth terms {:?}",
            learned.kinds(),
            truth.kinds()
        )));
    }
    let realized = learned.realize();
    let exact = truth.realize(mesh)?;
    let mut out = Vec::new();
    for kind in learned.kinds() {
        let (r, e) = (realized.get(kind).unwrap(), exact.get(kind).unwrap());
        let mut diff = 0.0;
        let mut energy = 0.0;
        for (a, b) in r.iter().zip(e) {
            let d: Vec<f64> = a
                .values()
                .iter()
                .zip(b.values())
                .map(|(x, y)| x - y)
                .collect();
            diff += grid_norm_sq(&mesh, &d);
            energy += grid_norm_sq(&mesh, b.values());
        }
        let absolute = energy == 0.0;
        out.push(RecoveryError {
            kind,
            error: if absolute {
                diff.sqrt()
            } else {
                (diff / energy).sqrt()
            },
            absolute,
        });
    }
    Ok(out)
}

/// Inputs of a coefficient-variance sweep.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VarianceSweepConfig {
    pub manifest: DatasetManifest,
    /// Term whose sine amplitude is swept (every component of it).
    pub term: TermKind,
    pub train: TrainConfig,
    /// Seed of the initial raw parameters, shared by every sweep point.
    pub init_seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub amplitude: f64,
    pub relative_error: f64,
}

/// For each amplitude: regenerate the data, retrain from the same start, and
/// measure the relative error on the held-out split.
pub fn variance_sweep(amplitudes: &[f64], config: &VarianceSweepConfig) -> Result<Vec<SweepPoint>> {
    let mut out = Vec::with_capacity(amplitudes.len());
    for &amplitude in amplitudes {
        let mut manifest = config.manifest.clone();
        let mut touched = false;
        for f in manifest
            .coefficients
            .fields
            .iter_mut()
            .filter(|f| f.kind == config.term)
        {
            f.amplitude = amplitude;
            if f.wave.is_empty() {
                f.wave = vec![0; manifest.grid.dim()];
                f.wave[0] = 1;
            }
            touched = true;
        }
        if !touched {
            return Err(Error::MaskMismatch(format!(
                "term {} has no ground-truth field",
                config.term
            )));
        }
        manifest.validate()?;
        let data = build_dataset(&manifest)?;
        let split = Split::standard(data.samples.len());
        let model = init_theta(manifest.grid.mesh, manifest.terms.clone(), config.init_seed)?;
        let outcome = train(
            &data.samples[split.train.clone()],
            &data.samples[split.val.clone()],
            &manifest.grid,
            model,
            None,
            &config.train,
        )?;
        let test = &data.samples[split.test.clone()];
        let preds = predict(&outcome.coeffs, &manifest.grid, test)?;
        out.push(SweepPoint {
            amplitude,
            relative_error: relative_error(&preds, test)?.value,
        });
    }
    Ok(out)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub label: String,
    pub samples: usize,
    pub nmse: Option<NmseSummary>,
    pub relative_error: Option<RelativeError>,
    pub ood: Vec<OodPoint>,
    pub recovery: Vec<RecoveryError>,
    pub epochs_to_threshold: Option<usize>,
    pub parameter_count: usize,
}

impl EvalReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report is always serializable")
    }

    /// One `metric,value` row per number.
    pub fn to_csv(&self) -> String {
        let mut rows = vec!["metric,value".to_string()];
        rows.push(format!("samples,{}", self.samples));
        rows.push(format!("parameter_count,{}", self.parameter_count));
        if let Some(n) = &self.nmse {
            rows.push(format!("nmse_mean_slices,{:e}", n.nmse_mean_slices));
            rows.push(format!("nmse_final_slice,{:e}", n.nmse_final_slice));
        }
        if let Some(r) = &self.relative_error {
            rows.push(format!("relative_error,{:e}", r.value));
            rows.push(format!("relative_error_excluded,{}", r.excluded));
        }
        for p in &self.ood {
            rows.push(format!("ood_h2@{},{:e}", p.target_h2, p.h2));
            rows.push(format!(
                "ood_relative_error@{},{:e}",
                p.target_h2, p.relative_error
            ));
        }
        for r in &self.recovery {
            let tag = if r.absolute { "absolute" } else { "relative" };
            rows.push(format!("recovery_{}_{tag},{:e}", r.kind, r.error));
        }
        if let Some(e) = self.epochs_to_threshold {
            rows.push(format!("epochs_to_threshold,{e}"));
        }
        rows.join("\n") + "\n"
    }
}
