//! The command-line operations, callable without spawning the binary.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use crate::datagen::{build_dataset_timed, Dataset};
use crate::error::{Error, Result};
use crate::grid::{Field, Trajectory};
use crate::io::{self, blob, RunConfig, StoredDataset, StoredModel, VerifyReport};
use crate::learn::{init_theta, train_with, EpochRecord, Split, StopReason, LOSS_THRESHOLD};
use crate::metrics::{
    coeff_recovery_error, nmse_summary, ood_sweep, predict, relative_error, variance_sweep,
    EvalReport, SweepPoint, VarianceSweepConfig,
};
use crate::solver::CoeffSet;

/// Resolved configuration copied into every output directory.
pub const CONFIG_FILE: &str = "config.toml";
pub const LOSS_FILE: &str = "loss.csv";
/// Wall-clock measurements, kept apart so every other output is reproducible.
pub const TIMING_FILE: &str = "timing.csv";
pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const SWEEP_JSON: &str = "sweep.json";
pub const SWEEP_CSV: &str = "sweep.csv";
pub const COEFFS_DIR: &str = "coeffs";

/// Flags shared by every command that reads a configuration.
#[derive(Clone, Debug, Default)]
pub struct Common {
    pub config: Option<PathBuf>,
    pub set: Vec<String>,
    pub force: bool,
}

impl Common {
    fn load(&self, base: Option<&Path>) -> Result<RunConfig> {
        let base: Vec<&Path> = base.into_iter().filter(|p| p.exists()).collect();
        RunConfig::load_layered(&base, self.config.as_deref(), &self.set)
    }
}

fn write_config(dir: &Path, config: &RunConfig) -> Result<()> {
    blob::atomic_write(&dir.join(CONFIG_FILE), config.to_toml().as_bytes())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    blob::atomic_write(path, text.as_bytes())
}

pub struct GenSummary {
    pub stored: StoredDataset,
    pub timings: Vec<Duration>,
}

/// Generates a dataset from the configuration into `out`.
pub fn gen(common: &Common, seed: u64, out: &Path) -> Result<GenSummary> {
    let mut config = common.load(None)?;
    config.seed = Some(seed);
    let manifest = config.dataset_manifest()?;
    blob::prepare_dir(out, common.force)?;
    let (data, timings) = build_dataset_timed(&manifest)?;
    let stored = io::save_dataset(out, &data, true)?;
    write_config(out, &config)?;
    let mut csv = String::from("sample,wall_seconds\n");
    for (i, t) in timings.iter().enumerate() {
        writeln!(csv, "{i},{}", t.as_secs_f64()).unwrap();
    }
    write_text(&out.join(TIMING_FILE), &csv)?;
    Ok(GenSummary { stored, timings })
}

pub struct TrainSummary {
    pub history: Vec<EpochRecord>,
    pub stop: StopReason,
    /// Epochs completed in total, including those of a resumed model.
    pub epochs: usize,
    pub epochs_to_threshold: Option<usize>,
    pub parameter_count: usize,
}

fn check_compatible(
    what: &str,
    model: &CoeffSet,
    model_grid: &crate::Grid,
    data: &Dataset,
) -> Result<()> {
    let m = &data.manifest;
    if *model_grid != m.grid {
        return Err(Error::validation(
            what,
            format!(
                "grid {model_grid:?} is incompatible with the dataset grid {:?}",
                m.grid
            ),
        ));
    }
    if model.specs() != m.terms.as_slice() {
        return Err(Error::MaskMismatch(format!(
            "{what} terms {:?} differ from dataset terms {:?}",
            model.specs(),
            m.terms
        )));
    }
    Ok(())
}

/// Trains a model on the dataset in `data_dir`, optionally resuming from a saved one.
///
/// The dataset's own config is the base layer, so only training keys need setting.
pub fn train(
    common: &Common,
    seed: u64,
    data_dir: &Path,
    out: &Path,
    resume: Option<&Path>,
) -> Result<TrainSummary> {
    let mut config = common.load(Some(&data_dir.join(CONFIG_FILE)))?;
    config.seed = Some(seed);
    config.train.seed = seed;
    let data = io::load_dataset(data_dir)?;
    let specs = config.specs()?;
    if config.grid()? != data.manifest.grid || specs != data.manifest.terms {
        return Err(Error::validation(
            "grid",
            "config grid or term bounds differ from the dataset manifest",
        ));
    }
    let (coeffs, state, offset, reached) = match resume {
        Some(dir) => {
            let prev = io::load_model(dir)?;
            check_compatible("model", &prev.coeffs, &prev.grid, &data)?;
            (
                prev.coeffs,
                prev.state,
                prev.epochs,
                prev.epochs_to_threshold,
            )
        }
        None => (
            init_theta(data.manifest.grid.mesh, specs, seed)?,
            None,
            0,
            None,
        ),
    };
    blob::prepare_dir(out, common.force)?;

    let split = Split::standard(data.samples.len());
    let start = Instant::now();
    let mut timing = String::from("epoch,wall_seconds\n");
    let outcome = train_with(
        &data.samples[split.train.clone()],
        &data.samples[split.val.clone()],
        &data.manifest.grid,
        coeffs,
        state,
        &config.train,
        |r| {
            writeln!(
                timing,
                "{},{}",
                r.epoch + offset,
                start.elapsed().as_secs_f64()
            )
            .unwrap()
        },
    )?;

    let mut loss = String::from("epoch,train_loss,val_loss\n");
    for r in &outcome.history {
        let val = r.val_loss.map(|v| v.to_string()).unwrap_or_default();
        writeln!(loss, "{},{},{val}", r.epoch + offset, r.train_loss).unwrap();
    }
    let epochs = offset + outcome.history.last().map_or(0, |r| r.epoch);
    let epochs_to_threshold =
        reached.or_else(|| outcome.epochs_to(LOSS_THRESHOLD).map(|e| e + offset));
    let parameter_count = outcome.coeffs.parameter_count();
    io::save_model(
        out,
        &StoredModel {
            grid: data.manifest.grid,
            coeffs: outcome.coeffs,
            state: Some(outcome.state),
            epochs,
            epochs_to_threshold,
        },
        true,
    )?;
    write_text(&out.join(LOSS_FILE), &loss)?;
    write_text(&out.join(TIMING_FILE), &timing)?;
    write_config(out, &config)?;
    Ok(TrainSummary {
        history: outcome.history,
        stop: outcome.stop,
        epochs,
        epochs_to_threshold,
        parameter_count,
    })
}

/// A field as CSV: one line per run of the last axis, blank lines between 2D slabs.
pub fn field_csv(field: &Field) -> String {
    let mesh = field.mesh();
    let n = mesh.n();
    let mut out = String::new();
    for (r, row) in field.values().chunks(n).enumerate() {
        if mesh.dim() == 3 && r > 0 && r % n == 0 {
            out.push('\n');
        }
        let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
        out.push_str(&cells.join(","));
        out.push('\n');
    }
    out
}

/// Evaluates a model on a dataset, writing `report.json` and `report.csv` to `out`.
///
/// `ood` overrides `eval.ood`; `coeffs` also exports the realized coefficient grids.
pub fn eval(
    common: &Common,
    model_dir: &Path,
    data_dir: &Path,
    out: &Path,
    ood: Option<Vec<f64>>,
    coeffs: bool,
) -> Result<EvalReport> {
    let mut config = common.load(Some(&data_dir.join(CONFIG_FILE)))?;
    if let Some(targets) = ood {
        config.eval.ood = targets;
        config.validate()?;
    }
    let model = io::load_model(model_dir)?;
    let data = io::load_dataset(data_dir)?;
    check_compatible("model", &model.coeffs, &model.grid, &data)?;
    blob::prepare_dir(out, common.force)?;

    let samples: &[Trajectory] = match config.eval.split.as_str() {
        "all" => &data.samples,
        _ => &data.samples[Split::standard(data.samples.len()).test],
    };
    let mut report = EvalReport {
        label: model_dir
            .file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_default(),
        samples: samples.len(),
        epochs_to_threshold: model.epochs_to_threshold,
        parameter_count: model.coeffs.parameter_count(),
        ..Default::default()
    };
    if !samples.is_empty() {
        let preds = predict(&model.coeffs, &model.grid, samples)?;
        report.nmse = Some(nmse_summary(&preds, samples)?);
        report.relative_error = Some(relative_error(&preds, samples)?);
    }
    report.recovery = coeff_recovery_error(&model.coeffs, &data.manifest.coefficients)?;
    if !config.eval.ood.is_empty() {
        report.ood = ood_sweep(
            &model.coeffs,
            &config.eval.ood,
            &data.manifest,
            config.eval.ood_samples,
            config.eval.seed,
        )?;
    }
    write_text(&out.join(REPORT_JSON), &report.to_json())?;
    write_text(&out.join(REPORT_CSV), &report.to_csv())?;
    if coeffs {
        let dir = out.join(COEFFS_DIR);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let realized = model.coeffs.realize();
        for kind in model.coeffs.kinds() {
            let fields = realized.get(kind).unwrap();
            for (axis, f) in fields.iter().enumerate() {
                let name = if fields.len() > 1 {
                    format!("{}_{axis}.csv", kind.name())
                } else {
                    format!("{}.csv", kind.name())
                };
                write_text(&dir.join(name), &field_csv(f))?;
            }
        }
    }
    write_config(out, &config)?;
    Ok(report)
}

/// Retrains at each coefficient amplitude and records the held-out relative error.
pub fn sweep_variance(
    common: &Common,
    seed: Option<u64>,
    out: &Path,
    amplitudes: Option<Vec<f64>>,
) -> Result<Vec<SweepPoint>> {
    let mut config = common.load(None)?;
    if seed.is_some() {
        config.seed = seed;
    }
    let seed = config.seed.unwrap_or(0);
    config.train.seed = seed;
    if let Some(a) = amplitudes {
        config.sweep.amplitudes = a;
    }
    if config.sweep.amplitudes.is_empty() {
        return Err(Error::validation(
            "sweep.amplitudes",
            "list at least one amplitude",
        ));
    }
    if let Some(a) = config
        .sweep
        .amplitudes
        .iter()
        .find(|a| !(a.is_finite() && **a >= 0.0))
    {
        return Err(Error::validation(
            "sweep.amplitudes",
            format!("amplitudes must be finite and >= 0, got {a}"),
        ));
    }
    let term = config.sweep.term.unwrap_or(config.terms[0]);
    config.sweep.term = Some(term);
    let sweep = VarianceSweepConfig {
        manifest: config.dataset_manifest()?,
        term,
        train: config.train.clone(),
        init_seed: seed,
    };
    blob::prepare_dir(out, common.force)?;
    let points = variance_sweep(&config.sweep.amplitudes, &sweep)?;
    let json = serde_json::to_string_pretty(&points).expect("sweep points serialize");
    let mut csv = String::from("amplitude,relative_error\n");
    for p in &points {
        writeln!(csv, "{},{}", p.amplitude, p.relative_error).unwrap();
    }
    write_text(&out.join(SWEEP_JSON), &json)?;
    write_text(&out.join(SWEEP_CSV), &csv)?;
    write_config(out, &config)?;
    Ok(points)
}

pub fn verify(path: &Path) -> Result<VerifyReport> {
    io::verify(path)
}
