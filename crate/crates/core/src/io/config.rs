use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::FORMAT_VERSION;
use crate::datagen::{CoeffFieldSpec, DatasetManifest, SpectrumConfig, TermField};
use crate::error::{Error, Result};
use crate::grid::Grid;
use crate::learn::TrainConfig;
use crate::solver::{default_specs, validate_specs, TermKind, TermSpec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GridConfig {
    pub dim: usize,
    pub n: usize,
    pub dt: f64,
    pub t_slices: usize,
    pub steps_per_slice: usize,
}

impl Default for GridConfig {
    fn default() -> Self {
        Self {
            dim: 2,
            n: 64,
            dt: 0.01,
            t_slices: 5,
            steps_per_slice: 10,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Bounds {
    pub lo: f64,
    pub hi: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub samples: usize,
    pub factor: usize,
    pub fine_substeps: Option<usize>,
    pub normalize: bool,
}

impl Default for DataConfig {
    fn default() -> Self {
        Self {
            samples: 200,
            factor: 4,
            fine_substeps: None,
            normalize: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    /// Squared Hellinger distances for the shift sweep; empty skips it.
    pub ood: Vec<f64>,
    pub ood_samples: usize,
    pub seed: u64,
    /// `"test"` evaluates the held-out split, `"all"` every sample.
    pub split: String,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            ood: Vec::new(),
            ood_samples: 25,
            seed: 1_000_003,
            split: "test".into(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepConfig {
    /// Defaults to the first active term.
    pub term: Option<TermKind>,
    pub amplitudes: Vec<f64>,
}

/// Every knob of every command, merged from a config file and `--set` flags.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: Option<u64>,
    pub grid: GridConfig,
    pub terms: Vec<TermKind>,
    /// Per-term bound overrides, keyed by term name.
    pub bounds: BTreeMap<String, Bounds>,
    pub spectrum: SpectrumConfig,
    /// Ground-truth coefficient fields; defaults to a sine per component.
    pub coefficients: Vec<TermField>,
    pub data: DataConfig,
    pub train: TrainConfig,
    pub eval: EvalConfig,
    pub sweep: SweepConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            grid: GridConfig::default(),
            terms: vec![TermKind::Diffusion],
            bounds: BTreeMap::new(),
            spectrum: SpectrumConfig::default(),
            coefficients: Vec::new(),
            data: DataConfig::default(),
            train: TrainConfig::default(),
            eval: EvalConfig::default(),
            sweep: SweepConfig::default(),
        }
    }
}

/// Sets `dotted.key = value` inside a TOML table, creating tables on the way.
/// The value is parsed as a TOML literal, falling back to a bare string.
pub fn apply_override(doc: &mut toml::Table, assignment: &str) -> Result<()> {
    let (key, raw) = assignment.split_once('=').ok_or_else(|| {
        Error::validation("--set", format!("expected key=value, got `{assignment}`"))
    })?;
    let key = key.trim();
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(Error::validation("--set", format!("malformed key `{key}`")));
    }
    let mut table = doc;
    for part in &parts[..parts.len() - 1] {
        let entry = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        table = entry
            .as_table_mut()
            .ok_or_else(|| Error::validation(key, format!("`{part}` is not a table")))?;
    }
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn read_table(path: &Path) -> Result<toml::Table> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.parse::<toml::Table>()
        .map_err(|e| Error::validation(path.display().to_string(), e.to_string()))
}

/// Deep merge: tables merge key by key, anything else in `top` replaces `base`.
fn merge(base: &mut toml::Table, top: toml::Table) {
    for (key, value) in top {
        match (base.get_mut(&key), value) {
            (Some(toml::Value::Table(b)), toml::Value::Table(t)) => merge(b, t),
            (_, v) => {
                base.insert(key, v);
            }
        }
    }
}

impl RunConfig {
    /// Reads an optional config file, applies overrides, and validates.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        Self::load_layered(&[], path, overrides)
    }

    /// As [`RunConfig::load`], starting from `base` files (earlier ones lowest)
    /// that the config file and overrides are merged on top of.
    pub fn load_layered(base: &[&Path], path: Option<&Path>, overrides: &[String]) -> Result<Self> {
        let mut doc = toml::Table::new();
        for p in base.iter().copied().chain(path) {
            merge(&mut doc, read_table(p)?);
        }
        for o in overrides {
            apply_override(&mut doc, o)?;
        }
        let config =
            Self::deserialize(doc).map_err(|e| Error::validation("config", e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config always serializes")
    }

    pub fn grid(&self) -> Result<Grid> {
        let g = &self.grid;
        Grid::new(g.dim, g.n, g.dt, g.t_slices, g.steps_per_slice).map_err(|e| match e {
            Error::Validation { field, reason } => Error::Validation {
                field: format!("grid.{field}"),
                reason,
            },
            other => other,
        })
    }

    /// Default CFL-derived bounds for the active terms, with overrides applied.
    pub fn specs(&self) -> Result<Vec<TermSpec>> {
        let grid = self.grid()?;
        if self.terms.is_empty() {
            return Err(Error::validation(
                "terms",
                "at least one term must be active",
            ));
        }
        for name in self.bounds.keys() {
            match TermKind::parse(name) {
                Some(k) if self.terms.contains(&k) => {}
                Some(_) => {
                    return Err(Error::validation(
                        format!("bounds.{name}"),
                        "term is not active",
                    ));
                }
                None => return Err(Error::validation(format!("bounds.{name}"), "unknown term")),
            }
        }
        let mut specs = default_specs(&grid, &self.terms);
        for s in &mut specs {
            if let Some(b) = self.bounds.get(s.kind.name()) {
                s.lo = b.lo;
                s.hi = b.hi;
            }
        }
        validate_specs(&grid, &specs)?;
        Ok(specs)
    }

    /// Configured ground truth, or a sine per component: centred in the bounds
    /// with a quarter-width amplitude, varying along the component's own axis.
    pub fn coefficient_spec(&self, specs: &[TermSpec]) -> CoeffFieldSpec {
        if !self.coefficients.is_empty() {
            return CoeffFieldSpec {
                fields: self.coefficients.clone(),
            };
        }
        let dim = self.grid.dim;
        let mut fields = Vec::new();
        for s in specs {
            for axis in 0..s.kind.components(dim) {
                let mut wave = vec![0; dim];
                wave[axis] = 1;
                let mut f =
                    TermField::sine(s.kind, 0.5 * (s.lo + s.hi), 0.25 * (s.hi - s.lo), wave, 0.0);
                f.axis = axis;
                fields.push(f);
            }
        }
        CoeffFieldSpec { fields }
    }

    pub fn dataset_manifest(&self) -> Result<DatasetManifest> {
        let specs = self.specs()?;
        let manifest = DatasetManifest {
            format_version: FORMAT_VERSION,
            grid: self.grid()?,
            factor: self.data.factor,
            fine_substeps: self.data.fine_substeps,
            spectrum: self.spectrum.clone(),
            normalize: self.data.normalize,
            coefficients: self.coefficient_spec(&specs),
            terms: specs,
            samples: self.data.samples,
            seed: self.seed.unwrap_or(0),
        };
        manifest.validate()?;
        Ok(manifest)
    }

    /// Checks everything that can be checked without touching data.
    pub fn validate(&self) -> Result<()> {
        let specs = self.specs()?;
        self.train.validate()?;
        self.spectrum.validate()?;
        if self.data.factor < 1 {
            return Err(Error::validation("data.factor", "must be at least 1"));
        }
        if let Some(t) = self.eval.ood.iter().find(|t| !(0.0..1.0).contains(*t)) {
            return Err(Error::validation(
                "eval.ood",
                format!("H² targets must lie in [0, 1), got {t}"),
            ));
        }
        if !matches!(self.eval.split.as_str(), "test" | "all") {
            return Err(Error::validation("eval.split", "must be `test` or `all`"));
        }
        if let Some(t) = self.sweep.term {
            if !self.terms.contains(&t) {
                return Err(Error::validation("sweep.term", "term is not active"));
            }
        }
        if !self.coefficients.is_empty() {
            self.coefficient_spec(&specs)
                .validate(&specs, self.grid.dim)?;
        }
        Ok(())
    }
}
