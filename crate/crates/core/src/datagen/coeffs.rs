use serde::{Deserialize, Serialize};

use super::spectrum::PhaseTable;
use crate::error::{Error, Result};
use crate::grid::{Field, Mesh};
use crate::solver::{Coefficients, TermKind, TermSpec};

/// Ground-truth field `mean + amplitude · sin(2π k·x + phase)` for one
/// coefficient component.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermField {
    pub kind: TermKind,
    /// Component index; only advection has more than one (one per axis).
    #[serde(default)]
    pub axis: usize,
    pub mean: f64,
    #[serde(default)]
    pub amplitude: f64,
    #[serde(default)]
    pub wave: Vec<i32>,
    #[serde(default)]
    pub phase: f64,
}

impl TermField {
    pub fn constant(kind: TermKind, axis: usize, mean: f64) -> Self {
        Self {
            kind,
            axis,
            mean,
            amplitude: 0.0,
            wave: Vec::new(),
            phase: 0.0,
        }
    }

    pub fn sine(kind: TermKind, mean: f64, amplitude: f64, wave: Vec<i32>, phase: f64) -> Self {
        Self {
            kind,
            axis: 0,
            mean,
            amplitude,
            wave,
            phase,
        }
    }

    fn field_name(&self) -> String {
        format!("coefficients.{}[{}]", self.kind.name(), self.axis)
    }

    /// Requires `mean ± amplitude` strictly inside `(lo, hi)`.
    pub fn check_bounds(&self, spec: &TermSpec) -> Result<()> {
        let (lo, hi) = (
            self.mean - self.amplitude.abs(),
            self.mean + self.amplitude.abs(),
        );
        if !(lo.is_finite() && hi.is_finite() && self.phase.is_finite()) {
            return Err(Error::validation(
                self.field_name(),
                "mean, amplitude and phase must be finite",
            ));
        }
        if !(spec.lo < lo && hi < spec.hi) {
            return Err(Error::validation(
                self.field_name(),
                format!(
                    "range [{lo}, {hi}] is not strictly inside the term bounds ({}, {})",
                    spec.lo, spec.hi
                ),
            ));
        }
        Ok(())
    }
}

/// Samples `spec` at the cell centres of `mesh`.
pub fn gen_coeff_field(spec: &TermField, mesh: Mesh) -> Result<Field> {
    if spec.amplitude == 0.0 {
        return Ok(Field::constant(mesh, spec.mean));
    }
    if spec.wave.len() != mesh.dim() {
        return Err(Error::validation(
            spec.field_name(),
            format!(
                "wave vector {:?} does not have {} components",
                spec.wave,
                mesh.dim()
            ),
        ));
    }
    let table = PhaseTable::new(mesh.n());
    let (pc, ps) = (spec.phase.cos(), spec.phase.sin());
    let values = (0..mesh.len())
        .map(|i| {
            let (c, s) = table.cos_sin(table.index(&spec.wave, &mesh.coords(i)));
            // sin(θ + φ) = sin θ cos φ + cos θ sin φ
            spec.mean + spec.amplitude * (s * pc + c * ps)
        })
        .collect();
    Field::new(mesh, values)
}

/// Ground truth for every active coefficient component.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CoeffFieldSpec {
    pub fields: Vec<TermField>,
}

impl CoeffFieldSpec {
    /// Checks that every component of every term in `specs` is described exactly once
    /// and stays inside its bounds.
    pub fn validate(&self, specs: &[TermSpec], dim: usize) -> Result<()> {
        for f in &self.fields {
            let spec = specs.iter().find(|s| s.kind == f.kind).ok_or_else(|| {
                Error::MaskMismatch(format!("coefficient given for inactive term {}", f.kind))
            })?;
            if f.axis >= f.kind.components(dim) {
                return Err(Error::validation(
                    f.field_name(),
                    format!("axis must be below {}", f.kind.components(dim)),
                ));
            }
            f.check_bounds(spec)?;
        }
        for s in specs {
            for axis in 0..s.kind.components(dim) {
                let n = self
                    .fields
                    .iter()
                    .filter(|f| f.kind == s.kind && f.axis == axis)
                    .count();
                if n != 1 {
                    return Err(Error::MaskMismatch(format!(
                        "term {} component {axis} is described {n} times, expected once",
                        s.kind
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn get(&self, kind: TermKind, axis: usize) -> Option<&TermField> {
        self.fields
            .iter()
            .find(|f| f.kind == kind && f.axis == axis)
    }

    pub fn kinds(&self) -> Vec<TermKind> {
        let mut k: Vec<TermKind> = self.fields.iter().map(|f| f.kind).collect();
        k.sort();
        k.dedup();
        k
    }

    /// Evaluates every term on `mesh`.
    pub fn realize(&self, mesh: Mesh) -> Result<Coefficients> {
        let mut out = Coefficients::new();
        for kind in self.kinds() {
            let fields = (0..kind.components(mesh.dim()))
                .map(|axis| {
                    let f = self.get(kind, axis).ok_or_else(|| {
                        Error::MaskMismatch(format!("term {kind} is missing component {axis}"))
                    })?;
                    gen_coeff_field(f, mesh)
                })
                .collect::<Result<Vec<Field>>>()?;
            out.insert(kind, fields)?;
        }
        Ok(out)
    }

    /// Midpoint constants for every component of `specs`.
    pub fn midpoints(specs: &[TermSpec], dim: usize) -> Self {
        let mut fields = Vec::new();
        for s in specs {
            for axis in 0..s.kind.components(dim) {
                fields.push(TermField::constant(s.kind, axis, 0.5 * (s.lo + s.hi)));
            }
        }
        Self { fields }
    }
}
