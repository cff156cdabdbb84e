use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Mesh};

/// The six terms of the parametric PDE family
/// `u_t = a0 + a1 u + a2·∇u + a3 Δu + b1 u(1-u) + b2 u Σ∂u`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TermKind {
    Source,
    Linear,
    Advection,
    Diffusion,
    Reaction,
    Burgers,
}

impl TermKind {
    pub const ALL: [TermKind; 6] = [
        TermKind::Source,
        TermKind::Linear,
        TermKind::Advection,
        TermKind::Diffusion,
        TermKind::Reaction,
        TermKind::Burgers,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            TermKind::Source => "source",
            TermKind::Linear => "linear",
            TermKind::Advection => "advection",
            TermKind::Diffusion => "diffusion",
            TermKind::Reaction => "reaction",
            TermKind::Burgers => "burgers",
        }
    }

    pub fn parse(s: &str) -> Option<TermKind> {
        TermKind::ALL.into_iter().find(|k| k.name() == s)
    }

    /// Number of coefficient fields: one per axis for advection, otherwise one.
    pub fn components(&self, dim: usize) -> usize {
        match self {
            TermKind::Advection => dim,
            _ => 1,
        }
    }

    /// Terms that keep the update linear (affine) in `U`.
    pub fn is_linear(&self) -> bool {
        !matches!(self, TermKind::Reaction | TermKind::Burgers)
    }
}

impl fmt::Display for TermKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// An active term with the open interval `(lo, hi)` its coefficient is confined to.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TermSpec {
    pub kind: TermKind,
    pub lo: f64,
    pub hi: f64,
}

impl TermSpec {
    pub fn new(kind: TermKind, lo: f64, hi: f64) -> Self {
        Self { kind, lo, hi }
    }

    fn field(&self) -> String {
        format!("terms.{}", self.kind)
    }

    fn abs_max(&self) -> f64 {
        self.lo.abs().max(self.hi.abs())
    }
}

/// Stability caps for a given grid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflCaps {
    /// Diffusion cap `c_x^2 / (2 D c_t)`.
    pub c_a: f64,
    /// Per-axis transport cap `c_x / (D c_t)`.
    pub c_adv: f64,
}

pub fn cfl_caps(grid: &Grid) -> CflCaps {
    let dx = grid.dx();
    let d = grid.dim() as f64;
    CflCaps {
        c_a: dx * dx / (2.0 * d * grid.dt),
        c_adv: dx / (d * grid.dt),
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CflReport {
    pub c_a: f64,
    pub c_adv: f64,
    /// Minimum over the grid of `1 - c_t (2D a3 / c_x^2 + Σ|a2| / c_x)`,
    /// the diagonal weight of the explicit update. Nonnegative means monotone.
    pub margin: f64,
}

/// Caps plus the monotonicity slack of a realized coefficient set.
pub fn cfl_report(grid: &Grid, coeffs: &Coefficients) -> CflReport {
    let caps = cfl_caps(grid);
    let dx = grid.dx();
    let d = grid.dim() as f64;
    let mut margin = f64::INFINITY;
    for i in 0..grid.mesh.len() {
        let mut load = 0.0;
        if let Some(a) = coeffs.get(TermKind::Diffusion) {
            load += 2.0 * d * a[0].values()[i] / (dx * dx);
        }
        if let Some(b) = coeffs.get(TermKind::Advection) {
            load += b.iter().map(|f| f.values()[i].abs()).sum::<f64>() / dx;
        }
        margin = margin.min(1.0 - grid.dt * load);
    }
    CflReport {
        c_a: caps.c_a,
        c_adv: caps.c_adv,
        margin,
    }
}

const CFL_SAFETY: f64 = 0.9;

/// Bounds for `kinds` that satisfy the combined explicit-scheme condition with margin 0.9.
///
/// Diffusion and transport (advection, Burgers) split the stability budget in half
/// when both are present. Burgers bounds assume `|u| <= 1`.
pub fn default_specs(grid: &Grid, kinds: &[TermKind]) -> Vec<TermSpec> {
    let caps = cfl_caps(grid);
    let has = |k: TermKind| kinds.contains(&k);
    let transport_terms = [TermKind::Advection, TermKind::Burgers]
        .iter()
        .filter(|&&k| has(k))
        .count();
    let diffusion_share = if transport_terms > 0 { 0.5 } else { 1.0 };
    let transport_share = if has(TermKind::Diffusion) { 0.5 } else { 1.0 };
    let mut out: Vec<TermSpec> = kinds
        .iter()
        .map(|&kind| {
            let (lo, hi) = match kind {
                TermKind::Source | TermKind::Linear => (-1.0, 1.0),
                TermKind::Reaction => (0.0, 1.0),
                TermKind::Diffusion => {
                    let hi = CFL_SAFETY * caps.c_a * diffusion_share;
                    let lo = if has(TermKind::Burgers) {
                        0.1 * hi
                    } else {
                        0.0
                    };
                    (lo, hi)
                }
                TermKind::Advection | TermKind::Burgers => {
                    let w = CFL_SAFETY * caps.c_adv * transport_share / transport_terms as f64;
                    (-w, w)
                }
            };
            TermSpec::new(kind, lo, hi)
        })
        .collect();
    out.sort_by_key(|s| s.kind);
    out.dedup_by_key(|s| s.kind);
    out
}

/// Checks bounds against the grid's CFL caps and the term-coupling rules.
pub fn validate_specs(grid: &Grid, specs: &[TermSpec]) -> Result<()> {
    let caps = cfl_caps(grid);
    for (i, s) in specs.iter().enumerate() {
        if specs[..i].iter().any(|o| o.kind == s.kind) {
            return Err(Error::validation(s.field(), "term listed twice"));
        }
        if !(s.lo.is_finite() && s.hi.is_finite() && s.lo < s.hi) {
            return Err(Error::validation(
                s.field(),
                format!("need finite lo < hi, got [{}, {}]", s.lo, s.hi),
            ));
        }
    }
    let find = |k: TermKind| specs.iter().find(|s| s.kind == k);
    if let Some(s) = find(TermKind::Diffusion) {
        if s.lo < 0.0 {
            return Err(Error::validation(
                s.field(),
                format!("lo must be >= 0, got {}", s.lo),
            ));
        }
        if s.hi > caps.c_a {
            return Err(Error::validation(
                s.field(),
                format!(
                    "hi = {} exceeds the CFL cap C_a = c_x^2/(2 D c_t) = {}",
                    s.hi, caps.c_a
                ),
            ));
        }
    }
    for k in [TermKind::Advection, TermKind::Burgers] {
        if let Some(s) = find(k) {
            if s.abs_max() > caps.c_adv {
                return Err(Error::validation(
                    s.field(),
                    format!(
                        "bound {} exceeds the CFL transport cap C_adv = c_x/(D c_t) = {}",
                        s.abs_max(),
                        caps.c_adv
                    ),
                ));
            }
        }
    }
    if find(TermKind::Burgers).is_some() {
        match find(TermKind::Diffusion) {
            Some(d) if d.lo > 0.0 => {}
            _ => {
                return Err(Error::validation(
                    "terms.burgers",
                    "requires an active diffusion term with lo > 0",
                ))
            }
        }
    }
    let dx = grid.dx();
    let d = grid.dim() as f64;
    let diffusion = find(TermKind::Diffusion).map_or(0.0, |s| s.hi);
    let transport: f64 = [TermKind::Advection, TermKind::Burgers]
        .iter()
        .filter_map(|&k| find(k))
        .map(|s| s.abs_max())
        .sum();
    let load = grid.dt * (2.0 * d * diffusion / (dx * dx) + d * transport / dx);
    if load > 1.0 {
        return Err(Error::validation(
            "terms",
            format!(
                "combined CFL condition c_t (2D a3/c_x^2 + D|a2|/c_x) = {load} exceeds 1 \
                 (C_a = {}, C_adv = {})",
                caps.c_a, caps.c_adv
            ),
        ));
    }
    Ok(())
}

/// Numerically stable logistic function.
#[inline]
pub fn sigmoid(t: f64) -> f64 {
    if t >= 0.0 {
        1.0 / (1.0 + (-t).exp())
    } else {
        let e = t.exp();
        e / (1.0 + e)
    }
}

/// `lo + (hi - lo) σ(t)`, kept inside the open interval even where `σ` saturates.
#[inline]
pub fn realize_value(t: f64, lo: f64, hi: f64) -> f64 {
    let v = lo + (hi - lo) * sigmoid(t);
    v.clamp(lo.next_up(), hi.next_down())
}

/// Pointwise bounded coefficient field.
pub fn realize(theta: &Field, spec: &TermSpec) -> Field {
    let values = theta
        .values()
        .iter()
        .map(|&t| realize_value(t, spec.lo, spec.hi))
        .collect();
    Field::from_vec_unchecked(*theta.mesh(), values)
}

/// Physical coefficient fields driving the solver, keyed by term.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct Coefficients {
    terms: BTreeMap<TermKind, Vec<Field>>,
}

impl Coefficients {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with(mut self, kind: TermKind, fields: Vec<Field>) -> Result<Self> {
        self.insert(kind, fields)?;
        Ok(self)
    }

    pub fn insert(&mut self, kind: TermKind, fields: Vec<Field>) -> Result<()> {
        let first = fields
            .first()
            .ok_or_else(|| Error::Shape(format!("{kind} needs at least one field")))?;
        let mesh = *first.mesh();
        if fields.len() != kind.components(mesh.dim()) {
            return Err(Error::Shape(format!(
                "{kind} needs {} component field(s), got {}",
                kind.components(mesh.dim()),
                fields.len()
            )));
        }
        if fields.iter().any(|f| *f.mesh() != mesh) || self.mesh().is_some_and(|m| m != mesh) {
            return Err(Error::Shape(format!(
                "{kind} coefficients live on a different mesh"
            )));
        }
        self.terms.insert(kind, fields);
        Ok(())
    }

    pub fn get(&self, kind: TermKind) -> Option<&[Field]> {
        self.terms.get(&kind).map(Vec::as_slice)
    }

    pub fn kinds(&self) -> impl Iterator<Item = TermKind> + '_ {
        self.terms.keys().copied()
    }

    pub fn mesh(&self) -> Option<Mesh> {
        self.terms.values().next().map(|f| *f[0].mesh())
    }

    pub fn is_linear(&self) -> bool {
        self.kinds().all(|k| k.is_linear())
    }
}

/// Learnable parameters: raw `θ` blocks per active term plus the bounds that realize them.
///
/// Blocks are laid out in term order, `components(kind)` consecutive blocks per term.
#[derive(Clone, Debug, PartialEq)]
pub struct CoeffSet {
    mesh: Mesh,
    specs: Vec<TermSpec>,
    theta: Vec<Vec<f64>>,
}

impl CoeffSet {
    pub fn new(mesh: Mesh, mut specs: Vec<TermSpec>, theta: Vec<Vec<f64>>) -> Result<Self> {
        let order: Vec<TermKind> = specs.iter().map(|s| s.kind).collect();
        specs.sort_by_key(|s| s.kind);
        if specs.windows(2).any(|w| w[0].kind == w[1].kind) {
            return Err(Error::validation("terms", "duplicate term"));
        }
        if order.iter().zip(&specs).any(|(k, s)| *k != s.kind) {
            return Err(Error::validation(
                "terms",
                "terms must be listed in canonical order",
            ));
        }
        let expected: usize = specs.iter().map(|s| s.kind.components(mesh.dim())).sum();
        if theta.len() != expected {
            return Err(Error::Shape(format!(
                "expected {expected} theta blocks, got {}",
                theta.len()
            )));
        }
        if let Some(b) = theta.iter().position(|t| t.len() != mesh.len()) {
            return Err(Error::Shape(format!(
                "theta block {b} has the wrong length"
            )));
        }
        if theta.iter().flatten().any(|t| !t.is_finite()) {
            return Err(Error::validation("theta", "raw parameters must be finite"));
        }
        Ok(Self { mesh, specs, theta })
    }

    /// All blocks set to the same raw value.
    pub fn constant(mesh: Mesh, mut specs: Vec<TermSpec>, value: f64) -> Result<Self> {
        specs.sort_by_key(|s| s.kind);
        let blocks: usize = specs.iter().map(|s| s.kind.components(mesh.dim())).sum();
        Self::new(mesh, specs, vec![vec![value; mesh.len()]; blocks])
    }

    /// The raw parameters whose realization equals `coeffs` (inverse sigmoid).
    ///
    /// Fails if a coefficient is missing or lies outside its open interval.
    pub fn preimage(mesh: Mesh, mut specs: Vec<TermSpec>, coeffs: &Coefficients) -> Result<Self> {
        specs.sort_by_key(|s| s.kind);
        let mut theta = Vec::new();
        for s in &specs {
            let fields = coeffs.get(s.kind).ok_or_else(|| {
                Error::MaskMismatch(format!("no coefficient given for {}", s.kind))
            })?;
            for f in fields {
                let block = f
                    .values()
                    .iter()
                    .map(|&a| {
                        let p = (a - s.lo) / (s.hi - s.lo);
                        if p > 0.0 && p < 1.0 {
                            Ok((p / (1.0 - p)).ln())
                        } else {
                            Err(Error::validation(
                                s.field(),
                                format!("coefficient {a} outside ({}, {})", s.lo, s.hi),
                            ))
                        }
                    })
                    .collect::<Result<Vec<f64>>>()?;
                theta.push(block);
            }
        }
        Self::new(mesh, specs, theta)
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn specs(&self) -> &[TermSpec] {
        &self.specs
    }

    pub fn spec(&self, kind: TermKind) -> Option<&TermSpec> {
        self.specs.iter().find(|s| s.kind == kind)
    }

    pub fn kinds(&self) -> Vec<TermKind> {
        self.specs.iter().map(|s| s.kind).collect()
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.theta
    }

    pub fn blocks_mut(&mut self) -> &mut [Vec<f64>] {
        &mut self.theta
    }

    /// `(term, component)` for each block, in block order.
    pub fn slots(&self) -> Vec<(TermKind, usize)> {
        self.specs
            .iter()
            .flat_map(|s| (0..s.kind.components(self.mesh.dim())).map(move |c| (s.kind, c)))
            .collect()
    }

    /// Raw blocks of one term.
    pub fn theta(&self, kind: TermKind) -> Option<&[Vec<f64>]> {
        let mut start = 0;
        for s in &self.specs {
            let c = s.kind.components(self.mesh.dim());
            if s.kind == kind {
                return Some(&self.theta[start..start + c]);
            }
            start += c;
        }
        None
    }

    pub fn parameter_count(&self) -> usize {
        self.theta.iter().map(Vec::len).sum()
    }

    /// Realized coefficient fields for every active term.
    pub fn realize(&self) -> Coefficients {
        let mut terms = BTreeMap::new();
        let mut blocks = self.theta.iter();
        for s in &self.specs {
            let fields = (0..s.kind.components(self.mesh.dim()))
                .map(|_| {
                    let block = blocks.next().expect("layout checked on construction");
                    let values = block
                        .iter()
                        .map(|&t| realize_value(t, s.lo, s.hi))
                        .collect();
                    Field::from_vec_unchecked(self.mesh, values)
                })
                .collect();
            terms.insert(s.kind, fields);
        }
        Coefficients { terms }
    }

    /// `d(realized)/d(theta)` per block.
    pub(crate) fn realize_derivative(&self) -> Vec<Vec<f64>> {
        let mut out = Vec::with_capacity(self.theta.len());
        let mut blocks = self.theta.iter();
        for s in &self.specs {
            for _ in 0..s.kind.components(self.mesh.dim()) {
                let block = blocks.next().expect("layout checked on construction");
                out.push(
                    block
                        .iter()
                        .map(|&t| {
                            let p = sigmoid(t);
                            (s.hi - s.lo) * p * (1.0 - p)
                        })
                        .collect(),
                );
            }
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(dim: usize, n: usize, dt: f64) -> Grid {
        Grid::new(dim, n, dt, 1, 1).unwrap()
    }

    #[test]
    fn realize_examples() {
        let m = Mesh::new(1, 4).unwrap();
        let caps = cfl_caps(&grid(1, 4, 0.01));
        let half = realize(
            &Field::zeros(m),
            &TermSpec::new(TermKind::Diffusion, 0.0, caps.c_a),
        );
        assert!(half
            .values()
            .iter()
            .all(|&v| (v - caps.c_a / 2.0).abs() < 1e-15));

        let three_quarters = realize(
            &Field::constant(m, 3f64.ln()),
            &TermSpec::new(TermKind::Diffusion, 0.0, 1.0),
        );
        assert!(three_quarters
            .values()
            .iter()
            .all(|&v| (v - 0.75).abs() < 1e-15));

        let tail = realize(
            &Field::constant(m, -50.0),
            &TermSpec::new(TermKind::Diffusion, 0.0, 1.0),
        );
        assert!(tail.values().iter().all(|&v| v > 0.0 && v < 1e-20));
    }

    #[test]
    fn realize_stays_strictly_inside_at_extremes() {
        for t in [-1e6, -800.0, -40.0, 0.0, 40.0, 800.0, 1e6] {
            let v = realize_value(t, 0.0, 2.5);
            assert!(v > 0.0 && v < 2.5, "t={t} v={v}");
            let w = realize_value(t, -1.0, 1.0);
            assert!(w > -1.0 && w < 1.0);
        }
    }

    #[test]
    fn cfl_caps_examples() {
        let g2 = Grid::new(2, 10, 0.001, 1, 1).unwrap();
        assert!((cfl_caps(&g2).c_a - 2.5).abs() < 1e-12);
        let g1 = Grid::new(1, 10, 0.001, 1, 1).unwrap();
        assert!((cfl_caps(&g1).c_a - 5.0).abs() < 1e-12);
        let g1b = Grid::new(1, 10, 0.002, 1, 1).unwrap();
        assert_eq!(cfl_caps(&g1b).c_a, cfl_caps(&g1).c_a / 2.0);
    }

    #[test]
    fn default_specs_pass_validation() {
        let g = grid(2, 16, 1e-3);
        let all = TermKind::ALL;
        for mask in 1u32..64 {
            let kinds: Vec<TermKind> = all
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, k)| *k)
                .collect();
            let specs = default_specs(&g, &kinds);
            let burgers_without_diffusion =
                kinds.contains(&TermKind::Burgers) && !kinds.contains(&TermKind::Diffusion);
            assert_eq!(
                validate_specs(&g, &specs).is_err(),
                burgers_without_diffusion,
                "{kinds:?}"
            );
        }
    }

    #[test]
    fn validation_names_the_cap() {
        let g = grid(1, 10, 0.001);
        let err = validate_specs(&g, &[TermSpec::new(TermKind::Diffusion, 0.0, 6.0)]).unwrap_err();
        assert!(err.to_string().contains("C_a"), "{err}");
        let err =
            validate_specs(&g, &[TermSpec::new(TermKind::Advection, -200.0, 200.0)]).unwrap_err();
        assert!(err.to_string().contains("C_adv"), "{err}");
        let combined = [
            TermSpec::new(TermKind::Diffusion, 0.0, 4.0),
            TermSpec::new(TermKind::Advection, -50.0, 50.0),
        ];
        assert!(validate_specs(&g, &combined).is_err());
        assert!(validate_specs(&g, &[TermSpec::new(TermKind::Reaction, 1.0, 1.0)]).is_err());
    }

    #[test]
    fn coeffset_layout_and_preimage() {
        let m = Mesh::new(2, 4).unwrap();
        let g = grid(2, 4, 1e-3);
        let specs = default_specs(&g, &[TermKind::Diffusion, TermKind::Advection]);
        let set = CoeffSet::constant(m, specs.clone(), 0.3).unwrap();
        assert_eq!(
            set.slots(),
            vec![
                (TermKind::Advection, 0),
                (TermKind::Advection, 1),
                (TermKind::Diffusion, 0)
            ]
        );
        assert_eq!(set.parameter_count(), 3 * 16);
        let back = CoeffSet::preimage(m, specs, &set.realize()).unwrap();
        for (a, b) in back
            .blocks()
            .iter()
            .flatten()
            .zip(set.blocks().iter().flatten())
        {
            assert!((a - b).abs() < 1e-9);
        }
    }
}
