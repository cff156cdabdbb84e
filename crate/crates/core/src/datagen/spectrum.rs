use std::collections::BTreeMap;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Field, Mesh};

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Parity {
    Cos,
    Sin,
}

/// One real basis function `√2 cos(2π k·x)` or `√2 sin(2π k·x)` and its variance.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub k: Vec<i32>,
    pub parity: Parity,
    pub variance: f64,
}

/// Diagonal zero-mean Gaussian over real Fourier coefficients.
///
/// Wave vectors lie in the half-space whose first nonzero component is positive,
/// so no two modes describe the same function.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpectrumSpec {
    pub dim: usize,
    pub max_mode: u32,
    pub modes: Vec<Mode>,
}

fn canonical(k: &[i32]) -> bool {
    k.iter().find(|&&c| c != 0).is_some_and(|&c| c > 0)
}

/// Every canonical wave vector in `[-n, n]^dim`, lexicographic.
pub fn half_space(dim: usize, n: u32) -> Vec<Vec<i32>> {
    let n = n as i32;
    let side = (2 * n + 1) as usize;
    let mut out = Vec::new();
    for flat in 0..side.pow(dim as u32) {
        let mut k = vec![0i32; dim];
        let mut r = flat;
        for a in (0..dim).rev() {
            k[a] = (r % side) as i32 - n;
            r /= side;
        }
        if canonical(&k) {
            out.push(k);
        }
    }
    out
}

fn norm2(k: &[i32]) -> f64 {
    k.iter().map(|&c| (c as f64) * (c as f64)).sum()
}

impl SpectrumSpec {
    pub fn validate(&self) -> Result<()> {
        if !(1..=3).contains(&self.dim) {
            return Err(Error::validation("spectrum.dim", "must be 1, 2 or 3"));
        }
        let mut seen = BTreeMap::new();
        for m in &self.modes {
            if m.k.len() != self.dim {
                return Err(Error::validation(
                    "spectrum.modes",
                    format!(
                        "wave vector {:?} does not have {} components",
                        m.k, self.dim
                    ),
                ));
            }
            if !canonical(&m.k) {
                return Err(Error::validation(
                    "spectrum.modes",
                    format!(
                        "wave vector {:?} must be nonzero with first nonzero entry positive",
                        m.k
                    ),
                ));
            }
            if m.k.iter().any(|c| c.unsigned_abs() > self.max_mode) {
                return Err(Error::validation(
                    "spectrum.modes",
                    format!("wave vector {:?} exceeds max_mode {}", m.k, self.max_mode),
                ));
            }
            if !(m.variance.is_finite() && m.variance >= 0.0) {
                return Err(Error::validation(
                    "spectrum.modes",
                    format!(
                        "variance of {:?} must be finite and >= 0, got {}",
                        m.k, m.variance
                    ),
                ));
            }
            if seen.insert((m.k.clone(), m.parity), ()).is_some() {
                return Err(Error::validation(
                    "spectrum.modes",
                    format!("duplicate mode {:?} {:?}", m.k, m.parity),
                ));
            }
        }
        Ok(())
    }

    /// `Σ_kk ∝ (1 + |k|²)^(-decay)` on every mode up to `max_mode`, scaled so the
    /// pointwise variance of a sample is `total_variance`.
    pub fn power_law(dim: usize, max_mode: u32, decay: f64, total_variance: f64) -> Self {
        let mut modes = Vec::new();
        for k in half_space(dim, max_mode) {
            let w = (1.0 + norm2(&k)).powf(-decay);
            for parity in [Parity::Cos, Parity::Sin] {
                modes.push(Mode {
                    k: k.clone(),
                    parity,
                    variance: w,
                });
            }
        }
        let total: f64 = modes.iter().map(|m| m.variance).sum();
        if total > 0.0 {
            for m in &mut modes {
                m.variance *= total_variance / total;
            }
        }
        Self {
            dim,
            max_mode,
            modes,
        }
    }

    /// Single mode with the given variance.
    pub fn single(k: Vec<i32>, parity: Parity, variance: f64) -> Self {
        let max_mode = k.iter().map(|c| c.unsigned_abs()).max().unwrap_or(0);
        Self {
            dim: k.len(),
            max_mode,
            modes: vec![Mode {
                k,
                parity,
                variance,
            }],
        }
    }

    /// Every variance multiplied by `s`.
    pub fn scaled(&self, s: f64) -> Self {
        self.with_band_scale(s, 0.0)
    }

    /// Variances of modes with `|k| > cutoff` multiplied by `s`.
    pub fn with_band_scale(&self, s: f64, cutoff: f64) -> Self {
        let mut out = self.clone();
        for m in &mut out.modes {
            if norm2(&m.k).sqrt() > cutoff {
                m.variance *= s;
            }
        }
        out
    }

    /// Pointwise variance of a sampled field (sum of the mode variances).
    pub fn total_variance(&self) -> f64 {
        self.modes.iter().map(|m| m.variance).sum()
    }
}

/// Cosine and sine of `2π k·x` at every cell centre.
///
/// With `x_a = (i_a + 1/2)/n` the phase is `π m / n` for the integer
/// `m = Σ k_a (2 i_a + 1) mod 2n`, so the basis is periodic to the last bit.
pub(crate) struct PhaseTable {
    n: usize,
    cos: Vec<f64>,
    sin: Vec<f64>,
}

impl PhaseTable {
    pub(crate) fn new(n: usize) -> Self {
        let two_n = 2 * n;
        let angle = |m: usize| std::f64::consts::PI * m as f64 / n as f64;
        Self {
            n,
            cos: (0..two_n).map(|m| angle(m).cos()).collect(),
            sin: (0..two_n).map(|m| angle(m).sin()).collect(),
        }
    }

    /// Phase index of wave vector `k` at the cell with coordinates `c`.
    #[inline]
    pub(crate) fn index(&self, k: &[i32], c: &[usize; 3]) -> usize {
        let two_n = 2 * self.n as i64;
        let mut m = 0i64;
        for (a, &ka) in k.iter().enumerate() {
            m += ka as i64 * (2 * c[a] as i64 + 1);
        }
        m.rem_euclid(two_n) as usize
    }

    pub(crate) fn cos_sin(&self, m: usize) -> (f64, f64) {
        (self.cos[m], self.sin[m])
    }
}

/// Draws `U0 = Σ c_k φ_k` with independent `c_k ~ N(0, Σ_kk)` on `mesh`.
///
/// Coefficients are drawn in mode order, so a fixed RNG state gives a fixed field
/// at every resolution.
pub fn sample_initial(spec: &SpectrumSpec, mesh: Mesh, rng: &mut impl Rng) -> Result<Field> {
    if spec.dim != mesh.dim() {
        return Err(Error::Shape(format!(
            "spectrum is {}-dimensional, mesh is {}-dimensional",
            spec.dim,
            mesh.dim()
        )));
    }
    spec.validate()?;
    let coeffs: Vec<f64> = spec
        .modes
        .iter()
        .map(|m| {
            let z: f64 = rng.sample(StandardNormal);
            z * m.variance.sqrt()
        })
        .collect();
    let table = PhaseTable::new(mesh.n());
    let root2 = std::f64::consts::SQRT_2;
    let mut values = vec![0.0; mesh.len()];
    for (i, v) in values.iter_mut().enumerate() {
        let c = mesh.coords(i);
        let mut s = 0.0;
        for (mode, &ck) in spec.modes.iter().zip(&coeffs) {
            if ck == 0.0 {
                continue;
            }
            let (cos, sin) = table.cos_sin(table.index(&mode.k, &c));
            s += ck
                * match mode.parity {
                    Parity::Cos => cos,
                    Parity::Sin => sin,
                };
        }
        *v = root2 * s;
    }
    Field::new(mesh, values)
}

/// Squared Hellinger distance between two zero-mean Gaussians with diagonal
/// covariance over the union of their modes, evaluated in log space.
///
/// A mode with zero variance under both is dropped; zero under exactly one makes
/// the distributions mutually singular, so the distance is 1.
pub fn hellinger2(sigma: &SpectrumSpec, sigma_tilde: &SpectrumSpec) -> Result<f64> {
    if sigma.dim != sigma_tilde.dim {
        return Err(Error::Shape(format!(
            "spectra have dimensions {} and {}",
            sigma.dim, sigma_tilde.dim
        )));
    }
    sigma.validate()?;
    sigma_tilde.validate()?;
    let mut pairs: BTreeMap<(Vec<i32>, Parity), (f64, f64)> = BTreeMap::new();
    for m in &sigma.modes {
        pairs.entry((m.k.clone(), m.parity)).or_default().0 = m.variance;
    }
    for m in &sigma_tilde.modes {
        pairs.entry((m.k.clone(), m.parity)).or_default().1 = m.variance;
    }
    let mut log_affinity = 0.0;
    for &(a, b) in pairs.values() {
        match (a == 0.0, b == 0.0) {
            (true, true) => continue,
            (true, false) | (false, true) => return Ok(1.0),
            _ => {}
        }
        // log of a^{1/4} b^{1/4} / ((a+b)/2)^{1/2} depends only on r = |ln(b/a)|:
        // -r/4 - ln(1 + e^-r)/2 + ln(2)/2. Using |r| keeps swapped arguments bitwise equal.
        let r = (b.ln() - a.ln()).abs();
        log_affinity += 0.5 * std::f64::consts::LN_2 - 0.25 * r - 0.5 * (-r).exp().ln_1p();
    }
    // `+ 0.0` turns a negative zero into a positive one.
    Ok((-log_affinity.exp_m1()).clamp(0.0, 1.0) + 0.0)
}

/// Largest scale tried when solving for a shift level.
const MAX_SCALE: f64 = 1e12;

/// Scale `s >= 1` on the band `|k| > cutoff` that puts the shifted spectrum at
/// squared Hellinger distance `target` from `base`, found by bisection on `log s`.
pub fn solve_band_scale(base: &SpectrumSpec, cutoff: f64, target: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&target) || target.is_nan() {
        return Err(Error::validation(
            "ood.targets",
            format!("H² target must lie in [0, 1), got {target}"),
        ));
    }
    if target == 0.0 {
        return Ok(1.0);
    }
    if target >= 1.0 {
        return Err(Error::Unreachable {
            target,
            reason: "H² = 1 is only approached as the scale diverges".into(),
        });
    }
    let at = |log_s: f64| hellinger2(base, &base.with_band_scale(log_s.exp(), cutoff));
    let (mut lo, mut hi) = (0.0_f64, MAX_SCALE.ln());
    let top = at(hi)?;
    if top < target {
        return Err(Error::Unreachable {
            target,
            reason: format!("largest band scale {MAX_SCALE:e} only reaches H² = {top}"),
        });
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if at(mid)? < target {
            lo = mid;
        } else {
            hi = mid;
        }
        if hi - lo < 1e-14 * hi.max(1.0) {
            break;
        }
    }
    Ok((0.5 * (lo + hi)).exp())
}
