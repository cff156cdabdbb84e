//! Fixed finite-difference kernels applied with periodic wrap.
//!
//! Kernels hold raw integer weights; the `1/c_x^power` scaling is applied when
//! the kernel meets a concrete mesh, so one kernel serves every resolution.

use crate::error::{Error, Result};
use crate::grid::{Field, Mesh};

#[derive(Clone, Debug, PartialEq)]
pub struct Stencil {
    dim: usize,
    offsets: Vec<[isize; 3]>,
    weights: Vec<f64>,
    order: u8,
}

fn unit(axis: usize, step: isize) -> [isize; 3] {
    let mut o = [0; 3];
    o[axis] = step;
    o
}

impl Stencil {
    pub fn new(dim: usize, offsets: Vec<[isize; 3]>, weights: Vec<f64>, order: u8) -> Result<Self> {
        if offsets.len() != weights.len() || offsets.is_empty() {
            return Err(Error::validation(
                "stencil",
                "offsets and weights must be non-empty and equal in length",
            ));
        }
        for (i, o) in offsets.iter().enumerate() {
            if o[dim..].iter().any(|&c| c != 0) {
                return Err(Error::validation(
                    "stencil",
                    format!("offset {i} uses an axis beyond dim {dim}"),
                ));
            }
            if offsets[..i].contains(o) {
                return Err(Error::validation(
                    "stencil",
                    format!("duplicate offset {o:?}"),
                ));
            }
        }
        if weights.iter().any(|w| !w.is_finite()) {
            return Err(Error::validation("stencil", "weights must be finite"));
        }
        Ok(Self {
            dim,
            offsets,
            weights,
            order,
        })
    }

    /// `[1, -2, 1]` in 1D, the 5-point cross in 2D, the 7-point cross in 3D.
    pub fn laplacian(dim: usize) -> Self {
        let mut offsets = vec![[0; 3]];
        let mut weights = vec![-2.0 * dim as f64];
        for axis in 0..dim {
            offsets.push(unit(axis, -1));
            weights.push(1.0);
            offsets.push(unit(axis, 1));
            weights.push(1.0);
        }
        Self::new(dim, offsets, weights, 2).expect("valid laplacian")
    }

    /// `u(x + e_axis) - u(x)`.
    pub fn forward(dim: usize, axis: usize) -> Self {
        Self::new(dim, vec![[0; 3], unit(axis, 1)], vec![-1.0, 1.0], 1)
            .expect("valid forward difference")
    }

    /// `u(x) - u(x - e_axis)`.
    pub fn backward(dim: usize, axis: usize) -> Self {
        Self::new(dim, vec![unit(axis, -1), [0; 3]], vec![-1.0, 1.0], 1)
            .expect("valid backward difference")
    }

    /// `(u(x + e_axis) - u(x - e_axis)) / 2`.
    pub fn central(dim: usize, axis: usize) -> Self {
        Self::new(dim, vec![unit(axis, -1), unit(axis, 1)], vec![-0.5, 0.5], 2)
            .expect("valid central difference")
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn offsets(&self) -> &[[isize; 3]] {
        &self.offsets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Formal consistency order.
    pub fn order(&self) -> u8 {
        self.order
    }

    /// Dense `3^dim` kernel for stencils whose offsets lie in `{-1,0,1}^dim`.
    /// Row-major, axis 0 slowest, index `1 + offset` per axis.
    pub fn dense3(&self) -> Option<Vec<f64>> {
        let width = 3usize.pow(self.dim as u32);
        let mut out = vec![0.0; width];
        for (o, w) in self.offsets.iter().zip(&self.weights) {
            let mut idx = 0;
            for &oa in o.iter().take(self.dim) {
                if !(-1..=1).contains(&oa) {
                    return None;
                }
                idx = idx * 3 + (oa + 1) as usize;
            }
            out[idx] += w;
        }
        Some(out)
    }
}

/// `out(x) = c_x^-power * Σ_m w_m u(x + o_m)` with periodic wrap.
pub fn apply_stencil(stencil: &Stencil, u: &Field, power: i32) -> Result<Field> {
    let mesh = *u.mesh();
    if stencil.dim != mesh.dim() {
        return Err(Error::Shape(format!(
            "stencil is {}-dimensional, field is {}-dimensional",
            stencil.dim,
            mesh.dim()
        )));
    }
    let scale = mesh.dx().powi(-power);
    let vals = u.values();
    let out = (0..mesh.len())
        .map(|i| {
            let acc = stencil
                .offsets
                .iter()
                .zip(&stencil.weights)
                .fold(0.0, |acc, (o, &w)| {
                    acc + w * vals[offset_index(&mesh, i, o)]
                });
            scale * acc
        })
        .collect();
    Field::new(mesh, out)
}

fn offset_index(mesh: &Mesh, mut index: usize, offset: &[isize; 3]) -> usize {
    for (axis, &step) in offset.iter().enumerate().take(mesh.dim()) {
        if step != 0 {
            index = mesh.shifted(index, axis, step);
        }
    }
    index
}

/// `Σ_axes b_axis(x) D_axis u(x)` with monotone upwinding for `u_t = b · ∇u`.
///
/// Where `b_axis(x) >= 0` information travels in from `+x`, so the forward
/// difference is used; otherwise the backward difference.
pub fn upwind_gradient(u: &Field, b: &[Field]) -> Result<Field> {
    let mesh = *u.mesh();
    if b.len() != mesh.dim() {
        return Err(Error::Shape(format!(
            "need one velocity component per axis ({}), got {}",
            mesh.dim(),
            b.len()
        )));
    }
    if let Some(axis) = b.iter().position(|f| *f.mesh() != mesh) {
        return Err(Error::Shape(format!(
            "velocity component {axis} lives on a different mesh"
        )));
    }
    let inv_dx = 1.0 / mesh.dx();
    let vals = u.values();
    let mut out = vec![0.0; mesh.len()];
    for (axis, comp) in b.iter().enumerate() {
        for (i, (o, &v)) in out.iter_mut().zip(comp.values()).enumerate() {
            *o += v * upwind_diff(vals, &mesh, i, axis, v) * inv_dx;
        }
    }
    Field::new(mesh, out)
}

#[inline]
fn upwind_diff(vals: &[f64], mesh: &Mesh, i: usize, axis: usize, velocity: f64) -> f64 {
    if velocity >= 0.0 {
        vals[mesh.shifted(i, axis, 1)] - vals[i]
    } else {
        vals[i] - vals[mesh.shifted(i, axis, -1)]
    }
}

/// Result of a consistency-order measurement.
#[derive(Clone, Debug, PartialEq)]
pub struct ConsistencyReport {
    /// `(c_x, max error)` per resolution.
    pub errors: Vec<(f64, f64)>,
    /// Least-squares slope of `log(error)` against `log(c_x)`; `None` when every error is exactly zero.
    pub slope: Option<f64>,
    pub exact_zero: bool,
}

/// Measures the observed order of `stencil` in 1D against an analytic derivative.
///
/// `f` is the test function and `exact` the derivative the scaled stencil should
/// reproduce. `power` is the `c_x` exponent (1 for first derivatives, 2 for the Laplacian).
pub fn consistency_order(
    stencil: &Stencil,
    power: i32,
    f: impl Fn(&[f64]) -> f64,
    exact: impl Fn(&[f64]) -> f64,
    resolutions: &[usize],
) -> Result<ConsistencyReport> {
    let mut errors = Vec::with_capacity(resolutions.len());
    for &n in resolutions {
        let mesh = Mesh::new(stencil.dim, n)?;
        let u = Field::from_fn(mesh, &f)?;
        let du = apply_stencil(stencil, &u, power)?;
        let reference = Field::from_fn(mesh, &exact)?;
        let err = du
            .values()
            .iter()
            .zip(reference.values())
            .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        errors.push((mesh.dx(), err));
    }
    let exact_zero = errors.iter().all(|&(_, e)| e == 0.0);
    let slope = if exact_zero {
        None
    } else {
        let pts: Vec<(f64, f64)> = errors
            .iter()
            .filter(|&&(_, e)| e > 0.0)
            .map(|&(h, e)| (h.ln(), e.ln()))
            .collect();
        fit_slope(&pts)
    };
    Ok(ConsistencyReport {
        errors,
        slope,
        exact_zero,
    })
}

/// Least-squares slope through `(x, y)` points; `None` with fewer than two points.
pub fn fit_slope(points: &[(f64, f64)]) -> Option<f64> {
    if points.len() < 2 {
        return None;
    }
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn mesh(dim: usize, n: usize) -> Mesh {
        Mesh::new(dim, n).unwrap()
    }

    #[test]
    fn laplacian_impulse_1d() {
        // n = 4 gives c_x = 1/4; scale back to the unit-spacing kernel.
        let u = Field::new(mesh(1, 4), vec![0.0, 1.0, 0.0, 0.0]).unwrap();
        let lap = apply_stencil(&Stencil::laplacian(1), &u, 2).unwrap();
        let unit: Vec<f64> = lap.values().iter().map(|v| v / 16.0).collect();
        assert_eq!(unit, vec![1.0, -2.0, 1.0, 0.0]);
    }

    #[test]
    fn laplacian_kernels_match_literals() {
        assert_eq!(
            Stencil::laplacian(1).dense3().unwrap(),
            vec![1.0, -2.0, 1.0]
        );
        assert_eq!(
            Stencil::laplacian(2).dense3().unwrap(),
            vec![0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0]
        );
        let k3 = Stencil::laplacian(3).dense3().unwrap();
        assert_eq!(k3[13], -6.0);
        assert_eq!(k3.iter().filter(|&&w| w == 1.0).count(), 6);
        assert_eq!(k3.iter().sum::<f64>(), 0.0);
    }

    #[test]
    fn derivative_stencils_annihilate_constants() {
        for dim in 1..=3 {
            let u = Field::constant(mesh(dim, 6), 3.25);
            let mut stencils = vec![(Stencil::laplacian(dim), 2)];
            for axis in 0..dim {
                stencils.push((Stencil::forward(dim, axis), 1));
                stencils.push((Stencil::backward(dim, axis), 1));
                stencils.push((Stencil::central(dim, axis), 1));
            }
            for (s, p) in stencils {
                assert_eq!(s.weights().iter().sum::<f64>(), 0.0);
                let out = apply_stencil(&s, &u, p).unwrap();
                assert!(out.values().iter().all(|&v| v == 0.0));
            }
        }
    }

    #[test]
    fn dimension_mismatch_is_shape_error() {
        let u = Field::zeros(mesh(2, 4));
        assert!(matches!(
            apply_stencil(&Stencil::laplacian(1), &u, 2),
            Err(Error::Shape(_))
        ));
        assert!(Stencil::new(1, vec![[0, 1, 0]], vec![1.0], 1).is_err());
        assert!(Stencil::new(1, vec![[1, 0, 0], [1, 0, 0]], vec![1.0, -1.0], 1).is_err());
    }

    #[test]
    fn laplacian_second_order_on_sine() {
        let report = consistency_order(
            &Stencil::laplacian(1),
            2,
            |x| (2.0 * PI * x[0]).sin(),
            |x| -4.0 * PI * PI * (2.0 * PI * x[0]).sin(),
            &[32, 64, 128, 256],
        )
        .unwrap();
        let slope = report.slope.unwrap();
        assert!((1.9..=2.1).contains(&slope), "slope {slope}");
        // Truncation error is c_x^2/12 · max|u''''| = (4π^4/3) c_x^2.
        let (h, e) = report.errors[2];
        assert!(e <= 4.0 * PI.powi(4) / 3.0 * h * h, "error {e}");
    }

    #[test]
    fn forward_difference_first_order() {
        let report = consistency_order(
            &Stencil::forward(1, 0),
            1,
            |x| (2.0 * PI * x[0]).sin(),
            |x| 2.0 * PI * (2.0 * PI * x[0]).cos(),
            &[32, 64, 128, 256],
        )
        .unwrap();
        let slope = report.slope.unwrap();
        assert!((0.9..=1.1).contains(&slope), "slope {slope}");
    }

    #[test]
    fn constant_family_reports_exact_zero() {
        let report = consistency_order(
            &Stencil::laplacian(1),
            2,
            |_| 1.5,
            |_| 0.0,
            &[32, 64, 128, 256],
        )
        .unwrap();
        assert!(report.exact_zero);
        assert_eq!(report.slope, None);
    }

    #[test]
    fn upwind_gradient_cases() {
        let m = mesh(2, 8);
        let u = Field::from_fn(m, |x| (2.0 * PI * x[0]).sin() + x[1]).unwrap();
        let zero = vec![Field::zeros(m), Field::zeros(m)];
        assert!(upwind_gradient(&u, &zero)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        let c = Field::constant(m, 2.0);
        let b = vec![Field::constant(m, 1.0), Field::constant(m, -3.0)];
        assert!(upwind_gradient(&c, &b)
            .unwrap()
            .values()
            .iter()
            .all(|&v| v == 0.0));
        assert!(upwind_gradient(&u, &b[..1]).is_err());
    }

    #[test]
    fn upwind_gradient_first_order_on_sine() {
        let mut pts = Vec::new();
        for n in [32usize, 64, 128, 256] {
            let m = mesh(1, n);
            let u = Field::from_fn(m, |x| (2.0 * PI * x[0]).sin()).unwrap();
            let g = upwind_gradient(&u, &[Field::constant(m, 1.0)]).unwrap();
            let err = Field::from_fn(m, |x| 2.0 * PI * (2.0 * PI * x[0]).cos())
                .unwrap()
                .values()
                .iter()
                .zip(g.values())
                .fold(0.0f64, |acc, (a, b)| acc.max((a - b).abs()));
            // First-order one-sided error bound: (2π)^2 c_x / 2.
            assert!(err <= 2.0 * PI * PI * m.dx() * 1.01, "n={n} err={err}");
            pts.push((m.dx().ln(), err.ln()));
        }
        let slope = fit_slope(&pts).unwrap();
        assert!((0.9..=1.1).contains(&slope), "slope {slope}");
    }

    #[test]
    fn upwind_direction_follows_sign() {
        // u_t = b u_x: b > 0 takes the forward difference.
        let m = mesh(1, 4);
        let u = Field::new(m, vec![0.0, 1.0, 4.0, 9.0]).unwrap();
        let pos = upwind_gradient(&u, &[Field::constant(m, 1.0)]).unwrap();
        assert_eq!(pos.values()[1], (4.0 - 1.0) * 4.0);
        let neg = upwind_gradient(&u, &[Field::constant(m, -1.0)]).unwrap();
        assert_eq!(neg.values()[1], -(1.0 - 0.0) * 4.0);
    }
}
