use super::terms::{Coefficients, TermKind};
use crate::error::{Error, Result};
use crate::grid::{Field, Grid, Mesh, Neighbors, Trajectory};

/// One forward-Euler update bound to a coefficient set and a mesh.
///
/// `U_{k+1} = U_k + c_t [a0 + a1 U_k + a2·∇⁺U_k + a3 ΔU_k + b1 U_k(1-U_k) + b2 U_{k-1} Σ∂⁺U_k]`
/// where `∇⁺` is the monotone upwind difference for the local velocity
/// (`a2` for advection, `b2 U_{k-1}` for Burgers).
pub struct Kernel<'a> {
    mesh: Mesh,
    nb: &'a Neighbors,
    pub(crate) dt: f64,
    pub(crate) inv_dx: f64,
    pub(crate) inv_dx2: f64,
    pub(crate) source: Option<&'a [f64]>,
    pub(crate) linear: Option<&'a [f64]>,
    pub(crate) advection: Vec<&'a [f64]>,
    pub(crate) diffusion: Option<&'a [f64]>,
    pub(crate) reaction: Option<&'a [f64]>,
    pub(crate) burgers: Option<&'a [f64]>,
}

impl<'a> Kernel<'a> {
    pub fn new(coeffs: &'a Coefficients, mesh: Mesh, nb: &'a Neighbors, dt: f64) -> Result<Self> {
        if let Some(m) = coeffs.mesh() {
            if m != mesh {
                return Err(Error::Shape(format!(
                    "coefficients live on {m:?}, state on {mesh:?}"
                )));
            }
        }
        let one = |k: TermKind| coeffs.get(k).map(|f| f[0].values());
        let dx = mesh.dx();
        Ok(Self {
            mesh,
            nb,
            dt,
            inv_dx: 1.0 / dx,
            inv_dx2: 1.0 / (dx * dx),
            source: one(TermKind::Source),
            linear: one(TermKind::Linear),
            advection: coeffs
                .get(TermKind::Advection)
                .map(|f| f.iter().map(Field::values).collect())
                .unwrap_or_default(),
            diffusion: one(TermKind::Diffusion),
            reaction: one(TermKind::Reaction),
            burgers: one(TermKind::Burgers),
        })
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub(crate) fn neighbors(&self) -> &Neighbors {
        self.nb
    }

    /// Upwind difference of `u` at `i` along `axis` for velocity `v`, divided by `c_x`.
    #[inline(always)]
    pub(crate) fn upwind(&self, u: &[f64], i: usize, axis: usize, v: f64) -> f64 {
        if v >= 0.0 {
            (u[self.nb.plus(axis)[i] as usize] - u[i]) * self.inv_dx
        } else {
            (u[i] - u[self.nb.minus(axis)[i] as usize]) * self.inv_dx
        }
    }

    #[inline(always)]
    pub(crate) fn laplacian(&self, u: &[f64], i: usize) -> f64 {
        let dim = self.mesh.dim();
        let mut s = -2.0 * dim as f64 * u[i];
        for axis in 0..dim {
            s += u[self.nb.plus(axis)[i] as usize] + u[self.nb.minus(axis)[i] as usize];
        }
        s * self.inv_dx2
    }

    /// Right-hand side contribution of a single term at grid index `i`.
    fn term_at(&self, kind: TermKind, u: &[f64], prev: &[f64], i: usize) -> f64 {
        match kind {
            TermKind::Source => self.source.map_or(0.0, |a| a[i]),
            TermKind::Linear => self.linear.map_or(0.0, |a| a[i] * u[i]),
            TermKind::Advection => self
                .advection
                .iter()
                .enumerate()
                .map(|(axis, a)| a[i] * self.upwind(u, i, axis, a[i]))
                .sum(),
            TermKind::Diffusion => self.diffusion.map_or(0.0, |a| a[i] * self.laplacian(u, i)),
            TermKind::Reaction => self.reaction.map_or(0.0, |b| b[i] * u[i] * (1.0 - u[i])),
            TermKind::Burgers => self.burgers.map_or(0.0, |b| {
                let v = b[i] * prev[i];
                v * (0..self.mesh.dim())
                    .map(|axis| self.upwind(u, i, axis, v))
                    .sum::<f64>()
            }),
        }
    }

    /// Writes `U_{k+1}` into `out`. On a non-finite result returns the offending
    /// term (or `None` when every term is finite but the sum overflows) and index.
    pub fn step(
        &self,
        u: &[f64],
        prev: &[f64],
        out: &mut [f64],
    ) -> std::result::Result<(), (Option<TermKind>, usize)> {
        let dim = self.mesh.dim();
        out.copy_from_slice(u);
        // Accumulate c_t * rhs term by term; inactive terms are skipped entirely.
        if let Some(a) = self.source {
            for (o, &a) in out.iter_mut().zip(a) {
                *o += self.dt * a;
            }
        }
        if let Some(a) = self.linear {
            for i in 0..u.len() {
                out[i] += self.dt * (a[i] * u[i]);
            }
        }
        for (axis, a) in self.advection.iter().enumerate() {
            for i in 0..u.len() {
                out[i] += self.dt * (a[i] * self.upwind(u, i, axis, a[i]));
            }
        }
        if let Some(a) = self.diffusion {
            match dim {
                1 => {
                    let (p, m) = (self.nb.plus(0), self.nb.minus(0));
                    for i in 0..u.len() {
                        let lap = (u[p[i] as usize] + u[m[i] as usize] - 2.0 * u[i]) * self.inv_dx2;
                        out[i] += self.dt * (a[i] * lap);
                    }
                }
                2 => {
                    let (p0, m0) = (self.nb.plus(0), self.nb.minus(0));
                    let (p1, m1) = (self.nb.plus(1), self.nb.minus(1));
                    for i in 0..u.len() {
                        let lap = (u[p0[i] as usize]
                            + u[m0[i] as usize]
                            + u[p1[i] as usize]
                            + u[m1[i] as usize]
                            - 4.0 * u[i])
                            * self.inv_dx2;
                        out[i] += self.dt * (a[i] * lap);
                    }
                }
                _ => {
                    for i in 0..u.len() {
                        out[i] += self.dt * (a[i] * self.laplacian(u, i));
                    }
                }
            }
        }
        if let Some(b) = self.reaction {
            for i in 0..u.len() {
                out[i] += self.dt * (b[i] * u[i] * (1.0 - u[i]));
            }
        }
        if let Some(b) = self.burgers {
            for i in 0..u.len() {
                let v = b[i] * prev[i];
                let mut g = 0.0;
                for axis in 0..dim {
                    g += self.upwind(u, i, axis, v);
                }
                out[i] += self.dt * (v * g);
            }
        }
        match out.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => {
                let culprit = TermKind::ALL
                    .into_iter()
                    .find(|&k| !self.term_at(k, u, prev, i).is_finite());
                Err((culprit, i))
            }
        }
    }
}

/// Single forward-Euler step `U_k -> U_{k+1}`; `u_km1` feeds the Burgers velocity.
pub fn euler_step(u_k: &Field, u_km1: &Field, coeffs: &Coefficients, dt: f64) -> Result<Field> {
    let mesh = *u_k.mesh();
    if *u_km1.mesh() != mesh {
        return Err(Error::Shape(
            "current and previous states live on different meshes".into(),
        ));
    }
    let nb = Neighbors::new(&mesh);
    let kernel = Kernel::new(coeffs, mesh, &nb, dt)?;
    let mut out = vec![0.0; mesh.len()];
    kernel
        .step(u_k.values(), u_km1.values(), &mut out)
        .map_err(|(term, index)| Error::Instability {
            term,
            step: 0,
            index,
        })?;
    Ok(Field::from_vec_unchecked(mesh, out))
}

/// Rolls the update forward, recording a slice every `steps_per_slice` steps.
///
/// At step 0 the previous state is taken to be `U_0`.
pub fn solve(u0: &Field, coeffs: &Coefficients, grid: &Grid) -> Result<Trajectory> {
    let mesh = grid.mesh;
    if *u0.mesh() != mesh {
        return Err(Error::Shape(format!(
            "initial condition lives on {:?}, grid is {:?}",
            u0.mesh(),
            mesh
        )));
    }
    let nb = Neighbors::new(&mesh);
    let kernel = Kernel::new(coeffs, mesh, &nb, grid.dt)?;
    let mut prev = u0.values().to_vec();
    let mut cur = prev.clone();
    let mut next = vec![0.0; mesh.len()];
    let mut slices = Vec::with_capacity(grid.t_slices + 1);
    slices.push(u0.clone());
    for k in 0..grid.total_steps() {
        kernel
            .step(&cur, &prev, &mut next)
            .map_err(|(term, index)| Error::Instability {
                term,
                step: k,
                index,
            })?;
        std::mem::swap(&mut prev, &mut cur);
        std::mem::swap(&mut cur, &mut next);
        if (k + 1) % grid.steps_per_slice == 0 {
            slices.push(Field::from_vec_unchecked(mesh, cur.clone()));
        }
    }
    Trajectory::new(slices)
}
