//! Reverse-mode gradient of the trajectory loss through the unrolled Euler steps.
//!
//! The forward pass records checkpoints `(U_{c-1}, U_c)` every `stride` steps.
//! The backward pass walks segments from last to first, recomputes the states
//! of each segment from its checkpoint, and propagates the adjoint
//! `λ_k = ∂L/∂U_k` through each step in reverse. Arithmetic order is fixed, so
//! recomputed states are bit-identical to the forward pass.

use crate::error::{Error, Result};
use crate::grid::{grid_dist_sq, Field, Grid, Neighbors, Trajectory};
use crate::solver::{CoeffSet, Coefficients, Kernel, TermKind};

/// Gradient of the loss with respect to every raw parameter block of a [`CoeffSet`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    slots: Vec<(TermKind, usize)>,
    blocks: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(coeffs: &CoeffSet) -> Self {
        Self {
            slots: coeffs.slots(),
            blocks: coeffs.blocks().iter().map(|b| vec![0.0; b.len()]).collect(),
        }
    }

    pub fn blocks(&self) -> &[Vec<f64>] {
        &self.blocks
    }

    /// Gradient blocks of one term (one per component).
    pub fn term(&self, kind: TermKind) -> Option<Vec<&[f64]>> {
        let found: Vec<&[f64]> = self
            .slots
            .iter()
            .zip(&self.blocks)
            .filter(|((k, _), _)| *k == kind)
            .map(|(_, b)| b.as_slice())
            .collect();
        (!found.is_empty()).then_some(found)
    }

    pub fn kinds(&self) -> Vec<TermKind> {
        let mut k: Vec<TermKind> = self.slots.iter().map(|s| s.0).collect();
        k.dedup();
        k
    }

    /// `self += other`, element by element in storage order.
    pub fn accumulate(&mut self, other: &Gradients) {
        for (a, b) in self.blocks.iter_mut().zip(&other.blocks) {
            for (x, y) in a.iter_mut().zip(b) {
                *x += y;
            }
        }
    }

    pub fn scale(&mut self, alpha: f64) {
        for x in self.blocks.iter_mut().flatten() {
            *x *= alpha;
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.blocks
            .iter()
            .flatten()
            .fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

/// Forward checkpoints sufficient to replay any segment of the rollout.
pub struct Tape {
    stride: usize,
    total_steps: usize,
    /// `(U_{c-1}, U_c)` for `c = 0, stride, 2 stride, ...`; `U_{-1} := U_0`.
    checkpoints: Vec<(Vec<f64>, Vec<f64>)>,
}

impl Tape {
    pub fn stride(&self) -> usize {
        self.stride
    }

    /// Runs the rollout, keeping checkpoints and the stored slices.
    pub fn record(
        kernel: &Kernel<'_>,
        u0: &[f64],
        grid: &Grid,
        stride: usize,
    ) -> Result<(Tape, Vec<Vec<f64>>)> {
        if stride == 0 {
            return Err(Error::validation("checkpoint_stride", "must be at least 1"));
        }
        let total = grid.total_steps();
        let mut prev = u0.to_vec();
        let mut cur = u0.to_vec();
        let mut next = vec![0.0; u0.len()];
        let mut checkpoints = Vec::with_capacity(total / stride + 1);
        let mut slices = Vec::with_capacity(grid.t_slices + 1);
        slices.push(u0.to_vec());
        for k in 0..total {
            if k % stride == 0 {
                checkpoints.push((prev.clone(), cur.clone()));
            }
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
                slices.push(cur.clone());
            }
        }
        Ok((
            Tape {
                stride,
                total_steps: total,
                checkpoints,
            },
            slices,
        ))
    }

    /// States `U_{c-1}, U_c, ..., U_e` of segment `j` (with `c = j·stride`, `e = min(c + stride, K)`).
    fn replay(&self, kernel: &Kernel<'_>, j: usize) -> Result<Vec<Vec<f64>>> {
        let c = j * self.stride;
        let e = (c + self.stride).min(self.total_steps);
        let (prev, cur) = &self.checkpoints[j];
        let mut states = Vec::with_capacity(e - c + 2);
        states.push(prev.clone());
        states.push(cur.clone());
        for k in c..e {
            let mut next = vec![0.0; cur.len()];
            let t = states.len();
            kernel
                .step(&states[t - 1], &states[t - 2], &mut next)
                .map_err(|(term, index)| Error::Instability {
                    term,
                    step: k,
                    index,
                })?;
            states.push(next);
        }
        Ok(states)
    }
}

/// Mean over slices `1..=N_T` of `‖pred_k - target_k‖_X²`. Slice 0 is the shared input.
pub fn traj_loss(pred: &Trajectory, target: &Trajectory) -> Result<f64> {
    pred.check_compatible(target)?;
    let nt = pred.len() - 1;
    if nt == 0 {
        return Err(Error::Shape("trajectories hold no output slices".into()));
    }
    let mesh = *pred.mesh();
    let total = pred.slices()[1..]
        .iter()
        .zip(&target.slices()[1..])
        .fold(0.0, |acc, (p, t)| {
            acc + grid_dist_sq(&mesh, p.values(), t.values())
        });
    Ok(total / nt as f64)
}

/// Where each term's coefficient gradient lives in the block list.
struct BlockIndex {
    source: Option<usize>,
    linear: Option<usize>,
    advection: Option<usize>,
    diffusion: Option<usize>,
    reaction: Option<usize>,
    burgers: Option<usize>,
}

impl BlockIndex {
    fn new(coeffs: &CoeffSet) -> Self {
        let slots = coeffs.slots();
        let first = |kind: TermKind| slots.iter().position(|s| s.0 == kind);
        Self {
            source: first(TermKind::Source),
            linear: first(TermKind::Linear),
            advection: first(TermKind::Advection),
            diffusion: first(TermKind::Diffusion),
            reaction: first(TermKind::Reaction),
            burgers: first(TermKind::Burgers),
        }
    }
}

/// Adds the contributions of step `k` (`U_k -> U_{k+1}`) to the adjoints and coefficient gradients.
#[allow(clippy::too_many_arguments)]
fn backward_step(
    kernel: &Kernel<'_>,
    idx: &BlockIndex,
    u: &[f64],
    w: &[f64],
    lam_next: &[f64],
    lam_cur: &mut [f64],
    lam_prev: &mut [f64],
    grads: &mut [Vec<f64>],
) {
    let dim = kernel.mesh().dim();
    let nb = kernel.neighbors();
    let dt = kernel.dt;
    let inv_dx = kernel.inv_dx;
    let inv_dx2 = kernel.inv_dx2;
    for (l, &ln) in lam_cur.iter_mut().zip(lam_next) {
        *l += ln;
    }
    if let (Some(_), Some(b)) = (kernel.source, idx.source) {
        for (gr, &ln) in grads[b].iter_mut().zip(lam_next) {
            *gr += dt * ln;
        }
    }
    if let (Some(a), Some(b)) = (kernel.linear, idx.linear) {
        for i in 0..u.len() {
            let g = dt * lam_next[i];
            grads[b][i] += g * u[i];
            lam_cur[i] += g * a[i];
        }
    }
    if let Some(b0) = idx.advection {
        for (axis, a) in kernel.advection.iter().enumerate() {
            let (plus, minus) = (nb.plus(axis), nb.minus(axis));
            let gb = &mut grads[b0 + axis];
            for i in 0..u.len() {
                let g = dt * lam_next[i];
                let c = g * a[i] * inv_dx;
                if a[i] >= 0.0 {
                    let p = plus[i] as usize;
                    gb[i] += g * (u[p] - u[i]) * inv_dx;
                    lam_cur[p] += c;
                    lam_cur[i] -= c;
                } else {
                    let m = minus[i] as usize;
                    gb[i] += g * (u[i] - u[m]) * inv_dx;
                    lam_cur[i] += c;
                    lam_cur[m] -= c;
                }
            }
        }
    }
    if let (Some(a), Some(b)) = (kernel.diffusion, idx.diffusion) {
        let centre = 2.0 * dim as f64;
        for i in 0..u.len() {
            let g = dt * lam_next[i];
            grads[b][i] += g * kernel.laplacian(u, i);
            let c = g * a[i] * inv_dx2;
            for axis in 0..dim {
                lam_cur[nb.plus(axis)[i] as usize] += c;
                lam_cur[nb.minus(axis)[i] as usize] += c;
            }
            lam_cur[i] -= centre * c;
        }
    }
    if let (Some(r), Some(b)) = (kernel.reaction, idx.reaction) {
        for i in 0..u.len() {
            let g = dt * lam_next[i];
            grads[b][i] += g * u[i] * (1.0 - u[i]);
            lam_cur[i] += g * r[i] * (1.0 - 2.0 * u[i]);
        }
    }
    if let (Some(bc), Some(b)) = (kernel.burgers, idx.burgers) {
        for i in 0..u.len() {
            let g = dt * lam_next[i];
            let v = bc[i] * w[i];
            let mut s = 0.0;
            for axis in 0..dim {
                s += kernel.upwind(u, i, axis, v);
            }
            grads[b][i] += g * w[i] * s;
            lam_prev[i] += g * bc[i] * s;
            let c = g * v * inv_dx;
            for axis in 0..dim {
                if v >= 0.0 {
                    lam_cur[nb.plus(axis)[i] as usize] += c;
                    lam_cur[i] -= c;
                } else {
                    lam_cur[i] += c;
                    lam_cur[nb.minus(axis)[i] as usize] -= c;
                }
            }
        }
    }
}

/// Loss of one sample and its exact gradient with respect to every raw `θ` block.
///
/// `stride` sets the checkpoint spacing; 1 stores every state.
pub fn grad_theta(
    u0: &Field,
    target: &Trajectory,
    coeffs: &CoeffSet,
    grid: &Grid,
    stride: usize,
) -> Result<(f64, Gradients)> {
    let mesh = grid.mesh;
    if *coeffs.mesh() != mesh || *u0.mesh() != mesh || *target.mesh() != mesh {
        return Err(Error::Shape(
            "initial condition, target and coefficients must share the grid".into(),
        ));
    }
    if target.len() != grid.t_slices + 1 {
        return Err(Error::Shape(format!(
            "target has {} slices, grid produces {}",
            target.len(),
            grid.t_slices + 1
        )));
    }
    let realized: Coefficients = coeffs.realize();
    let nb = Neighbors::new(&mesh);
    let kernel = Kernel::new(&realized, mesh, &nb, grid.dt)?;
    let (tape, slices) = Tape::record(&kernel, u0.values(), grid, stride)?;

    let nt = grid.t_slices as f64;
    let cell = mesh.dx().powi(mesh.dim() as i32);
    let mut loss = 0.0;
    for (p, t) in slices[1..].iter().zip(&target.slices()[1..]) {
        loss += grid_dist_sq(&mesh, p, t.values());
    }
    loss /= nt;

    let total = grid.total_steps();
    let spp = grid.steps_per_slice;
    let inject = |k: usize, lam: &mut [f64]| {
        if k >= 1 && k.is_multiple_of(spp) {
            let s = k / spp;
            let scale = 2.0 * cell / nt;
            for ((l, p), t) in lam
                .iter_mut()
                .zip(&slices[s])
                .zip(target.slices()[s].values())
            {
                *l += scale * (p - t);
            }
        }
    };

    let n = mesh.len();
    let idx = BlockIndex::new(coeffs);
    let mut grads: Vec<Vec<f64>> = coeffs.blocks().iter().map(|b| vec![0.0; b.len()]).collect();
    let mut lam_next = vec![0.0; n];
    inject(total, &mut lam_next);
    let mut lam_cur = vec![0.0; n];
    inject(total - 1, &mut lam_cur);
    let mut lam_prev = vec![0.0; n];
    if total >= 2 {
        inject(total - 2, &mut lam_prev);
    }

    let segments = tape.checkpoints.len();
    for j in (0..segments).rev() {
        let states = tape.replay(&kernel, j)?;
        let c = j * tape.stride;
        let e = (c + tape.stride).min(total);
        for k in (c..e).rev() {
            // states[t] holds U_{c-1+t}
            let u = &states[k - c + 1];
            let w = &states[k - c];
            backward_step(
                &kernel,
                &idx,
                u,
                w,
                &lam_next,
                &mut lam_cur,
                &mut lam_prev,
                &mut grads,
            );
            if k == 0 {
                // U_{-1} is U_0 itself.
                for (l, p) in lam_cur.iter_mut().zip(&lam_prev) {
                    *l += p;
                }
            }
            std::mem::swap(&mut lam_next, &mut lam_cur);
            std::mem::swap(&mut lam_cur, &mut lam_prev);
            lam_prev.iter_mut().for_each(|v| *v = 0.0);
            if k >= 2 {
                inject(k - 2, &mut lam_prev);
            }
        }
    }

    for (g, d) in grads.iter_mut().zip(coeffs.realize_derivative()) {
        for (x, y) in g.iter_mut().zip(d) {
            *x *= y;
        }
    }
    Ok((
        loss,
        Gradients {
            slots: coeffs.slots(),
            blocks: grads,
        },
    ))
}
