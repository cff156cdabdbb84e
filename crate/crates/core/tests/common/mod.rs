//! Shared oracles for the integration tests.
#![allow(dead_code)]

pub mod dd;

use dd::Dd;
use deepfdm::grid::{Field, Grid, Mesh, Trajectory};
use deepfdm::learn::grad_theta;
use deepfdm::solver::{default_specs, solve, CoeffSet, TermKind};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Forward solve and trajectory loss in double-double arithmetic, written
/// independently of the library kernel. `bump` perturbs one raw parameter
/// `(block, index)` by an exact offset before realization.
pub fn dd_loss(
    coeffs: &CoeffSet,
    bump: Option<(usize, usize, Dd)>,
    u0: &Field,
    target: &Trajectory,
    grid: &Grid,
) -> Dd {
    let mesh = grid.mesh;
    let len = mesh.len();
    let slots = coeffs.slots();
    // Realized coefficient blocks, lo + (hi - lo) * sigmoid(theta).
    let mut real: Vec<(TermKind, usize, Vec<Dd>)> = Vec::new();
    for (b, &(kind, axis)) in slots.iter().enumerate() {
        let spec = coeffs.spec(kind).unwrap();
        let (lo, hi) = (Dd::from(spec.lo), Dd::from(spec.hi));
        let vals = coeffs.blocks()[b]
            .iter()
            .enumerate()
            .map(|(i, &t)| {
                let mut t = Dd::from(t);
                if let Some((bb, ii, h)) = bump {
                    if bb == b && ii == i {
                        t = t + h;
                    }
                }
                lo + (hi - lo) * t.sigmoid()
            })
            .collect();
        real.push((kind, axis, vals));
    }
    let find =
        |k: TermKind, axis: usize| real.iter().find(|r| r.0 == k && r.1 == axis).map(|r| &r.2);

    let dt = Dd::from(grid.dt);
    let inv_dx = Dd::from(mesh.n() as f64);
    let upwind = |u: &[Dd], i: usize, axis: usize, v: Dd| -> Dd {
        if v.hi >= 0.0 {
            (u[mesh.shifted(i, axis, 1)] - u[i]) * inv_dx
        } else {
            (u[i] - u[mesh.shifted(i, axis, -1)]) * inv_dx
        }
    };

    let mut u: Vec<Dd> = u0.values().iter().map(|&v| Dd::from(v)).collect();
    let mut prev = u.clone();
    let cell = Dd::from(mesh.dx().powi(mesh.dim() as i32));
    let mut loss = Dd::from(0.0);
    for k in 0..grid.total_steps() {
        let mut next = u.clone();
        for i in 0..len {
            let mut rhs = Dd::from(0.0);
            if let Some(a) = find(TermKind::Source, 0) {
                rhs = rhs + a[i];
            }
            if let Some(a) = find(TermKind::Linear, 0) {
                rhs = rhs + a[i] * u[i];
            }
            for axis in 0..mesh.dim() {
                if let Some(a) = find(TermKind::Advection, axis) {
                    rhs = rhs + a[i] * upwind(&u, i, axis, a[i]);
                }
            }
            if let Some(a) = find(TermKind::Diffusion, 0) {
                let mut lap = u[i] * Dd::from(-2.0 * mesh.dim() as f64);
                for axis in 0..mesh.dim() {
                    lap = lap + u[mesh.shifted(i, axis, 1)] + u[mesh.shifted(i, axis, -1)];
                }
                rhs = rhs + a[i] * lap * inv_dx * inv_dx;
            }
            if let Some(b) = find(TermKind::Reaction, 0) {
                rhs = rhs + b[i] * u[i] * (Dd::from(1.0) - u[i]);
            }
            if let Some(b) = find(TermKind::Burgers, 0) {
                let v = b[i] * prev[i];
                let mut g = Dd::from(0.0);
                for axis in 0..mesh.dim() {
                    g = g + upwind(&u, i, axis, v);
                }
                rhs = rhs + v * g;
            }
            next[i] = u[i] + dt * rhs;
        }
        prev = std::mem::replace(&mut u, next);
        if (k + 1) % grid.steps_per_slice == 0 {
            let s = (k + 1) / grid.steps_per_slice;
            let t = target.slices()[s].values();
            let mut acc = Dd::from(0.0);
            for i in 0..len {
                let d = u[i] - Dd::from(t[i]);
                acc = acc + d * d;
            }
            loss = loss + acc * cell;
        }
    }
    loss / Dd::from(grid.t_slices as f64)
}

/// Central difference of the double-double loss in raw parameter `(block, index)`.
pub fn dd_central_difference(
    coeffs: &CoeffSet,
    block: usize,
    index: usize,
    h: f64,
    u0: &Field,
    target: &Trajectory,
    grid: &Grid,
) -> f64 {
    let hp = Dd::from(h);
    let plus = dd_loss(coeffs, Some((block, index, hp)), u0, target, grid);
    let minus = dd_loss(coeffs, Some((block, index, -hp)), u0, target, grid);
    ((plus - minus) / (hp + hp)).to_f64()
}

pub struct Instance {
    pub grid: Grid,
    pub coeffs: CoeffSet,
    pub u0: Field,
    pub target: Trajectory,
}

/// Random gradient-check problem: raw parameters uniform in (-2, 2), a target
/// produced by another random parameter set, a smooth initial state in (0.1, 0.9).
pub fn random_instance(seed: u64, dim: usize, n: usize, dt: f64, kinds: &[TermKind]) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let grid = Grid::new(dim, n, dt, 5, 1).unwrap();
    let specs = default_specs(&grid, kinds);
    let mut draw = |specs| {
        let mut set = CoeffSet::constant(grid.mesh, specs, 0.0).unwrap();
        for t in set.blocks_mut().iter_mut().flatten() {
            *t = rng.random_range(-2.0..2.0);
        }
        set
    };
    let coeffs = draw(specs.clone());
    let other = draw(specs);
    let ph: Vec<f64> = (0..3)
        .map(|_| rng.random_range(0.0..std::f64::consts::TAU))
        .collect();
    let tau = std::f64::consts::TAU;
    let u0 = Field::from_fn(grid.mesh, |x| {
        let y = x.get(1).copied().unwrap_or(0.0);
        0.5 + 0.2 * (tau * x[0] + ph[0]).sin()
            + 0.1 * (2.0 * tau * x[0] + ph[1]).cos()
            + 0.08 * (tau * y + ph[2]).sin()
    })
    .unwrap();
    let target = solve(&u0, &other.realize(), &grid).unwrap();
    Instance {
        grid,
        coeffs,
        u0,
        target,
    }
}

/// Per-term worst relative error `|ad - fd| / max(|ad|, |fd|)` and component count.
pub fn gradient_errors(inst: &Instance, h: f64) -> Vec<(TermKind, f64, usize)> {
    let (_, grads) = grad_theta(&inst.u0, &inst.target, &inst.coeffs, &inst.grid, 1).unwrap();
    let mut out: Vec<(TermKind, f64, usize)> = Vec::new();
    for (b, &(kind, _)) in inst.coeffs.slots().iter().enumerate() {
        for i in 0..inst.coeffs.blocks()[b].len() {
            let fd =
                dd_central_difference(&inst.coeffs, b, i, h, &inst.u0, &inst.target, &inst.grid);
            let ad = grads.blocks()[b][i];
            let scale = ad.abs().max(fd.abs());
            let rel = if scale == 0.0 {
                0.0
            } else {
                (ad - fd).abs() / scale
            };
            match out.iter_mut().find(|e| e.0 == kind) {
                Some(e) => {
                    e.1 = e.1.max(rel);
                    e.2 += 1;
                }
                None => out.push((kind, rel, 1)),
            }
        }
    }
    out
}

/// Merges per-term results from several instances.
pub fn merge_errors(into: &mut Vec<(TermKind, f64, usize)>, more: Vec<(TermKind, f64, usize)>) {
    for (k, rel, count) in more {
        match into.iter_mut().find(|e| e.0 == k) {
            Some(e) => {
                e.1 = e.1.max(rel);
                e.2 += count;
            }
            None => into.push((k, rel, count)),
        }
    }
}

pub fn mesh(dim: usize, n: usize) -> Mesh {
    Mesh::new(dim, n).unwrap()
}
