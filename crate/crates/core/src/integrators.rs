//! Time integration: classical RK4 on the semi-discrete system with a
//! stability-limited step, and backward Euler solved by a Picard iteration
//! over frozen-coefficient tridiagonal systems.

use std::ops::{ControlFlow, Range};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scheme::{negative_part, occupied_range, positive_part, Model, Workspace};
use crate::state::State;

/// Default safety factor applied to the explicit stability bound.
pub const DEFAULT_CFL_SAFETY: f64 = 0.4;
/// Default max-norm tolerance of the fixed point iteration.
pub const DEFAULT_FP_TOL: f64 = 1e-10;
/// Default iteration cap of the fixed point iteration.
pub const DEFAULT_FP_MAX_ITER: usize = 200;

/// Reporting schedule `t_k = k Δt` for `k = 1..=M`, `M = ⌈T/Δt⌉`, the last
/// report landing exactly on `T`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    dt: f64,
    t_final: f64,
    reports: usize,
}

impl TimeGrid {
    pub fn new(dt: f64, t_final: f64) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::InvalidParameter(format!("reporting interval must be > 0, got {dt}")));
        }
        if !(t_final > 0.0 && t_final.is_finite()) {
            return Err(Error::InvalidParameter(format!("time horizon must be > 0, got {t_final}")));
        }
        let ratio = t_final / dt;
        // T = 2 and Δt = 0.05 should give 40 reports, not 41.
        let nearest = ratio.round();
        let reports = if (ratio - nearest).abs() <= 1e-9 * ratio {
            nearest
        } else {
            ratio.ceil()
        };
        Ok(Self {
            dt,
            t_final,
            reports: (reports as usize).max(1),
        })
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn t_final(&self) -> f64 {
        self.t_final
    }

    /// `M`.
    pub fn reports(&self) -> usize {
        self.reports
    }

    /// `t_k`, with `t_0 = 0` and `t_M = T`.
    pub fn time(&self, k: usize) -> f64 {
        if k >= self.reports {
            self.t_final
        } else {
            k as f64 * self.dt
        }
    }

    pub fn times(&self) -> Vec<f64> {
        (0..=self.reports).map(|k| self.time(k)).collect()
    }
}

/// Outcome of one implicit step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FixedPointReport {
    pub iterations: usize,
    /// Max-norm change between the last two iterates.
    pub residual: f64,
    pub converged: bool,
    /// `16 (m_1 + m_2) Δt / (ξ h)³`.
    pub cfl_ratio: f64,
    pub uniqueness_guaranteed: bool,
    pub residual_history: Vec<f64>,
    /// Residuals never increased after the first iteration.
    pub monotone: bool,
}

/// Left-hand side of the uniqueness condition for the implicit step.
pub fn check_cfl(dt: f64, total_mass: f64, xi: f64, h: f64) -> f64 {
    16.0 * total_mass * dt / (xi * h).powi(3)
}

/// Solves the tridiagonal system with sub-diagonal `lower` (`lower[0]`
/// unused), diagonal `diag` and super-diagonal `upper` (`upper[n-1]`
/// unused) by the Thomas algorithm.
pub fn tridiagonal_solve(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64]) -> Result<Vec<f64>> {
    let n = diag.len();
    for len in [lower.len(), upper.len(), rhs.len()] {
        if len != n {
            return Err(Error::LengthMismatch { expected: n, got: len });
        }
    }
    let mut x = vec![0.0; n];
    let mut work = vec![0.0; n];
    thomas(lower, diag, upper, rhs, &mut work, &mut x)?;
    Ok(x)
}

fn thomas(lower: &[f64], diag: &[f64], upper: &[f64], rhs: &[f64], c: &mut [f64], x: &mut [f64]) -> Result<()> {
    let n = diag.len();
    let mut pivot = diag[0];
    if pivot == 0.0 || !pivot.is_finite() {
        return Err(Error::SingularSystem { row: 0 });
    }
    c[0] = if n > 1 { upper[0] / pivot } else { 0.0 };
    x[0] = rhs[0] / pivot;
    for i in 1..n {
        pivot = diag[i] - lower[i] * c[i - 1];
        if pivot == 0.0 || !pivot.is_finite() {
            return Err(Error::SingularSystem { row: i });
        }
        c[i] = if i + 1 < n { upper[i] / pivot } else { 0.0 };
        x[i] = (rhs[i] - lower[i] * x[i - 1]) / pivot;
    }
    for i in (0..n - 1).rev() {
        x[i] -= c[i] * x[i + 1];
    }
    Ok(())
}

/// Explicit step bound:
/// `safety · min[Δx²_{i+1/2} / (2ε max(ρ, η) + 2ν max σ), Δx_{i+1/2} / (ν|dU| + |dV|)]`,
/// over the interfaces next to occupied cells (nothing moves through the
/// others). Unbounded (`f64::INFINITY`) when nothing moves at all.
pub fn stable_substep(state: &State, model: &Model, safety: f64) -> Result<f64> {
    state.check_mesh(model.mesh())?;
    let mut ws = model.workspace();
    let range = occupied_range(&state.rho, &state.eta, 1);
    model.potentials_range(&state.rho, &state.eta, &mut ws, range.clone())?;
    Ok(stable_dt(&state.rho, &state.eta, &ws, model, safety, range))
}

fn stable_dt(rho: &[f64], eta: &[f64], ws: &Workspace, model: &Model, safety: f64, range: Range<usize>) -> f64 {
    let (eps, nu) = (model.eps(), model.nu());
    let inv = model.mesh().inv_half_widths();
    let (lo, hi) = (range.start, range.end);
    let (r, e) = (&rho[lo..hi], &eta[lo..hi]);
    let mut max_single: f64 = 0.0;
    let mut max_sigma: f64 = 0.0;
    for (&r, &e) in r.iter().zip(e) {
        max_single = max_single.max(r.max(e));
        max_sigma = max_sigma.max(r + e);
    }
    let diffusivity = 2.0 * eps * max_single + 2.0 * nu * max_sigma;
    let m = hi.saturating_sub(lo + 1);
    let inv = &inv[lo..lo + m];
    let (dv1, dv2) = (&ws.fields.dv1[lo..lo + m], &ws.fields.dv2[lo..lo + m]);
    let (r0, r1, e0, e1) = (&r[..m], &r[1..=m], &e[..m], &e[1..=m]);
    let mut max_rate: f64 = 0.0;
    let mut max_inv2: f64 = 0.0;
    for i in 0..m {
        let du = ((r0[i] + e0[i]) - (r1[i] + e1[i])) * inv[i];
        let speed = nu * du.abs() + dv1[i].abs().max(dv2[i].abs());
        max_rate = max_rate.max(speed * inv[i]);
        max_inv2 = max_inv2.max(inv[i] * inv[i]);
    }
    let advective = if max_rate > 0.0 { 1.0 / max_rate } else { f64::INFINITY };
    let diffusive = if diffusivity * max_inv2 > 0.0 {
        1.0 / (diffusivity * max_inv2)
    } else {
        f64::INFINITY
    };
    safety * advective.min(diffusive)
}

/// Cells beyond the support an RK4 step may touch: each stage widens the
/// support by one cell, and the range needs an empty cell at each end.
const RK4_PAD: usize = 5;

/// Reusable stage buffers for RK4.
#[derive(Debug, Clone)]
pub struct Rk4Stepper {
    ws: Workspace,
    k: [Vec<f64>; 8],
    stage_rho: Vec<f64>,
    stage_eta: Vec<f64>,
    range: Range<usize>,
    /// Smallest cell value produced by any accepted step.
    pub min_value: f64,
}

impl Rk4Stepper {
    pub fn new(model: &Model) -> Self {
        let n = model.mesh().len();
        Self {
            ws: model.workspace(),
            k: std::array::from_fn(|_| vec![0.0; n]),
            stage_rho: vec![0.0; n],
            stage_eta: vec![0.0; n],
            range: 0..n,
            min_value: f64::INFINITY,
        }
    }

    /// One step of size `dt`.
    pub fn step(&mut self, model: &Model, state: &mut State, dt: f64) -> Result<()> {
        self.first_stage(model, state)?;
        self.finish(model, state, dt)
    }

    /// One step of size `min(stable_substep, dt_max)`; returns the size
    /// used. The stability bound is evaluated from the first stage.
    pub fn step_adaptive(&mut self, model: &Model, state: &mut State, dt_max: f64, safety: f64) -> Result<f64> {
        self.first_stage(model, state)?;
        let dt = stable_dt(&state.rho, &state.eta, &self.ws, model, safety, self.range.clone()).min(dt_max);
        self.finish(model, state, dt)?;
        Ok(dt)
    }

    fn first_stage(&mut self, model: &Model, state: &State) -> Result<()> {
        // Work only where mass can be during this step; elsewhere every
        // flux vanishes identically.
        self.range = occupied_range(&state.rho, &state.eta, RK4_PAD);
        let [k1r, k1e, ..] = &mut self.k;
        model.evaluate_range(&state.rho, &state.eta, &mut self.ws, k1r, k1e, self.range.clone())
    }

    fn finish(&mut self, model: &Model, state: &mut State, dt: f64) -> Result<()> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be > 0, got {dt}")));
        }
        let range = self.range.clone();
        let [k1r, k1e, k2r, k2e, k3r, k3e, k4r, k4e] = &mut self.k;
        let (sr, se) = (&mut self.stage_rho, &mut self.stage_eta);
        let half = 0.5 * dt;

        stage(sr, se, state, half, k1r, k1e, range.clone());
        model.evaluate_range(sr, se, &mut self.ws, k2r, k2e, range.clone())?;
        stage(sr, se, state, half, k2r, k2e, range.clone());
        model.evaluate_range(sr, se, &mut self.ws, k3r, k3e, range.clone())?;
        stage(sr, se, state, dt, k3r, k3e, range.clone());
        model.evaluate_range(sr, se, &mut self.ws, k4r, k4e, range.clone())?;

        let sixth = dt / 6.0;
        let mut finite = true;
        let mut min_value = self.min_value;
        for (y, [k1, k2, k3, k4]) in [
            (&mut state.rho, [&*k1r, &*k2r, &*k3r, &*k4r]),
            (&mut state.eta, [&*k1e, &*k2e, &*k3e, &*k4e]),
        ] {
            let y = &mut y[range.clone()];
            let m = y.len();
            let (k1, k2, k3, k4) = (&k1[range.clone()], &k2[range.clone()], &k3[range.clone()], &k4[range.clone()]);
            let (k1, k2, k3, k4) = (&k1[..m], &k2[..m], &k3[..m], &k4[..m]);
            let mut lowest = f64::INFINITY;
            let mut total = 0.0;
            for i in 0..m {
                let v = y[i] + sixth * (k1[i] + 2.0 * (k2[i] + k3[i]) + k4[i]);
                lowest = lowest.min(v);
                total += v;
                y[i] = v;
            }
            // NaN or ±∞ anywhere poisons the sum.
            finite &= total.is_finite();
            min_value = min_value.min(lowest);
        }
        if !finite {
            return Err(Error::BlowUp { time: state.time });
        }
        self.min_value = min_value;
        state.time += dt;
        Ok(())
    }
}

/// `s = y + a k` on `range` for both species.
fn stage(
    sr: &mut [f64],
    se: &mut [f64],
    state: &State,
    a: f64,
    kr: &[f64],
    ke: &[f64],
    range: Range<usize>,
) {
    for (out, y, k) in [(sr, &state.rho, kr), (se, &state.eta, ke)] {
        let out = &mut out[range.clone()];
        let (y, k) = (&y[range.clone()], &k[range.clone()]);
        for ((o, &y), &k) in out.iter_mut().zip(y).zip(k) {
            *o = y + a * k;
        }
    }
}

/// Classical four-stage Runge-Kutta step.
pub fn step_rk4(mut state: State, dt: f64, model: &Model) -> Result<State> {
    state.check_mesh(model.mesh())?;
    Rk4Stepper::new(model).step(model, &mut state, dt)?;
    Ok(state)
}

/// Buffers for the implicit step.
#[derive(Debug, Clone)]
pub struct ImplicitStepper {
    ws: Workspace,
    lower: Vec<f64>,
    diag: Vec<f64>,
    upper: Vec<f64>,
    rhs: Vec<f64>,
    work: Vec<f64>,
    iterate: [Vec<f64>; 2],
    next: [Vec<f64>; 2],
}

impl ImplicitStepper {
    pub fn new(model: &Model) -> Self {
        let n = model.mesh().len();
        let z = || vec![0.0; n];
        Self {
            ws: model.workspace(),
            lower: z(),
            diag: z(),
            upper: z(),
            rhs: z(),
            work: z(),
            iterate: [z(), z()],
            next: [z(), z()],
        }
    }

    /// Backward Euler step. The interaction gradients stay at the old time
    /// level; cross-diffusion gradients and diffusion viscosities are
    /// frozen at the current iterate and refreshed every iteration.
    pub fn step(
        &mut self,
        model: &Model,
        state: &mut State,
        dt: f64,
        tol: f64,
        max_iter: usize,
    ) -> Result<FixedPointReport> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be > 0, got {dt}")));
        }
        if let Some((cell, value)) = state
            .rho
            .iter()
            .chain(&state.eta)
            .copied()
            .enumerate()
            .find(|&(_, v)| !(v >= 0.0))
        {
            let n = state.rho.len();
            return Err(Error::NegativeInitialData {
                species: if cell < n { "rho" } else { "eta" },
                cell: cell % n,
                value,
            });
        }
        let mesh = model.mesh();
        let (m1, m2) = state.masses(mesh);
        let cfl_ratio = check_cfl(dt, m1 + m2, mesh.xi(), mesh.h());
        let uniqueness_guaranteed = cfl_ratio < 1.0;
        if !uniqueness_guaranteed {
            log::warn!("implicit step with CFL ratio {cfl_ratio:.3e} >= 1: uniqueness not guaranteed");
        }
        model.assemble_potentials(&state.rho, &state.eta, &mut self.ws)?;
        self.iterate[0].copy_from_slice(&state.rho);
        self.iterate[1].copy_from_slice(&state.eta);

        let mut history = Vec::new();
        let mut converged = false;
        for _ in 0..max_iter {
            for species in 0..2 {
                let old = if species == 0 { &state.rho } else { &state.eta };
                self.assemble_system(model, species, old, dt);
                thomas(
                    &self.lower,
                    &self.diag,
                    &self.upper,
                    &self.rhs,
                    &mut self.work,
                    &mut self.next[species],
                )?;
            }
            let residual = self
                .iterate
                .iter()
                .zip(&self.next)
                .flat_map(|(a, b)| a.iter().zip(b))
                .fold(0.0_f64, |m, (x, y)| m.max((x - y).abs()));
            std::mem::swap(&mut self.iterate, &mut self.next);
            history.push(residual);
            if !residual.is_finite() {
                return Err(Error::BlowUp { time: state.time });
            }
            if residual <= tol {
                converged = true;
                break;
            }
        }
        let monotone = history.windows(2).skip(1).all(|w| w[1] <= w[0]);
        if !monotone {
            log::warn!("fixed point residuals not monotone after the first iteration: {history:?}");
        }
        let report = FixedPointReport {
            iterations: history.len(),
            residual: history.last().copied().unwrap_or(0.0),
            converged,
            cfl_ratio,
            uniqueness_guaranteed,
            residual_history: history,
            monotone,
        };
        if !converged {
            return Err(Error::FixedPointDiverged(Box::new(report)));
        }
        state.rho.copy_from_slice(&self.iterate[0]);
        state.eta.copy_from_slice(&self.iterate[1]);
        state.time += dt;
        Ok(report)
    }

    /// Rows scaled by `Δx_i`: each column of the matrix sums to `Δx_i`,
    /// which is the discrete statement of mass conservation.
    fn assemble_system(&mut self, model: &Model, species: usize, old: &[f64], dt: f64) {
        let mesh = model.mesh();
        let (eps, nu) = (model.eps(), model.nu());
        let (w, hws) = (mesh.widths(), mesh.half_widths());
        let (r, e) = (&self.iterate[0], &self.iterate[1]);
        let own = &self.iterate[species];
        let dv = if species == 0 { &self.ws.fields.dv1 } else { &self.ws.fields.dv2 };
        let n = w.len();
        for i in 0..n {
            self.diag[i] = w[i];
            self.rhs[i] = w[i] * old[i];
            self.lower[i] = 0.0;
            self.upper[i] = 0.0;
        }
        for i in 0..n - 1 {
            let hw = hws[i];
            let du = ((r[i] + e[i]) - (r[i + 1] + e[i + 1])) / hw;
            let visc = 0.5 * eps * (own[i] + own[i + 1]) / hw;
            // Flux through i+1/2 is alpha·x_i + beta·x_{i+1}.
            let alpha = dt * (nu * positive_part(du) + positive_part(dv[i]) + visc);
            let beta = dt * (nu * negative_part(du) + negative_part(dv[i]) - visc);
            self.diag[i] += alpha;
            self.upper[i] = beta;
            self.diag[i + 1] -= beta;
            self.lower[i + 1] = -alpha;
        }
    }
}

/// `[a, b, c, d]` is the row-major matrix `[[a, b], [c, d]]`.
type Block = [f64; 4];

fn block_mul(x: &Block, y: &Block) -> Block {
    [
        x[0] * y[0] + x[1] * y[2],
        x[0] * y[1] + x[1] * y[3],
        x[2] * y[0] + x[3] * y[2],
        x[2] * y[1] + x[3] * y[3],
    ]
}

fn block_apply(x: &Block, v: [f64; 2]) -> [f64; 2] {
    [x[0] * v[0] + x[1] * v[1], x[2] * v[0] + x[3] * v[1]]
}

fn block_inverse(x: &Block, row: usize) -> Result<Block> {
    let det = x[0] * x[3] - x[1] * x[2];
    let scale = x.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    if !(det.abs() > 1e-300 && det.abs() > f64::EPSILON * scale * scale) {
        return Err(Error::SingularSystem { row });
    }
    Ok([x[3] / det, -x[1] / det, -x[2] / det, x[0] / det])
}

/// Block Thomas elimination for a 2x2-block tridiagonal system; `lower[0]`
/// and `upper[n-1]` are ignored. Overwrites `upper` and `rhs`; the
/// solution ends up in `rhs`.
fn block_thomas(lower: &[Block], diag: &[Block], upper: &mut [Block], rhs: &mut [[f64; 2]]) -> Result<()> {
    let n = diag.len();
    let inv = block_inverse(&diag[0], 0)?;
    upper[0] = block_mul(&inv, &upper[0]);
    rhs[0] = block_apply(&inv, rhs[0]);
    for i in 1..n {
        let lc = block_mul(&lower[i], &upper[i - 1]);
        let m = [diag[i][0] - lc[0], diag[i][1] - lc[1], diag[i][2] - lc[2], diag[i][3] - lc[3]];
        let inv = block_inverse(&m, i)?;
        upper[i] = block_mul(&inv, &upper[i]);
        let ld = block_apply(&lower[i], rhs[i - 1]);
        rhs[i] = block_apply(&inv, [rhs[i][0] - ld[0], rhs[i][1] - ld[1]]);
    }
    for i in (0..n - 1).rev() {
        let cx = block_apply(&upper[i], rhs[i + 1]);
        rhs[i] = [rhs[i][0] - cx[0], rhs[i][1] - cx[1]];
    }
    Ok(())
}

/// Outcome of one Newton solve of the backward Euler system.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NewtonReport {
    pub iterations: usize,
    /// Max-norm of the last Newton update.
    pub update: f64,
    /// Max-norm of the Δx-scaled residual at the accepted iterate.
    pub residual: f64,
    pub converged: bool,
}

/// Buffers for the backward Euler step solved by Newton's method. The
/// discrete system is the one of [`ImplicitStepper`]: interaction
/// gradients at the old time level, everything else implicit. Newton
/// converges for steps far beyond the reach of the fixed point
/// iteration, which makes it the tool for marching to stationary states.
#[derive(Debug, Clone)]
pub struct NewtonStepper {
    ws: Workspace,
    lower: Vec<Block>,
    diag: Vec<Block>,
    upper: Vec<Block>,
    rhs: Vec<[f64; 2]>,
    delta: Vec<[f64; 2]>,
    x: [Vec<f64>; 2],
    trial: [Vec<f64>; 2],
}

impl NewtonStepper {
    pub fn new(model: &Model) -> Self {
        let n = model.mesh().len();
        Self {
            ws: model.workspace(),
            lower: vec![[0.0; 4]; n],
            diag: vec![[0.0; 4]; n],
            upper: vec![[0.0; 4]; n],
            rhs: vec![[0.0; 2]; n],
            delta: vec![[0.0; 2]; n],
            x: [vec![0.0; n], vec![0.0; n]],
            trial: [vec![0.0; n], vec![0.0; n]],
        }
    }

    /// Δx-scaled residual `Δx_i (x_i - x_i^n) + Δt (F_{i+1/2} - F_{i-1/2})`
    /// of `x` into `self.rhs`, and optionally the Jacobian blocks. Returns
    /// the max-norm of the residual.
    fn residual(&mut self, model: &Model, old: &State, dt: f64, trial: bool, jacobian: bool) -> f64 {
        let mesh = model.mesh();
        let (eps, nu) = (model.eps(), model.nu());
        let (w, inv) = (mesh.widths(), mesh.inv_half_widths());
        let [r, e] = if trial { &self.trial } else { &self.x };
        let (dv1, dv2) = (&self.ws.fields.dv1, &self.ws.fields.dv2);
        let n = w.len();
        for i in 0..n {
            self.rhs[i] = [w[i] * (r[i] - old.rho[i]), w[i] * (e[i] - old.eta[i])];
        }
        if jacobian {
            for i in 0..n {
                self.diag[i] = [w[i], 0.0, 0.0, w[i]];
                self.lower[i] = [0.0; 4];
                self.upper[i] = [0.0; 4];
            }
        }
        for i in 0..n - 1 {
            let s = inv[i];
            let du = ((r[i] + e[i]) - (r[i + 1] + e[i + 1])) * s;
            let (dup, dum) = (positive_part(du), negative_part(du));
            let (a1p, a1m) = (positive_part(dv1[i]), negative_part(dv1[i]));
            let (a2p, a2m) = (positive_part(dv2[i]), negative_part(dv2[i]));
            let d = 0.5 * eps * s;
            let f = (nu * dup + a1p) * r[i] + (nu * dum + a1m) * r[i + 1] - d * (r[i + 1] * r[i + 1] - r[i] * r[i]);
            let g = (nu * dup + a2p) * e[i] + (nu * dum + a2m) * e[i + 1] - d * (e[i + 1] * e[i + 1] - e[i] * e[i]);
            self.rhs[i][0] += dt * f;
            self.rhs[i][1] += dt * g;
            self.rhs[i + 1][0] -= dt * f;
            self.rhs[i + 1][1] -= dt * g;
            if jacobian {
                // Sensitivity of the cross-diffusion term to dU, which
                // depends on σ_i with weight s and on σ_{i+1} with -s.
                let (gf, gg) = if du > 0.0 { (nu * r[i], nu * e[i]) } else { (nu * r[i + 1], nu * e[i + 1]) };
                // dF/d(ρ_i, η_i), dF/d(ρ_{i+1}, η_{i+1}) and the same for G.
                let fl = [nu * dup + a1p + 2.0 * d * r[i] + gf * s, gf * s];
                let fr = [nu * dum + a1m - 2.0 * d * r[i + 1] - gf * s, -gf * s];
                let gl = [gg * s, nu * dup + a2p + 2.0 * d * e[i] + gg * s];
                let gr = [-gg * s, nu * dum + a2m - 2.0 * d * e[i + 1] - gg * s];
                let left = [fl[0], fl[1], gl[0], gl[1]].map(|v| dt * v);
                let right = [fr[0], fr[1], gr[0], gr[1]].map(|v| dt * v);
                for k in 0..4 {
                    self.diag[i][k] += left[k];
                    self.upper[i][k] += right[k];
                    self.lower[i + 1][k] -= left[k];
                    self.diag[i + 1][k] -= right[k];
                }
            }
        }
        self.rhs.iter().fold(0.0_f64, |m, v| m.max(v[0].abs()).max(v[1].abs()))
    }

    /// Backward Euler step by damped Newton iteration, stopping once the
    /// update falls below `tol` in max-norm. Fails with
    /// [`Error::FixedPointDiverged`] when Newton stalls, or when an iterate
    /// leaves the nonnegative cone by more than `tol`; callers retry with
    /// a smaller step.
    pub fn step(&mut self, model: &Model, state: &mut State, dt: f64, tol: f64, max_iter: usize) -> Result<NewtonReport> {
        if !(dt > 0.0) {
            return Err(Error::InvalidParameter(format!("time step must be > 0, got {dt}")));
        }
        state.check_mesh(model.mesh())?;
        model.assemble_potentials(&state.rho, &state.eta, &mut self.ws)?;
        self.x[0].copy_from_slice(&state.rho);
        self.x[1].copy_from_slice(&state.eta);
        let mut history = Vec::new();
        let mut norm = self.residual(model, state, dt, false, true);
        let fail = |history: Vec<f64>, update: f64| {
            let mesh = model.mesh();
            let (m1, m2) = state.masses(mesh);
            let cfl_ratio = check_cfl(dt, m1 + m2, mesh.xi(), mesh.h());
            Error::FixedPointDiverged(Box::new(FixedPointReport {
                iterations: history.len(),
                residual: update,
                converged: false,
                cfl_ratio,
                uniqueness_guaranteed: cfl_ratio < 1.0,
                monotone: history.windows(2).all(|w| w[1] <= w[0]),
                residual_history: history,
            }))
        };
        for _ in 0..max_iter {
            block_thomas(&self.lower, &self.diag, &mut self.upper, &mut self.rhs)?;
            std::mem::swap(&mut self.rhs, &mut self.delta);
            let update = self.delta.iter().fold(0.0_f64, |m, v| m.max(v[0].abs()).max(v[1].abs()));
            if !update.is_finite() {
                return Err(Error::BlowUp { time: state.time });
            }
            history.push(update);
            // Backtrack until the residual decreases.
            let mut lambda = 1.0;
            let trial_norm = loop {
                for (i, d) in self.delta.iter().enumerate() {
                    self.trial[0][i] = self.x[0][i] - lambda * d[0];
                    self.trial[1][i] = self.x[1][i] - lambda * d[1];
                }
                let trial_norm = self.residual(model, state, dt, true, false);
                if trial_norm < norm || lambda * update <= tol {
                    break trial_norm;
                }
                lambda *= 0.5;
                if lambda < 1e-4 {
                    return Err(fail(history, update));
                }
            };
            std::mem::swap(&mut self.x, &mut self.trial);
            norm = trial_norm;
            if lambda * update <= tol {
                let lowest = self.x.iter().flatten().fold(f64::INFINITY, |m, &v| m.min(v));
                if lowest < -tol {
                    return Err(fail(history, update));
                }
                state.rho.copy_from_slice(&self.x[0]);
                state.eta.copy_from_slice(&self.x[1]);
                state.time += dt;
                return Ok(NewtonReport {
                    iterations: history.len(),
                    update: lambda * update,
                    residual: norm,
                    converged: true,
                });
            }
            norm = self.residual(model, state, dt, false, true);
        }
        let update = history.last().copied().unwrap_or(f64::INFINITY);
        Err(fail(history, update))
    }
}

/// Backward Euler step; see [`ImplicitStepper::step`].
pub fn step_implicit(
    mut state: State,
    dt: f64,
    model: &Model,
    tol: f64,
    max_iter: usize,
) -> Result<(State, FixedPointReport)> {
    state.check_mesh(model.mesh())?;
    let report = ImplicitStepper::new(model).step(model, &mut state, dt, tol, max_iter)?;
    Ok((state, report))
}

/// Time integration method.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "method", rename_all = "snake_case", deny_unknown_fields)]
pub enum Method {
    Rk4 {
        #[serde(default = "default_safety")]
        cfl_safety: f64,
    },
    ImplicitEuler {
        dt: f64,
        #[serde(default = "default_fp_tol")]
        fp_tol: f64,
        #[serde(default = "default_fp_max_iter")]
        fp_max_iter: usize,
    },
}

fn default_safety() -> f64 {
    DEFAULT_CFL_SAFETY
}

fn default_fp_tol() -> f64 {
    DEFAULT_FP_TOL
}

fn default_fp_max_iter() -> usize {
    DEFAULT_FP_MAX_ITER
}

impl Default for Method {
    fn default() -> Self {
        Method::Rk4 {
            cfl_safety: DEFAULT_CFL_SAFETY,
        }
    }
}

impl Method {
    pub fn validate(&self) -> Result<()> {
        match *self {
            Method::Rk4 { cfl_safety } if !(cfl_safety > 0.0 && cfl_safety <= 1.0) => Err(
                Error::InvalidParameter(format!("cfl_safety must lie in (0, 1], got {cfl_safety}")),
            ),
            Method::ImplicitEuler { dt, .. } if !(dt > 0.0 && dt.is_finite()) => {
                Err(Error::InvalidParameter(format!("implicit dt must be > 0, got {dt}")))
            }
            Method::ImplicitEuler { fp_tol, .. } if !(fp_tol > 0.0) => {
                Err(Error::InvalidParameter(format!("fp_tol must be > 0, got {fp_tol}")))
            }
            Method::ImplicitEuler { fp_max_iter: 0, .. } => {
                Err(Error::InvalidParameter("fp_max_iter must be ≥ 1".into()))
            }
            _ => Ok(()),
        }
    }
}

/// Per-run counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub steps: usize,
    /// Smallest cell value seen after any step (or initially).
    pub min_value: f64,
    pub smallest_dt: f64,
    pub largest_dt: f64,
    /// CFL ratio of every implicit step.
    pub cfl_history: Vec<f64>,
    pub max_fp_iterations: usize,
    pub max_fp_residual: f64,
    pub non_monotone_fp_steps: usize,
    /// Implicit steps retried with half the step after the fixed point
    /// iteration failed to converge.
    pub rejected_steps: usize,
}

/// Advances `state` through every time of `grid`, calling `on_report(k,
/// state, stats)` at `t_0` and at each reporting time.
pub fn integrate<F>(model: &Model, state: &mut State, grid: &TimeGrid, method: &Method, mut on_report: F) -> Result<RunStats>
where
    F: FnMut(usize, &State, &RunStats) -> Result<()>,
{
    integrate_until(model, state, grid, method, |k, s, stats| {
        on_report(k, s, stats).map(ControlFlow::Continue)
    })
}

/// [`integrate`] that stops after any report for which `on_report`
/// returns `Break`.
pub fn integrate_until<F>(
    model: &Model,
    state: &mut State,
    grid: &TimeGrid,
    method: &Method,
    mut on_report: F,
) -> Result<RunStats>
where
    F: FnMut(usize, &State, &RunStats) -> Result<ControlFlow<()>>,
{
    method.validate()?;
    state.check_mesh(model.mesh())?;
    let (r0, e0) = state.min_values();
    let mut stats = RunStats {
        min_value: r0.min(e0),
        smallest_dt: f64::INFINITY,
        ..RunStats::default()
    };
    state.time = 0.0;
    if on_report(0, state, &stats)?.is_break() {
        return Ok(stats);
    }
    match *method {
        Method::Rk4 { cfl_safety } => {
            let mut stepper = Rk4Stepper::new(model);
            stepper.min_value = stats.min_value;
            for k in 1..=grid.reports() {
                let target = grid.time(k);
                while state.time < target {
                    let remaining = target - state.time;
                    let dt = stepper.step_adaptive(model, state, remaining, cfl_safety)?;
                    if dt == remaining {
                        state.time = target;
                    }
                    stats.steps += 1;
                    stats.smallest_dt = stats.smallest_dt.min(dt);
                    stats.largest_dt = stats.largest_dt.max(dt);
                }
                stats.min_value = stepper.min_value;
                if on_report(k, state, &stats)?.is_break() {
                    break;
                }
            }
        }
        Method::ImplicitEuler { dt, fp_tol, fp_max_iter } => {
            let mut stepper = ImplicitStepper::new(model);
            let mut h = dt;
            for k in 1..=grid.reports() {
                let target = grid.time(k);
                let span = target - state.time;
                while state.time < target {
                    let remaining = target - state.time;
                    // Avoid a sliver step right before the report time.
                    let step = if h >= remaining * (1.0 - 1e-12) {
                        remaining
                    } else if h > 0.5 * remaining {
                        0.5 * remaining
                    } else {
                        h
                    };
                    match stepper.step(model, state, step, fp_tol, fp_max_iter) {
                        Ok(report) => {
                            if step == remaining {
                                state.time = target;
                            }
                            stats.steps += 1;
                            stats.smallest_dt = stats.smallest_dt.min(step);
                            stats.largest_dt = stats.largest_dt.max(step);
                            stats.cfl_history.push(report.cfl_ratio);
                            stats.max_fp_iterations = stats.max_fp_iterations.max(report.iterations);
                            stats.max_fp_residual = stats.max_fp_residual.max(report.residual);
                            stats.non_monotone_fp_steps += usize::from(!report.monotone);
                            let (r, e) = state.min_values();
                            stats.min_value = stats.min_value.min(r).min(e);
                            h = (2.0 * h).min(dt);
                        }
                        Err(Error::FixedPointDiverged(report)) if step > 1e-9 * span => {
                            log::debug!(
                                "fixed point failed at t = {} with dt = {step:e} ({} iterations); halving",
                                state.time,
                                report.iterations
                            );
                            stats.rejected_steps += 1;
                            h = 0.5 * step;
                        }
                        Err(e) => return Err(e),
                    }
                }
                if on_report(k, state, &stats)?.is_break() {
                    break;
                }
            }
        }
    }
    Ok(stats)
}

/// [`integrate`] keeping every reported state.
pub fn integrate_collect(model: &Model, initial: State, grid: &TimeGrid, method: &Method) -> Result<(Vec<State>, RunStats)> {
    let mut state = initial;
    let mut out = Vec::with_capacity(grid.reports() + 1);
    let stats = integrate(model, &mut state, grid, method, |_, s, _| {
        out.push(s.clone());
        Ok(())
    })?;
    Ok((out, stats))
}
