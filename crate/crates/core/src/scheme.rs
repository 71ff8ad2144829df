//! Semi-discrete finite volume scheme.
//!
//! Each species moves with a velocity split into a cross-diffusion part
//! `ν dU` (with `U = -(ρ + η)`) and a nonlocal part `dV_k`. Both parts are
//! upwinded separately, and the porous-medium self-diffusion enters through
//! the centered difference of the squared density:
//!
//! ```text
//! F_{i+1/2} = [ν(dU)⁺ + (dV₁)⁺] ρ_i + [ν(dU)⁻ + (dV₁)⁻] ρ_{i+1}
//!             - (ε/2) (ρ_{i+1}² - ρ_i²) / Δx_{i+1/2}
//! dρ_i/dt   = -(F_{i+1/2} - F_{i-1/2}) / Δx_i
//! ```
//!
//! with zero flux through both ends of the domain.

use std::ops::Range;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::interaction::{Assembly, InteractionScratch, InteractionSet};
use crate::kernels::KernelSet;
use crate::mesh::Mesh1D;
use crate::state::{discrete_gradient_into, DiagnosticsContext, State};

/// `max(z, 0)`.
#[inline]
pub fn positive_part(z: f64) -> f64 {
    // Written as a select so it lowers to a single max instruction; NaN
    // maps to zero exactly as `f64::max` would.
    if z > 0.0 { z } else { 0.0 }
}

/// `min(z, 0)`.
#[inline]
pub fn negative_part(z: f64) -> f64 {
    if z < 0.0 { z } else { 0.0 }
}

/// Potentials, cross-diffusion potential, and their interface gradients.
#[derive(Debug, Clone, PartialEq)]
pub struct FieldSet {
    pub v1: Vec<f64>,
    pub v2: Vec<f64>,
    pub u: Vec<f64>,
    pub dv1: Vec<f64>,
    pub dv2: Vec<f64>,
    pub du: Vec<f64>,
    pub drho: Vec<f64>,
    pub deta: Vec<f64>,
}

impl FieldSet {
    pub fn zeros(n: usize) -> Self {
        let m = n.saturating_sub(1);
        Self {
            v1: vec![0.0; n],
            v2: vec![0.0; n],
            u: vec![0.0; n],
            dv1: vec![0.0; m],
            dv2: vec![0.0; m],
            du: vec![0.0; m],
            drho: vec![0.0; m],
            deta: vec![0.0; m],
        }
    }
}

/// Interface fluxes `F_{i+1/2}`, `G_{i+1/2}` for `i = 0..=N`; both end
/// entries are the no-flux boundary values.
#[derive(Debug, Clone, PartialEq)]
pub struct FluxField {
    pub f: Vec<f64>,
    pub g: Vec<f64>,
}

impl FluxField {
    pub fn zeros(n: usize) -> Self {
        Self {
            f: vec![0.0; n + 1],
            g: vec![0.0; n + 1],
        }
    }
}

/// Nonlocal potentials only: `V_1`, `V_2` and their gradients.
fn assemble_potentials(
    rho: &[f64],
    eta: &[f64],
    interactions: &InteractionSet,
    mesh: &Mesh1D,
    fields: &mut FieldSet,
    scratch: &mut InteractionScratch,
) -> Result<()> {
    if interactions.is_zero() {
        // Workspaces start zeroed and nothing else writes the potentials.
        return Ok(());
    }
    interactions.apply(mesh, rho, eta, &mut fields.v1, &mut fields.v2, scratch)?;
    discrete_gradient_into(&fields.v1, mesh, &mut fields.dv1);
    discrete_gradient_into(&fields.v2, mesh, &mut fields.dv2);
    Ok(())
}

/// Fills every entry of `fields` for the given state.
pub fn assemble_fields(
    state: &State,
    interactions: &InteractionSet,
    mesh: &Mesh1D,
) -> Result<FieldSet> {
    state.check_mesh(mesh)?;
    if interactions.mesh_id() != mesh.id() {
        return Err(Error::MeshMismatch);
    }
    let mut fields = FieldSet::zeros(mesh.len());
    assemble_potentials(
        &state.rho,
        &state.eta,
        interactions,
        mesh,
        &mut fields,
        &mut InteractionScratch::default(),
    )?;
    for ((u, r), e) in fields.u.iter_mut().zip(&state.rho).zip(&state.eta) {
        *u = -(r + e);
    }
    discrete_gradient_into(&fields.u, mesh, &mut fields.du);
    discrete_gradient_into(&state.rho, mesh, &mut fields.drho);
    discrete_gradient_into(&state.eta, mesh, &mut fields.deta);
    Ok(fields)
}

/// Flux pair at the interface between cells `i` and `i + 1`, given
/// `1 / Δx_{i+1/2}`.
#[inline(always)]
fn interface_flux(
    r: (f64, f64),
    e: (f64, f64),
    dv1: f64,
    dv2: f64,
    inv_hw: f64,
    eps: f64,
    nu: f64,
) -> (f64, f64) {
    let u0 = -(r.0 + e.0);
    let u1 = -(r.1 + e.1);
    let du = (u1 - u0) * inv_hw;
    let cross_p = nu * positive_part(du);
    let cross_m = nu * negative_part(du);
    let diffusion = 0.5 * eps * inv_hw;
    let f = (cross_p + positive_part(dv1)) * r.0 + (cross_m + negative_part(dv1)) * r.1
        - diffusion * (r.1 * r.1 - r.0 * r.0);
    let g = (cross_p + positive_part(dv2)) * e.0 + (cross_m + negative_part(dv2)) * e.1
        - diffusion * (e.1 * e.1 - e.0 * e.0);
    (f, g)
}

/// Fluxes through the interfaces of the cells in `range`. The two
/// interfaces bounding the range get zero flux, which is exact when the
/// densities vanish on the first and last cell of the range and beyond
/// (or when the range reaches the boundary).
#[allow(clippy::too_many_arguments)]
fn fluxes_into(
    rho: &[f64],
    eta: &[f64],
    dv1: &[f64],
    dv2: &[f64],
    eps: f64,
    nu: f64,
    mesh: &Mesh1D,
    out: &mut FluxField,
    range: Range<usize>,
) {
    let (lo, hi) = (range.start, range.end);
    out.f[lo] = 0.0;
    out.g[lo] = 0.0;
    out.f[hi] = 0.0;
    out.g[hi] = 0.0;
    if hi - lo < 2 {
        return;
    }
    // Equal-length views let the compiler drop bounds checks and vectorize.
    let m = hi - lo - 1;
    let inv = &mesh.inv_half_widths()[lo..lo + m];
    let (r0, r1) = (&rho[lo..lo + m], &rho[lo + 1..lo + 1 + m]);
    let (e0, e1) = (&eta[lo..lo + m], &eta[lo + 1..lo + 1 + m]);
    let (dv1, dv2) = (&dv1[lo..lo + m], &dv2[lo..lo + m]);
    let (f, g) = (&mut out.f[lo + 1..lo + 1 + m], &mut out.g[lo + 1..lo + 1 + m]);
    for i in 0..m {
        let (fi, gi) = interface_flux((r0[i], r1[i]), (e0[i], e1[i]), dv1[i], dv2[i], inv[i], eps, nu);
        f[i] = fi;
        g[i] = gi;
    }
}

/// Upwind fluxes for `state` given its assembled fields.
pub fn assemble_fluxes(
    state: &State,
    fields: &FieldSet,
    eps: f64,
    nu: f64,
    mesh: &Mesh1D,
) -> FluxField {
    let mut out = FluxField::zeros(mesh.len());
    fluxes_into(
        &state.rho,
        &state.eta,
        &fields.dv1,
        &fields.dv2,
        eps,
        nu,
        mesh,
        &mut out,
        0..mesh.len(),
    );
    out
}

fn rhs_into(fluxes: &FluxField, mesh: &Mesh1D, drho: &mut [f64], deta: &mut [f64], range: Range<usize>) {
    let (lo, hi) = (range.start, range.end);
    let m = hi - lo;
    let inv = &mesh.inv_widths()[lo..hi];
    let (f0, f1) = (&fluxes.f[lo..lo + m], &fluxes.f[lo + 1..lo + 1 + m]);
    let (g0, g1) = (&fluxes.g[lo..lo + m], &fluxes.g[lo + 1..lo + 1 + m]);
    let (dr, de) = (&mut drho[lo..hi], &mut deta[lo..hi]);
    for i in 0..m {
        dr[i] = -(f1[i] - f0[i]) * inv[i];
        de[i] = -(g1[i] - g0[i]) * inv[i];
    }
}

/// `(dρ/dt, dη/dt)` from the interface fluxes.
pub fn rhs(fluxes: &FluxField, mesh: &Mesh1D) -> (Vec<f64>, Vec<f64>) {
    let n = mesh.len();
    let (mut drho, mut deta) = (vec![0.0; n], vec![0.0; n]);
    rhs_into(fluxes, mesh, &mut drho, &mut deta, 0..n);
    (drho, deta)
}

/// Coefficients of `Δx_i dρ_i/dt = A_i ρ_i + B_i ρ_{i+1} + C_i ρ_{i-1}`.
/// The off-diagonal coefficients `B_i` and `C_i` are never negative.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MonotoneCoefficients {
    pub a: f64,
    pub b: f64,
    pub c: f64,
}

/// Splits the first-species update into its monotone three-point form,
/// using the potential gradient `dv` of that species.
pub fn monotone_decomposition(
    density: &[f64],
    du: &[f64],
    dv: &[f64],
    eps: f64,
    nu: f64,
    mesh: &Mesh1D,
) -> Vec<MonotoneCoefficients> {
    let n = density.len();
    let hws = mesh.half_widths();
    (0..n)
        .map(|i| {
            let mut k = MonotoneCoefficients {
                a: 0.0,
                b: 0.0,
                c: 0.0,
            };
            if i + 1 < n {
                let (up, down) = (
                    nu * positive_part(du[i]) + positive_part(dv[i]),
                    nu * negative_part(du[i]) + negative_part(dv[i]),
                );
                k.a -= up + 0.5 * eps * density[i] / hws[i];
                k.b = -down + 0.5 * eps * density[i + 1] / hws[i];
            }
            if i > 0 {
                let (up, down) = (
                    nu * positive_part(du[i - 1]) + positive_part(dv[i - 1]),
                    nu * negative_part(du[i - 1]) + negative_part(dv[i - 1]),
                );
                k.a += down - 0.5 * eps * density[i] / hws[i - 1];
                k.c = up + 0.5 * eps * density[i - 1] / hws[i - 1];
            }
            k
        })
        .collect()
}

/// Everything the right-hand side depends on besides the densities.
#[derive(Debug)]
pub struct Model {
    mesh: Arc<Mesh1D>,
    eps: f64,
    nu: f64,
    kernels: KernelSet,
    interactions: InteractionSet,
}

/// Per-evaluation buffers so repeated right-hand side evaluations do not
/// allocate.
#[derive(Debug, Clone)]
pub struct Workspace {
    pub fields: FieldSet,
    pub fluxes: FluxField,
    scratch: InteractionScratch,
}

impl Model {
    pub fn new(
        mesh: Arc<Mesh1D>,
        eps: f64,
        nu: f64,
        kernels: &KernelSet,
        quadrature_order: usize,
        assembly: Assembly,
    ) -> Result<Self> {
        if !(eps >= 0.0 && eps.is_finite()) {
            return Err(Error::InvalidParameter(format!("eps must be ≥ 0, got {eps}")));
        }
        if !(nu >= 0.0 && nu.is_finite()) {
            return Err(Error::InvalidParameter(format!("nu must be ≥ 0, got {nu}")));
        }
        let interactions = InteractionSet::new(kernels, &mesh, quadrature_order, assembly)?;
        Ok(Self {
            mesh,
            eps,
            nu,
            kernels: kernels.clone(),
            interactions,
        })
    }

    pub fn mesh(&self) -> &Mesh1D {
        &self.mesh
    }

    pub fn shared_mesh(&self) -> Arc<Mesh1D> {
        Arc::clone(&self.mesh)
    }

    pub fn eps(&self) -> f64 {
        self.eps
    }

    pub fn nu(&self) -> f64 {
        self.nu
    }

    pub fn kernels(&self) -> &KernelSet {
        &self.kernels
    }

    pub fn interactions(&self) -> &InteractionSet {
        &self.interactions
    }

    pub fn diagnostics_context(&self) -> DiagnosticsContext {
        DiagnosticsContext {
            eps: self.eps,
            nu: self.nu,
            kernel_norms: self.kernels.lipschitz_norms(self.mesh.length()),
        }
    }

    pub fn workspace(&self) -> Workspace {
        let n = self.mesh.len();
        Workspace {
            fields: FieldSet::zeros(n),
            fluxes: FluxField::zeros(n),
            scratch: InteractionScratch::default(),
        }
    }

    /// Potential gradients `dV_1`, `dV_2` into `ws.fields`.
    pub fn assemble_potentials(&self, rho: &[f64], eta: &[f64], ws: &mut Workspace) -> Result<()> {
        assemble_potentials(
            rho,
            eta,
            &self.interactions,
            &self.mesh,
            &mut ws.fields,
            &mut ws.scratch,
        )
    }

    /// Right-hand side into `drho`, `deta`. Only the potentials and the
    /// fluxes in `ws` are refreshed; the cross-diffusion gradients are
    /// formed on the fly.
    pub fn evaluate(
        &self,
        rho: &[f64],
        eta: &[f64],
        ws: &mut Workspace,
        drho: &mut [f64],
        deta: &mut [f64],
    ) -> Result<()> {
        self.evaluate_range(rho, eta, ws, drho, deta, 0..self.mesh.len())
    }

    /// [`evaluate`](Self::evaluate) restricted to the cells of `range`.
    ///
    /// The densities must vanish outside `range` and on its first and last
    /// cell unless those touch the boundary; see [`occupied_range`]. Rates
    /// outside `range` are then exactly zero and are not written.
    pub fn evaluate_range(
        &self,
        rho: &[f64],
        eta: &[f64],
        ws: &mut Workspace,
        drho: &mut [f64],
        deta: &mut [f64],
        range: Range<usize>,
    ) -> Result<()> {
        self.potentials_range(rho, eta, ws, range.clone())?;
        fluxes_into(
            rho,
            eta,
            &ws.fields.dv1,
            &ws.fields.dv2,
            self.eps,
            self.nu,
            &self.mesh,
            &mut ws.fluxes,
            range.clone(),
        );
        rhs_into(&ws.fluxes, &self.mesh, drho, deta, range);
        Ok(())
    }

    /// `dV_1`, `dV_2` on the interfaces inside `range`.
    pub(crate) fn potentials_range(
        &self,
        rho: &[f64],
        eta: &[f64],
        ws: &mut Workspace,
        range: Range<usize>,
    ) -> Result<()> {
        if range.len() == self.mesh.len() {
            return self.assemble_potentials(rho, eta, ws);
        }
        let f = &mut ws.fields;
        if self.interactions.is_zero() {
            return Ok(());
        }
        self.interactions.apply_range(
            &self.mesh,
            rho,
            eta,
            &mut f.v1,
            &mut f.v2,
            range.clone(),
            &mut ws.scratch,
        )?;
        let (lo, m) = (range.start, range.len().saturating_sub(1));
        let inv = &self.mesh.inv_half_widths()[lo..lo + m];
        for (v, dv) in [(&f.v1, &mut f.dv1), (&f.v2, &mut f.dv2)] {
            let (v0, v1) = (&v[lo..lo + m], &v[lo + 1..lo + 1 + m]);
            for (((d, a), b), s) in dv[lo..lo + m].iter_mut().zip(v0).zip(v1).zip(inv) {
                *d = (b - a) * s;
            }
        }
        Ok(())
    }

    /// Allocating right-hand side.
    pub fn rhs(&self, state: &State) -> Result<(Vec<f64>, Vec<f64>)> {
        state.check_mesh(&self.mesh)?;
        let n = self.mesh.len();
        let mut ws = self.workspace();
        let (mut drho, mut deta) = (vec![0.0; n], vec![0.0; n]);
        self.evaluate(&state.rho, &state.eta, &mut ws, &mut drho, &mut deta)?;
        Ok((drho, deta))
    }

    /// `‖dρ/dt‖_∞ + ‖dη/dt‖_∞`.
    pub fn stationarity_residual(&self, state: &State) -> Result<f64> {
        let (drho, deta) = self.rhs(state)?;
        Ok(max_abs(&drho) + max_abs(&deta))
    }
}

/// Cells holding mass in either species, widened by `pad` cells on each
/// side and clipped to the mesh. Empty when both densities vanish.
pub fn occupied_range(rho: &[f64], eta: &[f64], pad: usize) -> Range<usize> {
    const CHUNK: usize = 16;
    let n = rho.len().min(eta.len());
    let (rho, eta) = (&rho[..n], &eta[..n]);
    // Nonzero test on the bit pattern with the sign shifted out, so -0.0
    // counts as empty; whole chunks are tested branch-free.
    let bits = |i: usize| (rho[i].to_bits() | eta[i].to_bits()) << 1;
    let chunk_occupied = |c: usize| {
        let (start, end) = (c * CHUNK, ((c + 1) * CHUNK).min(n));
        let (r, e) = (&rho[start..end], &eta[start..end]);
        r.iter().zip(e).fold(0u64, |acc, (r, e)| acc | (r.to_bits() | e.to_bits()) << 1) != 0
    };
    let chunks = n.div_ceil(CHUNK);
    let Some(first_chunk) = (0..chunks).find(|&c| chunk_occupied(c)) else {
        return 0..0;
    };
    let last_chunk = (0..chunks).rev().find(|&c| chunk_occupied(c)).unwrap_or(first_chunk);
    let first = (first_chunk * CHUNK..n).find(|&i| bits(i) != 0).unwrap_or(0);
    let last = (last_chunk * CHUNK..((last_chunk + 1) * CHUNK).min(n))
        .rev()
        .find(|&i| bits(i) != 0)
        .unwrap_or(first);
    first.saturating_sub(pad)..(last + 1 + pad).min(n)
}

pub(crate) fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0, |m, x| m.max(x.abs()))
}
