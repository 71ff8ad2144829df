//! Cell densities and the discrete gradient, plus the scalar diagnostics
//! that track positivity and the entropy balance.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh1D, MeshId};
use crate::quadrature::GaussLegendre;

/// Per-cell densities of both species at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    pub rho: Vec<f64>,
    pub eta: Vec<f64>,
    pub time: f64,
    pub mesh_id: MeshId,
}

impl State {
    pub fn new(mesh: &Mesh1D, rho: Vec<f64>, eta: Vec<f64>) -> Result<Self> {
        for v in [&rho, &eta] {
            if v.len() != mesh.len() {
                return Err(Error::LengthMismatch {
                    expected: mesh.len(),
                    got: v.len(),
                });
            }
        }
        Ok(Self {
            rho,
            eta,
            time: 0.0,
            mesh_id: mesh.id(),
        })
    }

    pub fn zeros(mesh: &Mesh1D) -> Self {
        Self {
            rho: vec![0.0; mesh.len()],
            eta: vec![0.0; mesh.len()],
            time: 0.0,
            mesh_id: mesh.id(),
        }
    }

    pub fn len(&self) -> usize {
        self.rho.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rho.is_empty()
    }

    pub fn masses(&self, mesh: &Mesh1D) -> (f64, f64) {
        (mesh.integrate(&self.rho), mesh.integrate(&self.eta))
    }

    pub fn min_values(&self) -> (f64, f64) {
        let min = |v: &[f64]| v.iter().copied().fold(f64::INFINITY, f64::min);
        (min(&self.rho), min(&self.eta))
    }

    pub fn is_finite(&self) -> bool {
        self.rho.iter().chain(&self.eta).all(|v| v.is_finite())
    }

    pub fn check_mesh(&self, mesh: &Mesh1D) -> Result<()> {
        if self.mesh_id != mesh.id() || self.len() != mesh.len() {
            return Err(Error::MeshMismatch);
        }
        Ok(())
    }
}

/// `d u_{i+1/2} = (u_{i+1} - u_i) / Δx_{i+1/2}` at the `N - 1` interior
/// interfaces.
pub fn discrete_gradient(u: &[f64], mesh: &Mesh1D) -> Vec<f64> {
    let mut out = vec![0.0; mesh.len().saturating_sub(1)];
    discrete_gradient_into(u, mesh, &mut out);
    out
}

pub fn discrete_gradient_into(u: &[f64], mesh: &Mesh1D, out: &mut [f64]) {
    for ((o, w), inv) in out.iter_mut().zip(u.windows(2)).zip(mesh.inv_half_widths()) {
        *o = (w[1] - w[0]) * inv;
    }
}

/// Logarithmic mean `(y - x) / (log y - log x)`, extended by the arithmetic
/// mean on the diagonal and by 0 when one argument vanishes.
pub fn log_mean(x: f64, y: f64) -> f64 {
    let (lo, hi) = if x <= y { (x, y) } else { (y, x) };
    if hi - lo <= 1e-8 * hi {
        return 0.5 * (lo + hi);
    }
    if lo <= 0.0 {
        return 0.0;
    }
    let d = if hi > 2.0 * lo {
        hi.ln() - lo.ln()
    } else {
        ((hi - lo) / lo).ln_1p()
    };
    ((hi - lo) / d).clamp(lo, hi)
}

fn x_log_x(x: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x * x.ln()
    }
}

/// `Σ_i Δx_i (ρ_i log ρ_i + η_i log η_i)` with `0 log 0 = 0`.
pub fn entropy(state: &State, mesh: &Mesh1D) -> f64 {
    mesh.widths()
        .iter()
        .zip(state.rho.iter().zip(&state.eta))
        .map(|(w, (&r, &e))| w * (x_log_x(r) + x_log_x(e)))
        .sum()
}

/// Time derivative of the entropy along `(dρ/dt, dη/dt)`:
/// `Σ_i Δx_i [(1 + log ρ_i) dρ_i/dt + (1 + log η_i) dη_i/dt]`.
/// `None` unless every cell is strictly positive.
pub fn entropy_rate(state: &State, mesh: &Mesh1D, drho: &[f64], deta: &[f64]) -> Option<f64> {
    if state.rho.iter().chain(&state.eta).any(|&v| v <= 0.0) {
        return None;
    }
    let sum = mesh
        .widths()
        .iter()
        .enumerate()
        .map(|(i, w)| {
            w * ((1.0 + state.rho[i].ln()) * drho[i] + (1.0 + state.eta[i].ln()) * deta[i])
        })
        .sum();
    Some(sum)
}

/// `ν Σ Δx_{i+1/2} |dU|² + (ε/4) Σ Δx_{i+1/2} (|dρ|² + |dη|²)`.
pub fn dissipation(state: &State, mesh: &Mesh1D, eps: f64, nu: f64) -> f64 {
    state
        .rho
        .windows(2)
        .zip(state.eta.windows(2))
        .zip(mesh.half_widths())
        .map(|((r, e), &hw)| {
            let dr = (r[1] - r[0]) / hw;
            let de = (e[1] - e[0]) / hw;
            let du = -(dr + de);
            hw * (nu * du * du + 0.25 * eps * (dr * dr + de * de))
        })
        .sum()
}

/// `Σ_i Δx_i ρ_i η_i`.
pub fn overlap(state: &State, mesh: &Mesh1D) -> f64 {
    mesh.widths()
        .iter()
        .zip(state.rho.iter().zip(&state.eta))
        .map(|(w, (r, e))| w * r * e)
        .sum()
}

/// Right-hand constant of the discrete entropy inequality,
///
/// ```text
/// C_ε = (b - a)/ε · ((‖W₁₁′‖ + ‖W₂₁′‖) m₁ + (‖W₁₂′‖ + ‖W₂₂′‖) m₂)
/// ```
///
/// with norms in slot order `[w11, w12, w21, w22]`. There is no bound
/// without self-diffusion, so `ε ≤ 0` yields `None`.
pub fn energy_bound_constant(eps: f64, m1: f64, m2: f64, norms: [f64; 4], length: f64) -> Option<f64> {
    if eps <= 0.0 {
        return None;
    }
    let [w11, w12, w21, w22] = norms;
    Some(length / eps * ((w11 + w21) * m1 + (w12 + w22) * m2))
}

/// Parameters the diagnostics need beyond the state itself.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DiagnosticsContext {
    pub eps: f64,
    pub nu: f64,
    /// `‖W′‖_∞` in slot order `[w11, w12, w21, w22]`.
    pub kernel_norms: [f64; 4],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiagnosticsRecord {
    pub time: f64,
    pub mass_rho: f64,
    pub mass_eta: f64,
    pub min_rho: f64,
    pub min_eta: f64,
    pub entropy: f64,
    pub dissipation: f64,
    /// Backward-difference `d/dt(entropy) + dissipation - C_ε`; absent for
    /// the first record and when `C_ε` is undefined.
    pub energy_residual: Option<f64>,
    pub overlap: f64,
}

pub fn compute_diagnostics(
    state: &State,
    mesh: &Mesh1D,
    ctx: &DiagnosticsContext,
    previous: Option<&DiagnosticsRecord>,
) -> DiagnosticsRecord {
    let (mass_rho, mass_eta) = state.masses(mesh);
    let (min_rho, min_eta) = state.min_values();
    let entropy = entropy(state, mesh);
    let dissipation = dissipation(state, mesh, ctx.eps, ctx.nu);
    let bound = energy_bound_constant(ctx.eps, mass_rho, mass_eta, ctx.kernel_norms, mesh.length());
    let energy_residual = match (previous, bound) {
        (Some(prev), Some(c)) if state.time > prev.time => {
            Some((entropy - prev.entropy) / (state.time - prev.time) + dissipation - c)
        }
        _ => None,
    };
    DiagnosticsRecord {
        time: state.time,
        mass_rho,
        mass_eta,
        min_rho,
        min_eta,
        entropy,
        dissipation,
        energy_residual,
        overlap: overlap(state, mesh),
    }
}

/// Initial density profiles on `[a, b]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum InitialProfile {
    Zero,
    Constant {
        value: f64,
    },
    /// `height · 1_{[lo, hi]}`.
    Indicator {
        lo: f64,
        hi: f64,
        #[serde(default = "one")]
        height: f64,
    },
    /// `floor + c ((x - lo)(hi - x))⁺`, with `c` chosen so the total mass
    /// on the mesh equals `mass`. The bump is truncated at the domain
    /// boundary before normalizing.
    Parabola {
        lo: f64,
        hi: f64,
        mass: f64,
        #[serde(default)]
        floor: f64,
    },
    /// Piecewise linear through the samples, zero outside them.
    Tabulated { x: Vec<f64>, y: Vec<f64> },
}

fn one() -> f64 {
    1.0
}

/// Cell averages of a profile together with the normalizing constant `c`
/// when one was computed.
#[derive(Debug, Clone, PartialEq)]
pub struct Projection {
    pub values: Vec<f64>,
    pub normalization: Option<f64>,
}

impl InitialProfile {
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            InitialProfile::Indicator { lo, hi, .. } | InitialProfile::Parabola { lo, hi, .. } => {
                vec![*lo, *hi]
            }
            InitialProfile::Tabulated { x, .. } => x.clone(),
            _ => Vec::new(),
        }
    }

    fn shape(&self, x: f64) -> f64 {
        match self {
            InitialProfile::Zero => 0.0,
            InitialProfile::Constant { value } => *value,
            InitialProfile::Indicator { lo, hi, height } => {
                if x >= *lo && x <= *hi {
                    *height
                } else {
                    0.0
                }
            }
            InitialProfile::Parabola { lo, hi, .. } => ((x - lo) * (hi - x)).max(0.0),
            InitialProfile::Tabulated { x: xs, y: ys } => {
                if xs.is_empty() || x < xs[0] || x > xs[xs.len() - 1] {
                    return 0.0;
                }
                let k = xs.partition_point(|&s| s <= x).clamp(1, xs.len() - 1);
                let t = (x - xs[k - 1]) / (xs[k] - xs[k - 1]);
                ys[k - 1] + t * (ys[k] - ys[k - 1])
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidParameter(m));
        match self {
            InitialProfile::Indicator { lo, hi, .. } | InitialProfile::Parabola { lo, hi, .. }
                if !(lo < hi) =>
            {
                bad(format!("profile needs lo < hi, got [{lo}, {hi}]"))
            }
            InitialProfile::Parabola { mass, floor, .. } if *mass < 0.0 || *floor < 0.0 => {
                bad("parabola mass and floor must be nonnegative".into())
            }
            InitialProfile::Tabulated { x, y }
                if x.len() != y.len() || x.len() < 2 || x.windows(2).any(|w| w[1] <= w[0]) =>
            {
                bad("tabulated profile needs ≥ 2 strictly increasing samples".into())
            }
            _ => Ok(()),
        }
    }

    /// Cell averages `(1/Δx_i) ∫_{C_i} f`.
    pub fn project(&self, mesh: &Mesh1D, quadrature_order: usize) -> Result<Projection> {
        self.validate()?;
        let rule = GaussLegendre::new(quadrature_order.max(1));
        let breaks = self.breakpoints();
        let averages: Vec<f64> = mesh
            .edges()
            .windows(2)
            .map(|e| rule.integrate_split(e[0], e[1], &breaks, |x| self.shape(x)) / (e[1] - e[0]))
            .collect();
        match self {
            InitialProfile::Parabola { mass, floor, .. } => {
                let bump = mesh.integrate(&averages);
                let target = mass - floor * mesh.length();
                if target < 0.0 {
                    return Err(Error::InvalidParameter(format!(
                        "floor {floor} alone exceeds the requested mass {mass}"
                    )));
                }
                if bump <= 0.0 {
                    return Err(Error::InvalidParameter(
                        "parabola support does not intersect the domain".into(),
                    ));
                }
                let c = target / bump;
                Ok(Projection {
                    values: averages.iter().map(|v| floor + c * v).collect(),
                    normalization: Some(c),
                })
            }
            _ => Ok(Projection {
                values: averages,
                normalization: None,
            }),
        }
    }
}

/// Projects two profiles onto the mesh as the initial state.
pub fn project_profiles(
    rho: &InitialProfile,
    eta: &InitialProfile,
    mesh: &Mesh1D,
    quadrature_order: usize,
) -> Result<State> {
    let r = rho.project(mesh, quadrature_order)?;
    let e = eta.project(mesh, quadrature_order)?;
    checked_state(mesh, r.values, e.values)
}

/// Cell averages of arbitrary functions as the initial state.
pub fn project_initial_data(
    f_rho: impl Fn(f64) -> f64,
    f_eta: impl Fn(f64) -> f64,
    mesh: &Mesh1D,
    quadrature_order: usize,
) -> Result<State> {
    let rule = GaussLegendre::new(quadrature_order.max(1));
    let average = |f: &dyn Fn(f64) -> f64| -> Vec<f64> {
        mesh.edges()
            .windows(2)
            .map(|e| rule.integrate(e[0], e[1], f) / (e[1] - e[0]))
            .collect()
    };
    checked_state(mesh, average(&f_rho), average(&f_eta))
}

pub(crate) fn checked_state(mesh: &Mesh1D, rho: Vec<f64>, eta: Vec<f64>) -> Result<State> {
    for (species, v) in [("rho", &rho), ("eta", &eta)] {
        if let Some(cell) = v.iter().position(|&x| !(x >= 0.0)) {
            return Err(Error::NegativeInitialData {
                species,
                cell,
                value: v[cell],
            });
        }
    }
    State::new(mesh, rho, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn indicator_on_aligned_mesh() {
        let mesh = Mesh1D::uniform(0.0, 17.0, 17 * 4).unwrap();
        let p = InitialProfile::Indicator {
            lo: 7.0,
            hi: 10.0,
            height: 1.0,
        };
        let s = project_profiles(&p, &p, &mesh, 8).unwrap();
        for (x, v) in mesh.centers().iter().zip(&s.rho) {
            let want = if (7.0..10.0).contains(x) { 1.0 } else { 0.0 };
            assert_eq!(*v, want, "x = {x}");
        }
        assert_eq!(s.time, 0.0);
    }

    #[test]
    fn zero_profile() {
        let mesh = Mesh1D::uniform(0.0, 1.0, 8).unwrap();
        let s = project_initial_data(|_| 0.0, |_| 0.0, &mesh, 8).unwrap();
        assert!(s.rho.iter().chain(&s.eta).all(|&v| v == 0.0));
    }

    #[test]
    fn parabola_is_normalized() {
        let mesh = Mesh1D::uniform(0.0, 5.0, 5 * 256).unwrap();
        let p = InitialProfile::Parabola {
            lo: 3.0,
            hi: 5.0,
            mass: 1.0,
            floor: 0.0,
        };
        let proj = p.project(&mesh, 8).unwrap();
        assert!((mesh.integrate(&proj.values) - 1.0).abs() < 1e-10);
        // ∫_3^5 (x-3)(5-x) dx = 4/3
        assert!((proj.normalization.unwrap() - 0.75).abs() < 1e-12);
    }

    #[test]
    fn truncated_parabola_records_effective_constant() {
        let mesh = Mesh1D::uniform(0.0, 9.0, 9 * 16).unwrap();
        let p = InitialProfile::Parabola {
            lo: 6.5,
            hi: 9.5,
            mass: 1.0,
            floor: 0.0,
        };
        let proj = p.project(&mesh, 8).unwrap();
        assert!((mesh.integrate(&proj.values) - 1.0).abs() < 1e-12);
        // ∫_{6.5}^{9} (x-6.5)(9.5-x) dx = 2.5³/2 ... evaluated in closed form
        let f = |x: f64| -x * x * x / 3.0 + 8.0 * x * x - 61.75 * x;
        let want = 1.0 / (f(9.0) - f(6.5));
        assert!((proj.normalization.unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn negative_averages_are_rejected_with_cell() {
        let mesh = Mesh1D::uniform(0.0, 1.0, 4).unwrap();
        let err = project_initial_data(|x| if x > 0.5 { -1.0 } else { 1.0 }, |_| 1.0, &mesh, 4)
            .unwrap_err();
        match err {
            Error::NegativeInitialData { species, cell, .. } => {
                assert_eq!(species, "rho");
                assert_eq!(cell, 2);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn gradient_examples() {
        let mesh = Mesh1D::uniform(0.0, 3.0, 3).unwrap();
        assert_eq!(discrete_gradient(&[2.0, 2.0, 2.0], &mesh), vec![0.0, 0.0]);
        assert_eq!(discrete_gradient(&[0.0, 1.0, 3.0], &mesh), vec![1.0, 2.0]);
        let m = Mesh1D::uniform(-1.0, 2.0, 12).unwrap();
        assert!(discrete_gradient(m.centers(), &m)
            .iter()
            .all(|g| (g - 1.0).abs() < 1e-13));
    }

    #[test]
    fn log_mean_examples() {
        assert_eq!(log_mean(1.0, 1.0), 1.0);
        let e = std::f64::consts::E;
        assert!((log_mean(1.0, e) - (e - 1.0)).abs() < 1e-15);
        let m = log_mean(0.3, 0.7);
        assert!((0.3..=0.7).contains(&m));
        assert_eq!(log_mean(0.0, 2.0), 0.0);
        assert_eq!(log_mean(0.0, 0.0), 0.0);
        assert!((log_mean(5e-324, 1.0) - 1.0 / (-(5e-324f64).ln())).abs() < 1e-15);
    }

    #[test]
    fn diagnostics_examples() {
        let ctx = DiagnosticsContext {
            eps: 0.1,
            nu: 0.5,
            kernel_norms: [0.0; 4],
        };
        let mesh = Mesh1D::uniform(0.0, 1.0, 10).unwrap();
        let flat = State::new(&mesh, vec![1.0; 10], vec![1.0; 10]).unwrap();
        let d = compute_diagnostics(&flat, &mesh, &ctx, None);
        assert_eq!(d.entropy, 0.0);
        assert_eq!(d.dissipation, 0.0);
        assert!((d.overlap - 1.0).abs() < 1e-15);
        assert_eq!(d.energy_residual, None);

        let mut rho = vec![0.0; 10];
        rho[4] = 10.0;
        let spike = State::new(&mesh, rho, vec![0.0; 10]).unwrap();
        let d = compute_diagnostics(&spike, &mesh, &ctx, None);
        assert!((d.mass_rho - 1.0).abs() < 1e-15);
        assert!((d.entropy - 10f64.ln()).abs() < 1e-14);
        assert_eq!(d.overlap, 0.0);
    }

    #[test]
    fn residual_uses_backward_difference() {
        let ctx = DiagnosticsContext {
            eps: 1.0,
            nu: 0.0,
            kernel_norms: [0.0; 4],
        };
        let mesh = Mesh1D::uniform(0.0, 1.0, 4).unwrap();
        let mut s = State::new(&mesh, vec![2.0; 4], vec![1.0; 4]).unwrap();
        let first = compute_diagnostics(&s, &mesh, &ctx, None);
        s.time = 0.5;
        s.rho = vec![1.0, 3.0, 2.0, 2.0];
        let second = compute_diagnostics(&s, &mesh, &ctx, Some(&first));
        let want = (second.entropy - first.entropy) / 0.5 + second.dissipation;
        assert!((second.energy_residual.unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn energy_constant_examples() {
        assert_eq!(energy_bound_constant(0.3, 1.0, 2.0, [0.0; 4], 4.0), Some(0.0));
        let c = energy_bound_constant(0.1, 1.0, 1.0, [1.0; 4], 9.0).unwrap();
        assert!((c - 360.0).abs() < 1e-10);
        assert_eq!(energy_bound_constant(0.0, 1.0, 1.0, [1.0; 4], 9.0), None);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(1000))]

        #[test]
        fn log_mean_is_contained(x in 0.0f64..1e6, y in 0.0f64..1e6) {
            let m = log_mean(x, y);
            prop_assert!(m.is_finite());
            prop_assert!(m >= x.min(y) && m <= x.max(y));
            if x > 0.0 && y > 0.0 && x != y {
                let lhs = m * (y.ln() - x.ln());
                prop_assert!((lhs - (y - x)).abs() <= 1e-7 * (y - x).abs() + 1e-12 * x.max(y));
            }
        }

        #[test]
        fn log_mean_handles_extremes(x in prop::sample::select(vec![0.0, 5e-324, 1e-310, 1e-200, 1.0, 1e300, f64::MAX]),
                                     y in prop::num::f64::POSITIVE | prop::num::f64::NORMAL | prop::num::f64::ZERO | prop::num::f64::SUBNORMAL) {
            let m = log_mean(x, y);
            prop_assert!(!m.is_nan());
            prop_assert!(m >= x.min(y) && m <= x.max(y));
        }

        #[test]
        fn close_arguments_use_the_average(x in 1e-300f64..1e300, t in 0.0f64..0.99e-8) {
            let y = x * (1.0 + t);
            prop_assert_eq!(log_mean(x, y), 0.5 * (x + y));
        }

        #[test]
        fn entropy_bounds(values in prop::collection::vec(0.0f64..1.0, 4..40)) {
            let n = values.len() / 2;
            let mesh = Mesh1D::uniform(0.0, 3.0, n).unwrap();
            let s = State::new(&mesh, values[..n].to_vec(), values[n..2 * n].to_vec()).unwrap();
            let e = entropy(&s, &mesh);
            prop_assert!(e <= 0.0);
            prop_assert!(e >= -2.0 * 3.0 / std::f64::consts::E);
        }

        #[test]
        fn entropy_lower_bound_any_state(values in prop::collection::vec(0.0f64..50.0, 4..40)) {
            let n = values.len() / 2;
            let mesh = Mesh1D::uniform(-1.0, 1.5, n).unwrap();
            let s = State::new(&mesh, values[..n].to_vec(), values[n..2 * n].to_vec()).unwrap();
            prop_assert!(entropy(&s, &mesh) >= -2.0 * 2.5 / std::f64::consts::E);
            prop_assert!(dissipation(&s, &mesh, 0.3, 0.7) >= 0.0);
        }

        #[test]
        fn gradient_of_constant_is_zero(c in -1e6f64..1e6, widths in prop::collection::vec(0.01f64..2.0, 2..50)) {
            let mesh = Mesh1D::graded(0.0, 1.0, &widths).unwrap();
            let u = vec![c; mesh.len()];
            prop_assert!(discrete_gradient(&u, &mesh).iter().all(|&g| g == 0.0));
        }

        #[test]
        fn parabola_projection_is_exact(lo in 0.0f64..4.0, w in 0.1f64..3.0, n in 4usize..200) {
            let mesh = Mesh1D::uniform(0.0, 5.0, n).unwrap();
            let hi = lo + w;
            let p = InitialProfile::Parabola { lo, hi, mass: 1.0, floor: 0.0 };
            let c = p.project(&mesh, 8).unwrap().normalization.unwrap();
            let clipped = hi.min(5.0);
            // closed-form ∫_lo^clipped (x-lo)(hi-x) dx
            let g = |x: f64| -x * x * x / 3.0 + (lo + hi) * x * x / 2.0 - lo * hi * x;
            let bump = g(clipped) - g(lo);
            prop_assert!((c * bump - 1.0).abs() < 1e-10, "c = {c}, bump = {bump}");
        }
    }
}
