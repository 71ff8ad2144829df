//! Interaction potentials and their discrete convolution weights.
//!
//! The discrete potential felt at center `x_i` from the mass in cell `C_j`
//! uses the cell-averaged kernel
//!
//! ```text
//! W^{i-j} = (1/Δx_j) ∫_{C_j} W(x_i - s) ds
//! ```
//!
//! evaluated with Gauss–Legendre quadrature. Cells are split wherever the
//! argument crosses a kink of the kernel (the origin for `|x|`, the nodes
//! of a table) so these are integrated without loss of order, and cells
//! much wider than a Gaussian kernel's transition are subdivided. For
//! Gaussian kernels, pieces ending at the origin are integrated in `√|y|`,
//! which absorbs the cusp of `|x|^p` for non-integer `p`.

use std::ops::Range;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Mesh1D, MeshId};
use crate::quadrature::GaussLegendre;

/// Default number of Gauss–Legendre points per cell.
pub const DEFAULT_QUADRATURE_ORDER: usize = 8;

/// An interaction potential `W(x)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelSpec {
    Zero,
    /// `A (1 - exp(-|x|^p / (p s)))`.
    Gaussian {
        amplitude: f64,
        exponent: f64,
        scale: f64,
    },
    /// `x² / 2`.
    Quadratic,
    /// `±|x|`.
    Absolute { sign: i8 },
    /// Piecewise linear interpolation of samples. An even table is queried
    /// at `|x|`.
    Tabulated { x: Vec<f64>, y: Vec<f64>, even: bool },
}

impl KernelSpec {
    pub fn gaussian(amplitude: f64, exponent: f64, scale: f64) -> Self {
        KernelSpec::Gaussian {
            amplitude,
            exponent,
            scale,
        }
    }

    pub fn absolute(sign: i8) -> Self {
        KernelSpec::Absolute { sign }
    }

    pub fn is_zero(&self) -> bool {
        match self {
            KernelSpec::Zero => true,
            KernelSpec::Gaussian { amplitude, .. } => *amplitude == 0.0,
            KernelSpec::Tabulated { y, .. } => y.iter().all(|&v| v == 0.0),
            _ => false,
        }
    }

    pub fn is_even(&self) -> bool {
        match self {
            KernelSpec::Tabulated { even, .. } => *even,
            _ => true,
        }
    }

    /// Checks parameters for internal consistency.
    pub fn validate(&self) -> Result<()> {
        match self {
            KernelSpec::Zero | KernelSpec::Quadratic => Ok(()),
            KernelSpec::Gaussian {
                amplitude,
                exponent,
                scale,
            } => {
                if !amplitude.is_finite() {
                    return Err(Error::InvalidKernel("amplitude must be finite".into()));
                }
                if !(*exponent > 0.0 && exponent.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "exponent must be positive, got {exponent}"
                    )));
                }
                if !(*scale > 0.0 && scale.is_finite()) {
                    return Err(Error::InvalidKernel(format!(
                        "scale must be positive, got {scale}"
                    )));
                }
                Ok(())
            }
            KernelSpec::Absolute { sign } => {
                if *sign == 1 || *sign == -1 {
                    Ok(())
                } else {
                    Err(Error::InvalidKernel(format!(
                        "sign must be +1 or -1, got {sign}"
                    )))
                }
            }
            KernelSpec::Tabulated { x, y, even } => {
                if x.len() != y.len() || x.len() < 2 {
                    return Err(Error::InvalidKernel(
                        "tabulated kernel needs at least two (x, y) pairs of equal length".into(),
                    ));
                }
                if x.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::InvalidKernel(
                        "tabulated sample points must be strictly increasing".into(),
                    ));
                }
                if x.iter().chain(y).any(|v| !v.is_finite()) {
                    return Err(Error::InvalidKernel("tabulated values must be finite".into()));
                }
                if *even && x[0] > 0.0 {
                    return Err(Error::InvalidKernel(
                        "an even tabulated kernel must be sampled from x = 0".into(),
                    ));
                }
                Ok(())
            }
        }
    }

    /// `W(x)`.
    pub fn evaluate(&self, x: f64) -> Result<f64> {
        Ok(match self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Gaussian {
                amplitude,
                exponent,
                scale,
            } => amplitude * -(-x.abs().powf(*exponent) / (exponent * scale)).exp_m1(),
            KernelSpec::Quadratic => 0.5 * x * x,
            KernelSpec::Absolute { sign } => f64::from(*sign) * x.abs(),
            KernelSpec::Tabulated { x: xs, y: ys, even } => {
                let q = if *even { x.abs() } else { x };
                let (lo, hi) = (xs[0], xs[xs.len() - 1]);
                if !(q >= lo && q <= hi) {
                    return Err(Error::Extrapolation { x, lo, hi });
                }
                let k = xs.partition_point(|&s| s <= q).clamp(1, xs.len() - 1);
                let t = (q - xs[k - 1]) / (xs[k] - xs[k - 1]);
                ys[k - 1] + t * (ys[k] - ys[k - 1])
            }
        })
    }

    /// `‖W′‖_∞` over arguments in `[-diameter, diameter]`, where `diameter`
    /// is the length of the computational domain.
    pub fn lipschitz_norm(&self, diameter: f64) -> f64 {
        match self {
            KernelSpec::Zero => 0.0,
            KernelSpec::Quadratic => diameter,
            KernelSpec::Absolute { .. } => 1.0,
            KernelSpec::Gaussian {
                amplitude,
                exponent: p,
                scale: s,
            } => {
                let a = amplitude.abs();
                if a == 0.0 {
                    return 0.0;
                }
                if *p < 1.0 {
                    return f64::INFINITY;
                }
                if *p == 1.0 {
                    return a / s;
                }
                // |W'(x)| = A x^{p-1}/s · exp(-x^p/(p s)) peaks at x^p = (p-1) s.
                let peak = ((p - 1.0) * s).powf(1.0 / p);
                let x = peak.min(diameter);
                a * x.powf(p - 1.0) / s * (-x.powf(*p) / (p * s)).exp()
            }
            KernelSpec::Tabulated { x, y, .. } => x
                .windows(2)
                .zip(y.windows(2))
                .map(|(xs, ys)| ((ys[1] - ys[0]) / (xs[1] - xs[0])).abs())
                .fold(0.0, f64::max),
        }
    }

    /// Arguments where the kernel is not smooth.
    fn breakpoints(&self) -> Vec<f64> {
        match self {
            KernelSpec::Tabulated { x, even: true, .. } => x.iter().flat_map(|&v| [v, -v]).chain([0.0]).collect(),
            KernelSpec::Tabulated { x, .. } => x.clone(),
            _ => vec![0.0],
        }
    }

    /// Length over which a Gaussian kernel changes appreciably,
    /// `(p s)^{1/p}`. Quadrature pieces are kept below half of it.
    fn feature_length(&self) -> Option<f64> {
        match *self {
            KernelSpec::Gaussian { exponent, scale, .. } => Some((exponent * scale).powf(1.0 / exponent)),
            _ => None,
        }
    }

    /// `‖W″‖_∞` over `[-diameter, diameter]`, or `None` where the second
    /// derivative is not bounded.
    pub fn second_derivative_bound(&self, diameter: f64) -> Option<f64> {
        match self {
            KernelSpec::Zero => Some(0.0),
            KernelSpec::Quadratic => Some(1.0),
            KernelSpec::Absolute { .. } | KernelSpec::Tabulated { .. } => None,
            KernelSpec::Gaussian {
                amplitude,
                exponent: p,
                scale: s,
            } => {
                if *amplitude == 0.0 {
                    return Some(0.0);
                }
                if *p < 2.0 {
                    return None;
                }
                let samples = 20_000;
                let second = |x: f64| {
                    let e = (-x.powf(*p) / (p * s)).exp();
                    amplitude / s * e * ((p - 1.0) * x.powf(p - 2.0) - x.powf(2.0 * p - 2.0) / s)
                };
                Some(
                    (0..=samples)
                        .map(|k| second(diameter * k as f64 / samples as f64).abs())
                        .fold(0.0, f64::max),
                )
            }
        }
    }
}

/// The four interaction slots. `w12` acts on the second species in the
/// first equation, `w21` on the first species in the second equation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KernelSet {
    pub w11: KernelSpec,
    pub w12: KernelSpec,
    pub w21: KernelSpec,
    pub w22: KernelSpec,
}

impl KernelSet {
    pub fn zero() -> Self {
        Self {
            w11: KernelSpec::Zero,
            w12: KernelSpec::Zero,
            w21: KernelSpec::Zero,
            w22: KernelSpec::Zero,
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = &KernelSpec> {
        [&self.w11, &self.w12, &self.w21, &self.w22].into_iter()
    }

    pub fn is_zero(&self) -> bool {
        self.iter().all(KernelSpec::is_zero)
    }

    /// Lipschitz norms in slot order `[w11, w12, w21, w22]`.
    pub fn lipschitz_norms(&self, diameter: f64) -> [f64; 4] {
        [
            self.w11.lipschitz_norm(diameter),
            self.w12.lipschitz_norm(diameter),
            self.w21.lipschitz_norm(diameter),
            self.w22.lipschitz_norm(diameter),
        ]
    }

    pub fn validate(&self) -> Result<()> {
        self.iter().try_for_each(KernelSpec::validate)
    }
}

#[derive(Debug, Clone)]
enum Weights {
    Zero,
    /// Entry `k + n - 1` holds the weight for offset `i - j = k`.
    Toeplitz(Vec<f64>),
    /// Row-major `n × n`.
    Dense(Vec<f64>),
}

/// Cell-averaged kernel weights `W^{i-j}` for one interaction slot.
#[derive(Debug, Clone)]
pub struct ConvolutionMatrix {
    weights: Weights,
    n: usize,
    mesh_id: MeshId,
}

impl ConvolutionMatrix {
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn mesh_id(&self) -> MeshId {
        self.mesh_id
    }

    pub fn is_zero(&self) -> bool {
        matches!(self.weights, Weights::Zero)
    }

    /// Offset weights `w(k)` for `k = -(n-1)..=(n-1)` when the matrix is
    /// Toeplitz.
    pub fn toeplitz_offsets(&self) -> Option<&[f64]> {
        match &self.weights {
            Weights::Toeplitz(w) => Some(w),
            _ => None,
        }
    }

    /// `W^{i-j}`.
    pub fn weight(&self, i: usize, j: usize) -> f64 {
        match &self.weights {
            Weights::Zero => 0.0,
            Weights::Toeplitz(w) => w[i + self.n - 1 - j],
            Weights::Dense(w) => w[i * self.n + j],
        }
    }

    /// `out_i += scale · Σ_j Δx_j W^{i-j} u_j`, summed directly.
    pub fn accumulate(&self, widths: &[f64], u: &[f64], scale: f64, out: &mut [f64]) {
        self.accumulate_range(widths, u, scale, out, 0..self.n);
    }

    /// [`accumulate`](Self::accumulate) with both `i` and `j` restricted
    /// to `range`; `u` is taken to vanish outside it.
    pub fn accumulate_range(
        &self,
        widths: &[f64],
        u: &[f64],
        scale: f64,
        out: &mut [f64],
        range: Range<usize>,
    ) {
        let n = self.n;
        let (lo, hi) = (range.start, range.end);
        let mass: Vec<f64> = (lo..hi).map(|j| widths[j] * u[j]).collect();
        let row_sum = |i: usize| -> f64 {
            match &self.weights {
                Weights::Zero => 0.0,
                Weights::Toeplitz(w) => {
                    // w[i - j + n - 1] for j = lo..hi, read backwards.
                    let row = &w[i + n - hi..i + n - lo];
                    row.iter().rev().zip(&mass).map(|(a, b)| a * b).sum()
                }
                Weights::Dense(w) => w[i * n + lo..i * n + hi]
                    .iter()
                    .zip(&mass)
                    .map(|(a, b)| a * b)
                    .sum(),
            }
        };
        if self.is_zero() {
            return;
        }
        let out = &mut out[lo..hi];
        if hi - lo >= PARALLEL_ROWS {
            out.par_iter_mut()
                .enumerate()
                .for_each(|(k, o)| *o += scale * row_sum(lo + k));
        } else {
            for (k, o) in out.iter_mut().enumerate() {
                *o += scale * row_sum(lo + k);
            }
        }
    }
}

/// Direct sums over fewer rows than this stay on the calling thread.
const PARALLEL_ROWS: usize = 512;

/// Cap on the subintervals of one cell when resolving a narrow kernel.
const MAX_PIECES: f64 = 64.0;

/// Precomputes `W^{i-j}` for `spec` on `mesh` with `quadrature_order`
/// Gauss–Legendre points per piece. Cells are split at the kinks of the
/// kernel, and cells wide against a Gaussian kernel are subdivided.
pub fn precompute_weights(
    spec: &KernelSpec,
    mesh: &Mesh1D,
    quadrature_order: usize,
) -> Result<ConvolutionMatrix> {
    spec.validate()?;
    if quadrature_order == 0 {
        return Err(Error::InvalidParameter(
            "quadrature order must be at least 1".into(),
        ));
    }
    let n = mesh.len();
    let mesh_id = mesh.id();
    if spec.is_zero() {
        return Ok(ConvolutionMatrix {
            weights: Weights::Zero,
            n,
            mesh_id,
        });
    }
    let rule = GaussLegendre::new(quadrature_order);
    let kinks = spec.breakpoints();
    let feature = spec.feature_length();
    let average = |lo: f64, hi: f64| -> Result<f64> {
        let mut breaks = kinks.clone();
        if let Some(len) = feature {
            let pieces = ((hi - lo) / (0.5 * len)).ceil().min(MAX_PIECES) as usize;
            breaks.extend((1..pieces).map(|k| lo + (hi - lo) * k as f64 / pieces as f64));
        }
        let mut err = None;
        let f = |y| match spec.evaluate(y) {
            Ok(v) => v,
            Err(e) => {
                err.get_or_insert(e);
                0.0
            }
        };
        // Only the Gaussian family has a cusp; the others are piecewise
        // polynomial and integrate exactly in y.
        let integral = if feature.is_some() {
            rule.integrate_split_cusp(lo, hi, &breaks, f)
        } else {
            rule.integrate_split(lo, hi, &breaks, f)
        };
        match err {
            Some(e) => Err(e),
            None => Ok(integral / (hi - lo)),
        }
    };

    let weights = if mesh.is_uniform() {
        let dx = mesh.widths()[0];
        let offsets = (0..2 * n - 1)
            .into_par_iter()
            .map(|idx| {
                let k = idx as f64 - (n - 1) as f64;
                average((k - 0.5) * dx, (k + 0.5) * dx)
            })
            .collect::<Result<Vec<f64>>>()?;
        Weights::Toeplitz(offsets)
    } else {
        let edges = mesh.edges();
        let centers = mesh.centers();
        let dense = (0..n * n)
            .into_par_iter()
            .map(|idx| {
                let (i, j) = (idx / n, idx % n);
                // s ∈ C_j maps to y = x_i - s ∈ [x_i - x_{j+1/2}, x_i - x_{j-1/2}].
                average(centers[i] - edges[j + 1], centers[i] - edges[j])
            })
            .collect::<Result<Vec<f64>>>()?;
        Weights::Dense(dense)
    };
    Ok(ConvolutionMatrix {
        weights,
        n,
        mesh_id,
    })
}
