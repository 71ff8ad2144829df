//! Nonlocal potentials `(V_1)_i`, `(V_2)_i` from the four convolution slots.
//!
//! ```text
//! (V_1)_i = -Σ_j Δx_j (W_11^{i-j} ρ_j + W_12^{i-j} η_j)
//! (V_2)_i = -Σ_j Δx_j (W_22^{i-j} η_j + W_21^{i-j} ρ_j)
//! ```
//!
//! On uniform meshes the weights are Toeplitz and the sums are evaluated by
//! circulant embedding. Both species are packed into a single complex
//! transform (`ρ + iη`) and both potentials come back from a single inverse
//! transform (`V_1 + iV_2`).

use std::fmt;
use std::ops::Range;
use std::sync::{Arc, Mutex};

use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernels::{precompute_weights, ConvolutionMatrix, KernelSet};
use crate::mesh::{Mesh1D, MeshId};

/// Smallest uniform mesh on which the transform path is used by default.
pub const FFT_THRESHOLD: usize = 64;

/// How the convolution sums are evaluated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Assembly {
    /// Direct `O(N²)` sums over the stored weights.
    Direct,
    /// Circulant embedding when the mesh is uniform and large enough,
    /// direct sums otherwise.
    Auto,
}

/// The four precomputed slots plus the transform plan when one applies.
pub struct InteractionSet {
    pub w11: ConvolutionMatrix,
    pub w12: ConvolutionMatrix,
    pub w21: ConvolutionMatrix,
    pub w22: ConvolutionMatrix,
    mesh_id: MeshId,
    fft: Option<ToeplitzFft>,
}

impl fmt::Debug for InteractionSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("InteractionSet")
            .field("n", &self.w11.len())
            .field("mesh_id", &self.mesh_id)
            .field("fft", &self.fft.is_some())
            .finish()
    }
}

struct ToeplitzFft {
    n: usize,
    dx: f64,
    /// Offset weights per slot (`None` for a zero slot), as in
    /// [`ConvolutionMatrix::toeplitz_offsets`].
    offsets: [Option<Vec<f64>>; 4],
    plans: Mutex<Vec<Arc<SpectralPlan>>>,
}

/// Transforms of one length with the kernel spectra embedded at it.
struct SpectralPlan {
    len: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
    // With X the transform of ρ + iη and K_ij the kernel spectra scaled by
    // -Δx / len, the transform of V₁ + iV₂ is P X(k) + Q conj(X(-k)).
    p: Vec<Complex64>,
    q: Vec<Complex64>,
}

/// Reusable buffers for [`InteractionSet::apply`].
#[derive(Debug, Default, Clone)]
pub struct InteractionScratch {
    packed: Vec<Complex64>,
    mixed: Vec<Complex64>,
    fft: Vec<Complex64>,
}

impl InteractionSet {
    pub fn new(
        kernels: &KernelSet,
        mesh: &Mesh1D,
        quadrature_order: usize,
        assembly: Assembly,
    ) -> Result<Self> {
        kernels.validate()?;
        let w11 = precompute_weights(&kernels.w11, mesh, quadrature_order)?;
        let w12 = precompute_weights(&kernels.w12, mesh, quadrature_order)?;
        let w21 = precompute_weights(&kernels.w21, mesh, quadrature_order)?;
        let w22 = precompute_weights(&kernels.w22, mesh, quadrature_order)?;
        let all_zero = [&w11, &w12, &w21, &w22].iter().all(|m| m.is_zero());
        let fft = if assembly == Assembly::Auto
            && mesh.is_uniform()
            && mesh.len() >= FFT_THRESHOLD
            && !all_zero
        {
            Some(ToeplitzFft {
                n: mesh.len(),
                dx: mesh.widths()[0],
                offsets: [&w11, &w12, &w21, &w22].map(|m| m.toeplitz_offsets().map(<[f64]>::to_vec)),
                plans: Mutex::new(Vec::new()),
            })
        } else {
            None
        };
        Ok(Self {
            w11,
            w12,
            w21,
            w22,
            mesh_id: mesh.id(),
            fft,
        })
    }

    pub fn mesh_id(&self) -> MeshId {
        self.mesh_id
    }

    pub fn is_zero(&self) -> bool {
        [&self.w11, &self.w12, &self.w21, &self.w22]
            .iter()
            .all(|m| m.is_zero())
    }

    pub fn uses_fft(&self) -> bool {
        self.fft.is_some()
    }

    /// Writes `V_1` and `V_2` for the densities `rho`, `eta`.
    pub fn apply(
        &self,
        mesh: &Mesh1D,
        rho: &[f64],
        eta: &[f64],
        v1: &mut [f64],
        v2: &mut [f64],
        scratch: &mut InteractionScratch,
    ) -> Result<()> {
        self.check(mesh, [rho.len(), eta.len(), v1.len(), v2.len()])?;
        v1.fill(0.0);
        v2.fill(0.0);
        self.apply_unchecked(mesh, rho, eta, v1, v2, 0..mesh.len(), scratch);
        Ok(())
    }

    /// Writes `V_1`, `V_2` on the cells of `range` only, for densities that
    /// vanish outside it. Entries outside `range` are left untouched.
    pub fn apply_range(
        &self,
        mesh: &Mesh1D,
        rho: &[f64],
        eta: &[f64],
        v1: &mut [f64],
        v2: &mut [f64],
        range: Range<usize>,
        scratch: &mut InteractionScratch,
    ) -> Result<()> {
        self.check(mesh, [rho.len(), eta.len(), v1.len(), v2.len()])?;
        if range.start > range.end || range.end > mesh.len() {
            return Err(Error::InvalidParameter(format!(
                "cell range {range:?} outside 0..{}",
                mesh.len()
            )));
        }
        v1[range.clone()].fill(0.0);
        v2[range.clone()].fill(0.0);
        self.apply_unchecked(mesh, rho, eta, v1, v2, range, scratch);
        Ok(())
    }

    fn check(&self, mesh: &Mesh1D, lens: [usize; 4]) -> Result<()> {
        if mesh.id() != self.mesh_id {
            return Err(Error::MeshMismatch);
        }
        let n = mesh.len();
        match lens.into_iter().find(|&l| l != n) {
            Some(got) => Err(Error::LengthMismatch { expected: n, got }),
            None => Ok(()),
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn apply_unchecked(
        &self,
        mesh: &Mesh1D,
        rho: &[f64],
        eta: &[f64],
        v1: &mut [f64],
        v2: &mut [f64],
        range: Range<usize>,
        scratch: &mut InteractionScratch,
    ) {
        if self.is_zero() || range.is_empty() {
            return;
        }
        match &self.fft {
            Some(fft) if range.len() >= FFT_THRESHOLD => {
                fft.apply(rho, eta, v1, v2, range, scratch)
            }
            _ => {
                let w = mesh.widths();
                self.w11.accumulate_range(w, rho, -1.0, v1, range.clone());
                self.w12.accumulate_range(w, eta, -1.0, v1, range.clone());
                self.w22.accumulate_range(w, eta, -1.0, v2, range.clone());
                self.w21.accumulate_range(w, rho, -1.0, v2, range);
            }
        }
    }
}

/// Smallest `2^a 3^b ≥ m`.
fn smooth_length(m: usize) -> usize {
    let mut best = usize::MAX;
    let mut p3 = 1usize;
    while p3 < 2 * m.max(1) {
        let mut v = p3;
        while v < m {
            v *= 2;
        }
        best = best.min(v);
        p3 *= 3;
    }
    best
}

impl ToeplitzFft {
    fn plan(&self, m: usize) -> Arc<SpectralPlan> {
        let len = smooth_length(2 * m);
        let mut plans = self.plans.lock().unwrap_or_else(|e| e.into_inner());
        if let Some(p) = plans.iter().find(|p| p.len == len) {
            return Arc::clone(p);
        }
        let mut planner = FftPlanner::new();
        let forward = planner.plan_fft_forward(len);
        let inverse = planner.plan_fft_inverse(len);
        let scale = -self.dx / len as f64;
        let n = self.n;
        // Offsets beyond len/2 never couple cells of a range of length m.
        let reach = n.min(len / 2);
        let spectrum = |w: &Option<Vec<f64>>| -> Vec<Complex64> {
            let mut c = vec![Complex64::new(0.0, 0.0); len];
            if let Some(w) = w {
                for k in 0..reach {
                    c[k] = Complex64::new(w[k + n - 1], 0.0);
                }
                for k in 1..reach {
                    c[len - k] = Complex64::new(w[n - 1 - k], 0.0);
                }
            }
            forward.process(&mut c);
            c.iter_mut().for_each(|z| *z *= scale);
            c
        };
        let [w11, w12, w21, w22] = &self.offsets;
        let (k11, k12, k21, k22) = (spectrum(w11), spectrum(w12), spectrum(w21), spectrum(w22));
        // ρ̂ = (X + X̄₋)/2 and η̂ = -i(X - X̄₋)/2; collect the coefficients of
        // X and X̄₋ in V̂₁ + iV̂₂.
        let i = Complex64::new(0.0, 1.0);
        let (mut p, mut q) = (Vec::with_capacity(len), Vec::with_capacity(len));
        for k in 0..len {
            let a1 = 0.5 * (k11[k] - i * k12[k]);
            let b1 = 0.5 * (k11[k] + i * k12[k]);
            let a2 = 0.5 * (k21[k] - i * k22[k]);
            let b2 = 0.5 * (k21[k] + i * k22[k]);
            p.push(a1 + i * a2);
            q.push(b1 + i * b2);
        }
        let plan = Arc::new(SpectralPlan {
            len,
            p,
            q,
            forward,
            inverse,
        });
        plans.push(Arc::clone(&plan));
        plan
    }

    fn apply(
        &self,
        rho: &[f64],
        eta: &[f64],
        v1: &mut [f64],
        v2: &mut [f64],
        range: Range<usize>,
        scratch: &mut InteractionScratch,
    ) {
        let plan = self.plan(range.len());
        let len = plan.len;
        let zero = Complex64::new(0.0, 0.0);
        let m = range.len();
        scratch.packed.resize(len, zero);
        scratch.mixed.resize(len, zero);
        let need = plan
            .forward
            .get_inplace_scratch_len()
            .max(plan.inverse.get_inplace_scratch_len());
        if scratch.fft.len() < need {
            scratch.fft.resize(need, zero);
        }

        let (r, e) = (&rho[range.clone()], &eta[range.clone()]);
        let (head, tail) = scratch.packed.split_at_mut(m);
        for (z, (&a, &b)) in head.iter_mut().zip(r.iter().zip(e)) {
            *z = Complex64::new(a, b);
        }
        tail.fill(zero);
        plan.forward
            .process_with_scratch(&mut scratch.packed, &mut scratch.fft);

        let x = &scratch.packed;
        let out = &mut scratch.mixed;
        out[0] = plan.p[0] * x[0] + plan.q[0] * x[0].conj();
        let (p, q, x_up) = (&plan.p[1..], &plan.q[1..], &x[1..]);
        let out = &mut out[1..];
        // Index k pairs with len - k; walking the reversed slice avoids a
        // modulo per entry.
        for ((((o, &p), &q), &xk), &xr) in out.iter_mut().zip(p).zip(q).zip(x_up).zip(x_up.iter().rev()) {
            *o = p * xk + q * xr.conj();
        }
        plan.inverse
            .process_with_scratch(&mut scratch.mixed, &mut scratch.fft);
        let (v1, v2) = (&mut v1[range.clone()], &mut v2[range]);
        for ((z, a), b) in scratch.mixed[..m].iter().zip(v1.iter_mut()).zip(v2.iter_mut()) {
            *a = z.re;
            *b = z.im;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::KernelSpec;
    use proptest::prelude::*;

    fn gaussian_set() -> KernelSet {
        KernelSet {
            w11: KernelSpec::gaussian(1.0, 4.0, 0.1),
            w12: KernelSpec::gaussian(1.0, 2.0, 0.1),
            w21: KernelSpec::gaussian(-1.0, 2.0, 0.1),
            w22: KernelSpec::gaussian(1.0, 4.0, 0.1),
        }
    }

    fn potentials(set: &InteractionSet, mesh: &Mesh1D, rho: &[f64], eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let n = mesh.len();
        let (mut v1, mut v2) = (vec![0.0; n], vec![0.0; n]);
        set.apply(mesh, rho, eta, &mut v1, &mut v2, &mut InteractionScratch::default())
            .unwrap();
        (v1, v2)
    }

    #[test]
    fn single_cell_mass_gives_one_term_sum() {
        let mesh = Mesh1D::uniform(0.0, 1.0, 10).unwrap();
        let kernels = KernelSet {
            w11: KernelSpec::Quadratic,
            ..KernelSet::zero()
        };
        let set = InteractionSet::new(&kernels, &mesh, 8, Assembly::Direct).unwrap();
        let j0 = 3;
        let mut rho = vec![0.0; 10];
        rho[j0] = 1.0 / mesh.widths()[j0];
        let eta = vec![0.0; 10];
        let (v1, v2) = potentials(&set, &mesh, &rho, &eta);
        for i in 0..10 {
            let want = -set.w11.weight(i, j0) * 1.0;
            assert!((v1[i] - want).abs() < 1e-15);
            assert_eq!(v2[i], 0.0);
        }
    }

    #[test]
    fn mesh_mismatch_is_rejected() {
        let mesh = Mesh1D::uniform(0.0, 1.0, 10).unwrap();
        let other = Mesh1D::uniform(0.0, 2.0, 10).unwrap();
        let set = InteractionSet::new(&gaussian_set(), &mesh, 8, Assembly::Auto).unwrap();
        let z = vec![0.0; 10];
        let (mut a, mut b) = (z.clone(), z.clone());
        let err = set.apply(&other, &z, &z, &mut a, &mut b, &mut InteractionScratch::default());
        assert!(matches!(err, Err(Error::MeshMismatch)));
    }

    #[test]
    fn fft_path_matches_direct_sums() {
        let mesh = Mesh1D::uniform(0.0, 9.0, 9 * 32).unwrap();
        let fast = InteractionSet::new(&gaussian_set(), &mesh, 8, Assembly::Auto).unwrap();
        let slow = InteractionSet::new(&gaussian_set(), &mesh, 8, Assembly::Direct).unwrap();
        assert!(fast.uses_fft() && !slow.uses_fft());
        let rho: Vec<f64> = mesh.centers().iter().map(|x| (x * 1.3).sin().abs() * 2.0).collect();
        let eta: Vec<f64> = mesh.centers().iter().map(|x| (-(x - 4.0).powi(2)).exp()).collect();
        let (a1, a2) = potentials(&fast, &mesh, &rho, &eta);
        let (b1, b2) = potentials(&slow, &mesh, &rho, &eta);
        let diff = a1
            .iter()
            .zip(&b1)
            .chain(a2.iter().zip(&b2))
            .map(|(x, y)| (x - y).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-13, "{diff}");
    }

    #[test]
    fn range_restricted_potentials_match_full_ones() {
        let mesh = Mesh1D::uniform(0.0, 9.0, 9 * 32).unwrap();
        for assembly in [Assembly::Auto, Assembly::Direct] {
            let set = InteractionSet::new(&gaussian_set(), &mesh, 8, assembly).unwrap();
            let support = |x: f64| if (3.0..5.5).contains(&x) { 1.0 + x.sin() } else { 0.0 };
            let rho: Vec<f64> = mesh.centers().iter().map(|&x| support(x)).collect();
            let eta: Vec<f64> = mesh.centers().iter().map(|&x| support(x - 0.5)).collect();
            let (f1, f2) = potentials(&set, &mesh, &rho, &eta);
            let range = 90..200;
            let (mut v1, mut v2) = (vec![f64::NAN; mesh.len()], vec![f64::NAN; mesh.len()]);
            set.apply_range(&mesh, &rho, &eta, &mut v1, &mut v2, range.clone(), &mut InteractionScratch::default())
                .unwrap();
            for i in range {
                assert!((v1[i] - f1[i]).abs() < 1e-13 && (v2[i] - f2[i]).abs() < 1e-13);
            }
            assert!(v1[0].is_nan() && v2[210].is_nan());
        }
    }

    #[test]
    fn smooth_lengths() {
        assert_eq!(smooth_length(1), 1);
        assert_eq!(smooth_length(5), 6);
        assert_eq!(smooth_length(17), 18);
        assert_eq!(smooth_length(9216), 9216);
        assert_eq!(smooth_length(8705), 8748);
    }

    #[test]
    fn symmetric_state_gives_symmetric_potential() {
        let n = 32;
        let mesh = Mesh1D::uniform(-1.0, 1.0, n).unwrap();
        let set = InteractionSet::new(&gaussian_set(), &mesh, 8, Assembly::Direct).unwrap();
        let rho: Vec<f64> = mesh.centers().iter().map(|x| 1.0 + x * x).collect();
        let eta: Vec<f64> = mesh.centers().iter().map(|x| (3.0 * x).cos() + 1.5).collect();
        let (v1, v2) = potentials(&set, &mesh, &rho, &eta);
        for i in 0..n {
            assert!((v1[i] - v1[n - 1 - i]).abs() < 1e-13);
            assert!((v2[i] - v2[n - 1 - i]).abs() < 1e-13);
        }
    }

    proptest! {
        #[test]
        fn shifting_density_shifts_potential(n in 8usize..24, j0 in 1usize..6,
                                             mass in 0.1f64..3.0) {
            let mesh = Mesh1D::uniform(0.0, 2.0, n).unwrap();
            let set = InteractionSet::new(&gaussian_set(), &mesh, 8, Assembly::Direct).unwrap();
            let dx = mesh.widths()[0];
            let mut rho = vec![0.0; n];
            rho[j0] = mass / dx;
            let mut shifted = vec![0.0; n];
            shifted[j0 + 1] = mass / dx;
            let eta = vec![0.0; n];
            let (v, _) = potentials(&set, &mesh, &rho, &eta);
            let (vs, _) = potentials(&set, &mesh, &shifted, &eta);
            for i in 0..n - 1 {
                prop_assert!((vs[i + 1] - v[i]).abs() < 1e-14);
            }
        }
    }
}
