//! End-to-end checks through the public API.

use std::sync::Arc;

use crossdiff::experiments::{gaussian_kernels, preset};
use crossdiff::state::compute_diagnostics;
use crossdiff::{integrate_collect, Assembly, KernelSet, KernelSpec, Mesh1D, Method, Model, State, TimeGrid};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_state(rng: &mut ChaCha8Rng, mesh: &Mesh1D) -> State {
    let mut cell = || if rng.random_bool(0.25) { 0.0 } else { rng.random_range(0.0..2.0) };
    let rho = (0..mesh.len()).map(|_| cell()).collect();
    let eta = (0..mesh.len()).map(|_| cell()).collect();
    State::new(mesh, rho, eta).unwrap()
}

#[test]
fn fft_and_direct_assembly_give_the_same_trajectory() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mesh = Arc::new(Mesh1D::uniform(0.0, 3.0, 300).unwrap());
    let initial = random_state(&mut rng, &mesh);
    let grid = TimeGrid::new(0.01, 0.02).unwrap();
    let method = Method::Rk4 { cfl_safety: 0.4 };
    let run = |assembly| {
        let model = Model::new(mesh.clone(), 0.2, 0.3, &gaussian_kernels(), 8, assembly).unwrap();
        assert_eq!(model.interactions().uses_fft(), assembly == Assembly::Auto);
        integrate_collect(&model, initial.clone(), &grid, &method).unwrap().0
    };
    let (fast, direct) = (run(Assembly::Auto), run(Assembly::Direct));
    let last = (fast.last().unwrap(), direct.last().unwrap());
    let diff = last.0.rho.iter().chain(&last.0.eta).zip(last.1.rho.iter().chain(&last.1.eta));
    let worst = diff.map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(worst < 1e-11, "{worst:e}");
}

#[test]
fn random_graded_runs_stay_nonnegative_and_conservative() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..10 {
        let widths: Vec<f64> = (0..40).map(|_| rng.random_range(0.5..1.5)).collect();
        let mesh = Arc::new(Mesh1D::graded(0.0, 2.0, &widths).unwrap());
        let mut kernel = || KernelSpec::gaussian(rng.random_range(-1.0..1.0), 2.0, rng.random_range(0.05..0.5));
        let kernels = KernelSet {
            w11: kernel(),
            w12: kernel(),
            w21: kernel(),
            w22: kernel(),
        };
        let model = Model::new(mesh.clone(), 0.1, 0.2, &kernels, 8, Assembly::Auto).unwrap();
        let initial = random_state(&mut rng, &mesh);
        let (m1, m2) = initial.masses(&mesh);
        let grid = TimeGrid::new(0.05, 0.1).unwrap();
        for method in [
            Method::Rk4 { cfl_safety: 0.4 },
            Method::ImplicitEuler {
                dt: 1e-3,
                fp_tol: 1e-12,
                fp_max_iter: 200,
            },
        ] {
            let (states, _) = integrate_collect(&model, initial.clone(), &grid, &method).unwrap();
            for s in &states {
                let (r, e) = s.min_values();
                assert!(r >= -1e-12 && e >= -1e-12, "{method:?}: {r:e} {e:e}");
                let (a, b) = s.masses(&mesh);
                assert!((a - m1).abs() <= 1e-12 * m1 && (b - m2).abs() <= 1e-12 * m2);
            }
        }
    }
}

#[test]
fn purely_diffusive_runs_dissipate_entropy() {
    // Without interactions the bound is zero: the entropy never increases.
    let mut config = preset("diffusive_asymmetric").unwrap();
    config.mesh = crossdiff::config::MeshSpec::cells(136);
    config.time.t_final = 0.5;
    let sim = config.build().unwrap();
    let (states, _) = integrate_collect(&sim.model, sim.initial, &sim.grid, &sim.method).unwrap();
    let ctx = sim.model.diagnostics_context();
    let mesh = sim.model.mesh();
    let mut previous = None;
    for s in &states {
        let d = compute_diagnostics(s, mesh, &ctx, previous.as_ref());
        if let Some(p) = &previous {
            assert!(d.entropy <= p.entropy + 1e-12, "{} -> {}", p.entropy, d.entropy);
        }
        previous = Some(d);
    }
}
