mod common;

use common::{dense_normal_solve, tiny_two_gate_problem};
use mcir_core::functionals::{prox_fstar, prox_g};
use mcir_core::io::{read_primal_dual, write_primal_dual};
use mcir_core::motion::{motion_sequence, MotionKind};
use mcir_core::pipeline::Setup;
use mcir_core::projector::Geometry;
use mcir_core::simulate::{generate, make_phantom, DatasetSpec, GatedDataset, NoiseModel, PhantomKind, Preset};
use mcir_core::solvers::{
    aggregate_adjoint, cg_reference, default_config, run, step, GateSampler, Mode, OpCounts, Problem, Sampling,
    SolverConfig, SolverState,
};
use mcir_core::{Error, Grid, Image, Sinogram};

fn small_dataset(gates: usize, sigma: f64) -> GatedDataset {
    let geom = Geometry::new(16, 16, 20, 24).unwrap();
    let x = make_phantom(PhantomKind::NestedShells, 16, 16).unwrap();
    let motion = motion_sequence(MotionKind::Rigid, gates, 0.15).unwrap();
    generate(&x, &motion, &geom, NoiseModel::new(sigma).unwrap(), 5).unwrap()
}

fn small_setup(gates: usize) -> (GatedDataset, Setup) {
    let data = small_dataset(gates, 0.05);
    let setup = Setup::new(&data, 30.0, true, None).unwrap();
    (data, setup)
}

fn iterate(config: &SolverConfig, problem: &Problem, iterations: usize) -> SolverState {
    let mut state = SolverState::zeros(problem);
    let mut sampler = GateSampler::new(config.sampling, problem.num_gates(), config.seed);
    let mut counts = OpCounts::default();
    for _ in 0..iterations {
        step(&mut state, config, problem, &mut sampler, &mut counts).unwrap();
    }
    state
}

/// Textbook PDHG with dual extrapolation:
/// `x⁺ = prox_τg(x − τ Σ A_i* ȳ_i)`, `y⁺ = prox_σf*(y + σ A x⁺)`, `ȳ = y⁺ + θ(y⁺ − y)`.
fn textbook_pdhg(problem: &Problem, sigma: f64, tau: f64, theta: f64, iterations: usize) -> (Image, Vec<Sinogram>) {
    let n = problem.num_gates();
    let mut x = Grid::zeros(problem.image_shape());
    let mut y: Vec<Sinogram> = problem.gates().iter().map(|op| Grid::zeros(op.range())).collect();
    let mut ybar = y.clone();
    for _ in 0..iterations {
        let mut v = x.clone();
        for (op, yb) in problem.gates().iter().zip(&ybar) {
            let back = op.adjoint(yb).unwrap();
            for (vi, bi) in v.as_mut_slice().iter_mut().zip(back.as_slice()) {
                *vi -= tau * bi;
            }
        }
        x = prox_g(problem.alpha(), tau, &v).unwrap();
        for i in 0..n {
            let mut w = problem.gates()[i].apply(&x).unwrap();
            for (wi, yi) in w.as_mut_slice().iter_mut().zip(y[i].as_slice()) {
                *wi = yi + sigma * *wi;
            }
            let next = prox_fstar(n, sigma, &problem.data()[i], &w).unwrap();
            ybar[i] = Grid::from_fn(next.shape(), |r, c| next.get(r, c) + theta * (next.get(r, c) - y[i].get(r, c)));
            y[i] = next;
        }
    }
    (x, y)
}

fn rel(a: &Grid, b: &Grid) -> f64 {
    (a.dist_sq(b) / b.norm_sq().max(f64::MIN_POSITIVE)).sqrt()
}

#[test]
fn pdhg_matches_textbook_form() {
    let (_, setup) = small_setup(3);
    let config = default_config(Mode::Pdhg, &setup.step_norms(), setup.alpha(), 1, 0).unwrap();
    let state = iterate(&config, &setup.problem, 25);
    let (x, y) = textbook_pdhg(&setup.problem, config.sigma[0], config.tau, config.theta, 25);
    assert!(rel(&state.x, &x) < 1e-12, "{:e}", rel(&state.x, &x));
    for (a, b) in state.y.iter().zip(&y) {
        assert!(rel(a, b) < 1e-12);
    }
}

#[test]
fn full_sampling_spdhg_reproduces_pdhg() {
    let (_, setup) = small_setup(4);
    let pdhg = default_config(Mode::Pdhg, &setup.step_norms(), setup.alpha(), 1, 0).unwrap();
    let spdhg = SolverConfig {
        mode: Mode::Spdhg,
        sampling: Sampling::Full,
        seed: 12345,
        ..pdhg.clone()
    };
    spdhg.check_admissible(&setup.step_norms()).unwrap();
    let a = iterate(&pdhg, &setup.problem, 10);
    let b = iterate(&spdhg, &setup.problem, 10);
    assert!(rel(&b.x, &a.x) <= 1e-12);
    for (p, q) in b.y.iter().zip(&a.y) {
        assert!(rel(p, q) <= 1e-12);
    }
}

#[test]
fn aggregates_stay_consistent_with_duals() {
    let (_, setup) = small_setup(5);
    let problem = &setup.problem;
    let config = default_config(Mode::Spdhg, &setup.step_norms(), setup.alpha(), 1, 3).unwrap();
    let mut state = SolverState::zeros(problem);
    let mut sampler = GateSampler::new(config.sampling, 5, 3);
    let mut counts = OpCounts::default();
    for k in 1..=200 {
        let before = state.y.clone();
        step(&mut state, &config, problem, &mut sampler, &mut counts).unwrap();
        if k % 10 != 0 {
            continue;
        }
        let z = aggregate_adjoint(problem, &state.y);
        assert!(rel(&state.z, &z) < 1e-12, "iteration {k}");
        // z̄ − z = Σ_i (θ/p_i) A_i*(y_i⁺ − y_i)
        let delta: Vec<Sinogram> = state
            .y
            .iter()
            .zip(&before)
            .zip(&config.probs)
            .map(|((a, b), p)| Grid::from_fn(a.shape(), |r, c| config.theta / p * (a.get(r, c) - b.get(r, c))))
            .collect();
        let extra = aggregate_adjoint(problem, &delta);
        let expect = Grid::from_fn(z.shape(), |r, c| z.get(r, c) + extra.get(r, c));
        assert!(rel(&state.zbar, &expect) < 1e-10, "iteration {k}");
    }
}

#[test]
fn saddle_point_is_a_fixed_point() {
    let (_, setup) = small_setup(3);
    let problem = &setup.problem;
    let sp = cg_reference(problem, 1e-14, 10_000).unwrap();
    assert!(sp.converged);
    let (primal, dual) = sp.optimality_residuals(problem).unwrap();
    assert!(primal < 1e-10 && dual < 1e-12);
    let config = default_config(Mode::Pdhg, &setup.step_norms(), setup.alpha(), 1, 0).unwrap();
    let mut state = SolverState::at(problem, sp.x_star.clone(), sp.y_star.clone()).unwrap();
    let mut sampler = GateSampler::new(Sampling::Full, 3, 0);
    step(&mut state, &config, problem, &mut sampler, &mut OpCounts::default()).unwrap();
    let moved = sp.dist_sq(&state.x, &state.y).sqrt();
    let size = (sp.x_star.norm_sq() + sp.y_star.iter().map(|y| y.norm_sq()).sum::<f64>()).sqrt();
    assert!(moved <= 1e-8 * size, "{:e}", moved / size);
}

#[test]
fn cg_reference_matches_dense_solve() {
    let (gates, data, alpha) = tiny_two_gate_problem();
    let problem = Problem::new(gates.clone(), data.clone(), alpha).unwrap();
    let sp = cg_reference(&problem, 1e-14, 1000).unwrap();
    let expect = dense_normal_solve(&gates, &data, alpha);
    assert!(rel(&sp.x_star, &expect) <= 1e-8, "{:e}", rel(&sp.x_star, &expect));
}

#[test]
fn epochs_cost_the_same_for_both_algorithms() {
    let (_, setup) = small_setup(6);
    for epochs in [1usize, 4] {
        let mut counts = Vec::new();
        for mode in [Mode::Pdhg, Mode::Spdhg] {
            let c = default_config(mode, &setup.step_norms(), setup.alpha(), epochs, 9).unwrap();
            let out = run(&c, &setup.problem, None, None).unwrap();
            assert_eq!(out.record.len(), epochs);
            for (k, row) in out.record.rows().iter().enumerate() {
                assert_eq!(row.fwd_calls, 6 * (k as u64 + 1));
                assert_eq!(row.adj_calls, 6 * (k as u64 + 1));
            }
            counts.push(out.counts);
        }
        assert_eq!(counts[0], counts[1]);
        assert_eq!(counts[0].forward, 6 * epochs as u64);
    }
}

#[test]
fn noiseless_truth_objective_is_the_regulariser() {
    let data = small_dataset(4, 0.0);
    let setup = Setup::new(&data, 50.0, true, None).unwrap();
    let obj = setup.problem.objective(&data.truth).unwrap();
    let expect = setup.alpha() * data.truth.norm_sq();
    assert!((obj - expect).abs() <= 1e-12 * expect);
}

#[test]
fn logged_distance_matches_recomputation_from_dumps() {
    let (_, setup) = small_setup(3);
    let sp = cg_reference(&setup.problem, 1e-13, 1000).unwrap();
    let config = default_config(Mode::Spdhg, &setup.step_norms(), setup.alpha(), 7, 2).unwrap();
    let out = run(&config, &setup.problem, Some(&sp), None).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_primal_dual(dir.path().join("state"), &out.state.x, &out.state.y).unwrap();
    write_primal_dual(dir.path().join("saddle"), &sp.x_star, &sp.y_star).unwrap();
    let (x, y) = read_primal_dual(dir.path().join("state"), 3).unwrap();
    let (xs, ys) = read_primal_dual(dir.path().join("saddle"), 3).unwrap();
    let mut d = x.dist_sq(&xs);
    for (a, b) in y.iter().zip(&ys) {
        d += a.dist_sq(b);
    }
    let logged = out.record.last().unwrap().dist_sq;
    assert!((logged - d).abs() <= 1e-10 * d, "{logged} vs {d}");
}

#[test]
fn oversized_steps_trip_the_divergence_guard() {
    let (_, setup) = small_setup(3);
    let mut config = default_config(Mode::Pdhg, &setup.step_norms(), setup.alpha(), 200, 0).unwrap();
    config.tau *= 50.0;
    for s in &mut config.sigma {
        *s *= 50.0;
    }
    match run(&config, &setup.problem, None, None) {
        Err(Error::Diverged { iteration, .. }) => assert!(iteration >= 1),
        other => panic!("expected divergence, got {other:?}"),
    }
}

#[test]
fn spdhg_distance_decreases_after_burn_in() {
    let data = DatasetSpec::preset(Preset::Rigid, true).build().unwrap();
    let setup = Setup::new(&data, 70.0, true, None).unwrap();
    let sp = cg_reference(&setup.problem, 1e-13, 10_000).unwrap();
    for seed in 0..10 {
        let config = default_config(Mode::Spdhg, &setup.step_norms(), setup.alpha(), 25, seed).unwrap();
        let out = run(&config, &setup.problem, Some(&sp), None).unwrap();
        let d: Vec<f64> = out.record.rows().iter().map(|r| r.dist_sq).collect();
        for k in 3..d.len() {
            assert!(d[k] < d[k - 1], "seed {seed}: epoch {} distance {} >= {}", k + 1, d[k], d[k - 1]);
        }
    }
}
