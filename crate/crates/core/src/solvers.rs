//! PDHG and SPDHG for the gated saddle-point problem
//!
//! ```text
//! min_x max_y  α‖x‖² + Σ_i ⟨A_i x, y_i⟩ − f_i*(y_i)
//! ```
//!
//! One iteration, with sampled gate set `S`:
//!
//! ```text
//! x⁺   = prox_{τg}(x − τ z̄)
//! y_i⁺ = prox_{σ_i f_i*}(y_i + σ_i A_i x⁺)          for i ∈ S
//! z⁺   = z + Σ_{i∈S} A_i*(y_i⁺ − y_i)
//! z̄⁺   = z + Σ_{i∈S} (1 + θ/p_i) A_i*(y_i⁺ − y_i)
//! ```
//!
//! PDHG is the special case `S = {1..N}`, `p_i = 1`. SPDHG draws one gate
//! uniformly (`p_i = 1/N`). An epoch is one PDHG iteration or N SPDHG
//! iterations; both cost N forward and N adjoint gate applications.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analysis::{rmse, ConvergenceRecord, RecordRow};
use crate::error::{Error, Result};
use crate::functionals::{moduli, objective, prox_fstar_in_place, prox_g_in_place};
use crate::grid::{axpy, dist_sq, dot, Grid, Image, Shape, Sinogram};
use crate::linops::{power_method, stacked_norm_sq, GramSum, LinearMap, Op};

/// Safety factor on the step-size bounds.
pub const RHO: f64 = 0.99;
/// Abort once the objective exceeds this multiple of its value at `x = 0`.
pub const DIVERGENCE_FACTOR: f64 = 1e6;
const ADMISSIBILITY_SLACK: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    Pdhg,
    Spdhg,
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Mode::Pdhg => "pdhg",
            Mode::Spdhg => "spdhg",
        })
    }
}

impl FromStr for Mode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pdhg" => Ok(Mode::Pdhg),
            "spdhg" => Ok(Mode::Spdhg),
            other => Err(Error::invalid("mode", format!("unknown algorithm `{other}`"))),
        }
    }
}

/// How the gate subset is drawn each iteration.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Sampling {
    /// Every gate, every iteration.
    Full,
    /// One gate, uniformly at random.
    UniformSingleton,
}

/// The gated reconstruction problem: operators `A_i = A D_i`, data `d_i`
/// and the Tikhonov weight `α`.
#[derive(Debug, Clone)]
pub struct Problem {
    gates: Vec<Op>,
    data: Vec<Sinogram>,
    alpha: f64,
}

impl Problem {
    pub fn new(gates: Vec<Op>, data: Vec<Sinogram>, alpha: f64) -> Result<Self> {
        if gates.is_empty() {
            return Err(Error::invalid("gates", "need at least one gate"));
        }
        if gates.len() != data.len() {
            return Err(Error::invalid(
                "data",
                format!("{} operators but {} sinograms", gates.len(), data.len()),
            ));
        }
        if !(alpha > 0.0 && alpha.is_finite()) {
            return Err(Error::invalid("alpha", "must be positive and finite"));
        }
        let domain = gates[0].domain();
        for (op, d) in gates.iter().zip(&data) {
            domain.ensure(op.domain())?;
            op.range().ensure(d.shape())?;
            if !d.is_finite() {
                return Err(Error::invalid("data", "must be finite"));
            }
        }
        Ok(Self { gates, data, alpha })
    }

    pub fn num_gates(&self) -> usize {
        self.gates.len()
    }

    pub fn gates(&self) -> &[Op] {
        &self.gates
    }

    pub fn data(&self) -> &[Sinogram] {
        &self.data
    }

    pub fn alpha(&self) -> f64 {
        self.alpha
    }

    pub fn image_shape(&self) -> Shape {
        self.gates[0].domain()
    }

    pub fn with_alpha(&self, alpha: f64) -> Result<Self> {
        Self::new(self.gates.clone(), self.data.clone(), alpha)
    }

    pub fn objective(&self, x: &Image) -> Result<f64> {
        objective(self.alpha, &self.gates, &self.data, x)
    }
}

/// Operator norms the step sizes are built from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepNorms {
    /// `‖A_i‖`
    pub gate_norms: Vec<f64>,
    /// `‖(A_1; ...; A_N)‖`
    pub stacked_norm: f64,
}

impl StepNorms {
    pub fn estimate(gates: &[Op], iterations: usize, seed: u64) -> Result<Self> {
        let gate_norms = gates
            .iter()
            .map(|op| power_method(op.as_ref(), iterations, seed).map(|e| e.norm()))
            .collect::<Result<Vec<_>>>()?;
        let stacked_norm = stacked_norm_sq(gates, iterations, seed)?.norm();
        Ok(Self {
            gate_norms,
            stacked_norm,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub mode: Mode,
    pub sampling: Sampling,
    /// `σ_i`
    pub sigma: Vec<f64>,
    pub tau: f64,
    pub theta: f64,
    /// `p_i = P(i ∈ S)`
    pub probs: Vec<f64>,
    pub epochs: usize,
    pub seed: u64,
}

impl SolverConfig {
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn num_gates(&self) -> usize {
        self.sigma.len()
    }

    /// Structural checks plus the step-size bounds
    /// `σ_i τ ‖A_i‖² <= ρ² p_i` for every gate and, with full sampling,
    /// `τ max_i σ_i ‖(A_1..A_N)‖² <= ρ²`.
    pub fn check_admissible(&self, norms: &StepNorms) -> Result<()> {
        let n = self.num_gates();
        if n == 0 || self.probs.len() != n || norms.gate_norms.len() != n {
            return Err(Error::invalid("config", "sigma, probs and norms must have one entry per gate"));
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(Error::invalid("tau", "must be positive"));
        }
        if !(self.theta > 0.0 && self.theta <= 1.0) {
            return Err(Error::invalid("theta", "must lie in (0, 1]"));
        }
        if self.sigma.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::invalid("sigma", "must be positive"));
        }
        if self.probs.iter().any(|p| !(*p > 0.0 && *p <= 1.0)) {
            return Err(Error::invalid("probs", "must lie in (0, 1]"));
        }
        match (self.mode, self.sampling) {
            (Mode::Pdhg, Sampling::Full) => {
                if self.probs.iter().any(|&p| p != 1.0) {
                    return Err(Error::invalid("probs", "pdhg requires p_i = 1"));
                }
            }
            (Mode::Pdhg, Sampling::UniformSingleton) => {
                return Err(Error::invalid("sampling", "pdhg updates every gate"));
            }
            (Mode::Spdhg, Sampling::Full) => {
                if self.probs.iter().any(|&p| p != 1.0) {
                    return Err(Error::invalid("probs", "full sampling requires p_i = 1"));
                }
            }
            (Mode::Spdhg, Sampling::UniformSingleton) => {
                let uniform = 1.0 / n as f64;
                if self.probs.iter().any(|&p| (p - uniform).abs() > 1e-12) {
                    return Err(Error::invalid("probs", "uniform sampling requires p_i = 1/N"));
                }
            }
        }
        let bound = RHO * RHO * (1.0 + ADMISSIBILITY_SLACK);
        for i in 0..n {
            let lhs = self.sigma[i] * self.tau * norms.gate_norms[i].powi(2);
            let rhs = bound * self.probs[i];
            if lhs > rhs {
                return Err(Error::NotAdmissible { gate: i, lhs, rhs });
            }
        }
        if self.sampling == Sampling::Full {
            let smax = self.sigma.iter().copied().fold(0.0, f64::max);
            let lhs = self.tau * smax * norms.stacked_norm.powi(2);
            if lhs > bound {
                return Err(Error::NotAdmissible { gate: n, lhs, rhs: bound });
            }
        }
        Ok(())
    }
}

/// Balanced step sizes with `γ = √(μ_g / μ_{f*})`, `ρ = 0.99`, `θ = 1`.
///
/// SPDHG: `p_i = 1/N`, `σ_i = γρ/‖A_i‖`, `τ = ρ / (γ max_i ‖A_i‖/p_i)`.
/// PDHG: `p_i = 1`, `σ_i = γρ/‖K‖`, `τ = ρ/(γ‖K‖)` with `K` the stacked
/// operator, since every gate moves together.
pub fn default_config(mode: Mode, norms: &StepNorms, alpha: f64, epochs: usize, seed: u64) -> Result<SolverConfig> {
    let n = norms.gate_norms.len();
    if n == 0 {
        return Err(Error::invalid("gate_norms", "need at least one gate"));
    }
    if norms.gate_norms.iter().any(|g| !(*g > 0.0 && g.is_finite()))
        || !(norms.stacked_norm > 0.0 && norms.stacked_norm.is_finite())
    {
        return Err(Error::invalid("gate_norms", "operator norms must be positive"));
    }
    let (mu_g, mu_f) = moduli(alpha, n)?;
    let gamma = (mu_g / mu_f).sqrt();
    let config = match mode {
        Mode::Spdhg => {
            let p = 1.0 / n as f64;
            let worst = norms.gate_norms.iter().map(|g| g / p).fold(0.0, f64::max);
            SolverConfig {
                mode,
                sampling: Sampling::UniformSingleton,
                sigma: norms.gate_norms.iter().map(|g| gamma * RHO / g).collect(),
                tau: RHO / (gamma * worst),
                theta: 1.0,
                probs: vec![p; n],
                epochs,
                seed,
            }
        }
        Mode::Pdhg => {
            let k = norms.stacked_norm;
            SolverConfig {
                mode,
                sampling: Sampling::Full,
                sigma: vec![gamma * RHO / k; n],
                tau: RHO / (gamma * k),
                theta: 1.0,
                probs: vec![1.0; n],
                epochs,
                seed,
            }
        }
    };
    config.check_admissible(norms)?;
    Ok(config)
}

/// Seeded gate sampler. Owned by a single run.
#[derive(Debug, Clone)]
pub struct GateSampler {
    rng: ChaCha8Rng,
    sampling: Sampling,
    num_gates: usize,
}

impl GateSampler {
    pub fn new(sampling: Sampling, num_gates: usize, seed: u64) -> Self {
        Self {
            rng: ChaCha8Rng::seed_from_u64(seed),
            sampling,
            num_gates,
        }
    }

    /// Draws the next gate subset `S` (zero-based indices, never empty).
    pub fn draw(&mut self) -> Vec<usize> {
        match self.sampling {
            Sampling::Full => (0..self.num_gates).collect(),
            Sampling::UniformSingleton => vec![self.rng.gen_range(0..self.num_gates)],
        }
    }
}

/// Iterates `x^k, y_i^k, z^k, z̄^k` plus bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct SolverState {
    pub x: Image,
    pub y: Vec<Sinogram>,
    /// `Σ_i A_i* y_i`
    pub z: Image,
    /// Extrapolated aggregate read by the primal step.
    pub zbar: Image,
    pub iteration: usize,
    pub epoch: f64,
}

impl SolverState {
    /// `x = z = z̄ = 0`, `y = 0`.
    pub fn zeros(problem: &Problem) -> Self {
        let shape = problem.image_shape();
        Self {
            x: Grid::zeros(shape),
            y: problem.gates().iter().map(|op| Grid::zeros(op.range())).collect(),
            z: Grid::zeros(shape),
            zbar: Grid::zeros(shape),
            iteration: 0,
            epoch: 0.0,
        }
    }

    /// Starts at a given primal-dual pair with `z = z̄ = Σ A_i* y_i`.
    pub fn at(problem: &Problem, x: Image, y: Vec<Sinogram>) -> Result<Self> {
        problem.image_shape().ensure(x.shape())?;
        if y.len() != problem.num_gates() {
            return Err(Error::invalid("y", "one dual block per gate"));
        }
        for (op, yi) in problem.gates().iter().zip(&y) {
            op.range().ensure(yi.shape())?;
        }
        let z = aggregate_adjoint(problem, &y);
        Ok(Self {
            x,
            zbar: z.clone(),
            z,
            y,
            iteration: 0,
            epoch: 0.0,
        })
    }
}

/// `Σ_i A_i* y_i`, recomputed from scratch.
pub fn aggregate_adjoint(problem: &Problem, y: &[Sinogram]) -> Image {
    let shape = problem.image_shape();
    let mut z = vec![0.0; shape.len()];
    let mut tmp = vec![0.0; shape.len()];
    for (op, yi) in problem.gates().iter().zip(y) {
        op.adjoint_into(yi.as_slice(), &mut tmp);
        axpy(1.0, &tmp, &mut z);
    }
    Grid::from_vec(shape, z).expect("shape matches")
}

/// Gate-level forward and adjoint applications performed by a solver.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub forward: u64,
    pub adjoint: u64,
}

/// One iteration of the update in the module docs.
pub fn step(
    state: &mut SolverState,
    config: &SolverConfig,
    problem: &Problem,
    sampler: &mut GateSampler,
    counts: &mut OpCounts,
) -> Result<()> {
    let n = problem.num_gates();
    let mut subset = sampler.draw();
    while subset.is_empty() {
        subset = sampler.draw();
    }

    // (i) primal
    let x = state.x.as_mut_slice();
    axpy(-config.tau, state.zbar.as_slice(), x);
    prox_g_in_place(problem.alpha(), config.tau, x)?;

    // (ii) dual on S, (iii) aggregates
    let z_prev = state.z.clone();
    let mut zbar = z_prev.into_vec();
    let mut back = vec![0.0; state.x.shape().len()];
    for &i in &subset {
        let op = &problem.gates()[i];
        let yi = &mut state.y[i];
        let mut proposal = vec![0.0; op.range().len()];
        op.apply_into(state.x.as_slice(), &mut proposal);
        counts.forward += 1;
        for (p, y) in proposal.iter_mut().zip(yi.as_slice()) {
            *p = y + config.sigma[i] * *p;
        }
        prox_fstar_in_place(n, config.sigma[i], &problem.data()[i], &mut proposal)?;
        // proposal becomes y_i⁺ − y_i, yi becomes y_i⁺
        for (p, y) in proposal.iter_mut().zip(yi.as_mut_slice()) {
            let next = *p;
            *p = next - *y;
            *y = next;
        }
        op.adjoint_into(&proposal, &mut back);
        counts.adjoint += 1;
        axpy(1.0, &back, state.z.as_mut_slice());
        axpy(1.0 + config.theta / config.probs[i], &back, &mut zbar);
    }
    state.zbar = Grid::from_vec(state.z.shape(), zbar)?;
    state.iteration += 1;
    state.epoch += subset.len() as f64 / n as f64;
    Ok(())
}

/// Primal-dual optimum `(x*, y*)` of the gated problem.
#[derive(Debug, Clone)]
pub struct SaddlePoint {
    pub x_star: Image,
    pub y_star: Vec<Sinogram>,
    pub source: SaddleSource,
    pub converged: bool,
    /// Relative residual of the normal equations at `x_star`.
    pub residual: f64,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SaddleSource {
    CgReference,
    LongPdhg,
}

impl SaddlePoint {
    /// Completes a primal point with `y_i = (2/N)(A_i x − d_i)`.
    pub fn from_primal(problem: &Problem, x_star: Image, source: SaddleSource) -> Result<Self> {
        let n = problem.num_gates() as f64;
        let y_star = problem
            .gates()
            .iter()
            .zip(problem.data())
            .map(|(op, d)| {
                let mut y = op.apply(&x_star)?;
                for (yi, di) in y.as_mut_slice().iter_mut().zip(d.as_slice()) {
                    *yi = 2.0 / n * (*yi - di);
                }
                Ok(y)
            })
            .collect::<Result<Vec<_>>>()?;
        let residual = normal_equations_residual(problem, &x_star)?;
        Ok(Self {
            x_star,
            y_star,
            source,
            converged: true,
            residual,
            iterations: 0,
        })
    }

    /// `‖x − x*‖² + Σ_i ‖y_i − y_i*‖²`
    pub fn dist_sq(&self, x: &Image, y: &[Sinogram]) -> f64 {
        let dual: f64 = y
            .iter()
            .zip(&self.y_star)
            .map(|(a, b)| dist_sq(a.as_slice(), b.as_slice()))
            .sum();
        self.x_star.dist_sq(x) + dual
    }

    /// `(‖2αx* + Σ A_i* y_i*‖ / ‖x*‖, max_i ‖y_i* − (2/N)(A_i x* − d_i)‖ / ‖y_i*‖)`
    pub fn optimality_residuals(&self, problem: &Problem) -> Result<(f64, f64)> {
        let mut grad = aggregate_adjoint(problem, &self.y_star);
        axpy(2.0 * problem.alpha(), self.x_star.as_slice(), grad.as_mut_slice());
        let primal = grad.norm_sq().sqrt() / self.x_star.norm_sq().sqrt().max(f64::MIN_POSITIVE);
        let fresh = Self::from_primal(problem, self.x_star.clone(), self.source)?;
        let dual = self
            .y_star
            .iter()
            .zip(&fresh.y_star)
            .map(|(a, b)| a.dist_sq(b).sqrt() / a.norm_sq().sqrt().max(f64::MIN_POSITIVE))
            .fold(0.0, f64::max);
        Ok((primal, dual))
    }
}

fn normal_system(problem: &Problem) -> Result<(GramSum, Vec<f64>)> {
    let n = problem.num_gates() as f64;
    let gram = GramSum::new(problem.gates().to_vec(), 1.0 / n, problem.alpha())?;
    let shape = problem.image_shape();
    let mut rhs = vec![0.0; shape.len()];
    let mut tmp = vec![0.0; shape.len()];
    for (op, d) in problem.gates().iter().zip(problem.data()) {
        op.adjoint_into(d.as_slice(), &mut tmp);
        axpy(1.0 / n, &tmp, &mut rhs);
    }
    Ok((gram, rhs))
}

fn normal_equations_residual(problem: &Problem, x: &Image) -> Result<f64> {
    let (gram, rhs) = normal_system(problem)?;
    let mut r = vec![0.0; rhs.len()];
    gram.apply_into(x.as_slice(), &mut r);
    for (ri, bi) in r.iter_mut().zip(&rhs) {
        *ri = bi - *ri;
    }
    let bn = dot(&rhs, &rhs).sqrt();
    Ok(if bn == 0.0 { dot(&r, &r).sqrt() } else { dot(&r, &r).sqrt() / bn })
}

/// Solves `(αI + N⁻¹ Σ A_i*A_i) x = N⁻¹ Σ A_i* d_i` by conjugate gradients
/// to relative residual `tol`, then completes the dual part.
pub fn cg_reference(problem: &Problem, tol: f64, max_iter: usize) -> Result<SaddlePoint> {
    if !(tol > 0.0) {
        return Err(Error::invalid("tol", "must be positive"));
    }
    let (gram, b) = normal_system(problem)?;
    let len = b.len();
    let bnorm = dot(&b, &b).sqrt();
    let mut x = vec![0.0; len];
    let mut iterations = 0;
    let mut converged = bnorm == 0.0;

    let true_residual = |x: &[f64], r: &mut [f64]| {
        gram.apply_into(x, r);
        for (ri, bi) in r.iter_mut().zip(&b) {
            *ri = bi - *ri;
        }
    };
    let mut r = vec![0.0; len];
    let mut best = (f64::INFINITY, x.clone());
    // restart from the true residual whenever the recursive one claims
    // convergence but the true one disagrees
    while !converged && iterations < max_iter {
        true_residual(&x, &mut r);
        let rn = dot(&r, &r).sqrt() / bnorm;
        if rn < best.0 {
            best = (rn, x.clone());
        }
        if rn <= tol {
            converged = true;
            break;
        }
        let mut p = r.clone();
        let mut ap = vec![0.0; len];
        let mut rr = dot(&r, &r);
        while iterations < max_iter {
            gram.apply_into(&p, &mut ap);
            let alpha = rr / dot(&p, &ap);
            axpy(alpha, &p, &mut x);
            axpy(-alpha, &ap, &mut r);
            iterations += 1;
            let rr_new = dot(&r, &r);
            if rr_new.sqrt() <= tol * bnorm {
                break;
            }
            let beta = rr_new / rr;
            for (pi, ri) in p.iter_mut().zip(&r) {
                *pi = ri + beta * *pi;
            }
            rr = rr_new;
        }
    }
    true_residual(&x, &mut r);
    let final_res = if bnorm == 0.0 { 0.0 } else { dot(&r, &r).sqrt() / bnorm };
    if final_res <= tol {
        converged = true;
    }
    let x = if final_res <= best.0 { x } else { best.1 };
    let shape = problem.image_shape();
    let mut sp = SaddlePoint::from_primal(problem, Grid::from_vec(shape, x)?, SaddleSource::CgReference)?;
    sp.converged = converged;
    sp.iterations = iterations;
    Ok(sp)
}

/// Final state and per-epoch log of a run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub state: SolverState,
    pub record: ConvergenceRecord,
    pub counts: OpCounts,
}

impl RunOutput {
    pub fn image(&self) -> &Image {
        &self.state.x
    }
}

/// Runs `config.epochs` epochs and logs one row per epoch.
pub fn run(
    config: &SolverConfig,
    problem: &Problem,
    saddle: Option<&SaddlePoint>,
    truth: Option<&Image>,
) -> Result<RunOutput> {
    run_logged(config, problem, saddle, truth, 1)
}

/// As [`run`], logging only every `log_every` epochs and the last one.
pub fn run_logged(
    config: &SolverConfig,
    problem: &Problem,
    saddle: Option<&SaddlePoint>,
    truth: Option<&Image>,
    log_every: usize,
) -> Result<RunOutput> {
    run_observed(config, problem, saddle, truth, log_every, |_, _| {})
}

/// As [`run_logged`], calling `observer` with the state and row of every
/// logged epoch.
pub fn run_observed(
    config: &SolverConfig,
    problem: &Problem,
    saddle: Option<&SaddlePoint>,
    truth: Option<&Image>,
    log_every: usize,
    mut observer: impl FnMut(&SolverState, &RecordRow),
) -> Result<RunOutput> {
    if log_every == 0 {
        return Err(Error::invalid("log_every", "must be at least 1"));
    }
    let n = problem.num_gates();
    if config.num_gates() != n || config.probs.len() != n {
        return Err(Error::invalid("config", "gate count differs from the problem"));
    }
    if let Some(t) = truth {
        problem.image_shape().ensure(t.shape())?;
    }
    if let Some(s) = saddle {
        problem.image_shape().ensure(s.x_star.shape())?;
        if s.y_star.len() != n {
            return Err(Error::invalid("saddle", "one dual block per gate"));
        }
        for (op, y) in problem.gates().iter().zip(&s.y_star) {
            op.range().ensure(y.shape())?;
        }
    }
    let mut state = SolverState::zeros(problem);
    let mut record = ConvergenceRecord::new();
    let mut counts = OpCounts::default();
    if config.epochs == 0 {
        return Ok(RunOutput {
            state,
            record,
            counts,
        });
    }
    let per_epoch = match config.sampling {
        Sampling::Full => 1,
        Sampling::UniformSingleton => n,
    };
    let mut sampler = GateSampler::new(config.sampling, n, config.seed);
    let initial = problem.objective(&state.x)?;
    let ceiling = DIVERGENCE_FACTOR * initial.max(f64::MIN_POSITIVE);

    for epoch in 1..=config.epochs {
        for _ in 0..per_epoch {
            step(&mut state, config, problem, &mut sampler, &mut counts)?;
            if !state.x.is_finite() {
                return Err(Error::Diverged {
                    iteration: state.iteration,
                    reason: "non-finite primal iterate".into(),
                });
            }
        }
        if epoch % log_every != 0 && epoch != config.epochs {
            continue;
        }
        let obj = problem.objective(&state.x)?;
        if !(obj <= ceiling) {
            return Err(Error::Diverged {
                iteration: state.iteration,
                reason: format!("objective {obj:.3e} exceeds {DIVERGENCE_FACTOR:e} x initial {initial:.3e}"),
            });
        }
        let row = RecordRow {
            epoch: epoch as f64,
            dist_sq: saddle.map_or(f64::NAN, |s| s.dist_sq(&state.x, &state.y)),
            objective: obj,
            rmse_to_truth: truth.map_or(Ok(f64::NAN), |t| rmse(&state.x, t))?,
            fwd_calls: counts.forward,
            adj_calls: counts.adjoint,
        };
        observer(&state, &row);
        record.push(row)?;
    }
    Ok(RunOutput {
        state,
        record,
        counts,
    })
}
