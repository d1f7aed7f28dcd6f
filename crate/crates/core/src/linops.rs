//! Linear operator contract and generic combinators.
//!
//! All inner products are the unweighted Euclidean product on raveled grids.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::grid::{axpy, dot, Grid, Shape};

/// A linear map between two grids, together with its exact adjoint.
///
/// Implementations are immutable after construction; `apply_into` and
/// `adjoint_into` overwrite their output buffer and may be called from
/// several threads at once.
pub trait LinearMap: Send + Sync + fmt::Debug {
    fn domain(&self) -> Shape;
    fn range(&self) -> Shape;
    fn apply_into(&self, x: &[f64], out: &mut [f64]);
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]);

    fn apply(&self, x: &Grid) -> Result<Grid> {
        self.domain().ensure(x.shape())?;
        let mut out = Grid::zeros(self.range());
        self.apply_into(x.as_slice(), out.as_mut_slice());
        Ok(out)
    }

    fn adjoint(&self, y: &Grid) -> Result<Grid> {
        self.range().ensure(y.shape())?;
        let mut out = Grid::zeros(self.domain());
        self.adjoint_into(y.as_slice(), out.as_mut_slice());
        Ok(out)
    }
}

/// Shared handle to an operator.
pub type Op = Arc<dyn LinearMap>;

#[derive(Debug, Clone, Copy)]
pub struct Identity {
    shape: Shape,
}

impl Identity {
    pub fn new(shape: Shape) -> Self {
        Self { shape }
    }
}

impl LinearMap for Identity {
    fn domain(&self) -> Shape {
        self.shape
    }
    fn range(&self) -> Shape {
        self.shape
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        out.copy_from_slice(x);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.copy_from_slice(y);
    }
}

/// Elementwise scaling by a fixed weight grid.
#[derive(Debug, Clone)]
pub struct Diagonal {
    weights: Grid,
}

impl Diagonal {
    pub fn new(weights: Grid) -> Self {
        Self { weights }
    }
}

impl LinearMap for Diagonal {
    fn domain(&self) -> Shape {
        self.weights.shape()
    }
    fn range(&self) -> Shape {
        self.weights.shape()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for ((o, xi), w) in out.iter_mut().zip(x).zip(self.weights.as_slice()) {
            *o = w * xi;
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.apply_into(y, out);
    }
}

/// `outer ∘ inner`
#[derive(Debug, Clone)]
pub struct Composed {
    outer: Op,
    inner: Op,
}

impl LinearMap for Composed {
    fn domain(&self) -> Shape {
        self.inner.domain()
    }
    fn range(&self) -> Shape {
        self.outer.range()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.inner.range().len()];
        self.inner.apply_into(x, &mut tmp);
        self.outer.apply_into(&tmp, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        let mut tmp = vec![0.0; self.outer.domain().len()];
        self.outer.adjoint_into(y, &mut tmp);
        self.inner.adjoint_into(&tmp, out);
    }
}

impl Composed {
    pub fn outer(&self) -> &Op {
        &self.outer
    }
    pub fn inner(&self) -> &Op {
        &self.inner
    }
}

pub fn compose(outer: Op, inner: Op) -> Result<Composed> {
    if inner.range() != outer.domain() {
        return Err(Error::ShapeMismatch {
            expected: outer.domain(),
            actual: inner.range(),
        });
    }
    Ok(Composed { outer, inner })
}

/// Row-stacking `(A_1; ...; A_N)` over a common domain. The range is the
/// concatenation of the block ranges.
#[derive(Debug, Clone)]
pub struct Stacked {
    blocks: Vec<Op>,
    offsets: Vec<usize>,
    range: Shape,
}

impl Stacked {
    pub fn new(blocks: Vec<Op>) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("blocks", "empty block list"))?;
        let domain = first.domain();
        let mut offsets = Vec::with_capacity(blocks.len() + 1);
        let mut total = 0;
        offsets.push(0);
        for b in &blocks {
            domain.ensure(b.domain())?;
            total += b.range().len();
            offsets.push(total);
        }
        let r0 = first.range();
        let range = if blocks.iter().all(|b| b.range() == r0) {
            Shape::new(r0.rows * blocks.len(), r0.cols)
        } else {
            Shape::new(total, 1)
        };
        Ok(Self {
            blocks,
            offsets,
            range,
        })
    }

    pub fn blocks(&self) -> &[Op] {
        &self.blocks
    }

    pub fn block_range(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }
}

impl LinearMap for Stacked {
    fn domain(&self) -> Shape {
        self.blocks[0].domain()
    }
    fn range(&self) -> Shape {
        self.range
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.apply_into(x, &mut out[self.block_range(i)]);
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        out.fill(0.0);
        let mut tmp = vec![0.0; out.len()];
        for (i, b) in self.blocks.iter().enumerate() {
            b.adjoint_into(&y[self.block_range(i)], &mut tmp);
            axpy(1.0, &tmp, out);
        }
    }
}

/// Self-adjoint `shift·I + weight·Σ_i A_i* A_i` on the common domain.
#[derive(Debug, Clone)]
pub struct GramSum {
    blocks: Vec<Op>,
    weight: f64,
    shift: f64,
}

impl GramSum {
    pub fn new(blocks: Vec<Op>, weight: f64, shift: f64) -> Result<Self> {
        let first = blocks
            .first()
            .ok_or_else(|| Error::invalid("blocks", "empty block list"))?;
        let domain = first.domain();
        for b in &blocks {
            domain.ensure(b.domain())?;
        }
        Ok(Self {
            blocks,
            weight,
            shift,
        })
    }
}

impl LinearMap for GramSum {
    fn domain(&self) -> Shape {
        self.blocks[0].domain()
    }
    fn range(&self) -> Shape {
        self.domain()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        for (o, xi) in out.iter_mut().zip(x) {
            *o = self.shift * xi;
        }
        let mut tmp = vec![0.0; out.len()];
        for b in &self.blocks {
            let mut proj = vec![0.0; b.range().len()];
            b.apply_into(x, &mut proj);
            b.adjoint_into(&proj, &mut tmp);
            axpy(self.weight, &tmp, out);
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.apply_into(y, out);
    }
}

pub const DEFAULT_POWER_ITERATIONS: usize = 100;
const RAYLEIGH_RTOL: f64 = 1e-10;

/// Result of a power iteration on a Gram operator `A*A`.
#[derive(Debug, Clone)]
pub struct NormEstimate {
    /// Final Rayleigh quotient, an estimate of `‖A‖²`.
    pub norm_sq: f64,
    pub iterations: usize,
    pub seed: u64,
    pub converged: bool,
    /// The start vector was annihilated: the operator is (numerically) zero.
    pub degenerate: bool,
    /// Rayleigh quotient after every iteration.
    pub rayleigh: Vec<f64>,
}

impl NormEstimate {
    pub fn norm(&self) -> f64 {
        self.norm_sq.sqrt()
    }
}

/// Largest eigenvalue of a positive semi-definite map given as a closure.
fn psd_power_iteration(
    len: usize,
    iterations: usize,
    seed: u64,
    mut gram: impl FnMut(&[f64], &mut [f64]),
) -> Result<NormEstimate> {
    if iterations == 0 {
        return Err(Error::invalid("iterations", "must be at least 1"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v: Vec<f64> = (0..len).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let n0 = dot(&v, &v).sqrt();
    v.iter_mut().for_each(|e| *e /= n0);

    let mut w = vec![0.0; len];
    let mut rayleigh = Vec::with_capacity(iterations);
    let mut converged = false;
    let mut degenerate = false;
    for _ in 0..iterations {
        gram(&v, &mut w);
        let lambda = dot(&v, &w);
        let wn = dot(&w, &w).sqrt();
        if wn == 0.0 || !wn.is_finite() {
            degenerate = true;
            rayleigh.push(0.0);
            break;
        }
        let prev = rayleigh.last().copied();
        rayleigh.push(lambda);
        for (vi, wi) in v.iter_mut().zip(&w) {
            *vi = wi / wn;
        }
        if let Some(p) = prev {
            if (lambda - p).abs() <= RAYLEIGH_RTOL * lambda.abs() {
                converged = true;
                break;
            }
        }
    }
    let norm_sq = if degenerate {
        0.0
    } else {
        rayleigh.last().copied().unwrap_or(0.0).max(0.0)
    };
    Ok(NormEstimate {
        norm_sq,
        iterations: rayleigh.len(),
        seed,
        converged,
        degenerate,
        rayleigh,
    })
}

/// Estimates `‖op‖` by power iteration on `op* op` from a seeded random start.
pub fn power_method(op: &dyn LinearMap, iterations: usize, seed: u64) -> Result<NormEstimate> {
    let mut tmp = vec![0.0; op.range().len()];
    psd_power_iteration(op.domain().len(), iterations, seed, |v, out| {
        op.apply_into(v, &mut tmp);
        op.adjoint_into(&tmp, out);
    })
}

/// Estimates `‖(A_1; ...; A_N)‖² = ‖Σ_i A_i* A_i‖`.
pub fn stacked_norm_sq(blocks: &[Op], iterations: usize, seed: u64) -> Result<NormEstimate> {
    let gram = GramSum::new(blocks.to_vec(), 1.0, 0.0)?;
    psd_power_iteration(gram.domain().len(), iterations, seed, |v, out| {
        gram.apply_into(v, out)
    })
}
