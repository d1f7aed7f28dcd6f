#![allow(dead_code)]

use std::sync::Arc;

use mcir_core::linops::{compose, GramSum, LinearMap, Op, Stacked};
use mcir_core::motion::{MotionParams, WarpOperator};
use mcir_core::projector::{Geometry, RayTransform};
use mcir_core::{Grid, Shape};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_grid(shape: Shape, rng: &mut impl Rng) -> Grid {
    Grid::from_fn(shape, |_, _| rng.gen_range(-1.0..1.0))
}

/// `|⟨Ax, y⟩ − ⟨x, A*y⟩| / (‖Ax‖‖y‖)` for one random pair.
pub fn adjoint_gap(op: &dyn LinearMap, rng: &mut impl Rng) -> f64 {
    let x = random_grid(op.domain(), rng);
    let y = random_grid(op.range(), rng);
    let ax = op.apply(&x).unwrap();
    let aty = op.adjoint(&y).unwrap();
    let lhs = ax.dot(&y);
    let rhs = x.dot(&aty);
    let scale = (ax.norm_sq() * y.norm_sq()).sqrt().max(f64::MIN_POSITIVE);
    (lhs - rhs).abs() / scale
}

pub fn worst_adjoint_gap(op: &dyn LinearMap, pairs: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    (0..pairs).map(|_| adjoint_gap(op, &mut r)).fold(0.0, f64::max)
}

/// Odd-sized geometry with a non-default detector spacing.
pub fn odd_geometry() -> Geometry {
    Geometry::with_spacing(23, 19, 17, 41, 0.8).unwrap()
}

/// One representative of each operator family the solvers use.
pub fn operator_families() -> Vec<(&'static str, Op)> {
    let geom = odd_geometry();
    let shape = geom.image_shape();
    let projector: Op = Arc::new(RayTransform::new(geom).unwrap());
    let rigid: Op = Arc::new(WarpOperator::new(MotionParams::rigid(0.23, 1.7, -2.4), shape).unwrap());
    let dilate: Op = Arc::new(WarpOperator::new(MotionParams::dilatation(1.13), shape).unwrap());
    let shrink: Op = Arc::new(WarpOperator::new(MotionParams::dilatation(0.91), shape).unwrap());
    let gates: Vec<Op> = [&rigid, &dilate, &shrink]
        .iter()
        .map(|w| Arc::new(compose(projector.clone(), (*w).clone()).unwrap()) as Op)
        .collect();
    vec![
        ("projector", projector.clone()),
        ("rigid warp", rigid.clone()),
        ("dilatation warp", dilate),
        ("contraction warp", shrink),
        ("projector after rigid warp", gates[0].clone()),
        ("warp after warp", Arc::new(compose(rigid.clone(), rigid).unwrap()) as Op),
        ("stack of gates", Arc::new(Stacked::new(gates.clone()).unwrap()) as Op),
        ("gram sum", Arc::new(GramSum::new(gates, 0.5, 0.1).unwrap()) as Op),
    ]
}

/// Column-by-column dense matrix of `op`.
pub fn dense(op: &dyn LinearMap) -> DMatrix<f64> {
    let (m, n) = (op.range().len(), op.domain().len());
    let mut mat = DMatrix::zeros(m, n);
    let mut e = vec![0.0; n];
    let mut col = vec![0.0; m];
    for j in 0..n {
        e[j] = 1.0;
        op.apply_into(&e, &mut col);
        e[j] = 0.0;
        mat.column_mut(j).copy_from_slice(&col);
    }
    mat
}

/// Golden-section minimiser of a strictly convex function on `[lo, hi]`.
pub fn argmin_1d(f: impl Fn(f64) -> f64, mut lo: f64, mut hi: f64) -> f64 {
    let phi = (5f64.sqrt() - 1.0) / 2.0;
    for _ in 0..200 {
        let a = hi - phi * (hi - lo);
        let b = lo + phi * (hi - lo);
        if f(a) < f(b) {
            hi = b;
        } else {
            lo = a;
        }
    }
    (lo + hi) / 2.0
}

pub fn rel_diff(a: &Grid, b: &Grid) -> f64 {
    (a.dist_sq(b) / b.norm_sq().max(f64::MIN_POSITIVE)).sqrt()
}

/// Solves `(αI + N⁻¹ Σ A_iᵀA_i) x = N⁻¹ Σ A_iᵀ d_i` densely by LU.
pub fn dense_normal_solve(gates: &[Op], data: &[Grid], alpha: f64) -> Grid {
    let shape = gates[0].domain();
    let n = shape.len();
    let count = gates.len() as f64;
    let mut m = DMatrix::<f64>::identity(n, n) * alpha;
    let mut b = nalgebra::DVector::<f64>::zeros(n);
    for (g, d) in gates.iter().zip(data) {
        let a = dense(g.as_ref());
        m += a.transpose() * &a / count;
        b += a.transpose() * nalgebra::DVector::from_column_slice(d.as_slice()) / count;
    }
    let x = m.lu().solve(&b).expect("normal equations are positive definite");
    Grid::from_vec(shape, x.as_slice().to_vec()).unwrap()
}

/// The 8×8 image, 16-angle, two-gate instance used by the CG oracle checks.
pub fn tiny_two_gate_problem() -> (Vec<Op>, Vec<Grid>, f64) {
    let geom = Geometry::new(8, 8, 16, 12).unwrap();
    let shape = geom.image_shape();
    let a: Op = Arc::new(RayTransform::new(geom).unwrap());
    let w: Op = Arc::new(WarpOperator::new(MotionParams::rigid(0.3, 0.7, -0.4), shape).unwrap());
    let gates: Vec<Op> = vec![a.clone(), Arc::new(compose(a, w).unwrap())];
    let truth = mcir_core::simulate::make_phantom(mcir_core::simulate::PhantomKind::Thorax, 16, 16).unwrap();
    let small = Grid::from_fn(shape, |r, c| truth.get(2 * r, 2 * c));
    let mut data: Vec<Grid> = gates.iter().map(|g| g.apply(&small).unwrap()).collect();
    for (k, v) in data[1].as_mut_slice().iter_mut().enumerate() {
        *v += 0.01 * ((k * 7919) % 13) as f64;
    }
    (gates, data, 0.37)
}
