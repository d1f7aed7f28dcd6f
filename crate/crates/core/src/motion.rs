//! Displacement operators `D_i`: rigid motion and linear dilatation, realised
//! as bilinear resampling with zero extension.
//!
//! For output pixel centre `p`, `(D x)(p) = x(T⁻¹ p)` where `T` is the motion
//! about the image centre and `x(·)` is the bilinear interpolant of `x`.
//! The adjoint scatters each output's weights back to its source pixels.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Shape;
use crate::linops::LinearMap;
use crate::sparse::Csr;

/// Terminal rotation (radians) of the default rigid sequence.
pub const DEFAULT_RIGID_MAGNITUDE: f64 = 0.15;
/// Terminal dilatation `scale - 1` of the default non-rigid sequence.
pub const DEFAULT_DILATATION_MAGNITUDE: f64 = 0.04;
/// Terminal translation per radian of rigid magnitude, in pixels `(dx, dy)`.
/// With the default magnitude this gives `(5, 3)`.
const RIGID_TRANSLATION_PER_UNIT: [f64; 2] = [5.0 / DEFAULT_RIGID_MAGNITUDE, 3.0 / DEFAULT_RIGID_MAGNITUDE];

/// Sample positions closer than this to a grid index snap onto it.
const SNAP: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MotionKind {
    Rigid,
    Dilatation,
}

impl fmt::Display for MotionKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            MotionKind::Rigid => "rigid",
            MotionKind::Dilatation => "dilatation",
        })
    }
}

/// Parameters of one motion state. `translation` is `(dx, dy)`: `dx` moves
/// along columns, `dy` along rows.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MotionParams {
    pub kind: MotionKind,
    pub rotation: f64,
    pub translation: [f64; 2],
    pub scale: f64,
}

impl MotionParams {
    pub fn identity(kind: MotionKind) -> Self {
        Self {
            kind,
            rotation: 0.0,
            translation: [0.0, 0.0],
            scale: 1.0,
        }
    }

    pub fn rigid(rotation: f64, dx: f64, dy: f64) -> Self {
        Self {
            kind: MotionKind::Rigid,
            rotation,
            translation: [dx, dy],
            scale: 1.0,
        }
    }

    pub fn dilatation(scale: f64) -> Self {
        Self {
            kind: MotionKind::Dilatation,
            rotation: 0.0,
            translation: [0.0, 0.0],
            scale,
        }
    }

    pub fn is_identity(&self) -> bool {
        self.rotation == 0.0 && self.translation == [0.0, 0.0] && self.scale == 1.0
    }

    pub fn validate(&self) -> Result<()> {
        let finite = self.rotation.is_finite()
            && self.translation.iter().all(|t| t.is_finite())
            && self.scale.is_finite();
        if !finite {
            return Err(Error::invalid("motion", "parameters must be finite"));
        }
        if self.scale <= 0.0 {
            return Err(Error::invalid("scale", "must be positive"));
        }
        match self.kind {
            MotionKind::Rigid if self.scale != 1.0 => {
                Err(Error::invalid("scale", "rigid motion requires scale = 1"))
            }
            MotionKind::Dilatation if self.rotation != 0.0 || self.translation != [0.0, 0.0] => Err(
                Error::invalid("motion", "dilatation takes no rotation or translation"),
            ),
            _ => Ok(()),
        }
    }

    /// Maps an output position (centred coordinates `(x, y)`) back to the
    /// reference image.
    fn inverse(&self, x: f64, y: f64) -> (f64, f64) {
        match self.kind {
            MotionKind::Rigid => {
                let (u, v) = (x - self.translation[0], y - self.translation[1]);
                let (s, c) = self.rotation.sin_cos();
                (c * u + s * v, -s * u + c * v)
            }
            MotionKind::Dilatation => (x / self.scale, y / self.scale),
        }
    }
}

/// Linear ramp from the identity (gate 1) to the terminal state (gate N).
///
/// Rigid: rotation up to `magnitude` radians with translation up to
/// `magnitude · (100/3, 20)` pixels. Dilatation: scale up to `1 + magnitude`.
pub fn motion_sequence(kind: MotionKind, num_gates: usize, magnitude: f64) -> Result<Vec<MotionParams>> {
    if num_gates == 0 {
        return Err(Error::invalid("num_gates", "must be at least 1"));
    }
    if !magnitude.is_finite() {
        return Err(Error::invalid("magnitude", "must be finite"));
    }
    let seq = (0..num_gates)
        .map(|i| {
            if i == 0 {
                return MotionParams::identity(kind);
            }
            let t = i as f64 / (num_gates - 1) as f64;
            match kind {
                MotionKind::Rigid => MotionParams::rigid(
                    t * magnitude,
                    t * magnitude * RIGID_TRANSLATION_PER_UNIT[0],
                    t * magnitude * RIGID_TRANSLATION_PER_UNIT[1],
                ),
                MotionKind::Dilatation => MotionParams::dilatation(1.0 + t * magnitude),
            }
        })
        .collect::<Vec<_>>();
    for p in &seq {
        p.validate()?;
    }
    Ok(seq)
}

/// `D_i` on a fixed grid. Identity parameters copy their input unchanged.
#[derive(Debug, Clone)]
pub struct WarpOperator {
    params: MotionParams,
    shape: Shape,
    weights: Option<(Csr, Csr)>,
}

impl WarpOperator {
    pub fn new(params: MotionParams, shape: Shape) -> Result<Self> {
        params.validate()?;
        if shape.is_empty() {
            return Err(Error::invalid("shape", "must be nonempty"));
        }
        let weights = if params.is_identity() {
            None
        } else {
            let fwd = build_weights(&params, shape);
            let adj = fwd.transpose();
            Some((fwd, adj))
        };
        Ok(Self {
            params,
            shape,
            weights,
        })
    }

    pub fn params(&self) -> &MotionParams {
        &self.params
    }
}

impl LinearMap for WarpOperator {
    fn domain(&self) -> Shape {
        self.shape
    }
    fn range(&self) -> Shape {
        self.shape
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        match &self.weights {
            None => out.copy_from_slice(x),
            Some((fwd, _)) => fwd.matvec(x, out),
        }
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        match &self.weights {
            None => out.copy_from_slice(y),
            Some((_, adj)) => adj.matvec(y, out),
        }
    }
}

fn snap(v: f64) -> f64 {
    let r = v.round();
    if (v - r).abs() < SNAP {
        r
    } else {
        v
    }
}

fn build_weights(params: &MotionParams, shape: Shape) -> Csr {
    let (rows, cols) = (shape.rows, shape.cols);
    let rc = (rows as f64 - 1.0) / 2.0;
    let cc = (cols as f64 - 1.0) / 2.0;
    let mut b = Csr::builder(shape.len(), 4 * shape.len());
    for r in 0..rows {
        for c in 0..cols {
            let (sx, sy) = params.inverse(c as f64 - cc, r as f64 - rc);
            let (fc, fr) = (snap(sx + cc), snap(sy + rc));
            let (c0, r0) = (fc.floor(), fr.floor());
            let (tx, ty) = (fc - c0, fr - r0);
            let taps = [
                (r0, c0, (1.0 - ty) * (1.0 - tx)),
                (r0, c0 + 1.0, (1.0 - ty) * tx),
                (r0 + 1.0, c0, ty * (1.0 - tx)),
                (r0 + 1.0, c0 + 1.0, ty * tx),
            ];
            for (sr, sc, w) in taps {
                let inside = sr >= 0.0 && sc >= 0.0 && sr < rows as f64 && sc < cols as f64;
                if inside && w != 0.0 {
                    b.push(sr as usize * cols + sc as usize, w);
                }
            }
            b.end_row();
        }
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::Grid;
    use crate::linops::power_method;

    fn ramp(shape: Shape) -> Grid {
        Grid::from_fn(shape, |r, c| 1.0 + (r * shape.cols + c) as f64 * 0.37 - (c as f64).sin())
    }

    #[test]
    fn identity_is_bitwise_noop() {
        let s = Shape::new(7, 9);
        let w = WarpOperator::new(MotionParams::identity(MotionKind::Rigid), s).unwrap();
        let x = ramp(s);
        assert_eq!(w.apply(&x).unwrap(), x);
        assert_eq!(w.adjoint(&x).unwrap(), x);
    }

    #[test]
    fn integer_translation_shifts_with_zero_fill() {
        let s = Shape::new(6, 8);
        let w = WarpOperator::new(MotionParams::rigid(0.0, 3.0, 0.0), s).unwrap();
        let x = ramp(s);
        let y = w.apply(&x).unwrap();
        for r in 0..6 {
            for c in 0..8 {
                let expect = if c >= 3 { x.get(r, c - 3) } else { 0.0 };
                assert_eq!(y.get(r, c), expect);
            }
        }
    }

    #[test]
    fn adjoint_of_translation_shifts_back() {
        let s = Shape::new(6, 8);
        let w = WarpOperator::new(MotionParams::rigid(0.0, 3.0, 0.0), s).unwrap();
        let x = ramp(s);
        let y = w.adjoint(&x).unwrap();
        for r in 0..6 {
            for c in 0..8 {
                let expect = if c + 3 < 8 { x.get(r, c + 3) } else { 0.0 };
                assert_eq!(y.get(r, c), expect);
            }
        }
    }

    #[test]
    fn quarter_turn_is_a_pixel_permutation() {
        for n in [6usize, 7] {
            let s = Shape::new(n, n);
            let w = WarpOperator::new(MotionParams::rigid(std::f64::consts::FRAC_PI_2, 0.0, 0.0), s)
                .unwrap();
            let x = ramp(s);
            let y = w.apply(&x).unwrap();
            // Output (x', y') samples the input at R(-π/2)(x', y') = (y', -x').
            // In indices: column c_src = r, row r_src = n-1-c.
            for r in 0..n {
                for c in 0..n {
                    assert_eq!(y.get(r, c), x.get(n - 1 - c, r), "({r}, {c})");
                }
            }
        }
    }

    #[test]
    fn dilatation_keeps_the_centre_pixel() {
        let s = Shape::new(9, 9);
        let w = WarpOperator::new(MotionParams::dilatation(1.1), s).unwrap();
        let x = ramp(s);
        let y = w.apply(&x).unwrap();
        assert_eq!(y.get(4, 4), x.get(4, 4));
    }

    #[test]
    fn invalid_params_rejected() {
        let s = Shape::new(4, 4);
        assert!(WarpOperator::new(MotionParams::rigid(f64::NAN, 0.0, 0.0), s).is_err());
        assert!(WarpOperator::new(MotionParams::dilatation(0.0), s).is_err());
        assert!(WarpOperator::new(MotionParams::dilatation(-1.0), s).is_err());
        let mut p = MotionParams::rigid(0.1, 0.0, 0.0);
        p.scale = 1.2;
        assert!(WarpOperator::new(p, s).is_err());
        let mut p = MotionParams::dilatation(1.2);
        p.rotation = 0.1;
        assert!(WarpOperator::new(p, s).is_err());
    }

    #[test]
    fn sequence_endpoints() {
        let one = motion_sequence(MotionKind::Rigid, 1, 0.3).unwrap();
        assert_eq!(one, vec![MotionParams::identity(MotionKind::Rigid)]);

        let two = motion_sequence(MotionKind::Rigid, 2, 0.15).unwrap();
        assert!(two[0].is_identity());
        assert!((two[1].rotation - 0.15).abs() < 1e-15);
        assert!((two[1].translation[0] - 5.0).abs() < 1e-12);
        assert!((two[1].translation[1] - 3.0).abs() < 1e-12);

        let dil = motion_sequence(MotionKind::Dilatation, 11, 0.1).unwrap();
        assert!(dil[0].is_identity());
        assert!((dil[10].scale - 1.1).abs() < 1e-15);
        assert!((dil[5].scale - 1.05).abs() < 1e-15);

        assert!(motion_sequence(MotionKind::Rigid, 0, 0.1).is_err());
    }

    #[test]
    fn default_rigid_warps_are_near_isometries() {
        let s = Shape::new(64, 64);
        for p in motion_sequence(MotionKind::Rigid, 20, DEFAULT_RIGID_MAGNITUDE).unwrap() {
            let w = WarpOperator::new(p, s).unwrap();
            let n = power_method(&w, 100, 7).unwrap().norm();
            assert!((0.9..=1.1).contains(&n), "{p:?}: {n}");
        }
    }

    #[test]
    fn default_dilatation_warps_are_near_isometries() {
        let s = Shape::new(64, 64);
        for p in motion_sequence(MotionKind::Dilatation, 10, DEFAULT_DILATATION_MAGNITUDE).unwrap() {
            let w = WarpOperator::new(p, s).unwrap();
            let n = power_method(&w, 100, 7).unwrap().norm();
            assert!((0.8..=1.2).contains(&n), "{p:?}: {n}");
        }
    }

    #[test]
    fn params_serialize_with_lowercase_kind() {
        let p = MotionParams::rigid(0.1, 2.0, -1.0);
        let json = serde_json::to_string(&p).unwrap();
        assert!(json.contains("\"rigid\""));
        let back: MotionParams = serde_json::from_str(&json).unwrap();
        assert_eq!(back, p);
    }
}
