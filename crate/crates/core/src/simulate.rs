//! Synthetic gated CT data: phantoms, per-gate motion, projection and
//! gate-scaled Gaussian noise.

use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{Grid, Image, Sinogram};
use crate::linops::{compose, Op};
use crate::motion::{
    motion_sequence, MotionKind, MotionParams, WarpOperator, DEFAULT_DILATATION_MAGNITUDE, DEFAULT_RIGID_MAGNITUDE,
};
use crate::projector::{Geometry, RayTransform};

/// Smallest phantom side length.
pub const MIN_PHANTOM_SIDE: usize = 16;
/// Default noise level as a fraction of the largest noiseless bin value.
pub const DEFAULT_RELATIVE_SIGMA: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhantomKind {
    /// Walnut-like: concentric shells around a lobed kernel.
    NestedShells,
    /// Chest-like: soft-tissue body, two lungs, heart and spine.
    Thorax,
}

impl fmt::Display for PhantomKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            PhantomKind::NestedShells => "nested_shells",
            PhantomKind::Thorax => "thorax",
        })
    }
}

impl FromStr for PhantomKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "nested_shells" | "nested-shells" | "walnut" => Ok(PhantomKind::NestedShells),
            "thorax" | "chest" => Ok(PhantomKind::Thorax),
            other => Err(Error::invalid("phantom", format!("unknown phantom `{other}`"))),
        }
    }
}

/// Normalised coordinates: `u` to the right, `v` downwards, both in
/// `[-1, 1]` across the grid.
fn normalised(rows: usize, cols: usize, r: usize, c: usize) -> (f64, f64) {
    let u = (c as f64 - (cols as f64 - 1.0) / 2.0) / (cols as f64 / 2.0);
    let v = (r as f64 - (rows as f64 - 1.0) / 2.0) / (rows as f64 / 2.0);
    (u, v)
}

fn in_ellipse(u: f64, v: f64, cu: f64, cv: f64, ru: f64, rv: f64) -> bool {
    let (a, b) = ((u - cu) / ru, (v - cv) / rv);
    a * a + b * b <= 1.0
}

fn nested_shells_value(u: f64, v: f64) -> f64 {
    if !in_ellipse(u, v, 0.0, 0.0, 0.72, 0.64) {
        return 0.0;
    }
    let mut value = 0.35;
    if !in_ellipse(u, v, 0.0, 0.0, 0.62, 0.55) {
        value = 0.8; // shell
    }
    let rho = (u * u + v * v).sqrt();
    let phi = v.atan2(u);
    let lobe = 0.42 * (1.0 + 0.18 * (5.0 * phi).cos() + 0.06 * (11.0 * phi).sin());
    if rho <= lobe {
        value = 1.0;
        if rho <= lobe * 0.55 && (3.0 * phi).cos() > -0.3 {
            value = 0.55;
        }
        if rho <= 0.08 {
            value = 0.15;
        }
    }
    value
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ThoraxRegion {
    Outside,
    Tissue,
    Lung,
    Heart,
    Spine,
}

fn thorax_region(u: f64, v: f64) -> ThoraxRegion {
    if !in_ellipse(u, v, 0.0, 0.0, 0.80, 0.58) {
        return ThoraxRegion::Outside;
    }
    if in_ellipse(u, v, 0.0, 0.42, 0.11, 0.11) {
        return ThoraxRegion::Spine;
    }
    if in_ellipse(u, v, 0.08, 0.02, 0.18, 0.16) {
        return ThoraxRegion::Heart;
    }
    if in_ellipse(u, v, -0.36, -0.04, 0.24, 0.36) || in_ellipse(u, v, 0.38, -0.06, 0.22, 0.34) {
        return ThoraxRegion::Lung;
    }
    ThoraxRegion::Tissue
}

fn thorax_value(u: f64, v: f64) -> f64 {
    match thorax_region(u, v) {
        ThoraxRegion::Outside => 0.0,
        ThoraxRegion::Tissue => 0.5,
        ThoraxRegion::Lung => 0.08,
        ThoraxRegion::Heart => 0.65,
        ThoraxRegion::Spine => 1.0,
    }
}

/// Deterministic phantom with values in `[0, 1]`.
pub fn make_phantom(kind: PhantomKind, rows: usize, cols: usize) -> Result<Image> {
    if rows < MIN_PHANTOM_SIDE || cols < MIN_PHANTOM_SIDE {
        return Err(Error::invalid(
            "shape",
            format!("phantoms need at least {MIN_PHANTOM_SIDE}x{MIN_PHANTOM_SIDE} pixels, got {rows}x{cols}"),
        ));
    }
    let shape = crate::grid::Shape::new(rows, cols);
    Ok(Grid::from_fn(shape, |r, c| {
        let (u, v) = normalised(rows, cols, r, c);
        let value = match kind {
            PhantomKind::NestedShells => nested_shells_value(u, v),
            PhantomKind::Thorax => thorax_value(u, v),
        };
        value.clamp(0.0, 1.0)
    }))
}

/// Additive noise `ε_i ~ N(0, σ²/N)` per bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NoiseModel {
    pub sigma: f64,
}

impl NoiseModel {
    pub fn new(sigma: f64) -> Result<Self> {
        if !(sigma >= 0.0 && sigma.is_finite()) {
            return Err(Error::invalid("sigma", "must be finite and nonnegative"));
        }
        Ok(Self { sigma })
    }

    pub fn gate_std(&self, num_gates: usize) -> f64 {
        self.sigma / (num_gates as f64).sqrt()
    }
}

const GOLDEN: u64 = 0x9E37_79B9_7F4A_7C15;

fn splitmix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// Counter-based standard normal stream for one gate.
///
/// Key `k = splitmix64(seed + (gate + 1)·φ)`, where `φ = 0x9E3779B97F4A7C15`.
/// Uniform `j` is `(splitmix64(k + (j + 1)·φ) >> 11 + 0.5) / 2⁵³` and
/// normals `2m, 2m+1` are the Box–Muller pair built from uniforms `2m, 2m+1`.
#[derive(Debug, Clone, Copy)]
pub struct NormalStream {
    key: u64,
}

impl NormalStream {
    pub fn new(seed: u64, gate: usize) -> Self {
        Self {
            key: splitmix64(seed.wrapping_add((gate as u64 + 1).wrapping_mul(GOLDEN))),
        }
    }

    fn uniform(&self, j: u64) -> f64 {
        let bits = splitmix64(self.key.wrapping_add(j.wrapping_add(1).wrapping_mul(GOLDEN))) >> 11;
        (bits as f64 + 0.5) * (1.0 / (1u64 << 53) as f64)
    }

    /// Fills `out` with normals `0..out.len()`.
    pub fn fill(&self, out: &mut [f64]) {
        for (m, pair) in out.chunks_mut(2).enumerate() {
            let (u1, u2) = (self.uniform(2 * m as u64), self.uniform(2 * m as u64 + 1));
            let radius = (-2.0 * u1.ln()).sqrt();
            let angle = std::f64::consts::TAU * u2;
            pair[0] = radius * angle.cos();
            if let Some(second) = pair.get_mut(1) {
                *second = radius * angle.sin();
            }
        }
    }
}

/// Gated measurements together with everything needed to regenerate them.
#[derive(Debug, Clone, PartialEq)]
pub struct GatedDataset {
    pub geometry: Geometry,
    pub phantom: Option<PhantomKind>,
    pub motion: Vec<MotionParams>,
    pub noise: NoiseModel,
    pub seed: u64,
    /// Reference-state (gate 1) image.
    pub truth: Image,
    pub sinograms: Vec<Sinogram>,
}

impl GatedDataset {
    pub fn num_gates(&self) -> usize {
        self.motion.len()
    }

    /// The projector and the per-gate operators `A D_i`, or `A` for every
    /// gate when `motion_compensated` is false.
    pub fn operators(&self, motion_compensated: bool) -> Result<(Op, Vec<Op>)> {
        let projector: Op = Arc::new(RayTransform::new(self.geometry.clone())?);
        let gates = gate_operators(&projector, &self.motion, motion_compensated)?;
        Ok((projector, gates))
    }
}

/// `A D_i` for each motion state; identity states reuse `A` directly.
pub fn gate_operators(projector: &Op, motion: &[MotionParams], motion_compensated: bool) -> Result<Vec<Op>> {
    let shape = projector.domain();
    motion
        .iter()
        .map(|params| {
            if !motion_compensated || params.is_identity() {
                return Ok(projector.clone());
            }
            let warp: Op = Arc::new(WarpOperator::new(*params, shape)?);
            Ok(Arc::new(compose(projector.clone(), warp)?) as Op)
        })
        .collect()
}

/// `d_i = A D_i x + ε_i`, with gate `i` noise drawn from its own substream of
/// `seed`.
pub fn generate(
    phantom: &Image,
    motion: &[MotionParams],
    geometry: &Geometry,
    noise: NoiseModel,
    seed: u64,
) -> Result<GatedDataset> {
    if motion.is_empty() {
        return Err(Error::invalid("motion", "need at least one gate"));
    }
    if !motion[0].is_identity() {
        return Err(Error::invalid("motion", "gate 1 must be the identity state"));
    }
    for m in motion {
        m.validate()?;
    }
    NoiseModel::new(noise.sigma)?;
    geometry.image_shape().ensure(phantom.shape())?;
    let projector: Op = Arc::new(RayTransform::new(geometry.clone())?);
    let gates = gate_operators(&projector, motion, true)?;
    let std = noise.gate_std(motion.len());
    let mut sinograms = Vec::with_capacity(gates.len());
    for (i, op) in gates.iter().enumerate() {
        let mut d = op.apply(phantom)?;
        if std > 0.0 {
            let mut eps = vec![0.0; d.shape().len()];
            NormalStream::new(seed, i).fill(&mut eps);
            for (di, e) in d.as_mut_slice().iter_mut().zip(&eps) {
                *di += std * e;
            }
        }
        sinograms.push(d);
    }
    Ok(GatedDataset {
        geometry: geometry.clone(),
        phantom: None,
        motion: motion.to_vec(),
        noise,
        seed,
        truth: phantom.clone(),
        sinograms,
    })
}

/// Named presets standing in for the rigid and non-rigid experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// 20 gates of rotation plus translation on the nested-shells phantom.
    Rigid,
    /// 10 gates of linear dilatation on the thorax phantom.
    Nonrigid,
}

impl fmt::Display for Preset {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Preset::Rigid => "rigid",
            Preset::Nonrigid => "nonrigid",
        })
    }
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rigid" => Ok(Preset::Rigid),
            "nonrigid" | "non-rigid" => Ok(Preset::Nonrigid),
            other => Err(Error::invalid("preset", format!("unknown preset `{other}`"))),
        }
    }
}

/// Everything `generate` needs, in serialisable form.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetSpec {
    pub phantom: PhantomKind,
    pub motion: MotionKind,
    pub num_gates: usize,
    pub magnitude: f64,
    pub geometry: Geometry,
    /// Absolute noise level; `None` means the relative default.
    pub sigma: Option<f64>,
    pub seed: u64,
}

pub const DEFAULT_SEED: u64 = 20_220_101;

impl DatasetSpec {
    /// `fast` selects the 64×64 geometry instead of 100×100.
    pub fn preset(preset: Preset, fast: bool) -> Self {
        let geometry = if fast { Geometry::fast() } else { Geometry::full() };
        match preset {
            Preset::Rigid => Self {
                phantom: PhantomKind::NestedShells,
                motion: MotionKind::Rigid,
                num_gates: 20,
                magnitude: DEFAULT_RIGID_MAGNITUDE,
                geometry,
                sigma: None,
                seed: DEFAULT_SEED,
            },
            Preset::Nonrigid => Self {
                phantom: PhantomKind::Thorax,
                motion: MotionKind::Dilatation,
                num_gates: 10,
                magnitude: DEFAULT_DILATATION_MAGNITUDE,
                geometry,
                sigma: None,
                seed: DEFAULT_SEED,
            },
        }
    }

    pub fn build(&self) -> Result<GatedDataset> {
        let phantom = make_phantom(self.phantom, self.geometry.image_rows, self.geometry.image_cols)?;
        let motion = motion_sequence(self.motion, self.num_gates, self.magnitude)?;
        let sigma = match self.sigma {
            Some(s) => s,
            None => {
                let clean = generate(&phantom, &motion, &self.geometry, NoiseModel::new(0.0)?, self.seed)?;
                let peak = clean.sinograms.iter().map(|d| d.max_abs()).fold(0.0, f64::max);
                DEFAULT_RELATIVE_SIGMA * peak
            }
        };
        let mut data = generate(&phantom, &motion, &self.geometry, NoiseModel::new(sigma)?, self.seed)?;
        data.phantom = Some(self.phantom);
        Ok(data)
    }
}
