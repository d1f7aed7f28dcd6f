//! 2D parallel-beam ray transform with a matched backprojector.
//!
//! Joseph-style traversal: rays step along the dominant image axis (rows when
//! `|cos θ| >= |sin θ|`, columns otherwise) and each crossed line is linearly
//! interpolated between its two nearest pixels, with path length
//! `1 / max(|cos θ|, |sin θ|)` per line. Seen from the detector, a pixel then
//! contributes a tent of half-width `a = max(|cos θ|, |sin θ|)` and unit mass.
//! Each bin averages that tent over its aperture:
//!
//! ```text
//! w(bin, pixel) = (T((e_hi - s_p) / a) - T((e_lo - s_p) / a)) / Δ
//! ```
//!
//! with `T` the cumulative tent and `s_p` the projected pixel centre. Aperture
//! averaging makes every angle conserve mass exactly,
//! `Δ · Σ_bins A x = Σ_pixels x`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::Shape;
use crate::linops::LinearMap;
use crate::sparse::Csr;

/// Parallel-beam acquisition geometry.
///
/// Pixel `(r, c)` is centred at `(r - (rows-1)/2, c - (cols-1)/2)` with unit
/// width. Angles are `k·π/num_angles`. Detector bins are centred on the
/// rotation axis with spacing `detector_spacing`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Geometry {
    pub image_rows: usize,
    pub image_cols: usize,
    pub num_angles: usize,
    pub num_bins: usize,
    pub detector_spacing: f64,
}

impl Geometry {
    /// Detector span equal to the image diagonal.
    pub fn new(image_rows: usize, image_cols: usize, num_angles: usize, num_bins: usize) -> Result<Self> {
        let diag = ((image_rows * image_rows + image_cols * image_cols) as f64).sqrt();
        let spacing = if num_bins == 0 { 1.0 } else { diag / num_bins as f64 };
        Self::with_spacing(image_rows, image_cols, num_angles, num_bins, spacing)
    }

    pub fn with_spacing(
        image_rows: usize,
        image_cols: usize,
        num_angles: usize,
        num_bins: usize,
        detector_spacing: f64,
    ) -> Result<Self> {
        let g = Self {
            image_rows,
            image_cols,
            num_angles,
            num_bins,
            detector_spacing,
        };
        g.validate()?;
        Ok(g)
    }

    /// 100x100 image, 200 angles, 200 bins.
    pub fn full() -> Self {
        Self::new(100, 100, 200, 200).expect("valid geometry")
    }

    /// 64x64 image, 128 angles, 128 bins.
    pub fn fast() -> Self {
        Self::new(64, 64, 128, 128).expect("valid geometry")
    }

    pub fn validate(&self) -> Result<()> {
        if self.image_rows == 0 || self.image_cols == 0 {
            return Err(Error::invalid("image shape", "must be nonempty"));
        }
        if self.num_angles == 0 {
            return Err(Error::invalid("num_angles", "must be at least 1"));
        }
        if self.num_bins == 0 {
            return Err(Error::invalid("num_bins", "must be at least 1"));
        }
        if !(self.detector_spacing.is_finite() && self.detector_spacing > 0.0) {
            return Err(Error::invalid("detector_spacing", "must be positive and finite"));
        }
        Ok(())
    }

    pub fn image_shape(&self) -> Shape {
        Shape::new(self.image_rows, self.image_cols)
    }

    pub fn sinogram_shape(&self) -> Shape {
        Shape::new(self.num_angles, self.num_bins)
    }

    pub fn angles(&self) -> Vec<f64> {
        (0..self.num_angles)
            .map(|k| k as f64 * std::f64::consts::PI / self.num_angles as f64)
            .collect()
    }

    /// Centre of detector bin `b`.
    pub fn bin_center(&self, b: usize) -> f64 {
        (b as f64 - (self.num_bins as f64 - 1.0) / 2.0) * self.detector_spacing
    }
}

/// The ray transform `A` for a fixed geometry. Weights are precomputed.
#[derive(Debug, Clone)]
pub struct RayTransform {
    geom: Geometry,
    forward: Csr,
    backward: Csr,
}

impl RayTransform {
    pub fn new(geom: Geometry) -> Result<Self> {
        geom.validate()?;
        let forward = build_weights(&geom);
        let backward = forward.transpose();
        Ok(Self {
            geom,
            forward,
            backward,
        })
    }

    pub fn geometry(&self) -> &Geometry {
        &self.geom
    }

    /// Number of stored nonzero weights.
    pub fn nnz(&self) -> usize {
        self.forward.nnz()
    }
}

impl LinearMap for RayTransform {
    fn domain(&self) -> Shape {
        self.geom.image_shape()
    }
    fn range(&self) -> Shape {
        self.geom.sinogram_shape()
    }
    fn apply_into(&self, x: &[f64], out: &mut [f64]) {
        self.forward.matvec(x, out);
    }
    fn adjoint_into(&self, y: &[f64], out: &mut [f64]) {
        self.backward.matvec(y, out);
    }
}

fn build_weights(geom: &Geometry) -> Csr {
    let (rows, cols, nb) = (geom.image_rows, geom.image_cols, geom.num_bins);
    let delta = geom.detector_spacing;
    let s0 = -(nb as f64) * delta / 2.0;
    let rc = (rows as f64 - 1.0) / 2.0;
    let cc = (cols as f64 - 1.0) / 2.0;

    let mut builder = Csr::builder(rows * cols, geom.num_angles * rows * cols * 3);
    let mut per_bin: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nb];
    for theta in geom.angles() {
        let (sn, cs) = theta.sin_cos();
        let profile = Footprint::new(cs.abs(), sn.abs());
        let half = profile.half_width();
        for r in 0..rows {
            let y = r as f64 - rc;
            for c in 0..cols {
                let x = c as f64 - cc;
                let s = x * cs + y * sn;
                let b_lo = ((s - half - s0) / delta).floor();
                let b_hi = ((s + half - s0) / delta).floor();
                if b_hi < 0.0 || b_lo >= nb as f64 {
                    continue;
                }
                let b_lo = b_lo.max(0.0) as usize;
                let b_hi = (b_hi as usize).min(nb - 1);
                let mut lower = profile.cdf(s0 + b_lo as f64 * delta - s);
                for (b, bin) in per_bin.iter_mut().enumerate().take(b_hi + 1).skip(b_lo) {
                    let upper = profile.cdf(s0 + (b + 1) as f64 * delta - s);
                    let w = (upper - lower) / delta;
                    if w > 0.0 {
                        bin.push((r * cols + c, w));
                    }
                    lower = upper;
                }
            }
        }
        for bin in per_bin.iter_mut() {
            for &(p, w) in bin.iter() {
                builder.push(p, w);
            }
            builder.end_row();
            bin.clear();
        }
    }
    builder.finish()
}

/// Unit-mass tent of half-width `half` on the detector axis.
#[derive(Debug, Clone, Copy)]
struct Footprint {
    half: f64,
}

impl Footprint {
    fn new(cos_abs: f64, sin_abs: f64) -> Self {
        Self {
            half: cos_abs.max(sin_abs),
        }
    }

    fn half_width(&self) -> f64 {
        self.half
    }

    /// Mass of the tent left of offset `u`.
    fn cdf(&self, u: f64) -> f64 {
        let t = u / self.half;
        if t <= -1.0 {
            0.0
        } else if t >= 1.0 {
            1.0
        } else if t <= 0.0 {
            0.5 * (1.0 + t) * (1.0 + t)
        } else {
            1.0 - 0.5 * (1.0 - t) * (1.0 - t)
        }
    }
}
