//! Tikhonov regulariser `g(x) = α‖x‖²` and gate data fits
//! `f_i(y) = N⁻¹‖y − d_i‖²` (acting on sinogram space, precomposed with
//! `A_i`), with their conjugates and proximal maps.
//!
//! Closed forms:
//!
//! ```text
//! prox_{τg}(v)     = v / (1 + 2ατ)
//! f*(w)            = (N/4)‖w‖² + ⟨w, d⟩
//! prox_{σf*}(v)    = (v − σd) / (1 + σN/2)
//! μ_g = 2α,  μ_{f*} = N/2
//! ```

use crate::error::{Error, Result};
use crate::grid::{dist_sq, Image, Sinogram};
use crate::linops::Op;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tikhonov {
    pub alpha: f64,
}

impl Tikhonov {
    pub fn value(&self, x: &Image) -> f64 {
        self.alpha * x.norm_sq()
    }

    pub fn prox(&self, tau: f64, v: &Image) -> Result<Image> {
        prox_g(self.alpha, tau, v)
    }
}

/// One gate's data term.
#[derive(Debug, Clone)]
pub struct GatedQuadraticFit {
    pub num_gates: usize,
    pub data: Sinogram,
}

impl GatedQuadraticFit {
    pub fn new(num_gates: usize, data: Sinogram) -> Result<Self> {
        if num_gates == 0 {
            return Err(Error::invalid("num_gates", "must be at least 1"));
        }
        if !data.is_finite() {
            return Err(Error::invalid("data", "must be finite"));
        }
        Ok(Self { num_gates, data })
    }

    /// `f(y) = N⁻¹‖y − d‖²`
    pub fn value(&self, y: &Sinogram) -> f64 {
        dist_sq(y.as_slice(), self.data.as_slice()) / self.num_gates as f64
    }

    /// `f*(w) = (N/4)‖w‖² + ⟨w, d⟩`
    pub fn conjugate(&self, w: &Sinogram) -> f64 {
        self.num_gates as f64 / 4.0 * w.norm_sq() + w.dot(&self.data)
    }

    pub fn prox_conjugate(&self, sigma: f64, v: &Sinogram) -> Result<Sinogram> {
        let mut out = v.clone();
        prox_fstar_in_place(self.num_gates, sigma, &self.data, out.as_mut_slice())?;
        Ok(out)
    }
}

fn check_step(name: &'static str, step: f64) -> Result<()> {
    if step.is_finite() && step >= 0.0 {
        Ok(())
    } else {
        Err(Error::invalid(name, format!("step size must be finite and >= 0, got {step}")))
    }
}

/// `argmin_u ½‖u − v‖² + τα‖u‖²`
pub fn prox_g(alpha: f64, tau: f64, v: &Image) -> Result<Image> {
    let mut out = v.clone();
    prox_g_in_place(alpha, tau, out.as_mut_slice())?;
    Ok(out)
}

pub(crate) fn prox_g_in_place(alpha: f64, tau: f64, v: &mut [f64]) -> Result<()> {
    check_step("tau", tau)?;
    if tau == 0.0 {
        return Ok(());
    }
    let shrink = 1.0 / (1.0 + 2.0 * alpha * tau);
    v.iter_mut().for_each(|e| *e *= shrink);
    Ok(())
}

/// `prox_{σ f*}` for `f(y) = N⁻¹‖y − d‖²`.
pub fn prox_fstar(num_gates: usize, sigma: f64, data: &Sinogram, v: &Sinogram) -> Result<Sinogram> {
    data.shape().ensure(v.shape())?;
    let mut out = v.clone();
    prox_fstar_in_place(num_gates, sigma, data, out.as_mut_slice())?;
    Ok(out)
}

pub(crate) fn prox_fstar_in_place(num_gates: usize, sigma: f64, data: &Sinogram, v: &mut [f64]) -> Result<()> {
    check_step("sigma", sigma)?;
    if sigma == 0.0 {
        return Ok(());
    }
    let denom = 1.0 + sigma * num_gates as f64 / 2.0;
    for (vi, di) in v.iter_mut().zip(data.as_slice()) {
        *vi = (*vi - sigma * di) / denom;
    }
    Ok(())
}

/// `O(x) = α‖x‖² + Σ_i N⁻¹‖A_i x − d_i‖²`
pub fn objective(alpha: f64, gates: &[Op], data: &[Sinogram], x: &Image) -> Result<f64> {
    if gates.len() != data.len() {
        return Err(Error::invalid("gates", "operator and data counts differ"));
    }
    let n = gates.len() as f64;
    let mut total = alpha * x.norm_sq();
    for (op, d) in gates.iter().zip(data) {
        let ax = op.apply(x)?;
        d.shape().ensure(ax.shape())?;
        total += dist_sq(ax.as_slice(), d.as_slice()) / n;
    }
    Ok(total)
}

/// Strong-convexity moduli `(μ_g, μ_{f*}) = (2α, N/2)`.
pub fn moduli(alpha: f64, num_gates: usize) -> Result<(f64, f64)> {
    if !(alpha > 0.0 && alpha.is_finite()) {
        return Err(Error::invalid("alpha", "must be positive for strong convexity"));
    }
    if num_gates == 0 {
        return Err(Error::invalid("num_gates", "must be at least 1"));
    }
    Ok((2.0 * alpha, num_gates as f64 / 2.0))
}
