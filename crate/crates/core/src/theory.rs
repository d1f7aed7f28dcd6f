//! Linear convergence rates of PDHG and SPDHG for the gated model.
//!
//! With `l(κ, n) = (1 − 2n⁻¹(1 + √(1+κ))⁻¹)ⁿ`:
//!
//! ```text
//! κ_SPDHG = max_i ‖A_i‖² / (αN)     r_SPDHG = l(κ_SPDHG, N)
//! κ_PDHG  = ‖(A_1..A_N)‖² / (αN)    r_PDHG  = l(κ_PDHG, 1)
//! ```
//!
//! Rates are per epoch: one PDHG iteration or N SPDHG iterations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// `l(κ, n)`, in `[0, 1)` for `κ >= 0`, `n >= 1`.
pub fn rate_l(kappa: f64, n: usize) -> Result<f64> {
    if !(kappa >= 0.0) {
        return Err(Error::invalid("kappa", format!("must be >= 0, got {kappa}")));
    }
    if n == 0 {
        return Err(Error::invalid("n", "must be at least 1"));
    }
    let per_step = 1.0 - 2.0 / (n as f64 * (1.0 + (1.0 + kappa).sqrt()));
    Ok(per_step.powi(n as i32))
}

/// `(κ_SPDHG, κ_PDHG)` from norm estimates.
pub fn condition_numbers(
    gate_norms_sq: &[f64],
    stacked_norm_sq: f64,
    alpha: f64,
    num_gates: usize,
) -> Result<(f64, f64)> {
    if !(alpha > 0.0) {
        return Err(Error::invalid("alpha", "must be positive"));
    }
    if num_gates == 0 || gate_norms_sq.is_empty() {
        return Err(Error::invalid("num_gates", "must be at least 1"));
    }
    let max_sq = gate_norms_sq.iter().copied().fold(0.0, f64::max);
    let an = alpha * num_gates as f64;
    Ok((max_sq / an, stacked_norm_sq / an))
}

/// `(r_SPDHG, r_PDHG)`
pub fn theorem_rates(kappa_spdhg: f64, kappa_pdhg: f64, num_gates: usize) -> Result<(f64, f64)> {
    Ok((rate_l(kappa_spdhg, num_gates)?, rate_l(kappa_pdhg, 1)?))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DominanceReport {
    pub kappa: f64,
    /// `(N, l(κ/N, N), l(κ, 1), l(κ/N, N) < l(κ, 1))` for `N = 2..=n_max`.
    pub table: Vec<(usize, f64, f64, bool)>,
    pub holds: bool,
}

/// Evaluates `l(κ/N, N) < l(κ, 1)` for every `N` in `2..=n_max`. Reports,
/// never errors, for κ outside the regime where the claim is made.
pub fn dominance_check(kappa: f64, n_max: usize) -> Result<DominanceReport> {
    let pdhg = rate_l(kappa, 1)?;
    let mut table = Vec::with_capacity(n_max.saturating_sub(1));
    for n in 2..=n_max {
        let spdhg = rate_l(kappa / n as f64, n)?;
        table.push((n, spdhg, pdhg, spdhg < pdhg));
    }
    let holds = table.iter().all(|row| row.3);
    Ok(DominanceReport { kappa, table, holds })
}

/// `(|max_i ‖A_i‖²/‖A‖² − 1|, |‖(A_1..A_N)‖²/(N‖A‖²) − 1|)`
pub fn approximation_report(
    gate_norms_sq: &[f64],
    stacked_norm_sq: f64,
    base_norm_sq: f64,
    num_gates: usize,
) -> Result<(f64, f64)> {
    if !(base_norm_sq > 0.0) {
        return Err(Error::invalid("base_norm_sq", "must be positive"));
    }
    if num_gates == 0 {
        return Err(Error::invalid("num_gates", "must be at least 1"));
    }
    let max_sq = gate_norms_sq.iter().copied().fold(0.0, f64::max);
    Ok((
        (max_sq / base_norm_sq - 1.0).abs(),
        (stacked_norm_sq / (num_gates as f64 * base_norm_sq) - 1.0).abs(),
    ))
}

/// Everything the rate analysis of one dataset produces.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RateReport {
    pub num_gates: usize,
    pub alpha: f64,
    /// `‖A‖² / α`
    pub kappa_global: f64,
    pub kappa_spdhg: f64,
    pub kappa_pdhg: f64,
    pub r_spdhg: f64,
    pub r_pdhg: f64,
    /// `l(κ/N, N)` and `l(κ, 1)`: the rates under the near-isometry approximation.
    pub r_spdhg_approx: f64,
    pub r_pdhg_approx: f64,
    pub approx_max_precision: f64,
    pub approx_stack_precision: f64,
    pub base_norm_sq: f64,
    pub gate_norms_sq: Vec<f64>,
    pub stacked_norm_sq: f64,
    pub dominance_holds: bool,
    pub power_iterations: usize,
    pub power_seed: u64,
}

impl RateReport {
    pub fn new(
        base_norm_sq: f64,
        gate_norms_sq: Vec<f64>,
        stacked_norm_sq: f64,
        alpha: f64,
        power_iterations: usize,
        power_seed: u64,
    ) -> Result<Self> {
        let n = gate_norms_sq.len();
        let (kappa_spdhg, kappa_pdhg) = condition_numbers(&gate_norms_sq, stacked_norm_sq, alpha, n)?;
        let (r_spdhg, r_pdhg) = theorem_rates(kappa_spdhg, kappa_pdhg, n)?;
        let kappa_global = base_norm_sq / alpha;
        let (approx_max_precision, approx_stack_precision) =
            approximation_report(&gate_norms_sq, stacked_norm_sq, base_norm_sq, n)?;
        let dominance_holds = n < 2 || dominance_check(kappa_global, n)?.holds;
        Ok(Self {
            num_gates: n,
            alpha,
            kappa_global,
            kappa_spdhg,
            kappa_pdhg,
            r_spdhg,
            r_pdhg,
            r_spdhg_approx: rate_l(kappa_global / n as f64, n)?,
            r_pdhg_approx: rate_l(kappa_global, 1)?,
            approx_max_precision,
            approx_stack_precision,
            base_norm_sq,
            gate_norms_sq,
            stacked_norm_sq,
            dominance_holds,
            power_iterations,
            power_seed,
        })
    }

    /// Plain-text table, one quantity per line.
    pub fn to_table(&self) -> String {
        let rows: [(&str, String); 11] = [
            ("gates", self.num_gates.to_string()),
            ("alpha", format!("{:.6e}", self.alpha)),
            ("kappa (|A|^2/alpha)", format!("{:.4}", self.kappa_global)),
            ("kappa SPDHG", format!("{:.4}", self.kappa_spdhg)),
            ("kappa PDHG", format!("{:.4}", self.kappa_pdhg)),
            ("rate SPDHG / epoch", format!("{:.5}", self.r_spdhg)),
            ("rate PDHG / epoch", format!("{:.5}", self.r_pdhg)),
            ("rate SPDHG (approx)", format!("{:.5}", self.r_spdhg_approx)),
            ("rate PDHG (approx)", format!("{:.5}", self.r_pdhg_approx)),
            (
                "approx precision max/stack",
                format!("{:.4} / {:.4}", self.approx_max_precision, self.approx_stack_precision),
            ),
            ("dominance l(k/N,N) < l(k,1)", self.dominance_holds.to_string()),
        ];
        rows.iter()
            .map(|(k, v)| format!("{k:<30} {v}\n"))
            .collect()
    }
}
