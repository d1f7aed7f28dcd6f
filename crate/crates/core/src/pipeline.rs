//! From a dataset and a target condition number to a ready-to-solve problem.

use crate::error::{Error, Result};
use crate::io::NormRecord;
use crate::linops::{power_method, stacked_norm_sq, Op, DEFAULT_POWER_ITERATIONS};
use crate::simulate::GatedDataset;
use crate::solvers::{Problem, StepNorms};
use crate::theory::RateReport;

pub const DEFAULT_KAPPA: f64 = 70.0;
pub const DEFAULT_POWER_SEED: u64 = 7;

/// Power-iteration estimates for `A`, each `A D_i` and the stack.
pub fn estimate_norms(projector: &Op, gates: &[Op], iterations: usize, seed: u64) -> Result<NormRecord> {
    let base = power_method(projector.as_ref(), iterations, seed)?;
    let gate_norms_sq = gates
        .iter()
        .map(|op| {
            if std::sync::Arc::ptr_eq(op, projector) {
                Ok(base.norm_sq)
            } else {
                power_method(op.as_ref(), iterations, seed).map(|e| e.norm_sq)
            }
        })
        .collect::<Result<Vec<_>>>()?;
    let stacked = if gates.iter().all(|op| std::sync::Arc::ptr_eq(op, projector)) {
        gates.len() as f64 * base.norm_sq
    } else {
        stacked_norm_sq(gates, iterations, seed)?.norm_sq
    };
    Ok(NormRecord {
        base_norm_sq: base.norm_sq,
        gate_norms_sq,
        stacked_norm_sq: stacked,
        power_iterations: iterations,
        power_seed: seed,
    })
}

/// A dataset bound to operators, norms and `α = ‖A‖²/κ`.
#[derive(Debug, Clone)]
pub struct Setup {
    pub projector: Op,
    pub gates: Vec<Op>,
    pub norms: NormRecord,
    pub kappa: f64,
    pub motion_compensated: bool,
    pub problem: Problem,
}

impl Setup {
    /// `cached` must hold motion-compensated estimates for this dataset; it
    /// is ignored when `motion_compensated` is false, where every gate is
    /// `A` and the norms follow from `‖A‖` exactly.
    pub fn new(data: &GatedDataset, kappa: f64, motion_compensated: bool, cached: Option<&NormRecord>) -> Result<Self> {
        if !(kappa > 0.0 && kappa.is_finite()) {
            return Err(Error::invalid("kappa", "must be positive and finite"));
        }
        let (projector, gates) = data.operators(motion_compensated)?;
        let norms = match cached {
            Some(n) if n.gate_norms_sq.len() == gates.len() => {
                if motion_compensated {
                    n.clone()
                } else {
                    NormRecord {
                        gate_norms_sq: vec![n.base_norm_sq; gates.len()],
                        stacked_norm_sq: gates.len() as f64 * n.base_norm_sq,
                        ..n.clone()
                    }
                }
            }
            _ => estimate_norms(&projector, &gates, DEFAULT_POWER_ITERATIONS, DEFAULT_POWER_SEED)?,
        };
        let alpha = norms.base_norm_sq / kappa;
        let problem = Problem::new(gates.clone(), data.sinograms.clone(), alpha)?;
        Ok(Self {
            projector,
            gates,
            norms,
            kappa,
            motion_compensated,
            problem,
        })
    }

    pub fn alpha(&self) -> f64 {
        self.problem.alpha()
    }

    pub fn step_norms(&self) -> StepNorms {
        StepNorms {
            gate_norms: self.norms.gate_norms_sq.iter().map(|v| v.sqrt()).collect(),
            stacked_norm: self.norms.stacked_norm_sq.sqrt(),
        }
    }

    pub fn rate_report(&self) -> Result<RateReport> {
        RateReport::new(
            self.norms.base_norm_sq,
            self.norms.gate_norms_sq.clone(),
            self.norms.stacked_norm_sq,
            self.alpha(),
            self.norms.power_iterations,
            self.norms.power_seed,
        )
    }
}
