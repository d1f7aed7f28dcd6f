//! Convergence records, linear-rate fitting and image metrics.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::grid::{dist_sq, Image};

/// One logged epoch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RecordRow {
    pub epoch: f64,
    /// `‖(x, y) − (x*, y*)‖²`, NaN when no saddle point was supplied.
    pub dist_sq: f64,
    pub objective: f64,
    /// NaN when no ground truth was supplied.
    pub rmse_to_truth: f64,
    pub fwd_calls: u64,
    pub adj_calls: u64,
}

/// Per-epoch trajectory of a solver run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    rows: Vec<RecordRow>,
}

impl ConvergenceRecord {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends a row; epochs must increase strictly and counts never drop.
    pub fn push(&mut self, row: RecordRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.epoch <= last.epoch {
                return Err(Error::invalid("epoch", "epochs must increase strictly"));
            }
            if row.fwd_calls < last.fwd_calls || row.adj_calls < last.adj_calls {
                return Err(Error::invalid("calls", "operation counts must not decrease"));
            }
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn rows(&self) -> &[RecordRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn last(&self) -> Option<&RecordRow> {
        self.rows.last()
    }
}

/// Least-squares line through `(epoch, ln dist_sq)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    /// `exp(slope)`: the fitted per-epoch contraction of `dist_sq`.
    pub rate: f64,
    pub log_intercept: f64,
    pub r_squared: f64,
    pub epoch_window: (f64, f64),
}

/// Default fit window, in epochs (inclusive).
pub const DEFAULT_FIT_WINDOW: (f64, f64) = (5.0, 60.0);

/// Fits `dist_sq ≈ C · rateᴷ` over the rows whose epoch lies in `window`.
pub fn fit_rate(record: &ConvergenceRecord, window: (f64, f64)) -> Result<RateFit> {
    let pts: Vec<(f64, f64)> = record
        .rows()
        .iter()
        .filter(|r| r.epoch >= window.0 && r.epoch <= window.1)
        .map(|r| (r.epoch, r.dist_sq))
        .collect();
    if pts.len() < 5 {
        return Err(Error::invalid(
            "window",
            format!("need at least 5 rows, found {}", pts.len()),
        ));
    }
    if let Some(&(epoch, d)) = pts.iter().find(|(_, d)| !(*d > 0.0)) {
        return Err(Error::invalid(
            "dist_sq",
            format!("nonpositive distance {d} at epoch {epoch}"),
        ));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1.ln()).sum::<f64>() / n;
    let (mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0);
    for &(x, d) in &pts {
        let (dx, dy) = (x - mx, d.ln() - my);
        sxx += dx * dx;
        sxy += dx * dy;
        syy += dy * dy;
    }
    let slope = sxy / sxx;
    let r_squared = if syy == 0.0 {
        1.0
    } else {
        (sxy * sxy / (sxx * syy)).clamp(0.0, 1.0)
    };
    Ok(RateFit {
        rate: slope.exp(),
        log_intercept: my - slope * mx,
        r_squared,
        epoch_window: (pts[0].0, pts[pts.len() - 1].0),
    })
}

/// Root-mean-square difference.
pub fn rmse(a: &Image, b: &Image) -> Result<f64> {
    a.shape().ensure(b.shape())?;
    if a.shape().is_empty() {
        return Ok(0.0);
    }
    Ok((dist_sq(a.as_slice(), b.as_slice()) / a.shape().len() as f64).sqrt())
}

/// Median of a nonempty sample.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    Some(if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    })
}
