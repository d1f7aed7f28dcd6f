//! Compressed-row weight tables backing the projector and warps.
//!
//! Each operator stores its weights twice, row-wise for `apply` and
//! column-wise for `adjoint`, so both directions gather with a fixed
//! summation order. The two tables hold identical weights, which makes the
//! adjoint an exact transpose.

#[derive(Debug, Clone, Default)]
pub(crate) struct Csr {
    row_ptr: Vec<usize>,
    cols: Vec<u32>,
    vals: Vec<f64>,
    ncols: usize,
}

impl Csr {
    /// Builds from rows already grouped in order; `push_row` closes a row.
    pub(crate) fn builder(ncols: usize, nnz_hint: usize) -> CsrBuilder {
        CsrBuilder {
            csr: Csr {
                row_ptr: vec![0],
                cols: Vec::with_capacity(nnz_hint),
                vals: Vec::with_capacity(nnz_hint),
                ncols,
            },
        }
    }

    pub(crate) fn nrows(&self) -> usize {
        self.row_ptr.len() - 1
    }

    pub(crate) fn nnz(&self) -> usize {
        self.vals.len()
    }

    pub(crate) fn row(&self, r: usize) -> (&[u32], &[f64]) {
        let span = self.row_ptr[r]..self.row_ptr[r + 1];
        (&self.cols[span.clone()], &self.vals[span])
    }

    /// `out = M x`
    pub(crate) fn matvec(&self, x: &[f64], out: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(out.len(), self.nrows());
        for (r, o) in out.iter_mut().enumerate() {
            let (cols, vals) = self.row(r);
            let mut acc = 0.0;
            for (&c, &v) in cols.iter().zip(vals) {
                acc += v * x[c as usize];
            }
            *o = acc;
        }
    }

    pub(crate) fn transpose(&self) -> Csr {
        let mut counts = vec![0usize; self.ncols + 1];
        for &c in &self.cols {
            counts[c as usize + 1] += 1;
        }
        for i in 0..self.ncols {
            counts[i + 1] += counts[i];
        }
        let row_ptr = counts.clone();
        let mut next = counts;
        let mut cols = vec![0u32; self.nnz()];
        let mut vals = vec![0.0; self.nnz()];
        for r in 0..self.nrows() {
            let (rc, rv) = self.row(r);
            for (&c, &v) in rc.iter().zip(rv) {
                let slot = next[c as usize];
                cols[slot] = r as u32;
                vals[slot] = v;
                next[c as usize] += 1;
            }
        }
        Csr {
            row_ptr,
            cols,
            vals,
            ncols: self.nrows(),
        }
    }
}

pub(crate) struct CsrBuilder {
    csr: Csr,
}

impl CsrBuilder {
    pub(crate) fn push(&mut self, col: usize, val: f64) {
        debug_assert!(col < self.csr.ncols);
        self.csr.cols.push(col as u32);
        self.csr.vals.push(val);
    }

    pub(crate) fn end_row(&mut self) {
        self.csr.row_ptr.push(self.csr.cols.len());
    }

    pub(crate) fn finish(self) -> Csr {
        self.csr
    }
}
