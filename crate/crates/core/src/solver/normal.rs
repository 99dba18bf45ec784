//! Normal equations `A D Aᵀ dy = r` of the interior-point Newton system.
//!
//! The sparsity pattern, fill-reducing ordering and symbolic factorization
//! are computed once; each iteration only refills values and refactors.
//! Factorization is faer's sparse LDLᵀ (supernodal when profitable).

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky, SymmetricOrdering,
};
use faer::sparse::{SparseColMatRef, SymbolicSparseColMatRef};
use faer::{Conj, MatMut, Par, Side};

use super::sparse::CsrMatrix;

/// Pivots below this fraction of the largest diagonal entry are treated as
/// dependent rows and neutralized.
const PIVOT_TOL: f64 = 1e-30;
const HUGE_PIVOT: f64 = 1e128;
/// Relative residual at which iterative refinement stops.
const REFINE_TOL: f64 = 1e-10;

pub struct NormalSystem {
    a: CsrMatrix,
    at: CsrMatrix,
    /// Upper triangle of `A Aᵀ`, column-major, rows sorted.
    colptr: Vec<usize>,
    rowidx: Vec<usize>,
    diag_slot: Vec<usize>,
    /// For every column of `A`, the value slot of each row pair (i <= j)
    /// in the column.
    pair_offset: Vec<usize>,
    pair_slot: Vec<u32>,
    values: Vec<f64>,
    symbolic: SymbolicCholesky<usize>,
    l_values: Vec<f64>,
    signs: Vec<i8>,
    factor_mem: MemBuffer,
    solve_mem: MemBuffer,
    scale: Vec<f64>,
}

impl NormalSystem {
    pub fn new(a: CsrMatrix) -> Self {
        let m = a.nrows();
        let at = a.transpose();

        let mut cols: Vec<Vec<usize>> = vec![Vec::new(); m];
        let mut mark = vec![usize::MAX; m];
        for j in 0..m {
            mark[j] = j;
            cols[j].push(j);
            for (col, _) in a.row(j) {
                for (i, _) in at.row(col) {
                    if i < j && mark[i] != j {
                        mark[i] = j;
                        cols[j].push(i);
                    }
                }
            }
        }
        let mut colptr = Vec::with_capacity(m + 1);
        let mut rowidx = Vec::new();
        colptr.push(0);
        for c in cols.iter_mut() {
            c.sort_unstable();
            rowidx.extend_from_slice(c);
            colptr.push(rowidx.len());
        }
        drop(cols);

        let slot_of = |i: usize, j: usize| -> usize {
            let (r, c) = if i <= j { (i, j) } else { (j, i) };
            let range = colptr[c]..colptr[c + 1];
            range.start + rowidx[range].binary_search(&r).expect("pair present in pattern")
        };
        let diag_slot: Vec<usize> = (0..m).map(|k| slot_of(k, k)).collect();

        let mut pair_offset = Vec::with_capacity(at.nrows() + 1);
        let mut pair_slot = Vec::new();
        pair_offset.push(0);
        for col in 0..at.nrows() {
            let rows: Vec<usize> = at.row(col).map(|(r, _)| r).collect();
            for s in 0..rows.len() {
                for t in s..rows.len() {
                    let slot = slot_of(rows[s], rows[t]);
                    pair_slot.push(u32::try_from(slot).expect("normal matrix fits u32 slots"));
                }
            }
            pair_offset.push(pair_slot.len());
        }

        let pattern = SymbolicSparseColMatRef::new_checked(m, m, &colptr, None, &rowidx);
        let symbolic = factorize_symbolic_cholesky(
            pattern,
            Side::Upper,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .expect("symbolic factorization");
        let factor_mem =
            MemBuffer::new(symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()));
        let solve_mem = MemBuffer::new(StackReq::any_of(&[symbolic.solve_in_place_scratch::<f64>(1, Par::Seq)]));
        let l_values = vec![0.0; symbolic.len_val()];
        let values = vec![0.0; rowidx.len()];
        NormalSystem {
            a,
            at,
            colptr,
            rowidx,
            diag_slot,
            pair_offset,
            pair_slot,
            values,
            symbolic,
            l_values,
            signs: vec![1; m],
            factor_mem,
            solve_mem,
            scale: Vec::new(),
        }
    }

    pub fn nrows(&self) -> usize {
        self.a.nrows()
    }

    pub fn factor_nnz(&self) -> usize {
        self.symbolic.len_val()
    }

    /// Factors `A diag(d) Aᵀ + reg I`. Near-zero pivots, which come from
    /// dependent rows, are replaced by a huge value so the row drops out.
    pub fn factor(&mut self, d: &[f64], reg: f64) {
        self.values.iter_mut().for_each(|v| *v = 0.0);
        for col in 0..self.at.nrows() {
            let dc = d[col];
            if dc == 0.0 {
                continue;
            }
            let entries = self.at.row_values(col);
            let mut k = self.pair_offset[col];
            for s in 0..entries.len() {
                let vs = dc * entries[s];
                for &vt in &entries[s..] {
                    self.values[self.pair_slot[k] as usize] += vs * vt;
                    k += 1;
                }
            }
        }
        let mut max_diag = f64::MIN_POSITIVE;
        for &s in &self.diag_slot {
            self.values[s] += reg;
            max_diag = max_diag.max(self.values[s].abs());
        }
        self.scale = d.to_vec();

        let m = self.nrows();
        let matrix = SparseColMatRef::new(
            SymbolicSparseColMatRef::new_checked(m, m, &self.colptr, None, &self.rowidx),
            &self.values,
        );
        let regularization = LdltRegularization {
            dynamic_regularization_signs: Some(&self.signs),
            dynamic_regularization_delta: HUGE_PIVOT,
            dynamic_regularization_epsilon: PIVOT_TOL * max_diag,
        };
        let stack = MemStack::new(&mut self.factor_mem);
        // With positive expected signs every pivot is regularized instead of
        // failing, so the result is always a usable factor.
        let _ = self.symbolic.factorize_numeric_ldlt(
            &mut self.l_values,
            matrix,
            Side::Upper,
            regularization,
            Par::Seq,
            stack,
            Default::default(),
        );
    }

    fn apply(&self, x: &[f64], out: &mut [f64], work: &mut [f64]) {
        self.a.mul_t_vec(x, work);
        for (w, d) in work.iter_mut().zip(&self.scale) {
            *w *= d;
        }
        self.a.mul_vec(work, out);
    }

    fn solve_once(&mut self, rhs: &[f64]) -> Vec<f64> {
        let mut x = rhs.to_vec();
        let n = x.len();
        let ldlt = LdltRef::new(&self.symbolic, &self.l_values);
        let stack = MemStack::new(&mut self.solve_mem);
        ldlt.solve_in_place_with_conj(Conj::No, MatMut::from_column_major_slice_mut(&mut x, n, 1), Par::Seq, stack);
        x
    }

    /// Solves against the last factorization with a few steps of iterative
    /// refinement.
    pub fn solve(&mut self, rhs: &[f64]) -> Vec<f64> {
        let mut x = self.solve_once(rhs);
        let mut ax = vec![0.0; rhs.len()];
        let mut work = vec![0.0; self.a.ncols()];
        let norm = |v: &[f64]| v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
        let mut best = f64::INFINITY;
        for _ in 0..3 {
            self.apply(&x, &mut ax, &mut work);
            let r: Vec<f64> = rhs.iter().zip(&ax).map(|(b, v)| b - v).collect();
            let rn = norm(&r);
            if !(rn < 0.5 * best) || rn <= REFINE_TOL * norm(rhs) {
                break;
            }
            best = rn;
            let dx = self.solve_once(&r);
            for (xi, di) in x.iter_mut().zip(&dx) {
                *xi += di;
            }
        }
        x
    }
}
