//! Global solution of the assembled LP/QP.
//!
//! The embedded backend is a sparse primal-dual interior-point method; an
//! external process can be plugged in through [`Backend::External`].

mod external;
pub mod ipm;
pub mod normal;
pub mod sparse;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::assembler::{ConstraintFamily, ObjectiveKind, RowTag, StandardProblem};
use ipm::{IpmSettings, StandardForm};

pub use external::run_external;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    Unbounded,
    IterationLimit,
    NumericalFailure,
}

impl SolveStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolveStatus::Optimal => "optimal",
            SolveStatus::Infeasible => "infeasible",
            SolveStatus::Unbounded => "unbounded",
            SolveStatus::IterationLimit => "iteration_limit",
            SolveStatus::NumericalFailure => "numerical_failure",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            SolveStatus::Optimal,
            SolveStatus::Infeasible,
            SolveStatus::Unbounded,
            SolveStatus::IterationLimit,
            SolveStatus::NumericalFailure,
        ]
        .into_iter()
        .find(|v| v.as_str() == s)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Backend {
    Embedded,
    /// Program plus arguments; receives the problem paths on stdin.
    External { command: Vec<String> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SolveSettings {
    pub feasibility_tol: f64,
    /// Relative duality-gap tolerance; `None` picks 1e-8 for LPs and 1e-6
    /// for QPs.
    pub gap_tol: Option<f64>,
    pub max_iterations: usize,
    pub backend: Backend,
}

impl Default for SolveSettings {
    fn default() -> Self {
        SolveSettings {
            feasibility_tol: 1e-8,
            gap_tol: None,
            max_iterations: 200,
            backend: Backend::Embedded,
        }
    }
}

impl SolveSettings {
    pub fn gap_tol_for(&self, kind: ObjectiveKind) -> f64 {
        self.gap_tol.unwrap_or(match kind {
            ObjectiveKind::UtilEff => 1e-8,
            ObjectiveKind::CommSuff => 1e-6,
        })
    }

    pub fn validate(&self) -> Result<(), String> {
        if !(self.feasibility_tol > 0.0) {
            return Err("feasibility_tol must be > 0".into());
        }
        if let Some(g) = self.gap_tol {
            if !(g > 0.0) {
                return Err("gap_tol must be > 0".into());
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct SolveResult {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    pub duality_gap: f64,
    pub iterations: usize,
    pub wall_time_s: f64,
    /// Largest violation of equalities, inequalities and `x >= 0`.
    pub max_violation: f64,
    /// Heuristic culprit for non-optimal outcomes: the row carrying the
    /// largest dual weight.
    pub suspect_row: Option<RowTag>,
    pub message: Option<String>,
}

pub fn solve(p: &StandardProblem, settings: &SolveSettings) -> SolveResult {
    let start = Instant::now();
    let mut result = match &settings.backend {
        Backend::Embedded => solve_embedded(p, settings),
        Backend::External { command } => run_external(p, command),
    };
    result.wall_time_s = start.elapsed().as_secs_f64();
    if result.x.len() == p.n_vars() {
        result.max_violation = p.max_violation(&result.x);
        result.objective = p.objective(&result.x);
        if result.status == SolveStatus::Optimal {
            let scale = 1.0 + inf_norm_rhs(p);
            if result.max_violation > settings.feasibility_tol * scale {
                result.status = SolveStatus::NumericalFailure;
                result.message = Some(format!(
                    "solution violates constraints by {:.3e}",
                    result.max_violation
                ));
            }
        }
    }
    result
}

fn inf_norm_rhs(p: &StandardProblem) -> f64 {
    sparse::inf_norm(&p.eq.rhs).max(sparse::inf_norm(&p.ineq.rhs))
}

fn failure(status: SolveStatus, n: usize, suspect: Option<RowTag>, message: String) -> SolveResult {
    SolveResult {
        status,
        x: vec![0.0; n],
        objective: f64::NAN,
        duality_gap: f64::NAN,
        iterations: 0,
        wall_time_s: 0.0,
        max_violation: f64::NAN,
        suspect_row: suspect,
        message: Some(message),
    }
}

fn solve_embedded(p: &StandardProblem, settings: &SolveSettings) -> SolveResult {
    let n = p.n_vars();
    let tol = settings.feasibility_tol;

    // Rows without coefficients are either vacuous or certify infeasibility.
    let mut eq_rows = Vec::new();
    for r in 0..p.eq.matrix.nrows() {
        if p.eq.matrix.row_len(r) > 0 {
            eq_rows.push(r);
        } else if p.eq.rhs[r].abs() > tol {
            return failure(SolveStatus::Infeasible, n, Some(p.eq.tags[r].clone()), "empty equality row with nonzero right-hand side".into());
        }
    }
    match network_redundancy(p, &eq_rows, tol) {
        Ok(drop) => eq_rows.retain(|r| !drop.contains(r)),
        Err(r) => {
            return failure(SolveStatus::Infeasible, n, Some(p.eq.tags[r].clone()), "flow conservation rows do not balance".into());
        }
    }
    let mut in_rows = Vec::new();
    for r in 0..p.ineq.matrix.nrows() {
        if p.ineq.matrix.row_len(r) > 0 {
            in_rows.push(r);
        } else if p.ineq.rhs[r] < -tol {
            return failure(SolveStatus::Infeasible, n, Some(p.ineq.tags[r].clone()), "empty inequality row with negative right-hand side".into());
        }
    }

    let a_eq = p.eq.matrix.select_rows(&eq_rows);
    let a_in = p.ineq.matrix.select_rows(&in_rows);
    let a = a_eq.stack_with_slacks(&a_in);
    let mut b: Vec<f64> = eq_rows.iter().map(|&r| p.eq.rhs[r]).collect();
    b.extend(in_rows.iter().map(|&r| p.ineq.rhs[r]));
    let mut c = p.q.clone();
    c.resize(a.ncols(), 0.0);
    let mut h = p.q_diag.clone();
    h.resize(a.ncols(), 0.0);

    if a.nrows() == 0 {
        return solve_unconstrained(p);
    }

    let form = StandardForm { a, b, c, h };
    let gap_tol = settings.gap_tol_for(p.kind);
    let out = ipm::solve_standard(
        &form,
        &IpmSettings {
            feas_tol: tol,
            gap_tol,
            max_iter: settings.max_iterations,
        },
    );

    let suspect_row = (out.status != SolveStatus::Optimal)
        .then(|| {
            out.y
                .iter()
                .enumerate()
                .max_by(|x, y| x.1.abs().total_cmp(&y.1.abs()))
                .map(|(k, _)| {
                    if k < eq_rows.len() {
                        p.eq.tags[eq_rows[k]].clone()
                    } else {
                        p.ineq.tags[in_rows[k - eq_rows.len()]].clone()
                    }
                })
        })
        .flatten();

    let mut x = out.x;
    x.truncate(n);
    SolveResult {
        status: out.status,
        objective: out.primal_obj,
        duality_gap: (out.primal_obj - out.dual_obj).abs(),
        iterations: out.iterations,
        wall_time_s: 0.0,
        max_violation: 0.0,
        suspect_row,
        message: None,
        x,
    }
}

/// Within one constraint family, equality rows in which every column appears
/// exactly twice with opposite signs sum to zero over each connected group.
/// One row per such group is dropped so that the normal matrix keeps full
/// rank; a group whose right-hand sides do not cancel makes the problem
/// infeasible and its first row is returned as the error.
fn network_redundancy(p: &StandardProblem, rows: &[usize], tol: f64) -> Result<BTreeSet<usize>, usize> {
    let mut family_of = vec![None; p.eq.matrix.nrows()];
    for &r in rows {
        family_of[r] = Some(p.eq.tags[r].family);
    }
    // Entries per (family, column).
    let mut entries: HashMap<(ConstraintFamily, usize), Vec<(usize, f64)>> = HashMap::new();
    for (r, c, v) in p.eq.matrix.triplets() {
        if let Some(f) = family_of[r] {
            entries.entry((f, c)).or_default().push((r, v));
        }
    }

    let mut parent: Vec<usize> = (0..p.eq.matrix.nrows()).collect();
    fn find(parent: &mut [usize], mut i: usize) -> usize {
        while parent[i] != i {
            parent[i] = parent[parent[i]];
            i = parent[i];
        }
        i
    }
    let mut open = vec![false; p.eq.matrix.nrows()];
    for list in entries.values() {
        match list.as_slice() {
            [(r1, v1), (r2, v2)] if r1 != r2 && (v1 + v2).abs() <= 1e-12 * v1.abs().max(v2.abs()) => {
                let (a, b) = (find(&mut parent, *r1), find(&mut parent, *r2));
                parent[a] = b;
            }
            _ => list.iter().for_each(|&(r, _)| open[r] = true),
        }
    }
    let mut groups: BTreeMap<usize, (usize, bool, f64)> = BTreeMap::new();
    for &r in rows {
        let root = find(&mut parent, r);
        let g = groups.entry(root).or_insert((r, false, 0.0));
        g.0 = g.0.min(r);
        g.1 |= open[r];
        g.2 += p.eq.rhs[r];
    }
    let mut drop = BTreeSet::new();
    for (first, is_open, sum) in groups.into_values() {
        if is_open {
            continue;
        }
        if sum.abs() > tol * (1.0 + sum.abs()) {
            return Err(first);
        }
        drop.insert(first);
    }
    Ok(drop)
}

/// Only bounds remain: minimize each coordinate separately.
fn solve_unconstrained(p: &StandardProblem) -> SolveResult {
    let n = p.n_vars();
    let mut x = vec![0.0; n];
    for j in 0..n {
        if p.q[j] < 0.0 {
            if p.q_diag[j] > 0.0 {
                x[j] = -p.q[j] / p.q_diag[j];
            } else {
                return failure(SolveStatus::Unbounded, n, None, format!("column {j} unbounded"));
            }
        }
    }
    SolveResult {
        status: SolveStatus::Optimal,
        objective: p.objective(&x),
        x,
        duality_gap: 0.0,
        iterations: 0,
        wall_time_s: 0.0,
        max_violation: 0.0,
        suspect_row: None,
        message: None,
    }
}
