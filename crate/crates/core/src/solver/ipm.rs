//! Mehrotra predictor-corrector primal-dual interior-point method for
//!
//! ```text
//!     min  ½ xᵀ diag(h) x + cᵀx   s.t.  A x = b,  x ≥ 0
//! ```
//!
//! Newton directions come from the normal equations `A D Aᵀ dy = r` with
//! `D = (diag(h) + X⁻¹W)⁻¹`. Rows and columns are equilibrated before the
//! solve; termination is tested on the unscaled residuals.

use log::debug;

use super::normal::NormalSystem;
use super::sparse::{dot, inf_norm, CsrMatrix};
use super::SolveStatus;

pub struct StandardForm {
    pub a: CsrMatrix,
    pub b: Vec<f64>,
    pub c: Vec<f64>,
    pub h: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub struct IpmSettings {
    pub feas_tol: f64,
    pub gap_tol: f64,
    pub max_iter: usize,
}

#[derive(Debug, Clone)]
pub struct IpmOutput {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub w: Vec<f64>,
    pub iterations: usize,
    pub primal_obj: f64,
    pub dual_obj: f64,
    pub primal_res: f64,
    pub dual_res: f64,
}

const STEP_FRACTION: f64 = 0.995;
const DIVERGENCE: f64 = 1e13;
const MAX_CORRECTORS: usize = 2;
const CORRECTOR_REACH: f64 = 0.2;
const PRIMAL_REG: f64 = 1e-10;
const DUAL_REG: f64 = 1e-10;

struct Scaling {
    row: Vec<f64>,
    col: Vec<f64>,
}

/// Geometric-mean style equilibration: a few passes of dividing rows and
/// columns by the square root of their largest entry.
fn equilibrate(a: &mut CsrMatrix) -> Scaling {
    let (m, n) = (a.nrows(), a.ncols());
    let mut row = vec![1.0; m];
    let mut col = vec![1.0; n];
    for _ in 0..8 {
        let mut rmax = vec![0.0f64; m];
        let mut cmax = vec![0.0f64; n];
        for (r, c, v) in a.triplets() {
            rmax[r] = rmax[r].max(v.abs());
            cmax[c] = cmax[c].max(v.abs());
        }
        let rs: Vec<f64> = rmax.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        let cs: Vec<f64> = cmax.iter().map(|&v| if v > 0.0 { 1.0 / v.sqrt() } else { 1.0 }).collect();
        a.scale(&rs, &cs);
        row.iter_mut().zip(&rs).for_each(|(x, s)| *x *= s);
        col.iter_mut().zip(&cs).for_each(|(x, s)| *x *= s);
        let spread = rmax
            .iter()
            .chain(&cmax)
            .filter(|v| **v > 0.0)
            .fold(0.0f64, |m, v| m.max((v.ln()).abs()));
        if spread < 0.05 {
            break;
        }
    }
    Scaling { row, col }
}

fn max_step(v: &[f64], dv: &[f64]) -> f64 {
    v.iter()
        .zip(dv)
        .filter(|(_, d)| **d < 0.0)
        .fold(1.0f64, |m, (x, d)| m.min(-x / d))
}

struct Residuals {
    primal: Vec<f64>,
    dual: Vec<f64>,
}

pub fn solve_standard(problem: &StandardForm, settings: &IpmSettings) -> IpmOutput {
    let mut a = problem.a.clone();
    let (m, n) = (a.nrows(), a.ncols());
    let scaling = equilibrate(&mut a);
    let b: Vec<f64> = problem.b.iter().zip(&scaling.row).map(|(v, s)| v * s).collect();
    let mut c: Vec<f64> = problem.c.iter().zip(&scaling.col).map(|(v, s)| v * s).collect();
    let mut h: Vec<f64> = problem.h.iter().zip(&scaling.col).map(|(v, s)| v * s * s).collect();
    // Work with an objective of unit size so that the starting point and
    // its floors do not depend on how the costs are expressed.
    let cost_scale = match inf_norm(&c).max(inf_norm(&h)) {
        v if v > 0.0 => 1.0 / v,
        _ => 1.0,
    };
    c.iter_mut().chain(h.iter_mut()).for_each(|v| *v *= cost_scale);

    let b_norm = inf_norm(&problem.b);
    let c_norm = inf_norm(&problem.c);

    let mut sys = NormalSystem::new(a.clone());
    debug!("ipm: {m} rows, {n} cols, factor nnz {}", sys.factor_nnz());

    let (mut x, mut y, mut w) = starting_point(&a, &b, &c, &h, &mut sys);

    let residuals = |x: &[f64], y: &[f64], w: &[f64]| -> Residuals {
        let mut ax = vec![0.0; m];
        a.mul_vec(x, &mut ax);
        let primal: Vec<f64> = b.iter().zip(&ax).map(|(bi, v)| bi - v).collect();
        let mut aty = vec![0.0; n];
        a.mul_t_vec(y, &mut aty);
        let dual: Vec<f64> = (0..n)
            .map(|j| -(h[j] * x[j] + c[j] - aty[j] - w[j]))
            .collect();
        Residuals { primal, dual }
    };

    let unscaled_norms = |r: &Residuals| -> (f64, f64) {
        let p = r
            .primal
            .iter()
            .zip(&scaling.row)
            .fold(0.0f64, |acc, (v, s)| acc.max((v / s).abs()));
        let d = r
            .dual
            .iter()
            .zip(&scaling.col)
            .fold(0.0f64, |acc, (v, s)| acc.max((v / s).abs()))
            / cost_scale;
        (p, d)
    };

    let mut status = SolveStatus::IterationLimit;
    let mut iterations = 0;
    let mut best_primal = f64::INFINITY;
    let mut stalled = 0usize;
    let mut pobj = 0.0;
    let mut dobj = 0.0;
    let mut pres = f64::INFINITY;
    let mut dres = f64::INFINITY;

    for iter in 0..=settings.max_iter {
        let r = residuals(&x, &y, &w);
        let (p_norm, d_norm) = unscaled_norms(&r);
        pres = p_norm;
        dres = d_norm;
        let quad = 0.5 * x.iter().zip(&h).map(|(xi, hi)| hi * xi * xi).sum::<f64>();
        pobj = (dot(&c, &x) + quad) / cost_scale;
        dobj = (dot(&b, &y) - quad) / cost_scale;
        let mu = dot(&x, &w) / n.max(1) as f64;
        let gap = (pobj - dobj).abs();
        debug!("ipm {iter:3}: pobj {pobj:.10e} dobj {dobj:.10e} pres {p_norm:.2e} dres {d_norm:.2e} mu {mu:.2e}");

        if p_norm <= settings.feas_tol * (1.0 + b_norm)
            && d_norm <= settings.feas_tol * (1.0 + c_norm)
            && gap <= settings.gap_tol * (1.0 + pobj.abs())
        {
            status = SolveStatus::Optimal;
            iterations = iter;
            break;
        }
        if !(pobj.is_finite() && dobj.is_finite() && mu.is_finite()) {
            status = SolveStatus::NumericalFailure;
            iterations = iter;
            break;
        }
        if inf_norm(&y).max(inf_norm(&w)) / cost_scale > DIVERGENCE && dobj > 0.0 && p_norm > settings.feas_tol * (1.0 + b_norm) {
            status = SolveStatus::Infeasible;
            iterations = iter;
            break;
        }
        if inf_norm(&x) > DIVERGENCE && pobj < 0.0 && d_norm > settings.feas_tol * (1.0 + c_norm) {
            status = SolveStatus::Unbounded;
            iterations = iter;
            break;
        }
        if p_norm < 0.9 * best_primal {
            best_primal = p_norm;
            stalled = 0;
        } else if p_norm > settings.feas_tol * (1.0 + b_norm) {
            stalled += 1;
            if stalled >= 30 && mu / cost_scale < 1e-9 * (1.0 + pobj.abs()) {
                status = SolveStatus::Infeasible;
                iterations = iter;
                break;
            }
        }
        if iter == settings.max_iter {
            iterations = iter;
            break;
        }

        let d: Vec<f64> = (0..n).map(|j| 1.0 / (h[j] + w[j] / x[j] + PRIMAL_REG)).collect();
        sys.factor(&d, DUAL_REG);

        // `residuals = false` gives a pure centering direction that keeps the
        // primal and dual residuals unchanged.
        let mut newton = |rc: &[f64], residuals: bool| -> (Vec<f64>, Vec<f64>, Vec<f64>) {
            let keep = if residuals { 1.0 } else { 0.0 };
            let t: Vec<f64> = (0..n).map(|j| d[j] * (keep * r.dual[j] + rc[j] / x[j])).collect();
            let mut at = vec![0.0; m];
            a.mul_vec(&t, &mut at);
            let rhs: Vec<f64> = r.primal.iter().zip(&at).map(|(p, v)| keep * p - v).collect();
            let dy = sys.solve(&rhs);
            let mut atdy = vec![0.0; n];
            a.mul_t_vec(&dy, &mut atdy);
            let dx: Vec<f64> = (0..n).map(|j| t[j] + d[j] * atdy[j]).collect();
            let dw: Vec<f64> = (0..n).map(|j| (rc[j] - w[j] * dx[j]) / x[j]).collect();
            (dx, dy, dw)
        };

        let rc_aff: Vec<f64> = x.iter().zip(&w).map(|(xi, wi)| -xi * wi).collect();
        let (dx_a, _, dw_a) = newton(&rc_aff, true);
        let (ap, ad) = steps(&x, &dx_a, &w, &dw_a);
        let mu_aff = (0..n)
            .map(|j| (x[j] + ap * dx_a[j]) * (w[j] + ad * dw_a[j]))
            .sum::<f64>()
            / n as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);

        let rc: Vec<f64> = (0..n)
            .map(|j| sigma * mu - x[j] * w[j] - dx_a[j] * dw_a[j])
            .collect();
        let (mut dx, mut dy, mut dw) = newton(&rc, true);
        let (mut ap, mut ad) = steps(&x, &dx, &w, &dw);

        // Multiple centrality correctors.
        let target = sigma * mu;
        for _ in 0..MAX_CORRECTORS {
            if ap.min(ad) >= 0.95 {
                break;
            }
            let (tp, td) = ((ap + CORRECTOR_REACH).min(1.0), (ad + CORRECTOR_REACH).min(1.0));
            let t: Vec<f64> = (0..n)
                .map(|j| {
                    let v = (x[j] + tp * dx[j]) * (w[j] + td * dw[j]);
                    if v < 0.1 * target {
                        0.1 * target - v
                    } else if v > 10.0 * target {
                        (10.0 * target - v).max(-10.0 * target)
                    } else {
                        0.0
                    }
                })
                .collect();
            let (cx, cy, cw) = newton(&t, false);
            let nx: Vec<f64> = dx.iter().zip(&cx).map(|(a, b)| a + b).collect();
            let nw: Vec<f64> = dw.iter().zip(&cw).map(|(a, b)| a + b).collect();
            let (np, nd) = steps(&x, &nx, &w, &nw);
            if np.min(nd) < ap.min(ad) + 0.1 * CORRECTOR_REACH {
                break;
            }
            dy.iter_mut().zip(&cy).for_each(|(a, b)| *a += b);
            (dx, dw, ap, ad) = (nx, nw, np, nd);
        }
        let (ap, ad) = ((STEP_FRACTION * ap).min(1.0), (STEP_FRACTION * ad).min(1.0));

        for j in 0..n {
            x[j] += ap * dx[j];
            w[j] += ad * dw[j];
        }
        for i in 0..m {
            y[i] += ad * dy[i];
        }
        iterations = iter + 1;
    }

    // Undo scaling.
    let x: Vec<f64> = x.iter().zip(&scaling.col).map(|(v, s)| v * s).collect();
    let w: Vec<f64> = w.iter().zip(&scaling.col).map(|(v, s)| v / s / cost_scale).collect();
    let y: Vec<f64> = y.iter().zip(&scaling.row).map(|(v, s)| v * s / cost_scale).collect();
    IpmOutput {
        status,
        x,
        y,
        w,
        iterations,
        primal_obj: pobj,
        dual_obj: dobj,
        primal_res: pres,
        dual_res: dres,
    }
}

fn steps(x: &[f64], dx: &[f64], w: &[f64], dw: &[f64]) -> (f64, f64) {
    (max_step(x, dx), max_step(w, dw))
}

fn starting_point(
    a: &CsrMatrix,
    b: &[f64],
    c: &[f64],
    h: &[f64],
    sys: &mut NormalSystem,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let (m, n) = (a.nrows(), a.ncols());
    let ones = vec![1.0; n];
    sys.factor(&ones, 1e-8);

    // Least-norm primal point and least-squares dual point.
    let v = sys.solve(b);
    let mut x = vec![0.0; n];
    a.mul_t_vec(&v, &mut x);
    let mut ac = vec![0.0; m];
    a.mul_vec(c, &mut ac);
    let y = sys.solve(&ac);
    let mut aty = vec![0.0; n];
    a.mul_t_vec(&y, &mut aty);
    let mut w: Vec<f64> = (0..n).map(|j| c[j] + h[j] * x[j].max(0.0) - aty[j]).collect();

    let dx = (-1.5 * x.iter().cloned().fold(f64::INFINITY, f64::min)).max(0.0);
    let dw = (-1.5 * w.iter().cloned().fold(f64::INFINITY, f64::min)).max(0.0);
    x.iter_mut().for_each(|v| *v += dx);
    w.iter_mut().for_each(|v| *v += dw);
    let xw = dot(&x, &w);
    let sx: f64 = x.iter().sum();
    let sw: f64 = w.iter().sum();
    let (ex, ew) = if xw > 0.0 && sx > 0.0 && sw > 0.0 {
        (0.5 * xw / sw, 0.5 * xw / sx)
    } else {
        (1.0, 1.0)
    };
    let floor = 1e-2;
    x.iter_mut().for_each(|v| *v = (*v + ex).max(floor));
    w.iter_mut().for_each(|v| *v = (*v + ew).max(floor));
    (x, y, w)
}
