//! Centralized reference solutions.
//!
//! The full problem is handed to an interior-point conic solver, then the
//! rows it leaves tight are made exactly tight by a dense least-norm
//! correction. Nothing here touches the per-set projection code.

use std::collections::HashSet;

use clarabel::algebra::CscMatrix;
use clarabel::solver::{DefaultSettingsBuilder, DefaultSolver, IPSolver, SolverStatus, SupportedConeT};
use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::model::SeparableQuadratic;
use crate::polyhedron::SparseRow;
use crate::problem::SplitProblem;

/// `min sum quad_r x_r^2 + lin_r x_r + constant` subject to `eq` and `le`.
#[derive(Debug, Clone)]
pub struct QuadProgram {
    pub objective: SeparableQuadratic,
    pub eq: Vec<(Vec<(usize, f64)>, f64)>,
    pub le: Vec<(Vec<(usize, f64)>, f64)>,
}

impl QuadProgram {
    pub fn dim(&self) -> usize {
        self.objective.len()
    }

    /// Every row of every set, duplicates removed.
    pub fn from_split(problem: &SplitProblem) -> Self {
        let mut seen = HashSet::new();
        let mut qp = QuadProgram {
            objective: problem.objective.clone(),
            eq: Vec::new(),
            le: Vec::new(),
        };
        let key = |r: &SparseRow, eq: bool| {
            (
                eq,
                r.coefs.iter().map(|&(k, a)| (k, a.to_bits())).collect::<Vec<_>>(),
                r.bound.to_bits(),
            )
        };
        for set in &problem.sets {
            for r in &set.eq_rows {
                if seen.insert(key(r, true)) {
                    qp.eq.push((r.coefs.clone(), r.bound));
                }
            }
            for r in &set.ineq_rows {
                if seen.insert(key(r, false)) {
                    qp.le.push((r.coefs.clone(), r.bound));
                }
            }
        }
        qp
    }

    fn row_value(coefs: &[(usize, f64)], x: &[f64]) -> f64 {
        coefs.iter().map(|&(k, a)| a * x[k]).sum()
    }

    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self.eq.iter().map(|(c, b)| (Self::row_value(c, x) - b).abs());
        let le = self.le.iter().map(|(c, b)| (Self::row_value(c, x) - b).max(0.0));
        eq.chain(le).fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OracleStatus {
    Optimal,
    Infeasible,
    IterationLimit,
}

#[derive(Debug, Clone)]
pub struct OracleSolution {
    pub x_star: Vec<f64>,
    pub objective: f64,
    /// Largest of stationarity, primal violation, dual-sign violation and
    /// complementarity.
    pub kkt_residual: f64,
    pub max_violation: f64,
    pub status: OracleStatus,
}

impl OracleSolution {
    pub fn require_optimal(self) -> Result<Self> {
        match self.status {
            OracleStatus::Optimal => Ok(self),
            OracleStatus::Infeasible => Err(Error::Oracle("problem is infeasible (solver certificate)".into())),
            OracleStatus::IterationLimit => Err(Error::Oracle(format!(
                "solver stopped early; KKT residual {:e}",
                self.kkt_residual
            ))),
        }
    }
}

fn csc_from_rows(rows: &[&[(usize, f64)]], n: usize) -> CscMatrix<f64> {
    let (mut ii, mut jj, mut vv) = (Vec::new(), Vec::new(), Vec::new());
    for (i, row) in rows.iter().enumerate() {
        for &(j, a) in row.iter() {
            ii.push(i);
            jj.push(j);
            vv.push(a);
        }
    }
    CscMatrix::new_from_triplets(rows.len(), n, ii, jj, vv)
}

/// Solves the program to high accuracy; returns an infeasible or
/// iteration-limit status rather than an error.
pub fn solve_qp(qp: &QuadProgram) -> Result<OracleSolution> {
    let n = qp.dim();
    let p_diag: Vec<usize> = (0..n).collect();
    let p = CscMatrix::new_from_triplets(
        n,
        n,
        p_diag.clone(),
        p_diag,
        qp.objective.quad.iter().map(|q| 2.0 * q).collect(),
    );
    let rows: Vec<&[(usize, f64)]> = qp.eq.iter().chain(&qp.le).map(|(c, _)| c.as_slice()).collect();
    let a = csc_from_rows(&rows, n);
    let b: Vec<f64> = qp.eq.iter().chain(&qp.le).map(|(_, b)| *b).collect();
    let mut cones = Vec::new();
    if !qp.eq.is_empty() {
        cones.push(SupportedConeT::ZeroConeT(qp.eq.len()));
    }
    if !qp.le.is_empty() {
        cones.push(SupportedConeT::NonnegativeConeT(qp.le.len()));
    }
    let settings = DefaultSettingsBuilder::default()
        .verbose(false)
        .max_iter(500)
        .tol_gap_abs(1e-11)
        .tol_gap_rel(1e-11)
        .tol_feas(1e-11)
        .tol_ktratio(1e-9)
        .build()
        .map_err(|e| Error::Oracle(format!("settings: {e:?}")))?;
    let mut solver = DefaultSolver::new(&p, &qp.objective.lin, &a, &b, &cones, settings)
        .map_err(|e| Error::Oracle(format!("setup: {e:?}")))?;
    solver.solve();
    let status = match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => OracleStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => OracleStatus::Infeasible,
        _ => OracleStatus::IterationLimit,
    };
    let mut x = solver.solution.x.clone();
    if status == OracleStatus::Optimal {
        x = polish(qp, &x)?;
    }
    let max_violation = qp.max_violation(&x);
    let kkt_residual = kkt_residual(qp, &x, &solver.solution.z);
    Ok(OracleSolution {
        objective: qp.objective.value(&x),
        x_star: x,
        kkt_residual,
        max_violation,
        status,
    })
}

/// Rows within `tol` of their bound at `x`, equalities first.
fn tight_rows(qp: &QuadProgram, x: &[f64], tol: f64) -> Vec<(Vec<(usize, f64)>, f64)> {
    let mut rows: Vec<_> = qp.eq.clone();
    for (c, b) in &qp.le {
        let norm = c.iter().map(|p| p.1 * p.1).sum::<f64>().sqrt();
        if b - QuadProgram::row_value(c, x) <= tol * norm.max(1.0) {
            rows.push((c.clone(), *b));
        }
    }
    rows
}

/// Dense `A` for the given rows, restricted to the columns they touch.
fn dense(rows: &[(Vec<(usize, f64)>, f64)], cols: &[usize]) -> DMatrix<f64> {
    let mut a = DMatrix::zeros(rows.len(), cols.len());
    for (i, (c, _)) in rows.iter().enumerate() {
        for &(k, v) in c {
            let j = cols.binary_search(&k).expect("column present");
            a[(i, j)] += v;
        }
    }
    a
}

fn columns(rows: &[(Vec<(usize, f64)>, f64)]) -> Vec<usize> {
    let mut cols: Vec<usize> = rows.iter().flat_map(|(c, _)| c.iter().map(|p| p.0)).collect();
    cols.sort_unstable();
    cols.dedup();
    cols
}

/// Solves `(A A^T + delta I) y = r` repeatedly, accumulating the correction,
/// so consistent rank-deficient systems still converge.
fn least_norm_correction(a: &DMatrix<f64>, residual: &DVector<f64>) -> Result<DVector<f64>> {
    let gram = a * a.transpose();
    let scale = gram.diagonal().max().max(1.0);
    let reg = &gram + DMatrix::identity(gram.nrows(), gram.nrows()) * (1e-12 * scale);
    let chol = reg
        .cholesky()
        .ok_or_else(|| Error::Oracle("active-row Gram matrix is not positive definite".into()))?;
    let mut dx = DVector::zeros(a.ncols());
    let mut r = residual.clone();
    for _ in 0..20 {
        let y = chol.solve(&r);
        dx += a.transpose() * y;
        r = residual - a * &dx;
        if r.amax() <= 1e-14 * (1.0 + residual.amax()) {
            break;
        }
    }
    Ok(dx)
}

/// Moves `x` the least distance that makes every nearly tight row exactly
/// tight, adding rows that the move breaks.
fn polish(qp: &QuadProgram, x: &[f64]) -> Result<Vec<f64>> {
    let mut tol = 1e-7;
    let mut x = x.to_vec();
    for _ in 0..6 {
        let rows = tight_rows(qp, &x, tol);
        if rows.is_empty() {
            return Ok(x);
        }
        let cols = columns(&rows);
        let a = dense(&rows, &cols);
        let resid = DVector::from_iterator(
            rows.len(),
            rows.iter().map(|(c, b)| b - QuadProgram::row_value(c, &x)),
        );
        let dx = least_norm_correction(&a, &resid)?;
        let mut next = x.clone();
        for (j, &k) in cols.iter().enumerate() {
            next[k] += dx[j];
        }
        if qp.max_violation(&next) <= 1e-10 {
            return Ok(next);
        }
        x = next;
        tol *= 10.0;
    }
    Ok(x)
}

/// KKT residual of `(x, z)`, with `z` ordered as equalities then
/// inequalities and entering the Lagrangian as `f + z^T (A x - b)`.
pub fn kkt_residual(qp: &QuadProgram, x: &[f64], z: &[f64]) -> f64 {
    let mut g = qp.objective.gradient(x);
    for ((c, _), &m) in qp.eq.iter().chain(&qp.le).zip(z) {
        for &(k, a) in c {
            g[k] += m * a;
        }
    }
    let stationarity = g.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
    let n_eq = qp.eq.len();
    let sign = z[n_eq..].iter().fold(0.0_f64, |m, &v| m.max(-v));
    let complementarity = qp
        .le
        .iter()
        .zip(&z[n_eq..])
        .map(|((c, b), m)| (m * (b - QuadProgram::row_value(c, x))).abs())
        .fold(0.0, f64::max);
    qp.max_violation(x).max(stationarity).max(sign).max(complementarity)
}

/// Reference solution of a split problem over the intersection of its sets.
pub fn solve_centralized(problem: &SplitProblem) -> Result<OracleSolution> {
    solve_qp(&QuadProgram::from_split(problem))?.require_optimal()
}

/// Best grid point of a program with at most four free variables once the
/// equalities are eliminated. `bounds` boxes every variable; the grid covers
/// the free ones. `Ok(None)` when no grid point is feasible.
pub fn brute_force_small(qp: &QuadProgram, bounds: &[(f64, f64)], grid_step: f64) -> Result<Option<(Vec<f64>, f64)>> {
    let n = qp.dim();
    if bounds.len() != n || !(grid_step > 0.0) {
        return Err(Error::Domain("bounds must cover every variable and grid_step must be positive".into()));
    }
    if bounds.iter().any(|(lo, hi)| lo > hi) {
        return Ok(None);
    }
    // Reduced row echelon form of [A | b].
    let m = qp.eq.len();
    let mut e = DMatrix::<f64>::zeros(m, n + 1);
    for (i, (c, b)) in qp.eq.iter().enumerate() {
        for &(k, a) in c {
            e[(i, k)] += a;
        }
        e[(i, n)] = *b;
    }
    let mut pivots = Vec::new();
    let mut row = 0;
    for col in 0..n {
        if row == m {
            break;
        }
        let (best, val) = (row..m)
            .map(|r| (r, e[(r, col)].abs()))
            .fold((row, 0.0), |acc, c| if c.1 > acc.1 { c } else { acc });
        if val < 1e-12 {
            continue;
        }
        e.swap_rows(row, best);
        let p = e[(row, col)];
        for j in 0..=n {
            e[(row, j)] /= p;
        }
        for r in (0..m).filter(|&r| r != row) {
            let f = e[(r, col)];
            if f != 0.0 {
                for j in 0..=n {
                    e[(r, j)] -= f * e[(row, j)];
                }
            }
        }
        pivots.push(col);
        row += 1;
    }
    if (row..m).any(|r| e[(r, n)].abs() > 1e-9) {
        return Ok(None);
    }
    let free: Vec<usize> = (0..n).filter(|c| !pivots.contains(c)).collect();
    if free.len() > 4 {
        return Err(Error::Domain(format!(
            "{} free variables after eliminating equalities; at most 4 supported",
            free.len()
        )));
    }
    let axes: Vec<Vec<f64>> = free
        .iter()
        .map(|&k| {
            let (lo, hi) = bounds[k];
            let steps = ((hi - lo) / grid_step + 1e-9).floor() as usize;
            (0..=steps).map(|s| lo + s as f64 * grid_step).collect()
        })
        .collect();
    let total: usize = axes.iter().map(Vec::len).product();
    let mut best: Option<(Vec<f64>, f64)> = None;
    let mut x = vec![0.0; n];
    for mut code in 0..total {
        for (a, &k) in axes.iter().zip(&free) {
            x[k] = a[code % a.len()];
            code /= a.len();
        }
        for (i, &pc) in pivots.iter().enumerate() {
            x[pc] = e[(i, n)] - free.iter().map(|&k| e[(i, k)] * x[k]).sum::<f64>();
        }
        let inside = (0..n).all(|k| x[k] >= bounds[k].0 - 1e-9 && x[k] <= bounds[k].1 + 1e-9);
        if !inside || qp.max_violation(&x) > 1e-9 {
            continue;
        }
        let f = qp.objective.value(&x);
        if best.as_ref().is_none_or(|b| f < b.1) {
            best = Some((x.clone(), f));
        }
    }
    Ok(best)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toy() -> QuadProgram {
        QuadProgram {
            objective: SeparableQuadratic {
                quad: vec![1.0],
                lin: vec![-6.0],
                constant: 9.0,
            },
            eq: vec![],
            le: vec![(vec![(0, 1.0)], 2.0), (vec![(0, -1.0)], 0.0)],
        }
    }

    #[test]
    fn toy_clamped_quadratic() {
        let s = solve_qp(&toy()).unwrap();
        assert_eq!(s.status, OracleStatus::Optimal);
        assert!((s.x_star[0] - 2.0).abs() < 1e-9);
        assert!((s.objective - 1.0).abs() < 1e-9);
        assert!(s.kkt_residual <= 1e-8);
    }

    #[test]
    fn toy_by_grid() {
        let (x, f) = brute_force_small(&toy(), &[(0.0, 2.0)], 0.01).unwrap().unwrap();
        assert!((x[0] - 2.0).abs() < 1e-9);
        assert!((f - 1.0).abs() < 1e-9);
    }

    #[test]
    fn empty_box_is_flagged() {
        assert!(brute_force_small(&toy(), &[(3.0, 1.0)], 0.01).unwrap().is_none());
    }

    #[test]
    fn reciprocal_trade_pair_matches_grid() {
        // Seller earns 0.15 per kW against a quadratic loss, buyer pays 0.05;
        // the two sides of the trade must agree.
        let qp = QuadProgram {
            objective: SeparableQuadratic {
                quad: vec![0.5, 0.0],
                lin: vec![-0.15 - 1.0, 0.05],
                constant: 0.0,
            },
            eq: vec![(vec![(0, 1.0), (1, -1.0)], 0.0)],
            le: vec![(vec![(0, 1.0)], 3.0), (vec![(0, -1.0)], 0.0)],
        };
        let s = solve_qp(&qp).unwrap();
        let (x, f) = brute_force_small(&qp, &[(0.0, 3.0), (0.0, 3.0)], 0.01).unwrap().unwrap();
        assert!((s.x_star[0] - x[0]).abs() <= 0.01);
        assert!((s.objective - f).abs() <= 1e-3);
    }

    #[test]
    fn infeasible_program_is_reported() {
        let qp = QuadProgram {
            objective: SeparableQuadratic::zeros(1),
            eq: vec![],
            le: vec![(vec![(0, 1.0)], 0.0), (vec![(0, -1.0)], -1.0)],
        };
        assert_eq!(solve_qp(&qp).unwrap().status, OracleStatus::Infeasible);
    }

    #[test]
    fn too_many_free_variables_is_refused() {
        let qp = QuadProgram {
            objective: SeparableQuadratic::zeros(5),
            eq: vec![],
            le: vec![],
        };
        assert!(brute_force_small(&qp, &[(0.0, 1.0); 5], 0.5).is_err());
    }
}
