//! Euclidean projection onto a polyhedron.
//!
//! The projection `min ½‖y − p‖²` subject to the polyhedron's rows is solved
//! with a dual active-set method (Goldfarb–Idnani) specialised to an identity
//! Hessian: the only matrix ever factorised is the Gram matrix of the active
//! rows. The final active set is kept and reused as the starting working set
//! of the next call, together with its Cholesky factor, so repeated
//! projections of slowly moving points cost two triangular solves.

use crate::error::{Error, Result};
use crate::polyhedron::Polyhedron;

pub const DEFAULT_TOLERANCE: f64 = 1e-8;

/// Projection of a point, restricted to the polyhedron's support.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectionResult {
    /// Values in the order of `Polyhedron::support`.
    pub point: Vec<f64>,
    pub kkt_residual: f64,
    pub iterations: usize,
}

impl ProjectionResult {
    /// Writes the projected values into a full-length vector.
    pub fn scatter(&self, support: &[usize], into: &mut [f64]) {
        for (&r, &v) in support.iter().zip(&self.point) {
            into[r] = v;
        }
    }
}

/// Stateless projection of a global point.
pub fn project(poly: &Polyhedron, point: &[f64], tol: f64) -> Result<ProjectionResult> {
    let local: Vec<f64> = poly.support.iter().map(|&r| point[r]).collect();
    Projector::new(poly, tol).project_local(&local)
}

#[derive(Debug, Clone)]
struct LocalRow {
    idx: Vec<usize>,
    val: Vec<f64>,
    b: f64,
}

impl LocalRow {
    fn dot_dense(&self, x: &[f64]) -> f64 {
        self.idx.iter().zip(&self.val).map(|(&k, &a)| a * x[k]).sum()
    }

    fn dot(&self, other: &LocalRow) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < self.idx.len() && j < other.idx.len() {
            match self.idx[i].cmp(&other.idx[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += self.val[i] * other.val[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    fn axpy(&self, alpha: f64, y: &mut [f64]) {
        for (&k, &a) in self.idx.iter().zip(&self.val) {
            y[k] += alpha * a;
        }
    }
}

/// Packed lower-triangular Cholesky factor of the working-set Gram matrix.
#[derive(Debug, Clone, Default)]
struct GramFactor {
    set: Vec<usize>,
    packed: Vec<f64>,
}

impl GramFactor {
    fn len(&self) -> usize {
        self.set.len()
    }

    fn at(&self, i: usize, k: usize) -> f64 {
        self.packed[i * (i + 1) / 2 + k]
    }

    fn forward(&self, v: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut y = vec![0.0; n];
        for i in 0..n {
            let base = i * (i + 1) / 2;
            let mut s = v[i];
            for k in 0..i {
                s -= self.packed[base + k] * y[k];
            }
            y[i] = s / self.packed[base + i];
        }
        y
    }

    fn backward(&self, y: &[f64]) -> Vec<f64> {
        let n = self.len();
        let mut x = y.to_vec();
        for i in (0..n).rev() {
            let mut s = x[i];
            for k in (i + 1)..n {
                s -= self.at(k, i) * x[k];
            }
            x[i] = s / self.at(i, i);
        }
        x
    }

    fn solve(&self, v: &[f64]) -> Vec<f64> {
        self.backward(&self.forward(v))
    }

    /// Appends a row whose forward-solved cross terms `y` and squared pivot
    /// are already known.
    fn push(&mut self, row: usize, y: &[f64], pivot_sq: f64) {
        self.set.push(row);
        self.packed.extend_from_slice(y);
        self.packed.push(pivot_sq.sqrt());
    }

    /// Drops the row at `pos`; the trailing rows are restored to triangular
    /// form with Givens rotations.
    fn remove(&mut self, pos: usize) {
        let n = self.len();
        let mut tail: Vec<Vec<f64>> = ((pos + 1)..n)
            .map(|i| {
                let base = i * (i + 1) / 2;
                self.packed[base..base + i + 1].to_vec()
            })
            .collect();
        for c in 0..tail.len() {
            let (j0, j1) = (pos + c, pos + c + 1);
            let (a, b) = (tail[c][j0], tail[c][j1]);
            let h = a.hypot(b);
            let (cs, sn) = if h == 0.0 { (1.0, 0.0) } else { (a / h, b / h) };
            for row in tail.iter_mut().skip(c) {
                let (u, v) = (row[j0], row[j1]);
                row[j0] = cs * u + sn * v;
                row[j1] = -sn * u + cs * v;
            }
            tail[c][j1] = 0.0;
        }
        self.packed.truncate(pos * (pos + 1) / 2);
        for mut row in tail {
            row.pop();
            self.packed.extend_from_slice(&row);
        }
        self.set.remove(pos);
    }
}

/// Relative pivot below which a row is treated as linearly dependent on the
/// working set.
const DEPENDENCE: f64 = 1e-12;

#[derive(Debug, Clone)]
pub struct Projector {
    owner: usize,
    n: usize,
    rows: Vec<LocalRow>,
    n_eq: usize,
    labels: Vec<String>,
    tol: f64,
    max_iter: usize,
    warm: Vec<usize>,
    factor: Option<GramFactor>,
    certified: bool,
}

impl Projector {
    pub fn new(poly: &Polyhedron, tol: f64) -> Self {
        let pos: std::collections::HashMap<usize, usize> = poly
            .support
            .iter()
            .enumerate()
            .map(|(k, &r)| (r, k))
            .collect();
        let mut rows = Vec::with_capacity(poly.num_rows());
        let mut labels = Vec::with_capacity(poly.num_rows());
        for row in poly.eq_rows.iter().chain(&poly.ineq_rows) {
            let norm = row.norm();
            rows.push(LocalRow {
                idx: row.coefs.iter().map(|c| pos[&c.0]).collect(),
                val: row.coefs.iter().map(|c| c.1 / norm).collect(),
                b: row.bound / norm,
            });
            labels.push(row.tag.to_string());
        }
        let n = poly.support.len();
        Projector {
            owner: poly.owner,
            n,
            max_iter: 50 * (rows.len() + n) + 100,
            rows,
            n_eq: poly.eq_rows.len(),
            labels,
            tol,
            warm: Vec::new(),
            factor: None,
            certified: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn tolerance(&self) -> f64 {
        self.tol
    }

    /// Inequality rows active at the last solution, as indices into the
    /// polyhedron's `ineq_rows`.
    pub fn active_inequalities(&self) -> Vec<usize> {
        self.warm.iter().map(|&k| k - self.n_eq).collect()
    }

    /// Proves the set nonempty by projecting the origin; the outcome is
    /// cached so later calls are free.
    pub fn certify(&mut self) -> Result<()> {
        if !self.certified {
            let origin = vec![0.0; self.n];
            self.solve(&origin)?;
            self.certified = true;
        }
        Ok(())
    }

    pub fn project_local(&mut self, point: &[f64]) -> Result<ProjectionResult> {
        assert_eq!(point.len(), self.n, "point must be restricted to the support");
        self.certify()?;
        self.solve(point)
    }

    fn build_factor(&self, set: &[usize]) -> GramFactor {
        let mut f = GramFactor::default();
        for &q in set {
            let v: Vec<f64> = f.set.iter().map(|&k| self.rows[k].dot(&self.rows[q])).collect();
            let y = f.forward(&v);
            let pivot_sq = self.rows[q].dot(&self.rows[q]) - y.iter().map(|a| a * a).sum::<f64>();
            if pivot_sq > DEPENDENCE {
                f.push(q, &y, pivot_sq);
            }
        }
        f
    }

    fn multipliers(&self, f: &GramFactor, p: &[f64]) -> Vec<f64> {
        let rhs: Vec<f64> = f
            .set
            .iter()
            .map(|&k| self.rows[k].dot_dense(p) - self.rows[k].b)
            .collect();
        f.solve(&rhs)
    }

    fn primal(&self, f: &GramFactor, mu: &[f64], p: &[f64]) -> Vec<f64> {
        let mut x = p.to_vec();
        for (&k, &m) in f.set.iter().zip(mu) {
            self.rows[k].axpy(-m, &mut x);
        }
        x
    }

    fn infeasible(&self, set: &[usize], extra: Option<usize>) -> Error {
        Error::Infeasible {
            owner: self.owner,
            rows: set
                .iter()
                .chain(extra.iter())
                .map(|&k| self.labels[k].clone())
                .collect(),
        }
    }

    fn solve(&mut self, p: &[f64]) -> Result<ProjectionResult> {
        if self.rows.is_empty() {
            return Ok(ProjectionResult {
                point: p.to_vec(),
                kkt_residual: 0.0,
                iterations: 0,
            });
        }
        let mut requested: Vec<usize> = (0..self.n_eq).collect();
        requested.extend_from_slice(&self.warm);
        let mut f = match self.factor.take() {
            Some(f) if f.set == requested => f,
            _ => self.build_factor(&requested),
        };

        // Shed warm-start rows whose multipliers have the wrong sign until the
        // working set is dual feasible.
        let mut mu = self.multipliers(&f, p);
        loop {
            let worst = f
                .set
                .iter()
                .zip(&mu)
                .enumerate()
                .filter(|(_, (&k, &m))| k >= self.n_eq && m < 0.0)
                .min_by(|a, b| a.1 .1.total_cmp(b.1 .1))
                .map(|(pos, _)| pos);
            match worst {
                Some(pos) => {
                    f.remove(pos);
                    mu = self.multipliers(&f, p);
                }
                None => break,
            }
        }
        let mut x = self.primal(&f, &mu, p);
        let mut in_set = vec![false; self.rows.len()];
        for &k in &f.set {
            in_set[k] = true;
        }

        let mut iterations = 0;
        loop {
            let mut best = None;
            let mut best_viol = self.tol;
            for k in self.n_eq..self.rows.len() {
                if in_set[k] {
                    continue;
                }
                let s = self.rows[k].dot_dense(&x) - self.rows[k].b;
                if s > best_viol {
                    best_viol = s;
                    best = Some(k);
                }
            }
            let Some(q) = best else { break };
            let mut mu_q = 0.0;
            loop {
                iterations += 1;
                if iterations > self.max_iter {
                    let residual = self.kkt_residual(&f, &mu, &x);
                    self.factor = None;
                    self.warm.clear();
                    return Err(Error::IterationLimit {
                        owner: self.owner,
                        iterations,
                        residual,
                    });
                }
                let v: Vec<f64> = f.set.iter().map(|&k| self.rows[k].dot(&self.rows[q])).collect();
                let y = f.forward(&v);
                let pivot_sq = 1.0 - y.iter().map(|a| a * a).sum::<f64>();
                let r = f.backward(&y);

                let mut block: Option<(usize, f64)> = None;
                for (pos, (&k, (&m, &rk))) in f.set.iter().zip(mu.iter().zip(&r)).enumerate() {
                    if k >= self.n_eq && rk > 1e-14 {
                        let ratio = m.max(0.0) / rk;
                        if block.map_or(true, |(_, t)| ratio < t) {
                            block = Some((pos, ratio));
                        }
                    }
                }
                let dependent = pivot_sq <= DEPENDENCE;
                let slack = self.rows[q].dot_dense(&x) - self.rows[q].b;
                let full = if dependent { f64::INFINITY } else { slack / pivot_sq };
                let step = match block {
                    Some((_, t)) if t < full => t,
                    _ if dependent => {
                        self.factor = None;
                        self.warm.clear();
                        return Err(self.infeasible(&f.set, Some(q)));
                    }
                    _ => full,
                };

                if !dependent {
                    // z = a_q − A_Wᵀ r
                    self.rows[q].axpy(-step, &mut x);
                    for (&k, &rk) in f.set.iter().zip(&r) {
                        self.rows[k].axpy(step * rk, &mut x);
                    }
                }
                for (m, rk) in mu.iter_mut().zip(&r) {
                    *m -= step * rk;
                }
                mu_q += step;

                if step == full {
                    f.push(q, &y, pivot_sq);
                    mu.push(mu_q);
                    in_set[q] = true;
                    break;
                }
                let (pos, _) = block.expect("partial step has a blocking row");
                in_set[f.set[pos]] = false;
                f.remove(pos);
                mu.remove(pos);
            }
        }

        // Polish: the exact projection onto the final working set.
        let mu = self.multipliers(&f, p);
        let x = self.primal(&f, &mu, p);
        let kkt = self.kkt_residual(&f, &mu, &x);
        let eq_violation = (0..self.n_eq)
            .map(|k| (self.rows[k].dot_dense(&x) - self.rows[k].b).abs())
            .fold(0.0, f64::max);
        if eq_violation > self.tol.max(1e-9) * 1e3 {
            self.factor = None;
            self.warm.clear();
            let bad: Vec<usize> = (0..self.n_eq)
                .filter(|&k| (self.rows[k].dot_dense(&x) - self.rows[k].b).abs() > self.tol)
                .collect();
            return Err(self.infeasible(&bad, None));
        }
        self.warm = f.set.iter().copied().filter(|&k| k >= self.n_eq).collect();
        self.factor = Some(f);
        Ok(ProjectionResult {
            point: x,
            kkt_residual: kkt,
            iterations,
        })
    }

    fn kkt_residual(&self, f: &GramFactor, mu: &[f64], x: &[f64]) -> f64 {
        let mut res: f64 = 0.0;
        for (k, row) in self.rows.iter().enumerate() {
            let s = row.dot_dense(x) - row.b;
            res = res.max(if k < self.n_eq { s.abs() } else { s.max(0.0) });
        }
        for (&k, &m) in f.set.iter().zip(mu) {
            if k >= self.n_eq {
                let s = self.rows[k].dot_dense(x) - self.rows[k].b;
                res = res.max((-m).max(0.0)).max((m * s).abs());
            }
        }
        res
    }
}
