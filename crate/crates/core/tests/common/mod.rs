//! Shared helpers for the integration tests: random micro-polyhedra and an
//! enumeration-based projection oracle that shares no code with the library.
#![allow(dead_code)]

use p2p_trade::model::ConstraintFamily;
use p2p_trade::polyhedron::{Polyhedron, PolyhedronBuilder, RowTag};
use rand::{seq::SliceRandom, Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Dense row `a . y (= or <=) b` over local coordinates.
#[derive(Debug, Clone)]
pub struct DenseRow {
    pub a: Vec<f64>,
    pub b: f64,
    pub eq: bool,
}

#[derive(Debug, Clone)]
pub struct Micro {
    pub poly: Polyhedron,
    /// Global offsets of the local coordinates (the polyhedron's support).
    pub support: Vec<usize>,
    pub rows: Vec<DenseRow>,
    /// Length of the global vectors the polyhedron lives in.
    pub global_len: usize,
    /// A point known to lie in the set (local coordinates).
    pub interior: Vec<f64>,
}

fn tag() -> RowTag {
    RowTag::new(ConstraintFamily::LineFlow, None, "micro")
}

/// Nonempty random polyhedron with at most `max_rows` rows on 2..=6 local
/// coordinates scattered through a longer global vector.
pub fn micro_polyhedron(seed: u64, max_rows: usize) -> Micro {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.gen_range(2..=6);
    let global_len = n + rng.gen_range(1..=4);
    let mut all: Vec<usize> = (0..global_len).collect();
    all.shuffle(&mut rng);
    let mut support: Vec<usize> = all[..n].to_vec();
    support.sort_unstable();
    let point: Vec<f64> = (0..n).map(|_| rng.gen_range(-2.0..2.0)).collect();
    let num_rows = rng.gen_range(1..=max_rows);
    let num_eq = if n > 2 { rng.gen_range(0..=2.min(num_rows - 1)) } else { 0 };
    let mut builder = PolyhedronBuilder::new(0);
    let mut raw = Vec::new();
    for k in 0..num_rows {
        let a: Vec<f64> = (0..n)
            .map(|_| if rng.gen_bool(0.7) { rng.gen_range(-3.0..3.0) } else { 0.0 })
            .collect();
        if a.iter().all(|&v| v == 0.0) {
            continue;
        }
        let eq = k < num_eq;
        let b = dot(&a, &point) + if eq { 0.0 } else { rng.gen_range(0.0..2.0) };
        let coefs: Vec<(usize, f64)> = a
            .iter()
            .enumerate()
            .filter(|(_, &v)| v != 0.0)
            .map(|(j, &v)| (support[j], v))
            .collect();
        if eq {
            builder.eq(coefs, b, tag());
        } else {
            builder.le(coefs, b, tag());
        }
        raw.push((a, b, eq));
    }
    let poly = builder.finish();
    let local: Vec<usize> = poly
        .support
        .iter()
        .map(|r| support.iter().position(|s| s == r).unwrap())
        .collect();
    let rows = raw
        .into_iter()
        .map(|(a, b, eq)| DenseRow {
            a: local.iter().map(|&j| a[j]).collect(),
            b,
            eq,
        })
        .collect();
    Micro {
        interior: local.iter().map(|&j| point[j]).collect(),
        support: poly.support.clone(),
        poly,
        rows,
        global_len,
    }
}

/// Solves `m x = v` by Gaussian elimination with partial pivoting; `None`
/// when singular.
fn solve_dense(mut m: Vec<Vec<f64>>, mut v: Vec<f64>) -> Option<Vec<f64>> {
    let n = v.len();
    let scale = m.iter().flatten().fold(0.0f64, |s, x| s.max(x.abs())).max(1.0);
    for c in 0..n {
        let p = (c..n).max_by(|&a, &b| m[a][c].abs().total_cmp(&m[b][c].abs()))?;
        if m[p][c].abs() < 1e-10 * scale {
            return None;
        }
        m.swap(c, p);
        v.swap(c, p);
        for r in c + 1..n {
            let f = m[r][c] / m[c][c];
            for k in c..n {
                m[r][k] -= f * m[c][k];
            }
            v[r] -= f * v[c];
        }
    }
    let mut x = vec![0.0; n];
    for c in (0..n).rev() {
        let s: f64 = (c + 1..n).map(|k| m[c][k] * x[k]).sum();
        x[c] = (v[c] - s) / m[c][c];
    }
    Some(x)
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Projection of `p` onto `{rows}` by enumerating candidate active sets: the
/// projection onto each face's affine hull is computed in closed form and
/// the nearest candidate satisfying every row wins.
pub fn enumerate_projection(rows: &[DenseRow], p: &[f64]) -> Vec<f64> {
    let feasible = |y: &[f64]| {
        rows.iter().all(|r| {
            let s = dot(&r.a, y) - r.b;
            let tol = 1e-9 * (1.0 + r.b.abs());
            if r.eq {
                s.abs() <= tol
            } else {
                s <= tol
            }
        })
    };
    let mut best: Option<(f64, Vec<f64>)> = None;
    // Equalities join the enumeration too, so dependent equality rows are
    // covered by their independent subsets; feasibility filters the rest.
    for mask in 0u32..(1 << rows.len()) {
        let active: Vec<usize> = (0..rows.len()).filter(|k| mask >> k & 1 == 1).collect();
        if active.len() > p.len() {
            continue;
        }
        let y = if active.is_empty() {
            p.to_vec()
        } else {
            let gram: Vec<Vec<f64>> = active
                .iter()
                .map(|&i| active.iter().map(|&j| dot(&rows[i].a, &rows[j].a)).collect())
                .collect();
            let rhs: Vec<f64> = active.iter().map(|&i| dot(&rows[i].a, p) - rows[i].b).collect();
            let Some(mu) = solve_dense(gram, rhs) else { continue };
            let mut y = p.to_vec();
            for (k, &i) in active.iter().enumerate() {
                for (yj, aj) in y.iter_mut().zip(&rows[i].a) {
                    *yj -= mu[k] * aj;
                }
            }
            y
        };
        if feasible(&y) {
            let d: f64 = y.iter().zip(p).map(|(a, b)| (a - b).powi(2)).sum();
            if best.as_ref().is_none_or(|(bd, _)| d < *bd) {
                best = Some((d, y));
            }
        }
    }
    best.expect("nonempty set has a feasible face projection").1
}

pub fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt()
}

pub fn random_point(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// Random split problem whose sets all contain `interior`: `agents` agents
/// over `dim` offsets, each set a few rows on a random subset of offsets.
pub fn toy_split(seed: u64, agents: usize, dim: usize) -> (p2p_trade::problem::SplitProblem, Vec<f64>) {
    use p2p_trade::model::SeparableQuadratic;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let interior: Vec<f64> = (0..dim).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let sets = (0..agents)
        .map(|i| {
            let mut b = PolyhedronBuilder::new(i);
            for _ in 0..rng.gen_range(1..=4) {
                let k = rng.gen_range(1..=dim.min(3));
                let mut offs: Vec<usize> = (0..dim).collect();
                offs.shuffle(&mut rng);
                let coefs: Vec<(usize, f64)> = offs[..k].iter().map(|&r| (r, rng.gen_range(-2.0..2.0))).collect();
                let at: f64 = coefs.iter().map(|&(r, a)| a * interior[r]).sum();
                b.le(coefs, at + rng.gen_range(0.0..0.5), tag());
            }
            b.finish()
        })
        .collect();
    let objective = SeparableQuadratic {
        quad: (0..dim).map(|_| rng.gen_range(0.1..1.0)).collect(),
        lin: (0..dim).map(|_| rng.gen_range(-4.0..4.0)).collect(),
        constant: 0.0,
    };
    let owner = (0..dim).map(|r| r % agents).collect();
    (p2p_trade::problem::SplitProblem::new(owner, sets, objective), interior)
}

/// `P_S(w)` over the intersection of the problem's sets, by the oracle.
pub fn project_onto_intersection(problem: &p2p_trade::problem::SplitProblem, w: &[f64]) -> Vec<f64> {
    use p2p_trade::model::SeparableQuadratic;
    let objective = SeparableQuadratic {
        quad: vec![0.5; w.len()],
        lin: w.iter().map(|v| -v).collect(),
        constant: 0.0,
    };
    let dist = p2p_trade::problem::SplitProblem::new(problem.owner.clone(), problem.sets.clone(), objective);
    p2p_trade::oracle::solve_centralized(&dist).unwrap().x_star
}
