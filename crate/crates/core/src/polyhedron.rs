//! Per-prosumer feasible sets as sparse linear systems over the global index.

use std::collections::{BTreeSet, HashSet};
use std::fmt::Write as _;

use crate::index::{DecisionIndex, Variable};
use crate::model::ConstraintFamily;
use crate::scenario::CommunityScenario;

#[derive(Debug, Clone, PartialEq)]
pub struct RowTag {
    pub family: ConstraintFamily,
    pub t: Option<usize>,
    pub detail: String,
}

impl RowTag {
    pub fn new(family: ConstraintFamily, t: Option<usize>, detail: impl Into<String>) -> Self {
        RowTag {
            family,
            t,
            detail: detail.into(),
        }
    }
}

impl std::fmt::Display for RowTag {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.family.name())?;
        if let Some(t) = self.t {
            write!(f, "[t={t}]")?;
        }
        if !self.detail.is_empty() {
            write!(f, "({})", self.detail)?;
        }
        Ok(())
    }
}

/// `coefs · x (= or <=) bound`, with `coefs` sorted by offset and free of
/// duplicate offsets.
#[derive(Debug, Clone, PartialEq)]
pub struct SparseRow {
    pub coefs: Vec<(usize, f64)>,
    pub bound: f64,
    pub tag: RowTag,
}

impl SparseRow {
    pub fn new(mut coefs: Vec<(usize, f64)>, bound: f64, tag: RowTag) -> Self {
        coefs.sort_by_key(|c| c.0);
        let mut merged: Vec<(usize, f64)> = Vec::with_capacity(coefs.len());
        for (r, a) in coefs {
            match merged.last_mut() {
                Some(last) if last.0 == r => last.1 += a,
                _ => merged.push((r, a)),
            }
        }
        merged.retain(|c| c.1 != 0.0);
        SparseRow {
            coefs: merged,
            bound,
            tag,
        }
    }

    pub fn dot(&self, x: &[f64]) -> f64 {
        self.coefs.iter().map(|&(r, a)| a * x[r]).sum()
    }

    pub fn norm(&self) -> f64 {
        self.coefs.iter().map(|c| c.1 * c.1).sum::<f64>().sqrt()
    }

    fn key(&self) -> (Vec<(usize, u64)>, u64) {
        (
            self.coefs.iter().map(|&(r, a)| (r, a.to_bits())).collect(),
            self.bound.to_bits(),
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Polyhedron {
    pub owner: usize,
    pub eq_rows: Vec<SparseRow>,
    pub ineq_rows: Vec<SparseRow>,
    /// Sorted global offsets referenced by at least one row.
    pub support: Vec<usize>,
}

impl Polyhedron {
    pub fn is_empty_marker(&self) -> bool {
        self.eq_rows.is_empty() && self.ineq_rows.is_empty()
    }

    pub fn num_rows(&self) -> usize {
        self.eq_rows.len() + self.ineq_rows.len()
    }

    /// Largest violation of any row at `x` (global coordinates).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let eq = self
            .eq_rows
            .iter()
            .map(|r| (r.dot(x) - r.bound).abs())
            .fold(0.0, f64::max);
        self.ineq_rows
            .iter()
            .map(|r| (r.dot(x) - r.bound).max(0.0))
            .fold(eq, f64::max)
    }

    pub fn contains(&self, x: &[f64], tol: f64) -> bool {
        self.max_violation(x) <= tol
    }

    /// Sparse text dump, one row per line:
    /// `<eq|le> <bound> <tag> <offset>:<coef> ...`, preceded by a header line.
    pub fn dump(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "# polyhedron owner={} eq={} le={} support={}",
            self.owner,
            self.eq_rows.len(),
            self.ineq_rows.len(),
            self.support.len()
        );
        for (kind, rows) in [("eq", &self.eq_rows), ("le", &self.ineq_rows)] {
            for row in rows {
                let _ = write!(s, "{kind} {:e} {}", row.bound, row.tag);
                for &(r, a) in &row.coefs {
                    let _ = write!(s, " {r}:{a:e}");
                }
                s.push('\n');
            }
        }
        s
    }
}

/// Collects rows, then drops empty rows and duplicates.
#[derive(Debug)]
pub struct PolyhedronBuilder {
    owner: usize,
    eq: Vec<SparseRow>,
    ineq: Vec<SparseRow>,
}

impl PolyhedronBuilder {
    pub fn new(owner: usize) -> Self {
        PolyhedronBuilder {
            owner,
            eq: Vec::new(),
            ineq: Vec::new(),
        }
    }

    pub fn eq(&mut self, coefs: Vec<(usize, f64)>, bound: f64, tag: RowTag) {
        self.eq.push(SparseRow::new(coefs, bound, tag));
    }

    pub fn le(&mut self, coefs: Vec<(usize, f64)>, bound: f64, tag: RowTag) {
        if bound.is_finite() {
            self.ineq.push(SparseRow::new(coefs, bound, tag));
        }
    }

    /// `lo <= coefs · x <= hi`; infinite sides are skipped.
    pub fn range(&mut self, coefs: Vec<(usize, f64)>, lo: f64, hi: f64, tag: RowTag) {
        if lo.is_finite() {
            let neg = coefs.iter().map(|&(r, a)| (r, -a)).collect();
            self.le(neg, -lo, tag.clone());
        }
        self.le(coefs, hi, tag);
    }

    pub fn finish(self) -> Polyhedron {
        let owner = self.owner;
        let clean = |rows: Vec<SparseRow>, kind: &str| {
            let mut seen = HashSet::new();
            let mut out = Vec::with_capacity(rows.len());
            for row in rows {
                if row.coefs.is_empty() {
                    log::warn!("agent {owner}: dropping all-zero {kind} row {}", row.tag);
                    continue;
                }
                if seen.insert(row.key()) {
                    out.push(row);
                }
            }
            out
        };
        let eq_rows = clean(self.eq, "equality");
        let ineq_rows = clean(self.ineq, "inequality");
        let support: BTreeSet<usize> = eq_rows
            .iter()
            .chain(&ineq_rows)
            .flat_map(|r| r.coefs.iter().map(|c| c.0))
            .collect();
        Polyhedron {
            owner,
            eq_rows,
            ineq_rows,
            support: support.into_iter().collect(),
        }
    }
}

/// Rows of prosumer `i`'s stage-1 feasible set.
pub fn build_stage1_set(scenario: &CommunityScenario, index: &DecisionIndex, i: usize) -> Polyhedron {
    stage1_builder(scenario, index, i).finish()
}

pub(crate) fn stage1_builder(scenario: &CommunityScenario, index: &DecisionIndex, i: usize) -> PolyhedronBuilder {
    use ConstraintFamily as F;
    let mut b = PolyhedronBuilder::new(i);
    let p = &scenario.prosumers[i];
    let dt = scenario.dt();
    let n_t = index.num_steps();
    let n_p = scenario.num_prosumers();
    let loc = |v: Variable| index.locate(v);

    for (m, fl) in p.flexible_loads.iter().enumerate() {
        let det = format!("fl{m}");
        for t in 0..n_t {
            let r = loc(Variable::FlexibleLoad { prosumer: i, device: m, t });
            b.range(vec![(r, 1.0)], fl.p_min[t], fl.p_max[t], RowTag::new(F::FlexibleBox, Some(t), &det));
        }
        let energy = (0..n_t)
            .map(|t| (loc(Variable::FlexibleLoad { prosumer: i, device: m, t }), -dt))
            .collect();
        b.le(energy, -fl.energy_ref, RowTag::new(F::FlexibleEnergy, None, &det));
    }

    for (q, s) in p.storages.iter().enumerate() {
        let det = format!("ess{q}");
        let mut running = Vec::new();
        for t in 0..n_t {
            let c = loc(Variable::Charge { prosumer: i, device: q, t });
            let d = loc(Variable::Discharge { prosumer: i, device: q, t });
            running.push((c, s.eta_c * dt));
            running.push((d, -dt / s.eta_d));
            b.range(
                running.clone(),
                s.soc_min * s.w_nominal - s.w0,
                s.soc_max * s.w_nominal - s.w0,
                RowTag::new(F::StateOfCharge, Some(t), &det),
            );
            b.range(vec![(c, 1.0)], 0.0, s.p_charge_max, RowTag::new(F::StorageBox, Some(t), format!("{det}.charge")));
            b.range(vec![(d, 1.0)], 0.0, s.p_discharge_max, RowTag::new(F::StorageBox, Some(t), format!("{det}.discharge")));
        }
        b.range(running, s.w_day_min, s.w_day_max, RowTag::new(F::DayEnergy, None, &det));
    }

    for (dd, de) in p.diesels.iter().enumerate() {
        let det = format!("de{dd}");
        for t in 0..n_t {
            let r = loc(Variable::Diesel { prosumer: i, device: dd, t });
            b.range(vec![(r, 1.0)], de.p_min[t], de.p_max[t], RowTag::new(F::DieselBox, Some(t), &det));
            let tag = RowTag::new(F::DieselRamp, Some(t), &det);
            if t == 0 {
                b.range(
                    vec![(r, 1.0)],
                    dt * de.ramp_min[t] + de.p_initial,
                    dt * de.ramp_max[t] + de.p_initial,
                    tag,
                );
            } else {
                let prev = loc(Variable::Diesel { prosumer: i, device: dd, t: t - 1 });
                b.range(vec![(r, 1.0), (prev, -1.0)], dt * de.ramp_min[t], dt * de.ramp_max[t], tag);
            }
        }
    }

    for t in 0..n_t {
        let po = loc(Variable::NetOutput { prosumer: i, t });
        let gs = loc(Variable::GridSell { prosumer: i, t });
        let gb = loc(Variable::GridBuy { prosumer: i, t });

        let mut devices = vec![(po, 1.0)];
        for d in 0..p.diesels.len() {
            devices.push((loc(Variable::Diesel { prosumer: i, device: d, t }), -1.0));
        }
        for q in 0..p.storages.len() {
            devices.push((loc(Variable::Charge { prosumer: i, device: q, t }), -1.0));
            devices.push((loc(Variable::Discharge { prosumer: i, device: q, t }), 1.0));
        }
        for m in 0..p.flexible_loads.len() {
            devices.push((loc(Variable::FlexibleLoad { prosumer: i, device: m, t }), 1.0));
        }
        b.eq(
            devices,
            p.nondispatchable_gen[t] - p.inflexible_load[t],
            RowTag::new(F::NetOutputDevices, Some(t), ""),
        );

        b.le(vec![(gs, -1.0)], 0.0, RowTag::new(F::GridNonnegative, Some(t), "sell"));
        b.le(vec![(gb, -1.0)], 0.0, RowTag::new(F::GridNonnegative, Some(t), "buy"));

        let mut exchange = vec![(po, 1.0), (gs, -1.0), (gb, 1.0)];
        for j in (0..n_p).filter(|&j| j != i) {
            let ps = loc(Variable::PeerSell { prosumer: i, peer: j, t });
            let pb = loc(Variable::PeerBuy { prosumer: i, peer: j, t });
            let ps_mirror = loc(Variable::PeerSell { prosumer: j, peer: i, t });
            let pb_mirror = loc(Variable::PeerBuy { prosumer: j, peer: i, t });
            exchange.push((ps, -1.0));
            exchange.push((pb, 1.0));
            b.le(vec![(ps, -1.0)], 0.0, RowTag::new(F::TradeNonnegative, Some(t), format!("sell{j}")));
            b.le(vec![(pb, -1.0)], 0.0, RowTag::new(F::TradeNonnegative, Some(t), format!("buy{j}")));
            b.eq(vec![(pb, 1.0), (ps_mirror, -1.0)], 0.0, RowTag::new(F::TradeReciprocity, Some(t), format!("buy{j}")));
            b.eq(vec![(ps, 1.0), (pb_mirror, -1.0)], 0.0, RowTag::new(F::TradeReciprocity, Some(t), format!("sell{j}")));
        }
        b.eq(exchange, 0.0, RowTag::new(F::NetOutputTrades, Some(t), ""));

        for l in scenario.topology.lines_of(i) {
            let flow = scenario
                .topology
                .prosumers_on_line(l)
                .map(|j| (loc(Variable::NetOutput { prosumer: j, t }), 1.0))
                .collect();
            let line = scenario.topology.lines[l];
            b.range(flow, line.c_min, line.c_max, RowTag::new(F::LineFlow, Some(t), format!("line{l}")));
        }
    }
    b
}

/// Stage-1 set plus rows pinning every own peer trade to zero; used for the
/// no-trade baseline.
pub fn build_no_trade_set(scenario: &CommunityScenario, index: &DecisionIndex, i: usize) -> Polyhedron {
    let mut b = stage1_builder(scenario, index, i);
    for t in 0..index.num_steps() {
        for j in (0..scenario.num_prosumers()).filter(|&j| j != i) {
            for v in [
                Variable::PeerSell { prosumer: i, peer: j, t },
                Variable::PeerBuy { prosumer: i, peer: j, t },
            ] {
                b.eq(vec![(index.locate(v), 1.0)], 0.0, RowTag::new(ConstraintFamily::NoTrade, Some(t), v.label()));
            }
        }
    }
    b.finish()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn range_skips_infinite_sides() {
        let mut b = PolyhedronBuilder::new(0);
        b.range(vec![(3, 1.0)], f64::NEG_INFINITY, 2.0, RowTag::new(ConstraintFamily::FlexibleBox, None, ""));
        b.range(vec![(3, 1.0)], 1.0, f64::INFINITY, RowTag::new(ConstraintFamily::FlexibleBox, None, ""));
        let p = b.finish();
        assert_eq!(p.ineq_rows.len(), 2);
        assert_eq!(p.support, vec![3]);
        assert!(p.contains(&[0.0, 0.0, 0.0, 1.5], 0.0));
        assert!(!p.contains(&[0.0, 0.0, 0.0, 2.5], 0.0));
    }

    #[test]
    fn degenerate_and_duplicate_rows_are_dropped() {
        let mut b = PolyhedronBuilder::new(0);
        let tag = RowTag::new(ConstraintFamily::LineFlow, Some(0), "");
        b.le(vec![(1, 1.0), (1, -1.0)], 5.0, tag.clone());
        b.le(vec![(0, 1.0), (2, 1.0)], 5.0, tag.clone());
        b.le(vec![(2, 1.0), (0, 1.0)], 5.0, tag);
        let p = b.finish();
        assert_eq!(p.ineq_rows.len(), 1);
        assert_eq!(p.support, vec![0, 2]);
    }

    #[test]
    fn dump_lists_every_row() {
        let mut b = PolyhedronBuilder::new(4);
        b.eq(vec![(0, 1.0), (1, -1.0)], 0.0, RowTag::new(ConstraintFamily::TradeReciprocity, Some(2), "buy1"));
        b.le(vec![(1, -1.0)], 0.0, RowTag::new(ConstraintFamily::TradeNonnegative, Some(2), "sell0"));
        let text = b.finish().dump();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "# polyhedron owner=4 eq=1 le=1 support=2");
        assert_eq!(lines[1], "eq 0e0 trade_reciprocity[t=2](buy1) 0:1e0 1:-1e0");
        assert_eq!(lines[2], "le 0e0 trade_nonnegative[t=2](sell0) 1:-1e0");
    }
}
