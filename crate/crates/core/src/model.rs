//! Stage-1 cost model: net output, the social-cost objective and its
//! gradient, and direct evaluation of every constraint of the power model.

use crate::index::{DecisionIndex, Variable};
use crate::scenario::CommunityScenario;

/// Right-hand side of the device balance: generation plus storage exchange
/// minus consumption, for prosumer `i` at step `t`.
pub fn net_output(x: &[f64], scenario: &CommunityScenario, index: &DecisionIndex, i: usize, t: usize) -> f64 {
    let p = &scenario.prosumers[i];
    let mut out = p.nondispatchable_gen[t] - p.inflexible_load[t];
    for device in 0..p.diesels.len() {
        out += x[index.locate(Variable::Diesel { prosumer: i, device, t })];
    }
    for device in 0..p.storages.len() {
        out += x[index.locate(Variable::Charge { prosumer: i, device, t })]
            - x[index.locate(Variable::Discharge { prosumer: i, device, t })];
    }
    for device in 0..p.flexible_loads.len() {
        out -= x[index.locate(Variable::FlexibleLoad { prosumer: i, device, t })];
    }
    out
}

/// Per-prosumer cost components, in $.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct CostBreakdown {
    /// Storage and diesel operating cost.
    pub om: f64,
    /// Flexible-load convenience (enters the cost with a minus sign).
    pub convenience: f64,
    pub grid: f64,
    /// Operation and electrical-distance fees.
    pub fees: f64,
    pub trade: f64,
}

impl CostBreakdown {
    pub fn total(&self) -> f64 {
        self.om - self.convenience + self.grid + self.fees + self.trade
    }

    /// Cost excluding the peer-trade payments.
    pub fn non_trade(&self) -> f64 {
        self.om - self.convenience + self.grid + self.fees
    }
}

pub fn prosumer_cost(
    x: &[f64],
    scenario: &CommunityScenario,
    index: &DecisionIndex,
    i: usize,
) -> CostBreakdown {
    prosumer_cost_at_price(x, scenario, index, i, |_, _| scenario.stage1_trade_price)
}

/// Like [`prosumer_cost`] but with the trade price supplied per `(peer, t)`.
pub fn prosumer_cost_at_price(
    x: &[f64],
    scenario: &CommunityScenario,
    index: &DecisionIndex,
    i: usize,
    price: impl Fn(usize, usize) -> f64,
) -> CostBreakdown {
    let p = &scenario.prosumers[i];
    let tf = &scenario.tariffs;
    let dt = scenario.dt();
    let n_p = scenario.num_prosumers();
    let mut c = CostBreakdown::default();
    for (device, fl) in p.flexible_loads.iter().enumerate() {
        let mut energy = 0.0;
        let mut shift = 0.0;
        for t in 0..index.num_steps() {
            let v = x[index.locate(Variable::FlexibleLoad { prosumer: i, device, t })];
            energy += v * dt;
            shift += (v - fl.ref_profile[t]).powi(2);
        }
        c.convenience += fl.beta1 * (fl.energy_ref - energy) - fl.beta2 * shift;
    }
    for t in 0..index.num_steps() {
        for (device, s) in p.storages.iter().enumerate() {
            let ch = x[index.locate(Variable::Charge { prosumer: i, device, t })];
            let dis = x[index.locate(Variable::Discharge { prosumer: i, device, t })];
            c.om += s.lambda_ess * (dis + ch);
        }
        for (device, de) in p.diesels.iter().enumerate() {
            let v = x[index.locate(Variable::Diesel { prosumer: i, device, t })];
            c.om += de.lambda1 * v * v + de.lambda2 * v;
        }
        let gs = x[index.locate(Variable::GridSell { prosumer: i, t })];
        let gb = x[index.locate(Variable::GridBuy { prosumer: i, t })];
        c.grid += tf.lambda_gb * gb - tf.lambda_gs * gs;
        for j in (0..n_p).filter(|&j| j != i) {
            let ps = x[index.locate(Variable::PeerSell { prosumer: i, peer: j, t })];
            let pb = x[index.locate(Variable::PeerBuy { prosumer: i, peer: j, t })];
            c.fees += (tf.lambda_o + tf.lambda_d * scenario.topology.distance[i][j]) * (pb + ps);
            c.trade += price(j, t) * (pb - ps);
        }
    }
    c
}

/// Social cost: the sum of every prosumer's total cost.
pub fn objective(x: &[f64], scenario: &CommunityScenario, index: &DecisionIndex) -> f64 {
    (0..scenario.num_prosumers())
        .map(|i| prosumer_cost(x, scenario, index, i).total())
        .sum()
}

/// Element-wise partial derivatives of [`objective`]. Each entry depends only
/// on the matching entry of `x`.
pub fn gradient(x: &[f64], scenario: &CommunityScenario, index: &DecisionIndex) -> Vec<f64> {
    let tf = &scenario.tariffs;
    let dt = scenario.dt();
    (0..index.total_len())
        .map(|r| {
            let v = x[r];
            let var = index.describe(r).expect("offset in range");
            let p = &scenario.prosumers[var.prosumer()];
            match var {
                Variable::FlexibleLoad { device, t, .. } => {
                    let fl = &p.flexible_loads[device];
                    fl.beta1 * dt + 2.0 * fl.beta2 * (v - fl.ref_profile[t])
                }
                Variable::Charge { device, .. } | Variable::Discharge { device, .. } => {
                    p.storages[device].lambda_ess
                }
                Variable::Diesel { device, .. } => {
                    let de = &p.diesels[device];
                    2.0 * de.lambda1 * v + de.lambda2
                }
                Variable::GridSell { .. } => -tf.lambda_gs,
                Variable::GridBuy { .. } => tf.lambda_gb,
                Variable::PeerSell { prosumer, peer, .. } => {
                    tf.lambda_o + tf.lambda_d * scenario.topology.distance[prosumer][peer]
                        - scenario.stage1_trade_price
                }
                Variable::PeerBuy { prosumer, peer, .. } => {
                    tf.lambda_o + tf.lambda_d * scenario.topology.distance[prosumer][peer]
                        + scenario.stage1_trade_price
                }
                Variable::NetOutput { .. } => 0.0,
            }
        })
        .collect()
}

/// Diagonal quadratic `sum_r quad[r] x_r^2 + lin[r] x_r + constant`.
#[derive(Debug, Clone, PartialEq)]
pub struct SeparableQuadratic {
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    pub constant: f64,
}

impl SeparableQuadratic {
    pub fn zeros(n: usize) -> Self {
        SeparableQuadratic {
            quad: vec![0.0; n],
            lin: vec![0.0; n],
            constant: 0.0,
        }
    }

    pub fn len(&self) -> usize {
        self.quad.len()
    }

    pub fn is_empty(&self) -> bool {
        self.quad.is_empty()
    }

    pub fn value(&self, x: &[f64]) -> f64 {
        self.quad
            .iter()
            .zip(&self.lin)
            .zip(x)
            .map(|((q, l), v)| q * v * v + l * v)
            .sum::<f64>()
            + self.constant
    }

    pub fn partial(&self, r: usize, v: f64) -> f64 {
        2.0 * self.quad[r] * v + self.lin[r]
    }

    pub fn gradient(&self, x: &[f64]) -> Vec<f64> {
        (0..x.len()).map(|r| self.partial(r, x[r])).collect()
    }

    /// Largest second derivative, i.e. the Lipschitz constant of the gradient.
    pub fn smoothness(&self) -> f64 {
        self.quad.iter().fold(0.0_f64, |m, q| m.max(2.0 * q))
    }
}

/// Stage-1 objective expanded into separable form.
pub fn separable_objective(scenario: &CommunityScenario, index: &DecisionIndex) -> SeparableQuadratic {
    let tf = &scenario.tariffs;
    let dt = scenario.dt();
    let mut f = SeparableQuadratic::zeros(index.total_len());
    for r in 0..index.total_len() {
        let var = index.describe(r).expect("offset in range");
        let p = &scenario.prosumers[var.prosumer()];
        match var {
            Variable::FlexibleLoad { device, t, .. } => {
                let fl = &p.flexible_loads[device];
                let pref = fl.ref_profile[t];
                f.quad[r] = fl.beta2;
                f.lin[r] = fl.beta1 * dt - 2.0 * fl.beta2 * pref;
                f.constant += fl.beta2 * pref * pref;
                if t == 0 {
                    f.constant -= fl.beta1 * fl.energy_ref;
                }
            }
            Variable::Charge { device, .. } | Variable::Discharge { device, .. } => {
                f.lin[r] = p.storages[device].lambda_ess;
            }
            Variable::Diesel { device, .. } => {
                f.quad[r] = p.diesels[device].lambda1;
                f.lin[r] = p.diesels[device].lambda2;
            }
            Variable::GridSell { .. } => f.lin[r] = -tf.lambda_gs,
            Variable::GridBuy { .. } => f.lin[r] = tf.lambda_gb,
            Variable::PeerSell { prosumer, peer, .. } => {
                f.lin[r] = tf.lambda_o + tf.lambda_d * scenario.topology.distance[prosumer][peer]
                    - scenario.stage1_trade_price;
            }
            Variable::PeerBuy { prosumer, peer, .. } => {
                f.lin[r] = tf.lambda_o + tf.lambda_d * scenario.topology.distance[prosumer][peer]
                    + scenario.stage1_trade_price;
            }
            Variable::NetOutput { .. } => {}
        }
    }
    f
}

/// Constraint families of the power model, named after what they bound.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConstraintFamily {
    FlexibleBox,
    FlexibleEnergy,
    StateOfCharge,
    StorageBox,
    DayEnergy,
    DieselBox,
    DieselRamp,
    /// Net output equals the device balance.
    NetOutputDevices,
    GridNonnegative,
    TradeNonnegative,
    TradeReciprocity,
    /// Net output equals grid plus peer exchange.
    NetOutputTrades,
    LineFlow,
    /// Stage-2 rows.
    PriceSymmetry,
    PriceBounds,
    Benefit,
    /// Rows added for the no-trade baseline.
    NoTrade,
}

impl ConstraintFamily {
    pub fn name(&self) -> &'static str {
        match self {
            ConstraintFamily::FlexibleBox => "flexible_box",
            ConstraintFamily::FlexibleEnergy => "flexible_energy",
            ConstraintFamily::StateOfCharge => "state_of_charge",
            ConstraintFamily::StorageBox => "storage_box",
            ConstraintFamily::DayEnergy => "day_energy",
            ConstraintFamily::DieselBox => "diesel_box",
            ConstraintFamily::DieselRamp => "diesel_ramp",
            ConstraintFamily::NetOutputDevices => "net_output_devices",
            ConstraintFamily::GridNonnegative => "grid_nonnegative",
            ConstraintFamily::TradeNonnegative => "trade_nonnegative",
            ConstraintFamily::TradeReciprocity => "trade_reciprocity",
            ConstraintFamily::NetOutputTrades => "net_output_trades",
            ConstraintFamily::LineFlow => "line_flow",
            ConstraintFamily::PriceSymmetry => "price_symmetry",
            ConstraintFamily::PriceBounds => "price_bounds",
            ConstraintFamily::Benefit => "benefit",
            ConstraintFamily::NoTrade => "no_trade",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ResidualEntry {
    pub prosumer: usize,
    pub family: ConstraintFamily,
    pub t: Option<usize>,
    pub detail: String,
    /// Positive when violated; for two-sided bounds the larger of the two
    /// one-sided excesses, for equalities the signed mismatch.
    pub violation: f64,
    pub equality: bool,
}

impl ResidualEntry {
    pub fn magnitude(&self) -> f64 {
        if self.equality {
            self.violation.abs()
        } else {
            self.violation.max(0.0)
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ResidualReport {
    pub entries: Vec<ResidualEntry>,
}

impl ResidualReport {
    pub fn max_violation(&self) -> f64 {
        self.entries.iter().fold(0.0, |m, e| m.max(e.magnitude()))
    }

    pub fn worst(&self) -> Option<&ResidualEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.magnitude().total_cmp(&b.magnitude()))
    }

    pub fn max_by_family(&self, prosumer: usize, family: ConstraintFamily) -> f64 {
        self.entries
            .iter()
            .filter(|e| e.prosumer == prosumer && e.family == family)
            .fold(0.0, |m, e| m.max(e.magnitude()))
    }

    fn push_range(&mut self, prosumer: usize, family: ConstraintFamily, t: Option<usize>, detail: String, lo: f64, v: f64, hi: f64) {
        self.entries.push(ResidualEntry {
            prosumer,
            family,
            t,
            detail,
            violation: (v - hi).max(lo - v),
            equality: false,
        });
    }

    fn push_eq(&mut self, prosumer: usize, family: ConstraintFamily, t: Option<usize>, detail: String, lhs: f64, rhs: f64) {
        self.entries.push(ResidualEntry {
            prosumer,
            family,
            t,
            detail,
            violation: lhs - rhs,
            equality: true,
        });
    }
}

/// Evaluates every constraint of the power model directly from its defining
/// formula.
pub fn constraint_residuals(x: &[f64], scenario: &CommunityScenario, index: &DecisionIndex) -> ResidualReport {
    use ConstraintFamily as F;
    let mut rep = ResidualReport::default();
    let dt = scenario.dt();
    let n_t = index.num_steps();
    let n_p = scenario.num_prosumers();
    let at = |v: Variable| x[index.locate(v)];
    for (i, p) in scenario.prosumers.iter().enumerate() {
        for (m, fl) in p.flexible_loads.iter().enumerate() {
            let mut energy = 0.0;
            for t in 0..n_t {
                let v = at(Variable::FlexibleLoad { prosumer: i, device: m, t });
                energy += v * dt;
                rep.push_range(i, F::FlexibleBox, Some(t), format!("fl{m}"), fl.p_min[t], v, fl.p_max[t]);
            }
            rep.push_range(i, F::FlexibleEnergy, None, format!("fl{m}"), fl.energy_ref, energy, f64::INFINITY);
        }
        for (q, s) in p.storages.iter().enumerate() {
            let mut stored = 0.0;
            for t in 0..n_t {
                let ch = at(Variable::Charge { prosumer: i, device: q, t });
                let dis = at(Variable::Discharge { prosumer: i, device: q, t });
                stored += (ch * s.eta_c - dis / s.eta_d) * dt;
                let soc_energy = s.w0 + stored;
                rep.push_range(
                    i,
                    F::StateOfCharge,
                    Some(t),
                    format!("ess{q}"),
                    s.soc_min * s.w_nominal,
                    soc_energy,
                    s.soc_max * s.w_nominal,
                );
                rep.push_range(i, F::StorageBox, Some(t), format!("ess{q}.charge"), 0.0, ch, s.p_charge_max);
                rep.push_range(i, F::StorageBox, Some(t), format!("ess{q}.discharge"), 0.0, dis, s.p_discharge_max);
            }
            rep.push_range(i, F::DayEnergy, None, format!("ess{q}"), s.w_day_min, stored, s.w_day_max);
        }
        for (d, de) in p.diesels.iter().enumerate() {
            let mut prev = de.p_initial;
            for t in 0..n_t {
                let v = at(Variable::Diesel { prosumer: i, device: d, t });
                rep.push_range(i, F::DieselBox, Some(t), format!("de{d}"), de.p_min[t], v, de.p_max[t]);
                rep.push_range(
                    i,
                    F::DieselRamp,
                    Some(t),
                    format!("de{d}"),
                    dt * de.ramp_min[t],
                    v - prev,
                    dt * de.ramp_max[t],
                );
                prev = v;
            }
        }
        for t in 0..n_t {
            let po = at(Variable::NetOutput { prosumer: i, t });
            rep.push_eq(i, F::NetOutputDevices, Some(t), String::new(), po, net_output(x, scenario, index, i, t));
            let gs = at(Variable::GridSell { prosumer: i, t });
            let gb = at(Variable::GridBuy { prosumer: i, t });
            rep.push_range(i, F::GridNonnegative, Some(t), "sell".into(), 0.0, gs, f64::INFINITY);
            rep.push_range(i, F::GridNonnegative, Some(t), "buy".into(), 0.0, gb, f64::INFINITY);
            let mut exchange = gs - gb;
            for j in (0..n_p).filter(|&j| j != i) {
                let ps = at(Variable::PeerSell { prosumer: i, peer: j, t });
                let pb = at(Variable::PeerBuy { prosumer: i, peer: j, t });
                exchange += ps - pb;
                rep.push_range(i, F::TradeNonnegative, Some(t), format!("sell{j}"), 0.0, ps, f64::INFINITY);
                rep.push_range(i, F::TradeNonnegative, Some(t), format!("buy{j}"), 0.0, pb, f64::INFINITY);
                let mirror = at(Variable::PeerSell { prosumer: j, peer: i, t });
                rep.push_eq(i, F::TradeReciprocity, Some(t), format!("peer{j}"), pb, mirror);
            }
            rep.push_eq(i, F::NetOutputTrades, Some(t), String::new(), po, exchange);
            for l in scenario.topology.lines_of(i) {
                let flow: f64 = scenario
                    .topology
                    .prosumers_on_line(l)
                    .map(|j| at(Variable::NetOutput { prosumer: j, t }))
                    .sum();
                let line = scenario.topology.lines[l];
                rep.push_range(i, F::LineFlow, Some(t), format!("line{l}"), line.c_min, flow, line.c_max);
            }
        }
    }
    rep
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::fixtures::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn mixed() -> (CommunityScenario, DecisionIndex) {
        let mut sc = bare(3, 4);
        sc.prosumers[0].flexible_loads.push(flexible_load(4, 12.0));
        sc.prosumers[0].storages.push(storage());
        sc.prosumers[1].diesels.push(diesel(4));
        sc.prosumers[1].diesels[0].lambda1 = 0.03;
        sc.prosumers[2].flexible_loads.push(flexible_load(4, 8.0));
        sc.prosumers[2].flexible_loads[0].ref_profile = vec![1.0, 2.0, 3.0, 2.0];
        sc.topology.distance = vec![vec![0.0, 1.0, 2.0], vec![1.0, 0.0, 3.0], vec![2.0, 3.0, 0.0]];
        sc.stage1_trade_price = 0.07;
        let idx = DecisionIndex::new(&sc).unwrap();
        (sc, idx)
    }

    fn point(len: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(-20.0..20.0f64, len)
    }

    #[test]
    fn net_output_substitution() {
        let mut sc = bare(1, 1);
        let zero = DecisionIndex::new(&sc).unwrap();
        assert_eq!(net_output(&vec![0.0; zero.total_len()], &sc, &zero, 0, 0), 0.0);

        sc.prosumers[0].nondispatchable_gen = vec![5.0];
        sc.prosumers[0].inflexible_load = vec![3.0];
        sc.prosumers[0].flexible_loads.push(flexible_load(1, 0.0));
        sc.prosumers[0].storages.push(storage());
        let idx = DecisionIndex::new(&sc).unwrap();
        let mut x = vec![0.0; idx.total_len()];
        x[idx.locate(Variable::FlexibleLoad { prosumer: 0, device: 0, t: 0 })] = 1.0;
        x[idx.locate(Variable::Charge { prosumer: 0, device: 0, t: 0 })] = 2.0;
        assert_eq!(net_output(&x, &sc, &idx, 0, 0), 3.0);
    }

    #[test]
    fn convenience_at_zero() {
        let mut sc = bare(1, 12);
        sc.prosumers[0].flexible_loads.push(flexible_load(12, 40.0));
        let idx = DecisionIndex::new(&sc).unwrap();
        let f = objective(&vec![0.0; idx.total_len()], &sc, &idx);
        assert!((f + 0.4).abs() < 1e-15, "{f}");
    }

    #[test]
    fn diesel_linear_cost() {
        let mut sc = bare(1, 3);
        sc.prosumers[0].diesels.push(diesel(3));
        let idx = DecisionIndex::new(&sc).unwrap();
        let mut x = vec![0.0; idx.total_len()];
        let r = idx.locate(Variable::Diesel { prosumer: 0, device: 0, t: 1 });
        x[r] = 1.0;
        assert_eq!(prosumer_cost(&x, &sc, &idx, 0).om, 0.2214);
        assert_eq!(gradient(&x, &sc, &idx)[r], 0.2214);
    }

    #[test]
    fn residuals_report_the_broken_row() {
        let mut sc = bare(1, 12);
        sc.prosumers[0].flexible_loads.push(flexible_load(12, 40.0));
        sc.prosumers[0].storages.push(storage());
        let idx = DecisionIndex::new(&sc).unwrap();
        let mut x = vec![0.0; idx.total_len()];
        let rep = constraint_residuals(&x, &sc, &idx);
        assert_eq!(rep.max_by_family(0, ConstraintFamily::FlexibleEnergy), 40.0);

        x[idx.locate(Variable::Charge { prosumer: 0, device: 0, t: 5 })] = 12.0;
        let rep = constraint_residuals(&x, &sc, &idx);
        let row = rep
            .entries
            .iter()
            .find(|e| e.family == ConstraintFamily::StorageBox && e.t == Some(5) && e.detail == "ess0.charge")
            .unwrap();
        assert_eq!(row.magnitude(), 2.0);
    }

    #[test]
    fn finite_differences_match_gradient() {
        let (sc, idx) = mixed();
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let x: Vec<f64> = (0..idx.total_len()).map(|_| rng.gen_range(-10.0..10.0)).collect();
            let g = gradient(&x, &sc, &idx);
            let h = 1e-5;
            for r in 0..x.len() {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[r] += h;
                xm[r] -= h;
                let fd = (objective(&xp, &sc, &idx) - objective(&xm, &sc, &idx)) / (2.0 * h);
                assert!((fd - g[r]).abs() <= 1e-6 * g[r].abs().max(1.0), "offset {r}: {fd} vs {}", g[r]);
            }
        }
    }

    proptest! {
        #[test]
        fn gradient_entries_are_separable(x in point(mixed().1.total_len()), s in 0usize..100, bump in -5.0..5.0f64) {
            let (sc, idx) = mixed();
            let s = s % x.len();
            let g = gradient(&x, &sc, &idx);
            let mut y = x.clone();
            y[s] += bump;
            let gy = gradient(&y, &sc, &idx);
            for r in (0..x.len()).filter(|&r| r != s) {
                prop_assert_eq!(g[r], gy[r]);
            }
        }

        #[test]
        fn separable_form_matches_direct_evaluation(x in point(mixed().1.total_len())) {
            let (sc, idx) = mixed();
            let f = separable_objective(&sc, &idx);
            let direct = objective(&x, &sc, &idx);
            prop_assert!((f.value(&x) - direct).abs() <= 1e-9 * direct.abs().max(1.0));
            let g = gradient(&x, &sc, &idx);
            for (a, b) in f.gradient(&x).iter().zip(&g) {
                prop_assert!((a - b).abs() <= 1e-12);
            }
        }

        #[test]
        fn matched_trades_cancel(x in point(mixed().1.total_len()), base in 0.05..0.3f64) {
            let (sc, idx) = mixed();
            let mut x = x;
            for t in 0..idx.num_steps() {
                for i in 0..3 {
                    for j in (0..3).filter(|&j| j != i) {
                        x[idx.locate(Variable::PeerBuy { prosumer: i, peer: j, t })] =
                            x[idx.locate(Variable::PeerSell { prosumer: j, peer: i, t })];
                    }
                }
            }
            let total: f64 = (0..3)
                .map(|i| {
                    prosumer_cost_at_price(&x, &sc, &idx, i, |j, t| base + 0.01 * (i + j) as f64 + 0.001 * t as f64).trade
                })
                .sum();
            prop_assert!(total.abs() <= 1e-12, "{}", total);
        }
    }
}
