//! Clearing prices for the trades fixed by a stage-1 schedule.
//!
//! Every ordered pair `(i, j, t)` with trade activity gets a price owned by
//! `i`. Sellers pull their price toward `lambda_max`, buyers toward
//! `lambda_min`; mirrored prices must agree, stay in the tariff band, and
//! leave every prosumer no worse off than without trading.

use std::collections::HashMap;
use std::fmt;

use crate::error::{Error, Result};
use crate::index::{DecisionIndex, Variable};
use crate::model::{prosumer_cost, ConstraintFamily, SeparableQuadratic};
use crate::polyhedron::{Polyhedron, PolyhedronBuilder, RowTag};
use crate::problem::SplitProblem;
use crate::scenario::CommunityScenario;
use crate::solver::{run, ConvergenceTrace, InnerSchedule, SolverConfig};

/// Trades at or below this (kW) do not create a price.
pub const ACTIVITY_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PricePair {
    pub i: usize,
    pub j: usize,
    pub t: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    None,
    Sell,
    Buy,
    Both,
}

impl Direction {
    fn of(sell: f64, buy: f64, tol: f64) -> Self {
        match (sell > tol, buy > tol) {
            (false, false) => Direction::None,
            (true, false) => Direction::Sell,
            (false, true) => Direction::Buy,
            (true, true) => Direction::Both,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Direction::None => "none",
            Direction::Sell => "sell",
            Direction::Buy => "buy",
            Direction::Both => "both",
        })
    }
}

/// Offsets of the price vector: active ordered pairs sorted by `(i, j, t)`.
#[derive(Debug, Clone, Default)]
pub struct PriceIndex {
    pairs: Vec<PricePair>,
    directions: Vec<Direction>,
    lookup: HashMap<PricePair, usize>,
}

impl PriceIndex {
    pub fn new(stage1: &[f64], index: &DecisionIndex, activity_tol: f64) -> Self {
        let n_p = index.num_prosumers();
        let trade = |i: usize, j: usize, t: usize| {
            let ps = stage1[index.locate(Variable::PeerSell { prosumer: i, peer: j, t })];
            let pb = stage1[index.locate(Variable::PeerBuy { prosumer: i, peer: j, t })];
            (ps, pb)
        };
        let mut pairs = Vec::new();
        let mut directions = Vec::new();
        for i in 0..n_p {
            for j in (0..n_p).filter(|&j| j != i) {
                for t in 0..index.num_steps() {
                    let (ps, pb) = trade(i, j, t);
                    let (ps_m, pb_m) = trade(j, i, t);
                    if [ps, pb, ps_m, pb_m].iter().any(|&v| v > activity_tol) {
                        pairs.push(PricePair { i, j, t });
                        directions.push(Direction::of(ps, pb, activity_tol));
                    }
                }
            }
        }
        let lookup = pairs.iter().enumerate().map(|(k, &p)| (p, k)).collect();
        PriceIndex {
            pairs,
            directions,
            lookup,
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> &[PricePair] {
        &self.pairs
    }

    pub fn direction(&self, k: usize) -> Direction {
        self.directions[k]
    }

    pub fn locate(&self, i: usize, j: usize, t: usize) -> Option<usize> {
        self.lookup.get(&PricePair { i, j, t }).copied()
    }

    pub fn mirror(&self, k: usize) -> usize {
        let p = self.pairs[k];
        self.locate(p.j, p.i, p.t).expect("activity is symmetric")
    }

    pub fn owner(&self, k: usize) -> usize {
        self.pairs[k].i
    }
}

/// Sum of `(lambda - lambda_max)^2` over active sales and
/// `(lambda - lambda_min)^2` over active purchases.
pub fn build_stage2_objective(scenario: &CommunityScenario, prices: &PriceIndex) -> SeparableQuadratic {
    let (lo, hi) = (scenario.tariffs.lambda_min, scenario.tariffs.lambda_max);
    let mut f = SeparableQuadratic::zeros(prices.len());
    for k in 0..prices.len() {
        let d = prices.direction(k);
        if matches!(d, Direction::Sell | Direction::Both) {
            f.quad[k] += 1.0;
            f.lin[k] -= 2.0 * hi;
            f.constant += hi * hi;
        }
        if matches!(d, Direction::Buy | Direction::Both) {
            f.quad[k] += 1.0;
            f.lin[k] -= 2.0 * lo;
            f.constant += lo * lo;
        }
    }
    f
}

pub fn midpoint(scenario: &CommunityScenario) -> f64 {
    0.5 * (scenario.tariffs.lambda_min + scenario.tariffs.lambda_max)
}

/// Right-hand side and coefficients of prosumer `i`'s benefit row:
/// `sum_k coef_k * lambda_k <= bound`.
pub fn benefit_row(
    scenario: &CommunityScenario,
    index: &DecisionIndex,
    prices: &PriceIndex,
    stage1: &[f64],
    baseline_cost: f64,
    i: usize,
) -> (Vec<(usize, f64)>, f64) {
    let mid = midpoint(scenario);
    let mut bound = baseline_cost - prosumer_cost(stage1, scenario, index, i).non_trade();
    let mut coefs = Vec::new();
    for j in (0..scenario.num_prosumers()).filter(|&j| j != i) {
        for t in 0..index.num_steps() {
            let ps = stage1[index.locate(Variable::PeerSell { prosumer: i, peer: j, t })];
            let pb = stage1[index.locate(Variable::PeerBuy { prosumer: i, peer: j, t })];
            match prices.locate(i, j, t) {
                Some(k) => coefs.push((k, pb - ps)),
                None => bound -= mid * (pb - ps),
            }
        }
    }
    (coefs, bound)
}

/// Prosumer `i`'s price set: mirror symmetry, the tariff band, and the
/// benefit row (omitted when `with_benefit` is false).
pub fn build_stage2_set(
    scenario: &CommunityScenario,
    index: &DecisionIndex,
    prices: &PriceIndex,
    stage1: &[f64],
    baseline_costs: &[f64],
    i: usize,
    with_benefit: bool,
) -> Polyhedron {
    let (lo, hi) = (scenario.tariffs.lambda_min, scenario.tariffs.lambda_max);
    let mut b = PolyhedronBuilder::new(i);
    let mut any = false;
    for k in (0..prices.len()).filter(|&k| prices.owner(k) == i) {
        any = true;
        let p = prices.pairs()[k];
        let detail = format!("{}->{}", p.i, p.j);
        b.eq(
            vec![(k, 1.0), (prices.mirror(k), -1.0)],
            0.0,
            RowTag::new(ConstraintFamily::PriceSymmetry, Some(p.t), detail.clone()),
        );
        b.range(vec![(k, 1.0)], lo, hi, RowTag::new(ConstraintFamily::PriceBounds, Some(p.t), detail));
    }
    if any && with_benefit {
        let (coefs, bound) = benefit_row(scenario, index, prices, stage1, baseline_costs[i], i);
        b.le(coefs, bound, RowTag::new(ConstraintFamily::Benefit, None, format!("prosumer{i}")));
    }
    b.finish()
}

/// Smallest value prosumer `i`'s benefit row can take inside the band,
/// minus its bound; positive means no admissible price exists.
fn benefit_shortfall(coefs: &[(usize, f64)], bound: f64, lo: f64, hi: f64) -> f64 {
    coefs
        .iter()
        .map(|&(_, c)| if c > 0.0 { c * lo } else { c * hi })
        .sum::<f64>()
        - bound
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PricingOptions {
    pub activity_tol: f64,
    /// Drop the benefit row of any prosumer for which it cannot hold.
    pub relax_benefit: bool,
}

impl Default for PricingOptions {
    fn default() -> Self {
        PricingOptions {
            activity_tol: ACTIVITY_TOL,
            relax_benefit: false,
        }
    }
}

/// The price problem assembled for the decentralized solver.
#[derive(Debug, Clone)]
pub struct PriceProblem {
    pub index: PriceIndex,
    pub problem: SplitProblem,
    /// Prosumers whose benefit row was dropped.
    pub relaxed: Vec<usize>,
}

pub fn build_price_problem(
    scenario: &CommunityScenario,
    index: &DecisionIndex,
    stage1: &[f64],
    baseline_costs: &[f64],
    options: PricingOptions,
) -> Result<PriceProblem> {
    let prices = PriceIndex::new(stage1, index, options.activity_tol);
    let (lo, hi) = (scenario.tariffs.lambda_min, scenario.tariffs.lambda_max);
    let mut relaxed = Vec::new();
    let mut sets = Vec::with_capacity(scenario.num_prosumers());
    for i in 0..scenario.num_prosumers() {
        let (coefs, bound) = benefit_row(scenario, index, &prices, stage1, baseline_costs[i], i);
        let short = benefit_shortfall(&coefs, bound, lo, hi);
        let mut keep = true;
        if short > 1e-9 {
            if options.relax_benefit {
                relaxed.push(i);
                keep = false;
            } else {
                return Err(Error::BenefitInfeasible {
                    prosumer: i,
                    slack: -short,
                });
            }
        }
        sets.push(build_stage2_set(scenario, index, &prices, stage1, baseline_costs, i, keep));
    }
    let owner = (0..prices.len()).map(|k| prices.owner(k)).collect();
    let objective = build_stage2_objective(scenario, &prices);
    Ok(PriceProblem {
        problem: SplitProblem::new(owner, sets, objective),
        index: prices,
        relaxed,
    })
}

/// Default configuration for the price problem: step from its curvature,
/// iteration counts as for stage 1.
pub fn default_price_config(problem: &SplitProblem) -> SolverConfig {
    let l = problem.objective.smoothness();
    SolverConfig {
        lipschitz: if l > 0.0 { l } else { 1.0 },
        inner: InnerSchedule::Constant(100),
        n_outer: 100,
        ..SolverConfig::default()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriceRow {
    pub t: usize,
    pub i: usize,
    pub j: usize,
    pub lambda: f64,
    pub direction: Direction,
}

#[derive(Debug, Clone)]
pub struct PriceSolution {
    pub index: PriceIndex,
    pub values: Vec<f64>,
    pub trace: ConvergenceTrace,
    pub relaxed: Vec<usize>,
    midpoint: f64,
    num_prosumers: usize,
    num_steps: usize,
}

impl PriceSolution {
    /// Price of `i`'s trade with `j` at `t`; inactive pairs get the midpoint.
    pub fn price(&self, i: usize, j: usize, t: usize) -> f64 {
        self.index.locate(i, j, t).map_or(self.midpoint, |k| self.values[k])
    }

    /// Every ordered pair, by `t`, then `i`, then `j`.
    pub fn matrix(&self) -> Vec<PriceRow> {
        let mut out = Vec::new();
        for t in 0..self.num_steps {
            for i in 0..self.num_prosumers {
                for j in (0..self.num_prosumers).filter(|&j| j != i) {
                    let k = self.index.locate(i, j, t);
                    out.push(PriceRow {
                        t,
                        i,
                        j,
                        lambda: k.map_or(self.midpoint, |k| self.values[k]),
                        direction: k.map_or(Direction::None, |k| self.index.direction(k)),
                    });
                }
            }
        }
        out
    }

    /// Prosumer `i`'s full cost at these prices.
    pub fn prosumer_cost(&self, scenario: &CommunityScenario, index: &DecisionIndex, stage1: &[f64], i: usize) -> f64 {
        crate::model::prosumer_cost_at_price(stage1, scenario, index, i, |j, t| self.price(i, j, t)).total()
    }
}

/// Runs the decentralized solver on the price problem.
pub fn solve_prices(
    scenario: &CommunityScenario,
    index: &DecisionIndex,
    stage1: &[f64],
    baseline_costs: &[f64],
    config: Option<&SolverConfig>,
    options: PricingOptions,
) -> Result<PriceSolution> {
    let pp = build_price_problem(scenario, index, stage1, baseline_costs, options)?;
    let (values, trace) = if pp.index.is_empty() {
        (Vec::new(), ConvergenceTrace::default())
    } else {
        let default = default_price_config(&pp.problem);
        let out = run(&pp.problem, config.unwrap_or(&default), None)?;
        (out.solution, out.trace)
    };
    Ok(PriceSolution {
        index: pp.index,
        values,
        trace,
        relaxed: pp.relaxed,
        midpoint: midpoint(scenario),
        num_prosumers: scenario.num_prosumers(),
        num_steps: index.num_steps(),
    })
}

/// Schedule without peer trading and each prosumer's cost under it.
#[derive(Debug, Clone)]
pub struct Baseline {
    pub x0: Vec<f64>,
    pub costs: Vec<f64>,
}

/// Solves the stage-1 problem with every peer trade pinned to zero. Line
/// limits still couple net outputs, so the prosumers are solved jointly.
#[cfg(feature = "oracle")]
pub fn solve_no_trade_baseline(scenario: &CommunityScenario, index: &DecisionIndex) -> Result<Baseline> {
    use crate::polyhedron::build_no_trade_set;
    let owner = (0..index.total_len()).map(|r| index.owner(r)).collect();
    let sets = (0..scenario.num_prosumers())
        .map(|i| build_no_trade_set(scenario, index, i))
        .collect();
    let problem = SplitProblem::new(owner, sets, crate::model::separable_objective(scenario, index));
    let sol = crate::oracle::solve_centralized(&problem)?;
    let mut x0 = sol.x_star;
    for (r, v) in x0.iter_mut().enumerate() {
        if matches!(index.describe(r)?, Variable::PeerSell { .. } | Variable::PeerBuy { .. }) {
            *v = 0.0;
        }
    }
    let costs = (0..scenario.num_prosumers())
        .map(|i| prosumer_cost(&x0, scenario, index, i).total())
        .collect();
    Ok(Baseline { x0, costs })
}
