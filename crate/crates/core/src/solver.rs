//! Inner-outer decentralized solver: gradient steps on owned variables,
//! then rounds of averaged projections realized by neighbor messages.

use std::fmt;

use crate::error::{Error, Result};
use crate::projection::{Projector, DEFAULT_TOLERANCE};
use crate::problem::SplitProblem;
use crate::scenario::CommunityScenario;

/// Fixed message overhead (sender, recipient, round tag), bytes.
pub const MESSAGE_HEADER_BYTES: usize = 24;
/// One `(offset, value)` payload entry, bytes.
pub const MESSAGE_ENTRY_BYTES: usize = 16;
const DIVERGENCE_LIMIT: f64 = 1e9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum InnerSchedule {
    Constant(usize),
    /// `n0 + ceil(c * ln(k + 2))` rounds at outer step `k`.
    Logarithmic { n0: usize, c: f64 },
}

impl InnerSchedule {
    pub fn rounds(&self, k: usize) -> usize {
        match *self {
            InnerSchedule::Constant(n) => n,
            InnerSchedule::Logarithmic { n0, c } => n0 + (c * ((k + 2) as f64).ln()).ceil() as usize,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SolverConfig {
    /// Step is `1 / lipschitz`.
    pub lipschitz: f64,
    pub inner: InnerSchedule,
    pub n_outer: usize,
    /// Stop once `max |X[k+1] - X[k]|` falls to this.
    pub outer_tol: Option<f64>,
    pub projection_tol: f64,
    /// Threads used for the per-agent projections; results never depend on it.
    pub workers: usize,
    pub record_messages: bool,
    pub initial: Option<Vec<f64>>,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            lipschitz: 1.0,
            inner: InnerSchedule::Constant(100),
            n_outer: 100,
            outer_tol: None,
            projection_tol: DEFAULT_TOLERANCE,
            workers: 1,
            record_messages: false,
            initial: None,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if !(self.lipschitz.is_finite() && self.lipschitz > 0.0) {
            return Err(Error::Config(format!("learning-rate constant L must be positive, got {}", self.lipschitz)));
        }
        match self.inner {
            InnerSchedule::Constant(0) => return Err(Error::Config("inner rounds must be at least 1".into())),
            InnerSchedule::Logarithmic { n0, c } if n0 == 0 || !(c >= 0.0) => {
                return Err(Error::Config("logarithmic schedule needs n0 >= 1 and c >= 0".into()))
            }
            _ => {}
        }
        if self.n_outer == 0 {
            return Err(Error::Config("outer iterations must be at least 1".into()));
        }
        if !(self.projection_tol > 0.0) {
            return Err(Error::Config("projection tolerance must be positive".into()));
        }
        if let Some(x0) = &self.initial {
            if x0.len() != dim {
                return Err(Error::Config(format!("initial point has {} entries, expected {dim}", x0.len())));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    PostGradient,
    PostProjection,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Phase::PostGradient => "gradient",
            Phase::PostProjection => "projection",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RoundTag {
    pub outer: usize,
    pub inner: usize,
    pub phase: Phase,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Message {
    pub from: usize,
    pub to: usize,
    pub tag: RoundTag,
    pub payload: Vec<(usize, f64)>,
}

impl Message {
    pub fn bytes(&self) -> usize {
        MESSAGE_HEADER_BYTES + MESSAGE_ENTRY_BYTES * self.payload.len()
    }

    /// One line of the message log.
    pub fn log_line(&self) -> String {
        let entries: Vec<String> = self.payload.iter().map(|(r, v)| format!("{r}:{v:e}")).collect();
        format!(
            "{} {} {} {} {} {}",
            self.tag.outer,
            self.tag.inner,
            self.tag.phase,
            self.from,
            self.to,
            entries.join(",")
        )
    }
}

/// What one prosumer holds: its set, and values for every offset in its
/// support or owned by it.
#[derive(Debug, Clone)]
pub struct AgentState {
    pub id: usize,
    offsets: Vec<usize>,
    values: Vec<f64>,
    owned: Vec<bool>,
    support_pos: Vec<usize>,
    /// Per view entry, the neighbor set of that offset.
    neighbors: Vec<Vec<usize>>,
    recv_start: Vec<usize>,
    recv: Vec<f64>,
    projected: Vec<f64>,
    projector: Projector,
}

impl AgentState {
    fn new(problem: &SplitProblem, id: usize, tol: f64, x0: &[f64]) -> Self {
        let set = &problem.sets[id];
        let mut offsets: Vec<usize> = set.support.clone();
        offsets.extend((0..problem.dim()).filter(|&r| problem.owner[r] == id));
        offsets.sort_unstable();
        offsets.dedup();
        let support_pos = set
            .support
            .iter()
            .map(|r| offsets.binary_search(r).expect("support inside view"))
            .collect();
        let neighbors: Vec<Vec<usize>> = offsets.iter().map(|&r| problem.neighbors[r].clone()).collect();
        let mut recv_start = Vec::with_capacity(offsets.len() + 1);
        let mut acc = 0;
        for n in &neighbors {
            recv_start.push(acc);
            acc += n.len();
        }
        recv_start.push(acc);
        AgentState {
            id,
            values: offsets.iter().map(|&r| x0[r]).collect(),
            owned: offsets.iter().map(|&r| problem.owner[r] == id).collect(),
            projected: vec![0.0; offsets.len()],
            offsets,
            support_pos,
            neighbors,
            recv_start,
            recv: vec![0.0; acc],
            projector: Projector::new(set, tol),
        }
    }

    /// Global offsets this agent keeps a value for, ascending.
    pub fn view_offsets(&self) -> &[usize] {
        &self.offsets
    }

    pub fn view_values(&self) -> &[f64] {
        &self.values
    }

    pub fn value(&self, r: usize) -> Option<f64> {
        self.offsets.binary_search(&r).ok().map(|p| self.values[p])
    }

    pub fn neighbor_set(&self, r: usize) -> Option<&[usize]> {
        self.offsets.binary_search(&r).ok().map(|p| self.neighbors[p].as_slice())
    }

    fn gradient_step(&mut self, problem: &SplitProblem, step: f64) {
        for p in 0..self.offsets.len() {
            if self.owned[p] {
                let r = self.offsets[p];
                self.values[p] -= step * problem.objective.partial(r, self.values[p]);
            }
        }
    }

    fn project(&mut self) -> Result<()> {
        let local: Vec<f64> = self.support_pos.iter().map(|&p| self.values[p]).collect();
        let res = self.projector.project_local(&local)?;
        self.projected.copy_from_slice(&self.values);
        for (&p, v) in self.support_pos.iter().zip(res.point) {
            self.projected[p] = v;
        }
        Ok(())
    }

    /// Messages carrying `source` values of every shared entry, one per
    /// recipient, ascending.
    fn outbox(&self, num_agents: usize, tag: RoundTag, only_owned: bool, source: &[f64]) -> Vec<Message> {
        let mut payloads: Vec<Vec<(usize, f64)>> = vec![Vec::new(); num_agents];
        for p in 0..self.offsets.len() {
            if only_owned && !self.owned[p] {
                continue;
            }
            for &j in &self.neighbors[p] {
                if j != self.id {
                    payloads[j].push((self.offsets[p], source[p]));
                }
            }
        }
        payloads
            .into_iter()
            .enumerate()
            .filter(|(_, pl)| !pl.is_empty())
            .map(|(to, payload)| Message {
                from: self.id,
                to,
                tag,
                payload,
            })
            .collect()
    }

    fn slot(&self, p: usize, from: usize) -> usize {
        let k = self.neighbors[p]
            .iter()
            .position(|&j| j == from)
            .expect("sender in neighbor set");
        self.recv_start[p] + k
    }

    fn receive(&mut self, msg: &Message) {
        for &(r, v) in &msg.payload {
            let p = self.offsets.binary_search(&r).expect("payload offset in view");
            match msg.tag.phase {
                Phase::PostGradient => self.values[p] = v,
                Phase::PostProjection => {
                    let s = self.slot(p, msg.from);
                    self.recv[s] = v;
                }
            }
        }
    }

    /// Averages every view entry over all agents, in ascending agent order;
    /// agents outside the neighbor set contribute the unchanged value.
    fn average(&mut self, num_agents: usize) {
        let inv = num_agents as f64;
        for p in 0..self.offsets.len() {
            let own = self.slot(p, self.id);
            self.recv[own] = self.projected[p];
            let w = self.values[p];
            let members = &self.neighbors[p];
            let base = self.recv_start[p];
            let mut next = 0;
            let mut sum = 0.0;
            for a in 0..num_agents {
                if next < members.len() && members[next] == a {
                    sum += self.recv[base + next];
                    next += 1;
                } else {
                    sum += w;
                }
            }
            self.values[p] = sum / inv;
        }
    }
}

/// Counts and audits every delivery.
#[derive(Debug, Clone, Default)]
pub struct Bus {
    pub messages: u64,
    pub bytes: u64,
    pub log: Option<Vec<Message>>,
}

impl Bus {
    fn check(&self, problem: &SplitProblem, msg: &Message) -> Result<()> {
        for &(r, _) in &msg.payload {
            let n = &problem.neighbors[r];
            if n.binary_search(&msg.to).is_err() || n.binary_search(&msg.from).is_err() {
                return Err(Error::Locality {
                    from: msg.from,
                    to: msg.to,
                    offset: r,
                });
            }
        }
        Ok(())
    }

    fn deliver(&mut self, problem: &SplitProblem, msg: Message, agents: &mut [AgentState]) -> Result<()> {
        self.check(problem, &msg)?;
        self.messages += 1;
        self.bytes += msg.bytes() as u64;
        agents[msg.to].receive(&msg);
        if let Some(log) = &mut self.log {
            log.push(msg);
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct RoundStats {
    pub messages: u64,
    pub bytes: u64,
}

/// Synchronous message-passing simulation of all agents.
#[derive(Debug, Clone)]
pub struct Simulation<'a> {
    problem: &'a SplitProblem,
    step: f64,
    workers: usize,
    agents: Vec<AgentState>,
    bus: Bus,
    outer: usize,
    inner: usize,
}

impl<'a> Simulation<'a> {
    pub fn new(problem: &'a SplitProblem, config: &SolverConfig) -> Result<Self> {
        config.validate(problem.dim())?;
        let x0 = config.initial.clone().unwrap_or_else(|| vec![0.0; problem.dim()]);
        let agents = (0..problem.num_agents)
            .map(|i| AgentState::new(problem, i, config.projection_tol, &x0))
            .collect();
        Ok(Simulation {
            problem,
            step: 1.0 / config.lipschitz,
            workers: config.workers.max(1),
            agents,
            bus: Bus {
                log: config.record_messages.then(Vec::new),
                ..Bus::default()
            },
            outer: 0,
            inner: 0,
        })
    }

    pub fn agents(&self) -> &[AgentState] {
        &self.agents
    }

    pub fn bus(&self) -> &Bus {
        &self.bus
    }

    /// The global vector, read from each offset's owner.
    pub fn state(&self) -> Vec<f64> {
        let mut x = vec![0.0; self.problem.dim()];
        for a in &self.agents {
            for (p, &r) in a.offsets.iter().enumerate() {
                if a.owned[p] {
                    x[r] = a.values[p];
                }
            }
        }
        x
    }

    fn stats_since(&self, m: u64, b: u64) -> RoundStats {
        RoundStats {
            messages: self.bus.messages - m,
            bytes: self.bus.bytes - b,
        }
    }

    fn deliver_all(&mut self, outboxes: Vec<Vec<Message>>) -> Result<()> {
        for msg in outboxes.into_iter().flatten() {
            self.bus.deliver(self.problem, msg, &mut self.agents)?;
        }
        Ok(())
    }

    /// Every agent steps its owned variables along the negative gradient and
    /// shares the coupled ones.
    pub fn gradient_round(&mut self) -> Result<RoundStats> {
        let (m, b) = (self.bus.messages, self.bus.bytes);
        self.outer += 1;
        self.inner = 0;
        let tag = RoundTag {
            outer: self.outer,
            inner: 0,
            phase: Phase::PostGradient,
        };
        let n = self.problem.num_agents;
        let mut outboxes = Vec::with_capacity(n);
        for a in &mut self.agents {
            a.gradient_step(self.problem, self.step);
            outboxes.push(a.outbox(n, tag, true, &a.values));
        }
        self.deliver_all(outboxes)?;
        Ok(self.stats_since(m, b))
    }

    /// One averaged-projection round.
    pub fn inner_round(&mut self) -> Result<RoundStats> {
        let (m, b) = (self.bus.messages, self.bus.bytes);
        self.inner += 1;
        let (outer, inner) = (self.outer, self.inner);
        let wrap = |agent: usize, e: Error| Error::Round {
            agent,
            outer,
            inner,
            source: Box::new(e),
        };
        if self.workers <= 1 || self.agents.len() <= 1 {
            for a in &mut self.agents {
                a.project().map_err(|e| wrap(a.id, e))?;
            }
        } else {
            let chunk = self.agents.len().div_ceil(self.workers);
            let results: Vec<Result<()>> = std::thread::scope(|s| {
                let handles: Vec<_> = self
                    .agents
                    .chunks_mut(chunk)
                    .map(|group| {
                        s.spawn(move || {
                            for a in group {
                                a.project().map_err(|e| wrap(a.id, e))?;
                            }
                            Ok(())
                        })
                    })
                    .collect();
                handles.into_iter().map(|h| h.join().expect("projection worker")).collect()
            });
            results.into_iter().collect::<Result<Vec<()>>>()?;
        }
        let tag = RoundTag {
            outer,
            inner,
            phase: Phase::PostProjection,
        };
        let n = self.problem.num_agents;
        let outboxes: Vec<Vec<Message>> = self
            .agents
            .iter()
            .map(|a| a.outbox(n, tag, false, &a.projected))
            .collect();
        self.deliver_all(outboxes)?;
        for a in &mut self.agents {
            a.average(n);
        }
        Ok(self.stats_since(m, b))
    }
}

/// The same iteration computed on the global vector, for equivalence checks.
#[derive(Debug, Clone)]
pub struct CentralReplay<'a> {
    problem: &'a SplitProblem,
    step: f64,
    projectors: Vec<Projector>,
    x: Vec<f64>,
}

impl<'a> CentralReplay<'a> {
    pub fn new(problem: &'a SplitProblem, config: &SolverConfig) -> Result<Self> {
        config.validate(problem.dim())?;
        Ok(CentralReplay {
            problem,
            step: 1.0 / config.lipschitz,
            projectors: problem
                .sets
                .iter()
                .map(|s| Projector::new(s, config.projection_tol))
                .collect(),
            x: config.initial.clone().unwrap_or_else(|| vec![0.0; problem.dim()]),
        })
    }

    pub fn state(&self) -> &[f64] {
        &self.x
    }

    pub fn gradient_step(&mut self) {
        for r in 0..self.x.len() {
            self.x[r] -= self.step * self.problem.objective.partial(r, self.x[r]);
        }
    }

    /// `w <- (1/N) sum_i P_i(w)`.
    pub fn inner_step(&mut self) -> Result<()> {
        let mut projections = Vec::with_capacity(self.projectors.len());
        for (set, proj) in self.problem.sets.iter().zip(&mut self.projectors) {
            let local: Vec<f64> = set.support.iter().map(|&r| self.x[r]).collect();
            let mut full = self.x.clone();
            proj.project_local(&local)?.scatter(&set.support, &mut full);
            projections.push(full);
        }
        let n = projections.len() as f64;
        for r in 0..self.x.len() {
            let mut sum = 0.0;
            for p in &projections {
                sum += p[r];
            }
            self.x[r] = sum / n;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub k: usize,
    pub objective: f64,
    /// `|X - X*|^2 / N_x` when a reference is known.
    pub mse_vs_ref: Option<f64>,
    /// `(f(X) - f*) / |f*|` when a reference is known.
    pub objective_gap: Option<f64>,
    pub max_violation: f64,
    pub inner_residual_last: Option<f64>,
    pub messages: u64,
    pub bytes: u64,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ConvergenceTrace {
    /// Row `k` describes `X[k]`; row 0 is the starting point.
    pub rows: Vec<TraceRow>,
    /// `|w[d+1] - w[d]|` for every inner round of outer step `k`.
    pub inner_residuals: Vec<Vec<f64>>,
    pub reference_objective: Option<f64>,
}

impl ConvergenceTrace {
    pub fn last(&self) -> Option<&TraceRow> {
        self.rows.last()
    }

    pub fn total_messages(&self) -> u64 {
        self.rows.iter().map(|r| r.messages).sum()
    }
}

fn trace_row(problem: &SplitProblem, k: usize, x: &[f64], reference: Option<(&[f64], f64)>) -> TraceRow {
    let objective = problem.objective.value(x);
    let (mse_vs_ref, objective_gap) = match reference {
        Some((xs, fs)) => {
            let d2: f64 = x.iter().zip(xs).map(|(a, b)| (a - b) * (a - b)).sum();
            (Some(d2 / x.len().max(1) as f64), Some((objective - fs) / fs.abs().max(f64::MIN_POSITIVE)))
        }
        None => (None, None),
    };
    TraceRow {
        k,
        objective,
        mse_vs_ref,
        objective_gap,
        max_violation: problem.max_violation(x),
        inner_residual_last: None,
        messages: 0,
        bytes: 0,
    }
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Outcome of [`run`].
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub solution: Vec<f64>,
    pub trace: ConvergenceTrace,
    pub messages: Vec<Message>,
}

/// Runs the full inner-outer iteration.
pub fn run(problem: &SplitProblem, config: &SolverConfig, reference: Option<&[f64]>) -> Result<RunOutput> {
    let mut sim = Simulation::new(problem, config)?;
    let reference = reference.map(|xs| (xs, problem.objective.value(xs)));
    let mut x = sim.state();
    let mut trace = ConvergenceTrace {
        rows: vec![trace_row(problem, 0, &x, reference)],
        inner_residuals: Vec::new(),
        reference_objective: reference.map(|r| r.1),
    };
    for k in 0..config.n_outer {
        let mut stats = sim.gradient_round()?;
        let mut w = sim.state();
        let mut residuals = Vec::with_capacity(config.inner.rounds(k));
        for _ in 0..config.inner.rounds(k) {
            let s = sim.inner_round()?;
            stats.messages += s.messages;
            stats.bytes += s.bytes;
            let next = sim.state();
            residuals.push(dist(&next, &w));
            w = next;
        }
        let norm = w.iter().fold(0.0_f64, |m, v| m.max(v.abs()));
        if !(norm <= DIVERGENCE_LIMIT) {
            return Err(Error::Diverged { outer: k + 1, norm });
        }
        let mut row = trace_row(problem, k + 1, &w, reference);
        row.inner_residual_last = residuals.last().copied();
        row.messages = stats.messages;
        row.bytes = stats.bytes;
        trace.rows.push(row);
        trace.inner_residuals.push(residuals);
        let change = w.iter().zip(&x).fold(0.0_f64, |m, (a, b)| m.max((a - b).abs()));
        x = w;
        if config.outer_tol.is_some_and(|tol| change <= tol) {
            break;
        }
    }
    let messages = sim.bus.log.take().unwrap_or_default();
    Ok(RunOutput {
        solution: x,
        trace,
        messages,
    })
}

/// Least-squares fit of an inner residual sequence to `c * eta^(d/2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EtaFit {
    /// Rate parameter, floored at 1/2 (a faster observed rate is still
    /// consistent with the bound at 1/2).
    pub eta: f64,
    pub eta_raw: f64,
    pub slope: f64,
    pub r_squared: f64,
    pub points: usize,
}

/// Residuals at or below this are treated as converged and not fitted.
pub const ETA_FLOOR: f64 = 1e-13;

pub fn estimate_eta(residuals: &[f64]) -> Result<EtaFit> {
    let pts: Vec<(f64, f64)> = residuals
        .iter()
        .enumerate()
        .take_while(|(_, &r)| r > ETA_FLOOR && r.is_finite())
        .map(|(d, &r)| (d as f64, r.ln()))
        .collect();
    if pts.len() < 5 {
        return Err(Error::Domain(format!(
            "converged too fast to fit: {} residuals above {ETA_FLOOR:e}",
            pts.len()
        )));
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = pts.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let r_squared = if syy > 0.0 { (sxy * sxy) / (sxx * syy) } else { 1.0 };
    let eta_raw = (2.0 * slope).exp();
    Ok(EtaFit {
        eta: eta_raw.max(0.5),
        eta_raw,
        slope,
        r_squared,
        points: pts.len(),
    })
}

/// Worst-case outer iterations, inner rounds per outer iteration, and their
/// product for reaching an `epsilon`-accurate averaged iterate.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IterationBound {
    pub k_bar: f64,
    pub n_bar: f64,
    pub n_max: f64,
}

pub fn iteration_bound(l: f64, r0: f64, epsilon: f64, eta: f64) -> Result<IterationBound> {
    if !(l > 0.0 && r0 > 0.0 && epsilon > 0.0) {
        return Err(Error::Domain("L, R0 and epsilon must be positive".into()));
    }
    if !(0.5..1.0).contains(&eta) {
        return Err(Error::Domain(format!("eta must lie in [0.5, 1), got {eta}")));
    }
    let e = epsilon;
    let se = e.sqrt();
    let s2 = std::f64::consts::SQRT_2;
    let k_bar = (2.0 * l * r0 / e).max(s2 * l * l * r0 * r0 / se).max(1.0);
    let lg = (1.0 / eta).ln();
    let terms = [
        2.0 * (8.0 * s2 * l * r0.powi(3) / (e * se) * (l.powi(5) * r0.powi(3) + l * l + 1.0)).ln(),
        2.0 * (8.0 * s2 * l.powi(6) * r0.powi(6) / (e * se)
            + 24.0 * l.powi(4) * r0.powi(4) / e
            + 8.0 * s2 * l * (l * l + 1.0) * r0.powi(3) / (e * se)
            + 4.0 * l * r0 * r0 / e
            + (8.0 * l * l + 4.0) * r0 / (e * l))
            .ln(),
        (8.0 * l * l * (2.0 * l * l + 1.0) * r0.powi(4) / e.powi(3)
            + 16.0 * l * (l * l + 1.0) * r0.powi(3) / (e * e)
            + 8.0 * (l * l + 1.0) * r0 * r0 / e)
            .ln(),
        (4.0 * l.powi(4) * (2.0 * l * l + 1.0) * r0.powi(6) / (e * e)
            + 8.0 * s2 * l * l * (l * l + 1.0) * r0.powi(4) / (e * se)
            + 8.0 * (l * l + 1.0) * r0 * r0 / e)
            .ln(),
    ];
    let n_bar = terms.iter().map(|t| t / lg).fold(1.0, f64::max);
    Ok(IterationBound {
        k_bar,
        n_bar,
        n_max: k_bar * n_bar,
    })
}

/// Learning-rate constant for a scenario: twice the largest curvature by
/// default, or the largest raw quadratic coefficient in case-study mode.
pub fn default_learning_rate(scenario: &CommunityScenario, case_study: bool) -> f64 {
    let coeffs = scenario.prosumers.iter().flat_map(|p| {
        p.diesels
            .iter()
            .map(|d| d.lambda1)
            .chain(p.flexible_loads.iter().map(|f| f.beta2))
    });
    let max = coeffs.fold(0.0_f64, f64::max);
    if max <= 0.0 {
        return 1.0;
    }
    if case_study {
        max
    } else {
        2.0 * (2.0 * max)
    }
}
