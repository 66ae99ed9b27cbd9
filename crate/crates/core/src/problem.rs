//! A separable quadratic split across agents, each holding one polyhedron.

use crate::error::{Error, Result};
use crate::index::{DecisionIndex, Variable};
use crate::model::{separable_objective, SeparableQuadratic};
use crate::polyhedron::{build_stage1_set, Polyhedron};
use crate::scenario::CommunityScenario;

/// `min objective(x)` over the intersection of `sets`, where agent `i` owns
/// `sets[i]` and the offsets with `owner[r] == i`.
#[derive(Debug, Clone)]
pub struct SplitProblem {
    pub num_agents: usize,
    pub owner: Vec<usize>,
    pub sets: Vec<Polyhedron>,
    pub objective: SeparableQuadratic,
    /// Per offset, the agents whose set touches it plus its owner, ascending.
    pub neighbors: Vec<Vec<usize>>,
}

impl SplitProblem {
    pub fn new(owner: Vec<usize>, sets: Vec<Polyhedron>, objective: SeparableQuadratic) -> Self {
        assert_eq!(owner.len(), objective.len(), "owner table and objective differ in length");
        let num_agents = sets.len();
        let mut neighbors: Vec<Vec<usize>> = owner.iter().map(|&o| vec![o]).collect();
        for (i, set) in sets.iter().enumerate() {
            for &r in &set.support {
                if !neighbors[r].contains(&i) {
                    neighbors[r].push(i);
                }
            }
        }
        for n in &mut neighbors {
            n.sort_unstable();
        }
        SplitProblem {
            num_agents,
            owner,
            sets,
            objective,
            neighbors,
        }
    }

    pub fn stage1(scenario: &CommunityScenario, index: &DecisionIndex) -> Result<Self> {
        scenario.topology.check_radial()?;
        let owner = (0..index.total_len()).map(|r| index.owner(r)).collect();
        let sets = (0..scenario.num_prosumers())
            .map(|i| build_stage1_set(scenario, index, i))
            .collect();
        Ok(SplitProblem::new(owner, sets, separable_objective(scenario, index)))
    }

    pub fn dim(&self) -> usize {
        self.owner.len()
    }

    /// Offsets whose update needs more than the owner's own projection.
    pub fn is_shared(&self, r: usize) -> bool {
        self.neighbors[r].len() > 1
    }

    /// Largest violation of any row of any set.
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        self.sets.iter().map(|s| s.max_violation(x)).fold(0.0, f64::max)
    }

    /// Agents that share at least one offset with agent `i`.
    pub fn peers_of(&self, i: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self
            .neighbors
            .iter()
            .filter(|n| n.contains(&i))
            .flatten()
            .copied()
            .filter(|&j| j != i)
            .collect();
        out.sort_unstable();
        out.dedup();
        out
    }
}

/// Neighbor sets of every stage-1 offset in closed form: trades touch their
/// two parties, a net output touches every prosumer sharing a line with its
/// owner, everything else only its owner.
pub fn neighbor_sets(scenario: &CommunityScenario, index: &DecisionIndex) -> Result<Vec<Vec<usize>>> {
    scenario.topology.check_radial()?;
    let topo = &scenario.topology;
    (0..index.total_len())
        .map(|r| {
            Ok(match index.describe(r)? {
                Variable::PeerSell { prosumer, peer, .. } | Variable::PeerBuy { prosumer, peer, .. } => {
                    let mut v = vec![prosumer, peer];
                    v.sort_unstable();
                    v
                }
                Variable::NetOutput { prosumer, .. } => {
                    let mut v = vec![prosumer];
                    for l in topo.lines_of(prosumer) {
                        v.extend(topo.prosumers_on_line(l));
                    }
                    v.sort_unstable();
                    v.dedup();
                    v
                }
                other => vec![other.prosumer()],
            })
        })
        .collect()
}

/// Offsets coupled to `r` through reciprocity or a shared line.
pub fn coupled_partners(scenario: &CommunityScenario, index: &DecisionIndex, r: usize) -> Result<Vec<usize>> {
    let topo = &scenario.topology;
    Ok(match index.describe(r)? {
        Variable::PeerSell { prosumer, peer, t } => {
            vec![index.locate(Variable::PeerBuy { prosumer: peer, peer: prosumer, t })]
        }
        Variable::PeerBuy { prosumer, peer, t } => {
            vec![index.locate(Variable::PeerSell { prosumer: peer, peer: prosumer, t })]
        }
        Variable::NetOutput { prosumer, t } => {
            let mut js: Vec<usize> = topo
                .lines_of(prosumer)
                .flat_map(|l| topo.prosumers_on_line(l).collect::<Vec<_>>())
                .filter(|&j| j != prosumer)
                .collect();
            js.sort_unstable();
            js.dedup();
            js.into_iter()
                .map(|j| index.locate(Variable::NetOutput { prosumer: j, t }))
                .collect()
        }
        _ => Vec::new(),
    })
}

/// Checks that every coupled pair shares one neighbor set.
pub fn check_neighbor_symmetry(
    scenario: &CommunityScenario,
    index: &DecisionIndex,
    table: &[Vec<usize>],
) -> Result<()> {
    for r in 0..index.total_len() {
        for rb in coupled_partners(scenario, index, r)? {
            if table[r] != table[rb] {
                return Err(Error::Domain(format!(
                    "neighbor sets differ: {} has {:?}, {} has {:?}",
                    index.describe(r)?.label(),
                    table[r],
                    index.describe(rb)?.label(),
                    table[rb]
                )));
            }
        }
    }
    Ok(())
}
