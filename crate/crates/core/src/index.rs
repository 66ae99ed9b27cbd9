//! Canonical flat layout of every power variable in the community.
//!
//! Prosumers are laid out in ascending order. Inside a prosumer block the
//! slots are: flexible loads, then charge/discharge per storage, diesels,
//! grid sell, grid buy, peer sells (ascending peer), peer buys, net output.
//! Every slot holds one entry per time step.

use std::ops::{Deref, DerefMut};

use crate::error::{Error, Result};
use crate::scenario::CommunityScenario;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Variable {
    FlexibleLoad { prosumer: usize, device: usize, t: usize },
    Charge { prosumer: usize, device: usize, t: usize },
    Discharge { prosumer: usize, device: usize, t: usize },
    Diesel { prosumer: usize, device: usize, t: usize },
    GridSell { prosumer: usize, t: usize },
    GridBuy { prosumer: usize, t: usize },
    PeerSell { prosumer: usize, peer: usize, t: usize },
    PeerBuy { prosumer: usize, peer: usize, t: usize },
    NetOutput { prosumer: usize, t: usize },
}

impl Variable {
    pub fn prosumer(&self) -> usize {
        match *self {
            Variable::FlexibleLoad { prosumer, .. }
            | Variable::Charge { prosumer, .. }
            | Variable::Discharge { prosumer, .. }
            | Variable::Diesel { prosumer, .. }
            | Variable::GridSell { prosumer, .. }
            | Variable::GridBuy { prosumer, .. }
            | Variable::PeerSell { prosumer, .. }
            | Variable::PeerBuy { prosumer, .. }
            | Variable::NetOutput { prosumer, .. } => prosumer,
        }
    }

    pub fn t(&self) -> usize {
        match *self {
            Variable::FlexibleLoad { t, .. }
            | Variable::Charge { t, .. }
            | Variable::Discharge { t, .. }
            | Variable::Diesel { t, .. }
            | Variable::GridSell { t, .. }
            | Variable::GridBuy { t, .. }
            | Variable::PeerSell { t, .. }
            | Variable::PeerBuy { t, .. }
            | Variable::NetOutput { t, .. } => t,
        }
    }

    /// Trades and net outputs appear in other prosumers' constraint sets.
    pub fn is_coupled(&self) -> bool {
        matches!(
            self,
            Variable::PeerSell { .. } | Variable::PeerBuy { .. } | Variable::NetOutput { .. }
        )
    }

    pub fn label(&self) -> String {
        match *self {
            Variable::FlexibleLoad { prosumer, device, t } => format!("P_FL[{prosumer},{device}]({t})"),
            Variable::Charge { prosumer, device, t } => format!("P_C[{prosumer},{device}]({t})"),
            Variable::Discharge { prosumer, device, t } => format!("P_D[{prosumer},{device}]({t})"),
            Variable::Diesel { prosumer, device, t } => format!("P_DE[{prosumer},{device}]({t})"),
            Variable::GridSell { prosumer, t } => format!("P_gs[{prosumer}]({t})"),
            Variable::GridBuy { prosumer, t } => format!("P_gb[{prosumer}]({t})"),
            Variable::PeerSell { prosumer, peer, t } => format!("P_ps[{prosumer},{peer}]({t})"),
            Variable::PeerBuy { prosumer, peer, t } => format!("P_pb[{prosumer},{peer}]({t})"),
            Variable::NetOutput { prosumer, t } => format!("P_o[{prosumer}]({t})"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    start: usize,
    n_fl: usize,
    n_ess: usize,
    n_de: usize,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DecisionIndex {
    num_steps: usize,
    num_prosumers: usize,
    blocks: Vec<Block>,
    total_len: usize,
}

impl DecisionIndex {
    pub fn new(scenario: &CommunityScenario) -> Result<Self> {
        scenario.validate()?;
        Ok(Self::from_counts(
            scenario.num_steps(),
            &scenario
                .prosumers
                .iter()
                .map(|p| (p.flexible_loads.len(), p.storages.len(), p.diesels.len()))
                .collect::<Vec<_>>(),
        ))
    }

    /// Layout for prosumers with the given `(flexible loads, storages,
    /// diesels)` counts.
    pub fn from_counts(num_steps: usize, devices: &[(usize, usize, usize)]) -> Self {
        let n_p = devices.len();
        let mut blocks = Vec::with_capacity(n_p);
        let mut start = 0;
        for &(n_fl, n_ess, n_de) in devices {
            blocks.push(Block {
                start,
                n_fl,
                n_ess,
                n_de,
            });
            start += Self::slots(n_fl, n_ess, n_de, n_p) * num_steps;
        }
        DecisionIndex {
            num_steps,
            num_prosumers: n_p,
            blocks,
            total_len: start,
        }
    }

    fn slots(n_fl: usize, n_ess: usize, n_de: usize, n_p: usize) -> usize {
        n_fl + 2 * n_ess + n_de + 2 + 2 * (n_p - 1) + 1
    }

    pub fn total_len(&self) -> usize {
        self.total_len
    }

    pub fn num_steps(&self) -> usize {
        self.num_steps
    }

    pub fn num_prosumers(&self) -> usize {
        self.num_prosumers
    }

    /// Half-open offset range of the prosumer's block.
    pub fn block(&self, prosumer: usize) -> std::ops::Range<usize> {
        let b = &self.blocks[prosumer];
        let end = self
            .blocks
            .get(prosumer + 1)
            .map_or(self.total_len, |n| n.start);
        b.start..end
    }

    fn peer_pos(prosumer: usize, peer: usize) -> usize {
        if peer < prosumer {
            peer
        } else {
            peer - 1
        }
    }

    /// Offset of a variable. Panics on descriptors outside the layout; use
    /// [`DecisionIndex::try_locate`] for untrusted input.
    pub fn locate(&self, var: Variable) -> usize {
        self.try_locate(var).expect("variable outside decision index")
    }

    pub fn try_locate(&self, var: Variable) -> Option<usize> {
        let i = var.prosumer();
        let t = var.t();
        let b = self.blocks.get(i)?;
        if t >= self.num_steps {
            return None;
        }
        let n_peers = self.num_prosumers - 1;
        let slot = match var {
            Variable::FlexibleLoad { device, .. } => (device < b.n_fl).then_some(device)?,
            Variable::Charge { device, .. } => (device < b.n_ess).then_some(b.n_fl + 2 * device)?,
            Variable::Discharge { device, .. } => {
                (device < b.n_ess).then_some(b.n_fl + 2 * device + 1)?
            }
            Variable::Diesel { device, .. } => {
                (device < b.n_de).then_some(b.n_fl + 2 * b.n_ess + device)?
            }
            Variable::GridSell { .. } => b.n_fl + 2 * b.n_ess + b.n_de,
            Variable::GridBuy { .. } => b.n_fl + 2 * b.n_ess + b.n_de + 1,
            Variable::PeerSell { peer, .. } => {
                if peer == i || peer >= self.num_prosumers {
                    return None;
                }
                b.n_fl + 2 * b.n_ess + b.n_de + 2 + Self::peer_pos(i, peer)
            }
            Variable::PeerBuy { peer, .. } => {
                if peer == i || peer >= self.num_prosumers {
                    return None;
                }
                b.n_fl + 2 * b.n_ess + b.n_de + 2 + n_peers + Self::peer_pos(i, peer)
            }
            Variable::NetOutput { .. } => b.n_fl + 2 * b.n_ess + b.n_de + 2 + 2 * n_peers,
        };
        Some(b.start + slot * self.num_steps + t)
    }

    pub fn describe(&self, offset: usize) -> Result<Variable> {
        if offset >= self.total_len {
            return Err(Error::Offset(offset));
        }
        let prosumer = self.owner(offset);
        let b = &self.blocks[prosumer];
        let local = offset - b.start;
        let slot = local / self.num_steps;
        let t = local % self.num_steps;
        let n_peers = self.num_prosumers - 1;
        let peer_of = |pos: usize| if pos < prosumer { pos } else { pos + 1 };
        let mut s = slot;
        if s < b.n_fl {
            return Ok(Variable::FlexibleLoad { prosumer, device: s, t });
        }
        s -= b.n_fl;
        if s < 2 * b.n_ess {
            let device = s / 2;
            return Ok(if s % 2 == 0 {
                Variable::Charge { prosumer, device, t }
            } else {
                Variable::Discharge { prosumer, device, t }
            });
        }
        s -= 2 * b.n_ess;
        if s < b.n_de {
            return Ok(Variable::Diesel { prosumer, device: s, t });
        }
        s -= b.n_de;
        Ok(match s {
            0 => Variable::GridSell { prosumer, t },
            1 => Variable::GridBuy { prosumer, t },
            s if s < 2 + n_peers => Variable::PeerSell {
                prosumer,
                peer: peer_of(s - 2),
                t,
            },
            s if s < 2 + 2 * n_peers => Variable::PeerBuy {
                prosumer,
                peer: peer_of(s - 2 - n_peers),
                t,
            },
            _ => Variable::NetOutput { prosumer, t },
        })
    }

    pub fn owner(&self, offset: usize) -> usize {
        match self.blocks.binary_search_by(|b| b.start.cmp(&offset)) {
            Ok(i) => i,
            Err(i) => i - 1,
        }
    }

    pub fn is_coupled(&self, offset: usize) -> bool {
        self.describe(offset).map(|v| v.is_coupled()).unwrap_or(false)
    }

    pub fn zeros(&self) -> DecisionVector {
        DecisionVector::zeros(self.total_len)
    }
}

/// Stacked values of every variable, in the layout of a [`DecisionIndex`]
/// (or of a price index for the clearing problem).
#[derive(Debug, Clone, PartialEq, Default)]
pub struct DecisionVector {
    pub values: Vec<f64>,
}

impl DecisionVector {
    pub fn zeros(len: usize) -> Self {
        DecisionVector {
            values: vec![0.0; len],
        }
    }

    pub fn norm2(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn dist2(&self, other: &[f64]) -> f64 {
        self.values
            .iter()
            .zip(other)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt()
    }
}

impl From<Vec<f64>> for DecisionVector {
    fn from(values: Vec<f64>) -> Self {
        DecisionVector { values }
    }
}

impl Deref for DecisionVector {
    type Target = [f64];

    fn deref(&self) -> &[f64] {
        &self.values
    }
}

impl DerefMut for DecisionVector {
    fn deref_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn closed_form_lengths() {
        assert_eq!(DecisionIndex::from_counts(12, &[(1, 1, 0)]).total_len(), 72);
        assert_eq!(
            DecisionIndex::from_counts(12, &[(1, 1, 0), (1, 1, 0)]).total_len(),
            192
        );
        let thirteen = [(1, 1, 0), (1, 1, 0), (1, 1, 0), (1, 1, 0), (1, 1, 1), (1, 1, 1)];
        assert_eq!(DecisionIndex::from_counts(12, &thirteen).total_len(), 1176);
    }

    #[test]
    fn peer_slots_skip_self() {
        let idx = DecisionIndex::from_counts(2, &[(0, 0, 0), (0, 0, 0), (0, 0, 0)]);
        let r = idx.locate(Variable::PeerSell { prosumer: 1, peer: 2, t: 1 });
        assert_eq!(
            idx.describe(r).unwrap(),
            Variable::PeerSell { prosumer: 1, peer: 2, t: 1 }
        );
        assert!(idx.try_locate(Variable::PeerBuy { prosumer: 1, peer: 1, t: 0 }).is_none());
        assert!(idx.is_coupled(r));
        assert!(!idx.is_coupled(idx.locate(Variable::GridBuy { prosumer: 2, t: 0 })));
        assert!(idx.describe(idx.total_len()).is_err());
    }

    #[test]
    fn bijection_over_all_offsets() {
        let idx = DecisionIndex::from_counts(3, &[(2, 1, 0), (0, 2, 1), (1, 0, 3)]);
        for r in 0..idx.total_len() {
            let v = idx.describe(r).unwrap();
            assert_eq!(idx.locate(v), r);
            assert_eq!(idx.owner(r), v.prosumer());
        }
    }
}
