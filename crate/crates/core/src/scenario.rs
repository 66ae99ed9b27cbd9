//! Static description of a prosumer community: devices, tariffs, network
//! topology and the scheduling time grid.
//!
//! Units throughout: power in kW, energy in kWh, prices in $/kWh, ramp rates
//! in kW/h, durations in hours.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeGrid {
    pub horizon_hours: f64,
    pub step_hours: f64,
}

impl TimeGrid {
    pub fn new(horizon_hours: f64, step_hours: f64) -> Result<Self> {
        let grid = TimeGrid {
            horizon_hours,
            step_hours,
        };
        grid.validate()?;
        Ok(grid)
    }

    pub fn num_steps(&self) -> usize {
        (self.horizon_hours / self.step_hours).round() as usize
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.step_hours > 0.0) || !self.step_hours.is_finite() {
            return Err(Error::scenario("time.step_hours", "must be positive"));
        }
        if !(self.horizon_hours > 0.0) || !self.horizon_hours.is_finite() {
            return Err(Error::scenario("time.horizon_hours", "must be positive"));
        }
        let ratio = self.horizon_hours / self.step_hours;
        if (ratio - ratio.round()).abs() > 1e-9 || ratio.round() < 1.0 {
            return Err(Error::scenario(
                "time",
                format!(
                    "horizon {} h is not an integer multiple of step {} h",
                    self.horizon_hours, self.step_hours
                ),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlexibleLoadSpec {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub energy_ref: f64,
    pub ref_profile: Vec<f64>,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StorageSpec {
    pub p_charge_max: f64,
    pub p_discharge_max: f64,
    pub eta_c: f64,
    pub eta_d: f64,
    pub soc_min: f64,
    pub soc_max: f64,
    pub w0: f64,
    pub w_nominal: f64,
    pub w_day_min: f64,
    pub w_day_max: f64,
    pub lambda_ess: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DieselSpec {
    pub p_min: Vec<f64>,
    pub p_max: Vec<f64>,
    pub ramp_min: Vec<f64>,
    pub ramp_max: Vec<f64>,
    /// Output at the step before the horizon starts.
    pub p_initial: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ProsumerSpec {
    pub id: usize,
    pub flexible_loads: Vec<FlexibleLoadSpec>,
    pub storages: Vec<StorageSpec>,
    pub diesels: Vec<DieselSpec>,
    pub inflexible_load: Vec<f64>,
    pub nondispatchable_gen: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Tariffs {
    pub lambda_gs: f64,
    pub lambda_gb: f64,
    pub lambda_min: f64,
    pub lambda_max: f64,
    pub lambda_o: f64,
    pub lambda_d: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Line {
    pub c_min: f64,
    pub c_max: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Topology {
    pub lines: Vec<Line>,
    /// `membership[l][i]` is true when the flow on line `l` is determined by
    /// the net output of prosumer `i`.
    pub membership: Vec<Vec<bool>>,
    /// Electrical distance in hops, symmetric with zero diagonal.
    pub distance: Vec<Vec<f64>>,
}

impl Topology {
    /// Topology with no lines and unit distance between every pair.
    pub fn unconstrained(num_prosumers: usize) -> Self {
        let distance = (0..num_prosumers)
            .map(|i| {
                (0..num_prosumers)
                    .map(|j| if i == j { 0.0 } else { 1.0 })
                    .collect()
            })
            .collect();
        Topology {
            lines: Vec::new(),
            membership: Vec::new(),
            distance,
        }
    }

    pub fn prosumers_on_line(&self, line: usize) -> impl Iterator<Item = usize> + '_ {
        self.membership[line]
            .iter()
            .enumerate()
            .filter_map(|(i, &m)| m.then_some(i))
    }

    pub fn lines_of(&self, prosumer: usize) -> impl Iterator<Item = usize> + '_ {
        self.membership
            .iter()
            .enumerate()
            .filter_map(move |(l, row)| row[prosumer].then_some(l))
    }

    /// Checks that any two lines sharing a prosumer have nested prosumer sets,
    /// which is what a radial feeder produces.
    pub fn check_radial(&self) -> Result<()> {
        let n_lines = self.lines.len();
        for a in 0..n_lines {
            for b in (a + 1)..n_lines {
                let shared = (0..self.distance.len())
                    .find(|&j| self.membership[a][j] && self.membership[b][j]);
                if let Some(j) = shared {
                    let a_in_b = (0..self.distance.len())
                        .all(|k| !self.membership[a][k] || self.membership[b][k]);
                    let b_in_a = (0..self.distance.len())
                        .all(|k| !self.membership[b][k] || self.membership[a][k]);
                    if !a_in_b && !b_in_a {
                        return Err(Error::Topology {
                            line_a: a,
                            line_b: b,
                            prosumer: j,
                        });
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CommunityScenario {
    pub time: TimeGrid,
    pub prosumers: Vec<ProsumerSpec>,
    pub tariffs: Tariffs,
    pub topology: Topology,
    /// Symmetric trade price used inside the stage-1 objective.
    pub stage1_trade_price: f64,
}

impl CommunityScenario {
    pub fn num_prosumers(&self) -> usize {
        self.prosumers.len()
    }

    pub fn num_steps(&self) -> usize {
        self.time.num_steps()
    }

    pub fn dt(&self) -> f64 {
        self.time.step_hours
    }

    pub fn validate(&self) -> Result<()> {
        self.time.validate()?;
        let n_p = self.prosumers.len();
        let t = self.num_steps();
        if n_p == 0 {
            return Err(Error::scenario("prosumers", "at least one prosumer is required"));
        }
        for (i, p) in self.prosumers.iter().enumerate() {
            let base = format!("prosumers[{i}]");
            if p.id != i {
                return Err(Error::scenario(
                    format!("{base}.id"),
                    format!("expected id {i}, found {}", p.id),
                ));
            }
            check_series(&format!("{base}.inflexible_load"), &p.inflexible_load, t, true)?;
            check_series(
                &format!("{base}.nondispatchable_gen"),
                &p.nondispatchable_gen,
                t,
                true,
            )?;
            for (m, fl) in p.flexible_loads.iter().enumerate() {
                let f = format!("{base}.flexible_loads[{m}]");
                check_series(&format!("{f}.p_min"), &fl.p_min, t, true)?;
                check_series(&format!("{f}.p_max"), &fl.p_max, t, true)?;
                check_series(&format!("{f}.ref_profile"), &fl.ref_profile, t, false)?;
                if let Some(k) = (0..t).find(|&k| fl.p_min[k] > fl.p_max[k]) {
                    return Err(Error::scenario(
                        format!("{f}.p_min[{k}]"),
                        "exceeds p_max",
                    ));
                }
                if fl.beta2 < 0.0 || !fl.beta2.is_finite() {
                    return Err(Error::scenario(format!("{f}.beta2"), "must be >= 0"));
                }
                finite(&format!("{f}.beta1"), fl.beta1)?;
                finite(&format!("{f}.energy_ref"), fl.energy_ref)?;
                let reachable: f64 = fl.p_max.iter().sum::<f64>() * self.dt();
                if fl.energy_ref > reachable + 1e-9 {
                    return Err(Error::scenario(
                        format!("{f}.energy_ref"),
                        format!("{} kWh exceeds the reachable {} kWh", fl.energy_ref, reachable),
                    ));
                }
            }
            for (q, s) in p.storages.iter().enumerate() {
                let f = format!("{base}.storages[{q}]");
                for (name, v) in [
                    ("p_charge_max", s.p_charge_max),
                    ("p_discharge_max", s.p_discharge_max),
                    ("w_nominal", s.w_nominal),
                ] {
                    if !(v >= 0.0) || !v.is_finite() {
                        return Err(Error::scenario(format!("{f}.{name}"), "must be >= 0"));
                    }
                }
                if !(s.w_nominal > 0.0) {
                    return Err(Error::scenario(format!("{f}.w_nominal"), "must be positive"));
                }
                for (name, v) in [("eta_c", s.eta_c), ("eta_d", s.eta_d)] {
                    if !(v > 0.0 && v <= 1.0) {
                        return Err(Error::scenario(format!("{f}.{name}"), "must lie in (0, 1]"));
                    }
                }
                if !(0.0 <= s.soc_min && s.soc_min < s.soc_max && s.soc_max <= 1.0) {
                    return Err(Error::scenario(
                        format!("{f}.soc_min"),
                        "require 0 <= soc_min < soc_max <= 1",
                    ));
                }
                let soc0 = s.w0 / s.w_nominal;
                if soc0 < s.soc_min - 1e-12 || soc0 > s.soc_max + 1e-12 {
                    return Err(Error::scenario(
                        format!("{f}.w0"),
                        "initial state of charge outside [soc_min, soc_max]",
                    ));
                }
                if s.w_day_min > s.w_day_max {
                    return Err(Error::scenario(format!("{f}.w_day_min"), "exceeds w_day_max"));
                }
                finite(&format!("{f}.lambda_ess"), s.lambda_ess)?;
            }
            for (d, de) in p.diesels.iter().enumerate() {
                let f = format!("{base}.diesels[{d}]");
                check_series(&format!("{f}.p_min"), &de.p_min, t, false)?;
                check_series(&format!("{f}.p_max"), &de.p_max, t, false)?;
                check_series(&format!("{f}.ramp_min"), &de.ramp_min, t, false)?;
                check_series(&format!("{f}.ramp_max"), &de.ramp_max, t, false)?;
                if let Some(k) = (0..t).find(|&k| de.p_min[k] > de.p_max[k]) {
                    return Err(Error::scenario(format!("{f}.p_min[{k}]"), "exceeds p_max"));
                }
                if let Some(k) = (0..t).find(|&k| de.ramp_min[k] > de.ramp_max[k]) {
                    return Err(Error::scenario(
                        format!("{f}.ramp_min[{k}]"),
                        "exceeds ramp_max",
                    ));
                }
                if de.lambda1 < 0.0 || !de.lambda1.is_finite() {
                    return Err(Error::scenario(format!("{f}.lambda1"), "must be >= 0"));
                }
                finite(&format!("{f}.lambda2"), de.lambda2)?;
                finite(&format!("{f}.p_initial"), de.p_initial)?;
            }
        }
        let tf = &self.tariffs;
        for (name, v) in [
            ("lambda_gs", tf.lambda_gs),
            ("lambda_gb", tf.lambda_gb),
            ("lambda_min", tf.lambda_min),
            ("lambda_max", tf.lambda_max),
            ("lambda_o", tf.lambda_o),
            ("lambda_d", tf.lambda_d),
        ] {
            finite(&format!("tariffs.{name}"), v)?;
        }
        if tf.lambda_gs > tf.lambda_gb {
            return Err(Error::scenario("tariffs.lambda_gs", "exceeds lambda_gb"));
        }
        if tf.lambda_min > tf.lambda_max {
            return Err(Error::scenario("tariffs.lambda_min", "exceeds lambda_max"));
        }
        finite("stage1_trade_price", self.stage1_trade_price)?;

        let topo = &self.topology;
        if topo.membership.len() != topo.lines.len() {
            return Err(Error::scenario(
                "topology.membership",
                format!(
                    "{} membership rows for {} lines",
                    topo.membership.len(),
                    topo.lines.len()
                ),
            ));
        }
        for (l, line) in topo.lines.iter().enumerate() {
            if line.c_min > line.c_max {
                return Err(Error::scenario(
                    format!("topology.lines[{l}].c_min"),
                    "exceeds c_max",
                ));
            }
            if topo.membership[l].len() != n_p {
                return Err(Error::scenario(
                    format!("topology.membership[{l}]"),
                    format!("expected {n_p} entries"),
                ));
            }
        }
        if topo.distance.len() != n_p || topo.distance.iter().any(|r| r.len() != n_p) {
            return Err(Error::scenario(
                "topology.distance",
                format!("must be a {n_p}x{n_p} matrix"),
            ));
        }
        for i in 0..n_p {
            if topo.distance[i][i] != 0.0 {
                return Err(Error::scenario(
                    format!("topology.distance[{i}][{i}]"),
                    "diagonal must be zero",
                ));
            }
            for j in 0..n_p {
                if topo.distance[i][j] != topo.distance[j][i] || topo.distance[i][j] < 0.0 {
                    return Err(Error::scenario(
                        format!("topology.distance[{i}][{j}]"),
                        "must be symmetric and nonnegative",
                    ));
                }
            }
        }
        topo.check_radial()
    }
}

fn finite(field: &str, v: f64) -> Result<()> {
    if v.is_finite() {
        Ok(())
    } else {
        Err(Error::scenario(field, "must be finite"))
    }
}

fn check_series(field: &str, s: &[f64], len: usize, nonneg: bool) -> Result<()> {
    if s.len() != len {
        return Err(Error::scenario(
            field,
            format!("series has {} entries, expected {len}", s.len()),
        ));
    }
    if let Some(k) = s.iter().position(|v| !v.is_finite()) {
        return Err(Error::scenario(format!("{field}[{k}]"), "must be finite"));
    }
    if nonneg {
        if let Some(k) = s.iter().position(|&v| v < 0.0) {
            return Err(Error::scenario(format!("{field}[{k}]"), "must be >= 0"));
        }
    }
    Ok(())
}

#[cfg(test)]
pub(crate) mod fixtures {
    use super::*;

    /// Prosumers without devices, zero load and generation, 1-hour steps.
    pub fn bare(num_prosumers: usize, num_steps: usize) -> CommunityScenario {
        CommunityScenario {
            time: TimeGrid::new(num_steps as f64, 1.0).unwrap(),
            prosumers: (0..num_prosumers)
                .map(|id| ProsumerSpec {
                    id,
                    flexible_loads: vec![],
                    storages: vec![],
                    diesels: vec![],
                    inflexible_load: vec![0.0; num_steps],
                    nondispatchable_gen: vec![0.0; num_steps],
                })
                .collect(),
            tariffs: Tariffs {
                lambda_gs: 0.1,
                lambda_gb: 0.23,
                lambda_min: 0.1,
                lambda_max: 0.23,
                lambda_o: 0.01,
                lambda_d: 0.001,
            },
            topology: Topology::unconstrained(num_prosumers),
            stage1_trade_price: 0.0,
        }
    }

    pub fn flexible_load(num_steps: usize, energy_ref: f64) -> FlexibleLoadSpec {
        FlexibleLoadSpec {
            p_min: vec![0.0; num_steps],
            p_max: vec![10.0; num_steps],
            energy_ref,
            ref_profile: vec![0.0; num_steps],
            beta1: 0.01,
            beta2: 0.01,
        }
    }

    pub fn storage() -> StorageSpec {
        StorageSpec {
            p_charge_max: 10.0,
            p_discharge_max: 10.0,
            eta_c: 0.95,
            eta_d: 0.95,
            soc_min: 0.15,
            soc_max: 0.85,
            w0: 25.0,
            w_nominal: 50.0,
            w_day_min: -5.0,
            w_day_max: 5.0,
            lambda_ess: 0.1,
        }
    }

    pub fn diesel(num_steps: usize) -> DieselSpec {
        DieselSpec {
            p_min: vec![0.0; num_steps],
            p_max: vec![10.0; num_steps],
            ramp_min: vec![-2.0; num_steps],
            ramp_max: vec![2.0; num_steps],
            p_initial: 0.0,
            lambda1: 0.0,
            lambda2: 0.2214,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::fixtures::*;
    use super::*;

    fn field_of(err: Error) -> String {
        match err {
            Error::Scenario { field, .. } => field,
            other => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn time_grid_requires_whole_steps() {
        assert_eq!(TimeGrid::new(24.0, 2.0).unwrap().num_steps(), 12);
        assert!(TimeGrid::new(24.0, 5.0).is_err());
        assert!(TimeGrid::new(24.0, 0.0).is_err());
    }

    #[test]
    fn valid_fixture_passes() {
        let mut sc = bare(2, 4);
        sc.prosumers[0].flexible_loads.push(flexible_load(4, 20.0));
        sc.prosumers[1].storages.push(storage());
        sc.prosumers[1].diesels.push(diesel(4));
        sc.validate().unwrap();
    }

    #[test]
    fn validation_names_the_field() {
        let mut sc = bare(2, 4);
        sc.prosumers[0].flexible_loads.push(flexible_load(4, 50.0));
        assert_eq!(field_of(sc.validate().unwrap_err()), "prosumers[0].flexible_loads[0].energy_ref");

        let mut sc = bare(2, 4);
        sc.prosumers[1].inflexible_load.pop();
        assert_eq!(field_of(sc.validate().unwrap_err()), "prosumers[1].inflexible_load");

        let mut sc = bare(1, 4);
        let mut s = storage();
        s.w0 = 45.0;
        sc.prosumers[0].storages.push(s);
        assert_eq!(field_of(sc.validate().unwrap_err()), "prosumers[0].storages[0].w0");

        let mut sc = bare(1, 4);
        sc.tariffs.lambda_gs = 0.3;
        assert_eq!(field_of(sc.validate().unwrap_err()), "tariffs.lambda_gs");

        let mut sc = bare(2, 4);
        sc.topology.distance[0][1] = 2.0;
        assert_eq!(field_of(sc.validate().unwrap_err()), "topology.distance[0][1]");
    }

    #[test]
    fn overlapping_lines_must_nest() {
        let mut sc = bare(3, 2);
        let line = Line { c_min: -1.0, c_max: 1.0 };
        sc.topology.lines = vec![line, line];
        sc.topology.membership = vec![vec![true, true, false], vec![false, true, true]];
        assert!(matches!(sc.validate(), Err(Error::Topology { .. })));
        sc.topology.membership[1] = vec![false, true, false];
        sc.validate().unwrap();
    }
}
