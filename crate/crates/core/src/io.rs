//! Scenario documents and result writers.
//!
//! A scenario is a TOML document (`schema_version = 1`). Any per-step series
//! may be a constant, an inline array, or the name of a column in the CSV
//! file named by the top-level `profiles` key (resolved relative to the
//! document). See `docs/formats.md` for every field and unit.

use std::collections::HashMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::index::{DecisionIndex, Variable};
use crate::scenario::{
    CommunityScenario, DieselSpec, FlexibleLoadSpec, Line, ProsumerSpec, StorageSpec, Tariffs,
    TimeGrid, Topology,
};

pub const SCHEMA_VERSION: u32 = 1;

/// Default line limits when a line omits them, kW.
pub const DEFAULT_LINE_LIMIT: f64 = 100.0;
/// Default distance fee, $/kWh per hop.
pub const DEFAULT_LAMBDA_D: f64 = 0.001;

pub const BUNDLED: &[(&str, &str, &str)] = &[(
    "ieee13_p2p",
    include_str!("../scenarios/ieee13_p2p.toml"),
    include_str!("../scenarios/ieee13_p2p_profiles.csv"),
)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum SeriesValue {
    Constant(f64),
    Inline(Vec<f64>),
    Column(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub name: Option<String>,
    #[serde(default)]
    pub stage1_trade_price: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profiles: Option<String>,
    pub time: TimeBlock,
    pub tariffs: TariffBlock,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub solver: Option<SolverDefaults>,
    pub prosumers: Vec<ProsumerBlock>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub topology: Option<TopologyBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeBlock {
    pub horizon_hours: f64,
    pub step_hours: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TariffBlock {
    pub lambda_gs: f64,
    pub lambda_gb: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_max: Option<f64>,
    pub lambda_o: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda_d: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct SolverDefaults {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub learning_rate_inv: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_inner: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_outer: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProsumerBlock {
    pub inflexible_load: SeriesValue,
    pub nondispatchable_gen: SeriesValue,
    #[serde(default)]
    pub flexible_loads: Vec<FlexibleLoadBlock>,
    #[serde(default)]
    pub storages: Vec<StorageBlock>,
    #[serde(default)]
    pub diesels: Vec<DieselBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FlexibleLoadBlock {
    pub p_min: SeriesValue,
    pub p_max: SeriesValue,
    pub energy_ref: f64,
    pub ref_profile: SeriesValue,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StorageBlock {
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

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DieselBlock {
    #[serde(default = "zero_series")]
    pub p_min: SeriesValue,
    #[serde(default = "ten_series")]
    pub p_max: SeriesValue,
    pub ramp_min: SeriesValue,
    pub ramp_max: SeriesValue,
    #[serde(default)]
    pub p_initial: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

fn zero_series() -> SeriesValue {
    SeriesValue::Constant(0.0)
}

fn ten_series() -> SeriesValue {
    SeriesValue::Constant(10.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopologyBlock {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub distance: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub lines: Vec<LineBlock>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LineBlock {
    #[serde(default = "neg_line_limit")]
    pub c_min: f64,
    #[serde(default = "line_limit")]
    pub c_max: f64,
    pub prosumers: Vec<usize>,
}

fn line_limit() -> f64 {
    DEFAULT_LINE_LIMIT
}

fn neg_line_limit() -> f64 {
    -DEFAULT_LINE_LIMIT
}

/// Named columns of a profile CSV.
#[derive(Debug, Clone, Default)]
pub struct Profiles {
    columns: HashMap<String, Vec<f64>>,
}

impl Profiles {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .trim(csv::Trim::All)
            .from_reader(text.as_bytes());
        let parse_err = |message: String| Error::Parse {
            path: origin.to_path_buf(),
            message,
        };
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| parse_err(e.to_string()))?
            .iter()
            .map(str::to_string)
            .collect();
        let mut columns: Vec<Vec<f64>> = vec![Vec::new(); headers.len()];
        for (line, rec) in reader.records().enumerate() {
            let rec = rec.map_err(|e| parse_err(e.to_string()))?;
            for (c, field) in rec.iter().enumerate() {
                let v: f64 = field.parse().map_err(|_| {
                    parse_err(format!("row {}: column `{}` is not a number: `{field}`", line + 1, headers[c]))
                })?;
                columns[c].push(v);
            }
        }
        Ok(Profiles {
            columns: headers.into_iter().zip(columns).collect(),
        })
    }

    pub fn column(&self, name: &str) -> Option<&[f64]> {
        self.columns.get(name).map(Vec::as_slice)
    }
}

fn series(value: &SeriesValue, field: &str, n: usize, profiles: &Profiles) -> Result<Vec<f64>> {
    match value {
        SeriesValue::Constant(v) => Ok(vec![*v; n]),
        SeriesValue::Inline(v) => {
            if v.len() != n {
                return Err(Error::scenario(field, format!("series has {} entries, expected {n}", v.len())));
            }
            Ok(v.clone())
        }
        SeriesValue::Column(name) => {
            let col = profiles
                .column(name)
                .ok_or_else(|| Error::scenario(field, format!("profile column `{name}` not found")))?;
            if col.len() != n {
                return Err(Error::scenario(
                    field,
                    format!("profile `{name}` has {} rows, expected {n}", col.len()),
                ));
            }
            Ok(col.to_vec())
        }
    }
}

impl ScenarioFile {
    pub fn parse(text: &str, origin: &Path) -> Result<Self> {
        let file: ScenarioFile = toml::from_str(text).map_err(|e| Error::Parse {
            path: origin.to_path_buf(),
            message: e.to_string(),
        })?;
        if file.schema_version != SCHEMA_VERSION {
            return Err(Error::scenario(
                "schema_version",
                format!("unsupported version {}, expected {SCHEMA_VERSION}", file.schema_version),
            ));
        }
        Ok(file)
    }

    pub fn resolve(&self, profiles: &Profiles) -> Result<CommunityScenario> {
        let time = TimeGrid {
            horizon_hours: self.time.horizon_hours,
            step_hours: self.time.step_hours,
        };
        time.validate()?;
        let n = time.num_steps();
        let n_p = self.prosumers.len();
        let mut prosumers = Vec::with_capacity(n_p);
        for (i, p) in self.prosumers.iter().enumerate() {
            let base = format!("prosumers[{i}]");
            let flexible_loads = p
                .flexible_loads
                .iter()
                .enumerate()
                .map(|(m, fl)| {
                    let f = format!("{base}.flexible_loads[{m}]");
                    Ok(FlexibleLoadSpec {
                        p_min: series(&fl.p_min, &format!("{f}.p_min"), n, profiles)?,
                        p_max: series(&fl.p_max, &format!("{f}.p_max"), n, profiles)?,
                        energy_ref: fl.energy_ref,
                        ref_profile: series(&fl.ref_profile, &format!("{f}.ref_profile"), n, profiles)?,
                        beta1: fl.beta1,
                        beta2: fl.beta2,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            let storages = p
                .storages
                .iter()
                .map(|s| StorageSpec {
                    p_charge_max: s.p_charge_max,
                    p_discharge_max: s.p_discharge_max,
                    eta_c: s.eta_c,
                    eta_d: s.eta_d,
                    soc_min: s.soc_min,
                    soc_max: s.soc_max,
                    w0: s.w0,
                    w_nominal: s.w_nominal,
                    w_day_min: s.w_day_min,
                    w_day_max: s.w_day_max,
                    lambda_ess: s.lambda_ess,
                })
                .collect();
            let diesels = p
                .diesels
                .iter()
                .enumerate()
                .map(|(d, de)| {
                    let f = format!("{base}.diesels[{d}]");
                    Ok(DieselSpec {
                        p_min: series(&de.p_min, &format!("{f}.p_min"), n, profiles)?,
                        p_max: series(&de.p_max, &format!("{f}.p_max"), n, profiles)?,
                        ramp_min: series(&de.ramp_min, &format!("{f}.ramp_min"), n, profiles)?,
                        ramp_max: series(&de.ramp_max, &format!("{f}.ramp_max"), n, profiles)?,
                        p_initial: de.p_initial,
                        lambda1: de.lambda1,
                        lambda2: de.lambda2,
                    })
                })
                .collect::<Result<Vec<_>>>()?;
            prosumers.push(ProsumerSpec {
                id: i,
                flexible_loads,
                storages,
                diesels,
                inflexible_load: series(&p.inflexible_load, &format!("{base}.inflexible_load"), n, profiles)?,
                nondispatchable_gen: series(
                    &p.nondispatchable_gen,
                    &format!("{base}.nondispatchable_gen"),
                    n,
                    profiles,
                )?,
            });
        }
        let tariffs = Tariffs {
            lambda_gs: self.tariffs.lambda_gs,
            lambda_gb: self.tariffs.lambda_gb,
            lambda_min: self.tariffs.lambda_min.unwrap_or(self.tariffs.lambda_gs),
            lambda_max: self.tariffs.lambda_max.unwrap_or(self.tariffs.lambda_gb),
            lambda_o: self.tariffs.lambda_o,
            lambda_d: self.tariffs.lambda_d.unwrap_or(DEFAULT_LAMBDA_D),
        };
        let topology = match &self.topology {
            None => Topology::unconstrained(n_p),
            Some(t) => {
                let mut membership = Vec::with_capacity(t.lines.len());
                for (l, line) in t.lines.iter().enumerate() {
                    let mut row = vec![false; n_p];
                    for &i in &line.prosumers {
                        if i >= n_p {
                            return Err(Error::scenario(
                                format!("topology.lines[{l}].prosumers"),
                                format!("prosumer {i} does not exist"),
                            ));
                        }
                        row[i] = true;
                    }
                    membership.push(row);
                }
                Topology {
                    lines: t.lines.iter().map(|l| Line { c_min: l.c_min, c_max: l.c_max }).collect(),
                    membership,
                    distance: t
                        .distance
                        .clone()
                        .unwrap_or_else(|| Topology::unconstrained(n_p).distance),
                }
            }
        };
        let scenario = CommunityScenario {
            time,
            prosumers,
            tariffs,
            topology,
            stage1_trade_price: self.stage1_trade_price,
        };
        scenario.validate()?;
        Ok(scenario)
    }

    /// Canonical document for a scenario: every series inline, every default
    /// spelled out.
    pub fn from_scenario(s: &CommunityScenario) -> Self {
        let inline = |v: &[f64]| SeriesValue::Inline(v.to_vec());
        ScenarioFile {
            schema_version: SCHEMA_VERSION,
            name: None,
            stage1_trade_price: s.stage1_trade_price,
            profiles: None,
            time: TimeBlock {
                horizon_hours: s.time.horizon_hours,
                step_hours: s.time.step_hours,
            },
            tariffs: TariffBlock {
                lambda_gs: s.tariffs.lambda_gs,
                lambda_gb: s.tariffs.lambda_gb,
                lambda_min: Some(s.tariffs.lambda_min),
                lambda_max: Some(s.tariffs.lambda_max),
                lambda_o: s.tariffs.lambda_o,
                lambda_d: Some(s.tariffs.lambda_d),
            },
            solver: None,
            prosumers: s
                .prosumers
                .iter()
                .map(|p| ProsumerBlock {
                    inflexible_load: inline(&p.inflexible_load),
                    nondispatchable_gen: inline(&p.nondispatchable_gen),
                    flexible_loads: p
                        .flexible_loads
                        .iter()
                        .map(|fl| FlexibleLoadBlock {
                            p_min: inline(&fl.p_min),
                            p_max: inline(&fl.p_max),
                            energy_ref: fl.energy_ref,
                            ref_profile: inline(&fl.ref_profile),
                            beta1: fl.beta1,
                            beta2: fl.beta2,
                        })
                        .collect(),
                    storages: p
                        .storages
                        .iter()
                        .map(|st| StorageBlock {
                            p_charge_max: st.p_charge_max,
                            p_discharge_max: st.p_discharge_max,
                            eta_c: st.eta_c,
                            eta_d: st.eta_d,
                            soc_min: st.soc_min,
                            soc_max: st.soc_max,
                            w0: st.w0,
                            w_nominal: st.w_nominal,
                            w_day_min: st.w_day_min,
                            w_day_max: st.w_day_max,
                            lambda_ess: st.lambda_ess,
                        })
                        .collect(),
                    diesels: p
                        .diesels
                        .iter()
                        .map(|de| DieselBlock {
                            p_min: inline(&de.p_min),
                            p_max: inline(&de.p_max),
                            ramp_min: inline(&de.ramp_min),
                            ramp_max: inline(&de.ramp_max),
                            p_initial: de.p_initial,
                            lambda1: de.lambda1,
                            lambda2: de.lambda2,
                        })
                        .collect(),
                })
                .collect(),
            topology: Some(TopologyBlock {
                distance: Some(s.topology.distance.clone()),
                lines: s
                    .topology
                    .lines
                    .iter()
                    .zip(&s.topology.membership)
                    .map(|(l, m)| LineBlock {
                        c_min: l.c_min,
                        c_max: l.c_max,
                        prosumers: (0..m.len()).filter(|&i| m[i]).collect(),
                    })
                    .collect(),
            }),
        }
    }
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Loads and validates a scenario document together with its solver
/// defaults.
pub fn load_scenario_with_defaults(path: &Path) -> Result<(CommunityScenario, SolverDefaults)> {
    let file = ScenarioFile::parse(&read(path)?, path)?;
    let profiles = match &file.profiles {
        Some(name) => {
            let p = path.parent().unwrap_or(Path::new(".")).join(name);
            Profiles::parse(&read(&p)?, &p)?
        }
        None => Profiles::default(),
    };
    Ok((file.resolve(&profiles)?, file.solver.unwrap_or_default()))
}

pub fn load_scenario(path: &Path) -> Result<CommunityScenario> {
    load_scenario_with_defaults(path).map(|(s, _)| s)
}

/// Scenarios compiled into the library, by name.
pub fn load_bundled(name: &str) -> Result<(CommunityScenario, SolverDefaults)> {
    let (_, doc, profiles) = BUNDLED
        .iter()
        .find(|(n, _, _)| *n == name)
        .ok_or_else(|| Error::scenario("scenario", format!("no bundled scenario named `{name}`")))?;
    let origin = PathBuf::from(format!("<bundled:{name}>"));
    let file = ScenarioFile::parse(doc, &origin)?;
    let profiles = Profiles::parse(profiles, &origin)?;
    Ok((file.resolve(&profiles)?, file.solver.unwrap_or_default()))
}

/// Resolves either a bundled scenario name or a path on disk.
pub fn load_named_or_path(spec: &str) -> Result<(CommunityScenario, SolverDefaults)> {
    if BUNDLED.iter().any(|(n, _, _)| *n == spec) {
        load_bundled(spec)
    } else {
        load_scenario_with_defaults(Path::new(spec))
    }
}

/// Canonical TOML text of a scenario.
pub fn scenario_to_toml(s: &CommunityScenario) -> String {
    toml::to_string(&ScenarioFile::from_scenario(s)).expect("scenario serializes")
}

pub fn save_scenario(s: &CommunityScenario, path: &Path) -> Result<()> {
    write_file(path, scenario_to_toml(s).as_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn csv_writer(path: &Path) -> Result<csv::Writer<fs::File>> {
    csv::Writer::from_path(path).map_err(|e| io_error(path, e))
}

fn io_error(path: &Path, e: csv::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source: std::io::Error::other(e.to_string()),
    }
}

fn flush(path: &Path, mut w: csv::Writer<fs::File>) -> Result<()> {
    w.flush().map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

/// `k,f,mse_vs_ref,max_violation,inner_residual_last,messages,bytes`
pub fn write_trace_csv(path: &Path, trace: &crate::solver::ConvergenceTrace) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| io_error(path, e);
    w.write_record(["k", "f", "mse_vs_ref", "max_violation", "inner_residual_last", "messages", "bytes"])
        .map_err(err)?;
    for row in &trace.rows {
        w.write_record([
            row.k.to_string(),
            row.objective.to_string(),
            fmt_opt(row.mse_vs_ref),
            row.max_violation.to_string(),
            fmt_opt(row.inner_residual_last),
            row.messages.to_string(),
            row.bytes.to_string(),
        ])
        .map_err(err)?;
    }
    flush(path, w)
}

/// `t,seller,buyer,kw`: every ordered pair, the seller-side sale.
pub fn write_trading_csv(path: &Path, x: &[f64], index: &DecisionIndex) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| io_error(path, e);
    w.write_record(["t", "seller", "buyer", "kw"]).map_err(err)?;
    let n_p = index.num_prosumers();
    for t in 0..index.num_steps() {
        for i in 0..n_p {
            for j in (0..n_p).filter(|&j| j != i) {
                let v = x[index.locate(Variable::PeerSell { prosumer: i, peer: j, t })];
                w.write_record([t.to_string(), i.to_string(), j.to_string(), v.to_string()])
                    .map_err(err)?;
            }
        }
    }
    flush(path, w)
}

/// Community-level grid exchange with and without peer trading:
/// `t,excess_supply_with_kw,excess_supply_without_kw,demand_with_kw,demand_without_kw`.
pub fn write_supply_demand_csv(path: &Path, with_trading: &[f64], without: &[f64], index: &DecisionIndex) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| io_error(path, e);
    w.write_record([
        "t",
        "excess_supply_with_kw",
        "excess_supply_without_kw",
        "demand_with_kw",
        "demand_without_kw",
    ])
    .map_err(err)?;
    let total = |x: &[f64], t: usize, sell: bool| -> f64 {
        (0..index.num_prosumers())
            .map(|i| {
                let v = if sell {
                    Variable::GridSell { prosumer: i, t }
                } else {
                    Variable::GridBuy { prosumer: i, t }
                };
                x[index.locate(v)]
            })
            .sum()
    };
    for t in 0..index.num_steps() {
        w.write_record([
            t.to_string(),
            total(with_trading, t, true).to_string(),
            total(without, t, true).to_string(),
            total(with_trading, t, false).to_string(),
            total(without, t, false).to_string(),
        ])
        .map_err(err)?;
    }
    flush(path, w)
}

/// `t,i,j,lambda,active_direction` for every ordered pair.
pub fn write_prices_csv(path: &Path, prices: &crate::pricing::PriceSolution) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| io_error(path, e);
    w.write_record(["t", "i", "j", "lambda", "active_direction"]).map_err(err)?;
    for row in prices.matrix() {
        w.write_record([
            row.t.to_string(),
            row.i.to_string(),
            row.j.to_string(),
            row.lambda.to_string(),
            row.direction.to_string(),
        ])
        .map_err(err)?;
    }
    flush(path, w)
}

/// `prosumer,cost`
pub fn write_baseline_csv(path: &Path, costs: &[f64]) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| io_error(path, e);
    w.write_record(["prosumer", "cost"]).map_err(err)?;
    for (i, c) in costs.iter().enumerate() {
        w.write_record([i.to_string(), c.to_string()]).map_err(err)?;
    }
    flush(path, w)
}

/// `k,d,residual`: every inner residual of every outer step.
pub fn write_inner_residuals_csv(path: &Path, trace: &crate::solver::ConvergenceTrace) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| io_error(path, e);
    w.write_record(["k", "d", "residual"]).map_err(err)?;
    for (k, rs) in trace.inner_residuals.iter().enumerate() {
        for (d, r) in rs.iter().enumerate() {
            w.write_record([(k + 1).to_string(), (d + 1).to_string(), r.to_string()])
                .map_err(err)?;
        }
    }
    flush(path, w)
}

/// One `Message::log_line` per delivered message.
pub fn write_message_log(path: &Path, messages: &[crate::solver::Message]) -> Result<()> {
    let mut text = String::new();
    for m in messages {
        text.push_str(&m.log_line());
        text.push('\n');
    }
    write_file(path, text.as_bytes())
}

/// `offset,variable,value`
pub fn write_solution_csv(path: &Path, x: &[f64], index: &DecisionIndex) -> Result<()> {
    let mut w = csv_writer(path)?;
    let err = |e| io_error(path, e);
    w.write_record(["offset", "variable", "value"]).map_err(err)?;
    for (r, v) in x.iter().enumerate() {
        w.write_record([r.to_string(), index.describe(r)?.label(), v.to_string()])
            .map_err(err)?;
    }
    flush(path, w)
}

pub fn read_solution_csv(path: &Path, index: &DecisionIndex) -> Result<Vec<f64>> {
    let text = read(path)?;
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    let mut x = vec![f64::NAN; index.total_len()];
    let parse_err = |message: String| Error::Parse {
        path: path.to_path_buf(),
        message,
    };
    for rec in reader.records() {
        let rec = rec.map_err(|e| parse_err(e.to_string()))?;
        let r: usize = rec.get(0).unwrap_or("").parse().map_err(|_| parse_err("bad offset".into()))?;
        let v: f64 = rec.get(2).unwrap_or("").parse().map_err(|_| parse_err(format!("bad value at offset {r}")))?;
        if r >= x.len() {
            return Err(Error::Offset(r));
        }
        x[r] = v;
    }
    if let Some(r) = x.iter().position(|v| v.is_nan()) {
        return Err(parse_err(format!("missing offset {r}")));
    }
    Ok(x)
}
