//! Scenario files, sweep orchestration and CSV output.
//!
//! A scenario is a flat TOML document: top-level keys plus one level of
//! `[section]` tables.
//!
//! ```text
//! name = "fig5"
//! sweep = "20,40,60,80,100"
//! strategies = "baseline,probabilistic,proposed"
//! replications = 20
//!
//! [sim]
//! duration = 0.05
//! lambda = 8000
//!
//! [strategy]
//! delta = 0.5
//! ```
//!
//! Sections: `sim`, `strategy`, `topology`, `channel`, `cca`, `mac`,
//! `controller`, `throughput`. Unknown keys are rejected.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::channel::ThroughputFormula;
use crate::error::{Error, Result};
use crate::mac::BusyRule;
use crate::schedulers::{StrategyConfig, StrategyKind, TddFrame};
use crate::sim::{replicate, run, MetricsRecord, SimConfig};
use crate::topology::TopologyConfig;

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub name: String,
    pub sweep: Vec<usize>,
    pub strategies: Vec<StrategyKind>,
    pub replications: usize,
    pub base: SimConfig,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            name: "default".into(),
            sweep: vec![20, 40, 60, 80, 100],
            strategies: StrategyKind::ALL.to_vec(),
            replications: 20,
            base: SimConfig::default(),
        }
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if self.sweep.is_empty() {
            return Err(Error::InvalidConfig("sweep must not be empty".into()));
        }
        if self.strategies.is_empty() {
            return Err(Error::InvalidConfig("no strategies selected".into()));
        }
        if self.replications == 0 {
            return Err(Error::InvalidConfig("replications must be >= 1".into()));
        }
        self.base.validate()
    }

    /// Configuration of one sweep point.
    pub fn config(&self, strategy: StrategyKind, n_infra: usize) -> SimConfig {
        SimConfig {
            strategy: StrategyConfig {
                kind: strategy,
                ..self.base.strategy
            },
            topology: TopologyConfig {
                n_infra,
                ..self.base.topology.clone()
            },
            ..self.base.clone()
        }
    }
}

#[derive(Deserialize)]
#[serde(untagged)]
enum List<T> {
    Items(Vec<T>),
    Text(String),
}

impl<T: std::str::FromStr> List<T>
where
    T::Err: std::fmt::Display,
{
    fn into_vec(self, key: &str) -> Result<Vec<T>> {
        match self {
            List::Items(v) => Ok(v),
            List::Text(s) => parse_list(&s)
                .map_err(|e| Error::InvalidConfig(format!("{key}: {e}"))),
        }
    }
}

/// Parses a comma separated list such as `20,40,60`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> std::result::Result<Vec<T>, String>
where
    T::Err: std::fmt::Display,
{
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse::<T>().map_err(|e| format!("bad entry {t:?}: {e}")))
        .collect()
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ScenarioFile {
    name: String,
    sweep: List<usize>,
    strategies: Option<List<StrategyKind>>,
    replications: Option<usize>,
    #[serde(default)]
    sim: SimSection,
    #[serde(default)]
    strategy: StrategySection,
    #[serde(default)]
    topology: TopologySection,
    #[serde(default)]
    channel: ChannelSection,
    #[serde(default)]
    cca: CcaSection,
    #[serde(default)]
    mac: MacSection,
    #[serde(default)]
    controller: ControllerSection,
    #[serde(default)]
    throughput: ThroughputSection,
}

impl<'de> Deserialize<'de> for StrategyKind {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

impl Serialize for StrategyKind {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(self.as_str())
    }
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct SimSection {
    duration: Option<f64>,
    seed: Option<u64>,
    lambda: Option<f64>,
    mean_packet_bits: Option<f64>,
    exponential_sizes: Option<bool>,
    tx_power_dbm: Option<f64>,
    num_channels: Option<u32>,
    subframe_duration: Option<f64>,
    retry_limit: Option<u32>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct StrategySection {
    delta: Option<f64>,
    cot: Option<f64>,
    pool_capacity: Option<usize>,
    tdd_config: Option<u8>,
    tdd_pattern: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct TopologySection {
    ue_per_cell: Option<usize>,
    cell_radius: Option<f64>,
    ue_radius: Option<f64>,
    max_depth: Option<usize>,
    mainlobe_gain_dbi: Option<f64>,
    sidelobe_gain_dbi: Option<f64>,
    beamwidth_deg: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ChannelSection {
    alpha_db: Option<f64>,
    beta: Option<f64>,
    sigma_db: Option<f64>,
    carrier_freq_hz: Option<f64>,
    aci_rejection_db: Option<f64>,
    subpath_attenuation_db: Option<f64>,
    noise_figure_db: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct CcaSection {
    threshold_dbm: Option<f64>,
    slot_duration: Option<f64>,
    defer_duration: Option<f64>,
    cot_max: Option<f64>,
    decode_threshold_db: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct MacSection {
    dcf_cw_min: Option<u32>,
    dcf_max_stage: Option<u32>,
    lbt_cw: Option<u32>,
    busy_rule: Option<String>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ControllerSection {
    enabled: Option<bool>,
    trigger: Option<u32>,
    delay: Option<f64>,
}

#[derive(Deserialize, Default)]
#[serde(deny_unknown_fields)]
struct ThroughputSection {
    overhead: Option<f64>,
    bandwidth_hz: Option<f64>,
    formula: Option<String>,
}

fn set<T>(dst: &mut T, v: Option<T>) {
    if let Some(v) = v {
        *dst = v;
    }
}

/// Parses and validates a scenario file.
pub fn parse_scenario(text: &str) -> Result<Scenario> {
    let f: ScenarioFile = toml::from_str(text).map_err(|e| {
        let line = e
            .span()
            .map(|r| text[..r.start.min(text.len())].matches('\n').count() + 1)
            .unwrap_or(0);
        Error::parse(line, e.message().to_string())
    })?;
    let mut s = Scenario {
        name: f.name,
        sweep: f.sweep.into_vec("sweep")?,
        ..Default::default()
    };
    if let Some(v) = f.strategies {
        s.strategies = v.into_vec("strategies")?;
    }
    set(&mut s.replications, f.replications);

    let c = &mut s.base;
    set(&mut c.duration, f.sim.duration);
    set(&mut c.seed, f.sim.seed);
    set(&mut c.lambda, f.sim.lambda);
    set(&mut c.mean_packet_bits, f.sim.mean_packet_bits);
    set(&mut c.exponential_sizes, f.sim.exponential_sizes);
    set(&mut c.tx_power_dbm, f.sim.tx_power_dbm);
    set(&mut c.num_channels, f.sim.num_channels);
    set(&mut c.subframe_duration, f.sim.subframe_duration);
    set(&mut c.retry_limit, f.sim.retry_limit);

    set(&mut c.strategy.delta, f.strategy.delta);
    set(&mut c.strategy.cot, f.strategy.cot);
    set(&mut c.strategy.pool_capacity, f.strategy.pool_capacity);
    let idx = f.strategy.tdd_config.unwrap_or(c.strategy.tdd.config_index);
    c.strategy.tdd = match f.strategy.tdd_pattern {
        Some(p) => TddFrame::from_pattern(idx, &p)?,
        None => TddFrame::config(idx)?,
    };

    set(&mut c.topology.ue_per_cell, f.topology.ue_per_cell);
    set(&mut c.topology.cell_radius, f.topology.cell_radius);
    set(&mut c.topology.ue_radius, f.topology.ue_radius);
    set(&mut c.topology.max_depth, f.topology.max_depth);
    set(&mut c.topology.antenna.mainlobe_gain_dbi, f.topology.mainlobe_gain_dbi);
    set(&mut c.topology.antenna.sidelobe_gain_dbi, f.topology.sidelobe_gain_dbi);
    set(&mut c.topology.antenna.beamwidth_deg, f.topology.beamwidth_deg);

    set(&mut c.channel.alpha_db, f.channel.alpha_db);
    set(&mut c.channel.beta, f.channel.beta);
    set(&mut c.channel.sigma_db, f.channel.sigma_db);
    set(&mut c.channel.carrier_freq_hz, f.channel.carrier_freq_hz);
    set(&mut c.channel.aci_rejection_db, f.channel.aci_rejection_db);
    set(&mut c.channel.subpath_attenuation_db, f.channel.subpath_attenuation_db);
    set(&mut c.channel.noise_figure_db, f.channel.noise_figure_db);

    set(&mut c.cca.threshold_dbm, f.cca.threshold_dbm);
    set(&mut c.cca.slot_duration, f.cca.slot_duration);
    set(&mut c.cca.defer_duration, f.cca.defer_duration);
    set(&mut c.cca.cot_max, f.cca.cot_max);
    set(&mut c.cca.decode_threshold_db, f.cca.decode_threshold_db);

    set(&mut c.dcf.cw_min, f.mac.dcf_cw_min);
    set(&mut c.dcf.max_stage, f.mac.dcf_max_stage);
    set(&mut c.lbt.cw, f.mac.lbt_cw);
    if let Some(r) = f.mac.busy_rule {
        c.lbt.busy_rule = match r.as_str() {
            "redraw" => BusyRule::Redraw,
            "freeze" => BusyRule::Freeze,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "busy_rule {other:?}: expected redraw or freeze"
                )))
            }
        };
    }

    if f.controller.enabled.is_some() {
        c.controller = f.controller.enabled;
    }
    set(&mut c.controller_trigger, f.controller.trigger);
    set(&mut c.controller_delay, f.controller.delay);

    set(&mut c.throughput.overhead, f.throughput.overhead);
    set(&mut c.throughput.bandwidth_hz, f.throughput.bandwidth_hz);
    if let Some(form) = f.throughput.formula {
        c.throughput.formula = match form.as_str() {
            "shannon" => ThroughputFormula::Shannon,
            "literal" => ThroughputFormula::Literal,
            other => {
                return Err(Error::InvalidConfig(format!(
                    "formula {other:?}: expected shannon or literal"
                )))
            }
        };
    }

    s.validate()?;
    Ok(s)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportRow {
    pub strategy: StrategyKind,
    pub n_infra: usize,
    pub cell_tput_bps: f64,
    pub ue_tput_bps: f64,
    pub interfered_frac: f64,
    pub dropped_frac: f64,
}

/// Empirical CDF points `(value, P[X <= value])`, sorted by value.
pub fn empirical_cdf(samples: &[f64]) -> Vec<(f64, f64)> {
    let mut v: Vec<f64> = samples.iter().copied().filter(|x| !x.is_nan()).collect();
    v.sort_by(f64::total_cmp);
    let n = v.len() as f64;
    v.iter()
        .enumerate()
        .map(|(i, &x)| (x, (i + 1) as f64 / n))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Cdf {
    pub strategy: StrategyKind,
    pub n_infra: usize,
    /// `"ue"` or `"cell"`.
    pub metric: &'static str,
    pub points: Vec<(f64, f64)>,
}

impl Cdf {
    pub fn file_name(&self) -> String {
        format!("cdf_{}_{}_{}.csv", self.metric, self.strategy, self.n_infra)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("{}_tput_bps,cdf\n", self.metric);
        for (x, p) in &self.points {
            let _ = writeln!(out, "{x},{p}");
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ScenarioOutput {
    pub rows: Vec<ReportRow>,
    pub cdfs: Vec<Cdf>,
}

/// Runs every (strategy, sweep point) pair, strategies outermost.
pub fn run_scenario(s: &Scenario, workers: usize) -> Result<ScenarioOutput> {
    s.validate()?;
    let mut out = ScenarioOutput::default();
    for &k in &s.strategies {
        for &n in &s.sweep {
            let a = replicate(&s.config(k, n), s.replications, workers)?;
            out.rows.push(ReportRow {
                strategy: k,
                n_infra: n,
                cell_tput_bps: a.cell_tput_bps,
                ue_tput_bps: a.ue_tput_bps,
                interfered_frac: a.interfered_frac,
                dropped_frac: a.dropped_frac,
            });
            out.cdfs.push(Cdf {
                strategy: k,
                n_infra: n,
                metric: "ue",
                points: empirical_cdf(&a.ue_samples),
            });
            out.cdfs.push(Cdf {
                strategy: k,
                n_infra: n,
                metric: "cell",
                points: empirical_cdf(&a.cell_samples),
            });
        }
    }
    Ok(out)
}

pub fn rows_to_csv(rows: &[ReportRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(Error::InvalidConfig("no report rows to write".into()));
    }
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    for r in rows {
        w.serialize(r)
            .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    }
    let bytes = w
        .into_inner()
        .map_err(|e| Error::InvalidConfig(format!("csv: {e}")))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<ReportRow>> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    r.deserialize()
        .map(|row| {
            row.map_err(|e| {
                let line = e.position().map(|p| p.line() as usize).unwrap_or(0);
                Error::parse(line, e.to_string())
            })
        })
        .collect()
}

pub fn emit_csv(rows: &[ReportRow], path: &Path) -> Result<()> {
    let text = rows_to_csv(rows)?;
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Writes `report.csv` and one file per CDF into `dir`.
pub fn write_outputs(out: &ScenarioOutput, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let report = dir.join("report.csv");
    emit_csv(&out.rows, &report)?;
    let mut written = vec![report];
    for c in &out.cdfs {
        let p = dir.join(c.file_name());
        fs::write(&p, c.to_csv()).map_err(|e| Error::io(&p, e))?;
        written.push(p);
    }
    Ok(written)
}

/// Per-slot trace as `time,node,phase,cca_result,outcome` CSV.
pub fn trace_csv(m: &MetricsRecord) -> String {
    let mut out = String::from("time,node,phase,cca_result,outcome\n");
    for r in &m.trace {
        let _ = writeln!(
            out,
            "{},{},{},{},{}",
            r.time,
            r.node,
            r.phase.as_str(),
            r.cca.map(|c| c.as_str()).unwrap_or(""),
            r.outcome.map(|o| o.as_str()).unwrap_or("")
        );
    }
    out
}

/// Controller actions as `time,action,node,parameters` CSV.
pub fn controller_log_csv(m: &MetricsRecord) -> String {
    let mut out = String::from("time,action,node,parameters\n");
    for (t, r) in &m.reconfigurations {
        let _ = writeln!(out, "{t},{},{},{}", r.action(), r.node(), r.parameters());
    }
    out
}

/// Single traced replication per (strategy, sweep point) at the base seed;
/// writes its trace and controller log next to the report.
pub fn write_traces(s: &Scenario, dir: &Path) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for &k in &s.strategies {
        for &n in &s.sweep {
            let m = run(&SimConfig {
                trace: true,
                ..s.config(k, n)
            })?;
            let p = dir.join(format!("trace_{k}_{n}.csv"));
            fs::write(&p, trace_csv(&m)).map_err(|e| Error::io(&p, e))?;
            written.push(p);
            let p = dir.join(format!("controller_{k}_{n}.csv"));
            fs::write(&p, controller_log_csv(&m)).map_err(|e| Error::io(&p, e))?;
            written.push(p);
        }
    }
    Ok(written)
}
