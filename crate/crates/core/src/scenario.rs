//! Scenario files, sweeps and CSV output for the experiment harness.
//!
//! A scenario is a TOML document:
//!
//! ```toml
//! [layout]
//! geometry = "reference"        # or "collinear" (with ds_m) or "custom"
//!
//! [channel]
//! num_tx_antennas = 4
//! num_ris_elements = 8
//!
//! [noise]
//! bob_dbm = -90.0
//!
//! [optimizer]
//! rbar_nats = 10.0
//!
//! [[modes]]
//! mode = "active"
//! p_i_mw = 10.0
//!
//! [[modes]]
//! mode = "passive_optimized"
//!
//! [sweep]
//! n_grid = [10, 20, 30]
//!
//! [run]
//! num_realizations = 20
//! output_dir = "out/fig4"
//! ```
//!
//! Every section and field is optional except `[[modes]]`.

use std::fmt;
use std::fs;
use std::io::{self, Write as _};
use std::path::{Path, PathBuf};
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::altmin::{optimize, AltMinConfig, AltMinError, BatchStats, IterationRecord, RealizationSummary, RunStatus, SeedResult};
use crate::channel::{generate_channels, ChannelParams, NodeLayout, NoiseConfig, Point};
use crate::rates::{nats_to_bits, RisMode};

/// First line of every CSV written here.
pub const SCHEMA_HEADER: &str = "# ris-secrecy csv schema v1";
/// Overrides `run.output_dir` when set.
pub const OUT_DIR_ENV: &str = "RIS_SECRECY_OUT_DIR";

pub const RUNS_FILE: &str = "runs.csv";
pub const AGGREGATE_FILE: &str = "aggregate.csv";
pub const TRACE_FILE: &str = "trace.csv";
pub const METADATA_FILE: &str = "metadata.toml";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Geometry {
    Reference,
    Collinear,
    Custom,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LayoutSpec {
    pub geometry: Geometry,
    /// RIS abscissa of the collinear geometry, meters.
    pub ds_m: Option<f64>,
    pub alice_m: Option<Point>,
    pub ris_m: Option<Point>,
    pub bob_m: Option<Point>,
    pub eve_m: Option<Point>,
}

impl Default for LayoutSpec {
    fn default() -> Self {
        Self {
            geometry: Geometry::Reference,
            ds_m: None,
            alice_m: None,
            ris_m: None,
            bob_m: None,
            eve_m: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChannelSpec {
    pub num_tx_antennas: usize,
    pub num_ris_elements: usize,
    pub path_loss_ref_db: f64,
    pub exponent_direct: f64,
    pub exponent_ris: f64,
    pub rician_k_db: f64,
}

impl Default for ChannelSpec {
    fn default() -> Self {
        let p = ChannelParams::default();
        Self {
            num_tx_antennas: p.num_tx_antennas,
            num_ris_elements: p.num_ris_elements,
            path_loss_ref_db: p.path_loss_ref_db,
            exponent_direct: p.exponent_direct,
            exponent_ris: p.exponent_ris,
            rician_k_db: p.rician_k_db,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub bob_dbm: f64,
    pub eve_dbm: f64,
    pub ris_dbm: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        Self {
            bob_dbm: -90.0,
            eve_dbm: -90.0,
            ris_dbm: -90.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct OptimizerSpec {
    pub rbar_nats: f64,
    pub eta: f64,
    pub eps_outer: f64,
    pub eps1: f64,
    pub eps2: f64,
    pub max_outer: usize,
    pub refine_steps: usize,
}

impl Default for OptimizerSpec {
    fn default() -> Self {
        let c = AltMinConfig::default();
        Self {
            rbar_nats: c.rbar,
            eta: c.eta,
            eps_outer: c.eps_outer,
            eps1: c.eps1,
            eps2: c.eps2,
            max_outer: c.max_outer,
            refine_steps: c.refine_steps,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModeSpec {
    pub mode: RisMode,
    /// RIS power budget, active mode only.
    pub p_i_mw: Option<f64>,
}

impl ModeSpec {
    pub fn p_i_watts(&self) -> Option<f64> {
        self.mode.is_active().then(|| self.p_i_mw.unwrap_or(f64::NAN) * 1e-3)
    }

    /// `active@10mW`, `passive_optimized`, ...
    pub fn label(&self) -> String {
        match (self.mode.is_active(), self.p_i_mw) {
            (true, Some(p)) => format!("active@{p}mW"),
            _ => self.mode.as_str().to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSpec {
    pub rbar_grid: Option<Vec<f64>>,
    pub n_grid: Option<Vec<usize>>,
    pub ds_grid: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    None,
    Rbar,
    NumElements,
    Ds,
}

impl SweepAxis {
    pub fn column_name(self) -> &'static str {
        match self {
            SweepAxis::None => "none",
            SweepAxis::Rbar => "rbar_nats",
            SweepAxis::NumElements => "num_ris_elements",
            SweepAxis::Ds => "ds_m",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunSpec {
    pub num_realizations: usize,
    pub first_seed: u64,
    pub output_dir: PathBuf,
    /// Also write per-iteration traces.
    pub trace: bool,
}

impl Default for RunSpec {
    fn default() -> Self {
        Self {
            num_realizations: 20,
            first_seed: 0,
            output_dir: PathBuf::from("out"),
            trace: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioConfig {
    pub layout: LayoutSpec,
    pub channel: ChannelSpec,
    pub noise: NoiseSpec,
    pub optimizer: OptimizerSpec,
    pub modes: Vec<ModeSpec>,
    pub sweep: SweepSpec,
    pub run: RunSpec,
}

/// One problem with a config, tied to a dotted field path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Diagnostic {
    pub field: String,
    pub message: String,
}

impl Diagnostic {
    fn new(field: impl Into<String>, message: impl Into<String>) -> Self {
        Self {
            field: field.into(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Diagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.field, self.message)
    }
}

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
    #[error("invalid scenario:\n{}", .0.iter().map(|d| format!("  {d}")).collect::<Vec<_>>().join("\n"))]
    Invalid(Vec<Diagnostic>),
    #[error("failed to build worker pool: {0}")]
    Pool(String),
    #[error("total power mismatch in row {row}: total {total:e}, parts {parts:e}")]
    TotalMismatch { row: usize, total: f64, parts: f64 },
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

fn in_unit_interval(v: f64) -> bool {
    v > 0.0 && v < 1.0
}

fn strictly_increasing<T: PartialOrd>(v: &[T]) -> bool {
    v.windows(2).all(|w| w[0] < w[1])
}

impl ScenarioConfig {
    /// Parses a TOML document. Syntax and type errors come back as a single
    /// diagnostic carrying the line and column; semantic checks are not run.
    pub fn from_toml_str(s: &str) -> Result<Self, Vec<Diagnostic>> {
        toml::from_str(s).map_err(|e: toml::de::Error| {
            let field = e
                .span()
                .map(|sp| {
                    let line = s[..sp.start.min(s.len())].matches('\n').count() + 1;
                    format!("line {line}")
                })
                .unwrap_or_else(|| "toml".into());
            vec![Diagnostic::new(field, e.message().trim().to_string())]
        })
    }

    pub fn from_path(path: &Path) -> Result<Self, ScenarioError> {
        let text = fs::read_to_string(path).map_err(|source| ScenarioError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let cfg = Self::from_toml_str(&text).map_err(ScenarioError::Invalid)?;
        let diags = cfg.validate();
        if diags.is_empty() {
            Ok(cfg)
        } else {
            Err(ScenarioError::Invalid(diags))
        }
    }

    pub fn sweep_axis(&self) -> SweepAxis {
        match (&self.sweep.rbar_grid, &self.sweep.n_grid, &self.sweep.ds_grid) {
            (Some(_), _, _) => SweepAxis::Rbar,
            (_, Some(_), _) => SweepAxis::NumElements,
            (_, _, Some(_)) => SweepAxis::Ds,
            _ => SweepAxis::None,
        }
    }

    /// Every violation, in file order. Empty iff the scenario can run.
    pub fn validate(&self) -> Vec<Diagnostic> {
        let mut d = Vec::new();
        let mut err = |f: &str, m: String| d.push(Diagnostic::new(f, m));

        let l = &self.layout;
        let swept_ds = self.sweep.ds_grid.is_some();
        match l.geometry {
            Geometry::Reference => {
                if l.ds_m.is_some() {
                    err("layout.ds_m", "only used with geometry = \"collinear\"".into());
                }
            }
            Geometry::Collinear => match (l.ds_m, swept_ds) {
                (None, false) => err("layout.ds_m", "required for the collinear geometry unless sweep.ds_grid is set".into()),
                (Some(_), true) => err("layout.ds_m", "conflicts with sweep.ds_grid".into()),
                (Some(v), false) if !v.is_finite() => err("layout.ds_m", format!("must be finite, got {v}")),
                _ => {}
            },
            Geometry::Custom => {
                for (name, p) in [("alice_m", l.alice_m), ("ris_m", l.ris_m), ("bob_m", l.bob_m), ("eve_m", l.eve_m)] {
                    match p {
                        None => err(&format!("layout.{name}"), "required for the custom geometry".into()),
                        Some(p) if !(p[0].is_finite() && p[1].is_finite()) => {
                            err(&format!("layout.{name}"), "coordinates must be finite".into())
                        }
                        _ => {}
                    }
                }
            }
        }
        if l.geometry != Geometry::Custom {
            for (name, p) in [("alice_m", l.alice_m), ("ris_m", l.ris_m), ("bob_m", l.bob_m), ("eve_m", l.eve_m)] {
                if p.is_some() {
                    err(&format!("layout.{name}"), "only used with geometry = \"custom\"".into());
                }
            }
        }
        if swept_ds && l.geometry != Geometry::Collinear {
            err("sweep.ds_grid", "requires geometry = \"collinear\"".into());
        }

        let c = &self.channel;
        if c.num_tx_antennas == 0 {
            err("channel.num_tx_antennas", "must be at least 1".into());
        }
        if c.num_ris_elements == 0 {
            err("channel.num_ris_elements", "must be at least 1".into());
        }
        for (name, v) in [("exponent_direct", c.exponent_direct), ("exponent_ris", c.exponent_ris)] {
            if !(v >= 2.0 && v.is_finite()) {
                err(&format!("channel.{name}"), format!("must be finite and >= 2, got {v}"));
            }
        }
        if !c.path_loss_ref_db.is_finite() {
            err("channel.path_loss_ref_db", "must be finite".into());
        }
        if c.rician_k_db.is_nan() {
            err("channel.rician_k_db", "must not be NaN".into());
        }

        for (name, v) in [("bob_dbm", self.noise.bob_dbm), ("eve_dbm", self.noise.eve_dbm), ("ris_dbm", self.noise.ris_dbm)] {
            if !v.is_finite() {
                err(&format!("noise.{name}"), format!("must be finite, got {v}"));
            }
        }

        let o = &self.optimizer;
        if !(o.rbar_nats >= 0.0 && o.rbar_nats.is_finite()) {
            err("optimizer.rbar_nats", format!("must be finite and nonnegative, got {}", o.rbar_nats));
        }
        for (name, v) in [("eta", o.eta), ("eps_outer", o.eps_outer), ("eps1", o.eps1), ("eps2", o.eps2)] {
            if !in_unit_interval(v) {
                err(&format!("optimizer.{name}"), format!("must lie in (0, 1), got {v}"));
            }
        }
        if o.max_outer == 0 {
            err("optimizer.max_outer", "must be at least 1".into());
        }

        if self.modes.is_empty() {
            err("modes", "at least one [[modes]] entry is required".into());
        }
        for (i, m) in self.modes.iter().enumerate() {
            let f = format!("modes[{i}].p_i_mw");
            match (m.mode.is_active(), m.p_i_mw) {
                (true, None) => err(&f, "required for mode = \"active\"".into()),
                (true, Some(p)) if !(p > 0.0 && p.is_finite()) => err(&f, format!("must be positive, got {p}")),
                (false, Some(_)) => err(&f, "only used with mode = \"active\"".into()),
                _ => {}
            }
            if self.modes[..i].iter().any(|o| o.label() == m.label()) {
                err(&format!("modes[{i}]"), format!("duplicate mode {}", m.label()));
            }
        }

        let s = &self.sweep;
        let axes = [s.rbar_grid.is_some(), s.n_grid.is_some(), s.ds_grid.is_some()];
        if axes.iter().filter(|&&b| b).count() > 1 {
            err("sweep", "set at most one of rbar_grid, n_grid, ds_grid".into());
        }
        if let Some(g) = &s.rbar_grid {
            if g.is_empty() {
                err("sweep.rbar_grid", "must not be empty".into());
            } else if !strictly_increasing(g) {
                err("sweep.rbar_grid", "must be strictly increasing".into());
            }
            if g.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
                err("sweep.rbar_grid", "values must be finite and nonnegative".into());
            }
        }
        if let Some(g) = &s.n_grid {
            if g.is_empty() {
                err("sweep.n_grid", "must not be empty".into());
            } else if !strictly_increasing(g) {
                err("sweep.n_grid", "must be strictly increasing".into());
            }
            if g.contains(&0) {
                err("sweep.n_grid", "values must be at least 1".into());
            }
        }
        if let Some(g) = &s.ds_grid {
            if g.is_empty() {
                err("sweep.ds_grid", "must not be empty".into());
            } else if !strictly_increasing(g) {
                err("sweep.ds_grid", "must be strictly increasing".into());
            }
            for v in g {
                if !v.is_finite() || NodeLayout::collinear(*v).validate().is_err() {
                    err("sweep.ds_grid", format!("{v} places the RIS on another node"));
                }
            }
        }
        if !swept_ds {
            if let Some(layout) = self.base_layout() {
                if let Err(e) = layout.validate() {
                    err("layout", e.to_string());
                }
            }
        }

        let r = &self.run;
        if r.num_realizations == 0 {
            err("run.num_realizations", "must be at least 1".into());
        }
        if r.first_seed.checked_add(r.num_realizations as u64).is_none() {
            err("run.first_seed", "seed range overflows u64".into());
        }
        if r.output_dir.as_os_str().is_empty() {
            err("run.output_dir", "must not be empty".into());
        }
        d
    }

    /// Layout before any `ds_grid` substitution; `None` if incomplete.
    fn base_layout(&self) -> Option<NodeLayout> {
        let l = &self.layout;
        match l.geometry {
            Geometry::Reference => Some(NodeLayout::reference()),
            Geometry::Collinear => l.ds_m.map(NodeLayout::collinear),
            Geometry::Custom => Some(NodeLayout {
                alice: l.alice_m?,
                ris: l.ris_m?,
                bob: l.bob_m?,
                eve: l.eve_m?,
            }),
        }
    }

    pub fn channel_params(&self) -> ChannelParams {
        let c = &self.channel;
        ChannelParams {
            num_tx_antennas: c.num_tx_antennas,
            num_ris_elements: c.num_ris_elements,
            path_loss_ref_db: c.path_loss_ref_db,
            exponent_direct: c.exponent_direct,
            exponent_ris: c.exponent_ris,
            rician_k_db: c.rician_k_db,
            seed: self.run.first_seed,
        }
    }

    pub fn noise(&self) -> NoiseConfig {
        NoiseConfig::from_dbm(self.noise.bob_dbm, self.noise.eve_dbm, self.noise.ris_dbm)
    }

    pub fn altmin_config(&self, mode: &ModeSpec) -> AltMinConfig {
        let o = &self.optimizer;
        AltMinConfig {
            rbar: o.rbar_nats,
            p_i: mode.p_i_watts().unwrap_or(0.0),
            eta: o.eta,
            eps_outer: o.eps_outer,
            eps1: o.eps1,
            eps2: o.eps2,
            max_outer: o.max_outer,
            refine_steps: o.refine_steps,
            mode: mode.mode,
        }
    }

    /// The sweep expanded into concrete points. Panics on an invalid config.
    pub fn points(&self) -> Vec<SweepPoint> {
        let base = self.base_layout();
        let params = self.channel_params();
        let rbar = self.optimizer.rbar_nats;
        let point = |value: f64, layout: NodeLayout, params: ChannelParams, rbar: f64| SweepPoint {
            value,
            layout,
            params,
            rbar,
        };
        let layout = || base.expect("validated layout");
        match self.sweep_axis() {
            SweepAxis::None => vec![point(rbar, layout(), params, rbar)],
            SweepAxis::Rbar => self.sweep.rbar_grid.as_ref().unwrap().iter().map(|&r| point(r, layout(), params, r)).collect(),
            SweepAxis::NumElements => self
                .sweep
                .n_grid
                .as_ref()
                .unwrap()
                .iter()
                .map(|&n| {
                    let p = ChannelParams {
                        num_ris_elements: n,
                        ..params
                    };
                    point(n as f64, layout(), p, rbar)
                })
                .collect(),
            SweepAxis::Ds => self
                .sweep
                .ds_grid
                .as_ref()
                .unwrap()
                .iter()
                .map(|&ds| point(ds, NodeLayout::collinear(ds), params, rbar))
                .collect(),
        }
    }
}

/// One value of the swept axis with everything it changes.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepPoint {
    pub value: f64,
    pub layout: NodeLayout,
    pub params: ChannelParams,
    pub rbar: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunRow {
    pub sweep_value: f64,
    pub seed: u64,
    pub mode: String,
    #[serde(rename = "p_i_W")]
    pub p_i_w: Option<f64>,
    pub status: &'static str,
    #[serde(rename = "transmit_power_W")]
    pub transmit_power_w: Option<f64>,
    #[serde(rename = "ris_power_W")]
    pub ris_power_w: Option<f64>,
    #[serde(rename = "total_power_W")]
    pub total_power_w: Option<f64>,
    pub secrecy_rate_nats: Option<f64>,
    pub secrecy_rate_bits: Option<f64>,
    pub outer_iters: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct AggregateRow {
    pub sweep_value: f64,
    pub mode: String,
    #[serde(rename = "p_i_W")]
    pub p_i_w: Option<f64>,
    pub num_realizations: usize,
    pub num_ok: usize,
    pub num_failed: usize,
    #[serde(rename = "total_power_mean_W")]
    pub total_power_mean_w: f64,
    #[serde(rename = "total_power_stderr_W")]
    pub total_power_stderr_w: f64,
    #[serde(rename = "transmit_power_mean_W")]
    pub transmit_power_mean_w: f64,
    #[serde(rename = "transmit_power_stderr_W")]
    pub transmit_power_stderr_w: f64,
    #[serde(rename = "ris_power_mean_W")]
    pub ris_power_mean_w: f64,
    #[serde(rename = "ris_power_stderr_W")]
    pub ris_power_stderr_w: f64,
    pub secrecy_rate_mean_nats: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TraceRow {
    pub sweep_value: f64,
    pub seed: u64,
    pub mode: String,
    pub iter: usize,
    #[serde(rename = "transmit_power_W")]
    pub transmit_power_w: f64,
    #[serde(rename = "ris_power_W")]
    pub ris_power_w: f64,
    #[serde(rename = "total_power_W")]
    pub total_power_w: f64,
    pub secrecy_rate_nats: f64,
    pub secrecy_rate_bits: f64,
    pub rank_residual_w: f64,
    pub rank_residual_u: f64,
    pub delta: f64,
}

/// Results of one scenario, in (sweep point, mode, seed) order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutput {
    pub axis: SweepAxis,
    pub runs: Vec<RunRow>,
    pub aggregates: Vec<AggregateRow>,
    pub traces: Vec<TraceRow>,
}

impl ScenarioOutput {
    /// Sweep point and mode label of groups where no realization succeeded.
    pub fn all_failed_groups(&self) -> Vec<(f64, String)> {
        self.aggregates
            .iter()
            .filter(|a| a.num_ok == 0)
            .map(|a| (a.sweep_value, a.mode.clone()))
            .collect()
    }
}

fn status_name(outcome: &Result<RunStatus, AltMinError>) -> &'static str {
    match outcome {
        Ok(RunStatus::Converged) => "converged",
        Ok(RunStatus::MaxOuter) => "max_outer",
        Err(AltMinError::Infeasible(_)) => "infeasible",
        Err(AltMinError::NonMonotone { .. }) => "nonmonotone",
        Err(AltMinError::InvalidConfig(_)) => "invalid",
    }
}

struct Item<'a> {
    point: &'a SweepPoint,
    mode: &'a ModeSpec,
    seed: u64,
}

struct ItemResult {
    row: RunRow,
    seed_result: SeedResult,
    trace: Vec<IterationRecord>,
}

fn run_item(item: &Item, cfg: &ScenarioConfig, noise: &NoiseConfig) -> ItemResult {
    let params = ChannelParams {
        seed: item.seed,
        ..item.point.params
    };
    let ch = generate_channels(&item.point.layout, &params).expect("validated channel parameters");
    let acfg = AltMinConfig {
        rbar: item.point.rbar,
        ..cfg.altmin_config(item.mode)
    };
    let result = optimize(&ch, noise, &acfg);
    let (summary, status, trace) = match result {
        Ok((_, _, rec)) => {
            let last = *rec.rows.last().expect("at least one record row");
            let s = RealizationSummary {
                transmit_power: last.transmit_power,
                ris_power: last.ris_power,
                total_power: last.total_power,
                secrecy_rate: last.secrecy_rate,
                outer_iterations: rec.outer_iterations(),
            };
            (Ok(s), Ok(rec.status), rec.rows)
        }
        Err(e) => (Err(e.clone()), Err(e), Vec::new()),
    };
    let ok = summary.as_ref().ok();
    let row = RunRow {
        sweep_value: item.point.value,
        seed: item.seed,
        mode: item.mode.label(),
        p_i_w: item.mode.p_i_watts(),
        status: status_name(&status),
        transmit_power_w: ok.map(|s| s.transmit_power),
        ris_power_w: ok.map(|s| s.ris_power),
        total_power_w: ok.map(|s| s.total_power),
        secrecy_rate_nats: ok.map(|s| s.secrecy_rate),
        secrecy_rate_bits: ok.map(|s| nats_to_bits(s.secrecy_rate)),
        outer_iters: ok.map(|s| s.outer_iterations),
    };
    ItemResult {
        row,
        seed_result: SeedResult {
            seed: item.seed,
            outcome: summary,
        },
        trace,
    }
}

/// Runs every (sweep point, mode, seed) item on `jobs` worker threads
/// (all cores when `None`). Output order does not depend on `jobs`.
pub fn run_scenario(cfg: &ScenarioConfig, jobs: Option<usize>) -> Result<ScenarioOutput, ScenarioError> {
    let diags = cfg.validate();
    if !diags.is_empty() {
        return Err(ScenarioError::Invalid(diags));
    }
    let points = cfg.points();
    let noise = cfg.noise();
    let n = cfg.run.num_realizations as u64;
    let items: Vec<Item> = points
        .iter()
        .flat_map(|point| {
            cfg.modes.iter().flat_map(move |mode| {
                (0..n).map(move |i| Item {
                    point,
                    mode,
                    seed: cfg.run.first_seed + i,
                })
            })
        })
        .collect();

    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(j) = jobs {
        builder = builder.num_threads(j.max(1));
    }
    let pool = builder.build().map_err(|e| ScenarioError::Pool(e.to_string()))?;
    let results: Vec<ItemResult> = pool.install(|| items.par_iter().map(|it| run_item(it, cfg, &noise)).collect());

    let mut out = ScenarioOutput {
        axis: cfg.sweep_axis(),
        runs: Vec::with_capacity(results.len()),
        aggregates: Vec::new(),
        traces: Vec::new(),
    };
    for group in results.chunks(n as usize) {
        let first = &group[0].row;
        let stats = BatchStats::from_runs(group.iter().map(|r| r.seed_result.clone()).collect());
        out.aggregates.push(AggregateRow {
            sweep_value: first.sweep_value,
            mode: first.mode.clone(),
            p_i_w: first.p_i_w,
            num_realizations: group.len(),
            num_ok: stats.num_ok,
            num_failed: stats.num_infeasible,
            total_power_mean_w: stats.total_power.mean,
            total_power_stderr_w: stats.total_power.stderr,
            transmit_power_mean_w: stats.transmit_power.mean,
            transmit_power_stderr_w: stats.transmit_power.stderr,
            ris_power_mean_w: stats.ris_power.mean,
            ris_power_stderr_w: stats.ris_power.stderr,
            secrecy_rate_mean_nats: stats.secrecy_rate.mean,
        });
    }
    for r in results {
        if cfg.run.trace {
            out.traces.extend(r.trace.iter().map(|t| TraceRow {
                sweep_value: r.row.sweep_value,
                seed: r.row.seed,
                mode: r.row.mode.clone(),
                iter: t.iter,
                transmit_power_w: t.transmit_power,
                ris_power_w: t.ris_power,
                total_power_w: t.total_power,
                secrecy_rate_nats: t.secrecy_rate,
                secrecy_rate_bits: nats_to_bits(t.secrecy_rate),
                rank_residual_w: t.rank_residual_w,
                rank_residual_u: t.rank_residual_u,
                delta: t.delta,
            }));
        }
        out.runs.push(r.row);
    }
    Ok(out)
}

/// `total = transmit + ris` on every successful row (`ris = 0` when passive).
pub fn check_totals(rows: &[RunRow]) -> Result<(), ScenarioError> {
    for (i, r) in rows.iter().enumerate() {
        if let (Some(t), Some(tx), Some(ris)) = (r.total_power_w, r.transmit_power_w, r.ris_power_w) {
            let parts = if r.p_i_w.is_some() { tx + ris } else { tx };
            if (t - parts).abs() > 1e-12 * t.abs().max(1.0) {
                return Err(ScenarioError::TotalMismatch { row: i, total: t, parts });
            }
        }
    }
    Ok(())
}

fn write_csv<T: Serialize>(path: &Path, axis: SweepAxis, rows: &[T]) -> Result<(), ScenarioError> {
    let io_err = |source| ScenarioError::Io {
        path: path.to_path_buf(),
        source,
    };
    let mut f = io::BufWriter::new(fs::File::create(path).map_err(io_err)?);
    writeln!(f, "{SCHEMA_HEADER}; sweep_axis={}", axis.column_name()).map_err(io_err)?;
    let mut w = csv::Writer::from_writer(f);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush().map_err(io_err)?;
    Ok(())
}

#[derive(Serialize)]
struct Metadata<'a> {
    schema: &'a str,
    crate_version: &'a str,
    created_unix_s: u64,
    elapsed_s: f64,
    jobs: Option<usize>,
    sweep_axis: &'a str,
    num_runs: usize,
    config: &'a ScenarioConfig,
}

/// Output directory: `$RIS_SECRECY_OUT_DIR` if set, else `run.output_dir`.
pub fn output_dir(cfg: &ScenarioConfig) -> PathBuf {
    std::env::var_os(OUT_DIR_ENV)
        .filter(|v| !v.is_empty())
        .map(PathBuf::from)
        .unwrap_or_else(|| cfg.run.output_dir.clone())
}

/// Writes the data CSVs and a metadata file into `dir`. The data files are
/// a pure function of the results; wall-clock values go to the metadata.
pub fn write_outputs(
    out: &ScenarioOutput,
    cfg: &ScenarioConfig,
    dir: &Path,
    jobs: Option<usize>,
    elapsed_s: f64,
) -> Result<Vec<PathBuf>, ScenarioError> {
    check_totals(&out.runs)?;
    fs::create_dir_all(dir).map_err(|source| ScenarioError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    let mut written = Vec::new();
    let runs = dir.join(RUNS_FILE);
    write_csv(&runs, out.axis, &out.runs)?;
    written.push(runs);
    let agg = dir.join(AGGREGATE_FILE);
    write_csv(&agg, out.axis, &out.aggregates)?;
    written.push(agg);
    if cfg.run.trace {
        let tr = dir.join(TRACE_FILE);
        write_csv(&tr, out.axis, &out.traces)?;
        written.push(tr);
    }
    let meta = Metadata {
        schema: SCHEMA_HEADER.trim_start_matches("# "),
        crate_version: env!("CARGO_PKG_VERSION"),
        created_unix_s: SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs()),
        elapsed_s,
        jobs,
        sweep_axis: out.axis.column_name(),
        num_runs: out.runs.len(),
        config: cfg,
    };
    let path = dir.join(METADATA_FILE);
    let text = toml::to_string(&meta).expect("metadata serializes");
    fs::write(&path, text).map_err(|source| ScenarioError::Io {
        path: path.clone(),
        source,
    })?;
    written.push(path);
    Ok(written)
}

/// [`run_scenario`] followed by [`write_outputs`] into [`output_dir`].
pub fn run_and_write(cfg: &ScenarioConfig, jobs: Option<usize>) -> Result<(ScenarioOutput, Vec<PathBuf>), ScenarioError> {
    let start = Instant::now();
    let out = run_scenario(cfg, jobs)?;
    let files = write_outputs(&out, cfg, &output_dir(cfg), jobs, start.elapsed().as_secs_f64())?;
    Ok((out, files))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn minimal() -> &'static str {
        "[[modes]]\nmode = \"active\"\np_i_mw = 10.0\n"
    }

    #[test]
    fn defaults_fill_missing_sections() {
        let cfg = ScenarioConfig::from_toml_str(minimal()).unwrap();
        assert!(cfg.validate().is_empty());
        assert_eq!(cfg.run.num_realizations, 20);
        assert_eq!(cfg.channel.num_ris_elements, 8);
        assert_eq!(cfg.sweep_axis(), SweepAxis::None);
        assert_eq!(cfg.points().len(), 1);
        assert!((cfg.altmin_config(&cfg.modes[0]).p_i - 0.01).abs() < 1e-15);
    }

    #[test]
    fn parse_errors_carry_line() {
        let d = ScenarioConfig::from_toml_str("[run]\nnum_realizations = \"x\"\n").unwrap_err();
        assert_eq!(d.len(), 1);
        assert_eq!(d[0].field, "line 2");
        let d = ScenarioConfig::from_toml_str("[run]\nbogus = 1\n").unwrap_err();
        assert!(d[0].message.contains("bogus"), "{}", d[0].message);
    }

    #[test]
    fn collects_every_violation() {
        let text = "[optimizer]\neta = 2.0\n[[modes]]\nmode = \"active\"\np_i_mw = -1.0\n[sweep]\nrbar_grid = [2.0, 1.0]\nn_grid = [10]\n";
        let cfg = ScenarioConfig::from_toml_str(text).unwrap();
        let fields: Vec<String> = cfg.validate().into_iter().map(|d| d.field).collect();
        for f in ["optimizer.eta", "modes[0].p_i_mw", "sweep", "sweep.rbar_grid"] {
            assert!(fields.iter().any(|x| x == f), "missing {f} in {fields:?}");
        }
    }

    #[test]
    fn ds_sweep_needs_collinear() {
        let text = format!("{}[sweep]\nds_grid = [10.0, 70.0]\n", minimal());
        let cfg = ScenarioConfig::from_toml_str(&text).unwrap();
        let d = cfg.validate();
        assert!(d.iter().any(|d| d.field == "sweep.ds_grid" && d.message.contains("collinear")));
        assert!(d.iter().any(|d| d.message.contains("70")));
    }

    #[test]
    fn labels() {
        let a = ModeSpec {
            mode: RisMode::Active,
            p_i_mw: Some(20.0),
        };
        assert_eq!(a.label(), "active@20mW");
        let p = ModeSpec {
            mode: RisMode::PassiveOptimized,
            p_i_mw: None,
        };
        assert_eq!(p.label(), "passive_optimized");
        assert_eq!(p.p_i_watts(), None);
    }

    #[test]
    fn total_check_catches_mismatch() {
        let row = RunRow {
            sweep_value: 0.0,
            seed: 0,
            mode: "active@10mW".into(),
            p_i_w: Some(0.01),
            status: "converged",
            transmit_power_w: Some(1.0),
            ris_power_w: Some(0.5),
            total_power_w: Some(1.5),
            secrecy_rate_nats: Some(1.0),
            secrecy_rate_bits: Some(nats_to_bits(1.0)),
            outer_iters: Some(1),
        };
        assert!(check_totals(std::slice::from_ref(&row)).is_ok());
        let bad = RunRow {
            total_power_w: Some(1.6),
            ..row
        };
        assert!(matches!(check_totals(&[bad]), Err(ScenarioError::TotalMismatch { .. })));
    }
}
