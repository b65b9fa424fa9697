//! Run configuration: one TOML file plus `--set key=value` overrides.
//!
//! Grammar, top level:
//!
//! ```toml
//! seed = 7                 # mandatory
//! experiment = "simulate"  # optional; must match the subcommand when given
//! out = "runs/sim"         # optional; `--out` wins
//!
//! [field]      # ChemoField: kind, m0, scale, dim
//! [rate]       # chi, psi = { kind, slope }
//! [kernel]     # kind, dim, v0, alpha, beta, shape
//! [initial]    # InitialLaw: kind = point | gaussian | uniform_ball, velocity = { kind, ... }
//! [ensemble]   # simulate: n, times, write_particles, tv_max
//! [grid]       # GridConfig of the deterministic oracle
//! [bins]       # coords = { kind, ... }, axes = [{ lo, hi, n }, ...]
//! [lyapunov]   # drift-check and weighted distances
//! [minorise]   # minorise-check
//! [rate_fit]   # rate-fit
//! [geometry]   # geometry
//! ```
//!
//! Every section is described by the struct of the same name below.

use std::fmt;
use std::path::{Path, PathBuf};

use runtumble::binning::{Axis, Coords};
use runtumble::convergence::{RateModel, WeightKind};
use runtumble::fields::ChemoField;
use runtumble::grid_oracle::GridConfig;
use runtumble::kernels::KernelSpec;
use runtumble::lyapunov::{LyapunovCase, MStarRule};
use runtumble::minor_geom::{BoundedBins, BoundedMinorisation, DeltaThetaFormula, UnboundedBins};
use runtumble::pdmp::InitialLaw;
use runtumble::rates::RateSpec;
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    Simulate,
    DriftCheck,
    MinoriseCheck,
    RateFit,
    Geometry,
}

impl Experiment {
    pub fn name(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::DriftCheck => "drift-check",
            Experiment::MinoriseCheck => "minorise-check",
            Experiment::RateFit => "rate-fit",
            Experiment::Geometry => "geometry",
        }
    }

    /// Prefix of the artifact file names.
    pub fn stem(self) -> &'static str {
        match self {
            Experiment::Simulate => "simulate",
            Experiment::DriftCheck => "drift_check",
            Experiment::MinoriseCheck => "minorise_check",
            Experiment::RateFit => "rate_fit",
            Experiment::Geometry => "geometry",
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Either an explicit list or `count` equally spaced points from `start` to `stop`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Times {
    List(Vec<f64>),
    Range { start: f64, stop: f64, count: usize },
}

impl Times {
    pub fn values(&self) -> Vec<f64> {
        match self {
            Times::List(v) => v.clone(),
            Times::Range { start, stop, count } => match count {
                0 => Vec::new(),
                1 => vec![*start],
                _ => (0..*count).map(|k| start + (stop - start) * k as f64 / (*count - 1) as f64).collect(),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleSection {
    pub n: u64,
    pub times: Times,
    /// One particle CSV per time.
    #[serde(default = "yes")]
    pub write_particles: bool,
    /// With `[grid]` and `[bins]`: largest binned TV to the grid oracle that passes.
    #[serde(default)]
    pub tv_max: Option<f64>,
}

fn yes() -> bool {
    true
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BinsSection {
    pub coords: Coords,
    pub axes: Vec<Axis>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MartingaleSection {
    pub n: u64,
    pub times: Times,
    #[serde(default = "default_h")]
    pub h: f64,
    pub initial: InitialLaw,
    /// Evaluate `phi` with this `gamma` instead of the selected one.
    #[serde(default)]
    pub gamma: Option<f64>,
}

fn default_h() -> f64 {
    0.05
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LyapunovSection {
    pub case: LyapunovCase,
    #[serde(default = "default_probes")]
    pub probes: u64,
    #[serde(default = "default_probe_radius")]
    pub probe_radius: f64,
    #[serde(default = "default_grid_resolution")]
    pub grid_resolution: usize,
    /// Range `|m| <= h2_bound` of the (H2) check.
    #[serde(default = "default_h2_bound")]
    pub h2_bound: f64,
    #[serde(default = "default_b_candidates")]
    pub b_candidates: Vec<u32>,
    #[serde(default = "default_v_max")]
    pub v_max: f64,
    #[serde(default)]
    pub m_star_rule: MStarRule,
    #[serde(default)]
    pub martingale: Option<MartingaleSection>,
}

fn default_probes() -> u64 {
    100_000
}
fn default_probe_radius() -> f64 {
    100.0
}
fn default_grid_resolution() -> usize {
    64
}
fn default_h2_bound() -> f64 {
    10.0
}
fn default_b_candidates() -> Vec<u32> {
    vec![1, 2, 3]
}
fn default_v_max() -> f64 {
    6.0
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MinoriseMode {
    Bounded,
    Unbounded,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GammaStepSection {
    pub r_in: f64,
    pub n: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MinoriseSection {
    pub mode: MinoriseMode,
    pub n: u64,
    /// Bounded mode: chain parameters.
    #[serde(default)]
    pub bounded: Option<BoundedMinorisation>,
    /// Bounded mode: `[x0, y0, theta0]`.
    #[serde(default)]
    pub start: Option<[f64; 3]>,
    #[serde(default)]
    pub bounded_bins: Option<BoundedBins>,
    #[serde(default)]
    pub gamma_step: Option<GammaStepSection>,
    /// Unbounded mode: core radius and velocity scale.
    #[serde(default)]
    pub r_star: Option<f64>,
    #[serde(default = "one")]
    pub v0: f64,
    #[serde(default)]
    pub unbounded_bins: Option<UnboundedBins>,
}

fn one() -> f64 {
    1.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StationarySection {
    pub t_long: f64,
    pub tol: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RateFitSection {
    pub model: RateModel,
    pub weight: WeightKind,
    pub n: u64,
    pub times: Times,
    pub t_lo: f64,
    pub t_hi: f64,
    /// Fit points must exceed this many noise floors.
    #[serde(default = "default_fit_floor")]
    pub floor_factor: f64,
    /// Envelope domination is checked above this many noise floors.
    #[serde(default = "default_envelope_floor")]
    pub envelope_floor_factor: f64,
    pub stationary: StationarySection,
    /// Exponential model: largest RMS log residual that passes.
    #[serde(default)]
    pub residual_max: Option<f64>,
    /// Algebraic model: largest free log-log slope that passes.
    #[serde(default)]
    pub free_slope_max: Option<f64>,
}

fn default_fit_floor() -> f64 {
    3.0
}
fn default_envelope_floor() -> f64 {
    2.0
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GeometrySection {
    pub r1: f64,
    pub r2: f64,
    pub r3: f64,
    pub alpha: f64,
    #[serde(default)]
    pub start: [f64; 3],
    #[serde(default = "default_iterates")]
    pub iterates: usize,
    /// Largest deviation of an iterate from the orbit circle that passes.
    #[serde(default = "default_circle_tol")]
    pub tol: f64,
    #[serde(default)]
    pub delta_theta_formula: DeltaThetaFormula,
}

fn default_iterates() -> usize {
    1000
}
fn default_circle_tol() -> f64 {
    1e-10
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default)]
    pub experiment: Option<Experiment>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default)]
    pub out: Option<PathBuf>,
    #[serde(default)]
    pub field: Option<ChemoField>,
    #[serde(default)]
    pub rate: Option<RateSpec>,
    #[serde(default)]
    pub kernel: Option<KernelSpec>,
    #[serde(default)]
    pub initial: Option<InitialLaw>,
    #[serde(default)]
    pub ensemble: Option<EnsembleSection>,
    #[serde(default)]
    pub grid: Option<GridConfig>,
    #[serde(default)]
    pub bins: Option<BinsSection>,
    #[serde(default)]
    pub lyapunov: Option<LyapunovSection>,
    #[serde(default)]
    pub minorise: Option<MinoriseSection>,
    #[serde(default)]
    pub rate_fit: Option<RateFitSection>,
    #[serde(default)]
    pub geometry: Option<GeometrySection>,
}

/// Points at a missing section or key.
pub fn require<'a, T>(v: &'a Option<T>, key: &str, exp: Experiment) -> Result<&'a T, CliError> {
    v.as_ref()
        .ok_or_else(|| CliError::Config(format!("`{exp}` needs the `{key}` key; add a [{key}] section or `--set {key}.…`")))
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to a bare string.
fn parse_value(raw: &str) -> toml::Value {
    match toml::from_str::<toml::Table>(&format!("v = {raw}")) {
        Ok(mut t) => t.remove("v").expect("key v was just parsed"),
        Err(_) => toml::Value::String(raw.to_string()),
    }
}

/// Applies one `a.b.c=value` override, creating intermediate tables.
pub fn apply_override(table: &mut toml::Table, spec: &str) -> Result<(), CliError> {
    let (key, raw) = spec
        .split_once('=')
        .ok_or_else(|| CliError::Usage(format!("override `{spec}` is not of the form key=value")))?;
    let path: Vec<&str> = key.trim().split('.').collect();
    if path.iter().any(|p| p.is_empty()) {
        return Err(CliError::Usage(format!("override key `{key}` has an empty component")));
    }
    let mut cur = table;
    for (i, part) in path[..path.len() - 1].iter().enumerate() {
        let entry = cur.entry(part.to_string()).or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = match entry {
            toml::Value::Table(t) => t,
            _ => {
                return Err(CliError::Usage(format!(
                    "override `{key}`: `{}` is not a table",
                    path[..=i].join(".")
                )))
            }
        };
    }
    cur.insert(path[path.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Merged configuration: the parsed file with overrides applied, and its typed view.
#[derive(Clone, Debug)]
pub struct Loaded {
    pub table: toml::Table,
    pub config: RunConfig,
}

pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Loaded, CliError> {
    let mut table = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)
                .map_err(|e| CliError::Config(format!("cannot read config {}: {e}", p.display())))?;
            toml::from_str::<toml::Table>(&text).map_err(|e| CliError::Config(format!("{}: {e}", p.display())))?
        }
        None => toml::Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    let config: RunConfig = toml::Value::Table(table.clone())
        .try_into()
        .map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    Ok(Loaded { table, config })
}
