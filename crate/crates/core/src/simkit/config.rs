//! Scenario description, deserialized from the CLI's TOML files.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::fdi::{Hypothesis, ReconfigurationScope};
use crate::observers::{FreeParameters, ObserverDesign};
use crate::plant::{FaultProfile, VesselParams};

use super::control::ControllerConfig;
use super::disturbance::DisturbanceConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub vessel: Option<VesselParams>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub plant: Option<PlantConfig>,
    #[serde(default)]
    pub bank: BankConfig,
    #[serde(default = "FaultProfile::none")]
    pub faults: FaultProfile,
    #[serde(default)]
    pub fdi: FdiConfig,
    #[serde(default)]
    pub sim: SimConfig,
    #[serde(default)]
    pub outputs: OutputConfig,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            vessel: Some(VesselParams::case_study()),
            plant: None,
            bank: BankConfig::default(),
            faults: FaultProfile::none(),
            fdi: FdiConfig::default(),
            sim: SimConfig::default(),
            outputs: OutputConfig::default(),
        }
    }
}

/// Generic plant given by its matrices, row-major.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlantConfig {
    pub a: Vec<Vec<f64>>,
    pub b: Vec<Vec<f64>>,
    pub c: Vec<Vec<f64>>,
    pub g: Vec<Vec<f64>>,
    /// Input group sizes; one unit per input when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub units: Option<Vec<usize>>,
    /// `E(t) = disturbance_input · b(t)`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub disturbance_input: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub disturbance_bound: f64,
    /// `τ_c = offset + feedback · y`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub offset: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub feedback: Option<Vec<Vec<f64>>>,
}

pub fn matrix_from_rows(name: &'static str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>> {
    let r = rows.len();
    let c = rows.first().map_or(0, |row| row.len());
    if r == 0 || c == 0 {
        return Err(Error::InvalidArgument(format!("matrix {name} is empty")));
    }
    if let Some(bad) = rows.iter().find(|row| row.len() != c) {
        return Err(Error::dims(
            name,
            format!("{c} columns"),
            format!("{} columns", bad.len()),
        ));
    }
    Ok(DMatrix::from_fn(r, c, |i, j| rows[i][j]))
}

pub fn rows_from_matrix(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().cloned().collect()).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum StartPhase {
    #[default]
    Actuator,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BankConfig {
    /// Observer multi-indices over `W`; every `k0`-subset when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<Vec<usize>>>,
    /// Unit sets to test; single units when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<Vec<Vec<usize>>>,
    #[serde(default)]
    pub start: StartPhase,
    #[serde(default = "yes")]
    pub escalate: bool,
    /// Seconds in a cluster bank before rotating to the next one.
    #[serde(default = "default_dwell")]
    pub dwell: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_star: Option<Vec<Vec<f64>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub k_star: Option<Vec<Vec<f64>>>,
    #[serde(default)]
    pub design: ObserverDesign,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub cluster: Vec<ClusterBankConfig>,
}

impl Default for BankConfig {
    fn default() -> Self {
        Self {
            indices: None,
            hypotheses: None,
            start: StartPhase::Actuator,
            escalate: true,
            dwell: default_dwell(),
            h_star: None,
            k_star: None,
            design: ObserverDesign::default(),
            cluster: Vec::new(),
        }
    }
}

impl BankConfig {
    pub fn free_parameters(&self) -> Result<FreeParameters> {
        Ok(FreeParameters {
            h_star: self
                .h_star
                .as_deref()
                .map(|r| matrix_from_rows("h_star", r))
                .transpose()?,
            k_star: self
                .k_star
                .as_deref()
                .map(|r| matrix_from_rows("k_star", r))
                .transpose()?,
        })
    }
}

/// One cluster-level bank, designed over `W*` after ratio constraints.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields)]
pub struct ClusterBankConfig {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indices: Option<Vec<Vec<usize>>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub hypotheses: Option<Vec<Vec<usize>>>,
    /// Ratio coefficients, cluster by cluster; taken from the input snapshot when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub zeta: Option<Vec<f64>>,
}

pub fn parse_hypotheses(lists: &[Vec<usize>]) -> Result<Vec<Hypothesis>> {
    lists.iter().map(|l| Hypothesis::new(l.clone())).collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FdiConfig {
    #[serde(default = "default_rel")]
    pub rel: f64,
    #[serde(default = "default_window")]
    pub window: usize,
    #[serde(default = "default_persistence")]
    pub persistence: usize,
    /// Seconds; five time constants of the slowest designed mode when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub warmup: Option<f64>,
    /// Absolute floors per output channel; calibrated when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub abs: Option<Vec<f64>>,
    #[serde(default)]
    pub calibration: CalibrationConfig,
}

impl Default for FdiConfig {
    fn default() -> Self {
        Self {
            rel: default_rel(),
            window: default_window(),
            persistence: default_persistence(),
            warmup: None,
            abs: None,
            calibration: CalibrationConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CalibrationConfig {
    /// Disturbance seeds of the fault-free calibration runs.
    #[serde(default = "default_calibration_seeds")]
    pub seeds: Vec<u64>,
    /// Multiplier on the largest observed window RMS.
    #[serde(default = "default_factor")]
    pub factor: f64,
    /// Lower bound on every calibrated threshold.
    #[serde(default = "default_floor")]
    pub floor: f64,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            seeds: default_calibration_seeds(),
            factor: default_factor(),
            floor: default_floor(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ObserverInit {
    /// `z = R x`, zero estimation error.
    #[default]
    Exact,
    Zero,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimConfig {
    #[serde(default = "default_dt")]
    pub dt: f64,
    #[serde(default = "default_duration")]
    pub duration: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    /// RK4 steps per sample; inputs are held over the whole sample.
    #[serde(default = "default_substeps")]
    pub substeps: usize,
    /// `(η, ν)` for the vessel; zeros for a generic plant when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub initial_state: Option<Vec<f64>>,
    #[serde(default)]
    pub observer_init: ObserverInit,
    #[serde(default)]
    pub disturbance: DisturbanceConfig,
    #[serde(default)]
    pub reconfiguration: ReconfigurationConfig,
    #[serde(default)]
    pub controller: ControllerConfig,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            dt: default_dt(),
            duration: default_duration(),
            seed: default_seed(),
            substeps: default_substeps(),
            initial_state: None,
            observer_init: ObserverInit::Exact,
            disturbance: DisturbanceConfig::default(),
            reconfiguration: ReconfigurationConfig::default(),
            controller: ControllerConfig::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconfigurationMode {
    #[default]
    Off,
    /// On the first confirmed isolation.
    Auto,
    /// At `t0`, with the isolated units or `fallback_units`.
    FixedTime,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ReconfigurationConfig {
    #[serde(default)]
    pub mode: ReconfigurationMode,
    #[serde(default = "default_t0")]
    pub t0: f64,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub fallback_units: Vec<usize>,
    #[serde(default)]
    pub scope: ReconfigurationScope,
    /// Auxiliary unit groups used with `scope = "auxiliary"`.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub groups: Vec<Vec<usize>>,
}

impl Default for ReconfigurationConfig {
    fn default() -> Self {
        Self {
            mode: ReconfigurationMode::Off,
            t0: default_t0(),
            fallback_units: Vec::new(),
            scope: ReconfigurationScope::Isolated,
            groups: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    #[serde(default = "default_out_dir")]
    pub dir: String,
    #[serde(default = "default_trace")]
    pub trace: String,
    #[serde(default = "default_decisions")]
    pub decisions: String,
    /// Residual files are named `<prefix><h>.csv`.
    #[serde(default = "default_residual_prefix")]
    pub residual_prefix: String,
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self {
            dir: default_out_dir(),
            trace: default_trace(),
            decisions: default_decisions(),
            residual_prefix: default_residual_prefix(),
        }
    }
}

fn yes() -> bool {
    true
}
fn default_dwell() -> f64 {
    20.0
}
fn default_rel() -> f64 {
    1e-6
}
fn default_window() -> usize {
    200
}
fn default_persistence() -> usize {
    3
}
fn default_calibration_seeds() -> Vec<u64> {
    (1..=8).collect()
}
fn default_factor() -> f64 {
    3.0
}
fn default_floor() -> f64 {
    1e-6
}
fn default_dt() -> f64 {
    0.01
}
fn default_duration() -> f64 {
    200.0
}
fn default_substeps() -> usize {
    1
}

fn default_seed() -> u64 {
    42
}
fn default_t0() -> f64 {
    180.0
}
fn default_out_dir() -> String {
    "out".into()
}
fn default_trace() -> String {
    "trace.csv".into()
}
fn default_decisions() -> String {
    "decisions.csv".into()
}
fn default_residual_prefix() -> String {
    "residual_".into()
}
