//! Front end of the `cofd` binary: scenario files, observer-bank design
//! reports, simulation runs with CSV export, offline replay of the isolation
//! logic from residual files, and seed sweeps.

mod output;
mod replay;

use std::fs;
use std::path::{Path, PathBuf};

use cofd::matrixlab::{eigenvalues, numerical_rank, uniform_sub_rank, RANK_TOL};
use cofd::observers::{InvariantReport, SynthesisFailure};
use cofd::simkit::{
    build_phase, initial_allocation, phase_specs, resolve_policy, run_scenario, summarize,
    ScenarioConfig, Summary, System, TraceLog,
};
use nalgebra::Complex;
use thiserror::Error;

pub use output::{
    format_float, write_decisions, write_design, write_residuals, write_sweep, write_trace,
    DECISIONS_HEADER,
};
pub use replay::{read_residuals, replay, ResidualLog};

/// Environment variable overriding the output directory.
pub const OUT_DIR_ENV: &str = "COFD_OUT_DIR";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("design failed: {0}")]
    Design(String),
    #[error("{0}")]
    Runtime(String),
    #[error("schema mismatch in {file}: {reason}")]
    SchemaMismatch { file: String, reason: String },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
}

impl CliError {
    /// 1 usage, 2 design failure, 3 runtime failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Design(_) => 2,
            _ => 3,
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub(crate) fn schema(file: &Path, reason: impl Into<String>) -> Self {
        CliError::SchemaMismatch {
            file: file.display().to_string(),
            reason: reason.into(),
        }
    }
}

impl From<cofd::Error> for CliError {
    fn from(e: cofd::Error) -> Self {
        use cofd::Error as E;
        match e {
            E::Step { .. } | E::NonFinite(_) | E::WarmupIncomplete { .. } => {
                CliError::Runtime(e.to_string())
            }
            E::RankConditionFailed { .. }
            | E::NotHurwitz { .. }
            | E::EmptyBank(_)
            | E::RankDeficient { .. }
            | E::ReducedRankDeficient { .. }
            | E::InsufficientRedundancy { .. }
            | E::MissingCoefficients { .. }
            | E::SingularInertia => CliError::Design(e.to_string()),
            _ => CliError::Usage(e.to_string()),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

pub fn parse_config(text: &str) -> Result<ScenarioConfig> {
    toml::from_str(text).map_err(|e| CliError::Usage(format!("invalid config: {e}")))
}

pub fn load_config(path: &Path) -> Result<ScenarioConfig> {
    let text = fs::read_to_string(path)
        .map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

pub fn render_config(cfg: &ScenarioConfig) -> Result<String> {
    toml::to_string(cfg).map_err(|e| CliError::Runtime(format!("cannot serialize config: {e}")))
}

/// `--out`, then `$COFD_OUT_DIR`, then the config's `outputs.dir`.
pub fn output_dir(flag: Option<&Path>, cfg: &ScenarioConfig) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| {
            std::env::var_os(OUT_DIR_ENV)
                .filter(|v| !v.is_empty())
                .map(PathBuf::from)
        })
        .unwrap_or_else(|| PathBuf::from(&cfg.outputs.dir))
}

pub fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))
}

#[derive(Debug, Clone)]
pub struct ObserverReport {
    pub index: Vec<usize>,
    pub spectrum: Vec<Complex<f64>>,
    pub rank_w: usize,
    pub rank_cw: usize,
    pub invariants: InvariantReport,
}

impl ObserverReport {
    pub fn rank_ok(&self) -> bool {
        self.rank_w == self.index.len() && self.rank_cw == self.index.len()
    }

    /// `−max Re λ(F)`
    pub fn hurwitz_margin(&self) -> f64 {
        -self.invariants.spectral_abscissa
    }

    pub fn passes(&self) -> bool {
        self.rank_ok() && self.invariants.passes()
    }
}

#[derive(Debug, Clone)]
pub struct BankReport {
    pub label: String,
    /// Ratio coefficients of a cluster bank, cluster by cluster.
    pub ratios: Vec<f64>,
    pub observers: Vec<ObserverReport>,
    pub failures: Vec<SynthesisFailure>,
}

#[derive(Debug, Clone)]
pub struct DesignReport {
    /// Uniform sub-rank of `W = BG`.
    pub sub_rank: usize,
    pub banks: Vec<BankReport>,
}

impl DesignReport {
    pub fn passes(&self) -> bool {
        self.banks
            .iter()
            .all(|b| b.failures.is_empty() && b.observers.iter().all(ObserverReport::passes))
    }

    pub fn render(&self) -> String {
        let mut s = format!("uniform sub-rank of W: {}\n", self.sub_rank);
        for bank in &self.banks {
            s += &format!("bank {} ({} observers)", bank.label, bank.observers.len());
            if !bank.ratios.is_empty() {
                s += &format!(", zeta = {:?}", bank.ratios);
            }
            s.push('\n');
            for o in &bank.observers {
                let mut re: Vec<f64> = o.spectrum.iter().map(|c| c.re).collect();
                re.sort_by(f64::total_cmp);
                let inv = &o.invariants;
                s += &format!(
                    "  J = {:?}: {} | eig(F) = {} | |RW_J - S| = {:.2e} | margin {:.3} | rank W_J {} CW_J {} | R {:.1e} F {:.1e} K {:.1e} FS {:.1e}\n",
                    o.index,
                    if o.passes() { "pass" } else { "FAIL" },
                    re.iter().map(|v| format!("{v:.4}")).collect::<Vec<_>>().join(" "),
                    inv.section,
                    o.hurwitz_margin(),
                    o.rank_w,
                    o.rank_cw,
                    inv.r_identity,
                    inv.f_identity,
                    inv.k_identity,
                    inv.eigen,
                );
            }
            for f in &bank.failures {
                s += &format!("  J = {:?}: FAIL | {}\n", f.indices, f.error);
            }
        }
        s
    }
}

/// Designs every configured bank and checks each observer.
pub fn cmd_design(cfg: &ScenarioConfig) -> Result<DesignReport> {
    let system = System::from_config(cfg)?;
    let free = cfg.bank.free_parameters()?;
    let u0 = initial_allocation(&system, &cfg.sim.controller)?;
    let mut banks = Vec::new();
    for spec in phase_specs(cfg, &system.units)? {
        let phase = build_phase(&system, &spec, &cfg.bank.design, &free, &u0)
            .map_err(|e| CliError::Design(format!("{} bank: {e}", spec.label)))?;
        let c = system.plant.c();
        let observers = phase
            .bank
            .observers
            .iter()
            .map(|o| ObserverReport {
                index: o.index.indices().to_vec(),
                spectrum: eigenvalues(&o.f),
                rank_w: numerical_rank(&o.w_j, RANK_TOL).rank,
                rank_cw: numerical_rank(&(c * &o.w_j), RANK_TOL).rank,
                invariants: o.invariants(),
            })
            .collect();
        banks.push(BankReport {
            label: spec.label.clone(),
            ratios: phase.ratios.flat(),
            observers,
            failures: phase.bank.failures.clone(),
        });
    }
    Ok(DesignReport {
        sub_rank: uniform_sub_rank(system.plant.w(), RANK_TOL),
        banks,
    })
}

#[derive(Debug, Clone)]
pub struct SimulationOutput {
    pub trace: TraceLog,
    pub summary: Summary,
    /// The scenario with calibrated thresholds and overrides filled in.
    pub resolved: ScenarioConfig,
    pub files: Vec<PathBuf>,
}

/// Config with the absolute thresholds resolved, so later runs skip calibration.
pub fn resolve(cfg: &ScenarioConfig) -> Result<ScenarioConfig> {
    let system = System::from_config(cfg)?;
    let policy = resolve_policy(cfg, &system)?;
    let mut resolved = cfg.clone();
    resolved.fdi.abs = Some(policy.abs);
    Ok(resolved)
}

/// Runs the scenario and writes the trace, decision and residual files plus `resolved.toml`.
pub fn cmd_simulate(cfg: &ScenarioConfig, out: &Path) -> Result<SimulationOutput> {
    let resolved = resolve(cfg)?;
    let trace = run_scenario(&resolved)?;
    ensure_dir(out)?;
    let names = &resolved.outputs;
    let mut files = vec![
        write_trace(&trace, &out.join(&names.trace))?,
        write_decisions(&trace.decisions, &out.join(&names.decisions))?,
    ];
    files.extend(write_residuals(&trace, out, &names.residual_prefix)?);
    let path = out.join("resolved.toml");
    fs::write(&path, render_config(&resolved)?).map_err(|e| CliError::io(&path, e))?;
    files.push(path);
    Ok(SimulationOutput {
        summary: summarize(&trace),
        trace,
        resolved,
        files,
    })
}

fn opt_time(t: Option<f64>) -> String {
    t.map_or("none".into(), |t| format!("{t:.2} s"))
}

pub fn render_summary(s: &Summary) -> String {
    let isolated = if s.isolated.is_empty() {
        "none".to_string()
    } else {
        s.isolated
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(";")
    };
    let mut out = format!(
        "detection time: {}\nisolation time: {}\nisolated: {isolated}\n",
        opt_time(s.detection_time),
        opt_time(s.isolation_time)
    );
    if let Some(t) = s.escalation_time {
        out += &format!("escalated at: {t:.2} s\n");
    }
    if let Some(t) = s.reconfiguration_time {
        out += &format!(
            "reconfigured at: {t:.2} s without units {:?}\n",
            s.reconfigured_units
        );
    }
    if let Some(rms) = &s.tracking_rms {
        out += &format!(
            "post-reconfiguration tracking RMS (surge, sway): {:.4e}, {:.4e} m/s\n",
            rms[0], rms[1]
        );
    }
    out
}

/// Replays the isolation logic on the residual files in `input` and writes
/// the decision log to `out`. Without configured thresholds, those of
/// `input/resolved.toml` are used when present.
pub fn cmd_analyze(
    cfg: &ScenarioConfig,
    input: &Path,
    out: &Path,
) -> Result<Vec<cofd::simkit::DecisionRecord>> {
    let mut cfg = cfg.clone();
    let resolved = input.join("resolved.toml");
    if cfg.fdi.abs.is_none() && resolved.is_file() {
        cfg.fdi.abs = load_config(&resolved)?.fdi.abs;
    }
    let log = read_residuals(input, &cfg.outputs.residual_prefix)?;
    let decisions = replay(&cfg, &log)?;
    ensure_dir(out)?;
    write_decisions(&decisions, &out.join(&cfg.outputs.decisions))?;
    Ok(decisions)
}

/// Runs the scenario once per seed with thresholds calibrated once; writes `sweep.csv`.
pub fn sweep(cfg: &ScenarioConfig, seeds: &[u64], out: &Path) -> Result<Vec<(u64, Summary)>> {
    let mut resolved = resolve(cfg)?;
    let mut rows = Vec::with_capacity(seeds.len());
    for &seed in seeds {
        resolved.sim.seed = seed;
        let trace = run_scenario(&resolved)?;
        rows.push((seed, summarize(&trace)));
    }
    ensure_dir(out)?;
    write_sweep(&rows, &out.join("sweep.csv"))?;
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn core_errors_map_to_exit_codes() {
        let design = cofd::Error::RankConditionFailed {
            indices: vec![2, 4, 1],
            rank_w: 2,
            rank_cw: 2,
            required: 3,
        };
        assert_eq!(CliError::from(design.clone()).exit_code(), 2);
        let step = cofd::Error::Step {
            step: 4,
            time: 0.04,
            source: Box::new(design),
        };
        assert_eq!(CliError::from(step).exit_code(), 3);
        assert_eq!(
            CliError::from(cofd::Error::NonFinite("state")).exit_code(),
            3
        );
        assert_eq!(
            CliError::from(cofd::Error::InvalidArgument("dt".into())).exit_code(),
            1
        );
    }

    #[test]
    fn summary_lists_every_event() {
        let s = Summary {
            detection_time: Some(6.99),
            isolation_time: Some(21.98),
            isolated: vec![cofd::fdi::Hypothesis::new(vec![2, 5]).unwrap()],
            escalation_time: Some(10.99),
            reconfiguration_time: None,
            reconfigured_units: vec![],
            tracking_rms: None,
        };
        let text = render_summary(&s);
        assert!(text.contains("isolated: T2+T5"));
        assert!(text.contains("escalated at: 10.99 s"));
        assert!(!text.contains("reconfigured"));
    }
}
