//! Fixed-step closed-loop simulation: plant, allocation, observer bank, FDI,
//! escalation to cluster residuals and reconfiguration.
//!
//! Plant and observers are advanced together as one augmented state with the
//! classical RK4 scheme; the allocated input `u` and the observer input
//! `v = G u` are held over each step while `Δ(t)` and the disturbance are
//! evaluated at the stage times.

mod config;
mod control;
mod disturbance;

pub use config::{
    matrix_from_rows, parse_hypotheses, rows_from_matrix, BankConfig, CalibrationConfig,
    ClusterBankConfig, FdiConfig, ObserverInit, OutputConfig, PlantConfig, ReconfigurationConfig,
    ReconfigurationMode, ScenarioConfig, SimConfig, StartPhase,
};
pub use control::{commanded_effect, CommandLaw, Controller, ControllerConfig, PidState};
pub use disturbance::{DisturbanceConfig, DisturbanceModel};

use nalgebra::{DMatrix, DVector};

use crate::allocation::{Allocator, RatioConstraintSet};
use crate::error::{Error, Result};
use crate::fdi::{
    build_signature_table, escalate_to_cluster_mode, reallocate_units, reconfiguration_units,
    single_unit_hypotheses, window_rms, Decision, EngineConfig, FdiEngine, Hypothesis,
    SignatureTable, Status, ThresholdPolicy, ZetaPolicy,
};
use crate::observers::{
    build_bank, BankMode, FreeParameters, IndexSource, ObserverBank, ObserverDesign,
};
use crate::plant::{fault_diagonal, ClusterSpec, FaultProfile, LtiPlant, VesselModel};

/// Classical four-stage Runge–Kutta step.
pub fn rk4_step<F>(mut f: F, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> DVector<f64>,
{
    rk4_try_step(|t, x| Ok(f(t, x)), x, t, dt)
}

/// [`rk4_step`] for a fallible derivative.
pub fn rk4_try_step<F>(mut f: F, x: &DVector<f64>, t: f64, dt: f64) -> Result<DVector<f64>>
where
    F: FnMut(f64, &DVector<f64>) -> Result<DVector<f64>>,
{
    if !(dt > 0.0) || !dt.is_finite() {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    let half = 0.5 * dt;
    let k1 = f(t, x)?;
    let k2 = f(t + half, &(x + &k1 * half))?;
    let k3 = f(t + half, &(x + &k2 * half))?;
    let k4 = f(t + dt, &(x + &k3 * dt))?;
    let next = x + (k1 + k2 * 2.0 + k3 * 2.0 + k4) * (dt / 6.0);
    if next.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("rk4 step"));
    }
    Ok(next)
}

/// Plant, unit grouping, disturbance input and command law of a scenario.
#[derive(Debug, Clone, PartialEq)]
pub struct System {
    pub plant: LtiPlant,
    pub units: ClusterSpec,
    /// `n × d`; `d = 0` means no disturbance channel.
    pub disturbance_input: DMatrix<f64>,
    pub disturbance_bound: f64,
    pub law: CommandLaw,
    pub initial_state: DVector<f64>,
    pub is_vessel: bool,
}

impl System {
    pub fn from_config(cfg: &ScenarioConfig) -> Result<Self> {
        let mut system = match (&cfg.vessel, &cfg.plant) {
            (Some(_), Some(_)) => {
                return Err(Error::InvalidArgument(
                    "configure either a vessel or a generic plant, not both".into(),
                ))
            }
            (None, Some(p)) => Self::generic(p)?,
            (vessel, None) => Self::vessel(vessel.clone().unwrap_or_default())?,
        };
        if let Some(x0) = &cfg.sim.initial_state {
            if x0.len() != system.plant.n() {
                return Err(Error::dims("initial state", system.plant.n(), x0.len()));
            }
            system.initial_state = DVector::from_column_slice(x0);
        }
        Ok(system)
    }

    fn vessel(params: crate::plant::VesselParams) -> Result<Self> {
        let model = VesselModel::new(params)?;
        let d = model.params.damping_matrix();
        let m = model.params.inertia_matrix();
        Ok(Self {
            law: CommandLaw::Vessel {
                damping: DMatrix::from_fn(3, 3, |i, j| d[(i, j)]),
                inertia: DVector::from_fn(3, |i, _| m[(i, i)]),
                heading_ref: model.params.heading_ref,
            },
            disturbance_bound: model.params.disturbance_bound,
            initial_state: DVector::from_vec(vec![1.0, 1.0, 0.0, 2.2, 1.9, 0.0]),
            plant: model.plant,
            units: model.thrusters,
            disturbance_input: model.disturbance_input,
            is_vessel: true,
        })
    }

    fn generic(p: &PlantConfig) -> Result<Self> {
        let plant = LtiPlant::new(
            matrix_from_rows("a", &p.a)?,
            matrix_from_rows("b", &p.b)?,
            matrix_from_rows("c", &p.c)?,
            matrix_from_rows("g", &p.g)?,
        )?;
        let (n, k, m, q) = (plant.n(), plant.k(), plant.m(), plant.p());
        let units = match &p.units {
            Some(sizes) => ClusterSpec::from_sizes(sizes.clone())?,
            None => ClusterSpec::singletons(m),
        };
        if units.inputs() != m {
            return Err(Error::dims("units", m, units.inputs()));
        }
        let disturbance_input = match &p.disturbance_input {
            Some(rows) => matrix_from_rows("disturbance_input", rows)?,
            None => DMatrix::zeros(n, 0),
        };
        if disturbance_input.nrows() != n {
            return Err(Error::dims(
                "disturbance_input rows",
                n,
                disturbance_input.nrows(),
            ));
        }
        let offset = p
            .offset
            .as_ref()
            .map_or(DVector::zeros(k), |o| DVector::from_column_slice(o));
        let feedback = match &p.feedback {
            Some(rows) => matrix_from_rows("feedback", rows)?,
            None => DMatrix::zeros(k, q),
        };
        if offset.len() != k || feedback.shape() != (k, q) {
            return Err(Error::dims(
                "command law",
                format!("{k} effects from {q} outputs"),
                format!(
                    "{} offsets, {}x{} feedback",
                    offset.len(),
                    feedback.nrows(),
                    feedback.ncols()
                ),
            ));
        }
        Ok(Self {
            units,
            disturbance_input,
            disturbance_bound: p.disturbance_bound,
            law: CommandLaw::Linear { offset, feedback },
            initial_state: DVector::zeros(n),
            plant,
            is_vessel: false,
        })
    }

    /// Velocity setpoint used after reconfiguration (vessel only).
    pub fn velocity_reference(&self, gains: &ControllerConfig) -> Option<DVector<f64>> {
        if !self.is_vessel {
            return None;
        }
        Some(match &gains.velocity_reference {
            Some(v) => DVector::from_column_slice(v),
            None => self.initial_state.rows(3, 3).clone_owned(),
        })
    }
}

/// Bank layout of one FDI phase; phase 0 is the actuator bank.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseSpec {
    pub label: String,
    pub indices: Option<Vec<Vec<usize>>>,
    pub hypotheses: Vec<Hypothesis>,
    /// `None` for the actuator bank.
    pub zeta: Option<ZetaPolicy>,
}

pub fn phase_specs(cfg: &ScenarioConfig, units: &ClusterSpec) -> Result<Vec<PhaseSpec>> {
    let hyps = |lists: &Option<Vec<Vec<usize>>>| match lists {
        Some(l) => parse_hypotheses(l),
        None => Ok(single_unit_hypotheses(units)),
    };
    let mut specs = vec![PhaseSpec {
        label: "actuator".into(),
        indices: cfg.bank.indices.clone(),
        hypotheses: hyps(&cfg.bank.hypotheses)?,
        zeta: None,
    }];
    for (i, c) in cfg.bank.cluster.iter().enumerate() {
        specs.push(PhaseSpec {
            label: format!("cluster{}", i + 1),
            indices: c.indices.clone(),
            hypotheses: hyps(&c.hypotheses)?,
            zeta: Some(match &c.zeta {
                Some(z) => ZetaPolicy::Explicit(z.clone()),
                None => ZetaPolicy::Snapshot,
            }),
        });
    }
    Ok(specs)
}

/// Bank, signature table and allocation law of the running phase.
#[derive(Debug, Clone)]
pub struct ActivePhase {
    pub bank: ObserverBank,
    pub table: SignatureTable,
    pub allocator: Allocator,
    pub ratios: RatioConstraintSet,
}

/// Designs the bank of `spec`; cluster phases take their ratios from `u`
/// unless coefficients are configured.
pub fn build_phase(
    system: &System,
    spec: &PhaseSpec,
    design: &ObserverDesign,
    free: &FreeParameters,
    u: &DVector<f64>,
) -> Result<ActivePhase> {
    let g = system.plant.g();
    let nominal = || -> Result<_> {
        Ok((
            BankMode::Actuator,
            RatioConstraintSet::empty(),
            Allocator::nominal(g)?,
        ))
    };
    let (mode, ratios, allocator) = match &spec.zeta {
        None => nominal()?,
        Some(policy) => {
            let plan = escalate_to_cluster_mode(
                g,
                u,
                &system.units,
                policy,
                spec.indices.as_deref().unwrap_or(&[]),
            )?;
            match plan.mode {
                None => nominal()?,
                Some(mode) => {
                    let allocator = Allocator::with_ratios(g, &system.units, &plan.ratios)?;
                    (mode, plan.ratios, allocator)
                }
            }
        }
    };
    let source = spec
        .indices
        .clone()
        .map_or(IndexSource::Auto, IndexSource::Explicit);
    let bank = build_bank(&system.plant, mode, &source, design, free)?;
    let table = build_signature_table(&bank, &system.units, &spec.hypotheses)?;
    Ok(ActivePhase {
        bank,
        table,
        allocator,
        ratios,
    })
}

/// A stretch of the run served by one observer bank.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    /// First step whose residuals come from this bank.
    pub start_step: usize,
    pub phase: usize,
    pub label: String,
    pub bank: ObserverBank,
    pub ratios: RatioConstraintSet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DecisionRecord {
    pub phase: usize,
    pub bank: String,
    pub decision: Decision,
    /// Confirmed status after this window, if any.
    pub confirmed: Option<Status>,
    /// This window confirmed a new verdict.
    pub fresh: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Escalated {
        time: f64,
        to: String,
        zeta: Vec<f64>,
    },
    Reconfigured {
        time: f64,
        units: Vec<usize>,
        zeroed: Vec<usize>,
    },
}

/// Everything recorded on the uniform time grid `t_k = k·dt`, `k = 0..=steps`.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceLog {
    pub dt: f64,
    pub times: Vec<f64>,
    pub states: Vec<DVector<f64>>,
    pub inputs: Vec<DVector<f64>>,
    /// `τ_c`
    pub commanded: Vec<DVector<f64>>,
    /// `G u`
    pub allocated: Vec<DVector<f64>>,
    /// `G Δ u`
    pub delivered: Vec<DVector<f64>>,
    pub exact: Vec<bool>,
    pub fault: Vec<DVector<f64>>,
    /// `b(t)`
    pub disturbance: Vec<DVector<f64>>,
    /// Index into `segments` of the bank that produced each row's residuals.
    pub segment: Vec<usize>,
    /// Confirmed status after each sample.
    pub status: Vec<Option<Status>>,
    pub residuals: Vec<Vec<DVector<f64>>>,
    pub estimates: Vec<Vec<DVector<f64>>>,
    pub segments: Vec<Segment>,
    pub decisions: Vec<DecisionRecord>,
    pub events: Vec<Event>,
    pub thresholds: Option<Vec<f64>>,
    pub warmup: f64,
    pub velocity_reference: Option<DVector<f64>>,
    pub units: ClusterSpec,
}

impl TraceLog {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn reconfiguration(&self) -> Option<(f64, &[usize], &[usize])> {
        self.events.iter().find_map(|e| match e {
            Event::Reconfigured {
                time,
                units,
                zeroed,
            } => Some((*time, units.as_slice(), zeroed.as_slice())),
            _ => None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Summary {
    pub detection_time: Option<f64>,
    pub isolation_time: Option<f64>,
    pub isolated: Vec<Hypothesis>,
    pub escalation_time: Option<f64>,
    pub reconfiguration_time: Option<f64>,
    pub reconfigured_units: Vec<usize>,
    /// Surge/sway velocity error RMS over `[t_r + 30, t_r + 100]` s.
    pub tracking_rms: Option<Vec<f64>>,
}

/// RMS of `ν_i − ν_ref,i` for surge and sway over `[from, to]`.
pub fn tracking_error_rms(
    trace: &TraceLog,
    reference: &DVector<f64>,
    from: f64,
    to: f64,
) -> Option<Vec<f64>> {
    let rows: Vec<usize> = (0..trace.len())
        .filter(|&i| trace.times[i] >= from - 1e-9 && trace.times[i] <= to + 1e-9)
        .collect();
    if rows.is_empty() {
        return None;
    }
    Some(
        (0..2)
            .map(|c| {
                let sq: f64 = rows
                    .iter()
                    .map(|&i| (trace.states[i][3 + c] - reference[c]).powi(2))
                    .sum();
                (sq / rows.len() as f64).sqrt()
            })
            .collect(),
    )
}

pub fn summarize(trace: &TraceLog) -> Summary {
    let fresh = || trace.decisions.iter().filter(|d| d.fresh);
    let detection_time = fresh()
        .find(|d| d.decision.status != Status::Nominal)
        .map(|d| d.decision.time);
    let first_isolation = fresh().find(|d| d.decision.status == Status::Isolated);
    let escalation_time = trace.events.iter().find_map(|e| match e {
        Event::Escalated { time, .. } => Some(*time),
        _ => None,
    });
    let reconf = trace.reconfiguration();
    let tracking_rms = match (reconf, &trace.velocity_reference) {
        (Some((t, ..)), Some(reference)) => {
            tracking_error_rms(trace, reference, t + 30.0, t + 100.0)
        }
        _ => None,
    };
    Summary {
        detection_time,
        isolation_time: first_isolation.map(|d| d.decision.time),
        isolated: first_isolation
            .map(|d| d.decision.hypotheses.clone())
            .unwrap_or_default(),
        escalation_time,
        reconfiguration_time: reconf.map(|r| r.0),
        reconfigured_units: reconf.map(|r| r.1.to_vec()).unwrap_or_default(),
        tracking_rms,
    }
}

/// Knobs that differ between a scenario run and a calibration run.
#[derive(Debug, Clone)]
struct RunOptions {
    policy: Option<ThresholdPolicy>,
    phase: Option<usize>,
    faults: bool,
    reconfigure: bool,
    seed: u64,
}

/// Runs the scenario, calibrating absolute thresholds first when none are configured.
pub fn run_scenario(cfg: &ScenarioConfig) -> Result<TraceLog> {
    let system = System::from_config(cfg)?;
    let policy = resolve_policy(cfg, &system)?;
    Runner::new(
        cfg,
        &system,
        RunOptions {
            policy: Some(policy),
            phase: None,
            faults: true,
            reconfigure: true,
            seed: cfg.sim.seed,
        },
    )?
    .run()
}

/// Nominal allocation of the first command; the input snapshot of a cluster start.
pub fn initial_allocation(system: &System, gains: &ControllerConfig) -> Result<DVector<f64>> {
    let y0 = system.plant.c() * &system.initial_state;
    let tau = Controller::new(system.law.clone(), gains.clone()).command(&y0)?;
    Ok(Allocator::nominal(system.plant.g())?.allocate(&tau)?.u)
}

pub fn warmup_time(cfg: &ScenarioConfig) -> f64 {
    cfg.fdi.warmup.unwrap_or_else(|| cfg.bank.design.warmup())
}

/// Threshold policy with configured or calibrated absolute floors.
pub fn resolve_policy(cfg: &ScenarioConfig, system: &System) -> Result<ThresholdPolicy> {
    let abs = match &cfg.fdi.abs {
        Some(abs) => {
            if abs.len() != system.plant.p() {
                return Err(Error::dims("fdi.abs", system.plant.p(), abs.len()));
            }
            abs.clone()
        }
        None => calibrate_with(cfg, system)?,
    };
    let policy = ThresholdPolicy {
        abs,
        rel: cfg.fdi.rel,
        window: cfg.fdi.window,
        persistence: cfg.fdi.persistence,
    };
    policy.validate()?;
    Ok(policy)
}

/// Absolute thresholds from fault-free runs: `max(factor · max window RMS, floor)`
/// per output channel, over every calibration seed and every configured bank.
pub fn calibrate_thresholds(cfg: &ScenarioConfig) -> Result<Vec<f64>> {
    calibrate_with(cfg, &System::from_config(cfg)?)
}

fn calibrate_with(cfg: &ScenarioConfig, system: &System) -> Result<Vec<f64>> {
    let cal = &cfg.fdi.calibration;
    if !(cal.factor > 0.0 && cal.floor > 0.0) {
        return Err(Error::InvalidArgument(
            "calibration factor and floor must be positive".into(),
        ));
    }
    let mut seeds = cal.seeds.clone();
    if seeds.is_empty() {
        return Err(Error::InvalidArgument("no calibration seeds".into()));
    }
    if !cfg.sim.disturbance.enabled {
        // the seed only drives the disturbance
        seeds.truncate(1);
    }
    let phases = 1 + cfg.bank.cluster.len();
    let window = cfg.fdi.window.max(1);
    let warmup = warmup_time(cfg);
    let mut peak = vec![0.0f64; system.plant.p()];
    for &seed in &seeds {
        for phase in 0..phases {
            let trace = Runner::new(
                cfg,
                system,
                RunOptions {
                    policy: None,
                    phase: Some(phase),
                    faults: false,
                    reconfigure: false,
                    seed,
                },
            )?
            .run()?;
            let first = trace
                .times
                .iter()
                .position(|&t| t >= warmup - 1e-9)
                .unwrap_or(trace.len());
            let observers = trace.residuals.first().map_or(0, |r| r.len());
            for h in 0..observers {
                let series: Vec<DVector<f64>> = trace.residuals[first..]
                    .iter()
                    .map(|r| r[h].clone())
                    .collect();
                for chunk in series.chunks_exact(window) {
                    let (rms, _) = window_rms(chunk);
                    for (p, r) in peak.iter_mut().zip(rms.iter()) {
                        *p = p.max(*r);
                    }
                }
            }
        }
    }
    log::info!("calibrated residual peaks {peak:?}");
    Ok(peak
        .into_iter()
        .map(|p| (cal.factor * p).max(cal.floor))
        .collect())
}

struct Runner<'a> {
    cfg: &'a ScenarioConfig,
    system: &'a System,
    opts: RunOptions,
    specs: Vec<PhaseSpec>,
    free: FreeParameters,
    faults: FaultProfile,
    disturbance: DisturbanceModel,
    controller: Controller,
    dt: f64,
    steps: usize,
    x: DVector<f64>,
    zs: Vec<DVector<f64>>,
    active: ActivePhase,
    allocator: Allocator,
    engine: Option<FdiEngine>,
    trace: TraceLog,
    reconfigured: bool,
    fixed_time_done: bool,
    last_isolated: Option<Decision>,
    u_prev: DVector<f64>,
}

impl<'a> Runner<'a> {
    fn new(cfg: &'a ScenarioConfig, system: &'a System, opts: RunOptions) -> Result<Self> {
        let sim = &cfg.sim;
        if !(sim.dt > 0.0 && sim.dt.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "dt must be positive, got {}",
                sim.dt
            )));
        }
        if sim.substeps == 0 {
            return Err(Error::InvalidArgument("substeps must be at least 1".into()));
        }
        let warmup = warmup_time(cfg);
        if !(sim.duration > warmup) {
            return Err(Error::InvalidArgument(format!(
                "duration {} s does not exceed the warm-up {warmup} s",
                sim.duration
            )));
        }
        let steps = (sim.duration / sim.dt).round() as usize;
        let plant = &system.plant;
        let specs = phase_specs(cfg, &system.units)?;
        let free = cfg.bank.free_parameters()?;
        let faults = if opts.faults {
            cfg.faults.clone()
        } else {
            FaultProfile::none()
        };
        fault_diagonal(&faults, Some(&system.units), plant.m(), 0.0)?;
        let disturbance = DisturbanceModel::new(
            &sim.disturbance,
            system.disturbance_bound,
            system.disturbance_input.ncols(),
            opts.seed,
        )?;
        let controller = Controller::new(system.law.clone(), sim.controller.clone());
        if system.law.effects() != plant.k() {
            return Err(Error::dims(
                "command law effects",
                plant.k(),
                system.law.effects(),
            ));
        }
        let x = system.initial_state.clone();

        let phase = opts.phase.unwrap_or(match cfg.bank.start {
            StartPhase::Actuator => 0,
            StartPhase::Cluster => 1,
        });
        if phase >= specs.len() {
            return Err(Error::InvalidArgument(format!(
                "phase {phase} requested but only {} bank(s) configured",
                specs.len()
            )));
        }
        let u_prev = initial_allocation(system, &sim.controller)?;
        let active = build_phase(system, &specs[phase], &cfg.bank.design, &free, &u_prev)?;
        let zs = initial_observer_states(&active.bank, &x, sim.observer_init);
        let engine = match &opts.policy {
            Some(policy) => Some(FdiEngine::new(
                EngineConfig {
                    policy: policy.clone(),
                    warmup,
                    phases: specs.len(),
                    escalate: cfg.bank.escalate && opts.phase.is_none(),
                    dwell: cfg.bank.dwell,
                },
                active.table.clone(),
                phase,
                0.0,
            )?),
            None => None,
        };
        let trace = TraceLog {
            dt: sim.dt,
            times: Vec::with_capacity(steps + 1),
            states: Vec::with_capacity(steps + 1),
            inputs: Vec::with_capacity(steps + 1),
            commanded: Vec::with_capacity(steps + 1),
            allocated: Vec::with_capacity(steps + 1),
            delivered: Vec::with_capacity(steps + 1),
            exact: Vec::with_capacity(steps + 1),
            fault: Vec::with_capacity(steps + 1),
            disturbance: Vec::with_capacity(steps + 1),
            segment: Vec::with_capacity(steps + 1),
            status: Vec::with_capacity(steps + 1),
            residuals: Vec::with_capacity(steps + 1),
            estimates: Vec::with_capacity(steps + 1),
            segments: vec![Segment {
                start_step: 0,
                phase,
                label: specs[phase].label.clone(),
                bank: active.bank.clone(),
                ratios: active.ratios.clone(),
            }],
            decisions: Vec::new(),
            events: Vec::new(),
            thresholds: opts.policy.as_ref().map(|p| p.abs.clone()),
            warmup,
            velocity_reference: system.velocity_reference(&sim.controller),
            units: system.units.clone(),
        };
        Ok(Self {
            cfg,
            system,
            opts,
            specs,
            free,
            faults,
            disturbance,
            controller,
            dt: sim.dt,
            steps,
            x,
            zs,
            allocator: active.allocator.clone(),
            active,
            engine,
            trace,
            reconfigured: false,
            fixed_time_done: false,
            last_isolated: None,
            u_prev,
        })
    }

    fn run(mut self) -> Result<TraceLog> {
        for step in 0..=self.steps {
            let t = step as f64 * self.dt;
            self.step(step, t).map_err(|e| e.at_step(step, t))?;
        }
        Ok(self.trace)
    }

    fn step(&mut self, step: usize, t: f64) -> Result<()> {
        let plant = &self.system.plant;
        let y = plant.c() * &self.x;
        let observers = &self.active.bank.observers;
        let residuals: Vec<DVector<f64>> = observers
            .iter()
            .zip(&self.zs)
            .map(|(o, z)| o.residual(z, &y))
            .collect();
        let estimates: Vec<DVector<f64>> = observers
            .iter()
            .zip(&self.zs)
            .map(|(o, z)| o.estimate(z, &y))
            .collect();
        let segment = self.trace.segments.len() - 1;

        let mut switch_to = None;
        if let Some(engine) = self.engine.as_mut() {
            if let Some(outcome) = engine.push(t, &residuals)? {
                let confirmed = engine.confirmed().map(|c| c.status);
                if let Some(c) = outcome
                    .confirmed
                    .as_ref()
                    .filter(|c| c.status == Status::Isolated)
                {
                    self.last_isolated = Some(c.clone());
                }
                switch_to = outcome.switch_to;
                self.trace.decisions.push(DecisionRecord {
                    phase: outcome.phase,
                    bank: self.specs[outcome.phase].label.clone(),
                    fresh: outcome.confirmed.is_some(),
                    decision: outcome.decision,
                    confirmed,
                });
            }
        }
        let status = self
            .engine
            .as_ref()
            .and_then(|e| e.confirmed().map(|c| c.status));

        let recon = &self.cfg.sim.reconfiguration;
        if self.opts.reconfigure && !self.reconfigured {
            match recon.mode {
                ReconfigurationMode::Off => {}
                ReconfigurationMode::Auto => {
                    let fresh = self
                        .trace
                        .decisions
                        .last()
                        .is_some_and(|d| d.fresh && d.decision.time == t);
                    if let Some(decision) = self.last_isolated.clone().filter(|_| fresh) {
                        let units = reconfiguration_units(&decision, recon.scope, &recon.groups)?;
                        self.reconfigure(&units, t)?;
                    }
                }
                ReconfigurationMode::FixedTime => {
                    if !self.fixed_time_done && t + 0.5 * self.dt >= recon.t0 {
                        self.fixed_time_done = true;
                        let units = match &self.last_isolated {
                            Some(d) => reconfiguration_units(d, recon.scope, &recon.groups)?,
                            None => recon.fallback_units.clone(),
                        };
                        if units.is_empty() {
                            log::warn!("t = {t}: nothing isolated and no fallback units, reconfiguration skipped");
                        } else {
                            self.reconfigure(&units, t)?;
                        }
                    }
                }
            }
        }
        if let Some(next) = switch_to.filter(|_| !self.reconfigured) {
            self.escalate(next, step, t)?;
        }

        let tau_c = self.controller.command(&y)?;
        let alloc = self.allocator.allocate(&tau_c)?;
        let delta = fault_diagonal(&self.faults, Some(&self.system.units), plant.m(), t)?;
        let delivered = plant.g() * alloc.u.component_mul(&delta);
        let b = self.disturbance.eval(t);

        let tr = &mut self.trace;
        tr.times.push(t);
        tr.states.push(self.x.clone());
        tr.inputs.push(alloc.u.clone());
        tr.commanded.push(tau_c);
        tr.allocated.push(alloc.effect.clone());
        tr.delivered.push(delivered);
        tr.exact.push(alloc.exact);
        tr.fault.push(delta);
        tr.disturbance.push(b);
        tr.segment.push(segment);
        tr.status.push(status);
        tr.residuals.push(residuals);
        tr.estimates.push(estimates);

        if step < self.steps {
            self.advance(t, &alloc.u, &alloc.effect)?;
            self.controller.advance(&y, self.dt);
        }
        self.u_prev = alloc.u;
        Ok(())
    }

    /// One sample of `[x; z_1; …; z_s]`, in `substeps` RK4 steps.
    fn advance(&mut self, t: f64, u: &DVector<f64>, v: &DVector<f64>) -> Result<()> {
        let plant = &self.system.plant;
        let n = plant.n();
        let observers = &self.active.bank.observers;
        let rbv: Vec<DVector<f64>> = observers.iter().map(|o| &o.rb * v).collect();
        let mut joint = DVector::zeros(n * (1 + observers.len()));
        joint.rows_mut(0, n).copy_from(&self.x);
        for (h, z) in self.zs.iter().enumerate() {
            joint.rows_mut(n * (h + 1), n).copy_from(z);
        }
        let (faults, units, ein, dist) = (
            &self.faults,
            &self.system.units,
            &self.system.disturbance_input,
            &self.disturbance,
        );
        let substeps = self.cfg.sim.substeps;
        let sub_dt = self.dt / substeps as f64;
        for i in 0..substeps {
            joint = rk4_try_step(
                |s, state| {
                    let x = state.rows(0, n);
                    let delta = fault_diagonal(faults, Some(units), plant.m(), s)?;
                    let mut out = DVector::zeros(state.len());
                    let mut xdot = plant.a() * x + plant.w() * u.component_mul(&delta);
                    if ein.ncols() > 0 {
                        xdot += ein * dist.eval(s);
                    }
                    out.rows_mut(0, n).copy_from(&xdot);
                    let y = plant.c() * x;
                    for (h, o) in observers.iter().enumerate() {
                        let z = state.rows(n * (h + 1), n);
                        let zdot = &o.f * z + &rbv[h] + &o.k * &y;
                        out.rows_mut(n * (h + 1), n).copy_from(&zdot);
                    }
                    Ok(out)
                },
                &joint,
                t + i as f64 * sub_dt,
                sub_dt,
            )?;
        }
        self.x = joint.rows(0, n).clone_owned();
        for (j, z) in self.zs.iter_mut().enumerate() {
            *z = joint.rows(n * (j + 1), n).clone_owned();
        }
        Ok(())
    }

    fn reconfigure(&mut self, units: &[usize], t: f64) -> Result<()> {
        let directive = reallocate_units(self.system.plant.g(), &self.system.units, units, t)?;
        log::info!(
            "t = {t}: reconfigured without units {units:?} (inputs {:?})",
            directive.zeroed
        );
        self.allocator = directive.allocator;
        self.reconfigured = true;
        if let Some(engine) = self.engine.as_mut() {
            engine.freeze_phase();
        }
        if self.cfg.sim.controller.track_after_reconfiguration {
            if let Some(reference) = self.system.velocity_reference(&self.cfg.sim.controller) {
                self.controller.start_tracking(reference);
            }
        }
        self.trace.events.push(Event::Reconfigured {
            time: t,
            units: directive.units,
            zeroed: directive.zeroed,
        });
        Ok(())
    }

    fn escalate(&mut self, next: usize, step: usize, t: f64) -> Result<()> {
        let spec = &self.specs[next];
        let active = build_phase(
            self.system,
            spec,
            &self.cfg.bank.design,
            &self.free,
            &self.u_prev,
        )?;
        log::info!(
            "t = {t}: switching to the {} bank, ratios {:?}",
            spec.label,
            active.ratios.flat()
        );
        self.zs = initial_observer_states(&active.bank, &self.x, self.cfg.sim.observer_init);
        self.allocator = active.allocator.clone();
        if let Some(engine) = self.engine.as_mut() {
            engine.enter_phase(next, active.table.clone(), t);
        }
        self.trace.segments.push(Segment {
            start_step: step + 1,
            phase: next,
            label: spec.label.clone(),
            bank: active.bank.clone(),
            ratios: active.ratios.clone(),
        });
        self.trace.events.push(Event::Escalated {
            time: t,
            to: spec.label.clone(),
            zeta: active.ratios.flat(),
        });
        self.active = active;
        Ok(())
    }
}

fn initial_observer_states(
    bank: &ObserverBank,
    x: &DVector<f64>,
    init: ObserverInit,
) -> Vec<DVector<f64>> {
    bank.observers
        .iter()
        .map(|o| match init {
            ObserverInit::Exact => o.zero_error_state(x),
            ObserverInit::Zero => DVector::zeros(x.len()),
        })
        .collect()
}
