//! Residual evaluation and signature-based isolation.
//!
//! Each observer's residual is reduced to a binary pattern over its monitored
//! output directions `e_1..e_k0`. Patterns are matched against a table of
//! predicted patterns, one per fault hypothesis, and the resulting raw
//! decisions are debounced by the [`FdiEngine`] state machine.

use std::fmt;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocation::{cluster_overall_columns, Allocator, RatioConstraintSet};
use crate::error::{Error, Result};
use crate::matrixlab::{rank, MultiIndex};
use crate::observers::{BankMode, ObserverBank};
use crate::plant::ClusterSpec;

/// Predicted behaviour of one residual component.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Expect {
    Zero,
    Nonzero,
    Any,
}

impl Expect {
    pub fn admits(self, significant: bool) -> bool {
        match self {
            Expect::Zero => !significant,
            Expect::Nonzero => significant,
            Expect::Any => true,
        }
    }
}

/// A fault on one or more units (thrusters or clusters), 1-based.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Hypothesis {
    units: Vec<usize>,
}

impl Hypothesis {
    pub fn new(mut units: Vec<usize>) -> Result<Self> {
        units.sort_unstable();
        units.dedup();
        if units.is_empty() || units.contains(&0) {
            return Err(Error::UnknownHypothesis(format!("{units:?}")));
        }
        Ok(Self { units })
    }

    pub fn single(unit: usize) -> Self {
        Self { units: vec![unit] }
    }

    pub fn units(&self) -> &[usize] {
        &self.units
    }

    /// Parses labels such as `T1` or `T2+T5`.
    pub fn parse(label: &str) -> Result<Self> {
        let units = label
            .split('+')
            .map(|part| {
                part.trim()
                    .strip_prefix('T')
                    .and_then(|n| n.parse::<usize>().ok())
                    .ok_or_else(|| Error::UnknownHypothesis(label.to_string()))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(units)
    }
}

impl fmt::Display for Hypothesis {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.units.iter().map(|u| format!("T{u}")).collect();
        f.write_str(&parts.join("+"))
    }
}

/// One hypothesis per unit.
pub fn single_unit_hypotheses(units: &ClusterSpec) -> Vec<Hypothesis> {
    (1..=units.len()).map(Hypothesis::single).collect()
}

/// How hypothesis units map onto the columns a bank's multi-indices refer to.
#[derive(Debug, Clone, PartialEq)]
pub enum ColumnMap {
    /// Columns are inputs; a unit owns the inputs of its group.
    Inputs(ClusterSpec),
    /// Columns are units themselves (overall cluster inputs).
    Units(usize),
}

impl ColumnMap {
    pub fn for_bank(bank: &ObserverBank, units: &ClusterSpec) -> Self {
        match &bank.mode {
            BankMode::Actuator => ColumnMap::Inputs(units.clone()),
            BankMode::Cluster { clusters, .. } => ColumnMap::Units(clusters.len()),
        }
    }

    fn unit_count(&self) -> usize {
        match self {
            ColumnMap::Inputs(spec) => spec.len(),
            ColumnMap::Units(q) => *q,
        }
    }

    fn columns(&self, h: &Hypothesis) -> Result<Vec<usize>> {
        if h.units.iter().any(|&u| u > self.unit_count()) {
            return Err(Error::UnknownHypothesis(h.to_string()));
        }
        Ok(match self {
            ColumnMap::Inputs(spec) => h
                .units
                .iter()
                .map(|&u| spec.members(u))
                .collect::<Result<Vec<_>>>()?
                .into_iter()
                .flatten()
                .collect(),
            ColumnMap::Units(_) => h.units.clone(),
        })
    }
}

/// Predicted patterns `[hypothesis][observer][direction]`.
#[derive(Debug, Clone, PartialEq)]
pub struct SignatureTable {
    pub hypotheses: Vec<Hypothesis>,
    pub indices: Vec<MultiIndex>,
    pub patterns: Vec<Vec<Vec<Expect>>>,
}

impl SignatureTable {
    pub fn observers(&self) -> usize {
        self.indices.len()
    }

    pub fn k0(&self) -> usize {
        self.indices.first().map_or(0, |j| j.len())
    }

    /// Hypothesis pairs that no observer tells apart.
    pub fn indistinguishable_pairs(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for a in 0..self.hypotheses.len() {
            for b in a + 1..self.hypotheses.len() {
                let separated = self.patterns[a]
                    .iter()
                    .zip(&self.patterns[b])
                    .any(|(pa, pb)| {
                        pa.iter().zip(pb).any(|(x, y)| {
                            matches!(
                                (x, y),
                                (Expect::Zero, Expect::Nonzero) | (Expect::Nonzero, Expect::Zero)
                            )
                        })
                    });
                if !separated {
                    out.push((a, b));
                }
            }
        }
        out
    }

    pub fn matches(&self, hypothesis: usize, signatures: &[Vec<bool>]) -> bool {
        self.patterns[hypothesis]
            .iter()
            .zip(signatures)
            .all(|(pattern, sig)| pattern.iter().zip(sig).all(|(e, &s)| e.admits(s)))
    }
}

/// Table for explicit multi-indices; see [`build_signature_table`].
pub fn signature_table_for(
    indices: &[MultiIndex],
    columns: &ColumnMap,
    hypotheses: &[Hypothesis],
) -> Result<SignatureTable> {
    let mut patterns = Vec::with_capacity(hypotheses.len());
    for h in hypotheses {
        let phi = columns.columns(h)?;
        let per_observer = indices
            .iter()
            .map(|j| {
                let inside = phi.iter().all(|c| j.contains(*c));
                j.indices()
                    .iter()
                    .map(|col| {
                        if phi.contains(col) {
                            Expect::Nonzero
                        } else if inside {
                            Expect::Zero
                        } else {
                            Expect::Any
                        }
                    })
                    .collect()
            })
            .collect();
        patterns.push(per_observer);
    }
    let table = SignatureTable {
        hypotheses: hypotheses.to_vec(),
        indices: indices.to_vec(),
        patterns,
    };
    for (a, b) in table.indistinguishable_pairs() {
        log::info!(
            "hypotheses {} and {} differ only on unconstrained components",
            table.hypotheses[a],
            table.hypotheses[b]
        );
    }
    Ok(table)
}

/// Predicted zero/nonzero patterns of every hypothesis on every observer of `bank`.
pub fn build_signature_table(
    bank: &ObserverBank,
    units: &ClusterSpec,
    hypotheses: &[Hypothesis],
) -> Result<SignatureTable> {
    signature_table_for(
        &bank.indices(),
        &ColumnMap::for_bank(bank, units),
        hypotheses,
    )
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ThresholdPolicy {
    /// Absolute floor per output channel.
    pub abs: Vec<f64>,
    pub rel: f64,
    /// Window length in samples.
    pub window: usize,
    /// Consecutive identical windows needed to confirm a decision.
    pub persistence: usize,
}

impl ThresholdPolicy {
    pub fn validate(&self) -> Result<()> {
        if self.abs.is_empty() || self.abs.iter().any(|a| !(*a > 0.0) || !a.is_finite()) {
            return Err(Error::InvalidArgument(format!(
                "absolute thresholds must be positive: {:?}",
                self.abs
            )));
        }
        if !(self.rel > 0.0 && self.rel < 1.0) {
            return Err(Error::InvalidArgument(format!(
                "relative threshold {} not in (0, 1)",
                self.rel
            )));
        }
        if self.window == 0 || self.persistence == 0 {
            return Err(Error::InvalidArgument(
                "window and persistence must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

/// Per-component RMS of a residual window and the RMS of its norm.
pub fn window_rms(samples: &[DVector<f64>]) -> (DVector<f64>, f64) {
    let p = samples.first().map_or(0, |r| r.len());
    let mut sq = DVector::zeros(p);
    let mut norm_sq = 0.0;
    for r in samples {
        sq += r.component_mul(r);
        norm_sq += r.norm_squared();
    }
    let count = samples.len().max(1) as f64;
    (sq.map(|s| (s / count).sqrt()), (norm_sq / count).sqrt())
}

/// Significance of the first `k0` components over the latest `window` samples.
pub fn classify_components(
    samples: &[DVector<f64>],
    k0: usize,
    policy: &ThresholdPolicy,
) -> Result<Vec<bool>> {
    if samples.len() < policy.window {
        return Err(Error::WarmupIncomplete {
            have: samples.len(),
            need: policy.window,
        });
    }
    let window = &samples[samples.len() - policy.window..];
    let p = window[0].len();
    if k0 > p || policy.abs.len() < k0 {
        return Err(Error::dims(
            "monitored directions",
            p.min(policy.abs.len()),
            k0,
        ));
    }
    let (rms, norm_rms) = window_rms(window);
    Ok((0..k0)
        .map(|q| rms[q] > policy.abs[q].max(policy.rel * norm_rms))
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Status {
    Nominal,
    Detected,
    Isolated,
    Ambiguous,
    Saturated,
}

impl Status {
    pub fn as_str(self) -> &'static str {
        match self {
            Status::Nominal => "nominal",
            Status::Detected => "detected",
            Status::Isolated => "isolated",
            Status::Ambiguous => "ambiguous",
            Status::Saturated => "saturated",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        [
            Status::Nominal,
            Status::Detected,
            Status::Isolated,
            Status::Ambiguous,
            Status::Saturated,
        ]
        .into_iter()
        .find(|st| st.as_str() == s)
    }
}

impl fmt::Display for Status {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Decision {
    pub time: f64,
    pub status: Status,
    pub hypotheses: Vec<Hypothesis>,
    pub signatures: Vec<Vec<bool>>,
}

impl Decision {
    /// `T1;T2+T5`
    pub fn hypothesis_labels(&self) -> String {
        self.hypotheses
            .iter()
            .map(|h| h.to_string())
            .collect::<Vec<_>>()
            .join(";")
    }

    /// `110;001`, one bit string per observer.
    pub fn signature_bits(&self) -> String {
        self.signatures
            .iter()
            .map(|s| {
                s.iter()
                    .map(|&b| if b { '1' } else { '0' })
                    .collect::<String>()
            })
            .collect::<Vec<_>>()
            .join(";")
    }

    fn same_verdict(&self, other: &Decision) -> bool {
        self.status == other.status && self.hypotheses == other.hypotheses
    }
}

/// Matches observed signatures against the table.
pub fn isolate(time: f64, signatures: &[Vec<bool>], table: &SignatureTable) -> Result<Decision> {
    if signatures.len() != table.observers() {
        return Err(Error::dims(
            "signatures",
            table.observers(),
            signatures.len(),
        ));
    }
    let k0 = table.k0();
    if let Some(bad) = signatures.iter().find(|s| s.len() != k0) {
        return Err(Error::dims("signature length", k0, bad.len()));
    }
    let any = signatures.iter().flatten().any(|&b| b);
    let all = signatures.iter().flatten().all(|&b| b);
    let mut hypotheses = Vec::new();
    let status = if !any {
        Status::Nominal
    } else if all {
        Status::Saturated
    } else {
        hypotheses = (0..table.hypotheses.len())
            .filter(|&h| table.matches(h, signatures))
            .map(|h| table.hypotheses[h].clone())
            .collect();
        match hypotheses.len() {
            0 => Status::Detected,
            1 => Status::Isolated,
            _ => Status::Ambiguous,
        }
    };
    Ok(Decision {
        time,
        status,
        hypotheses,
        signatures: signatures.to_vec(),
    })
}

/// Where ratio coefficients come from on escalation.
#[derive(Debug, Clone, PartialEq)]
pub enum ZetaPolicy {
    /// `u_member / u_reference` of the current allocation.
    Snapshot,
    Explicit(Vec<f64>),
}

/// Ratio constraints plus the multi-index lists of the cluster bank to design.
#[derive(Debug, Clone, PartialEq)]
pub struct EscalationPlan {
    pub ratios: RatioConstraintSet,
    /// `None` keeps the actuator bank: every cluster is a singleton.
    pub mode: Option<BankMode>,
    pub indices: Vec<Vec<usize>>,
}

/// Switches the allocation to ratio constraints so that cluster residuals can
/// be designed over `W*`.
pub fn escalate_to_cluster_mode(
    g: &DMatrix<f64>,
    u: &DVector<f64>,
    clusters: &ClusterSpec,
    zeta: &ZetaPolicy,
    indices: &[Vec<usize>],
) -> Result<EscalationPlan> {
    let (k, m) = g.shape();
    if clusters.inputs() != m {
        return Err(Error::dims("cluster spec", m, clusters.inputs()));
    }
    if clusters.sizes().iter().all(|&s| s == 1) {
        return Ok(EscalationPlan {
            ratios: RatioConstraintSet::empty(),
            mode: None,
            indices: indices.to_vec(),
        });
    }
    let ratios = match zeta {
        ZetaPolicy::Snapshot => RatioConstraintSet::from_snapshot(clusters, u)?,
        ZetaPolicy::Explicit(z) => RatioConstraintSet::from_flat(clusters, z)?,
    };
    let g_star = cluster_overall_columns(g, clusters, &ratios)?;
    let found = rank(&g_star);
    if found < k {
        return Err(Error::InsufficientRedundancy {
            requested: k,
            available: found,
        });
    }
    Ok(EscalationPlan {
        mode: Some(BankMode::Cluster {
            clusters: clusters.clone(),
            ratios: ratios.clone(),
        }),
        ratios,
        indices: indices.to_vec(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReconfigurationScope {
    /// Only the isolated units.
    #[default]
    Isolated,
    /// Every configured group that contains an isolated unit.
    Auxiliary,
}

#[derive(Debug, Clone)]
pub struct ReallocationDirective {
    pub time: f64,
    pub units: Vec<usize>,
    /// 1-based inputs forced to zero.
    pub zeroed: Vec<usize>,
    pub allocator: Allocator,
}

/// Units to take out of service for a decision.
pub fn reconfiguration_units(
    decision: &Decision,
    scope: ReconfigurationScope,
    groups: &[Vec<usize>],
) -> Result<Vec<usize>> {
    if decision.status != Status::Isolated || decision.hypotheses.len() != 1 {
        return Err(Error::Precondition(format!(
            "reconfiguration needs one isolated hypothesis, got {} with {} candidates",
            decision.status,
            decision.hypotheses.len()
        )));
    }
    let isolated = decision.hypotheses[0].units();
    let mut units = isolated.to_vec();
    if scope == ReconfigurationScope::Auxiliary {
        for group in groups
            .iter()
            .filter(|g| g.iter().any(|u| isolated.contains(u)))
        {
            units.extend(group);
        }
    }
    units.sort_unstable();
    units.dedup();
    Ok(units)
}

/// Zeroes every input of `units` and installs the reduced allocator.
pub fn reallocate_units(
    g: &DMatrix<f64>,
    clusters: &ClusterSpec,
    units: &[usize],
    time: f64,
) -> Result<ReallocationDirective> {
    if units.is_empty() {
        return Err(Error::Precondition(
            "no units to take out of service".into(),
        ));
    }
    let zeroed: Vec<usize> = units
        .iter()
        .map(|&u| clusters.members(u))
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect();
    let allocator = Allocator::reduced(g, &zeroed)?;
    let zeroed = allocator.zeroed().to_vec();
    Ok(ReallocationDirective {
        time,
        units: units.to_vec(),
        zeroed,
        allocator,
    })
}

/// Reduced allocation for an isolated decision.
pub fn trigger_reconfiguration(
    decision: &Decision,
    g: &DMatrix<f64>,
    clusters: &ClusterSpec,
    scope: ReconfigurationScope,
    groups: &[Vec<usize>],
) -> Result<ReallocationDirective> {
    let units = reconfiguration_units(decision, scope, groups)?;
    reallocate_units(g, clusters, &units, decision.time)
}

/// Engine settings that do not depend on the bank.
#[derive(Debug, Clone, PartialEq)]
pub struct EngineConfig {
    pub policy: ThresholdPolicy,
    /// Settling time after every (re)initialization, seconds.
    pub warmup: f64,
    /// Number of phases; phase 0 is the actuator bank, the rest are cluster banks.
    pub phases: usize,
    /// Move to the next phase on a confirmed saturated/ambiguous status.
    pub escalate: bool,
    /// Minimum time spent in a cluster phase before rotating to the next one.
    pub dwell: f64,
}

/// Outcome of one completed window.
#[derive(Debug, Clone, PartialEq)]
pub struct WindowOutcome {
    pub phase: usize,
    pub decision: Decision,
    /// Set when this window confirmed a new verdict.
    pub confirmed: Option<Decision>,
    /// Phase to switch to after this sample.
    pub switch_to: Option<usize>,
}

/// Deterministic windowed classifier with persistence and phase switching.
#[derive(Debug, Clone)]
pub struct FdiEngine {
    config: EngineConfig,
    table: SignatureTable,
    phase: usize,
    phase_start: f64,
    buffers: Vec<Vec<DVector<f64>>>,
    recent: Vec<Decision>,
    confirmed: Option<Decision>,
    frozen: bool,
}

impl FdiEngine {
    pub fn new(
        config: EngineConfig,
        table: SignatureTable,
        phase: usize,
        start: f64,
    ) -> Result<Self> {
        config.policy.validate()?;
        if phase >= config.phases.max(1) {
            return Err(Error::IndexOutOfRange {
                index: phase,
                max: config.phases.saturating_sub(1),
            });
        }
        let buffers = vec![Vec::with_capacity(config.policy.window); table.observers()];
        Ok(Self {
            config,
            table,
            phase,
            phase_start: start,
            buffers,
            recent: Vec::new(),
            confirmed: None,
            frozen: false,
        })
    }

    pub fn phase(&self) -> usize {
        self.phase
    }

    pub fn table(&self) -> &SignatureTable {
        &self.table
    }

    pub fn confirmed(&self) -> Option<&Decision> {
        self.confirmed.as_ref()
    }

    /// Stops phase switching, e.g. once the allocation has been reconfigured.
    pub fn freeze_phase(&mut self) {
        self.frozen = true;
    }

    pub fn warming_up(&self, t: f64) -> bool {
        t < self.phase_start + self.config.warmup - 1e-9
    }

    /// Installs the table of the next phase and restarts the warm-up at `t`.
    pub fn enter_phase(&mut self, phase: usize, table: SignatureTable, t: f64) {
        self.phase = phase;
        self.phase_start = t;
        self.buffers = vec![Vec::with_capacity(self.config.policy.window); table.observers()];
        self.table = table;
        self.recent.clear();
        self.confirmed = None;
    }

    /// Feeds the residuals of one sample, one per observer in bank order.
    pub fn push(&mut self, t: f64, residuals: &[DVector<f64>]) -> Result<Option<WindowOutcome>> {
        if residuals.len() != self.table.observers() {
            return Err(Error::dims(
                "residual set",
                self.table.observers(),
                residuals.len(),
            ));
        }
        if self.warming_up(t) {
            return Ok(None);
        }
        for (buf, r) in self.buffers.iter_mut().zip(residuals) {
            buf.push(r.clone());
        }
        if self.buffers[0].len() < self.config.policy.window {
            return Ok(None);
        }
        let k0 = self.table.k0();
        let signatures = self
            .buffers
            .iter()
            .map(|b| classify_components(b, k0, &self.config.policy))
            .collect::<Result<Vec<_>>>()?;
        for b in &mut self.buffers {
            b.clear();
        }
        let decision = isolate(t, &signatures, &self.table)?;

        self.recent.push(decision.clone());
        let keep = self.config.policy.persistence;
        if self.recent.len() > keep {
            self.recent.remove(0);
        }
        let settled =
            self.recent.len() == keep && self.recent.iter().all(|d| d.same_verdict(&decision));
        let mut confirmed = None;
        if settled
            && !self
                .confirmed
                .as_ref()
                .is_some_and(|c| c.same_verdict(&decision))
        {
            self.confirmed = Some(decision.clone());
            confirmed = Some(decision.clone());
        }

        let mut switch_to = None;
        if self.config.escalate && !self.frozen {
            let stuck = self
                .confirmed
                .as_ref()
                .is_some_and(|c| matches!(c.status, Status::Saturated | Status::Ambiguous));
            if stuck {
                if self.phase == 0 && self.config.phases > 1 {
                    switch_to = Some(1);
                } else if self.phase > 0
                    && self.config.phases > 2
                    && t - self.phase_start >= self.config.dwell
                {
                    switch_to = Some(if self.phase + 1 < self.config.phases {
                        self.phase + 1
                    } else {
                        1
                    });
                }
            }
        }
        Ok(Some(WindowOutcome {
            phase: self.phase,
            decision,
            confirmed,
            switch_to,
        }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::plant::VesselParams;

    fn mi(v: &[usize], domain: usize) -> MultiIndex {
        MultiIndex::ordered(v.to_vec(), domain).unwrap()
    }

    fn actuator_table(hyps: &[Hypothesis]) -> SignatureTable {
        let idx = [
            mi(&[1, 2, 3], 8),
            mi(&[3, 4, 1], 8),
            mi(&[5, 6, 1], 8),
            mi(&[7, 8, 1], 8),
        ];
        signature_table_for(&idx, &ColumnMap::Inputs(VesselParams::thrusters()), hyps).unwrap()
    }

    fn cluster_table(hyps: &[Hypothesis]) -> SignatureTable {
        let idx = [
            mi(&[1, 2, 3], 5),
            mi(&[1, 4, 5], 5),
            mi(&[2, 3, 4], 5),
            mi(&[2, 3, 5], 5),
        ];
        signature_table_for(&idx, &ColumnMap::Units(5), hyps).unwrap()
    }

    fn policy() -> ThresholdPolicy {
        ThresholdPolicy {
            abs: vec![1e-3; 6],
            rel: 0.05,
            window: 4,
            persistence: 2,
        }
    }

    use Expect::{Any, Nonzero, Zero};

    #[test]
    fn hypothesis_labels_round_trip() {
        let h = Hypothesis::new(vec![5, 2]).unwrap();
        assert_eq!(h.to_string(), "T2+T5");
        assert_eq!(Hypothesis::parse("T2+T5").unwrap(), h);
        assert!(Hypothesis::parse("X1").is_err());
        assert!(Hypothesis::new(vec![]).is_err());
    }

    #[test]
    fn single_actuator_patterns() {
        let idx = [
            mi(&[1, 2, 3], 8),
            mi(&[3, 4, 1], 8),
            mi(&[5, 6, 1], 8),
            mi(&[7, 8, 1], 8),
        ];
        let t = signature_table_for(
            &idx,
            &ColumnMap::Inputs(ClusterSpec::singletons(8)),
            &[Hypothesis::single(1)],
        )
        .unwrap();
        assert_eq!(t.patterns[0][0], vec![Nonzero, Zero, Zero]);
        for h in 1..4 {
            assert_eq!(t.patterns[0][h], vec![Zero, Zero, Nonzero]);
        }
    }

    #[test]
    fn thruster_one_on_first_observer() {
        let t = actuator_table(&[Hypothesis::single(1)]);
        assert_eq!(t.patterns[0][0], vec![Nonzero, Nonzero, Zero]);
        assert_eq!(t.patterns[0][1], vec![Any, Any, Nonzero]);
    }

    #[test]
    fn pair_two_five_on_cluster_observer_four() {
        let t = cluster_table(&[Hypothesis::new(vec![2, 5]).unwrap()]);
        assert_eq!(t.patterns[0][3], vec![Nonzero, Zero, Nonzero]);
    }

    #[test]
    fn unknown_unit_rejected() {
        let idx = [mi(&[1, 2, 3], 5)];
        let err =
            signature_table_for(&idx, &ColumnMap::Units(5), &[Hypothesis::single(6)]).unwrap_err();
        assert!(matches!(err, Error::UnknownHypothesis(_)));
    }

    #[test]
    fn classify_examples() {
        let p = policy();
        let zeros = vec![DVector::zeros(6); 4];
        assert_eq!(classify_components(&zeros, 3, &p).unwrap(), vec![false; 3]);
        let rho: Vec<DVector<f64>> = (0..4)
            .map(|i| DVector::from_vec(vec![10.0 * (i as f64 + 1.0), 0.0, 0.0, 0.0, 0.0, 0.0]))
            .collect();
        assert_eq!(
            classify_components(&rho, 3, &p).unwrap(),
            vec![true, false, false]
        );
        assert!(matches!(
            classify_components(&rho[..2], 3, &p),
            Err(Error::WarmupIncomplete { have: 2, need: 4 })
        ));
    }

    #[test]
    fn relative_threshold_masks_small_components() {
        let p = policy();
        let r = vec![DVector::from_vec(vec![100.0, 1.0, 0.0, 0.0, 0.0, 0.0]); 4];
        assert_eq!(
            classify_components(&r, 3, &p).unwrap(),
            vec![true, false, false]
        );
    }

    #[test]
    fn isolate_examples() {
        let hyps = single_unit_hypotheses(&VesselParams::thrusters());
        let table = actuator_table(&hyps);
        let nominal = isolate(0.0, &vec![vec![false; 3]; 4], &table).unwrap();
        assert_eq!(nominal.status, Status::Nominal);

        let t1 = vec![
            vec![true, true, false],
            vec![true, true, true],
            vec![false, true, true],
            vec![true, false, true],
        ];
        let d = isolate(1.0, &t1, &table).unwrap();
        assert_eq!(d.status, Status::Isolated);
        assert_eq!(d.hypotheses, vec![Hypothesis::single(1)]);
        assert_eq!(d.signature_bits(), "110;111;011;101");

        let sat = isolate(2.0, &vec![vec![true; 3]; 4], &table).unwrap();
        assert_eq!(sat.status, Status::Saturated);
        assert!(sat.hypotheses.is_empty());

        let odd = vec![
            vec![false, false, true],
            vec![false; 3],
            vec![false; 3],
            vec![false; 3],
        ];
        assert_eq!(isolate(3.0, &odd, &table).unwrap().status, Status::Detected);
    }

    #[test]
    fn cluster_pair_isolated() {
        let mut hyps = single_unit_hypotheses(&VesselParams::thrusters());
        for pair in [[1, 3], [1, 4], [2, 3], [2, 5], [3, 4], [3, 5]] {
            hyps.push(Hypothesis::new(pair.to_vec()).unwrap());
        }
        let table = cluster_table(&hyps);
        let observed = vec![
            vec![true; 3],
            vec![true; 3],
            vec![true; 3],
            vec![true, false, true],
        ];
        let d = isolate(0.0, &observed, &table).unwrap();
        assert_eq!(d.status, Status::Isolated);
        assert_eq!(d.hypotheses, vec![Hypothesis::new(vec![2, 5]).unwrap()]);
    }

    #[test]
    fn escalation_examples() {
        let g = VesselParams::case_study().allocation_matrix();
        let u = DVector::from_element(8, 1.0);
        let plan = escalate_to_cluster_mode(
            &g,
            &u,
            &VesselParams::thrusters(),
            &ZetaPolicy::Explicit(vec![2.27, 3.41, 1.38]),
            &[vec![1, 2, 3]],
        )
        .unwrap();
        assert_eq!(plan.ratios.flat(), vec![2.27, 3.41, 1.38]);
        assert!(plan.mode.is_some());

        let singles = escalate_to_cluster_mode(
            &g,
            &u,
            &ClusterSpec::singletons(8),
            &ZetaPolicy::Snapshot,
            &[],
        )
        .unwrap();
        assert!(singles.ratios.is_empty());
        assert!(singles.mode.is_none());

        // two clusters whose overall columns are parallel
        let g2 = DMatrix::from_row_slice(2, 4, &[1.0, 0.0, 1.0, 0.0, 0.0, 1.0, 0.0, 1.0]);
        let spec = ClusterSpec::from_sizes(vec![2, 2]).unwrap();
        let err = escalate_to_cluster_mode(
            &g2,
            &DVector::zeros(4),
            &spec,
            &ZetaPolicy::Explicit(vec![1.0, 1.0]),
            &[],
        )
        .unwrap_err();
        assert!(matches!(
            err,
            Error::InsufficientRedundancy {
                requested: 2,
                available: 1
            }
        ));
    }

    #[test]
    fn reconfiguration_examples() {
        let g = VesselParams::case_study().allocation_matrix();
        let spec = VesselParams::thrusters();
        let isolated = |units: Vec<usize>| Decision {
            time: 5.0,
            status: Status::Isolated,
            hypotheses: vec![Hypothesis::new(units).unwrap()],
            signatures: vec![],
        };
        let d = trigger_reconfiguration(
            &isolated(vec![1]),
            &g,
            &spec,
            ReconfigurationScope::Isolated,
            &[],
        )
        .unwrap();
        assert_eq!(d.zeroed, vec![1, 2]);
        let d = trigger_reconfiguration(
            &isolated(vec![2, 5]),
            &g,
            &spec,
            ReconfigurationScope::Isolated,
            &[],
        )
        .unwrap();
        assert_eq!(d.zeroed, vec![3, 4, 8]);
        let aux = trigger_reconfiguration(
            &isolated(vec![1]),
            &g,
            &spec,
            ReconfigurationScope::Auxiliary,
            &[vec![1, 3]],
        )
        .unwrap();
        assert_eq!(aux.units, vec![1, 3]);

        let empty = Decision {
            time: 0.0,
            status: Status::Isolated,
            hypotheses: vec![],
            signatures: vec![],
        };
        assert!(matches!(
            trigger_reconfiguration(&empty, &g, &spec, ReconfigurationScope::Isolated, &[]),
            Err(Error::Precondition(_))
        ));
    }

    #[test]
    fn engine_confirms_and_escalates() {
        let hyps = single_unit_hypotheses(&VesselParams::thrusters());
        let config = EngineConfig {
            policy: policy(),
            warmup: 0.5,
            phases: 2,
            escalate: true,
            dwell: 0.0,
        };
        let mut engine = FdiEngine::new(config, actuator_table(&hyps), 0, 0.0).unwrap();
        let big = vec![DVector::from_element(6, 1.0); 4];
        let mut outcomes = Vec::new();
        for k in 0..40 {
            let t = k as f64 * 0.1;
            if let Some(o) = engine.push(t, &big).unwrap() {
                outcomes.push(o);
            }
        }
        // warm-up skips t < 0.5, then one window per 4 samples
        assert_eq!(outcomes[0].decision.time, 0.8);
        assert_eq!(outcomes[0].decision.status, Status::Saturated);
        assert!(outcomes[0].confirmed.is_none());
        assert_eq!(
            outcomes[1].confirmed.as_ref().unwrap().status,
            Status::Saturated
        );
        assert_eq!(outcomes[1].switch_to, Some(1));

        engine.enter_phase(1, cluster_table(&hyps), 1.2);
        assert!(engine.warming_up(1.5));
        assert!(engine.confirmed().is_none());
    }

    #[test]
    fn scaling_invariance() {
        let p = policy();
        let r: Vec<DVector<f64>> = (0..4)
            .map(|i| DVector::from_vec(vec![1.0 + i as f64, 0.02, 0.004, 0.0, 0.0, 0.0]))
            .collect();
        let base = classify_components(&r, 3, &p).unwrap();
        let lambda = 37.5;
        let scaled: Vec<_> = r.iter().map(|v| v * lambda).collect();
        let mut sp = p.clone();
        sp.abs.iter_mut().for_each(|a| *a *= lambda);
        assert_eq!(classify_components(&scaled, 3, &sp).unwrap(), base);
    }
}
