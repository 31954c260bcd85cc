#![allow(dead_code)]

use cofd::plant::{Effectiveness, FaultEntry, FaultMode, FaultProfile};
use cofd::simkit::{ClusterBankConfig, ScenarioConfig};

/// Single-fault bank of the case study, one observer per thruster group.
pub fn actuator_indices() -> Vec<Vec<usize>> {
    vec![vec![1, 2, 3], vec![3, 4, 1], vec![5, 6, 1], vec![7, 8, 1]]
}

pub fn cluster_indices() -> Vec<Vec<usize>> {
    vec![vec![1, 2, 3], vec![1, 4, 5], vec![2, 3, 4], vec![2, 3, 5]]
}

/// Single thrusters plus the pairs the cluster bank separates.
pub fn cluster_hypotheses() -> Vec<Vec<usize>> {
    let mut h: Vec<Vec<usize>> = (1..=5).map(|t| vec![t]).collect();
    h.extend([[1, 3], [1, 4], [2, 3], [2, 5], [3, 4], [3, 5]].map(|p| p.to_vec()));
    h
}

pub fn decay(target: usize, rate: f64) -> FaultEntry {
    FaultEntry {
        target,
        onset: 0.0,
        effect: Effectiveness::ExpDecay { rate },
    }
}

pub fn thruster_faults(entries: Vec<FaultEntry>) -> FaultProfile {
    FaultProfile {
        mode: FaultMode::Cluster,
        entries,
    }
}

pub fn case_study() -> ScenarioConfig {
    let mut cfg = ScenarioConfig::default();
    cfg.bank.indices = Some(actuator_indices());
    cfg
}

pub fn with_cluster_bank(mut cfg: ScenarioConfig, zeta: Option<Vec<f64>>) -> ScenarioConfig {
    cfg.bank.cluster = vec![ClusterBankConfig {
        indices: Some(cluster_indices()),
        hypotheses: Some(cluster_hypotheses()),
        zeta,
    }];
    cfg
}

pub fn t1_scenario() -> ScenarioConfig {
    let mut cfg = case_study();
    cfg.faults = thruster_faults(vec![decay(1, 0.03)]);
    cfg
}

pub fn t2_t5_scenario() -> ScenarioConfig {
    let mut cfg = case_study();
    cfg.faults = thruster_faults(vec![decay(2, 0.02), decay(5, 0.01)]);
    cfg
}

/// Largest entry of `a − b` over the largest entry of `b`.
pub fn rel_gap(a: &nalgebra::DVector<f64>, b: &nalgebra::DVector<f64>) -> f64 {
    (a - b).amax() / b.amax().max(f64::MIN_POSITIVE)
}
