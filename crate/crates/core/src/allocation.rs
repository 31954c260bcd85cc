//! Control allocation: nominal right pseudo-inverse, post-fault reduced
//! allocation, and cluster ratio constraints with the overall-input matrix `W*`.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::matrixlab::{rank, right_pseudo_inverse};
use crate::plant::ClusterSpec;

/// Relative tolerance used to call an allocation exact.
pub const EXACT_TOL: f64 = 1e-9;

/// Guard on `|u_ref|` when ratios are taken from an input snapshot.
pub const SNAPSHOT_FLOOR: f64 = 1e-6;

#[derive(Debug, Clone, PartialEq)]
pub struct AllocationResult {
    pub u: DVector<f64>,
    /// `G·u`
    pub effect: DVector<f64>,
    pub exact: bool,
    /// 1-based inputs forced to zero.
    pub zeroed: Vec<usize>,
}

impl AllocationResult {
    fn new(g: &DMatrix<f64>, u: DVector<f64>, tau: &DVector<f64>, zeroed: Vec<usize>) -> Self {
        let effect = g * &u;
        let exact = (&effect - tau).amax() <= EXACT_TOL * (1.0 + tau.norm());
        Self {
            u,
            effect,
            exact,
            zeroed,
        }
    }
}

/// `u_member = ζ · u_reference` for one cluster.
#[derive(Debug, Clone, PartialEq)]
pub struct ClusterRatios {
    pub cluster: usize,
    pub reference: usize,
    pub members: Vec<(usize, f64)>,
}

/// Ratio constraints over the multi-member clusters of a [`ClusterSpec`].
#[derive(Debug, Clone, PartialEq)]
pub struct RatioConstraintSet {
    pub clusters: Vec<ClusterRatios>,
}

impl RatioConstraintSet {
    pub fn empty() -> Self {
        Self {
            clusters: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.clusters.is_empty()
    }

    /// Coefficients listed cluster by cluster for every non-reference member;
    /// the first input of each cluster is its reference.
    pub fn from_flat(spec: &ClusterSpec, zeta: &[f64]) -> Result<Self> {
        let needed: usize = spec.sizes().iter().map(|s| s - 1).sum();
        if zeta.len() != needed {
            return Err(Error::dims("ratio coefficients", needed, zeta.len()));
        }
        let mut coeffs = zeta.iter();
        let mut clusters = Vec::new();
        for h in 1..=spec.len() {
            let members: Vec<usize> = spec.members(h)?.collect();
            if members.len() < 2 {
                continue;
            }
            let reference = members[0];
            let tied = members[1..]
                .iter()
                .map(|&j| (j, *coeffs.next().expect("length checked above")))
                .collect();
            clusters.push(ClusterRatios {
                cluster: h,
                reference,
                members: tied,
            });
        }
        let set = Self { clusters };
        set.validate(spec)?;
        Ok(set)
    }

    /// `ζ = u_member / u_reference` from an input snapshot; a reference below
    /// [`SNAPSHOT_FLOOR`] in magnitude falls back to `ζ = 1`.
    pub fn from_snapshot(spec: &ClusterSpec, u: &DVector<f64>) -> Result<Self> {
        if u.len() != spec.inputs() {
            return Err(Error::dims("input snapshot", spec.inputs(), u.len()));
        }
        let mut zeta = Vec::new();
        for h in 1..=spec.len() {
            let members: Vec<usize> = spec.members(h)?.collect();
            let reference = u[members[0] - 1];
            for &j in &members[1..] {
                if reference.abs() < SNAPSHOT_FLOOR {
                    zeta.push(1.0);
                } else {
                    zeta.push(u[j - 1] / reference);
                }
            }
        }
        Self::from_flat(spec, &zeta)
    }

    /// Coefficients flattened in the order accepted by [`Self::from_flat`].
    pub fn flat(&self) -> Vec<f64> {
        self.clusters
            .iter()
            .flat_map(|c| c.members.iter().map(|(_, z)| *z))
            .collect()
    }

    fn validate(&self, spec: &ClusterSpec) -> Result<()> {
        let mut seen = vec![false; spec.inputs() + 1];
        for c in &self.clusters {
            let range = spec.members(c.cluster)?;
            for idx in std::iter::once(c.reference).chain(c.members.iter().map(|m| m.0)) {
                if !range.contains(&idx) {
                    return Err(Error::InvalidArgument(format!(
                        "input {idx} is not in cluster {}",
                        c.cluster
                    )));
                }
                if std::mem::replace(&mut seen[idx], true) {
                    return Err(Error::InvalidArgument(format!(
                        "input {idx} constrained twice"
                    )));
                }
            }
            if let Some((j, z)) = c.members.iter().find(|(_, z)| !z.is_finite()) {
                return Err(Error::InvalidArgument(format!(
                    "non-finite ratio {z} for input {j}"
                )));
            }
        }
        Ok(())
    }

    fn for_cluster(&self, h: usize) -> Option<&ClusterRatios> {
        self.clusters.iter().find(|c| c.cluster == h)
    }
}

/// Precomputed allocation law, reused at every simulation step.
#[derive(Debug, Clone)]
pub struct Allocator {
    g: DMatrix<f64>,
    kind: AllocatorKind,
}

#[derive(Debug, Clone)]
enum AllocatorKind {
    /// Pseudo-inverse of `G` with the `zeroed` columns removed.
    Reduced {
        zeroed: Vec<usize>,
        kept: Vec<usize>,
        pinv: DMatrix<f64>,
    },
    /// Pseudo-inverse of `G*` and the per-cluster weight of each input.
    Ratios {
        weights: Vec<(usize, f64)>,
        pinv: DMatrix<f64>,
    },
}

impl Allocator {
    pub fn nominal(g: &DMatrix<f64>) -> Result<Self> {
        Self::reduced(g, &[])
    }

    pub fn reduced(g: &DMatrix<f64>, faulty: &[usize]) -> Result<Self> {
        let (k, m) = g.shape();
        let mut zeroed = faulty.to_vec();
        zeroed.sort_unstable();
        zeroed.dedup();
        if let Some(&bad) = zeroed.iter().find(|&&i| i == 0 || i > m) {
            return Err(Error::IndexOutOfRange { index: bad, max: m });
        }
        if zeroed.len() > m.saturating_sub(k) {
            return Err(Error::InsufficientRedundancy {
                requested: zeroed.len(),
                available: m.saturating_sub(k),
            });
        }
        let kept: Vec<usize> = (0..m).filter(|i| !zeroed.contains(&(i + 1))).collect();
        let reduced = g.select_columns(&kept);
        let pinv = right_pseudo_inverse(&reduced).map_err(|e| match e {
            Error::RankDeficient { expected, found } if !zeroed.is_empty() => {
                Error::ReducedRankDeficient { expected, found }
            }
            other => other,
        })?;
        Ok(Self {
            g: g.clone(),
            kind: AllocatorKind::Reduced { zeroed, kept, pinv },
        })
    }

    pub fn with_ratios(
        g: &DMatrix<f64>,
        spec: &ClusterSpec,
        ratios: &RatioConstraintSet,
    ) -> Result<Self> {
        let (k, m) = g.shape();
        if spec.inputs() != m {
            return Err(Error::dims("cluster spec", m, spec.inputs()));
        }
        let constraints: usize = ratios.clusters.iter().map(|c| c.members.len()).sum();
        if constraints > m - k {
            log::warn!(
                "{constraints} ratio constraints exceed the redundancy m - k = {}; exact allocation may be impossible",
                m - k
            );
        }
        let g_star = cluster_overall_columns(g, spec, ratios)?;
        let found = rank(&g_star);
        if found < k {
            return Err(Error::ReducedRankDeficient { expected: k, found });
        }
        let pinv = right_pseudo_inverse(&g_star)?;
        let mut weights = vec![(0, 0.0); m];
        for h in 1..=spec.len() {
            let members: Vec<usize> = spec.members(h)?.collect();
            match ratios.for_cluster(h) {
                Some(c) => {
                    weights[c.reference - 1] = (h, 1.0);
                    for &(j, z) in &c.members {
                        weights[j - 1] = (h, z);
                    }
                }
                None => {
                    for j in members {
                        weights[j - 1] = (h, 1.0);
                    }
                }
            }
        }
        Ok(Self {
            g: g.clone(),
            kind: AllocatorKind::Ratios { weights, pinv },
        })
    }

    pub fn zeroed(&self) -> &[usize] {
        match &self.kind {
            AllocatorKind::Reduced { zeroed, .. } => zeroed,
            AllocatorKind::Ratios { .. } => &[],
        }
    }

    pub fn allocate(&self, tau: &DVector<f64>) -> Result<AllocationResult> {
        let (k, m) = self.g.shape();
        if tau.len() != k {
            return Err(Error::dims("commanded effect", k, tau.len()));
        }
        match &self.kind {
            AllocatorKind::Reduced { zeroed, kept, pinv } => {
                let partial = pinv * tau;
                let mut u = DVector::zeros(m);
                for (value, &i) in partial.iter().zip(kept) {
                    u[i] = *value;
                }
                Ok(AllocationResult::new(&self.g, u, tau, zeroed.clone()))
            }
            AllocatorKind::Ratios { weights, pinv } => {
                let magnitudes = pinv * tau;
                let u =
                    DVector::from_iterator(m, weights.iter().map(|&(h, z)| z * magnitudes[h - 1]));
                Ok(AllocationResult::new(&self.g, u, tau, Vec::new()))
            }
        }
    }
}

/// `u = G⁻ᴿ τ_c`.
pub fn allocate_nominal(g: &DMatrix<f64>, tau: &DVector<f64>) -> Result<AllocationResult> {
    Allocator::nominal(g)?.allocate(tau)
}

/// Zeroes the `faulty` inputs and allocates the rest with the reduced `G̃⁻ᴿ`.
pub fn reallocate_reduced(
    g: &DMatrix<f64>,
    faulty: &[usize],
    tau: &DVector<f64>,
) -> Result<AllocationResult> {
    Allocator::reduced(g, faulty)?.allocate(tau)
}

/// One magnitude per cluster through `G*`, expanded with the ratios.
pub fn allocate_with_ratios(
    g: &DMatrix<f64>,
    spec: &ClusterSpec,
    ratios: &RatioConstraintSet,
    tau: &DVector<f64>,
) -> Result<AllocationResult> {
    Allocator::with_ratios(g, spec, ratios)?.allocate(tau)
}

/// Overall input columns `W_ref + Σ ζⱼ W_j`, one per cluster.
///
/// Works for any matrix whose columns follow the input numbering (`W = BG`
/// or `G` itself).
pub fn cluster_overall_columns(
    w: &DMatrix<f64>,
    spec: &ClusterSpec,
    ratios: &RatioConstraintSet,
) -> Result<DMatrix<f64>> {
    if spec.inputs() != w.ncols() {
        return Err(Error::dims("cluster spec", w.ncols(), spec.inputs()));
    }
    ratios.validate(spec)?;
    let mut out = DMatrix::zeros(w.nrows(), spec.len());
    for h in 1..=spec.len() {
        let members: Vec<usize> = spec.members(h)?.collect();
        let mut col = out.column_mut(h - 1);
        if members.len() == 1 {
            col.copy_from(&w.column(members[0] - 1));
            continue;
        }
        let c = ratios
            .for_cluster(h)
            .ok_or(Error::MissingCoefficients { cluster: h })?;
        if c.members.len() + 1 != members.len() {
            return Err(Error::MissingCoefficients { cluster: h });
        }
        col.copy_from(&w.column(c.reference - 1));
        for &(j, z) in &c.members {
            col.axpy(z, &w.column(j - 1), 1.0);
        }
    }
    Ok(out)
}
