//! Constrained-output-fault-direction (COFD) unknown input observers.
//!
//! For a multi-index `J` over the columns of an input matrix (`W = BG` or the
//! cluster matrix `W*`) the observer
//!
//! ```text
//! ż = F z + R B v + K y,    x̂ = z + H y,    r = y − C x̂
//! ```
//!
//! is built so that `R W_J = Ŝ` and `F Ŝ = Ŝ M`, which keeps the residual of a
//! fault on column `J(q)` along the output basis vector `e_q`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::allocation::{cluster_overall_columns, RatioConstraintSet};
use crate::error::{Error, Result};
use crate::matrixlab::{
    enumerate_multi_indices, is_hurwitz, left_pseudo_inverse, max_abs, numerical_rank,
    right_pseudo_inverse, select_columns, spectral_abscissa, uniform_sub_rank, MultiIndex,
    RANK_TOL,
};
use crate::plant::{ClusterSpec, LtiPlant};

/// Tolerances on the observer identities. Each is applied relative to the
/// magnitude of the operands once that exceeds one; see [`scaled_gap`].
pub mod tol {
    pub const R_IDENTITY: f64 = 1e-12;
    pub const F_IDENTITY: f64 = 1e-10;
    pub const K_IDENTITY: f64 = 1e-10;
    pub const SECTION: f64 = 1e-8;
    pub const EIGEN: f64 = 1e-8;
    pub const OUTPUT_SECTION: f64 = 1e-10;
}

/// `‖lhs − rhs‖_max / max(1, scale)`.
pub fn scaled_gap(lhs: &DMatrix<f64>, rhs: &DMatrix<f64>, scale: f64) -> f64 {
    max_abs(&(lhs - rhs)) / scale.max(1.0)
}

/// Right inverse `S` of the output matrix, `C S = I`.
#[derive(Debug, Clone, PartialEq)]
pub struct OutputSection {
    pub s: DMatrix<f64>,
    pub s_star: DMatrix<f64>,
}

impl OutputSection {
    /// First `k0` columns of `S`.
    pub fn leading(&self, k0: usize) -> DMatrix<f64> {
        self.s.columns(0, k0).clone_owned()
    }
}

/// `S = Cᵀ(CCᵀ)⁻¹ + [I − Cᵀ(CCᵀ)⁻¹C] S_*`.
pub fn build_output_section(c: &DMatrix<f64>, s_star: &DMatrix<f64>) -> Result<OutputSection> {
    let (p, n) = c.shape();
    if s_star.shape() != (n, p) {
        return Err(Error::dims(
            "S_*",
            format!("{n}x{p}"),
            format!("{}x{}", s_star.nrows(), s_star.ncols()),
        ));
    }
    let c_pinv = right_pseudo_inverse(c)?;
    let projector = DMatrix::identity(n, n) - &c_pinv * c;
    let s = c_pinv + projector * s_star;
    Ok(OutputSection {
        s,
        s_star: s_star.clone(),
    })
}

/// Free parameters of one observer design.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ObserverDesign {
    /// Diagonal of `M`, one strictly negative entry per fault direction.
    pub eigenvalues: Vec<f64>,
    /// Remaining `n − k0` eigenvalues of `F`; only honoured when `C` is square.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub complement: Option<Vec<f64>>,
}

impl Default for ObserverDesign {
    fn default() -> Self {
        Self {
            eigenvalues: vec![-1.0, -1.0, -2.0],
            complement: Some(vec![-5.0, -6.0, -7.0]),
        }
    }
}

impl ObserverDesign {
    /// Settling allowance before residual directions are trusted:
    /// five time constants of the slowest designed mode.
    pub fn warmup(&self) -> f64 {
        let slowest = self
            .eigenvalues
            .iter()
            .chain(self.complement.iter().flatten())
            .map(|l| l.abs())
            .fold(f64::INFINITY, f64::min);
        if slowest.is_finite() && slowest > 0.0 {
            5.0 / slowest
        } else {
            0.0
        }
    }
}

/// Optional free matrices `H_*`, `K_*` (both `n × p`); zero when absent.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct FreeParameters {
    pub h_star: Option<DMatrix<f64>>,
    pub k_star: Option<DMatrix<f64>>,
}

/// One synthesized observer.
#[derive(Debug, Clone, PartialEq)]
pub struct UioParams {
    pub index: MultiIndex,
    pub f: DMatrix<f64>,
    pub r: DMatrix<f64>,
    pub h: DMatrix<f64>,
    pub k1: DMatrix<f64>,
    pub k2: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub s_hat: DMatrix<f64>,
    pub m_diag: DMatrix<f64>,
    pub h_star: DMatrix<f64>,
    pub k_star: DMatrix<f64>,
    /// `R·B`, cached for stepping.
    pub rb: DMatrix<f64>,
    pub c: DMatrix<f64>,
    /// `W_J` of the designated input matrix.
    pub w_j: DMatrix<f64>,
    a: DMatrix<f64>,
}

/// Deviations of the observer identities, each scaled by its operand size.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InvariantReport {
    pub r_identity: f64,
    pub f_identity: f64,
    pub k_identity: f64,
    pub section: f64,
    pub eigen: f64,
    pub spectral_abscissa: f64,
}

impl InvariantReport {
    pub fn passes(&self) -> bool {
        self.r_identity <= tol::R_IDENTITY
            && self.f_identity <= tol::F_IDENTITY
            && self.k_identity <= tol::K_IDENTITY
            && self.section <= tol::SECTION
            && self.eigen <= tol::EIGEN
            && self.spectral_abscissa < 0.0
    }
}

impl UioParams {
    pub fn k0(&self) -> usize {
        self.index.len()
    }

    pub fn n(&self) -> usize {
        self.f.nrows()
    }

    pub fn invariants(&self) -> InvariantReport {
        let n = self.n();
        let hc = &self.h * &self.c;
        let ra = &self.r * &self.a;
        let k1c = &self.k1 * &self.c;
        let fh = &self.f * &self.h;
        let rw = &self.r * &self.w_j;
        let fs = &self.f * &self.s_hat;
        let sm = &self.s_hat * &self.m_diag;
        InvariantReport {
            r_identity: scaled_gap(&self.r, &(DMatrix::identity(n, n) - &hc), max_abs(&hc)),
            f_identity: scaled_gap(&self.f, &(&ra - &k1c), max_abs(&ra).max(max_abs(&k1c))),
            k_identity: scaled_gap(&self.k2, &fh, max_abs(&fh)).max(scaled_gap(
                &self.k,
                &(&self.k1 + &fh),
                max_abs(&self.k1).max(max_abs(&fh)),
            )),
            section: scaled_gap(&rw, &self.s_hat, max_abs(&self.r) * max_abs(&self.w_j)),
            eigen: scaled_gap(&fs, &sm, max_abs(&self.f)),
            spectral_abscissa: spectral_abscissa(&self.f),
        }
    }

    /// `F z + R B v + K y`.
    pub fn derivative(&self, z: &DVector<f64>, y: &DVector<f64>, v: &DVector<f64>) -> DVector<f64> {
        &self.f * z + &self.rb * v + &self.k * y
    }

    /// `x̂ = z + H y`.
    pub fn estimate(&self, z: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        z + &self.h * y
    }

    /// `r = y − C(z + H y)`.
    pub fn residual(&self, z: &DVector<f64>, y: &DVector<f64>) -> DVector<f64> {
        y - &self.c * self.estimate(z, y)
    }

    /// Observer state giving zero estimation error for a known plant state.
    pub fn zero_error_state(&self, x: &DVector<f64>) -> DVector<f64> {
        &self.r * x
    }
}

/// Synthesizes one COFD observer for the multi-index `j` over the columns of
/// `inputs` (`W` or `W*`).
pub fn synthesize_cofd(
    plant: &LtiPlant,
    inputs: &DMatrix<f64>,
    section: &OutputSection,
    j: &MultiIndex,
    design: &ObserverDesign,
    free: &FreeParameters,
) -> Result<UioParams> {
    let (n, p) = (plant.n(), plant.p());
    let c = plant.c();
    let a = plant.a();
    let k0 = j.len();
    if inputs.nrows() != n {
        return Err(Error::dims("input matrix rows", n, inputs.nrows()));
    }
    if j.domain() != inputs.ncols() {
        return Err(Error::dims(
            "multi-index domain",
            inputs.ncols(),
            j.domain(),
        ));
    }
    if design.eigenvalues.len() != k0 {
        return Err(Error::dims("eigenvalue list", k0, design.eigenvalues.len()));
    }
    if design.eigenvalues.iter().any(|&l| !(l < 0.0)) {
        return Err(Error::InvalidArgument(format!(
            "direction eigenvalues must be strictly negative: {:?}",
            design.eigenvalues
        )));
    }
    if k0 > p {
        return Err(Error::InvalidArgument(format!(
            "{k0} fault directions exceed the output dimension {p}"
        )));
    }

    let w_j = select_columns(inputs, j.indices())?;
    let cw_j = c * &w_j;
    let rank_w = numerical_rank(&w_j, RANK_TOL).rank;
    let rank_cw = numerical_rank(&cw_j, RANK_TOL).rank;
    if rank_w != k0 || rank_cw != k0 {
        return Err(Error::RankConditionFailed {
            indices: j.indices().to_vec(),
            rank_w,
            rank_cw,
            required: k0,
        });
    }

    let zeros = DMatrix::zeros(n, p);
    let h_star = free.h_star.clone().unwrap_or_else(|| zeros.clone());
    let k_star = free.k_star.clone().unwrap_or_else(|| zeros.clone());
    for (name, mat) in [("H_*", &h_star), ("K_*", &k_star)] {
        if mat.shape() != (n, p) {
            return Err(Error::dims(
                name,
                format!("{n}x{p}"),
                format!("{}x{}", mat.nrows(), mat.ncols()),
            ));
        }
    }

    let s_hat = section.leading(k0);
    let m_diag = DMatrix::from_diagonal(&DVector::from_vec(design.eigenvalues.clone()));

    // H = (W_J − Ŝ)(CW_J)⁻ᴸ + H_*(C − CW_J (CW_J)⁻ᴸ C)
    let cw_l = left_pseudo_inverse(&cw_j)?;
    let h = (&w_j - &s_hat) * &cw_l + &h_star * (c - &cw_j * &cw_l * c);
    let r = DMatrix::identity(n, n) - &h * c;
    let ra = &r * a;

    let k1 = match (&design.complement, p == n) {
        (Some(rest), true) => {
            if rest.len() != n - k0 {
                return Err(Error::dims("complement eigenvalues", n - k0, rest.len()));
            }
            // C square: S = C⁻¹ and F = S Λ S⁻¹ is fully determined by K₁.
            let lambda = DMatrix::from_diagonal(&DVector::from_iterator(
                n,
                design.eigenvalues.iter().chain(rest.iter()).cloned(),
            ));
            (&ra - &section.s * lambda * c) * &section.s
        }
        (complement, _) => {
            if complement.is_some() {
                log::warn!("complement eigenvalues ignored: C is not square");
            }
            // K₁ = (RAŜ − ŜM)(CŜ)⁻ᴸ + K_*(I − CŜ(CŜ)⁻ᴸ)
            let cs = c * &s_hat;
            let cs_l = left_pseudo_inverse(&cs)?;
            (&ra * &s_hat - &s_hat * &m_diag) * &cs_l
                + &k_star * (DMatrix::identity(p, p) - &cs * &cs_l)
        }
    };
    let f = &ra - &k1 * c;
    if !is_hurwitz(&f, 0.0) {
        return Err(Error::NotHurwitz {
            max_real_part: spectral_abscissa(&f),
        });
    }
    let k2 = &f * &h;
    let k = &k1 + &k2;
    let rb = &r * plant.b();

    Ok(UioParams {
        index: j.clone(),
        f,
        r,
        h,
        k1,
        k2,
        k,
        s_hat,
        m_diag,
        h_star,
        k_star,
        rb,
        c: c.clone(),
        w_j,
        a: a.clone(),
    })
}

/// Which input matrix a bank is designed over.
#[derive(Debug, Clone, PartialEq)]
pub enum BankMode {
    Actuator,
    Cluster {
        clusters: ClusterSpec,
        ratios: RatioConstraintSet,
    },
}

#[derive(Debug, Clone, PartialEq)]
pub enum IndexSource {
    /// Every multi-index of length `k0` = uniform sub-rank.
    Auto,
    /// Caller-ordered lists (1-based).
    Explicit(Vec<Vec<usize>>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct SynthesisFailure {
    pub indices: Vec<usize>,
    pub error: Error,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ObserverBank {
    pub observers: Vec<UioParams>,
    pub section: OutputSection,
    pub mode: BankMode,
    pub failures: Vec<SynthesisFailure>,
    /// Input matrix the multi-indices refer to.
    pub inputs: DMatrix<f64>,
}

impl ObserverBank {
    pub fn k0(&self) -> usize {
        self.observers.first().map_or(0, |o| o.k0())
    }

    pub fn len(&self) -> usize {
        self.observers.len()
    }

    pub fn is_empty(&self) -> bool {
        self.observers.is_empty()
    }

    pub fn indices(&self) -> Vec<MultiIndex> {
        self.observers.iter().map(|o| o.index.clone()).collect()
    }
}

/// Designs one observer per multi-index. Failed designs are kept in
/// `failures`; the bank is an error only when none succeeds.
pub fn build_bank(
    plant: &LtiPlant,
    mode: BankMode,
    source: &IndexSource,
    design: &ObserverDesign,
    free: &FreeParameters,
) -> Result<ObserverBank> {
    let inputs = match &mode {
        BankMode::Actuator => plant.w().clone(),
        BankMode::Cluster { clusters, ratios } => {
            cluster_overall_columns(plant.w(), clusters, ratios)?
        }
    };
    let domain = inputs.ncols();
    let indices = match source {
        IndexSource::Auto => {
            let k0 = uniform_sub_rank(&inputs, RANK_TOL);
            if k0 == 0 {
                return Err(Error::EmptyBank("uniform sub-rank is zero".into()));
            }
            enumerate_multi_indices(k0, domain)?
        }
        IndexSource::Explicit(lists) => {
            let out = lists
                .iter()
                .map(|l| MultiIndex::ordered(l.clone(), domain))
                .collect::<Result<Vec<_>>>()?;
            if let Some(first) = out.first() {
                if out.iter().any(|j| j.len() != first.len()) {
                    return Err(Error::InvalidArgument(
                        "all multi-indices of a bank must share one length".into(),
                    ));
                }
            }
            for (a, ja) in out.iter().enumerate() {
                if out[..a].contains(ja) {
                    return Err(Error::InvalidArgument(format!(
                        "multi-index {ja} listed twice"
                    )));
                }
            }
            out
        }
    };
    let k0 = indices.first().map_or(0, |j| j.len());
    let mut design = design.clone();
    if design.eigenvalues.len() != k0 {
        // auto mode: stretch or trim the configured direction eigenvalues
        let fill = design.eigenvalues.last().cloned().unwrap_or(-1.0);
        design.eigenvalues.resize(k0, fill);
        if let Some(rest) = design.complement.as_mut() {
            let want = plant.n().saturating_sub(k0);
            let fill = rest.last().cloned().unwrap_or(fill);
            rest.resize(want, fill);
        }
    }

    let s_star = DMatrix::zeros(plant.n(), plant.p());
    let section = build_output_section(plant.c(), &s_star)?;
    let mut observers = Vec::new();
    let mut failures = Vec::new();
    for j in &indices {
        match synthesize_cofd(plant, &inputs, &section, j, &design, free) {
            Ok(o) => observers.push(o),
            Err(error) => {
                log::warn!("observer {j} failed: {error}");
                failures.push(SynthesisFailure {
                    indices: j.indices().to_vec(),
                    error,
                })
            }
        }
    }
    if observers.is_empty() {
        let why = failures
            .iter()
            .map(|f| format!("{:?}: {}", f.indices, f.error))
            .collect::<Vec<_>>()
            .join("; ");
        return Err(Error::EmptyBank(why));
    }
    Ok(ObserverBank {
        observers,
        section,
        mode,
        failures,
        inputs,
    })
}

/// Result of one standalone observer step.
#[derive(Debug, Clone, PartialEq)]
pub struct ObserverStep {
    pub z: DVector<f64>,
    pub estimate: DVector<f64>,
    pub residual: DVector<f64>,
}

/// Advances `ż = Fz + RBv + Ky` by one RK4 step with `y` and `v` held over
/// the interval, then forms `x̂ = z′ + Hy` and `r = y − Cx̂`.
pub fn step_observer(
    obs: &UioParams,
    z: &DVector<f64>,
    y: &DVector<f64>,
    v: &DVector<f64>,
    dt: f64,
) -> Result<ObserverStep> {
    if !(dt > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "dt must be positive, got {dt}"
        )));
    }
    if z.len() != obs.n() {
        return Err(Error::dims("observer state", obs.n(), z.len()));
    }
    if y.len() != obs.c.nrows() {
        return Err(Error::dims("output", obs.c.nrows(), y.len()));
    }
    if v.len() != obs.rb.ncols() {
        return Err(Error::dims("reference effect", obs.rb.ncols(), v.len()));
    }
    let z_next = crate::simkit::rk4_step(|_, z| obs.derivative(z, y, v), z, 0.0, dt)?;
    let estimate = obs.estimate(&z_next, y);
    let residual = y - &obs.c * &estimate;
    Ok(ObserverStep {
        z: z_next,
        estimate,
        residual,
    })
}
