//! Overactuated LTI plant `ẋ = Ax + BGΔ(t)u + E(t)`, `y = Cx`, the
//! multiplicative fault model and the linearised five-thruster vessel.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use nalgebra::{DMatrix, DVector, Matrix3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrixlab::rank;

/// Linear plant with redundant inputs. `w` is always recomputed as `B·G`.
#[derive(Debug, Clone, PartialEq)]
pub struct LtiPlant {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
    g: DMatrix<f64>,
    w: DMatrix<f64>,
}

impl LtiPlant {
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>, g: DMatrix<f64>) -> Result<Self> {
        let n = a.nrows();
        if !a.is_square() {
            return Err(Error::dims("A", format!("{n}x{n}"), shape(&a)));
        }
        let k = g.nrows();
        let m = g.ncols();
        if b.shape() != (n, k) {
            return Err(Error::dims("B", format!("{n}x{k}"), shape(&b)));
        }
        if c.ncols() != n {
            return Err(Error::dims("C", format!("px{n}"), shape(&c)));
        }
        if m < k {
            return Err(Error::InvalidArgument(format!(
                "fewer inputs than control effects: m = {m} < k = {k}"
            )));
        }
        let p = c.nrows();
        for (name, mat, expected) in [("B", &b, k), ("C", &c, p), ("G", &g, k)] {
            let found = rank(mat);
            if found != expected {
                log::debug!("{name} rank {found}, expected {expected}");
                return Err(Error::RankDeficient { expected, found });
            }
        }
        let w = &b * &g;
        Ok(Self { a, b, c, g, w })
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }
    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }
    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
    pub fn g(&self) -> &DMatrix<f64> {
        &self.g
    }
    pub fn w(&self) -> &DMatrix<f64> {
        &self.w
    }
    /// State dimension.
    pub fn n(&self) -> usize {
        self.a.nrows()
    }
    /// Number of independent control effects.
    pub fn k(&self) -> usize {
        self.g.nrows()
    }
    /// Number of inputs.
    pub fn m(&self) -> usize {
        self.g.ncols()
    }
    /// Number of outputs.
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

fn shape(m: &DMatrix<f64>) -> String {
    format!("{}x{}", m.nrows(), m.ncols())
}

/// Partition of inputs `1..=m` into contiguous, non-overlapping groups.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClusterSpec {
    sizes: Vec<usize>,
}

impl ClusterSpec {
    pub fn from_sizes(sizes: Vec<usize>) -> Result<Self> {
        if sizes.is_empty() || sizes.contains(&0) {
            return Err(Error::InvalidArgument(format!(
                "cluster sizes must be positive, got {sizes:?}"
            )));
        }
        Ok(Self { sizes })
    }

    /// One cluster per input.
    pub fn singletons(m: usize) -> Self {
        Self { sizes: vec![1; m] }
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    /// Number of clusters `q`.
    pub fn len(&self) -> usize {
        self.sizes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sizes.is_empty()
    }

    /// Total number of inputs covered.
    pub fn inputs(&self) -> usize {
        self.sizes.iter().sum()
    }

    /// 1-based input indices of cluster `h` (1-based).
    pub fn members(&self, h: usize) -> Result<RangeInclusive<usize>> {
        if h == 0 || h > self.len() {
            return Err(Error::IndexOutOfRange {
                index: h,
                max: self.len(),
            });
        }
        let start: usize = self.sizes[..h - 1].iter().sum::<usize>() + 1;
        Ok(start..=start + self.sizes[h - 1] - 1)
    }

    /// Cluster containing input `i` (both 1-based).
    pub fn cluster_of(&self, i: usize) -> Option<usize> {
        let mut upper = 0;
        for (h, s) in self.sizes.iter().enumerate() {
            upper += s;
            if i >= 1 && i <= upper {
                return Some(h + 1);
            }
        }
        None
    }
}

/// Effectiveness trajectory after onset; evaluated on the elapsed time `t - onset`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Effectiveness {
    Constant {
        value: f64,
    },
    /// `exp(-rate·τ)`
    ExpDecay {
        rate: f64,
    },
    /// Linear from 1 down to `floor` over `duration` seconds.
    Ramp {
        duration: f64,
        floor: f64,
    },
}

impl Effectiveness {
    pub fn eval(&self, elapsed: f64) -> f64 {
        let raw = match *self {
            Effectiveness::Constant { value } => value,
            Effectiveness::ExpDecay { rate } => (-rate * elapsed).exp(),
            Effectiveness::Ramp { duration, floor } => {
                if duration <= 0.0 || elapsed >= duration {
                    floor
                } else {
                    1.0 - (1.0 - floor) * elapsed / duration
                }
            }
        };
        raw.clamp(0.0, 1.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultMode {
    Actuator,
    Cluster,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultEntry {
    /// 1-based actuator index or cluster id, depending on the profile mode.
    pub target: usize,
    #[serde(default)]
    pub onset: f64,
    pub effect: Effectiveness,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FaultProfile {
    pub mode: FaultMode,
    #[serde(default)]
    pub entries: Vec<FaultEntry>,
}

impl FaultProfile {
    pub fn none() -> Self {
        Self {
            mode: FaultMode::Actuator,
            entries: Vec::new(),
        }
    }

    pub fn is_fault_free(&self) -> bool {
        self.entries.is_empty()
    }
}

impl FaultEntry {
    pub fn effectiveness(&self, t: f64) -> f64 {
        if t < self.onset {
            1.0
        } else {
            self.effect.eval(t - self.onset)
        }
    }
}

/// Diagonal of `Δ(t)`. Entries hitting the same input multiply.
pub fn fault_diagonal(
    profile: &FaultProfile,
    clusters: Option<&ClusterSpec>,
    m: usize,
    t: f64,
) -> Result<DVector<f64>> {
    let mut diag = DVector::from_element(m, 1.0);
    for entry in &profile.entries {
        let delta = entry.effectiveness(t);
        match profile.mode {
            FaultMode::Actuator => {
                if entry.target == 0 || entry.target > m {
                    return Err(Error::IndexOutOfRange {
                        index: entry.target,
                        max: m,
                    });
                }
                diag[entry.target - 1] *= delta;
            }
            FaultMode::Cluster => {
                let spec = clusters.ok_or_else(|| {
                    Error::InvalidArgument("cluster fault profile without a cluster spec".into())
                })?;
                if spec.inputs() != m {
                    return Err(Error::dims("cluster spec", m, spec.inputs()));
                }
                for i in spec.members(entry.target)? {
                    diag[i - 1] *= delta;
                }
            }
        }
    }
    Ok(diag)
}

/// `Δ(t)` as a full diagonal matrix.
pub fn fault_matrix(
    profile: &FaultProfile,
    clusters: Option<&ClusterSpec>,
    m: usize,
    t: f64,
) -> Result<DMatrix<f64>> {
    Ok(DMatrix::from_diagonal(&fault_diagonal(
        profile, clusters, m, t,
    )?))
}

/// `A·x + B·G·Δ·u + E`, with `Δ` given by its diagonal.
pub fn plant_derivative(
    plant: &LtiPlant,
    x: &DVector<f64>,
    u: &DVector<f64>,
    delta: &DVector<f64>,
    disturbance_effect: &DVector<f64>,
) -> Result<DVector<f64>> {
    let (n, m) = (plant.n(), plant.m());
    if x.len() != n {
        return Err(Error::dims("state", n, x.len()));
    }
    if u.len() != m {
        return Err(Error::dims("input", m, u.len()));
    }
    if delta.len() != m {
        return Err(Error::dims("fault diagonal", m, delta.len()));
    }
    if disturbance_effect.len() != n {
        return Err(Error::dims(
            "disturbance effect",
            n,
            disturbance_effect.len(),
        ));
    }
    let effective = u.component_mul(delta);
    Ok(plant.a() * x + plant.w() * effective + disturbance_effect)
}

/// Physical description of the five-thruster vessel (three azimuth thrusters
/// followed by two tunnel thrusters).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VesselParams {
    /// kg
    pub mass: f64,
    /// m
    pub length: f64,
    /// m
    pub width: f64,
    /// Rigid-body plus added inertia, row-major (kg, kg·m²).
    pub inertia: [[f64; 3]; 3],
    /// Linear damping about the reference velocity, row-major.
    pub damping: [[f64; 3]; 3],
    /// Thruster distances from the rotation point (m).
    pub distances: [f64; 5],
    /// Thruster angles (rad).
    pub angles: [f64; 5],
    /// Reference heading ψ̄ (rad).
    pub heading_ref: f64,
    /// Disturbance bound ε (N).
    pub disturbance_bound: f64,
}

impl VesselParams {
    /// Supply-vessel figures of the case study (μ = 6e6 kg, L = 76 m, w = 16 m).
    ///
    /// The printed allocation matrix has γ₅ = 0, γ₆ = d₃, χ₇ = d₄ and χ₈ = d₅,
    /// which fixes φ₃ = φ₄ = φ₅ = 0.
    pub fn case_study() -> Self {
        Self {
            mass: 6e6,
            length: 76.0,
            width: 16.0,
            inertia: [
                [0.0068e9, 0.0, 0.0],
                [0.0, 0.0113e9, -0.0340e9],
                [0.0, -0.0340e9, 4.4524e9],
            ],
            damping: [
                [0.0008e8, 0.0, 0.0],
                [0.0, 0.0025e8, -0.0203e8],
                [0.0, -0.0340e8, 3.8481e8],
            ],
            distances: [20.0, 20.0, 18.5, 30.0, 35.0],
            angles: [PI + 0.3, PI - 0.3, 0.0, 0.0, 0.0],
            heading_ref: 0.0,
            disturbance_bound: 5e6,
        }
    }

    pub fn inertia_matrix(&self) -> Matrix3<f64> {
        mat3(&self.inertia)
    }

    pub fn damping_matrix(&self) -> Matrix3<f64> {
        mat3(&self.damping)
    }

    /// Thruster-to-input grouping: T1..T3 drive two orthogonal components each.
    pub fn thrusters() -> ClusterSpec {
        ClusterSpec {
            sizes: vec![2, 2, 2, 1, 1],
        }
    }

    /// The 3×8 allocation matrix (surge, sway, yaw moment rows).
    pub fn allocation_matrix(&self) -> DMatrix<f64> {
        let mut g = DMatrix::zeros(3, 8);
        for s in 0..3 {
            let (d, phi) = (self.distances[s], self.angles[s]);
            g[(0, 2 * s)] = 1.0;
            g[(1, 2 * s + 1)] = 1.0;
            g[(2, 2 * s)] = d * phi.sin();
            g[(2, 2 * s + 1)] = d * phi.cos();
        }
        for s in 3..5 {
            let col = s + 3;
            g[(1, col)] = 1.0;
            g[(2, col)] = self.distances[s] * self.angles[s].cos();
        }
        g
    }

    fn validate(&self) -> Result<()> {
        let m = self.inertia_matrix();
        if (m - m.transpose()).abs().max() > 1e-9 * m.abs().max() {
            return Err(Error::InvalidArgument(
                "inertia matrix is not symmetric".into(),
            ));
        }
        if m.cholesky().is_none() {
            return Err(Error::SingularInertia);
        }
        if !(self.disturbance_bound >= 0.0) {
            return Err(Error::InvalidArgument(
                "disturbance bound must be >= 0".into(),
            ));
        }
        Ok(())
    }
}

impl Default for VesselParams {
    fn default() -> Self {
        Self::case_study()
    }
}

fn mat3(rows: &[[f64; 3]; 3]) -> Matrix3<f64> {
    Matrix3::from_fn(|i, j| rows[i][j])
}

/// Planar rotation `P(ψ)`.
pub fn rotation(psi: f64) -> Matrix3<f64> {
    let (s, c) = psi.sin_cos();
    Matrix3::new(c, -s, 0.0, s, c, 0.0, 0.0, 0.0, 1.0)
}

/// Linearised vessel with its disturbance input map `[0; M⁻¹Pᵀ(ψ̄)]`.
#[derive(Debug, Clone, PartialEq)]
pub struct VesselModel {
    pub params: VesselParams,
    pub plant: LtiPlant,
    pub thrusters: ClusterSpec,
    pub disturbance_input: DMatrix<f64>,
}

impl VesselModel {
    pub fn new(params: VesselParams) -> Result<Self> {
        let plant = build_vessel_plant(&params)?;
        let m_inv = params
            .inertia_matrix()
            .try_inverse()
            .ok_or(Error::SingularInertia)?;
        let e3 = m_inv * rotation(params.heading_ref).transpose();
        let mut disturbance_input = DMatrix::zeros(6, 3);
        disturbance_input.view_mut((3, 0), (3, 3)).copy_from(&e3);
        Ok(Self {
            params,
            plant,
            thrusters: VesselParams::thrusters(),
            disturbance_input,
        })
    }
}

/// `A = [0 P(ψ̄); 0 −M⁻¹D]`, `B = [0; M⁻¹]`, `C = I₆` and the thruster `G`.
pub fn build_vessel_plant(params: &VesselParams) -> Result<LtiPlant> {
    params.validate()?;
    let m_inv = params
        .inertia_matrix()
        .try_inverse()
        .ok_or(Error::SingularInertia)?;
    let mut a = DMatrix::zeros(6, 6);
    a.view_mut((0, 3), (3, 3))
        .copy_from(&rotation(params.heading_ref));
    a.view_mut((3, 3), (3, 3))
        .copy_from(&(-m_inv * params.damping_matrix()));
    let mut b = DMatrix::zeros(6, 3);
    b.view_mut((3, 0), (3, 3)).copy_from(&m_inv);
    LtiPlant::new(a, b, DMatrix::identity(6, 6), params.allocation_matrix())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrixlab::max_abs;

    #[test]
    fn case_study_moment_arms() {
        let g = VesselParams::case_study().allocation_matrix();
        let printed = [-5.91, -19.1, 5.91, -19.1, 0.0, 18.5, 30.0, 35.0];
        for (j, p) in printed.iter().enumerate() {
            assert!(
                (g[(2, j)] - p).abs() < 0.01,
                "column {}: {}",
                j + 1,
                g[(2, j)]
            );
        }
        assert_eq!(
            g.row(0).iter().cloned().collect::<Vec<_>>(),
            vec![1., 0., 1., 0., 1., 0., 0., 0.]
        );
        assert_eq!(
            g.row(1).iter().cloned().collect::<Vec<_>>(),
            vec![0., 1., 0., 1., 0., 1., 1., 1.]
        );
    }

    #[test]
    fn zero_angles_unit_distances() {
        let mut p = VesselParams::case_study();
        p.distances = [1.0; 5];
        p.angles = [0.0; 5];
        let g = p.allocation_matrix();
        for s in 0..3 {
            assert_eq!(g[(2, 2 * s)], 0.0);
            assert_eq!(g[(2, 2 * s + 1)], 1.0);
        }
    }

    #[test]
    fn vessel_plant_structure() {
        let plant = build_vessel_plant(&VesselParams::case_study()).unwrap();
        assert_eq!((plant.n(), plant.k(), plant.m(), plant.p()), (6, 3, 8, 6));
        let top_right = plant.a().view((0, 3), (3, 3)).clone_owned();
        assert_eq!(top_right, DMatrix::identity(3, 3));
        assert_eq!(max_abs(&(plant.w() - plant.b() * plant.g())), 0.0);
        // W₂ = W₄ for the mirrored T1 angles, up to the rounding of cos(π ± 0.3)
        let gap = (plant.w().column(1) - plant.w().column(3)).amax();
        assert!(gap <= 1e-15 * plant.w().column(1).amax(), "{gap:e}");
    }

    #[test]
    fn singular_inertia_rejected() {
        let mut p = VesselParams::case_study();
        p.inertia = [[1.0, 0.0, 0.0], [0.0, 0.0, 0.0], [0.0, 0.0, 1.0]];
        assert_eq!(build_vessel_plant(&p), Err(Error::SingularInertia));
    }

    #[test]
    fn fault_free_profile_gives_identity() {
        let spec = VesselParams::thrusters();
        for t in [0.0, 1.0, 1e3] {
            let d = fault_matrix(&FaultProfile::none(), Some(&spec), 8, t).unwrap();
            assert_eq!(d, DMatrix::identity(8, 8));
        }
    }

    #[test]
    fn thruster_fault_couples_two_inputs() {
        let profile = FaultProfile {
            mode: FaultMode::Cluster,
            entries: vec![FaultEntry {
                target: 1,
                onset: 0.0,
                effect: Effectiveness::ExpDecay { rate: 0.03 },
            }],
        };
        let spec = VesselParams::thrusters();
        let d0 = fault_diagonal(&profile, Some(&spec), 8, 0.0).unwrap();
        assert_eq!(d0, DVector::from_element(8, 1.0));
        let late = fault_diagonal(&profile, Some(&spec), 8, 2000.0).unwrap();
        assert!(late[0] < 1e-20 && late[1] < 1e-20);
        assert!(late.iter().skip(2).all(|&v| v == 1.0));
    }

    #[test]
    fn constant_cluster_fault() {
        let profile = FaultProfile {
            mode: FaultMode::Cluster,
            entries: vec![FaultEntry {
                target: 2,
                onset: 0.0,
                effect: Effectiveness::Constant { value: 0.5 },
            }],
        };
        let d = fault_diagonal(&profile, Some(&VesselParams::thrusters()), 8, 3.0).unwrap();
        assert_eq!(d.as_slice(), &[1.0, 1.0, 0.5, 0.5, 1.0, 1.0, 1.0, 1.0]);
    }

    #[test]
    fn onset_and_clamping() {
        let entry = FaultEntry {
            target: 1,
            onset: 10.0,
            effect: Effectiveness::Constant { value: 1.7 },
        };
        assert_eq!(entry.effectiveness(9.999), 1.0);
        assert_eq!(entry.effectiveness(10.0), 1.0);
        let neg = Effectiveness::Constant { value: -0.2 };
        assert_eq!(neg.eval(0.0), 0.0);
        let ramp = Effectiveness::Ramp {
            duration: 10.0,
            floor: 0.2,
        };
        assert!((ramp.eval(5.0) - 0.6).abs() < 1e-15);
        assert_eq!(ramp.eval(20.0), 0.2);
    }

    #[test]
    fn out_of_range_targets() {
        let bad = FaultProfile {
            mode: FaultMode::Actuator,
            entries: vec![FaultEntry {
                target: 9,
                onset: 0.0,
                effect: Effectiveness::Constant { value: 0.0 },
            }],
        };
        assert_eq!(
            fault_diagonal(&bad, None, 8, 0.0),
            Err(Error::IndexOutOfRange { index: 9, max: 8 })
        );
        let bad_cluster = FaultProfile {
            mode: FaultMode::Cluster,
            ..bad
        };
        assert_eq!(
            fault_diagonal(&bad_cluster, Some(&VesselParams::thrusters()), 8, 0.0),
            Err(Error::IndexOutOfRange { index: 9, max: 5 })
        );
    }

    #[test]
    fn cluster_spec_lookup() {
        let spec = VesselParams::thrusters();
        assert_eq!(spec.members(2).unwrap(), 3..=4);
        assert_eq!(spec.members(5).unwrap(), 8..=8);
        assert_eq!(spec.cluster_of(6), Some(3));
        assert_eq!(spec.cluster_of(9), None);
        assert!(ClusterSpec::from_sizes(vec![2, 0]).is_err());
    }

    #[test]
    fn derivative_reduces_to_w_u_without_faults() {
        let plant = build_vessel_plant(&VesselParams::case_study()).unwrap();
        let x = DVector::from_vec(vec![1.0, 1.0, 0.0, 2.2, 1.9, 0.0]);
        let u = DVector::from_fn(8, |i, _| 1e4 * (i as f64 + 1.0));
        let zero = DVector::zeros(6);
        let ones = DVector::from_element(8, 1.0);
        let d = plant_derivative(&plant, &x, &u, &ones, &zero).unwrap();
        assert_eq!(d, plant.a() * &x + plant.w() * &u);
        let still =
            plant_derivative(&plant, &DVector::zeros(6), &DVector::zeros(8), &ones, &zero).unwrap();
        assert_eq!(still, DVector::zeros(6));
        assert!(plant_derivative(&plant, &x, &DVector::zeros(7), &ones, &zero).is_err());
    }
}
