//! Bounded slowly-varying disturbance `b(t)`: a constant force on a seeded
//! direction plus an oscillation along a slowly rotating direction.

use nalgebra::DVector;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DisturbanceConfig {
    #[serde(default)]
    pub enabled: bool,
    /// Constant magnitude as a fraction of the bound.
    #[serde(default = "default_constant")]
    pub constant_fraction: f64,
    /// Oscillation amplitude as a fraction of the bound.
    #[serde(default = "default_oscillating")]
    pub oscillating_fraction: f64,
    /// rad/s
    #[serde(default = "default_frequency")]
    pub frequency: f64,
    /// Rotation rate of the oscillation direction, rad/s.
    #[serde(default = "default_rotation")]
    pub rotation_rate: f64,
}

impl Default for DisturbanceConfig {
    fn default() -> Self {
        Self {
            enabled: false,
            constant_fraction: default_constant(),
            oscillating_fraction: default_oscillating(),
            frequency: default_frequency(),
            rotation_rate: default_rotation(),
        }
    }
}

fn default_constant() -> f64 {
    0.6
}
fn default_oscillating() -> f64 {
    0.4
}
fn default_frequency() -> f64 {
    0.1
}
fn default_rotation() -> f64 {
    0.05
}

#[derive(Debug, Clone, PartialEq)]
pub struct DisturbanceModel {
    pub bound: f64,
    constant: DVector<f64>,
    amplitude: f64,
    frequency: f64,
    rotation_rate: f64,
    plane: (DVector<f64>, DVector<f64>),
}

impl DisturbanceModel {
    /// Identically zero disturbance of dimension `dim`.
    pub fn off(dim: usize) -> Self {
        Self {
            bound: 0.0,
            constant: DVector::zeros(dim),
            amplitude: 0.0,
            frequency: 0.0,
            rotation_rate: 0.0,
            plane: (DVector::zeros(dim), DVector::zeros(dim)),
        }
    }

    pub fn new(cfg: &DisturbanceConfig, bound: f64, dim: usize, seed: u64) -> Result<Self> {
        if !cfg.enabled || dim == 0 {
            return Ok(Self::off(dim));
        }
        let (cf, of) = (cfg.constant_fraction, cfg.oscillating_fraction);
        if !(cf >= 0.0 && of >= 0.0 && cf + of <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "disturbance fractions {cf} + {of} must be non-negative and sum to at most 1"
            )));
        }
        if !(bound >= 0.0 && bound.is_finite()) {
            return Err(Error::InvalidArgument(format!("disturbance bound {bound}")));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let direction = unit(&mut rng, dim);
        let first = unit(&mut rng, dim);
        let second = if dim > 1 {
            loop {
                let c = unit(&mut rng, dim);
                let orth = &c - &first * first.dot(&c);
                if orth.norm() > 1e-3 {
                    break orth.normalize();
                }
            }
        } else {
            DVector::zeros(dim)
        };
        Ok(Self {
            bound,
            constant: direction * (cf * bound),
            amplitude: of * bound,
            frequency: cfg.frequency,
            rotation_rate: cfg.rotation_rate,
            plane: (first, second),
        })
    }

    pub fn dim(&self) -> usize {
        self.constant.len()
    }

    pub fn eval(&self, t: f64) -> DVector<f64> {
        let (s, c) = (self.rotation_rate * t).sin_cos();
        let rotating = &self.plane.0 * c + &self.plane.1 * s;
        &self.constant + rotating * (self.amplitude * (self.frequency * t).sin())
    }
}

fn unit(rng: &mut ChaCha8Rng, dim: usize) -> DVector<f64> {
    loop {
        let v = DVector::from_fn(dim, |_, _| StandardNormal.sample(rng));
        let n: f64 = v.norm();
        if n > 1e-6 {
            return v / n;
        }
    }
}
