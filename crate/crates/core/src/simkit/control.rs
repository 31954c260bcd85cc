//! Commanded generalized effect `τ_c = f(y)`.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ControllerConfig {
    #[serde(default = "default_kp")]
    pub kp: f64,
    #[serde(default = "default_ki")]
    pub ki: f64,
    #[serde(default = "default_kd")]
    pub kd: f64,
    /// Clamp on the heading-error integral, rad·s.
    #[serde(default = "default_integral_limit")]
    pub integral_limit: f64,
    /// Closed-loop bandwidth of the surge/sway velocity loop after reconfiguration, rad/s.
    #[serde(default = "default_bandwidth")]
    pub velocity_bandwidth: f64,
    #[serde(default = "yes")]
    pub track_after_reconfiguration: bool,
    /// Velocity setpoint `(u, v, r)`; the initial velocity when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity_reference: Option<Vec<f64>>,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        Self {
            kp: default_kp(),
            ki: default_ki(),
            kd: default_kd(),
            integral_limit: default_integral_limit(),
            velocity_bandwidth: default_bandwidth(),
            track_after_reconfiguration: true,
            velocity_reference: None,
        }
    }
}

fn default_kp() -> f64 {
    1e8
}
fn default_ki() -> f64 {
    1e6
}
fn default_kd() -> f64 {
    1e8
}
fn default_integral_limit() -> f64 {
    1.0
}
fn default_bandwidth() -> f64 {
    0.2
}
fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq)]
pub enum CommandLaw {
    /// `τ_c = D ν + (0, 0, a_ψ)` on `y = (x, y, ψ, u, v, r)`.
    Vessel {
        damping: DMatrix<f64>,
        /// Diagonal of the inertia matrix, used to scale velocity gains.
        inertia: DVector<f64>,
        heading_ref: f64,
    },
    /// `τ_c = offset + feedback · y`.
    Linear {
        offset: DVector<f64>,
        feedback: DMatrix<f64>,
    },
}

impl CommandLaw {
    pub fn effects(&self) -> usize {
        match self {
            CommandLaw::Vessel { .. } => 3,
            CommandLaw::Linear { offset, .. } => offset.len(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct PidState {
    pub integral: f64,
}

/// The command law evaluated at output `y`. `tracking` holds the velocity
/// setpoint once the surge/sway tracking loop is active.
pub fn commanded_effect(
    law: &CommandLaw,
    gains: &ControllerConfig,
    pid: &PidState,
    tracking: Option<&DVector<f64>>,
    y: &DVector<f64>,
) -> Result<DVector<f64>> {
    match law {
        CommandLaw::Vessel {
            damping,
            inertia,
            heading_ref,
        } => {
            if y.len() != 6 {
                return Err(Error::dims("vessel output", 6, y.len()));
            }
            let nu = y.rows(3, 3).clone_owned();
            let mut tau = damping * &nu;
            let err = y[2] - heading_ref;
            tau[2] -= gains.kp * err + gains.ki * pid.integral + gains.kd * y[5];
            if let Some(reference) = tracking {
                for i in 0..2 {
                    tau[i] += gains.velocity_bandwidth * inertia[i] * (reference[i] - nu[i]);
                }
            }
            Ok(tau)
        }
        CommandLaw::Linear { offset, feedback } => {
            if feedback.ncols() != y.len() {
                return Err(Error::dims("feedback columns", feedback.ncols(), y.len()));
            }
            Ok(offset + feedback * y)
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Controller {
    pub law: CommandLaw,
    pub gains: ControllerConfig,
    pub pid: PidState,
    pub tracking: Option<DVector<f64>>,
}

impl Controller {
    pub fn new(law: CommandLaw, gains: ControllerConfig) -> Self {
        Self {
            law,
            gains,
            pid: PidState::default(),
            tracking: None,
        }
    }

    pub fn command(&self, y: &DVector<f64>) -> Result<DVector<f64>> {
        commanded_effect(&self.law, &self.gains, &self.pid, self.tracking.as_ref(), y)
    }

    /// Integrates the heading error over one sample, with anti-windup clamp.
    pub fn advance(&mut self, y: &DVector<f64>, dt: f64) {
        if let CommandLaw::Vessel { heading_ref, .. } = &self.law {
            let limit = self.gains.integral_limit.abs();
            self.pid.integral =
                (self.pid.integral + (y[2] - heading_ref) * dt).clamp(-limit, limit);
        }
    }

    pub fn start_tracking(&mut self, reference: DVector<f64>) {
        self.tracking = Some(reference);
    }
}
