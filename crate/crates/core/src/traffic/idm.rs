//! Intelligent Driver Model car-following law.

use serde::{Deserialize, Serialize};

use super::SimError;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct IdmParams {
    /// Maximum acceleration, m/s².
    pub a_max: f64,
    /// Comfortable deceleration, m/s².
    pub b_comf: f64,
    /// Desired speed, m/s. Overridden per link and vehicle by the simulator.
    pub v0: f64,
    /// Safe time headway, s.
    pub headway: f64,
    /// Standstill gap, m.
    pub s0: f64,
    pub delta: f64,
}

impl Default for IdmParams {
    fn default() -> Self {
        IdmParams {
            a_max: 1.5,
            b_comf: 2.0,
            v0: 80.0 / 3.6,
            headway: 1.5,
            s0: 2.0,
            delta: 4.0,
        }
    }
}

impl IdmParams {
    pub fn with_v0(self, v0: f64) -> Self {
        IdmParams { v0, ..self }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let positive = [
            ("a_max", self.a_max),
            ("b_comf", self.b_comf),
            ("v0", self.v0),
            ("headway", self.headway),
            ("s0", self.s0),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(SimError::Config(format!("IDM `{name}` must be positive")));
            }
        }
        if !(self.delta >= 1.0 && self.delta.is_finite()) {
            return Err(SimError::Config("IDM `delta` must be at least 1".into()));
        }
        Ok(())
    }

    /// Desired dynamic gap s*(v, Δv).
    pub fn desired_gap(&self, v: f64, approach_rate: f64) -> f64 {
        self.s0
            + v * self.headway
            + v * approach_rate / (2.0 * (self.a_max * self.b_comf).sqrt())
    }
}

/// IDM acceleration for a follower at speed `v` behind a leader at `v_lead`
/// separated by bumper-to-bumper `gap`. An empty road ahead is expressed with a
/// very large (or infinite) gap.
pub fn idm_acceleration(v: f64, v_lead: f64, gap: f64, p: &IdmParams) -> Result<f64, SimError> {
    if !(gap > 0.0) {
        return Err(SimError::Collision { gap });
    }
    let free = 1.0 - (v / p.v0).powf(p.delta);
    let interaction = (p.desired_gap(v, v - v_lead) / gap).powi(2);
    Ok(p.a_max * (free - interaction))
}
