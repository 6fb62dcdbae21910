//! Falsified-information attacks on the federation: a single poisoning
//! vehicle, and a vehicle that additionally mints Sybil identities.

mod agent;
mod route;

use std::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Uniform};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::learner::ModelParams;
use crate::network::NetworkError;
use crate::protocol::{Identity, LocalUpdate};
use crate::seed;
use crate::traffic::{VehicleId, World};

pub use agent::{attack2_round, ActivityRecord, Adversary};
pub use route::{attacker_route_policy, AttackRoute};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AdversaryError {
    #[error("attack configuration: {0}")]
    Config(String),
    #[error("attacker {0} is not on a covered link")]
    OutsideCoverage(VehicleId),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMode {
    Single,
    Sybil,
}

impl fmt::Display for AttackMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttackMode::Single => "single",
            AttackMode::Sybil => "sybil",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseFamily {
    Gaussian,
    /// Uniform on `location ± scale·√3`, which has standard deviation `scale`.
    Uniform,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScale {
    /// Standard deviation of the current global model's values.
    GmStdev,
    Fixed(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseSpec {
    pub family: NoiseFamily,
    pub location: f64,
    pub scale: NoiseScale,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec { family: NoiseFamily::Gaussian, location: 0.0, scale: NoiseScale::GmStdev }
    }
}

impl NoiseSpec {
    pub fn resolve_scale(&self, gm: &ModelParams) -> f64 {
        match self.scale {
            NoiseScale::GmStdev => gm.value_stdev(),
            NoiseScale::Fixed(s) => s,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum Trigger {
    Always,
    /// Attack only while the chief's RMSE improved by less than `threshold`
    /// (relative) over the last `window` rounds.
    AtConvergence { threshold: f64, window: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SampleClaim {
    /// Median sample count among the honest volunteers of the round.
    MedianHonest,
    Fixed(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    pub mode: AttackMode,
    pub noise: NoiseSpec,
    /// Fabricated identities requested in Sybil mode; ignored in single mode.
    pub sybil_count: usize,
    pub trigger: Trigger,
    pub claimed_samples: SampleClaim,
    /// Seconds the attacker needs to produce its payloads.
    pub compute_delay_s: f64,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            mode: AttackMode::Single,
            noise: NoiseSpec::default(),
            sybil_count: 1,
            trigger: Trigger::Always,
            claimed_samples: SampleClaim::MedianHonest,
            compute_delay_s: 1.0,
        }
    }
}

impl AttackConfig {
    pub fn validate(&self) -> Result<(), AdversaryError> {
        let bad = |m: &str| Err(AdversaryError::Config(m.to_string()));
        if self.sybil_count == 0 {
            return bad("sybil_count must be at least 1");
        }
        if !self.noise.location.is_finite() {
            return bad("noise location must be finite");
        }
        if let NoiseScale::Fixed(s) = self.noise.scale {
            if !(s > 0.0 && s.is_finite()) {
                return bad("noise scale must be positive");
            }
        }
        if let Trigger::AtConvergence { threshold, window } = self.trigger {
            if !(threshold > 0.0 && threshold.is_finite()) || window == 0 {
                return bad("at_convergence needs a positive threshold and window");
            }
        }
        if self.claimed_samples == SampleClaim::Fixed(0) {
            return bad("claimed sample count must be at least 1");
        }
        if !(self.compute_delay_s >= 0.0 && self.compute_delay_s.is_finite()) {
            return bad("compute_delay_s must be non-negative");
        }
        Ok(())
    }

    /// Fabricated identities on top of the master; zero in single mode.
    pub fn requested_sybils(&self) -> usize {
        match self.mode {
            AttackMode::Single => 0,
            AttackMode::Sybil => self.sybil_count,
        }
    }
}

/// Parameters drawn i.i.d. from the configured noise, shaped like `gm`.
pub fn attack1_update(
    gm: &ModelParams,
    cfg: &AttackConfig,
    sender: Identity,
    round: u64,
    sample_count: usize,
    seed: u64,
) -> LocalUpdate {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let loc = cfg.noise.location;
    let scale = cfg.noise.resolve_scale(gm).max(0.0);
    let values: Vec<f64> = if scale == 0.0 {
        vec![loc; gm.values.len()]
    } else {
        match cfg.noise.family {
            NoiseFamily::Gaussian => {
                let d = Normal::new(loc, scale).expect("finite positive scale");
                (0..gm.values.len()).map(|_| d.sample(&mut rng)).collect()
            }
            NoiseFamily::Uniform => {
                let half = scale * 3f64.sqrt();
                let d = Uniform::new(loc - half, loc + half).expect("nonempty range");
                (0..gm.values.len()).map(|_| d.sample(&mut rng)).collect()
            }
        }
    };
    LocalUpdate {
        sender,
        round,
        params: ModelParams { layout: gm.layout.clone(), values, version: gm.version },
        sample_count: sample_count.max(1),
    }
}

/// Per-identity payload seed for `round`.
pub fn payload_seed(master_seed: u64, round: u64, id: Identity) -> u64 {
    let (kind, a, b) = match id {
        Identity::Vehicle(v) => (0, v.0, 0),
        Identity::Sybil { master, index } => (1, master.0, index as u64),
    };
    seed::derive(master_seed, &[seed::stream::ATTACK, round, kind, a, b])
}

/// Room left on `link_id` under its lane capacity.
pub fn sybil_cap(world: &World, link_id: &str) -> Result<usize, NetworkError> {
    let idx = world.network().index_of(link_id)?;
    let cap = world.network().link(idx).capacity();
    Ok(cap.saturating_sub(world.count_on(idx)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::{init_params, Layout};

    fn gm() -> ModelParams {
        init_params(&Layout::stacked(3, 8, 1).unwrap(), 1)
    }

    fn me() -> Identity {
        Identity::Vehicle(VehicleId(9))
    }

    #[test]
    fn degenerate_noise_gives_zero_payload() {
        let cfg = AttackConfig {
            noise: NoiseSpec { scale: NoiseScale::Fixed(0.0), ..NoiseSpec::default() },
            ..AttackConfig::default()
        };
        let u = attack1_update(&gm(), &cfg, me(), 3, 10, 5);
        assert!(u.params.values.iter().all(|&v| v == 0.0));
        assert_eq!(u.params.layout, gm().layout);
        assert_eq!(u.round, 3);
    }

    #[test]
    fn payload_is_seed_deterministic() {
        let cfg = AttackConfig::default();
        let a = attack1_update(&gm(), &cfg, me(), 0, 10, 42);
        assert_eq!(a, attack1_update(&gm(), &cfg, me(), 0, 10, 42));
        assert_ne!(a, attack1_update(&gm(), &cfg, me(), 0, 10, 43));
    }

    fn moments(v: &[f64]) -> (f64, f64) {
        let n = v.len() as f64;
        let mean = v.iter().sum::<f64>() / n;
        let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
        (mean, var.sqrt())
    }

    #[test]
    fn payload_moments_match_noise_spec() {
        let layout = Layout::stacked(3, 48, 1).unwrap();
        assert!(layout.param_count() >= 10_000);
        let big = ModelParams::zeros(layout);
        for family in [NoiseFamily::Gaussian, NoiseFamily::Uniform] {
            let (loc, scale) = (0.3, 0.7);
            let cfg = AttackConfig {
                noise: NoiseSpec { family, location: loc, scale: NoiseScale::Fixed(scale) },
                ..AttackConfig::default()
            };
            let u = attack1_update(&big, &cfg, me(), 0, 1, 7);
            let n = u.params.values.len() as f64;
            let (mean, sd) = moments(&u.params.values);
            let se_mean = scale / n.sqrt();
            // Standard error of the sample stdev, using the family's kurtosis.
            let kurt = match family {
                NoiseFamily::Gaussian => 3.0,
                NoiseFamily::Uniform => 1.8,
            };
            let se_sd = scale * ((kurt - 1.0) / (4.0 * n)).sqrt();
            assert!((mean - loc).abs() < 3.0 * se_mean, "{family:?} mean {mean}");
            assert!((sd - scale).abs() < 3.0 * se_sd, "{family:?} sd {sd}");
        }
    }

    #[test]
    fn default_scale_tracks_global_model() {
        let g = gm();
        let cfg = AttackConfig::default();
        assert_eq!(cfg.noise.resolve_scale(&g), g.value_stdev());
        let u = attack1_update(&g, &cfg, me(), 0, 4, 1);
        assert!(u.params.values.iter().all(|v| v.is_finite()));
        assert_eq!(u.sample_count, 4);
    }

    #[test]
    fn config_validation() {
        assert!(AttackConfig::default().validate().is_ok());
        let zero = AttackConfig { sybil_count: 0, ..AttackConfig::default() };
        assert!(zero.validate().is_err());
        let neg = AttackConfig {
            noise: NoiseSpec { scale: NoiseScale::Fixed(-1.0), ..NoiseSpec::default() },
            ..AttackConfig::default()
        };
        assert!(neg.validate().is_err());
        let single = AttackConfig { sybil_count: 5, ..AttackConfig::default() };
        assert_eq!(single.requested_sybils(), 0);
    }
}
