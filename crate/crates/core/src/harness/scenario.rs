use std::fs;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::HarnessError;
use crate::adversary::AttackConfig;
use crate::learner::LearnerConfig;
use crate::network::{load_network, RoadNetwork};
use crate::protocol::ProtocolConfig;
use crate::traffic::{IdmParams, Route, RouteKind};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Density {
    Low,
    High,
}

/// Total arrival rate, veh/s, for each density level.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DensityRates {
    pub low: f64,
    pub high: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RouteSpec {
    pub links: Vec<String>,
    #[serde(default = "one")]
    pub weight: f64,
}

fn one() -> f64 {
    1.0
}

/// A fixed spawn, replacing the Poisson stream when a schedule is given.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduledSpawn {
    pub time: f64,
    /// Index into `demand.routes`.
    pub route: usize,
    #[serde(default = "one")]
    pub speed_factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DemandSpec {
    pub density: Density,
    pub rates: DensityRates,
    pub routes: Vec<RouteSpec>,
    #[serde(default = "default_speed_factor")]
    pub speed_factor: (f64, f64),
    /// Traffic-only seconds before the first round is announced.
    #[serde(default = "default_warmup")]
    pub warmup_s: u32,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub schedule: Option<Vec<ScheduledSpawn>>,
}

fn default_speed_factor() -> (f64, f64) {
    (0.8, 1.0)
}

fn default_warmup() -> u32 {
    300
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSpec {
    /// Held-out windows the chief scores on.
    pub samples: usize,
    /// Pooled windows for the centralized baseline.
    pub pooled_samples: usize,
}

impl Default for EvalSpec {
    fn default() -> Self {
        EvalSpec { samples: 600, pooled_samples: 1500 }
    }
}

/// The scenario document as written on disk.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub name: String,
    #[serde(default)]
    pub seed: u64,
    /// Network document, relative to the scenario file.
    pub network: String,
    pub demand: DemandSpec,
    #[serde(default)]
    pub learner: LearnerConfig,
    #[serde(default)]
    pub protocol: ProtocolConfig,
    #[serde(default)]
    pub evaluation: EvalSpec,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attack: Option<AttackConfig>,
    #[serde(default)]
    pub idm: IdmParams,
}

/// A validated scenario with its network resolved.
#[derive(Debug, Clone, PartialEq)]
pub struct Scenario {
    pub file: ScenarioFile,
    pub network: Arc<RoadNetwork>,
    pub routes: Vec<Route>,
}

fn config(msg: impl Into<String>) -> HarnessError {
    HarnessError::Config(msg.into())
}

impl Scenario {
    /// Reads a scenario and the network it names from disk.
    pub fn load(path: &Path) -> Result<Scenario, HarnessError> {
        let text = fs::read_to_string(path).map_err(|e| HarnessError::io(path, e))?;
        let base = path.parent().unwrap_or(Path::new("."));
        Scenario::parse(&text, |rel| {
            let p = base.join(rel);
            fs::read_to_string(&p).map_err(|e| HarnessError::io(&p, e))
        })
    }

    /// Parses a scenario document; `network` maps the `network` field to its text.
    pub fn parse(
        text: &str,
        network: impl FnOnce(&str) -> Result<String, HarnessError>,
    ) -> Result<Scenario, HarnessError> {
        let file: ScenarioFile =
            toml::from_str(text).map_err(|e| config(format!("scenario syntax: {}", e.message())))?;
        let net_text = network(&file.network)?;
        Scenario::from_parts(file, &net_text)
    }

    pub fn from_parts(file: ScenarioFile, network_text: &str) -> Result<Scenario, HarnessError> {
        let network = Arc::new(load_network(network_text)?);
        let routes = validate(&file, &network)?;
        Ok(Scenario { file, network, routes })
    }

    pub fn name(&self) -> &str {
        &self.file.name
    }

    pub fn seed(&self) -> u64 {
        self.file.seed
    }

    pub fn with_seed(&self, seed: u64) -> Scenario {
        let mut s = self.clone();
        s.file.seed = seed;
        s
    }

    /// Total arrival rate for the configured density level.
    pub fn rate(&self) -> f64 {
        match self.file.demand.density {
            Density::Low => self.file.demand.rates.low,
            Density::High => self.file.demand.rates.high,
        }
    }

    /// Simulated seconds the run can last: warmup plus every round's deadline.
    pub fn horizon_s(&self) -> f64 {
        self.file.demand.warmup_s as f64
            + self.file.protocol.rounds as f64 * self.file.protocol.deadline_s.ceil()
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(&self.file).expect("scenario serializes")
    }

    /// SHA-256 over the canonical scenario and the network it resolved to.
    pub fn config_hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(serde_json::to_string(&self.file).expect("scenario serializes"));
        h.update(self.network.emit());
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

fn validate(f: &ScenarioFile, net: &RoadNetwork) -> Result<Vec<Route>, HarnessError> {
    if f.name.is_empty()
        || !f.name.chars().all(|c| c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.'))
    {
        return Err(config(format!(
            "name {:?} must be nonempty ASCII letters, digits, '-', '_' or '.'",
            f.name
        )));
    }
    let d = &f.demand;
    let r = d.rates;
    if !(r.low > 0.0 && r.low < r.high && r.high.is_finite()) {
        return Err(config(format!(
            "demand.rates must satisfy 0 < low < high (got low={}, high={})",
            r.low, r.high
        )));
    }
    let (lo, hi) = d.speed_factor;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(config("demand.speed_factor must satisfy 0 < lo <= hi <= 1"));
    }
    if d.routes.is_empty() {
        return Err(config("demand.routes must list at least one route"));
    }
    let mut routes = Vec::with_capacity(d.routes.len());
    for (i, spec) in d.routes.iter().enumerate() {
        if !(spec.weight > 0.0 && spec.weight.is_finite()) {
            return Err(config(format!("demand.routes[{i}].weight must be positive")));
        }
        let route = Route::resolve(net, &spec.links, RouteKind::Path)
            .map_err(|e| config(format!("demand.routes[{i}]: {e}")))?;
        routes.push(route);
    }
    if let Some(schedule) = &d.schedule {
        for (i, s) in schedule.iter().enumerate() {
            if s.route >= routes.len() {
                return Err(config(format!("demand.schedule[{i}].route {} out of range", s.route)));
            }
            if !(s.time >= 0.0 && s.time.is_finite()) {
                return Err(config(format!("demand.schedule[{i}].time must be non-negative")));
            }
            if !(s.speed_factor > 0.0 && s.speed_factor <= 1.0) {
                return Err(config(format!("demand.schedule[{i}].speed_factor must be in (0, 1]")));
            }
        }
    }
    f.learner.validate().map_err(|e| config(format!("learner: {e}")))?;
    f.protocol.validate().map_err(|e| config(format!("protocol: {e}")))?;
    if let Some(a) = &f.attack {
        a.validate().map_err(|e| config(format!("attack: {e}")))?;
    }
    f.idm.validate().map_err(|e| config(format!("idm: {e}")))?;
    if f.evaluation.samples == 0 || f.evaluation.pooled_samples == 0 {
        return Err(config("evaluation sample counts must be positive"));
    }
    Ok(routes)
}
