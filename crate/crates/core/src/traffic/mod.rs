//! Microscopic traffic: IDM car-following on a link graph, demand injection
//! and the space-mean link indicators that feed the speed predictor.

mod demand;
mod idm;
mod world;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::NetworkError;

pub use demand::{poisson_schedule, Demand, FlowSpec, SpawnRequest};
pub use idm::{idm_acceleration, IdmParams};
pub use world::{World, MIN_GAP, VEHICLE_LENGTH};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum SimError {
    #[error("collision state: non-positive gap {gap}")]
    Collision { gap: f64 },
    #[error("configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Network(#[from] NetworkError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct VehicleId(pub u64);

impl fmt::Display for VehicleId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "v{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Role {
    Honest,
    AttackerSingle,
    AttackerSybil,
}

impl Role {
    pub fn is_adversarial(self) -> bool {
        !matches!(self, Role::Honest)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RouteKind {
    /// Source-to-sink; the vehicle leaves the world at the end of the last link.
    Path,
    /// Closed cycle; the last link feeds back into the first.
    Loop,
    /// Traverse the links, then reappear at the start of the first one.
    Shuttle,
}

/// Ordered link indices into the vehicle's [`RoadNetwork`](crate::network::RoadNetwork).
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Route {
    pub links: Vec<usize>,
    pub kind: RouteKind,
}

impl Route {
    /// Resolves link ids and checks that consecutive links are connected.
    pub fn resolve(
        net: &crate::network::RoadNetwork,
        ids: &[impl AsRef<str>],
        kind: RouteKind,
    ) -> Result<Route, SimError> {
        if ids.is_empty() {
            return Err(SimError::Config("route has no links".into()));
        }
        let links = ids
            .iter()
            .map(|id| net.index_of(id.as_ref()))
            .collect::<Result<Vec<_>, _>>()?;
        let route = Route { links, kind };
        route.check(net)?;
        Ok(route)
    }

    pub fn check(&self, net: &crate::network::RoadNetwork) -> Result<(), SimError> {
        let connected = |a: usize, b: usize| net.out_link_indices(a).contains(&b);
        for w in self.links.windows(2) {
            if !connected(w[0], w[1]) {
                return Err(SimError::Config(format!(
                    "route step {} -> {} is not a declared connection",
                    net.link(w[0]).id,
                    net.link(w[1]).id
                )));
            }
        }
        if self.kind == RouteKind::Loop {
            let (first, last) = (self.links[0], self.links[self.links.len() - 1]);
            if !connected(last, first) {
                return Err(SimError::Config(format!(
                    "loop route does not close: {} -> {}",
                    net.link(last).id,
                    net.link(first).id
                )));
            }
        }
        Ok(())
    }

    /// Link that follows position `k` of the route, if the route continues.
    pub fn next_after(&self, k: usize) -> Option<(usize, usize)> {
        if k + 1 < self.links.len() {
            Some((k + 1, self.links[k + 1]))
        } else if self.kind == RouteKind::Loop {
            Some((0, self.links[0]))
        } else {
            None
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VehicleState {
    pub id: VehicleId,
    /// Current link index.
    pub link: usize,
    /// Front bumper, meters from link start.
    pub position: f64,
    /// m/s.
    pub speed: f64,
    pub route: Route,
    /// Index of `link` within `route.links`.
    pub route_pos: usize,
    pub role: Role,
    /// Fraction of the link speed limit this driver wants to travel at, in (0, 1].
    pub speed_factor: f64,
}

/// Snapshot indicators of one link, as seen by any vehicle on it.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LinkObservation {
    /// Seconds.
    pub time: f64,
    pub link: usize,
    /// km/h.
    pub mean_speed: f64,
    /// veh/km/lane.
    pub density: f64,
    /// km/h, mean over in-links' `mean_speed`.
    pub in_speed: f64,
}
