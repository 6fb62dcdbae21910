use rand::distr::weighted::WeightedIndex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};

use super::{Role, Route, SimError, VehicleId, World};

#[derive(Debug, Clone, PartialEq)]
pub struct SpawnRequest {
    /// Earliest simulation second at which the vehicle may enter.
    pub time: f64,
    pub route: Route,
    pub role: Role,
    pub speed_factor: f64,
}

/// One demand stream: a route and its share of the total arrival rate.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowSpec {
    pub route: Route,
    pub weight: f64,
}

/// Seeded Poisson arrivals at `rate` veh/s over `[0, horizon)`, split across
/// flows in proportion to their weights. Arrival times are rounded up to the
/// next whole simulation second.
pub fn poisson_schedule(
    flows: &[FlowSpec],
    rate: f64,
    horizon: f64,
    speed_factor: (f64, f64),
    seed: u64,
) -> Result<Vec<SpawnRequest>, SimError> {
    if flows.is_empty() {
        return Err(SimError::Config("demand needs at least one flow".into()));
    }
    if !(rate > 0.0 && rate.is_finite()) {
        return Err(SimError::Config(format!("arrival rate {rate} must be positive")));
    }
    let (lo, hi) = speed_factor;
    if !(lo > 0.0 && lo <= hi && hi <= 1.0) {
        return Err(SimError::Config(format!(
            "speed factor range [{lo}, {hi}] must lie in (0, 1]"
        )));
    }
    let pick = WeightedIndex::new(flows.iter().map(|f| f.weight))
        .map_err(|e| SimError::Config(format!("flow weights: {e}")))?;
    let gaps = Exp::new(rate).map_err(|e| SimError::Config(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut t = 0.0;
    let mut out = Vec::new();
    loop {
        t += gaps.sample(&mut rng);
        if t >= horizon {
            break;
        }
        let flow = &flows[pick.sample(&mut rng)];
        let factor = if lo == hi { lo } else { rng.random_range(lo..=hi) };
        out.push(SpawnRequest {
            time: t.ceil(),
            route: flow.route.clone(),
            role: Role::Honest,
            speed_factor: factor,
        });
    }
    Ok(out)
}

/// Pending spawns. Blocked entries stay queued and are retried every step.
#[derive(Debug, Clone, Default)]
pub struct Demand {
    pending: Vec<SpawnRequest>,
}

impl Demand {
    pub fn new(mut schedule: Vec<SpawnRequest>) -> Self {
        schedule.sort_by(|a, b| a.time.total_cmp(&b.time));
        Demand { pending: schedule }
    }

    pub fn push(&mut self, req: SpawnRequest) {
        let at = self.pending.partition_point(|p| p.time <= req.time);
        self.pending.insert(at, req);
    }

    pub fn pending(&self) -> usize {
        self.pending.len()
    }

    /// Spawns every due request whose entry point is free, in schedule order.
    pub fn release(&mut self, world: &mut World) -> Vec<(VehicleId, Role)> {
        let now = world.time();
        let mut spawned = Vec::new();
        let mut kept = Vec::with_capacity(self.pending.len());
        for req in self.pending.drain(..) {
            if req.time > now {
                kept.push(req);
                continue;
            }
            match world.try_spawn(req.route.clone(), req.role, req.speed_factor) {
                Some(id) => spawned.push((id, req.role)),
                None => kept.push(req),
            }
        }
        self.pending = kept;
        spawned
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::load_network;
    use crate::traffic::{IdmParams, RouteKind};
    use std::sync::Arc;

    fn setup() -> (Arc<crate::network::RoadNetwork>, Route) {
        let net = Arc::new(
            load_network("link A length=20 lanes=1 limit=50 in=\nlink B length=200 lanes=1 limit=50 in=A\ncoverage A\n")
                .unwrap(),
        );
        let r = Route::resolve(&net, &["A", "B"], RouteKind::Path).unwrap();
        (net, r)
    }

    #[test]
    fn same_seed_same_schedule() {
        let (_, r) = setup();
        let flows = [FlowSpec { route: r, weight: 1.0 }];
        let a = poisson_schedule(&flows, 0.3, 600.0, (0.8, 1.0), 42).unwrap();
        let b = poisson_schedule(&flows, 0.3, 600.0, (0.8, 1.0), 42).unwrap();
        assert_eq!(a, b);
        let c = poisson_schedule(&flows, 0.3, 600.0, (0.8, 1.0), 43).unwrap();
        assert_ne!(a, c);
        // Mean count of a rate-0.3 process over 600 s is 180.
        assert!((a.len() as f64 - 180.0).abs() < 4.0 * 180f64.sqrt());
        assert!(a.iter().all(|s| s.time.fract() == 0.0 && s.time < 601.0));
    }

    #[test]
    fn blocked_spawn_is_deferred() {
        let (net, r) = setup();
        let mut w = World::new(net, IdmParams::default()).unwrap();
        let req = |t| SpawnRequest {
            time: t,
            route: r.clone(),
            role: Role::Honest,
            speed_factor: 1.0,
        };
        let mut d = Demand::new(vec![req(0.0), req(0.0), req(5.0)]);
        assert_eq!(d.release(&mut w).len(), 1);
        assert_eq!(w.vehicle_count(), 1);
        assert_eq!(d.pending(), 2);
        let mut total = 1;
        for _ in 0..20 {
            w.step(1.0);
            total += d.release(&mut w).len();
        }
        assert_eq!(total, 3);
        assert_eq!(d.pending(), 0);
    }

    #[test]
    fn rejects_bad_parameters() {
        let (_, r) = setup();
        let flows = [FlowSpec { route: r, weight: 1.0 }];
        assert!(poisson_schedule(&flows, 0.0, 10.0, (0.8, 1.0), 1).is_err());
        assert!(poisson_schedule(&flows, 0.1, 10.0, (0.0, 1.0), 1).is_err());
        assert!(poisson_schedule(&[], 0.1, 10.0, (0.8, 1.0), 1).is_err());
    }
}
