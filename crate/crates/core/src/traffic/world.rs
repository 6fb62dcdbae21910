use std::collections::BTreeMap;
use std::io::{self, Write};
use std::sync::Arc;

use super::idm::{idm_acceleration, IdmParams};
use super::{LinkObservation, Role, Route, RouteKind, SimError, VehicleId, VehicleState};
use crate::network::RoadNetwork;

/// Vehicle body length (m). With the default standstill gap this packs
/// vehicles at the default jam spacing.
pub const VEHICLE_LENGTH: f64 = 5.5;

/// Smallest bumper-to-bumper gap a move may leave behind a leader (m).
pub const MIN_GAP: f64 = 0.5;

/// Gap handed to the IDM when a projected leader overlaps the follower.
const GAP_FLOOR: f64 = 1e-3;

#[derive(Debug, Clone, Copy)]
struct Leader {
    gap: f64,
    speed: f64,
}

/// Complete traffic state. Vehicles are kept in id order so that every
/// per-step commit is deterministic.
#[derive(Debug, Clone)]
pub struct World {
    net: Arc<RoadNetwork>,
    idm: IdmParams,
    time: f64,
    vehicles: BTreeMap<VehicleId, VehicleState>,
    next_id: u64,
    spawned: u64,
    arrived: u64,
    verify: bool,
}

impl World {
    pub fn new(net: Arc<RoadNetwork>, idm: IdmParams) -> Result<Self, SimError> {
        idm.validate()?;
        Ok(World {
            net,
            idm,
            time: 0.0,
            vehicles: BTreeMap::new(),
            next_id: 0,
            spawned: 0,
            arrived: 0,
            verify: cfg!(debug_assertions),
        })
    }

    /// Enables invariant checks after every step; violations panic.
    pub fn with_verification(mut self, on: bool) -> Self {
        self.verify = on;
        self
    }

    pub fn network(&self) -> &Arc<RoadNetwork> {
        &self.net
    }

    pub fn idm(&self) -> &IdmParams {
        &self.idm
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn vehicles(&self) -> impl Iterator<Item = &VehicleState> {
        self.vehicles.values()
    }

    pub fn vehicle(&self, id: VehicleId) -> Option<&VehicleState> {
        self.vehicles.get(&id)
    }

    pub fn vehicle_count(&self) -> usize {
        self.vehicles.len()
    }

    pub fn spawned_count(&self) -> u64 {
        self.spawned
    }

    pub fn arrived_count(&self) -> u64 {
        self.arrived
    }

    /// Desired speed of a vehicle on a given link, m/s.
    pub fn desired_speed(&self, speed_factor: f64, link: usize) -> f64 {
        speed_factor * self.net.link(link).limit_mps()
    }

    pub fn count_on(&self, link: usize) -> usize {
        self.vehicles.values().filter(|v| v.link == link).count()
    }

    /// Whether the vehicle currently sits on a link inside the RSU coverage.
    pub fn in_coverage(&self, id: VehicleId) -> bool {
        self.vehicles
            .get(&id)
            .is_some_and(|v| self.net.covers(v.link))
    }

    fn rear_of(&self, link: usize, except: Option<VehicleId>) -> Option<&VehicleState> {
        self.vehicles
            .values()
            .filter(|v| v.link == link && Some(v.id) != except)
            .min_by(|a, b| a.position.total_cmp(&b.position).then(a.id.cmp(&b.id)))
    }

    /// Entry check shared by spawns and shuttle re-entries: capacity, free space
    /// ahead and room for upstream vehicles about to cross into `link`.
    fn entry_clearance(&self, link: usize, except: Option<VehicleId>) -> Option<Option<f64>> {
        let l = self.net.link(link);
        let occupants = self
            .vehicles
            .values()
            .filter(|v| v.link == link && Some(v.id) != except)
            .count();
        if occupants >= l.capacity() {
            return None;
        }
        let ahead = match self.rear_of(link, except) {
            Some(rear) => {
                let gap = rear.position - VEHICLE_LENGTH;
                if gap < self.idm.s0 {
                    return None;
                }
                Some(gap)
            }
            None => None,
        };
        for v in self.vehicles.values() {
            if Some(v.id) == except {
                continue;
            }
            let Some((_, next)) = v.route.next_after(v.route_pos) else {
                continue;
            };
            if next == link && v.link != link {
                let to_end = self.net.link(v.link).length - v.position;
                if to_end - VEHICLE_LENGTH < self.idm.s0 {
                    return None;
                }
            }
        }
        Some(ahead)
    }

    fn entry_speed(&self, speed_factor: f64, link: usize, gap_ahead: Option<f64>) -> f64 {
        let v0 = self.desired_speed(speed_factor, link);
        match gap_ahead {
            Some(gap) => v0.min(((gap - self.idm.s0) / self.idm.headway).max(0.0)),
            None => v0,
        }
    }

    /// Inserts a vehicle at the start of its first route link. Returns `None`
    /// when the entry point is blocked; the caller retries on a later step.
    pub fn try_spawn(&mut self, route: Route, role: Role, speed_factor: f64) -> Option<VehicleId> {
        debug_assert!(speed_factor > 0.0 && speed_factor <= 1.0);
        let link = route.links[0];
        let gap = self.entry_clearance(link, None)?;
        let speed = self.entry_speed(speed_factor, link, gap);
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        self.spawned += 1;
        self.vehicles.insert(
            id,
            VehicleState {
                id,
                link,
                position: 0.0,
                speed,
                route,
                route_pos: 0,
                role,
                speed_factor,
            },
        );
        Some(id)
    }

    /// Places a vehicle at an explicit state, e.g. to build a test platoon.
    pub fn place(
        &mut self,
        route: Route,
        route_pos: usize,
        position: f64,
        speed: f64,
        role: Role,
        speed_factor: f64,
    ) -> Result<VehicleId, SimError> {
        let link = *route
            .links
            .get(route_pos)
            .ok_or_else(|| SimError::Config("route position out of range".into()))?;
        let len = self.net.link(link).length;
        if !(0.0..=len).contains(&position) {
            return Err(SimError::Config(format!("position {position} outside link")));
        }
        if !(speed_factor > 0.0 && speed_factor <= 1.0) {
            return Err(SimError::Config("speed factor must be in (0, 1]".into()));
        }
        if !(0.0..=self.desired_speed(speed_factor, link)).contains(&speed) {
            return Err(SimError::Config(format!("speed {speed} outside bounds")));
        }
        for v in self.vehicles.values().filter(|v| v.link == link) {
            let gap = (v.position - position).abs() - VEHICLE_LENGTH;
            if gap <= 0.0 {
                return Err(SimError::Collision { gap });
            }
        }
        let id = VehicleId(self.next_id);
        self.next_id += 1;
        self.spawned += 1;
        self.vehicles.insert(
            id,
            VehicleState {
                id,
                link,
                position,
                speed,
                route,
                route_pos,
                role,
                speed_factor,
            },
        );
        Ok(id)
    }

    /// Nearest constraint ahead of `me`: a vehicle on the same link, the rear
    /// vehicle of the next link, or a vehicle on another in-link of the next
    /// link that is closer to the junction (zipper merge order).
    fn leader(&self, snap: &[VehicleState], me: &VehicleState) -> Option<Leader> {
        let mut best: Option<Leader> = None;
        let mut consider = |gap: f64, speed: f64| {
            if best.is_none_or(|b| gap < b.gap) {
                best = Some(Leader { gap, speed });
            }
        };
        let len = self.net.link(me.link).length;
        let to_end = len - me.position;
        let next = me.route.next_after(me.route_pos).map(|(_, l)| l);

        for v in snap.iter().filter(|v| v.link == me.link && v.id != me.id) {
            if v.position > me.position || (v.position == me.position && v.id < me.id) {
                consider(v.position - me.position - VEHICLE_LENGTH, v.speed);
            }
        }

        if let Some(next) = next {
            let next_link = self.net.link(next);
            let mut occupants = 0usize;
            let mut rear: Option<&VehicleState> = None;
            for v in snap.iter().filter(|v| v.link == next && v.id != me.id) {
                occupants += 1;
                if rear.is_none_or(|r| (v.position, v.id) < (r.position, r.id)) {
                    rear = Some(v);
                }
            }
            if next != me.link {
                if let Some(r) = rear {
                    consider(to_end + r.position - VEHICLE_LENGTH, r.speed);
                }
            }
            if occupants >= next_link.capacity() {
                consider(to_end, 0.0);
            }
            for v in snap.iter() {
                if v.id == me.id || v.link == me.link || v.link == next {
                    continue;
                }
                if v.route.next_after(v.route_pos).map(|(_, l)| l) != Some(next) {
                    continue;
                }
                let their_end = self.net.link(v.link).length - v.position;
                if (their_end, v.id) < (to_end, me.id) {
                    consider(to_end - their_end - VEHICLE_LENGTH, v.speed);
                }
            }
        }
        best
    }

    /// Advances the world by `dt` seconds: accelerations are computed against
    /// the pre-step snapshot and committed in vehicle-id order.
    pub fn step(&mut self, dt: f64) {
        let snap: Vec<VehicleState> = self.vehicles.values().cloned().collect();
        let moves: Vec<(VehicleId, f64, f64)> = snap
            .iter()
            .map(|me| {
                let v0 = self.desired_speed(me.speed_factor, me.link);
                let p = self.idm.with_v0(v0);
                let leader = self.leader(&snap, me);
                let (gap, v_lead) = match leader {
                    Some(l) => (l.gap.max(GAP_FLOOR), l.speed),
                    None => (f64::INFINITY, me.speed),
                };
                let accel = idm_acceleration(me.speed, v_lead, gap, &p)
                    .expect("gap is floored to a positive value");
                let mut speed = (me.speed + accel * dt).clamp(0.0, v0);
                let mut disp = speed * dt;
                if let Some(l) = leader {
                    let allowed = (l.gap - MIN_GAP).max(0.0);
                    if disp > allowed {
                        disp = allowed;
                        speed = disp / dt;
                    }
                }
                (me.id, speed, disp)
            })
            .collect();

        for (id, speed, disp) in moves {
            self.commit(id, speed, disp);
        }
        self.time += dt;
        if self.verify {
            self.check_invariants();
        }
    }

    fn commit(&mut self, id: VehicleId, speed: f64, disp: f64) {
        let me = self.vehicles[&id].clone();
        let len = self.net.link(me.link).length;
        let target = me.position + disp;
        if target <= len {
            let v = self.vehicles.get_mut(&id).unwrap();
            v.position = target;
            v.speed = speed;
            return;
        }
        let overshoot = target - len;
        match me.route.next_after(me.route_pos) {
            None if me.route.kind == RouteKind::Path => {
                self.vehicles.remove(&id);
                self.arrived += 1;
            }
            None => {
                // Shuttle: reappear at the route start once the entry is clear.
                let first = me.route.links[0];
                match self.entry_clearance(first, Some(id)) {
                    Some(gap) => {
                        let entry = self.entry_speed(me.speed_factor, first, gap).min(speed);
                        let v = self.vehicles.get_mut(&id).unwrap();
                        v.link = first;
                        v.route_pos = 0;
                        v.position = 0.0;
                        v.speed = entry;
                    }
                    None => self.hold_at_end(id, len),
                }
            }
            Some((next_pos, next)) => {
                let next_link = self.net.link(next);
                let occupants = self
                    .vehicles
                    .values()
                    .filter(|v| v.link == next && v.id != id)
                    .count();
                let q = overshoot.min(next_link.length);
                let clear = match self.rear_of(next, Some(id)) {
                    Some(r) => r.position - q - VEHICLE_LENGTH >= MIN_GAP,
                    None => true,
                };
                if occupants < next_link.capacity() && clear {
                    let cap = self.desired_speed(me.speed_factor, next);
                    let v = self.vehicles.get_mut(&id).unwrap();
                    v.link = next;
                    v.route_pos = next_pos;
                    v.position = q;
                    v.speed = speed.min(cap);
                } else {
                    self.hold_at_end(id, len);
                }
            }
        }
    }

    fn hold_at_end(&mut self, id: VehicleId, len: f64) {
        let v = self.vehicles.get_mut(&id).unwrap();
        v.position = len;
        v.speed = 0.0;
    }

    /// Panics when a kinematic invariant is broken.
    pub fn check_invariants(&self) {
        for v in self.vehicles.values() {
            let len = self.net.link(v.link).length;
            assert!(
                (0.0..=len).contains(&v.position),
                "{} position {} outside [0, {len}]",
                v.id,
                v.position
            );
            let v0 = self.desired_speed(v.speed_factor, v.link);
            assert!(
                v.speed >= 0.0 && v.speed <= v0 + 1e-9,
                "{} speed {} outside [0, {v0}]",
                v.id,
                v.speed
            );
        }
        for (gap, follower) in self.same_link_gaps() {
            assert!(gap > 0.0, "{follower} has non-positive gap {gap}");
        }
        assert_eq!(
            self.spawned - self.arrived,
            self.vehicles.len() as u64,
            "vehicle conservation"
        );
    }

    /// Bumper-to-bumper gap of every follower to its same-link leader.
    pub fn same_link_gaps(&self) -> Vec<(f64, VehicleId)> {
        let mut per_link: Vec<Vec<&VehicleState>> = vec![Vec::new(); self.net.len()];
        for v in self.vehicles.values() {
            per_link[v.link].push(v);
        }
        let mut out = Vec::new();
        for list in &mut per_link {
            list.sort_by(|a, b| a.position.total_cmp(&b.position).then(b.id.cmp(&a.id)));
            for w in list.windows(2) {
                out.push((w[1].position - w[0].position - VEHICLE_LENGTH, w[0].id));
            }
        }
        out
    }

    /// Space-mean speed (km/h) and density (veh/km/lane) over the vehicles
    /// currently on `link`. An empty link reports its speed limit and zero density.
    pub fn indicators(&self, link: usize) -> (f64, f64) {
        let l = self.net.link(link);
        let (mut n, mut sum) = (0usize, 0.0);
        for v in self.vehicles.values().filter(|v| v.link == link) {
            n += 1;
            sum += v.speed;
        }
        if n == 0 {
            return (l.speed_limit, 0.0);
        }
        let mean_kmh = (sum / n as f64 * 3.6).min(l.speed_limit);
        let density = n as f64 / (l.length / 1000.0 * l.lanes as f64);
        (mean_kmh, density)
    }

    pub fn link_indicators(&self, link_id: &str) -> Result<(f64, f64), SimError> {
        Ok(self.indicators(self.net.index_of(link_id)?))
    }

    pub fn observe(&self, link: usize) -> LinkObservation {
        let (mean_speed, density) = self.indicators(link);
        let ups: Vec<usize> = self.net.in_link_indices(link).collect();
        let in_speed = if ups.is_empty() {
            self.net.link(link).speed_limit
        } else {
            ups.iter().map(|&u| self.indicators(u).0).sum::<f64>() / ups.len() as f64
        };
        LinkObservation {
            time: self.time,
            link,
            mean_speed,
            density,
            in_speed,
        }
    }

    pub fn build_observation(&self, link_id: &str) -> Result<LinkObservation, SimError> {
        Ok(self.observe(self.net.index_of(link_id)?))
    }

    /// Writes one `time,vehicle,link,position_m,speed_mps` row per vehicle.
    pub fn write_trajectory<W: Write>(&self, out: &mut W) -> io::Result<()> {
        for v in self.vehicles.values() {
            writeln!(
                out,
                "{},{},{},{},{}",
                self.time,
                v.id,
                self.net.link(v.link).id,
                v.position,
                v.speed
            )?;
        }
        Ok(())
    }
}
