use std::collections::BTreeMap;

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{HarnessError, Scenario};
use crate::adversary::Adversary;
use crate::learner::{local_train, windows, Normalizer, TrainingSample};
use crate::protocol::{FlTask, FleetEnvironment, Identity, PendingUpdate, ProtocolError};
use crate::seed::{self, stream};
use crate::traffic::{
    poisson_schedule, Demand, FlowSpec, LinkObservation, Role, SpawnRequest, VehicleId, World,
};

/// Feature scaling for a network: its top speed limit and densest jam.
pub fn normalizer(net: &crate::network::RoadNetwork) -> Normalizer {
    let top = net.links().iter().map(|l| l.speed_limit).fold(0.0, f64::max);
    Normalizer { speed_kmh: top, density: net.max_jam_density() }
}

/// The traffic side of a run: world, pending demand and what each honest
/// vehicle has observed on covered links so far.
pub struct Traffic {
    pub world: World,
    demand: Demand,
    logs: BTreeMap<VehicleId, Vec<LinkObservation>>,
    archive: Option<Vec<Vec<LinkObservation>>>,
}

impl Traffic {
    /// `archive` keeps the logs of vehicles that have left the network.
    pub fn new(s: &Scenario, demand_seed: u64, archive: bool) -> Result<Traffic, HarnessError> {
        let world = World::new(s.network.clone(), s.file.idm)?;
        let d = &s.file.demand;
        let schedule = match &d.schedule {
            Some(fixed) => fixed
                .iter()
                .map(|f| SpawnRequest {
                    time: f.time,
                    route: s.routes[f.route].clone(),
                    role: Role::Honest,
                    speed_factor: f.speed_factor,
                })
                .collect(),
            None => {
                let flows: Vec<FlowSpec> = s
                    .routes
                    .iter()
                    .zip(&d.routes)
                    .map(|(route, spec)| FlowSpec { route: route.clone(), weight: spec.weight })
                    .collect();
                poisson_schedule(&flows, s.rate(), s.horizon_s(), d.speed_factor, demand_seed)?
            }
        };
        Ok(Traffic {
            world,
            demand: Demand::new(schedule),
            logs: BTreeMap::new(),
            archive: archive.then(Vec::new),
        })
    }

    /// Releases due spawns, advances one second and records observations.
    pub fn tick(&mut self) {
        self.demand.release(&mut self.world);
        self.world.step(1.0);
        let net = self.world.network().clone();
        let mut seen: BTreeMap<usize, LinkObservation> = BTreeMap::new();
        let mut present = Vec::with_capacity(self.world.vehicle_count());
        for v in self.world.vehicles() {
            if v.role.is_adversarial() {
                continue;
            }
            present.push(v.id);
            if net.covers(v.link) {
                let obs = seen.entry(v.link).or_insert_with(|| self.world.observe(v.link));
                self.logs.entry(v.id).or_default().push(*obs);
            }
        }
        let gone: Vec<VehicleId> =
            self.logs.keys().filter(|id| present.binary_search(id).is_err()).copied().collect();
        for id in gone {
            let log = self.logs.remove(&id).expect("listed key");
            if let Some(a) = &mut self.archive {
                a.push(log);
            }
        }
    }

    pub fn log(&self, id: VehicleId) -> &[LinkObservation] {
        self.logs.get(&id).map_or(&[], |l| l.as_slice())
    }

    /// Every log recorded so far, departed vehicles first.
    pub fn all_logs(&self) -> impl Iterator<Item = &Vec<LinkObservation>> {
        self.archive.iter().flatten().chain(self.logs.values())
    }
}

/// Windows pooled from every honest vehicle of a clean (attacker-free)
/// replica driven for the scenario's horizon.
pub fn replica_samples(
    s: &Scenario,
    demand_seed: u64,
    norm: &Normalizer,
) -> Result<Vec<TrainingSample>, HarnessError> {
    let mut t = Traffic::new(s, demand_seed, true)?;
    for _ in 0..s.horizon_s() as u64 {
        t.tick();
    }
    let w = s.file.learner.window;
    Ok(t.all_logs().flat_map(|log| windows(log, w, norm)).collect())
}

/// At most `n` samples, chosen uniformly without replacement, in original order.
pub fn subsample(samples: Vec<TrainingSample>, n: usize, seed: u64) -> Vec<TrainingSample> {
    if samples.len() <= n {
        return samples;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut keep = index::sample(&mut rng, samples.len(), n).into_vec();
    keep.sort_unstable();
    keep.into_iter().map(|i| samples[i].clone()).collect()
}

/// The chief's view of the road: honest vehicles train on their own logs,
/// the attacker (if any) fabricates.
pub struct CoSim<'a> {
    pub traffic: Traffic,
    pub adversary: Option<Adversary>,
    scenario: &'a Scenario,
    norm: Normalizer,
    seed: u64,
    honest_counts: BTreeMap<VehicleId, usize>,
}

impl<'a> CoSim<'a> {
    pub fn new(
        scenario: &'a Scenario,
        traffic: Traffic,
        adversary: Option<Adversary>,
        norm: Normalizer,
    ) -> Self {
        CoSim {
            traffic,
            adversary,
            scenario,
            norm,
            seed: scenario.seed(),
            honest_counts: BTreeMap::new(),
        }
    }

    fn local_samples(&self, id: VehicleId) -> Vec<TrainingSample> {
        windows(self.traffic.log(id), self.scenario.file.learner.window, &self.norm)
    }

    fn compute_delay(&self, round: u64, id: VehicleId) -> f64 {
        let (lo, hi) = self.scenario.file.protocol.compute_delay_s;
        if lo == hi {
            return lo;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(self.seed, &[stream::DELAY, round, id.0]));
        rng.random_range(lo..=hi)
    }
}

impl FleetEnvironment for CoSim<'_> {
    fn now(&self) -> f64 {
        self.traffic.world.time()
    }

    fn advance(&mut self) -> Result<(), ProtocolError> {
        self.traffic.tick();
        Ok(())
    }

    fn volunteers(&mut self, task: &FlTask) -> Result<Vec<Identity>, ProtocolError> {
        let min = self.scenario.file.protocol.min_samples;
        let world = &self.traffic.world;
        let mut counts = BTreeMap::new();
        for v in world.vehicles() {
            if v.role.is_adversarial() || !world.network().covers(v.link) {
                continue;
            }
            let n = self.local_samples(v.id).len();
            if n >= min {
                counts.insert(v.id, n);
            }
        }
        let mut ids: Vec<Identity> = counts.keys().map(|&v| Identity::Vehicle(v)).collect();
        self.honest_counts = counts;
        if let Some(adv) = &mut self.adversary {
            ids.extend(adv.volunteer(world, task.round));
        }
        Ok(ids)
    }

    fn dispatch(
        &mut self,
        task: &FlTask,
        selected: &[Identity],
    ) -> Result<Vec<PendingUpdate>, ProtocolError> {
        let now = self.now();
        let jobs: Vec<(VehicleId, Vec<TrainingSample>)> = selected
            .iter()
            .filter_map(|id| match id {
                Identity::Vehicle(v) if self.honest_counts.contains_key(v) => Some(*v),
                _ => None,
            })
            .map(|v| (v, self.local_samples(v)))
            .collect();
        let trained: Vec<_> = jobs
            .par_iter()
            .map(|(v, data)| {
                let s = seed::derive(self.seed, &[stream::TRAIN, task.round, v.0]);
                (*v, local_train(&task.model, data, &task.train, s))
            })
            .collect();
        let mut out = Vec::with_capacity(selected.len());
        for (v, result) in trained {
            match result {
                Ok(t) => out.push(PendingUpdate {
                    update: crate::protocol::LocalUpdate {
                        sender: Identity::Vehicle(v),
                        round: task.round,
                        params: t.params,
                        sample_count: t.sample_count,
                    },
                    ready_at: now + self.compute_delay(task.round, v),
                }),
                Err(e) => log::warn!("round {}: {v} failed local training: {e}", task.round),
            }
        }
        if let Some(adv) = &self.adversary {
            let counts: Vec<usize> = self.honest_counts.values().copied().collect();
            let claim = adv.claim(&counts);
            let ready_at = now + adv.config().compute_delay_s;
            out.extend(
                adv.payloads(&task.model, task.round, selected, claim)
                    .into_iter()
                    .map(|update| PendingUpdate { update, ready_at }),
            );
        }
        Ok(out)
    }

    fn connected(&self, id: Identity) -> bool {
        match id {
            Identity::Vehicle(v) => self.traffic.world.in_coverage(v),
            Identity::Sybil { master, .. } => self.traffic.world.in_coverage(master),
        }
    }
}
