use serde::{Deserialize, Serialize};

use super::{
    attack1_update, payload_seed, AdversaryError, AttackConfig, AttackMode, SampleClaim, Trigger,
};
use crate::learner::ModelParams;
use crate::protocol::{Identity, LocalUpdate, RoundOutcome};
use crate::traffic::{VehicleId, World};

/// One line of the attacker's activity log, kept for rounds in which the
/// master vehicle was in coverage at announcement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivityRecord {
    pub round: u64,
    pub mode: AttackMode,
    /// Identities put forward as volunteers (master plus admitted Sybils).
    pub identities_emitted: usize,
    /// How many of them the chief selected.
    pub selected_count: usize,
}

/// State of one malicious vehicle across the run.
#[derive(Debug, Clone)]
pub struct Adversary {
    cfg: AttackConfig,
    master: VehicleId,
    seed: u64,
    sybils: Vec<Identity>,
    next_index: u32,
    rmse: Vec<f64>,
    announced: Option<(u64, usize)>,
    log: Vec<ActivityRecord>,
}

impl Adversary {
    pub fn new(cfg: AttackConfig, master: VehicleId, seed: u64) -> Result<Self, AdversaryError> {
        cfg.validate()?;
        Ok(Adversary {
            cfg,
            master,
            seed,
            sybils: Vec::new(),
            next_index: 0,
            rmse: Vec::new(),
            announced: None,
            log: Vec::new(),
        })
    }

    pub fn config(&self) -> &AttackConfig {
        &self.cfg
    }

    pub fn master(&self) -> VehicleId {
        self.master
    }

    /// Currently admitted fabricated identities.
    pub fn sybils(&self) -> &[Identity] {
        &self.sybils
    }

    pub fn owns(&self, id: Identity) -> bool {
        match id {
            Identity::Vehicle(v) => v == self.master,
            Identity::Sybil { master, .. } => master == self.master,
        }
    }

    pub fn log(&self) -> &[ActivityRecord] {
        &self.log
    }

    /// Whether the trigger condition holds given the RMSE trace seen so far.
    pub fn trigger_active(&self) -> bool {
        match self.cfg.trigger {
            Trigger::Always => true,
            Trigger::AtConvergence { threshold, window } => {
                let n = self.rmse.len();
                if n <= window {
                    return false;
                }
                let (then, now) = (self.rmse[n - 1 - window], self.rmse[n - 1]);
                then <= 0.0 || (then - now) / then < threshold
            }
        }
    }

    /// Reaction to a task broadcast: the identities that volunteer this round.
    pub fn volunteer(&mut self, world: &World, round: u64) -> Vec<Identity> {
        self.announced = None;
        let Some(state) = world.vehicle(self.master).filter(|_| world.in_coverage(self.master))
        else {
            self.sybils.clear();
            return Vec::new();
        };
        if !self.trigger_active() {
            self.announced = Some((round, 0));
            return Vec::new();
        }
        let link = world.network().link(state.link);
        let cap = link.capacity().saturating_sub(world.count_on(state.link));
        let n = self.cfg.requested_sybils().min(cap);
        self.sybils.truncate(n);
        while self.sybils.len() < n {
            self.sybils.push(Identity::Sybil { master: self.master, index: self.next_index });
            self.next_index += 1;
        }
        let mut ids = vec![Identity::Vehicle(self.master)];
        ids.extend(&self.sybils);
        self.announced = Some((round, ids.len()));
        ids
    }

    /// Sample count claimed in every payload this round.
    pub fn claim(&self, honest_counts: &[usize]) -> usize {
        match self.cfg.claimed_samples {
            SampleClaim::Fixed(n) => n,
            SampleClaim::MedianHonest => {
                let mut c = honest_counts.to_vec();
                c.sort_unstable();
                match c.len() {
                    0 => 1,
                    n if n % 2 == 1 => c[n / 2],
                    n => (c[n / 2 - 1] + c[n / 2]) / 2,
                }
            }
        }
    }

    /// Fabricated updates for the selected identities this attacker owns.
    pub fn payloads(
        &self,
        gm: &ModelParams,
        round: u64,
        selected: &[Identity],
        claim: usize,
    ) -> Vec<LocalUpdate> {
        if self.announced.map(|(r, n)| r != round || n == 0).unwrap_or(true) {
            return Vec::new();
        }
        selected
            .iter()
            .filter(|&&id| self.owns(id))
            .map(|&id| attack1_update(gm, &self.cfg, id, round, claim, payload_seed(self.seed, round, id)))
            .collect()
    }

    /// Records the round's outcome: RMSE for the trigger and the activity line.
    pub fn close_round(&mut self, outcome: &RoundOutcome) {
        self.rmse.push(outcome.global_rmse);
        if let Some((round, emitted)) = self.announced.take() {
            if round == outcome.round {
                let selected_count = outcome.selected.iter().filter(|&&i| self.owns(i)).count();
                self.log.push(ActivityRecord {
                    round,
                    mode: self.cfg.mode,
                    identities_emitted: emitted,
                    selected_count,
                });
            }
        }
    }
}

/// Every payload the master and its admissible Sybils would send for `round`,
/// as if all were selected.
pub fn attack2_round(
    gm: &ModelParams,
    cfg: &AttackConfig,
    world: &World,
    master: VehicleId,
    round: u64,
    claim: usize,
    seed: u64,
) -> Result<Vec<LocalUpdate>, AdversaryError> {
    cfg.validate()?;
    let state = world
        .vehicle(master)
        .filter(|_| world.in_coverage(master))
        .ok_or(AdversaryError::OutsideCoverage(master))?;
    let link = world.network().link(state.link);
    let n = cfg.requested_sybils().min(link.capacity().saturating_sub(world.count_on(state.link)));
    let ids = std::iter::once(Identity::Vehicle(master))
        .chain((0..n as u32).map(|index| Identity::Sybil { master, index }));
    Ok(ids
        .map(|id| attack1_update(gm, cfg, id, round, claim, payload_seed(seed, round, id)))
        .collect())
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::adversary::sybil_cap;
    use crate::learner::{init_params, Layout};
    use crate::network::load_network;
    use crate::protocol::{select_workers, RoundStatus};
    use crate::traffic::{IdmParams, Role, Route, RouteKind};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const NET: &str = "link A length=450 lanes=1 limit=80 in=D\n\
                       link B length=400 lanes=1 limit=60 in=A\n\
                       link C length=350 lanes=1 limit=50 in=B\n\
                       link D length=450 lanes=1 limit=80 in=C\n\
                       link X length=75 lanes=1 limit=50 in=D\n\
                       coverage A,B,C,D,X\n";

    fn world() -> World {
        World::new(Arc::new(load_network(NET).unwrap()), IdmParams::default()).unwrap()
    }

    fn on(world: &mut World, ids: &[&str], pos: f64) -> VehicleId {
        let r = Route::resolve(world.network(), ids, RouteKind::Path).unwrap();
        world.place(r, 0, pos, 0.0, Role::Honest, 1.0).unwrap()
    }

    fn sybil_cfg(n: usize) -> AttackConfig {
        AttackConfig { mode: AttackMode::Sybil, sybil_count: n, ..AttackConfig::default() }
    }

    fn gm() -> ModelParams {
        init_params(&Layout::stacked(3, 4, 1).unwrap(), 2)
    }

    fn outcome(round: u64, selected: Vec<Identity>) -> RoundOutcome {
        RoundOutcome {
            round,
            volunteers: selected.clone(),
            selected,
            received: vec![],
            quarantined: vec![],
            status: RoundStatus::Abandoned,
            global_rmse: 1.0,
        }
    }

    #[test]
    fn cap_is_capacity_minus_occupancy() {
        let mut w = world();
        assert_eq!(w.network().get("A").unwrap().capacity(), 60);
        for i in 0..10 {
            on(&mut w, &["A"], 20.0 + 10.0 * i as f64);
        }
        assert_eq!(sybil_cap(&w, "A").unwrap(), 50);
        // X holds exactly ten vehicles.
        for i in 0..10 {
            on(&mut w, &["X"], 6.0 + 7.5 * i as f64);
        }
        assert_eq!(sybil_cap(&w, "X").unwrap(), 0);
        assert!(sybil_cap(&w, "nope").is_err());
    }

    #[test]
    fn cap_matches_full_recount() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for _ in 0..20 {
            let mut w = world();
            for (name, len) in [("A", 450.0), ("B", 400.0), ("C", 350.0), ("D", 450.0)] {
                let k = rng.random_range(0..30);
                for i in 0..k {
                    on(&mut w, &[name], len - 1.0 - len / 31.0 * i as f64);
                }
            }
            for l in w.network().links() {
                let idx = w.network().index_of(&l.id).unwrap();
                let recount = w.vehicles().filter(|v| v.link == idx).count();
                assert_eq!(sybil_cap(&w, &l.id).unwrap(), l.capacity().saturating_sub(recount));
            }
        }
    }

    #[test]
    fn single_mode_volunteers_master_only() {
        let mut w = world();
        let m = on(&mut w, &["A"], 10.0);
        let mut adv = Adversary::new(AttackConfig::default(), m, 1).unwrap();
        assert_eq!(adv.volunteer(&w, 0), vec![Identity::Vehicle(m)]);
    }

    #[test]
    fn sybil_count_is_min_of_request_and_cap() {
        let mut w = world();
        let m = on(&mut w, &["A"], 10.0);
        let mut adv = Adversary::new(sybil_cfg(5), m, 1).unwrap();
        let ids = adv.volunteer(&w, 0);
        assert_eq!(ids.len(), 6);
        assert!(ids[1..].iter().all(|id| matches!(id, Identity::Sybil { .. })));

        let mut w = world();
        let m = on(&mut w, &["X"], 70.0);
        for i in 0..8 {
            on(&mut w, &["X"], 5.0 + 7.5 * i as f64);
        }
        let mut adv = Adversary::new(sybil_cfg(5), m, 1).unwrap();
        let ids = adv.volunteer(&w, 0);
        assert_eq!(ids.len(), 2, "cap on X is 10 - 9 = 1");
    }

    #[test]
    fn zero_cap_degenerates_to_single_attack() {
        let mut w = world();
        let m = on(&mut w, &["X"], 70.0);
        for i in 0..9 {
            on(&mut w, &["X"], 1.0 + 7.5 * i as f64);
        }
        assert_eq!(sybil_cap(&w, "X").unwrap(), 0);
        let g = gm();
        let sybil = attack2_round(&g, &sybil_cfg(5), &w, m, 2, 7, 11).unwrap();
        let single = attack2_round(&g, &AttackConfig::default(), &w, m, 2, 7, 11).unwrap();
        assert_eq!(sybil, single);
        assert_eq!(sybil.len(), 1);
    }

    #[test]
    fn admitted_payloads_match_attack2_round() {
        let mut w = world();
        let m = on(&mut w, &["A"], 10.0);
        let mut adv = Adversary::new(sybil_cfg(3), m, 9).unwrap();
        let ids = adv.volunteer(&w, 0);
        let g = gm();
        let all = attack2_round(&g, &sybil_cfg(3), &w, m, 0, 5, 9).unwrap();
        assert_eq!(adv.payloads(&g, 0, &ids, 5), all);
        let picked = adv.payloads(&g, 0, &ids[2..3], 5);
        assert_eq!(picked, vec![all[2].clone()]);
        for u in &all {
            assert_eq!(u.params.layout, g.layout);
            assert!(u.params.values.iter().all(|v| v.is_finite()));
        }
    }

    #[test]
    fn nothing_emitted_outside_coverage() {
        let net = load_network(
            "link A length=450 lanes=1 limit=80 in=B\n\
             link B length=400 lanes=1 limit=60 in=A\n\
             coverage A\n",
        )
        .unwrap();
        let mut w = World::new(Arc::new(net), IdmParams::default()).unwrap();
        let r = Route::resolve(w.network(), &["B"], RouteKind::Path).unwrap();
        let m = w.place(r, 0, 5.0, 0.0, Role::AttackerSybil, 1.0).unwrap();
        let mut adv = Adversary::new(sybil_cfg(5), m, 1).unwrap();
        assert!(adv.volunteer(&w, 0).is_empty());
        assert!(adv.payloads(&gm(), 0, &[Identity::Vehicle(m)], 3).is_empty());
        adv.close_round(&outcome(0, vec![]));
        assert!(adv.log().is_empty());
        assert!(matches!(
            attack2_round(&gm(), &sybil_cfg(5), &w, m, 0, 1, 1),
            Err(AdversaryError::OutsideCoverage(_))
        ));
    }

    #[test]
    fn sybils_persist_while_in_coverage_and_never_collide() {
        let mut w = world();
        let m = on(&mut w, &["A"], 10.0);
        let mut adv = Adversary::new(sybil_cfg(4), m, 1).unwrap();
        let first = adv.volunteer(&w, 0);
        adv.close_round(&outcome(0, first[..2].to_vec()));
        let second = adv.volunteer(&w, 1);
        assert_eq!(first, second);
        assert_eq!(adv.log()[0].selected_count, 2);
        assert_eq!(adv.log()[0].identities_emitted, 5);
        let real: Vec<Identity> = w.vehicles().map(|v| Identity::Vehicle(v.id)).collect();
        let mut all = second.clone();
        all.sort();
        all.dedup();
        assert_eq!(all.len(), second.len());
        assert!(second[1..].iter().all(|id| !real.contains(id)));
    }

    #[test]
    fn convergence_trigger_waits_for_flat_trace() {
        let mut w = world();
        let m = on(&mut w, &["A"], 10.0);
        let cfg = AttackConfig {
            trigger: Trigger::AtConvergence { threshold: 0.01, window: 5 },
            ..AttackConfig::default()
        };
        let mut adv = Adversary::new(cfg, m, 1).unwrap();
        let mut round = 0;
        for rmse in [10.0, 8.0, 6.0, 5.0, 4.5, 4.2, 4.0] {
            assert!(adv.volunteer(&w, round).is_empty());
            adv.close_round(&RoundOutcome { global_rmse: rmse, ..outcome(round, vec![]) });
            round += 1;
        }
        for _ in 0..5 {
            adv.close_round(&RoundOutcome { global_rmse: 3.99, ..outcome(round, vec![]) });
            round += 1;
        }
        assert!(adv.trigger_active());
        assert_eq!(adv.volunteer(&w, round).len(), 1);
    }

    #[test]
    fn median_claim() {
        let adv = Adversary::new(AttackConfig::default(), VehicleId(0), 1).unwrap();
        assert_eq!(adv.claim(&[5, 1, 9]), 5);
        assert_eq!(adv.claim(&[4, 1, 9, 6]), 5);
        assert_eq!(adv.claim(&[]), 1);
    }

    #[test]
    fn sybils_raise_selection_share() {
        // Six honest vehicles plus the master volunteer, and five Sybils join.
        let master = VehicleId(100);
        let mut pool: Vec<Identity> = (0..6).map(|i| Identity::Vehicle(VehicleId(i))).collect();
        pool.push(Identity::Vehicle(master));
        pool.extend((0..5).map(|index| Identity::Sybil { master, index }));
        let trials = 10_000;
        let mut share = 0.0;
        for s in 0..trials {
            let sel = select_workers(&pool, 10, crate::seed::derive(1, &[s]));
            let adv = sel
                .iter()
                .filter(|id| match id {
                    Identity::Vehicle(v) => *v == master,
                    Identity::Sybil { .. } => true,
                })
                .count();
            share += adv as f64 / sel.len() as f64;
        }
        let share = share / trials as f64;
        assert!((share - 6.0 / 12.0).abs() < 0.02, "share {share}");
    }
}
