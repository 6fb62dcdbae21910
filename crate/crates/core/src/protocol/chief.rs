use std::collections::{BTreeMap, BTreeSet};

use sha2::{Digest, Sha256};

use super::{
    federated_average, quorum_for, select_workers, FlTask, Identity, LocalUpdate,
    ProtocolConfig, ProtocolError, RoundOutcome, RoundStatus,
};
use crate::learner::{
    forward, rmse, LearnerConfig, LearnerError, ModelParams, Normalizer, Trainer,
    TrainingSample,
};
use crate::seed;

/// Held-out samples the chief scores the global model on.
#[derive(Debug, Clone)]
pub struct Evaluator {
    samples: Vec<TrainingSample>,
    norm: Normalizer,
}

impl Evaluator {
    pub fn new(samples: Vec<TrainingSample>, norm: Normalizer) -> Result<Self, LearnerError> {
        if samples.is_empty() {
            return Err(LearnerError::Domain("evaluation set is empty".into()));
        }
        Ok(Evaluator { samples, norm })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[TrainingSample] {
        &self.samples
    }

    /// RMSE in km/h between predicted and observed next-second speeds.
    pub fn rmse_kmh(&self, p: &ModelParams) -> Result<f64, LearnerError> {
        let mut preds = Vec::with_capacity(self.samples.len());
        let mut targets = Vec::with_capacity(self.samples.len());
        for s in &self.samples {
            preds.push(self.norm.denormalize_speed(forward(p, &s.features)?));
            targets.push(self.norm.denormalize_speed(s.target));
        }
        rmse(&preds, &targets)
    }

    /// Hex SHA-256 over the exact bits of the evaluation set.
    pub fn fingerprint(&self) -> String {
        let mut h = Sha256::new();
        h.update(self.norm.speed_kmh.to_le_bytes());
        h.update(self.norm.density.to_le_bytes());
        for s in &self.samples {
            for step in &s.features {
                for v in step {
                    h.update(v.to_le_bytes());
                }
            }
            h.update(s.target.to_le_bytes());
        }
        h.finalize().iter().map(|b| format!("{b:02x}")).collect()
    }
}

/// An update a worker has computed, available for sending from `ready_at`.
#[derive(Debug, Clone, PartialEq)]
pub struct PendingUpdate {
    pub update: LocalUpdate,
    pub ready_at: f64,
}

/// What the chief needs from the world around it. The harness implements this
/// over the traffic simulation; tests use scripted fleets.
pub trait FleetEnvironment {
    /// Current simulation second.
    fn now(&self) -> f64;
    /// Advance the world by one second.
    fn advance(&mut self) -> Result<(), ProtocolError>;
    /// Broadcast `task` and collect the identities that volunteer.
    fn volunteers(&mut self, task: &FlTask) -> Result<Vec<Identity>, ProtocolError>;
    /// Hand GM^t to the selected workers; each returns its update and when it is ready.
    fn dispatch(
        &mut self,
        task: &FlTask,
        selected: &[Identity],
    ) -> Result<Vec<PendingUpdate>, ProtocolError>;
    /// Whether `id` is currently inside the chief's coverage.
    fn connected(&self, id: Identity) -> bool;
}

#[derive(Debug, Clone)]
pub struct Chief {
    config: ProtocolConfig,
    learner: LearnerConfig,
    global: ModelParams,
    round: u64,
    seed: u64,
    evaluator: Evaluator,
}

impl Chief {
    pub fn new(
        config: ProtocolConfig,
        learner: LearnerConfig,
        initial: ModelParams,
        evaluator: Evaluator,
        seed: u64,
    ) -> Result<Self, ProtocolError> {
        config.validate()?;
        learner.validate()?;
        initial.validate()?;
        if initial.layout != learner.layout()? {
            return Err(ProtocolError::Config(
                "initial model does not match the learner layout".into(),
            ));
        }
        Ok(Chief { config, learner, global: initial, round: 0, seed, evaluator })
    }

    pub fn global(&self) -> &ModelParams {
        &self.global
    }

    /// Index of the next round to run.
    pub fn round(&self) -> u64 {
        self.round
    }

    pub fn config(&self) -> &ProtocolConfig {
        &self.config
    }

    pub fn evaluator(&self) -> &Evaluator {
        &self.evaluator
    }

    pub fn announce(&self, now: f64) -> FlTask {
        FlTask {
            round: self.round,
            train: self.learner.train_config(self.round as usize),
            announced_at: now,
            deadline: now + self.config.deadline_s,
            model: self.global.clone(),
        }
    }

    /// Ingestion checks applied before an update may count toward quorum.
    pub fn admit(&self, update: &LocalUpdate) -> Result<(), ProtocolError> {
        let sender = update.sender;
        if update.round != self.round {
            return Err(ProtocolError::WrongRound { sender, got: update.round, open: self.round });
        }
        if update.params.layout != self.global.layout
            || update.params.values.len() != self.global.values.len()
        {
            return Err(ProtocolError::LayoutMismatch { sender });
        }
        if update.params.values.iter().any(|v| !v.is_finite()) {
            return Err(ProtocolError::NonFinite { sender });
        }
        if update.sample_count == 0 {
            return Err(ProtocolError::NoSamples { sender });
        }
        Ok(())
    }
}

/// One announce, select, collect, aggregate cycle. The world advances until the
/// deadline whatever happens, so rounds keep a fixed cadence.
pub fn run_round(
    chief: &mut Chief,
    env: &mut dyn FleetEnvironment,
) -> Result<RoundOutcome, ProtocolError> {
    let task = chief.announce(env.now());
    let mut volunteers: Vec<Identity> = env
        .volunteers(&task)?
        .into_iter()
        .filter(|&id| env.connected(id))
        .collect();
    volunteers.sort();
    volunteers.dedup();
    let selected = select_workers(
        &volunteers,
        chief.config.k,
        seed::derive(chief.seed, &[seed::stream::SELECT, task.round]),
    );

    let mut pending: Vec<PendingUpdate> = if selected.is_empty() {
        Vec::new()
    } else {
        env.dispatch(&task, &selected)?
    };
    let chosen: BTreeSet<Identity> = selected.iter().copied().collect();
    pending.retain(|p| chosen.contains(&p.update.sender));
    pending.sort_by(|a, b| {
        a.ready_at.total_cmp(&b.ready_at).then(a.update.sender.cmp(&b.update.sender))
    });

    let mut lost: BTreeSet<Identity> = BTreeSet::new();
    let mut arrived: BTreeMap<Identity, LocalUpdate> = BTreeMap::new();
    let mut queue = pending.into_iter().peekable();
    while env.now() < task.deadline {
        env.advance()?;
        let now = env.now();
        for &id in &selected {
            if !arrived.contains_key(&id) && !env.connected(id) {
                lost.insert(id);
            }
        }
        while let Some(p) = queue.next_if(|p| p.ready_at <= now) {
            let id = p.update.sender;
            if !lost.contains(&id) && !arrived.contains_key(&id) {
                arrived.insert(id, p.update);
            }
        }
    }

    let mut received = Vec::new();
    let mut quarantined = Vec::new();
    for (id, u) in arrived {
        match chief.admit(&u) {
            Ok(()) => received.push(u),
            Err(e) => {
                log::warn!("round {}: quarantined {id}: {e}", task.round);
                quarantined.push(id);
            }
        }
    }

    let quorum = quorum_for(selected.len(), chief.config.quorum_fraction);
    let status = if !selected.is_empty() && received.len() >= quorum {
        let mut next = federated_average(&received, chief.config.weighting)?;
        next.version = chief.global.version + 1;
        chief.global = next;
        RoundStatus::Completed
    } else {
        RoundStatus::Abandoned
    };
    chief.round += 1;
    let global_rmse = chief.evaluator.rmse_kmh(&chief.global)?;
    log::debug!(
        "round {}: {} volunteers, {} selected, {} received, {status}, rmse {global_rmse:.3}",
        task.round,
        volunteers.len(),
        selected.len(),
        received.len()
    );
    Ok(RoundOutcome {
        round: task.round,
        volunteers,
        selected,
        received,
        quarantined,
        status,
        global_rmse,
    })
}

/// Pooled-data baseline trace.
#[derive(Debug, Clone, PartialEq)]
pub struct CentralizedRun {
    pub params: ModelParams,
    /// Held-out RMSE after each epoch, km/h.
    pub rmse_kmh: Vec<f64>,
}

/// Trains on the pooled data for `epochs` passes with the same optimizer and
/// learning-rate schedule the federation uses, scoring after every pass.
pub fn centralized_train(
    pooled: &[TrainingSample],
    learner: &LearnerConfig,
    initial: ModelParams,
    epochs: usize,
    evaluator: &Evaluator,
    seed: u64,
) -> Result<CentralizedRun, LearnerError> {
    if pooled.is_empty() {
        return Err(LearnerError::Domain("pooled dataset is empty".into()));
    }
    learner.validate()?;
    let mut trainer = Trainer::new(initial, seed);
    let mut trace = Vec::with_capacity(epochs);
    for e in 0..epochs {
        trainer.epoch(pooled, learner.batch_size, learner.lr_at(e), learner.momentum)?;
        trace.push(evaluator.rmse_kmh(&trainer.params)?);
    }
    Ok(CentralizedRun { params: trainer.params, rmse_kmh: trace })
}
