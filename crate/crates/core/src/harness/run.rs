use rayon::prelude::*;

use super::cosim::{normalizer, replica_samples, subsample, CoSim, Traffic};
use super::report::{MetricsReport, RoundRecord};
use super::{HarnessError, Scenario};
use crate::adversary::{attacker_route_policy, Adversary, AttackMode};
use crate::learner::init_params;
use crate::protocol::{centralized_train, run_round, Chief, Convergence, Evaluator};
use crate::seed::{derive, stream};
use crate::traffic::Role;

/// Runs the coupled traffic and federation until the round budget is spent
/// (or convergence, when configured to stop there).
pub fn run_scenario(s: &Scenario) -> Result<MetricsReport, HarnessError> {
    let seed = s.seed();
    let f = &s.file;
    let norm = normalizer(&s.network);
    let demand_seed = derive(seed, &[stream::DEMAND]);

    let eval = subsample(
        replica_samples(s, derive(seed, &[stream::EVAL]), &norm)?,
        f.evaluation.samples,
        derive(seed, &[stream::SUBSAMPLE, stream::EVAL]),
    );
    let evaluator = Evaluator::new(eval, norm)
        .map_err(|_| HarnessError::Config("evaluation replica produced no samples".into()))?;
    let pooled = subsample(
        replica_samples(s, demand_seed, &norm)?,
        f.evaluation.pooled_samples,
        derive(seed, &[stream::SUBSAMPLE, stream::CENTRAL]),
    );

    let layout = f.learner.layout()?;
    let init = init_params(&layout, derive(seed, &[stream::INIT]));
    let central = centralized_train(
        &pooled,
        &f.learner,
        init.clone(),
        f.protocol.rounds,
        &evaluator,
        derive(seed, &[stream::CENTRAL]),
    )?;
    let threshold = match f.protocol.convergence {
        Convergence::RelativeToCentralized(m) => m * central.rmse_kmh.last().copied().unwrap_or(f64::INFINITY),
        Convergence::AbsoluteKmh(x) => x,
    };

    let mut traffic = Traffic::new(s, demand_seed, false)?;
    let mut fallback = false;
    let adversary = match &f.attack {
        None => None,
        Some(cfg) => {
            let start = s
                .network
                .coverage()
                .find(|&l| attacker_route_policy(&s.network, l).is_ok_and(|r| !r.fallback))
                .or_else(|| s.network.coverage().next())
                .expect("coverage is nonempty");
            let plan = attacker_route_policy(&s.network, start)?;
            fallback = plan.fallback;
            if fallback {
                log::warn!("{}: no covered cycle, attacker shuttles", s.name());
            }
            let role = match cfg.mode {
                AttackMode::Single => Role::AttackerSingle,
                AttackMode::Sybil => Role::AttackerSybil,
            };
            let master = traffic.world.place(plan.route, 0, 0.0, 0.0, role, 1.0)?;
            Some(Adversary::new(cfg.clone(), master, derive(seed, &[stream::ATTACK]))?)
        }
    };
    for _ in 0..f.demand.warmup_s {
        traffic.tick();
    }

    let mut chief = Chief::new(f.protocol.clone(), f.learner.clone(), init, evaluator.clone(), seed)?;
    let mut env = CoSim::new(s, traffic, adversary, norm);
    let mut records = Vec::with_capacity(f.protocol.rounds);
    let mut converged = None;
    for _ in 0..f.protocol.rounds {
        let outcome = run_round(&mut chief, &mut env)?;
        if let Some(adv) = &mut env.adversary {
            adv.close_round(&outcome);
        }
        records.push(RoundRecord::from(&outcome));
        if converged.is_none() && outcome.global_rmse <= threshold {
            converged = Some(records.len());
            if f.protocol.stop_on_convergence {
                break;
            }
        }
    }
    log::info!(
        "{} seed {seed}: {} rounds, final rmse {:.4} km/h (centralized {:.4})",
        s.name(),
        records.len(),
        records.last().map_or(f64::NAN, |r| r.rmse_kmh),
        central.rmse_kmh.last().copied().unwrap_or(f64::NAN)
    );
    Ok(MetricsReport {
        name: s.name().to_string(),
        seed,
        config_hash: s.config_hash(),
        eval_fingerprint: evaluator.fingerprint(),
        final_rmse: records.last().expect("rounds >= 1").rmse_kmh,
        records,
        rounds_to_convergence: converged,
        convergence_threshold: threshold,
        centralized: central.rmse_kmh,
        adversary: env.adversary.map(|a| a.log().to_vec()).unwrap_or_default(),
        attacker_fallback: fallback,
    })
}

/// Every scenario on every seed, in parallel; `out[i][j]` is scenario `i`, seed `j`.
pub fn run_grid(
    scenarios: &[Scenario],
    seeds: &[u64],
) -> Result<Vec<Vec<MetricsReport>>, HarnessError> {
    let jobs: Vec<(usize, u64)> =
        (0..scenarios.len()).flat_map(|i| seeds.iter().map(move |&s| (i, s))).collect();
    let mut flat = jobs
        .par_iter()
        .map(|&(i, seed)| run_scenario(&scenarios[i].with_seed(seed)))
        .collect::<Result<Vec<_>, _>>()?
        .into_iter();
    Ok(scenarios.iter().map(|_| flat.by_ref().take(seeds.len()).collect()).collect())
}
