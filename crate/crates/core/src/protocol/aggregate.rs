use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{Identity, LocalUpdate, ProtocolError, Weighting};
use crate::learner::ModelParams;

/// All volunteers when there are at most `k`; otherwise a uniform random
/// `k`-subset. The result is sorted by identity.
pub fn select_workers(volunteers: &[Identity], k: usize, seed: u64) -> Vec<Identity> {
    let mut pool: Vec<Identity> = volunteers.to_vec();
    pool.sort();
    pool.dedup();
    if pool.len() <= k {
        return pool;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: Vec<Identity> = index::sample(&mut rng, pool.len(), k)
        .into_iter()
        .map(|i| pool[i])
        .collect();
    chosen.sort();
    chosen
}

/// Updates needed for a round with `selected` workers to complete.
pub fn quorum_for(selected: usize, fraction: f64) -> usize {
    ((fraction * selected as f64).ceil() as usize).max(1)
}

/// Coordinate-wise weighted mean of the updates.
///
/// Updates are processed in sender order so the result does not depend on
/// arrival order. The mean is accumulated as offsets from the first update,
/// which makes averaging identical payloads return them bit-for-bit.
pub fn federated_average(
    updates: &[LocalUpdate],
    weighting: Weighting,
) -> Result<ModelParams, ProtocolError> {
    if updates.is_empty() {
        return Err(ProtocolError::Empty);
    }
    let mut sorted: Vec<&LocalUpdate> = updates.iter().collect();
    sorted.sort_by_key(|u| u.sender);
    for w in sorted.windows(2) {
        if w[0].sender == w[1].sender {
            return Err(ProtocolError::DuplicateSender { sender: w[1].sender });
        }
    }
    let reference = sorted[0];
    let layout = &reference.params.layout;
    for u in &sorted {
        if &u.params.layout != layout || u.params.values.len() != layout.param_count() {
            return Err(ProtocolError::LayoutMismatch { sender: u.sender });
        }
        if u.params.values.iter().any(|v| !v.is_finite()) {
            return Err(ProtocolError::NonFinite { sender: u.sender });
        }
        if weighting == Weighting::Samples && u.sample_count == 0 {
            return Err(ProtocolError::NoSamples { sender: u.sender });
        }
    }
    let weight = |u: &LocalUpdate| match weighting {
        Weighting::Samples => u.sample_count as f64,
        Weighting::Uniform => 1.0,
    };
    let total: f64 = sorted.iter().map(|u| weight(u)).sum();
    let base = &reference.params.values;
    let mut offset = vec![0.0; base.len()];
    for u in &sorted[1..] {
        let w = weight(u) / total;
        for ((o, &x), &b) in offset.iter_mut().zip(&u.params.values).zip(base) {
            *o += w * (x - b);
        }
    }
    let values = base.iter().zip(&offset).map(|(b, o)| b + o).collect();
    Ok(ModelParams {
        layout: layout.clone(),
        values,
        version: reference.params.version,
    })
}
