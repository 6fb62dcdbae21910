use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::lstm::grad_refs;
use super::params::ModelParams;
use super::{Gradient, LearnerError, TrainingSample};

/// Per-call optimizer settings.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), LearnerError> {
        if self.batch_size == 0 {
            return Err(LearnerError::Config("batch size must be positive".into()));
        }
        check_rates(self.lr, self.momentum)
    }
}

fn check_rates(lr: f64, momentum: f64) -> Result<(), LearnerError> {
    if !(lr > 0.0 && lr.is_finite()) {
        return Err(LearnerError::Config(format!("learning rate {lr} must be positive")));
    }
    if !(0.0..1.0).contains(&momentum) {
        return Err(LearnerError::Config(format!("momentum {momentum} must be in [0, 1)")));
    }
    Ok(())
}

/// Momentum buffer, one entry per parameter.
#[derive(Debug, Clone, PartialEq)]
pub struct Velocity(pub Vec<f64>);

impl Velocity {
    pub fn zeros(len: usize) -> Self {
        Velocity(vec![0.0; len])
    }
}

/// `velocity = momentum * velocity - lr * g; p += velocity`.
pub fn sgd_step(
    p: &ModelParams,
    g: &Gradient,
    lr: f64,
    momentum: f64,
    velocity: &mut Velocity,
) -> Result<ModelParams, LearnerError> {
    check_rates(lr, momentum)?;
    if g.values.len() != p.len() || velocity.0.len() != p.len() {
        return Err(LearnerError::Dimension(format!(
            "gradient ({}) / velocity ({}) do not match {} parameters",
            g.values.len(),
            velocity.0.len(),
            p.len()
        )));
    }
    let mut next = p.clone();
    for ((v, &gi), x) in velocity.0.iter_mut().zip(&g.values).zip(&mut next.values) {
        *v = momentum * *v - lr * gi;
        *x += *v;
    }
    if let Some(index) = next.values.iter().position(|v| !v.is_finite()) {
        return Err(LearnerError::Divergence { index });
    }
    Ok(next)
}

/// Result of a worker's local computation.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalTraining {
    pub params: ModelParams,
    pub sample_count: usize,
    /// Mean minibatch loss of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Stateful optimizer that keeps its momentum across epochs.
#[derive(Debug, Clone)]
pub struct Trainer {
    pub params: ModelParams,
    velocity: Velocity,
    rng: ChaCha8Rng,
}

impl Trainer {
    pub fn new(params: ModelParams, seed: u64) -> Self {
        let n = params.len();
        Trainer {
            params,
            velocity: Velocity::zeros(n),
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    /// One pass over `data` in a freshly shuffled order; returns the mean batch loss.
    pub fn epoch(
        &mut self,
        data: &[TrainingSample],
        batch_size: usize,
        lr: f64,
        momentum: f64,
    ) -> Result<f64, LearnerError> {
        let mut order: Vec<usize> = (0..data.len()).collect();
        order.shuffle(&mut self.rng);
        let mut total = 0.0;
        let mut batches = 0usize;
        for chunk in order.chunks(batch_size) {
            let batch: Vec<&TrainingSample> = chunk.iter().map(|&i| &data[i]).collect();
            let (loss, g) = grad_refs(&self.params, &batch)?;
            self.params = sgd_step(&self.params, &g, lr, momentum, &mut self.velocity)?;
            total += loss;
            batches += 1;
        }
        Ok(total / batches.max(1) as f64)
    }
}

/// Runs `epochs * ceil(|data| / batch_size)` momentum-SGD steps from `p` over
/// seeded shuffles of `data`.
pub fn local_train(
    p: &ModelParams,
    data: &[TrainingSample],
    cfg: &TrainConfig,
    seed: u64,
) -> Result<LocalTraining, LearnerError> {
    if data.is_empty() {
        return Err(LearnerError::Domain("local dataset is empty".into()));
    }
    cfg.validate()?;
    let mut trainer = Trainer::new(p.clone(), seed);
    let epoch_losses = (0..cfg.epochs)
        .map(|_| trainer.epoch(data, cfg.batch_size, cfg.lr, cfg.momentum))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(LocalTraining {
        params: trainer.params,
        sample_count: data.len(),
        epoch_losses,
    })
}

/// Root mean squared error between equally long, nonempty series.
pub fn rmse(preds: &[f64], targets: &[f64]) -> Result<f64, LearnerError> {
    if preds.len() != targets.len() {
        return Err(LearnerError::Domain(format!(
            "length mismatch: {} predictions, {} targets",
            preds.len(),
            targets.len()
        )));
    }
    if preds.is_empty() {
        return Err(LearnerError::Domain("rmse of empty series".into()));
    }
    let sse: f64 = preds.iter().zip(targets).map(|(p, t)| (p - t).powi(2)).sum();
    Ok((sse / preds.len() as f64).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::params::{init_params, Layout};
    use crate::learner::{forward, grad};
    use rand::Rng;

    fn one_param(v: f64) -> ModelParams {
        // Smallest valid layout has more than one value; only the first matters here.
        let mut p = ModelParams::zeros(Layout::new(3, vec![1]).unwrap());
        p.values[0] = v;
        p
    }

    #[test]
    fn zero_gradient_decays_velocity_only() {
        let p = one_param(1.0);
        let g = Gradient { values: vec![0.0; p.len()] };
        let mut vel = Velocity(vec![0.5; p.len()]);
        let q = sgd_step(&p, &g, 0.1, 0.9, &mut vel).unwrap();
        for (a, b) in q.values.iter().zip(&p.values) {
            assert!((a - b - 0.45).abs() < 1e-15);
        }
        assert!(vel.0.iter().all(|&v| (v - 0.45).abs() < 1e-15));

        let mut still = Velocity::zeros(p.len());
        assert_eq!(sgd_step(&p, &g, 0.1, 0.9, &mut still).unwrap(), p);
    }

    #[test]
    fn plain_step_arithmetic() {
        let p = one_param(1.0);
        let mut g = Gradient { values: vec![0.0; p.len()] };
        g.values[0] = 2.0;
        let mut vel = Velocity::zeros(p.len());
        let q = sgd_step(&p, &g, 0.1, 0.0, &mut vel).unwrap();
        assert!((q.values[0] - 0.8).abs() < 1e-15);
    }

    #[test]
    fn two_momentum_steps_match_unrolled_recurrence() {
        let p = one_param(1.0);
        let mut g1 = Gradient { values: vec![0.0; p.len()] };
        let mut g2 = g1.clone();
        g1.values[0] = 2.0;
        g2.values[0] = -0.5;
        let (lr, m) = (0.1, 0.9);
        let mut vel = Velocity::zeros(p.len());
        let q = sgd_step(&p, &g1, lr, m, &mut vel).unwrap();
        let q = sgd_step(&q, &g2, lr, m, &mut vel).unwrap();
        let v1 = -lr * 2.0;
        let v2 = m * v1 - lr * -0.5;
        assert_eq!(q.values[0], 1.0 + v1 + v2);
        assert_eq!(vel.0[0], v2);
    }

    #[test]
    fn divergence_names_index() {
        let p = one_param(1.0);
        let mut g = Gradient { values: vec![0.0; p.len()] };
        g.values[3] = f64::INFINITY;
        let err = sgd_step(&p, &g, 0.1, 0.0, &mut Velocity::zeros(p.len())).unwrap_err();
        assert!(matches!(err, LearnerError::Divergence { index: 3 }));
        assert!(sgd_step(&p, &g, 0.0, 0.0, &mut Velocity::zeros(p.len())).is_err());
        assert!(sgd_step(&p, &g, 0.1, 1.0, &mut Velocity::zeros(p.len())).is_err());
    }

    fn synthetic(n: usize, seed: u64) -> Vec<TrainingSample> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| {
                let base: f64 = rng.random_range(0.2..0.9);
                let features: Vec<[f64; 3]> = (0..3)
                    .map(|k| [base + 0.02 * k as f64, 1.0 - base, base])
                    .collect();
                TrainingSample {
                    features,
                    target: base + 0.05,
                }
            })
            .collect()
    }

    #[test]
    fn zero_epochs_is_identity() {
        let p = init_params(&Layout::new(3, vec![4]).unwrap(), 1);
        let cfg = TrainConfig { epochs: 0, batch_size: 4, lr: 0.05, momentum: 0.9 };
        let out = local_train(&p, &synthetic(10, 1), &cfg, 3).unwrap();
        assert_eq!(out.params, p);
        assert_eq!(out.sample_count, 10);
    }

    #[test]
    fn single_sample_single_step() {
        let p = init_params(&Layout::new(3, vec![4]).unwrap(), 1);
        let data = synthetic(1, 2);
        let cfg = TrainConfig { epochs: 1, batch_size: 1, lr: 0.05, momentum: 0.9 };
        let out = local_train(&p, &data, &cfg, 3).unwrap();
        let (_, g) = grad(&p, &data).unwrap();
        let expected = sgd_step(&p, &g, 0.05, 0.9, &mut Velocity::zeros(p.len())).unwrap();
        assert_eq!(out.params, expected);
    }

    #[test]
    fn training_is_bit_reproducible() {
        let p = init_params(&Layout::new(3, vec![6]).unwrap(), 4);
        let data = synthetic(30, 9);
        let cfg = TrainConfig { epochs: 3, batch_size: 8, lr: 0.05, momentum: 0.9 };
        let a = local_train(&p, &data, &cfg, 77).unwrap();
        let b = local_train(&p, &data, &cfg, 77).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_data_rejected() {
        let p = init_params(&Layout::new(3, vec![2]).unwrap(), 4);
        let cfg = TrainConfig { epochs: 1, batch_size: 8, lr: 0.05, momentum: 0.9 };
        assert!(local_train(&p, &[], &cfg, 1).is_err());
    }

    #[test]
    fn loss_decreases_on_synthetic_set() {
        let p = init_params(&Layout::new(3, vec![8]).unwrap(), 21);
        let data = synthetic(50, 13);
        let cfg = TrainConfig { epochs: 5, batch_size: 8, lr: 0.05, momentum: 0.9 };
        let out = local_train(&p, &data, &cfg, 5).unwrap();
        for w in out.epoch_losses.windows(2) {
            assert!(w[1] < w[0], "loss trace {:?}", out.epoch_losses);
        }
        let mse = |q: &ModelParams| {
            data.iter()
                .map(|s| (forward(q, &s.features).unwrap() - s.target).powi(2))
                .sum::<f64>()
                / data.len() as f64
        };
        assert!(mse(&out.params) < mse(&p));
    }

    #[test]
    fn rmse_examples() {
        assert_eq!(rmse(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        let r = rmse(&[3.0, -4.0], &[0.0, 0.0]).unwrap();
        assert!((r - (12.5f64).sqrt()).abs() < 1e-15);
        assert!(rmse(&[1.0], &[1.0, 2.0]).is_err());
        assert!(rmse(&[], &[]).is_err());
    }

    #[test]
    fn rmse_matches_two_pass_recompute() {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let a: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..80.0)).collect();
        let b: Vec<f64> = (0..1000).map(|_| rng.random_range(0.0..80.0)).collect();
        let diffs: Vec<f64> = a.iter().zip(&b).map(|(x, y)| x - y).collect();
        let mut sq = 0.0;
        for d in &diffs {
            sq += d * d;
        }
        let naive = (sq / diffs.len() as f64).sqrt();
        assert!((rmse(&a, &b).unwrap() - naive).abs() < 1e-12);
    }
}
