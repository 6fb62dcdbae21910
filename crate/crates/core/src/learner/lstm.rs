//! Forward pass and backpropagation through time for the stacked LSTM.

use super::params::{LayerSpan, ModelParams};
use super::{Gradient, LearnerError, TrainingSample, FEATURES};

#[inline]
fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

/// Activations of one layer over the whole window, kept for the backward pass.
struct LayerTrace {
    /// Gate activations per step, `4h` each: i, f, g, o.
    gates: Vec<f64>,
    /// Cell state per step.
    cells: Vec<f64>,
    /// Hidden state per step.
    hidden: Vec<f64>,
}

fn check_shape(p: &ModelParams, x: &[[f64; FEATURES]]) -> Result<(), LearnerError> {
    if p.layout.input != FEATURES {
        return Err(LearnerError::Dimension(format!(
            "layout expects {} input channels, samples carry {FEATURES}",
            p.layout.input
        )));
    }
    if x.is_empty() {
        return Err(LearnerError::Dimension("empty input sequence".into()));
    }
    Ok(())
}

fn run_layer(values: &[f64], span: &LayerSpan, inputs: &[f64], steps: usize) -> LayerTrace {
    let (n_in, h) = (span.input, span.hidden);
    let w = &values[span.w.clone()];
    let u = &values[span.u.clone()];
    let b = &values[span.b.clone()];
    let mut trace = LayerTrace {
        gates: vec![0.0; steps * 4 * h],
        cells: vec![0.0; steps * h],
        hidden: vec![0.0; steps * h],
    };
    let mut z = vec![0.0; 4 * h];
    for t in 0..steps {
        let x = &inputs[t * n_in..(t + 1) * n_in];
        z.copy_from_slice(b);
        for (r, zr) in z.iter_mut().enumerate() {
            let wr = &w[r * n_in..(r + 1) * n_in];
            *zr += wr.iter().zip(x).map(|(a, b)| a * b).sum::<f64>();
            if t > 0 {
                let h_prev = &trace.hidden[(t - 1) * h..t * h];
                let ur = &u[r * h..(r + 1) * h];
                *zr += ur.iter().zip(h_prev).map(|(a, b)| a * b).sum::<f64>();
            }
        }
        let gates = &mut trace.gates[t * 4 * h..(t + 1) * 4 * h];
        for k in 0..h {
            gates[k] = sigmoid(z[k]);
            gates[h + k] = sigmoid(z[h + k]);
            gates[2 * h + k] = z[2 * h + k].tanh();
            gates[3 * h + k] = sigmoid(z[3 * h + k]);
        }
        for k in 0..h {
            let c_prev = if t > 0 { trace.cells[(t - 1) * h + k] } else { 0.0 };
            let c = gates[h + k] * c_prev + gates[k] * gates[2 * h + k];
            trace.cells[t * h + k] = c;
            trace.hidden[t * h + k] = gates[3 * h + k] * c.tanh();
        }
    }
    trace
}

fn run(p: &ModelParams, x: &[[f64; FEATURES]]) -> (Vec<LayerTrace>, f64) {
    let steps = x.len();
    let mut inputs: Vec<f64> = x.iter().flatten().copied().collect();
    let mut traces = Vec::with_capacity(p.layout.hidden.len());
    for span in p.layout.spans() {
        let trace = run_layer(&p.values, &span, &inputs, steps);
        inputs = trace.hidden.clone();
        traces.push(trace);
    }
    let top = p.layout.top();
    let head = &p.values[p.layout.head()];
    let last = &inputs[(steps - 1) * top..steps * top];
    let y = head[top] + head[..top].iter().zip(last).map(|(a, b)| a * b).sum::<f64>();
    (traces, y)
}

/// Normalized prediction for one feature window.
pub fn forward(p: &ModelParams, x: &[[f64; FEATURES]]) -> Result<f64, LearnerError> {
    check_shape(p, x)?;
    Ok(run(p, x).1)
}

/// Accumulates `scale * d(prediction)/d(params)` into `acc`; returns the prediction.
fn backprop_sample(p: &ModelParams, x: &[[f64; FEATURES]], acc: &mut [f64], dy_of: impl Fn(f64) -> f64) -> f64 {
    let steps = x.len();
    let (traces, y) = run(p, x);
    let dy = dy_of(y);
    let spans = p.layout.spans();
    let top = p.layout.top();
    let head = p.layout.head();
    let top_hidden = &traces.last().unwrap().hidden;

    // dL/dh arriving from above, per step, for the layer being processed.
    let mut dh_above = vec![0.0; steps * top];
    for k in 0..top {
        acc[head.start + k] += dy * top_hidden[(steps - 1) * top + k];
        dh_above[(steps - 1) * top + k] = dy * p.values[head.start + k];
    }
    acc[head.end - 1] += dy;

    for (l, span) in spans.iter().enumerate().rev() {
        let (n_in, h) = (span.input, span.hidden);
        let trace = &traces[l];
        let layer_in: Vec<f64> = if l == 0 {
            x.iter().flatten().copied().collect()
        } else {
            traces[l - 1].hidden.clone()
        };
        let w = &p.values[span.w.clone()];
        let u = &p.values[span.u.clone()];
        let mut dh_below = vec![0.0; steps * n_in];
        let mut dh_next = vec![0.0; h];
        let mut dc_next = vec![0.0; h];
        let mut dz = vec![0.0; 4 * h];
        for t in (0..steps).rev() {
            let g = &trace.gates[t * 4 * h..(t + 1) * 4 * h];
            for k in 0..h {
                let dh = dh_above[t * h + k] + dh_next[k];
                let c = trace.cells[t * h + k];
                let c_prev = if t > 0 { trace.cells[(t - 1) * h + k] } else { 0.0 };
                let tc = c.tanh();
                let (i, f, gg, o) = (g[k], g[h + k], g[2 * h + k], g[3 * h + k]);
                let dc = dh * o * (1.0 - tc * tc) + dc_next[k];
                dz[k] = dc * gg * i * (1.0 - i);
                dz[h + k] = dc * c_prev * f * (1.0 - f);
                dz[2 * h + k] = dc * i * (1.0 - gg * gg);
                dz[3 * h + k] = dh * tc * o * (1.0 - o);
                dc_next[k] = dc * f;
            }
            let x_t = &layer_in[t * n_in..(t + 1) * n_in];
            let h_prev = if t > 0 {
                Some(&trace.hidden[(t - 1) * h..t * h])
            } else {
                None
            };
            dh_next.iter_mut().for_each(|v| *v = 0.0);
            for (r, &d) in dz.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                let gw = &mut acc[span.w.start + r * n_in..span.w.start + (r + 1) * n_in];
                for (a, xv) in gw.iter_mut().zip(x_t) {
                    *a += d * xv;
                }
                let wr = &w[r * n_in..(r + 1) * n_in];
                for (db, wv) in dh_below[t * n_in..(t + 1) * n_in].iter_mut().zip(wr) {
                    *db += d * wv;
                }
                if let Some(hp) = h_prev {
                    let gu = &mut acc[span.u.start + r * h..span.u.start + (r + 1) * h];
                    for (a, hv) in gu.iter_mut().zip(hp) {
                        *a += d * hv;
                    }
                    let ur = &u[r * h..(r + 1) * h];
                    for (dn, uv) in dh_next.iter_mut().zip(ur) {
                        *dn += d * uv;
                    }
                }
                acc[span.b.start + r] += d;
            }
        }
        dh_above = dh_below;
    }
    y
}

/// Mean squared error over `batch` and its exact gradient.
pub fn grad(p: &ModelParams, batch: &[TrainingSample]) -> Result<(f64, Gradient), LearnerError> {
    grad_refs(p, &batch.iter().collect::<Vec<_>>())
}

pub(crate) fn grad_refs(p: &ModelParams, batch: &[&TrainingSample]) -> Result<(f64, Gradient), LearnerError> {
    if batch.is_empty() {
        return Err(LearnerError::Domain("gradient of an empty batch".into()));
    }
    let n = batch.len() as f64;
    let mut acc = vec![0.0; p.len()];
    let mut loss = 0.0;
    for s in batch {
        check_shape(p, &s.features)?;
        let target = s.target;
        let y = backprop_sample(p, &s.features, &mut acc, |y| 2.0 * (y - target) / n);
        loss += (y - target).powi(2);
    }
    Ok((loss / n, Gradient { values: acc }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::learner::params::{init_params, Layout};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Scalar re-implementation of the cell equations, reading weights by index.
    fn naive_forward(p: &ModelParams, x: &[[f64; 3]]) -> f64 {
        let v = &p.values;
        let mut seq: Vec<Vec<f64>> = x.iter().map(|r| r.to_vec()).collect();
        for span in p.layout.spans() {
            let (n, h) = (span.input, span.hidden);
            let weight = |gate: usize, k: usize, j: usize| v[span.w.start + (gate * h + k) * n + j];
            let rec = |gate: usize, k: usize, j: usize| v[span.u.start + (gate * h + k) * h + j];
            let bias = |gate: usize, k: usize| v[span.b.start + gate * h + k];
            let mut hs = vec![0.0; h];
            let mut cs = vec![0.0; h];
            let mut out = Vec::new();
            for xt in &seq {
                let pre = |gate: usize, k: usize, hs: &[f64]| {
                    let mut s = bias(gate, k);
                    for j in 0..n {
                        s += weight(gate, k, j) * xt[j];
                    }
                    for j in 0..h {
                        s += rec(gate, k, j) * hs[j];
                    }
                    s
                };
                let sig = |z: f64| 1.0 / (1.0 + (-z).exp());
                let mut nh = vec![0.0; h];
                for k in 0..h {
                    let i = sig(pre(0, k, &hs));
                    let f = sig(pre(1, k, &hs));
                    let g = pre(2, k, &hs).tanh();
                    let o = sig(pre(3, k, &hs));
                    cs[k] = f * cs[k] + i * g;
                    nh[k] = o * cs[k].tanh();
                }
                hs = nh;
                out.push(hs.clone());
            }
            seq = out;
        }
        let head = p.layout.head();
        let last = seq.last().unwrap();
        let mut y = v[head.end - 1];
        for (k, hv) in last.iter().enumerate() {
            y += v[head.start + k] * hv;
        }
        y
    }

    fn random_sample(rng: &mut ChaCha8Rng, window: usize) -> TrainingSample {
        TrainingSample {
            features: (0..window)
                .map(|_| [rng.random_range(0.0..1.0), rng.random_range(0.0..1.0), rng.random_range(0.0..1.0)])
                .collect(),
            target: rng.random_range(0.0..1.0),
        }
    }

    #[test]
    fn zero_net_predicts_zero() {
        let p = ModelParams::zeros(Layout::new(3, vec![4, 2]).unwrap());
        assert_eq!(forward(&p, &[[0.3, 0.1, 0.9]; 3]).unwrap(), 0.0);
    }

    #[test]
    fn bias_only_head() {
        let mut p = ModelParams::zeros(Layout::new(3, vec![4]).unwrap());
        let last = p.len() - 1;
        p.values[last] = 0.42;
        assert_eq!(forward(&p, &[[0.0; 3]; 3]).unwrap(), 0.42);
    }

    #[test]
    fn matches_naive_cell() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (k, hidden) in [vec![3], vec![5, 2], vec![4, 4, 3]].into_iter().enumerate() {
            let p = init_params(&Layout::new(3, hidden).unwrap(), k as u64);
            for _ in 0..10 {
                let s = random_sample(&mut rng, 4);
                let a = forward(&p, &s.features).unwrap();
                let b = naive_forward(&p, &s.features);
                assert!((a - b).abs() < 1e-12, "{a} vs {b}");
            }
        }
    }

    #[test]
    fn shape_mismatch_and_empty_batch() {
        let p = ModelParams::zeros(Layout::new(2, vec![2]).unwrap());
        assert!(matches!(forward(&p, &[[0.0; 3]]), Err(LearnerError::Dimension(_))));
        let p = ModelParams::zeros(Layout::new(3, vec![2]).unwrap());
        assert!(matches!(forward(&p, &[]), Err(LearnerError::Dimension(_))));
        assert!(matches!(grad(&p, &[]), Err(LearnerError::Domain(_))));
    }

    #[test]
    fn perfect_predictions_have_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = init_params(&Layout::new(3, vec![3]).unwrap(), 2);
        let mut batch: Vec<TrainingSample> = (0..5).map(|_| random_sample(&mut rng, 3)).collect();
        for s in &mut batch {
            s.target = forward(&p, &s.features).unwrap();
        }
        let (loss, g) = grad(&p, &batch).unwrap();
        assert_eq!(loss, 0.0);
        assert!(g.values.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn duplicated_sample_matches_single() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = init_params(&Layout::new(3, vec![3, 2]).unwrap(), 9);
        let s = random_sample(&mut rng, 3);
        let (l1, g1) = grad(&p, std::slice::from_ref(&s)).unwrap();
        let (l4, g4) = grad(&p, &vec![s; 4]).unwrap();
        assert!((l1 - l4).abs() < 1e-15);
        for (a, b) in g1.values.iter().zip(&g4.values) {
            assert!((a - b).abs() <= 1e-14 * a.abs().max(1.0));
        }
    }

    #[test]
    fn gradient_is_order_invariant() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = init_params(&Layout::new(3, vec![4]).unwrap(), 1);
        let batch: Vec<TrainingSample> = (0..7).map(|_| random_sample(&mut rng, 3)).collect();
        let mut rev = batch.clone();
        rev.reverse();
        let (la, ga) = grad(&p, &batch).unwrap();
        let (lb, gb) = grad(&p, &rev).unwrap();
        assert!((la - lb).abs() < 1e-15);
        for (a, b) in ga.values.iter().zip(&gb.values) {
            assert!((a - b).abs() < 1e-14);
        }
    }

    #[test]
    fn gradient_matches_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let mut p = init_params(&Layout::new(3, vec![3, 2]).unwrap(), 6);
        for v in &mut p.values {
            *v += rng.random_range(-0.3..0.3);
        }
        let batch: Vec<TrainingSample> = (0..4).map(|_| random_sample(&mut rng, 3)).collect();
        let (_, g) = grad(&p, &batch).unwrap();
        let h = 1e-5;
        for i in 0..p.len() {
            let mut plus = p.clone();
            plus.values[i] += h;
            let mut minus = p.clone();
            minus.values[i] -= h;
            let fd = (grad(&plus, &batch).unwrap().0 - grad(&minus, &batch).unwrap().0) / (2.0 * h);
            let denom = g.values[i].abs().max(fd.abs()).max(1e-7);
            assert!((g.values[i] - fd).abs() / denom < 1e-4, "index {i}: {} vs {fd}", g.values[i]);
        }
    }
}
