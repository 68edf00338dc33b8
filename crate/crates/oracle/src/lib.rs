//! Brute-force reference implementations for the softprune test suites.
//!
//! Nothing here is optimized and nothing here calls the code it checks:
//! convolution is six nested loops, gradients are central differences,
//! selection is exhaustive enumeration, and the hard-zeroing training loop
//! re-implements the epoch loop, filter ranking, zeroing and the SGD update
//! on its own. The loop does reuse the model's forward/backward pass, which
//! is verified separately against finite differences.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use softprune_core::data::Dataset;
use softprune_core::{ModelGraph, Tensor};

/// Cross-correlation by six nested loops with explicit zero padding.
pub fn naive_conv2d(input: &Tensor, kernel: &Tensor, stride: usize, padding: usize) -> Tensor {
    let (m, h, w) = (input.shape()[0], input.shape()[1], input.shape()[2]);
    let (n, km, s) = (kernel.shape()[0], kernel.shape()[1], kernel.shape()[2]);
    assert_eq!(m, km, "channel mismatch");
    let oh = (h + 2 * padding - s) / stride + 1;
    let ow = (w + 2 * padding - s) / stride + 1;
    let at = |c: usize, y: isize, x: isize| -> f64 {
        if y < 0 || x < 0 || y >= h as isize || x >= w as isize {
            0.0
        } else {
            input.data()[(c * h + y as usize) * w + x as usize]
        }
    };
    let mut out = vec![0.0; n * oh * ow];
    for j in 0..n {
        for oy in 0..oh {
            for ox in 0..ow {
                let mut acc = 0.0;
                for c in 0..m {
                    for ky in 0..s {
                        for kx in 0..s {
                            let y = (oy * stride + ky) as isize - padding as isize;
                            let x = (ox * stride + kx) as isize - padding as isize;
                            acc += kernel.data()[((j * m + c) * s + ky) * s + kx] * at(c, y, x);
                        }
                    }
                }
                out[(j * oh + oy) * ow + ox] = acc;
            }
        }
    }
    Tensor::new(vec![n, oh, ow], out).expect("valid output shape")
}

/// Central-difference gradient of `f` at `point`, one coordinate at a time.
pub fn finite_diff_grad(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], step: f64) -> Vec<f64> {
    assert!(step > 0.0);
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + step;
            let plus = f(&x);
            x[i] = orig - step;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * step)
        })
        .collect()
}

/// The `k`-subset of indices with the smallest total norm; among equal
/// totals, the lexicographically smallest index set. Totals are summed in
/// ascending value order so that equal multisets give equal sums.
pub fn exhaustive_select(norms: &[f64], k: usize) -> Result<Vec<usize>, String> {
    let n = norms.len();
    if n > 20 {
        return Err(format!("{n} norms exceed the enumeration limit of 20"));
    }
    if k > n {
        return Err(format!("cannot select {k} of {n}"));
    }
    let mut best: Option<(f64, Vec<usize>)> = None;
    for bits in 0u32..(1u32 << n) {
        if bits.count_ones() as usize != k {
            continue;
        }
        let set: Vec<usize> = (0..n).filter(|i| bits & (1 << i) != 0).collect();
        let mut vals: Vec<f64> = set.iter().map(|&i| norms[i]).collect();
        vals.sort_by(f64::total_cmp);
        let total: f64 = vals.iter().sum();
        let better = match &best {
            None => true,
            Some((t, s)) => total < *t || (total == *t && set < *s),
        };
        if better {
            best = Some((total, set));
        }
    }
    Ok(best.map(|b| b.1).unwrap_or_default())
}

/// Settings of [`hard_zero_reference`].
#[derive(Debug, Clone)]
pub struct ReferenceRun {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub milestones: Vec<f64>,
    pub lr_decay: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub rate: f64,
}

/// Per-epoch `(train loss, accuracy before zeroing, accuracy after zeroing)`.
pub type ReferenceEpoch = (f64, f64, f64);

/// Soft filter pruning with hard zeroing, written from scratch: every epoch
/// trains with momentum SGD, then zeroes the `floor(n·rate)` lowest-ℓ2
/// filters of every prunable conv layer together with their momentum.
/// Returns the per-epoch metrics and the final model.
pub fn hard_zero_reference(
    mut model: ModelGraph,
    train: &Dataset,
    test: &Dataset,
    run: &ReferenceRun,
) -> (Vec<ReferenceEpoch>, ModelGraph) {
    let names: Vec<String> = model.params().map(|(n, _)| n.to_string()).collect();
    let prunable: Vec<String> = model
        .layers()
        .iter()
        .filter(|l| matches!(l.kind, softprune_core::LayerKind::Conv { prunable: true, .. }))
        .map(|l| l.name.clone())
        .collect();
    let mut velocity: Vec<(Vec<f64>, Vec<f64>)> = names
        .iter()
        .map(|n| {
            let p = model.param(n).unwrap();
            (
                vec![0.0; p.weight.len()],
                vec![0.0; p.bias.as_ref().map_or(0, |b| b.len())],
            )
        })
        .collect();
    let mut rng = ChaCha8Rng::seed_from_u64(run.seed);
    let mut history = Vec::new();

    for epoch in 0..run.epochs {
        let passed = run
            .milestones
            .iter()
            .filter(|&&m| epoch >= (m * run.epochs as f64).floor() as usize)
            .count();
        let lr = run.learning_rate * run.lr_decay.powi(passed as i32);

        let mut order: Vec<usize> = (0..train.len()).collect();
        order.shuffle(&mut rng);
        let mut loss_sum = 0.0;
        for batch in order.chunks(run.batch_size) {
            let samples: Vec<(Tensor, usize)> = batch.iter().map(|&i| (train.sample(i), train.label(i))).collect();
            let (loss, grads) = model
                .loss_and_gradients(samples.iter().map(|(x, l)| (x, *l)))
                .expect("forward/backward");
            for (k, name) in names.iter().enumerate() {
                let g = grads.get(name).unwrap();
                let p = model.param_mut(name).unwrap();
                let (vw, vb) = &mut velocity[k];
                for (i, v) in vw.iter_mut().enumerate() {
                    let d = g.weight.data()[i] + run.weight_decay * p.weight.data()[i];
                    *v = run.momentum * *v + d;
                    p.weight.data_mut()[i] -= lr * *v;
                }
                if let (Some(pb), Some(gb)) = (p.bias.as_mut(), g.bias.as_ref()) {
                    for (i, v) in vb.iter_mut().enumerate() {
                        let d = gb.data()[i] + run.weight_decay * pb.data()[i];
                        *v = run.momentum * *v + d;
                        pb.data_mut()[i] -= lr * *v;
                    }
                }
            }
            loss_sum += loss * batch.len() as f64;
        }
        let before = accuracy(&model, test);

        for name in &prunable {
            let k = names.iter().position(|n| n == name).unwrap();
            let w = &model.param(name).unwrap().weight;
            let n = w.shape()[0];
            let per = w.len() / n;
            let norms: Vec<f64> = (0..n)
                .map(|j| {
                    w.data()[j * per..(j + 1) * per]
                        .iter()
                        .map(|v| v * v)
                        .sum::<f64>()
                        .sqrt()
                })
                .collect();
            let count = (n as f64 * run.rate + 1e-9).floor() as usize;
            let mut idx: Vec<usize> = (0..n).collect();
            idx.sort_by(|&a, &b| norms[a].total_cmp(&norms[b]).then(a.cmp(&b)));
            let pw = &mut model.param_mut(name).unwrap().weight;
            for &j in &idx[..count] {
                for i in j * per..(j + 1) * per {
                    pw.data_mut()[i] = 0.0;
                    velocity[k].0[i] = 0.0;
                }
            }
        }
        let after = accuracy(&model, test);
        history.push((loss_sum / train.len() as f64, before, after));
    }
    (history, model)
}

fn accuracy(model: &ModelGraph, data: &Dataset) -> f64 {
    let correct = (0..data.len())
        .filter(|&i| {
            let logits = model.predict(&data.sample(i)).unwrap();
            let mut best = 0;
            for (j, &v) in logits.data().iter().enumerate() {
                if v > logits.data()[best] {
                    best = j;
                }
            }
            best == data.label(i)
        })
        .count();
    correct as f64 / data.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn finite_diff_of_square() {
        let g = finite_diff_grad(|x| x[0] * x[0], &[3.0], 1e-5);
        assert!((g[0] - 6.0).abs() < 1e-8);
        let z = finite_diff_grad(|_| 4.0, &[1.0, 2.0], 1e-3);
        assert_eq!(z, vec![0.0, 0.0]);
    }

    #[test]
    fn exhaustive_examples() {
        assert_eq!(exhaustive_select(&[0.5, 3.0, 1.0, 2.0], 2).unwrap(), vec![0, 2]);
        assert_eq!(exhaustive_select(&[0.5, 3.0], 0).unwrap(), Vec::<usize>::new());
        assert_eq!(exhaustive_select(&[1.0, 1.0, 1.0], 2).unwrap(), vec![0, 1]);
        assert!(exhaustive_select(&[1.0], 2).is_err());
        assert!(exhaustive_select(&[0.0; 21], 1).is_err());
    }

    #[test]
    fn naive_conv_scalar() {
        let x = Tensor::new(vec![1, 1, 1], vec![2.0]).unwrap();
        let k = Tensor::new(vec![1, 1, 1, 1], vec![3.0]).unwrap();
        assert_eq!(naive_conv2d(&x, &k, 1, 0).data(), &[6.0]);
    }
}
