use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use softprune_core::arch::make_toy_cnn;
use softprune_core::tensor::{self, Tensor};
use softprune_oracle::{finite_diff_grad, naive_conv2d};

fn random_tensor(shape: &[usize], rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let scale = norm(a).max(norm(b));
    if scale == 0.0 {
        0.0
    } else {
        norm(&diff) / scale
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn conv_matches_naive_loops(
        seed in any::<u64>(),
        in_ch in 1usize..4,
        out_ch in 1usize..4,
        k in 1usize..4,
        extra in 0usize..5,
        stride in 1usize..3,
        padding in 0usize..2,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let side = k + extra;
        let x = random_tensor(&[in_ch, side, side + 1], &mut rng);
        let w = random_tensor(&[out_ch, in_ch, k, k], &mut rng);
        let fast = tensor::conv2d_forward(&x, &w, stride, padding).unwrap();
        let slow = naive_conv2d(&x, &w, stride, padding);
        prop_assert_eq!(fast.shape(), slow.shape());
        for (a, b) in fast.data().iter().zip(slow.data()) {
            prop_assert!((a - b).abs() <= 1e-12, "{} vs {}", a, b);
        }
    }
}

const STEP: f64 = 1e-5;
const KERNEL_TOL: f64 = 1e-6;

#[test]
fn conv_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for (stride, padding) in [(1, 0), (1, 1), (2, 1)] {
        let x = random_tensor(&[2, 5, 5], &mut rng);
        let w = random_tensor(&[3, 2, 3, 3], &mut rng);
        let out_shape = tensor::conv2d_forward(&x, &w, stride, padding)
            .unwrap()
            .shape()
            .to_vec();
        let r = random_tensor(&out_shape, &mut rng);
        let (gx, gw) = tensor::conv2d_backward(&x, &w, &r, stride, padding).unwrap();

        let loss_x = |v: &[f64]| {
            let xi = Tensor::new(x.shape().to_vec(), v.to_vec()).unwrap();
            dot(
                tensor::conv2d_forward(&xi, &w, stride, padding).unwrap().data(),
                r.data(),
            )
        };
        let loss_w = |v: &[f64]| {
            let wi = Tensor::new(w.shape().to_vec(), v.to_vec()).unwrap();
            dot(
                tensor::conv2d_forward(&x, &wi, stride, padding).unwrap().data(),
                r.data(),
            )
        };
        assert!(rel_err(gx.data(), &finite_diff_grad(loss_x, x.data(), STEP)) <= KERNEL_TOL);
        assert!(rel_err(gw.data(), &finite_diff_grad(loss_w, w.data(), STEP)) <= KERNEL_TOL);
    }
}

#[test]
fn dense_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let x = random_tensor(&[6], &mut rng);
    let w = random_tensor(&[4, 6], &mut rng);
    let b = random_tensor(&[4], &mut rng);
    let r = random_tensor(&[4], &mut rng);
    let (gx, gw, gb) = tensor::dense_backward(&x, &w, &r).unwrap();
    let f = |x: &Tensor, w: &Tensor, b: &Tensor| dot(tensor::dense_forward(x, w, Some(b)).unwrap().data(), r.data());
    let with = |t: &Tensor, v: &[f64]| Tensor::new(t.shape().to_vec(), v.to_vec()).unwrap();
    let nx = finite_diff_grad(|v| f(&with(&x, v), &w, &b), x.data(), STEP);
    let nw = finite_diff_grad(|v| f(&x, &with(&w, v), &b), w.data(), STEP);
    let nb = finite_diff_grad(|v| f(&x, &w, &with(&b, v)), b.data(), STEP);
    assert!(rel_err(gx.data(), &nx) <= KERNEL_TOL);
    assert!(rel_err(gw.data(), &nw) <= KERNEL_TOL);
    assert!(rel_err(gb.data(), &nb) <= KERNEL_TOL);
}

#[test]
fn relu_and_pool_gradients_match_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    // Keep inputs away from the kink so the difference quotient is smooth.
    let x = Tensor::from_fn(&[2, 4, 4], |_| {
        let v: f64 = rng.random_range(0.05..1.0);
        if rng.random_bool(0.5) {
            v
        } else {
            -v
        }
    });
    let r = random_tensor(&[2, 4, 4], &mut rng);
    let g = tensor::relu_backward(&x, &r).unwrap();
    let n = finite_diff_grad(
        |v| {
            dot(
                tensor::relu_forward(&Tensor::new(vec![2, 4, 4], v.to_vec()).unwrap()).data(),
                r.data(),
            )
        },
        x.data(),
        STEP,
    );
    assert!(rel_err(g.data(), &n) <= KERNEL_TOL);

    let rp = random_tensor(&[2, 2, 2], &mut rng);
    let gp = tensor::avgpool_backward(x.shape(), 2, &rp).unwrap();
    let np = finite_diff_grad(
        |v| {
            dot(
                tensor::avgpool_forward(&Tensor::new(vec![2, 4, 4], v.to_vec()).unwrap(), 2)
                    .unwrap()
                    .data(),
                rp.data(),
            )
        },
        x.data(),
        STEP,
    );
    assert!(rel_err(gp.data(), &np) <= KERNEL_TOL);
}

#[test]
fn cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    for label in 0..5 {
        let z = random_tensor(&[5], &mut rng);
        let (_, g) = tensor::softmax_cross_entropy(&z, label).unwrap();
        let n = finite_diff_grad(
            |v| {
                tensor::softmax_cross_entropy(&Tensor::new(vec![5], v.to_vec()).unwrap(), label)
                    .unwrap()
                    .0
            },
            z.data(),
            STEP,
        );
        assert!(rel_err(g.data(), &n) <= KERNEL_TOL);
    }
}

#[test]
fn whole_model_gradient_matches_finite_differences() {
    for seed in 0..20u64 {
        let mut model = make_toy_cnn([2, 6, 6], 4, 3).unwrap();
        model.init_he(seed);
        let mut rng = ChaCha8Rng::seed_from_u64(1000 + seed);
        let samples: Vec<(Tensor, usize)> = (0..2)
            .map(|_| (random_tensor(&[2, 6, 6], &mut rng), rng.random_range(0..3)))
            .collect();
        let (_, grads) = model.loss_and_gradients(samples.iter().map(|(x, l)| (x, *l))).unwrap();

        let names: Vec<String> = model.params().map(|(n, _)| n.to_string()).collect();
        let mut analytic = Vec::new();
        let mut point = Vec::new();
        for name in &names {
            let (p, g) = (model.param(name).unwrap(), grads.get(name).unwrap());
            analytic.extend_from_slice(g.weight.data());
            point.extend_from_slice(p.weight.data());
            if let (Some(pb), Some(gb)) = (&p.bias, &g.bias) {
                analytic.extend_from_slice(gb.data());
                point.extend_from_slice(pb.data());
            }
        }
        let mut probe = model.clone();
        let loss = |v: &[f64]| {
            let mut at = 0;
            for name in &names {
                let p = probe.param_mut(name).unwrap();
                let n = p.weight.len();
                p.weight.data_mut().copy_from_slice(&v[at..at + n]);
                at += n;
                if let Some(b) = &mut p.bias {
                    let n = b.len();
                    b.data_mut().copy_from_slice(&v[at..at + n]);
                    at += n;
                }
            }
            probe
                .loss_and_gradients(samples.iter().map(|(x, l)| (x, *l)))
                .unwrap()
                .0
        };
        let numeric = finite_diff_grad(loss, &point, 1e-6);
        let err = rel_err(&analytic, &numeric);
        assert!(err <= 1e-5, "seed {seed}: relative error {err}");
    }
}

#[test]
fn toy_forward_matches_hand_composition() {
    let mut model = make_toy_cnn([2, 6, 6], 3, 4).unwrap();
    model.init_he(3);
    for (name, p) in model.clone().params() {
        if let Some(b) = &p.bias {
            let mut b = b.clone();
            b.data_mut()
                .iter_mut()
                .enumerate()
                .for_each(|(i, v)| *v = 0.1 * i as f64 - 0.15);
            model.param_mut(name).unwrap().bias = Some(b);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let relu = |t: Tensor| -> Tensor {
        let shape = t.shape().to_vec();
        Tensor::new(shape, t.into_data().into_iter().map(|v| v.max(0.0)).collect()).unwrap()
    };
    for _ in 0..10 {
        let x = random_tensor(&[2, 6, 6], &mut rng);
        let (c1, c2, fc) = (
            model.param("conv1").unwrap(),
            model.param("conv2").unwrap(),
            model.param("fc").unwrap(),
        );
        let k1 = c1.weight.shape()[2];
        let h = relu(naive_conv2d(&x, &c1.weight, 1, k1 / 2));
        let h = relu(naive_conv2d(&h, &c2.weight, 1, 1));
        let (c, hh, ww) = (h.shape()[0], h.shape()[1], h.shape()[2]);
        let mut pooled = Vec::new();
        for ch in 0..c {
            for py in 0..hh / 2 {
                for px in 0..ww / 2 {
                    let mut s = 0.0;
                    for dy in 0..2 {
                        for dx in 0..2 {
                            s += h.data()[(ch * hh + 2 * py + dy) * ww + 2 * px + dx];
                        }
                    }
                    pooled.push(s / 4.0);
                }
            }
        }
        let (out, inp) = (fc.weight.shape()[0], fc.weight.shape()[1]);
        assert_eq!(inp, pooled.len());
        let bias = fc.bias.as_ref().unwrap();
        let expected: Vec<f64> = (0..out)
            .map(|o| bias.data()[o] + (0..inp).map(|i| fc.weight.data()[o * inp + i] * pooled[i]).sum::<f64>())
            .collect();
        let got = model.predict(&x).unwrap();
        for (a, b) in got.data().iter().zip(&expected) {
            assert!((a - b).abs() <= 1e-12, "{a} vs {b}");
        }
    }
}
