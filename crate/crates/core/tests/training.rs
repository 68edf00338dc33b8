use softprune_core::arch::make_toy_cnn;
use softprune_core::data::{synth_blobs, BlobSpec, Dataset};
use softprune_core::prune::{apply_mask, select_mask, PruneConfig};
use softprune_core::train::{run, run_with_observer, Method, TrainConfig};
use softprune_core::ModelGraph;
use softprune_oracle::{hard_zero_reference, ReferenceRun};

fn toy_setup() -> (ModelGraph, Dataset, Dataset) {
    let (train, test) = synth_blobs(&BlobSpec {
        classes: 4,
        per_class: 12,
        channels: 1,
        height: 6,
        width: 6,
        noise_sigma: 0.3,
        seed: 17,
    })
    .unwrap();
    let mut model = make_toy_cnn([1, 6, 6], 6, 4).unwrap();
    model.init_he(23);
    (model, train, test)
}

#[test]
fn sfp_matches_hard_zeroing_reference_bit_for_bit() {
    let (model, train, test) = toy_setup();
    let mut config = TrainConfig::preset(Method::Sfp, 10, 0.5);
    config.learning_rate = 0.05;
    config.batch_size = 8;
    config.seed = 99;
    let outcome = run(model.clone(), &train, &test, &config).unwrap();

    let reference = ReferenceRun {
        epochs: config.epochs,
        batch_size: config.batch_size,
        learning_rate: config.learning_rate,
        milestones: config.milestones.clone(),
        lr_decay: config.lr_decay,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
        seed: config.seed,
        rate: 0.5,
    };
    let (history, oracle_model) = hard_zero_reference(model, &train, &test, &reference);

    assert_eq!(history.len(), outcome.reports.len());
    for (r, (loss, before, after)) in outcome.reports.iter().zip(&history) {
        assert_eq!(r.train_loss.to_bits(), loss.to_bits(), "epoch {}", r.epoch);
        assert_eq!(r.test_accuracy_before_prune, *before);
        assert_eq!(r.test_accuracy_after_prune, *after);
    }
    for ((name, a), (_, b)) in outcome.masked_model.params().zip(oracle_model.params()) {
        let bits = |p: &softprune_core::Param| -> Vec<u64> {
            let mut v: Vec<u64> = p.weight.data().iter().map(|x| x.to_bits()).collect();
            if let Some(b) = &p.bias {
                v.extend(b.data().iter().map(|x| x.to_bits()));
            }
            v
        };
        assert_eq!(bits(a), bits(b), "layer {name}");
    }
}

#[test]
fn zeroed_filters_keep_learning() {
    let (mut model, train, test) = toy_setup();
    let mask = select_mask(&model, &PruneConfig::with_rate(0.5)).unwrap();
    apply_mask(&mut model, &mask, 0.0).unwrap();
    let zeroed = mask.pruned_indices().find(|(n, _)| *n == "conv2").unwrap().1;
    assert_eq!(zeroed.len(), 3);

    // Train without further pruning and look at the weights after epoch 0.
    let mut config = TrainConfig::preset(Method::Sfp, 2, 0.0);
    config.learning_rate = 0.05;
    config.batch_size = 8;
    let mut first = None;
    run_with_observer(model, &train, &test, &config, &mut |r, m| {
        if r.epoch == 0 {
            first = Some(m.clone());
        }
    })
    .unwrap();
    let w = first.unwrap().param("conv2").unwrap().weight.clone();
    let per = w.len() / w.shape()[0];
    for j in zeroed {
        let norm: f64 = w.data()[j * per..(j + 1) * per].iter().map(|v| v * v).sum();
        assert!(norm > 0.0, "filter {j} received no update");
    }
}

#[test]
fn zero_rate_is_plain_sgd() {
    let (model, train, test) = toy_setup();
    let mut config = TrainConfig::preset(Method::Srfp, 5, 0.0);
    config.learning_rate = 0.05;
    config.batch_size = 8;
    let outcome = run(model.clone(), &train, &test, &config).unwrap();
    assert!(outcome.reports.iter().all(|r| r.accuracy_drop == 0.0));
    let reference = ReferenceRun {
        epochs: 5,
        batch_size: 8,
        learning_rate: 0.05,
        milestones: config.milestones.clone(),
        lr_decay: config.lr_decay,
        momentum: config.momentum,
        weight_decay: config.weight_decay,
        seed: config.seed,
        rate: 0.0,
    };
    let (_, plain) = hard_zero_reference(model, &train, &test, &reference);
    assert_eq!(outcome.model, plain);
}

#[test]
fn unpruned_toy_baseline_has_headroom() {
    let (mut train, mut test) = synth_blobs(&BlobSpec {
        classes: 10,
        per_class: 200,
        channels: 1,
        height: 8,
        width: 8,
        noise_sigma: 0.3,
        seed: 0,
    })
    .unwrap();
    let stats = train.standardize();
    test.apply_standardization(&stats);
    let mut model = make_toy_cnn([1, 8, 8], 8, 10).unwrap();
    model.init_he(1);
    let mut config = TrainConfig::preset(Method::Srfp, 10, 0.0);
    config.learning_rate = 0.05;
    let outcome = run(model, &train, &test, &config).unwrap();
    assert!(outcome.final_accuracy >= 0.9, "accuracy {}", outcome.final_accuracy);
}
