mod common;

use semmatch::correlation::correlate;
use semmatch::evaluation::warp_keypoint;
use semmatch::features::{extract, DescriptorConfig};
use semmatch::losses::{CoordinateSample, LossWeights};
use semmatch::pipeline::{generate_pair, train, SynthConfig, SyntheticPair, TrainConfig, TrainSet, WarpFamily};
use semmatch::regressor::{init_weights, predict, RegressorConfig, RegressorWeights};
use semmatch::Error;

fn descriptor() -> DescriptorConfig {
    DescriptorConfig::default().without_resize()
}

/// Mean pixel distance between predicted and true keypoint positions.
fn endpoint_error(pairs: &[SyntheticPair], w: &RegressorWeights) -> f64 {
    let desc = descriptor();
    let mut total = 0.0;
    let mut count = 0;
    for p in pairs {
        let (fa, fb) = (extract(&p.base, &desc).unwrap(), extract(&p.warped, &desc).unwrap());
        let t = predict(&correlate(&fa, &fb).unwrap(), &fa, &fb, w).unwrap();
        let size = (p.base.width(), p.base.height());
        for kp in &p.keypoints {
            let q = warp_keypoint(&t, kp.source, size, size);
            total += (q[0] - kp.target[0]).hypot(q[1] - kp.target[1]);
            count += 1;
        }
    }
    total / count as f64
}

#[test]
fn translation_training_halves_endpoint_error() {
    let set = TrainSet::synthetic(
        500,
        200,
        1,
        WarpFamily::Translation,
        0.25,
        &SynthConfig::default(),
        &descriptor(),
    )
    .unwrap();
    let held_out: Vec<_> = (0..30)
        .map(|k| generate_pair(70_000 + k, WarpFamily::Translation, 0.25).unwrap())
        .collect();
    let init = init_weights(1, RegressorConfig::new(set.features[0].grid())).unwrap();
    let cfg = TrainConfig {
        batch_size: 16,
        warmup_steps: 1500,
        lr: 1e-4,
        ..TrainConfig::default()
    };
    let trained = train(&set, &init, &cfg).unwrap().weights;
    let (before, after) = (endpoint_error(&held_out, &init), endpoint_error(&held_out, &trained));
    assert!(after <= 0.5 * before, "endpoint error {before:.2} px -> {after:.2} px");
}

#[test]
fn weak_phase_alone_keeps_matching_loss_from_rising() {
    let set = TrainSet::synthetic(9, 1, 1, WarpFamily::Affine, 0.2, &SynthConfig::default(), &descriptor()).unwrap();
    let init = init_weights(2, RegressorConfig::new(set.features[0].grid())).unwrap();
    let cfg = TrainConfig {
        batch_size: 1,
        epochs: 5,
        weights: LossWeights::new(0.0, 0.0).unwrap(),
        ..TrainConfig::default()
    };
    let out = train(&set, &init, &cfg).unwrap();
    let losses: Vec<f64> = out.log.steps.iter().map(|s| s.matching).collect();
    assert_eq!(losses.len(), 5);
    assert!(losses.windows(2).all(|w| w[1] <= w[0]), "{losses:?}");
    // The hard correspondence mask passes no gradient to the regressor, so
    // without consistency terms the weights do not move at all.
    assert_eq!(out.weights, init);
}

#[test]
fn consistency_terms_move_the_weights() {
    let set = TrainSet::synthetic(
        21,
        3,
        3,
        WarpFamily::Cascade,
        0.2,
        &SynthConfig::default(),
        &descriptor(),
    )
    .unwrap();
    let grid = set.features[0].grid();
    let mut init = init_weights(4, RegressorConfig::new(grid)).unwrap();
    // Away from the identity so the cycle term is not already at its minimum.
    for t in [&mut init.affine.fc2_bias, &mut init.tps.fc2_bias] {
        let data = (0..t.len()).map(|k| 0.02 * ((k % 5) as f32 - 2.0)).collect();
        *t = semmatch::tensor::Tensor::new(t.shape().to_vec(), data).unwrap();
    }
    let cfg = TrainConfig {
        batch_size: 9,
        epochs: 6,
        lr: 1e-4,
        ..TrainConfig::default()
    };
    let out = train(&set, &init, &cfg).unwrap();
    let first = out.log.steps.first().unwrap();
    let last = out.log.steps.last().unwrap();
    assert!(first.transitivity > 0.0);
    assert!(last.cycle < first.cycle, "{} -> {}", first.cycle, last.cycle);
    assert!(out.weights.is_finite());
    let tsv = out.log.to_tsv();
    assert_eq!(tsv.lines().count(), out.log.steps.len());
    assert!(tsv.lines().all(|l| l.split('\t').count() == 5));
}

#[test]
fn fixed_seed_pairs_regenerate_identically() {
    for family in [
        WarpFamily::Translation,
        WarpFamily::Affine,
        WarpFamily::Tps,
        WarpFamily::Cascade,
    ] {
        assert_eq!(
            generate_pair(42, family, 0.25).unwrap(),
            generate_pair(42, family, 0.25).unwrap()
        );
    }
}

#[test]
fn out_of_range_magnitude_is_rejected() {
    assert!(generate_pair(1, WarpFamily::Affine, 0.9).is_err());
    assert!(generate_pair(1, WarpFamily::Affine, -0.1).is_err());
}

#[test]
fn empty_training_set_is_a_contract_error() {
    let init = init_weights(1, RegressorConfig::new(semmatch::geometry::GridShape::new(4, 4))).unwrap();
    let err = train(&TrainSet::default(), &init, &TrainConfig::default()).unwrap_err();
    assert!(matches!(err, Error::Contract(_)), "{err}");
}

#[test]
fn lattice_forward_backward_is_zero_for_exact_inverses() {
    let mut r = common::rng(5);
    for _ in 0..10 {
        let a = common::random_affine(&mut r, 0.4);
        let fb = semmatch::evaluation::forward_backward_error(
            &a.into(),
            &a.invert().unwrap().into(),
            &CoordinateSample::default(),
        );
        assert!(fb < 1e-12);
    }
}
