//! With every layer branched (no shared parameters) and lambda = 0, joint
//! training of M heads must equal training each head alone, parameter for
//! parameter. The "alone" route here is a hand-rolled loop that optimizes a
//! single head's loss, written independently of the trainer.

use dncc::data::{synth_blobs, train_val_split, BatchIterator};
use dncc::loss::{dncc_head_loss, lambda_at, DnccConfig, LambdaSchedule};
use dncc::model::{Activation, BackboneSpec, EnsembleConfig, EnsembleModel, FeatureMode};
use dncc::tensor::Tape;
use dncc::train::{lr_at, sgd_step, train, TrainConfig};

fn fresh_model(seed: u64) -> EnsembleModel {
    EnsembleModel::init(
        BackboneSpec {
            input_dim: 4,
            hidden_widths: vec![12, 9],
            activation: Activation::Relu,
            // Both hidden layers are per-head: nothing is shared.
            branch_depth: 2,
        },
        EnsembleConfig {
            num_heads: 3,
            feature_mode: FeatureMode::Split,
            num_classes: 3,
            seed,
        },
    )
    .unwrap()
}

#[test]
fn lambda_zero_training_is_head_separable() {
    let ds = synth_blobs(201, 3, 60, 4, 1.0).unwrap();
    let split = train_val_split(&ds, 201).unwrap();
    let cfg = TrainConfig {
        epochs: 3,
        batch_size: 32,
        initial_lr: 0.1,
        lr_decay_factor: 0.1,
        lr_milestones: vec![2],
        momentum: 0.9,
        weight_decay: 0.0,
        dncc: DnccConfig {
            lambda_schedule: LambdaSchedule::Constant(0.0),
            detach_ensemble_mean: false,
        },
        seed: 202,
    };

    let mut joint = fresh_model(203);
    assert_eq!(joint.shared_param_fraction(), 0.0);
    let initial = joint.clone();
    train(&mut joint, &split.train, &split.val, &cfg, None).unwrap();

    for head in 0..3 {
        // Hand loop: same batches, same schedules, only head `head`'s loss.
        let mut solo = initial.clone();
        let mut velocity: Vec<Vec<f64>> =
            solo.params().iter().map(|p| vec![0.0; p.data.len()]).collect();
        let iterator = BatchIterator::new(&split.train, cfg.batch_size, cfg.seed).unwrap();
        for epoch in 0..cfg.epochs {
            let lr = lr_at(&cfg, epoch);
            let lambda = lambda_at(&cfg.dncc.lambda_schedule, epoch, cfg.epochs).unwrap();
            for batch in iterator.epoch_batches(epoch) {
                let mut tape = Tape::new();
                let pass = solo.forward(&mut tape, &batch).unwrap();
                let loss =
                    dncc_head_loss(&mut tape, head, &pass.per_head_logits, &batch.labels, lambda, false)
                        .unwrap();
                tape.backward(loss).unwrap();
                let grads: Vec<Vec<f64>> = pass
                    .param_ids
                    .iter()
                    .zip(solo.params())
                    .map(|(&id, p)| {
                        tape.grad(id)
                            .map(|g| g.to_vec())
                            .unwrap_or_else(|| vec![0.0; p.data.len()])
                    })
                    .collect();
                sgd_step(solo.params_mut(), &grads, &mut velocity, lr, cfg.momentum);
            }
        }

        let prefix = format!("head{head}");
        let mut compared = 0;
        for (a, b) in joint.params().iter().zip(solo.params()) {
            assert_eq!(a.name, b.name);
            if !a.name.starts_with(&prefix) {
                continue;
            }
            let ab: Vec<u64> = a.data.iter().map(|v| v.to_bits()).collect();
            let bb: Vec<u64> = b.data.iter().map(|v| v.to_bits()).collect();
            assert_eq!(ab, bb, "{} diverged between joint and solo training", a.name);
            compared += 1;
        }
        assert!(compared >= 6, "expected weight+bias blocks for branch layers and classifier");
    }
}
