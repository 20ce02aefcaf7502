use dropattack::data::{gen_two_moons, split};
use dropattack::models::{build_seeded, ModelSpec};
use dropattack::perturb::{AttackConfig, AttackMethod};
use dropattack::train::{
    scaling_study, train, write_metrics_csv, Experiment, OptimizerConfig, Regularizer, Splits, TrainConfig,
};

fn moons_splits(n: usize) -> Splits {
    let data = gen_two_moons(n, 0.25, 3).unwrap();
    let (train, val, test) = split(&data, [0.6, 0.2, 0.2], 1).unwrap();
    Splits { train, val, test }
}

fn cfg(epochs: usize, batch_size: usize, lr: f64, reg: Regularizer) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        lr,
        optimizer: OptimizerConfig::Sgd,
        regularizer: reg,
        eval_every: 1,
        seed: 5,
        patience: None,
    }
}

fn no_val(s: &Splits) -> Splits {
    Splits {
        train: s.train.clone(),
        val: s.train.select(&[]),
        test: s.test.clone(),
    }
}

#[test]
fn zero_probability_attack_is_sgd_at_triple_rate() {
    let splits = no_val(&moons_splits(200));
    let spec = ModelSpec::mlp(&[2, 16, 2], 2);
    let (init, model) = build_seeded(&spec).unwrap();
    let attack = Regularizer::Attack(AttackConfig::dropattack(&["input", "fc1.w", "fc2.w"], 5.0, 0.0, 1));
    let n = splits.train.len();
    for steps in 1..=10 {
        let a = train(model.as_ref(), &init, &splits, &cfg(steps, n, 0.05, attack.clone())).unwrap();
        let b = train(model.as_ref(), &init, &splits, &cfg(steps, n, 0.15, Regularizer::None)).unwrap();
        for ((name, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
            for (u, v) in x.data().iter().zip(y.data()) {
                assert!((u - v).abs() <= 1e-10, "step {steps} {name}: {u} vs {v}");
            }
        }
    }
}

#[test]
fn forward_backward_counts_per_batch() {
    let splits = moons_splits(100);
    let spec = ModelSpec::mlp(&[2, 8, 2], 0);
    let (init, model) = build_seeded(&spec).unwrap();
    let batches = splits.train.len().div_ceil(20) as u64;
    let count = |reg: Regularizer| train(model.as_ref(), &init, &splits, &cfg(1, 20, 0.1, reg)).unwrap().fb_count;
    assert_eq!(count(Regularizer::None), 2 * batches);
    assert_eq!(count(Regularizer::L2 { lambda: 0.01 }), 2 * batches);
    let da = AttackConfig::dropattack(&["input", "fc1.w"], 1.0, 0.7, 1);
    assert_eq!(count(Regularizer::Attack(da.clone())), 4 * batches);
    for k in 2..=4 {
        let c = AttackConfig { k, ..da.clone() };
        assert_eq!(count(Regularizer::Attack(c)), (2 + 2 * k as u64) * batches);
    }
    let fgm = AttackConfig::input_baseline(AttackMethod::Fgm, 0.1);
    assert_eq!(count(Regularizer::Attack(fgm)), 4 * batches);
}

#[test]
fn reruns_are_identical_and_best_epoch_wins() {
    let splits = moons_splits(300);
    let spec = ModelSpec::mlp(&[2, 16, 2], 9);
    let (init, model) = build_seeded(&spec).unwrap();
    let reg = Regularizer::Attack(AttackConfig::dropattack(&["input", "fc1.w"], 0.5, 0.7, 2));
    let c = TrainConfig {
        optimizer: OptimizerConfig::adam(),
        ..cfg(15, 32, 0.01, reg)
    };
    let a = train(model.as_ref(), &init, &splits, &c).unwrap();
    let b = train(model.as_ref(), &init, &splits, &c).unwrap();
    let csv = |m: &[dropattack::train::MetricsRecord]| {
        let mut buf = Vec::new();
        write_metrics_csv(&mut buf, m, false).unwrap();
        buf
    };
    assert_eq!(csv(&a.metrics), csv(&b.metrics));
    assert_eq!(a.params, b.params);
    let best = a.metrics.iter().find(|m| Some(m.epoch) == a.best_epoch).unwrap();
    assert!(best.val_acc >= a.metrics.last().unwrap().val_acc);
    assert!(a.metrics.windows(2).all(|w| w[0].fb_count < w[1].fb_count));
    assert!(a.metrics.iter().all(|m| (0.0..=1.0).contains(&m.train_acc)));
}

#[test]
fn dropout_and_l1_runs_learn() {
    let splits = moons_splits(400);
    let spec = ModelSpec::mlp(&[2, 32, 2], 4);
    let (init, model) = build_seeded(&spec).unwrap();
    for reg in [Regularizer::Dropout { rate: 0.2 }, Regularizer::L1 { lambda: 1e-4 }] {
        let c = TrainConfig {
            optimizer: OptimizerConfig::adam(),
            ..cfg(30, 32, 0.01, reg)
        };
        let out = train(model.as_ref(), &init, &splits, &c).unwrap();
        assert!(out.test_acc > 0.8, "{}", out.test_acc);
    }
}

#[test]
fn scaling_at_full_pool_equals_plain_runs() {
    let splits = moons_splits(120);
    let exp = Experiment {
        model: ModelSpec::mlp(&[2, 8, 2], 0),
        splits: splits.clone(),
        train: cfg(3, 16, 0.1, Regularizer::None),
    };
    let attack = AttackConfig::dropattack(&["input", "fc1.w"], 1.0, 0.7, 1);
    let n = splits.train.len();
    let rows = scaling_study(&exp, &[n], &attack, &[11], 1).unwrap();
    let plain = exp.run(&Regularizer::None, 11).unwrap().test_acc;
    let da = exp.run(&Regularizer::Attack(attack.clone()), 11).unwrap().test_acc;
    assert_eq!(rows[0].standard_acc, plain);
    assert_eq!(rows[0].dropattack_acc, da);
    assert_eq!(rows[0].improvement, da - plain);
    assert!(scaling_study(&exp, &[n + 1], &attack, &[11], 1).is_err());
}

#[test]
fn non_finite_loss_aborts_with_diagnostics() {
    let splits = moons_splits(60);
    let spec = ModelSpec::mlp(&[2, 8, 2], 0);
    let (init, model) = build_seeded(&spec).unwrap();
    let err = train(model.as_ref(), &init, &splits, &cfg(50, 8, 1e150, Regularizer::None)).unwrap_err();
    match err {
        dropattack::Error::NumericalAbort { epoch, layer_norms, .. } => {
            assert!(epoch >= 1);
            assert_eq!(layer_norms.len(), 4);
        }
        other => panic!("unexpected {other}"),
    }
}

