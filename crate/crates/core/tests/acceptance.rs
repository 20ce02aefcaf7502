//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Runs as a plain binary (`harness = false`) so the
//! lines are never swallowed by output capture.
//!
//! Criteria 9 and 10 train LeNet-lite on MNIST with the shipped configs and
//! take several minutes on one core.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use dropattack::analysis::{
    scan_landscape, sharpness, verify_first_order, write_equivalence_csv, write_landscape_csv, GridSpec,
    SurrogateForm,
};
use dropattack::data::{gen_two_moons, split, Batch, BatchInput, Dataset};
use dropattack::experiment::ExperimentConfig;
use dropattack::gradcheck::run_suite;
use dropattack::models::{
    build_seeded, evaluate, load_checkpoint, model_for, save_checkpoint, ModelSpec, ParameterSet,
};
use dropattack::perturb::{
    attack_step, dropattack_k, dropattack_step, fgm, fgsm, pgd_step, sample_mask, AttackConfig, AttackMethod,
};
use dropattack::train::{
    scaling_study, sweep, train, write_metrics_csv, write_scaling_csv, write_sweep_csv, Experiment,
    OptimizerConfig, Regularizer, Splits, SweepGrid, TrainConfig, TrainOutcome,
};
use dropattack::{Rng, Tensor};

type Verdict = (bool, String);

fn configs_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

fn moons(n: usize, seed: u64) -> Splits {
    let (train, val, test) = split(&gen_two_moons(n, 0.25, seed).unwrap(), [0.6, 0.2, 0.2], 1).unwrap();
    Splits { train, val, test }
}

fn train_cfg(epochs: usize, batch_size: usize, lr: f64, regularizer: Regularizer) -> TrainConfig {
    TrainConfig {
        epochs,
        batch_size,
        lr,
        optimizer: OptimizerConfig::Sgd,
        regularizer,
        eval_every: 1,
        seed: 5,
        patience: None,
    }
}

fn dense_batch(x: Vec<f64>, shape: Vec<usize>, labels: Vec<usize>) -> Batch {
    Batch {
        input: BatchInput::Dense(Tensor::new(shape, x).unwrap()),
        labels,
    }
}

fn random_batch(rng: &mut Rng, n: usize, d: usize, classes: usize) -> Batch {
    dense_batch(
        (0..n * d).map(|_| rng.normal()).collect(),
        vec![n, d],
        (0..n).map(|i| i % classes).collect(),
    )
}

fn bits(t: &Tensor) -> Vec<u64> {
    t.data().iter().map(|v| v.to_bits()).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

fn c1_gradcheck() -> Verdict {
    let start = Instant::now();
    let rows = run_suite(20, 1e-5).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let worst = rows.iter().max_by(|a, b| a.max_error.total_cmp(&b.max_error)).unwrap();
    let archs = rows.iter().filter(|r| r.name.starts_with("arch:")).count();
    let ok = rows.iter().all(|r| r.max_error < 1e-4) && secs < 60.0;
    (
        ok,
        format!(
            "{} ops + {archs} architectures, 20 seeds; worst {} {:.2e} < 1e-4; {secs:.1}s < 60s",
            rows.len() - archs,
            worst.name,
            worst.max_error
        ),
    )
}

fn c2_fgm_fgsm() -> Verdict {
    let mut rng = Rng::new(2);
    let mut worst = 0.0f64;
    for _ in 0..1000 {
        let n = 1 + rng.below(64);
        let scale = 10f64.powf(rng.uniform_range(-6.0, 6.0));
        let g = Tensor::new(vec![n], (0..n).map(|_| scale * rng.normal()).collect()).unwrap();
        let eps = rng.uniform_range(0.01, 10.0);
        worst = worst.max((fgm(&g, eps).norm() - eps).abs());
    }
    let mut sign_ok = true;
    for _ in 0..200 {
        let n = 1 + rng.below(32);
        let g: Vec<f64> = (0..n)
            .map(|_| match rng.below(5) {
                0 => 0.0,
                1 => -0.0,
                _ => rng.normal(),
            })
            .collect();
        let eps = rng.uniform_range(0.01, 10.0);
        let r = fgsm(&Tensor::new(vec![n], g.clone()).unwrap(), eps);
        for (gi, ri) in g.iter().zip(r.data()) {
            let expect = if *gi > 0.0 {
                eps
            } else if *gi < 0.0 {
                -eps
            } else {
                0.0
            };
            sign_ok &= *ri == expect;
        }
    }
    (
        worst < 1e-9 && sign_ok,
        format!("max | ||r|| - eps | = {worst:.1e} < 1e-9 over 1000 gradients; FGSM sign match incl. sgn(0)=0: {sign_ok}"),
    )
}

fn c3_pgd_ball() -> Verdict {
    let mut rng = Rng::new(3);
    let mut worst_excess = f64::NEG_INFINITY;
    for _ in 0..100 {
        let n = 1 + rng.below(32);
        let x0: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let radius = rng.uniform_range(0.01, 2.0);
        let alpha = rng.uniform_range(0.01, 3.0);
        let x0t = Tensor::new(vec![n], x0.clone()).unwrap();
        let mut x = x0t.clone();
        for _ in 0..10 {
            let g = Tensor::new(vec![n], (0..n).map(|_| rng.normal()).collect()).unwrap();
            x = pgd_step(&x, &g, alpha, &x0t, radius);
            let d: Vec<f64> = x.data().iter().zip(&x0).map(|(a, b)| a - b).collect();
            worst_excess = worst_excess.max(norm(&d) - radius);
        }
    }
    (
        worst_excess <= 1e-10,
        format!("max ||x_t - x0|| - radius = {worst_excess:.1e} <= 1e-10 over 100 x 10 steps"),
    )
}

fn c4_masks() -> Verdict {
    let shapes = [("w".to_string(), vec![1000, 1000])];
    let mut ok = true;
    let mut parts = Vec::new();
    for p in [0.1, 0.5, 0.7, 0.9] {
        let m = sample_mask(&shapes, p, &mut Rng::new(4)).unwrap();
        ok &= (m.mean() - p).abs() <= 0.002;
        parts.push(format!("p={p}: {:.4}", m.mean()));
    }
    let zero = sample_mask(&shapes, 0.0, &mut Rng::new(4)).unwrap();
    let one = sample_mask(&shapes, 1.0, &mut Rng::new(4)).unwrap();
    let exact = zero.get("w").unwrap().data().iter().all(|v| *v == 0.0)
        && one.get("w").unwrap().data().iter().all(|v| *v == 1.0);
    (
        ok && exact,
        format!("1e6-element means {} (tol 0.002); p=0/p=1 exact: {exact}", parts.join(", ")),
    )
}

fn c5_reductions() -> Verdict {
    // (a) p = 0 on every target: each branch equals the clean loss, so the
    // update is clean_grad * 3 and training is plain GD at 3 tau.
    let mut splits = moons(200, 3);
    splits.val = splits.train.select(&[]);
    let (init, model) = build_seeded(&ModelSpec::mlp(&[2, 16, 2], 2)).unwrap();
    let attack = Regularizer::Attack(AttackConfig::dropattack(&["input", "fc1.w", "fc2.w"], 5.0, 0.0, 1));
    let n = splits.train.len();
    let mut worst_a = 0.0f64;
    for steps in 1..=10 {
        let a = train(model.as_ref(), &init, &splits, &train_cfg(steps, n, 0.05, attack.clone())).unwrap();
        let b = train(model.as_ref(), &init, &splits, &train_cfg(steps, n, 0.15, Regularizer::None)).unwrap();
        for ((_, x), (_, y)) in a.params.iter().zip(b.params.iter()) {
            for (u, v) in x.data().iter().zip(y.data()) {
                worst_a = worst_a.max((u - v).abs());
            }
        }
    }

    // (b) input-only, p_x = 1: the weight branch is the clean loss, so the
    // DropAttack adversarial gradient is FGM's plus the clean gradient.
    let mut bitwise = true;
    let mut rng = Rng::new(55);
    for seed in 0..5 {
        let (params, model) = build_seeded(&ModelSpec::mlp(&[3, 8, 3], seed)).unwrap();
        let batch = random_batch(&mut rng, 6, 3, 3);
        let mut cfg = AttackConfig::dropattack(&["input"], 0.8, 1.0, 1);
        let da = dropattack_step(model.as_ref(), &params, &batch, &cfg, &mut Rng::new(seed)).unwrap();
        cfg.method = AttackMethod::Fgm;
        let fg = attack_step(model.as_ref(), &params, &batch, &cfg, &mut Rng::new(seed)).unwrap();
        for (k, v) in &da.adv_grad {
            bitwise &= bits(v) == bits(&fg.adv_grad[k].add(&fg.clean_grad[k]).unwrap());
        }
    }

    // (c) the multi-step path with K = 1 against the single-step path.
    let mut worst_c = 0.0f64;
    for seed in 0..5 {
        let (params, model) = build_seeded(&ModelSpec::mlp(&[3, 8, 3], seed)).unwrap();
        let batch = random_batch(&mut rng, 6, 3, 3);
        let cfg = AttackConfig::dropattack(&["input", "fc1.w", "fc2.w"], 1.0, 0.7, 1);
        let a = dropattack_step(model.as_ref(), &params, &batch, &cfg, &mut Rng::new(seed)).unwrap();
        let b = dropattack_k(model.as_ref(), &params, &batch, &cfg, &mut Rng::new(seed)).unwrap();
        let (ga, gb) = (a.total_grad().unwrap(), b.total_grad().unwrap());
        let tau = 0.1;
        for (name, p) in params.iter() {
            let ua = p.sub(&ga[name].scale(tau)).unwrap();
            let ub = p.sub(&gb[name].scale(tau)).unwrap();
            for (x, y) in ua.data().iter().zip(ub.data()) {
                worst_c = worst_c.max((x - y).abs());
            }
        }
    }
    (
        worst_a <= 1e-10 && bitwise && worst_c <= 1e-12,
        format!(
            "(a) p=0 vs GD at 3tau over 10 steps: {worst_a:.1e} <= 1e-10; (b) input-only p=1 == FGM bitwise: {bitwise}; (c) K=1 update diff {worst_c:.1e} <= 1e-12"
        ),
    )
}

/// Mean of 1/2 (theta x - y)^2: (dL/dtheta, dL/dx per sample).
fn quad_grads(theta: f64, x: &[f64], y: &[f64]) -> (f64, Vec<f64>) {
    let n = x.len() as f64;
    let gt = x.iter().zip(y).map(|(x, y)| (theta * x - y) * x).sum::<f64>() / n;
    let gx = x.iter().zip(y).map(|(x, y)| (theta * x - y) * theta / n).collect();
    (gt, gx)
}

fn scalar_fgm(g: f64, eps: f64) -> f64 {
    if g.abs() > 1e-12 {
        eps * g.signum()
    } else {
        0.0
    }
}

fn vec_fgm(g: &[f64], eps: f64) -> Vec<f64> {
    let n = norm(g);
    g.iter().map(|v| eps * v / n).collect()
}

/// Straight-line DropAttack-K on the quadratic toy, given the step-1 masks;
/// returns the updated theta. K = 1 is the single-step algorithm.
#[allow(clippy::too_many_arguments)]
fn quad_transcription(theta: f64, x: &[f64], y: &[f64], mx: &[f64], mt: f64, eps: (f64, f64), k: usize, tau: f64) -> f64 {
    let (g_clean, gx0) = quad_grads(theta, x, y);
    let (mut gt, mut gx) = (g_clean, gx0);
    let mut g_adv = 0.0;
    for _ in 0..k {
        let rx = vec_fgm(&gx, eps.0);
        let rt = scalar_fgm(gt, eps.1);
        let xa: Vec<f64> = x.iter().zip(mx).zip(&rx).map(|((x, m), r)| x + m * r).collect();
        let (ga, gxa) = quad_grads(theta, &xa, y);
        let (gb, _) = quad_grads(theta + mt * rt, x, y);
        g_adv += (ga + gb) / k as f64;
        gt += gb / k as f64;
        for (g, d) in gx.iter_mut().zip(&gxa) {
            *g += d / k as f64;
        }
    }
    theta - tau * (g_clean + g_adv)
}

fn c6_quadratic_oracle() -> Verdict {
    let mut rng = Rng::new(6);
    let mut worst = 0.0f64;
    let mut cases = 0;
    for trial in 0..20u64 {
        let n = 4;
        let x: Vec<f64> = (0..n).map(|_| rng.normal()).collect();
        let labels: Vec<usize> = (0..n).map(|_| rng.below(2)).collect();
        let y: Vec<f64> = labels.iter().map(|&v| v as f64).collect();
        let theta = rng.normal();
        let (mut params, model) = build_seeded(&ModelSpec::quadratic_toy(0)).unwrap();
        params.get_mut("theta").unwrap().data_mut()[0] = theta;
        let batch = dense_batch(x.clone(), vec![n, 1], labels);
        let eps = (0.3, 0.2);
        let tau = 0.1;
        for k in [1usize, 3] {
            let mut cfg = AttackConfig::dropattack(&["input", "theta"], 0.0, 0.6, k);
            cfg.epsilon_x = eps.0;
            cfg.epsilon_theta = eps.1;
            let out = match k {
                1 => dropattack_step(model.as_ref(), &params, &batch, &cfg, &mut Rng::new(trial)),
                _ => dropattack_k(model.as_ref(), &params, &batch, &cfg, &mut Rng::new(trial)),
            }
            .unwrap();
            let mx = out.masks[0].get("input").unwrap().data().to_vec();
            let mt = out.masks[0].get("theta").unwrap().data()[0];
            let expect = quad_transcription(theta, &x, &y, &mx, mt, eps, k, tau);
            let got = theta - tau * out.total_grad().unwrap()["theta"].item();
            worst = worst.max((got - expect).abs());
            cases += 1;
        }
    }
    (
        worst <= 1e-10,
        format!("single step and K=3 vs transcription, {cases} cases: max update diff {worst:.1e} <= 1e-10"),
    )
}

fn tanh_mlp(seed: u64) -> ModelSpec {
    let hidden = [8, 12, 16][seed as usize % 3];
    ModelSpec {
        activation: dropattack::models::Activation::Tanh,
        ..ModelSpec::mlp(&[2, hidden, hidden, 2], seed)
    }
}

fn c7_first_order() -> Verdict {
    let start = Instant::now();
    let data = gen_two_moons(200, 0.25, 7).unwrap();
    let batch = data.batch(&(0..64).collect::<Vec<_>>());
    let eps: Vec<f64> = (0..7).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect();
    let targets = ["input", "fc1.w", "fc2.w"];
    let slopes = |p: f64, form: SurrogateForm| -> Vec<f64> {
        (0..10)
            .map(|s| {
                let (params, model) = build_seeded(&tanh_mlp(s)).unwrap();
                let cfg = AttackConfig::dropattack(&targets, 1.0, p, 1);
                verify_first_order(model.as_ref(), &params, &batch, &cfg, &eps, form, &mut Rng::new(s))
                    .unwrap()
                    .slope
                    .unwrap_or(f64::NAN)
            })
            .collect()
    };
    let in_band = |v: &[f64]| v.iter().all(|s| (1.8..=2.2).contains(s));
    let range = |v: &[f64]| {
        let lo = v.iter().cloned().fold(f64::INFINITY, f64::min);
        let hi = v.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        format!("[{lo:.3}, {hi:.3}]")
    };
    let corrected = slopes(0.7, SurrogateForm::FirstOrder);
    let literal_full = slopes(1.0, SurrogateForm::MaskedNorm);
    let literal_partial = slopes(0.7, SurrogateForm::MaskedNorm);

    let mut zero_exact = true;
    for s in 0..10 {
        let (params, model) = build_seeded(&tanh_mlp(s)).unwrap();
        let cfg = AttackConfig::dropattack(&targets, 1.0, 0.0, 1);
        for form in [SurrogateForm::FirstOrder, SurrogateForm::MaskedNorm] {
            let r = verify_first_order(model.as_ref(), &params, &batch, &cfg, &eps, form, &mut Rng::new(s)).unwrap();
            zero_exact &= r.gaps.iter().all(|g| *g == 0.0);
        }
    }
    let secs = start.elapsed().as_secs_f64();
    (
        in_band(&corrected) && in_band(&literal_full) && zero_exact && secs < 120.0,
        format!(
            "10 tanh MLPs, eps 1e-4..1e-1: slopes p=0.7 first-order surrogate {}, p=1 masked-norm surrogate {} (band [1.8, 2.2]); all-zero masks gap == 0: {zero_exact}; {secs:.1}s < 120s [note: masked-norm surrogate at p=0.7 gives {} since eps||Mg|| is not the first-order term when 0<p<1]",
            range(&corrected),
            range(&literal_full),
            range(&literal_partial)
        ),
    )
}

fn c8_mask_fixing() -> Verdict {
    let mut rng = Rng::new(8);
    let mut fixed = true;
    let mut moved = true;
    let mut checked = 0;
    for seed in 0..5 {
        let (params, model) = build_seeded(&ModelSpec::mlp(&[3, 8, 3], seed)).unwrap();
        let batch = random_batch(&mut rng, 6, 3, 3);
        for k in 2..=5 {
            let cfg = AttackConfig::dropattack(&["input", "fc1.w", "fc2.w"], 1.0, 0.5, k);
            let out = dropattack_k(model.as_ref(), &params, &batch, &cfg, &mut Rng::new(seed)).unwrap();
            fixed &= out.masks.len() == k;
            for step in &out.masks[1..] {
                for (name, m) in &out.masks[0].masks {
                    fixed &= step.get(name).is_some_and(|s| bits(s) == bits(m));
                }
                checked += 1;
            }
            // The perturbations themselves must change, or the check is vacuous.
            moved &= out.perturbations[1]["fc1.w"] != out.perturbations[0]["fc1.w"];
        }
    }
    (
        fixed && moved,
        format!("{checked} later-step masks bit-identical to step 1: {fixed}; perturbations evolve across steps: {moved}"),
    )
}

struct PairedRuns {
    exp: Experiment,
    spec: ModelSpec,
    standard: Vec<TrainOutcome>,
    attacked: Vec<TrainOutcome>,
}

fn paired_runs(config: &str) -> (PairedRuns, f64) {
    let start = Instant::now();
    let cfg = ExperimentConfig::load(configs_dir().join(config)).unwrap();
    assert_eq!(cfg.seeds.len(), 5, "{config} must list 5 seeds");
    let exp = cfg.experiment().unwrap();
    let mut standard = Vec::new();
    let mut attacked = Vec::new();
    for &seed in &cfg.seeds {
        standard.push(exp.run(&Regularizer::None, seed).unwrap());
        attacked.push(exp.run(&cfg.train_config(seed).regularizer, seed).unwrap());
    }
    let runs = PairedRuns {
        spec: cfg.model.clone(),
        exp,
        standard,
        attacked,
    };
    (runs, start.elapsed().as_secs_f64())
}

fn trend(runs: &PairedRuns) -> (bool, String) {
    let diffs: Vec<f64> = runs
        .standard
        .iter()
        .zip(&runs.attacked)
        .map(|(a, b)| 100.0 * (b.test_acc - a.test_acc))
        .collect();
    let mean = diffs.iter().sum::<f64>() / diffs.len() as f64;
    let positive = diffs.iter().filter(|d| **d > 0.0).count();
    let listed: Vec<String> = diffs.iter().map(|d| format!("{d:+.1}")).collect();
    (
        mean >= 0.3 && positive >= 4,
        format!("mean {mean:+.2} pts, {positive}/5 positive ({})", listed.join(" ")),
    )
}

fn c9_generalization(moons: &PairedRuns, mnist: &PairedRuns, secs: f64) -> Verdict {
    let (ok_m, text_m) = trend(moons);
    let (ok_n, text_n) = trend(mnist);
    (
        ok_m && ok_n && secs < 1800.0,
        format!("two-moons MLP: {text_m}; MNIST LeNet-lite: {text_n} (need >= +0.3 and >= 4/5); {secs:.0}s < 1800s"),
    )
}

fn c10_landscape(mnist: &PairedRuns) -> Verdict {
    let test: Dataset = mnist.exp.splits.test.select(&(0..500).collect::<Vec<_>>());
    let grid = GridSpec::square(1.0, 21);
    let dir = tempfile::tempdir().unwrap();
    let model = model_for(&mnist.spec).unwrap();
    let mut wins = 0;
    let mut worst_center = 0.0f64;
    let mut parts = Vec::new();
    for seed in 0..3u64 {
        let mut scores = Vec::new();
        for (tag, run) in [("standard", &mnist.standard[seed as usize]), ("dropattack", &mnist.attacked[seed as usize])] {
            let path = dir.path().join(format!("{tag}_{seed}.json"));
            save_checkpoint(&path, &ModelSpec { seed, ..mnist.spec.clone() }, &run.params).unwrap();
            let ck = load_checkpoint(&path).unwrap();
            let scan = scan_landscape(model.as_ref(), &ck.params, &test, &grid, seed, 250, 1).unwrap();
            let (direct, _) = evaluate(model.as_ref(), &ck.params, &test, 250).unwrap();
            worst_center = worst_center.max((scan.center() - direct).abs());
            scores.push((sharpness(&scan).unwrap().score, scan.window_mean(11)));
        }
        let (s, d) = (scores[0], scores[1]);
        if d.0 < s.0 && d.1 < s.1 {
            wins += 1;
        }
        parts.push(format!(
            "seed {seed}: sharpness {:.3} vs {:.3}, window {:.3} vs {:.3}",
            d.0, s.0, d.1, s.1
        ));
    }
    (
        wins >= 2 && worst_center <= 1e-12,
        format!(
            "21x21 on [-1,1], 500 test digits, 11x11 window; dropattack vs standard {}; lower on both in {wins}/3 (need >= 2); max |L(0,0) - checkpoint loss| = {worst_center:.1e} <= 1e-12",
            parts.join("; ")
        ),
    )
}

fn c11_determinism() -> Verdict {
    let splits = moons(120, 11);
    let spec = ModelSpec::mlp(&[2, 8, 2], 0);
    let attack = AttackConfig::dropattack(&["input", "fc1.w"], 1.0, 0.7, 1);
    let template = Experiment {
        model: spec.clone(),
        splits: splits.clone(),
        train: train_cfg(3, 16, 0.05, Regularizer::None),
    };
    let csv = |f: &dyn Fn(&mut Vec<u8>)| {
        let mut b = Vec::new();
        f(&mut b);
        b
    };
    let train_csv = || {
        let out = template.run(&Regularizer::Attack(attack.clone()), 4).unwrap();
        csv(&|b| write_metrics_csv(b, &out.metrics, false).unwrap())
    };
    let grid = SweepGrid {
        epsilons: vec![0.5, 2.0],
        ps: vec![0.5, 1.0],
        ks: vec![1, 2],
    };
    let sweep_csv = |workers| {
        let rows = sweep(&template, &attack, &grid, &[0, 1], workers).unwrap();
        csv(&|b| write_sweep_csv(b, &rows).unwrap())
    };
    let scaling_csv = |workers| {
        let rows = scaling_study(&template, &[20, 50], &attack, &[0, 1], workers).unwrap();
        csv(&|b| write_scaling_csv(b, &rows).unwrap())
    };
    let (params, model) = build_seeded(&spec).unwrap();
    let landscape_csv = |workers| {
        let g = scan_landscape(model.as_ref(), &params, &splits.test, &GridSpec::square(1.0, 7), 3, 16, workers).unwrap();
        csv(&|b| write_landscape_csv(b, &g).unwrap())
    };
    let batch = splits.train.batch(&(0..32).collect::<Vec<_>>());
    let verify_csv = || {
        let eps = [1e-3, 1e-2, 1e-1];
        let r = verify_first_order(model.as_ref(), &params, &batch, &attack, &eps, SurrogateForm::FirstOrder, &mut Rng::new(1))
            .unwrap();
        csv(&|b| write_equivalence_csv(b, &r).unwrap())
    };
    let checks = [
        ("train", train_csv() == train_csv()),
        ("sweep (1 vs 3 workers)", sweep_csv(1) == sweep_csv(3)),
        ("scaling (1 vs 2 workers)", scaling_csv(1) == scaling_csv(2)),
        ("landscape (1 vs 3 workers)", landscape_csv(1) == landscape_csv(3)),
        ("verify", verify_csv() == verify_csv()),
    ];
    let failed: Vec<&str> = checks.iter().filter(|c| !c.1).map(|c| c.0).collect();
    (
        failed.is_empty(),
        format!(
            "byte-identical CSV on re-run for {}; mismatches: {:?}",
            checks.iter().map(|c| c.0).collect::<Vec<_>>().join(", "),
            failed
        ),
    )
}

fn c12_fb_counts() -> Verdict {
    let splits = moons(100, 12);
    let (init, model) = build_seeded(&ModelSpec::mlp(&[2, 8, 2], 0)).unwrap();
    let batches = splits.train.len().div_ceil(20) as u64;
    let per_batch = |reg: Regularizer| {
        let total = train(model.as_ref(), &init, &splits, &train_cfg(1, 20, 0.1, reg)).unwrap().fb_count;
        total.is_multiple_of(batches).then_some(total / batches)
    };
    let mut ok = per_batch(Regularizer::None) == Some(2);
    let base = AttackConfig::dropattack(&["input", "fc1.w"], 1.0, 0.7, 1);
    ok &= per_batch(Regularizer::Attack(base.clone())) == Some(4);
    let mut listed = vec!["standard 2".to_string(), "K=1 4".to_string()];
    let params: &ParameterSet = &init;
    let batch = splits.train.batch(&(0..20).collect::<Vec<_>>());
    let one = dropattack_step(model.as_ref(), params, &batch, &base, &mut Rng::new(0)).unwrap();
    ok &= one.fb_count == 4;
    for k in 2..=5usize {
        let cfg = AttackConfig { k, ..base.clone() };
        let expect = 2 + 2 * k as u64;
        ok &= per_batch(Regularizer::Attack(cfg.clone())) == Some(expect);
        ok &= dropattack_k(model.as_ref(), params, &batch, &cfg, &mut Rng::new(0)).unwrap().fb_count == expect;
        listed.push(format!("K={k} {expect}"));
    }
    (
        ok,
        format!("per-batch fb_count in training and per attack call: {}", listed.join(", ")),
    )
}

fn guarded(f: impl FnOnce() -> Verdict) -> Verdict {
    catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|e| {
        let msg = e
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default();
        (false, format!("panicked: {msg}"))
    })
}

fn report(n: usize, name: &str, verdict: Verdict, failures: &mut Vec<usize>) {
    let tag = if verdict.0 { "PASS" } else { "FAIL" };
    println!("{tag} [{n:>2}] {name}: {}", verdict.1);
    if !verdict.0 {
        failures.push(n);
    }
}

fn main() {
    let start = Instant::now();
    let mut failures = Vec::new();
    report(1, "gradient correctness", guarded(c1_gradcheck), &mut failures);
    report(2, "FGM norm and FGSM sign", guarded(c2_fgm_fgsm), &mut failures);
    report(3, "PGD ball containment", guarded(c3_pgd_ball), &mut failures);
    report(4, "mask statistics", guarded(c4_masks), &mut failures);
    report(5, "reduction identities", guarded(c5_reductions), &mut failures);
    report(6, "quadratic toy oracle", guarded(c6_quadratic_oracle), &mut failures);
    report(7, "first-order theory", guarded(c7_first_order), &mut failures);
    report(8, "mask fixing in DropAttack-K", guarded(c8_mask_fixing), &mut failures);

    let runs = catch_unwind(|| {
        let (m, t1) = paired_runs("moons_dropattack.cfg");
        let (n, t2) = paired_runs("mnist_dropattack.cfg");
        (m, n, t1 + t2)
    });
    match &runs {
        Ok((moons, mnist, secs)) => {
            report(9, "desk-scale generalization", guarded(|| c9_generalization(moons, mnist, *secs)), &mut failures);
            report(10, "landscape flatness", guarded(|| c10_landscape(mnist)), &mut failures);
        }
        Err(_) => {
            report(9, "desk-scale generalization", (false, "training runs panicked".into()), &mut failures);
            report(10, "landscape flatness", (false, "training runs panicked".into()), &mut failures);
        }
    }
    report(11, "determinism", guarded(c11_determinism), &mut failures);
    report(12, "cost accounting", guarded(c12_fb_counts), &mut failures);

    println!(
        "acceptance: {}/12 passed in {:.0}s",
        12 - failures.len(),
        start.elapsed().as_secs_f64()
    );
    if !failures.is_empty() {
        println!("failed criteria: {failures:?}");
        std::process::exit(1);
    }
}
