//! Finite-difference checks for every tape op and every architecture.
//!
//! Each case reduces its output to a scalar through a fixed random weighting
//! so that every output element contributes a distinct upstream gradient.
//! Inputs to `relu`, `abs` and `maxpool2d` are drawn away from their kinks;
//! the architecture cases, where kinks can be reached indirectly, rely on
//! the one-sided-difference filter of [`gradcheck_report`].

use std::collections::BTreeMap;

use super::{gradcheck_report, CheckReport};
use crate::autodiff::{Tape, Var};
use crate::data::{Batch, BatchInput};
use crate::error::Result;
use crate::models::{bind, build_seeded, run_forward_var, ForwardCtx, ModelSpec, Overlays};
use crate::rng::Rng;
use crate::tensor::Tensor;
use crate::train::{penalty, Regularizer};

pub const OP_NAMES: &[&str] = &[
    "matmul",
    "add",
    "add_bias",
    "mul",
    "scale",
    "sum",
    "abs",
    "relu",
    "tanh",
    "sigmoid",
    "conv2d",
    "maxpool2d",
    "embed_lookup",
    "reshape",
    "select_step",
    "dropout",
    "softmax_cross_entropy",
    "l1_penalty",
    "l2_penalty",
];

/// Worst error for one op or architecture across all seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct SuiteRow {
    pub name: String,
    pub max_error: f64,
    pub checked: usize,
    pub skipped: usize,
}

const KINK_TOL: f64 = 1e-4;
/// Coordinates checked per parameter tensor of an architecture.
const COORDS_PER_TENSOR: usize = 12;

fn randn(rng: &mut Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::from_parts(shape.to_vec(), (0..n).map(|_| rng.normal()).collect())
}

/// Gaussian values pushed at least `margin` away from zero.
fn away_from_zero(rng: &mut Rng, shape: &[usize], margin: f64) -> Tensor {
    randn(rng, shape).map(|v| if v.abs() < margin { v + margin * v.signum() } else { v })
}

/// Distinct values on a `gap`-spaced lattice in random order, so no pooling
/// window has a near tie.
fn spread(rng: &mut Rng, shape: &[usize], gap: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let perm = rng.permutation(n);
    Tensor::from_parts(
        shape.to_vec(),
        perm.iter().map(|&k| (k as f64 - n as f64 / 2.0) * gap).collect(),
    )
}

fn weighted<'t>(out: Var<'t>, w: &Tensor) -> Result<Var<'t>> {
    out.mul(&out.tape().constant(w.clone()))?.sum()
}

/// Pins a closure to the higher-ranked signature gradcheck expects.
fn scalar_fn<F>(f: F) -> F
where
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>,
{
    f
}

fn all(t: &Tensor) -> Vec<usize> {
    (0..t.len()).collect()
}

struct Acc(BTreeMap<String, CheckReport>);

impl Acc {
    fn add(&mut self, name: &str, r: CheckReport) {
        let e = self.0.entry(name.to_string()).or_insert(CheckReport {
            max_error: 0.0,
            checked: 0,
            skipped: 0,
        });
        e.max_error = e.max_error.max(r.max_error);
        e.checked += r.checked;
        e.skipped += r.skipped;
    }
}

fn op_cases(acc: &mut Acc, seed: u64, step: f64) -> Result<()> {
    let mut rng = Rng::new(seed);
    let r = &mut rng;
    let check = |f: &dyn for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>>, x: &Tensor| {
        gradcheck_report(f, x, step, &all(x), KINK_TOL)
    };

    let (a, b, w) = (randn(r, &[3, 4]), randn(r, &[4, 2]), randn(r, &[3, 2]));
    acc.add("matmul", check(&|t, x| weighted(x.matmul(&t.constant(b.clone()))?, &w), &a)?);
    acc.add("matmul", check(&|t, x| weighted(t.constant(a.clone()).matmul(&x)?, &w), &b)?);

    let (c, d, w) = (randn(r, &[2, 3]), randn(r, &[2, 3]), randn(r, &[2, 3]));
    acc.add("add", check(&|t, x| weighted(x.add(&t.constant(d.clone()))?, &w), &c)?);
    acc.add("mul", check(&|t, x| weighted(x.mul(&t.constant(d.clone()))?, &w), &c)?);
    acc.add("mul", check(&|t, x| weighted(t.constant(c.clone()).mul(&x)?, &w), &d)?);
    acc.add("scale", check(&|_, x| weighted(x.scale(-1.7)?, &w), &c)?);
    acc.add("sum", check(&|_, x| x.mul(&x)?.sum(), &c)?);
    acc.add("tanh", check(&|_, x| weighted(x.tanh()?, &w), &c)?);
    acc.add("sigmoid", check(&|_, x| weighted(x.sigmoid()?, &w), &c)?);
    acc.add("reshape", check(&|_, x| weighted(x.reshape(&[3, 2])?.tanh()?.reshape(&[2, 3])?, &w), &c)?);

    let bias = randn(r, &[3]);
    acc.add("add_bias", check(&|t, x| weighted(t.constant(c.clone()).add(&x)?, &w), &bias)?);
    acc.add("add_bias", check(&|t, x| weighted(x.add(&t.constant(bias.clone()))?, &w), &c)?);

    let k = away_from_zero(r, &[2, 3], 0.05);
    acc.add("abs", check(&|_, x| weighted(x.abs()?, &w), &k)?);
    acc.add("relu", check(&|_, x| weighted(x.relu()?, &w), &k)?);

    let (img, ker) = (randn(r, &[2, 2, 6, 6]), randn(r, &[3, 2, 3, 3]));
    for stride in [1, 2] {
        let out_side = (6 - 3) / stride + 1;
        let wc = randn(r, &[2, 3, out_side, out_side]);
        acc.add("conv2d", check(&|t, x| weighted(x.conv2d(&t.constant(ker.clone()), stride)?, &wc), &img)?);
        acc.add("conv2d", check(&|t, x| weighted(t.constant(img.clone()).conv2d(&x, stride)?, &wc), &ker)?);
    }

    let pool_in = spread(r, &[2, 2, 4, 4], 0.01);
    let wp = randn(r, &[2, 2, 2, 2]);
    acc.add("maxpool2d", check(&|_, x| weighted(x.maxpool2d(2)?, &wp), &pool_in)?);

    let table = randn(r, &[7, 3]);
    let idx: Vec<usize> = (0..8).map(|_| r.below(7)).collect();
    let we = randn(r, &[2, 4, 3]);
    acc.add("embed_lookup", check(&|_, x| weighted(x.embed_lookup(&idx, &[2, 4])?, &we), &table)?);

    let seq = randn(r, &[2, 4, 3]);
    let ws = randn(r, &[2, 3]);
    acc.add("select_step", check(&|_, x| weighted(x.select_step(2)?, &ws), &seq)?);

    let drop_seed = r.next_u64();
    acc.add(
        "dropout",
        check(&|_, x| weighted(x.dropout(0.3, &mut Rng::new(drop_seed), true)?, &w), &c)?,
    );

    let logits = randn(r, &[4, 3]);
    let labels: Vec<usize> = (0..4).map(|_| r.below(3)).collect();
    acc.add("softmax_cross_entropy", check(&|_, x| x.softmax_cross_entropy(&labels), &logits)?);

    let weights = away_from_zero(r, &[3, 2], 0.05);
    for (name, reg) in [
        ("l1_penalty", Regularizer::L1 { lambda: 0.3 }),
        ("l2_penalty", Regularizer::L2 { lambda: 0.3 }),
    ] {
        let f = scalar_fn(|t, x| {
            let params = crate::models::ParameterSet::new(vec![("fc.w".into(), x.value())])?;
            let bound = bind(t, &params, &Overlays::new(), false, false)?.with_effective("fc.w", x)?;
            Ok(penalty(&bound, &reg)?.expect("penalty term"))
        });
        acc.add(name, gradcheck_report(f, &weights, step, &all(&weights), KINK_TOL)?);
    }
    Ok(())
}

fn architectures(seed: u64) -> Vec<(&'static str, ModelSpec, Batch)> {
    let mut rng = Rng::new(seed ^ 0x5eed);
    let dense = |rng: &mut Rng, shape: &[usize]| BatchInput::Dense(randn(rng, shape));
    let mut tanh_mlp = ModelSpec::mlp(&[3, 5, 4, 3], seed);
    tanh_mlp.activation = crate::models::Activation::Tanh;
    vec![
        (
            "arch:mlp",
            ModelSpec::mlp(&[3, 5, 4, 3], seed),
            Batch {
                input: dense(&mut rng, &[4, 3]),
                labels: vec![0, 1, 2, 1],
            },
        ),
        (
            "arch:mlp_tanh",
            tanh_mlp,
            Batch {
                input: dense(&mut rng, &[4, 3]),
                labels: vec![2, 1, 0, 0],
            },
        ),
        (
            "arch:cnn_lenet_lite",
            ModelSpec::lenet_lite(seed),
            Batch {
                input: dense(&mut rng, &[2, 1, 28, 28]),
                labels: vec![3, 7],
            },
        ),
        (
            "arch:rnn_text",
            ModelSpec::rnn_text(12, 4, 5, 4, 3, seed),
            Batch {
                input: BatchInput::Tokens {
                    ids: (0..8).map(|_| rng.below(12)).collect(),
                    batch: 2,
                    length: 4,
                },
                labels: vec![0, 2],
            },
        ),
        (
            "arch:quadratic_toy",
            ModelSpec::quadratic_toy(seed),
            Batch {
                input: dense(&mut rng, &[3, 1]),
                labels: vec![0, 1, 1],
            },
        ),
    ]
}

fn coords_for(rng: &mut Rng, len: usize) -> Vec<usize> {
    if len <= COORDS_PER_TENSOR {
        return (0..len).collect();
    }
    let mut c = rng.permutation(len)[..COORDS_PER_TENSOR].to_vec();
    c.sort_unstable();
    c
}

fn arch_cases(acc: &mut Acc, seed: u64, step: f64) -> Result<()> {
    for (name, spec, batch) in architectures(seed) {
        let (params, model) = build_seeded(&spec)?;
        let model = model.as_ref();
        let mut pick = Rng::new(seed.wrapping_mul(31).wrapping_add(7));
        for (pname, value) in params.iter() {
            let f = scalar_fn(|t, x| {
                let bound = bind(t, &params, &Overlays::new(), false, false)?.with_effective(pname, x)?;
                let out = run_forward_var(model, t, &bound, &batch, None, &mut ForwardCtx::eval())?;
                model.loss(out.logits, &batch.labels)
            });
            let coords = coords_for(&mut pick, value.len());
            acc.add(name, gradcheck_report(f, value, step, &coords, KINK_TOL)?);
        }
        let repr_shape = crate::models::representation_shape(model, batch.len());
        let zero = Tensor::zeros(&repr_shape);
        let f = scalar_fn(|t, x| {
            let bound = bind(t, &params, &Overlays::new(), false, false)?;
            let out = run_forward_var(model, t, &bound, &batch, Some(x), &mut ForwardCtx::eval())?;
            model.loss(out.logits, &batch.labels)
        });
        let coords = coords_for(&mut pick, zero.len());
        acc.add(name, gradcheck_report(f, &zero, step, &coords, KINK_TOL)?);
    }
    Ok(())
}

/// Runs every op and architecture case for seeds `0..seeds`.
pub fn run_suite(seeds: u64, step: f64) -> Result<Vec<SuiteRow>> {
    let mut acc = Acc(BTreeMap::new());
    for seed in 0..seeds {
        op_cases(&mut acc, seed, step)?;
        arch_cases(&mut acc, seed, step)?;
    }
    let order: Vec<String> = OP_NAMES
        .iter()
        .map(|s| s.to_string())
        .chain(acc.0.keys().filter(|k| k.starts_with("arch:")).cloned())
        .collect();
    Ok(order
        .into_iter()
        .map(|name| {
            let r = acc.0[&name];
            SuiteRow {
                name,
                max_error: r.max_error,
                checked: r.checked,
                skipped: r.skipped,
            }
        })
        .collect())
}
