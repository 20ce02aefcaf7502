//! Small classifiers with named parameters.
//!
//! Every architecture is split into an input representation stage and a
//! head. The representation is where input perturbations attach: the pixel
//! or feature batch for dense models, the embedding output for `rnn_text`.
//! [`forward_with_overlay`] binds the parameter set onto a tape, adds any
//! per-name overlays, and runs both stages.

mod checkpoint;
mod params;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use checkpoint::{load_checkpoint, save_checkpoint, Checkpoint};
pub use params::{is_bias, ParameterSet};

use crate::autodiff::{Tape, Var};
use crate::data::{Batch, BatchInput};
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

/// Reserved target name for the input representation.
pub const INPUT: &str = "input";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
    Tanh,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum InitScheme {
    /// `U(-1/sqrt(fan_in), 1/sqrt(fan_in))`.
    #[default]
    FanInUniform,
    Uniform { range: f64 },
    Gaussian { std: f64 },
}

/// Architecture description.
///
/// `layer_sizes` depends on the architecture:
/// * `mlp`: `[in, hidden..., out]`
/// * `cnn_lenet_lite`: `[conv1 channels, conv2 channels, fc hidden]`
/// * `rnn_text`: `[vocab, embed, hidden]`
/// * `quadratic_toy`: `[1]`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSpec {
    pub architecture: String,
    pub layer_sizes: Vec<usize>,
    pub input_shape: Vec<usize>,
    pub classes: usize,
    #[serde(default)]
    pub init: InitScheme,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub activation: Activation,
}

impl ModelSpec {
    pub fn mlp(sizes: &[usize], seed: u64) -> Self {
        Self {
            architecture: "mlp".into(),
            layer_sizes: sizes.to_vec(),
            input_shape: vec![sizes[0]],
            classes: *sizes.last().unwrap_or(&2),
            init: InitScheme::FanInUniform,
            seed,
            activation: Activation::Relu,
        }
    }

    /// conv(1->6, k5) - pool - conv(6->16, k5) - pool - fc(256->64->10) for
    /// 28x28 inputs.
    pub fn lenet_lite(seed: u64) -> Self {
        Self {
            architecture: "cnn_lenet_lite".into(),
            layer_sizes: vec![6, 16, 64],
            input_shape: vec![1, 28, 28],
            classes: 10,
            init: InitScheme::FanInUniform,
            seed,
            activation: Activation::Relu,
        }
    }

    pub fn rnn_text(vocab: usize, embed: usize, hidden: usize, length: usize, classes: usize, seed: u64) -> Self {
        Self {
            architecture: "rnn_text".into(),
            layer_sizes: vec![vocab, embed, hidden],
            input_shape: vec![length],
            classes,
            init: InitScheme::FanInUniform,
            seed,
            activation: Activation::Tanh,
        }
    }

    /// Scalar regression `out = theta * x` with loss `1/2 (theta x - y)^2`,
    /// the label read as the real target `y`.
    pub fn quadratic_toy(seed: u64) -> Self {
        Self {
            architecture: "quadratic_toy".into(),
            layer_sizes: vec![1],
            input_shape: vec![1],
            classes: 2,
            init: InitScheme::FanInUniform,
            seed,
            activation: Activation::Relu,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.classes < 2 {
            return Err(Error::invalid("model needs at least 2 classes"));
        }
        if self.layer_sizes.contains(&0) || self.input_shape.contains(&0) || self.input_shape.is_empty() {
            return Err(Error::invalid("model sizes must be positive"));
        }
        Ok(())
    }
}

/// Per-forward switches: train/eval mode and dropout.
pub struct ForwardCtx<'r> {
    pub training: bool,
    pub dropout: f64,
    pub rng: Option<&'r mut Rng>,
}

impl ForwardCtx<'_> {
    pub fn eval() -> ForwardCtx<'static> {
        ForwardCtx {
            training: false,
            dropout: 0.0,
            rng: None,
        }
    }

    fn dropout<'t>(&mut self, x: Var<'t>) -> Result<Var<'t>> {
        if !self.training || self.dropout == 0.0 {
            return Ok(x);
        }
        let rng = self
            .rng
            .as_deref_mut()
            .ok_or_else(|| Error::invalid("dropout in training mode needs an rng"))?;
        x.dropout(self.dropout, rng, true)
    }
}

/// Parameters bound onto a tape. `effective` is what the network sees
/// (`leaf + overlay` when an overlay is present).
pub struct Bound<'t> {
    entries: Vec<BoundParam<'t>>,
}

pub struct BoundParam<'t> {
    pub name: String,
    pub leaf: Var<'t>,
    pub overlay: Option<Var<'t>>,
    pub effective: Var<'t>,
}

impl<'t> Bound<'t> {
    pub fn get(&self, name: &str) -> Result<Var<'t>> {
        self.entries
            .iter()
            .find(|b| b.name == name)
            .map(|b| b.effective)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = &BoundParam<'t>> {
        self.entries.iter()
    }

    pub fn leaf(&self, name: &str) -> Option<Var<'t>> {
        self.entries.iter().find(|b| b.name == name).map(|b| b.leaf)
    }

    pub fn overlay(&self, name: &str) -> Option<Var<'t>> {
        self.entries
            .iter()
            .find(|b| b.name == name)
            .and_then(|b| b.overlay)
    }

    /// Makes the network see `var` in place of the named parameter.
    pub fn with_effective(mut self, name: &str, var: Var<'t>) -> Result<Self> {
        let entry = self
            .entries
            .iter_mut()
            .find(|b| b.name == name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        if entry.effective.shape() != var.shape() {
            return Err(Error::ShapeMismatch {
                op: "with_effective",
                lhs: entry.effective.shape(),
                rhs: var.shape(),
            });
        }
        entry.effective = var;
        Ok(self)
    }

    /// Same leaves with every overlay dropped, so a second branch on the
    /// tape can share parameter gradients with this one.
    pub fn without_overlays(&self) -> Bound<'t> {
        Bound {
            entries: self
                .entries
                .iter()
                .map(|b| BoundParam {
                    name: b.name.clone(),
                    leaf: b.leaf,
                    overlay: None,
                    effective: b.leaf,
                })
                .collect(),
        }
    }
}

/// name -> additive overlay. [`INPUT`] targets the input representation.
pub type Overlays = BTreeMap<String, Tensor>;

pub trait Model: Send + Sync {
    fn spec(&self) -> &ModelSpec;

    /// Parameter names and shapes in canonical order.
    fn layout(&self) -> Vec<(String, Vec<usize>)>;

    /// Fan-in used by the default initializer for a given tensor.
    fn fan_in(&self, name: &str, shape: &[usize]) -> usize;

    /// Input representation that input overlays are added to.
    fn represent<'t>(&self, tape: &'t Tape, params: &Bound<'t>, input: &BatchInput) -> Result<Var<'t>>;

    /// Logits from the (possibly perturbed) representation.
    fn head<'t>(&self, params: &Bound<'t>, repr: Var<'t>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t>>;

    /// Closed-form parameter count.
    fn expected_param_count(&self) -> usize;

    /// Mean batch loss of the head output. Softmax cross-entropy unless the
    /// architecture says otherwise.
    fn loss<'t>(&self, out: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        out.softmax_cross_entropy(labels)
    }

    fn init(&self, rng: &mut Rng) -> Result<ParameterSet> {
        let spec = self.spec();
        let mut entries = Vec::new();
        for (name, shape) in self.layout() {
            let n: usize = shape.iter().product();
            let data = match spec.init {
                InitScheme::FanInUniform => {
                    let bound = 1.0 / (self.fan_in(&name, &shape) as f64).sqrt();
                    (0..n).map(|_| rng.uniform_range(-bound, bound)).collect()
                }
                InitScheme::Uniform { range } => {
                    (0..n).map(|_| rng.uniform_range(-range, range)).collect()
                }
                InitScheme::Gaussian { std } => (0..n).map(|_| std * rng.normal()).collect(),
            };
            entries.push((name, Tensor::new(shape, data)?));
        }
        ParameterSet::new(entries)
    }
}

/// Instantiates the architecture named in `spec` and initializes its
/// parameters from `rng`.
pub fn build(spec: &ModelSpec, rng: &mut Rng) -> Result<(ParameterSet, Box<dyn Model>)> {
    let model = model_for(spec)?;
    let params = model.init(rng)?;
    Ok((params, model))
}

/// [`build`] with the initialization stream derived from `spec.seed`.
pub fn build_seeded(spec: &ModelSpec) -> Result<(ParameterSet, Box<dyn Model>)> {
    build(spec, &mut Rng::with_stream(spec.seed, streams::INIT))
}

/// The architecture without fresh parameters (e.g. for a loaded checkpoint).
pub fn model_for(spec: &ModelSpec) -> Result<Box<dyn Model>> {
    spec.validate()?;
    let model: Box<dyn Model> = match spec.architecture.as_str() {
        "mlp" => Box::new(Mlp::new(spec.clone())?),
        "cnn_lenet_lite" => Box::new(LenetLite::new(spec.clone())?),
        "rnn_text" => Box::new(RnnText::new(spec.clone())?),
        "quadratic_toy" => Box::new(QuadraticToy { spec: spec.clone() }),
        other => return Err(Error::UnknownArchitecture(other.to_string())),
    };
    Ok(model)
}

/// Binds `params` as tape leaves and adds overlays on top of them.
pub fn bind<'t>(
    tape: &'t Tape,
    params: &ParameterSet,
    overlays: &Overlays,
    params_require_grad: bool,
    overlays_require_grad: bool,
) -> Result<Bound<'t>> {
    for (name, ov) in overlays {
        if name == INPUT {
            continue;
        }
        let p = params.require(name)?;
        p.expect_same_shape(ov, "overlay")?;
    }
    let mut entries = Vec::with_capacity(params.len());
    for (name, value) in params.iter() {
        let leaf = tape.leaf(value.clone(), params_require_grad);
        let (overlay, effective) = match overlays.get(name) {
            Some(ov) => {
                let o = tape.leaf(ov.clone(), overlays_require_grad);
                (Some(o), leaf.add(&o)?)
            }
            None => (None, leaf),
        };
        entries.push(BoundParam {
            name: name.to_string(),
            leaf,
            overlay,
            effective,
        });
    }
    Ok(Bound { entries })
}

/// Result of [`run_forward`]: logits plus the input overlay leaf, if any.
pub struct Forward<'t> {
    pub logits: Var<'t>,
    pub input_overlay: Option<Var<'t>>,
}

/// Forward pass on an already-bound parameter set. An `INPUT` overlay is
/// added to the representation.
pub fn run_forward<'t>(
    model: &dyn Model,
    tape: &'t Tape,
    bound: &Bound<'t>,
    batch: &Batch,
    input_overlay: Option<(&Tensor, bool)>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Forward<'t>> {
    let ov = input_overlay.map(|(t, requires_grad)| tape.leaf(t.clone(), requires_grad));
    run_forward_var(model, tape, bound, batch, ov, ctx)
}

/// [`run_forward`] with the input overlay already on the tape.
pub fn run_forward_var<'t>(
    model: &dyn Model,
    tape: &'t Tape,
    bound: &Bound<'t>,
    batch: &Batch,
    input_overlay: Option<Var<'t>>,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Forward<'t>> {
    let mut repr = model.represent(tape, bound, &batch.input)?;
    if let Some(o) = input_overlay {
        let shape = repr.shape();
        if shape != o.shape() {
            return Err(Error::ShapeMismatch {
                op: "input overlay",
                lhs: shape,
                rhs: o.shape(),
            });
        }
        repr = repr.add(&o)?;
    }
    Ok(Forward {
        logits: model.head(bound, repr, ctx)?,
        input_overlay,
    })
}

/// Logits computed as if each named parameter were `value + overlay`. The
/// stored parameters are untouched; gradients reach them through the tape.
pub fn forward_with_overlay<'t>(
    model: &dyn Model,
    tape: &'t Tape,
    params: &ParameterSet,
    overlays: &Overlays,
    batch: &Batch,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t>> {
    let bound = bind(tape, params, overlays, true, false)?;
    let input = overlays.get(INPUT).map(|t| (t, false));
    Ok(run_forward(model, tape, &bound, batch, input, ctx)?.logits)
}

/// Plain forward pass.
pub fn forward<'t>(
    model: &dyn Model,
    tape: &'t Tape,
    params: &ParameterSet,
    batch: &Batch,
    ctx: &mut ForwardCtx<'_>,
) -> Result<Var<'t>> {
    forward_with_overlay(model, tape, params, &Overlays::new(), batch, ctx)
}

/// Shape of the input representation for a batch of `n` samples.
pub fn representation_shape(model: &dyn Model, n: usize) -> Vec<usize> {
    let spec = model.spec();
    let mut shape = vec![n];
    shape.extend(&spec.input_shape);
    if spec.architecture == "rnn_text" {
        shape.push(spec.layer_sizes[1]);
    }
    shape
}

/// Mean loss and accuracy over a dataset, in eval mode, batch by batch.
pub fn evaluate(
    model: &dyn Model,
    params: &ParameterSet,
    data: &crate::data::Dataset,
    batch_size: usize,
) -> Result<(f64, f64)> {
    if data.is_empty() {
        return Ok((0.0, 0.0));
    }
    let mut loss_sum = 0.0;
    let mut correct = 0usize;
    for batch in data.batches(batch_size) {
        let tape = Tape::new();
        let bound = bind(&tape, params, &Overlays::new(), false, false)?;
        let logits = run_forward(model, &tape, &bound, &batch, None, &mut ForwardCtx::eval())?.logits;
        let loss = model.loss(logits, &batch.labels)?.item();
        loss_sum += loss * batch.len() as f64;
        correct += count_correct(&logits.value(), &batch.labels);
    }
    let n = data.len() as f64;
    Ok((loss_sum / n, correct as f64 / n))
}

pub(crate) fn count_correct(logits: &Tensor, labels: &[usize]) -> usize {
    let c = logits.shape()[1];
    logits
        .data()
        .chunks(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count()
}

fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}

fn dense_input<'t>(tape: &'t Tape, input: &BatchInput, sample_shape: &[usize]) -> Result<Var<'t>> {
    match input {
        BatchInput::Dense(t) if t.shape()[1..] == *sample_shape => Ok(tape.constant(t.clone())),
        BatchInput::Dense(t) => Err(Error::ShapeMismatch {
            op: "model input",
            lhs: t.shape().to_vec(),
            rhs: sample_shape.to_vec(),
        }),
        BatchInput::Tokens { .. } => Err(Error::invalid("this model expects dense inputs, got tokens")),
    }
}

fn activate<'t>(x: Var<'t>, act: Activation) -> Result<Var<'t>> {
    match act {
        Activation::Relu => x.relu(),
        Activation::Tanh => x.tanh(),
    }
}

struct Mlp {
    spec: ModelSpec,
}

impl Mlp {
    fn new(spec: ModelSpec) -> Result<Self> {
        let sizes = &spec.layer_sizes;
        if sizes.len() < 2 || spec.input_shape != [sizes[0]] || *sizes.last().unwrap() != spec.classes {
            return Err(Error::invalid(format!(
                "mlp layer sizes {sizes:?} must run from input {:?} to {} classes",
                spec.input_shape, spec.classes
            )));
        }
        Ok(Self { spec })
    }
}

impl Model for Mlp {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        self.spec
            .layer_sizes
            .windows(2)
            .enumerate()
            .flat_map(|(i, w)| {
                [
                    (format!("fc{}.w", i + 1), vec![w[0], w[1]]),
                    (format!("fc{}.b", i + 1), vec![w[1]]),
                ]
            })
            .collect()
    }

    fn fan_in(&self, name: &str, _shape: &[usize]) -> usize {
        let layer: usize = name[2..name.find('.').unwrap()].parse().unwrap();
        self.spec.layer_sizes[layer - 1]
    }

    fn represent<'t>(&self, tape: &'t Tape, _params: &Bound<'t>, input: &BatchInput) -> Result<Var<'t>> {
        dense_input(tape, input, &self.spec.input_shape)
    }

    fn head<'t>(&self, params: &Bound<'t>, repr: Var<'t>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t>> {
        let layers = self.spec.layer_sizes.len() - 1;
        let mut h = repr;
        for i in 1..=layers {
            h = h
                .matmul(&params.get(&format!("fc{i}.w"))?)?
                .add(&params.get(&format!("fc{i}.b"))?)?;
            if i < layers {
                h = activate(h, self.spec.activation)?;
                h = ctx.dropout(h)?;
            }
        }
        Ok(h)
    }

    fn expected_param_count(&self) -> usize {
        self.spec.layer_sizes.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

struct LenetLite {
    spec: ModelSpec,
    fc_in: usize,
}

const LENET_KERNEL: usize = 5;

impl LenetLite {
    fn new(spec: ModelSpec) -> Result<Self> {
        if spec.layer_sizes.len() != 3 || spec.input_shape.len() != 3 {
            return Err(Error::invalid(
                "cnn_lenet_lite needs layer sizes [c1, c2, hidden] and input shape [C, H, W]",
            ));
        }
        let side = |s: usize| -> Option<usize> {
            let a = s.checked_sub(LENET_KERNEL - 1)? / 2;
            Some(a.checked_sub(LENET_KERNEL - 1)? / 2)
        };
        let (h, w) = match (side(spec.input_shape[1]), side(spec.input_shape[2])) {
            (Some(h), Some(w)) if h > 0 && w > 0 => (h, w),
            _ => return Err(Error::invalid("cnn_lenet_lite input is too small")),
        };
        let fc_in = spec.layer_sizes[1] * h * w;
        Ok(Self { spec, fc_in })
    }
}

impl Model for LenetLite {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let [c1, c2, hidden] = [self.spec.layer_sizes[0], self.spec.layer_sizes[1], self.spec.layer_sizes[2]];
        let cin = self.spec.input_shape[0];
        let k = LENET_KERNEL;
        vec![
            ("conv1.w".into(), vec![c1, cin, k, k]),
            ("conv1.b".into(), vec![c1]),
            ("conv2.w".into(), vec![c2, c1, k, k]),
            ("conv2.b".into(), vec![c2]),
            ("fc1.w".into(), vec![self.fc_in, hidden]),
            ("fc1.b".into(), vec![hidden]),
            ("fc2.w".into(), vec![hidden, self.spec.classes]),
            ("fc2.b".into(), vec![self.spec.classes]),
        ]
    }

    fn fan_in(&self, name: &str, _shape: &[usize]) -> usize {
        let k2 = LENET_KERNEL * LENET_KERNEL;
        match name {
            "conv1.w" | "conv1.b" => self.spec.input_shape[0] * k2,
            "conv2.w" | "conv2.b" => self.spec.layer_sizes[0] * k2,
            "fc1.w" | "fc1.b" => self.fc_in,
            _ => self.spec.layer_sizes[2],
        }
    }

    fn represent<'t>(&self, tape: &'t Tape, _params: &Bound<'t>, input: &BatchInput) -> Result<Var<'t>> {
        dense_input(tape, input, &self.spec.input_shape)
    }

    fn head<'t>(&self, params: &Bound<'t>, repr: Var<'t>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t>> {
        let act = self.spec.activation;
        let h = repr.conv2d(&params.get("conv1.w")?, 1)?.add(&params.get("conv1.b")?)?;
        let h = activate(h, act)?.maxpool2d(2)?;
        let h = h.conv2d(&params.get("conv2.w")?, 1)?.add(&params.get("conv2.b")?)?;
        let h = activate(h, act)?.maxpool2d(2)?.flatten()?;
        let h = h.matmul(&params.get("fc1.w")?)?.add(&params.get("fc1.b")?)?;
        let h = ctx.dropout(activate(h, act)?)?;
        h.matmul(&params.get("fc2.w")?)?.add(&params.get("fc2.b")?)
    }

    fn expected_param_count(&self) -> usize {
        let [c1, c2, hidden] = [self.spec.layer_sizes[0], self.spec.layer_sizes[1], self.spec.layer_sizes[2]];
        let k2 = LENET_KERNEL * LENET_KERNEL;
        let cin = self.spec.input_shape[0];
        (c1 * cin * k2 + c1) + (c2 * c1 * k2 + c2) + (self.fc_in * hidden + hidden)
            + (hidden * self.spec.classes + self.spec.classes)
    }
}

/// Embedding, a single tanh RNN layer with separate input-to-hidden and
/// hidden-to-hidden weights, and a linear classifier on the last state.
struct RnnText {
    spec: ModelSpec,
}

impl RnnText {
    fn new(spec: ModelSpec) -> Result<Self> {
        if spec.layer_sizes.len() != 3 || spec.input_shape.len() != 1 {
            return Err(Error::invalid(
                "rnn_text needs layer sizes [vocab, embed, hidden] and input shape [length]",
            ));
        }
        Ok(Self { spec })
    }

    fn dims(&self) -> (usize, usize, usize) {
        let s = &self.spec.layer_sizes;
        (s[0], s[1], s[2])
    }
}

impl Model for RnnText {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        let (vocab, embed, hidden) = self.dims();
        vec![
            ("embedding".into(), vec![vocab, embed]),
            ("rnn.ih.w".into(), vec![embed, hidden]),
            ("rnn.hh.w".into(), vec![hidden, hidden]),
            ("rnn.b".into(), vec![hidden]),
            ("fc.w".into(), vec![hidden, self.spec.classes]),
            ("fc.b".into(), vec![self.spec.classes]),
        ]
    }

    /// Embedding rows are selected by one-hot inputs, so their fan-in is 1.
    fn fan_in(&self, name: &str, _shape: &[usize]) -> usize {
        let (_, embed, hidden) = self.dims();
        match name {
            "embedding" => 1,
            "rnn.ih.w" => embed,
            _ => hidden,
        }
    }

    fn represent<'t>(&self, _tape: &'t Tape, params: &Bound<'t>, input: &BatchInput) -> Result<Var<'t>> {
        match input {
            BatchInput::Tokens { ids, batch, length } if *length == self.spec.input_shape[0] => {
                params.get("embedding")?.embed_lookup(ids, &[*batch, *length])
            }
            BatchInput::Tokens { length, .. } => Err(Error::ShapeMismatch {
                op: "model input",
                lhs: vec![*length],
                rhs: self.spec.input_shape.clone(),
            }),
            BatchInput::Dense(_) => Err(Error::invalid("rnn_text expects token inputs")),
        }
    }

    fn head<'t>(&self, params: &Bound<'t>, repr: Var<'t>, ctx: &mut ForwardCtx<'_>) -> Result<Var<'t>> {
        let w_ih = params.get("rnn.ih.w")?;
        let w_hh = params.get("rnn.hh.w")?;
        let b = params.get("rnn.b")?;
        let steps = self.spec.input_shape[0];
        let mut h = repr.select_step(0)?.matmul(&w_ih)?.add(&b)?.tanh()?;
        for t in 1..steps {
            let x = repr.select_step(t)?.matmul(&w_ih)?;
            h = x.add(&h.matmul(&w_hh)?)?.add(&b)?.tanh()?;
        }
        let h = ctx.dropout(h)?;
        h.matmul(&params.get("fc.w")?)?.add(&params.get("fc.b")?)
    }

    fn expected_param_count(&self) -> usize {
        let (vocab, embed, hidden) = self.dims();
        let c = self.spec.classes;
        vocab * embed + embed * hidden + hidden * hidden + hidden + hidden * c + c
    }
}

/// One-parameter least-squares model for closed-form checks.
struct QuadraticToy {
    spec: ModelSpec,
}

impl Model for QuadraticToy {
    fn spec(&self) -> &ModelSpec {
        &self.spec
    }

    fn layout(&self) -> Vec<(String, Vec<usize>)> {
        vec![("theta".into(), vec![1, 1])]
    }

    fn fan_in(&self, _name: &str, _shape: &[usize]) -> usize {
        1
    }

    fn represent<'t>(&self, tape: &'t Tape, _params: &Bound<'t>, input: &BatchInput) -> Result<Var<'t>> {
        dense_input(tape, input, &[1])
    }

    fn head<'t>(&self, params: &Bound<'t>, repr: Var<'t>, _ctx: &mut ForwardCtx<'_>) -> Result<Var<'t>> {
        repr.matmul(&params.get("theta")?)
    }

    fn expected_param_count(&self) -> usize {
        1
    }

    fn loss<'t>(&self, out: Var<'t>, labels: &[usize]) -> Result<Var<'t>> {
        let n = labels.len();
        let neg_y = Tensor::new(vec![n, 1], labels.iter().map(|&y| -(y as f64)).collect())?;
        let d = out.add(&out.tape().constant(neg_y))?;
        d.mul(&d)?.sum()?.scale(0.5 / n as f64)
    }
}
