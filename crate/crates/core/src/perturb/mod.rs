//! Adversarial perturbations and the attack passes used during training.
//!
//! Every attack returns an [`AttackOutcome`]: the clean gradient, the
//! adversarial gradient, and the parameter update direction is their sum.
//! DropAttack evaluates the input branch and the weight branch as two
//! forward graphs on one tape and backpropagates their summed loss once.
//! When one side has no targets its branch is the clean loss, whose
//! gradient is already known, so it is added rather than recomputed.

mod attacks;
mod config;
mod mask;

use std::collections::BTreeMap;

pub use attacks::{fgm, fgsm, pgd_step, DEGENERATE_NORM};
pub use config::{AttackConfig, AttackMethod};
pub use mask::{sample_mask, AttackMask};

use crate::autodiff::{Tape, Var};
use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::{bind, representation_shape, run_forward, ForwardCtx, Model, Overlays, ParameterSet, INPUT};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Parameter name -> gradient.
pub type GradMap = BTreeMap<String, Tensor>;

#[derive(Debug, Clone)]
pub struct AttackOutcome {
    pub clean_loss: f64,
    /// Loss of the adversarial objective (both branches for DropAttack,
    /// averaged over steps for the multi-step variant).
    pub adv_loss: f64,
    pub clean_grad: GradMap,
    pub adv_grad: GradMap,
    /// Twice the number of forward-backward sweeps spent on this batch.
    pub fb_count: u64,
    /// Masks in effect at each ascent step (empty for unmasked attacks).
    pub masks: Vec<AttackMask>,
    /// Unmasked perturbation per target, one map per ascent step.
    pub perturbations: Vec<Overlays>,
}

impl AttackOutcome {
    /// `clean_grad + adv_grad`, the direction a training step descends.
    pub fn total_grad(&self) -> Result<GradMap> {
        self.clean_grad
            .iter()
            .map(|(k, g)| Ok((k.clone(), g.add(&self.adv_grad[k])?)))
            .collect()
    }
}

/// Loss, parameter gradients and (optionally) the gradient with respect to
/// the input representation for an unperturbed batch.
#[derive(Debug, Clone)]
pub struct CleanPass {
    pub loss: f64,
    pub grads: GradMap,
    pub input_grad: Option<Tensor>,
}

pub fn clean_pass(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    want_input_grad: bool,
    ctx: &mut ForwardCtx<'_>,
) -> Result<CleanPass> {
    let tape = Tape::new();
    let bound = bind(&tape, params, &Overlays::new(), true, false)?;
    let zero = want_input_grad.then(|| Tensor::zeros(&representation_shape(model, batch.len())));
    let fwd = run_forward(model, &tape, &bound, batch, zero.as_ref().map(|z| (z, true)), ctx)?;
    let loss = model.loss(fwd.logits, &batch.labels)?;
    tape.backward(loss)?;
    Ok(CleanPass {
        loss: loss.item(),
        grads: leaf_grads(params, |n| bound.leaf(n)),
        input_grad: fwd.input_overlay.map(|v| grad_or_zeros(v)),
    })
}

fn grad_or_zeros(v: Var<'_>) -> Tensor {
    v.grad().unwrap_or_else(|| Tensor::zeros(&v.shape()))
}

fn leaf_grads<'t>(params: &ParameterSet, leaf: impl Fn(&str) -> Option<Var<'t>>) -> GradMap {
    params
        .iter()
        .map(|(n, t)| {
            let g = leaf(n)
                .and_then(|v| v.grad())
                .unwrap_or_else(|| Tensor::zeros(t.shape()));
            (n.to_string(), g)
        })
        .collect()
}

#[derive(Clone, Copy, PartialEq, Eq)]
enum Branching {
    /// One forward with every overlay applied at once.
    Joint,
    /// Input overlay and weight overlays in separate forward graphs whose
    /// losses are summed.
    Split,
}

struct AdvPass {
    loss: f64,
    grads: GradMap,
    /// Gradient per overlay (including [`INPUT`]), when requested.
    overlay_grads: Overlays,
}

fn adversarial_pass(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    overlays: &Overlays,
    branching: Branching,
    want_overlay_grads: bool,
) -> Result<AdvPass> {
    let tape = Tape::new();
    let mut weights = overlays.clone();
    let input = weights.remove(INPUT);
    let bound = bind(&tape, params, &weights, true, want_overlay_grads)?;
    let mut eval = ForwardCtx::eval();
    let input_arg = input.as_ref().map(|t| (t, want_overlay_grads));
    let (loss, input_var) = match branching {
        Branching::Joint => {
            let fwd = run_forward(model, &tape, &bound, batch, input_arg, &mut eval)?;
            (model.loss(fwd.logits, &batch.labels)?, fwd.input_overlay)
        }
        Branching::Split => {
            let mut terms = Vec::new();
            let mut input_var = None;
            if input_arg.is_some() {
                let plain = bound.without_overlays();
                let fwd = run_forward(model, &tape, &plain, batch, input_arg, &mut eval)?;
                terms.push(model.loss(fwd.logits, &batch.labels)?);
                input_var = fwd.input_overlay;
            }
            if !weights.is_empty() {
                let fwd = run_forward(model, &tape, &bound, batch, None, &mut eval)?;
                terms.push(model.loss(fwd.logits, &batch.labels)?);
            }
            let mut it = terms.into_iter();
            let first = it.next().ok_or(Error::NoAttackTargets)?;
            (it.try_fold(first, |acc, t| acc.add(&t))?, input_var)
        }
    };
    tape.backward(loss)?;
    let mut overlay_grads = Overlays::new();
    if want_overlay_grads {
        if let Some(v) = input_var {
            overlay_grads.insert(INPUT.to_string(), grad_or_zeros(v));
        }
        for name in weights.keys() {
            let v = bound.overlay(name).expect("bound overlay");
            overlay_grads.insert(name.clone(), grad_or_zeros(v));
        }
    }
    Ok(AdvPass {
        loss: loss.item(),
        grads: leaf_grads(params, |n| bound.leaf(n)),
        overlay_grads,
    })
}

/// Checks `cfg.targets` against the parameter set. Returns whether the
/// input is targeted and the weight targets in parameter order.
pub fn resolve_targets(cfg: &AttackConfig, params: &ParameterSet) -> Result<(bool, Vec<String>)> {
    if cfg.targets.is_empty() {
        return Err(Error::NoAttackTargets);
    }
    let mut input = false;
    for t in &cfg.targets {
        if t == INPUT {
            input = true;
        } else if !params.contains(t) {
            return Err(Error::UnknownParameter(t.clone()));
        } else if !params.is_attackable(t) {
            return Err(Error::invalid(format!("parameter `{t}` is not marked attackable")));
        }
    }
    let weights = params
        .names()
        .filter(|n| cfg.targets.iter().any(|t| t == n))
        .map(str::to_string)
        .collect();
    Ok((input, weights))
}

/// Runs the configured attack on one batch.
pub fn attack_step(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    cfg.validate()?;
    if cfg.is_multi_step() {
        return dropattack_k(model, params, batch, cfg, rng);
    }
    match cfg.method {
        AttackMethod::Dropattack => dropattack_step(model, params, batch, cfg, rng),
        AttackMethod::Fgsm => single_step_baseline(model, params, batch, cfg, fgsm),
        AttackMethod::Fgm => single_step_baseline(model, params, batch, cfg, fgm),
        AttackMethod::Pgd => pgd_attack(model, params, batch, cfg),
        AttackMethod::DropattackK => unreachable!(),
    }
}

fn epsilon_for(cfg: &AttackConfig, target: &str) -> f64 {
    if target == INPUT {
        cfg.epsilon_x
    } else {
        cfg.epsilon_theta
    }
}

/// Target gradients from a clean pass, in the order input, then weights.
fn target_grads(clean: &CleanPass, input: bool, weights: &[String]) -> Overlays {
    let mut out = Overlays::new();
    if input {
        out.insert(INPUT.to_string(), clean.input_grad.clone().expect("input gradient"));
    }
    for w in weights {
        out.insert(w.clone(), clean.grads[w].clone());
    }
    out
}

fn directions(cfg: &AttackConfig, grads: &Overlays, f: fn(&Tensor, f64) -> Tensor) -> Overlays {
    grads
        .iter()
        .map(|(n, g)| (n.clone(), f(g, epsilon_for(cfg, n))))
        .collect()
}

fn draw_masks(
    cfg: &AttackConfig,
    model: &dyn Model,
    batch: &Batch,
    params: &ParameterSet,
    input: bool,
    weights: &[String],
    rng: &mut Rng,
) -> Result<AttackMask> {
    let mut m = AttackMask::default();
    if input {
        let shape = representation_shape(model, batch.len());
        mask::extend_mask(&mut m, &[(INPUT.to_string(), shape)], cfg.p_x, rng)?;
    }
    let shapes: Vec<(String, Vec<usize>)> = weights
        .iter()
        .map(|w| (w.clone(), params.require(w).map(|t| t.shape().to_vec())))
        .map(|(w, s)| s.map(|s| (w, s)))
        .collect::<Result<_>>()?;
    mask::extend_mask(&mut m, &shapes, cfg.p_theta, rng)?;
    Ok(m)
}

fn masked(mask: &AttackMask, r: &Overlays) -> Result<Overlays> {
    r.iter()
        .map(|(n, t)| Ok((n.clone(), mask.apply(n, t)?)))
        .collect()
}

fn add_into(acc: &mut GradMap, scale: f64, g: &GradMap) -> Result<()> {
    for (k, v) in acc.iter_mut() {
        v.axpy(scale, &g[k])?;
    }
    Ok(())
}

/// Adversarial gradient of the two-branch objective. A branch with no
/// targets equals the clean loss, so its gradient is the clean gradient.
fn complete_branches(pass: &AdvPass, clean: &CleanPass, input: bool, weights: &[String]) -> Result<(f64, GradMap)> {
    let mut grads = pass.grads.clone();
    let mut loss = pass.loss;
    for missing in [!input, weights.is_empty()] {
        if missing {
            add_into(&mut grads, 1.0, &clean.grads)?;
            loss += clean.loss;
        }
    }
    Ok((loss, grads))
}

/// One DropAttack update direction: a clean pass, FGM perturbations on
/// every target, fresh Bernoulli masks, and one pass over both branches.
pub fn dropattack_step(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let (input, weights) = resolve_targets(cfg, params)?;
    let clean = clean_pass(model, params, batch, input, &mut ForwardCtx::eval())?;
    let r = directions(cfg, &target_grads(&clean, input, &weights), fgm);
    let mask = draw_masks(cfg, model, batch, params, input, &weights, rng)?;
    let pass = adversarial_pass(model, params, batch, &masked(&mask, &r)?, Branching::Split, false)?;
    let (adv_loss, adv_grad) = complete_branches(&pass, &clean, input, &weights)?;
    Ok(AttackOutcome {
        clean_loss: clean.loss,
        adv_loss,
        clean_grad: clean.grads,
        adv_grad,
        fb_count: 4,
        masks: vec![mask],
        perturbations: vec![r],
    })
}

/// Multi-step DropAttack. Masks are drawn once and reused at every step.
/// Step `t` evaluates both branches at the masked perturbation from step
/// `t - 1`, adds `1/K` of the parameter gradient to the accumulator, and
/// moves each target gradient by `1/K` of the gradient with respect to its
/// overlay before taking the next FGM direction.
pub fn dropattack_k(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    cfg: &AttackConfig,
    rng: &mut Rng,
) -> Result<AttackOutcome> {
    let (input, weights) = resolve_targets(cfg, params)?;
    let k = cfg.k;
    let inv_k = 1.0 / k as f64;
    let clean = clean_pass(model, params, batch, input, &mut ForwardCtx::eval())?;
    let mut g = target_grads(&clean, input, &weights);
    let mut r = directions(cfg, &g, fgm);
    let mask = draw_masks(cfg, model, batch, params, input, &weights, rng)?;

    let mut acc: GradMap = clean.grads.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
    let mut adv_loss = 0.0;
    let mut masks = Vec::with_capacity(k);
    let mut perturbations = Vec::with_capacity(k);
    for _ in 0..k {
        let pass = adversarial_pass(model, params, batch, &masked(&mask, &r)?, Branching::Split, true)?;
        let (loss, grads) = complete_branches(&pass, &clean, input, &weights)?;
        add_into(&mut acc, inv_k, &grads)?;
        adv_loss += inv_k * loss;
        masks.push(mask.clone());
        perturbations.push(r);
        for (name, gt) in g.iter_mut() {
            gt.axpy(inv_k, &pass.overlay_grads[name])?;
        }
        r = directions(cfg, &g, fgm);
    }
    Ok(AttackOutcome {
        clean_loss: clean.loss,
        adv_loss,
        clean_grad: clean.grads,
        adv_grad: acc,
        fb_count: 2 + 2 * k as u64,
        masks,
        perturbations,
    })
}

/// FGSM or FGM: every target perturbed at once, one adversarial pass.
fn single_step_baseline(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    cfg: &AttackConfig,
    f: fn(&Tensor, f64) -> Tensor,
) -> Result<AttackOutcome> {
    let (input, weights) = resolve_targets(cfg, params)?;
    let clean = clean_pass(model, params, batch, input, &mut ForwardCtx::eval())?;
    let r = directions(cfg, &target_grads(&clean, input, &weights), f);
    let pass = adversarial_pass(model, params, batch, &r, Branching::Joint, false)?;
    Ok(AttackOutcome {
        clean_loss: clean.loss,
        adv_loss: pass.loss,
        clean_grad: clean.grads,
        adv_grad: pass.grads,
        fb_count: 4,
        masks: Vec::new(),
        perturbations: vec![r],
    })
}

/// `k` projected ascent steps from zero inside each target's radius ball;
/// the adversarial gradient is taken at the last iterate.
fn pgd_attack(model: &dyn Model, params: &ParameterSet, batch: &Batch, cfg: &AttackConfig) -> Result<AttackOutcome> {
    let (input, weights) = resolve_targets(cfg, params)?;
    let alpha = cfg.pgd_step.expect("validated");
    let radius = cfg.pgd_radius.expect("validated");
    let clean = clean_pass(model, params, batch, input, &mut ForwardCtx::eval())?;
    let mut g = target_grads(&clean, input, &weights);
    let mut r: Overlays = g.iter().map(|(n, t)| (n.clone(), Tensor::zeros(t.shape()))).collect();
    let mut perturbations = Vec::with_capacity(cfg.k);
    let mut last = None;
    for _ in 0..cfg.k {
        r = r
            .iter()
            .map(|(n, x)| {
                let origin = Tensor::zeros(x.shape());
                (n.clone(), pgd_step(x, &g[n], alpha, &origin, radius))
            })
            .collect();
        let pass = adversarial_pass(model, params, batch, &r, Branching::Joint, true)?;
        g = pass.overlay_grads.clone();
        perturbations.push(r.clone());
        last = Some(pass);
    }
    let last = last.expect("k >= 1");
    Ok(AttackOutcome {
        clean_loss: clean.loss,
        adv_loss: last.loss,
        clean_grad: clean.grads,
        adv_grad: last.grads,
        fb_count: 2 + 2 * cfg.k as u64,
        masks: Vec::new(),
        perturbations,
    })
}
