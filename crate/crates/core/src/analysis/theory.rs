//! Numerical check that the masked two-branch adversarial objective agrees
//! with its first-order gradient-penalty expansion up to `O(eps^2)`.
//!
//! With `r = eps * g / ||g||` and a 0/1 mask `M`, the input branch expands as
//! `L(x + M r) = L + eps * <g, M g> / ||g|| + O(eps^2)`, and likewise for each
//! weight target. `<g, M g> = ||M g||^2`, which equals `||g|| * ||M g||` only
//! when `M g` is all of `g` or nothing. [`SurrogateForm::MaskedNorm`] is the
//! penalty written as `eps * ||M g||`; its gap is only second order for
//! masks of all ones or all zeros. [`SurrogateForm::FirstOrder`] is the exact
//! first-order term and is second order for any mask.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::data::Batch;
use crate::error::{Error, Result};
use crate::models::{forward_with_overlay, ForwardCtx, Model, Overlays, ParameterSet, INPUT};
use crate::perturb::{clean_pass, fgm, resolve_targets, sample_mask, AttackConfig, AttackMask};
use crate::rng::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SurrogateForm {
    /// `2L + sum eps * ||M g||^2 / ||g||`.
    #[default]
    FirstOrder,
    /// `2L + sum eps * ||M g||`.
    MaskedNorm,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EquivalenceReport {
    pub form: SurrogateForm,
    pub epsilons: Vec<f64>,
    pub gaps: Vec<f64>,
    pub surrogate: Vec<f64>,
    pub adversarial: Vec<f64>,
    /// Least-squares slope of `ln gap` against `ln eps`; `None` when some
    /// gap is exactly zero.
    pub slope: Option<f64>,
    pub mask: AttackMask,
}

/// Evaluates both sides for every `eps` in `epsilons`, with `eps` used for
/// every target of `cfg` and one mask draw (at `cfg.p_x`/`cfg.p_theta`)
/// shared by the whole grid.
pub fn verify_first_order(
    model: &dyn Model,
    params: &ParameterSet,
    batch: &Batch,
    cfg: &AttackConfig,
    epsilons: &[f64],
    form: SurrogateForm,
    rng: &mut Rng,
) -> Result<EquivalenceReport> {
    if epsilons.is_empty() || epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::invalid("verify_first_order: epsilons must be positive"));
    }
    if epsilons.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("verify_first_order: epsilons must be strictly increasing"));
    }
    let (input, weights) = resolve_targets(cfg, params)?;
    let clean = clean_pass(model, params, batch, input, &mut ForwardCtx::eval())?;
    let mut grads = Overlays::new();
    let mut shapes = Vec::new();
    if let Some(g) = &clean.input_grad {
        grads.insert(INPUT.to_string(), g.clone());
        shapes.push((INPUT.to_string(), g.shape().to_vec()));
    }
    for w in &weights {
        grads.insert(w.clone(), clean.grads[w].clone());
    }
    if grads.values().all(|g| g.norm() <= crate::perturb::DEGENERATE_NORM) {
        return Err(Error::invalid("verify_first_order: every target gradient is zero"));
    }
    let mut mask = sample_mask(&shapes, cfg.p_x, rng)?;
    let weight_shapes: Vec<_> = weights
        .iter()
        .map(|w| (w.clone(), grads[w].shape().to_vec()))
        .collect();
    mask.masks.extend(sample_mask(&weight_shapes, cfg.p_theta, rng)?.masks);

    // Per-target first-order coefficient (multiplies eps).
    let mut coeff = 0.0;
    for (name, g) in &grads {
        let mg = mask.apply(name, g)?;
        let n = g.norm();
        coeff += match form {
            SurrogateForm::MaskedNorm => mg.norm(),
            SurrogateForm::FirstOrder if n > crate::perturb::DEGENERATE_NORM => mg.dot(g) / n,
            SurrogateForm::FirstOrder => 0.0,
        };
    }

    let loss_at = |overlays: &Overlays| -> Result<f64> {
        let tape = crate::Tape::new();
        let logits = forward_with_overlay(model, &tape, params, overlays, batch, &mut ForwardCtx::eval())?;
        Ok(model.loss(logits, &batch.labels)?.item())
    };
    let mut report = EquivalenceReport {
        form,
        epsilons: epsilons.to_vec(),
        gaps: Vec::new(),
        surrogate: Vec::new(),
        adversarial: Vec::new(),
        slope: None,
        mask: mask.clone(),
    };
    for &eps in epsilons {
        let masked = |name: &str| mask.apply(name, &fgm(&grads[name], eps));
        let input_branch = match input {
            true => loss_at(&Overlays::from([(INPUT.to_string(), masked(INPUT)?)]))?,
            false => clean.loss,
        };
        let weight_branch = match weights.is_empty() {
            true => clean.loss,
            false => loss_at(
                &weights
                    .iter()
                    .map(|w| Ok((w.clone(), masked(w)?)))
                    .collect::<Result<Overlays>>()?,
            )?,
        };
        let adversarial = input_branch + weight_branch;
        let surrogate = 2.0 * clean.loss + eps * coeff;
        report.adversarial.push(adversarial);
        report.surrogate.push(surrogate);
        report.gaps.push((adversarial - surrogate).abs());
    }
    report.slope = log_log_slope(&report.epsilons, &report.gaps);
    Ok(report)
}

/// Least-squares slope of `ln y` on `ln x`; `None` if any `y` is not
/// positive.
pub fn log_log_slope(x: &[f64], y: &[f64]) -> Option<f64> {
    if x.len() < 2 || y.iter().any(|v| !(*v > 0.0)) {
        return None;
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let n = lx.len() as f64;
    let (mx, my) = (lx.iter().sum::<f64>() / n, ly.iter().sum::<f64>() / n);
    let sxy: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    Some(sxy / sxx)
}

pub fn write_equivalence_csv<W: Write>(out: &mut W, report: &EquivalenceReport) -> Result<()> {
    let mut text = String::from("epsilon,gap,surrogate,adversarial\n");
    for i in 0..report.epsilons.len() {
        text += &format!(
            "{},{},{},{}\n",
            report.epsilons[i], report.gaps[i], report.surrogate[i], report.adversarial[i]
        );
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<csv output>", e))
}

/// `1e-4, 10^-3.5, ..., 1e-1`.
pub fn half_decade_grid() -> Vec<f64> {
    (0..7).map(|i| 10f64.powf(-4.0 + 0.5 * i as f64)).collect()
}

