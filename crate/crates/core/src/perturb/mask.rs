use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

/// Per-target Bernoulli 0/1 masks; a 1 means the perturbation element is
/// applied.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AttackMask {
    pub masks: BTreeMap<String, Tensor>,
}

impl AttackMask {
    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.masks.get(name)
    }

    /// Elementwise `mask * r` for the named target.
    pub fn apply(&self, name: &str, r: &Tensor) -> Result<Tensor> {
        let m = self
            .masks
            .get(name)
            .ok_or_else(|| Error::UnknownParameter(name.to_string()))?;
        m.mul(r)
    }

    /// Fraction of ones across all targets.
    pub fn mean(&self) -> f64 {
        let (ones, total) = self.masks.values().fold((0.0, 0usize), |(s, n), t| (s + t.sum(), n + t.len()));
        if total == 0 {
            0.0
        } else {
            ones / total as f64
        }
    }
}

/// Draws one mask per `(name, shape)`, in the given order, with every
/// element independently 1 with probability `p`.
pub fn sample_mask(shapes: &[(String, Vec<usize>)], p: f64, rng: &mut Rng) -> Result<AttackMask> {
    let mut out = AttackMask::default();
    extend_mask(&mut out, shapes, p, rng)?;
    Ok(out)
}

pub(crate) fn extend_mask(
    mask: &mut AttackMask,
    shapes: &[(String, Vec<usize>)],
    p: f64,
    rng: &mut Rng,
) -> Result<()> {
    if !(0.0..=1.0).contains(&p) {
        return Err(Error::invalid(format!("attack probability {p} outside [0, 1]")));
    }
    for (name, shape) in shapes {
        let n: usize = shape.iter().product();
        let data = (0..n).map(|_| if rng.bernoulli(p) { 1.0 } else { 0.0 }).collect();
        mask.masks.insert(name.clone(), Tensor::new(shape.clone(), data)?);
    }
    Ok(())
}
