use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::INPUT;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AttackMethod {
    Fgsm,
    Fgm,
    Pgd,
    /// Single ascent step when `k == 1`, the multi-step variant otherwise.
    Dropattack,
    /// Always the multi-step variant, even for `k == 1`.
    DropattackK,
}

impl AttackMethod {
    pub fn name(self) -> &'static str {
        match self {
            AttackMethod::Fgsm => "fgsm",
            AttackMethod::Fgm => "fgm",
            AttackMethod::Pgd => "pgd",
            AttackMethod::Dropattack => "dropattack",
            AttackMethod::DropattackK => "dropattack_k",
        }
    }
}

/// Attack hyperparameters. `epsilon_x`/`p_x` apply to the input target,
/// `epsilon_theta`/`p_theta` to every weight target. For FGSM, FGM and PGD
/// the mask probabilities are ignored; PGD starts at zero and takes `k` steps of size `pgd_step`, projecting
/// each target back into the L2 ball of `pgd_radius`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AttackConfig {
    pub method: AttackMethod,
    pub epsilon_x: f64,
    pub epsilon_theta: f64,
    pub p_x: f64,
    pub p_theta: f64,
    pub k: usize,
    pub targets: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pgd_radius: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub pgd_step: Option<f64>,
}

impl AttackConfig {
    /// DropAttack on `targets` with one shared epsilon and probability.
    pub fn dropattack(targets: &[&str], epsilon: f64, p: f64, k: usize) -> Self {
        Self {
            method: AttackMethod::Dropattack,
            epsilon_x: epsilon,
            epsilon_theta: epsilon,
            p_x: p,
            p_theta: p,
            k,
            targets: targets.iter().map(|s| s.to_string()).collect(),
            pgd_radius: None,
            pgd_step: None,
        }
    }

    /// Single-step `method` (FGSM or FGM) on the input only.
    pub fn input_baseline(method: AttackMethod, epsilon: f64) -> Self {
        Self {
            method,
            epsilon_x: epsilon,
            epsilon_theta: epsilon,
            p_x: 1.0,
            p_theta: 1.0,
            k: 1,
            targets: vec![INPUT.to_string()],
            pgd_radius: None,
            pgd_step: None,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |field: &str, why: &str| Err(Error::Config(format!("attack.{field}: {why}")));
        for (field, v) in [("epsilon_x", self.epsilon_x), ("epsilon_theta", self.epsilon_theta)] {
            if !(v.is_finite() && v >= 0.0) {
                return bad(field, "must be a finite, non-negative number");
            }
        }
        for (field, v) in [("p_x", self.p_x), ("p_theta", self.p_theta)] {
            if !(0.0..=1.0).contains(&v) {
                return bad(field, "must lie in [0, 1]");
            }
        }
        if self.k == 0 {
            return bad("k", "must be at least 1");
        }
        if self.targets.is_empty() {
            return Err(Error::NoAttackTargets);
        }
        if self.method == AttackMethod::Pgd {
            for (field, v) in [("pgd_radius", self.pgd_radius), ("pgd_step", self.pgd_step)] {
                match v {
                    Some(a) if a.is_finite() && a > 0.0 => {}
                    _ => return bad(field, "pgd needs a positive value"),
                }
            }
        }
        Ok(())
    }

    /// Whether the run uses the multi-step DropAttack update.
    pub fn is_multi_step(&self) -> bool {
        match self.method {
            AttackMethod::DropattackK => true,
            AttackMethod::Dropattack => self.k > 1,
            _ => false,
        }
    }
}
