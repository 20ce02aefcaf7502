use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::models::ParameterSet;
use crate::perturb::GradMap;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind", deny_unknown_fields)]
pub enum OptimizerConfig {
    Sgd,
    Adam { beta1: f64, beta2: f64, eps: f64 },
}

impl OptimizerConfig {
    pub fn adam() -> Self {
        OptimizerConfig::Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer with its running state.
#[derive(Debug, Clone)]
pub struct Optimizer {
    config: OptimizerConfig,
    lr: f64,
    step: u64,
    m: BTreeMap<String, Tensor>,
    v: BTreeMap<String, Tensor>,
}

impl Optimizer {
    pub fn new(config: OptimizerConfig, lr: f64) -> Self {
        Self {
            config,
            lr,
            step: 0,
            m: BTreeMap::new(),
            v: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update. Every parameter must have a gradient.
    pub fn step(&mut self, params: &mut ParameterSet, grads: &GradMap) -> Result<()> {
        self.step += 1;
        for (name, p) in params.iter_mut() {
            let g = grads
                .get(name)
                .ok_or_else(|| Error::invalid(format!("optimizer: no gradient for `{name}`")))?;
            p.expect_same_shape(g, "optimizer step")?;
            match self.config {
                OptimizerConfig::Sgd => p.axpy(-self.lr, g)?,
                OptimizerConfig::Adam { beta1, beta2, eps } => {
                    let m = self
                        .m
                        .entry(name.to_string())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let v = self
                        .v
                        .entry(name.to_string())
                        .or_insert_with(|| Tensor::zeros(g.shape()));
                    let c1 = 1.0 - beta1.powi(self.step as i32);
                    let c2 = 1.0 - beta2.powi(self.step as i32);
                    let (pd, md, vd) = (p.data_mut(), m.data_mut(), v.data_mut());
                    for (i, &gi) in g.data().iter().enumerate() {
                        md[i] = beta1 * md[i] + (1.0 - beta1) * gi;
                        vd[i] = beta2 * vd[i] + (1.0 - beta2) * gi * gi;
                        pd[i] -= self.lr * (md[i] / c1) / ((vd[i] / c2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
