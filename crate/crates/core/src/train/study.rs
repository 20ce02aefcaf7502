//! Grid sweeps and training-set-size studies over replicate seeds.
//!
//! Runs fan out to a rayon pool. Results are collected by job index, so the
//! tables do not depend on the worker count or completion order.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{train, Regularizer, Splits, TrainConfig, TrainOutcome};
use crate::data::{subsample, Dataset};
use crate::error::{Error, Result};
use crate::models::{build_seeded, ModelSpec};
use crate::perturb::{AttackConfig, AttackMethod};

/// Everything needed to train one replicate, short of the seed.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub model: ModelSpec,
    pub splits: Splits,
    pub train: TrainConfig,
}

impl Experiment {
    /// One training run with `seed` driving both initialization and the
    /// training streams.
    pub fn run(&self, regularizer: &Regularizer, seed: u64) -> Result<TrainOutcome> {
        self.run_on(&self.splits.train, regularizer, seed)
    }

    fn run_on(&self, train_set: &Dataset, regularizer: &Regularizer, seed: u64) -> Result<TrainOutcome> {
        let mut spec = self.model.clone();
        spec.seed = seed;
        let (params, model) = build_seeded(&spec)?;
        let cfg = TrainConfig {
            regularizer: regularizer.clone(),
            seed,
            ..self.train.clone()
        };
        let splits = Splits {
            train: train_set.clone(),
            val: self.splits.val.clone(),
            test: self.splits.test.clone(),
        };
        train(model.as_ref(), &params, &splits, &cfg)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SweepGrid {
    pub epsilons: Vec<f64>,
    pub ps: Vec<f64>,
    pub ks: Vec<usize>,
}

impl SweepGrid {
    /// Cells in epsilon-major, then p, then K order.
    pub fn cells(&self) -> Vec<(f64, f64, usize)> {
        let mut out = Vec::new();
        for &e in &self.epsilons {
            for &p in &self.ps {
                for &k in &self.ks {
                    out.push((e, p, k));
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub epsilon: f64,
    pub p: f64,
    pub k: usize,
    pub seed_count: usize,
    pub mean_test_acc: f64,
    /// Sample standard deviation; 0 for a single seed.
    pub std_test_acc: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScalingRow {
    pub size: usize,
    pub seed_count: usize,
    pub standard_acc: f64,
    pub dropattack_acc: f64,
    /// `dropattack_acc - standard_acc`.
    pub improvement: f64,
}

fn pool(workers: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

/// DropAttack over every grid cell, with `epsilon` and `p` shared by the
/// input and weight targets. `K = 1` cells use the single-step update.
pub fn sweep(
    exp: &Experiment,
    base: &AttackConfig,
    grid: &SweepGrid,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<SweepRow>> {
    let cells = grid.cells();
    if cells.is_empty() || seeds.is_empty() {
        return Err(Error::invalid("sweep needs a non-empty grid and at least one seed"));
    }
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| seeds.iter().map(move |&s| (c, s)))
        .collect();
    let accs: Vec<Result<f64>> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(c, seed)| {
                let (e, p, k) = cells[c];
                let attack = AttackConfig {
                    method: if k == 1 { AttackMethod::Dropattack } else { AttackMethod::DropattackK },
                    epsilon_x: e,
                    epsilon_theta: e,
                    p_x: p,
                    p_theta: p,
                    k,
                    ..base.clone()
                };
                Ok(exp.run(&Regularizer::Attack(attack), seed)?.test_acc)
            })
            .collect()
    });
    let accs = accs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(cells
        .iter()
        .zip(accs.chunks(seeds.len()))
        .map(|(&(epsilon, p, k), a)| {
            let (mean_test_acc, std_test_acc) = mean_std(a);
            SweepRow {
                epsilon,
                p,
                k,
                seed_count: a.len(),
                mean_test_acc,
                std_test_acc,
            }
        })
        .collect())
}

/// Standard versus attack training on nested training subsets of each size.
pub fn scaling_study(
    exp: &Experiment,
    sizes: &[usize],
    attack: &AttackConfig,
    seeds: &[u64],
    workers: usize,
) -> Result<Vec<ScalingRow>> {
    let pool_size = exp.splits.train.len();
    if let Some(&s) = sizes.iter().find(|&&s| s > pool_size) {
        return Err(Error::invalid(format!(
            "scaling size {s} exceeds the {pool_size}-sample training pool"
        )));
    }
    if seeds.is_empty() {
        return Err(Error::invalid("scaling study needs at least one seed"));
    }
    let regs = [Regularizer::None, Regularizer::Attack(attack.clone())];
    let jobs: Vec<(usize, u64, usize)> = (0..sizes.len())
        .flat_map(|i| seeds.iter().flat_map(move |&s| (0..2).map(move |r| (i, s, r))))
        .collect();
    let accs: Vec<Result<f64>> = pool(workers)?.install(|| {
        jobs.par_iter()
            .map(|&(i, seed, r)| {
                let sub = subsample(&exp.splits.train, sizes[i], seed)?;
                Ok(exp.run_on(&sub, &regs[r], seed)?.test_acc)
            })
            .collect()
    });
    let accs = accs.into_iter().collect::<Result<Vec<_>>>()?;
    Ok(sizes
        .iter()
        .zip(accs.chunks(2 * seeds.len()))
        .map(|(&size, a)| {
            let std: Vec<f64> = a.iter().step_by(2).copied().collect();
            let da: Vec<f64> = a.iter().skip(1).step_by(2).copied().collect();
            let (standard_acc, _) = mean_std(&std);
            let (dropattack_acc, _) = mean_std(&da);
            ScalingRow {
                size,
                seed_count: seeds.len(),
                standard_acc,
                dropattack_acc,
                improvement: dropattack_acc - standard_acc,
            }
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_grid_has_49_cells() {
        let g = SweepGrid {
            epsilons: vec![0.01, 0.1, 1.0, 3.0, 5.0, 7.0, 9.0],
            ps: vec![0.0, 0.1, 0.3, 0.5, 0.7, 0.9, 1.0],
            ks: vec![1],
        };
        assert_eq!(g.cells().len(), 49);
    }

    #[test]
    fn sample_std() {
        assert_eq!(mean_std(&[0.5]), (0.5, 0.0));
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!(m, 2.0);
        assert!((s - 1.0).abs() < 1e-15);
    }
}
