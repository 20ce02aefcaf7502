//! Two-direction loss landscape around a trained parameter vector.
//!
//! Directions are Gaussian per tensor, then rescaled so each tensor slice of
//! a direction has the norm of the matching parameter tensor. Cell `(i, j)`
//! evaluates `theta + (delta_i * alpha + eta_j * beta)`. The center
//! coordinate is exactly zero, so the center cell reproduces the plain loss
//! bit for bit.

use std::io::Write;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::models::{evaluate, Model, ParameterSet};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSpec {
    /// Coordinates span `[-delta_max, delta_max]`.
    pub delta_max: f64,
    pub eta_max: f64,
    /// Odd, so the center is a grid point.
    pub delta_res: usize,
    pub eta_res: usize,
}

impl GridSpec {
    pub fn square(max: f64, res: usize) -> Self {
        Self {
            delta_max: max,
            eta_max: max,
            delta_res: res,
            eta_res: res,
        }
    }

    pub fn validate(&self) -> Result<()> {
        for (name, res) in [("delta_res", self.delta_res), ("eta_res", self.eta_res)] {
            if res % 2 == 0 {
                return Err(Error::Config(format!("landscape.{name}: must be odd, got {res}")));
            }
        }
        for (name, max) in [("delta_max", self.delta_max), ("eta_max", self.eta_max)] {
            if !(max.is_finite() && max >= 0.0) {
                return Err(Error::Config(format!("landscape.{name}: must be non-negative")));
            }
        }
        Ok(())
    }
}

/// `res` evenly spaced points on `[-max, max]` with an exact zero center.
pub fn coordinates(max: f64, res: usize) -> Vec<f64> {
    let mid = (res / 2) as f64;
    if res == 1 {
        return vec![0.0];
    }
    (0..res).map(|i| max * (i as f64 - mid) / mid).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Directions {
    pub alpha: Vec<(String, Tensor)>,
    pub beta: Vec<(String, Tensor)>,
}

impl Directions {
    /// Draws `alpha` then `beta` from the landscape stream of `seed`.
    pub fn draw(params: &ParameterSet, seed: u64) -> Self {
        let mut rng = Rng::with_stream(seed, streams::LANDSCAPE);
        let mut one = || -> Vec<(String, Tensor)> {
            params
                .iter()
                .map(|(name, t)| {
                    let raw = Tensor::from_parts(
                        t.shape().to_vec(),
                        (0..t.len()).map(|_| rng.normal()).collect(),
                    );
                    let n = raw.norm();
                    let scaled = if n > 0.0 { raw.scale(t.norm() / n) } else { raw };
                    (name.to_string(), scaled)
                })
                .collect()
        };
        let alpha = one();
        let beta = one();
        Self { alpha, beta }
    }

    pub fn swapped(&self) -> Self {
        Self {
            alpha: self.beta.clone(),
            beta: self.alpha.clone(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LandscapeGrid {
    pub deltas: Vec<f64>,
    pub etas: Vec<f64>,
    /// Row-major: `losses[i * etas.len() + j]` is `(deltas[i], etas[j])`.
    pub losses: Vec<f64>,
    /// Cells whose loss was not finite (stored as NaN).
    pub flagged: Vec<(usize, usize)>,
    pub seed: u64,
}

impl LandscapeGrid {
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.losses[i * self.etas.len() + j]
    }

    pub fn center(&self) -> f64 {
        self.at(self.deltas.len() / 2, self.etas.len() / 2)
    }

    /// Mean loss over the centered `size x size` window (flagged cells
    /// skipped).
    pub fn window_mean(&self, size: usize) -> f64 {
        let (ci, cj) = (self.deltas.len() / 2, self.etas.len() / 2);
        let h = size / 2;
        let mut vals = Vec::new();
        for i in ci.saturating_sub(h)..=(ci + h).min(self.deltas.len() - 1) {
            for j in cj.saturating_sub(h)..=(cj + h).min(self.etas.len() - 1) {
                let v = self.at(i, j);
                if v.is_finite() {
                    vals.push(v);
                }
            }
        }
        vals.iter().sum::<f64>() / vals.len() as f64
    }
}

/// `theta + (delta * alpha + eta * beta)`, tensor by tensor. Overflowing
/// cells are kept as-is and show up as flagged losses.
pub fn displaced(params: &ParameterSet, dirs: &Directions, delta: f64, eta: f64) -> Result<ParameterSet> {
    let entries = params
        .iter()
        .zip(dirs.alpha.iter().zip(&dirs.beta))
        .map(|((name, t), ((_, a), (_, b)))| {
            let data = t
                .data()
                .iter()
                .zip(a.data().iter().zip(b.data()))
                .map(|(p, (a, b))| p + (delta * a + eta * b))
                .collect();
            (name.to_string(), Tensor::from_parts(t.shape().to_vec(), data))
        })
        .collect();
    let mut out = ParameterSet::new(entries)?;
    out.set_attackable(params.attackable().iter().cloned())?;
    Ok(out)
}

/// Scans `data` loss over the grid. `theta` is never modified.
pub fn scan_landscape(
    model: &dyn Model,
    params: &ParameterSet,
    data: &Dataset,
    grid: &GridSpec,
    seed: u64,
    batch_size: usize,
    workers: usize,
) -> Result<LandscapeGrid> {
    scan_with_directions(model, params, data, grid, &Directions::draw(params, seed), seed, batch_size, workers)
}

#[allow(clippy::too_many_arguments)]
pub fn scan_with_directions(
    model: &dyn Model,
    params: &ParameterSet,
    data: &Dataset,
    grid: &GridSpec,
    dirs: &Directions,
    seed: u64,
    batch_size: usize,
    workers: usize,
) -> Result<LandscapeGrid> {
    grid.validate()?;
    let deltas = coordinates(grid.delta_max, grid.delta_res);
    let etas = coordinates(grid.eta_max, grid.eta_res);
    let cells: Vec<(usize, usize)> = (0..deltas.len())
        .flat_map(|i| (0..etas.len()).map(move |j| (i, j)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers.max(1))
        .build()
        .map_err(|e| Error::invalid(format!("worker pool: {e}")))?;
    let losses: Vec<Result<f64>> = pool.install(|| {
        cells
            .par_iter()
            .map(|&(i, j)| {
                let p = displaced(params, dirs, deltas[i], etas[j])?;
                match evaluate(model, &p, data, batch_size) {
                    Ok((loss, _)) if loss.is_finite() => Ok(loss),
                    Ok(_) | Err(Error::NonFinite { .. }) => Ok(f64::NAN),
                    Err(e) => Err(e),
                }
            })
            .collect()
    });
    let losses = losses.into_iter().collect::<Result<Vec<_>>>()?;
    let flagged = cells
        .iter()
        .zip(&losses)
        .filter(|(_, l)| l.is_nan())
        .map(|(c, _)| *c)
        .collect();
    Ok(LandscapeGrid {
        deltas,
        etas,
        losses,
        flagged,
        seed,
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sharpness {
    pub score: f64,
    /// Flagged cells left out of the mean.
    pub excluded: usize,
}

/// Mean of `max(L(delta, eta) - L(0, 0), 0)` over the unflagged cells.
pub fn sharpness(grid: &LandscapeGrid) -> Result<Sharpness> {
    let center = grid.center();
    if !center.is_finite() {
        return Err(Error::invalid("sharpness: the center cell is flagged"));
    }
    let finite: Vec<f64> = grid.losses.iter().copied().filter(|v| v.is_finite()).collect();
    let score = finite.iter().map(|v| (v - center).max(0.0)).sum::<f64>() / finite.len() as f64;
    Ok(Sharpness {
        score,
        excluded: grid.losses.len() - finite.len(),
    })
}

pub fn write_landscape_csv<W: Write>(out: &mut W, grid: &LandscapeGrid) -> Result<()> {
    let mut text = String::from("delta,eta,loss\n");
    for (i, d) in grid.deltas.iter().enumerate() {
        for (j, e) in grid.etas.iter().enumerate() {
            text += &format!("{d},{e},{}\n", grid.at(i, j));
        }
    }
    out.write_all(text.as_bytes())
        .map_err(|e| Error::io("<csv output>", e))
}

/// Companion metadata for a landscape CSV.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct LandscapeMeta {
    pub checkpoint: String,
    pub seed: u64,
    pub normalization: String,
    pub split: String,
    pub grid: GridSpec,
    pub center_loss: f64,
    pub sharpness: f64,
    pub flagged: Vec<(usize, usize)>,
}

impl LandscapeMeta {
    pub fn new(checkpoint: &str, split: &str, spec: &GridSpec, grid: &LandscapeGrid) -> Result<Self> {
        Ok(Self {
            checkpoint: checkpoint.to_string(),
            seed: grid.seed,
            normalization: "per_tensor".into(),
            split: split.to_string(),
            grid: spec.clone(),
            center_loss: grid.center(),
            sharpness: sharpness(grid)?.score,
            flagged: grid.flagged.clone(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn coordinates_have_exact_zero_center() {
        assert_eq!(coordinates(1.0, 5), vec![-1.0, -0.5, 0.0, 0.5, 1.0]);
        assert_eq!(coordinates(3.0, 1), vec![0.0]);
        assert!(GridSpec::square(1.0, 4).validate().is_err());
    }

    fn grid_from(f: impl Fn(f64, f64) -> f64, res: usize) -> LandscapeGrid {
        let c = coordinates(1.0, res);
        let losses = c.iter().flat_map(|&d| c.iter().map(move |&e| (d, e))).map(|(d, e)| f(d, e)).collect();
        LandscapeGrid {
            deltas: c.clone(),
            etas: c,
            losses,
            flagged: vec![],
            seed: 0,
        }
    }

    #[test]
    fn paraboloid_sharpness() {
        let g = grid_from(|d, e| d * d + e * e, 3);
        assert!((sharpness(&g).unwrap().score - 12.0 / 9.0).abs() < 1e-15);
        assert_eq!(sharpness(&grid_from(|_, _| 2.5, 5)).unwrap().score, 0.0);
    }

    #[test]
    fn flagged_cells_are_excluded() {
        let mut g = grid_from(|d, e| d * d + e * e, 3);
        g.losses[0] = f64::NAN;
        let s = sharpness(&g).unwrap();
        assert_eq!(s.excluded, 1);
        assert!((s.score - 10.0 / 8.0).abs() < 1e-15);
    }

    #[test]
    fn window_mean_of_center() {
        let g = grid_from(|d, e| d * d + e * e, 5);
        assert_eq!(g.window_mean(1), 0.0);
        assert!((g.window_mean(3) - 4.0 * 0.25 / 9.0 - 4.0 * 0.5 / 9.0).abs() < 1e-15);
    }
}
