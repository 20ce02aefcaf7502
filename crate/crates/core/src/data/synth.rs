//! Seeded synthetic datasets.

use serde::{Deserialize, Serialize};

use super::{Dataset, Inputs};
use crate::error::{Error, Result};
use crate::rng::{streams, Rng};

/// Two interleaved half circles: class 0 is `(cos t, sin t)` and class 1 is
/// `(1 - cos t, 0.5 - sin t)` for `t` evenly spaced on `[0, pi]`, each
/// coordinate jittered by `N(0, noise^2)`, then shuffled.
pub fn gen_two_moons(n: usize, noise: f64, seed: u64) -> Result<Dataset> {
    if n < 2 {
        return Err(Error::invalid("two-moons needs n >= 2"));
    }
    if !(noise >= 0.0) {
        return Err(Error::invalid("two-moons noise must be >= 0"));
    }
    let mut rng = Rng::with_stream(seed, streams::DATA);
    let n_out = n / 2;
    let n_in = n - n_out;
    let arc = |count: usize, i: usize| {
        if count == 1 {
            0.0
        } else {
            std::f64::consts::PI * i as f64 / (count - 1) as f64
        }
    };
    let mut points = Vec::with_capacity(n);
    for i in 0..n_out {
        let t = arc(n_out, i);
        points.push(([t.cos(), t.sin()], 0));
    }
    for i in 0..n_in {
        let t = arc(n_in, i);
        points.push(([1.0 - t.cos(), 0.5 - t.sin()], 1));
    }
    for p in &mut points {
        p.0[0] += noise * rng.normal();
        p.0[1] += noise * rng.normal();
    }
    let order = rng.permutation(n);
    let values = order.iter().flat_map(|&i| points[i].0).collect();
    let labels = order.iter().map(|&i| points[i].1).collect();
    Dataset::new(
        Inputs::Dense {
            sample_shape: vec![2],
            values,
        },
        labels,
        2,
        format!("two_moons(n={n}, noise={noise}, seed={seed})"),
    )
}

/// Labeling rule for [`gen_text_synthetic`]. Token 0 is padding, tokens
/// 1-4 form marker group A, 5-8 marker group B, and every other position
/// holds a background token drawn uniformly from `9..vocab`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextRule {
    /// An A marker and a B marker are each planted with probability 1/2;
    /// the label is 1 when exactly one of them is present.
    Xor,
    /// One A and one B marker are always planted; the label is 1 when the
    /// A marker comes first.
    Order,
}

const GROUP_A: std::ops::Range<usize> = 1..5;
const GROUP_B: std::ops::Range<usize> = 5..9;

pub fn gen_text_synthetic(
    vocab: usize,
    length: usize,
    n: usize,
    rule: TextRule,
    seed: u64,
) -> Result<Dataset> {
    if vocab <= GROUP_B.end || length < 2 || n < 2 {
        return Err(Error::invalid(format!(
            "synthetic text needs vocab > {}, length >= 2, n >= 2",
            GROUP_B.end
        )));
    }
    let mut rng = Rng::with_stream(seed, streams::DATA);
    let mut ids = Vec::with_capacity(n * length);
    let mut labels = Vec::with_capacity(n);
    for _ in 0..n {
        let mut seq: Vec<usize> = (0..length)
            .map(|_| GROUP_B.end + rng.below(vocab - GROUP_B.end))
            .collect();
        let pos_a = rng.below(length);
        let mut pos_b = rng.below(length - 1);
        if pos_b >= pos_a {
            pos_b += 1;
        }
        let tok_a = GROUP_A.start + rng.below(GROUP_A.len());
        let tok_b = GROUP_B.start + rng.below(GROUP_B.len());
        let label = match rule {
            TextRule::Xor => {
                let has_a = rng.bernoulli(0.5);
                let has_b = rng.bernoulli(0.5);
                if has_a {
                    seq[pos_a] = tok_a;
                }
                if has_b {
                    seq[pos_b] = tok_b;
                }
                usize::from(has_a != has_b)
            }
            TextRule::Order => {
                seq[pos_a] = tok_a;
                seq[pos_b] = tok_b;
                usize::from(pos_a < pos_b)
            }
        };
        ids.extend(seq);
        labels.push(label);
    }
    Dataset::new(
        Inputs::Tokens { length, ids },
        labels,
        2,
        format!("text(vocab={vocab}, length={length}, n={n}, rule={rule:?}, seed={seed})"),
    )
}
