//! Datasets, batching, splits, and the loaders/generators that fill them.

mod csv_io;
mod idx;
mod synth;

use serde::{Deserialize, Serialize};

pub use csv_io::{read_csv, write_csv};
pub use idx::{load_mnist_idx, write_idx_images, write_idx_labels, IMAGES_MAGIC, LABELS_MAGIC};
pub use synth::{gen_text_synthetic, gen_two_moons, TextRule};

use crate::error::{Error, Result};
use crate::rng::{streams, Rng};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SplitTag {
    Full,
    Train,
    Val,
    Test,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Inputs {
    /// Real-valued samples, each of `sample_shape`, stored back to back.
    Dense {
        sample_shape: Vec<usize>,
        values: Vec<f64>,
    },
    /// Fixed-length token index sequences.
    Tokens { length: usize, ids: Vec<usize> },
}

impl Inputs {
    fn sample_len(&self) -> usize {
        match self {
            Inputs::Dense { sample_shape, .. } => sample_shape.iter().product(),
            Inputs::Tokens { length, .. } => *length,
        }
    }

    fn total_len(&self) -> usize {
        match self {
            Inputs::Dense { values, .. } => values.len(),
            Inputs::Tokens { ids, .. } => ids.len(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub inputs: Inputs,
    pub labels: Vec<usize>,
    pub classes: usize,
    pub split: SplitTag,
    pub provenance: String,
}

/// One minibatch, ready for a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Batch {
    pub input: BatchInput,
    pub labels: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub enum BatchInput {
    /// `[N, ...sample_shape]`.
    Dense(Tensor),
    Tokens {
        ids: Vec<usize>,
        batch: usize,
        length: usize,
    },
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

impl Dataset {
    pub fn new(
        inputs: Inputs,
        labels: Vec<usize>,
        classes: usize,
        provenance: impl Into<String>,
    ) -> Result<Self> {
        let per = inputs.sample_len();
        if per == 0 {
            return Err(Error::invalid("dataset samples must be non-empty"));
        }
        if inputs.total_len() != per * labels.len() {
            return Err(Error::invalid(format!(
                "dataset has {} labels but {} input values of {per} per sample",
                labels.len(),
                inputs.total_len()
            )));
        }
        if let Some(&bad) = labels.iter().find(|&&y| y >= classes) {
            return Err(Error::invalid(format!(
                "label {bad} is not below the class count {classes}"
            )));
        }
        if let Inputs::Dense { values, .. } = &inputs {
            if values.iter().any(|v| !v.is_finite()) {
                return Err(Error::NonFinite { op: "dataset" });
            }
        }
        Ok(Self {
            inputs,
            labels,
            classes,
            split: SplitTag::Full,
            provenance: provenance.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// Input shape of one sample (`[length]` for token data).
    pub fn sample_shape(&self) -> Vec<usize> {
        match &self.inputs {
            Inputs::Dense { sample_shape, .. } => sample_shape.clone(),
            Inputs::Tokens { length, .. } => vec![*length],
        }
    }

    /// New dataset made of the listed rows, in the listed order.
    pub fn select(&self, rows: &[usize]) -> Dataset {
        let per = self.inputs.sample_len();
        let inputs = match &self.inputs {
            Inputs::Dense {
                sample_shape,
                values,
            } => Inputs::Dense {
                sample_shape: sample_shape.clone(),
                values: rows
                    .iter()
                    .flat_map(|&r| values[r * per..(r + 1) * per].iter().copied())
                    .collect(),
            },
            Inputs::Tokens { length, ids } => Inputs::Tokens {
                length: *length,
                ids: rows
                    .iter()
                    .flat_map(|&r| ids[r * per..(r + 1) * per].iter().copied())
                    .collect(),
            },
        };
        Dataset {
            inputs,
            labels: rows.iter().map(|&r| self.labels[r]).collect(),
            classes: self.classes,
            split: self.split,
            provenance: self.provenance.clone(),
        }
    }

    pub fn batch(&self, rows: &[usize]) -> Batch {
        let sub = self.select(rows);
        let n = rows.len();
        let input = match sub.inputs {
            Inputs::Dense {
                sample_shape,
                values,
            } => {
                let mut shape = vec![n];
                shape.extend(sample_shape);
                BatchInput::Dense(Tensor::from_parts(shape, values))
            }
            Inputs::Tokens { length, ids } => BatchInput::Tokens {
                ids,
                batch: n,
                length,
            },
        };
        Batch {
            input,
            labels: sub.labels,
        }
    }

    /// The whole dataset as one batch.
    pub fn full_batch(&self) -> Batch {
        self.batch(&(0..self.len()).collect::<Vec<_>>())
    }

    /// Consecutive batches of at most `size` rows in dataset order.
    pub fn batches(&self, size: usize) -> impl Iterator<Item = Batch> + '_ {
        let n = self.len();
        let size = size.max(1);
        (0..n.div_ceil(size)).map(move |b| {
            let rows: Vec<usize> = (b * size..((b + 1) * size).min(n)).collect();
            self.batch(&rows)
        })
    }

    fn with_split(mut self, tag: SplitTag) -> Self {
        self.split = tag;
        self
    }
}

/// Seeded partition into train/val/test. Sizes are `round(f * n)` for train
/// and val; test takes the remainder. Each part keeps the original row order.
pub fn split(
    data: &Dataset,
    fractions: [f64; 3],
    seed: u64,
) -> Result<(Dataset, Dataset, Dataset)> {
    if fractions.iter().any(|f| !(0.0..=1.0).contains(f))
        || (fractions.iter().sum::<f64>() - 1.0).abs() > 1e-9
    {
        return Err(Error::invalid(format!(
            "split fractions {fractions:?} must lie in [0, 1] and sum to 1"
        )));
    }
    let n = data.len();
    let n_train = (fractions[0] * n as f64).round() as usize;
    let n_val = ((fractions[1] * n as f64).round() as usize).min(n - n_train.min(n));
    if n_train > n {
        return Err(Error::invalid("split: train fraction exceeds the dataset"));
    }
    let perm = Rng::with_stream(seed, streams::SPLIT).permutation(n);
    let part = |range: std::ops::Range<usize>| {
        let mut rows = perm[range].to_vec();
        rows.sort_unstable();
        rows
    };
    let train = part(0..n_train);
    let val = part(n_train..n_train + n_val);
    let test = part(n_train + n_val..n);
    Ok((
        data.select(&train).with_split(SplitTag::Train),
        data.select(&val).with_split(SplitTag::Val),
        data.select(&test).with_split(SplitTag::Test),
    ))
}

/// `k` rows chosen as a prefix of a seeded shuffle, returned in original row
/// order. Subsamples with the same seed are nested.
pub fn subsample(data: &Dataset, k: usize, seed: u64) -> Result<Dataset> {
    if k > data.len() {
        return Err(Error::invalid(format!(
            "subsample size {k} exceeds the {} available rows",
            data.len()
        )));
    }
    let perm = Rng::with_stream(seed, streams::DATA).permutation(data.len());
    let mut rows = perm[..k].to_vec();
    rows.sort_unstable();
    Ok(data.select(&rows))
}
