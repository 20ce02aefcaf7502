//! Masked input/weight adversarial training on a small reverse-mode tape.
//!
//! The crate bundles everything needed to train desk-scale classifiers with
//! DropAttack (Bernoulli-masked FGM perturbations on the input and on chosen
//! weight tensors, single- or K-step), the FGSM/FGM/PGD and L1/L2/dropout
//! baselines it is compared against, a first-order gradient-penalty check,
//! and a two-direction loss-landscape scanner.

pub mod analysis;
pub mod autodiff;
pub mod data;
pub mod error;
pub mod experiment;
pub mod gradcheck;
pub mod models;
pub mod perturb;
pub mod rng;
pub mod tensor;
pub mod train;

pub use autodiff::{Tape, Var};
pub use error::{Error, Result};
pub use rng::Rng;
pub use tensor::Tensor;
