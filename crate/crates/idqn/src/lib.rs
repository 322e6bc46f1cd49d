//! Interpretable deep Q-network with a key-value memory head, trained and
//! probed on a deterministic pellet-collection gridworld.
//!
//! The crate is organized bottom-up:
//!
//! * [`tensor`] / [`autodiff`] — dense f64 tensors and a tape-based
//!   reverse-mode engine with exactly the primitives the model needs.
//! * [`env`] — the pellet gridworld: pure state transitions, block renderer,
//!   frame stacking, layout files, and adversarial state edits.
//! * [`model`] — the Q-network: conv encoder, per-action key-value memory
//!   read out by scaled-dot attention, deconv decoder, and
//!   uncertainty-directed action selection.
//! * [`loss`] — Bellman, distributional projection + cross-entropy,
//!   reconstruction, and key-diversity terms combined into one total.
//! * [`replay`] / [`optim`] / [`trainer`] — ring replay buffer, Adam,
//!   target-network training loop, metrics, checkpoints.
//! * [`interpret`] — key inversion galleries, attention maps, perturbation
//!   saliency, the key/policy agreement metric, embedding exports, and
//!   adversarial probes.
//! * [`config`] / [`cli`] — run configuration and the command-line surface.
//!
//! Everything is deterministic given a seed: two runs with identical inputs
//! produce byte-identical artifacts.

pub mod autodiff;
pub mod checkpoint;
pub mod config;
pub mod env;
pub mod error;
pub mod interpret;
pub mod loss;
pub mod model;
pub mod optim;
pub mod replay;
pub mod trainer;
pub mod pgm;
pub mod rng;
pub mod tensor;

pub mod cli;

pub use autodiff::{clip_gradients_by_global_norm, grad_check, Parameter, Tape, Var};
pub use error::{Error, Result};
pub use tensor::Tensor;
