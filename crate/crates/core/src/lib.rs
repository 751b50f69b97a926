//! Self-critical n-step training for conditional sequence decoders.
//!
//! The crate is organised bottom-up:
//!
//! - [`metrics`]: CIDEr and BLEU over integer token sequences; CIDEr doubles as the reward.
//! - [`corpus`]: vocabulary, synthetic captioning tasks and COCO-style caption ingestion.
//! - [`tapegrad`]: a small reverse-mode autodiff tape, parameter sets, Adam and checkpoints.
//! - [`policy`]: an LSTM decoder conditioned on a context vector, with sampling and greedy decoding.
//! - [`rlcore`]: rollout-based state-action value estimates, n-step reformulated advantages and
//!   the policy-gradient surrogate.
//! - [`trainer`]: cross-entropy pretraining, RL fine-tuning and evaluation.
//!
//! Batch work (sampling, rollouts, per-item gradients) goes through [`par`], which uses rayon when
//! the `parallel` feature is enabled and a plain loop otherwise. Results are bit-identical in both
//! modes because reductions always run in item order.

pub mod corpus;
pub mod error;
pub mod metrics;
pub mod par;
pub mod policy;
pub mod rlcore;
pub mod seed;
pub mod table;
pub mod tapegrad;
pub mod trainer;

pub use error::{Error, Result};
