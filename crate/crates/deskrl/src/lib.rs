//! deskrl: a desk-scale reinforcement-learning harness for slow-thinking
//! sequence policies with verifiable rewards.
//!
//! The crate wires together a rule-based answer verifier, a dataset curation
//! pipeline, a family of reward functions (outcome, format, length, action),
//! rollout selection/masking filters, a tiny autoregressive softmax policy
//! with analytic gradients, a group-relative policy-gradient trainer with KL
//! annealing, reasoning-pattern analytics, and a sandboxed code-interpreter
//! pipeline. Everything runs end-to-end on one CPU core with full seed
//! determinism.

pub mod analysis;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod filters;
pub mod policy;
pub mod rewards;
pub mod seed;
pub mod toolchain;
pub mod trainer;
pub mod verifier;

pub use dataset::{CurationReport, Question};
pub use filters::GroupBatch;
pub use policy::{PolicyParams, Rollout, Vocab};
pub use rewards::{RewardBreakdown, RewardConfig, RewardMode};
pub use trainer::{KlSchedule, StepReport, TrainerConfig};
pub use verifier::{CanonicalAnswer, ExtractionResult, PromptTemplate};
