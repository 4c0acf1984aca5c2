//! Schema-guided dialogue state tracking.
//!
//! The engine turns multi-turn dialogues into hierarchical structured states
//! by asking itself a sequence of dialogue-style questions (intent, then the
//! key values of each field, then each child slot of each extracted key),
//! decoding every answer under hard validity constraints, and scoring the
//! result with exact-match flattened-tuple metrics.
//!
//! Module map:
//!
//! - [`schema`]: state schema, hierarchical states, flattening.
//! - [`corpus`]: dialogues, JSONL ingestion, history rendering, splits.
//! - [`prompt`]: query construction and answer scaffolding.
//! - [`vocab`]: tokenization shared by generators and decoding.
//! - [`generator`]: the scoring contract plus oracle / n-gram / external
//!   implementations.
//! - [`decoder`]: scaffold automaton, token tries, extractive budgets,
//!   greedy and beam search.
//! - [`tracker`]: per-turn orchestration and state accumulation.
//! - [`pretrain`]: descriptive-utterance classifier and stage-one corpus.
//! - [`metrics`]: intent / slot PRF, macro F1, turn accuracy.
//! - [`synth`]: deterministic synthetic corpora for end-to-end runs.

pub mod corpus;
pub mod decoder;
pub mod generator;
pub mod metrics;
pub mod pretrain;
pub mod prompt;
pub mod rng;
pub mod schema;
pub mod synth;
pub mod tracker;
pub mod vocab;
