//! Belief-state tracking with pluggable update mechanisms.
//!
//! A turn-level decoder scores every candidate value of every slot from the
//! user's utterance and the preceding system acts. An update mechanism then
//! folds that estimate into the belief carried from the previous turn. Four
//! mechanisms are provided: the fixed rule-based mix, a learned interpolation,
//! a one-step Markovian softmax with full matrices, and a constrained variant
//! with four shared scalars.

pub mod corpus;
pub mod decoder;
pub mod embeddings;
pub mod eval;
pub mod linalg;
pub mod model;
pub mod ontology;
pub mod synth;
pub mod training;
pub mod update;

pub use corpus::{load_woz, tokenize, write_woz, CorpusError, Dialogue, SystemAct, Turn, TurnInput};
pub use decoder::{CandidateTable, DecoderError, DecoderParams};
pub use embeddings::{EmbeddingError, VectorStore};
pub use eval::{evaluate, EvalError, EvalReport, Tracker, TurnPrediction};
pub use linalg::Matrix;
pub use model::{Model, ModelError};
pub use ontology::{GoalLabel, Ontology, OntologyError, Slot};
pub use synth::{SynthDynamics, SynthError};
pub use training::{train, EpochLog, TrainConfig, TrainError, TrainOutcome};
pub use update::{ConstrainedParams, MechanismKind, UpdateError, UpdateMechanism};
