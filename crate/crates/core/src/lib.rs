//! Structured caption rewards: anchored scene-graph units, revision-based
//! matching, yes/no verification questions, and a desk-scale REINFORCE
//! trainer over synthetic worlds.

pub mod audit;
pub mod caption_ir;
pub mod grammar_parser;
pub mod matcher;
pub mod question_gen;
pub mod reward_engine;
pub mod similarity;
pub mod trainer;
pub mod verifier;
pub mod world_sim;

pub use audit::{audit_metrics, derive_record, derive_records, overlap_audit, AuditRecord, AuditSample, AuditSummary, OverlapReport};
pub use caption_ir::{ingest, ingest_json, serialize, IngestError, StructuredCaption};
pub use grammar_parser::{parse_caption, Lexicon, ParseError};
pub use matcher::{build_object_map, match_events, match_typed_units, max_weight_matching, Matching, ObjectMap, UnitType, WeightMatrix};
pub use question_gen::{Answer, Branch, QuestionKind, QuestionSet, VerificationQuestion};
pub use reward_engine::{combine, score_captions, score_pair, CaptionInput, RewardBreakdown, RewardConfig, ScoreError};
pub use similarity::{EmbeddingTable, SimilarityProvider};
pub use trainer::{train, TokenPolicy, TrainerConfig, TrainingHistory};
pub use verifier::{VerifierBinding, VerifierError};
pub use world_sim::{corrupt, render_reference, sample_world, CorruptionKind, WorldConfig, WorldState};
