//! Ingestion, retrieval, ranking, training and evaluation around the
//! verifier.

pub mod config;
pub mod corpus;
pub mod metrics;
pub mod ranker;
pub mod retrieval;
pub mod synthetic;
pub mod train;

pub use config::RunConfig;
pub use corpus::{load_corpus, topic_texts, Candidate, ClaimInstance, Document, EvidenceId};
pub use metrics::{evaluate, EvalReport, Prediction};
pub use ranker::{train_ranker, RankPair, Ranker, RankerConfig};
pub use retrieval::TfIdfIndex;
pub use train::{fit_verifier, predict_corpus, train_verifier, TrainOptions};
