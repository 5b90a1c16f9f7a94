//! Sentence-level topic vectors and the global topic-word matrix, from an
//! LDA model fitted by collapsed Gibbs sampling.

pub mod file;
mod lda;
mod vocab;

pub use lda::{fit_gibbs, GibbsState, LdaConfig, TopicModel, FOLD_IN_AVERAGED, FOLD_IN_SWEEPS};
pub use vocab::{tokenize, Vocab, VocabPolicy, DEFAULT_STOPWORDS};
