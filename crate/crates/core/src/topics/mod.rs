//! LDA topic model, topic inference and popular-reference retrieval.

mod annotate;
mod lda;
mod retrieval;

pub use annotate::{annotate_corpus, load_doc_topics, save_doc_topics, train_corpus_model, DocTopics, TopicSettings};
pub use lda::{infer_topic_vec, lda_train, LdaParams, TopicModel, TopicVec};
pub use retrieval::{
    load_index, popularity_info, retrieve_popular_reference, save_index, IndexEntry, PopularReference,
};
