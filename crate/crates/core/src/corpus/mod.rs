//! Documents, vocabulary, popularity labels and the synthetic corpus.

mod document;
mod synth;
mod vocab;

pub use document::{ingest, ingest_str, median_split_labels, write_corpus, Document, PopularityLabel, Split};
pub use synth::{generate_synthetic_corpus, SynthConfig};
pub use vocab::{Vocabulary, BOS, EOS, PAD, RESERVED, UNK};
