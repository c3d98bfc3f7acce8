//! Corpus-level topic annotation: one shared model over train articles,
//! then θ^D, θ^H and per-sentence θ^S for every document plus its popular
//! reference headline.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{infer_topic_vec, lda_train, retrieve_popular_reference, IndexEntry, LdaParams, PopularReference, TopicModel, TopicVec};
use crate::corpus::{Document, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::par::{self, Parallelism};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TopicSettings {
    pub lda: LdaParams,
    pub infer_iterations: usize,
    pub retrieval_m: usize,
}

impl Default for TopicSettings {
    fn default() -> Self {
        Self {
            lda: LdaParams::with_k(16),
            infer_iterations: 20,
            retrieval_m: 5,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DocTopics {
    pub id: String,
    pub theta_d: TopicVec,
    pub theta_h: TopicVec,
    pub theta_s: Vec<TopicVec>,
    pub reference: PopularReference,
}

/// Trains the shared topic model on the concatenated sentences of each
/// train article.
pub fn train_corpus_model(docs: &[Document], vocab: &Vocabulary, settings: &TopicSettings, seed: u64) -> Result<TopicModel> {
    let bags: Vec<Vec<u32>> = docs
        .iter()
        .filter(|d| d.split == Split::Train)
        .map(|d| d.article_tokens().map(|t| vocab.id(t)).filter(|&i| vocab.contains(vocab.token(i))).collect())
        .collect();
    lda_train(&bags, vocab.len(), settings.lda, seeds::derive(seed, "lda", &[]))
}

/// Infers all topic vectors, builds the retrieval index over train
/// documents with comment counts, and resolves each document's reference.
pub fn annotate_corpus(
    model: &TopicModel,
    vocab: &Vocabulary,
    docs: &[Document],
    settings: &TopicSettings,
    seed: u64,
    mode: Parallelism,
) -> Result<(Vec<IndexEntry>, Vec<DocTopics>)> {
    let iters = settings.infer_iterations;
    let infer = |doc: usize, part: u64, tokens: &mut dyn Iterator<Item = &String>| {
        let ids: Vec<u32> = tokens.map(|t| vocab.id(t)).collect();
        infer_topic_vec(model, &ids, iters, seeds::derive(seed, "lda/infer", &[doc as u64, part]))
    };
    let inferred: Vec<(TopicVec, TopicVec, Vec<TopicVec>)> = par::map(mode, docs, |i, d| {
        let theta_d = infer(i, 0, &mut d.article_tokens());
        let theta_h = infer(i, 1, &mut d.headline.iter());
        let theta_s = d
            .sentences
            .iter()
            .enumerate()
            .map(|(k, s)| infer(i, 2 + k as u64, &mut s.iter()))
            .collect();
        (theta_d, theta_h, theta_s)
    });

    let index: Vec<IndexEntry> = docs
        .iter()
        .zip(&inferred)
        .filter(|(d, _)| d.split == Split::Train)
        .filter_map(|(d, (td, th, _))| {
            d.comments.map(|c| IndexEntry {
                id: d.id.clone(),
                theta_d: td.clone(),
                theta_h: th.clone(),
                popularity: c,
            })
        })
        .collect();
    if index.is_empty() {
        return Err(Error::invalid("no train documents with comment counts to build the retrieval index"));
    }

    let annotated = par::try_map(mode, docs, |i, d| {
        let (theta_d, theta_h, theta_s) = inferred[i].clone();
        let reference = retrieve_popular_reference(&theta_d, Some(&d.id), &index, settings.retrieval_m)?;
        Ok::<_, Error>(DocTopics {
            id: d.id.clone(),
            theta_d,
            theta_h,
            theta_s,
            reference,
        })
    })?;
    Ok((index, annotated))
}

pub fn save_doc_topics(path: &Path, topics: &[DocTopics]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for t in topics {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_doc_topics(path: &Path) -> Result<Vec<DocTopics>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{generate_synthetic_corpus, SynthConfig};

    #[test]
    fn annotation_is_complete_and_deterministic() {
        let docs = generate_synthetic_corpus(1, &SynthConfig { n_docs: 60, ..Default::default() }).unwrap();
        let vocab = Vocabulary::build(&docs, 30000).unwrap();
        let settings = TopicSettings {
            lda: LdaParams { iterations: 20, ..LdaParams::with_k(8) },
            ..Default::default()
        };
        let model = train_corpus_model(&docs, &vocab, &settings, 5).unwrap();
        let (index, a) = annotate_corpus(&model, &vocab, &docs, &settings, 5, Parallelism::Parallel).unwrap();
        let (_, b) = annotate_corpus(&model, &vocab, &docs, &settings, 5, Parallelism::Sequential).unwrap();
        assert_eq!(a, b);
        assert_eq!(index.len(), docs.iter().filter(|d| d.split == Split::Train).count());
        for (d, t) in docs.iter().zip(&a) {
            assert_eq!(t.theta_s.len(), d.sentences.len());
            assert_ne!(t.reference.source_id, d.id);
            for v in std::iter::once(&t.theta_d).chain(&t.theta_s) {
                assert!(v.is_distribution(1e-6));
            }
        }
    }
}
