//! Non-neural comparison systems: BM25 headline retrieval, first sentence,
//! random sentence, and the generation-only abstractor over the article.

use std::collections::HashMap;

use rand::Rng as _;

use crate::abstractor::{Abstractor, DecodeMode, GateMode, Source, MAX_HEADLINE_LEN};
use crate::corpus::{Document, Vocabulary};
use crate::error::{Error, Result};
use crate::seeds;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bm25Params {
    pub k1: f64,
    pub b: f64,
}

impl Default for Bm25Params {
    fn default() -> Self {
        Self { k1: 1.2, b: 0.75 }
    }
}

/// Inverted index over training headlines.
#[derive(Clone, Debug)]
pub struct Bm25Index {
    pub params: Bm25Params,
    headlines: Vec<Vec<String>>,
    lengths: Vec<usize>,
    avg_len: f64,
    /// term -> (headline id, term frequency), ascending by id
    postings: HashMap<String, Vec<(usize, u32)>>,
}

impl Bm25Index {
    pub fn build(headlines: Vec<Vec<String>>, params: Bm25Params) -> Result<Self> {
        if headlines.is_empty() {
            return Err(Error::invalid("bm25 index needs at least one headline"));
        }
        let mut postings: HashMap<String, Vec<(usize, u32)>> = HashMap::new();
        for (id, h) in headlines.iter().enumerate() {
            let mut tf: HashMap<&str, u32> = HashMap::new();
            for t in h {
                *tf.entry(t).or_default() += 1;
            }
            for (t, c) in tf {
                postings.entry(t.to_string()).or_default().push((id, c));
            }
        }
        let lengths: Vec<usize> = headlines.iter().map(Vec::len).collect();
        let avg_len = lengths.iter().sum::<usize>() as f64 / lengths.len() as f64;
        Ok(Self { params, headlines, lengths, avg_len, postings })
    }

    pub fn len(&self) -> usize {
        self.headlines.len()
    }

    pub fn is_empty(&self) -> bool {
        self.headlines.is_empty()
    }

    pub fn headline(&self, id: usize) -> &[String] {
        &self.headlines[id]
    }

    pub fn doc_freq(&self, term: &str) -> usize {
        self.postings.get(term).map_or(0, Vec::len)
    }

    /// Lucene-style idf, always positive.
    pub fn idf(&self, term: &str) -> f64 {
        let n = self.len() as f64;
        let df = self.doc_freq(term) as f64;
        (1.0 + (n - df + 0.5) / (df + 0.5)).ln()
    }

    fn term_weight(&self, tf: f64, len: usize) -> f64 {
        let Bm25Params { k1, b } = self.params;
        tf * (k1 + 1.0) / (tf + k1 * (1.0 - b + b * len as f64 / self.avg_len))
    }

    /// Scores for every headline; each query token counts once per
    /// occurrence.
    pub fn scores(&self, query: &[String]) -> Vec<f64> {
        let mut qtf: HashMap<&str, f64> = HashMap::new();
        for t in query {
            *qtf.entry(t).or_default() += 1.0;
        }
        let mut terms: Vec<(&str, f64)> = qtf.into_iter().collect();
        terms.sort_by(|a, b| a.0.cmp(b.0));
        let mut scores = vec![0.0; self.len()];
        for (t, q) in terms {
            let Some(post) = self.postings.get(t) else { continue };
            let idf = self.idf(t);
            for &(id, tf) in post {
                scores[id] += q * idf * self.term_weight(tf as f64, self.lengths[id]);
            }
        }
        scores
    }

    /// Score of one headline computed directly from its tokens.
    pub fn score_one(&self, query: &[String], id: usize) -> f64 {
        let h = &self.headlines[id];
        query
            .iter()
            .map(|t| {
                let tf = h.iter().filter(|x| *x == t).count();
                if tf == 0 {
                    0.0
                } else {
                    self.idf(t) * self.term_weight(tf as f64, h.len())
                }
            })
            .sum()
    }

    /// Id of the best-scoring headline; the lowest id wins ties.
    pub fn best(&self, query: &[String]) -> usize {
        let scores = self.scores(query);
        let mut best = 0;
        for (i, &s) in scores.iter().enumerate() {
            if s > scores[best] {
                best = i;
            }
        }
        best
    }
}

fn cap(tokens: &[String]) -> Vec<String> {
    tokens.iter().take(MAX_HEADLINE_LEN).cloned().collect()
}

/// Retrieves the training headline that best matches the whole article.
pub fn bm25_headline(article: &[String], index: &Bm25Index) -> Result<Vec<String>> {
    if index.is_empty() {
        return Err(Error::invalid("bm25 index is empty"));
    }
    Ok(cap(index.headline(index.best(article))))
}

pub fn prefix_headline(doc: &Document) -> Result<Vec<String>> {
    doc.sentences
        .first()
        .map(|s| cap(s))
        .ok_or_else(|| Error::invalid(format!("document {} has no sentences", doc.id)))
}

pub fn random_index(n_sentences: usize, seed: u64, doc_id: &str) -> usize {
    let mut rng = seeds::rng(seed, &format!("baseline/random/{doc_id}"), &[]);
    rng.random_range(0..n_sentences)
}

pub fn random_headline(doc: &Document, seed: u64) -> Result<Vec<String>> {
    if doc.sentences.is_empty() {
        return Err(Error::invalid(format!("document {} has no sentences", doc.id)));
    }
    Ok(cap(&doc.sentences[random_index(doc.sentences.len(), seed, &doc.id)]))
}

/// Sequence-to-sequence approximation: the abstractor reads the article
/// truncated to `max_article_len` tokens and may only generate, not copy.
pub fn seq2seq_approx_headline(abstractor: &Abstractor, doc: &Document, vocab: &Vocabulary, max_article_len: usize) -> Result<Vec<String>> {
    let article: Vec<String> = doc.article_tokens().cloned().collect();
    let src = Source::new(&article, vocab, max_article_len)?;
    let mut rng = seeds::rng(0, "baseline/seq2seq", &[]);
    let out = abstractor.generate(&src, vocab, DecodeMode::Greedy, GateMode::GenerateOnly, MAX_HEADLINE_LEN, &mut rng)?;
    Ok(out.tokens)
}
