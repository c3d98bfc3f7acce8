//! Extractor proxy labels: the faithfulness target `y` (best ROUGE-L recall
//! against the headline) and the popularity target `y'` (best standardized
//! topic overlap with the popular reference headline).

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Document;
use crate::error::{Error, Result};
use crate::metrics::rouge_l;
use crate::par::{self, Parallelism};
use crate::topics::{popularity_info, DocTopics, TopicVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ProxyLabels {
    pub id: String,
    pub y: usize,
    pub y_prime: usize,
    pub recall_scores: Vec<f64>,
    pub topic_scores: Vec<f64>,
}

/// Index of the first maximum.
pub fn first_argmax(xs: &[f64]) -> usize {
    let mut best = 0;
    for (i, &x) in xs.iter().enumerate().skip(1) {
        if x > xs[best] {
            best = i;
        }
    }
    best
}

/// Subtract the mean and divide by the standard deviation; a constant
/// vector maps to all zeros.
pub fn standardize(xs: &[f64]) -> Vec<f64> {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt();
    if sd == 0.0 || !sd.is_finite() {
        return vec![0.0; xs.len()];
    }
    xs.iter().map(|x| (x - mean) / sd).collect()
}

pub fn faithfulness_label(doc: &Document) -> Result<(usize, Vec<f64>)> {
    if doc.sentences.is_empty() {
        return Err(Error::invalid(format!("document {} has no sentences", doc.id)));
    }
    let recalls = doc
        .sentences
        .iter()
        .map(|s| rouge_l(s, &doc.headline).map(|r| r.recall))
        .collect::<Result<Vec<_>>>()?;
    Ok((first_argmax(&recalls), recalls))
}

/// Returns the chosen index and the raw per-sentence topic sums.
pub fn popularity_label(sentence_topics: &[TopicVec], reference: &TopicVec) -> Result<(usize, Vec<f64>)> {
    if sentence_topics.is_empty() {
        return Err(Error::invalid("popularity label needs at least one sentence"));
    }
    let sums = sentence_topics
        .iter()
        .map(|s| popularity_info(s, reference).map(|e| e.iter().sum::<f64>()))
        .collect::<Result<Vec<_>>>()?;
    Ok((first_argmax(&standardize(&sums)), sums))
}

pub fn build_labels(docs: &[Document], topics: &[DocTopics], mode: Parallelism) -> Result<Vec<ProxyLabels>> {
    if docs.len() != topics.len() {
        return Err(Error::invalid("documents and topic annotations are not aligned"));
    }
    par::try_map(mode, docs, |i, d| {
        let t = &topics[i];
        if t.id != d.id {
            return Err(Error::invalid(format!("topic annotation {} does not match document {}", t.id, d.id)));
        }
        let (y, recall_scores) = faithfulness_label(d)?;
        let (y_prime, topic_scores) = popularity_label(&t.theta_s, &t.reference.theta_h)?;
        Ok(ProxyLabels {
            id: d.id.clone(),
            y,
            y_prime,
            recall_scores,
            topic_scores,
        })
    })
}

pub fn save_labels(path: &Path, labels: &[ProxyLabels]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for l in labels {
        serde_json::to_writer(&mut out, l)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_labels(path: &Path) -> Result<Vec<ProxyLabels>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}
