use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "val" => Some(Split::Val),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// One article with its headline and (optionally) its comment count.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub id: String,
    pub sentences: Vec<Vec<String>>,
    pub headline: Vec<String>,
    pub comments: Option<u64>,
    pub split: Split,
}

impl Document {
    /// All sentence tokens in reading order.
    pub fn article_tokens(&self) -> impl Iterator<Item = &String> {
        self.sentences.iter().flatten()
    }

    pub fn validate(&self) -> Result<()> {
        if self.sentences.is_empty() {
            return Err(Error::invalid(format!("document {}: no sentences", self.id)));
        }
        if self.sentences.iter().any(|s| s.is_empty()) {
            return Err(Error::invalid(format!("document {}: empty sentence", self.id)));
        }
        if self.headline.is_empty() {
            return Err(Error::invalid(format!("document {}: empty headline", self.id)));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct PopularityLabel {
    pub id: String,
    pub label: u8,
}

/// Reads a corpus file: one JSON object per line.
pub fn ingest(path: &Path) -> Result<Vec<Document>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    ingest_str(&fs::read_to_string(path)?)
}

pub fn ingest_str(text: &str) -> Result<Vec<Document>> {
    let mut docs = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = docs.len();
        let err = |field: &str, message: String| Error::Ingest {
            record,
            line: lineno + 1,
            field: field.to_string(),
            message,
        };
        let value: Value = serde_json::from_str(line).map_err(|e| err("<record>", e.to_string()))?;
        let obj = value
            .as_object()
            .ok_or_else(|| err("<record>", "expected a JSON object".into()))?;
        let field = |name: &str| obj.get(name).ok_or_else(|| err(name, "missing field".into()));

        let id = field("id")?
            .as_str()
            .ok_or_else(|| err("id", "expected a string".into()))?
            .to_string();

        let token_list = |name: &str, v: &Value| -> Result<Vec<String>> {
            v.as_array()
                .ok_or_else(|| err(name, "expected an array of strings".into()))?
                .iter()
                .map(|t| {
                    t.as_str()
                        .map(str::to_lowercase)
                        .ok_or_else(|| err(name, "expected string tokens".into()))
                })
                .collect()
        };

        let sentences: Vec<Vec<String>> = field("sentences")?
            .as_array()
            .ok_or_else(|| err("sentences", "expected an array of arrays".into()))?
            .iter()
            .map(|s| token_list("sentences", s))
            .collect::<Result<_>>()?;
        if sentences.is_empty() {
            return Err(err("sentences", "empty sentence list".into()));
        }
        if let Some(k) = sentences.iter().position(Vec::is_empty) {
            return Err(err("sentences", format!("sentence {k} is empty")));
        }

        let headline = token_list("headline", field("headline")?)?;
        if headline.is_empty() {
            return Err(err("headline", "empty headline".into()));
        }

        let comments = match obj.get("comments") {
            None | Some(Value::Null) => None,
            Some(v) => {
                if let Some(n) = v.as_u64() {
                    Some(n)
                } else if v.as_i64().is_some() {
                    return Err(err("comments", "negative comment count".into()));
                } else {
                    return Err(err("comments", "expected a non-negative integer or null".into()));
                }
            }
        };

        let split_str = field("split")?
            .as_str()
            .ok_or_else(|| err("split", "expected a string".into()))?;
        let split = Split::parse(split_str)
            .ok_or_else(|| err("split", format!("unknown split `{split_str}`")))?;

        docs.push(Document {
            id,
            sentences,
            headline,
            comments,
            split,
        });
    }
    Ok(docs)
}

pub fn write_corpus(path: &Path, docs: &[Document]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for d in docs {
        serde_json::to_writer(&mut out, d)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

fn median(sorted: &[u64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] as f64 + sorted[n / 2] as f64) / 2.0
    }
}

/// Binarizes comment counts at the train-split median: below the median is
/// 0, at or above is 1. Documents without a count get no label.
pub fn median_split_labels(docs: &[Document]) -> Result<Vec<PopularityLabel>> {
    let mut train: Vec<u64> = docs
        .iter()
        .filter(|d| d.split == Split::Train)
        .filter_map(|d| d.comments)
        .collect();
    if train.is_empty() {
        return Err(Error::invalid("no train-split comment counts available for the median split"));
    }
    train.sort_unstable();
    let m = median(&train);
    Ok(docs
        .iter()
        .filter_map(|d| {
            d.comments.map(|c| PopularityLabel {
                id: d.id.clone(),
                label: u8::from(c as f64 >= m),
            })
        })
        .collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(id: &str, comments: Option<u64>) -> Document {
        Document {
            id: id.into(),
            sentences: vec![vec!["a".into()]],
            headline: vec!["a".into()],
            comments,
            split: Split::Train,
        }
    }

    #[test]
    fn loads_single_record() {
        let docs = ingest_str(
            r#"{"id":"a","sentences":[["the","cat"]],"headline":["cat"],"comments":4,"split":"train"}"#,
        )
        .unwrap();
        assert_eq!(docs.len(), 1);
        assert_eq!(docs[0].sentences, vec![vec!["the".to_string(), "cat".to_string()]]);
        assert_eq!(docs[0].comments, Some(4));
    }

    #[test]
    fn missing_headline_is_named() {
        let err = ingest_str(r#"{"id":"a","sentences":[["x"]],"comments":null,"split":"val"}"#).unwrap_err();
        match err {
            Error::Ingest { field, line, .. } => {
                assert_eq!(field, "headline");
                assert_eq!(line, 1);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn rejects_empty_sentences_and_negative_counts() {
        let e = ingest_str(r#"{"id":"a","sentences":[],"headline":["x"],"comments":1,"split":"train"}"#)
            .unwrap_err();
        assert!(matches!(e, Error::Ingest { ref field, .. } if field == "sentences"));
        let e = ingest_str(r#"{"id":"a","sentences":[["x"]],"headline":["x"],"comments":-3,"split":"train"}"#)
            .unwrap_err();
        assert!(matches!(e, Error::Ingest { ref field, .. } if field == "comments"));
    }

    #[test]
    fn preserves_order_and_reports_record_index() {
        let text = [
            r#"{"id":"a","sentences":[["x"]],"headline":["x"],"comments":1,"split":"train"}"#,
            "",
            r#"{"id":"b","sentences":[["X"]],"headline":["y"],"comments":null,"split":"test"}"#,
            r#"{"id":"c","sentences":[["z"]],"headline":["z"],"comments":2,"split":"val"}"#,
        ]
        .join("\n");
        let docs = ingest_str(&text).unwrap();
        let ids: Vec<_> = docs.iter().map(|d| d.id.as_str()).collect();
        assert_eq!(ids, ["a", "b", "c"]);
        assert_eq!(docs[1].sentences[0][0], "x");

        let bad = format!("{text}\n{{\"id\":\"d\"}}");
        match ingest_str(&bad).unwrap_err() {
            Error::Ingest { record, line, .. } => {
                assert_eq!(record, 3);
                assert_eq!(line, 5);
            }
            e => panic!("unexpected {e}"),
        }
    }

    #[test]
    fn median_split_examples() {
        let docs: Vec<_> = [1, 5, 10, 100].iter().enumerate().map(|(i, &c)| doc(&i.to_string(), Some(c))).collect();
        let l: Vec<u8> = median_split_labels(&docs).unwrap().iter().map(|l| l.label).collect();
        assert_eq!(l, [0, 0, 1, 1]);

        let docs: Vec<_> = (0..3).map(|i| doc(&i.to_string(), Some(3))).collect();
        assert!(median_split_labels(&docs).unwrap().iter().all(|l| l.label == 1));

        let l = median_split_labels(&[doc("x", Some(7))]).unwrap();
        assert_eq!(l[0].label, 1);

        assert!(median_split_labels(&[doc("x", None)]).is_err());
    }

    #[test]
    fn eval_splits_use_train_median() {
        let mut docs: Vec<_> = [10, 20].iter().enumerate().map(|(i, &c)| doc(&i.to_string(), Some(c))).collect();
        let mut t = doc("t", Some(14));
        t.split = Split::Test;
        docs.push(t);
        let l = median_split_labels(&docs).unwrap();
        assert_eq!(l[2].label, 0);
    }
}
