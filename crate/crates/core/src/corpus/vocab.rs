use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use super::{Document, Split};
use crate::error::{Error, Result};

pub const PAD: u32 = 0;
pub const UNK: u32 = 1;
pub const BOS: u32 = 2;
pub const EOS: u32 = 3;
pub const RESERVED: [&str; 4] = ["<pad>", "<unk>", "<bos>", "<eos>"];

/// Token ↔ id map with four reserved ids (PAD, UNK, BOS, EOS) at 0..4.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    ids: HashMap<String, u32>,
}

impl Vocabulary {
    /// Keeps the `cap` most frequent tokens of the train split (sentences and
    /// headlines). Frequency ties go to the lexicographically smaller token.
    pub fn build(docs: &[Document], cap: usize) -> Result<Self> {
        if cap == 0 {
            return Err(Error::invalid("vocabulary cap must be at least 1"));
        }
        let mut counts: HashMap<&str, usize> = HashMap::new();
        let mut any_train = false;
        for d in docs.iter().filter(|d| d.split == Split::Train) {
            any_train = true;
            for t in d.article_tokens().chain(d.headline.iter()) {
                if !RESERVED.contains(&t.as_str()) {
                    *counts.entry(t.as_str()).or_default() += 1;
                }
            }
        }
        if !any_train {
            return Err(Error::invalid("no train-split documents to build a vocabulary from"));
        }
        let mut ranked: Vec<(&str, usize)> = counts.into_iter().collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(b.0)));
        ranked.truncate(cap);
        Ok(Self::from_tokens(ranked.into_iter().map(|(t, _)| t.to_string())))
    }

    /// Builds from non-reserved tokens in id order (first gets id 4).
    pub fn from_tokens(tokens: impl IntoIterator<Item = String>) -> Self {
        let mut all: Vec<String> = RESERVED.iter().map(|s| s.to_string()).collect();
        all.extend(tokens);
        let ids = all.iter().enumerate().map(|(i, t)| (t.clone(), i as u32)).collect();
        Self { tokens: all, ids }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.len() <= RESERVED.len()
    }

    pub fn id(&self, token: &str) -> u32 {
        self.ids.get(token).copied().unwrap_or(UNK)
    }

    pub fn contains(&self, token: &str) -> bool {
        self.ids.get(token).is_some_and(|&i| i as usize >= RESERVED.len())
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<u32> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Non-reserved tokens in id order.
    pub fn kept_tokens(&self) -> &[String] {
        &self.tokens[RESERVED.len()..]
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        for t in self.kept_tokens() {
            writeln!(out, "{t}")?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let text = fs::read_to_string(path)?;
        Ok(Self::from_tokens(text.lines().map(str::to_string)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn doc(tokens: &[(&str, usize)]) -> Document {
        let sent: Vec<String> = tokens
            .iter()
            .flat_map(|(t, n)| std::iter::repeat_n(t.to_string(), *n))
            .collect();
        Document {
            id: "d".into(),
            sentences: vec![sent],
            headline: vec!["zz".into()],
            comments: None,
            split: Split::Train,
        }
    }

    #[test]
    fn frequency_cut_and_tie_break() {
        let v = Vocabulary::build(&[doc(&[("a", 5), ("b", 3), ("c", 1)])], 2).unwrap();
        assert_eq!(v.kept_tokens(), ["a", "b"]);
        assert_eq!(v.len(), 6);

        let v = Vocabulary::build(&[doc(&[("b", 2), ("a", 2)])], 1).unwrap();
        assert_eq!(v.kept_tokens(), ["a"]);
    }

    #[test]
    fn cap_not_binding_and_unknowns() {
        let toks: Vec<(String, usize)> = (0..99).map(|i| (format!("t{i}"), 1)).collect();
        let refs: Vec<(&str, usize)> = toks.iter().map(|(t, n)| (t.as_str(), *n)).collect();
        let v = Vocabulary::build(&[doc(&refs)], 30000).unwrap();
        assert_eq!(v.kept_tokens().len(), 100); // 99 + headline token
        assert_eq!(v.id("never-seen"), UNK);
        for (i, t) in v.kept_tokens().iter().enumerate() {
            assert_eq!(v.id(t) as usize, i + 4);
            assert_eq!(v.token(v.id(t)), t);
        }
    }

    #[test]
    fn requires_train_docs() {
        let mut d = doc(&[("a", 1)]);
        d.split = Split::Test;
        assert!(Vocabulary::build(&[d], 5).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let v = Vocabulary::build(&[doc(&[("a", 5), ("b", 3)])], 10).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("vocab.txt");
        v.save(&p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert_eq!(text.lines().next(), Some("a"));
        assert_eq!(Vocabulary::load(&p).unwrap(), v);
    }
}
