//! Deterministic synthetic news corpus.
//!
//! Each document is written around one content topic. Its headline is a
//! handful of topic words; a single salient sentence repeats the headline
//! in order with one reporting cue word and a few extra topic words mixed
//! in. Popular documents put marker tokens into the headline (and therefore
//! the salient sentence) and draw comment counts from a high regime.
//! Unpopular documents instead carry a marker-heavy "hook" sentence that
//! shares only a couple of headline words: rewriting it trades ROUGE for
//! attractiveness, which is the trade-off the reinforcement phase explores.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng as _;

use super::{Document, Split};
use crate::error::{Error, Result};
use crate::seeds::{self, Rng};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    pub n_docs: usize,
    pub sentences_per_doc: usize,
    pub n_topics: usize,
    pub words_per_topic: usize,
    pub markers: Vec<String>,
    pub cue_words: Vec<String>,
    /// Content words in an unpopular headline.
    pub plain_headline_words: usize,
    /// Content words in a popular headline (markers come on top).
    pub popular_headline_words: usize,
    pub markers_per_headline: usize,
    pub hook_markers: usize,
    pub hook_headline_words: usize,
    /// Probability that an unpopular document carries a hook sentence.
    pub hook_prob: f64,
    /// Extra topic words mixed into the salient sentence.
    pub salient_extra_words: usize,
    /// Probability that the salient sentence is the first one; otherwise
    /// its position is uniform.
    pub lead_prob: f64,
    pub val_frac: f64,
    pub test_frac: f64,
    pub low_comments: (u64, u64),
    pub high_comments: (u64, u64),
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_docs: 2400,
            sentences_per_doc: 6,
            n_topics: 6,
            words_per_topic: 40,
            markers: ["wow", "shocking", "secret", "amazing", "revealed", "incredible", "stunning", "unbelievable"]
                .iter()
                .map(|s| s.to_string())
                .collect(),
            cue_words: ["said", "reported", "announced", "confirmed"].iter().map(|s| s.to_string()).collect(),
            plain_headline_words: 6,
            popular_headline_words: 2,
            markers_per_headline: 4,
            hook_markers: 4,
            hook_headline_words: 2,
            hook_prob: 1.0,
            salient_extra_words: 1,
            lead_prob: 0.3,
            val_frac: 1.0 / 12.0,
            test_frac: 1.0 / 12.0,
            low_comments: (0, 100),
            high_comments: (500, 5000),
        }
    }
}

const CONSONANTS: &[u8] = b"bdfgklmnprstvz";
const VOWELS: &[u8] = b"aeiou";

/// Pronounceable three-syllable pseudo-word, unique per index.
fn pseudo_word(mut n: usize) -> String {
    let base = CONSONANTS.len() * VOWELS.len();
    let mut s = String::with_capacity(6);
    for _ in 0..3 {
        let syl = n % base;
        n /= base;
        s.push(CONSONANTS[syl / VOWELS.len()] as char);
        s.push(VOWELS[syl % VOWELS.len()] as char);
    }
    s
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(format!("synthetic corpus config: {m}")));
        if self.n_docs == 0 {
            return bad("n_docs must be positive");
        }
        if self.sentences_per_doc < 2 {
            return bad("sentences_per_doc must be at least 2");
        }
        if self.n_topics < 2 || self.words_per_topic < 16 {
            return bad("need at least 2 topics of 16 words");
        }
        if self.markers.len() < self.markers_per_headline.max(self.hook_markers) || self.markers.is_empty() {
            return bad("not enough marker tokens");
        }
        if self.cue_words.is_empty() {
            return bad("need at least one cue word");
        }
        if self.plain_headline_words == 0 || self.hook_headline_words > self.plain_headline_words {
            return bad("headline word counts are inconsistent");
        }
        let used = self.plain_headline_words + self.salient_extra_words + 8;
        if used > self.words_per_topic {
            return bad("words_per_topic too small for headline and filler sentences");
        }
        if !(0.0..1.0).contains(&(self.val_frac + self.test_frac)) {
            return bad("val_frac + test_frac must be in [0, 1)");
        }
        Ok(())
    }

    pub fn topic_words(&self) -> Vec<Vec<String>> {
        let reserved: Vec<&String> = self.markers.iter().chain(self.cue_words.iter()).collect();
        let mut next = 0usize;
        (0..self.n_topics)
            .map(|_| {
                let mut words = Vec::with_capacity(self.words_per_topic);
                while words.len() < self.words_per_topic {
                    let w = pseudo_word(next);
                    next += 1;
                    if !reserved.iter().any(|r| **r == w) {
                        words.push(w);
                    }
                }
                words
            })
            .collect()
    }
}

fn split_counts(cfg: &SynthConfig) -> (usize, usize, usize) {
    let n_val = (cfg.n_docs as f64 * cfg.val_frac).round() as usize;
    let n_test = (cfg.n_docs as f64 * cfg.test_frac).round() as usize;
    let n_train = cfg.n_docs.saturating_sub(n_val + n_test).max(1);
    let n_val = n_val.min(cfg.n_docs - n_train);
    let n_test = cfg.n_docs - n_train - n_val;
    (n_train, n_val, n_test)
}

/// Exactly ceil(n/2) popular documents per split so the median split
/// separates the two comment regimes.
fn popular_flags(n: usize, rng: &mut Rng) -> Vec<bool> {
    let mut flags: Vec<bool> = (0..n).map(|i| i < n.div_ceil(2)).collect();
    flags.shuffle(rng);
    flags
}

fn insert_randomly(base: &mut Vec<String>, extra: Vec<String>, rng: &mut Rng) {
    for w in extra {
        let pos = rng.random_range(0..=base.len());
        base.insert(pos, w);
    }
}

pub fn generate_synthetic_corpus(seed: u64, cfg: &SynthConfig) -> Result<Vec<Document>> {
    cfg.validate()?;
    let topics = cfg.topic_words();
    let (n_train, n_val, n_test) = split_counts(cfg);
    let mut flag_rng = seeds::rng(seed, "corpus/flags", &[]);
    let mut flags = popular_flags(n_train, &mut flag_rng);
    flags.extend(popular_flags(n_val, &mut flag_rng));
    flags.extend(popular_flags(n_test, &mut flag_rng));

    let mut docs = Vec::with_capacity(cfg.n_docs);
    for (i, &popular) in flags.iter().enumerate() {
        let mut rng = seeds::rng(seed, "corpus/doc", &[i as u64]);
        let split = if i < n_train {
            Split::Train
        } else if i < n_train + n_val {
            Split::Val
        } else {
            Split::Test
        };
        docs.push(generate_doc(i, popular, split, cfg, &topics, &mut rng));
    }
    debug_assert_eq!(docs.len(), n_train + n_val + n_test);
    Ok(docs)
}

fn generate_doc(
    index: usize,
    popular: bool,
    split: Split,
    cfg: &SynthConfig,
    topics: &[Vec<String>],
    rng: &mut Rng,
) -> Document {
    let topic = rng.random_range(0..topics.len());
    let mut pool: Vec<String> = topics[topic].clone();
    pool.shuffle(rng);

    let n_content = if popular { cfg.popular_headline_words } else { cfg.plain_headline_words };
    let content: Vec<String> = pool.drain(..n_content).collect();
    let mut headline = content.clone();
    if popular {
        let markers: Vec<String> = cfg.markers.choose_multiple(rng, cfg.markers_per_headline).cloned().collect();
        insert_randomly(&mut headline, markers, rng);
    }

    let mut salient = headline.clone();
    let mut extra: Vec<String> = pool.drain(..cfg.salient_extra_words).collect();
    extra.push(cfg.cue_words.choose(rng).unwrap().clone());
    insert_randomly(&mut salient, extra, rng);

    let n = cfg.sentences_per_doc;
    let salient_pos = if rng.random_bool(cfg.lead_prob) { 0 } else { rng.random_range(0..n) };

    let hook = (!popular && rng.random_bool(cfg.hook_prob)).then(|| {
        let mut words: Vec<String> = cfg.markers.choose_multiple(rng, cfg.hook_markers).cloned().collect();
        words.extend(content.choose_multiple(rng, cfg.hook_headline_words).cloned());
        words.shuffle(rng);
        words
    });
    let hook_pos = hook.as_ref().map(|_| {
        let k = rng.random_range(0..n - 1);
        if k >= salient_pos { k + 1 } else { k }
    });

    let mut sentences = Vec::with_capacity(n);
    for k in 0..n {
        if k == salient_pos {
            sentences.push(salient.clone());
        } else if Some(k) == hook_pos {
            sentences.push(hook.clone().unwrap());
        } else {
            let src = if rng.random_bool(0.3) {
                let other = (topic + rng.random_range(1..topics.len())) % topics.len();
                &topics[other]
            } else {
                &pool
            };
            let len = rng.random_range(5..=8);
            let sent: Vec<String> = (0..len)
                .map(|_| {
                    loop {
                        let w = src.choose(rng).unwrap();
                        if !content.contains(w) {
                            break w.clone();
                        }
                    }
                })
                .collect();
            sentences.push(sent);
        }
    }

    let (lo, hi) = if popular { cfg.high_comments } else { cfg.low_comments };
    Document {
        id: format!("doc{index:05}"),
        sentences,
        headline,
        comments: Some(rng.random_range(lo..=hi)),
        split,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::median_split_labels;
    use crate::metrics::lcs_length;

    fn small() -> SynthConfig {
        SynthConfig { n_docs: 120, ..SynthConfig::default() }
    }

    #[test]
    fn deterministic_for_seed() {
        let a = generate_synthetic_corpus(7, &small()).unwrap();
        let b = generate_synthetic_corpus(7, &small()).unwrap();
        assert_eq!(serde_json::to_string(&a).unwrap(), serde_json::to_string(&b).unwrap());
        let c = generate_synthetic_corpus(8, &small()).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rejects_degenerate_configs() {
        assert!(generate_synthetic_corpus(1, &SynthConfig { n_docs: 0, ..small() }).is_err());
        assert!(generate_synthetic_corpus(1, &SynthConfig { sentences_per_doc: 0, ..small() }).is_err());
    }

    #[test]
    fn one_salient_sentence_covers_headline() {
        for d in generate_synthetic_corpus(3, &small()).unwrap() {
            d.validate().unwrap();
            let covering: Vec<_> = d
                .sentences
                .iter()
                .filter(|s| lcs_length(s, &d.headline) as f64 >= 0.6 * d.headline.len() as f64)
                .collect();
            assert_eq!(covering.len(), 1, "{}", d.id);
        }
    }

    #[test]
    fn marker_headlines_are_labelled_popular() {
        let cfg = small();
        for seed in 0..10 {
            let docs = generate_synthetic_corpus(seed, &cfg).unwrap();
            let labels = median_split_labels(&docs).unwrap();
            let mut agree = 0;
            for (d, l) in docs.iter().zip(&labels) {
                let has_marker = d.headline.iter().any(|t| cfg.markers.contains(t));
                if has_marker {
                    assert_eq!(l.label, 1, "seed {seed} {}", d.id);
                }
                agree += usize::from(has_marker == (l.label == 1));
            }
            assert!(agree as f64 / docs.len() as f64 >= 0.99);
        }
    }
}
