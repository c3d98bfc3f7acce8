use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Word lists behind the lexical hypotheses.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Lexicons {
    pub signal: HashSet<String>,
    pub pronouns: HashSet<String>,
    pub sentiment: HashSet<String>,
    pub negative: HashSet<String>,
}

pub const LEXICON_FILES: [&str; 4] = ["signal_words.txt", "pronouns.txt", "sentiment_words.txt", "negative_words.txt"];

fn parse_list(text: &str) -> HashSet<String> {
    text.lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(str::to_lowercase)
        .collect()
}

impl Lexicons {
    /// The word lists shipped with the crate.
    pub fn bundled() -> Self {
        Self {
            signal: parse_list(include_str!("../../resources/lexicons/signal_words.txt")),
            pronouns: parse_list(include_str!("../../resources/lexicons/pronouns.txt")),
            sentiment: parse_list(include_str!("../../resources/lexicons/sentiment_words.txt")),
            negative: parse_list(include_str!("../../resources/lexicons/negative_words.txt")),
        }
    }

    /// Loads the four lists from `dir`, one token per line, `#` comments.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let read = |name: &str| -> Result<HashSet<String>> {
            let p = dir.join(name);
            if !p.exists() {
                return Err(Error::MissingFile(p));
            }
            Ok(parse_list(&fs::read_to_string(p)?))
        };
        Ok(Self {
            signal: read(LEXICON_FILES[0])?,
            pronouns: read(LEXICON_FILES[1])?,
            sentiment: read(LEXICON_FILES[2])?,
            negative: read(LEXICON_FILES[3])?,
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadlineFeatures {
    pub h1_char_length: usize,
    pub h2_avg_token_chars: f64,
    pub h3_has_question: bool,
    pub h4_partial_quote: bool,
    pub h5_full_quote: bool,
    pub h6_signal_word: bool,
    pub h7_pronoun: bool,
    pub h8_sentiment_word: bool,
    pub h9_negative_word: bool,
    pub h10_has_number: bool,
    pub h11_starts_with_pronoun: bool,
}

pub const N_HYPOTHESES: usize = 11;

pub const HYPOTHESES: [(&str, &str); N_HYPOTHESES] = [
    ("H1", "headline length in characters"),
    ("H2", "mean token length in characters"),
    ("H3", "contains a question mark"),
    ("H4", "contains a partial quote"),
    ("H5", "is entirely a quote"),
    ("H6", "contains a signal word"),
    ("H7", "contains a personal or possessive pronoun"),
    ("H8", "contains a sentiment word"),
    ("H9", "contains a negative word"),
    ("H10", "contains a number"),
    ("H11", "starts with a personal or possessive pronoun"),
];

impl HeadlineFeatures {
    /// Numeric view; flags become 0 or 1.
    pub fn values(&self) -> [f64; N_HYPOTHESES] {
        let f = |b: bool| if b { 1.0 } else { 0.0 };
        [
            self.h1_char_length as f64,
            self.h2_avg_token_chars,
            f(self.h3_has_question),
            f(self.h4_partial_quote),
            f(self.h5_full_quote),
            f(self.h6_signal_word),
            f(self.h7_pronoun),
            f(self.h8_sentiment_word),
            f(self.h9_negative_word),
            f(self.h10_has_number),
            f(self.h11_starts_with_pronoun),
        ]
    }
}

fn is_quote(c: char) -> bool {
    matches!(c, '"' | '\u{201c}' | '\u{201d}')
}

/// Digits, digits with one decimal point, or comma-grouped digits.
pub fn is_number(token: &str) -> bool {
    let digits = |s: &str| !s.is_empty() && s.bytes().all(|b| b.is_ascii_digit());
    if digits(token) {
        return true;
    }
    if let Some((a, b)) = token.split_once('.') {
        return digits(a) && digits(b);
    }
    let groups: Vec<&str> = token.split(',').collect();
    groups.len() > 1
        && (1..=3).contains(&groups[0].len())
        && digits(groups[0])
        && groups[1..].iter().all(|g| g.len() == 3 && digits(g))
}

pub fn headline_features(headline: &[String], lex: &Lexicons) -> Result<HeadlineFeatures> {
    if headline.is_empty() {
        return Err(Error::invalid("headline features need a non-empty headline"));
    }
    // `` and '' are the usual tokenizer renderings of double quotes
    let text = headline
        .iter()
        .map(|t| if t == "``" || t == "''" { "\"" } else { t.as_str() })
        .collect::<Vec<_>>()
        .join(" ");
    let lower: Vec<String> = headline.iter().map(|t| t.to_lowercase()).collect();
    let chars: Vec<char> = text.chars().collect();
    let token_chars: usize = headline.iter().map(|t| t.chars().count()).sum();

    let quotes = chars.iter().filter(|&&c| is_quote(c)).count();
    let full = quotes == 2 && chars.len() >= 2 && is_quote(chars[0]) && is_quote(chars[chars.len() - 1]);
    let any = |set: &HashSet<String>| lower.iter().any(|t| set.contains(t));

    Ok(HeadlineFeatures {
        h1_char_length: token_chars + headline.len() - 1,
        h2_avg_token_chars: token_chars as f64 / headline.len() as f64,
        h3_has_question: text.contains('?'),
        h4_partial_quote: quotes >= 2 && !full,
        h5_full_quote: full,
        h6_signal_word: any(&lex.signal),
        h7_pronoun: any(&lex.pronouns),
        h8_sentiment_word: any(&lex.sentiment) || any(&lex.negative),
        h9_negative_word: any(&lex.negative),
        h10_has_number: headline.iter().any(|t| is_number(t)),
        h11_starts_with_pronoun: lex.pronouns.contains(&lower[0]),
    })
}
