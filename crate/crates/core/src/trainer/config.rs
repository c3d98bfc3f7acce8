use std::fmt::Write as _;
use std::fs;
use std::path::Path;
use std::str::FromStr;

use crate::abstractor::AbstractorConfig;
use crate::autodiff::Adam;
use crate::corpus::SynthConfig;
use crate::error::{Error, Result};
use crate::extractor::ExtractorConfig;
use crate::par::Parallelism;
use crate::predictor::PredictorConfig;
use crate::topics::{LdaParams, TopicSettings};

/// Every tunable of a run. Text form is `key = value` per line with `#`
/// comments; unknown keys are rejected.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    pub seed: Option<u64>,

    pub synth_docs: usize,
    pub synth_sentences: usize,
    pub synth_topics: usize,
    pub vocab_cap: usize,

    pub lda_k: usize,
    pub lda_iterations: usize,
    pub lda_infer_iterations: usize,
    pub retrieval_m: usize,

    pub embed_dim: usize,
    pub hidden: usize,
    pub filters: usize,
    pub attn_dim: usize,
    pub critic_hidden: usize,
    pub max_sentence_len: usize,
    pub max_article_len: usize,
    pub max_headline_len: usize,

    pub lr: f64,
    pub clip_norm: f64,
    pub batch_size: usize,
    pub extractor_epochs: usize,
    pub abstractor_epochs: usize,
    pub predictor_epochs: usize,

    pub rl_steps: usize,
    pub rl_batch_size: usize,
    pub rl_lr: f64,
    pub critic_lr: f64,
    pub lambda_pop: f64,
    pub lambda_a: f64,

    pub use_pta_features: bool,
    pub use_pta_loss: bool,
    pub use_pop_reward: bool,
    pub joint_abstractor_rl: bool,

    pub parallel: bool,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: None,
            synth_docs: 2400,
            synth_sentences: 6,
            synth_topics: 6,
            vocab_cap: 20_000,
            lda_k: 16,
            lda_iterations: 200,
            lda_infer_iterations: 20,
            retrieval_m: 5,
            embed_dim: 32,
            hidden: 32,
            filters: 20,
            attn_dim: 32,
            critic_hidden: 64,
            max_sentence_len: 30,
            max_article_len: 100,
            max_headline_len: 30,
            lr: 1e-3,
            clip_norm: 2.0,
            batch_size: 32,
            extractor_epochs: 6,
            abstractor_epochs: 8,
            predictor_epochs: 4,
            rl_steps: 300,
            rl_batch_size: 32,
            rl_lr: 2e-4,
            critic_lr: 1e-3,
            lambda_pop: 1.0,
            lambda_a: 1.0,
            use_pta_features: true,
            use_pta_loss: true,
            use_pop_reward: true,
            joint_abstractor_rl: true,
            parallel: true,
        }
    }
}

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .parse()
        .map_err(|_| Error::Config { key: key.to_string(), message: format!("cannot parse `{value}`") })
}

macro_rules! config_keys {
    ($($field:ident),* $(,)?) => {
        impl RunConfig {
            pub const KEYS: &'static [&'static str] = &["seed", $(stringify!($field)),*];

            /// Applies one `key = value` assignment.
            pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
                let value = value.trim();
                match key.trim() {
                    "seed" => self.seed = Some(parse("seed", value)?),
                    $(stringify!($field) => self.$field = parse(stringify!($field), value)?,)*
                    other => {
                        return Err(Error::Config { key: other.to_string(), message: "unknown key".into() })
                    }
                }
                Ok(())
            }

            /// Canonical text form; parsing it back yields the same config.
            pub fn to_text(&self) -> String {
                let mut s = String::new();
                if let Some(seed) = self.seed {
                    let _ = writeln!(s, "seed = {seed}");
                }
                $(let _ = writeln!(s, "{} = {}", stringify!($field), self.$field);)*
                s
            }
        }
    };
}

config_keys!(
    synth_docs, synth_sentences, synth_topics, vocab_cap,
    lda_k, lda_iterations, lda_infer_iterations, retrieval_m,
    embed_dim, hidden, filters, attn_dim, critic_hidden,
    max_sentence_len, max_article_len, max_headline_len,
    lr, clip_norm, batch_size, extractor_epochs, abstractor_epochs, predictor_epochs,
    rl_steps, rl_batch_size, rl_lr, critic_lr, lambda_pop, lambda_a,
    use_pta_features, use_pta_loss, use_pop_reward, joint_abstractor_rl,
    parallel,
);

impl RunConfig {
    pub fn parse_text(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| Error::Config {
                key: line.to_string(),
                message: format!("line {} is not `key = value`", n + 1),
            })?;
            cfg.set(k, v)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        Self::parse_text(&fs::read_to_string(path)?)
    }

    /// Applies `key=value` overrides, then re-validates.
    pub fn apply_overrides<S: AsRef<str>>(&mut self, overrides: &[S]) -> Result<()> {
        for o in overrides {
            let o = o.as_ref();
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| Error::Config { key: o.to_string(), message: "override must be key=value".into() })?;
            self.set(k, v)?;
        }
        self.validate()
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("synth_docs", self.synth_docs),
            ("synth_sentences", self.synth_sentences),
            ("vocab_cap", self.vocab_cap),
            ("lda_iterations", self.lda_iterations),
            ("retrieval_m", self.retrieval_m),
            ("embed_dim", self.embed_dim),
            ("hidden", self.hidden),
            ("filters", self.filters),
            ("attn_dim", self.attn_dim),
            ("critic_hidden", self.critic_hidden),
            ("max_sentence_len", self.max_sentence_len),
            ("max_article_len", self.max_article_len),
            ("max_headline_len", self.max_headline_len),
            ("batch_size", self.batch_size),
            ("rl_batch_size", self.rl_batch_size),
        ];
        for (k, v) in positive {
            if v == 0 {
                return Err(Error::Config { key: k.into(), message: "must be positive".into() });
            }
        }
        if self.lda_k < 2 {
            return Err(Error::Config { key: "lda_k".into(), message: "must be at least 2".into() });
        }
        if self.max_headline_len > crate::abstractor::MAX_HEADLINE_LEN {
            return Err(Error::Config { key: "max_headline_len".into(), message: "cannot exceed 30".into() });
        }
        for (k, v) in [("lr", self.lr), ("rl_lr", self.rl_lr), ("critic_lr", self.critic_lr), ("clip_norm", self.clip_norm)] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config { key: k.into(), message: "must be a positive number".into() });
            }
        }
        if !(0.0..=1.0).contains(&self.lambda_pop) {
            return Err(Error::Config { key: "lambda_pop".into(), message: "must lie in [0, 1] so rewards stay in [0, 2]".into() });
        }
        if !(self.lambda_a >= 0.0 && self.lambda_a.is_finite()) {
            return Err(Error::Config { key: "lambda_a".into(), message: "must be non-negative".into() });
        }
        Ok(())
    }

    pub fn require_seed(&self) -> Result<u64> {
        self.seed.ok_or_else(|| Error::Config { key: "seed".into(), message: "a seed is required for this command".into() })
    }

    pub fn parallelism(&self) -> Parallelism {
        if self.parallel {
            Parallelism::available()
        } else {
            Parallelism::Sequential
        }
    }

    pub fn optimizer(&self, lr: f64) -> Adam {
        Adam { lr, clip_norm: self.clip_norm, ..Adam::default() }
    }

    pub fn synth(&self) -> SynthConfig {
        SynthConfig { n_docs: self.synth_docs, sentences_per_doc: self.synth_sentences, n_topics: self.synth_topics, ..SynthConfig::default() }
    }

    pub fn topic_settings(&self) -> TopicSettings {
        TopicSettings {
            lda: LdaParams { iterations: self.lda_iterations, ..LdaParams::with_k(self.lda_k) },
            infer_iterations: self.lda_infer_iterations,
            retrieval_m: self.retrieval_m,
        }
    }

    pub fn extractor(&self) -> ExtractorConfig {
        ExtractorConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            filters: self.filters,
            attn_dim: self.attn_dim,
            max_sentence_len: self.max_sentence_len,
            kernel_widths: vec![1, 2, 3],
        }
    }

    pub fn abstractor(&self) -> AbstractorConfig {
        AbstractorConfig {
            embed_dim: self.embed_dim,
            hidden: self.hidden,
            attn_dim: self.attn_dim,
            max_source_len: self.max_sentence_len,
            max_target_len: self.max_headline_len,
        }
    }

    pub fn predictor(&self) -> PredictorConfig {
        PredictorConfig {
            embed_dim: self.embed_dim,
            filters: self.filters,
            hidden: self.hidden,
            attn_dim: self.attn_dim,
            max_len: self.max_headline_len,
            kernel_widths: vec![1, 2, 3],
        }
    }

    /// Settings tuned for the planted synthetic corpus: one topic per
    /// content cluster plus one for the marker tokens.
    pub fn synthetic_defaults() -> Self {
        let base = Self::default();
        Self { lda_k: base.synth_topics + 1, ..base }
    }
}
