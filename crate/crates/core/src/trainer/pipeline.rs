//! Staged training: topics and labels, then extractor, abstractor and
//! predictor pretraining, then the actor-critic phase.

use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::rl::{train_rl, Critic, RewardLog, RewardRow, RlExample, RlModels, RlSettings};
use crate::abstractor::{self, Abstractor, AbstractorExample, AbstractorReport, AbstractorTrainConfig, GateMode, Source};
use crate::autodiff::save_checkpoint;
use crate::corpus::{median_split_labels, Document, Split, Vocabulary};
use crate::error::{Error, Result};
use crate::extractor::{self, Extractor, ExtractorExample, ExtractorInput, PretrainConfig, PretrainReport};
use crate::labels::{build_labels, ProxyLabels};
use crate::metrics::copy_rate;
use crate::nn::argmax;
use crate::par;
use crate::predictor::{self, LabeledHeadline, Predictor, PredictorReport, PredictorTrainConfig};
use crate::topics::{annotate_corpus, train_corpus_model, DocTopics, IndexEntry, TopicModel};

/// Corpus plus every derived artifact the networks train on.
#[derive(Clone, Debug)]
pub struct PreparedCorpus {
    pub docs: Vec<Document>,
    pub vocab: Vocabulary,
    pub topic_model: TopicModel,
    pub index: Vec<IndexEntry>,
    pub topics: Vec<DocTopics>,
    pub labels: Vec<ProxyLabels>,
    /// Median-split popularity label per document, when it has a count.
    pub popularity: Vec<Option<u8>>,
}

pub fn popularity_by_doc(docs: &[Document]) -> Result<Vec<Option<u8>>> {
    let labels: HashMap<String, u8> = median_split_labels(docs)?.into_iter().map(|l| (l.id, l.label)).collect();
    Ok(docs.iter().map(|d| labels.get(&d.id).copied()).collect())
}

/// Builds the vocabulary, trains LDA, annotates topics and proxy labels.
pub fn prepare_corpus(docs: Vec<Document>, cfg: &RunConfig) -> Result<PreparedCorpus> {
    let seed = cfg.require_seed()?;
    let mode = cfg.parallelism();
    let vocab = Vocabulary::build(&docs, cfg.vocab_cap).map_err(|e| e.in_phase("vocabulary", 0))?;
    let settings = cfg.topic_settings();
    let topic_model = train_corpus_model(&docs, &vocab, &settings, seed).map_err(|e| e.in_phase("lda", 0))?;
    let (index, topics) = annotate_corpus(&topic_model, &vocab, &docs, &settings, seed, mode).map_err(|e| e.in_phase("annotate", 0))?;
    let labels = build_labels(&docs, &topics, mode).map_err(|e| e.in_phase("labels", 0))?;
    let popularity = popularity_by_doc(&docs)?;
    Ok(PreparedCorpus { docs, vocab, topic_model, index, topics, labels, popularity })
}

impl PreparedCorpus {
    /// Reassembles a prepared corpus from saved artifacts, checking that
    /// they line up document by document.
    pub fn from_parts(
        docs: Vec<Document>,
        vocab: Vocabulary,
        topic_model: TopicModel,
        index: Vec<IndexEntry>,
        topics: Vec<DocTopics>,
        labels: Vec<ProxyLabels>,
    ) -> Result<Self> {
        if docs.len() != topics.len() || docs.len() != labels.len() {
            return Err(Error::invalid("corpus, topic and label files have different lengths"));
        }
        for ((d, t), l) in docs.iter().zip(&topics).zip(&labels) {
            if d.id != t.id || d.id != l.id {
                return Err(Error::invalid(format!("artifacts are misaligned at document {}", d.id)));
            }
        }
        let popularity = popularity_by_doc(&docs)?;
        Ok(Self { docs, vocab, topic_model, index, topics, labels, popularity })
    }

    pub fn n_topics(&self) -> usize {
        self.topic_model.k
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.docs.len()).filter(|&i| self.docs[i].split == split).collect()
    }

    pub fn extractor_input(&self, i: usize, cfg: &RunConfig) -> Result<ExtractorInput> {
        ExtractorInput::new(&self.docs[i], &self.topics[i], &self.vocab, cfg.max_sentence_len)
    }

    pub fn extractor_examples(&self, split: Split, cfg: &RunConfig) -> Result<Vec<ExtractorExample>> {
        self.split_indices(split)
            .into_iter()
            .map(|i| {
                Ok(ExtractorExample { input: self.extractor_input(i, cfg)?, y: self.labels[i].y, y_prime: self.labels[i].y_prime })
            })
            .collect()
    }

    pub fn sources(&self, i: usize, cfg: &RunConfig) -> Result<Vec<Source>> {
        self.docs[i].sentences.iter().map(|s| Source::new(s, &self.vocab, cfg.max_sentence_len)).collect()
    }

    /// Faithfulness sentence paired with the reference headline.
    pub fn abstractor_examples(&self, split: Split, cfg: &RunConfig) -> Result<Vec<AbstractorExample>> {
        self.split_indices(split)
            .into_iter()
            .map(|i| {
                let d = &self.docs[i];
                Ok(AbstractorExample {
                    source: Source::new(&d.sentences[self.labels[i].y], &self.vocab, cfg.max_sentence_len)?,
                    target: d.headline.clone(),
                })
            })
            .collect()
    }

    pub fn predictor_examples(&self, split: Split) -> Vec<LabeledHeadline> {
        self.split_indices(split)
            .into_iter()
            .filter_map(|i| self.popularity[i].map(|label| LabeledHeadline { tokens: self.docs[i].headline.clone(), label }))
            .collect()
    }

    /// RL examples whose `doc_index` is their position in the returned list.
    pub fn rl_examples(&self, split: Split, cfg: &RunConfig) -> Result<Vec<RlExample>> {
        self.split_indices(split)
            .into_iter()
            .enumerate()
            .map(|(k, i)| {
                Ok(RlExample {
                    doc_index: k,
                    doc_id: self.docs[i].id.clone(),
                    input: self.extractor_input(i, cfg)?,
                    theta_d: self.topics[i].theta_d.clone(),
                    sources: self.sources(i, cfg)?,
                    headline: self.docs[i].headline.clone(),
                    y: self.labels[i].y,
                })
            })
            .collect()
    }
}

pub fn extractor_pretrain_config(cfg: &RunConfig) -> PretrainConfig {
    PretrainConfig {
        epochs: cfg.extractor_epochs,
        batch_size: cfg.batch_size,
        optimizer: cfg.optimizer(cfg.lr),
        use_pta_features: cfg.use_pta_features,
        use_pta_loss: cfg.use_pta_loss,
    }
}

pub fn pretrain_extractor(prep: &PreparedCorpus, cfg: &RunConfig) -> Result<(Extractor, PretrainReport)> {
    let seed = cfg.require_seed()?;
    let examples = prep.extractor_examples(Split::Train, cfg).map_err(|e| e.in_phase("pretrain-extractor", 0))?;
    let mut net = Extractor::new(cfg.extractor(), prep.vocab.len(), prep.n_topics(), seed)?;
    let report = net.pretrain(&examples, &extractor_pretrain_config(cfg), seed, cfg.parallelism())?;
    Ok((net, report))
}

pub fn pretrain_abstractor(prep: &PreparedCorpus, cfg: &RunConfig) -> Result<(Abstractor, AbstractorReport)> {
    let seed = cfg.require_seed()?;
    let examples = prep.abstractor_examples(Split::Train, cfg).map_err(|e| e.in_phase("pretrain-abstractor", 0))?;
    let mut net = Abstractor::new(cfg.abstractor(), prep.vocab.len(), seed)?;
    let train = AbstractorTrainConfig { epochs: cfg.abstractor_epochs, batch_size: cfg.batch_size, optimizer: cfg.optimizer(cfg.lr) };
    let report = net.pretrain(&examples, &prep.vocab, &train, seed, cfg.parallelism())?;
    Ok((net, report))
}

pub fn train_predictor(prep: &PreparedCorpus, cfg: &RunConfig) -> Result<(Predictor, PredictorReport)> {
    let seed = cfg.require_seed()?;
    let train = prep.predictor_examples(Split::Train);
    let val = prep.predictor_examples(Split::Val);
    let mut net = Predictor::new(cfg.predictor(), prep.vocab.len(), seed)?;
    let tc = PredictorTrainConfig { epochs: cfg.predictor_epochs, batch_size: cfg.batch_size, optimizer: cfg.optimizer(cfg.lr) };
    let report = net
        .train(&train, &val, &prep.vocab, &tc, seed, cfg.parallelism())
        .map_err(|e| e.in_phase("train-predictor", 0))?;
    Ok((net, report))
}

pub fn rl_settings(cfg: &RunConfig) -> RlSettings {
    RlSettings {
        steps: cfg.rl_steps,
        batch_size: cfg.rl_batch_size,
        policy_opt: cfg.optimizer(cfg.rl_lr),
        critic_opt: cfg.optimizer(cfg.critic_lr),
        abstractor_opt: cfg.optimizer(cfg.rl_lr),
        lambda_pop: cfg.lambda_pop,
        lambda_a: cfg.lambda_a,
        use_pta_features: cfg.use_pta_features,
        use_pop_reward: cfg.use_pop_reward,
        joint_abstractor: cfg.joint_abstractor_rl,
    }
}

/// The actor-critic phase over training documents. Optimizer moments are
/// reset first so pretraining statistics do not leak into RL steps.
pub fn run_rl(
    prep: &PreparedCorpus,
    cfg: &RunConfig,
    extractor: &mut Extractor,
    abstractor: &mut Abstractor,
    predictor: &Predictor,
    critic: &mut Critic,
    log: &mut RewardLog,
) -> Result<()> {
    let seed = cfg.require_seed()?;
    let examples = prep.rl_examples(Split::Train, cfg).map_err(|e| e.in_phase("rl", 0))?;
    extractor.params.reset_optimizer();
    abstractor.params.reset_optimizer();
    let models = RlModels { extractor, abstractor, critic, predictor, vocab: &prep.vocab };
    train_rl(models, &examples, &rl_settings(cfg), seed, cfg.parallelism(), log)
}

pub fn new_critic(extractor: &Extractor, cfg: &RunConfig) -> Result<Critic> {
    Critic::new(extractor.feature_dim(), cfg.critic_hidden, cfg.require_seed()?)
}

/// One evaluation headline.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenerationRecord {
    pub id: String,
    pub sentence_index: usize,
    pub tokens: Vec<String>,
    pub copy_rate: f64,
    pub log_prob_sum: f64,
}

/// Most probable sentence of each document, rewritten by greedy decoding.
pub fn generate_headlines(
    prep: &PreparedCorpus,
    cfg: &RunConfig,
    extractor: &Extractor,
    abstractor: &Abstractor,
    split: Split,
) -> Result<Vec<GenerationRecord>> {
    let idx = prep.split_indices(split);
    par::try_map(cfg.parallelism(), &idx, |_, &i| {
        let input = prep.extractor_input(i, cfg)?;
        let out = extractor.extract(&input, cfg.use_pta_features)?;
        let j = argmax(&out.probs);
        let src = Source::new(&prep.docs[i].sentences[j], &prep.vocab, cfg.max_sentence_len)?;
        let mut rng = crate::seeds::rng(0, "generate", &[]);
        let dec = abstractor.generate(&src, &prep.vocab, abstractor::DecodeMode::Greedy, GateMode::Learned, cfg.max_headline_len, &mut rng)?;
        Ok(GenerationRecord {
            id: prep.docs[i].id.clone(),
            sentence_index: j,
            copy_rate: copy_rate(&dec.tokens, &prep.docs[i].sentences[j])?,
            tokens: dec.tokens,
            log_prob_sum: dec.log_prob_sum,
        })
    })
}

pub fn write_generations(path: &Path, records: &[GenerationRecord]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_generations(path: &Path) -> Result<Vec<GenerationRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[derive(Debug)]
pub struct PipelineOutput {
    pub extractor: Extractor,
    pub abstractor: Abstractor,
    pub predictor: Predictor,
    pub critic: Critic,
    pub extractor_report: PretrainReport,
    pub abstractor_report: AbstractorReport,
    pub predictor_report: PredictorReport,
    pub reward_log: Vec<RewardRow>,
    pub generations: Vec<GenerationRecord>,
}

pub const REWARD_LOG_FILE: &str = "reward_log.csv";
pub const GENERATIONS_FILE: &str = "generations.jsonl";

/// All four phases in order, then test-split generation. With `out_dir`,
/// checkpoints, the reward log and generations are written there.
pub fn run_pipeline(prep: &PreparedCorpus, cfg: &RunConfig, out_dir: Option<&Path>) -> Result<PipelineOutput> {
    cfg.validate()?;
    if let Some(dir) = out_dir {
        fs::create_dir_all(dir)?;
    }
    let (mut extractor, extractor_report) = pretrain_extractor(prep, cfg)?;
    let (mut abstractor, abstractor_report) = pretrain_abstractor(prep, cfg)?;
    let (predictor, predictor_report) = train_predictor(prep, cfg)?;
    let mut critic = new_critic(&extractor, cfg)?;
    let mut log = match out_dir {
        Some(dir) => RewardLog::to_file(&dir.join(REWARD_LOG_FILE))?,
        None => RewardLog::in_memory(),
    };
    if cfg.rl_steps > 0 {
        run_rl(prep, cfg, &mut extractor, &mut abstractor, &predictor, &mut critic, &mut log)?;
    }
    let generations = generate_headlines(prep, cfg, &extractor, &abstractor, Split::Test).map_err(|e| e.in_phase("generate", 0))?;
    if let Some(dir) = out_dir {
        save_checkpoint(&dir.join("extractor.ckpt"), extractor::NETWORK, &extractor.params)?;
        save_checkpoint(&dir.join("abstractor.ckpt"), abstractor::NETWORK, &abstractor.params)?;
        save_checkpoint(&dir.join("predictor.ckpt"), predictor::NETWORK, &predictor.params)?;
        save_checkpoint(&dir.join("critic.ckpt"), super::rl::CRITIC_NETWORK, &critic.params)?;
        write_generations(&dir.join(GENERATIONS_FILE), &generations)?;
    }
    Ok(PipelineOutput {
        extractor,
        abstractor,
        predictor,
        critic,
        extractor_report,
        abstractor_report,
        predictor_report,
        reward_log: log.rows,
        generations,
    })
}
