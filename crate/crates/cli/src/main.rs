//! `headline`: staged command-line runs with file handoffs in one output
//! directory.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use headline_core::abstractor::{self, Abstractor};
use headline_core::analysis::{
    attractiveness_rate, evaluation_table, feature_summary, headline_features, significance_report, write_evaluation_csv,
    write_features_csv, write_significance_csv, Lexicons, MethodOutputs,
};
use headline_core::autodiff::{grad_check, load_checkpoint, save_checkpoint, GradCheckOptions, ParamStore, Tape};
use headline_core::baselines::{bm25_headline, prefix_headline, random_headline, seq2seq_approx_headline, Bm25Index, Bm25Params};
use headline_core::corpus::{generate_synthetic_corpus, ingest, write_corpus, Document, Split, Vocabulary};
use headline_core::extractor::{self, Extractor};
use headline_core::labels::{build_labels, load_labels, save_labels};
use headline_core::predictor::{self, export_attention_heatmap, write_heatmap_csv, Predictor};
use headline_core::topics::{annotate_corpus, load_doc_topics, load_index, save_doc_topics, save_index, train_corpus_model, TopicModel};
use headline_core::trainer::{
    self, generate_headlines, new_critic, pretrain_abstractor, pretrain_extractor, read_generations, run_rl, train_predictor,
    write_generations, Critic, PreparedCorpus, RewardLog, RunConfig,
};

#[derive(Parser, Debug)]
#[command(name = "headline", version, about = "Popularity-reinforced headline generation")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// key = value configuration file
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Directory holding every artifact of a run
    #[arg(long, default_value = "run")]
    out: PathBuf,
    /// Override one configuration key (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Validate a corpus file and copy it into the run directory
    Ingest {
        input: PathBuf,
        #[command(flatten)]
        common: Common,
    },
    /// Generate the synthetic corpus
    Synth(Common),
    /// Build the vocabulary, train LDA and annotate topics
    TrainLda(Common),
    /// Compute extractor proxy labels
    BuildLabels(Common),
    /// Pretrain the sentence extractor on the proxy labels
    PretrainExtractor(Common),
    /// Pretrain the sentence-to-headline abstractor
    PretrainAbstractor(Common),
    /// Train the headline popularity predictor
    TrainPredictor(Common),
    /// Actor-critic phase starting from the pretrained checkpoints
    TrainRl(Common),
    /// Headlines for the test split
    Generate(Common),
    /// ROUGE, copy rate and attractiveness for the system and baselines
    Evaluate(Common),
    /// Hypothesis features, significance tests and attention heatmap
    Analyze {
        /// Directory with replacement lexicon files
        #[arg(long)]
        lexicons: Option<PathBuf>,
        #[command(flatten)]
        common: Common,
    },
    /// Finite-difference check of every training loss on small networks
    GradCheck(Common),
}

mod files {
    pub const CORPUS: &str = "corpus.jsonl";
    pub const VOCAB: &str = "vocab.txt";
    pub const LDA: &str = "lda.json";
    pub const INDEX: &str = "index.jsonl";
    pub const TOPICS: &str = "topics.jsonl";
    pub const LABELS: &str = "labels.jsonl";
    pub const EXTRACTOR: &str = "extractor.ckpt";
    pub const ABSTRACTOR: &str = "abstractor.ckpt";
    pub const PREDICTOR: &str = "predictor.ckpt";
    pub const EXTRACTOR_RL: &str = "extractor.rl.ckpt";
    pub const ABSTRACTOR_RL: &str = "abstractor.rl.ckpt";
    pub const CRITIC: &str = "critic.ckpt";
    pub const EVALUATION: &str = "evaluation.csv";
    pub const ATTRACTIVENESS: &str = "attractiveness.csv";
    pub const SIGNIFICANCE: &str = "significance.csv";
    pub const FEATURES: &str = "features.csv";
    pub const HEATMAP: &str = "heatmap.csv";
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = c.seed {
        cfg.seed = Some(seed);
    }
    cfg.apply_overrides(&c.set)?;
    Ok(cfg)
}

fn need(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(name);
    if !p.exists() {
        bail!(headline_core::Error::MissingFile(p));
    }
    Ok(p)
}

fn load_corpus(dir: &Path) -> Result<Vec<Document>> {
    Ok(ingest(&need(dir, files::CORPUS)?)?)
}

fn load_prepared(dir: &Path) -> Result<PreparedCorpus> {
    let docs = load_corpus(dir)?;
    let vocab = Vocabulary::load(&need(dir, files::VOCAB)?)?;
    let model = TopicModel::load(&need(dir, files::LDA)?)?;
    let index = load_index(&need(dir, files::INDEX)?)?;
    let topics = load_doc_topics(&need(dir, files::TOPICS)?)?;
    let labels = load_labels(&need(dir, files::LABELS)?)?;
    Ok(PreparedCorpus::from_parts(docs, vocab, model, index, topics, labels)?)
}

fn load_store(dir: &Path, name: &str, network: &str) -> Result<ParamStore> {
    let (net, store) = load_checkpoint(&need(dir, name)?)?;
    if net != network {
        bail!("{} holds a `{net}` network, expected `{network}`", dir.join(name).display());
    }
    Ok(store)
}

fn load_extractor(dir: &Path, name: &str, prep: &PreparedCorpus, cfg: &RunConfig) -> Result<Extractor> {
    let store = load_store(dir, name, extractor::NETWORK)?;
    Ok(Extractor::from_store(cfg.extractor(), prep.vocab.len(), prep.n_topics(), &store)?)
}

fn load_abstractor(dir: &Path, name: &str, prep: &PreparedCorpus, cfg: &RunConfig) -> Result<Abstractor> {
    let store = load_store(dir, name, abstractor::NETWORK)?;
    Ok(Abstractor::from_store(cfg.abstractor(), prep.vocab.len(), &store)?)
}

fn load_predictor(dir: &Path, prep: &PreparedCorpus, cfg: &RunConfig) -> Result<Predictor> {
    let store = load_store(dir, files::PREDICTOR, predictor::NETWORK)?;
    Ok(Predictor::from_store(cfg.predictor(), prep.vocab.len(), &store)?)
}

/// RL checkpoint when present, else the pretrained one.
fn latest(dir: &Path, rl: &str, pre: &'static str) -> String {
    if dir.join(rl).exists() {
        rl.to_string()
    } else {
        pre.to_string()
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest { input, common } => {
            let docs = ingest(&input)?;
            std::fs::create_dir_all(&common.out)?;
            write_corpus(&common.out.join(files::CORPUS), &docs)?;
            log::info!("ingested {} documents", docs.len());
        }
        Command::Synth(c) => {
            let cfg = load_config(&c)?;
            let docs = generate_synthetic_corpus(cfg.require_seed()?, &cfg.synth())?;
            std::fs::create_dir_all(&c.out)?;
            write_corpus(&c.out.join(files::CORPUS), &docs)?;
            log::info!("wrote {} synthetic documents", docs.len());
        }
        Command::TrainLda(c) => {
            let cfg = load_config(&c)?;
            let seed = cfg.require_seed()?;
            let docs = load_corpus(&c.out)?;
            let vocab = Vocabulary::build(&docs, cfg.vocab_cap)?;
            let settings = cfg.topic_settings();
            let model = train_corpus_model(&docs, &vocab, &settings, seed)?;
            let (index, topics) = annotate_corpus(&model, &vocab, &docs, &settings, seed, cfg.parallelism())?;
            vocab.save(&c.out.join(files::VOCAB))?;
            model.save(&c.out.join(files::LDA))?;
            save_index(&c.out.join(files::INDEX), &index)?;
            save_doc_topics(&c.out.join(files::TOPICS), &topics)?;
        }
        Command::BuildLabels(c) => {
            let cfg = load_config(&c)?;
            let docs = load_corpus(&c.out)?;
            let topics = load_doc_topics(&need(&c.out, files::TOPICS)?)?;
            let labels = build_labels(&docs, &topics, cfg.parallelism())?;
            save_labels(&c.out.join(files::LABELS), &labels)?;
        }
        Command::PretrainExtractor(c) => {
            let cfg = load_config(&c)?;
            let prep = load_prepared(&c.out)?;
            let (net, report) = pretrain_extractor(&prep, &cfg)?;
            log::info!("extractor: {} updates, {} log-floor hits", report.updates, report.floor_hits);
            save_checkpoint(&c.out.join(files::EXTRACTOR), extractor::NETWORK, &net.params)?;
        }
        Command::PretrainAbstractor(c) => {
            let cfg = load_config(&c)?;
            let prep = load_prepared(&c.out)?;
            let (net, report) = pretrain_abstractor(&prep, &cfg)?;
            log::info!("abstractor: {} updates, {} unknown target tokens", report.updates, report.unk_targets);
            save_checkpoint(&c.out.join(files::ABSTRACTOR), abstractor::NETWORK, &net.params)?;
        }
        Command::TrainPredictor(c) => {
            let cfg = load_config(&c)?;
            let prep = load_prepared(&c.out)?;
            let (net, report) = train_predictor(&prep, &cfg)?;
            if let Some(acc) = report.val_accuracy {
                log::info!("predictor validation accuracy {acc:.4}");
            }
            save_checkpoint(&c.out.join(files::PREDICTOR), predictor::NETWORK, &net.params)?;
        }
        Command::TrainRl(c) => {
            let cfg = load_config(&c)?;
            cfg.require_seed()?;
            let prep = load_prepared(&c.out)?;
            let mut ext = load_extractor(&c.out, files::EXTRACTOR, &prep, &cfg)?;
            let mut abs = load_abstractor(&c.out, files::ABSTRACTOR, &prep, &cfg)?;
            let pred = load_predictor(&c.out, &prep, &cfg)?;
            let mut critic = new_critic(&ext, &cfg)?;
            let mut log = RewardLog::to_file(&c.out.join(trainer::REWARD_LOG_FILE))?;
            run_rl(&prep, &cfg, &mut ext, &mut abs, &pred, &mut critic, &mut log)?;
            save_checkpoint(&c.out.join(files::EXTRACTOR_RL), extractor::NETWORK, &ext.params)?;
            save_checkpoint(&c.out.join(files::ABSTRACTOR_RL), abstractor::NETWORK, &abs.params)?;
            save_checkpoint(&c.out.join(files::CRITIC), trainer::CRITIC_NETWORK, &critic.params)?;
        }
        Command::Generate(c) => {
            let cfg = load_config(&c)?;
            let prep = load_prepared(&c.out)?;
            let ext = load_extractor(&c.out, &latest(&c.out, files::EXTRACTOR_RL, files::EXTRACTOR), &prep, &cfg)?;
            let abs = load_abstractor(&c.out, &latest(&c.out, files::ABSTRACTOR_RL, files::ABSTRACTOR), &prep, &cfg)?;
            let gens = generate_headlines(&prep, &cfg, &ext, &abs, Split::Test)?;
            write_generations(&c.out.join(trainer::GENERATIONS_FILE), &gens)?;
        }
        Command::Evaluate(c) => evaluate(&c)?,
        Command::Analyze { lexicons, common } => analyze(&common, lexicons.as_deref())?,
        Command::GradCheck(c) => grad_check_all(&load_config(&c)?)?,
    }
    Ok(())
}

fn evaluate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let gens = read_generations(&c.out.join(trainer::GENERATIONS_FILE))?;
    let prep = load_prepared(&c.out)?;
    let pred = load_predictor(&c.out, &prep, &cfg)?;
    let abs = load_abstractor(&c.out, files::ABSTRACTOR, &prep, &cfg)?;
    let seed = cfg.seed.unwrap_or(0);

    let test: Vec<&Document> = prep.docs.iter().filter(|d| d.split == Split::Test).collect();
    let train_heads: Vec<Vec<String>> = prep.docs.iter().filter(|d| d.split == Split::Train).map(|d| d.headline.clone()).collect();
    let index = Bm25Index::build(train_heads, Bm25Params::default())?;
    let article = |d: &Document| d.article_tokens().cloned().collect::<Vec<String>>();

    let mut methods = vec![MethodOutputs { name: "porl-hg".into(), outputs: gens.iter().map(|g| (g.id.clone(), g.tokens.clone())).collect() }];
    let mut baseline = |name: &str, f: &dyn Fn(&Document) -> headline_core::Result<Vec<String>>| -> Result<()> {
        let outputs = test.iter().map(|d| Ok((d.id.clone(), f(d)?))).collect::<headline_core::Result<Vec<_>>>()?;
        methods.push(MethodOutputs { name: name.into(), outputs });
        Ok(())
    };
    baseline("prefix", &|d| prefix_headline(d))?;
    baseline("random", &|d| random_headline(d, seed))?;
    baseline("ir-bm25", &|d| bm25_headline(&article(d), &index))?;
    baseline("seq2seq-approx", &|d| seq2seq_approx_headline(&abs, d, &prep.vocab, cfg.max_article_len))?;

    let references: Vec<(String, Vec<String>)> = test.iter().map(|d| (d.id.clone(), d.headline.clone())).collect();
    let sources: Vec<(String, Vec<String>)> = test.iter().map(|d| (d.id.clone(), article(d))).collect();
    let rows = evaluation_table(&methods, &references, &sources)?;
    write_evaluation_csv(&c.out.join(files::EVALUATION), &rows)?;

    let mut attr = String::from("method,attractiveness\n");
    let gt: Vec<Vec<String>> = test.iter().map(|d| d.headline.clone()).collect();
    attr.push_str(&format!("ground-truth,{:.4}\n", attractiveness_rate(&gt, &pred, &prep.vocab)?));
    for m in &methods {
        let heads: Vec<Vec<String>> = m.outputs.iter().map(|(_, t)| t.clone()).collect();
        attr.push_str(&format!("{},{:.4}\n", m.name, attractiveness_rate(&heads, &pred, &prep.vocab)?));
    }
    std::fs::write(c.out.join(files::ATTRACTIVENESS), attr)?;
    for r in &rows {
        println!("{:<16} R-1 {:6.2}  R-2 {:6.2}  R-L {:6.2}  CP {:6.2}", r.method, r.rouge_1, r.rouge_2, r.rouge_l, r.copy_rate);
    }
    Ok(())
}

fn analyze(c: &Common, lexicon_dir: Option<&Path>) -> Result<()> {
    let lex = match lexicon_dir {
        Some(d) => Lexicons::load_dir(d)?,
        None => Lexicons::bundled(),
    };
    let docs = load_corpus(&c.out)?;
    let pop = trainer::popularity_by_doc(&docs)?;
    let (mut popular, mut unpopular) = (Vec::new(), Vec::new());
    for (d, p) in docs.iter().zip(&pop) {
        match p {
            Some(1) => popular.push(headline_features(&d.headline, &lex)?),
            Some(_) => unpopular.push(headline_features(&d.headline, &lex)?),
            None => {}
        }
    }
    let rows = significance_report(&popular, &unpopular)?;
    write_significance_csv(&c.out.join(files::SIGNIFICANCE), &rows)?;

    let test_gt: Vec<_> = docs
        .iter()
        .filter(|d| d.split == Split::Test)
        .map(|d| headline_features(&d.headline, &lex))
        .collect::<headline_core::Result<_>>()?;
    let mut summary = vec![("ground-truth".to_string(), feature_summary(&test_gt))];
    let gen_path = c.out.join(trainer::GENERATIONS_FILE);
    if gen_path.exists() {
        let gens = read_generations(&gen_path)?;
        let f: Vec<_> = gens.iter().map(|g| headline_features(&g.tokens, &lex)).collect::<headline_core::Result<_>>()?;
        summary.push(("porl-hg".to_string(), feature_summary(&f)));
    }
    write_features_csv(&c.out.join(files::FEATURES), &summary)?;

    if c.out.join(files::PREDICTOR).exists() {
        let cfg = load_config(c)?;
        let prep = load_prepared(&c.out)?;
        let pred = load_predictor(&c.out, &prep, &cfg)?;
        let heads: Vec<Vec<String>> = docs.iter().filter(|d| d.split == Split::Test).take(20).map(|d| d.headline.clone()).collect();
        write_heatmap_csv(&c.out.join(files::HEATMAP), &export_attention_heatmap(&pred, &heads, &prep.vocab)?)?;
    }
    for r in &rows {
        println!("{:<4} p = {:.4}{}", r.hypothesis, r.p_value, if r.significant { " *" } else { "" });
    }
    Ok(())
}

fn grad_check_all(cfg: &RunConfig) -> Result<()> {
    use headline_core::abstractor::{AbstractorConfig, GateMode, Source};
    use headline_core::extractor::{ExtractorConfig, ExtractorInput};
    use headline_core::predictor::PredictorConfig;
    use headline_core::topics::TopicVec;

    let seed = cfg.seed.unwrap_or(0);
    let opts = GradCheckOptions { seed, ..GradCheckOptions::default() };
    let vocab = Vocabulary::from_tokens((0..10).map(|i| format!("w{i}")));
    let tv = |v: [f64; 3]| TopicVec(v.to_vec());
    let ext = Extractor::new(
        ExtractorConfig { embed_dim: 4, hidden: 3, filters: 2, attn_dim: 3, max_sentence_len: 30, kernel_widths: vec![1, 2, 3] },
        vocab.len(),
        3,
        seed,
    )?;
    let input = ExtractorInput {
        sentences: vec![vec![4, 5], vec![6, 7, 8], vec![9, 4]],
        theta_s: vec![tv([0.2, 0.5, 0.3]), tv([0.6, 0.2, 0.2]), tv([0.1, 0.1, 0.8])],
        reference: tv([0.5, 0.3, 0.2]),
    };
    let abs = Abstractor::new(
        AbstractorConfig { embed_dim: 4, hidden: 3, attn_dim: 3, max_source_len: 30, max_target_len: 30 },
        vocab.len(),
        seed,
    )?;
    let toks = |s: &str| s.split_whitespace().map(str::to_string).collect::<Vec<_>>();
    let src = Source::new(&toks("w1 w2 oov w3"), &vocab, 30)?;
    let pred = Predictor::new(
        PredictorConfig { embed_dim: 4, filters: 2, hidden: 3, attn_dim: 3, max_len: 30, kernel_widths: vec![1, 2, 3] },
        vocab.len(),
        seed,
    )?;
    let critic = Critic::new(5, 4, seed)?;

    let mut worst = 0.0f64;
    let mut report = |name: &str, r: headline_core::autodiff::GradCheckReport| {
        let e = r.max_rel_err();
        worst = worst.max(e);
        println!("{name:<28} max relative error {e:.3e}");
    };
    for pta in [false, true] {
        let r = grad_check(
            &ext.params,
            |t: &mut Tape| {
                let v = ext.forward(t, &input, pta)?;
                Ok(Extractor::pretrain_loss(t, v.probs, 0, 2, pta)?.loss)
            },
            opts,
        )?;
        report(if pta { "extractor (popular topic)" } else { "extractor (faithfulness)" }, r);
    }
    report(
        "abstractor teacher forcing",
        grad_check(&abs.params, |t: &mut Tape| Ok(abs.teacher_forced_loss(t, &src, &toks("w2 oov w9"), &vocab)?.loss), opts)?,
    );
    report(
        "abstractor self-critical",
        grad_check(
            &abs.params,
            |t: &mut Tape| {
                let lp = abs.sequence_log_prob(t, &src, &[5, vocab.len(), 3], GateMode::Learned)?;
                Ok(t.scale(lp, -0.3))
            },
            opts,
        )?,
    );
    let ids = pred.encode(&toks("w1 w5 w7"), &vocab)?;
    report("predictor", grad_check(&pred.params, |t: &mut Tape| pred.loss(t, &ids, 1), opts)?);
    let x = [0.3, -0.2, 0.5, 0.1, 0.9];
    report("critic", grad_check(&critic.params, |t: &mut Tape| critic.loss(t, &x, 0.7, 1.0), opts)?);
    if worst >= 1e-6 {
        bail!("gradient check failed: worst relative error {worst:.3e}");
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(cli).context("headline") {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
