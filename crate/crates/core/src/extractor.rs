//! Sentence extractor: CNN sentence encoder, biLSTM over sentences, popular
//! topic features, a glimpse attention hop and a pointer over sentences.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Grads, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{Document, Vocabulary, PAD};
use crate::error::{Error, Result};
use crate::nn::{BiLstm, ConvBank, Linear};
use crate::par::{self, Parallelism};
use crate::seeds;
use crate::topics::{popularity_info, DocTopics, TopicVec};

pub const NETWORK: &str = "extractor";
pub const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExtractorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub filters: usize,
    pub attn_dim: usize,
    pub max_sentence_len: usize,
    pub kernel_widths: Vec<usize>,
}

impl Default for ExtractorConfig {
    fn default() -> Self {
        Self { embed_dim: 32, hidden: 32, filters: 20, attn_dim: 32, max_sentence_len: 30, kernel_widths: vec![1, 2, 3] }
    }
}

/// One document prepared for the extractor.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorInput {
    pub sentences: Vec<Vec<u32>>,
    pub theta_s: Vec<TopicVec>,
    pub reference: TopicVec,
}

impl ExtractorInput {
    pub fn new(doc: &Document, topics: &DocTopics, vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        if topics.theta_s.len() != doc.sentences.len() {
            return Err(Error::invalid(format!(
                "document {} has {} sentences but {} sentence topic vectors",
                doc.id,
                doc.sentences.len(),
                topics.theta_s.len()
            )));
        }
        let sentences = doc
            .sentences
            .iter()
            .map(|s| vocab.encode(&s[..s.len().min(max_len)]))
            .collect();
        Ok(Self { sentences, theta_s: topics.theta_s.clone(), reference: topics.reference.theta_h.clone() })
    }

    pub fn len(&self) -> usize {
        self.sentences.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sentences.is_empty()
    }
}

/// Tape handles for one forward pass.
#[derive(Clone, Debug)]
pub struct ExtractorVars {
    pub s: Vec<Var>,
    /// Stacked features `[N, 2H + K]`.
    pub e: Var,
    pub alpha: Var,
    pub logits: Var,
    pub probs: Var,
}

/// Plain values of one forward pass.
#[derive(Clone, Debug, PartialEq)]
pub struct ExtractionOutput {
    pub s: Vec<Vec<f64>>,
    pub e: Vec<Vec<f64>>,
    pub alpha: Vec<f64>,
    pub logits: Vec<f64>,
    pub probs: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
struct Layers {
    emb: ParamId,
    conv: ConvBank,
    encoder: BiLstm,
    w: Linear,
    wg1: Linear,
    wg2: Linear,
    nu_g: Linear,
    wp1: Linear,
    wp2: Linear,
    nu_p: Linear,
    z: ParamId,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Extractor {
    pub config: ExtractorConfig,
    pub vocab_size: usize,
    pub n_topics: usize,
    pub params: ParamStore,
    layers: Layers,
}

pub struct LossOutput {
    pub loss: Var,
    pub floor_hits: usize,
}

impl Extractor {
    pub fn new(config: ExtractorConfig, vocab_size: usize, n_topics: usize, seed: u64) -> Result<Self> {
        if config.kernel_widths.is_empty() || config.max_sentence_len == 0 {
            return Err(Error::Config { key: "extractor".into(), message: "needs kernel widths and a positive sentence length".into() });
        }
        let mut rng = seeds::rng(seed, "init/extractor", &[]);
        let mut p = ParamStore::new();
        let (e, h, a) = (config.embed_dim, config.hidden, config.attn_dim);
        let d = 2 * h + n_topics;
        let emb = p.add_glorot("emb", vocab_size, e, &mut rng)?;
        let conv = ConvBank::new(&mut p, "conv", e, config.filters, &config.kernel_widths, &mut rng)?;
        let encoder = BiLstm::new(&mut p, "encoder", conv.output_dim(), h, &mut rng)?;
        let layers = Layers {
            emb,
            conv,
            encoder,
            w: Linear::new(&mut p, "ptr.w", d, a, false, &mut rng)?,
            wg1: Linear::new(&mut p, "ptr.wg1", d, a, false, &mut rng)?,
            wg2: Linear::new(&mut p, "ptr.wg2", a, a, false, &mut rng)?,
            nu_g: Linear::new(&mut p, "ptr.nu_g", a, 1, false, &mut rng)?,
            wp1: Linear::new(&mut p, "ptr.wp1", d, a, false, &mut rng)?,
            wp2: Linear::new(&mut p, "ptr.wp2", a, a, false, &mut rng)?,
            nu_p: Linear::new(&mut p, "ptr.nu_p", a, 1, false, &mut rng)?,
            z: p.add_glorot("ptr.z", 1, a, &mut rng)?,
        };
        Ok(Self { config, vocab_size, n_topics, params: p, layers })
    }

    /// Rebuilds the network around checkpointed values.
    pub fn from_store(config: ExtractorConfig, vocab_size: usize, n_topics: usize, store: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, vocab_size, n_topics, 0)?;
        net.params.load_values_from(store)?;
        Ok(net)
    }

    pub fn feature_dim(&self) -> usize {
        2 * self.config.hidden + self.n_topics
    }

    /// Contextual sentence vectors `s_k`, each `[1, 2H]`.
    pub fn encode_sentences(&self, tape: &mut Tape, sentences: &[Vec<u32>]) -> Result<Vec<Var>> {
        if sentences.is_empty() {
            return Err(Error::invalid("extractor needs at least one sentence"));
        }
        let emb = tape.param(self.layers.emb);
        let mut r = Vec::with_capacity(sentences.len());
        for (k, s) in sentences.iter().enumerate() {
            let s = &s[..s.len().min(self.config.max_sentence_len)];
            if s.iter().all(|&t| t == PAD) {
                return Err(Error::invalid(format!("sentence {k} is empty or all padding")));
            }
            let x = tape.gather(emb, s)?;
            r.push(self.layers.conv.pooled(tape, x)?);
        }
        self.layers.encoder.run(tape, &r)
    }

    /// Stacks `e_k = [s_k; θ^S_k ⊗ θ^H]`. Without a reference the topic
    /// slice is zero, which is the no-topic ablation.
    pub fn pta_features(&self, tape: &mut Tape, s: &[Var], theta_s: &[TopicVec], reference: Option<&TopicVec>) -> Result<Var> {
        if s.len() != theta_s.len() {
            return Err(Error::invalid(format!("{} sentence vectors but {} topic vectors", s.len(), theta_s.len())));
        }
        let mut rows = Vec::with_capacity(s.len());
        for (&sk, tk) in s.iter().zip(theta_s) {
            if tk.len() != self.n_topics {
                return Err(Error::invalid(format!("topic vector has length {} but the extractor expects {}", tk.len(), self.n_topics)));
            }
            let topic = match reference {
                Some(r) => popularity_info(tk, r)?,
                None => vec![0.0; self.n_topics],
            };
            let t = tape.constant(Tensor::row_vector(topic));
            rows.push(tape.concat_cols(&[sk, t])?);
        }
        tape.concat_rows(&rows)
    }

    /// Glimpse attention then pointer scores over the rows of `e`.
    pub fn pointer(&self, tape: &mut Tape, e: Var) -> Result<(Var, Var, Var)> {
        let l = &self.layers;
        let z = tape.param(l.z);
        let g1 = l.wg1.forward(tape, e)?;
        let g2 = l.wg2.forward(tape, z)?;
        let g = tape.add(g1, g2)?;
        let g = tape.tanh(g);
        let u = l.nu_g.forward(tape, g)?;
        let u = tape.transpose(u);
        let alpha = tape.softmax(u);
        let we = l.w.forward(tape, e)?;
        let c = tape.matmul(alpha, we)?;
        let p1 = l.wp1.forward(tape, e)?;
        let p2 = l.wp2.forward(tape, c)?;
        let p = tape.add(p1, p2)?;
        let p = tape.tanh(p);
        let o = l.nu_p.forward(tape, p)?;
        let logits = tape.transpose(o);
        let probs = tape.softmax(logits);
        Ok((alpha, logits, probs))
    }

    pub fn forward(&self, tape: &mut Tape, input: &ExtractorInput, use_pta_features: bool) -> Result<ExtractorVars> {
        let s = self.encode_sentences(tape, &input.sentences)?;
        let reference = use_pta_features.then_some(&input.reference);
        let e = self.pta_features(tape, &s, &input.theta_s, reference)?;
        let (alpha, logits, probs) = self.pointer(tape, e)?;
        Ok(ExtractorVars { s, e, alpha, logits, probs })
    }

    pub fn extract(&self, input: &ExtractorInput, use_pta_features: bool) -> Result<ExtractionOutput> {
        let mut tape = Tape::new(&self.params);
        let v = self.forward(&mut tape, input, use_pta_features)?;
        let e = tape.value(v.e);
        Ok(ExtractionOutput {
            s: v.s.iter().map(|&x| tape.value(x).data().to_vec()).collect(),
            e: (0..e.rows()).map(|r| e.row(r).to_vec()).collect(),
            alpha: tape.value(v.alpha).data().to_vec(),
            logits: tape.value(v.logits).data().to_vec(),
            probs: tape.value(v.probs).data().to_vec(),
        })
    }

    /// `-log P(y)`, plus `-log P(y')` when the popularity term is enabled.
    pub fn pretrain_loss(tape: &mut Tape, probs: Var, y: usize, y_prime: usize, use_pta_loss: bool) -> Result<LossOutput> {
        let n = tape.shape(probs)[1];
        if y >= n || (use_pta_loss && y_prime >= n) {
            return Err(Error::invalid(format!("label index out of range for {n} sentences")));
        }
        let mut floor_hits = 0;
        let mut nll = |tape: &mut Tape, idx: usize| -> Result<Var> {
            let p = tape.pick(probs, 0, idx)?;
            if tape.item(p) < LOG_FLOOR {
                floor_hits += 1;
            }
            let lp = tape.log_floor(p, LOG_FLOOR);
            Ok(tape.scale(lp, -1.0))
        };
        let mut loss = nll(tape, y)?;
        if use_pta_loss {
            let extra = nll(tape, y_prime)?;
            loss = tape.add(loss, extra)?;
        }
        Ok(LossOutput { loss, floor_hits })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ExtractorExample {
    pub input: ExtractorInput,
    pub y: usize,
    pub y_prime: usize,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Adam,
    pub use_pta_features: bool,
    pub use_pta_loss: bool,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self { epochs: 6, batch_size: 32, optimizer: Adam::default(), use_pta_features: true, use_pta_loss: true }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PretrainReport {
    pub epoch_loss: Vec<f64>,
    pub floor_hits: usize,
    pub updates: usize,
}

/// Shuffled minibatch order for one epoch.
pub(crate) fn epoch_order(n: usize, seed: u64, stream: &str, epoch: usize) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeds::rng(seed, stream, &[epoch as u64]));
    order
}

impl Extractor {
    /// Gradient of the mean pretraining loss over `batch`.
    pub fn batch_gradient(&self, batch: &[&ExtractorExample], cfg: &PretrainConfig, mode: Parallelism) -> Result<(Grads, f64, usize)> {
        let per_doc = par::try_map(mode, batch, |_, ex| {
            let mut tape = Tape::new(&self.params);
            let v = self.forward(&mut tape, &ex.input, cfg.use_pta_features)?;
            let out = Self::pretrain_loss(&mut tape, v.probs, ex.y, ex.y_prime, cfg.use_pta_loss)?;
            let grads = tape.backward(out.loss)?;
            Ok::<_, Error>((grads, tape.item(out.loss), out.floor_hits))
        })?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = Grads::zeros_like(&self.params);
        let (mut loss, mut hits) = (0.0, 0);
        for (g, l, h) in &per_doc {
            total.add_scaled(g, scale);
            loss += l * scale;
            hits += h;
        }
        Ok((total, loss, hits))
    }

    pub fn pretrain(&mut self, examples: &[ExtractorExample], cfg: &PretrainConfig, seed: u64, mode: Parallelism) -> Result<PretrainReport> {
        if examples.is_empty() || cfg.batch_size == 0 {
            return Err(Error::invalid("extractor pretraining needs examples and a positive batch size"));
        }
        let mut report = PretrainReport::default();
        for epoch in 0..cfg.epochs {
            let order = epoch_order(examples.len(), seed, "extractor/shuffle", epoch);
            let (mut sum, mut batches) = (0.0, 0);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&ExtractorExample> = chunk.iter().map(|&i| &examples[i]).collect();
                let (grads, loss, hits) = self
                    .batch_gradient(&batch, cfg, mode)
                    .map_err(|e| e.in_phase("pretrain-extractor", report.updates))?;
                cfg.optimizer
                    .step(&mut self.params, grads)
                    .map_err(|e| e.in_phase("pretrain-extractor", report.updates))?;
                report.updates += 1;
                report.floor_hits += hits;
                sum += loss;
                batches += 1;
            }
            let mean = sum / batches as f64;
            log::info!("extractor epoch {epoch}: loss {mean:.4}");
            report.epoch_loss.push(mean);
        }
        Ok(report)
    }

    /// Indices of the most probable sentence per document.
    pub fn predict(&self, inputs: &[ExtractorInput], use_pta_features: bool, mode: Parallelism) -> Result<Vec<usize>> {
        par::try_map(mode, inputs, |_, input| {
            let out = self.extract(input, use_pta_features)?;
            Ok(crate::nn::argmax(&out.probs))
        })
    }
}

#[cfg(test)]
mod tests;
