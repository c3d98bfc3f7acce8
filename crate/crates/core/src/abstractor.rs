//! Attention encoder-decoder with a copy gate that rewrites one sentence
//! into a headline.
//!
//! Each decoder step mixes a vocabulary softmax with the attention
//! distribution over source positions: `p(w) = g·p_vocab(w) + (1-g)·Σ_{i:
//! src_i = w} a_i`. Source tokens outside the vocabulary get extended ids
//! `V + j`, so they can still be produced (and scored) through the copy path.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Grads, ParamId, ParamStore, Tape, Tensor, Var};
use crate::corpus::{Vocabulary, BOS, EOS, PAD, UNK};
use crate::error::{Error, Result};
use crate::nn::{self, BiLstm, Linear, Lstm};
use crate::par::{self, Parallelism};
use crate::seeds::{self, Rng};

pub const NETWORK: &str = "abstractor";
pub const MAX_HEADLINE_LEN: usize = 30;
const LOG_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AbstractorConfig {
    pub embed_dim: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    pub max_source_len: usize,
    pub max_target_len: usize,
}

impl Default for AbstractorConfig {
    fn default() -> Self {
        Self { embed_dim: 32, hidden: 32, attn_dim: 32, max_source_len: 30, max_target_len: MAX_HEADLINE_LEN }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum GateMode {
    #[default]
    Learned,
    /// Gate fixed at 0: every token is copied from the source.
    CopyOnly,
    /// Gate fixed at 1: the vocabulary softmax alone.
    GenerateOnly,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DecodeMode {
    Greedy,
    Sample,
}

/// A source sentence mapped into vocabulary and extended ids.
#[derive(Clone, Debug, PartialEq)]
pub struct Source {
    pub tokens: Vec<String>,
    pub ids: Vec<u32>,
    pub ext_ids: Vec<usize>,
    pub oov: Vec<String>,
}

impl Source {
    pub fn new(tokens: &[String], vocab: &Vocabulary, max_len: usize) -> Result<Self> {
        let tokens: Vec<String> = tokens.iter().take(max_len).cloned().collect();
        if tokens.is_empty() {
            return Err(Error::invalid("abstractor source is empty"));
        }
        let v = vocab.len();
        let mut oov: Vec<String> = Vec::new();
        let mut ids = Vec::with_capacity(tokens.len());
        let mut ext_ids = Vec::with_capacity(tokens.len());
        for t in &tokens {
            if vocab.contains(t) {
                let id = vocab.id(t);
                ids.push(id);
                ext_ids.push(id as usize);
            } else {
                let j = oov.iter().position(|o| o == t).unwrap_or_else(|| {
                    oov.push(t.clone());
                    oov.len() - 1
                });
                ids.push(UNK);
                ext_ids.push(v + j);
            }
        }
        Ok(Self { tokens, ids, ext_ids, oov })
    }

    fn extended_id(&self, token: &str, vocab: &Vocabulary) -> Option<usize> {
        if vocab.contains(token) {
            Some(vocab.id(token) as usize)
        } else {
            self.oov.iter().position(|o| o == token).map(|j| vocab.len() + j)
        }
    }

    /// Target ids followed by EOS, plus how many tokens fell back to UNK.
    pub fn encode_target(&self, target: &[String], vocab: &Vocabulary, max_len: usize) -> (Vec<usize>, usize) {
        let mut unk = 0;
        let mut ids: Vec<usize> = target
            .iter()
            .take(max_len)
            .map(|t| {
                self.extended_id(t, vocab).unwrap_or_else(|| {
                    unk += 1;
                    UNK as usize
                })
            })
            .collect();
        ids.push(EOS as usize);
        (ids, unk)
    }

    fn token(&self, ext: usize, vocab: &Vocabulary) -> String {
        if ext < vocab.len() {
            vocab.token(ext as u32).to_string()
        } else {
            self.oov[ext - vocab.len()].clone()
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodeResult {
    pub tokens: Vec<String>,
    /// Extended ids of the emitted tokens, EOS included when produced.
    pub ids: Vec<usize>,
    pub step_probs: Vec<f64>,
    pub gates: Vec<f64>,
    pub log_prob_sum: f64,
}

#[derive(Clone, Debug, PartialEq)]
struct Layers {
    emb: ParamId,
    encoder: BiLstm,
    init: Linear,
    decoder: Lstm,
    att_enc: Linear,
    att_dec: Linear,
    att_v: Linear,
    out_hidden: Linear,
    out_vocab: Linear,
    gate: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Abstractor {
    pub config: AbstractorConfig,
    pub vocab_size: usize,
    pub params: ParamStore,
    layers: Layers,
}

struct Encoded {
    enc: Var,
    enc_proj: Var,
    len: usize,
}

struct Step {
    state: (Var, Var),
    ctx: Var,
    vocab: Var,
    attn: Var,
    gate: Var,
}

pub struct TeacherForced {
    pub loss: Var,
    pub unk_targets: usize,
}

impl Abstractor {
    pub fn new(config: AbstractorConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        let mut rng = seeds::rng(seed, "init/abstractor", &[]);
        let mut p = ParamStore::new();
        let (e, h, a) = (config.embed_dim, config.hidden, config.attn_dim);
        let layers = Layers {
            emb: p.add_glorot("emb", vocab_size, e, &mut rng)?,
            encoder: BiLstm::new(&mut p, "encoder", e, h, &mut rng)?,
            init: Linear::new(&mut p, "init", 2 * h, h, true, &mut rng)?,
            decoder: Lstm::new(&mut p, "decoder", e + 2 * h, h, &mut rng)?,
            att_enc: Linear::new(&mut p, "att.enc", 2 * h, a, false, &mut rng)?,
            att_dec: Linear::new(&mut p, "att.dec", h, a, true, &mut rng)?,
            att_v: Linear::new(&mut p, "att.v", a, 1, false, &mut rng)?,
            out_hidden: Linear::new(&mut p, "out.hidden", 3 * h, h, true, &mut rng)?,
            out_vocab: Linear::new(&mut p, "out.vocab", h, vocab_size, true, &mut rng)?,
            gate: Linear::new(&mut p, "gate", 3 * h + e, 1, true, &mut rng)?,
        };
        Ok(Self { config, vocab_size, params: p, layers })
    }

    pub fn from_store(config: AbstractorConfig, vocab_size: usize, store: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, vocab_size, 0)?;
        net.params.load_values_from(store)?;
        Ok(net)
    }

    fn check_vocab(&self, vocab: &Vocabulary) -> Result<()> {
        if vocab.len() != self.vocab_size {
            return Err(Error::invalid(format!(
                "vocabulary has {} entries but the abstractor was built for {}",
                vocab.len(),
                self.vocab_size
            )));
        }
        Ok(())
    }

    fn encode(&self, tape: &mut Tape, src: &Source) -> Result<(Encoded, (Var, Var))> {
        let l = &self.layers;
        let emb = tape.param(l.emb);
        let x = tape.gather(emb, &src.ids)?;
        let rows: Vec<Var> = (0..src.ids.len()).map(|i| tape.row(x, i)).collect::<Result<_>>()?;
        let states = l.encoder.run(tape, &rows)?;
        let enc = tape.concat_rows(&states)?;
        let enc_proj = l.att_enc.forward(tape, enc)?;
        let mean = tape.constant(Tensor::filled(1, states.len(), 1.0 / states.len() as f64));
        let pooled = tape.matmul(mean, enc)?;
        let h0 = l.init.forward(tape, pooled)?;
        let h0 = tape.tanh(h0);
        let c0 = tape.constant(Tensor::zeros(1, self.config.hidden));
        Ok((Encoded { enc, enc_proj, len: src.ids.len() }, (h0, c0)))
    }

    fn step(&self, tape: &mut Tape, enc: &Encoded, prev: u32, state: (Var, Var), ctx: Var, gate_mode: GateMode) -> Result<Step> {
        let l = &self.layers;
        let emb = tape.param(l.emb);
        let x = tape.gather(emb, &[prev])?;
        let input = tape.concat_cols(&[x, ctx])?;
        let state = l.decoder.step(tape, input, state)?;
        let d = l.att_dec.forward(tape, state.0)?;
        let s = tape.add(enc.enc_proj, d)?;
        let s = tape.tanh(s);
        let scores = l.att_v.forward(tape, s)?;
        let scores = tape.transpose(scores);
        let attn = tape.softmax(scores);
        let ctx = tape.matmul(attn, enc.enc)?;
        let feat = tape.concat_cols(&[state.0, ctx])?;
        let hid = l.out_hidden.forward(tape, feat)?;
        let hid = tape.tanh(hid);
        let logits = l.out_vocab.forward(tape, hid)?;
        let vocab = tape.softmax(logits);
        let gate = match gate_mode {
            GateMode::Learned => {
                let gin = tape.concat_cols(&[feat, x])?;
                let g = l.gate.forward(tape, gin)?;
                tape.sigmoid(g)
            }
            GateMode::CopyOnly => tape.constant(Tensor::scalar(0.0)),
            GateMode::GenerateOnly => tape.constant(Tensor::scalar(1.0)),
        };
        Ok(Step { state, ctx, vocab, attn, gate })
    }

    /// Mixture probability of extended id `w` at one step, as a `[1, 1]`.
    fn mixture_prob(&self, tape: &mut Tape, step: &Step, src: &Source, w: usize) -> Result<Var> {
        let one_minus = tape.affine(step.gate, -1.0, 1.0);
        let mask: Vec<f64> = src.ext_ids.iter().map(|&e| if e == w { 1.0 } else { 0.0 }).collect();
        let copy = if mask.iter().any(|&m| m > 0.0) {
            let m = tape.constant(Tensor::new(mask.len(), 1, mask)?);
            let c = tape.matmul(step.attn, m)?;
            Some(tape.mul(one_minus, c)?)
        } else {
            None
        };
        let gen = if w < self.vocab_size {
            let pv = tape.pick(step.vocab, 0, w)?;
            Some(tape.mul(step.gate, pv)?)
        } else {
            None
        };
        match (gen, copy) {
            (Some(g), Some(c)) => tape.add(g, c),
            (Some(v), None) | (None, Some(v)) => Ok(v),
            (None, None) => Ok(tape.constant(Tensor::scalar(0.0))),
        }
    }

    /// Log-probabilities of each id of `target` (already EOS-terminated)
    /// under teacher forcing.
    fn target_log_probs(&self, tape: &mut Tape, src: &Source, target: &[usize], gate_mode: GateMode) -> Result<Vec<Var>> {
        if target.is_empty() {
            return Err(Error::invalid("abstractor target is empty"));
        }
        let (enc, mut state) = self.encode(tape, src)?;
        let mut ctx = tape.constant(Tensor::zeros(1, 2 * self.config.hidden));
        let mut prev = BOS;
        let mut out = Vec::with_capacity(target.len());
        for &w in target {
            let step = self.step(tape, &enc, prev, state, ctx, gate_mode)?;
            let p = self.mixture_prob(tape, &step, src, w)?;
            out.push(tape.log_floor(p, LOG_FLOOR));
            state = step.state;
            ctx = step.ctx;
            prev = if w < self.vocab_size { w as u32 } else { UNK };
        }
        Ok(out)
    }

    /// Mean negative log-likelihood of `target` followed by EOS.
    pub fn teacher_forced_loss(&self, tape: &mut Tape, src: &Source, target: &[String], vocab: &Vocabulary) -> Result<TeacherForced> {
        self.check_vocab(vocab)?;
        if target.is_empty() {
            return Err(Error::invalid("abstractor target is empty"));
        }
        let (ids, unk_targets) = src.encode_target(target, vocab, self.config.max_target_len);
        let lps = self.target_log_probs(tape, src, &ids, GateMode::Learned)?;
        let all = tape.concat_cols(&lps)?;
        let mean = tape.mean(all);
        Ok(TeacherForced { loss: tape.scale(mean, -1.0), unk_targets })
    }

    /// Sum of log-probabilities of an emitted id sequence (EOS included if
    /// it was emitted).
    pub fn sequence_log_prob(&self, tape: &mut Tape, src: &Source, ids: &[usize], gate_mode: GateMode) -> Result<Var> {
        let lps = self.target_log_probs(tape, src, ids, gate_mode)?;
        let all = tape.concat_cols(&lps)?;
        Ok(tape.sum(all))
    }

    /// Full mixture over the extended vocabulary at every teacher-forced
    /// step; used to audit that each step is a distribution.
    pub fn step_distributions(&self, src: &Source, prefix: &[usize], gate_mode: GateMode) -> Result<Vec<Vec<f64>>> {
        let mut tape = Tape::new(&self.params);
        let (enc, mut state) = self.encode(&mut tape, src)?;
        let mut ctx = tape.constant(Tensor::zeros(1, 2 * self.config.hidden));
        let mut prev = BOS;
        let mut out = Vec::new();
        for i in 0..=prefix.len() {
            let step = self.step(&mut tape, &enc, prev, state, ctx, gate_mode)?;
            out.push(self.full_mixture(&tape, &step, src));
            if let Some(&w) = prefix.get(i) {
                prev = if w < self.vocab_size { w as u32 } else { UNK };
            }
            state = step.state;
            ctx = step.ctx;
        }
        Ok(out)
    }

    fn full_mixture(&self, tape: &Tape, step: &Step, src: &Source) -> Vec<f64> {
        let g = tape.item(step.gate);
        let mut dist: Vec<f64> = tape.value(step.vocab).data().iter().map(|p| g * p).collect();
        dist.resize(self.vocab_size + src.oov.len(), 0.0);
        for (&e, &a) in src.ext_ids.iter().zip(tape.value(step.attn).data()) {
            dist[e] += (1.0 - g) * a;
        }
        dist
    }

    /// Autoregressive decoding from BOS until EOS or `max_len` tokens.
    ///
    /// PAD, BOS and UNK are never emitted, and EOS is not allowed as the
    /// first token, so every result holds between 1 and `max_len` tokens.
    pub fn generate(
        &self,
        src: &Source,
        vocab: &Vocabulary,
        mode: DecodeMode,
        gate_mode: GateMode,
        max_len: usize,
        rng: &mut Rng,
    ) -> Result<DecodeResult> {
        self.check_vocab(vocab)?;
        let max_len = max_len.clamp(1, MAX_HEADLINE_LEN);
        let mut tape = Tape::new(&self.params);
        let (enc, mut state) = self.encode(&mut tape, src)?;
        debug_assert_eq!(enc.len, src.ids.len());
        let mut ctx = tape.constant(Tensor::zeros(1, 2 * self.config.hidden));
        let mut prev = BOS;
        let mut result = DecodeResult { tokens: Vec::new(), ids: Vec::new(), step_probs: Vec::new(), gates: Vec::new(), log_prob_sum: 0.0 };
        while result.tokens.len() < max_len {
            let step = self.step(&mut tape, &enc, prev, state, ctx, gate_mode)?;
            let dist = self.full_mixture(&tape, &step, src);
            let mut masked = dist.clone();
            for id in [PAD, BOS, UNK] {
                masked[id as usize] = 0.0;
            }
            if result.tokens.is_empty() {
                masked[EOS as usize] = 0.0;
            }
            if masked.iter().all(|&p| p <= 0.0) {
                return Err(Error::NonFinite { context: "decoder produced no admissible token".into() });
            }
            let w = match mode {
                DecodeMode::Greedy => nn::argmax(&masked),
                DecodeMode::Sample => nn::sample_index(&masked, rng),
            };
            let p = dist[w];
            result.step_probs.push(p);
            result.gates.push(tape.item(step.gate));
            result.log_prob_sum += p.max(LOG_FLOOR).ln();
            result.ids.push(w);
            if w == EOS as usize {
                break;
            }
            result.tokens.push(src.token(w, vocab));
            prev = if w < self.vocab_size { w as u32 } else { UNK };
            state = step.state;
            ctx = step.ctx;
        }
        Ok(result)
    }

    /// Self-critical surrogate for the popularity loss:
    /// `-(pop(sampled) - pop(greedy)) · log p(sampled)`.
    pub fn popularity_surrogate(
        &self,
        tape: &mut Tape,
        src: &Source,
        sampled: &DecodeResult,
        pop_sampled: f64,
        pop_greedy: f64,
    ) -> Result<Var> {
        let lp = self.sequence_log_prob(tape, src, &sampled.ids, GateMode::Learned)?;
        Ok(tape.scale(lp, -(pop_sampled - pop_greedy)))
    }

    /// Decodes greedily and by sampling, scores both with `pop` and returns
    /// the surrogate along with both decodes and scores.
    pub fn popularity_loss_step<F>(&self, tape: &mut Tape, src: &Source, vocab: &Vocabulary, rng: &mut Rng, pop: F) -> Result<PopularityStep>
    where
        F: Fn(&[String]) -> Result<f64>,
    {
        let sampled = self.generate(src, vocab, DecodeMode::Sample, GateMode::Learned, self.config.max_target_len, rng)?;
        let greedy = self.generate(src, vocab, DecodeMode::Greedy, GateMode::Learned, self.config.max_target_len, rng)?;
        let (ps, pg) = (pop(&sampled.tokens)?, pop(&greedy.tokens)?);
        let loss = self.popularity_surrogate(tape, src, &sampled, ps, pg)?;
        Ok(PopularityStep { loss, sampled, greedy, pop_sampled: ps, pop_greedy: pg })
    }
}

pub struct PopularityStep {
    pub loss: Var,
    pub sampled: DecodeResult,
    pub greedy: DecodeResult,
    pub pop_sampled: f64,
    pub pop_greedy: f64,
}

/// A (source sentence, reference headline) training pair.
#[derive(Clone, Debug, PartialEq)]
pub struct AbstractorExample {
    pub source: Source,
    pub target: Vec<String>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AbstractorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Adam,
}

impl Default for AbstractorTrainConfig {
    fn default() -> Self {
        Self { epochs: 8, batch_size: 32, optimizer: Adam::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct AbstractorReport {
    pub epoch_loss: Vec<f64>,
    pub unk_targets: usize,
    pub updates: usize,
}

impl Abstractor {
    pub fn batch_gradient(&self, batch: &[&AbstractorExample], vocab: &Vocabulary, mode: Parallelism) -> Result<(Grads, f64, usize)> {
        let per = par::try_map(mode, batch, |_, ex| {
            let mut tape = Tape::new(&self.params);
            let tf = self.teacher_forced_loss(&mut tape, &ex.source, &ex.target, vocab)?;
            Ok::<_, Error>((tape.backward(tf.loss)?, tape.item(tf.loss), tf.unk_targets))
        })?;
        let scale = 1.0 / batch.len() as f64;
        let mut total = Grads::zeros_like(&self.params);
        let (mut loss, mut unk) = (0.0, 0);
        for (g, l, u) in &per {
            total.add_scaled(g, scale);
            loss += l * scale;
            unk += u;
        }
        Ok((total, loss, unk))
    }

    pub fn pretrain(
        &mut self,
        examples: &[AbstractorExample],
        vocab: &Vocabulary,
        cfg: &AbstractorTrainConfig,
        seed: u64,
        mode: Parallelism,
    ) -> Result<AbstractorReport> {
        if examples.is_empty() || cfg.batch_size == 0 {
            return Err(Error::invalid("abstractor pretraining needs examples and a positive batch size"));
        }
        let mut report = AbstractorReport::default();
        for epoch in 0..cfg.epochs {
            let order = crate::extractor::epoch_order(examples.len(), seed, "abstractor/shuffle", epoch);
            let (mut sum, mut batches) = (0.0, 0);
            for chunk in order.chunks(cfg.batch_size) {
                let batch: Vec<&AbstractorExample> = chunk.iter().map(|&i| &examples[i]).collect();
                let (grads, loss, unk) = self
                    .batch_gradient(&batch, vocab, mode)
                    .map_err(|e| e.in_phase("pretrain-abstractor", report.updates))?;
                cfg.optimizer
                    .step(&mut self.params, grads)
                    .map_err(|e| e.in_phase("pretrain-abstractor", report.updates))?;
                report.updates += 1;
                report.unk_targets += unk;
                sum += loss;
                batches += 1;
            }
            let mean = sum / batches as f64;
            log::info!("abstractor epoch {epoch}: loss {mean:.4}");
            report.epoch_loss.push(mean);
        }
        Ok(report)
    }

    /// Greedy decodes for many sources, in input order.
    pub fn generate_all(&self, sources: &[Source], vocab: &Vocabulary, gate_mode: GateMode, mode: Parallelism) -> Result<Vec<DecodeResult>> {
        par::try_map(mode, sources, |_, s| {
            let mut rng = seeds::rng(0, "unused", &[]);
            self.generate(s, vocab, DecodeMode::Greedy, gate_mode, self.config.max_target_len, &mut rng)
        })
    }
}

#[cfg(test)]
mod tests;
