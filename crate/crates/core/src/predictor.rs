//! Binary popularity classifier over headline tokens.
//!
//! Convolutions of widths 1, 2 and 3 (same-length padding) are concatenated
//! per position and read by an LSTM. Each kernel width has its own
//! attention over positions, scored from the LSTM state and that width's
//! feature map; the attended states feed a single logit.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::{Adam, Grads, ParamId, ParamStore, Tape, Var};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::extractor::epoch_order;
use crate::nn::{ConvBank, Linear, Lstm};
use crate::par::{self, Parallelism};
use crate::seeds;

pub const NETWORK: &str = "predictor";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorConfig {
    pub embed_dim: usize,
    pub filters: usize,
    pub hidden: usize,
    pub attn_dim: usize,
    pub max_len: usize,
    pub kernel_widths: Vec<usize>,
}

impl Default for PredictorConfig {
    fn default() -> Self {
        Self { embed_dim: 32, filters: 20, hidden: 32, attn_dim: 32, max_len: 30, kernel_widths: vec![1, 2, 3] }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PopScore {
    pub probability: f64,
    pub logit: f64,
    /// Attention over positions, one row per kernel width.
    pub attention: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
struct WidthAttention {
    state: Linear,
    map: Linear,
    v: Linear,
}

#[derive(Clone, Debug, PartialEq)]
struct Layers {
    emb: ParamId,
    conv: ConvBank,
    lstm: Lstm,
    attention: Vec<WidthAttention>,
    out: Linear,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Predictor {
    pub config: PredictorConfig,
    pub vocab_size: usize,
    pub params: ParamStore,
    layers: Layers,
}

struct Forward {
    logit: Var,
    attention: Vec<Var>,
}

impl Predictor {
    pub fn new(config: PredictorConfig, vocab_size: usize, seed: u64) -> Result<Self> {
        if config.kernel_widths.is_empty() || config.max_len == 0 {
            return Err(Error::Config { key: "predictor".into(), message: "needs kernel widths and a positive length cap".into() });
        }
        let mut rng = seeds::rng(seed, "init/predictor", &[]);
        let mut p = ParamStore::new();
        let (e, f, h, a) = (config.embed_dim, config.filters, config.hidden, config.attn_dim);
        let emb = p.add_glorot("emb", vocab_size, e, &mut rng)?;
        let conv = ConvBank::new(&mut p, "conv", e, f, &config.kernel_widths, &mut rng)?;
        let lstm = Lstm::new(&mut p, "lstm", conv.output_dim(), h, &mut rng)?;
        let attention = config
            .kernel_widths
            .iter()
            .map(|k| {
                Ok(WidthAttention {
                    state: Linear::new(&mut p, &format!("att.k{k}.state"), h, a, true, &mut rng)?,
                    map: Linear::new(&mut p, &format!("att.k{k}.map"), f, a, false, &mut rng)?,
                    v: Linear::new(&mut p, &format!("att.k{k}.v"), a, 1, false, &mut rng)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let out = Linear::new(&mut p, "out", h * config.kernel_widths.len(), 1, true, &mut rng)?;
        Ok(Self { config, vocab_size, params: p, layers: Layers { emb, conv, lstm, attention, out } })
    }

    pub fn from_store(config: PredictorConfig, vocab_size: usize, store: &ParamStore) -> Result<Self> {
        let mut net = Self::new(config, vocab_size, 0)?;
        net.params.load_values_from(store)?;
        Ok(net)
    }

    pub fn encode(&self, headline: &[String], vocab: &Vocabulary) -> Result<Vec<u32>> {
        if headline.is_empty() {
            return Err(Error::invalid("cannot score an empty headline"));
        }
        Ok(vocab.encode(&headline[..headline.len().min(self.config.max_len)]))
    }

    fn forward(&self, tape: &mut Tape, ids: &[u32]) -> Result<Forward> {
        let l = &self.layers;
        let emb = tape.param(l.emb);
        let x = tape.gather(emb, ids)?;
        let maps = l.conv.feature_maps(tape, x, true)?;
        let seq = tape.concat_cols(&maps)?;
        let mut state = l.lstm.zero_state(tape);
        let mut hs = Vec::with_capacity(ids.len());
        for t in 0..ids.len() {
            let xt = tape.row(seq, t)?;
            state = l.lstm.step(tape, xt, state)?;
            hs.push(state.0);
        }
        let hseq = tape.concat_rows(&hs)?;
        let mut pooled = Vec::with_capacity(maps.len());
        let mut attention = Vec::with_capacity(maps.len());
        for (att, &map) in l.attention.iter().zip(&maps) {
            let a = att.state.forward(tape, hseq)?;
            let b = att.map.forward(tape, map)?;
            let s = tape.add(a, b)?;
            let s = tape.tanh(s);
            let scores = att.v.forward(tape, s)?;
            let scores = tape.transpose(scores);
            let w = tape.softmax(scores);
            pooled.push(tape.matmul(w, hseq)?);
            attention.push(w);
        }
        let feat = tape.concat_cols(&pooled)?;
        let logit = l.out.forward(tape, feat)?;
        Ok(Forward { logit, attention })
    }

    /// Pure scoring with frozen parameters.
    pub fn pop_score(&self, headline: &[String], vocab: &Vocabulary) -> Result<PopScore> {
        let ids = self.encode(headline, vocab)?;
        let mut tape = Tape::new(&self.params);
        let f = self.forward(&mut tape, &ids)?;
        let logit = tape.item(f.logit);
        Ok(PopScore {
            probability: sigmoid(logit),
            logit,
            attention: f.attention.iter().map(|&a| tape.value(a).data().to_vec()).collect(),
        })
    }

    pub fn probability(&self, headline: &[String], vocab: &Vocabulary) -> Result<f64> {
        Ok(self.pop_score(headline, vocab)?.probability)
    }

    pub fn loss(&self, tape: &mut Tape, ids: &[u32], label: u8) -> Result<Var> {
        let f = self.forward(tape, ids)?;
        tape.bce_with_logits(f.logit, &[label as f64])
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LabeledHeadline {
    pub tokens: Vec<String>,
    pub label: u8,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PredictorTrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: Adam,
}

impl Default for PredictorTrainConfig {
    fn default() -> Self {
        Self { epochs: 4, batch_size: 32, optimizer: Adam::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct PredictorReport {
    pub epoch_loss: Vec<f64>,
    pub val_accuracy: Option<f64>,
    pub updates: usize,
}

impl Predictor {
    /// Minimises binary cross-entropy; reports accuracy at 0.5 on `val`.
    pub fn train(
        &mut self,
        train: &[LabeledHeadline],
        val: &[LabeledHeadline],
        vocab: &Vocabulary,
        cfg: &PredictorTrainConfig,
        seed: u64,
        mode: Parallelism,
    ) -> Result<PredictorReport> {
        let positives = train.iter().filter(|h| h.label == 1).count();
        if positives == 0 || positives == train.len() {
            return Err(Error::invalid("predictor training data must contain both labels"));
        }
        if cfg.batch_size == 0 {
            return Err(Error::invalid("batch size must be positive"));
        }
        let encoded: Vec<(Vec<u32>, u8)> =
            train.iter().map(|h| Ok((self.encode(&h.tokens, vocab)?, h.label))).collect::<Result<_>>()?;
        let mut report = PredictorReport::default();
        for epoch in 0..cfg.epochs {
            let order = epoch_order(encoded.len(), seed, "predictor/shuffle", epoch);
            let (mut sum, mut batches) = (0.0, 0);
            for chunk in order.chunks(cfg.batch_size) {
                let per = par::try_map(mode, chunk, |_, &i| {
                    let mut tape = Tape::new(&self.params);
                    let loss = self.loss(&mut tape, &encoded[i].0, encoded[i].1)?;
                    Ok::<_, Error>((tape.backward(loss)?, tape.item(loss)))
                })
                .map_err(|e| e.in_phase("train-predictor", report.updates))?;
                let scale = 1.0 / chunk.len() as f64;
                let mut grads = Grads::zeros_like(&self.params);
                for (g, l) in &per {
                    grads.add_scaled(g, scale);
                    sum += l * scale;
                }
                cfg.optimizer
                    .step(&mut self.params, grads)
                    .map_err(|e| e.in_phase("train-predictor", report.updates))?;
                report.updates += 1;
                batches += 1;
            }
            let mean = sum / batches as f64;
            log::info!("predictor epoch {epoch}: loss {mean:.4}");
            report.epoch_loss.push(mean);
        }
        if !val.is_empty() {
            report.val_accuracy = Some(self.accuracy(val, vocab, mode)?);
        }
        Ok(report)
    }

    pub fn accuracy(&self, data: &[LabeledHeadline], vocab: &Vocabulary, mode: Parallelism) -> Result<f64> {
        if data.is_empty() {
            return Err(Error::invalid("accuracy over an empty set"));
        }
        let hits = par::try_map(mode, data, |_, h| {
            let p = self.probability(&h.tokens, vocab)?;
            Ok::<_, Error>(((p > 0.5) as u8 == h.label) as usize)
        })?;
        Ok(hits.iter().sum::<usize>() as f64 / data.len() as f64)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeatmapRow {
    pub headline_idx: usize,
    pub kernel_width: usize,
    pub position: usize,
    pub weight: f64,
}

/// Per-width attention weights for every headline position.
pub fn export_attention_heatmap(predictor: &Predictor, headlines: &[Vec<String>], vocab: &Vocabulary) -> Result<Vec<HeatmapRow>> {
    let mut rows = Vec::new();
    for (i, h) in headlines.iter().enumerate() {
        let score = predictor.pop_score(h, vocab)?;
        for (&k, weights) in predictor.config.kernel_widths.iter().zip(&score.attention) {
            for (pos, &w) in weights.iter().enumerate() {
                rows.push(HeatmapRow { headline_idx: i, kernel_width: k, position: pos, weight: w });
            }
        }
    }
    Ok(rows)
}

pub fn write_heatmap_csv(path: &Path, rows: &[HeatmapRow]) -> Result<()> {
    let mut out = String::from("headline_idx,kernel_width,position,weight\n");
    for r in rows {
        out.push_str(&format!("{},{},{},{}\n", r.headline_idx, r.kernel_width, r.position, r.weight));
    }
    fs::File::create(path)?.write_all(out.as_bytes())?;
    Ok(())
}

#[cfg(test)]
mod tests;
