//! Advantage actor-critic over single-sentence extraction episodes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::abstractor::{Abstractor, DecodeMode, GateMode, Source};
use crate::autodiff::{Adam, Grads, ParamStore, Tape, Tensor, Var};
use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::extractor::{epoch_order, Extractor, ExtractorInput, LOG_FLOOR};
use crate::metrics::rouge_l;
use crate::nn::{self, Linear};
use crate::par::{self, Parallelism};
use crate::predictor::Predictor;
use crate::seeds;
use crate::topics::TopicVec;

pub const CRITIC_NETWORK: &str = "critic";

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Reward {
    pub rouge: f64,
    pub pop: f64,
    pub total: f64,
}

/// ROUGE-L F1 of the generated headline plus `lambda_pop` times its
/// popularity probability.
pub fn compute_reward(generated: &[String], reference: &[String], pop: f64, lambda_pop: f64) -> Result<Reward> {
    if !(0.0..=1.0).contains(&pop) {
        return Err(Error::invalid(format!("popularity probability {pop} is outside [0, 1]")));
    }
    if !(0.0..=1.0).contains(&lambda_pop) {
        return Err(Error::invalid(format!("lambda_pop {lambda_pop} is outside [0, 1]")));
    }
    let rouge = rouge_l(generated, reference)?.f1;
    let pop = lambda_pop * pop;
    Ok(Reward { rouge, pop, total: rouge + pop })
}

/// State-value baseline: mean sentence feature, two tanh layers, one output.
#[derive(Clone, Debug)]
pub struct Critic {
    pub input_dim: usize,
    pub hidden: usize,
    pub params: ParamStore,
    l1: Linear,
    l2: Linear,
    out: Linear,
}

impl Critic {
    pub fn new(input_dim: usize, hidden: usize, seed: u64) -> Result<Self> {
        let mut params = ParamStore::new();
        let mut rng = seeds::rng(seed, "init/critic", &[]);
        let l1 = Linear::new(&mut params, "critic.l1", input_dim, hidden, true, &mut rng)?;
        let l2 = Linear::new(&mut params, "critic.l2", hidden, hidden, true, &mut rng)?;
        let out = Linear::new(&mut params, "critic.out", hidden, 1, true, &mut rng)?;
        Ok(Self { input_dim, hidden, params, l1, l2, out })
    }

    pub fn from_store(input_dim: usize, hidden: usize, store: &ParamStore) -> Result<Self> {
        let mut c = Self::new(input_dim, hidden, 0)?;
        c.params.load_values_from(store)?;
        Ok(c)
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let h = self.l1.forward(tape, x)?;
        let h = tape.tanh(h);
        let h = self.l2.forward(tape, h)?;
        let h = tape.tanh(h);
        self.out.forward(tape, h)
    }

    fn input(&self, tape: &mut Tape, x: &[f64]) -> Result<Var> {
        if x.len() != self.input_dim {
            return Err(Error::Shape { op: "critic", shapes: format!("input {} vs expected {}", x.len(), self.input_dim) });
        }
        Ok(tape.constant(Tensor::row_vector(x.to_vec())))
    }

    pub fn value(&self, x: &[f64]) -> Result<f64> {
        let mut tape = Tape::new(&self.params);
        let x = self.input(&mut tape, x)?;
        let v = self.forward(&mut tape, x)?;
        Ok(tape.item(v))
    }

    /// `(v(x) - r)^2 · weight`.
    pub fn loss(&self, tape: &mut Tape, x: &[f64], reward: f64, weight: f64) -> Result<Var> {
        let x = self.input(tape, x)?;
        let v = self.forward(tape, x)?;
        let d = tape.affine(v, 1.0, -reward);
        let sq = tape.mul(d, d)?;
        Ok(tape.scale(sq, weight))
    }

    /// Gradient of the mean squared error over a batch.
    pub fn batch_gradient(&self, inputs: &[Vec<f64>], rewards: &[f64]) -> Result<(Grads, f64)> {
        if inputs.is_empty() || inputs.len() != rewards.len() {
            return Err(Error::invalid("critic batch must be non-empty with one reward per input"));
        }
        let w = 1.0 / inputs.len() as f64;
        let mut total = Grads::zeros_like(&self.params);
        let mut loss = 0.0;
        for (x, &r) in inputs.iter().zip(rewards) {
            let mut tape = Tape::new(&self.params);
            let l = self.loss(&mut tape, x, r, w)?;
            loss += tape.item(l);
            total.add_scaled(&tape.backward(l)?, 1.0);
        }
        Ok((total, loss))
    }

    pub fn fit_step(&mut self, inputs: &[Vec<f64>], rewards: &[f64], opt: &Adam) -> Result<f64> {
        let (g, loss) = self.batch_gradient(inputs, rewards)?;
        opt.step(&mut self.params, g)?;
        Ok(loss)
    }
}

/// Everything an episode needs about one document.
#[derive(Clone, Debug, PartialEq)]
pub struct RlExample {
    pub doc_index: usize,
    pub doc_id: String,
    pub input: ExtractorInput,
    pub theta_d: TopicVec,
    /// Abstractor source for every sentence, aligned with `input.sentences`.
    pub sources: Vec<Source>,
    pub headline: Vec<String>,
    /// Faithfulness proxy label, used by the joint abstractor update.
    pub y: usize,
}

/// One single-step episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub doc_index: usize,
    pub doc_id: String,
    pub theta_d: TopicVec,
    pub theta_s: Vec<TopicVec>,
    pub action: usize,
    pub log_prob: f64,
    pub entropy: f64,
    pub reward: f64,
    pub rouge_term: f64,
    pub pop_term: f64,
    pub value: f64,
    pub advantage: f64,
    pub generated: Vec<String>,
    /// Decoder ids of the sampled headline (EOS included when emitted).
    pub sampled_ids: Vec<usize>,
    /// Detached mean of the sentence features, the critic's input.
    pub critic_input: Vec<f64>,
    pub pop_sampled: f64,
    pub pop_greedy: Option<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RlSettings {
    pub steps: usize,
    pub batch_size: usize,
    pub policy_opt: Adam,
    pub critic_opt: Adam,
    pub abstractor_opt: Adam,
    pub lambda_pop: f64,
    pub lambda_a: f64,
    pub use_pta_features: bool,
    pub use_pop_reward: bool,
    pub joint_abstractor: bool,
}

impl Default for RlSettings {
    fn default() -> Self {
        Self {
            steps: 300,
            batch_size: 32,
            policy_opt: Adam::default(),
            critic_opt: Adam::default(),
            abstractor_opt: Adam::default(),
            lambda_pop: 1.0,
            lambda_a: 1.0,
            use_pta_features: true,
            use_pop_reward: true,
            joint_abstractor: true,
        }
    }
}

/// Networks touched by the RL phase.
pub struct RlModels<'a> {
    pub extractor: &'a mut Extractor,
    pub abstractor: &'a mut Abstractor,
    pub critic: &'a mut Critic,
    pub predictor: &'a Predictor,
    pub vocab: &'a Vocabulary,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateDiagnostics {
    pub policy_loss: f64,
    pub critic_loss: f64,
    pub mean_advantage: f64,
    pub policy_grad_norm: f64,
}

fn mean_rows(rows: &[Vec<f64>]) -> Vec<f64> {
    let n = rows.len() as f64;
    let mut m = vec![0.0; rows.first().map_or(0, Vec::len)];
    for r in rows {
        for (a, b) in m.iter_mut().zip(r) {
            *a += b / n;
        }
    }
    m
}

/// Samples a sentence, decodes it by sampling and scores the result.
/// Parameters are only read, so episodes can run concurrently.
#[allow(clippy::too_many_arguments)]
pub fn collect_episode(
    extractor: &Extractor,
    abstractor: &Abstractor,
    critic: &Critic,
    predictor: &Predictor,
    vocab: &Vocabulary,
    ex: &RlExample,
    settings: &RlSettings,
    rng: &mut seeds::Rng,
) -> Result<Trajectory> {
    let out = extractor.extract(&ex.input, settings.use_pta_features)?;
    let action = nn::sample_index(&out.probs, rng);
    let critic_input = mean_rows(&out.e);
    let value = critic.value(&critic_input)?;
    let src = &ex.sources[action];
    let max_len = abstractor.config.max_target_len;
    let sampled = abstractor.generate(src, vocab, DecodeMode::Sample, GateMode::Learned, max_len, rng)?;
    let pop_sampled = predictor.probability(&sampled.tokens, vocab)?;
    let pop_greedy = if settings.joint_abstractor {
        let greedy = abstractor.generate(src, vocab, DecodeMode::Greedy, GateMode::Learned, max_len, rng)?;
        Some(predictor.probability(&greedy.tokens, vocab)?)
    } else {
        None
    };
    let lambda = if settings.use_pop_reward { settings.lambda_pop } else { 0.0 };
    let reward = compute_reward(&sampled.tokens, &ex.headline, pop_sampled, lambda)?;
    let entropy = nn::entropy(&out.probs);
    if !entropy.is_finite() || !value.is_finite() {
        return Err(Error::NonFinite { context: format!("episode on document {}", ex.doc_id) });
    }
    Ok(Trajectory {
        doc_index: ex.doc_index,
        doc_id: ex.doc_id.clone(),
        theta_d: ex.theta_d.clone(),
        theta_s: ex.input.theta_s.clone(),
        action,
        log_prob: out.probs[action].max(LOG_FLOOR).ln(),
        entropy,
        reward: reward.total,
        rouge_term: reward.rouge,
        pop_term: reward.pop,
        value,
        advantage: reward.total - value,
        generated: sampled.tokens,
        sampled_ids: sampled.ids,
        critic_input,
        pop_sampled,
        pop_greedy,
    })
}

/// `-A · log π(j)` for one trajectory, scaled by `weight`. The advantage
/// enters as a constant.
pub fn policy_loss(extractor: &Extractor, tape: &mut Tape, input: &ExtractorInput, action: usize, advantage: f64, weight: f64, use_pta: bool) -> Result<Var> {
    let v = extractor.forward(tape, input, use_pta)?;
    let p = tape.pick(v.probs, 0, action)?;
    let lp = tape.log_floor(p, LOG_FLOOR);
    Ok(tape.scale(lp, -advantage * weight))
}

/// One actor-critic step on a batch of trajectories collected under the
/// current policy. `examples` is indexed by `Trajectory::doc_index`.
pub fn a2c_update(
    batch: &[Trajectory],
    examples: &[RlExample],
    extractor: &mut Extractor,
    critic: &mut Critic,
    settings: &RlSettings,
    mode: Parallelism,
) -> Result<UpdateDiagnostics> {
    if batch.is_empty() {
        return Err(Error::invalid("a2c update needs at least one trajectory"));
    }
    let w = 1.0 / batch.len() as f64;
    let policy = &*extractor;
    let per = par::try_map(mode, batch, |_, t| {
        let ex = examples
            .get(t.doc_index)
            .ok_or_else(|| Error::invalid(format!("trajectory refers to unknown document {}", t.doc_index)))?;
        let mut tape = Tape::new(&policy.params);
        let l = policy_loss(policy, &mut tape, &ex.input, t.action, t.advantage, w, settings.use_pta_features)?;
        Ok::<_, Error>((tape.backward(l)?, tape.item(l)))
    })?;
    let mut grads = Grads::zeros_like(&extractor.params);
    let mut policy_loss = 0.0;
    for (g, l) in &per {
        grads.add_scaled(g, 1.0);
        policy_loss += l;
    }
    if !policy_loss.is_finite() || !grads.all_finite() {
        return Err(Error::NonFinite { context: "policy loss".into() });
    }
    let report = settings.policy_opt.step(&mut extractor.params, grads)?;

    let inputs: Vec<Vec<f64>> = batch.iter().map(|t| t.critic_input.clone()).collect();
    let rewards: Vec<f64> = batch.iter().map(|t| t.reward).collect();
    let (cg, critic_loss) = critic.batch_gradient(&inputs, &rewards)?;
    if !critic_loss.is_finite() {
        return Err(Error::NonFinite { context: "critic loss".into() });
    }
    settings.critic_opt.step(&mut critic.params, cg)?;

    Ok(UpdateDiagnostics {
        policy_loss,
        critic_loss,
        mean_advantage: batch.iter().map(|t| t.advantage).sum::<f64>() * w,
        policy_grad_norm: report.grad_norm,
    })
}

/// Joint abstractor objective on the batch: teacher forcing on the
/// faithfulness sentence plus `lambda_a` times the self-critical
/// popularity surrogate on the sampled headline.
pub fn abstractor_update(
    batch: &[Trajectory],
    examples: &[RlExample],
    abstractor: &mut Abstractor,
    vocab: &Vocabulary,
    settings: &RlSettings,
    mode: Parallelism,
) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("abstractor update needs at least one trajectory"));
    }
    let w = 1.0 / batch.len() as f64;
    let net = &*abstractor;
    let per = par::try_map(mode, batch, |_, t| {
        let ex = examples
            .get(t.doc_index)
            .ok_or_else(|| Error::invalid(format!("trajectory refers to unknown document {}", t.doc_index)))?;
        let mut tape = Tape::new(&net.params);
        let tf = net.teacher_forced_loss(&mut tape, &ex.sources[ex.y], &ex.headline, vocab)?;
        let mut loss = tf.loss;
        if let Some(pg) = t.pop_greedy {
            let lp = net.sequence_log_prob(&mut tape, &ex.sources[t.action], &t.sampled_ids, GateMode::Learned)?;
            let s = tape.scale(lp, -(t.pop_sampled - pg) * settings.lambda_a);
            loss = tape.add(loss, s)?;
        }
        let loss = tape.scale(loss, w);
        Ok::<_, Error>((tape.backward(loss)?, tape.item(loss)))
    })?;
    let mut grads = Grads::zeros_like(&abstractor.params);
    let mut total = 0.0;
    for (g, l) in &per {
        grads.add_scaled(g, 1.0);
        total += l;
    }
    if !total.is_finite() {
        return Err(Error::NonFinite { context: "joint abstractor loss".into() });
    }
    settings.abstractor_opt.step(&mut abstractor.params, grads)?;
    Ok(total)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardRow {
    pub update_idx: usize,
    pub mean_reward: f64,
    pub mean_rouge_term: f64,
    pub mean_pop_term: f64,
    pub entropy: f64,
}

impl RewardRow {
    pub const HEADER: &'static str = "update_idx,mean_reward,mean_rouge_term,mean_pop_term,entropy";

    pub fn from_batch(update_idx: usize, batch: &[Trajectory]) -> Self {
        let n = batch.len().max(1) as f64;
        let avg = |f: fn(&Trajectory) -> f64| batch.iter().map(f).sum::<f64>() / n;
        Self {
            update_idx,
            mean_reward: avg(|t| t.reward),
            mean_rouge_term: avg(|t| t.rouge_term),
            mean_pop_term: avg(|t| t.pop_term),
            entropy: avg(|t| t.entropy),
        }
    }

    pub fn to_csv(&self) -> String {
        format!(
            "{},{:.10},{:.10},{:.10},{:.10}",
            self.update_idx, self.mean_reward, self.mean_rouge_term, self.mean_pop_term, self.entropy
        )
    }
}

/// Per-update reward diagnostics, optionally mirrored to a CSV file that is
/// flushed after every row.
#[derive(Debug, Default)]
pub struct RewardLog {
    pub rows: Vec<RewardRow>,
    sink: Option<BufWriter<fs::File>>,
}

impl RewardLog {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn to_file(path: &Path) -> Result<Self> {
        let mut sink = BufWriter::new(fs::File::create(path)?);
        writeln!(sink, "{}", RewardRow::HEADER)?;
        sink.flush()?;
        Ok(Self { rows: Vec::new(), sink: Some(sink) })
    }

    pub fn push(&mut self, row: RewardRow) -> Result<()> {
        if let Some(last) = self.rows.last() {
            if row.update_idx <= last.update_idx {
                return Err(Error::invalid("reward log rows must have increasing update indices"));
            }
        }
        if let Some(sink) = self.sink.as_mut() {
            writeln!(sink, "{}", row.to_csv())?;
            sink.flush()?;
        }
        self.rows.push(row);
        Ok(())
    }

    pub fn mean_reward(&self, range: std::ops::Range<usize>) -> f64 {
        let rows = &self.rows[range];
        rows.iter().map(|r| r.mean_reward).sum::<f64>() / rows.len().max(1) as f64
    }
}

pub fn read_reward_log(path: &Path) -> Result<Vec<RewardRow>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (n, line) in text.lines().enumerate().skip(1) {
        let f: Vec<&str> = line.split(',').collect();
        let bad = || Error::invalid(format!("reward log line {} is malformed", n + 1));
        if f.len() != 5 {
            return Err(bad());
        }
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        rows.push(RewardRow {
            update_idx: f[0].parse().map_err(|_| bad())?,
            mean_reward: num(f[1])?,
            mean_rouge_term: num(f[2])?,
            mean_pop_term: num(f[3])?,
            entropy: num(f[4])?,
        });
    }
    Ok(rows)
}

/// Runs `settings.steps` collection + update rounds over `examples`,
/// cycling through them in seeded shuffled order.
pub fn train_rl(
    models: RlModels<'_>,
    examples: &[RlExample],
    settings: &RlSettings,
    seed: u64,
    mode: Parallelism,
    log: &mut RewardLog,
) -> Result<()> {
    if examples.is_empty() || settings.batch_size == 0 {
        return Err(Error::invalid("rl needs examples and a positive batch size"));
    }
    for (i, ex) in examples.iter().enumerate() {
        if ex.doc_index != i || ex.sources.len() != ex.input.sentences.len() || ex.y >= ex.sources.len() {
            return Err(Error::invalid(format!("rl example {} is inconsistent", ex.doc_id)));
        }
    }
    let RlModels { extractor, abstractor, critic, predictor, vocab } = models;
    let bs = settings.batch_size.min(examples.len());
    let mut order = Vec::new();
    let mut cursor = 0;
    let mut epoch = 0;
    for update in 0..settings.steps {
        let mut picks = Vec::with_capacity(bs);
        while picks.len() < bs {
            if cursor == order.len() {
                order = epoch_order(examples.len(), seed, "rl/shuffle", epoch);
                epoch += 1;
                cursor = 0;
            }
            picks.push(order[cursor]);
            cursor += 1;
        }
        let step = |e: Error| e.in_phase("rl", update);
        let (ext, abs, cri) = (&*extractor, &*abstractor, &*critic);
        let batch = par::try_map(mode, &picks, |slot, &d| {
            let mut rng = seeds::rng(seed, "rl/episode", &[update as u64, slot as u64]);
            collect_episode(ext, abs, cri, predictor, vocab, &examples[d], settings, &mut rng)
        })
        .map_err(step)?;
        a2c_update(&batch, examples, extractor, critic, settings, mode).map_err(step)?;
        if settings.joint_abstractor {
            abstractor_update(&batch, examples, abstractor, vocab, settings, mode).map_err(step)?;
        }
        let row = RewardRow::from_batch(update, &batch);
        if !row.entropy.is_finite() {
            return Err(step(Error::NonFinite { context: "policy entropy".into() }));
        }
        if update % 25 == 0 {
            log::info!("rl update {update}: reward {:.4} (rouge {:.4}, pop {:.4})", row.mean_reward, row.mean_rouge_term, row.mean_pop_term);
        }
        log.push(row)?;
    }
    Ok(())
}

/// Mean reward of one pass of episodes over `examples` without updating.
pub fn evaluate_reward(models: &RlModels<'_>, examples: &[RlExample], settings: &RlSettings, seed: u64, mode: Parallelism) -> Result<f64> {
    if examples.is_empty() {
        return Err(Error::invalid("no examples to evaluate"));
    }
    let rewards = par::try_map(mode, examples, |i, ex| {
        let mut rng = seeds::rng(seed, "rl/evaluate", &[i as u64]);
        collect_episode(models.extractor, models.abstractor, models.critic, models.predictor, models.vocab, ex, settings, &mut rng)
            .map(|t| t.reward)
    })?;
    Ok(rewards.iter().sum::<f64>() / rewards.len() as f64)
}
