use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::corpus::RESERVED;
use crate::error::{Error, Result};
use crate::seeds;

/// A probability vector over topics.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct TopicVec(pub Vec<f64>);

impl TopicVec {
    pub fn uniform(k: usize) -> Self {
        TopicVec(vec![1.0 / k as f64; k])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn dot(&self, other: &TopicVec) -> f64 {
        self.0.iter().zip(&other.0).map(|(a, b)| a * b).sum()
    }

    pub fn is_distribution(&self, tol: f64) -> bool {
        self.0.iter().all(|&x| x >= 0.0 && x.is_finite()) && (self.0.iter().sum::<f64>() - 1.0).abs() <= tol
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LdaParams {
    pub k: usize,
    pub alpha: f64,
    pub beta: f64,
    pub iterations: usize,
}

impl LdaParams {
    /// Griffiths-Steyvers defaults: alpha = 50/K, beta = 0.01, 200 sweeps.
    pub fn with_k(k: usize) -> Self {
        Self {
            k,
            alpha: 50.0 / k as f64,
            beta: 0.01,
            iterations: 200,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TopicModel {
    pub k: usize,
    pub v: usize,
    pub alpha: f64,
    pub beta: f64,
    /// K×V row-major topic-word probabilities.
    pub phi: Vec<f64>,
}

impl TopicModel {
    pub fn phi_row(&self, k: usize) -> &[f64] {
        &self.phi[k * self.v..(k + 1) * self.v]
    }

    /// Word ids of topic `k` sorted by decreasing probability.
    pub fn top_words(&self, k: usize, n: usize) -> Vec<usize> {
        let row = self.phi_row(k);
        let mut ids: Vec<usize> = (0..self.v).collect();
        ids.sort_by(|&a, &b| row[b].total_cmp(&row[a]).then(a.cmp(&b)));
        ids.truncate(n);
        ids
    }

    const MAGIC: &'static [u8; 8] = b"HGLDA01\0";

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = std::io::BufWriter::new(fs::File::create(path)?);
        out.write_all(Self::MAGIC)?;
        out.write_all(&(self.k as u64).to_le_bytes())?;
        out.write_all(&(self.v as u64).to_le_bytes())?;
        out.write_all(&self.alpha.to_le_bytes())?;
        out.write_all(&self.beta.to_le_bytes())?;
        for x in &self.phi {
            out.write_all(&x.to_le_bytes())?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        let bad = || Error::Checkpoint(format!("{}: malformed topic model", path.display()));
        if bytes.len() < 40 || &bytes[..8] != Self::MAGIC {
            return Err(bad());
        }
        let word = |i: usize| -> [u8; 8] { bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap() };
        let k = u64::from_le_bytes(word(0)) as usize;
        let v = u64::from_le_bytes(word(1)) as usize;
        let alpha = f64::from_le_bytes(word(2));
        let beta = f64::from_le_bytes(word(3));
        let payload = &bytes[40..];
        if payload.len() != k * v * 8 {
            return Err(bad());
        }
        let phi = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        Ok(Self { k, v, alpha, beta, phi })
    }
}

fn sample_discrete(weights: &[f64], total: f64, rng: &mut seeds::Rng) -> usize {
    let mut u = rng.random::<f64>() * total;
    for (i, &w) in weights.iter().enumerate() {
        u -= w;
        if u < 0.0 {
            return i;
        }
    }
    weights.len() - 1
}

/// Collapsed Gibbs sampling over token-topic assignments.
///
/// `docs` holds word ids in `0..vocab_size`. `phi` comes from the final
/// sweep's counts with beta smoothing.
pub fn lda_train(docs: &[Vec<u32>], vocab_size: usize, params: LdaParams, seed: u64) -> Result<TopicModel> {
    let LdaParams { k, alpha, beta, iterations } = params;
    if docs.is_empty() {
        return Err(Error::invalid("LDA needs at least one document"));
    }
    if k < 2 || iterations == 0 || alpha <= 0.0 || beta <= 0.0 {
        return Err(Error::invalid("LDA needs K >= 2, iterations >= 1 and positive alpha, beta"));
    }
    if vocab_size == 0 || docs.iter().all(Vec::is_empty) {
        return Err(Error::invalid("LDA vocabulary is empty"));
    }
    if docs.iter().flatten().any(|&w| w as usize >= vocab_size) {
        return Err(Error::invalid("LDA word id outside the vocabulary"));
    }
    let v = vocab_size;
    let vbeta = v as f64 * beta;
    let mut rng = seeds::rng(seed, "lda/train", &[]);

    let mut n_dk = vec![vec![0u32; k]; docs.len()];
    let mut n_kw = vec![0u32; k * v];
    let mut n_k = vec![0u32; k];
    let mut z: Vec<Vec<usize>> = docs
        .iter()
        .enumerate()
        .map(|(d, words)| {
            words
                .iter()
                .map(|&w| {
                    let t = rng.random_range(0..k);
                    n_dk[d][t] += 1;
                    n_kw[t * v + w as usize] += 1;
                    n_k[t] += 1;
                    t
                })
                .collect()
        })
        .collect();

    let mut p = vec![0.0; k];
    for _ in 0..iterations {
        for (d, words) in docs.iter().enumerate() {
            for (i, &w) in words.iter().enumerate() {
                let w = w as usize;
                let old = z[d][i];
                n_dk[d][old] -= 1;
                n_kw[old * v + w] -= 1;
                n_k[old] -= 1;
                let mut total = 0.0;
                for t in 0..k {
                    let pt = (n_dk[d][t] as f64 + alpha) * (n_kw[t * v + w] as f64 + beta)
                        / (n_k[t] as f64 + vbeta);
                    p[t] = pt;
                    total += pt;
                }
                let new = sample_discrete(&p, total, &mut rng);
                z[d][i] = new;
                n_dk[d][new] += 1;
                n_kw[new * v + w] += 1;
                n_k[new] += 1;
            }
        }
    }

    let mut phi = vec![0.0; k * v];
    for t in 0..k {
        let denom = n_k[t] as f64 + vbeta;
        for w in 0..v {
            phi[t * v + w] = (n_kw[t * v + w] as f64 + beta) / denom;
        }
    }
    Ok(TopicModel { k, v, alpha, beta, phi })
}

/// Fold-in Gibbs inference with `phi` frozen. Reserved and out-of-range ids
/// are ignored; an empty bag yields the uniform vector.
pub fn infer_topic_vec(model: &TopicModel, tokens: &[u32], iterations: usize, seed: u64) -> TopicVec {
    let k = model.k;
    let words: Vec<usize> = tokens
        .iter()
        .map(|&w| w as usize)
        .filter(|&w| w >= RESERVED.len() && w < model.v)
        .collect();
    if words.is_empty() {
        return TopicVec::uniform(k);
    }
    let mut rng = seeds::rng(seed, "lda/infer", &[]);
    let mut n_k = vec![0u32; k];
    let mut p = vec![0.0; k];
    let mut z: Vec<usize> = words
        .iter()
        .map(|&w| {
            let mut total = 0.0;
            for (t, pt) in p.iter_mut().enumerate() {
                *pt = model.phi[t * model.v + w];
                total += *pt;
            }
            let t = sample_discrete(&p, total, &mut rng);
            n_k[t] += 1;
            t
        })
        .collect();
    for _ in 0..iterations {
        for (i, &w) in words.iter().enumerate() {
            n_k[z[i]] -= 1;
            let mut total = 0.0;
            for t in 0..k {
                p[t] = (n_k[t] as f64 + model.alpha) * model.phi[t * model.v + w];
                total += p[t];
            }
            z[i] = sample_discrete(&p, total, &mut rng);
            n_k[z[i]] += 1;
        }
    }
    let denom = words.len() as f64 + k as f64 * model.alpha;
    TopicVec(n_k.iter().map(|&c| (c as f64 + model.alpha) / denom).collect())
}
