//! Headline hypothesis features, significance tests, attractiveness rate
//! and ROUGE / copy-rate tables.

mod features;

use std::collections::{BTreeSet, HashMap};
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

pub use features::{headline_features, is_number, HeadlineFeatures, Lexicons, HYPOTHESES, LEXICON_FILES, N_HYPOTHESES};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};
use crate::metrics::{copy_rate, mann_whitney_u, rouge_l, rouge_n, UMethod, UMode};
use crate::predictor::Predictor;

pub const SIGNIFICANCE_LEVEL: f64 = 0.05;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SignificanceRow {
    pub hypothesis: String,
    pub description: String,
    pub median_a: f64,
    pub median_b: f64,
    pub u_statistic: f64,
    pub p_value: f64,
    pub significant: bool,
    pub method: UMethod,
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Mann-Whitney U per hypothesis between two headline groups.
pub fn significance_report(group_a: &[HeadlineFeatures], group_b: &[HeadlineFeatures]) -> Result<Vec<SignificanceRow>> {
    if group_a.is_empty() || group_b.is_empty() {
        return Err(Error::invalid("significance report needs two non-empty groups"));
    }
    let column = |g: &[HeadlineFeatures], h: usize| g.iter().map(|f| f.values()[h]).collect::<Vec<f64>>();
    (0..N_HYPOTHESES)
        .map(|h| {
            let (a, b) = (column(group_a, h), column(group_b, h));
            let t = mann_whitney_u(&a, &b, UMode::Auto)?;
            Ok(SignificanceRow {
                hypothesis: HYPOTHESES[h].0.to_string(),
                description: HYPOTHESES[h].1.to_string(),
                median_a: median(&a),
                median_b: median(&b),
                u_statistic: t.u_statistic,
                p_value: t.p_value,
                significant: t.p_value <= SIGNIFICANCE_LEVEL,
                method: t.method,
            })
        })
        .collect()
}

/// Mean of each feature; flags come out as percentages.
pub fn feature_summary(features: &[HeadlineFeatures]) -> [f64; N_HYPOTHESES] {
    let mut out = [0.0; N_HYPOTHESES];
    if features.is_empty() {
        return out;
    }
    for f in features {
        for (o, v) in out.iter_mut().zip(f.values()) {
            *o += v;
        }
    }
    for (h, o) in out.iter_mut().enumerate() {
        *o /= features.len() as f64;
        if h >= 2 {
            *o *= 100.0;
        }
    }
    out
}

/// Percentage of probabilities strictly above one half.
pub fn attractiveness_from_scores(scores: &[f64]) -> Result<f64> {
    if scores.is_empty() {
        return Err(Error::invalid("attractiveness rate needs at least one headline"));
    }
    Ok(100.0 * scores.iter().filter(|&&p| p > 0.5).count() as f64 / scores.len() as f64)
}

pub fn attractiveness_rate(headlines: &[Vec<String>], predictor: &Predictor, vocab: &Vocabulary) -> Result<f64> {
    let scores = headlines.iter().map(|h| predictor.probability(h, vocab)).collect::<Result<Vec<_>>>()?;
    attractiveness_from_scores(&scores)
}

/// Headlines of one system keyed by document id.
#[derive(Clone, Debug, PartialEq)]
pub struct MethodOutputs {
    pub name: String,
    pub outputs: Vec<(String, Vec<String>)>,
}

/// One table row, every score multiplied by 100.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRow {
    pub method: String,
    pub n: usize,
    pub rouge_1: f64,
    pub rouge_2: f64,
    pub rouge_l: f64,
    pub copy_rate: f64,
}

/// ROUGE-1/2/L F1 and copy rate (against the article) per method,
/// averaged over documents. ROUGE-2 skips references shorter than two
/// tokens. Every method must cover exactly the reference ids.
pub fn evaluation_table(
    methods: &[MethodOutputs],
    references: &[(String, Vec<String>)],
    sources: &[(String, Vec<String>)],
) -> Result<Vec<EvalRow>> {
    let refs: HashMap<&str, &[String]> = references.iter().map(|(i, t)| (i.as_str(), t.as_slice())).collect();
    let srcs: HashMap<&str, &[String]> = sources.iter().map(|(i, t)| (i.as_str(), t.as_slice())).collect();
    methods
        .iter()
        .map(|m| {
            let ids: BTreeSet<&str> = m.outputs.iter().map(|(i, _)| i.as_str()).collect();
            let want: BTreeSet<&str> = refs.keys().copied().collect();
            let missing: Vec<&str> = want.difference(&ids).copied().collect();
            let extra: Vec<&str> = ids.iter().filter(|i| !refs.contains_key(*i) || !srcs.contains_key(*i)).copied().collect();
            if ids.is_empty() || !missing.is_empty() || !extra.is_empty() {
                return Err(Error::invalid(format!(
                    "method {} is not aligned with the references: missing {:?}, unknown {:?}",
                    m.name, missing, extra
                )));
            }
            let (mut r1, mut r2, mut rl, mut cp) = (0.0, 0.0, 0.0, 0.0);
            let mut n2 = 0usize;
            for (id, out) in &m.outputs {
                let reference = refs[id.as_str()];
                r1 += rouge_n(out, reference, 1)?.f1;
                if reference.len() >= 2 {
                    r2 += rouge_n(out, reference, 2)?.f1;
                    n2 += 1;
                }
                rl += rouge_l(out, reference)?.f1;
                cp += if out.is_empty() { 0.0 } else { copy_rate(out, srcs[id.as_str()])? };
            }
            let n = m.outputs.len() as f64;
            Ok(EvalRow {
                method: m.name.clone(),
                n: m.outputs.len(),
                rouge_1: 100.0 * r1 / n,
                rouge_2: if n2 == 0 { 0.0 } else { 100.0 * r2 / n2 as f64 },
                rouge_l: 100.0 * rl / n,
                copy_rate: 100.0 * cp / n,
            })
        })
        .collect()
}

fn write_lines(path: &Path, header: &str, lines: impl IntoIterator<Item = String>) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    writeln!(out, "{header}")?;
    for l in lines {
        writeln!(out, "{l}")?;
    }
    out.flush()?;
    Ok(())
}

pub const SIGNIFICANCE_HEADER: &str = "hypothesis,description,median_a,median_b,u_statistic,p_value,significant,method";
pub const EVALUATION_HEADER: &str = "method,n,rouge_1,rouge_2,rouge_l,copy_rate";
pub const FEATURES_HEADER: &str = "method,h1,h2,h3,h4,h5,h6,h7,h8,h9,h10,h11";

pub fn write_significance_csv(path: &Path, rows: &[SignificanceRow]) -> Result<()> {
    write_lines(
        path,
        SIGNIFICANCE_HEADER,
        rows.iter().map(|r| {
            let method = match r.method {
                UMethod::Exact => "exact",
                UMethod::NormalApprox => "normal_approx",
            };
            format!(
                "{},{},{:.6},{:.6},{:.6},{:.6},{},{}",
                r.hypothesis, r.description, r.median_a, r.median_b, r.u_statistic, r.p_value, r.significant, method
            )
        }),
    )
}

pub fn write_evaluation_csv(path: &Path, rows: &[EvalRow]) -> Result<()> {
    write_lines(
        path,
        EVALUATION_HEADER,
        rows.iter().map(|r| format!("{},{},{:.4},{:.4},{:.4},{:.4}", r.method, r.n, r.rouge_1, r.rouge_2, r.rouge_l, r.copy_rate)),
    )
}

pub fn write_features_csv(path: &Path, rows: &[(String, [f64; N_HYPOTHESES])]) -> Result<()> {
    write_lines(
        path,
        FEATURES_HEADER,
        rows.iter().map(|(m, v)| {
            let vals: Vec<String> = v.iter().map(|x| format!("{x:.4}")).collect();
            format!("{m},{}", vals.join(","))
        }),
    )
}
