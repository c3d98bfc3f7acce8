use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::TopicVec;
use crate::error::{Error, Result};

/// One retrievable training article.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IndexEntry {
    pub id: String,
    pub theta_d: TopicVec,
    pub theta_h: TopicVec,
    pub popularity: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PopularReference {
    pub source_id: String,
    pub theta_h: TopicVec,
    pub similarity: f64,
    pub popularity: u64,
}

/// Ranks the index by inner product with `query` (ties by id), keeps the
/// top `m`, and returns the most popular of those (ties by similarity).
/// An entry whose id equals `exclude_id` is skipped.
pub fn retrieve_popular_reference(
    query: &TopicVec,
    exclude_id: Option<&str>,
    index: &[IndexEntry],
    m: usize,
) -> Result<PopularReference> {
    if m == 0 {
        return Err(Error::invalid("retrieval depth m must be at least 1"));
    }
    let mut ranked: Vec<(f64, &IndexEntry)> = index
        .iter()
        .filter(|e| Some(e.id.as_str()) != exclude_id)
        .map(|e| (query.dot(&e.theta_d), e))
        .collect();
    if ranked.is_empty() {
        return Err(Error::invalid("retrieval index is empty"));
    }
    ranked.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| a.1.id.cmp(&b.1.id)));
    ranked.truncate(m);
    // earliest rank wins remaining ties, so scan in rank order with strict `>`
    let mut best = ranked[0];
    for &cand in &ranked[1..] {
        if cand.1.popularity > best.1.popularity
            || (cand.1.popularity == best.1.popularity && cand.0 > best.0)
        {
            best = cand;
        }
    }
    Ok(PopularReference {
        source_id: best.1.id.clone(),
        theta_h: best.1.theta_h.clone(),
        similarity: best.0,
        popularity: best.1.popularity,
    })
}

/// Element-wise product of a sentence topic vector and the reference
/// headline topic vector.
pub fn popularity_info(sentence_topics: &TopicVec, reference: &TopicVec) -> Result<Vec<f64>> {
    if sentence_topics.len() != reference.len() {
        return Err(Error::Shape {
            op: "popularity_info",
            shapes: format!("{} vs {}", sentence_topics.len(), reference.len()),
        });
    }
    Ok(sentence_topics.0.iter().zip(&reference.0).map(|(a, b)| a * b).collect())
}

pub fn save_index(path: &Path, index: &[IndexEntry]) -> Result<()> {
    let mut out = std::io::BufWriter::new(fs::File::create(path)?);
    for e in index {
        serde_json::to_writer(&mut out, e)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn load_index(path: &Path) -> Result<Vec<IndexEntry>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    fs::read_to_string(path)?
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn entry(id: &str, d: Vec<f64>, pop: u64) -> IndexEntry {
        IndexEntry {
            id: id.into(),
            theta_h: TopicVec(d.iter().rev().cloned().collect()),
            theta_d: TopicVec(d),
            popularity: pop,
        }
    }

    #[test]
    fn single_entry_is_forced() {
        let idx = [entry("a", vec![0.5, 0.5], 3)];
        let r = retrieve_popular_reference(&TopicVec(vec![1.0, 0.0]), None, &idx, 4).unwrap();
        assert_eq!(r.source_id, "a");
    }

    #[test]
    fn top_m_then_most_popular() {
        // similarities with query e_0 are 0.9, 0.8, 0.1
        let idx = [
            entry("1", vec![0.9, 0.1], 5),
            entry("2", vec![0.8, 0.2], 100),
            entry("3", vec![0.1, 0.9], 999),
        ];
        let r = retrieve_popular_reference(&TopicVec(vec![1.0, 0.0]), None, &idx, 2).unwrap();
        assert_eq!(r.source_id, "2");
        assert_eq!(r.popularity, 100);
        assert!((r.similarity - 0.8).abs() < 1e-12);
    }

    #[test]
    fn self_is_excluded_and_empty_index_errors() {
        let idx = [entry("me", vec![1.0, 0.0], 1000), entry("other", vec![0.0, 1.0], 1)];
        let r = retrieve_popular_reference(&TopicVec(vec![1.0, 0.0]), Some("me"), &idx, 5).unwrap();
        assert_eq!(r.source_id, "other");
        assert!(retrieve_popular_reference(&TopicVec(vec![1.0, 0.0]), Some("me"), &idx[..1], 5).is_err());
        assert!(retrieve_popular_reference(&TopicVec(vec![1.0]), None, &[], 5).is_err());
    }

    #[test]
    fn popularity_info_examples() {
        let s = TopicVec(vec![0.2, 0.3, 0.5]);
        let u = TopicVec::uniform(3);
        let p = popularity_info(&s, &u).unwrap();
        for (a, b) in p.iter().zip(&s.0) {
            assert!((a - b / 3.0).abs() < 1e-15);
        }
        let z = popularity_info(&TopicVec(vec![1.0, 0.0]), &TopicVec(vec![0.0, 1.0])).unwrap();
        assert_eq!(z, vec![0.0, 0.0]);
        let e = popularity_info(&TopicVec(vec![0.0, 1.0]), &TopicVec(vec![0.0, 1.0])).unwrap();
        assert_eq!(e, vec![0.0, 1.0]);
        assert!(popularity_info(&s, &TopicVec(vec![1.0])).is_err());
    }

    fn brute(query: &TopicVec, idx: &[IndexEntry], m: usize) -> String {
        // full rescan: for each entry count how many outrank it
        let sims: Vec<f64> = idx.iter().map(|e| query.dot(&e.theta_d)).collect();
        let in_top = |i: usize| {
            let better = (0..idx.len())
                .filter(|&j| sims[j] > sims[i] || (sims[j] == sims[i] && idx[j].id < idx[i].id))
                .count();
            better < m
        };
        let mut best: Option<usize> = None;
        let mut best_rank = usize::MAX;
        for i in (0..idx.len()).filter(|&i| in_top(i)) {
            let rank = (0..idx.len())
                .filter(|&j| sims[j] > sims[i] || (sims[j] == sims[i] && idx[j].id < idx[i].id))
                .count();
            let better = match best {
                None => true,
                Some(b) => {
                    idx[i].popularity > idx[b].popularity
                        || (idx[i].popularity == idx[b].popularity
                            && (sims[i] > sims[b] || (sims[i] == sims[b] && rank < best_rank)))
                }
            };
            if better {
                best = Some(i);
                best_rank = rank;
            }
        }
        idx[best.unwrap()].id.clone()
    }

    fn simplex(k: usize) -> impl Strategy<Value = TopicVec> {
        prop::collection::vec(0.0f64..1.0, k).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            TopicVec(v.iter().map(|x| x / s).collect())
        })
    }

    proptest! {
        #[test]
        fn agrees_with_brute_force_scan(
            query in simplex(4),
            entries in prop::collection::vec((simplex(4), 0u64..20), 1..100),
            m in 1usize..8,
        ) {
            let idx: Vec<IndexEntry> = entries
                .into_iter()
                .enumerate()
                .map(|(i, (d, pop))| IndexEntry { id: format!("{i:03}"), theta_h: d.clone(), theta_d: d, popularity: pop })
                .collect();
            let r = retrieve_popular_reference(&query, None, &idx, m).unwrap();
            prop_assert_eq!(r.source_id, brute(&query, &idx, m));
        }

        #[test]
        fn product_commutes_and_is_bounded(a in simplex(6), b in simplex(6)) {
            let ab = popularity_info(&a, &b).unwrap();
            prop_assert_eq!(&ab, &popularity_info(&b, &a).unwrap());
            prop_assert!(ab.iter().sum::<f64>() <= 1.0 + 1e-12);
            prop_assert!(ab.iter().all(|&x| x >= 0.0));
        }
    }
}
