use rand::seq::IndexedRandom;
use rand::Rng as _;

use super::*;
use crate::autodiff::{grad_check, GradCheckOptions};

fn vocab() -> Vocabulary {
    Vocabulary::from_tokens("a b c d e f g h".split(' ').map(String::from))
}

fn toy_config() -> PredictorConfig {
    PredictorConfig { embed_dim: 6, filters: 4, hidden: 5, attn_dim: 4, max_len: 30, kernel_widths: vec![1, 2, 3] }
}

/// Label 1 iff a marker ("g" or "h") appears.
fn planted(n: usize, seed: u64) -> Vec<LabeledHeadline> {
    let mut rng = seeds::rng(seed, "planted", &[]);
    (0..n)
        .map(|i| {
            let len = rng.random_range(3..7);
            let mut tokens: Vec<String> = (0..len).map(|_| ["a", "b", "c", "d", "e", "f"].choose(&mut rng).unwrap().to_string()).collect();
            let label = (i % 2) as u8;
            if label == 1 {
                let pos = rng.random_range(0..=tokens.len());
                tokens.insert(pos, ["g", "h"].choose(&mut rng).unwrap().to_string());
            }
            LabeledHeadline { tokens, label }
        })
        .collect()
}

fn trained(flip: bool) -> (Predictor, Vec<LabeledHeadline>) {
    let v = vocab();
    let mut train = planted(240, 1);
    if flip {
        train.iter_mut().for_each(|h| h.label = 1 - h.label);
    }
    let mut net = Predictor::new(toy_config(), v.len(), 3).unwrap();
    let cfg = PredictorTrainConfig { epochs: 12, batch_size: 16, optimizer: Adam::with_lr(0.01) };
    net.train(&train, &[], &v, &cfg, 4, Parallelism::Parallel).unwrap();
    (net, planted(100, 2))
}

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

#[test]
fn scoring_is_pure_and_bounded() {
    let v = vocab();
    let net = Predictor::new(toy_config(), v.len(), 1).unwrap();
    let h = words("a g c zz");
    let a = net.pop_score(&h, &v).unwrap();
    assert_eq!(a, net.pop_score(&h, &v).unwrap());
    assert!(a.probability > 0.0 && a.probability < 1.0);
    assert_eq!(a.attention.len(), 3);
    for w in &a.attention {
        assert_eq!(w.len(), 4);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }
    assert!(net.pop_score(&[], &v).is_err());
}

#[test]
fn long_headlines_are_truncated() {
    let v = vocab();
    let net = Predictor::new(toy_config(), v.len(), 1).unwrap();
    let long: Vec<String> = (0..45).map(|i| ["a", "b", "c"][i % 3].to_string()).collect();
    let s = net.pop_score(&long, &v).unwrap();
    assert_eq!(s.attention[0].len(), 30);
    assert_eq!(s, net.pop_score(&long[..30], &v).unwrap());
}

#[test]
fn single_class_training_is_rejected() {
    let v = vocab();
    let mut net = Predictor::new(toy_config(), v.len(), 1).unwrap();
    let data: Vec<LabeledHeadline> = planted(10, 1).into_iter().map(|h| LabeledHeadline { label: 1, ..h }).collect();
    assert!(net.train(&data, &[], &v, &PredictorTrainConfig::default(), 0, Parallelism::Sequential).is_err());
}

#[test]
fn zero_epochs_leave_parameters_unchanged() {
    let v = vocab();
    let mut net = Predictor::new(toy_config(), v.len(), 1).unwrap();
    let before = net.params.clone();
    let cfg = PredictorTrainConfig { epochs: 0, ..PredictorTrainConfig::default() };
    net.train(&planted(10, 1), &[], &v, &cfg, 0, Parallelism::Sequential).unwrap();
    assert_eq!(net.params, before);
}

#[test]
fn loss_gradients_match_finite_differences() {
    let v = vocab();
    let net = Predictor::new(toy_config(), v.len(), 2).unwrap();
    let ids = v.encode(&words("a g c d"));
    let r = grad_check(&net.params, |t| net.loss(t, &ids, 1), GradCheckOptions { max_coords: 12, ..GradCheckOptions::default() }).unwrap();
    assert!(r.max_rel_err() < 1e-6, "{:?}", r.per_param);
}

#[test]
fn learns_planted_markers_and_label_flip_mirrors_accuracy() {
    let v = vocab();
    let (net, val) = trained(false);
    let acc = net.accuracy(&val, &v, Parallelism::Parallel).unwrap();
    assert!(acc >= 0.9, "{acc}");
    let (flipped, _) = trained(true);
    let acc_flipped = flipped.accuracy(&val, &v, Parallelism::Parallel).unwrap();
    assert!(acc_flipped <= 1.0 - 0.9, "{acc_flipped}");

    let mean = |label: u8| {
        let xs: Vec<f64> = val.iter().filter(|h| h.label == label).map(|h| net.probability(&h.tokens, &v).unwrap()).collect();
        xs.iter().sum::<f64>() / xs.len() as f64
    };
    assert!(mean(1) > mean(0));
}

#[test]
fn heatmap_shape_and_localisation() {
    let v = vocab();
    let (net, val) = trained(false);
    let marked: Vec<Vec<String>> = val.iter().filter(|h| h.label == 1).map(|h| h.tokens.clone()).collect();
    let rows = export_attention_heatmap(&net, &marked, &v).unwrap();
    let expected: usize = marked.iter().map(|h| 3 * h.len()).sum();
    assert_eq!(rows.len(), expected);

    let mut hits = 0;
    for (i, h) in marked.iter().enumerate() {
        let marker = h.iter().position(|t| t == "g" || t == "h").unwrap();
        for k in [1usize, 2, 3] {
            let w: Vec<&HeatmapRow> = rows.iter().filter(|r| r.headline_idx == i && r.kernel_width == k).collect();
            assert!((w.iter().map(|r| r.weight).sum::<f64>() - 1.0).abs() < 1e-6);
        }
        // Width-1 attention: the maximising position's window holds the marker.
        let w1: Vec<&HeatmapRow> = rows.iter().filter(|r| r.headline_idx == i && r.kernel_width == 1).collect();
        let best = w1.iter().max_by(|a, b| a.weight.total_cmp(&b.weight)).unwrap().position;
        if best == marker {
            hits += 1;
        }
    }
    assert!(hits as f64 >= 0.7 * marked.len() as f64, "{hits}/{}", marked.len());

    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("heat.csv");
    write_heatmap_csv(&p, &rows).unwrap();
    let text = std::fs::read_to_string(&p).unwrap();
    assert!(text.starts_with("headline_idx,kernel_width,position,weight\n"));
    assert_eq!(text.lines().count(), rows.len() + 1);
}
