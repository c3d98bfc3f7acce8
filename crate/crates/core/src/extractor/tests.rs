use proptest::prelude::*;

use super::*;
use crate::autodiff::{grad_check, GradCheckOptions};

fn toy_config() -> ExtractorConfig {
    ExtractorConfig { embed_dim: 4, hidden: 3, filters: 2, attn_dim: 3, max_sentence_len: 30, kernel_widths: vec![1, 2, 3] }
}

fn tv(v: &[f64]) -> TopicVec {
    TopicVec(v.to_vec())
}

fn toy_input(sentences: Vec<Vec<u32>>) -> ExtractorInput {
    let n = sentences.len();
    let theta_s = (0..n).map(|k| tv(&[0.2 + 0.1 * (k % 3) as f64, 0.5, 0.3 - 0.1 * (k % 3) as f64])).collect();
    ExtractorInput { sentences, theta_s, reference: tv(&[0.6, 0.3, 0.1]) }
}

fn toy() -> Extractor {
    Extractor::new(toy_config(), 12, 3, 5).unwrap()
}

#[test]
fn single_sentence_is_certain_and_deterministic() {
    let net = toy();
    let input = toy_input(vec![vec![4, 5, 6]]);
    let a = net.extract(&input, true).unwrap();
    let b = net.extract(&input, true).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.alpha, vec![1.0]);
    assert_eq!(a.probs, vec![1.0]);
}

#[test]
fn sentence_vectors_depend_on_context() {
    let net = toy();
    let a = net.extract(&toy_input(vec![vec![4, 5], vec![7, 8, 9]]), true).unwrap();
    let b = net.extract(&toy_input(vec![vec![7, 8, 9], vec![4, 5]]), true).unwrap();
    assert_ne!(a.s[0], b.s[1]);
}

#[test]
fn rejects_padding_only_sentences() {
    let net = toy();
    assert!(net.extract(&toy_input(vec![vec![4], vec![PAD, PAD]]), true).is_err());
    assert!(net.extract(&toy_input(vec![vec![4], vec![]]), true).is_err());
    assert!(net.extract(&toy_input(vec![]), true).is_err());
}

#[test]
fn topic_slice_structure() {
    let net = toy();
    let mut input = toy_input(vec![vec![4, 5], vec![6], vec![7, 8, 9]]);
    let h2 = 2 * net.config.hidden;

    input.reference = tv(&[0.0, 0.0, 0.0]);
    let out = net.extract(&input, true).unwrap();
    for (e, s) in out.e.iter().zip(&out.s) {
        assert_eq!(&e[..h2], &s[..]);
        assert!(e[h2..].iter().all(|&x| x == 0.0));
    }

    input.reference = tv(&[1.0 / 3.0; 3]);
    let out = net.extract(&input, true).unwrap();
    for (e, t) in out.e.iter().zip(&input.theta_s) {
        for (a, b) in e[h2..].iter().zip(t.as_slice()) {
            assert!((a - b / 3.0).abs() < 1e-15);
        }
    }
}

#[test]
fn zeroed_topic_slice_equals_the_no_topic_path() {
    let net = toy();
    let mut input = toy_input(vec![vec![4, 5], vec![6], vec![7, 8, 9]]);
    let without = net.extract(&input, false).unwrap();
    input.reference = tv(&[0.0; 3]);
    let zeroed = net.extract(&input, true).unwrap();
    assert_eq!(without.probs, zeroed.probs);
    assert_eq!(without.alpha, zeroed.alpha);
}

#[test]
fn topic_length_mismatch_is_an_error() {
    let net = toy();
    let mut input = toy_input(vec![vec![4], vec![5]]);
    input.theta_s.pop();
    assert!(net.extract(&input, true).is_err());
}

#[test]
fn identical_features_split_evenly() {
    let net = toy();
    let mut tape = Tape::new(&net.params);
    let row: Vec<f64> = (0..net.feature_dim()).map(|i| (i as f64 * 0.37).sin()).collect();
    let mut data = row.clone();
    data.extend(&row);
    let e = tape.constant(Tensor::new(2, net.feature_dim(), data).unwrap());
    let (alpha, _, probs) = net.pointer(&mut tape, e).unwrap();
    for v in tape.value(probs).data().iter().chain(tape.value(alpha).data()) {
        assert!((v - 0.5).abs() < 1e-15);
    }
}

#[test]
fn loss_values() {
    let store = ParamStore::new();
    let mut tape = Tape::new(&store);
    let certain = tape.constant(Tensor::row_vector(vec![0.0, 1.0, 0.0]));
    let l = Extractor::pretrain_loss(&mut tape, certain, 1, 1, true).unwrap();
    assert_eq!(tape.item(l.loss), 0.0);

    let n = 4;
    let uniform = tape.constant(Tensor::row_vector(vec![1.0 / n as f64; n]));
    let l = Extractor::pretrain_loss(&mut tape, uniform, 0, 2, true).unwrap();
    assert!((tape.item(l.loss) - 2.0 * (n as f64).ln()).abs() < 1e-12);
    let l = Extractor::pretrain_loss(&mut tape, uniform, 0, 2, false).unwrap();
    assert!((tape.item(l.loss) - (n as f64).ln()).abs() < 1e-12);

    let zero = tape.constant(Tensor::row_vector(vec![0.0, 1.0]));
    let l = Extractor::pretrain_loss(&mut tape, zero, 0, 1, false).unwrap();
    assert_eq!(l.floor_hits, 1);
    assert!((tape.item(l.loss) + LOG_FLOOR.ln()).abs() < 1e-9);
    assert!(Extractor::pretrain_loss(&mut tape, zero, 2, 0, false).is_err());
}

#[test]
fn full_loss_gradients_match_finite_differences() {
    let net = toy();
    let input = toy_input(vec![vec![4, 5, 6, 7], vec![8], vec![9, 10, 11]]);
    for use_pta in [false, true] {
        let report = grad_check(
            &net.params,
            |tape| {
                let v = net.forward(tape, &input, true)?;
                Ok(Extractor::pretrain_loss(tape, v.probs, 2, 0, use_pta)?.loss)
            },
            GradCheckOptions { max_coords: 16, ..GradCheckOptions::default() },
        )
        .unwrap();
        assert!(report.max_rel_err() < 1e-6, "{:?}", report.per_param);
    }
}

#[test]
fn pretraining_learns_a_planted_position_cue() {
    // Token 11 marks the target sentence.
    let mut net = Extractor::new(toy_config(), 12, 3, 1).unwrap();
    let examples: Vec<ExtractorExample> = (0..64)
        .map(|i| {
            let y = i % 3;
            let sentences = (0..3)
                .map(|k| {
                    let mut s = vec![4 + ((i + k) % 6) as u32, 4 + ((i * 7 + k) % 6) as u32];
                    if k == y {
                        s.insert(1, 11);
                    }
                    s
                })
                .collect();
            ExtractorExample { input: toy_input(sentences), y, y_prime: y }
        })
        .collect();
    let cfg = PretrainConfig {
        epochs: 30,
        batch_size: 8,
        optimizer: Adam::with_lr(0.02),
        use_pta_features: true,
        use_pta_loss: false,
    };
    let report = net.pretrain(&examples, &cfg, 3, Parallelism::Parallel).unwrap();
    assert!(report.epoch_loss.last().unwrap() < &0.2, "{:?}", report.epoch_loss);
    let inputs: Vec<_> = examples.iter().map(|e| e.input.clone()).collect();
    let pred = net.predict(&inputs, true, Parallelism::Parallel).unwrap();
    let correct = pred.iter().zip(&examples).filter(|(p, e)| **p == e.y).count();
    assert_eq!(correct, examples.len());
}

#[test]
fn pretraining_is_schedule_independent() {
    let examples: Vec<ExtractorExample> = (0..20)
        .map(|i| ExtractorExample { input: toy_input(vec![vec![4 + i % 5], vec![9, 10 - i % 3]]), y: i as usize % 2, y_prime: 0 })
        .collect();
    let cfg = PretrainConfig { epochs: 2, batch_size: 6, ..PretrainConfig::default() };
    let mut a = toy();
    let mut b = toy();
    a.pretrain(&examples, &cfg, 9, Parallelism::Parallel).unwrap();
    b.pretrain(&examples, &cfg, 9, Parallelism::Sequential).unwrap();
    assert_eq!(a.params, b.params);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn extraction_is_a_distribution(
        seed in any::<u64>(),
        sentences in prop::collection::vec(prop::collection::vec(1u32..12, 1..9), 1..7),
        use_pta in any::<bool>(),
    ) {
        let net = Extractor::new(toy_config(), 12, 3, seed).unwrap();
        let out = net.extract(&toy_input(sentences), use_pta).unwrap();
        for dist in [&out.probs, &out.alpha] {
            prop_assert!(dist.iter().all(|&p| p >= 0.0));
            prop_assert!((dist.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
