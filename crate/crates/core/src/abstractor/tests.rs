use proptest::prelude::*;

use super::*;
use crate::autodiff::{grad_check, GradCheckOptions};
use crate::metrics::copy_rate;

fn words(s: &str) -> Vec<String> {
    s.split_whitespace().map(String::from).collect()
}

fn vocab() -> Vocabulary {
    Vocabulary::from_tokens(words("a b c d e f g h"))
}

fn toy_config() -> AbstractorConfig {
    AbstractorConfig { embed_dim: 4, hidden: 3, attn_dim: 3, max_source_len: 30, max_target_len: 30 }
}

fn toy(seed: u64) -> Abstractor {
    Abstractor::new(toy_config(), vocab().len(), seed).unwrap()
}

#[test]
fn source_maps_oov_tokens_to_extended_ids() {
    let v = vocab();
    let src = Source::new(&words("a zz b zz yy"), &v, 30).unwrap();
    assert_eq!(src.ids, vec![v.id("a"), UNK, v.id("b"), UNK, UNK]);
    assert_eq!(src.ext_ids[1], v.len());
    assert_eq!(src.ext_ids[3], v.len());
    assert_eq!(src.ext_ids[4], v.len() + 1);
    let (t, unk) = src.encode_target(&words("zz qq a"), &v, 30);
    assert_eq!(t, vec![v.len(), UNK as usize, v.id("a") as usize, EOS as usize]);
    assert_eq!(unk, 1);
    assert!(Source::new(&[], &v, 30).is_err());
}

#[test]
fn certain_copy_has_zero_loss() {
    let net = toy(1);
    let v = vocab();
    let src = Source::new(&words("c"), &v, 30).unwrap();
    let mut tape = Tape::new(&net.params);
    let lp = net.sequence_log_prob(&mut tape, &src, &[v.id("c") as usize], GateMode::CopyOnly).unwrap();
    assert_eq!(tape.item(lp), 0.0);
}

#[test]
fn teacher_forced_loss_matches_recomputed_mixture() {
    let net = toy(2);
    let v = vocab();
    let src = Source::new(&words("a b zz c"), &v, 30).unwrap();
    let target = words("b zz h");
    let mut tape = Tape::new(&net.params);
    let tf = net.teacher_forced_loss(&mut tape, &src, &target, &v).unwrap();
    let (ids, _) = src.encode_target(&target, &v, 30);
    let dists = net.step_distributions(&src, &ids[..ids.len() - 1], GateMode::Learned).unwrap();
    let expect = -ids.iter().zip(&dists).map(|(&w, d)| d[w].ln()).sum::<f64>() / ids.len() as f64;
    assert!((tape.item(tf.loss) - expect).abs() < 1e-12);
}

#[test]
fn generate_only_with_zero_output_layer_is_uniform() {
    let mut net = toy(3);
    let v = vocab();
    for name in ["out.vocab.w", "out.vocab.b"] {
        let id = net.params.id(name).unwrap();
        net.params.value_mut(id).data_mut().iter_mut().for_each(|x| *x = 0.0);
    }
    let src = Source::new(&words("a b"), &v, 30).unwrap();
    let target: Vec<usize> = vec![v.id("a") as usize, v.id("d") as usize, EOS as usize];
    let mut tape = Tape::new(&net.params);
    let lp = net.sequence_log_prob(&mut tape, &src, &target, GateMode::GenerateOnly).unwrap();
    let mean_nll = -tape.item(lp) / target.len() as f64;
    assert!((mean_nll - (v.len() as f64).ln()).abs() < 1e-12);
}

#[test]
fn decode_cap_and_determinism() {
    let net = toy(4);
    let v = vocab();
    let src = Source::new(&words("a b c d e"), &v, 30).unwrap();
    let mut rng = seeds::rng(1, "t", &[]);
    let one = net.generate(&src, &v, DecodeMode::Greedy, GateMode::Learned, 1, &mut rng).unwrap();
    assert_eq!(one.tokens.len(), 1);
    let a = net.generate(&src, &v, DecodeMode::Greedy, GateMode::Learned, 30, &mut rng).unwrap();
    let b = net.generate(&src, &v, DecodeMode::Greedy, GateMode::Learned, 30, &mut rng).unwrap();
    assert_eq!(a, b);
    assert!(!a.tokens.is_empty() && a.tokens.len() <= MAX_HEADLINE_LEN);
    let long = net.generate(&src, &v, DecodeMode::Sample, GateMode::Learned, 500, &mut rng).unwrap();
    assert!(long.tokens.len() <= MAX_HEADLINE_LEN);
}

#[test]
fn sampling_is_seeded_and_diverse() {
    let net = toy(5);
    let v = vocab();
    let src = Source::new(&words("a b c d e f"), &v, 30).unwrap();
    let draw = |seed: u64| {
        let mut rng = seeds::rng(seed, "sample", &[]);
        net.generate(&src, &v, DecodeMode::Sample, GateMode::Learned, 30, &mut rng).unwrap()
    };
    let mut differing = 0;
    for s in 0..10 {
        assert_eq!(draw(s), draw(s));
        if draw(s).tokens != draw(s + 100).tokens {
            differing += 1;
        }
    }
    assert!(differing >= 5, "{differing}");
}

#[test]
fn copy_only_emits_source_tokens() {
    let net = toy(6);
    let v = vocab();
    let src = Source::new(&words("b zz f qq"), &v, 30).unwrap();
    for seed in 0..10 {
        let mut rng = seeds::rng(seed, "copy", &[]);
        let out = net.generate(&src, &v, DecodeMode::Sample, GateMode::CopyOnly, 30, &mut rng).unwrap();
        assert_eq!(copy_rate(&out.tokens, &src.tokens).unwrap(), 1.0);
        assert!(out.gates.iter().all(|&g| g == 0.0));
    }
}

#[test]
fn surrogate_sign_and_zero_advantage() {
    let net = toy(7);
    let v = vocab();
    let src = Source::new(&words("a b c"), &v, 30).unwrap();
    let mut rng = seeds::rng(3, "s", &[]);
    let sampled = net.generate(&src, &v, DecodeMode::Sample, GateMode::Learned, 30, &mut rng).unwrap();
    let mut tape = Tape::new(&net.params);
    let zero = net.popularity_surrogate(&mut tape, &src, &sampled, 0.4, 0.4).unwrap();
    assert_eq!(tape.item(zero), 0.0);

    // With a positive advantage, one descent step raises log p(sampled).
    let lp_before = {
        let mut t = Tape::new(&net.params);
        let lp = net.sequence_log_prob(&mut t, &src, &sampled.ids, GateMode::Learned).unwrap();
        t.item(lp)
    };
    let grads = {
        let mut t = Tape::new(&net.params);
        let s = net.popularity_surrogate(&mut t, &src, &sampled, 0.9, 0.2).unwrap();
        assert!(t.item(s) > 0.0, "coefficient on a negative log-prob is negative");
        t.backward(s).unwrap()
    };
    let mut after = net.clone();
    Adam::with_lr(1e-2).step(&mut after.params, grads).unwrap();
    let mut t = Tape::new(&after.params);
    let lp = after.sequence_log_prob(&mut t, &src, &sampled.ids, GateMode::Learned).unwrap();
    assert!(t.item(lp) > lp_before);
}

#[test]
fn pop_failures_propagate() {
    let net = toy(8);
    let v = vocab();
    let src = Source::new(&words("a b"), &v, 30).unwrap();
    let mut tape = Tape::new(&net.params);
    let mut rng = seeds::rng(0, "x", &[]);
    let r = net.popularity_loss_step(&mut tape, &src, &v, &mut rng, |_| Err(Error::invalid("boom")));
    assert!(r.is_err());
}

#[test]
fn gradients_match_finite_differences() {
    let net = toy(9);
    let v = vocab();
    let src = Source::new(&words("a zz c d"), &v, 30).unwrap();
    let target = words("zz c e d");
    let opts = GradCheckOptions { max_coords: 12, ..GradCheckOptions::default() };
    let lf = grad_check(&net.params, |t| Ok(net.teacher_forced_loss(t, &src, &target, &v)?.loss), opts).unwrap();
    assert!(lf.max_rel_err() < 1e-6, "{:?}", lf.per_param);

    let mut rng = seeds::rng(2, "s", &[]);
    let sampled = net.generate(&src, &v, DecodeMode::Sample, GateMode::Learned, 30, &mut rng).unwrap();
    let la = grad_check(&net.params, |t| net.popularity_surrogate(t, &src, &sampled, 0.8, 0.3), opts).unwrap();
    assert!(la.max_rel_err() < 1e-6, "{:?}", la.per_param);
}

#[test]
fn pretraining_learns_to_drop_a_cue_word() {
    let v = vocab();
    let mut net = toy(10);
    let examples: Vec<AbstractorExample> = (0..48)
        .map(|i| {
            let pool = ["a", "b", "c", "d", "e", "f"];
            let t: Vec<String> = (0..3).map(|k| pool[(i * 5 + k * 7 + i / 6) % 6].to_string()).collect();
            let mut s = t.clone();
            s.insert(1 + i % 2, "h".into());
            AbstractorExample { source: Source::new(&s, &v, 30).unwrap(), target: t }
        })
        .collect();
    let cfg = AbstractorTrainConfig { epochs: 40, batch_size: 8, optimizer: Adam::with_lr(0.03) };
    let report = net.pretrain(&examples, &v, &cfg, 1, Parallelism::Parallel).unwrap();
    assert!(report.epoch_loss.last().unwrap() < &(report.epoch_loss[0] * 0.5), "{:?}", report.epoch_loss);
    let sources: Vec<Source> = examples.iter().map(|e| e.source.clone()).collect();
    let outs = net.generate_all(&sources, &v, GateMode::Learned, Parallelism::Parallel).unwrap();
    let f1: f64 = outs
        .iter()
        .zip(&examples)
        .map(|(o, e)| crate::metrics::rouge_l(&o.tokens, &e.target).unwrap().f1)
        .sum::<f64>()
        / outs.len() as f64;
    assert!(f1 > 0.8, "{f1}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn every_step_is_a_distribution(
        seed in any::<u64>(),
        src in prop::collection::vec(prop::sample::select(vec!["a", "b", "c", "zz", "yy", "h"]), 1..8),
        prefix_len in 0usize..4,
        gate in prop::sample::select(vec![GateMode::Learned, GateMode::CopyOnly, GateMode::GenerateOnly]),
    ) {
        let v = vocab();
        let net = toy(seed);
        let src = Source::new(&src.iter().map(|s| s.to_string()).collect::<Vec<_>>(), &v, 30).unwrap();
        let prefix: Vec<usize> = src.ext_ids.iter().cycle().take(prefix_len).copied().collect();
        for d in net.step_distributions(&src, &prefix, gate).unwrap() {
            prop_assert!(d.iter().all(|&p| p >= 0.0));
            prop_assert!((d.iter().sum::<f64>() - 1.0).abs() < 1e-6);
        }
    }
}
