use proptest::prelude::*;

use super::*;
use crate::error::Result;
use crate::seeds;

const TOL: f64 = 1e-6;

fn rand_tensor(rng: &mut seeds::Rng, r: usize, c: usize, lo: f64, hi: f64) -> Tensor {
    Tensor::new(r, c, (0..r * c).map(|_| rng.random_range(lo..hi)).collect()).unwrap()
}

/// Reduces `y` to a scalar through a fixed random projection so every
/// output coordinate contributes a distinct weight.
fn project(tape: &mut Tape, y: Var, seed: u64) -> Result<Var> {
    let [r, c] = tape.shape(y);
    let mut rng = seeds::rng(seed, "project", &[r as u64, c as u64]);
    let w = tape.constant(rand_tensor(&mut rng, r, c, -1.0, 1.0));
    let p = tape.mul(y, w)?;
    Ok(tape.sum(p))
}

fn check(store: &ParamStore, f: impl Fn(&mut Tape) -> Result<Var>) -> f64 {
    let opts = GradCheckOptions { max_coords: 40, ..GradCheckOptions::default() };
    grad_check(store, f, opts).unwrap().max_rel_err()
}

fn store_with(seed: u64, shapes: &[(&str, usize, usize)], lo: f64, hi: f64) -> (ParamStore, Vec<ParamId>) {
    let mut rng = seeds::rng(seed, "store", &[]);
    let mut s = ParamStore::new();
    let ids = shapes.iter().map(|&(n, r, c)| s.add(n, rand_tensor(&mut rng, r, c, lo, hi)).unwrap()).collect();
    (s, ids)
}

#[test]
fn softmax_of_zeros_is_uniform() {
    let s = ParamStore::new();
    let mut t = Tape::new(&s);
    let x = t.constant(Tensor::zeros(1, 3));
    let y = t.softmax(x);
    for v in t.value(y).data() {
        assert!((v - 1.0 / 3.0).abs() < 1e-15);
    }
}

#[test]
fn identity_matmul_is_noop() {
    let s = ParamStore::new();
    let mut t = Tape::new(&s);
    let mut rng = seeds::rng(1, "x", &[]);
    let xt = rand_tensor(&mut rng, 4, 3, -1.0, 1.0);
    let i = t.constant(Tensor::identity(4));
    let x = t.constant(xt.clone());
    let y = t.matmul(i, x).unwrap();
    assert_eq!(t.value(y), &xt);
}

#[test]
fn shape_errors_name_the_op() {
    let s = ParamStore::new();
    let mut t = Tape::new(&s);
    let a = t.constant(Tensor::zeros(2, 3));
    let b = t.constant(Tensor::zeros(2, 3));
    let e = t.matmul(a, b).unwrap_err().to_string();
    assert!(e.contains("matmul") && e.contains("[2, 3]"), "{e}");
    let c = t.constant(Tensor::zeros(3, 2));
    assert!(t.add(a, c).unwrap_err().to_string().contains("add"));
    assert!(t.concat_cols(&[a, c]).is_err());
}

#[test]
fn sum_of_squares_gradient_is_twice_the_value() {
    let (s, ids) = store_with(3, &[("w", 3, 4)], -2.0, 2.0);
    let mut t = Tape::new(&s);
    let w = t.param(ids[0]);
    let sq = t.mul(w, w).unwrap();
    let l = t.sum(sq);
    let g = t.backward(l).unwrap();
    for (gv, wv) in g.get(ids[0]).unwrap().iter().zip(s.value(ids[0]).data()) {
        assert_eq!(*gv, 2.0 * wv);
    }
    let err = check(&s, |t| {
        let w = t.param(ids[0]);
        let sq = t.mul(w, w)?;
        Ok(t.sum(sq))
    });
    assert!(err < TOL, "{err}");
}

#[test]
fn constant_function_has_zero_gradient() {
    let (s, ids) = store_with(4, &[("w", 2, 2)], -1.0, 1.0);
    let mut t = Tape::new(&s);
    let _w = t.param(ids[0]);
    let c = t.constant(Tensor::scalar(3.0));
    let g = t.backward(c).unwrap();
    assert!(g.get(ids[0]).is_none());
    assert_eq!(g.global_norm(), 0.0);
}

#[test]
fn replay_is_bit_identical() {
    let (s, ids) = store_with(5, &[("x", 3, 4), ("w", 4, 5)], -1.0, 1.0);
    let run = || {
        let mut t = Tape::new(&s);
        let (x, w) = (t.param(ids[0]), t.param(ids[1]));
        let y = t.matmul(x, w).unwrap();
        let y = t.tanh(y);
        let y = t.softmax(y);
        let l = project(&mut t, y, 9).unwrap();
        (t.item(l), t.backward(l).unwrap())
    };
    assert_eq!(run(), run());
}

#[test]
fn clipping_scales_by_half_at_norm_four() {
    let mut s = ParamStore::new();
    let id = s.add("w", Tensor::zeros(1, 2)).unwrap();
    let mut g = Grads::zeros_like(&s);
    g.accumulate(id, &[4.0, 0.0]);
    let before = clip_global_norm(&mut g, 2.0);
    assert_eq!(before, 4.0);
    assert_eq!(g.get(id).unwrap(), &[2.0, 0.0]);
}

#[test]
fn zero_gradients_leave_parameters_unchanged() {
    let (mut s, ids) = store_with(6, &[("w", 3, 3)], -1.0, 1.0);
    let before = s.clone();
    let mut g = Grads::zeros_like(&s);
    g.accumulate(ids[0], &[0.0; 9]);
    let report = Adam::default().step(&mut s, g).unwrap();
    assert_eq!(report.step, 1);
    assert_eq!(s.value(ids[0]), before.value(ids[0]));
}

#[test]
fn non_finite_gradients_halt() {
    let (mut s, ids) = store_with(7, &[("w", 1, 2)], -1.0, 1.0);
    let mut g = Grads::zeros_like(&s);
    g.accumulate(ids[0], &[f64::NAN, 0.0]);
    assert!(matches!(Adam::default().step(&mut s, g), Err(crate::Error::NonFinite { .. })));
    assert_eq!(s.step(), 0);
}

#[test]
fn adam_trajectories_are_deterministic() {
    let run = || {
        let (mut s, ids) = store_with(8, &[("w", 2, 3)], -1.0, 1.0);
        for _ in 0..20 {
            let g = {
                let mut t = Tape::new(&s);
                let w = t.param(ids[0]);
                let y = t.tanh(w);
                let l = project(&mut t, y, 1).unwrap();
                t.backward(l).unwrap()
            };
            Adam::default().step(&mut s, g).unwrap();
        }
        s
    };
    assert_eq!(run(), run());
}

#[test]
fn adam_descends_a_quadratic() {
    let (mut s, ids) = store_with(9, &[("w", 1, 4)], -1.0, 1.0);
    let opt = Adam::with_lr(0.05);
    let loss = |s: &ParamStore| s.value(ids[0]).data().iter().map(|x| x * x).sum::<f64>();
    let start = loss(&s);
    for _ in 0..200 {
        let g = {
            let mut t = Tape::new(&s);
            let w = t.param(ids[0]);
            let sq = t.mul(w, w).unwrap();
            let l = t.sum(sq);
            t.backward(l).unwrap()
        };
        opt.step(&mut s, g).unwrap();
    }
    assert!(loss(&s) < start * 1e-2);
}

#[test]
fn checkpoint_round_trip() {
    let (mut s, _) = store_with(10, &[("emb", 5, 3), ("lstm.w", 6, 8), ("b", 1, 8)], -1.0, 1.0);
    s.step = 17;
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("net.ckpt");
    save_checkpoint(&p, "extractor", &s).unwrap();
    let (name, back) = load_checkpoint(&p).unwrap();
    assert_eq!(name, "extractor");
    assert_eq!(back.step(), 17);
    for id in s.ids() {
        assert_eq!(s.name(id), back.name(id));
        assert_eq!(s.value(id), back.value(id));
    }
    std::fs::write(&p, b"garbage\n\n").unwrap();
    assert!(matches!(load_checkpoint(&p), Err(crate::Error::Checkpoint(_))));
    assert!(matches!(load_checkpoint(&dir.path().join("nope")), Err(crate::Error::MissingFile(_))));
}

#[test]
fn grad_check_rejects_non_finite() {
    let (s, ids) = store_with(11, &[("w", 1, 2)], 1.0, 2.0);
    let r = grad_check(
        &s,
        |t| {
            let w = t.param(ids[0]);
            let big = t.affine(w, 1e308, 0.0);
            let y = t.mul(big, big)?;
            Ok(t.sum(y))
        },
        GradCheckOptions::default(),
    );
    assert!(matches!(r, Err(crate::Error::NonFinite { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn softmax_sums_to_one_and_ignores_shifts(
        vals in prop::collection::vec(-30.0f64..30.0, 1..12),
        shift in -100.0f64..100.0,
    ) {
        let s = ParamStore::new();
        let mut t = Tape::new(&s);
        let x = t.constant(Tensor::row_vector(vals.clone()));
        let xs = t.affine(x, 1.0, shift);
        let (y, ys) = (t.softmax(x), t.softmax(xs));
        let total: f64 = t.value(y).data().iter().sum();
        prop_assert!((total - 1.0).abs() < 1e-6);
        for (a, b) in t.value(y).data().iter().zip(t.value(ys).data()) {
            prop_assert!((a - b).abs() < 1e-6);
        }
    }

    #[test]
    fn clipping_never_increases_norm(
        vals in prop::collection::vec(-10.0f64..10.0, 1..16),
        max in 0.01f64..20.0,
    ) {
        let mut s = ParamStore::new();
        let id = s.add("w", Tensor::zeros(1, vals.len())).unwrap();
        let mut g = Grads::zeros_like(&s);
        g.accumulate(id, &vals);
        let before = g.clone();
        let n = clip_global_norm(&mut g, max);
        prop_assert!(g.global_norm() <= n + 1e-12);
        prop_assert!(g.global_norm() <= max + 1e-9);
        if n <= max {
            prop_assert_eq!(g, before);
        }
    }

    #[test]
    fn matmul_gradients(seed in any::<u64>(), m in 1usize..5, k in 1usize..5, n in 1usize..5) {
        let (s, ids) = store_with(seed, &[("a", m, k), ("b", k, n)], -1.0, 1.0);
        let err = check(&s, |t| {
            let (a, b) = (t.param(ids[0]), t.param(ids[1]));
            let y = t.matmul(a, b)?;
            project(t, y, seed)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn broadcast_arithmetic_gradients(seed in any::<u64>(), m in 1usize..5, n in 1usize..5, mode in 0usize..3) {
        let bshape = match mode { 0 => (m, n), 1 => (1, n), _ => (1, 1) };
        let (s, ids) = store_with(seed, &[("a", m, n), ("b", bshape.0, bshape.1)], -1.0, 1.0);
        let err = check(&s, |t| {
            let (a, b) = (t.param(ids[0]), t.param(ids[1]));
            let x = t.add(a, b)?;
            let y = t.sub(x, b)?;
            let z = t.mul(y, b)?;
            let z = t.affine(z, 0.7, 0.2);
            project(t, z, seed)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn concat_slice_transpose_gradients(seed in any::<u64>(), m in 1usize..4, n in 1usize..4, p in 1usize..4) {
        let (s, ids) = store_with(seed, &[("a", m, n), ("b", m, p), ("c", p, n)], -1.0, 1.0);
        let err = check(&s, |t| {
            let (a, b, c) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]));
            let h = t.concat_cols(&[a, b, a])?;
            let v = t.concat_rows(&[a, c])?;
            let hs = t.slice_cols(h, 1, n + p - 1)?;
            let vs = t.slice_rows(v, m.min(1), m)?;
            let vt = t.transpose(vs);
            let l1 = project(t, hs, seed)?;
            let l2 = project(t, vt, seed ^ 1)?;
            t.add(l1, l2)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn nonlinearity_gradients(seed in any::<u64>(), m in 1usize..4, n in 1usize..6) {
        let (s, ids) = store_with(seed, &[("x", m, n)], -2.0, 2.0);
        let err = check(&s, |t| {
            let x = t.param(ids[0]);
            let a = t.tanh(x);
            let b = t.sigmoid(x);
            let c = t.softmax(x);
            let d = t.log(b);
            let e = t.log(c);
            let parts = [a, b, c, d, e];
            let mut total = project(t, a, seed)?;
            for (i, &v) in parts.iter().enumerate().skip(1) {
                let l = project(t, v, seed.wrapping_add(i as u64))?;
                total = t.add(total, l)?;
            }
            let mn = t.mean(x);
            let pk = t.pick(x, m - 1, n - 1)?;
            let total = t.add(total, mn)?;
            t.add(total, pk)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn gather_gradients(seed in any::<u64>(), v in 2usize..7, e in 1usize..4, ids_raw in prop::collection::vec(0u32..100, 1..8)) {
        let (s, p) = store_with(seed, &[("emb", v, e)], -1.0, 1.0);
        let ids: Vec<u32> = ids_raw.iter().map(|i| i % v as u32).collect();
        let err = check(&s, |t| {
            let table = t.param(p[0]);
            let y = t.gather(table, &ids)?;
            let y = t.tanh(y);
            project(t, y, seed)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn conv_and_pool_gradients(seed in any::<u64>(), len in 1usize..6, e in 1usize..4, f in 1usize..4, width in 1usize..4, same in any::<bool>()) {
        let (s, ids) = store_with(seed, &[("x", len, e), ("w", width * e, f), ("b", 1, f)], -1.0, 1.0);
        let err = check(&s, |t| {
            let (x, w, b) = (t.param(ids[0]), t.param(ids[1]), t.param(ids[2]));
            let y = t.conv1d(x, w, b, width, same)?;
            let l1 = project(t, y, seed)?;
            let pooled = t.max_over_time(y);
            let l2 = project(t, pooled, seed ^ 7)?;
            t.add(l1, l2)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn lstm_cell_gradients(seed in any::<u64>(), i in 1usize..4, h in 1usize..4) {
        let (s, ids) = store_with(seed, &[("x", 1, i), ("h", 1, h), ("c", 1, h), ("w", i + h, 4 * h), ("b", 1, 4 * h)], -1.0, 1.0);
        let err = check(&s, |t| {
            let v: Vec<Var> = ids.iter().map(|&id| t.param(id)).collect();
            let out = t.lstm_cell(v[0], v[1], v[2], v[3], v[4])?;
            let hh = t.slice_cols(out, 0, h)?;
            let cc = t.slice_cols(out, h, h)?;
            let out2 = t.lstm_cell(v[0], hh, cc, v[3], v[4])?;
            project(t, out2, seed)
        });
        prop_assert!(err < TOL, "{}", err);
    }

    #[test]
    fn loss_gradients(seed in any::<u64>(), m in 1usize..4, n in 2usize..6) {
        let (s, ids) = store_with(seed, &[("z", m, n), ("q", 1, m)], -2.0, 2.0);
        let targets: Vec<usize> = (0..m).map(|r| (seed as usize + r) % n).collect();
        let labels: Vec<f64> = (0..m).map(|r| ((seed >> r) & 1) as f64).collect();
        let err = check(&s, |t| {
            let (z, q) = (t.param(ids[0]), t.param(ids[1]));
            let ce = t.cross_entropy(z, &targets)?;
            let bce = t.bce_with_logits(q, &labels)?;
            t.add(ce, bce)
        });
        prop_assert!(err < TOL, "{}", err);
    }
}
