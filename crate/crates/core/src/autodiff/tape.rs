use super::{Grads, ParamId, ParamStore, Tensor};
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Bcast {
    Same,
    Row,
    Scalar,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Axis {
    Rows,
    Cols,
}

#[derive(Debug)]
enum Op {
    Leaf,
    Param(ParamId),
    MatMul(Var, Var),
    Add(Var, Var, Bcast),
    Sub(Var, Var, Bcast),
    Mul(Var, Var, Bcast),
    Affine(Var, f64),
    Concat(Vec<Var>, Axis),
    Slice { x: Var, start: usize, axis: Axis },
    Transpose(Var),
    Tanh(Var),
    Sigmoid(Var),
    Log { x: Var, floor: f64 },
    Softmax(Var),
    Gather { table: Var, ids: Vec<usize> },
    Conv { x: Var, w: Var, b: Var, width: usize },
    MaxPool { x: Var, argmax: Vec<usize> },
    LstmCell { x: Var, h: Var, c: Var, w: Var, b: Var, gates: Vec<f64> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Vec<f64> },
    BceLogits { logits: Var, labels: Vec<f64> },
    Sum(Var),
    Mean(Var),
    Pick { x: Var, index: usize },
}

struct Node {
    value: Option<Tensor>,
    op: Op,
}

/// Records a computation over the parameters of one [`ParamStore`].
pub struct Tape<'s> {
    store: &'s ParamStore,
    nodes: Vec<Node>,
    param_vars: Vec<Option<Var>>,
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn shape_err(op: &'static str, parts: &[&Tensor]) -> Error {
    Error::Shape {
        op,
        shapes: parts.iter().map(|t| t.shape_str()).collect::<Vec<_>>().join(" vs "),
    }
}

impl<'s> Tape<'s> {
    pub fn new(store: &'s ParamStore) -> Self {
        Self { store, nodes: Vec::new(), param_vars: vec![None; store.len()] }
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        let node = &self.nodes[v.0];
        match (&node.value, &node.op) {
            (Some(t), _) => t,
            (None, Op::Param(id)) => self.store.value(*id),
            _ => unreachable!("node without value"),
        }
    }

    pub fn shape(&self, v: Var) -> [usize; 2] {
        self.value(v).shape()
    }

    pub fn item(&self, v: Var) -> f64 {
        self.value(v).item()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Var {
        self.nodes.push(Node { value: Some(value), op });
        Var(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> Var {
        self.push(value, Op::Leaf)
    }

    /// A parameter leaf; repeated calls return the same node.
    pub fn param(&mut self, id: ParamId) -> Var {
        if let Some(v) = self.param_vars[id.0] {
            return v;
        }
        self.nodes.push(Node { value: None, op: Op::Param(id) });
        let v = Var(self.nodes.len() - 1);
        self.param_vars[id.0] = Some(v);
        v
    }

    /// A constant copy of `v`; no gradient flows back through it.
    pub fn detach(&mut self, v: Var) -> Var {
        let t = self.value(v).clone();
        self.constant(t)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([m, k], [k2, n]) = (ta.shape(), tb.shape());
        if k != k2 {
            return Err(shape_err("matmul", &[ta, tb]));
        }
        let mut out = vec![0.0; m * n];
        let (ad, bd) = (ta.data(), tb.data());
        for i in 0..m {
            let orow = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let aip = ad[i * k + p];
                if aip == 0.0 {
                    continue;
                }
                let brow = &bd[p * n..(p + 1) * n];
                for (o, &bv) in orow.iter_mut().zip(brow) {
                    *o += aip * bv;
                }
            }
        }
        Ok(self.push(Tensor::new(m, n, out)?, Op::MatMul(a, b)))
    }

    fn bcast(&self, op: &'static str, a: Var, b: Var) -> Result<Bcast> {
        let (ta, tb) = (self.value(a), self.value(b));
        let ([m, n], [p, q]) = (ta.shape(), tb.shape());
        if (m, n) == (p, q) {
            Ok(Bcast::Same)
        } else if p == 1 && q == 1 {
            Ok(Bcast::Scalar)
        } else if p == 1 && q == n {
            Ok(Bcast::Row)
        } else {
            Err(shape_err(op, &[ta, tb]))
        }
    }

    fn binary(&mut self, op: &'static str, a: Var, b: Var, f: fn(f64, f64) -> f64) -> Result<(Tensor, Bcast)> {
        let mode = self.bcast(op, a, b)?;
        let (ta, tb) = (self.value(a), self.value(b));
        let n = ta.cols();
        let bd = tb.data();
        let data = ta
            .data()
            .iter()
            .enumerate()
            .map(|(i, &x)| {
                let y = match mode {
                    Bcast::Same => bd[i],
                    Bcast::Row => bd[i % n],
                    Bcast::Scalar => bd[0],
                };
                f(x, y)
            })
            .collect();
        Ok((Tensor::new(ta.rows(), n, data)?, mode))
    }

    /// `a + b`, where `b` may be a `[1, n]` row or a `[1, 1]` scalar.
    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.binary("add", a, b, |x, y| x + y)?;
        Ok(self.push(t, Op::Add(a, b, m)))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.binary("sub", a, b, |x, y| x - y)?;
        Ok(self.push(t, Op::Sub(a, b, m)))
    }

    /// Element-wise product with the same broadcasting as [`Tape::add`].
    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (t, m) = self.binary("mul", a, b, |x, y| x * y)?;
        Ok(self.push(t, Op::Mul(a, b, m)))
    }

    /// `scale * x + shift`.
    pub fn affine(&mut self, x: Var, scale: f64, shift: f64) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|v| scale * v + shift).collect();
        let t = Tensor::new(tx.rows(), tx.cols(), data).expect("same shape");
        self.push(t, Op::Affine(x, scale))
    }

    pub fn scale(&mut self, x: Var, s: f64) -> Var {
        self.affine(x, s, 0.0)
    }

    fn concat(&mut self, parts: &[Var], axis: Axis) -> Result<Var> {
        if parts.is_empty() {
            return Err(Error::Shape { op: "concat", shapes: "no inputs".into() });
        }
        let tensors: Vec<&Tensor> = parts.iter().map(|&p| self.value(p)).collect();
        let t = match axis {
            Axis::Cols => {
                let rows = tensors[0].rows();
                if tensors.iter().any(|t| t.rows() != rows) {
                    return Err(shape_err("concat_cols", &tensors));
                }
                let cols: usize = tensors.iter().map(|t| t.cols()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for r in 0..rows {
                    for t in &tensors {
                        data.extend_from_slice(t.row(r));
                    }
                }
                Tensor::new(rows, cols, data)?
            }
            Axis::Rows => {
                let cols = tensors[0].cols();
                if tensors.iter().any(|t| t.cols() != cols) {
                    return Err(shape_err("concat_rows", &tensors));
                }
                let rows: usize = tensors.iter().map(|t| t.rows()).sum();
                let mut data = Vec::with_capacity(rows * cols);
                for t in &tensors {
                    data.extend_from_slice(t.data());
                }
                Tensor::new(rows, cols, data)?
            }
        };
        Ok(self.push(t, Op::Concat(parts.to_vec(), axis)))
    }

    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis::Cols)
    }

    /// Stacks inputs vertically.
    pub fn concat_rows(&mut self, parts: &[Var]) -> Result<Var> {
        self.concat(parts, Axis::Rows)
    }

    pub fn slice_cols(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if start + len > tx.cols() || len == 0 {
            return Err(Error::Shape { op: "slice_cols", shapes: format!("{} [{start}..{})", tx.shape_str(), start + len) });
        }
        let mut data = Vec::with_capacity(tx.rows() * len);
        for r in 0..tx.rows() {
            data.extend_from_slice(&tx.row(r)[start..start + len]);
        }
        let t = Tensor::new(tx.rows(), len, data)?;
        Ok(self.push(t, Op::Slice { x, start, axis: Axis::Cols }))
    }

    pub fn slice_rows(&mut self, x: Var, start: usize, len: usize) -> Result<Var> {
        let tx = self.value(x);
        if start + len > tx.rows() || len == 0 {
            return Err(Error::Shape { op: "slice_rows", shapes: format!("{} [{start}..{})", tx.shape_str(), start + len) });
        }
        let c = tx.cols();
        let t = Tensor::new(len, c, tx.data()[start * c..(start + len) * c].to_vec())?;
        Ok(self.push(t, Op::Slice { x, start, axis: Axis::Rows }))
    }

    pub fn row(&mut self, x: Var, r: usize) -> Result<Var> {
        self.slice_rows(x, r, 1)
    }

    pub fn transpose(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let [m, n] = tx.shape();
        let mut data = vec![0.0; m * n];
        for i in 0..m {
            for j in 0..n {
                data[j * m + i] = tx.get(i, j);
            }
        }
        let t = Tensor::new(n, m, data).expect("transpose");
        self.push(t, Op::Transpose(x))
    }

    fn unary(&mut self, x: Var, f: impl Fn(f64) -> f64, op: Op) -> Var {
        let tx = self.value(x);
        let data = tx.data().iter().map(|&v| f(v)).collect();
        let t = Tensor::new(tx.rows(), tx.cols(), data).expect("same shape");
        self.push(t, op)
    }

    pub fn tanh(&mut self, x: Var) -> Var {
        self.unary(x, f64::tanh, Op::Tanh(x))
    }

    pub fn sigmoid(&mut self, x: Var) -> Var {
        self.unary(x, sigmoid, Op::Sigmoid(x))
    }

    /// Natural log of `max(x, floor)`; below the floor the gradient is zero.
    pub fn log_floor(&mut self, x: Var, floor: f64) -> Var {
        self.unary(x, |v| v.max(floor).ln(), Op::Log { x, floor })
    }

    pub fn log(&mut self, x: Var) -> Var {
        self.log_floor(x, 1e-12)
    }

    /// Softmax over each row.
    pub fn softmax(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let [m, n] = tx.shape();
        let mut data = vec![0.0; m * n];
        for r in 0..m {
            let row = tx.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let out = &mut data[r * n..(r + 1) * n];
            let mut total = 0.0;
            for (o, &v) in out.iter_mut().zip(row) {
                *o = (v - max).exp();
                total += *o;
            }
            out.iter_mut().for_each(|o| *o /= total);
        }
        let t = Tensor::new(m, n, data).expect("softmax");
        self.push(t, Op::Softmax(x))
    }

    /// Rows of `table` selected by `ids`.
    pub fn gather(&mut self, table: Var, ids: &[u32]) -> Result<Var> {
        let tt = self.value(table);
        let [v, e] = tt.shape();
        if ids.is_empty() || ids.iter().any(|&i| i as usize >= v) {
            return Err(Error::Shape { op: "gather", shapes: format!("{} with {} ids", tt.shape_str(), ids.len()) });
        }
        let mut data = Vec::with_capacity(ids.len() * e);
        for &i in ids {
            data.extend_from_slice(tt.row(i as usize));
        }
        let t = Tensor::new(ids.len(), e, data)?;
        Ok(self.push(t, Op::Gather { table, ids: ids.iter().map(|&i| i as usize).collect() }))
    }

    /// 1-D convolution over the token (row) axis.
    ///
    /// `x` is `[T, E]`, `w` is `[width·E, F]`, `b` is `[1, F]`. Output row
    /// `t` covers input rows `t..t+width`, with rows past the end read as
    /// zeros. With `same` the output has `T` rows, otherwise
    /// `max(T - width + 1, 1)`.
    pub fn conv1d(&mut self, x: Var, w: Var, b: Var, width: usize, same: bool) -> Result<Var> {
        let (tx, tw, tb) = (self.value(x), self.value(w), self.value(b));
        let [t_len, e] = tx.shape();
        let f = tw.cols();
        if width == 0 || tw.rows() != width * e || tb.shape() != [1, f] || t_len == 0 {
            return Err(shape_err("conv1d", &[tx, tw, tb]));
        }
        let out_len = if same { t_len } else { (t_len + 1).saturating_sub(width).max(1) };
        let mut data = Vec::with_capacity(out_len * f);
        for t in 0..out_len {
            let mut acc = tb.data().to_vec();
            for j in 0..width {
                if t + j >= t_len {
                    break;
                }
                let xr = tx.row(t + j);
                for (ei, &xv) in xr.iter().enumerate() {
                    if xv == 0.0 {
                        continue;
                    }
                    let wr = tw.row(j * e + ei);
                    acc.iter_mut().zip(wr).for_each(|(a, &wv)| *a += xv * wv);
                }
            }
            data.extend(acc);
        }
        let out = Tensor::new(out_len, f, data)?;
        Ok(self.push(out, Op::Conv { x, w, b, width }))
    }

    /// Column-wise maximum over rows: `[T, F] → [1, F]`.
    pub fn max_over_time(&mut self, x: Var) -> Var {
        let tx = self.value(x);
        let [m, n] = tx.shape();
        let mut argmax = vec![0usize; n];
        let mut data = tx.row(0).to_vec();
        for r in 1..m {
            for (c, &v) in tx.row(r).iter().enumerate() {
                if v > data[c] {
                    data[c] = v;
                    argmax[c] = r;
                }
            }
        }
        self.push(Tensor::row_vector(data), Op::MaxPool { x, argmax })
    }

    /// One step of a standard LSTM (gate order input, forget, cell, output).
    ///
    /// `x: [1, I]`, `h, c: [1, H]`, `w: [I + H, 4H]`, `b: [1, 4H]`.
    /// Returns `[1, 2H]` holding `[h'; c']`.
    pub fn lstm_cell(&mut self, x: Var, h: Var, c: Var, w: Var, b: Var) -> Result<Var> {
        let (tx, th, tc, tw, tb) = (self.value(x), self.value(h), self.value(c), self.value(w), self.value(b));
        let hd = th.cols();
        let i_dim = tx.cols();
        if tx.rows() != 1 || th.rows() != 1 || tc.shape() != [1, hd] || tw.shape() != [i_dim + hd, 4 * hd] || tb.shape() != [1, 4 * hd] {
            return Err(shape_err("lstm_cell", &[tx, th, tc, tw, tb]));
        }
        let mut z = tb.data().to_vec();
        for (r, &xv) in tx.data().iter().chain(th.data()).enumerate() {
            if xv == 0.0 {
                continue;
            }
            z.iter_mut().zip(tw.row(r)).for_each(|(a, &wv)| *a += xv * wv);
        }
        let mut gates = vec![0.0; 4 * hd];
        for j in 0..hd {
            gates[j] = sigmoid(z[j]);
            gates[hd + j] = sigmoid(z[hd + j]);
            gates[2 * hd + j] = z[2 * hd + j].tanh();
            gates[3 * hd + j] = sigmoid(z[3 * hd + j]);
        }
        let mut out = vec![0.0; 2 * hd];
        for j in 0..hd {
            let c_new = gates[hd + j] * tc.data()[j] + gates[j] * gates[2 * hd + j];
            out[hd + j] = c_new;
            out[j] = gates[3 * hd + j] * c_new.tanh();
        }
        Ok(self.push(Tensor::row_vector(out), Op::LstmCell { x, h, c, w, b, gates }))
    }

    /// Mean over rows of `-log softmax(logits)[target]`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Result<Var> {
        let tl = self.value(logits);
        let [m, n] = tl.shape();
        if targets.len() != m || targets.iter().any(|&t| t >= n) {
            return Err(Error::Shape { op: "cross_entropy", shapes: format!("{} with {} targets", tl.shape_str(), targets.len()) });
        }
        let mut probs = vec![0.0; m * n];
        let mut loss = 0.0;
        for r in 0..m {
            let row = tl.row(r);
            let max = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
            for c in 0..n {
                probs[r * n + c] = (row[c] - lse).exp();
            }
            loss += lse - row[targets[r]];
        }
        let t = Tensor::scalar(loss / m as f64);
        Ok(self.push(t, Op::CrossEntropy { logits, targets: targets.to_vec(), probs }))
    }

    /// Mean binary cross-entropy of logits against 0/1 (or soft) labels.
    pub fn bce_with_logits(&mut self, logits: Var, labels: &[f64]) -> Result<Var> {
        let tl = self.value(logits);
        if tl.len() != labels.len() || labels.is_empty() {
            return Err(Error::Shape { op: "bce_with_logits", shapes: format!("{} with {} labels", tl.shape_str(), labels.len()) });
        }
        let loss: f64 = tl
            .data()
            .iter()
            .zip(labels)
            .map(|(&z, &y)| z.max(0.0) - y * z + (-z.abs()).exp().ln_1p())
            .sum::<f64>()
            / labels.len() as f64;
        Ok(self.push(Tensor::scalar(loss), Op::BceLogits { logits, labels: labels.to_vec() }))
    }

    pub fn sum(&mut self, x: Var) -> Var {
        let s = self.value(x).data().iter().sum();
        self.push(Tensor::scalar(s), Op::Sum(x))
    }

    pub fn mean(&mut self, x: Var) -> Var {
        let t = self.value(x);
        let s = t.data().iter().sum::<f64>() / t.len() as f64;
        self.push(Tensor::scalar(s), Op::Mean(x))
    }

    /// The element at `(r, c)` as a scalar.
    pub fn pick(&mut self, x: Var, r: usize, c: usize) -> Result<Var> {
        let t = self.value(x);
        if r >= t.rows() || c >= t.cols() {
            return Err(Error::Shape { op: "pick", shapes: format!("{} at ({r}, {c})", t.shape_str()) });
        }
        let index = r * t.cols() + c;
        let v = t.data()[index];
        Ok(self.push(Tensor::scalar(v), Op::Pick { x, index }))
    }

    /// Reverse pass from a scalar; returns gradients for every parameter
    /// that contributed.
    pub fn backward(&self, loss: Var) -> Result<Grads> {
        let lt = self.value(loss);
        if lt.shape() != [1, 1] {
            return Err(Error::Shape { op: "backward", shapes: format!("loss must be [1, 1], got {}", lt.shape_str()) });
        }
        let mut grads: Vec<Option<Vec<f64>>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(vec![1.0]);
        let mut out = Grads { g: vec![None; self.store.len()] };

        fn buf(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut [f64] {
            grads[v.0].get_or_insert_with(|| vec![0.0; len])
        }

        for i in (0..=loss.0).rev() {
            let Some(g) = grads[i].take() else { continue };
            let node = &self.nodes[i];
            let y = self.value(Var(i));
            match &node.op {
                Op::Leaf => {}
                Op::Param(id) => out.accumulate(*id, &g),
                Op::MatMul(a, b) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let ([m, k], n) = (ta.shape(), tb.cols());
                    {
                        let ga = buf(&mut grads, *a, m * k);
                        for r in 0..m {
                            for p in 0..k {
                                let brow = tb.row(p);
                                let s: f64 = g[r * n..(r + 1) * n].iter().zip(brow).map(|(x, y)| x * y).sum();
                                ga[r * k + p] += s;
                            }
                        }
                    }
                    let gb = buf(&mut grads, *b, k * n);
                    for r in 0..m {
                        let grow = &g[r * n..(r + 1) * n];
                        for p in 0..k {
                            let a_rp = ta.data()[r * k + p];
                            if a_rp == 0.0 {
                                continue;
                            }
                            gb[p * n..(p + 1) * n].iter_mut().zip(grow).for_each(|(o, &gv)| *o += a_rp * gv);
                        }
                    }
                }
                Op::Add(a, b, mode) | Op::Sub(a, b, mode) => {
                    let sign = if matches!(node.op, Op::Sub(..)) { -1.0 } else { 1.0 };
                    buf(&mut grads, *a, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o += v);
                    let tb_len = self.value(*b).len();
                    let n = y.cols();
                    let gb = buf(&mut grads, *b, tb_len);
                    for (j, &v) in g.iter().enumerate() {
                        let idx = match mode {
                            Bcast::Same => j,
                            Bcast::Row => j % n,
                            Bcast::Scalar => 0,
                        };
                        gb[idx] += sign * v;
                    }
                }
                Op::Mul(a, b, mode) => {
                    let (ta, tb) = (self.value(*a), self.value(*b));
                    let n = y.cols();
                    let bidx = |j: usize| match mode {
                        Bcast::Same => j,
                        Bcast::Row => j % n,
                        Bcast::Scalar => 0,
                    };
                    {
                        let ga = buf(&mut grads, *a, ta.len());
                        for (j, &v) in g.iter().enumerate() {
                            ga[j] += v * tb.data()[bidx(j)];
                        }
                    }
                    let gb = buf(&mut grads, *b, tb.len());
                    for (j, &v) in g.iter().enumerate() {
                        gb[bidx(j)] += v * ta.data()[j];
                    }
                }
                Op::Affine(x, s) => {
                    buf(&mut grads, *x, g.len()).iter_mut().zip(&g).for_each(|(o, v)| *o += s * v);
                }
                Op::Concat(parts, axis) => {
                    let n = y.cols();
                    let mut offset = 0;
                    for p in parts {
                        let tp = self.value(*p);
                        let [pr, pc] = tp.shape();
                        let gp = buf(&mut grads, *p, pr * pc);
                        match axis {
                            Axis::Cols => {
                                for r in 0..pr {
                                    for c in 0..pc {
                                        gp[r * pc + c] += g[r * n + offset + c];
                                    }
                                }
                                offset += pc;
                            }
                            Axis::Rows => {
                                for (o, v) in gp.iter_mut().zip(&g[offset * n..(offset + pr) * n]) {
                                    *o += v;
                                }
                                offset += pr;
                            }
                        }
                    }
                }
                Op::Slice { x, start, axis } => {
                    let tx = self.value(*x);
                    let [_, xc] = tx.shape();
                    let [yr, yc] = y.shape();
                    let gx = buf(&mut grads, *x, tx.len());
                    match axis {
                        Axis::Cols => {
                            for r in 0..yr {
                                for c in 0..yc {
                                    gx[r * xc + start + c] += g[r * yc + c];
                                }
                            }
                        }
                        Axis::Rows => {
                            for (o, v) in gx[start * xc..(start + yr) * xc].iter_mut().zip(&g) {
                                *o += v;
                            }
                        }
                    }
                }
                Op::Transpose(x) => {
                    let [m, n] = self.value(*x).shape();
                    let gx = buf(&mut grads, *x, m * n);
                    for r in 0..m {
                        for c in 0..n {
                            gx[r * n + c] += g[c * m + r];
                        }
                    }
                }
                Op::Tanh(x) => {
                    let gx = buf(&mut grads, *x, g.len());
                    for ((o, &gv), &yv) in gx.iter_mut().zip(&g).zip(y.data()) {
                        *o += gv * (1.0 - yv * yv);
                    }
                }
                Op::Sigmoid(x) => {
                    let gx = buf(&mut grads, *x, g.len());
                    for ((o, &gv), &yv) in gx.iter_mut().zip(&g).zip(y.data()) {
                        *o += gv * yv * (1.0 - yv);
                    }
                }
                Op::Log { x, floor } => {
                    let tx = self.value(*x);
                    let gx = buf(&mut grads, *x, g.len());
                    for ((o, &gv), &xv) in gx.iter_mut().zip(&g).zip(tx.data()) {
                        if xv > *floor {
                            *o += gv / xv;
                        }
                    }
                }
                Op::Softmax(x) => {
                    let [m, n] = y.shape();
                    let gx = buf(&mut grads, *x, m * n);
                    for r in 0..m {
                        let yr = y.row(r);
                        let gr = &g[r * n..(r + 1) * n];
                        let dot: f64 = yr.iter().zip(gr).map(|(a, b)| a * b).sum();
                        for c in 0..n {
                            gx[r * n + c] += yr[c] * (gr[c] - dot);
                        }
                    }
                }
                Op::Gather { table, ids } => {
                    let tt = self.value(*table);
                    let e = tt.cols();
                    let gt = buf(&mut grads, *table, tt.len());
                    for (r, &id) in ids.iter().enumerate() {
                        for c in 0..e {
                            gt[id * e + c] += g[r * e + c];
                        }
                    }
                }
                Op::Conv { x, w, b, width } => {
                    let (tx, tw) = (self.value(*x), self.value(*w));
                    let [t_len, e] = tx.shape();
                    let f = tw.cols();
                    let out_len = y.rows();
                    {
                        let gb = buf(&mut grads, *b, f);
                        for t in 0..out_len {
                            gb.iter_mut().zip(&g[t * f..(t + 1) * f]).for_each(|(o, v)| *o += v);
                        }
                    }
                    {
                        let gw = buf(&mut grads, *w, tw.len());
                        for t in 0..out_len {
                            let gr = &g[t * f..(t + 1) * f];
                            for j in 0..*width {
                                if t + j >= t_len {
                                    break;
                                }
                                for (ei, &xv) in tx.row(t + j).iter().enumerate() {
                                    if xv == 0.0 {
                                        continue;
                                    }
                                    let row = (j * e + ei) * f;
                                    gw[row..row + f].iter_mut().zip(gr).for_each(|(o, &gv)| *o += xv * gv);
                                }
                            }
                        }
                    }
                    let gx = buf(&mut grads, *x, tx.len());
                    for t in 0..out_len {
                        let gr = &g[t * f..(t + 1) * f];
                        for j in 0..*width {
                            if t + j >= t_len {
                                break;
                            }
                            for ei in 0..e {
                                let s: f64 = tw.row(j * e + ei).iter().zip(gr).map(|(a, b)| a * b).sum();
                                gx[(t + j) * e + ei] += s;
                            }
                        }
                    }
                }
                Op::MaxPool { x, argmax } => {
                    let tx = self.value(*x);
                    let n = tx.cols();
                    let gx = buf(&mut grads, *x, tx.len());
                    for (c, &r) in argmax.iter().enumerate() {
                        gx[r * n + c] += g[c];
                    }
                }
                Op::LstmCell { x, h, c, w, b, gates } => {
                    let (tx, th, tc, tw) = (self.value(*x), self.value(*h), self.value(*c), self.value(*w));
                    let hd = th.cols();
                    let (dh, dc_out) = g.split_at(hd);
                    let mut dz = vec![0.0; 4 * hd];
                    let mut dc_prev = vec![0.0; hd];
                    for j in 0..hd {
                        let (ig, fg, gg, og) = (gates[j], gates[hd + j], gates[2 * hd + j], gates[3 * hd + j]);
                        let c_new = y.data()[hd + j];
                        let tcn = c_new.tanh();
                        let dc = dc_out[j] + dh[j] * og * (1.0 - tcn * tcn);
                        dz[j] = dc * gg * ig * (1.0 - ig);
                        dz[hd + j] = dc * tc.data()[j] * fg * (1.0 - fg);
                        dz[2 * hd + j] = dc * ig * (1.0 - gg * gg);
                        dz[3 * hd + j] = dh[j] * tcn * og * (1.0 - og);
                        dc_prev[j] = dc * fg;
                    }
                    buf(&mut grads, *c, hd).iter_mut().zip(&dc_prev).for_each(|(o, v)| *o += v);
                    buf(&mut grads, *b, 4 * hd).iter_mut().zip(&dz).for_each(|(o, v)| *o += v);
                    let i_dim = tx.cols();
                    {
                        let gw = buf(&mut grads, *w, tw.len());
                        for (r, &inp) in tx.data().iter().chain(th.data()).enumerate() {
                            if inp == 0.0 {
                                continue;
                            }
                            gw[r * 4 * hd..(r + 1) * 4 * hd].iter_mut().zip(&dz).for_each(|(o, &d)| *o += inp * d);
                        }
                    }
                    let dinp: Vec<f64> = (0..i_dim + hd)
                        .map(|r| tw.row(r).iter().zip(&dz).map(|(a, b)| a * b).sum())
                        .collect();
                    buf(&mut grads, *x, i_dim).iter_mut().zip(&dinp[..i_dim]).for_each(|(o, v)| *o += v);
                    buf(&mut grads, *h, hd).iter_mut().zip(&dinp[i_dim..]).for_each(|(o, v)| *o += v);
                }
                Op::CrossEntropy { logits, targets, probs } => {
                    let n = self.value(*logits).cols();
                    let m = targets.len();
                    let gl = buf(&mut grads, *logits, m * n);
                    let s = g[0] / m as f64;
                    for r in 0..m {
                        for c in 0..n {
                            let onehot = if c == targets[r] { 1.0 } else { 0.0 };
                            gl[r * n + c] += s * (probs[r * n + c] - onehot);
                        }
                    }
                }
                Op::BceLogits { logits, labels } => {
                    let tl = self.value(*logits);
                    let s = g[0] / labels.len() as f64;
                    let gl = buf(&mut grads, *logits, tl.len());
                    for ((o, &z), &yv) in gl.iter_mut().zip(tl.data()).zip(labels) {
                        *o += s * (sigmoid(z) - yv);
                    }
                }
                Op::Sum(x) => {
                    let n = self.value(*x).len();
                    buf(&mut grads, *x, n).iter_mut().for_each(|o| *o += g[0]);
                }
                Op::Mean(x) => {
                    let n = self.value(*x).len();
                    let s = g[0] / n as f64;
                    buf(&mut grads, *x, n).iter_mut().for_each(|o| *o += s);
                }
                Op::Pick { x, index } => {
                    let n = self.value(*x).len();
                    buf(&mut grads, *x, n)[*index] += g[0];
                }
            }
        }
        Ok(out)
    }
}
