//! Reverse-mode differentiation over dense row-major matrices.
//!
//! A [`Tape`] records every operation of one forward pass. Values are
//! `Array2<f64>`; a vector is a `1 × d` matrix. Parameters enter the tape as
//! borrowed leaves so large tables (token embeddings) are never copied, and
//! their gradients are accumulated into a [`Gradients`] buffer that can be
//! reused across the examples of a batch.
//!
//! The same tape runs at inference time; calling [`Tape::backward`] is what
//! makes it a training pass.

use ndarray::{s, Array2, ArrayView2, Axis};

use super::params::{Gradients, ParamId, ParamStore};

/// Handle to a node on a [`Tape`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(usize);

/// Row ranges of independent sequences packed into one matrix.
///
/// Convolutions never read across a segment boundary; each segment is padded
/// with zeros on its own.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Segments {
    bounds: Vec<(usize, usize)>,
}

impl Segments {
    pub fn single(len: usize) -> Self {
        Segments { bounds: vec![(0, len)] }
    }

    pub fn from_lengths(lengths: impl IntoIterator<Item = usize>) -> Self {
        let mut start = 0;
        let bounds = lengths
            .into_iter()
            .map(|len| {
                let b = (start, start + len);
                start += len;
                b
            })
            .collect();
        Segments { bounds }
    }

    pub fn total_len(&self) -> usize {
        self.bounds.last().map_or(0, |b| b.1)
    }

    pub fn iter(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.bounds.iter().copied()
    }
}

/// Padding side of a width-`k` convolution.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvPadding {
    /// Output `i` reads inputs `i - k/2 ..= i + k/2`.
    Same,
    /// Output `i` reads inputs `i - k + 1 ..= i`.
    Causal,
}

enum Op {
    Leaf,
    Param(ParamId),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    Tanh(Var),
    Sigmoid(Var),
    Glu(Var),
    MatMul(Var, Var),
    MatMulNT(Var, Var),
    GatherRows(Var, Vec<usize>),
    Conv {
        input: Var,
        weight: Var,
        bias: Var,
        cols: Array2<f64>,
        index: Vec<Option<usize>>,
        width: usize,
    },
    SoftmaxRows(Var),
    ConcatCols(Var, Var),
    ConcatRows(Vec<Var>),
    SliceCols(Var, usize, usize),
    MeanRows(Var),
    Mask(Var, Array2<f64>),
    CrossEntropy {
        logits: Var,
        targets: Vec<usize>,
        probs: Array2<f64>,
    },
}

struct Node {
    value: Option<Array2<f64>>,
    op: Op,
}

/// Records a forward computation so it can be differentiated.
pub struct Tape<'p> {
    params: &'p ParamStore,
    nodes: Vec<Node>,
}

impl<'p> Tape<'p> {
    pub fn new(params: &'p ParamStore) -> Self {
        Tape {
            params,
            nodes: Vec::with_capacity(256),
        }
    }

    fn push(&mut self, value: Array2<f64>, op: Op) -> Var {
        self.nodes.push(Node {
            value: Some(value),
            op,
        });
        Var(self.nodes.len() - 1)
    }

    /// Value of a node. Parameter leaves resolve to the store.
    pub fn value(&self, v: Var) -> ArrayView2<'_, f64> {
        let node = &self.nodes[v.0];
        match (&node.op, &node.value) {
            (Op::Param(id), _) => self.params.get(*id).view(),
            (_, Some(value)) => value.view(),
            _ => unreachable!("node without a value"),
        }
    }

    pub fn scalar(&self, v: Var) -> f64 {
        self.value(v)[[0, 0]]
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.nodes.push(Node {
            value: None,
            op: Op::Param(id),
        });
        Var(self.nodes.len() - 1)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let out = &self.value(a) + &self.value(b);
        self.push(out, Op::Add(a, b))
    }

    /// `x + row` with `row` broadcast over the rows of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let r = self.value(row);
        assert_eq!(r.nrows(), 1, "add_row expects a 1 × d row");
        let out = &self.value(x) + &r;
        self.push(out, Op::AddRow(x, row))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let out = &self.value(a) * &self.value(b);
        self.push(out, Op::Mul(a, b))
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let out = &self.value(a) * k;
        self.push(out, Op::Scale(a, k))
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(f64::tanh);
        self.push(out, Op::Tanh(a))
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let out = self.value(a).mapv(sigmoid);
        self.push(out, Op::Sigmoid(a))
    }

    /// Gated linear unit: first half of the columns times the sigmoid of the second half.
    pub fn glu(&mut self, a: Var) -> Var {
        let x = self.value(a);
        let d = x.ncols() / 2;
        assert_eq!(x.ncols(), 2 * d, "glu expects an even column count");
        let lin = x.slice(s![.., ..d]);
        let gate = x.slice(s![.., d..]).mapv(sigmoid);
        let out = &lin * &gate;
        self.push(out, Op::Glu(a))
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b));
        self.push(out, Op::MatMul(a, b))
    }

    /// `a · bᵀ`.
    pub fn matmul_nt(&mut self, a: Var, b: Var) -> Var {
        let out = self.value(a).dot(&self.value(b).t());
        self.push(out, Op::MatMulNT(a, b))
    }

    /// Row lookup; for a parameter leaf this is an embedding table read.
    pub fn gather_rows(&mut self, table: Var, rows: &[usize]) -> Var {
        let t = self.value(table);
        let mut out = Array2::zeros((rows.len(), t.ncols()));
        for (i, &r) in rows.iter().enumerate() {
            out.row_mut(i).assign(&t.row(r));
        }
        self.push(out, Op::GatherRows(table, rows.to_vec()))
    }

    /// Width-`k` convolution over each segment of `input`.
    ///
    /// `weight` is `(k · c_in) × c_out` with the tap for the earliest input
    /// first; `bias` is `1 × c_out`.
    pub fn conv1d(
        &mut self,
        input: Var,
        weight: Var,
        bias: Var,
        segments: &Segments,
        padding: ConvPadding,
    ) -> Var {
        let x = self.value(input);
        let (n, c_in) = x.dim();
        assert_eq!(segments.total_len(), n, "segments must cover the input");
        let width = self.value(weight).nrows() / c_in;
        assert_eq!(width * c_in, self.value(weight).nrows());
        let offset = match padding {
            ConvPadding::Same => (width / 2) as isize,
            ConvPadding::Causal => (width - 1) as isize,
        };
        let mut cols = Array2::zeros((n, width * c_in));
        let mut index = vec![None; n * width];
        for (lo, hi) in segments.iter() {
            for i in lo..hi {
                for k in 0..width {
                    let src = i as isize + k as isize - offset;
                    if src >= lo as isize && src < hi as isize {
                        let src = src as usize;
                        cols.slice_mut(s![i, k * c_in..(k + 1) * c_in])
                            .assign(&x.row(src));
                        index[i * width + k] = Some(src);
                    }
                }
            }
        }
        let out = &cols.dot(&self.value(weight)) + &self.value(bias);
        self.push(
            out,
            Op::Conv {
                input,
                weight,
                bias,
                cols,
                index,
                width,
            },
        )
    }

    pub fn softmax_rows(&mut self, a: Var) -> Var {
        let out = softmax_rows(self.value(a));
        self.push(out, Op::SoftmaxRows(a))
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Var {
        let out = ndarray::concatenate(Axis(1), &[self.value(a), self.value(b)])
            .expect("concat_cols: row counts differ");
        self.push(out, Op::ConcatCols(a, b))
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p)).collect();
        let out = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column counts differ");
        self.push(out, Op::ConcatRows(parts.to_vec()))
    }

    pub fn slice_cols(&mut self, a: Var, lo: usize, hi: usize) -> Var {
        let out = self.value(a).slice(s![.., lo..hi]).to_owned();
        self.push(out, Op::SliceCols(a, lo, hi))
    }

    pub fn mean_rows(&mut self, a: Var) -> Var {
        let out = self
            .value(a)
            .mean_axis(Axis(0))
            .expect("mean of an empty matrix")
            .insert_axis(Axis(0));
        self.push(out, Op::MeanRows(a))
    }

    /// Elementwise product with a fixed mask (dropout).
    pub fn mask(&mut self, a: Var, mask: Array2<f64>) -> Var {
        let out = &self.value(a) * &mask;
        self.push(out, Op::Mask(a, mask))
    }

    /// Mean negative log-likelihood of `targets` under row-wise softmax of `logits`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[usize]) -> Var {
        let probs = softmax_rows(self.value(logits));
        assert_eq!(probs.nrows(), targets.len());
        let n = targets.len().max(1) as f64;
        let lg = self.value(logits);
        let mut total = 0.0;
        for (i, &t) in targets.iter().enumerate() {
            let row = lg.row(i);
            total += log_sum_exp(row.iter().copied()) - row[t];
        }
        let out = Array2::from_elem((1, 1), total / n);
        self.push(
            out,
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
            },
        )
    }

    /// Back-propagates from the scalar `root`, accumulating parameter
    /// gradients into `grads`.
    pub fn backward(&self, root: Var, grads: &mut Gradients) {
        let mut adj: Vec<Option<Array2<f64>>> = (0..self.nodes.len()).map(|_| None).collect();
        adj[root.0] = Some(Array2::ones(self.value(root).raw_dim()));

        for idx in (0..=root.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            match &self.nodes[idx].op {
                Op::Leaf => {}
                Op::Param(id) => grads.accumulate(*id, &g),
                Op::Add(a, b) => {
                    accum(&mut adj, *a, g.view());
                    accum(&mut adj, *b, g.view());
                }
                Op::AddRow(x, row) => {
                    let summed = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accum(&mut adj, *x, g.view());
                    accum(&mut adj, *row, summed.view());
                }
                Op::Mul(a, b) => {
                    let ga = &g * &self.value(*b);
                    let gb = &g * &self.value(*a);
                    accum(&mut adj, *a, ga.view());
                    accum(&mut adj, *b, gb.view());
                }
                Op::Scale(a, k) => {
                    let ga = &g * *k;
                    accum(&mut adj, *a, ga.view());
                }
                Op::Tanh(a) => {
                    let y = self.value(Var(idx));
                    let ga = &g * &y.mapv(|t| 1.0 - t * t);
                    accum(&mut adj, *a, ga.view());
                }
                Op::Sigmoid(a) => {
                    let y = self.value(Var(idx));
                    let ga = &g * &y.mapv(|t| t * (1.0 - t));
                    accum(&mut adj, *a, ga.view());
                }
                Op::Glu(a) => {
                    let x = self.value(*a);
                    let d = x.ncols() / 2;
                    let lin = x.slice(s![.., ..d]);
                    let gate = x.slice(s![.., d..]).mapv(sigmoid);
                    let mut ga = Array2::zeros(x.raw_dim());
                    ga.slice_mut(s![.., ..d]).assign(&(&g * &gate));
                    let dgate = &g * &lin * &gate.mapv(|t| t * (1.0 - t));
                    ga.slice_mut(s![.., d..]).assign(&dgate);
                    accum(&mut adj, *a, ga.view());
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accum(&mut adj, *a, ga.view());
                    accum(&mut adj, *b, gb.view());
                }
                Op::MatMulNT(a, b) => {
                    let ga = g.dot(&self.value(*b));
                    let gb = g.t().dot(&self.value(*a));
                    accum(&mut adj, *a, ga.view());
                    accum(&mut adj, *b, gb.view());
                }
                Op::GatherRows(table, rows) => {
                    if let Op::Param(id) = self.nodes[table.0].op {
                        grads.scatter_rows(id, rows, &g);
                    } else {
                        let mut gt = Array2::zeros(self.value(*table).raw_dim());
                        for (i, &r) in rows.iter().enumerate() {
                            let mut dst = gt.row_mut(r);
                            dst += &g.row(i);
                        }
                        accum(&mut adj, *table, gt.view());
                    }
                }
                Op::Conv {
                    input,
                    weight,
                    bias,
                    cols,
                    index,
                    width,
                } => {
                    let gw = cols.t().dot(&g);
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gcols = g.dot(&self.value(*weight).t());
                    let c_in = self.value(*input).ncols();
                    let mut gx = Array2::zeros(self.value(*input).raw_dim());
                    for i in 0..gcols.nrows() {
                        for k in 0..*width {
                            if let Some(src) = index[i * width + k] {
                                let mut dst = gx.row_mut(src);
                                dst += &gcols.slice(s![i, k * c_in..(k + 1) * c_in]);
                            }
                        }
                    }
                    accum(&mut adj, *input, gx.view());
                    accum(&mut adj, *weight, gw.view());
                    accum(&mut adj, *bias, gb.view());
                }
                Op::SoftmaxRows(a) => {
                    let y = self.value(Var(idx));
                    let dot = (&g * &y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    let ga = &y * &(&g - &dot);
                    accum(&mut adj, *a, ga.view());
                }
                Op::ConcatCols(a, b) => {
                    let da = self.value(*a).ncols();
                    accum(&mut adj, *a, g.slice(s![.., ..da]));
                    accum(&mut adj, *b, g.slice(s![.., da..]));
                }
                Op::ConcatRows(parts) => {
                    let mut lo = 0;
                    for &p in parts {
                        let n = self.value(p).nrows();
                        accum(&mut adj, p, g.slice(s![lo..lo + n, ..]));
                        lo += n;
                    }
                }
                Op::SliceCols(a, lo, hi) => {
                    let mut ga = Array2::zeros(self.value(*a).raw_dim());
                    ga.slice_mut(s![.., *lo..*hi]).assign(&g);
                    accum(&mut adj, *a, ga.view());
                }
                Op::MeanRows(a) => {
                    let x = self.value(*a);
                    let n = x.nrows() as f64;
                    let ga = Array2::from_shape_fn(x.raw_dim(), |(_, j)| g[[0, j]] / n);
                    accum(&mut adj, *a, ga.view());
                }
                Op::Mask(a, mask) => {
                    let ga = &g * mask;
                    accum(&mut adj, *a, ga.view());
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let n = targets.len().max(1) as f64;
                    let mut ga = probs.clone();
                    for (i, &t) in targets.iter().enumerate() {
                        ga[[i, t]] -= 1.0;
                    }
                    ga *= g[[0, 0]] / n;
                    accum(&mut adj, *logits, ga.view());
                }
            }
        }
    }
}

fn accum(adj: &mut [Option<Array2<f64>>], v: Var, g: ArrayView2<'_, f64>) {
    match &mut adj[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g.to_owned()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone) -> f64 {
    let max = xs.clone().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return max;
    }
    max + xs.map(|x| (x - max).exp()).sum::<f64>().ln()
}

pub(crate) fn softmax_rows(x: ArrayView2<'_, f64>) -> Array2<f64> {
    let mut out = x.to_owned();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let z = row.sum();
        row /= z;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(
        store: &mut ParamStore,
        id: ParamId,
        f: &dyn Fn(&ParamStore) -> f64,
    ) -> Array2<f64> {
        let h = 1e-6;
        let shape = store.get(id).raw_dim();
        let mut out = Array2::zeros(shape);
        for idx in ndarray::indices(out.raw_dim()) {
            let orig = store.get(id)[idx];
            store.get_mut(id)[idx] = orig + h;
            let up = f(store);
            store.get_mut(id)[idx] = orig - h;
            let down = f(store);
            store.get_mut(id)[idx] = orig;
            out[idx] = (up - down) / (2.0 * h);
        }
        out
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>) {
        for (x, y) in a.iter().zip(b.iter()) {
            assert!((x - y).abs() < 1e-6 * (1.0 + x.abs()), "{x} vs {y}");
        }
    }

    #[test]
    fn conv_causal_respects_segments() {
        let mut store = ParamStore::default();
        let w = store.insert("w", Array2::ones((2, 1)));
        let b = store.insert("b", Array2::zeros((1, 1)));
        let mut tape = Tape::new(&store);
        let x = tape.constant(array![[1.0], [2.0], [3.0], [4.0]]);
        let (w, b) = (tape.param(w), tape.param(b));
        let y = tape.conv1d(x, w, b, &Segments::from_lengths([2, 2]), ConvPadding::Causal);
        assert_eq!(tape.value(y), array![[1.0], [3.0], [3.0], [7.0]]);
    }

    #[test]
    fn gradients_match_finite_differences() {
        let mut store = ParamStore::default();
        let emb = store.insert("emb", array![[0.1, -0.2], [0.3, 0.5], [-0.4, 0.2]]);
        let w = store.insert(
            "w",
            array![
                [0.2, -0.1, 0.3, 0.05],
                [0.1, 0.4, -0.2, 0.1],
                [-0.3, 0.2, 0.1, 0.2],
                [0.05, -0.1, 0.2, -0.3],
                [0.1, 0.1, -0.1, 0.2],
                [0.2, -0.2, 0.3, 0.1]
            ],
        );
        let bias = store.insert("bias", array![[0.01, -0.02, 0.03, 0.0]]);
        let out = store.insert("out", array![[0.3, -0.2, 0.1], [0.2, 0.4, -0.5]]);

        let f = |store: &ParamStore| -> (f64, Gradients) {
            let mut tape = Tape::new(store);
            let e = tape.param(emb);
            let x = tape.gather_rows(e, &[2, 0, 1, 1]);
            let (wv, bv) = (tape.param(w), tape.param(bias));
            let c = tape.conv1d(x, wv, bv, &Segments::from_lengths([3, 1]), ConvPadding::Same);
            let g = tape.glu(c);
            let att = tape.matmul_nt(g, x);
            let att = tape.softmax_rows(att);
            let ctx = tape.matmul(att, x);
            let h = tape.add(g, ctx);
            let h = tape.tanh(h);
            let m = tape.mean_rows(h);
            let both = tape.concat_rows(&[h, m]);
            let ov = tape.param(out);
            let logits = tape.matmul(both, ov);
            let loss = tape.cross_entropy(logits, &[0, 2, 1, 1, 0]);
            let mut grads = Gradients::new(store);
            tape.backward(loss, &mut grads);
            (tape.scalar(loss), grads)
        };
        let (_, grads) = f(&store);
        for id in [emb, w, bias, out] {
            let num = numeric_grad(&mut store, id, &|s| f(s).0);
            assert_close(&grads.get(id), &num);
        }
    }

    #[test]
    fn lstm_like_ops_have_correct_gradients() {
        let mut store = ParamStore::default();
        let a = store.insert("a", array![[0.3, -0.7, 0.2, 0.9]]);
        let f = |store: &ParamStore| -> (f64, Gradients) {
            let mut tape = Tape::new(store);
            let v = tape.param(a);
            let lo = tape.slice_cols(v, 0, 2);
            let hi = tape.slice_cols(v, 2, 4);
            let s = tape.sigmoid(lo);
            let p = tape.mul(s, hi);
            let q = tape.scale(p, 3.0);
            let cat = tape.concat_cols(q, lo);
            let k = tape.constant(array![[1.0, -2.0, 0.5, 0.25]]);
            let r = tape.add_row(cat, k);
            let m = tape.mask(r, array![[2.0, 0.0, 1.0, 1.0]]);
            let loss = tape.cross_entropy(m, &[2]);
            let mut grads = Gradients::new(store);
            tape.backward(loss, &mut grads);
            (tape.scalar(loss), grads)
        };
        let (_, grads) = f(&store);
        let num = numeric_grad(&mut store, a, &|s| f(s).0);
        assert_close(&grads.get(a), &num);
    }
}
