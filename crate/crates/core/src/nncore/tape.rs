use rand::Rng;

use super::conv::GridShape;
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    AddBias(Var, Var),
    Add(Var, Var),
    Relu(Var),
    Gather(Var, Vec<usize>),
    Concat(Vec<Var>),
    /// `argmax[s * cols + c]` is the input row that won channel `c` of segment `s`.
    SegmentMax { input: Var, argmax: Vec<usize> },
    Mix { input: Var, rows: Vec<Vec<(usize, f64)>> },
    Mask(Var, Vec<f64>),
    SoftmaxCe { logits: Var, labels: Vec<usize>, probs: Vec<f64> },
    SquaredError { pred: Var, target: Vec<f64> },
    Dot(Var, Vec<f64>),
    Conv { input: Var, weight: Var, bias: Var, grid: GridShape },
}

#[derive(Debug)]
struct Node {
    value: Tensor,
    op: Op,
}

/// Records a forward computation for reverse-mode differentiation.
///
/// A tape is built per forward pass and discarded after [`Tape::backward`]. Every
/// reduction runs in a fixed order, so repeated runs are bit-identical.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
    params: Vec<(ParamId, Var)>,
}

/// Gradients of a scalar with respect to every node of a tape.
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Vec<f64>>>,
    shapes: Vec<[usize; 2]>,
    params: Vec<(ParamId, Var)>,
}

impl Gradients {
    /// Gradient of `v`; zeros when the output does not depend on it.
    pub fn of(&self, v: Var) -> Tensor {
        let [r, c] = self.shapes[v.0];
        match &self.grads[v.0] {
            Some(g) => Tensor::new(r, c, g.clone()).expect("gradient shape"),
            None => Tensor::zeros(r, c),
        }
    }

    /// Parameter gradients aligned with `store`, summed over every use on the tape.
    pub fn params(&self, store: &ParamStore) -> Vec<Tensor> {
        let mut out: Vec<Tensor> = store.iter().map(|t| Tensor::zeros(t.rows(), t.cols())).collect();
        for &(pid, var) in &self.params {
            if let Some(g) = &self.grads[var.0] {
                for (o, v) in out[pid.index()].data_mut().iter_mut().zip(g) {
                    *o += v;
                }
            }
        }
        out
    }
}

fn relu(v: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        0.0
    }
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, value: Tensor, op: Op) -> Result<Var> {
        if !value.is_finite() {
            return Err(Error::NonFinite(format!("forward value of node {}", self.nodes.len())));
        }
        self.nodes.push(Node { value, op });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].value
    }

    fn shape(&self, v: Var) -> [usize; 2] {
        self.nodes[v.0].value.shape()
    }

    /// Records an input or constant.
    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(t, Op::Leaf)
    }

    /// Records a trainable parameter; its gradient is reported by [`Gradients::params`].
    pub fn param(&mut self, store: &ParamStore, id: ParamId) -> Result<Var> {
        let v = self.leaf(store.get(id).clone())?;
        self.params.push((id, v));
        Ok(v)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let [n, k] = self.shape(a);
        let [k2, m] = self.shape(b);
        if k != k2 {
            return Err(Error::shape(format!("matmul {n}x{k} by {k2}x{m}")));
        }
        let (av, bv) = (self.value(a).data(), self.value(b).data());
        let mut out = vec![0.0; n * m];
        for i in 0..n {
            let orow = &mut out[i * m..(i + 1) * m];
            for p in 0..k {
                let x = av[i * k + p];
                if x == 0.0 {
                    continue;
                }
                let brow = &bv[p * m..(p + 1) * m];
                for j in 0..m {
                    orow[j] += x * brow[j];
                }
            }
        }
        self.push(Tensor::new(n, m, out)?, Op::MatMul(a, b))
    }

    /// Adds a `1 x m` bias to every row.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Result<Var> {
        let [n, m] = self.shape(a);
        if self.shape(bias) != [1, m] {
            return Err(Error::shape(format!("bias {:?} for {n}x{m} input", self.shape(bias))));
        }
        let b = self.value(bias).data().to_vec();
        let mut out = self.value(a).data().to_vec();
        for row in out.chunks_mut(m.max(1)) {
            for (o, bb) in row.iter_mut().zip(&b) {
                *o += bb;
            }
        }
        self.push(Tensor::new(n, m, out)?, Op::AddBias(a, bias))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        if self.shape(a) != self.shape(b) {
            return Err(Error::shape("add of differently shaped tensors"));
        }
        let [n, m] = self.shape(a);
        let out = self.value(a).data().iter().zip(self.value(b).data()).map(|(x, y)| x + y).collect();
        self.push(Tensor::new(n, m, out)?, Op::Add(a, b))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        let [n, m] = self.shape(a);
        let out = self.value(a).data().iter().map(|&v| relu(v)).collect();
        self.push(Tensor::new(n, m, out)?, Op::Relu(a))
    }

    /// Row gather: output row `i` is input row `index[i]`.
    pub fn gather_rows(&mut self, a: Var, index: Vec<usize>) -> Result<Var> {
        let [n, m] = self.shape(a);
        if let Some(&bad) = index.iter().find(|&&i| i >= n) {
            return Err(Error::shape(format!("gather row {bad} of {n}")));
        }
        let av = self.value(a);
        let mut out = Vec::with_capacity(index.len() * m);
        for &i in &index {
            out.extend_from_slice(av.row(i));
        }
        let rows = index.len();
        self.push(Tensor::new(rows, m, out)?, Op::Gather(a, index))
    }

    /// Column-wise concatenation of tensors with equal row counts.
    pub fn concat_cols(&mut self, parts: &[Var]) -> Result<Var> {
        let n = parts.first().map(|&p| self.shape(p)[0]).ok_or_else(|| Error::shape("empty concat"))?;
        if parts.iter().any(|&p| self.shape(p)[0] != n) {
            return Err(Error::shape("concat of tensors with different row counts"));
        }
        let m: usize = parts.iter().map(|&p| self.shape(p)[1]).sum();
        let mut out = Vec::with_capacity(n * m);
        for i in 0..n {
            for &p in parts {
                out.extend_from_slice(self.value(p).row(i));
            }
        }
        self.push(Tensor::new(n, m, out)?, Op::Concat(parts.to_vec()))
    }

    /// Channel-wise max over consecutive row segments `offsets[s]..offsets[s + 1]`.
    ///
    /// Ties go to the smallest row index within the segment.
    pub fn segment_max(&mut self, a: Var, offsets: &[usize]) -> Result<Var> {
        let [n, m] = self.shape(a);
        if offsets.len() < 2 || offsets[0] != 0 || *offsets.last().unwrap() != n {
            return Err(Error::shape("segment offsets must start at 0 and end at the row count"));
        }
        let segs = offsets.len() - 1;
        let av = self.value(a).data();
        let mut out = vec![0.0; segs * m];
        let mut argmax = vec![0usize; segs * m];
        for s in 0..segs {
            let (lo, hi) = (offsets[s], offsets[s + 1]);
            if hi <= lo {
                return Err(Error::input(format!("max pool over empty segment {s}")));
            }
            for c in 0..m {
                let mut best = lo;
                let mut bv = av[lo * m + c];
                for r in lo + 1..hi {
                    let v = av[r * m + c];
                    if v > bv {
                        bv = v;
                        best = r;
                    }
                }
                out[s * m + c] = bv;
                argmax[s * m + c] = best;
            }
        }
        self.push(Tensor::new(segs, m, out)?, Op::SegmentMax { input: a, argmax })
    }

    /// Max over all rows: `n x m -> 1 x m`.
    pub fn max_rows(&mut self, a: Var) -> Result<Var> {
        let n = self.shape(a)[0];
        if n == 0 {
            return Err(Error::input("max pool over zero rows"));
        }
        self.segment_max(a, &[0, n])
    }

    /// Sparse linear mixing of rows: output row `i` is `sum_k w * input[j]` over `rows[i]`.
    pub fn mix_rows(&mut self, a: Var, rows: Vec<Vec<(usize, f64)>>) -> Result<Var> {
        let [n, m] = self.shape(a);
        let av = self.value(a);
        let mut out = vec![0.0; rows.len() * m];
        for (i, terms) in rows.iter().enumerate() {
            for &(j, w) in terms {
                if j >= n {
                    return Err(Error::shape(format!("mix row {j} of {n}")));
                }
                for (o, v) in out[i * m..(i + 1) * m].iter_mut().zip(av.row(j)) {
                    *o += w * v;
                }
            }
        }
        let r = rows.len();
        self.push(Tensor::new(r, m, out)?, Op::Mix { input: a, rows })
    }

    /// Element-wise product with a constant mask of the same size.
    pub fn mask(&mut self, a: Var, mask: Vec<f64>) -> Result<Var> {
        let [n, m] = self.shape(a);
        if mask.len() != n * m {
            return Err(Error::shape("mask size"));
        }
        let out = self.value(a).data().iter().zip(&mask).map(|(x, k)| x * k).collect();
        self.push(Tensor::new(n, m, out)?, Op::Mask(a, mask))
    }

    /// Inverted dropout. Identity when `training` is false or `rate == 0`.
    pub fn dropout(&mut self, a: Var, rate: f64, training: bool, rng: &mut impl Rng) -> Result<Var> {
        if !(0.0..1.0).contains(&rate) {
            return Err(Error::input(format!("dropout rate must be in [0, 1), got {rate}")));
        }
        if !training || rate == 0.0 {
            return Ok(a);
        }
        let keep = 1.0 / (1.0 - rate);
        let mask = (0..self.value(a).len())
            .map(|_| if rng.gen::<f64>() < rate { 0.0 } else { keep })
            .collect();
        self.mask(a, mask)
    }

    /// Mean softmax cross-entropy over rows; `labels[i]` is the class of row `i`.
    pub fn softmax_cross_entropy(&mut self, logits: Var, labels: &[usize]) -> Result<Var> {
        let [n, k] = self.shape(logits);
        if k < 2 {
            return Err(Error::input("cross-entropy needs at least two classes"));
        }
        if labels.len() != n {
            return Err(Error::shape(format!("{} labels for {n} rows", labels.len())));
        }
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::input(format!("label {bad} out of range for {k} classes")));
        }
        let lv = self.value(logits).data();
        let mut probs = vec![0.0; n * k];
        let mut loss = 0.0;
        for i in 0..n {
            let row = &lv[i * k..(i + 1) * k];
            let mx = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let z: f64 = row.iter().map(|v| (v - mx).exp()).sum();
            for c in 0..k {
                probs[i * k + c] = (row[c] - mx).exp() / z;
            }
            loss += z.ln() - (row[labels[i]] - mx);
        }
        loss /= n as f64;
        self.push(Tensor::scalar(loss), Op::SoftmaxCe { logits, labels: labels.to_vec(), probs })
    }

    /// Mean over rows of the squared L2 distance to `target`.
    pub fn squared_error(&mut self, pred: Var, target: &Tensor) -> Result<Var> {
        if self.shape(pred) != target.shape() {
            return Err(Error::shape("prediction and target shapes differ"));
        }
        let n = self.shape(pred)[0].max(1) as f64;
        let loss: f64 =
            self.value(pred).data().iter().zip(target.data()).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / n;
        self.push(Tensor::scalar(loss), Op::SquaredError { pred, target: target.data().to_vec() })
    }

    /// `sum(a * weights)`; reduces any tensor to a scalar with known gradient `weights`.
    pub fn dot_const(&mut self, a: Var, weights: &Tensor) -> Result<Var> {
        if self.shape(a) != weights.shape() {
            return Err(Error::shape("dot weights shape"));
        }
        let s: f64 = self.value(a).data().iter().zip(weights.data()).map(|(x, w)| x * w).sum();
        self.push(Tensor::scalar(s), Op::Dot(a, weights.data().to_vec()))
    }

    /// Dense same-padded convolution with kernel 3 on every axis of `grid`.
    ///
    /// `input` is `cells x c_in`, `weight` is `(taps * c_in) x c_out` with row
    /// `tap * c_in + ci`, `bias` is `1 x c_out`.
    pub fn conv(&mut self, input: Var, weight: Var, bias: Var, grid: &GridShape) -> Result<Var> {
        let [cells, cin] = self.shape(input);
        let taps = grid.taps().len();
        let [wr, cout] = self.shape(weight);
        if cells != grid.cells() || wr != taps * cin || self.shape(bias) != [1, cout] {
            return Err(Error::shape(format!(
                "conv input {cells}x{cin}, weight {wr}x{cout} on grid {:?}",
                grid.dims()
            )));
        }
        let (xv, wv, bv) = (self.value(input).data(), self.value(weight).data(), self.value(bias).data());
        let mut out = vec![0.0; cells * cout];
        for cell in 0..cells {
            let orow = &mut out[cell * cout..(cell + 1) * cout];
            orow.copy_from_slice(bv);
            for tap in 0..taps {
                let Some(nb) = grid.neighbor(cell, tap) else { continue };
                for ci in 0..cin {
                    let x = xv[nb * cin + ci];
                    if x == 0.0 {
                        continue;
                    }
                    let wrow = &wv[(tap * cin + ci) * cout..(tap * cin + ci + 1) * cout];
                    for co in 0..cout {
                        orow[co] += x * wrow[co];
                    }
                }
            }
        }
        self.push(Tensor::new(cells, cout, out)?, Op::Conv { input, weight, bias, grid: grid.clone() })
    }

    /// Reverse pass from scalar `output`.
    pub fn backward(&self, output: Var) -> Result<Gradients> {
        if self.shape(output) != [1, 1] {
            return Err(Error::shape("backward needs a scalar output"));
        }
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; self.nodes.len()];
        grads[output.0] = Some(vec![1.0]);
        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            let [n, m] = node.value.shape();
            match &node.op {
                Op::Leaf => {}
                Op::MatMul(a, b) => {
                    let k = self.shape(*a)[1];
                    let (av, bv) = (self.value(*a).data(), self.value(*b).data());
                    let ga = acc(&mut grads, *a, n * k);
                    for i in 0..n {
                        for p in 0..k {
                            let mut s = 0.0;
                            for j in 0..m {
                                s += g[i * m + j] * bv[p * m + j];
                            }
                            ga[i * k + p] += s;
                        }
                    }
                    let gb = acc(&mut grads, *b, k * m);
                    for i in 0..n {
                        for p in 0..k {
                            let x = av[i * k + p];
                            if x == 0.0 {
                                continue;
                            }
                            for j in 0..m {
                                gb[p * m + j] += x * g[i * m + j];
                            }
                        }
                    }
                }
                Op::AddBias(a, bias) => {
                    add_into(acc(&mut grads, *a, n * m), &g);
                    let gb = acc(&mut grads, *bias, m);
                    for row in g.chunks(m.max(1)) {
                        add_into(gb, row);
                    }
                }
                Op::Add(a, b) => {
                    add_into(acc(&mut grads, *a, n * m), &g);
                    add_into(acc(&mut grads, *b, n * m), &g);
                }
                Op::Relu(a) => {
                    let av = self.value(*a).data();
                    let ga = acc(&mut grads, *a, n * m);
                    for i in 0..n * m {
                        if av[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                }
                Op::Gather(a, index) => {
                    let len = self.value(*a).len();
                    let ga = acc(&mut grads, *a, len);
                    for (i, &src) in index.iter().enumerate() {
                        add_into(&mut ga[src * m..(src + 1) * m], &g[i * m..(i + 1) * m]);
                    }
                }
                Op::Concat(parts) => {
                    let mut col = 0;
                    for &p in parts {
                        let pc = self.shape(p)[1];
                        let gp = acc(&mut grads, p, n * pc);
                        for i in 0..n {
                            add_into(&mut gp[i * pc..(i + 1) * pc], &g[i * m + col..i * m + col + pc]);
                        }
                        col += pc;
                    }
                }
                Op::SegmentMax { input, argmax } => {
                    let len = self.value(*input).len();
                    let gi = acc(&mut grads, *input, len);
                    for s in 0..n {
                        for c in 0..m {
                            gi[argmax[s * m + c] * m + c] += g[s * m + c];
                        }
                    }
                }
                Op::Mix { input, rows } => {
                    let len = self.value(*input).len();
                    let gi = acc(&mut grads, *input, len);
                    for (i, terms) in rows.iter().enumerate() {
                        for &(j, w) in terms {
                            for c in 0..m {
                                gi[j * m + c] += w * g[i * m + c];
                            }
                        }
                    }
                }
                Op::Mask(a, mask) => {
                    let ga = acc(&mut grads, *a, n * m);
                    for i in 0..n * m {
                        ga[i] += g[i] * mask[i];
                    }
                }
                Op::SoftmaxCe { logits, labels, probs } => {
                    let [r, k] = self.shape(*logits);
                    let scale = g[0] / r as f64;
                    let gl = acc(&mut grads, *logits, r * k);
                    for i in 0..r {
                        for c in 0..k {
                            let onehot = if labels[i] == c { 1.0 } else { 0.0 };
                            gl[i * k + c] += scale * (probs[i * k + c] - onehot);
                        }
                    }
                }
                Op::SquaredError { pred, target } => {
                    let [r, _] = self.shape(*pred);
                    let scale = 2.0 * g[0] / r.max(1) as f64;
                    let pv = self.value(*pred).data();
                    let gp = acc(&mut grads, *pred, pv.len());
                    for i in 0..pv.len() {
                        gp[i] += scale * (pv[i] - target[i]);
                    }
                }
                Op::Dot(a, w) => {
                    let ga = acc(&mut grads, *a, w.len());
                    for i in 0..w.len() {
                        ga[i] += g[0] * w[i];
                    }
                }
                Op::Conv { input, weight, bias, grid } => {
                    let cin = self.shape(*input)[1];
                    let taps = grid.taps().len();
                    let (xv, wv) = (self.value(*input).data(), self.value(*weight).data());
                    let gb = acc(&mut grads, *bias, m);
                    for row in g.chunks(m) {
                        add_into(gb, row);
                    }
                    let gw = acc(&mut grads, *weight, taps * cin * m);
                    for cell in 0..n {
                        let grow = &g[cell * m..(cell + 1) * m];
                        for tap in 0..taps {
                            let Some(nb) = grid.neighbor(cell, tap) else { continue };
                            for ci in 0..cin {
                                let x = xv[nb * cin + ci];
                                if x == 0.0 {
                                    continue;
                                }
                                let w0 = (tap * cin + ci) * m;
                                for co in 0..m {
                                    gw[w0 + co] += x * grow[co];
                                }
                            }
                        }
                    }
                    let gx = acc(&mut grads, *input, n * cin);
                    for cell in 0..n {
                        let grow = &g[cell * m..(cell + 1) * m];
                        for tap in 0..taps {
                            let Some(nb) = grid.neighbor(cell, tap) else { continue };
                            for ci in 0..cin {
                                let w0 = (tap * cin + ci) * m;
                                let mut s = 0.0;
                                for co in 0..m {
                                    s += wv[w0 + co] * grow[co];
                                }
                                gx[nb * cin + ci] += s;
                            }
                        }
                    }
                }
            }
            grads[idx] = Some(g);
        }
        for (i, g) in grads.iter().enumerate() {
            if let Some(g) = g {
                if g.iter().any(|v| !v.is_finite()) {
                    return Err(Error::NonFinite(format!("gradient of node {i}")));
                }
            }
        }
        Ok(Gradients {
            grads,
            shapes: self.nodes.iter().map(|n| n.value.shape()).collect(),
            params: self.params.clone(),
        })
    }
}

fn acc(grads: &mut [Option<Vec<f64>>], v: Var, len: usize) -> &mut Vec<f64> {
    grads[v.0].get_or_insert_with(|| vec![0.0; len])
}

fn add_into(dst: &mut [f64], src: &[f64]) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += s;
    }
}
