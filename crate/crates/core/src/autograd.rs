//! Reverse-mode automatic differentiation over dense `f64` matrices.
//!
//! Every value on a [`Tape`] is a 2-D array. Spatiotemporal activations use a
//! channel-major layout: rows are channels, columns enumerate
//! `(batch, time, node)` with the node index varying fastest. That layout lets
//! channel mixing be a left matrix product and node mixing a right product on
//! a reshaped view, so both stay single GEMM calls.

use ndarray::{Array2, Axis};

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Transpose(Var),
    Add(Var, Var),
    Sub(Var, Var),
    Mul(Var, Var),
    Scale(Var, f64),
    AddBias(Var, Var),
    Tanh(Var),
    Sigmoid(Var),
    Relu(Var),
    SoftmaxRows(Var),
    LogSoftmaxRows(Var, Option<Vec<bool>>),
    ConcatRows(Vec<Var>),
    SelectCols(Var, Vec<usize>),
    TimeShift { src: Var, block: usize, offset: usize },
    NodeMix { h: Var, adj: Var, n: usize },
    MeanCols(Var),
    StandardizeRows(Var, f64),
    Sum(Var),
    Mse(Var, Var),
    Pick(Var, usize, usize),
}

#[derive(Debug)]
struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
}

/// Gradients produced by [`Tape::backward`], indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }

    /// Gradient of `v`, or zeros shaped like `like` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<f64>> {
        self.grads.get_mut(v.0).and_then(|g| g.take())
    }
}

/// Append-only computation record.
#[derive(Debug, Default)]
pub struct Tape {
    nodes: Vec<Node>,
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

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node { value, op, needs_grad });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    pub fn leaf(&mut self, value: Array2<f64>, requires_grad: bool) -> Var {
        self.push(value.as_standard_layout().into_owned(), Op::Leaf, requires_grad)
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.leaf(value, false)
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.nodes[v.0].value.dim()
    }

    /// Value of a `1 x 1` node.
    pub fn scalar(&self, v: Var) -> f64 {
        self.nodes[v.0].value[[0, 0]]
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::MatMul(a, b), ng)
    }

    pub fn transpose(&mut self, a: Var) -> Var {
        let value = self.value(a).t().as_standard_layout().into_owned();
        let ng = self.ng(a);
        self.push(value, Op::Transpose(a), ng)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Add(a, b), ng)
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) - self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Sub(a, b), ng)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let ng = self.ng(a) || self.ng(b);
        self.push(value, Op::Mul(a, b), ng)
    }

    pub fn scale(&mut self, a: Var, k: f64) -> Var {
        let value = self.value(a) * k;
        let ng = self.ng(a);
        self.push(value, Op::Scale(a, k), ng)
    }

    /// Adds a `rows x 1` column vector to every column of `a`.
    pub fn add_bias(&mut self, a: Var, bias: Var) -> Var {
        debug_assert_eq!(self.shape(bias).1, 1);
        let value = self.value(a) + self.value(bias);
        let ng = self.ng(a) || self.ng(bias);
        self.push(value, Op::AddBias(a, bias), ng)
    }

    pub fn tanh(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(f64::tanh);
        let ng = self.ng(a);
        self.push(value, Op::Tanh(a), ng)
    }

    pub fn sigmoid(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(sigmoid);
        let ng = self.ng(a);
        self.push(value, Op::Sigmoid(a), ng)
    }

    pub fn relu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(|x| x.max(0.0));
        let ng = self.ng(a);
        self.push(value, Op::Relu(a), ng)
    }

    /// Row-wise softmax. Columns flagged in `mask` receive probability exactly 0.
    pub fn softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Var {
        let value = softmax_rows(self.value(a), mask.as_deref());
        let ng = self.ng(a);
        self.push(value, Op::SoftmaxRows(a), ng)
    }

    /// Row-wise log-softmax. Masked columns hold `-inf` and pass no gradient.
    pub fn log_softmax_rows(&mut self, a: Var, mask: Option<Vec<bool>>) -> Var {
        let src = self.value(a);
        let mut value = Array2::from_elem(src.dim(), f64::NEG_INFINITY);
        for (r, row) in src.outer_iter().enumerate() {
            let lse = log_sum_exp(row.iter().copied(), mask.as_deref());
            for (c, &x) in row.iter().enumerate() {
                if !is_masked(mask.as_deref(), c) {
                    value[[r, c]] = x - lse;
                }
            }
        }
        let ng = self.ng(a);
        self.push(value, Op::LogSoftmaxRows(a, mask), ng)
    }

    pub fn concat_rows(&mut self, parts: &[Var]) -> Var {
        let views: Vec<_> = parts.iter().map(|&p| self.value(p).view()).collect();
        let value = ndarray::concatenate(Axis(0), &views).expect("concat_rows: column mismatch");
        let ng = parts.iter().any(|&p| self.ng(p));
        self.push(value, Op::ConcatRows(parts.to_vec()), ng)
    }

    pub fn select_cols(&mut self, a: Var, cols: Vec<usize>) -> Var {
        let value = self.value(a).select(Axis(1), &cols);
        let ng = self.ng(a);
        self.push(value, Op::SelectCols(a, cols), ng)
    }

    /// Within each run of `block` columns, moves column `j` to `j + offset` and
    /// zero-fills the first `offset` columns. With the `(batch, time, node)`
    /// layout and `offset = d * n` this is a causal shift of `d` time steps.
    pub fn time_shift(&mut self, a: Var, block: usize, offset: usize) -> Var {
        let value = shift_cols(self.value(a), block, offset, true);
        let ng = self.ng(a);
        self.push(value, Op::TimeShift { src: a, block, offset }, ng)
    }

    /// Node-axis mixing: `out[:, (.., i)] = sum_j adj[i, j] * h[:, (.., j)]`
    /// where columns come in contiguous groups of `n` nodes.
    pub fn node_mix(&mut self, h: Var, adj: Var, n: usize) -> Var {
        let hv = self.value(h);
        let (rows, cols) = hv.dim();
        assert_eq!(cols % n, 0, "node_mix: column count not divisible by n");
        let hr = hv.view().into_shape_with_order((rows * cols / n, n)).expect("standard layout");
        let out = hr.dot(&self.value(adj).t());
        let value = out.into_shape_with_order((rows, cols)).expect("reshape");
        let ng = self.ng(h) || self.ng(adj);
        self.push(value, Op::NodeMix { h, adj, n }, ng)
    }

    /// Column mean: `r x c -> r x 1`.
    pub fn mean_cols(&mut self, a: Var) -> Var {
        let value = self.value(a).mean_axis(Axis(1)).expect("non-empty").insert_axis(Axis(1));
        let ng = self.ng(a);
        self.push(value, Op::MeanCols(a), ng)
    }

    /// Shifts and scales every row to zero mean and unit variance over its
    /// columns; `eps` is added to the variance.
    pub fn standardize_rows(&mut self, a: Var, eps: f64) -> Var {
        let mut value = self.value(a).clone();
        for mut row in value.rows_mut() {
            let mean = row.mean().expect("non-empty");
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / row.len() as f64;
            let inv = 1.0 / (var + eps).sqrt();
            row.mapv_inplace(|v| (v - mean) * inv);
        }
        let ng = self.ng(a);
        self.push(value, Op::StandardizeRows(a, eps), ng)
    }

    pub fn sum(&mut self, a: Var) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a).sum());
        let ng = self.ng(a);
        self.push(value, Op::Sum(a), ng)
    }

    /// Mean squared difference of two equally shaped nodes.
    pub fn mse(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.dim(), bv.dim(), "mse: shape mismatch");
        let n = av.len() as f64;
        let s: f64 = av.iter().zip(bv.iter()).map(|(x, y)| (x - y) * (x - y)).sum();
        let ng = self.ng(a) || self.ng(b);
        self.push(Array2::from_elem((1, 1), s / n), Op::Mse(a, b), ng)
    }

    pub fn pick(&mut self, a: Var, r: usize, c: usize) -> Var {
        let value = Array2::from_elem((1, 1), self.value(a)[[r, c]]);
        let ng = self.ng(a);
        self.push(value, Op::Pick(a, r, c), ng)
    }

    /// Back-propagates from the scalar node `loss`.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.shape(loss), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[loss.0] = Some(Array2::ones((1, 1)));

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.needs_grad {
                continue;
            }
            let g = match grads[idx].take() {
                Some(g) => g,
                None => continue,
            };
            match &node.op {
                Op::Leaf => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        let ga = g.dot(&self.value(*b).t());
                        accumulate(&mut grads, *a, ga);
                    }
                    if self.ng(*b) {
                        let gb = self.value(*a).t().dot(&g);
                        accumulate(&mut grads, *b, gb);
                    }
                }
                Op::Transpose(a) => {
                    accumulate(&mut grads, *a, g.t().as_standard_layout().into_owned());
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, g.clone());
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Sub(a, b) => {
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, -&g);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, &g * self.value(*b));
                    }
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, &g * self.value(*a));
                    }
                }
                Op::Scale(a, k) => accumulate(&mut grads, *a, g * *k),
                Op::AddBias(a, bias) => {
                    if self.ng(*bias) {
                        let gb = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                        accumulate(&mut grads, *bias, gb);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, g);
                    }
                }
                Op::Tanh(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |d, &y| *d *= 1.0 - y * y);
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sigmoid(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(&node.value, |d, &y| *d *= y * (1.0 - y));
                    accumulate(&mut grads, *a, ga);
                }
                Op::Relu(a) => {
                    let mut ga = g;
                    ga.zip_mut_with(self.value(*a), |d, &x| {
                        if x <= 0.0 {
                            *d = 0.0
                        }
                    });
                    accumulate(&mut grads, *a, ga);
                }
                Op::SoftmaxRows(a) => {
                    let p = &node.value;
                    let mut ga = Array2::zeros(p.dim());
                    for r in 0..p.nrows() {
                        let dot: f64 = (0..p.ncols()).map(|c| g[[r, c]] * p[[r, c]]).sum();
                        for c in 0..p.ncols() {
                            ga[[r, c]] = p[[r, c]] * (g[[r, c]] - dot);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::LogSoftmaxRows(a, mask) => {
                    let y = &node.value;
                    let mut ga = Array2::zeros(y.dim());
                    for r in 0..y.nrows() {
                        let gsum: f64 = (0..y.ncols())
                            .filter(|&c| !is_masked(mask.as_deref(), c))
                            .map(|c| g[[r, c]])
                            .sum();
                        for c in 0..y.ncols() {
                            if !is_masked(mask.as_deref(), c) {
                                ga[[r, c]] = g[[r, c]] - y[[r, c]].exp() * gsum;
                            }
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::ConcatRows(parts) => {
                    let mut start = 0;
                    for &p in parts {
                        let rows = self.shape(p).0;
                        if self.ng(p) {
                            let gp = g.slice(ndarray::s![start..start + rows, ..]).to_owned();
                            accumulate(&mut grads, p, gp);
                        }
                        start += rows;
                    }
                }
                Op::SelectCols(a, cols) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    for (k, &c) in cols.iter().enumerate() {
                        let mut dst = ga.column_mut(c);
                        dst += &g.column(k);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::TimeShift { src, block, offset } => {
                    accumulate(&mut grads, *src, shift_cols(&g, *block, *offset, false));
                }
                Op::NodeMix { h, adj, n } => {
                    let (rows, cols) = g.dim();
                    let gr = g.view().into_shape_with_order((rows * cols / n, *n)).expect("layout");
                    if self.ng(*adj) {
                        let hv = self.value(*h);
                        let hr = hv.view().into_shape_with_order((rows * cols / n, *n)).expect("layout");
                        accumulate(&mut grads, *adj, gr.t().dot(&hr));
                    }
                    if self.ng(*h) {
                        let gh = gr.dot(self.value(*adj));
                        accumulate(&mut grads, *h, gh.into_shape_with_order((rows, cols)).expect("reshape"));
                    }
                }
                Op::MeanCols(a) => {
                    let (r, c) = self.shape(*a);
                    let mut ga = Array2::zeros((r, c));
                    let scale = 1.0 / c as f64;
                    for i in 0..r {
                        ga.row_mut(i).fill(g[[i, 0]] * scale);
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::StandardizeRows(a, eps) => {
                    let x = self.value(*a);
                    let mut ga = Array2::zeros(x.dim());
                    for (i, (xr, yr)) in x.rows().into_iter().zip(node.value.rows()).enumerate() {
                        let c = xr.len() as f64;
                        let mean = xr.mean().expect("non-empty");
                        let var = xr.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / c;
                        let inv = 1.0 / (var + eps).sqrt();
                        let gr = g.row(i);
                        let g_mean = gr.mean().expect("non-empty");
                        let gy_mean = gr.iter().zip(yr).map(|(a, b)| a * b).sum::<f64>() / c;
                        for j in 0..xr.len() {
                            ga[[i, j]] = inv * (gr[j] - g_mean - yr[j] * gy_mean);
                        }
                    }
                    accumulate(&mut grads, *a, ga);
                }
                Op::Sum(a) => {
                    accumulate(&mut grads, *a, Array2::from_elem(self.shape(*a), g[[0, 0]]));
                }
                Op::Mse(a, b) => {
                    let (av, bv) = (self.value(*a), self.value(*b));
                    let k = 2.0 * g[[0, 0]] / av.len() as f64;
                    let diff = (av - bv) * k;
                    if self.ng(*b) {
                        accumulate(&mut grads, *b, -&diff);
                    }
                    if self.ng(*a) {
                        accumulate(&mut grads, *a, diff);
                    }
                }
                Op::Pick(a, r, c) => {
                    let mut ga = Array2::zeros(self.shape(*a));
                    ga[[*r, *c]] = g[[0, 0]];
                    accumulate(&mut grads, *a, ga);
                }
            }
        }
        Gradients { grads }
    }
}

fn accumulate(grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn is_masked(mask: Option<&[bool]>, c: usize) -> bool {
    mask.is_some_and(|m| m[c])
}

fn log_sum_exp(xs: impl Iterator<Item = f64> + Clone, mask: Option<&[bool]>) -> f64 {
    let live = xs.enumerate().filter(|(c, _)| !is_masked(mask, *c)).map(|(_, x)| x);
    let max = live.clone().fold(f64::NEG_INFINITY, f64::max);
    max + live.map(|x| (x - max).exp()).sum::<f64>().ln()
}

fn softmax_rows(a: &Array2<f64>, mask: Option<&[bool]>) -> Array2<f64> {
    let mut out = Array2::zeros(a.dim());
    for (r, row) in a.outer_iter().enumerate() {
        let max = row
            .iter()
            .enumerate()
            .filter(|(c, _)| !is_masked(mask, *c))
            .map(|(_, &x)| x)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for (c, &x) in row.iter().enumerate() {
            if !is_masked(mask, c) {
                let e = (x - max).exp();
                out[[r, c]] = e;
                total += e;
            }
        }
        out.row_mut(r).mapv_inplace(|e| e / total);
    }
    out
}

fn shift_cols(a: &Array2<f64>, block: usize, offset: usize, forward: bool) -> Array2<f64> {
    let (rows, cols) = a.dim();
    assert_eq!(cols % block, 0, "time_shift: block does not divide columns");
    let mut out = Array2::zeros((rows, cols));
    if offset >= block {
        return out;
    }
    let len = block - offset;
    for b in (0..cols).step_by(block) {
        let (src, dst) = if forward { (b, b + offset) } else { (b + offset, b) };
        out.slice_mut(ndarray::s![.., dst..dst + len])
            .assign(&a.slice(ndarray::s![.., src..src + len]));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Array2<f64> {
        Array2::from_shape_fn((rows, cols), |_| rng.random_range(-1.0..1.0))
    }

    /// Checks d(loss)/d(input) against central differences for a graph builder.
    fn check<F>(inputs: Vec<Array2<f64>>, build: F)
    where
        F: Fn(&mut Tape, &[Var]) -> Var,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|a| tape.leaf(a.clone(), true)).collect();
        let loss = build(&mut tape, &vars);
        let grads = tape.backward(loss);
        let h = 1e-6;
        for (k, input) in inputs.iter().enumerate() {
            let analytic = grads.get_or_zeros(vars[k], input.dim());
            for idx in 0..input.len() {
                let eval = |delta: f64| {
                    let mut t = Tape::new();
                    let vs: Vec<Var> = inputs
                        .iter()
                        .enumerate()
                        .map(|(j, a)| {
                            let mut a = a.clone();
                            if j == k {
                                let flat = a.as_slice_mut().unwrap();
                                flat[idx] += delta;
                            }
                            t.leaf(a, false)
                        })
                        .collect();
                    let l = build(&mut t, &vs);
                    t.scalar(l)
                };
                let numeric = (eval(h) - eval(-h)) / (2.0 * h);
                let got = analytic.as_slice().unwrap()[idx];
                assert!(
                    (numeric - got).abs() <= 1e-6 * (1.0 + numeric.abs()),
                    "input {k} coord {idx}: analytic {got} vs numeric {numeric}"
                );
            }
        }
    }

    #[test]
    fn matmul_transpose_bias_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        check(vec![random(3, 4, &mut rng), random(4, 5, &mut rng), random(3, 1, &mut rng)], |t, v| {
            let m = t.matmul(v[0], v[1]);
            let m = t.add_bias(m, v[2]);
            let tt = t.transpose(m);
            let s = t.tanh(tt);
            t.sum(s)
        });
    }

    #[test]
    fn standardize_rows_gradients_and_moments() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let weights = random(3, 5, &mut rng);
        check(vec![random(3, 5, &mut rng)], |t, v| {
            let s = t.standardize_rows(v[0], 1e-5);
            let w = t.constant(weights.clone());
            let m = t.mul(s, w);
            t.sum(m)
        });
        let mut t = Tape::new();
        let x = t.constant(random(4, 7, &mut rng));
        let s = t.standardize_rows(x, 0.0);
        for row in t.value(s).rows() {
            assert!(row.mean().unwrap().abs() < 1e-12);
            assert!((row.mapv(|v| v * v).mean().unwrap() - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn elementwise_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        check(vec![random(2, 6, &mut rng), random(2, 6, &mut rng)], |t, v| {
            let a = t.sigmoid(v[0]);
            let b = t.tanh(v[1]);
            let c = t.mul(a, b);
            let d = t.sub(c, v[0]);
            let e = t.add(d, v[1]);
            let f = t.scale(e, 0.7);
            let g = t.relu(f);
            let m = t.mean_cols(g);
            let w = t.concat_rows(&[m, m]);
            t.sum(w)
        });
    }

    #[test]
    fn softmax_and_log_softmax_gradients_with_mask() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let weights = random(2, 5, &mut rng);
        check(vec![random(2, 5, &mut rng)], move |t, v| {
            let mask = Some(vec![false, true, false, false, true]);
            let p = t.softmax_rows(v[0], mask.clone());
            let w = t.constant(weights.clone());
            let pw = t.mul(p, w);
            let s1 = t.sum(pw);
            let lp = t.log_softmax_rows(v[0], mask);
            let a = t.pick(lp, 0, 2);
            let b = t.pick(lp, 1, 3);
            let s2 = t.add(a, b);
            t.add(s1, s2)
        });
    }

    #[test]
    fn shift_select_node_mix_mse_gradients() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        // 2 batches x 3 times x 2 nodes = 12 columns
        let target = random(2, 4, &mut rng);
        check(vec![random(2, 12, &mut rng), random(2, 2, &mut rng)], move |t, v| {
            let sh = t.time_shift(v[0], 6, 2);
            let mixed = t.node_mix(sh, v[1], 2);
            let both = t.add(mixed, v[0]);
            let last = t.select_cols(both, vec![4, 5, 10, 11]);
            let tv = t.constant(target.clone());
            t.mse(last, tv)
        });
    }

    #[test]
    fn time_shift_moves_within_blocks() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]], false);
        let s = t.time_shift(a, 3, 1);
        assert_eq!(t.value(s), &array![[0.0, 1.0, 2.0, 0.0, 4.0, 5.0]]);
    }

    #[test]
    fn masked_softmax_is_exactly_zero_on_mask() {
        let mut t = Tape::new();
        let a = t.leaf(array![[0.3, 5.0, -1.0]], false);
        let p = t.softmax_rows(a, Some(vec![false, true, false]));
        let v = t.value(p);
        assert_eq!(v[[0, 1]], 0.0);
        assert!((v.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn constants_receive_no_gradient() {
        let mut t = Tape::new();
        let a = t.leaf(array![[1.0, 2.0]], true);
        let c = t.constant(array![[3.0, 4.0]]);
        let m = t.mul(a, c);
        let s = t.sum(m);
        let g = t.backward(s);
        assert!(g.get(c).is_none());
        assert_eq!(g.get(a).unwrap(), &array![[3.0, 4.0]]);
    }
}
