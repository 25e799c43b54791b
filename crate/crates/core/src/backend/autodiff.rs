//! Minimal reverse-mode differentiation over row-major `f64` matrices.
//!
//! Frozen weights enter the tape by reference (`Linear`, `RmsNorm`) and never
//! get a gradient slot; only nodes derived from a tracked leaf carry one.

use ndarray::{s, Array1, Array2, Axis, Zip};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

const GELU_C: f64 = 0.797_884_560_802_865_4; // sqrt(2 / pi)
const GELU_A: f64 = 0.044_715;
const RMS_EPS: f64 = 1e-6;

enum Op<'w> {
    Leaf,
    /// `value = base; value[dst] += source[src]` for each pair.
    Scatter { source: Var, rows: Vec<(usize, usize)> },
    Linear { x: Var, w: &'w Array2<f64> },
    MatMul { a: Var, b: Var },
    MatMulT { a: Var, b: Var },
    Add { a: Var, b: Var },
    Mul { a: Var, b: Var },
    Scale { a: Var, s: f64 },
    Gelu { a: Var },
    Softmax { a: Var },
    RmsNorm { a: Var, w: &'w Array1<f64>, inv_rms: Array1<f64> },
    SliceCols { a: Var, start: usize },
    ConcatCols { parts: Vec<Var> },
    CrossEntropy { logits: Var, targets: Vec<usize>, probs: Array2<f64> },
}

struct Node<'w> {
    value: Array2<f64>,
    op: Op<'w>,
    tracked: bool,
}

#[derive(Default)]
pub struct Tape<'w> {
    nodes: Vec<Node<'w>>,
}

fn softmax_rows(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row.mapv_inplace(|v| v / sum);
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (GELU_C * (x + GELU_A * x * x * x)).tanh())
}

fn gelu_grad(x: f64) -> f64 {
    let t = (GELU_C * (x + GELU_A * x * x * x)).tanh();
    0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * GELU_C * (1.0 + 3.0 * GELU_A * x * x)
}

impl<'w> Tape<'w> {
    pub fn new() -> Self {
        Self::default()
    }

    fn push(&mut self, value: Array2<f64>, op: Op<'w>, tracked: bool) -> Var {
        self.nodes.push(Node { value, op, tracked });
        Var(self.nodes.len() - 1)
    }

    fn tracked(&self, v: Var) -> bool {
        self.nodes[v.0].tracked
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    pub fn constant(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    pub fn variable(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// Adds `source` rows onto a constant `base`: `base[dst] += source[src]`.
    pub fn scatter(&mut self, base: Array2<f64>, source: Var, rows: Vec<(usize, usize)>) -> Var {
        let mut value = base;
        {
            let src = &self.nodes[source.0].value;
            for &(dst, from) in &rows {
                let mut row = value.row_mut(dst);
                row += &src.row(from);
            }
        }
        let tracked = self.tracked(source) && !rows.is_empty();
        self.push(value, Op::Scatter { source, rows }, tracked)
    }

    pub fn linear(&mut self, x: Var, w: &'w Array2<f64>) -> Var {
        let value = self.value(x).dot(w);
        let tracked = self.tracked(x);
        self.push(value, Op::Linear { x, w }, tracked)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMul { a, b }, tracked)
    }

    /// `a · bᵀ`
    pub fn matmul_t(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(&self.value(b).t());
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::MatMulT { a, b }, tracked)
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Add { a, b }, tracked)
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) * self.value(b);
        let tracked = self.tracked(a) || self.tracked(b);
        self.push(value, Op::Mul { a, b }, tracked)
    }

    pub fn scale(&mut self, a: Var, s: f64) -> Var {
        let value = self.value(a) * s;
        let tracked = self.tracked(a);
        self.push(value, Op::Scale { a, s }, tracked)
    }

    pub fn gelu(&mut self, a: Var) -> Var {
        let value = self.value(a).mapv(gelu);
        let tracked = self.tracked(a);
        self.push(value, Op::Gelu { a }, tracked)
    }

    pub fn softmax(&mut self, a: Var) -> Var {
        let value = softmax_rows(self.value(a));
        let tracked = self.tracked(a);
        self.push(value, Op::Softmax { a }, tracked)
    }

    pub fn rms_norm(&mut self, a: Var, w: &'w Array1<f64>) -> Var {
        let x = self.value(a);
        let n = x.ncols() as f64;
        let inv_rms = x.map_axis(Axis(1), |row| 1.0 / (row.dot(&row) / n + RMS_EPS).sqrt());
        let mut value = x.clone();
        Zip::from(value.rows_mut()).and(&inv_rms).for_each(|mut row, &r| {
            row *= r;
            row *= w;
        });
        let tracked = self.tracked(a);
        self.push(value, Op::RmsNorm { a, w, inv_rms }, tracked)
    }

    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Var {
        let value = self.value(a).slice(s![.., start..start + len]).to_owned();
        let tracked = self.tracked(a);
        self.push(value, Op::SliceCols { a, start }, tracked)
    }

    pub fn concat_cols(&mut self, parts: Vec<Var>) -> Var {
        let views: Vec<_> = parts.iter().map(|p| self.value(*p).view()).collect();
        let value = ndarray::concatenate(Axis(1), &views).expect("row counts agree");
        let tracked = parts.iter().any(|p| self.tracked(*p));
        self.push(value, Op::ConcatCols { parts }, tracked)
    }

    /// Mean token cross-entropy of `targets` under row-wise softmax of `logits`; a 1×1 node.
    pub fn cross_entropy(&mut self, logits: Var, targets: Vec<usize>) -> Var {
        let probs = softmax_rows(self.value(logits));
        let n = targets.len() as f64;
        let loss = targets
            .iter()
            .enumerate()
            .map(|(t, &y)| -probs[[t, y]].max(f64::MIN_POSITIVE).ln())
            .sum::<f64>()
            / n;
        let tracked = self.tracked(logits);
        self.push(
            Array2::from_elem((1, 1), loss),
            Op::CrossEntropy {
                logits,
                targets,
                probs,
            },
            tracked,
        )
    }

    /// Gradients of the scalar `output` with respect to every tracked node.
    pub fn backward(&self, output: Var) -> Gradients {
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        if !self.tracked(output) {
            return Gradients { grads };
        }
        grads[output.0] = Some(Array2::ones(self.value(output).raw_dim()));

        for idx in (0..=output.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if matches!(node.op, Op::Leaf) {
                grads[idx] = Some(g);
                continue;
            }
            let mut acc = |v: Var, delta: Array2<f64>| {
                if self.nodes[v.0].tracked {
                    match &mut grads[v.0] {
                        Some(existing) => *existing += &delta,
                        slot @ None => *slot = Some(delta),
                    }
                }
            };
            match &node.op {
                Op::Leaf => unreachable!(),
                Op::Scatter { source, rows } => {
                    let mut delta = Array2::zeros(self.value(*source).raw_dim());
                    for &(dst, from) in rows {
                        let mut row = delta.row_mut(from);
                        row += &g.row(dst);
                    }
                    acc(*source, delta);
                }
                Op::Linear { x, w } => acc(*x, g.dot(&w.t())),
                Op::MatMul { a, b } => {
                    acc(*a, g.dot(&self.value(*b).t()));
                    acc(*b, self.value(*a).t().dot(&g));
                }
                Op::MatMulT { a, b } => {
                    acc(*a, g.dot(self.value(*b)));
                    acc(*b, g.t().dot(self.value(*a)));
                }
                Op::Add { a, b } => {
                    acc(*a, g.clone());
                    acc(*b, g);
                }
                Op::Mul { a, b } => {
                    acc(*a, &g * self.value(*b));
                    acc(*b, &g * self.value(*a));
                }
                Op::Scale { a, s } => acc(*a, g * *s),
                Op::Gelu { a } => acc(*a, &g * &self.value(*a).mapv(gelu_grad)),
                Op::Softmax { a } => {
                    let y = &node.value;
                    let dot = (&g * y).sum_axis(Axis(1)).insert_axis(Axis(1));
                    acc(*a, y * &(&g - &dot));
                }
                Op::RmsNorm { a, w, inv_rms } => {
                    let x = self.value(*a);
                    let n = x.ncols() as f64;
                    let mut delta = Array2::zeros(x.raw_dim());
                    Zip::from(delta.rows_mut())
                        .and(x.rows())
                        .and(g.rows())
                        .and(inv_rms)
                        .for_each(|mut d, xr, gr, &r| {
                            let gw = &gr * *w;
                            let proj = gw.dot(&xr) / n;
                            d.assign(&(&gw * r - &xr * (r * r * r * proj)));
                        });
                    acc(*a, delta);
                }
                Op::SliceCols { a, start } => {
                    let mut delta = Array2::zeros(self.value(*a).raw_dim());
                    delta
                        .slice_mut(s![.., *start..*start + g.ncols()])
                        .assign(&g);
                    acc(*a, delta);
                }
                Op::ConcatCols { parts } => {
                    let mut start = 0;
                    for p in parts {
                        let width = self.value(*p).ncols();
                        acc(*p, g.slice(s![.., start..start + width]).to_owned());
                        start += width;
                    }
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                } => {
                    let scale = g[[0, 0]] / targets.len() as f64;
                    let mut delta = probs.clone();
                    for (t, &y) in targets.iter().enumerate() {
                        delta[[t, y]] -= 1.0;
                    }
                    acc(*logits, delta * scale);
                }
            }
        }
        Gradients { grads }
    }
}

pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    /// Gradient of a tracked leaf, `None` when it did not influence the output.
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;
    use rand::Rng;

    /// Central-difference check of d(output)/d(leaf) for a graph built by `f`.
    fn check<'w, F>(x0: Array2<f64>, f: F)
    where
        F: Fn(&mut Tape<'w>, Var) -> Var,
    {
        let mut tape = Tape::new();
        let x = tape.variable(x0.clone());
        let out = f(&mut tape, x);
        let grads = tape.backward(out);
        let analytic = grads.get(x).cloned().unwrap_or_else(|| Array2::zeros(x0.raw_dim()));
        let eps = 1e-6;
        for i in 0..x0.nrows() {
            for j in 0..x0.ncols() {
                let eval = |delta: f64| {
                    let mut xp = x0.clone();
                    xp[[i, j]] += delta;
                    let mut tape = Tape::new();
                    let x = tape.variable(xp);
                    let out = f(&mut tape, x);
                    tape.value(out)[[0, 0]]
                };
                let numeric = (eval(eps) - eval(-eps)) / (2.0 * eps);
                let a = analytic[[i, j]];
                let denom = a.abs().max(numeric.abs()).max(1e-6);
                assert!(
                    (a - numeric).abs() / denom < 1e-5,
                    "({i},{j}): analytic {a} numeric {numeric}"
                );
            }
        }
    }

    fn random(rows: usize, cols: usize, seed: u64) -> Array2<f64> {
        let mut rng = crate::seed::rng(seed);
        Array2::from_shape_fn((rows, cols), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn grad_of_attention_block() {
        let wq = random(4, 4, 1);
        let wk = random(4, 4, 2);
        let wv = random(4, 4, 3);
        let norm = array![1.0, 0.5, 2.0, 1.5];
        check(random(3, 4, 9), |t, x| {
            let h = t.rms_norm(x, &norm);
            let q = t.linear(h, &wq);
            let k = t.linear(h, &wk);
            let v = t.linear(h, &wv);
            let scores = t.matmul_t(q, k);
            let scores = t.scale(scores, 0.5);
            let p = t.softmax(scores);
            let o = t.matmul(p, v);
            let o = t.gelu(o);
            let o = t.add(o, x);
            t.cross_entropy(o, vec![0, 3, 2])
        });
    }

    #[test]
    fn grad_through_slices_and_scatter() {
        let base = random(5, 6, 4);
        let w = random(6, 6, 5);
        check(random(3, 6, 6), |t, x| {
            let e = t.scatter(base.clone(), x, vec![(0, 2), (3, 0), (4, 2)]);
            let a = t.slice_cols(e, 0, 3);
            let b = t.slice_cols(e, 3, 3);
            let m = t.mul(a, b);
            let c = t.concat_cols(vec![m, a]);
            let c = t.linear(c, &w);
            t.cross_entropy(c, vec![1, 1, 0, 5, 4])
        });
    }

    #[test]
    fn untracked_graph_has_no_gradient() {
        let mut tape = Tape::new();
        let x = tape.variable(random(2, 2, 1));
        let c = tape.constant(random(2, 2, 2));
        let e = tape.scatter(random(2, 2, 3), x, vec![]);
        let y = tape.add(e, c);
        let loss = tape.cross_entropy(y, vec![0, 1]);
        assert!(tape.backward(loss).get(x).is_none());
    }
}
