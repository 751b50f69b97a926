//! Reverse-mode tape over dense matrices.
//!
//! Nodes are appended in evaluation order, which is a topological order, so the backward pass is
//! a single reverse sweep. Parameter leaves read their values straight from the borrowed
//! [`Weights`]; their gradients are accumulated into a caller-supplied [`Grads`].

use std::collections::HashMap;

use rand::Rng;

use super::matrix::{log_sum_exp, matmul, matmul_at_acc, matmul_bt, sigmoid, softmax_into};
use super::{Grads, Matrix, ParamId, Scalar, Weights};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Debug)]
enum Op<F> {
    Param(ParamId),
    Input,
    Constant,
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Mul(Var, Var),
    Sigmoid(Var),
    Tanh(Var),
    SliceCols {
        src: Var,
        start: usize,
    },
    Embed {
        table: Var,
        ids: Vec<usize>,
    },
    Dropout {
        src: Var,
        mask: Vec<F>,
    },
    SoftmaxXent {
        logits: Var,
        targets: Vec<usize>,
        weights: Vec<F>,
        probs: Matrix<F>,
    },
    SumAll(Var),
    Scale(Var, F),
}

#[derive(Debug)]
struct Node<F> {
    op: Op<F>,
    value: Option<Matrix<F>>,
    needs_grad: bool,
}

pub struct Tape<'w, F> {
    weights: &'w Weights<F>,
    nodes: Vec<Node<F>>,
    mode: Mode,
    consumed: bool,
}

/// Gradients of the tape's `input` leaves after a backward pass.
#[derive(Debug, Default)]
pub struct InputGrads<F> {
    grads: HashMap<Var, Matrix<F>>,
}

impl<F> InputGrads<F> {
    pub fn get(&self, v: Var) -> Option<&Matrix<F>> {
        self.grads.get(&v)
    }
}

fn acc<F: Scalar>(slot: &mut Option<Matrix<F>>, g: Matrix<F>) {
    match slot {
        Some(m) => m.add_assign(&g),
        None => *slot = Some(g),
    }
}

fn zip_map<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>, f: impl Fn(F, F) -> F) -> Matrix<F> {
    Matrix::from_vec(
        a.rows,
        a.cols,
        a.data.iter().zip(&b.data).map(|(&x, &y)| f(x, y)).collect(),
    )
}

fn map<F: Scalar>(a: &Matrix<F>, f: impl Fn(F) -> F) -> Matrix<F> {
    Matrix::from_vec(a.rows, a.cols, a.data.iter().map(|&x| f(x)).collect())
}

impl<'w, F: Scalar> Tape<'w, F> {
    pub fn new(weights: &'w Weights<F>, mode: Mode) -> Self {
        Tape {
            weights,
            nodes: Vec::new(),
            mode,
            consumed: false,
        }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Matrix<F> {
        match &self.nodes[v.0].op {
            Op::Param(id) => self.weights.get(*id),
            _ => self.nodes[v.0]
                .value
                .as_ref()
                .expect("node value released by backward"),
        }
    }

    pub fn shape(&self, v: Var) -> (usize, usize) {
        self.value(v).shape()
    }

    fn push(&mut self, op: Op<F>, value: Option<Matrix<F>>, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn ng(&self, v: Var) -> bool {
        self.nodes[v.0].needs_grad
    }

    fn check_live(&self) -> Result<()> {
        if self.consumed {
            Err(Error::Usage("tape already consumed by backward".into()))
        } else {
            Ok(())
        }
    }

    pub fn param(&mut self, id: ParamId) -> Var {
        self.push(Op::Param(id), None, true)
    }

    /// Leaf whose gradient is reported by [`Tape::backward`].
    pub fn input(&mut self, m: Matrix<F>) -> Var {
        self.push(Op::Input, Some(m), true)
    }

    pub fn constant(&mut self, m: Matrix<F>) -> Var {
        self.push(Op::Constant, Some(m), false)
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        let (ra, ca) = self.shape(a);
        let (rb, cb) = self.shape(b);
        if ca != rb {
            return Err(Error::dim("matmul", format!("{ra}x{ca} · {rb}x{cb}")));
        }
        let v = matmul(self.value(a), self.value(b));
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::MatMul(a, b), Some(v), ng))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "add",
                format!("{:?} + {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let v = zip_map(self.value(a), self.value(b), |x, y| x + y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Add(a, b), Some(v), ng))
    }

    /// Adds a `1×n` row vector to every row of `a`.
    pub fn add_row(&mut self, a: Var, row: Var) -> Result<Var> {
        self.check_live()?;
        let (r, c) = self.shape(a);
        if self.shape(row) != (1, c) {
            return Err(Error::dim(
                "add_row",
                format!("{r}x{c} + {:?}", self.shape(row)),
            ));
        }
        let bias = self.value(row);
        let mut v = self.value(a).clone();
        for i in 0..r {
            for (x, &b) in v.row_mut(i).iter_mut().zip(&bias.data) {
                *x += b;
            }
        }
        let ng = self.ng(a) || self.ng(row);
        Ok(self.push(Op::AddRow(a, row), Some(v), ng))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.check_live()?;
        if self.shape(a) != self.shape(b) {
            return Err(Error::dim(
                "mul",
                format!("{:?} * {:?}", self.shape(a), self.shape(b)),
            ));
        }
        let v = zip_map(self.value(a), self.value(b), |x, y| x * y);
        let ng = self.ng(a) || self.ng(b);
        Ok(self.push(Op::Mul(a, b), Some(v), ng))
    }

    pub fn sigmoid(&mut self, a: Var) -> Result<Var> {
        self.check_live()?;
        let v = map(self.value(a), sigmoid);
        let ng = self.ng(a);
        Ok(self.push(Op::Sigmoid(a), Some(v), ng))
    }

    pub fn tanh(&mut self, a: Var) -> Result<Var> {
        self.check_live()?;
        let v = map(self.value(a), F::tanh);
        let ng = self.ng(a);
        Ok(self.push(Op::Tanh(a), Some(v), ng))
    }

    /// Columns `start..start + len` of `a`.
    pub fn slice_cols(&mut self, a: Var, start: usize, len: usize) -> Result<Var> {
        self.check_live()?;
        let (r, c) = self.shape(a);
        if start + len > c {
            return Err(Error::dim(
                "slice_cols",
                format!("columns {start}..{} of {r}x{c}", start + len),
            ));
        }
        let src = self.value(a);
        let mut data = Vec::with_capacity(r * len);
        for i in 0..r {
            data.extend_from_slice(&src.row(i)[start..start + len]);
        }
        let ng = self.ng(a);
        Ok(self.push(
            Op::SliceCols { src: a, start },
            Some(Matrix::from_vec(r, len, data)),
            ng,
        ))
    }

    /// Gathers rows `ids` of `table`.
    pub fn embed(&mut self, table: Var, ids: &[usize]) -> Result<Var> {
        self.check_live()?;
        let t = self.value(table);
        if let Some(&bad) = ids.iter().find(|&&i| i >= t.rows) {
            return Err(Error::dim(
                "embed",
                format!("row {bad} of a {}-row table", t.rows),
            ));
        }
        let mut data = Vec::with_capacity(ids.len() * t.cols);
        for &i in ids {
            data.extend_from_slice(t.row(i));
        }
        let v = Matrix::from_vec(ids.len(), t.cols, data);
        let ng = self.ng(table);
        Ok(self.push(
            Op::Embed {
                table,
                ids: ids.to_vec(),
            },
            Some(v),
            ng,
        ))
    }

    /// Inverted dropout: in training mode each entry is zeroed with probability `p` and the
    /// survivors are scaled by `1 / (1 - p)`. Identity in eval mode.
    pub fn dropout<R: Rng>(&mut self, a: Var, p: f64, rng: &mut R) -> Result<Var> {
        self.check_live()?;
        if self.mode == Mode::Eval || p <= 0.0 {
            return Ok(a);
        }
        if p >= 1.0 {
            return Err(Error::Config(format!("dropout rate {p} must be below 1")));
        }
        let keep = F::of(1.0 / (1.0 - p));
        let src = self.value(a);
        let mask: Vec<F> = (0..src.len())
            .map(|_| {
                if rng.gen::<f64>() < p {
                    F::zero()
                } else {
                    keep
                }
            })
            .collect();
        let v = Matrix::from_vec(
            src.rows,
            src.cols,
            src.data.iter().zip(&mask).map(|(&x, &m)| x * m).collect(),
        );
        let ng = self.ng(a);
        Ok(self.push(Op::Dropout { src: a, mask }, Some(v), ng))
    }

    /// `Σ_r w_r · (−log softmax(logits_r)[targets_r])` as a `1×1` node. Weights default to 1.
    pub fn softmax_xent(
        &mut self,
        logits: Var,
        targets: &[usize],
        weights: Option<&[F]>,
    ) -> Result<Var> {
        self.check_live()?;
        let (r, c) = self.shape(logits);
        if targets.len() != r {
            return Err(Error::dim(
                "softmax_xent",
                format!("{} targets for {r} rows", targets.len()),
            ));
        }
        if let Some(&bad) = targets.iter().find(|&&t| t >= c) {
            return Err(Error::dim(
                "softmax_xent",
                format!("target {bad} out of {c} classes"),
            ));
        }
        let weights: Vec<F> = match weights {
            Some(w) if w.len() != r => {
                return Err(Error::dim(
                    "softmax_xent",
                    format!("{} weights for {r} rows", w.len()),
                ))
            }
            Some(w) => w.to_vec(),
            None => vec![F::one(); r],
        };
        let x = self.value(logits);
        let mut probs = Matrix::zeros(r, c);
        let mut loss = F::zero();
        for i in 0..r {
            let row = x.row(i);
            let lse = log_sum_exp(row);
            loss += weights[i] * (lse - row[targets[i]]);
            softmax_into(row, probs.row_mut(i));
        }
        let ng = self.ng(logits);
        Ok(self.push(
            Op::SoftmaxXent {
                logits,
                targets: targets.to_vec(),
                weights,
                probs,
            },
            Some(Matrix::scalar(loss)),
            ng,
        ))
    }

    pub fn sum_all(&mut self, a: Var) -> Result<Var> {
        self.check_live()?;
        let s = self.value(a).data.iter().copied().sum();
        let ng = self.ng(a);
        Ok(self.push(Op::SumAll(a), Some(Matrix::scalar(s)), ng))
    }

    pub fn scale(&mut self, a: Var, c: F) -> Result<Var> {
        self.check_live()?;
        let v = map(self.value(a), |x| x * c);
        let ng = self.ng(a);
        Ok(self.push(Op::Scale(a, c), Some(v), ng))
    }

    /// Propagates `d loss / d ·` through the tape, adding parameter gradients into `grads`.
    /// The tape cannot be used again afterwards.
    pub fn backward(&mut self, loss: Var, grads: &mut Grads<F>) -> Result<InputGrads<F>> {
        self.check_live()?;
        if self.shape(loss) != (1, 1) {
            return Err(Error::Usage(format!(
                "backward needs a scalar loss, got {:?}",
                self.shape(loss)
            )));
        }
        self.consumed = true;
        let mut g: Vec<Option<Matrix<F>>> = Vec::new();
        g.resize_with(loss.0 + 1, || None);
        g[loss.0] = Some(Matrix::scalar(F::one()));
        let mut inputs = InputGrads::default();

        for i in (0..=loss.0).rev() {
            let Some(gi) = g[i].take() else { continue };
            if !self.nodes[i].needs_grad {
                continue;
            }
            let node = &self.nodes[i];
            match &node.op {
                Op::Param(id) => grads.accumulate(*id, &gi),
                Op::Input => {
                    inputs.grads.insert(Var(i), gi);
                }
                Op::Constant => {}
                Op::MatMul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut g[a.0], matmul_bt(&gi, self.value(*b)));
                    }
                    if self.ng(*b) {
                        let vb = self.value(*b);
                        let mut gb = Matrix::zeros(vb.rows, vb.cols);
                        matmul_at_acc(self.value(*a), &gi, &mut gb);
                        acc(&mut g[b.0], gb);
                    }
                }
                Op::Add(a, b) => {
                    if self.ng(*b) {
                        acc(&mut g[b.0], gi.clone());
                    }
                    if self.ng(*a) {
                        acc(&mut g[a.0], gi);
                    }
                }
                Op::AddRow(a, row) => {
                    if self.ng(*row) {
                        let mut gr = Matrix::zeros(1, gi.cols);
                        for r in 0..gi.rows {
                            for (s, &x) in gr.data.iter_mut().zip(gi.row(r)) {
                                *s += x;
                            }
                        }
                        acc(&mut g[row.0], gr);
                    }
                    if self.ng(*a) {
                        acc(&mut g[a.0], gi);
                    }
                }
                Op::Mul(a, b) => {
                    if self.ng(*a) {
                        acc(&mut g[a.0], zip_map(&gi, self.value(*b), |x, y| x * y));
                    }
                    if self.ng(*b) {
                        acc(&mut g[b.0], zip_map(&gi, self.value(*a), |x, y| x * y));
                    }
                }
                Op::Sigmoid(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut g[a.0], zip_map(&gi, y, |x, s| x * s * (F::one() - s)));
                }
                Op::Tanh(a) => {
                    let y = node.value.as_ref().unwrap();
                    acc(&mut g[a.0], zip_map(&gi, y, |x, t| x * (F::one() - t * t)));
                }
                Op::SliceCols { src, start } => {
                    let (r, c) = self.shape(*src);
                    let mut gs = Matrix::zeros(r, c);
                    for k in 0..r {
                        gs.row_mut(k)[*start..*start + gi.cols].copy_from_slice(gi.row(k));
                    }
                    acc(&mut g[src.0], gs);
                }
                Op::Embed { table, ids } => {
                    let (r, c) = self.shape(*table);
                    let mut gt = Matrix::zeros(r, c);
                    for (k, &id) in ids.iter().enumerate() {
                        for (s, &x) in gt.row_mut(id).iter_mut().zip(gi.row(k)) {
                            *s += x;
                        }
                    }
                    acc(&mut g[table.0], gt);
                }
                Op::Dropout { src, mask } => {
                    acc(
                        &mut g[src.0],
                        Matrix::from_vec(
                            gi.rows,
                            gi.cols,
                            gi.data.iter().zip(mask).map(|(&x, &m)| x * m).collect(),
                        ),
                    );
                }
                Op::SoftmaxXent {
                    logits,
                    targets,
                    weights,
                    probs,
                } => {
                    let up = gi.data[0];
                    let mut gl = probs.clone();
                    for (r, (&t, &w)) in targets.iter().zip(weights).enumerate() {
                        let row = gl.row_mut(r);
                        row[t] -= F::one();
                        let s = up * w;
                        row.iter_mut().for_each(|x| *x *= s);
                    }
                    acc(&mut g[logits.0], gl);
                }
                Op::SumAll(a) => {
                    let (r, c) = self.shape(*a);
                    acc(&mut g[a.0], Matrix::from_vec(r, c, vec![gi.data[0]; r * c]));
                }
                Op::Scale(a, c) => {
                    let c = *c;
                    acc(&mut g[a.0], map(&gi, |x| x * c));
                }
            }
        }
        for n in &mut self.nodes {
            n.value = None;
        }
        Ok(inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tapegrad::ParameterSet;

    #[test]
    fn square_derivative() {
        let w = Weights::<f64>::default();
        let mut grads = Grads::zeros_like(&w);
        let mut t = Tape::new(&w, Mode::Eval);
        let x = t.input(Matrix::scalar(3.0));
        let y = t.mul(x, x).unwrap();
        let gi = t.backward(y, &mut grads).unwrap();
        assert_eq!(gi.get(x).unwrap().data[0], 6.0);
    }

    #[test]
    fn double_backward_is_usage_error() {
        let w = Weights::<f64>::default();
        let mut grads = Grads::zeros_like(&w);
        let mut t = Tape::new(&w, Mode::Eval);
        let x = t.input(Matrix::scalar(2.0));
        let y = t.scale(x, 2.0).unwrap();
        t.backward(y, &mut grads).unwrap();
        assert!(matches!(t.backward(y, &mut grads), Err(Error::Usage(_))));
        assert!(matches!(t.tanh(x), Err(Error::Usage(_))));
    }

    #[test]
    fn backward_requires_scalar() {
        let w = Weights::<f64>::default();
        let mut grads = Grads::zeros_like(&w);
        let mut t = Tape::new(&w, Mode::Eval);
        let x = t.input(Matrix::zeros(2, 2));
        assert!(matches!(t.backward(x, &mut grads), Err(Error::Usage(_))));
    }

    #[test]
    fn shape_mismatch_names_op() {
        let w = Weights::<f64>::default();
        let mut t = Tape::new(&w, Mode::Eval);
        let a = t.input(Matrix::zeros(2, 3));
        let b = t.input(Matrix::zeros(2, 3));
        match t.matmul(a, b) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "matmul"),
            other => panic!("{other:?}"),
        }
        match t.softmax_xent(a, &[0], None) {
            Err(Error::Dimension { op, .. }) => assert_eq!(op, "softmax_xent"),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn uniform_xent_is_log_classes() {
        let w = Weights::<f64>::default();
        let mut t = Tape::new(&w, Mode::Eval);
        let logits = t.input(Matrix::from_vec(1, 7, vec![0.3; 7]));
        let l = t.softmax_xent(logits, &[4], None).unwrap();
        assert!((t.value(l).data[0] - 7f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn xent_gradient_is_probs_minus_onehot() {
        let w = Weights::<f64>::default();
        let mut grads = Grads::zeros_like(&w);
        let mut t = Tape::new(&w, Mode::Eval);
        let raw = vec![0.5, -1.0, 2.0, 0.0];
        let logits = t.input(Matrix::from_vec(1, 4, raw.clone()));
        let l = t.softmax_xent(logits, &[2], None).unwrap();
        let gi = t.backward(l, &mut grads).unwrap();
        let mut p = [0.0; 4];
        softmax_into(&raw, &mut p);
        p[2] -= 1.0;
        for (a, b) in gi.get(logits).unwrap().data.iter().zip(p) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn param_gradients_accumulate() {
        let mut ps = ParameterSet::<f64>::new();
        let id = ps.add("w", Matrix::scalar(2.0)).unwrap();
        for _ in 0..2 {
            let (w, g) = ps.split();
            let mut t = Tape::new(w, Mode::Eval);
            let x = t.param(id);
            let y = t.mul(x, x).unwrap();
            t.backward(y, g).unwrap();
        }
        assert_eq!(ps.grads.get(id).data[0], 8.0);
    }

    #[test]
    fn dropout_eval_is_identity_and_train_scales() {
        use rand::SeedableRng;
        let w = Weights::<f64>::default();
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        let mut t = Tape::new(&w, Mode::Eval);
        let x = t.input(Matrix::from_vec(1, 4, vec![1.0; 4]));
        assert_eq!(t.dropout(x, 0.5, &mut rng).unwrap(), x);
        let mut t = Tape::new(&w, Mode::Train);
        let x = t.input(Matrix::from_vec(1, 1000, vec![1.0; 1000]));
        let y = t.dropout(x, 0.5, &mut rng).unwrap();
        let vals = &t.value(y).data;
        assert!(vals.iter().all(|&v| v == 0.0 || v == 2.0));
        let kept = vals.iter().filter(|&&v| v > 0.0).count();
        assert!((400..600).contains(&kept));
    }
}
