//! Central finite differences against tape gradients for every op, in f64.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use seqcritic::tapegrad::{Matrix, Mode, ParameterSet, Tape, Weights};

type Forward = fn(&mut Tape<'_, f64>, &Weights<f64>) -> seqcritic::Result<seqcritic::tapegrad::Var>;

fn params() -> ParameterSet<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let mut p = ParameterSet::new();
    p.add_uniform("x", 2, 3, 1.0, &mut rng).unwrap();
    p.add_uniform("w", 3, 4, 1.0, &mut rng).unwrap();
    p.add_uniform("b", 1, 4, 1.0, &mut rng).unwrap();
    p.add_uniform("e", 5, 3, 1.0, &mut rng).unwrap();
    p
}

fn scalar_loss(p: &ParameterSet<f64>, f: Forward) -> f64 {
    let mut tape = Tape::new(&p.weights, Mode::Train);
    let l = f(&mut tape, &p.weights).unwrap();
    tape.value(l).data[0]
}

fn check(f: Forward) {
    let mut p = params();
    {
        let (w, g) = p.split();
        let mut tape = Tape::new(w, Mode::Train);
        let l = f(&mut tape, w).unwrap();
        tape.backward(l, g).unwrap();
    }
    let analytic = p.grads.flat();
    let h = 1e-6;
    for (k, &a) in analytic.iter().enumerate() {
        let mut q = p.clone();
        *q.weights.scalar_mut(k) += h;
        let up = scalar_loss(&q, f);
        *q.weights.scalar_mut(k) -= 2.0 * h;
        let down = scalar_loss(&q, f);
        let fd = (up - down) / (2.0 * h);
        let err = (a - fd).abs() / a.abs().max(fd.abs()).max(1e-6);
        assert!(
            err < 1e-3 || (a - fd).abs() < 1e-6,
            "scalar {k}: tape {a} vs fd {fd}"
        );
    }
}

fn id(w: &Weights<f64>, n: &str) -> seqcritic::tapegrad::ParamId {
    w.id(n).unwrap()
}

#[test]
fn matmul_add_row_and_xent() {
    check(|t, w| {
        let x = t.param(id(w, "x"));
        let wm = t.param(id(w, "w"));
        let b = t.param(id(w, "b"));
        let m = t.matmul(x, wm)?;
        let z = t.add_row(m, b)?;
        t.softmax_xent(z, &[1, 3], None)
    });
}

#[test]
fn weighted_xent() {
    check(|t, w| {
        let x = t.param(id(w, "x"));
        let wm = t.param(id(w, "w"));
        let z = t.matmul(x, wm)?;
        t.softmax_xent(z, &[0, 2], Some(&[0.7, -1.3]))
    });
}

#[test]
fn elementwise_ops() {
    check(|t, w| {
        let x = t.param(id(w, "x"));
        let wm = t.param(id(w, "w"));
        let z = t.matmul(x, wm)?;
        let s = t.sigmoid(z)?;
        let h = t.tanh(z)?;
        let m = t.mul(s, h)?;
        let a = t.add(m, z)?;
        let c = t.scale(a, 0.5)?;
        t.sum_all(c)
    });
}

#[test]
fn slices_and_embedding() {
    check(|t, w| {
        let e = t.param(id(w, "e"));
        let rows = t.embed(e, &[4, 0, 4])?;
        let wm = t.param(id(w, "w"));
        let z = t.matmul(rows, wm)?;
        let left = t.slice_cols(z, 0, 2)?;
        let right = t.slice_cols(z, 2, 2)?;
        let g = t.sigmoid(right)?;
        let m = t.mul(left, g)?;
        t.sum_all(m)
    });
}

#[test]
fn dropout_with_fixed_mask() {
    check(|t, w| {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let x = t.param(id(w, "x"));
        let d = t.dropout(x, 0.3, &mut rng)?;
        let wm = t.param(id(w, "w"));
        let z = t.matmul(d, wm)?;
        t.softmax_xent(z, &[2, 1], None)
    });
}

#[test]
fn inputs_receive_gradients() {
    let p = params();
    let mut g = p.grads.clone();
    let mut tape = Tape::new(&p.weights, Mode::Eval);
    let x = tape.input(Matrix::from_vec(1, 3, vec![0.5, -1.0, 2.0]));
    let wm = tape.param(id(&p.weights, "w"));
    let z = tape.matmul(x, wm).unwrap();
    let s = tape.sum_all(z).unwrap();
    let ig = tape.backward(s, &mut g).unwrap();
    let gx = ig.get(x).unwrap();
    let w = p.weights.get(id(&p.weights, "w"));
    for i in 0..3 {
        let expected: f64 = w.row(i).iter().sum();
        assert!((gx.data[i] - expected).abs() < 1e-12);
    }
}
