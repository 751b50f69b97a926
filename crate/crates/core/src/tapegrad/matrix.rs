//! Dense row-major matrices and the numeric kernels shared by the tape and by tape-free inference.
//! Both paths call the same kernels in the same order, so their values agree bit for bit.

use super::Scalar;

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Matrix<F> {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<F>,
}

impl<F: Scalar> Matrix<F> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![F::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<F>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix data length");
        Matrix { rows, cols, data }
    }

    pub fn row_vector(data: Vec<F>) -> Self {
        Matrix {
            rows: 1,
            cols: data.len(),
            data,
        }
    }

    pub fn scalar(x: F) -> Self {
        Matrix::from_vec(1, 1, vec![x])
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn row(&self, r: usize) -> &[F] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    #[inline]
    pub fn row_mut(&mut self, r: usize) -> &mut [F] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn get(&self, r: usize, c: usize) -> F {
        self.data[r * self.cols + c]
    }

    pub fn add_assign(&mut self, other: &Matrix<F>) {
        debug_assert_eq!(self.shape(), other.shape());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    pub fn fill_zero(&mut self) {
        self.data.iter_mut().for_each(|x| *x = F::zero());
    }

    pub fn cast<G: Scalar>(&self) -> Matrix<G> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|x| G::of(x.f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }
}

/// `a (m×k) · b (k×n)`.
pub fn matmul<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(a.rows, b.cols);
    matmul_row_into(a, b, &mut out.data);
    out
}

fn matmul_row_into<F: Scalar>(a: &Matrix<F>, b: &Matrix<F>, out: &mut [F]) {
    let n = b.cols;
    for i in 0..a.rows {
        let orow = &mut out[i * n..(i + 1) * n];
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == F::zero() {
                continue;
            }
            for (o, &bkj) in orow.iter_mut().zip(b.row(k)) {
                *o += aik * bkj;
            }
        }
    }
}

/// `g (m×n) · bᵀ` where `b` is `k×n`: the gradient of `a·b` with respect to `a`.
pub fn matmul_bt<F: Scalar>(g: &Matrix<F>, b: &Matrix<F>) -> Matrix<F> {
    let mut out = Matrix::zeros(g.rows, b.rows);
    for i in 0..g.rows {
        let grow = g.row(i);
        for k in 0..b.rows {
            let mut s = F::zero();
            for (&x, &y) in grow.iter().zip(b.row(k)) {
                s += x * y;
            }
            out.data[i * b.rows + k] = s;
        }
    }
    out
}

/// `out += aᵀ (k×m) · g (m×n)`: the gradient of `a·b` with respect to `b`.
pub fn matmul_at_acc<F: Scalar>(a: &Matrix<F>, g: &Matrix<F>, out: &mut Matrix<F>) {
    let n = g.cols;
    for i in 0..a.rows {
        let grow = g.row(i);
        for (k, &aik) in a.row(i).iter().enumerate() {
            if aik == F::zero() {
                continue;
            }
            for (o, &gij) in out.data[k * n..(k + 1) * n].iter_mut().zip(grow) {
                *o += aik * gij;
            }
        }
    }
}

#[inline]
pub fn sigmoid<F: Scalar>(x: F) -> F {
    F::one() / (F::one() + (-x).exp())
}

/// Log-sum-exp of a row, stabilised by its maximum.
pub fn log_sum_exp<F: Scalar>(row: &[F]) -> F {
    let m = row.iter().copied().fold(F::neg_infinity(), F::max);
    let mut s = F::zero();
    for &x in row {
        s += (x - m).exp();
    }
    m + s.ln()
}

/// Softmax probabilities of a row, written into `out`.
pub fn softmax_into<F: Scalar>(row: &[F], out: &mut [F]) {
    let lse = log_sum_exp(row);
    for (o, &x) in out.iter_mut().zip(row) {
        *o = (x - lse).exp();
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matmul_small() {
        let a = Matrix::from_vec(2, 3, vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Matrix::from_vec(3, 2, vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.data, vec![58.0, 64.0, 139.0, 154.0]);
        let g = Matrix::from_vec(2, 2, vec![1.0, 0.0, 0.0, 1.0]);
        assert_eq!(
            matmul_bt(&g, &b).data,
            vec![7.0, 9.0, 11.0, 8.0, 10.0, 12.0]
        );
        let mut gb = Matrix::zeros(3, 2);
        matmul_at_acc(&a, &g, &mut gb);
        assert_eq!(gb.data, vec![1.0, 4.0, 2.0, 5.0, 3.0, 6.0]);
    }

    #[test]
    fn sigmoid_zero() {
        assert_eq!(sigmoid(0.0f64), 0.5);
        assert_eq!(sigmoid(-1000.0f64), 0.0);
    }

    #[test]
    fn softmax_uniform() {
        let mut p = [0.0f64; 4];
        softmax_into(&[2.0; 4], &mut p);
        for x in p {
            assert!((x - 0.25).abs() < 1e-15);
        }
        assert!((log_sum_exp(&[0.0f64; 7]) - 7f64.ln()).abs() < 1e-15);
    }
}
