use super::{Matrix, ParameterSet, Scalar};

/// Adam moments with the usual defaults (β1 = 0.9, β2 = 0.999, ε = 1e-8).
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<F> {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub step: u64,
    m: Vec<Matrix<F>>,
    v: Vec<Matrix<F>>,
}

impl<F: Scalar> AdamState<F> {
    pub fn new(params: &ParameterSet<F>) -> Self {
        let zeros: Vec<Matrix<F>> = params
            .weights
            .iter()
            .map(|(_, _, t)| Matrix::zeros(t.rows, t.cols))
            .collect();
        AdamState {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: zeros.clone(),
            v: zeros,
        }
    }
}

/// Bias-corrected Adam update from the accumulated gradients, which are then zeroed.
pub fn adam_step<F: Scalar>(params: &mut ParameterSet<F>, state: &mut AdamState<F>, lr: f64) {
    state.step += 1;
    let t = state.step as i32;
    let (b1, b2) = (F::of(state.beta1), F::of(state.beta2));
    let c1 = F::of(1.0 - state.beta1.powi(t));
    let c2 = F::of(1.0 - state.beta2.powi(t));
    let lr = F::of(lr);
    let eps = F::of(state.eps);
    let one = F::one();
    let ids: Vec<_> = params.weights.iter().map(|(id, _, _)| id).collect();
    for id in ids {
        let g = params.grads.get(id).data.clone();
        let m = &mut state.m[id.0].data;
        let v = &mut state.v[id.0].data;
        let w = &mut params.weights.get_mut(id).data;
        for k in 0..g.len() {
            m[k] = b1 * m[k] + (one - b1) * g[k];
            v[k] = b2 * v[k] + (one - b2) * g[k] * g[k];
            let mhat = m[k] / c1;
            let vhat = v[k] / c2;
            w[k] -= lr * mhat / (vhat.sqrt() + eps);
        }
    }
    params.zero_grads();
}
