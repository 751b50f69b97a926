use rand::Rng;

use super::{Matrix, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

/// Named weight tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Weights<F> {
    names: Vec<String>,
    tensors: Vec<Matrix<F>>,
}

impl<F: Scalar> Weights<F> {
    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Matrix<F> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Matrix<F> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Matrix<F>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    /// Flat view of scalar `k` across all tensors, in declaration order.
    pub fn scalar_mut(&mut self, mut k: usize) -> &mut F {
        for t in &mut self.tensors {
            if k < t.len() {
                return &mut t.data[k];
            }
            k -= t.len();
        }
        panic!("scalar index out of range");
    }
}

/// Gradient buffers, one per weight tensor and of the same shape.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct Grads<F> {
    tensors: Vec<Matrix<F>>,
}

impl<F: Scalar> Grads<F> {
    pub fn zeros_like(w: &Weights<F>) -> Self {
        Grads {
            tensors: w
                .tensors
                .iter()
                .map(|t| Matrix::zeros(t.rows, t.cols))
                .collect(),
        }
    }

    pub fn get(&self, id: ParamId) -> &Matrix<F> {
        &self.tensors[id.0]
    }

    pub fn accumulate(&mut self, id: ParamId, g: &Matrix<F>) {
        self.tensors[id.0].add_assign(g);
    }

    pub fn add_assign(&mut self, other: &Grads<F>) {
        for (a, b) in self.tensors.iter_mut().zip(&other.tensors) {
            a.add_assign(b);
        }
    }

    pub fn scale(&mut self, c: F) {
        for t in &mut self.tensors {
            t.data.iter_mut().for_each(|x| *x *= c);
        }
    }

    pub fn zero(&mut self) {
        self.tensors.iter_mut().for_each(Matrix::fill_zero);
    }

    pub fn all_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::all_finite)
    }

    pub fn is_zero(&self) -> bool {
        self.tensors
            .iter()
            .all(|t| t.data.iter().all(|x| *x == F::zero()))
    }

    pub fn flat(&self) -> Vec<F> {
        self.tensors
            .iter()
            .flat_map(|t| t.data.iter().copied())
            .collect()
    }
}

/// Weights with paired gradient buffers. Gradients accumulate (`+=`) until an optimizer step
/// zeroes them.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParameterSet<F> {
    pub weights: Weights<F>,
    pub grads: Grads<F>,
}

impl<F: Scalar> ParameterSet<F> {
    pub fn new() -> Self {
        ParameterSet {
            weights: Weights {
                names: Vec::new(),
                tensors: Vec::new(),
            },
            grads: Grads {
                tensors: Vec::new(),
            },
        }
    }

    pub fn add(&mut self, name: &str, value: Matrix<F>) -> Result<ParamId> {
        if self.weights.id(name).is_some() {
            return Err(Error::Config(format!("duplicate parameter `{name}`")));
        }
        self.grads
            .tensors
            .push(Matrix::zeros(value.rows, value.cols));
        self.weights.names.push(name.to_string());
        self.weights.tensors.push(value);
        Ok(ParamId(self.weights.len() - 1))
    }

    /// Adds a tensor with entries drawn uniformly from `[-scale, scale]`.
    pub fn add_uniform<R: Rng>(
        &mut self,
        name: &str,
        rows: usize,
        cols: usize,
        scale: f64,
        rng: &mut R,
    ) -> Result<ParamId> {
        let data = (0..rows * cols)
            .map(|_| {
                F::of(if scale > 0.0 {
                    rng.gen_range(-scale..scale)
                } else {
                    0.0
                })
            })
            .collect();
        self.add(name, Matrix::from_vec(rows, cols, data))
    }

    pub fn zero_grads(&mut self) {
        self.grads.zero();
    }

    pub fn split(&mut self) -> (&Weights<F>, &mut Grads<F>) {
        (&self.weights, &mut self.grads)
    }

    pub fn cast<G: Scalar>(&self) -> ParameterSet<G> {
        ParameterSet {
            weights: Weights {
                names: self.weights.names.clone(),
                tensors: self.weights.tensors.iter().map(Matrix::cast).collect(),
            },
            grads: Grads {
                tensors: self.grads.tensors.iter().map(Matrix::cast).collect(),
            },
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grads_track_weight_shapes() {
        let mut p = ParameterSet::<f32>::new();
        let a = p.add("a", Matrix::zeros(2, 3)).unwrap();
        let b = p.add("b", Matrix::zeros(1, 4)).unwrap();
        assert_eq!(p.grads.get(a).shape(), (2, 3));
        assert_eq!(p.grads.get(b).shape(), (1, 4));
        assert!(p.add("a", Matrix::zeros(1, 1)).is_err());
        assert_eq!(p.weights.num_scalars(), 10);
        *p.weights.scalar_mut(7) = 3.0;
        assert_eq!(p.weights.get(b).data[1], 3.0);
    }
}
