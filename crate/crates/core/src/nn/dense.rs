use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::Rng;

use crate::error::{Error, Result};

/// Fully connected layer: `z_i = b_i + sum_j W_ij s_j`, with `W` stored
/// `n_out x n_in`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseLayer {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct DenseGrads {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseGrads {
    pub fn zeros_like(layer: &DenseLayer) -> Self {
        Self {
            weight: Array2::zeros(layer.weight.raw_dim()),
            bias: Array1::zeros(layer.bias.raw_dim()),
        }
    }
}

impl DenseLayer {
    pub fn new(weight: Array2<f64>, bias: Array1<f64>) -> Result<Self> {
        if weight.nrows() != bias.len() {
            return Err(Error::DimensionMismatch {
                expected: weight.nrows(),
                actual: bias.len(),
            });
        }
        if weight.iter().chain(bias.iter()).any(|x| !x.is_finite()) {
            return Err(Error::Numerical("non-finite layer parameter".into()));
        }
        // flat-slice access needs standard layout
        Ok(Self {
            weight: weight.as_standard_layout().into_owned(),
            bias,
        })
    }

    pub fn zeros(n_in: usize, n_out: usize) -> Self {
        Self {
            weight: Array2::zeros((n_out, n_in)),
            bias: Array1::zeros(n_out),
        }
    }

    /// He-style uniform fan-in initialisation, `U(-sqrt(6/n_in), sqrt(6/n_in))`,
    /// zero biases.
    pub fn he_uniform<R: Rng + ?Sized>(n_in: usize, n_out: usize, rng: &mut R) -> Self {
        let bound = (6.0 / n_in as f64).sqrt();
        let weight = Array2::from_shape_simple_fn((n_out, n_in), || rng.random_range(-bound..bound));
        Self {
            weight,
            bias: Array1::zeros(n_out),
        }
    }

    pub fn n_in(&self) -> usize {
        self.weight.ncols()
    }

    pub fn n_out(&self) -> usize {
        self.weight.nrows()
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    /// Rows of `x` are samples.
    pub fn forward_batch(&self, x: ArrayView2<f64>) -> Array2<f64> {
        let mut z = x.dot(&self.weight.t());
        z += &self.bias;
        z
    }

    /// Returns parameter gradients and the gradient with respect to `x`.
    pub fn backward_batch(
        &self,
        x: ArrayView2<f64>,
        grad_z: ArrayView2<f64>,
    ) -> (DenseGrads, Array2<f64>) {
        let grads = DenseGrads {
            weight: grad_z.t().dot(&x),
            bias: grad_z.sum_axis(Axis(0)),
        };
        (grads, grad_z.dot(&self.weight))
    }

    /// Parameter gradients only, for the first layer where the input
    /// gradient is not needed.
    pub fn param_grads(&self, x: ArrayView2<f64>, grad_z: ArrayView2<f64>) -> DenseGrads {
        DenseGrads {
            weight: grad_z.t().dot(&x),
            bias: grad_z.sum_axis(Axis(0)),
        }
    }
}

/// Single-vector forward pass, written out term by term.
pub fn dense_forward(layer: &DenseLayer, s: &[f64]) -> Result<Vec<f64>> {
    if s.len() != layer.n_in() {
        return Err(Error::DimensionMismatch {
            expected: layer.n_in(),
            actual: s.len(),
        });
    }
    Ok(layer
        .weight
        .outer_iter()
        .zip(layer.bias.iter())
        .map(|(row, b)| b + row.iter().zip(s).map(|(w, x)| w * x).sum::<f64>())
        .collect())
}

/// `max(0, z)`; zero maps to zero.
pub fn relu(z: &[f64]) -> Vec<f64> {
    z.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

pub fn relu_inplace(a: &mut Array2<f64>) {
    a.mapv_inplace(|x| if x > 0.0 { x } else { 0.0 });
}

/// Masks `grad` by the ReLU derivative at `activated`; the subgradient at
/// zero is taken as 0.
pub fn relu_backward_inplace(grad: &mut Array2<f64>, activated: &Array2<f64>) {
    Zip::from(grad).and(activated).for_each(|g, &a| {
        if a <= 0.0 {
            *g = 0.0;
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn forward_examples() {
        let id = DenseLayer::new(Array2::eye(3), Array1::zeros(3)).unwrap();
        assert_eq!(dense_forward(&id, &[1.5, -2.0, 0.25]).unwrap(), vec![1.5, -2.0, 0.25]);

        let bias_only = DenseLayer::new(Array2::zeros((2, 4)), array![1.0, 2.0]).unwrap();
        assert_eq!(dense_forward(&bias_only, &[9.0, -3.0, 7.0, 1.0]).unwrap(), vec![1.0, 2.0]);

        let l = DenseLayer::new(array![[1.0, 2.0], [3.0, 4.0]], array![0.5, -0.5]).unwrap();
        assert_eq!(dense_forward(&l, &[1.0, 1.0]).unwrap(), vec![3.5, 6.5]);
        assert!(dense_forward(&l, &[1.0]).is_err());
        assert!(DenseLayer::new(Array2::zeros((2, 2)), Array1::zeros(3)).is_err());
    }

    #[test]
    fn batch_forward_matches_single() {
        let l = DenseLayer::new(array![[1.0, 2.0], [3.0, 4.0], [-1.0, 0.5]], array![0.5, -0.5, 0.0])
            .unwrap();
        let x = array![[1.0, 1.0], [0.2, -3.0]];
        let z = l.forward_batch(x.view());
        for (i, row) in x.outer_iter().enumerate() {
            let single = dense_forward(&l, row.as_slice().unwrap()).unwrap();
            for (a, b) in single.iter().zip(z.row(i)) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn relu_examples() {
        assert_eq!(relu(&[-1.0, 0.0, 2.0]), vec![0.0, 0.0, 2.0]);
        assert_eq!(relu(&[-1.0, -5.0]), vec![0.0, 0.0]);
        let z = [-0.3, 0.0, 4.0, 1e-300];
        assert_eq!(relu(&relu(&z)), relu(&z));
    }
}
