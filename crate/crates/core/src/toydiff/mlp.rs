//! Small dense networks over flat inputs, used as differentiable test
//! subjects for attribution and autodiff checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::tape::{affine, Real, Tape};
use crate::attribution::GradientField;
use crate::error::{Error, Result};
use crate::matrix::Matrix;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Identity,
}

impl Activation {
    pub fn apply<R: Real>(self, x: R) -> R {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Identity => x,
        }
    }
}

/// `y = x W + b` with `W` stored `[inputs x outputs]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weights: Matrix,
    pub bias: Vec<f64>,
}

impl Dense {
    /// Uniform init in `±0.5 / sqrt(fan_in)`.
    pub fn random(inputs: usize, outputs: usize, rng: &mut impl Rng) -> Self {
        let weights = uniform_matrix(inputs, outputs, rng);
        let bias = uniform_vec(outputs, inputs, rng);
        Self { weights, bias }
    }

    pub fn inputs(&self) -> usize {
        self.weights.rows()
    }

    pub fn outputs(&self) -> usize {
        self.weights.cols()
    }

    pub fn forward<R: Real>(&self, x: &[R]) -> Vec<R> {
        (0..self.outputs())
            .map(|o| {
                let column = (0..self.inputs()).map(|i| self.weights.get(i, o));
                affine(column, x, self.bias[o])
            })
            .collect()
    }
}

pub(crate) fn uniform_vec(n: usize, fan_in: usize, rng: &mut impl Rng) -> Vec<f64> {
    let scale = 0.5 / (fan_in.max(1) as f64).sqrt();
    (0..n).map(|_| rng.gen_range(-scale..scale)).collect()
}

/// `[rows x cols]` matrix with fan-in `rows`.
pub(crate) fn uniform_matrix(rows: usize, cols: usize, rng: &mut impl Rng) -> Matrix {
    Matrix::from_vec(rows, cols, uniform_vec(rows * cols, rows, rng)).expect("shape is consistent")
}

/// Multi-layer perceptron; the activation follows every layer but the last.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<Dense>,
    pub activation: Activation,
}

impl Mlp {
    /// `sizes = [inputs, hidden.., outputs]`.
    pub fn random(sizes: &[usize], activation: Activation, seed: u64) -> Self {
        assert!(sizes.len() >= 2, "an MLP needs input and output sizes");
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let layers = sizes
            .windows(2)
            .map(|w| Dense::random(w[0], w[1], &mut rng))
            .collect();
        Self { layers, activation }
    }

    pub fn inputs(&self) -> usize {
        self.layers[0].inputs()
    }

    pub fn outputs(&self) -> usize {
        self.layers.last().map_or(0, Dense::outputs)
    }

    pub fn forward<R: Real>(&self, x: &[R]) -> Vec<R> {
        let last = self.layers.len() - 1;
        let mut h = x.to_vec();
        for (i, layer) in self.layers.iter().enumerate() {
            h = layer.forward(&h);
            if i < last {
                h = h.into_iter().map(|v| self.activation.apply(v)).collect();
            }
        }
        h
    }

    /// One output coordinate viewed as a scalar field.
    pub fn output(&self, index: usize) -> Result<MlpOutput<'_>> {
        if index >= self.outputs() {
            return Err(Error::invalid(format!(
                "output {index} out of range for {} outputs",
                self.outputs()
            )));
        }
        Ok(MlpOutput { mlp: self, index })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MlpOutput<'a> {
    mlp: &'a Mlp,
    index: usize,
}

impl GradientField for MlpOutput<'_> {
    fn dim(&self) -> usize {
        self.mlp.inputs()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        Ok(self.mlp.forward(x)[self.index])
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = tape.vars(x);
        let out = self.mlp.forward(&vars)[self.index];
        Ok(tape.gradients(out).wrt_all(&vars))
    }
}

/// `f(x) = w . x + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearFn {
    pub weights: Vec<f64>,
    pub bias: f64,
}

impl GradientField for LinearFn {
    fn dim(&self) -> usize {
        self.weights.len()
    }

    fn value(&mut self, x: &[f64]) -> Result<f64> {
        Ok(affine(self.weights.iter().copied(), x, self.bias))
    }

    fn gradient(&mut self, x: &[f64]) -> Result<Vec<f64>> {
        let tape = Tape::new();
        let vars = tape.vars(x);
        let out = affine(self.weights.iter().copied(), &vars, self.bias);
        Ok(tape.gradients(out).wrt_all(&vars))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn linear_gradient_is_weight_vector() {
        let mut f = LinearFn {
            weights: vec![2.0, -1.0, 0.5],
            bias: 0.25,
        };
        for x in [[0.0, 0.0, 0.0], [1.0, 2.0, 3.0], [-7.0, 0.5, 1e3]] {
            assert_eq!(f.gradient(&x).unwrap(), vec![2.0, -1.0, 0.5]);
        }
    }

    #[test]
    fn seeded_init_is_reproducible() {
        let a = Mlp::random(&[10, 8, 3], Activation::Tanh, 7);
        let b = Mlp::random(&[10, 8, 3], Activation::Tanh, 7);
        let c = Mlp::random(&[10, 8, 3], Activation::Tanh, 8);
        assert_eq!(a, b);
        assert_ne!(a, c);
        let bound = 0.5 / 10f64.sqrt();
        assert!(a.layers[0].weights.as_slice().iter().all(|w| w.abs() <= bound));
    }

    #[test]
    fn constant_head_has_zero_gradient() {
        let mut mlp = Mlp::random(&[4, 5, 2], Activation::Tanh, 1);
        let last = mlp.layers.last_mut().unwrap();
        last.weights = Matrix::zeros(5, 2);
        let mut out = mlp.output(1).unwrap();
        assert!(out
            .gradient(&[0.3, -0.2, 0.9, 1.0])
            .unwrap()
            .iter()
            .all(|g| *g == 0.0));
    }

    #[test]
    fn output_selector_checked() {
        let mlp = Mlp::random(&[2, 2], Activation::Identity, 0);
        assert!(mlp.output(2).is_err());
    }
}
