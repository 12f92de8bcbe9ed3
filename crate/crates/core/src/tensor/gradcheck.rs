//! Layer wrappers and a central-difference gradient checker.
//!
//! Checks run in double precision. The scalar loss for a layer is a fixed
//! random projection `L = Σ r ⊙ y`, so `dL/dy = r`.

use rand::{Rng, SeedableRng};
use rand_xoshiro::SplitMix64;

use super::{
    conv3d, conv3d_backward, linear, linear_backward, maxpool3d, maxpool3d_backward, relu, relu_backward,
    ConvParams, Result, Scalar, Tensor,
};

/// A differentiable layer with optional parameters.
pub trait Layer<T: Scalar> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>>;

    /// Gradient with respect to `x` and to each tensor of [`Layer::params`],
    /// in the same order.
    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)>;

    fn params(&self) -> Vec<&Tensor<T>> {
        Vec::new()
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        Vec::new()
    }
}

#[derive(Debug, Clone)]
pub struct Conv3d<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
    pub params: ConvParams,
}

impl<T: Scalar> Layer<T> for Conv3d<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        conv3d(x, &self.weight, &self.bias, &self.params)
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let g = conv3d_backward(x, &self.weight, dy, &self.params)?;
        Ok((g.dx, vec![g.dw, g.db]))
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone)]
pub struct Linear<T> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Layer<T> for Linear<T> {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        linear(x, &self.weight, &self.bias)
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let g = linear_backward(x, &self.weight, dy)?;
        Ok((g.dx, vec![g.dw, g.db]))
    }

    fn params(&self) -> Vec<&Tensor<T>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Tensor<T>> {
        vec![&mut self.weight, &mut self.bias]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct MaxPool3d {
    pub window: [usize; 3],
    pub stride: [usize; 3],
}

impl<T: Scalar> Layer<T> for MaxPool3d {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(maxpool3d(x, self.window, self.stride)?.output)
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        let pooled = maxpool3d(x, self.window, self.stride)?;
        Ok((maxpool3d_backward(&pooled, dy)?, Vec::new()))
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct Relu;

impl<T: Scalar> Layer<T> for Relu {
    fn forward(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        Ok(relu(x))
    }

    fn backward(&self, x: &Tensor<T>, dy: &Tensor<T>) -> Result<(Tensor<T>, Vec<Tensor<T>>)> {
        Ok((relu_backward(x, dy)?, Vec::new()))
    }
}

/// `|analytic − numeric| / max(|analytic|, |numeric|, 1e-8)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-8)
}

/// Central differences of `f` at `point`, one coordinate at a time.
pub fn finite_difference(mut f: impl FnMut(&[f64]) -> f64, point: &[f64], eps: f64) -> Vec<f64> {
    let mut x = point.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let plus = f(&x);
            x[i] = orig - eps;
            let minus = f(&x);
            x[i] = orig;
            (plus - minus) / (2.0 * eps)
        })
        .collect()
}

/// Deterministic uniform `[-1, 1)` tensor used as the loss projection.
pub fn projection(shape: &[usize], seed: u64) -> Result<Tensor<f64>> {
    let mut rng = SplitMix64::seed_from_u64(seed);
    Tensor::from_fn(shape, |_| rng.random_range(-1.0..1.0))
}

fn projected_loss<L: Layer<f64>>(layer: &L, x: &Tensor<f64>, r: &Tensor<f64>) -> Result<f64> {
    let y = layer.forward(x)?;
    Ok(y.data().iter().zip(r.data()).map(|(a, b)| a * b).sum())
}

/// Largest relative error between analytic and central-difference gradients
/// over every input element and every parameter, across all `inputs`.
///
/// Inputs should avoid non-differentiable points (ReLU at zero, pooling ties).
pub fn grad_check<L: Layer<f64> + Clone>(layer: &L, inputs: &[Tensor<f64>], eps: f64) -> Result<f64> {
    let mut worst = 0.0f64;
    for (n, x) in inputs.iter().enumerate() {
        let y = layer.forward(x)?;
        let r = projection(y.shape(), 0x5eed_0000 + n as u64)?;
        let (dx, dparams) = layer.backward(x, &r)?;

        let mut probe = x.clone();
        for i in 0..x.len() {
            let orig = probe.data()[i];
            probe.data_mut()[i] = orig + eps;
            let plus = projected_loss(layer, &probe, &r)?;
            probe.data_mut()[i] = orig - eps;
            let minus = projected_loss(layer, &probe, &r)?;
            probe.data_mut()[i] = orig;
            worst = worst.max(relative_error(dx.data()[i], (plus - minus) / (2.0 * eps)));
        }

        let mut probe = layer.clone();
        for (p, grad) in dparams.iter().enumerate() {
            for i in 0..grad.len() {
                let orig = probe.params()[p].data()[i];
                probe.params_mut()[p].data_mut()[i] = orig + eps;
                let plus = projected_loss(&probe, x, &r)?;
                probe.params_mut()[p].data_mut()[i] = orig - eps;
                let minus = projected_loss(&probe, x, &r)?;
                probe.params_mut()[p].data_mut()[i] = orig;
                worst = worst.max(relative_error(grad.data()[i], (plus - minus) / (2.0 * eps)));
            }
        }
    }
    Ok(worst)
}
