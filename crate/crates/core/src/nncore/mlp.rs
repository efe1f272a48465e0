use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::{matmul, Real, Tensor};
use crate::error::{Error, Result};

/// Layer widths of a dense network, input first. Hidden layers use ReLU, the output
/// layer is linear.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    pub widths: Vec<usize>,
}

impl MlpSpec {
    pub fn new(widths: Vec<usize>) -> Result<Self> {
        let spec = Self { widths };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 3 {
            return Err(Error::mismatch("an MLP needs at least one hidden layer"));
        }
        if self.widths.contains(&0) {
            return Err(Error::mismatch("MLP widths must be positive"));
        }
        Ok(())
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().expect("validated")
    }

    pub fn layer_count(&self) -> usize {
        self.widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }
}

/// One dense layer: `y = x W^T + b` with `W` stored `[out, in]`.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseParams<T = f32> {
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Real> DenseParams<T> {
    pub fn zeros(input: usize, output: usize) -> Self {
        Self { weight: Tensor::zeros(vec![output, input]), bias: Tensor::zeros(vec![output]) }
    }

    pub fn input_width(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn output_width(&self) -> usize {
        self.weight.shape()[0]
    }

    /// Pre-activation output for a `[batch][in]` input.
    pub fn forward(&self, x: &[T], batch: usize) -> Result<Vec<T>> {
        let (i, o) = (self.input_width(), self.output_width());
        if x.len() != batch * i {
            return Err(Error::mismatch(format!("dense layer expects {batch}x{i} inputs, got {}", x.len())));
        }
        let mut y = vec![T::zero(); batch * o];
        matmul(x, false, self.weight.data(), true, &mut y, batch, i, o, false);
        for row in y.chunks_exact_mut(o) {
            for (v, &b) in row.iter_mut().zip(self.bias.data()) {
                *v += b;
            }
        }
        Ok(y)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MlpParams<T = f32> {
    pub layers: Vec<DenseParams<T>>,
}

/// Inputs of every layer (post-activation of the previous one) from a forward pass.
pub struct MlpCache<T = f32> {
    batch: usize,
    inputs: Vec<Vec<T>>,
}

impl<T: Real> MlpParams<T> {
    pub fn zeros(spec: &MlpSpec) -> Self {
        Self { layers: spec.widths.windows(2).map(|w| DenseParams::zeros(w[0], w[1])).collect() }
    }

    /// He-normal hidden layers; the output layer is scaled by `out_scale`.
    pub fn random<R: Rng + ?Sized>(spec: &MlpSpec, out_scale: f64, rng: &mut R) -> Self {
        let mut p = Self::zeros(spec);
        let last = p.layers.len() - 1;
        for (li, layer) in p.layers.iter_mut().enumerate() {
            let mut std = (2.0 / layer.input_width() as f64).sqrt();
            if li == last {
                std *= out_scale;
            }
            for v in layer.weight.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = T::of(z * std);
            }
        }
        p
    }

    pub fn check(&self, spec: &MlpSpec) -> Result<()> {
        spec.validate()?;
        if self.layers.len() != spec.layer_count() {
            return Err(Error::mismatch("MLP layer count differs from spec"));
        }
        for (l, w) in self.layers.iter().zip(spec.widths.windows(2)) {
            if l.weight.shape() != [w[1], w[0]] || l.bias.shape() != [w[1]] {
                return Err(Error::mismatch(format!(
                    "MLP layer {:?} does not match widths {}->{}",
                    l.weight.shape(),
                    w[0],
                    w[1]
                )));
            }
        }
        Ok(())
    }

    pub fn forward(&self, spec: &MlpSpec, input: &[T], batch: usize) -> Result<(Vec<T>, MlpCache<T>)> {
        self.check(spec)?;
        if batch == 0 || input.len() != batch * spec.input_width() {
            return Err(Error::mismatch(format!(
                "MLP expects {batch}x{} inputs, got {}",
                spec.input_width(),
                input.len()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for (li, layer) in self.layers.iter().enumerate() {
            let mut y = layer.forward(&x, batch)?;
            if li != last {
                y.iter_mut().for_each(|v| {
                    if *v < T::zero() {
                        *v = T::zero()
                    }
                });
            }
            inputs.push(std::mem::replace(&mut x, y));
        }
        if !super::all_finite(&x) {
            return Err(Error::NonFinite("mlp_forward"));
        }
        Ok((x, MlpCache { batch, inputs }))
    }

    /// Returns parameter gradients (summed over the batch) and the input gradient.
    pub fn backward(&self, spec: &MlpSpec, cache: &MlpCache<T>, d_out: &[T]) -> Result<(MlpParams<T>, Vec<T>)> {
        self.check(spec)?;
        let batch = cache.batch;
        if d_out.len() != batch * spec.output_width() {
            return Err(Error::mismatch("MLP output gradient has the wrong length"));
        }
        let mut grads = MlpParams::zeros(spec);
        let mut d = d_out.to_vec();
        for li in (0..self.layers.len()).rev() {
            let layer = &self.layers[li];
            let (i, o) = (layer.input_width(), layer.output_width());
            let x = &cache.inputs[li];
            let g = &mut grads.layers[li];
            matmul(&d, true, x, false, g.weight.data_mut(), o, batch, i, false);
            let gb = g.bias.data_mut();
            for row in d.chunks_exact(o) {
                for (b, &v) in gb.iter_mut().zip(row) {
                    *b += v;
                }
            }
            let mut dx = vec![T::zero(); batch * i];
            matmul(&d, false, layer.weight.data(), false, &mut dx, batch, o, i, false);
            if li > 0 {
                // x is the ReLU output of the previous layer.
                for (dv, &xv) in dx.iter_mut().zip(x) {
                    if xv <= T::zero() {
                        *dv = T::zero();
                    }
                }
            }
            d = dx;
        }
        Ok((grads, d))
    }

    /// Every parameter in a fixed order: per layer, weights then bias.
    pub fn flatten(&self) -> Vec<T> {
        self.layers
            .iter()
            .flat_map(|l| l.weight.data().iter().chain(l.bias.data()).copied())
            .collect()
    }

    pub fn for_each_param_mut(&mut self, mut f: impl FnMut(&mut T)) {
        for l in &mut self.layers {
            l.weight.data_mut().iter_mut().for_each(&mut f);
            l.bias.data_mut().iter_mut().for_each(&mut f);
        }
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        self.layers.iter().flat_map(|l| [l.weight.data(), l.bias.data()]).collect()
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        self.layers.iter_mut().flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()]).collect()
    }

    pub fn cast<U: Real>(&self) -> MlpParams<U> {
        MlpParams {
            layers: self
                .layers
                .iter()
                .map(|l| DenseParams { weight: l.weight.cast(), bias: l.bias.cast() })
                .collect(),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers.iter().all(|l| l.weight.is_finite() && l.bias.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn identity_layer_passes_input_through() {
        let mut layer = DenseParams::<f32>::zeros(4, 4);
        for i in 0..4 {
            layer.weight.data_mut()[i * 4 + i] = 1.0;
        }
        let x = [0.5f32, -1.5, 2.0, 0.0];
        assert_eq!(layer.forward(&x, 1).unwrap(), x.to_vec());
    }

    #[test]
    fn zero_input_zero_bias_gives_zero_output() {
        let spec = MlpSpec::new(vec![3, 5, 2]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let p = MlpParams::<f32>::random(&spec, 1.0, &mut rng);
        let (y, _) = p.forward(&spec, &[0.0; 6], 2).unwrap();
        assert!(y.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn spec_needs_hidden_layer() {
        assert!(MlpSpec::new(vec![3, 2]).is_err());
        assert!(MlpSpec::new(vec![3, 0, 2]).is_err());
        assert_eq!(MlpSpec::new(vec![256, 64, 64, 192]).unwrap().param_count(), 256 * 64 + 64 + 64 * 64 + 64 + 64 * 192 + 192);
    }

    #[test]
    fn width_mismatch_errors() {
        let spec = MlpSpec::new(vec![3, 5, 2]).unwrap();
        let p = MlpParams::<f32>::zeros(&spec);
        assert!(matches!(p.forward(&spec, &[0.0; 4], 1), Err(Error::SpecMismatch(_))));
        let other = MlpSpec::new(vec![3, 4, 2]).unwrap();
        assert!(p.forward(&other, &[0.0; 3], 1).is_err());
    }
}
