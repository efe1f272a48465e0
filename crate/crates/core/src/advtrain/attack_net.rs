use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::nncore::{ImageShape, MlpCache, MlpParams, MlpSpec, Real, Tensor};

/// Attack network `f_A(z_A; θ_A)`: an MLP whose output is squashed into
/// `[-eps_clip, eps_clip]` by `eps_clip * tanh(·)`.
#[derive(Debug, Clone, PartialEq)]
pub struct AttackNet<T = f32> {
    pub spec: MlpSpec,
    pub params: MlpParams<T>,
    pub eps_clip: f32,
    pub image: ImageShape,
}

pub struct AttackCache<T = f32> {
    mlp: MlpCache<T>,
    /// `tanh` of the MLP output, i.e. `δ / eps_clip`.
    squashed: Vec<T>,
}

impl<T: Real> AttackNet<T> {
    pub fn zeros(image: ImageShape, noise_dim: usize, hidden: &[usize], eps_clip: f32) -> Result<Self> {
        let spec = Self::make_spec(image, noise_dim, hidden)?;
        let net = Self { params: MlpParams::zeros(&spec), spec, eps_clip, image };
        net.check()?;
        Ok(net)
    }

    /// He-normal hidden layers; the output layer starts at a tenth of that scale so the
    /// initial perturbation is far from saturation.
    pub fn init<R: Rng + ?Sized>(
        image: ImageShape,
        noise_dim: usize,
        hidden: &[usize],
        eps_clip: f32,
        rng: &mut R,
    ) -> Result<Self> {
        let spec = Self::make_spec(image, noise_dim, hidden)?;
        let net = Self { params: MlpParams::random(&spec, 0.1, rng), spec, eps_clip, image };
        net.check()?;
        Ok(net)
    }

    fn make_spec(image: ImageShape, noise_dim: usize, hidden: &[usize]) -> Result<MlpSpec> {
        let mut w = vec![noise_dim];
        w.extend(hidden);
        w.push(image.len());
        MlpSpec::new(w)
    }

    pub fn noise_dim(&self) -> usize {
        self.spec.input_width()
    }

    pub fn check(&self) -> Result<()> {
        self.params.check(&self.spec)?;
        if self.spec.output_width() != self.image.len() {
            return Err(Error::mismatch(format!(
                "attack output width {} cannot be reshaped to {:?}",
                self.spec.output_width(),
                self.image.dims()
            )));
        }
        if !(self.eps_clip > 0.0 && self.eps_clip <= 1.0) {
            return Err(Error::arg(format!("eps_clip {} outside (0, 1]", self.eps_clip)));
        }
        Ok(())
    }

    /// Draw `batch` noise vectors `z_A ~ N(0, I)`.
    pub fn sample_noise<R: Rng + ?Sized>(&self, batch: usize, rng: &mut R) -> Vec<T> {
        (0..batch * self.noise_dim())
            .map(|_| {
                let z: f64 = StandardNormal.sample(rng);
                T::of(z)
            })
            .collect()
    }

    /// Perturbations `[batch][image]` for `[batch][noise_dim]` noise.
    pub fn forward(&self, z: &[T], batch: usize) -> Result<(Vec<T>, AttackCache<T>)> {
        let (out, mlp) = self.params.forward(&self.spec, z, batch)?;
        let eps = T::of(self.eps_clip as f64);
        let squashed: Vec<T> = out.iter().map(|v| v.tanh()).collect();
        let delta = squashed.iter().map(|&t| t * eps).collect();
        Ok((delta, AttackCache { mlp, squashed }))
    }

    pub fn backward(&self, cache: &AttackCache<T>, d_delta: &[T]) -> Result<MlpParams<T>> {
        if d_delta.len() != cache.squashed.len() {
            return Err(Error::mismatch("perturbation gradient has the wrong length"));
        }
        let eps = T::of(self.eps_clip as f64);
        let d_out: Vec<T> = d_delta
            .iter()
            .zip(&cache.squashed)
            .map(|(&g, &t)| g * eps * (T::one() - t * t))
            .collect();
        Ok(self.params.backward(&self.spec, &cache.mlp, &d_out)?.0)
    }

    pub fn cast<U: Real>(&self) -> AttackNet<U> {
        AttackNet { spec: self.spec.clone(), params: self.params.cast(), eps_clip: self.eps_clip, image: self.image }
    }
}

/// One perturbation `δ` with the image's shape.
pub fn attack_forward<T: Real>(net: &AttackNet<T>, z_a: &Tensor<T>) -> Result<Tensor<T>> {
    if z_a.len() != net.noise_dim() {
        return Err(Error::mismatch(format!("z_A has {} values, attack net takes {}", z_a.len(), net.noise_dim())));
    }
    let (delta, _) = net.forward(z_a.data(), 1)?;
    Tensor::new(net.image.dims(), delta)
}

/// `x' = clamp(x + δ, 0, 1)`.
pub fn apply_perturbation<T: Real>(x: &[T], delta: &[T]) -> Vec<T> {
    x.iter().zip(delta).map(|(&a, &d)| (a + d).max(T::zero()).min(T::one())).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_net_gives_zero_perturbation() {
        let net = AttackNet::<f32>::zeros(ImageShape::MNIST, 32, &[64, 64], 0.3).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let z = Tensor::from_vec(net.sample_noise(1, &mut rng));
        let d = attack_forward(&net, &z).unwrap();
        assert_eq!(d.shape(), &[1, 28, 28]);
        assert!(d.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn perturbation_is_bounded_even_when_saturated() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = AttackNet::<f32>::init(ImageShape::MNIST, 8, &[16], 0.3, &mut rng).unwrap();
        net.params.for_each_param_mut(|v| *v *= 50.0);
        let z = net.sample_noise(4, &mut rng);
        let (d, _) = net.forward(&z, 4).unwrap();
        assert!(d.iter().all(|v| v.abs() <= 0.3));
        assert!(d.iter().any(|v| v.abs() > 0.29));
        let x: Vec<f32> = (0..784).map(|i| (i % 3) as f32 / 2.0).collect();
        let xp = apply_perturbation(&x, &d[..784]);
        assert!(xp.iter().all(|v| (0.0..=1.0).contains(v)));
    }

    #[test]
    fn shape_checks() {
        let net = AttackNet::<f32>::zeros(ImageShape::MNIST, 32, &[64], 0.3).unwrap();
        assert!(matches!(attack_forward(&net, &Tensor::zeros(vec![31])), Err(Error::SpecMismatch(_))));
        assert!(AttackNet::<f32>::zeros(ImageShape::MNIST, 32, &[64], 1.5).is_err());
        assert!(AttackNet::<f32>::zeros(ImageShape::MNIST, 32, &[64], 0.0).is_err());
    }
}
