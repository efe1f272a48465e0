//! HyperNet: Gaussian noise `z_H` -> encoder -> per-layer latent codes -> one weight
//! generator per target layer -> a full target-network parameter set.

mod audit;
mod model_file;
mod seed;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use audit::{export_csv, read_records, AuditLog, SeedRecord, SEED_RECORD_BYTES};
pub use model_file::{load_model, read_model, save_model, write_model, ModelFile, MODEL_MAGIC, MODEL_VERSION};
pub use seed::{gaussian_vector, mix64, sample_latent_input, split_seed, LATENT_DIM};

use crate::error::{Error, Result};
use crate::nncore::{MlpCache, MlpParams, MlpSpec, Real, TargetNetSpec, TargetWeights, Tensor};

/// Architecture of a HyperNet and the target network it generates.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HyperNetSpec {
    pub target: TargetNetSpec,
    pub latent_dim: usize,
    pub code_dim: usize,
    pub encoder_hidden: Vec<usize>,
    pub generator_hidden: Vec<usize>,
}

impl HyperNetSpec {
    /// 256-d noise, encoder 64-64-(64x3), generators 64-64-(layer size).
    pub fn mnist() -> Self {
        Self {
            target: TargetNetSpec::mnist(),
            latent_dim: LATENT_DIM,
            code_dim: 64,
            encoder_hidden: vec![64, 64],
            generator_hidden: vec![64, 64],
        }
    }

    pub fn encoder_spec(&self) -> MlpSpec {
        let mut w = vec![self.latent_dim];
        w.extend(&self.encoder_hidden);
        w.push(self.code_dim * self.target.n());
        MlpSpec { widths: w }
    }

    pub fn generator_specs(&self) -> Vec<MlpSpec> {
        self.target
            .layer_param_counts()
            .into_iter()
            .map(|out| {
                let mut w = vec![self.code_dim];
                w.extend(&self.generator_hidden);
                w.push(out);
                MlpSpec { widths: w }
            })
            .collect()
    }

    pub fn validate(&self) -> Result<()> {
        self.target.validate()?;
        if self.latent_dim == 0 || self.code_dim == 0 {
            return Err(Error::mismatch("latent and code widths must be positive"));
        }
        if self.encoder_hidden.is_empty() || self.generator_hidden.is_empty() {
            return Err(Error::mismatch("encoder and generators need hidden layers"));
        }
        self.encoder_spec().validate()?;
        for g in self.generator_specs() {
            g.validate()?;
        }
        Ok(())
    }
}

/// `n` latent codes, one per target layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentCode<T = f32> {
    pub codes: Vec<Vec<T>>,
}

impl<T: Real> LatentCode<T> {
    pub fn concat(&self) -> Vec<T> {
        self.codes.concat()
    }
}

/// Encoder and generator weights.
#[derive(Debug, Clone, PartialEq)]
pub struct HyperNetParams<T = f32> {
    pub spec: HyperNetSpec,
    pub encoder: MlpParams<T>,
    pub generators: Vec<MlpParams<T>>,
}

/// Forward state of a batched generation, consumed by [`HyperNetParams::backward`].
pub struct HyperCache<T = f32> {
    batch: usize,
    encoder: MlpCache<T>,
    generators: Vec<MlpCache<T>>,
}

impl<T: Real> HyperNetParams<T> {
    pub fn zeros(spec: &HyperNetSpec) -> Result<Self> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            encoder: MlpParams::zeros(&spec.encoder_spec()),
            generators: spec.generator_specs().iter().map(MlpParams::zeros).collect(),
        })
    }

    /// Random initialisation.
    ///
    /// Each generator's output bias starts at a He-normal draw of its target layer and
    /// its output weights at `spread` times the usual scale, so freshly initialised
    /// HyperNets emit sensibly scaled target networks that differ slightly per `z_H`.
    pub fn init<R: Rng + ?Sized>(spec: &HyperNetSpec, spread: f64, rng: &mut R) -> Result<Self> {
        spec.validate()?;
        let encoder = MlpParams::random(&spec.encoder_spec(), 1.0, rng);
        let base = TargetWeights::<T>::random(&spec.target, rng)?;
        let geo = spec.target.geometry()?;
        let mut generators = Vec::with_capacity(geo.len());
        for (i, gs) in spec.generator_specs().iter().enumerate() {
            let mut g = MlpParams::random(gs, 1.0, rng);
            let fan_in = geo[i].weight_len() / geo[i].bias_len();
            let target_std = (2.0 / fan_in as f64).sqrt();
            let last = g.layers.last_mut().expect("validated");
            let hidden = last.input_width() as f64;
            // Hidden activations have roughly unit second moment; scale so the
            // z-dependent part of each generated weight has std `spread * target_std`.
            let scale = spread * target_std / hidden.sqrt();
            for v in last.weight.data_mut() {
                let z: f64 = StandardNormal.sample(rng);
                *v = T::of(z * scale);
            }
            last.bias.data_mut().copy_from_slice(&base.layer_flat(i));
            generators.push(g);
        }
        Ok(Self { spec: spec.clone(), encoder, generators })
    }

    pub fn check(&self) -> Result<()> {
        self.spec.validate()?;
        self.encoder.check(&self.spec.encoder_spec())?;
        let gs = self.spec.generator_specs();
        if gs.len() != self.generators.len() {
            return Err(Error::mismatch("generator count differs from target layer count"));
        }
        for (g, s) in self.generators.iter().zip(&gs) {
            g.check(s)?;
        }
        Ok(())
    }

    /// Draw `z_H` for this HyperNet's latent width from `seed`.
    pub fn sample_latent(&self, seed: u64) -> Tensor<T> {
        gaussian_vector(seed, self.spec.latent_dim)
    }

    pub fn encode(&self, z: &Tensor<T>) -> Result<LatentCode<T>> {
        if z.len() != self.spec.latent_dim {
            return Err(Error::mismatch(format!(
                "z_H has {} values, encoder takes {}",
                z.len(),
                self.spec.latent_dim
            )));
        }
        let (out, _) = self.encoder.forward(&self.spec.encoder_spec(), z.data(), 1)?;
        let d = self.spec.code_dim;
        Ok(LatentCode { codes: out.chunks_exact(d).map(<[T]>::to_vec).collect() })
    }

    /// One target network from one `z_H`.
    pub fn generate_weights(&self, z: &Tensor<T>) -> Result<TargetWeights<T>> {
        let (mut ws, _) = self.generate_batch(z.data(), 1)?;
        Ok(ws.pop().expect("batch of one"))
    }

    /// A target network per row of `z` (`[batch][latent_dim]`), plus the forward cache.
    pub fn generate_batch(&self, z: &[T], batch: usize) -> Result<(Vec<TargetWeights<T>>, HyperCache<T>)> {
        self.check()?;
        let enc_spec = self.spec.encoder_spec();
        if batch == 0 || z.len() != batch * self.spec.latent_dim {
            return Err(Error::mismatch(format!(
                "expected {batch} latent vectors of {}, got {} values",
                self.spec.latent_dim,
                z.len()
            )));
        }
        let (codes, enc_cache) = self.encoder.forward(&enc_spec, z, batch)?;
        let n = self.spec.target.n();
        let d = self.spec.code_dim;
        let gen_specs = self.spec.generator_specs();
        let mut outs = Vec::with_capacity(n);
        let mut caches = Vec::with_capacity(n);
        for (i, (g, gs)) in self.generators.iter().zip(&gen_specs).enumerate() {
            let code_i: Vec<T> = codes.chunks_exact(d * n).flat_map(|row| row[i * d..(i + 1) * d].iter().copied()).collect();
            let (out, cache) = g.forward(gs, &code_i, batch)?;
            if out.len() != batch * gs.output_width() {
                return Err(Error::mismatch("generator output width mismatch"));
            }
            outs.push(out);
            caches.push(cache);
        }
        let mut members = Vec::with_capacity(batch);
        for b in 0..batch {
            let flats: Vec<&[T]> = outs
                .iter()
                .zip(&gen_specs)
                .map(|(o, gs)| &o[b * gs.output_width()..(b + 1) * gs.output_width()])
                .collect();
            members.push(TargetWeights::from_layer_flats(&self.spec.target, &flats)?);
        }
        Ok((members, HyperCache { batch, encoder: enc_cache, generators: caches }))
    }

    /// Backpropagate per-member gradients of generated weights into HyperNet gradients.
    pub fn backward(&self, cache: &HyperCache<T>, d_members: &[TargetWeights<T>]) -> Result<HyperNetParams<T>> {
        let batch = cache.batch;
        if d_members.len() != batch {
            return Err(Error::mismatch("one weight gradient per generated member is required"));
        }
        let n = self.spec.target.n();
        let d = self.spec.code_dim;
        let gen_specs = self.spec.generator_specs();
        let mut d_codes = vec![T::zero(); batch * d * n];
        let mut gen_grads = Vec::with_capacity(n);
        for (i, (g, gs)) in self.generators.iter().zip(&gen_specs).enumerate() {
            let width = gs.output_width();
            let mut d_out = Vec::with_capacity(batch * width);
            for m in d_members {
                d_out.extend(m.layer_flat(i));
            }
            let (grads, d_code) = g.backward(gs, &cache.generators[i], &d_out)?;
            for b in 0..batch {
                d_codes[b * d * n + i * d..][..d].copy_from_slice(&d_code[b * d..(b + 1) * d]);
            }
            gen_grads.push(grads);
        }
        let (enc_grads, _) = self.encoder.backward(&self.spec.encoder_spec(), &cache.encoder, &d_codes)?;
        Ok(HyperNetParams { spec: self.spec.clone(), encoder: enc_grads, generators: gen_grads })
    }

    pub fn param_count(&self) -> usize {
        self.spec.encoder_spec().param_count() + self.spec.generator_specs().iter().map(MlpSpec::param_count).sum::<usize>()
    }

    pub fn param_slices(&self) -> Vec<&[T]> {
        let mut v = self.encoder.param_slices();
        for g in &self.generators {
            v.extend(g.param_slices());
        }
        v
    }

    pub fn param_slices_mut(&mut self) -> Vec<&mut [T]> {
        let mut v = self.encoder.param_slices_mut();
        for g in &mut self.generators {
            v.extend(g.param_slices_mut());
        }
        v
    }

    pub fn is_finite(&self) -> bool {
        self.encoder.is_finite() && self.generators.iter().all(MlpParams::is_finite)
    }

    pub fn cast<U: Real>(&self) -> HyperNetParams<U> {
        HyperNetParams {
            spec: self.spec.clone(),
            encoder: self.encoder.cast(),
            generators: self.generators.iter().map(MlpParams::cast).collect(),
        }
    }
}

/// Generate `n` members for a frame; member `j` uses `z_H = sample(split_seed(base_seed, j))`.
///
/// Each member goes through the single-vector path so that replaying a
/// [`SeedRecord`] reproduces bit-identical weights regardless of `n`.
pub fn generate_ensemble(
    params: &HyperNetParams<f32>,
    frame_id: u64,
    base_seed: u64,
    n: usize,
) -> Result<(Vec<TargetWeights<f32>>, SeedRecord)> {
    if n == 0 {
        return Err(Error::arg("ensemble size must be at least 1"));
    }
    let n16 = u16::try_from(n).map_err(|_| Error::arg("ensemble size exceeds u16"))?;
    let members = (0..n as u64)
        .map(|j| params.generate_weights(&params.sample_latent(split_seed(base_seed, j))))
        .collect::<Result<Vec<_>>>()?;
    Ok((members, SeedRecord::now(frame_id, base_seed, n16)))
}

/// Regenerate the ensemble a [`SeedRecord`] describes.
pub fn replay_ensemble(params: &HyperNetParams<f32>, record: &SeedRecord) -> Result<Vec<TargetWeights<f32>>> {
    generate_ensemble(params, record.frame_id, record.base_seed, record.n as usize).map(|(m, _)| m)
}

/// Mean over parameters of the population variance of each parameter across members.
pub fn mean_weight_variance<T: Real>(members: &[TargetWeights<T>]) -> f64 {
    if members.len() < 2 {
        return 0.0;
    }
    let flats: Vec<Vec<T>> = members.iter().map(TargetWeights::flatten).collect();
    let p = flats[0].len();
    let b = flats.len() as f64;
    let mut total = 0.0;
    for j in 0..p {
        let mean = flats.iter().map(|f| f[j].f64()).sum::<f64>() / b;
        total += flats.iter().map(|f| (f[j].f64() - mean).powi(2)).sum::<f64>() / b;
    }
    total / p as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nncore::ImageShape;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small_spec() -> HyperNetSpec {
        HyperNetSpec {
            target: TargetNetSpec::new(ImageShape { channels: 1, height: 10, width: 10 }, [2, 3], 3, 4).unwrap(),
            latent_dim: 6,
            code_dim: 4,
            encoder_hidden: vec![5],
            generator_hidden: vec![5],
        }
    }

    #[test]
    fn mnist_spec_shapes() {
        let spec = HyperNetSpec::mnist();
        assert_eq!(spec.encoder_spec().widths, vec![256, 64, 64, 192]);
        let outs: Vec<_> = spec.generator_specs().iter().map(|g| g.widths.clone()).collect();
        assert_eq!(outs, vec![vec![64, 64, 64, 832], vec![64, 64, 64, 25_632], vec![64, 64, 64, 5_130]]);
    }

    #[test]
    fn zero_encoder_gives_zero_codes() {
        let p = HyperNetParams::<f32>::zeros(&small_spec()).unwrap();
        let code = p.encode(&p.sample_latent(3)).unwrap();
        assert_eq!(code.codes.len(), 3);
        assert!(code.concat().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn codes_are_contiguous_slices_of_encoder_output() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let p = HyperNetParams::<f32>::init(&spec, 0.5, &mut rng).unwrap();
        let z = p.sample_latent(9);
        let (raw, _) = p.encoder.forward(&spec.encoder_spec(), z.data(), 1).unwrap();
        let code = p.encode(&z).unwrap();
        assert_eq!(code.concat(), raw);
        assert_eq!(p.encode(&z).unwrap(), code);
        assert!(p.encode(&Tensor::zeros(vec![5])).is_err());
    }

    #[test]
    fn generator_output_layout_is_weights_then_bias() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let p = HyperNetParams::<f32>::init(&spec, 0.5, &mut rng).unwrap();
        let z = p.sample_latent(1);
        let code = p.encode(&z).unwrap();
        let w = p.generate_weights(&z).unwrap();
        for (i, gs) in spec.generator_specs().iter().enumerate() {
            let (raw, _) = p.generators[i].forward(gs, &code.codes[i], 1).unwrap();
            let l = &w.layers[i];
            assert_eq!(&raw[..l.weight.len()], l.weight.data());
            assert_eq!(&raw[l.weight.len()..], l.bias.data());
        }
        w.check(&spec.target).unwrap();
    }

    #[test]
    fn mnist_generation_has_31594_elements() {
        let spec = HyperNetSpec::mnist();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let p = HyperNetParams::<f32>::init(&spec, 0.1, &mut rng).unwrap();
        let w = p.generate_weights(&p.sample_latent(0)).unwrap();
        assert_eq!(w.element_count(), 31_594);
        assert_eq!(w.element_count(), spec.target.param_count());
    }

    #[test]
    fn ensemble_of_one_matches_direct_generation() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let p = HyperNetParams::<f32>::init(&spec, 0.5, &mut rng).unwrap();
        let (members, rec) = generate_ensemble(&p, 0, 77, 1).unwrap();
        let direct = p.generate_weights(&p.sample_latent(split_seed(77, 0))).unwrap();
        assert_eq!(members, vec![direct]);
        assert_eq!((rec.base_seed, rec.n), (77, 1));
        assert!(matches!(generate_ensemble(&p, 0, 77, 0), Err(Error::BadArgument(_))));
    }

    #[test]
    fn replay_reproduces_weights() {
        let spec = small_spec();
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let p = HyperNetParams::<f32>::init(&spec, 0.5, &mut rng).unwrap();
        let (members, rec) = generate_ensemble(&p, 12, 0xDEAD_BEEF, 7).unwrap();
        assert_eq!(replay_ensemble(&p, &rec).unwrap(), members);
    }

    #[test]
    fn weight_variance_of_identical_members_is_zero() {
        let spec = small_spec();
        let w = TargetWeights::<f32>::zeros(&spec.target).unwrap();
        assert_eq!(mean_weight_variance(&[w.clone(), w]), 0.0);
    }
}
