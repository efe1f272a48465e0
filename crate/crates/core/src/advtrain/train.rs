use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use super::attack_net::{apply_perturbation, AttackNet};
use super::losses::{attack_objective, composite_grad};
use crate::ensemble::accuracy;
use crate::error::{Error, Result};
use crate::hypernet::{gaussian_vector, HyperNetParams, HyperNetSpec};
use crate::pipeline::Dataset;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Images per step.
    pub batch_size: usize,
    /// `z_H` draws per step; every image is scored by every generated member.
    pub z_batch: usize,
    pub lr_hypernet: f64,
    pub lr_attack: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub steps: usize,
    /// Attack-network updates per HyperNet update.
    pub attack_steps_per_step: usize,
    pub eps_clip: f64,
    pub attacker_enabled: bool,
    /// Share of each image batch replaced by `x' = clamp(x + δ)` when scoring `J1`.
    pub adv_fraction: f64,
    pub j2_weight: f64,
    /// Relative spread of generated weights at initialisation.
    pub init_spread: f64,
    pub attack_noise_dim: usize,
    pub attack_hidden: Vec<usize>,
    pub val_every: usize,
    pub val_samples: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 64,
            z_batch: 8,
            lr_hypernet: 3e-5,
            lr_attack: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            steps: 2500,
            attack_steps_per_step: 1,
            eps_clip: 0.3,
            attacker_enabled: true,
            adv_fraction: 0.5,
            j2_weight: 1.0,
            init_spread: 1.0,
            attack_noise_dim: 32,
            attack_hidden: vec![64, 64],
            val_every: 100,
            val_samples: 1000,
            seed: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::BadConfig(m.to_string()));
        if self.batch_size == 0 || self.z_batch == 0 || self.steps == 0 || self.val_every == 0 {
            return bad("batch sizes, step count and validation interval must be positive");
        }
        if self.j2_weight != 0.0 && self.z_batch < 2 {
            return bad("the diversity loss needs z_batch >= 2");
        }
        let positive = [self.lr_hypernet, self.lr_attack, self.init_spread];
        if positive.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
            return bad("learning rates and init spread must be positive");
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return bad("moment coefficients must lie in [0, 1)");
        }
        if !(self.eps_clip > 0.0 && self.eps_clip <= 1.0) {
            return bad("eps_clip must lie in (0, 1]");
        }
        if !(0.0..=1.0).contains(&self.adv_fraction) || self.j2_weight < 0.0 {
            return bad("adv_fraction must lie in [0, 1] and j2_weight must be non-negative");
        }
        if self.attacker_enabled && (self.attack_steps_per_step == 0 || self.attack_noise_dim == 0) {
            return bad("an enabled attacker needs positive step ratio and noise width");
        }
        if self.attack_hidden.is_empty() || self.attack_hidden.contains(&0) {
            return bad("attack network needs positive hidden widths");
        }
        Ok(())
    }

    fn adv_count(&self) -> usize {
        if self.attacker_enabled {
            (self.adv_fraction * self.batch_size as f64).round() as usize
        } else {
            0
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    #[serde(rename = "J1")]
    pub j1: f64,
    #[serde(rename = "J2")]
    pub j2: f64,
    #[serde(rename = "J3")]
    pub j3: Option<f64>,
    pub val_acc: Option<f64>,
}

/// Parameters at a step boundary.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub step: usize,
    pub hypernet: HyperNetParams<f32>,
    pub attack: AttackNet<f32>,
}

pub struct TrainOutcome {
    pub hypernet: HyperNetParams<f32>,
    pub attack: AttackNet<f32>,
    pub log: Vec<LogRow>,
}

pub fn write_log_csv(log: &[LogRow], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush()?;
    Ok(())
}

/// Seed of the fixed `z_H` used to score validation accuracy.
const VAL_Z_SEED: u64 = 0x5EED_0F_A11;

struct Sampler {
    order: Vec<usize>,
    pos: usize,
}

impl Sampler {
    fn next(&mut self, n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let mut out = Vec::with_capacity(n);
        while out.len() < n {
            if self.pos == self.order.len() {
                self.order.shuffle(rng);
                self.pos = 0;
            }
            out.push(self.order[self.pos]);
            self.pos += 1;
        }
        out
    }
}

/// Joint HyperNet / attack-network training.
///
/// Each step: draw images and `z_H`; replace the tail of the image batch with
/// attack-network perturbations of the same images; take one Adam step on
/// `J1 + j2_weight·J2` for the HyperNet; then `attack_steps_per_step` Adam steps on
/// `J3` for the attacker against the freshly updated members.
pub fn train(spec: &HyperNetSpec, config: &TrainConfig, train_set: &Dataset, val_set: &Dataset) -> Result<TrainOutcome> {
    config.validate()?;
    spec.validate()?;
    if train_set.is_empty() || val_set.is_empty() {
        return Err(Error::arg("training and validation sets must be non-empty"));
    }
    if train_set.shape != spec.target.input || val_set.shape != spec.target.input {
        return Err(Error::mismatch("dataset image shape differs from the target input"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut hyper = HyperNetParams::<f32>::init(spec, config.init_spread, &mut rng)?;
    let mut attack = AttackNet::<f32>::init(
        spec.target.input,
        config.attack_noise_dim,
        &config.attack_hidden,
        config.eps_clip as f32,
        &mut rng,
    )?;
    let mut opt_h = Adam::new(config.lr_hypernet, config.beta1, config.beta2);
    let mut opt_a = Adam::new(config.lr_attack, config.beta1, config.beta2);
    let mut sampler = Sampler { order: (0..train_set.len()).collect(), pos: train_set.len() };
    let val = val_set.slice(0, config.val_samples.max(1));
    let val_z = gaussian_vector::<f32>(VAL_Z_SEED, spec.latent_dim);
    let px = spec.target.input.len();
    let n_adv = config.adv_count().min(config.batch_size);
    let mut last_good = Checkpoint { step: 0, hypernet: hyper.clone(), attack: attack.clone() };
    let mut log = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let diverged = |last_good: Checkpoint| Error::TrainingDiverged { step, last_good: Box::new(last_good) };
        let idx = sampler.next(config.batch_size, &mut rng);
        let (clean, labels) = train_set.gather(&idx);
        let z: Vec<f32> = gaussian_vector::<f32>(rand::Rng::random(&mut rng), config.z_batch * spec.latent_dim).into_data();
        let split = (config.batch_size - n_adv) * px;
        let mut images = clean.clone();
        if n_adv > 0 {
            let za = attack.sample_noise(n_adv, &mut rng);
            let (delta, _) = attack.forward(&za, n_adv)?;
            images[split..].copy_from_slice(&apply_perturbation(&clean[split..], &delta));
        }

        let cg = match composite_grad(&hyper, &images, &labels, &z, config.z_batch, 1.0, config.j2_weight) {
            Ok(cg) => cg,
            Err(Error::NonFinite(_)) => return Err(diverged(last_good)),
            Err(e) => return Err(e),
        };
        if !(cg.j1.is_finite() && cg.j2.is_finite() && cg.grads.is_finite()) {
            return Err(diverged(last_good));
        }
        opt_h.step(hyper.param_slices_mut(), cg.grads.param_slices());

        let mut j3 = None;
        if n_adv > 0 {
            let (members, _) = match hyper.generate_batch(&z, config.z_batch) {
                Ok(m) => m,
                Err(Error::NonFinite(_)) => return Err(diverged(last_good)),
                Err(e) => return Err(e),
            };
            for _ in 0..config.attack_steps_per_step {
                let za = attack.sample_noise(n_adv, &mut rng);
                let (v, g) = attack_objective(
                    &spec.target,
                    &members,
                    &attack,
                    &clean[split..],
                    &labels[config.batch_size - n_adv..],
                    &za,
                    true,
                )?;
                let g = g.expect("requested");
                if !(v.is_finite() && g.is_finite()) {
                    return Err(diverged(last_good));
                }
                opt_a.step(attack.params.param_slices_mut(), g.param_slices());
                j3 = Some(v);
            }
        }
        if !(hyper.is_finite() && attack.params.is_finite()) {
            return Err(diverged(last_good));
        }

        let last = step + 1 == config.steps;
        let val_acc = if (step + 1) % config.val_every == 0 || last {
            let w = hyper.generate_weights(&val_z)?;
            let acc = accuracy(&spec.target, &w, &val)?;
            info!("step {:>5}  J1 {:.4}  J2 {:.4}  J3 {:>8}  val {:.4}", step + 1, cg.j1, cg.j2, j3.map_or("-".into(), |v| format!("{v:.3}")), acc);
            last_good = Checkpoint { step: step + 1, hypernet: hyper.clone(), attack: attack.clone() };
            Some(acc)
        } else {
            None
        };
        log.push(LogRow { step: step + 1, j1: cg.j1, j2: cg.j2, j3, val_acc });
    }
    Ok(TrainOutcome { hypernet: hyper, attack, log })
}
