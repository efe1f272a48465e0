use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adam::Adam;
use crate::error::{Error, Result};
use crate::nncore::{cross_entropy, cross_entropy_grad, target_backward, target_forward_batch, TargetNetSpec, TargetWeights};
use crate::pipeline::Dataset;

/// Plain supervised training of one target network: the attacker's surrogate when it
/// has the training data but not the HyperNet.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SurrogateConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
}

impl Default for SurrogateConfig {
    fn default() -> Self {
        Self { steps: 600, batch_size: 64, lr: 1e-3, seed: 99 }
    }
}

pub fn train_surrogate(spec: &TargetNetSpec, config: &SurrogateConfig, data: &Dataset) -> Result<TargetWeights<f32>> {
    if data.is_empty() || config.batch_size == 0 {
        return Err(Error::arg("surrogate training needs data and a positive batch size"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut w = TargetWeights::<f32>::random(spec, &mut rng)?;
    let mut opt = Adam::new(config.lr, 0.9, 0.999);
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut pos = order.len();
    for step in 0..config.steps {
        let mut idx = Vec::with_capacity(config.batch_size);
        while idx.len() < config.batch_size {
            if pos == order.len() {
                order.shuffle(&mut rng);
                pos = 0;
            }
            idx.push(order[pos]);
            pos += 1;
        }
        let (x, y) = data.gather(&idx);
        let (logits, cache) = target_forward_batch(spec, &w, &x, idx.len())?;
        let scale = 1.0 / idx.len() as f32;
        let mut dl = Vec::with_capacity(logits.len());
        let mut loss = 0.0;
        for (row, &yy) in logits.data().chunks_exact(spec.classes).zip(&y) {
            loss += cross_entropy(row, yy as usize)?;
            dl.extend(cross_entropy_grad(row, yy as usize)?.into_iter().map(|g| g * scale));
        }
        if !loss.is_finite() {
            return Err(Error::NonFinite("surrogate training"));
        }
        let g = target_backward(spec, &w, &cache, &dl, true, false)?.weights.expect("requested");
        let grads: Vec<&[f32]> = g.layers.iter().flat_map(|l| [l.weight.data(), l.bias.data()]).collect();
        let params: Vec<&mut [f32]> = w.layers.iter_mut().flat_map(|l| [l.weight.data_mut(), l.bias.data_mut()]).collect();
        opt.step(params, grads);
        if (step + 1) % 200 == 0 {
            log::debug!("surrogate step {} loss {:.4}", step + 1, loss / idx.len() as f64);
        }
    }
    Ok(w)
}
