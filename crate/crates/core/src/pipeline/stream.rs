use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, Poisson};
use serde::{Deserialize, Serialize};

use super::Dataset;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CropTag {
    Clean,
    Adversarial,
    Ood,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Crop {
    pub image: Vec<f32>,
    /// Ground-truth class; `None` for OOD crops.
    pub label: Option<usize>,
    pub tag: CropTag,
}

/// One camera frame after detection: `k` crops to classify.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameEvent {
    pub id: u64,
    pub arrival_ms: f64,
    pub t_d_ms: f64,
    pub k: usize,
    pub crops: Vec<Crop>,
}

impl FrameEvent {
    pub fn validate(&self) -> Result<()> {
        if self.crops.len() != self.k {
            return Err(Error::BadConfig(format!("frame {}: k = {} but {} crops", self.id, self.k, self.crops.len())));
        }
        if !(self.t_d_ms >= 0.0) || !self.arrival_ms.is_finite() {
            return Err(Error::BadConfig(format!("frame {}: bad timing", self.id)));
        }
        Ok(())
    }
}

/// Input sizes of the detector stub.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FramePreset {
    #[serde(rename = "320")]
    P320,
    #[serde(rename = "416")]
    P416,
    #[serde(rename = "512")]
    P512,
}

impl FramePreset {
    /// Detector throughput (fps) at this frame size.
    pub fn throughput(self) -> f64 {
        match self {
            FramePreset::P320 => 82.0,
            FramePreset::P416 => 55.0,
            FramePreset::P512 => 42.0,
        }
    }

    /// Approximate detection time `1000 / throughput` (ms).
    pub fn t_d_ms(self) -> f64 {
        1000.0 / self.throughput()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum DetectorLaw {
    Preset { preset: FramePreset },
    Constant { ms: f64 },
    Uniform { min_ms: f64, max_ms: f64 },
}

impl DetectorLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            DetectorLaw::Preset { .. } => true,
            DetectorLaw::Constant { ms } => ms >= 0.0 && ms.is_finite(),
            DetectorLaw::Uniform { min_ms, max_ms } => min_ms >= 0.0 && max_ms >= min_ms && max_ms.is_finite(),
        };
        if !ok {
            return Err(Error::BadConfig("detector time law must be finite and non-negative".into()));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            DetectorLaw::Preset { preset } => preset.t_d_ms(),
            DetectorLaw::Constant { ms } => ms,
            DetectorLaw::Uniform { min_ms, max_ms } if max_ms > min_ms => rng.random_range(min_ms..max_ms),
            DetectorLaw::Uniform { min_ms, .. } => min_ms,
        }
    }
}

/// Number of detected crops per frame.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "lowercase")]
pub enum CountLaw {
    Constant { k: usize },
    Uniform { min: usize, max: usize },
    /// Poisson with the given mean, truncated at `max`.
    Poisson { mean: f64, max: usize },
}

impl CountLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            CountLaw::Constant { .. } => true,
            CountLaw::Uniform { min, max } => min <= max,
            CountLaw::Poisson { mean, .. } => mean > 0.0 && mean.is_finite(),
        };
        if !ok {
            return Err(Error::BadConfig("bad crop-count law".into()));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        match *self {
            CountLaw::Constant { k } => k,
            CountLaw::Uniform { min, max } => rng.random_range(min..=max),
            CountLaw::Poisson { mean, max } => {
                let k: f64 = Poisson::new(mean).expect("validated").sample(rng);
                (k as usize).min(max)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MixRatios {
    pub clean: f64,
    pub adversarial: f64,
    pub ood: f64,
}

impl Default for MixRatios {
    fn default() -> Self {
        Self { clean: 1.0, adversarial: 0.0, ood: 0.0 }
    }
}

impl MixRatios {
    fn validate(&self) -> Result<()> {
        let parts = [self.clean, self.adversarial, self.ood];
        if parts.iter().any(|p| !(0.0..=1.0).contains(p)) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::BadConfig("mix ratios must be in [0, 1] and sum to 1".into()));
        }
        Ok(())
    }

    fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> CropTag {
        let u: f64 = rng.random();
        if u < self.clean {
            CropTag::Clean
        } else if u < self.clean + self.adversarial || self.ood == 0.0 {
            CropTag::Adversarial
        } else {
            CropTag::Ood
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StreamConfig {
    pub frames: usize,
    pub fps: f64,
    pub detector: DetectorLaw,
    pub crops: CountLaw,
    pub mix: MixRatios,
    pub seed: u64,
}

impl Default for StreamConfig {
    fn default() -> Self {
        Self {
            frames: 2000,
            fps: 25.0,
            detector: DetectorLaw::Preset { preset: FramePreset::P416 },
            crops: CountLaw::Constant { k: 1 },
            mix: MixRatios::default(),
            seed: 7,
        }
    }
}

impl StreamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::BadConfig("fps must be positive".into()));
        }
        self.detector.validate()?;
        self.crops.validate()?;
        self.mix.validate()
    }
}

/// Build a deterministic frame stream. Clean and adversarial crops are drawn from
/// `clean`; `attack(x, y)` turns a clean crop into its adversarial copy.
pub fn inject_stream<F>(clean: &Dataset, ood: Option<&Dataset>, mut attack: F, config: &StreamConfig) -> Result<Vec<FrameEvent>>
where
    F: FnMut(&[f32], usize) -> Result<Vec<f32>>,
{
    config.validate()?;
    if clean.is_empty() {
        return Err(Error::BadConfig("stream needs a non-empty clean set".into()));
    }
    if config.mix.ood > 0.0 && ood.is_none_or(|d| d.is_empty()) {
        return Err(Error::BadConfig("OOD ratio > 0 but no OOD set".into()));
    }
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let period = 1000.0 / config.fps;
    let mut frames = Vec::with_capacity(config.frames);
    for f in 0..config.frames {
        let t_d_ms = config.detector.draw(&mut rng);
        let k = config.crops.draw(&mut rng);
        let mut crops = Vec::with_capacity(k);
        for _ in 0..k {
            let crop = match config.mix.draw(&mut rng) {
                CropTag::Ood => {
                    let d = ood.expect("checked");
                    let i = rng.random_range(0..d.len());
                    Crop { image: d.image(i).to_vec(), label: None, tag: CropTag::Ood }
                }
                tag => {
                    let i = rng.random_range(0..clean.len());
                    let y = clean.label(i);
                    let x = clean.image(i);
                    let image = if tag == CropTag::Adversarial { attack(x, y)? } else { x.to_vec() };
                    if image.len() != x.len() {
                        return Err(Error::mismatch(format!("attack output has {} values, expected {}", image.len(), x.len())));
                    }
                    Crop { image, label: Some(y), tag }
                }
            };
            crops.push(crop);
        }
        frames.push(FrameEvent { id: f as u64, arrival_ms: f as f64 * period, t_d_ms, k, crops });
    }
    Ok(frames)
}
