use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::sim::{simulate_telemetry, simulated_latency, BackgroundLoadModel};
use super::stream::{CropTag, FrameEvent};
use crate::ensemble::{decide_with_classes, ensemble_classify, EnsembleVerdict};
use crate::error::{Error, Result};
use crate::hypernet::{generate_ensemble, AuditLog, HyperNetParams, SeedRecord};
use crate::planner::{compute_deadline, plan_size, LatencyPredictor};

/// Background load over time.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "law", rename_all = "snake_case")]
pub enum LoadLaw {
    Constant { level: f64 },
    /// Gaussian steps per frame, reflected at 0 and 1.
    RandomWalk { start: f64, step_sd: f64 },
}

impl LoadLaw {
    fn validate(&self) -> Result<()> {
        let ok = match *self {
            LoadLaw::Constant { level } => (0.0..=1.0).contains(&level),
            LoadLaw::RandomWalk { start, step_sd } => (0.0..=1.0).contains(&start) && step_sd >= 0.0 && step_sd.is_finite(),
        };
        if !ok {
            return Err(Error::BadConfig("load law must stay within [0, 1]".into()));
        }
        Ok(())
    }
}

fn reflect(mut l: f64) -> f64 {
    loop {
        if l < 0.0 {
            l = -l;
        } else if l > 1.0 {
            l = 2.0 - l;
        } else {
            return l;
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PipelineConfig {
    pub fps: f64,
    pub n_min: usize,
    pub n_max: usize,
    pub t_s: f64,
    /// Base seed for per-frame ensemble renewal.
    pub base_seed: u64,
    /// Seed for the simulator's load, telemetry and latency draws.
    pub seed: u64,
    pub load: LoadLaw,
    /// Simulated planning and voting cost per crop (ms), reserved from the budget.
    pub plan_overhead_ms: f64,
    pub decide_overhead_ms: f64,
    /// Actually generate and run the ensembles; off gives a timing-only run.
    pub execute: bool,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            fps: 25.0,
            n_min: 3,
            n_max: 100,
            t_s: 0.5,
            base_seed: 0x5A4D_1E40,
            seed: 1,
            load: LoadLaw::RandomWalk { start: 0.5, step_sd: 0.03 },
            plan_overhead_ms: 0.02,
            decide_overhead_ms: 0.01,
            execute: true,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.fps > 0.0 && self.fps.is_finite()) {
            return Err(Error::BadConfig("fps must be positive".into()));
        }
        if self.n_min == 0 || self.n_min > self.n_max || self.n_max > u16::MAX as usize {
            return Err(Error::BadConfig(format!("bad ensemble bounds [{}, {}]", self.n_min, self.n_max)));
        }
        if !(0.0..=1.0).contains(&self.t_s) {
            return Err(Error::BadConfig("T_s must lie in [0, 1]".into()));
        }
        if !(self.plan_overhead_ms >= 0.0 && self.decide_overhead_ms >= 0.0) {
            return Err(Error::BadConfig("overheads must be non-negative".into()));
        }
        self.load.validate()
    }

    pub fn period_ms(&self) -> f64 {
        1000.0 / self.fps
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CropOutcome {
    pub tag: CropTag,
    pub label: Option<usize>,
    /// `None` when nothing was classified (timing-only run, or no budget).
    pub verdict: Option<EnsembleVerdict>,
    pub latency_ms: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameRecord {
    pub frame: u64,
    pub t_d_ms: f64,
    pub k: usize,
    /// Per-crop soft deadline; `None` for `k = 0` or when detection used the whole period.
    pub deadline_ms: Option<f64>,
    pub planned_n: usize,
    pub load: f64,
    /// Total processing time: detection plus every crop's plan/generate/execute/decide cost.
    pub latency_ms: f64,
    pub met_deadline: bool,
    pub no_budget: bool,
    pub n_flagged: usize,
    pub seed: Option<SeedRecord>,
    pub crops: Vec<CropOutcome>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunMetrics {
    pub period_ms: f64,
    pub frames: Vec<FrameRecord>,
}

impl RunMetrics {
    pub fn mean_time_ms(&self) -> f64 {
        self.frames.iter().map(|f| f.latency_ms).sum::<f64>() / self.frames.len().max(1) as f64
    }

    pub fn max_time_ms(&self) -> f64 {
        self.frames.iter().map(|f| f.latency_ms).fold(0.0, f64::max)
    }

    pub fn hit_rate(&self) -> f64 {
        self.frames.iter().filter(|f| f.met_deadline).count() as f64 / self.frames.len().max(1) as f64
    }

    /// Mean planned `N` over frames that ran an ensemble.
    pub fn mean_n(&self) -> f64 {
        let ran: Vec<_> = self.frames.iter().filter(|f| f.planned_n > 0).collect();
        ran.iter().map(|f| f.planned_n as f64).sum::<f64>() / ran.len().max(1) as f64
    }

    /// Share of frames whose total time is at most `period + slack_ms`.
    pub fn within(&self, slack_ms: f64) -> f64 {
        let ok = self.frames.iter().filter(|f| f.latency_ms <= self.period_ms + slack_ms).count();
        ok as f64 / self.frames.len().max(1) as f64
    }

    /// One row per frame: `frame, t_d_ms, k, deadline_ms, planned_N, latency_ms, met_deadline, n_flagged`.
    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["frame", "t_d_ms", "k", "deadline_ms", "planned_N", "latency_ms", "met_deadline", "n_flagged"])?;
        for f in &self.frames {
            w.write_record([
                f.frame.to_string(),
                format!("{:.4}", f.t_d_ms),
                f.k.to_string(),
                f.deadline_ms.map(|d| format!("{d:.4}")).unwrap_or_default(),
                f.planned_n.to_string(),
                format!("{:.4}", f.latency_ms),
                f.met_deadline.to_string(),
                f.n_flagged.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Run the per-frame plan → generate → execute → decide loop on a frame stream.
///
/// Timing is injected by the simulator, not measured. One ensemble is generated per
/// frame and shared by its crops (that is what the frame's `SeedRecord` replays), but
/// each crop is charged a full generation-plus-execution latency draw. Crops in a frame
/// without budget are not classified and count as flagged: they go to the operator.
pub fn run_pipeline<P: LatencyPredictor + ?Sized>(
    config: &PipelineConfig,
    frames: &[FrameEvent],
    model: &BackgroundLoadModel,
    predictor: &P,
    hypernet: Option<&HyperNetParams<f32>>,
    mut audit: Option<&mut AuditLog>,
) -> Result<RunMetrics> {
    config.validate()?;
    model.validate()?;
    if config.execute && hypernet.is_none() {
        return Err(Error::BadConfig("execute = true needs a trained HyperNet".into()));
    }
    let period = config.period_ms();
    let mut rng = ChaCha12Rng::seed_from_u64(config.seed);
    let mut load = match config.load {
        LoadLaw::Constant { level } => level,
        LoadLaw::RandomWalk { start, .. } => start,
    };
    let overhead = config.plan_overhead_ms + config.decide_overhead_ms;
    let mut records = Vec::with_capacity(frames.len());
    for (i, frame) in frames.iter().enumerate() {
        frame.validate()?;
        if i > 0 && frame.id <= frames[i - 1].id {
            return Err(Error::BadConfig("frames must have increasing ids".into()));
        }
        if let LoadLaw::RandomWalk { step_sd, .. } = config.load {
            let g: f64 = StandardNormal.sample(&mut rng);
            load = reflect(load + step_sd * g);
        }
        let telemetry = simulate_telemetry(model, load, &mut rng)?;
        let mut rec = FrameRecord {
            frame: frame.id,
            t_d_ms: frame.t_d_ms,
            k: frame.k,
            deadline_ms: None,
            planned_n: 0,
            load,
            latency_ms: frame.t_d_ms,
            met_deadline: false,
            no_budget: false,
            n_flagged: 0,
            seed: None,
            crops: Vec::with_capacity(frame.k),
        };
        let deadline = if frame.k == 0 {
            None
        } else {
            match compute_deadline(config.fps, frame.t_d_ms, frame.k) {
                Ok(d) => Some(d),
                Err(Error::NoBudget { .. }) => {
                    rec.no_budget = true;
                    None
                }
                Err(e) => return Err(e),
            }
        };
        if rec.no_budget {
            rec.n_flagged = frame.k;
            rec.crops = frame
                .crops
                .iter()
                .map(|c| CropOutcome { tag: c.tag, label: c.label, verdict: None, latency_ms: 0.0 })
                .collect();
        } else if let Some(d) = deadline {
            rec.deadline_ms = Some(d);
            let (n, _) = plan_size(predictor, &telemetry, d - overhead, config.n_min, config.n_max)?;
            rec.planned_n = n;
            let members = match (config.execute, hypernet) {
                (true, Some(h)) => {
                    let (members, record) = generate_ensemble(h, frame.id, split_seed_for(config.base_seed, frame.id), n)?;
                    if let Some(log) = audit.as_deref_mut() {
                        log.append(&record)?;
                    }
                    rec.seed = Some(record);
                    Some((h, members))
                }
                _ => None,
            };
            for crop in &frame.crops {
                let latency_ms = simulated_latency(model, n, load, &mut rng)? + overhead;
                let verdict = match &members {
                    Some((h, m)) => {
                        let spec = &h.spec.target;
                        let labels = ensemble_classify(spec, m, &crop.image)?;
                        Some(decide_with_classes(&labels, spec.classes, config.t_s)?)
                    }
                    None => None,
                };
                if verdict.as_ref().is_some_and(|v| v.is_flagged()) {
                    rec.n_flagged += 1;
                }
                rec.latency_ms += latency_ms;
                rec.crops.push(CropOutcome { tag: crop.tag, label: crop.label, verdict, latency_ms });
            }
        }
        rec.met_deadline = rec.latency_ms <= period;
        records.push(rec);
    }
    Ok(RunMetrics { period_ms: period, frames: records })
}

/// Per-frame base seed; a fresh draw for every frame is what makes the ensemble a
/// moving target.
pub fn split_seed_for(base_seed: u64, frame: u64) -> u64 {
    crate::hypernet::split_seed(base_seed, frame)
}
