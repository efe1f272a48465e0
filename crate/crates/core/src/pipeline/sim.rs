use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha12Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::planner::{LatencySample, TelemetrySnapshot, TRACE_LEN};

/// Synthetic background computation. `L ∈ [0,1]` plays the role of the background
/// task's size; above `l_c` the ensemble contends for the accelerator and both the
/// latency slope and the power draw step up.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BackgroundLoadModel {
    pub a0: f64,
    pub a1: f64,
    pub a2: f64,
    pub b0: f64,
    pub b1: f64,
    pub l_c: f64,
    /// Latency noise σ (ms).
    pub sigma: f64,
    pub util_base: f64,
    pub util_slope: f64,
    pub util_jitter: f64,
    pub power_base: f64,
    pub power_slope: f64,
    pub power_step: f64,
    pub power_jitter: f64,
    /// Reporting resolution of the sensors (0 = unquantised): whole percent and
    /// 50 mW steps by default, as utilisation and power rails are usually exposed.
    pub util_quantum: f64,
    pub power_quantum: f64,
}

impl Default for BackgroundLoadModel {
    fn default() -> Self {
        Self {
            a0: 0.22,
            a1: 0.05,
            a2: 0.25,
            b0: 1.5,
            b1: 1.0,
            l_c: 0.8,
            sigma: 0.5,
            util_base: 40.0,
            util_slope: 80.0,
            util_jitter: 0.5,
            power_base: 4000.0,
            power_slope: 3000.0,
            power_step: 2500.0,
            power_jitter: 10.0,
            util_quantum: 1.0,
            power_quantum: 50.0,
        }
    }
}

/// Smallest latency the simulator will report (ms).
pub const LATENCY_FLOOR_MS: f64 = 0.1;

fn step(x: bool) -> f64 {
    if x { 1.0 } else { 0.0 }
}

impl BackgroundLoadModel {
    /// Same law with all noise switched off.
    pub fn noiseless(&self) -> Self {
        Self { sigma: 0.0, util_jitter: 0.0, power_jitter: 0.0, util_quantum: 0.0, power_quantum: 0.0, ..self.clone() }
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.a0, self.a1, self.a2, self.b0, self.b1, self.l_c, self.sigma, self.util_base, self.util_slope,
            self.util_jitter, self.power_base, self.power_slope, self.power_step, self.power_jitter, self.util_quantum,
            self.power_quantum,
        ];
        if all.iter().any(|v| !v.is_finite() || *v < 0.0) {
            return Err(Error::BadConfig("simulator coefficients must be finite and non-negative".into()));
        }
        if self.a0 <= 0.0 || self.b0 <= 0.0 {
            return Err(Error::BadConfig("simulator needs a0 > 0 and b0 > 0".into()));
        }
        if !(0.0..=1.0).contains(&self.l_c) {
            return Err(Error::BadConfig("l_c must lie in [0, 1]".into()));
        }
        Ok(())
    }

    pub fn contended(&self, load: f64) -> bool {
        load > self.l_c
    }

    /// Per-member latency slope (ms per generated DNN) at load `L`.
    pub fn slope(&self, load: f64) -> f64 {
        self.a0 + self.a1 * load + self.a2 * step(self.contended(load))
    }

    pub fn mean_latency(&self, n: usize, load: f64) -> f64 {
        (self.slope(load) * n as f64 + self.b0 + self.b1 * load).max(LATENCY_FLOOR_MS)
    }

    pub fn mean_utilization(&self, load: f64) -> f64 {
        (self.util_base + self.util_slope * load).clamp(0.0, 100.0)
    }

    pub fn mean_power(&self, load: f64) -> f64 {
        self.power_base + self.power_slope * load + self.power_step * step(self.contended(load))
    }
}

fn gauss<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    StandardNormal.sample(rng)
}

fn quantize(v: f64, q: f64) -> f64 {
    if q > 0.0 { (v / q).round() * q } else { v }
}

fn check_load(load: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&load) {
        return Err(Error::arg(format!("load level {load} outside [0, 1]")));
    }
    Ok(())
}

/// Ten utilisation and ten power samples around the model's means, jittered and then
/// rounded to the sensor resolution.
pub fn simulate_telemetry<R: Rng + ?Sized>(model: &BackgroundLoadModel, load: f64, rng: &mut R) -> Result<TelemetrySnapshot> {
    check_load(load)?;
    let (u, p) = (model.util_base + model.util_slope * load, model.mean_power(load));
    let mut util = Vec::with_capacity(TRACE_LEN);
    let mut power = Vec::with_capacity(TRACE_LEN);
    for _ in 0..TRACE_LEN {
        util.push(quantize(u + model.util_jitter * gauss(rng), model.util_quantum).clamp(0.0, 100.0));
        power.push(quantize(p + model.power_jitter * gauss(rng), model.power_quantum).max(0.0));
    }
    TelemetrySnapshot::new(util, power)
}

/// One latency draw for generating and executing `n` members, floored at 0.1 ms.
pub fn simulated_latency<R: Rng + ?Sized>(model: &BackgroundLoadModel, n: usize, load: f64, rng: &mut R) -> Result<f64> {
    check_load(load)?;
    if n == 0 {
        return Err(Error::arg("ensemble size must be at least 1"));
    }
    let noise = model.sigma * gauss(rng);
    Ok((model.mean_latency(n, load) + noise).max(LATENCY_FLOOR_MS))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProfileGrid {
    pub sizes: Vec<usize>,
    pub loads: Vec<f64>,
    pub repeats: usize,
}

impl Default for ProfileGrid {
    fn default() -> Self {
        Self {
            sizes: (1..=10).map(|i| 10 * i).collect(),
            loads: (0..10).map(|i| (2 * i + 1) as f64 / 20.0).collect(),
            repeats: 5,
        }
    }
}

impl ProfileGrid {
    pub fn validate(&self) -> Result<()> {
        if self.sizes.is_empty() || self.loads.is_empty() || self.repeats == 0 {
            return Err(Error::BadConfig("profile grid must be non-empty".into()));
        }
        if self.sizes.contains(&0) {
            return Err(Error::BadConfig("profile grid sizes must be >= 1".into()));
        }
        if self.loads.iter().any(|l| !(0.0..=1.0).contains(l)) {
            return Err(Error::BadConfig("profile grid loads must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

/// One sample per `(N, L, repeat)`: telemetry is captured first, then the ensemble's
/// latency is drawn under the same load.
pub fn collect_profile(model: &BackgroundLoadModel, grid: &ProfileGrid, seed: u64) -> Result<Vec<LatencySample>> {
    model.validate()?;
    grid.validate()?;
    let mut rng = ChaCha12Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(grid.sizes.len() * grid.loads.len() * grid.repeats);
    for &n in &grid.sizes {
        for &load in &grid.loads {
            for _ in 0..grid.repeats {
                let telemetry = simulate_telemetry(model, load, &mut rng)?;
                let latency_ms = simulated_latency(model, n, load, &mut rng)?;
                out.push(LatencySample { n, telemetry, latency_ms });
            }
        }
    }
    Ok(out)
}

/// Shuffle, then cut into `train_parts : 1` (4:1 gives 400/100 on 500 samples).
pub fn split_profile(samples: &[LatencySample], train_parts: usize, seed: u64) -> (Vec<LatencySample>, Vec<LatencySample>) {
    let mut v = samples.to_vec();
    v.shuffle(&mut ChaCha12Rng::seed_from_u64(seed));
    let cut = v.len() * train_parts / (train_parts + 1);
    let test = v.split_off(cut);
    (v, test)
}

/// Predictor that knows the simulator's mean law and reads load back from the
/// utilisation/power means. Only exact when telemetry is noiseless.
#[derive(Debug, Clone)]
pub struct OraclePredictor {
    pub model: BackgroundLoadModel,
}

impl OraclePredictor {
    /// Recover `L` from the power trace (monotone in `L`, with the step at `l_c`).
    pub fn infer_load(&self, t: &TelemetrySnapshot) -> f64 {
        let m = &self.model;
        let p = t.power.iter().sum::<f64>() / t.power.len() as f64;
        if m.power_slope <= 0.0 {
            let u = t.utilization.iter().sum::<f64>() / t.utilization.len() as f64;
            return if m.util_slope > 0.0 { ((u - m.util_base) / m.util_slope).clamp(0.0, 1.0) } else { 0.0 };
        }
        let below = (p - m.power_base) / m.power_slope;
        let l = if below <= m.l_c { below } else { (p - m.power_base - m.power_step) / m.power_slope };
        l.clamp(0.0, 1.0)
    }
}

impl crate::planner::LatencyPredictor for OraclePredictor {
    fn predict(&self, n: usize, telemetry: &TelemetrySnapshot) -> Result<f64> {
        Ok(self.model.mean_latency(n, self.infer_load(telemetry)))
    }
}
