//! Latency prediction from `(N, telemetry)` and ensemble-size planning under a soft
//! deadline.

mod linear;
mod profile;
mod tree;

use std::path::Path;

use serde::{Deserialize, Serialize};

pub use linear::{fit_linear, predict_linear, LinearModel, RIDGE};
pub use profile::{read_profile_csv, write_profile_csv};
pub use tree::{fit_tree, improves, leaf_mean, predict_tree, Node, RegressionTree, TreeParams, TIE_TOLERANCE};

use crate::error::{Error, Result};

/// Samples per telemetry trace (100 ms at 100 Hz).
pub const TRACE_LEN: usize = 10;

/// Utilisation (%) and power (mW) traces, each oldest sample first.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TelemetrySnapshot {
    pub utilization: Vec<f64>,
    pub power: Vec<f64>,
}

impl TelemetrySnapshot {
    pub fn new(utilization: Vec<f64>, power: Vec<f64>) -> Result<Self> {
        let s = Self { utilization, power };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.utilization.len() != TRACE_LEN || self.power.len() != TRACE_LEN {
            return Err(Error::BadTelemetry(format!(
                "need {TRACE_LEN}+{TRACE_LEN} samples, got {}+{}",
                self.utilization.len(),
                self.power.len()
            )));
        }
        if self.utilization.iter().chain(&self.power).any(|v| !v.is_finite()) {
            return Err(Error::BadTelemetry("non-finite sample".into()));
        }
        if self.utilization.iter().any(|u| !(0.0..=100.0).contains(u)) {
            return Err(Error::BadTelemetry("utilisation outside [0, 100]".into()));
        }
        Ok(())
    }

    /// Utilisation sampled `i * 10` ms before the snapshot was taken.
    pub fn u_lag(&self, i: usize) -> f64 {
        self.utilization[TRACE_LEN - 1 - i]
    }

    pub fn p_lag(&self, i: usize) -> f64 {
        self.power[TRACE_LEN - 1 - i]
    }

    /// Share of utilisation samples at or above 99 %.
    pub fn duty_cycle(&self) -> f64 {
        self.utilization.iter().filter(|&&u| u >= 99.0).count() as f64 / self.utilization.len() as f64
    }
}

/// `[N, U oldest→newest, P oldest→newest]`, or without the power trace.
pub fn extract_features(n: usize, t: &TelemetrySnapshot, include_power: bool) -> Result<Vec<f64>> {
    t.validate()?;
    let mut f = Vec::with_capacity(1 + 2 * TRACE_LEN);
    f.push(n as f64);
    f.extend(&t.utilization);
    if include_power {
        f.extend(&t.power);
    }
    Ok(f)
}

/// Inverse of [`extract_features`] for a with-power vector.
pub fn snapshot_from_features(f: &[f64]) -> Result<(usize, TelemetrySnapshot)> {
    if f.len() != 1 + 2 * TRACE_LEN {
        return Err(Error::BadTelemetry(format!("feature vector has {} values", f.len())));
    }
    let t = TelemetrySnapshot::new(f[1..1 + TRACE_LEN].to_vec(), f[1 + TRACE_LEN..].to_vec())?;
    Ok((f[0] as usize, t))
}

/// One profiling record: ensemble size, telemetry before generation, and latency.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatencySample {
    pub n: usize,
    pub telemetry: TelemetrySnapshot,
    pub latency_ms: f64,
}

pub fn design_matrix(samples: &[LatencySample], include_power: bool) -> Result<(Vec<Vec<f64>>, Vec<f64>)> {
    let xs = samples.iter().map(|s| extract_features(s.n, &s.telemetry, include_power)).collect::<Result<Vec<_>>>()?;
    Ok((xs, samples.iter().map(|s| s.latency_ms).collect()))
}

/// Anything that predicts ensemble latency (ms) from `N` and telemetry.
pub trait LatencyPredictor {
    fn predict(&self, n: usize, telemetry: &TelemetrySnapshot) -> Result<f64>;
}

impl<F: Fn(usize, &TelemetrySnapshot) -> f64> LatencyPredictor for F {
    fn predict(&self, n: usize, telemetry: &TelemetrySnapshot) -> Result<f64> {
        Ok(self(n, telemetry))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Dt,
    Lr,
}

/// Serialised predictor: a tree or linear model plus its feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "lowercase")]
pub enum PredictorModel {
    Dt { schema: String, include_power: bool, tree: RegressionTree },
    Lr { schema: String, include_power: bool, linear: LinearModel },
}

pub fn feature_schema(include_power: bool) -> String {
    if include_power { "N,U0..U9,P0..P9".into() } else { "N,U0..U9".into() }
}

impl PredictorModel {
    pub fn fit(kind: ModelKind, samples: &[LatencySample], include_power: bool, params: TreeParams) -> Result<Self> {
        let (xs, ys) = design_matrix(samples, include_power)?;
        let schema = feature_schema(include_power);
        Ok(match kind {
            ModelKind::Dt => PredictorModel::Dt { schema, include_power, tree: fit_tree(&xs, &ys, params)? },
            ModelKind::Lr => PredictorModel::Lr { schema, include_power, linear: fit_linear(&xs, &ys)? },
        })
    }

    pub fn include_power(&self) -> bool {
        match self {
            PredictorModel::Dt { include_power, .. } | PredictorModel::Lr { include_power, .. } => *include_power,
        }
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        std::fs::write(path, serde_json::to_string_pretty(self)?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let m: Self = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        if let PredictorModel::Dt { tree, .. } = &m {
            tree.check()?;
        }
        Ok(m)
    }

    /// Root-mean-square error on held-out samples.
    pub fn rmse(&self, samples: &[LatencySample]) -> Result<f64> {
        rmse(self, samples)
    }
}

impl LatencyPredictor for PredictorModel {
    fn predict(&self, n: usize, telemetry: &TelemetrySnapshot) -> Result<f64> {
        let f = extract_features(n, telemetry, self.include_power())?;
        match self {
            PredictorModel::Dt { tree, .. } => tree.predict(&f),
            PredictorModel::Lr { linear, .. } => linear.predict(&f),
        }
    }
}

pub fn rmse<P: LatencyPredictor + ?Sized>(p: &P, samples: &[LatencySample]) -> Result<f64> {
    if samples.is_empty() {
        return Err(Error::arg("RMSE over an empty set"));
    }
    let mut se = 0.0;
    for s in samples {
        se += (p.predict(s.n, &s.telemetry)? - s.latency_ms).powi(2);
    }
    Ok((se / samples.len() as f64).sqrt())
}

/// Per-crop soft deadline `(1000/x - t_d) / k` in ms.
pub fn compute_deadline(fps: f64, t_d_ms: f64, k: usize) -> Result<f64> {
    if !(fps > 0.0) || k == 0 || !(t_d_ms >= 0.0) {
        return Err(Error::arg("need fps > 0, k >= 1 and t_d >= 0"));
    }
    let period = 1000.0 / fps;
    let d = (period - t_d_ms) / k as f64;
    if d <= 0.0 {
        return Err(Error::NoBudget { period_ms: period, t_d_ms });
    }
    Ok(d)
}

/// Largest `N` in `[n_min, n_max]` whose predicted latency meets the deadline, by
/// exhaustive scan; `(n_min, false)` when none does.
pub fn plan_size<P: LatencyPredictor + ?Sized>(
    predictor: &P,
    telemetry: &TelemetrySnapshot,
    deadline_ms: f64,
    n_min: usize,
    n_max: usize,
) -> Result<(usize, bool)> {
    if n_min == 0 || n_min > n_max {
        return Err(Error::arg(format!("bad ensemble bounds [{n_min}, {n_max}]")));
    }
    for n in (n_min..=n_max).rev() {
        if predictor.predict(n, telemetry)? <= deadline_ms {
            return Ok((n, true));
        }
    }
    Ok((n_min, false))
}
