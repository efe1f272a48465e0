//! Host mode: real wall-clock ensemble timing and host CPU utilisation from
//! `/proc/stat`. Results depend on the machine, so nothing in CI relies on them.

use std::thread::sleep;
use std::time::{Duration, Instant};

use crate::ensemble::ensemble_classify;
use crate::error::{Error, Result};
use crate::hypernet::{generate_ensemble, HyperNetParams};
use crate::planner::{TelemetrySnapshot, TRACE_LEN};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CpuTimes {
    pub busy: u64,
    pub total: u64,
}

/// Aggregate jiffies from the `cpu` line of `/proc/stat`.
pub fn read_cpu_times() -> Result<CpuTimes> {
    let text = std::fs::read_to_string("/proc/stat")?;
    let line = text.lines().find(|l| l.starts_with("cpu ")).ok_or_else(|| Error::BadTelemetry("no cpu line in /proc/stat".into()))?;
    let v: Vec<u64> = line.split_whitespace().skip(1).filter_map(|t| t.parse().ok()).collect();
    if v.len() < 4 {
        return Err(Error::BadTelemetry("short cpu line in /proc/stat".into()));
    }
    let idle = v[3] + v.get(4).copied().unwrap_or(0);
    let total: u64 = v.iter().take(8).sum();
    Ok(CpuTimes { busy: total - idle, total })
}

/// Ten utilisation samples 10 ms apart. There is no portable power sensor, so the
/// power trace is zero; use predictors fitted without power features.
pub fn host_telemetry() -> Result<TelemetrySnapshot> {
    let mut util = Vec::with_capacity(TRACE_LEN);
    let mut prev = read_cpu_times()?;
    for _ in 0..TRACE_LEN {
        sleep(Duration::from_millis(10));
        let now = read_cpu_times()?;
        let dt = now.total.saturating_sub(prev.total);
        let db = now.busy.saturating_sub(prev.busy);
        util.push(if dt == 0 { 0.0 } else { (100.0 * db as f64 / dt as f64).clamp(0.0, 100.0) });
        prev = now;
    }
    TelemetrySnapshot::new(util, vec![0.0; TRACE_LEN])
}

/// Wall-clock time (ms) to generate `n` members and classify `x` with them.
pub fn measure_ensemble_ms(hypernet: &HyperNetParams<f32>, n: usize, x: &[f32], seed: u64) -> Result<f64> {
    let t = Instant::now();
    let (members, _) = generate_ensemble(hypernet, 0, seed, n)?;
    ensemble_classify(&hypernet.spec.target, &members, x)?;
    Ok(t.elapsed().as_secs_f64() * 1e3)
}
