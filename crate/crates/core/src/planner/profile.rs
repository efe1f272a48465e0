use std::path::Path;

use super::{LatencySample, TelemetrySnapshot, TRACE_LEN};
use crate::error::{Error, Result};

fn header() -> Vec<String> {
    let mut h = vec!["N".to_string()];
    h.extend((0..TRACE_LEN).map(|i| format!("U{i}")));
    h.extend((0..TRACE_LEN).map(|i| format!("P{i}")));
    h.push("latency_ms".into());
    h
}

/// Profile CSV: `N, U0..U9, P0..P9, latency_ms`, traces oldest sample first.
pub fn write_profile_csv(samples: &[LatencySample], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(header())?;
    for s in samples {
        let mut row = vec![s.n.to_string()];
        row.extend(s.telemetry.utilization.iter().chain(&s.telemetry.power).map(f64::to_string));
        row.push(s.latency_ms.to_string());
        w.write_record(row)?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_profile_csv(path: impl AsRef<Path>) -> Result<Vec<LatencySample>> {
    let mut r = csv::Reader::from_path(path)?;
    if r.headers()?.iter().collect::<Vec<_>>() != header() {
        return Err(Error::format("profile CSV header must be N,U0..U9,P0..P9,latency_ms"));
    }
    let mut out = Vec::new();
    for (line, rec) in r.records().enumerate() {
        let rec = rec?;
        let num = |i: usize| -> Result<f64> {
            rec[i].trim().parse::<f64>().map_err(|_| Error::format(format!("row {}: column {i} is not a number", line + 1)))
        };
        let n = num(0)?;
        if !(n >= 1.0 && n.fract() == 0.0) {
            return Err(Error::format(format!("row {}: N must be a positive integer", line + 1)));
        }
        let util = (1..=TRACE_LEN).map(num).collect::<Result<Vec<_>>>()?;
        let power = (TRACE_LEN + 1..=2 * TRACE_LEN).map(num).collect::<Result<Vec<_>>>()?;
        let latency_ms = num(2 * TRACE_LEN + 1)?;
        if !(latency_ms > 0.0) {
            return Err(Error::format(format!("row {}: latency must be positive", line + 1)));
        }
        out.push(LatencySample { n: n as usize, telemetry: TelemetrySnapshot::new(util, power)?, latency_ms });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip() {
        let s = LatencySample {
            n: 40,
            telemetry: TelemetrySnapshot::new(vec![55.5; 10], (0..10).map(|i| 4000.0 + i as f64).collect()).unwrap(),
            latency_ms: 12.25,
        };
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("profile.csv");
        write_profile_csv(&[s.clone(), s.clone()], &p).unwrap();
        let text = std::fs::read_to_string(&p).unwrap();
        assert!(text.starts_with("N,U0,U1,U2,U3,U4,U5,U6,U7,U8,U9,P0,"));
        assert_eq!(read_profile_csv(&p).unwrap(), vec![s.clone(), s]);
        std::fs::write(&p, text.replace("latency_ms", "lat")).unwrap();
        assert!(matches!(read_profile_csv(&p), Err(Error::FormatError(_))));
    }
}
