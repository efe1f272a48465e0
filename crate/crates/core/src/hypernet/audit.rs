use std::collections::HashSet;
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Read, Write};
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Encoded size of one [`SeedRecord`].
pub const SEED_RECORD_BYTES: usize = 26;

/// Everything needed to regenerate one frame's ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SeedRecord {
    pub frame_id: u64,
    pub base_seed: u64,
    pub n: u16,
    pub unix_ms: u64,
}

impl SeedRecord {
    pub fn now(frame_id: u64, base_seed: u64, n: u16) -> Self {
        let unix_ms = SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_millis() as u64);
        Self { frame_id, base_seed, n, unix_ms }
    }

    /// Little-endian `frame_id ‖ base_seed ‖ n ‖ unix_ms`.
    pub fn to_bytes(&self) -> [u8; SEED_RECORD_BYTES] {
        let mut b = [0u8; SEED_RECORD_BYTES];
        b[0..8].copy_from_slice(&self.frame_id.to_le_bytes());
        b[8..16].copy_from_slice(&self.base_seed.to_le_bytes());
        b[16..18].copy_from_slice(&self.n.to_le_bytes());
        b[18..26].copy_from_slice(&self.unix_ms.to_le_bytes());
        b
    }

    pub fn from_bytes(b: &[u8; SEED_RECORD_BYTES]) -> Self {
        let u64_at = |i: usize| u64::from_le_bytes(b[i..i + 8].try_into().expect("8 bytes"));
        Self {
            frame_id: u64_at(0),
            base_seed: u64_at(8),
            n: u16::from_le_bytes([b[16], b[17]]),
            unix_ms: u64_at(18),
        }
    }
}

/// Append-only binary log of seed records in frame order.
pub struct AuditLog {
    out: BufWriter<File>,
    last_frame: Option<u64>,
    seen: HashSet<(u64, u64)>,
    count: u64,
}

impl AuditLog {
    pub fn create(path: impl AsRef<Path>) -> Result<Self> {
        let f = File::create(path)?;
        Ok(Self { out: BufWriter::new(f), last_frame: None, seen: HashSet::new(), count: 0 })
    }

    /// Open an existing log for appending; ordering and uniqueness are checked against
    /// what is already on disk.
    pub fn open_append(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let existing = if path.exists() { read_records(path)? } else { Vec::new() };
        let f = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            out: BufWriter::new(f),
            last_frame: existing.last().map(|r| r.frame_id),
            seen: existing.iter().map(|r| (r.frame_id, r.base_seed)).collect(),
            count: existing.len() as u64,
        })
    }

    pub fn append(&mut self, rec: &SeedRecord) -> Result<()> {
        if self.last_frame.is_some_and(|last| rec.frame_id < last) {
            return Err(Error::arg(format!(
                "audit records must be appended in frame order (frame {} after {})",
                rec.frame_id,
                self.last_frame.unwrap_or_default()
            )));
        }
        if !self.seen.insert((rec.frame_id, rec.base_seed)) {
            return Err(Error::arg(format!("duplicate audit record for frame {} seed {}", rec.frame_id, rec.base_seed)));
        }
        self.out.write_all(&rec.to_bytes())?;
        self.last_frame = Some(rec.frame_id);
        self.count += 1;
        Ok(())
    }

    pub fn len(&self) -> u64 {
        self.count
    }

    pub fn is_empty(&self) -> bool {
        self.count == 0
    }

    pub fn flush(&mut self) -> Result<()> {
        self.out.flush()?;
        Ok(())
    }
}

impl Drop for AuditLog {
    fn drop(&mut self) {
        let _ = self.out.flush();
    }
}

pub fn read_records(path: impl AsRef<Path>) -> Result<Vec<SeedRecord>> {
    let mut buf = Vec::new();
    File::open(path)?.read_to_end(&mut buf)?;
    if buf.len() % SEED_RECORD_BYTES != 0 {
        return Err(Error::format(format!(
            "audit log length {} is not a multiple of {SEED_RECORD_BYTES}",
            buf.len()
        )));
    }
    Ok(buf
        .chunks_exact(SEED_RECORD_BYTES)
        .map(|c| SeedRecord::from_bytes(c.try_into().expect("exact chunk")))
        .collect())
}

/// CSV export with a `frame_id,base_seed,n,unix_ms` header.
pub fn export_csv(records: &[SeedRecord], path: impl AsRef<Path>) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

impl AuditLog {
    pub fn read(path: impl AsRef<Path>) -> Result<Vec<SeedRecord>> {
        read_records(path)
    }

    pub fn export_csv(records: &[SeedRecord], path: impl AsRef<Path>) -> Result<()> {
        export_csv(records, path)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn record_is_26_bytes_little_endian() {
        let r = SeedRecord { frame_id: 1, base_seed: 0x0102_0304_0506_0708, n: 0x0A0B, unix_ms: 2 };
        let b = r.to_bytes();
        assert_eq!(b.len(), 26);
        assert_eq!(b[0], 1);
        assert_eq!(&b[8..16], &[8, 7, 6, 5, 4, 3, 2, 1]);
        assert_eq!(&b[16..18], &[0x0B, 0x0A]);
        assert_eq!(b[18], 2);
        assert_eq!(SeedRecord::from_bytes(&b), r);
    }

    #[test]
    fn log_round_trip_and_ordering() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.bin");
        let recs: Vec<_> = (0..5).map(|f| SeedRecord { frame_id: f, base_seed: f * 3 + 1, n: 10, unix_ms: 99 }).collect();
        {
            let mut log = AuditLog::create(&path).unwrap();
            for r in &recs {
                log.append(r).unwrap();
            }
            assert!(log.append(&recs[4]).is_err(), "duplicate accepted");
            assert!(log.append(&recs[1]).is_err(), "out of order accepted");
            assert_eq!(log.len(), 5);
        }
        assert_eq!(read_records(&path).unwrap(), recs);
        let mut log = AuditLog::open_append(&path).unwrap();
        assert!(log.append(&recs[2]).is_err());
        log.append(&SeedRecord { frame_id: 5, base_seed: 0, n: 1, unix_ms: 0 }).unwrap();
        drop(log);
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 6 * 26);
    }

    #[test]
    fn truncated_log_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, [0u8; 30]).unwrap();
        assert!(matches!(read_records(&path), Err(Error::FormatError(_))));
    }

    #[test]
    fn csv_export_has_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("audit.csv");
        export_csv(&[SeedRecord { frame_id: 3, base_seed: 4, n: 5, unix_ms: 6 }], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text, "frame_id,base_seed,n,unix_ms\n3,4,5,6\n");
    }
}
