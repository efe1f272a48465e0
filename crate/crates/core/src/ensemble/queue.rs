use std::fs::{self, File, OpenOptions};
use std::io::{BufWriter, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::EnsembleVerdict;
use crate::error::Result;
use crate::nncore::{read_blob, write_blob, Tensor};

/// One row of the queue index; `offset` locates the crop's tensor blob in `crops.bin`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct QueueEntry {
    pub frame_id: u64,
    pub crop: usize,
    pub consistency: f64,
    pub label: usize,
    /// Vote counts joined with `;`.
    pub histogram: String,
    pub offset: u64,
}

/// Append-only store of flagged inputs awaiting a human decision.
pub struct OperatorQueue {
    dir: PathBuf,
    blobs: BufWriter<File>,
    offset: u64,
    index: csv::Writer<File>,
}

impl OperatorQueue {
    pub const BLOBS: &'static str = "crops.bin";
    pub const INDEX: &'static str = "index.csv";

    /// Open (or create) a queue directory, appending to what is already there.
    pub fn open(dir: impl AsRef<Path>) -> Result<Self> {
        let dir = dir.as_ref().to_path_buf();
        fs::create_dir_all(&dir)?;
        let mut blobs = OpenOptions::new().create(true).append(true).open(dir.join(Self::BLOBS))?;
        let offset = blobs.seek(SeekFrom::End(0))?;
        let index_path = dir.join(Self::INDEX);
        let fresh = !index_path.exists() || fs::metadata(&index_path)?.len() == 0;
        let f = OpenOptions::new().create(true).append(true).open(&index_path)?;
        let index = csv::WriterBuilder::new().has_headers(fresh).from_writer(f);
        Ok(Self { dir, blobs: BufWriter::new(blobs), offset, index })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn push(&mut self, frame_id: u64, crop: usize, verdict: &EnsembleVerdict, image: &Tensor<f32>) -> Result<QueueEntry> {
        let mut buf = Vec::new();
        write_blob(&mut buf, image)?;
        self.blobs.write_all(&buf)?;
        let entry = QueueEntry {
            frame_id,
            crop,
            consistency: verdict.consistency,
            label: verdict.label,
            histogram: verdict.histogram.iter().map(u32::to_string).collect::<Vec<_>>().join(";"),
            offset: self.offset,
        };
        self.offset += buf.len() as u64;
        self.index.serialize(&entry)?;
        Ok(entry)
    }

    pub fn flush(&mut self) -> Result<()> {
        self.blobs.flush()?;
        self.index.flush()?;
        Ok(())
    }

    pub fn read_index(dir: impl AsRef<Path>) -> Result<Vec<QueueEntry>> {
        let mut r = csv::Reader::from_path(dir.as_ref().join(Self::INDEX))?;
        Ok(r.deserialize().collect::<std::result::Result<_, _>>()?)
    }

    pub fn read_crop(dir: impl AsRef<Path>, entry: &QueueEntry) -> Result<Tensor<f32>> {
        let mut f = File::open(dir.as_ref().join(Self::BLOBS))?;
        f.seek(SeekFrom::Start(entry.offset))?;
        read_blob(&mut std::io::BufReader::new(f))
    }
}

impl Drop for OperatorQueue {
    fn drop(&mut self) {
        let _ = self.flush();
    }
}
